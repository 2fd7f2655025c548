use pyo3::prelude::*;

#[pymodule]
fn atlas_py(_m: &Bound<'_, PyModule>) -> PyResult<()> {
    Ok(())
}
