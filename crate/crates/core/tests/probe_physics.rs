// Temporary exploration probe; removed before finalization.
use atlas_core::classical::*;
use atlas_core::floquet::*;
use atlas_core::husimi::*;

#[test]
#[ignore]
fn final_config_check() {
    let beta = 0.005;
    let sigma = 1.0f64;
    let phases = [0.0, std::f64::consts::FRAC_PI_2, std::f64::consts::PI];
    let potential = PotentialSpec::quartic(beta);
    let mut search = IslandSearch::default();
    search.omegas = (0..11).map(|i| 1.05 + 0.025 * i as f64).collect();
    search.seeds_per_axis = 13;
    search.f_probe = 0.02;
    let scan = locate_island(&potential, &search, &phases).expect("island");
    eprintln!("omega_res {} seeds {}", scan.omega_res, scan.islanded_seeds);
    let margin_x = std::f64::consts::SQRT_2 * sigma;
    let margin_p = std::f64::consts::SQRT_2 / sigma;
    let qwindows: Vec<PhaseWindow> = scan.windows.iter().map(|(_, w)| w.expanded(margin_x, margin_p)).collect();
    for w in &qwindows { eprintln!("  qwindow x[{:.2},{:.2}] p[{:.2},{:.2}]", w.x_min, w.x_max, w.p_min, w.p_max); }

    let hg = HusimiGrid::from_window(scan.scan_window.padded(0.25)).with_resolution(150, 150).with_sigma(sigma);
    let grid = GridSpec::new(256, -12.0, 12.0, 2048);
    let potential_q = potential.with_cap(1.0, 0.2);

    for f in [0.01f64, 0.02, 0.03] {
        for f_st in [0.0f64, 0.006] {
            let drive = DriveParameters::new(f, f_st, scan.omega_res);
            let u = one_period_propagator(&potential_q, &drive, &grid).unwrap();
            let states = floquet_states(&u, &drive, grid.n_points).unwrap();
            let states = select_states(states, &potential_q, &grid, 10);
            // min-phase mass for every kept state
            let mut report = vec![];
            for (i, s) in states.iter().enumerate() {
                let mut minm = f64::INFINITY;
                for (k, target) in [PhaseLabel::T0, PhaseLabel::Tquarter, PhaseLabel::Thalf].iter().enumerate() {
                    let ev = evolve_to_phase(s, &potential_q, &drive, &grid, *target).unwrap();
                    let m = husimi_field(&ev, &grid, &hg).unwrap().mass_fraction_in(&qwindows[k]);
                    minm = minm.min(m);
                }
                report.push((i, minm));
            }
            let passing: Vec<_> = report.iter().filter(|(_, m)| *m >= 0.5).collect();
            eprintln!("F={f} F_st={f_st}: min-masses {:?} | passing {:?}", report.iter().map(|(_, m)| format!("{m:.2}")).collect::<Vec<_>>(), passing);
        }
    }
}
