use qmanifold::gauss::*;
use qmanifold::ops::c;
use qmanifold::sme::{simulate, Signal};

fn max_moment_gap(a: &Moments, b: &Moments) -> f64 {
    [a.mean_x - b.mean_x, a.mean_p - b.mean_p, a.var_x - b.var_x, a.var_p - b.var_p, a.cov_xp - b.cov_xp]
        .iter()
        .fold(0.0f64, |m, x| m.max(x.abs()))
}

fn fluorescence_gap(params: FluorescenceParams, w0: InitialWigner, n_max: usize, t_final: f64, dt: f64, seeds: &[u64]) -> f64 {
    let (model, rho0) = sme_oscillator_model(&OscillatorModel::Fluorescence(params.clone()), n_max, &w0).unwrap();
    let times: Vec<f64> = (1..=4).map(|k| t_final * k as f64 / 4.0).collect();
    let mut worst = 0.0f64;
    for &seed in seeds {
        let rec = &simulate(&model, &rho0, t_final, dt, seed, 1, &times).unwrap()[0];
        let states = fluorescence_filter(&params, &rec.dy, rec.n_channels, dt).unwrap();
        for (k, &step) in rec.snapshot_steps.iter().enumerate() {
            let kernel = moments(&states[step].view(), &w0, &GridSpec::default()).unwrap();
            let full = state_moments(&rec.snapshots[k]).unwrap();
            worst = worst.max(max_moment_gap(&kernel, &full));
        }
    }
    worst
}

#[test]
fn fluorescence_coherent_same_record() {
    let gap = fluorescence_gap(FluorescenceParams::new(0.8, 0.0), InitialWigner::Coherent(c(1.0, 0.0)), 20, 1.0, 1e-4, &[1, 2, 3]);
    assert!(gap < 0.05, "gap {gap}");
    assert!(gap < 5e-3, "gap {gap}");
}

#[test]
fn fluorescence_thermal_cat_with_drive_same_record() {
    let params = FluorescenceParams::new(0.6, 0.4).with_drives(Signal::Constant(0.3), Signal::Function(std::sync::Arc::new(|t: f64| (2.0 * t).sin())));
    let gap = fluorescence_gap(params, InitialWigner::Cat(c(1.2, 0.3)), 30, 0.5, 1e-4, &[5, 6]);
    assert!(gap < 0.02, "gap {gap}");
}

#[test]
fn coherent_state_stays_coherent() {
    // With n_th = 0 and no drive, the conditioned state is the decaying coherent state.
    let params = FluorescenceParams::new(0.8, 0.0);
    let w0 = InitialWigner::Coherent(c(1.5, -0.5));
    let (model, rho0) = sme_oscillator_model(&OscillatorModel::Fluorescence(params.clone()), 25, &w0).unwrap();
    let rec = &simulate(&model, &rho0, 1.0, 1e-4, 9, 1, &[1.0]).unwrap()[0];
    let states = fluorescence_filter(&params, &rec.dy, rec.n_channels, 1e-4).unwrap();
    let m = moments(&states.last().unwrap().view(), &w0, &GridSpec::default()).unwrap();
    let decay = (-1.0f64).exp();
    assert!((m.mean_x - 1.5 * decay).abs() < 2e-3 && (m.mean_p + 0.5 * decay).abs() < 2e-3);
    assert!((m.var_x - 0.25).abs() < 1e-6 && (m.var_p - 0.25).abs() < 1e-6);
}

#[test]
fn deterministic_parameters_independent_of_record() {
    let params = FluorescenceParams::new(0.8, 1.0);
    let (model, rho0) = sme_oscillator_model(&OscillatorModel::Fluorescence(params.clone()), 12, &InitialWigner::Coherent(c(0.0, 0.0))).unwrap();
    let recs = simulate(&model, &rho0, 0.2, 1e-3, 4, 2, &[]).unwrap();
    let a = fluorescence_filter(&params, &recs[0].dy, recs[0].n_channels, 1e-3).unwrap();
    let b = fluorescence_filter(&params, &recs[1].dy, recs[1].n_channels, 1e-3).unwrap();
    let (sa, sb) = (a.last().unwrap(), b.last().unwrap());
    assert_eq!((sa.a, sa.s, sa.d), (sb.a, sb.s, sb.d));
    assert!((sa.xi - sb.xi).abs() > 1e-3);
}

#[test]
fn vacuum_reduction_holds_along_records() {
    let params = FluorescenceParams::new(0.9, 0.0).with_drives(Signal::Constant(0.2), Signal::Constant(-0.4));
    let (model, rho0) = sme_oscillator_model(&OscillatorModel::Fluorescence(params.clone()), 12, &InitialWigner::Coherent(c(0.5, 0.0))).unwrap();
    let dt = 1e-4;
    let rec = &simulate(&model, &rho0, 1.0, dt, 3, 1, &[]).unwrap()[0];
    let states = fluorescence_filter(&params, &rec.dy, rec.n_channels, dt).unwrap();
    // dz/dt = v − z and dh/dt = −u − h from zero.
    for st in states.iter().step_by(1000) {
        let e = 1.0 - (-st.t).exp();
        let (z, h) = st.reduced();
        assert!((z - (-0.4) * e).abs() < 2e-2 && (h - (-0.2) * e).abs() < 2e-2, "t={} z={z} h={h}", st.t);
    }
}

fn xp_gap(params: XpParams, w0: InitialWigner, n_max: usize, t_final: f64, dt: f64, seed: u64) -> f64 {
    let (model, rho0) = sme_oscillator_model(&OscillatorModel::Xp(params.clone()), n_max, &w0).unwrap();
    let times: Vec<f64> = (1..=4).map(|k| t_final * k as f64 / 4.0).collect();
    let rec = &simulate(&model, &rho0, t_final, dt, seed, 1, &times).unwrap()[0];
    let states = xp_filter(&params, &rec.dy, rec.n_channels, dt).unwrap();
    let mut worst = 0.0f64;
    for (k, &step) in rec.snapshot_steps.iter().enumerate() {
        let kernel = moments(&states[step].view(), &w0, &GridSpec::default()).unwrap();
        // Kernel lives in the frame rotating with Δ a†a.
        let full = state_moments(&rec.snapshots[k]).unwrap().rotated(-params.delta * rec.times[k]);
        worst = worst.max(max_moment_gap(&kernel, &full));
    }
    worst
}

#[test]
fn xp_kernel_matches_full_state() {
    let p = XpParams::new(0.8, 0.5, 0.4, 0.9, 0.7, 0.3).with_drives(Signal::Constant(0.2), Signal::Constant(-0.1));
    let gap = xp_gap(p, InitialWigner::Coherent(c(0.8, 0.4)), 25, 1.0, 1e-4, 11);
    assert!(gap < 0.02, "gap {gap}");
}

#[test]
fn xp_kernel_with_detuning_matches_rotated_full_state() {
    let p = XpParams::new(0.9, 0.3, 0.2, 0.8, 0.6, 0.0).with_delta(1.3);
    let gap = xp_gap(p, InitialWigner::Cat(c(1.0, 0.0)), 25, 1.0, 1e-4, 12);
    assert!(gap < 0.02, "gap {gap}");
}
