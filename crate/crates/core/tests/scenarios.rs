use nalgebra::DVector;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use sdde_control::car_following::{preset, PresetFamily, SPEED};
use sdde_control::controllers::safety_admissible;
use sdde_control::functionals::drift_decomposition;
use sdde_control::sim::{brownian_increment, em_step, simulate, Observable, SddeModel};
use sdde_control::verification::{estimate_safety, functional_observables, MonteCarloOptions};
use sdde_control::Error;

fn short(family: PresetFamily, index: usize, horizon: f64) -> sdde_control::car_following::Scenario {
    let mut s = preset(family, index).unwrap();
    s.horizon = horizon;
    s
}

#[test]
fn preset_trace_has_expected_columns_and_is_reproducible() {
    let s = short(PresetFamily::Fig1L, 1, 0.5);
    let model = s.model().unwrap();
    let controller = s.controller().unwrap();
    let fs = s.functionals().unwrap();
    let obs = functional_observables(&fs.sclkf, &fs.scbkf, controller.surface());
    let init = s.initial_history().unwrap();
    let run = |seed| {
        let trace = simulate(&model, &controller, &init, s.horizon, seed, &obs).unwrap();
        let mut buf = Vec::new();
        trace.write_csv(&mut buf).unwrap();
        (trace, String::from_utf8(buf).unwrap())
    };
    let (trace, csv) = run(42);
    assert!(trace.failure.is_none());
    assert_eq!(trace.len(), 501);
    let header = csv.lines().next().unwrap();
    assert!(header.starts_with("t,x1,x2,x3,u1,"), "{header}");
    assert_eq!(csv, run(42).1);
    assert_ne!(csv, run(43).1);
    // The logged barrier agrees with a direct evaluation at the first row.
    let b0 = fs.scbkf.eval_barrier(&init).unwrap();
    let logged = trace.log(obs[1].name()).unwrap()[0];
    assert_eq!(logged, b0);
}

#[test]
fn short_safety_estimate_counts_every_path() {
    let s = short(PresetFamily::Fig1L, 3, 0.2);
    let model = s.model().unwrap();
    let controller = s.controller().unwrap();
    let fs = s.functionals().unwrap();
    let options = MonteCarloOptions {
        targets: vec![(SPEED, s.params.v_d)],
        ..MonteCarloOptions::default()
    };
    let report = estimate_safety(
        &model,
        &controller,
        &fs.scbkf,
        &s.initial_history().unwrap(),
        s.horizon,
        16,
        7,
        &options,
    )
    .unwrap();
    assert_eq!(report.paths, 16);
    assert_eq!(report.safety_probability.trials, 16);
    assert_eq!(report.path_safe.len(), 16);
    assert_eq!(
        report.path_safe.iter().filter(|&&b| b).count(),
        report.safety_probability.successes
    );
    assert!(report.safety_probability.ci_lo <= report.safety_probability.estimate);
}

#[test]
fn zero_paths_is_a_config_error() {
    let s = short(PresetFamily::Fig2Ell, 1, 0.1);
    let model = s.model().unwrap();
    let controller = s.controller().unwrap();
    let fs = s.functionals().unwrap();
    let err = estimate_safety(
        &model,
        &controller,
        &fs.scbkf,
        &s.initial_history().unwrap(),
        s.horizon,
        0,
        0,
        &MonteCarloOptions::default(),
    )
    .unwrap_err();
    assert!(matches!(err, Error::Config { .. }), "{err:?}");
}

/// The analytic barrier drift at the fig. 2 initial condition, checked against
/// the empirical mean change of the barrier over one Euler–Maruyama step.
#[test]
fn admissibility_drift_matches_one_step_monte_carlo() {
    let s = preset(PresetFamily::Fig2Ell, 1).unwrap();
    let model = s.model().unwrap();
    let fs = s.functionals().unwrap();
    let phi = s.initial_history().unwrap();
    let u = DVector::from_element(1, 0.0);
    let barrier = fs.scbkf.barrier.as_ref();

    let adm = safety_admissible(&fs.scbkf, &model, 0.0, &phi, &u).unwrap();
    let analytic = drift_decomposition(barrier, &model, 0.0, &phi).unwrap().drift_under(&u);
    let h = fs.scbkf.eval_h(&phi).unwrap();
    assert!((adm.margin - (fs.scbkf.gamma2.eval(h) - analytic)).abs() < 1e-12);

    let dt = s.dt;
    let b0 = barrier.value(&phi).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(2024);
    let n = 10_000;
    let p = model.dims().noise;
    let increments: Vec<f64> = (0..n)
        .map(|_| {
            let dw = brownian_increment(&mut rng, dt, p);
            let next = em_step(&model, 0.0, &phi, &u, dt, &dw).unwrap();
            (barrier.value(&phi.advanced(next.as_slice()).unwrap()).unwrap() - b0) / dt
        })
        .collect();
    let mean = increments.iter().sum::<f64>() / n as f64;
    let var = increments.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (n - 1) as f64;
    let se = (var / n as f64).sqrt();
    let z = (mean - analytic) / se;
    assert!(z.abs() < 4.0, "mean {mean}, analytic {analytic}, se {se}");
}

#[test]
fn observable_names_are_stable() {
    let s = preset(PresetFamily::Fig1L, 1).unwrap();
    let fs = s.functionals().unwrap();
    let controller = s.controller().unwrap();
    let names: Vec<String> = functional_observables(&fs.sclkf, &fs.scbkf, controller.surface())
        .iter()
        .map(|o: &Observable| o.name().to_string())
        .collect();
    assert_eq!(names, ["V", "B", "h", "U"]);
}
