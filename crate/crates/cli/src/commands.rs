use std::path::{Path, PathBuf};
use std::sync::Arc;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::Serialize;

use sdde_control::car_following::{
    build_functionals, build_model, build_surface, preset, sample_interior_buffer, CarFollowingFunctionals, GAP, SPEED,
};
use sdde_control::controllers::{SlidingController, SontagController, DEFAULT_ZERO_THRESHOLD};
use sdde_control::sim::{format_sig17, simulate, FeedbackController, Observable, SddeModel};
use sdde_control::verification::{
    boundary_check, estimate_safety, functional_observables, identity_suite, BoundaryReport, IdentityOptions,
    IdentityReport, MonteCarloOptions, MonteCarloReport,
};
use sdde_control::HistorySegment;

use crate::config::{ControllerConfig, PresetRef, ScenarioConfig};
use crate::error::CliResult;
use crate::output::write_atomic;

/// Everything built from one effective configuration.
struct Setup {
    model: Arc<dyn SddeModel>,
    functionals: CarFollowingFunctionals,
    sliding: SlidingController,
    sontag: SontagController,
    init: HistorySegment,
}

impl Setup {
    fn new(cfg: &ScenarioConfig) -> CliResult<Self> {
        let params = &cfg.params;
        let model: Arc<dyn SddeModel> = Arc::new(build_model(params)?);
        let mut surface = build_surface(params)?;
        if let ControllerConfig::Sliding { weighting, .. } = cfg.controller {
            surface = surface.with_weighting(weighting);
        }
        let sliding = SlidingController::new(surface, model.clone(), params.gain, params.smoothing)?;
        let lambda = match cfg.controller {
            ControllerConfig::Sontag { lambda } => lambda,
            ControllerConfig::Sliding { .. } => cfg.identities.lambda,
        };
        let functionals = build_functionals(params)?;
        let sontag = SontagController::new(functionals.sclkf.clone(), model.clone(), lambda, DEFAULT_ZERO_THRESHOLD)?;
        Ok(Self {
            model,
            functionals,
            sliding,
            sontag,
            init: cfg.scenario().initial_history()?,
        })
    }

    fn controller<'a>(&'a self, cfg: &ScenarioConfig) -> &'a dyn FeedbackController {
        match cfg.controller {
            ControllerConfig::Sliding { .. } => &self.sliding,
            ControllerConfig::Sontag { .. } => &self.sontag,
        }
    }

    fn logged(&self, cfg: &ScenarioConfig) -> Vec<Observable> {
        let all = functional_observables(&self.functionals.sclkf, &self.functionals.scbkf, self.sliding.surface());
        cfg.log
            .iter()
            .filter_map(|name| all.iter().find(|o| o.name() == name).cloned())
            .collect()
    }
}

fn headway_margin(headway: f64) -> Observable {
    Observable::new("headway_margin", move |_, phi: &HistorySegment| {
        let x = phi.newest();
        Ok(x[GAP] - headway * x[SPEED])
    })
}

/// Files produced by a command, in write order.
pub type Written = Vec<PathBuf>;

pub fn simulate_command(cfg: &ScenarioConfig) -> CliResult<Written> {
    let setup = Setup::new(cfg)?;
    let trace = simulate(
        setup.model.as_ref(),
        setup.controller(cfg),
        &setup.init,
        cfg.horizon,
        cfg.seed_base,
        &setup.logged(cfg),
    )?;
    let mut csv = Vec::new();
    trace.write_csv(&mut csv).expect("writing to memory");
    let path = cfg.out.join("trace.csv");
    write_atomic(&path, &csv)?;
    if let Some(f) = &trace.failure {
        eprintln!(
            "warning[{}]: path stopped at step {}: {}",
            f.category, f.step, f.message
        );
    }
    Ok(vec![path])
}

#[derive(Serialize)]
struct VerifyDocument<'a> {
    scenario: String,
    config: &'a ScenarioConfig,
    safety: &'a MonteCarloReport,
    boundary: &'a BoundaryReport,
}

struct Verification {
    safety: MonteCarloReport,
    boundary: BoundaryReport,
}

fn verify_scenario(cfg: &ScenarioConfig) -> CliResult<Verification> {
    let setup = Setup::new(cfg)?;
    let options = MonteCarloOptions {
        curves: setup.logged(cfg),
        safety_override: (cfg.safety == "headway_margin").then(|| headway_margin(cfg.params.headway)),
        targets: vec![(SPEED, cfg.params.v_d)],
        ..MonteCarloOptions::default()
    };
    let safety = estimate_safety(
        setup.model.as_ref(),
        setup.controller(cfg),
        &setup.functionals.scbkf,
        &setup.init,
        cfg.horizon,
        cfg.paths,
        cfg.seed_base,
        &options,
    )?;
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed_base);
    let params = cfg.params.clone();
    let dt = cfg.dt;
    let boundary = boundary_check(
        setup.sliding.surface(),
        &setup.init,
        cfg.boundary_samples,
        &mut rng,
        &mut |r: &mut ChaCha8Rng| sample_interior_buffer(r, &params, dt),
    )?;
    Ok(Verification { safety, boundary })
}

fn write_verification(cfg: &ScenarioConfig, v: &Verification, dir: &Path) -> CliResult<Written> {
    let mut text = format!("scenario: {}\n", cfg.member_name());
    text.push_str(&v.safety.summary());
    let b = &v.boundary;
    let fmt = |x: Option<f64>| x.map_or_else(|| "-".to_string(), |v| format!("{v:.6e}"));
    text.push_str(&format!(
        "boundary check: {:?} ({} buffers, min U^2 ratio {}, reference U^2(xi) {:.6e})\n",
        b.status,
        b.count,
        fmt(b.min_ratio),
        b.reference
    ));
    text.push_str("\n# effective configuration\n");
    text.push_str(&cfg.to_toml());

    let doc = VerifyDocument {
        scenario: cfg.member_name(),
        config: cfg,
        safety: &v.safety,
        boundary: &v.boundary,
    };
    let json = serde_json::to_string_pretty(&doc).expect("reports serialize to JSON");
    let mut minima = Vec::new();
    v.safety.write_minima_csv(&mut minima).expect("writing to memory");

    let files = [
        (dir.join("report.txt"), text.into_bytes()),
        (dir.join("report.json"), json.into_bytes()),
        (dir.join("minima.csv"), minima),
    ];
    let mut written = Vec::new();
    for (path, bytes) in files {
        write_atomic(&path, &bytes)?;
        written.push(path);
    }
    Ok(written)
}

pub fn verify_command(cfg: &ScenarioConfig) -> CliResult<Written> {
    let v = verify_scenario(cfg)?;
    write_verification(cfg, &v, &cfg.out)
}

#[derive(Serialize)]
struct IdentityDocument<'a> {
    scenario: String,
    config: &'a ScenarioConfig,
    identities: &'a IdentityReport,
}

pub fn identities_command(cfg: &ScenarioConfig) -> CliResult<Written> {
    let setup = Setup::new(cfg)?;
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed_base);
    let report = identity_suite(
        &setup.sliding,
        &setup.sontag,
        cfg.identities.count,
        &mut || sample_interior_buffer(&mut rng, &cfg.params, cfg.dt),
        IdentityOptions::default(),
    )?;
    let mut text = format!("scenario: {}\n", cfg.member_name());
    text.push_str(&report.summary());
    text.push_str(&format!("overall: {}\n", if report.passed() { "PASS" } else { "FAIL" }));
    text.push_str("\n# effective configuration\n");
    text.push_str(&cfg.to_toml());
    let doc = IdentityDocument {
        scenario: cfg.member_name(),
        config: cfg,
        identities: &report,
    };
    let json = serde_json::to_string_pretty(&doc).expect("reports serialize to JSON");
    let txt_path = cfg.out.join("identities.txt");
    let json_path = cfg.out.join("identities.json");
    write_atomic(&txt_path, text.as_bytes())?;
    write_atomic(&json_path, json.as_bytes())?;
    Ok(vec![txt_path, json_path])
}

/// Runs `verify` for every member of the sweep family. Members inherit the
/// user's settings; the preset only supplies the defaults that differ per
/// member.
pub fn sweep_command(
    document: &toml::Table,
    overrides: &[(String, toml::Value)],
    cfg: &ScenarioConfig,
) -> CliResult<Written> {
    let family = cfg.sweep_family()?;
    let mut written = Vec::new();
    let mut summary = String::from("member,safety_prob,ci_lo,ci_hi,mean_terminal_velocity_error\n");
    for index in family.indices() {
        // Validates the index against the family before resolving.
        preset(family, index)?;
        let mut member_overrides = overrides.to_vec();
        member_overrides.push((
            "preset".into(),
            toml::Value::try_from(PresetRef {
                family: family.name().into(),
                index,
            })
            .expect("preset refs serialize"),
        ));
        let member = ScenarioConfig::resolve(document.clone(), &member_overrides)?;
        let name = member.member_name();
        let v = verify_scenario(&member)?;
        written.extend(write_verification(&member, &v, &cfg.out.join(&name))?);
        let p = &v.safety.safety_probability;
        let err = v.safety.terminal_mean_abs_error.first().copied().unwrap_or(f64::NAN);
        summary.push_str(&format!(
            "{name},{},{},{},{}\n",
            format_sig17(p.estimate),
            format_sig17(p.ci_lo),
            format_sig17(p.ci_hi),
            format_sig17(err)
        ));
    }
    let path = cfg.out.join("summary.csv");
    write_atomic(&path, summary.as_bytes())?;
    written.push(path);
    Ok(written)
}
