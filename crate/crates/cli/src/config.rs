//! Scenario configuration: a TOML document, optionally seeded from a preset,
//! with dotted-path overrides applied on top.

use std::path::PathBuf;

use serde::{Deserialize, Serialize};
use toml::{Table, Value};

use sdde_control::car_following::{preset, CarFollowingParams, PresetFamily, Scenario, PRESET_DT, PRESET_HORIZON};
use sdde_control::controllers::TraceWeighting;

use crate::error::{CliError, CliResult};

pub const MODELS: &[&str] = &["car_following"];
pub const LYAPUNOV_FUNCTIONALS: &[&str] = &["quadratic_tracking"];
pub const BARRIER_FUNCTIONALS: &[&str] = &["headway_barrier"];
pub const CONTROLLERS: &[&str] = &["sliding", "sontag"];
pub const LOGGED: &[&str] = &["V", "B", "h", "U"];
pub const SAFETY_INDICATORS: &[&str] = &["headway_margin", "safe_set"];

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PresetRef {
    pub family: String,
    pub index: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FunctionalNames {
    pub lyapunov: String,
    pub barrier: String,
}

impl Default for FunctionalNames {
    fn default() -> Self {
        Self {
            lyapunov: LYAPUNOV_FUNCTIONALS[0].into(),
            barrier: BARRIER_FUNCTIONALS[0].into(),
        }
    }
}

/// Unset sliding parameters fall back to the model parameters.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum ControllerConfig {
    Sliding {
        #[serde(default, skip_serializing_if = "Option::is_none")]
        gain: Option<f64>,
        #[serde(default, skip_serializing_if = "Option::is_none")]
        smoothing: Option<f64>,
        #[serde(default, skip_serializing_if = "Option::is_none")]
        varrho: Option<f64>,
        #[serde(default)]
        weighting: TraceWeighting,
    },
    Sontag {
        lambda: f64,
    },
}

impl Default for ControllerConfig {
    fn default() -> Self {
        ControllerConfig::Sliding {
            gain: None,
            smoothing: None,
            varrho: None,
            weighting: TraceWeighting::default(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct IdentitySettings {
    pub count: usize,
    /// Sontag weight used by the identity suite when the scenario runs the
    /// sliding controller.
    pub lambda: f64,
}

impl Default for IdentitySettings {
    fn default() -> Self {
        Self {
            count: 1000,
            lambda: 1.0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ScenarioConfig {
    pub model: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub preset: Option<PresetRef>,
    pub init: Vec<f64>,
    pub dt: f64,
    pub horizon: f64,
    pub paths: usize,
    pub seed_base: u64,
    pub out: PathBuf,
    pub log: Vec<String>,
    /// `headway_margin` (x3 - headway·x1 ≥ 0) or `safe_set` (h ≥ 0).
    pub safety: String,
    /// Projected boundary buffers for the boundary-condition check in `verify`.
    pub boundary_samples: usize,
    /// Family iterated by `sweep`; defaults to the preset's family.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub sweep_family: Option<String>,
    #[serde(default)]
    pub params: CarFollowingParams,
    #[serde(default)]
    pub functionals: FunctionalNames,
    #[serde(default)]
    pub controller: ControllerConfig,
    #[serde(default)]
    pub identities: IdentitySettings,
}

impl Default for ScenarioConfig {
    fn default() -> Self {
        Self {
            model: MODELS[0].into(),
            preset: None,
            init: vec![16.0, 10.0, 150.0],
            dt: PRESET_DT,
            horizon: PRESET_HORIZON,
            paths: 200,
            seed_base: 0,
            out: PathBuf::from("out"),
            log: LOGGED.iter().map(|s| s.to_string()).collect(),
            safety: SAFETY_INDICATORS[0].into(),
            boundary_samples: 100,
            sweep_family: None,
            params: CarFollowingParams::default(),
            functionals: FunctionalNames::default(),
            controller: ControllerConfig::default(),
            identities: IdentitySettings::default(),
        }
    }
}

/// One `--set key=value`: the value is read as a TOML value, or as a bare
/// string when it does not parse.
pub fn parse_override(raw: &str) -> CliResult<(String, Value)> {
    let (key, value) = raw
        .split_once('=')
        .ok_or_else(|| CliError::parse("--set", format!("expected key=value, got `{raw}`")))?;
    let key = key.trim();
    if key.is_empty() || key.split('.').any(str::is_empty) {
        return Err(CliError::parse("--set", format!("malformed key `{key}`")));
    }
    let value = value.trim();
    let parsed = toml::from_str::<Table>(&format!("v = {value}"))
        .ok()
        .and_then(|mut t| t.remove("v"))
        .unwrap_or_else(|| Value::String(value.to_string()));
    Ok((key.to_string(), parsed))
}

pub fn set_path(table: &mut Table, key: &str, value: Value) -> CliResult<()> {
    let mut parts: Vec<&str> = key.split('.').collect();
    let last = parts.pop().expect("split yields at least one part");
    let mut cursor = table;
    for (depth, part) in parts.iter().enumerate() {
        let entry = cursor
            .entry(part.to_string())
            .or_insert_with(|| Value::Table(Table::new()));
        cursor = match entry {
            Value::Table(t) => t,
            _ => {
                return Err(CliError::parse(
                    key,
                    format!("`{}` is not a table", parts[..=depth].join(".")),
                ))
            }
        };
    }
    cursor.insert(last.to_string(), value);
    Ok(())
}

/// Recursively overlays `top` on `base`. A table whose `kind` differs from the
/// base replaces it outright, since its fields belong to another variant.
fn merge(base: &mut Table, top: Table) {
    for (k, v) in top {
        match (base.get_mut(&k), v) {
            (Some(Value::Table(b)), Value::Table(t)) if same_kind(b, &t) => merge(b, t),
            (_, v) => {
                base.insert(k, v);
            }
        }
    }
}

fn same_kind(base: &Table, top: &Table) -> bool {
    match top.get("kind") {
        Some(kind) => base.get("kind") == Some(kind),
        None => true,
    }
}

fn registered(field: &str, name: &str, known: &[&str]) -> CliResult<()> {
    if known.contains(&name) {
        Ok(())
    } else {
        Err(CliError::UnknownName {
            field: field.into(),
            name: name.into(),
            known: known.join(", "),
        })
    }
}

fn preset_family(field: &str, name: &str) -> CliResult<PresetFamily> {
    PresetFamily::parse(name).map_err(|_| CliError::UnknownName {
        field: field.into(),
        name: name.into(),
        known: "fig1_l, fig2_ell".into(),
    })
}

fn preset_base(p: &PresetRef) -> CliResult<ScenarioConfig> {
    let scenario = preset(preset_family("preset.family", &p.family)?, p.index)?;
    let Scenario {
        params,
        initial,
        dt,
        horizon,
        ..
    } = scenario;
    Ok(ScenarioConfig {
        preset: Some(p.clone()),
        init: initial,
        dt,
        horizon,
        params,
        ..ScenarioConfig::default()
    })
}

fn to_table(cfg: &ScenarioConfig) -> Table {
    Table::try_from(cfg).expect("scenario configs serialize to TOML")
}

impl ScenarioConfig {
    /// Builds the effective configuration from a user document and overrides
    /// (applied in order). Defaults come from the preset named in the merged
    /// document, if any.
    pub fn resolve(document: Table, overrides: &[(String, Value)]) -> CliResult<Self> {
        let mut user = document;
        for (k, v) in overrides {
            set_path(&mut user, k, v.clone())?;
        }
        let preset_ref: Option<PresetRef> = match user.get("preset") {
            Some(v) => Some(
                v.clone()
                    .try_into()
                    .map_err(|e: toml::de::Error| CliError::parse("preset", e.message().to_string()))?,
            ),
            None => None,
        };
        let base = match &preset_ref {
            Some(p) => preset_base(p)?,
            None => ScenarioConfig::default(),
        };
        if let Some(Value::Table(c)) = user.get("controller") {
            if let Some(kind) = c.get("kind") {
                let kind = kind.as_str().unwrap_or_default();
                registered("controller.kind", kind, CONTROLLERS)?;
            }
        }
        let mut merged = to_table(&base);
        merge(&mut merged, user);
        let mut cfg: ScenarioConfig = Value::Table(merged)
            .try_into()
            .map_err(|e: toml::de::Error| CliError::parse("config", e.message().trim().to_string()))?;
        cfg.settle();
        cfg.validate()?;
        Ok(cfg)
    }

    /// Copies controller settings into the model parameters (and back for
    /// unset fields) so the echoed configuration has one value per quantity.
    fn settle(&mut self) {
        if let ControllerConfig::Sliding {
            gain,
            smoothing,
            varrho,
            ..
        } = &mut self.controller
        {
            let p = &mut self.params;
            p.gain = *gain.get_or_insert(p.gain);
            p.smoothing = *smoothing.get_or_insert(p.smoothing);
            p.varrho = *varrho.get_or_insert(p.varrho);
        }
    }

    pub fn validate(&self) -> CliResult<()> {
        registered("model", &self.model, MODELS)?;
        registered("functionals.lyapunov", &self.functionals.lyapunov, LYAPUNOV_FUNCTIONALS)?;
        registered("functionals.barrier", &self.functionals.barrier, BARRIER_FUNCTIONALS)?;
        registered("safety", &self.safety, SAFETY_INDICATORS)?;
        for name in &self.log {
            registered("log", name, LOGGED)?;
        }
        if let Some(f) = &self.sweep_family {
            preset_family("sweep_family", f)?;
        }
        if self.paths == 0 {
            return Err(CliError::invariant("paths", "must be at least 1"));
        }
        if let ControllerConfig::Sontag { lambda } = self.controller {
            if !(lambda > 0.0) {
                return Err(CliError::invariant(
                    "controller.lambda",
                    format!("must be positive, got {lambda}"),
                ));
            }
        }
        if !(self.identities.lambda > 0.0) {
            return Err(CliError::invariant(
                "identities.lambda",
                format!("must be positive, got {}", self.identities.lambda),
            ));
        }
        self.scenario().validate()?;
        Ok(())
    }

    pub fn scenario(&self) -> Scenario {
        Scenario {
            name: self.member_name(),
            params: self.params.clone(),
            initial: self.init.clone(),
            dt: self.dt,
            horizon: self.horizon,
        }
    }

    pub fn member_name(&self) -> String {
        match &self.preset {
            Some(p) => format!("{}_{}", p.family, p.index),
            None => "custom".into(),
        }
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("scenario configs serialize to TOML")
    }

    /// The family iterated by `sweep`.
    pub fn sweep_family(&self) -> CliResult<PresetFamily> {
        let name = self
            .sweep_family
            .as_deref()
            .or(self.preset.as_ref().map(|p| p.family.as_str()))
            .ok_or_else(|| CliError::invariant("sweep_family", "set `sweep_family` or a `preset`"))?;
        preset_family("sweep_family", name)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn resolve(doc: &str, sets: &[&str]) -> CliResult<ScenarioConfig> {
        let table: Table = toml::from_str(doc).unwrap();
        let overrides: Vec<_> = sets.iter().map(|s| parse_override(s).unwrap()).collect();
        ScenarioConfig::resolve(table, &overrides)
    }

    #[test]
    fn empty_document_gives_defaults() {
        let cfg = resolve("", &[]).unwrap();
        assert_eq!(cfg.init, vec![16.0, 10.0, 150.0]);
        assert_eq!(cfg.params.gain, 10.0);
        assert!(matches!(cfg.controller, ControllerConfig::Sliding { gain: Some(g), .. } if g == 10.0));
    }

    #[test]
    fn preset_supplies_defaults_and_user_values_win() {
        let cfg = resolve("preset = { family = \"fig2_ell\", index = 4 }\npaths = 7", &[]).unwrap();
        assert_eq!(cfg.params.noise_scale, 4.0);
        assert_eq!(cfg.params.gain, 15.0);
        assert_eq!(cfg.paths, 7);
        assert_eq!(cfg.member_name(), "fig2_ell_4");
    }

    #[test]
    fn overrides_reach_nested_fields() {
        let cfg = resolve(
            "",
            &[
                "params.noise_scale=0.5",
                "controller.gain=3",
                "preset.family=fig1_l",
                "preset.index=2",
            ],
        )
        .unwrap();
        assert_eq!(cfg.params.noise_scale, 0.5);
        assert_eq!(cfg.params.gain, 3.0);
        assert_eq!(cfg.init[0], 12.0);
    }

    #[test]
    fn switching_controller_kind_replaces_the_table() {
        let cfg = resolve("[controller]\nkind = \"sontag\"\nlambda = 2.0", &[]).unwrap();
        assert_eq!(cfg.controller, ControllerConfig::Sontag { lambda: 2.0 });
    }

    #[test]
    fn bare_strings_are_accepted_as_override_values() {
        let (k, v) = parse_override("out=runs/a").unwrap();
        assert_eq!(k, "out");
        assert_eq!(v, Value::String("runs/a".into()));
        assert_eq!(parse_override("paths=12").unwrap().1, Value::Integer(12));
    }

    #[test]
    fn error_categories_are_distinct() {
        assert_eq!(resolve("paths = 0", &[]).unwrap_err().category(), "config");
        assert_eq!(resolve("bogus = 1", &[]).unwrap_err().category(), "config_parse");
        assert_eq!(resolve("paths = \"x\"", &[]).unwrap_err().category(), "config_parse");
        assert_eq!(
            resolve("model = \"pendulum\"", &[]).unwrap_err().category(),
            "unknown_name"
        );
        assert_eq!(
            resolve("[controller]\nkind = \"mpc\"", &[]).unwrap_err().category(),
            "unknown_name"
        );
        assert_eq!(resolve("log = [\"W\"]", &[]).unwrap_err().category(), "unknown_name");
        assert_eq!(resolve("dt = 0.07", &[]).unwrap_err().category(), "config");
        assert_eq!(
            resolve("preset = { family = \"fig1_l\", index = 7 }", &[])
                .unwrap_err()
                .category(),
            "config"
        );
        assert!(parse_override("noequals").is_err());
    }

    #[test]
    fn errors_name_the_offending_field() {
        let msg = resolve("paths = 0", &[]).unwrap_err().to_string();
        assert!(msg.contains("paths"), "{msg}");
        let msg = resolve("[functionals]\nbarrier = \"x\"\nlyapunov = \"quadratic_tracking\"", &[])
            .unwrap_err()
            .to_string();
        assert!(msg.contains("functionals.barrier"), "{msg}");
    }

    #[test]
    fn effective_config_round_trips() {
        let cfg = resolve("preset = { family = \"fig1_l\", index = 3 }", &["seed_base=9"]).unwrap();
        let again = resolve(&cfg.to_toml(), &[]).unwrap();
        assert_eq!(cfg, again);
    }
}
