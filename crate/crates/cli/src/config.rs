//! Run configuration: one TOML file per experiment with `--set` overrides.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use gridpinn::component::sm9::reference_domain;
use gridpinn::component::{ComponentModel, LinearModel, Sm9Model, SmParams};
use gridpinn::nn::Activation;
use gridpinn::sampling::{BoundSpec, InputDomain, SamplingMethod};
use gridpinn::solver::SolveConfig;
use gridpinn::training::TrainConfig;
use gridpinn::{Error, Result};
use serde::{Deserialize, Serialize};
use toml::{Table, Value};

/// Configs compiled into the binary, addressable by name.
pub const BUNDLED: &[(&str, &str)] = &[
    ("sm9.reference", include_str!("../configs/sm9.reference.toml")),
    ("sm9.desk", include_str!("../configs/sm9.desk.toml")),
];

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ComponentKind {
    #[default]
    Sm9,
    Linear,
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ComponentSection {
    pub kind: ComponentKind,
    /// Parameter file for `sm9`; keys in `params` override it.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub params_file: Option<PathBuf>,
    #[serde(skip_serializing_if = "Table::is_empty")]
    pub params: Table,
    /// State matrix `A` for `linear`.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub matrix: Option<Vec<Vec<f64>>>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DatasetSection {
    pub sampling: SamplingMethod,
    pub n_trajectories: usize,
    /// Collocation ICs; defaults to `n_trajectories`.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub n_collocation_trajectories: Option<usize>,
    pub horizon_s: f64,
    pub dt_s: f64,
    pub data_stride: usize,
    pub collocation_stride: usize,
    pub thin_offset: usize,
    pub split_ratios: [f64; 3],
    pub seed_data: Option<u64>,
    pub seed_collocation: Option<u64>,
    pub seed_split: Option<u64>,
    pub binary: bool,
}

impl Default for DatasetSection {
    fn default() -> Self {
        Self {
            sampling: SamplingMethod::Lhs,
            n_trajectories: 500,
            n_collocation_trajectories: None,
            horizon_s: 1.0,
            dt_s: 1e-3,
            data_stride: 23,
            collocation_stride: 19,
            thin_offset: 0,
            split_ratios: [0.8, 0.1, 0.1],
            seed_data: None,
            seed_collocation: None,
            seed_split: None,
            binary: true,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SolverSection {
    pub rtol: f64,
    pub atol: f64,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub max_step: Option<f64>,
}

impl Default for SolverSection {
    fn default() -> Self {
        let d = SolveConfig::default();
        Self { rtol: d.rtol, atol: d.atol, max_step: d.max_step }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct NetworkSection {
    pub hidden: Vec<usize>,
    pub activation: Activation,
    pub seed: Option<u64>,
}

impl Default for NetworkSection {
    fn default() -> Self {
        Self { hidden: vec![64; 4], activation: Activation::Tanh, seed: None }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct EvaluationSection {
    pub bench_sizes: Vec<usize>,
    pub bench_repeats: usize,
    pub overlay_count: usize,
    pub seed_bench: Option<u64>,
}

impl Default for EvaluationSection {
    fn default() -> Self {
        Self { bench_sizes: vec![1, 50, 500], bench_repeats: 5, overlay_count: 3, seed_bench: None }
    }
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    /// Global seed; every unset per-stage seed derives from it.
    pub seed: u64,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub out_dir: Option<PathBuf>,
    pub component: ComponentSection,
    #[serde(skip_serializing_if = "BTreeMap::is_empty")]
    pub domain: BTreeMap<String, BoundSpec>,
    pub dataset: DatasetSection,
    pub solver: SolverSection,
    pub network: NetworkSection,
    pub training: TrainConfig,
    pub evaluation: EvaluationSection,
}

/// Seed paths filled from the global seed when absent, with their offsets.
const DERIVED_SEEDS: &[(&str, u64)] = &[
    ("dataset.seed_data", 0),
    ("dataset.seed_collocation", 1),
    ("dataset.seed_split", 2),
    ("network.seed", 3),
    ("training.seed", 4),
    ("evaluation.seed_bench", 5),
];

fn parse_value(text: &str) -> Value {
    match toml::from_str::<Table>(&format!("v = {text}")) {
        Ok(mut t) => t.remove("v").unwrap_or_else(|| Value::String(text.into())),
        Err(_) => Value::String(text.into()),
    }
}

fn get_path<'a>(table: &'a Table, key: &str) -> Option<&'a Value> {
    let mut parts = key.split('.');
    let mut cur = table.get(parts.next()?)?;
    for p in parts {
        cur = cur.as_table()?.get(p)?;
    }
    Some(cur)
}

/// Sets a dotted key, creating intermediate tables.
pub fn set_path(table: &mut Table, key: &str, value: Value) -> Result<()> {
    let parts: Vec<&str> = key.split('.').collect();
    if parts.iter().any(|p| p.is_empty()) {
        return Err(Error::config(key, "empty key segment"));
    }
    let mut cur = table;
    for p in &parts[..parts.len() - 1] {
        let entry = cur.entry(p.to_string()).or_insert_with(|| Value::Table(Table::new()));
        cur = entry
            .as_table_mut()
            .ok_or_else(|| Error::config(key, format!("`{p}` is not a table")))?;
    }
    cur.insert(parts[parts.len() - 1].to_string(), value);
    Ok(())
}

/// Applies `key=value` overrides; values use TOML syntax, falling back to a
/// bare string.
pub fn apply_overrides(table: &mut Table, overrides: &[String]) -> Result<()> {
    for ov in overrides {
        let (key, value) = ov
            .split_once('=')
            .ok_or_else(|| Error::config(ov.as_str(), "override must be key=value"))?;
        set_path(table, key.trim(), parse_value(value.trim()))?;
    }
    Ok(())
}

fn toml_error_key(msg: &str) -> String {
    msg.lines()
        .find_map(|l| l.trim().strip_prefix("unknown field `").and_then(|r| r.split('`').next()))
        .map(str::to_string)
        .or_else(|| {
            msg.lines()
                .find_map(|l| l.trim().strip_prefix("in `").and_then(|r| r.split('`').next()))
                .map(str::to_string)
        })
        .unwrap_or_else(|| "<root>".into())
}

impl RunConfig {
    /// Reads `source` (a file path or a bundled config name), applies
    /// overrides and the `--seed` flag, and resolves derived values.
    /// Precedence: flag > file > default.
    pub fn load(source: Option<&str>, overrides: &[String], seed: Option<u64>) -> Result<Self> {
        let (mut table, base) = match source {
            None => (Table::new(), None),
            Some(src) => {
                let path = Path::new(src);
                let (text, base) = if path.exists() {
                    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
                    (text, path.parent().map(Path::to_path_buf))
                } else if let Some((_, text)) = BUNDLED.iter().find(|(n, _)| *n == src) {
                    (text.to_string(), None)
                } else {
                    return Err(Error::config("--config", format!("no such file or bundled config: {src}")));
                };
                let table: Table = toml::from_str(&text)
                    .map_err(|e| Error::config(src, e.to_string().replace('\n', " ")))?;
                (table, base)
            }
        };
        apply_overrides(&mut table, overrides)?;
        if let Some(s) = seed {
            table.insert("seed".into(), Value::Integer(s as i64));
        }
        Self::from_table(table, base.as_deref())
    }

    pub fn from_toml_str(text: &str) -> Result<Self> {
        let table: Table = toml::from_str(text).map_err(|e| Error::config("<root>", e.to_string()))?;
        Self::from_table(table, None)
    }

    fn from_table(mut table: Table, base: Option<&Path>) -> Result<Self> {
        let global = match table.get("seed") {
            None => 0,
            Some(Value::Integer(s)) if *s >= 0 => *s as u64,
            Some(v) => return Err(Error::config("seed", format!("expected a non-negative integer, got {v}"))),
        };
        for (key, offset) in DERIVED_SEEDS {
            if get_path(&table, key).is_none() {
                set_path(&mut table, key, Value::Integer(global.wrapping_add(*offset) as i64))?;
            }
        }
        let mut cfg: RunConfig = Table::try_into(table).map_err(|e: toml::de::Error| {
            let msg = e.to_string().replace('\n', " ");
            Error::config(toml_error_key(&e.to_string()), msg)
        })?;
        cfg.resolve_params(base)?;
        cfg.validate()?;
        Ok(cfg)
    }

    /// Folds the parameter file and inline overrides into a complete inline
    /// parameter table so the resolved config is self-contained.
    fn resolve_params(&mut self, base: Option<&Path>) -> Result<()> {
        if self.component.kind != ComponentKind::Sm9 {
            return Ok(());
        }
        let mut table: Table = match &self.component.params_file {
            Some(file) => {
                let path = match base {
                    Some(b) if file.is_relative() => b.join(file),
                    _ => file.clone(),
                };
                let text = std::fs::read_to_string(&path)
                    .map_err(|_| Error::config("component.params_file", format!("cannot read {}", path.display())))?;
                toml::from_str(&text).map_err(|e| Error::config("component.params_file", e.to_string()))?
            }
            None => toml::from_str(&SmParams::default().to_toml_string()).expect("default parameters"),
        };
        for (k, v) in &self.component.params {
            table.insert(k.clone(), v.clone());
        }
        let params: SmParams = Table::try_into(table)
            .map_err(|e: toml::de::Error| Error::config("component.params", e.to_string().replace('\n', " ")))?;
        params.validate().map_err(|e| Error::config("component.params", e.to_string()))?;
        self.component.params = toml::from_str(&params.to_toml_string()).expect("parameters serialize");
        self.component.params_file = None;
        Ok(())
    }

    pub fn validate(&self) -> Result<()> {
        let ds = &self.dataset;
        let fail = |k: &str, m: &str| Err(Error::config(k, m));
        if ds.n_trajectories == 0 {
            return fail("dataset.n_trajectories", "must be positive");
        }
        if !(ds.horizon_s > 0.0) || !(ds.dt_s > 0.0) || ds.dt_s > ds.horizon_s {
            return fail("dataset.dt_s", "need 0 < dt_s <= horizon_s");
        }
        if ds.data_stride == 0 || ds.collocation_stride == 0 {
            return fail("dataset.data_stride", "strides must be at least 1");
        }
        if ds.thin_offset >= ds.data_stride {
            return fail("dataset.thin_offset", "must be smaller than data_stride");
        }
        if self.network.hidden.iter().any(|&h| h == 0) {
            return fail("network.hidden", "layer widths must be positive");
        }
        if self.evaluation.bench_repeats < 3 {
            return fail("evaluation.bench_repeats", "must be at least 3");
        }
        self.training
            .validate()
            .map_err(|e| Error::config("training", e.to_string()))?;
        self.solve_config()
            .validate()
            .map_err(|e| Error::config("solver", e.to_string()))?;
        if self.component.kind == ComponentKind::Linear && self.component.matrix.is_none() {
            return fail("component.matrix", "required for the linear component");
        }
        self.domain_for(&*self.build_component()?)?;
        Ok(())
    }

    pub fn solve_config(&self) -> SolveConfig {
        SolveConfig {
            rtol: self.solver.rtol,
            atol: self.solver.atol,
            t_span: [0.0, self.dataset.horizon_s],
            max_step: self.solver.max_step,
            initial_step: None,
        }
    }

    pub fn build_component(&self) -> Result<Box<dyn ComponentModel>> {
        match self.component.kind {
            ComponentKind::Sm9 => {
                let params: SmParams = Table::try_into(self.component.params.clone())
                    .map_err(|e: toml::de::Error| Error::config("component.params", e.to_string()))?;
                Ok(Box::new(Sm9Model::new(params)?))
            }
            ComponentKind::Linear => {
                let rows = self
                    .component
                    .matrix
                    .as_ref()
                    .ok_or_else(|| Error::config("component.matrix", "missing"))?;
                Ok(Box::new(LinearModel::from_rows(rows).map_err(|e| Error::config("component.matrix", e.to_string()))?))
            }
        }
    }

    pub fn component_name(&self) -> &'static str {
        match self.component.kind {
            ComponentKind::Sm9 => "sm9",
            ComponentKind::Linear => "linear",
        }
    }

    /// The configured domain, or the reference domain for `sm9` when the
    /// `[domain]` section is absent.
    pub fn domain_for(&self, component: &dyn ComponentModel) -> Result<InputDomain> {
        if self.domain.is_empty() {
            return match self.component.kind {
                ComponentKind::Sm9 => Ok(reference_domain()),
                ComponentKind::Linear => Err(Error::config("domain", "required for the linear component")),
            };
        }
        InputDomain::from_map(&component.state_names(), &self.domain)
    }

    pub fn layer_dims(&self, state_dim: usize) -> Vec<usize> {
        let mut dims = vec![state_dim + 1];
        dims.extend(&self.network.hidden);
        dims.push(state_dim);
        dims
    }

    pub fn seeds(&self) -> BTreeMap<String, u64> {
        let ds = &self.dataset;
        [
            ("global", Some(self.seed)),
            ("data", ds.seed_data),
            ("collocation", ds.seed_collocation),
            ("split", ds.seed_split),
            ("init", self.network.seed),
            ("training", Some(self.training.seed)),
            ("bench", self.evaluation.seed_bench),
        ]
        .into_iter()
        .map(|(k, v)| (k.to_string(), v.unwrap_or(0)))
        .collect()
    }

    /// Canonical TOML of the resolved configuration.
    pub fn to_toml_string(&self) -> String {
        toml::to_string(self).expect("config serializes")
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn bundled_configs_resolve() {
        for (name, _) in BUNDLED {
            let cfg = RunConfig::load(Some(name), &[], None).unwrap();
            assert_eq!(cfg.component.kind, ComponentKind::Sm9);
            assert_eq!(cfg.layer_dims(9), vec![10, 64, 64, 64, 64, 9]);
        }
    }

    #[test]
    fn reference_values() {
        let cfg = RunConfig::load(Some("sm9.reference"), &[], None).unwrap();
        assert_eq!(cfg.dataset.n_trajectories, 500);
        assert_eq!((cfg.dataset.data_stride, cfg.dataset.collocation_stride), (23, 19));
        assert_eq!((cfg.dataset.horizon_s, cfg.dataset.dt_s), (1.0, 1e-3));
        assert_eq!(cfg.training.epochs, 750);
        assert_eq!(cfg.training.learning_rate, 1e-3);
        let w = cfg.training.weights;
        assert_eq!([w.lambda_d, w.lambda_dp, w.lambda_cp, w.lambda_ic], [1.0, 0.01, 0.001, 0.01]);
        let params: SmParams = Table::try_into(cfg.component.params.clone()).unwrap();
        assert_eq!(params, SmParams::default());
    }

    #[test]
    fn precedence_flag_over_file_over_default() {
        let cfg = RunConfig::load(
            Some("sm9.reference"),
            &["training.epochs=12".into(), "component.params.H=6.0".into()],
            Some(9),
        )
        .unwrap();
        assert_eq!(cfg.training.epochs, 12);
        assert_eq!(cfg.component.params["H"].as_float(), Some(6.0));
        assert_eq!(cfg.seed, 9);
        assert_eq!(cfg.dataset.seed_data, Some(9));
        assert_eq!(cfg.training.seed, 13);
        assert_eq!(cfg.training.patience, 50);
        assert_eq!(cfg.training.batch_size, 0);
    }

    #[test]
    fn explicit_seed_survives_global() {
        let cfg = RunConfig::load(Some("sm9.desk"), &[], Some(40)).unwrap();
        assert_eq!(cfg.dataset.seed_data, Some(1));
        assert_eq!(cfg.evaluation.seed_bench, Some(45));
    }

    #[test]
    fn unknown_key_names_path() {
        let err = RunConfig::load(Some("sm9.reference"), &["training.epochz=3".into()], None).unwrap_err();
        match err {
            Error::Config { key, .. } => assert!(key.contains("epochz"), "{key}"),
            e => panic!("unexpected {e}"),
        }
    }

    #[test]
    fn invalid_value_is_config_error() {
        let err = RunConfig::load(Some("sm9.reference"), &["dataset.dt_s=-1".into()], None).unwrap_err();
        assert_eq!(err.exit_code(), 2);
        let err = RunConfig::load(Some("sm9.reference"), &["component.params.H=-1".into()], None).unwrap_err();
        assert!(matches!(err, Error::Config { ref key, .. } if key == "component.params"));
    }

    #[test]
    fn resolved_config_round_trips() {
        let cfg = RunConfig::load(Some("sm9.reference"), &["training.epochs=3".into()], Some(5)).unwrap();
        let again = RunConfig::from_toml_str(&cfg.to_toml_string()).unwrap();
        assert_eq!(cfg, again);
        assert_eq!(cfg.to_toml_string(), again.to_toml_string());
    }

    #[test]
    fn linear_component_needs_domain() {
        let text = "[component]\nkind = \"linear\"\nmatrix = [[-1.0]]\n";
        assert!(RunConfig::from_toml_str(text).is_err());
        let ok = format!("{text}[domain]\nx1 = [0.5, 1.5]\n");
        let cfg = RunConfig::from_toml_str(&ok).unwrap();
        let comp = cfg.build_component().unwrap();
        assert_eq!(cfg.domain_for(&*comp).unwrap().dim(), 1);
    }
}
