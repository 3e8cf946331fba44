//! Run configuration: one TOML file merged over built-in defaults, plus
//! dotted-key overrides.

use std::path::{Path, PathBuf};

use mvlr_core::clustering::ClaraOptions;
use mvlr_core::scenario::build_cell;
use mvlr_core::{
    ArrayConfig, Dims, Error, LinkConfig, NoiseConfig, RankRule, Result, Scenario, ScenarioConfig, Waveform,
};
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use toml::{Table, Value};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Algorithm {
    #[default]
    Pam,
    Clara,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Arrays {
    /// Vehicle array (transmits).
    pub tx: ArrayConfig,
    /// Base-station array (receives).
    pub rx: ArrayConfig,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DatasetBlock {
    pub n: usize,
    pub snr_db: f64,
    /// Seeds every random draw of a command.
    pub seed: u64,
    /// Seeds the cell geometry, kept apart from `seed` so that training and
    /// evaluation runs with different seeds share one cell.
    pub cell_seed: u64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ClusteringBlock {
    /// Fixed K; ignored when `k_range` is set.
    pub k: usize,
    /// Silhouette selection over [lo, hi].
    pub k_range: Option<[usize; 2]>,
    pub algorithm: Algorithm,
    pub balance_floor: usize,
    pub l_min: usize,
    pub rank_rule: RankRule,
    pub clara: ClaraOptions,
    /// Grid cell of the position-aware baseline, meters.
    pub cell_size_m: f64,
    pub cell_origin: [f64; 2],
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalBlock {
    pub street: Option<usize>,
    pub step_m: f64,
    pub n_repeats: usize,
    /// Defaults to the dataset SNR.
    pub snr_db: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepBlock {
    pub l_values: Vec<usize>,
    pub region: usize,
    pub n_test: usize,
    pub seeds: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunConfig {
    pub scenario: ScenarioConfig,
    pub waveform: Waveform,
    pub arrays: Arrays,
    pub noise: NoiseConfig,
    pub dataset: DatasetBlock,
    pub clustering: ClusteringBlock,
    pub eval: EvalBlock,
    pub sweep: SweepBlock,
}

impl Default for RunConfig {
    fn default() -> Self {
        Self {
            scenario: ScenarioConfig::default(),
            waveform: Waveform::flat(),
            arrays: Arrays {
                tx: ArrayConfig::user_equipment(),
                rx: ArrayConfig::base_station(),
            },
            noise: NoiseConfig::white(1.0),
            dataset: DatasetBlock {
                n: 5000,
                snr_db: 0.0,
                seed: 1,
                cell_seed: 1,
            },
            clustering: ClusteringBlock {
                k: 7,
                k_range: None,
                algorithm: Algorithm::Pam,
                balance_floor: 100,
                l_min: 100,
                rank_rule: RankRule::default(),
                clara: ClaraOptions::default(),
                cell_size_m: 5.0,
                cell_origin: [0.0, 0.0],
            },
            eval: EvalBlock {
                street: None,
                step_m: 0.5,
                n_repeats: 50,
                snr_db: None,
            },
            sweep: SweepBlock {
                l_values: vec![1, 10, 100, 1000],
                region: 0,
                n_test: 200,
                seeds: 1,
            },
        }
    }
}

fn cfg_err(msg: impl Into<String>) -> Error {
    Error::Config(msg.into())
}

fn to_table<T: Serialize>(v: &T) -> Result<Table> {
    Table::try_from(v).map_err(|e| cfg_err(format!("cannot serialize configuration: {e}")))
}

/// Recursively overlays `over` onto `base`; non-table values replace.
pub fn merge(base: &mut Table, over: Table) {
    for (k, v) in over {
        match (base.get_mut(&k), v) {
            (Some(Value::Table(b)), Value::Table(o)) => merge(b, o),
            (_, v) => {
                base.insert(k, v);
            }
        }
    }
}

/// Keys present in `user` but absent from `known`, as dotted paths.
fn unknown_keys(user: &Table, known: &Table, prefix: &str, out: &mut Vec<String>) {
    for (k, v) in user {
        let path = if prefix.is_empty() {
            k.clone()
        } else {
            format!("{prefix}.{k}")
        };
        match (known.get(k), v) {
            (None, _) => out.push(path),
            (Some(Value::Table(kt)), Value::Table(ut)) => unknown_keys(ut, kt, &path, out),
            _ => {}
        }
    }
}

/// `a.b.c=value`; the value is read as TOML, else taken as a string.
pub fn apply_override(table: &mut Table, assignment: &str) -> Result<()> {
    let (key, raw) = assignment
        .split_once('=')
        .ok_or_else(|| cfg_err(format!("override '{assignment}' is not KEY=VALUE")))?;
    let parts: Vec<&str> = key.trim().split('.').collect();
    if parts.iter().any(|p| p.is_empty()) {
        return Err(cfg_err(format!("bad override key '{key}'")));
    }
    let raw = raw.trim();
    let value = format!("v = {raw}")
        .parse::<Table>()
        .ok()
        .and_then(|mut t| t.remove("v"))
        .unwrap_or_else(|| Value::String(raw.to_string()));
    let mut node = table;
    for p in &parts[..parts.len() - 1] {
        node = match node.entry(p.to_string()).or_insert_with(|| Value::Table(Table::new())) {
            Value::Table(t) => t,
            _ => return Err(cfg_err(format!("override '{key}': '{p}' is not a table"))),
        };
    }
    node.insert(parts[parts.len() - 1].to_string(), value);
    Ok(())
}

impl RunConfig {
    /// Defaults, then the file (if any), then each override in order. A
    /// `scenario_file` key in the file is resolved relative to the file.
    pub fn load(path: Option<&Path>, overrides: &[String]) -> Result<Self> {
        let mut user = Table::new();
        if let Some(path) = path {
            let text = std::fs::read_to_string(path).map_err(|e| cfg_err(format!("{}: {e}", path.display())))?;
            user = text
                .parse::<Table>()
                .map_err(|e| cfg_err(format!("{}: {e}", path.display())))?;
            if let Some(v) = user.remove("scenario_file") {
                let rel = v
                    .as_str()
                    .ok_or_else(|| cfg_err("scenario_file must be a path string"))?;
                let file: PathBuf = path.parent().unwrap_or(Path::new(".")).join(rel);
                let text = std::fs::read_to_string(&file).map_err(|e| cfg_err(format!("{}: {e}", file.display())))?;
                let scen = text
                    .parse::<Table>()
                    .map_err(|e| cfg_err(format!("{}: {e}", file.display())))?;
                let mut s = user
                    .remove("scenario")
                    .and_then(|v| v.as_table().cloned())
                    .unwrap_or_default();
                let mut base = scen;
                merge(&mut base, std::mem::take(&mut s));
                user.insert("scenario".into(), Value::Table(base));
            }
        }
        for o in overrides {
            apply_override(&mut user, o)?;
        }
        Self::from_table(user)
    }

    pub fn from_table(user: Table) -> Result<Self> {
        let defaults = to_table(&RunConfig::default())?;
        let mut merged = defaults.clone();
        merge(&mut merged, user.clone());
        let cfg: RunConfig = merged
            .try_into()
            .map_err(|e: toml::de::Error| cfg_err(format!("configuration: {}", e.message())))?;
        // unknown keys are typos; reject them
        let mut unknown = vec![];
        unknown_keys(&user, &to_table(&cfg)?, "", &mut unknown);
        unknown_keys_lenient(&mut unknown, &user);
        if !unknown.is_empty() {
            return Err(cfg_err(format!("unknown configuration keys: {}", unknown.join(", "))));
        }
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn link(&self) -> LinkConfig {
        LinkConfig {
            waveform: self.waveform,
            tx: self.arrays.tx,
            rx: self.arrays.rx,
        }
    }

    pub fn dims(&self) -> Dims {
        self.link().dims()
    }

    pub fn build_scenario(&self) -> Result<Scenario> {
        build_cell(&self.scenario, self.dataset.cell_seed)
    }

    pub fn eval_snr_db(&self) -> f64 {
        self.eval.snr_db.unwrap_or(self.dataset.snr_db)
    }

    /// Checks module preconditions before any work starts.
    pub fn validate(&self) -> Result<()> {
        self.arrays.tx.validate()?;
        self.arrays.rx.validate()?;
        self.waveform.validate(self.arrays.tx.n_elements())?;
        if !(self.noise.white_power > 0.0) {
            return Err(cfg_err("noise.white_power must be positive"));
        }
        if self.dataset.n == 0 {
            return Err(cfg_err("dataset.n must be at least 1"));
        }
        if self.dataset.snr_db.is_nan() {
            return Err(cfg_err("dataset.snr_db is not a number"));
        }
        let c = &self.clustering;
        if c.k == 0 {
            return Err(cfg_err("clustering.k must be at least 1"));
        }
        if let Some([lo, hi]) = c.k_range {
            if lo < 2 || hi < lo {
                return Err(cfg_err(format!(
                    "clustering.k_range [{lo}, {hi}] must satisfy 2 <= lo <= hi"
                )));
            }
        }
        c.rank_rule.validate()?;
        if !(c.cell_size_m > 0.0) {
            return Err(cfg_err("clustering.cell_size_m must be positive"));
        }
        if !(self.eval.step_m > 0.0) || self.eval.n_repeats == 0 {
            return Err(cfg_err("eval.step_m must be positive and eval.n_repeats at least 1"));
        }
        let l = &self.sweep.l_values;
        if l.is_empty() {
            return Err(cfg_err("sweep.l_values is empty"));
        }
        if l[0] == 0 || l.windows(2).any(|w| w[1] <= w[0]) {
            return Err(cfg_err(format!(
                "sweep.l_values must be positive and ascending, got {l:?}"
            )));
        }
        if self.sweep.seeds == 0 || self.sweep.n_test == 0 {
            return Err(cfg_err("sweep.seeds and sweep.n_test must be at least 1"));
        }
        Ok(())
    }

    /// Canonical TOML of the resolved configuration.
    pub fn canonical(&self) -> Result<String> {
        toml::to_string(self).map_err(|e| cfg_err(format!("cannot serialize configuration: {e}")))
    }

    /// SHA-256 of the canonical serialization, hex.
    pub fn hash(&self) -> Result<String> {
        Ok(hex::encode(Sha256::digest(self.canonical()?.as_bytes())))
    }
}

/// Optional fields left unset serialize to nothing, so a user may name them
/// even though the resolved table lacks them.
fn unknown_keys_lenient(unknown: &mut Vec<String>, _user: &Table) {
    const OPTIONAL: [&str; 5] = [
        "clustering.k_range",
        "clustering.clara.sample_size",
        "eval.street",
        "eval.snr_db",
        "scenario.paths.los_k_factor_db",
    ];
    unknown.retain(|k| !OPTIONAL.contains(&k.as_str()));
}
