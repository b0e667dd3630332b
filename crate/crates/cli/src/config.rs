//! Campaign configuration.
//!
//! A configuration is one TOML tree. It is resolved in three layers: the
//! built-in defaults, then the optional file, then command-line overrides
//! (`--set path.to.key=value` and the dedicated flags). Each layer is deep
//! merged into the previous one, so any single field can be overridden
//! without restating its siblings. Unknown keys are rejected.

use std::collections::BTreeMap;
use std::fmt;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use bmflc::plant::SimConfig;
use bmflc::{FilterConfig, MotionParams, StepSizeParams, Variant};
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use toml::{Table, Value};

use crate::error::CliError;

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum CampaignKind {
    Synth,
    Run,
    Compare,
    LimitsNnu,
    LimitsBand,
    LimitsNoise,
    Bench,
    Tune,
    Replay,
}

impl CampaignKind {
    pub fn name(self) -> &'static str {
        match self {
            CampaignKind::Synth => "synth",
            CampaignKind::Run => "run",
            CampaignKind::Compare => "compare",
            CampaignKind::LimitsNnu => "limits-nnu",
            CampaignKind::LimitsBand => "limits-band",
            CampaignKind::LimitsNoise => "limits-noise",
            CampaignKind::Bench => "bench",
            CampaignKind::Tune => "tune",
            CampaignKind::Replay => "replay",
        }
    }

    pub fn sweep(self) -> Option<SweepKind> {
        match self {
            CampaignKind::LimitsNnu => Some(SweepKind::Nnu),
            CampaignKind::LimitsBand => Some(SweepKind::Band),
            CampaignKind::LimitsNoise => Some(SweepKind::Noise),
            _ => None,
        }
    }
}

impl fmt::Display for CampaignKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

/// What a limits campaign varies.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize, clap::ValueEnum)]
#[serde(rename_all = "lowercase")]
pub enum SweepKind {
    /// Number of vibration components, `a_N = b_N = N`.
    Nnu,
    /// Lower band edge `a_ν`, with `b_ν = a_ν + 4` and the filter band following.
    Band,
    /// Force-noise standard deviation `s_n`, at `ξ_total = 0.5`.
    Noise,
}

impl SweepKind {
    pub fn name(self) -> &'static str {
        match self {
            SweepKind::Nnu => "nnu",
            SweepKind::Band => "band",
            SweepKind::Noise => "noise",
        }
    }

    pub fn campaign(self) -> CampaignKind {
        match self {
            SweepKind::Nnu => CampaignKind::LimitsNnu,
            SweepKind::Band => CampaignKind::LimitsBand,
            SweepKind::Noise => CampaignKind::LimitsNoise,
        }
    }

    pub fn default_values(self) -> Vec<f64> {
        match self {
            SweepKind::Nnu => vec![1.0, 2.0, 3.0, 4.0, 5.0, 6.0],
            SweepKind::Band => vec![6.0, 10.0, 20.0, 40.0, 60.0, 80.0, 100.0],
            // Half-decade steps across the range where the noise competes with a
            // 0.5 vibration amplitude; below 0.1 the suppression rate is flat.
            SweepKind::Noise => (0..6).map(|i| 10f64.powf(-1.0 + 0.5 * i as f64)).collect(),
        }
    }

    /// Checks that every sweep value is meaningful for this kind.
    pub fn validate(self, values: &[f64]) -> Result<(), String> {
        if values.is_empty() {
            return Err("sweep values are empty".into());
        }
        for &v in values {
            let ok = match self {
                SweepKind::Nnu => v >= 1.0 && v.fract() == 0.0,
                SweepKind::Band => v > 0.0 && v.is_finite(),
                SweepKind::Noise => v >= 0.0 && v.is_finite(),
            };
            if !ok {
                return Err(format!("sweep value {v} is invalid for the {} sweep", self.name()));
            }
        }
        Ok(())
    }
}

/// Band and grid size shared by all methods.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct BandSettings {
    pub lower: f64,
    pub upper: f64,
    pub len: usize,
}

impl Default for BandSettings {
    fn default() -> Self {
        let f = FilterConfig::default();
        Self { lower: f.lower, upper: f.upper, len: f.len }
    }
}

/// Step-size settings per method.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct StepSettings {
    pub lms: StepSizeParams,
    pub damped: StepSizeParams,
    pub rls: StepSizeParams,
    pub kalman: StepSizeParams,
}

impl Default for StepSettings {
    fn default() -> Self {
        Self {
            lms: StepSizeParams::for_variant(Variant::Lms),
            damped: StepSizeParams::for_variant(Variant::Damped),
            rls: StepSizeParams::for_variant(Variant::Rls),
            kalman: StepSizeParams::for_variant(Variant::Kalman),
        }
    }
}

impl StepSettings {
    pub fn get(&self, variant: Variant) -> StepSizeParams {
        let p = match variant {
            Variant::Lms => self.lms,
            Variant::Damped => self.damped,
            Variant::Rls => self.rls,
            Variant::Kalman => self.kalman,
        };
        StepSizeParams { variant, ..p }
    }

    pub fn set(&mut self, params: StepSizeParams) {
        match params.variant {
            Variant::Lms => self.lms = params,
            Variant::Damped => self.damped = params,
            Variant::Rls => self.rls = params,
            Variant::Kalman => self.kalman = params,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct BenchSettings {
    /// Grid sizes `L` to time; two or more also produce a scaling fit.
    pub lens: Vec<usize>,
    pub reps: usize,
}

impl Default for BenchSettings {
    fn default() -> Self {
        Self { lens: vec![120], reps: 100 }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ReplaySettings {
    /// CSV file to replay.
    pub input: Option<PathBuf>,
    /// TOML file mapping roles to column names; see [`ColumnMapping`].
    pub mapping: Option<PathBuf>,
    /// Sample rate in Hz; inferred from the time column when absent.
    pub fs: Option<f64>,
    pub method: Variant,
    /// Band of the error-power metric, in Hz.
    pub metric_band: [f64; 2],
}

impl Default for ReplaySettings {
    fn default() -> Self {
        Self { input: None, mapping: None, fs: None, method: Variant::Damped, metric_band: [3.0, 100.0] }
    }
}

/// Column names of a replayed CSV.
///
/// Without a mapping file the columns of an exported run are used. In a
/// mapping file `time` and `velocity` fall back to those names, while an
/// omitted `position_error` means the trace has no such column.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ColumnMapping {
    #[serde(default = "default_time_column")]
    pub time: String,
    #[serde(default = "default_velocity_column")]
    pub velocity: String,
    #[serde(default)]
    pub position_error: Option<String>,
}

fn default_time_column() -> String {
    "t".into()
}

fn default_velocity_column() -> String {
    "e_vel".into()
}

impl Default for ColumnMapping {
    fn default() -> Self {
        Self { time: default_time_column(), velocity: default_velocity_column(), position_error: Some("e_pos".into()) }
    }
}

impl ColumnMapping {
    pub fn load(path: &Path) -> Result<Self, CliError> {
        let text = std::fs::read_to_string(path).map_err(|e| CliError::io(path, e))?;
        toml::from_str(&text).map_err(|e| CliError::Usage(format!("{}: {e}", path.display())))
    }
}

/// Everything a command needs.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct CampaignConfig {
    pub campaign: CampaignKind,
    pub seeds: Vec<u64>,
    pub methods: Vec<Variant>,
    /// Sweep values of a limits campaign; empty selects the defaults of
    /// the sweep kind.
    pub sweep: Vec<f64>,
    pub out: PathBuf,
    /// Directory of motion files written by `synth`; motions are
    /// generated from the seeds when absent.
    pub motions_dir: Option<PathBuf>,
    /// Tuned parameter file written by `tune`; `compare` tunes when absent.
    pub params_file: Option<PathBuf>,
    /// Drop motions whose tuning diverged from the average instead of
    /// aborting.
    pub exclude_failed: bool,
    /// Limits campaigns: tune step sizes at every sweep point.
    pub tune_per_point: bool,
    pub filter: BandSettings,
    pub step: StepSettings,
    pub motion: MotionParams,
    pub sim: SimConfig,
    pub bench: BenchSettings,
    pub replay: ReplaySettings,
}

impl Default for CampaignConfig {
    fn default() -> Self {
        Self {
            campaign: CampaignKind::Compare,
            seeds: (0..10).collect(),
            methods: Variant::ALL.to_vec(),
            sweep: Vec::new(),
            out: PathBuf::from("out"),
            motions_dir: None,
            params_file: None,
            exclude_failed: false,
            tune_per_point: true,
            filter: BandSettings::default(),
            step: StepSettings::default(),
            motion: MotionParams::default(),
            sim: SimConfig::default(),
            bench: BenchSettings::default(),
            replay: ReplaySettings::default(),
        }
    }
}

impl CampaignConfig {
    /// Filter settings of `variant` under this configuration.
    pub fn filter_config(&self, variant: Variant) -> FilterConfig {
        FilterConfig::new(self.filter.lower, self.filter.upper, self.filter.len, self.step.get(variant))
    }

    /// Sweep values, falling back to the defaults of the sweep kind.
    pub fn sweep_values(&self) -> Vec<f64> {
        match self.campaign.sweep() {
            Some(kind) if self.sweep.is_empty() => kind.default_values(),
            _ => self.sweep.clone(),
        }
    }

    pub fn validate(&self) -> Result<(), CliError> {
        let usage = |m: String| Err(CliError::Usage(m));
        if self.seeds.is_empty() {
            return usage("seeds must not be empty".into());
        }
        let mut seen = std::collections::BTreeSet::new();
        if let Some(dup) = self.seeds.iter().find(|s| !seen.insert(**s)) {
            return usage(format!("seed {dup} is listed twice"));
        }
        if self.methods.is_empty() {
            return usage("methods must not be empty".into());
        }
        match self.campaign.sweep() {
            Some(kind) => kind.validate(&self.sweep_values()).map_err(CliError::Usage)?,
            None if !self.sweep.is_empty() => {
                return usage(format!("`sweep` is only meaningful for limits campaigns, not {}", self.campaign));
            }
            None => {}
        }
        self.motion.validate().map_err(|e| CliError::Usage(e.to_string()))?;
        self.sim.validate().map_err(|e| CliError::Usage(e.to_string()))?;
        for v in Variant::ALL {
            self.filter_config(v).grid().map_err(|e| CliError::Usage(e.to_string()))?;
            self.step.get(v).validate().map_err(|e| CliError::Usage(format!("step.{v}: {e}")))?;
        }
        if self.bench.lens.is_empty() || self.bench.lens.contains(&0) || self.bench.reps == 0 {
            return usage("bench needs non-empty lens > 0 and reps > 0".into());
        }
        Ok(())
    }

    /// SHA-256 of the canonical TOML form, as lowercase hex. The output
    /// directory is left out: it says where results go, not what they are.
    pub fn hash(&self) -> String {
        let text = CampaignConfig { out: PathBuf::new(), ..self.clone() }.to_toml();
        Sha256::digest(text.as_bytes()).iter().map(|b| format!("{b:02x}")).collect()
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("configuration serialises to TOML")
    }
}

/// One `path.to.key=value` override; the value is read as a TOML value
/// and falls back to a bare string.
#[derive(Debug, Clone, PartialEq)]
pub struct Override {
    pub path: Vec<String>,
    pub value: Value,
}

impl FromStr for Override {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        let (key, raw) = s.split_once('=').ok_or_else(|| format!("override `{s}` is not KEY=VALUE"))?;
        let path: Vec<String> = key.trim().split('.').map(str::to_string).collect();
        if path.iter().any(String::is_empty) {
            return Err(format!("override key `{key}` has an empty segment"));
        }
        let raw = raw.trim();
        let value = toml::from_str::<Table>(&format!("v = {raw}"))
            .ok()
            .and_then(|mut t| t.remove("v"))
            .unwrap_or_else(|| Value::String(raw.to_string()));
        Ok(Self { path, value })
    }
}

impl Override {
    pub fn new(path: &str, value: impl Into<Value>) -> Self {
        Self { path: path.split('.').map(str::to_string).collect(), value: value.into() }
    }

    fn apply(&self, root: &mut Table) -> Result<(), CliError> {
        let (last, parents) = self.path.split_last().expect("non-empty path");
        let mut table = root;
        for key in parents {
            let entry = table.entry(key.clone()).or_insert_with(|| Value::Table(Table::new()));
            table = entry
                .as_table_mut()
                .ok_or_else(|| CliError::Usage(format!("`{}` is not a table", self.path.join("."))))?;
        }
        table.insert(last.clone(), self.value.clone());
        Ok(())
    }
}

/// Recursively merges `top` into `base`; tables merge, anything else
/// replaces.
fn merge(base: &mut Table, top: Table) {
    for (key, value) in top {
        match (base.get_mut(&key), value) {
            (Some(Value::Table(b)), Value::Table(t)) => merge(b, t),
            (_, v) => {
                base.insert(key, v);
            }
        }
    }
}

/// Resolves defaults, then `file`, then `overrides` into a configuration.
pub fn resolve(file: Option<&Path>, overrides: &[Override]) -> Result<CampaignConfig, CliError> {
    let mut tree = Table::try_from(CampaignConfig::default()).expect("defaults serialise");
    if let Some(path) = file {
        let text = std::fs::read_to_string(path).map_err(|e| CliError::io(path, e))?;
        let layer: Table = toml::from_str(&text).map_err(|e| CliError::Usage(format!("{}: {e}", path.display())))?;
        merge(&mut tree, layer);
    }
    for o in overrides {
        o.apply(&mut tree)?;
    }
    let mut config: CampaignConfig =
        Value::Table(tree).try_into().map_err(|e: toml::de::Error| CliError::Usage(format!("configuration: {e}")))?;
    // Each method table always describes its own method.
    for v in Variant::ALL {
        let p = config.step.get(v);
        config.step.set(p);
    }
    Ok(config)
}

/// Seed list given on the command line.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct SeedList(pub Vec<u64>);

impl FromStr for SeedList {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        parse_seeds(s).map(SeedList)
    }
}

/// Parses `4`, `0..10` (half-open) or `1,2,5` into a seed list.
pub fn parse_seeds(s: &str) -> Result<Vec<u64>, String> {
    let bad = |_| format!("invalid seed list `{s}`");
    if let Some((a, b)) = s.split_once("..") {
        let (a, b): (u64, u64) = (a.trim().parse().map_err(bad)?, b.trim().parse().map_err(bad)?);
        if a >= b {
            return Err(format!("empty seed range `{s}`"));
        }
        return Ok((a..b).collect());
    }
    s.split(',').map(|p| p.trim().parse::<u64>().map_err(bad)).collect()
}

/// Tuned step-size parameters of each method plus how they were obtained.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TunedParams {
    pub config_hash: String,
    pub methods: BTreeMap<Variant, TunedMethod>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TunedMethod {
    pub params: StepSizeParams,
    pub provenance: Vec<Provenance>,
    /// Seeds whose tuning diverged and were left out of the average.
    pub excluded: Vec<u64>,
}

/// One per-motion optimisation behind a general parameter set.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Provenance {
    pub seed: u64,
    pub evals: usize,
    pub f_best: f64,
    pub optimum: StepSizeParams,
}

impl TunedParams {
    pub fn load(path: &Path) -> Result<Self, CliError> {
        let text = std::fs::read_to_string(path).map_err(|e| CliError::io(path, e))?;
        toml::from_str(&text).map_err(|e| CliError::Usage(format!("{}: {e}", path.display())))
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("tuned parameters serialise to TOML")
    }
}
