//! Campaign runners behind the subcommands.
//!
//! Every campaign expands into independent (sweep point × seed × method)
//! cells that are evaluated on the current rayon pool. Results are
//! collected in job order and written sorted by key, so outputs do not
//! depend on scheduling. A cell that diverges or has no vibration power is
//! written as an empty field and explained in `errors.log`.

use std::collections::BTreeMap;
use std::path::PathBuf;

use bmflc::metrics::time_step_sizes;
use bmflc::plant::{run_closed_loop, simulate_sr, SimConfig};
use bmflc::tuner::{GeneralParams, TuneError, TuneProblem};
use bmflc::{FilterConfig, MotionSpec, Variant};
use rayon::prelude::*;
use serde::Serialize;

use crate::config::{CampaignConfig, Provenance, SweepKind, TunedMethod, TunedParams};
use crate::error::{exit, CliError};
use crate::output::{cell, short, ErrorLog, OutputDir, Table};
use crate::stats;

/// What a finished command produced.
#[derive(Debug, Clone, Default)]
pub struct Report {
    pub files: Vec<PathBuf>,
    pub failed_cells: usize,
    /// Human-readable summary table.
    pub summary: String,
}

impl Report {
    pub fn exit_code(&self) -> i32 {
        if self.failed_cells > 0 {
            exit::FAILED_CELLS
        } else {
            exit::SUCCESS
        }
    }
}

/// Relative path of the motion file for `seed`.
pub fn motion_file_name(seed: u64) -> String {
    format!("motions/motion_{seed:06}.toml")
}

/// Motions for the configured seeds, read from `motions_dir` when set and
/// generated otherwise. Returned in ascending seed order.
pub fn load_motions(config: &CampaignConfig) -> Result<Vec<MotionSpec>, CliError> {
    let mut seeds = config.seeds.clone();
    seeds.sort_unstable();
    match &config.motions_dir {
        Some(dir) => seeds
            .iter()
            .map(|&seed| {
                let path = dir.join(format!("motion_{seed:06}.toml"));
                let text = std::fs::read_to_string(&path).map_err(|e| CliError::io(&path, e))?;
                let spec: MotionSpec =
                    toml::from_str(&text).map_err(|e| CliError::Usage(format!("{}: {e}", path.display())))?;
                if spec.seed != seed {
                    return Err(CliError::Usage(format!("{} holds seed {}, not {seed}", path.display(), spec.seed)));
                }
                Ok(spec)
            })
            .collect(),
        None => seeds
            .iter()
            .map(|&seed| config.motion.generate(seed).map_err(|e| CliError::Usage(e.to_string())))
            .collect(),
    }
}

fn sorted_methods(config: &CampaignConfig) -> Vec<Variant> {
    let mut methods = config.methods.clone();
    methods.sort();
    methods.dedup();
    methods
}

/// `synth`: writes one TOML file per seed.
pub fn synth(config: &CampaignConfig, out: &OutputDir) -> Result<Report, CliError> {
    let names: Vec<String> = config.seeds.iter().map(|&s| motion_file_name(s)).collect();
    out.ensure_free(&names)?;
    let motions = load_motions(&CampaignConfig { motions_dir: None, ..config.clone() })?;
    let mut report = Report::default();
    let mut table = Table::new(&["seed", "n_vibration", "n_voluntary", "vibration_hz"]);
    for spec in &motions {
        let text = toml::to_string(spec).expect("motion serialises");
        report.files.push(out.write_text(&motion_file_name(spec.seed), &text)?);
        let freqs: Vec<String> = spec.vibration.iter().map(|c| format!("{:.2}", c.nu)).collect();
        table.push(vec![
            spec.seed.to_string(),
            spec.vibration.len().to_string(),
            spec.voluntary.len().to_string(),
            freqs.join(" "),
        ]);
    }
    report.summary = table.render();
    Ok(report)
}

/// Step-size parameters per method: from `params_file` when given,
/// otherwise from the configuration.
fn fixed_params(config: &CampaignConfig) -> Result<BTreeMap<Variant, TunedMethod>, CliError> {
    let methods = sorted_methods(config);
    match &config.params_file {
        Some(path) => {
            let tuned = TunedParams::load(path)?;
            methods
                .iter()
                .map(|v| {
                    tuned.methods.get(v).cloned().map(|m| (*v, m)).ok_or_else(|| {
                        CliError::Usage(format!("{} has no parameters for {v}", path.display()))
                    })
                })
                .collect()
        }
        None => Ok(methods
            .iter()
            .map(|&v| (v, TunedMethod { params: config.step.get(v), provenance: Vec::new(), excluded: Vec::new() }))
            .collect()),
    }
}

/// `run`: full closed-loop records for every seed and method.
pub fn run(config: &CampaignConfig, out: &OutputDir) -> Result<Report, CliError> {
    let motions = load_motions(config)?;
    let params = fixed_params(config)?;
    let jobs: Vec<(&MotionSpec, Variant)> =
        motions.iter().flat_map(|m| params.keys().map(move |&v| (m, v))).collect();
    let results: Vec<_> = jobs
        .par_iter()
        .map(|&(m, v)| {
            let filter = FilterConfig { step: params[&v].params, ..config.filter_config(v) };
            run_closed_loop(m, filter, &config.sim).map_err(|e| (m.seed, v, e))
        })
        .collect();

    let mut report = Report::default();
    let mut table = Table::new(&["seed", "method", "sr", "mean_step_ns"]);
    for (&(m, v), result) in jobs.iter().zip(results) {
        let record = result.map_err(|(seed, v, e)| CliError::Divergence(format!("seed {seed}, {v}: {e}")))?;
        let mut bytes = Vec::new();
        record.write_csv(&mut bytes).map_err(|e| CliError::Usage(e.to_string()))?;
        let columns: Vec<String> = bmflc::plant::RECORD_COLUMNS.iter().map(|s| s.to_string()).collect();
        report.files.push(out.write_bytes(&format!("run_{:06}_{v}.csv", m.seed), &bytes, &columns)?);
        let mean_ns = record.step_ns.iter().sum::<u64>() as f64 / record.len().max(1) as f64;
        table.push(vec![m.seed.to_string(), v.to_string(), cell(record.sr), format!("{mean_ns:.0}")]);
    }
    report.files.push(out.write_csv("run_summary.csv", &table)?);
    report.summary = table.render();
    Ok(report)
}

fn tuned_method(general: GeneralParams) -> TunedMethod {
    TunedMethod {
        params: general.params,
        provenance: general
            .per_motion
            .into_iter()
            .map(|o| Provenance { seed: o.seed, evals: o.evals, f_best: o.f_best, optimum: o.params })
            .collect(),
        excluded: general.excluded,
    }
}

/// Protocol tuning of one method: optimise on the first five motions and
/// average the optima.
pub fn tune_method(
    variant: Variant,
    filter: FilterConfig,
    sim: &SimConfig,
    motions: &[MotionSpec],
    exclude_failed: bool,
) -> Result<TunedMethod, TuneError> {
    let problem = TuneProblem::for_variant(variant, filter, *sim);
    problem.tune_general_params(motions, exclude_failed).map(tuned_method)
}

fn tune_error(e: TuneError) -> CliError {
    match e {
        TuneError::Diverged { .. } => CliError::Divergence(e.to_string()),
        other => CliError::Usage(other.to_string()),
    }
}

/// `tune`: general parameters per method with provenance.
pub fn tune(config: &CampaignConfig, out: &OutputDir) -> Result<Report, CliError> {
    let motions = load_motions(config)?;
    let mut methods = BTreeMap::new();
    for v in sorted_methods(config) {
        eprintln!("tuning {v} on seeds {:?}", motions.iter().take(5).map(|m| m.seed).collect::<Vec<_>>());
        let tuned = tune_method(v, config.filter_config(v), &config.sim, &motions, config.exclude_failed)
            .map_err(tune_error)?;
        methods.insert(v, tuned);
    }
    let tuned = TunedParams { config_hash: config.hash(), methods };
    let mut report = Report::default();
    report.files.push(out.write_text("params.toml", &tuned.to_toml())?);
    report.summary = params_table(&tuned.methods).render();
    Ok(report)
}

fn params_table(methods: &BTreeMap<Variant, TunedMethod>) -> Table {
    let mut table = Table::new(&["method", "eta", "k_dmp", "x_dmp", "lambda_rls", "r_kf", "q_kf_scale", "p0", "evals"]);
    for (v, m) in methods {
        let p = &m.params;
        let evals: usize = m.provenance.iter().map(|o| o.evals).sum();
        table.push(vec![
            v.to_string(),
            format!("{:.4e}", p.eta),
            format!("{:.4e}", p.k_dmp),
            format!("{:.4e}", p.x_dmp),
            format!("{:.8}", p.lambda_rls),
            format!("{:.4e}", p.r_kf),
            format!("{:.4e}", p.q_kf_scale),
            format!("{:.4e}", p.p0),
            evals.to_string(),
        ]);
    }
    table
}

/// Key of one evaluated cell.
#[derive(Debug, Clone, Copy, PartialEq, PartialOrd)]
struct CellKey {
    point: usize,
    seed: u64,
    method: Variant,
}

struct Job<'a> {
    key: CellKey,
    motion: &'a MotionSpec,
    filter: FilterConfig,
    sim: SimConfig,
}

/// Suppression rate of every job, in job order.
fn evaluate(jobs: &[Job<'_>]) -> Vec<Result<f64, String>> {
    jobs.par_iter()
        .map(|job| match simulate_sr(job.motion, job.filter, &job.sim) {
            Ok(Some(sr)) => Ok(sr),
            Ok(None) => Err("vibration has zero power".to_string()),
            Err(e) => Err(e.to_string()),
        })
        .collect()
}

/// Tunes every method, or takes fixed parameters; tuning failures are
/// logged and leave the method out.
fn method_params(
    config: &CampaignConfig,
    motions: &[MotionSpec],
    tune: bool,
    label: &str,
    log: &mut ErrorLog,
) -> Result<BTreeMap<Variant, TunedMethod>, CliError> {
    if !tune || config.params_file.is_some() {
        return fixed_params(config);
    }
    let mut methods = BTreeMap::new();
    for v in sorted_methods(config) {
        eprintln!("{label}tuning {v}");
        match tune_method(v, config.filter_config(v), &config.sim, motions, config.exclude_failed) {
            Ok(t) => {
                methods.insert(v, t);
            }
            Err(e @ TuneError::Diverged { .. }) => log.push(format!("{label}{v} tuning"), e.to_string()),
            Err(e) => return Err(CliError::Usage(e.to_string())),
        }
    }
    Ok(methods)
}

/// Per-seed suppression rate of each method from `compare`.
#[derive(Debug, Clone, PartialEq)]
pub struct CompareResult {
    pub methods: Vec<Variant>,
    /// `(seed, one entry per method)`; `None` marks a failed cell.
    pub rows: Vec<(u64, Vec<Option<f64>>)>,
    pub params: BTreeMap<Variant, TunedMethod>,
}

impl CompareResult {
    pub fn column(&self, method: Variant) -> Vec<Option<f64>> {
        let j = self.methods.iter().position(|&m| m == method).expect("method compared");
        self.rows.iter().map(|r| r.1[j]).collect()
    }

    /// Mean over the non-failed cells of `method`.
    pub fn mean(&self, method: Variant) -> Option<f64> {
        let ok: Vec<f64> = self.column(method).into_iter().flatten().collect();
        stats::mean(&ok)
    }
}

/// `compare`: every method on every motion with general parameters.
pub fn compare(config: &CampaignConfig, out: &OutputDir) -> Result<(Report, CompareResult), CliError> {
    let motions = load_motions(config)?;
    let methods = sorted_methods(config);
    let mut log = ErrorLog::default();
    let params = method_params(config, &motions, true, "", &mut log)?;

    let jobs: Vec<Job> = motions
        .iter()
        .flat_map(|m| {
            params.iter().map(move |(&v, t)| Job {
                key: CellKey { point: 0, seed: m.seed, method: v },
                motion: m,
                filter: FilterConfig { step: t.params, ..config.filter_config(v) },
                sim: config.sim,
            })
        })
        .collect();
    let results = evaluate(&jobs);
    let mut cells: BTreeMap<(u64, Variant), Option<f64>> = BTreeMap::new();
    for (job, r) in jobs.iter().zip(results) {
        let value = r.map_err(|e| log.push(format!("seed {} {}", job.key.seed, job.key.method), e)).ok();
        cells.insert((job.key.seed, job.key.method), value);
    }

    let mut result = CompareResult { methods: methods.clone(), rows: Vec::new(), params: params.clone() };
    for m in &motions {
        let row = methods.iter().map(|&v| cells.get(&(m.seed, v)).copied().flatten()).collect();
        result.rows.push((m.seed, row));
    }
    // Methods whose tuning failed were never run; their cells count as failed.
    let failed = result.rows.iter().flat_map(|r| &r.1).filter(|c| c.is_none()).count();

    let header: Vec<String> = std::iter::once("seed".to_string()).chain(methods.iter().map(|v| v.to_string())).collect();
    let mut table = Table::new(&header);
    let mut summary = Table::new(&header);
    for (seed, row) in &result.rows {
        table.push(std::iter::once(seed.to_string()).chain(row.iter().map(|c| cell(*c))).collect());
        summary.push(std::iter::once(seed.to_string()).chain(row.iter().map(|c| short(*c))).collect());
    }
    let means: Vec<Option<f64>> = methods.iter().map(|&v| result.mean(v)).collect();
    table.push(std::iter::once("mean".to_string()).chain(means.iter().map(|c| cell(*c))).collect());
    summary.push(std::iter::once("mean".to_string()).chain(means.iter().map(|c| short(*c))).collect());

    let mut report = Report { failed_cells: failed, ..Default::default() };
    report.files.push(out.write_csv("compare.csv", &table)?);
    let tuned = TunedParams { config_hash: config.hash(), methods: params };
    report.files.push(out.write_text("compare_params.toml", &tuned.to_toml())?);
    report.files.push(out.write_text("errors.log", &log.render())?);
    report.summary = summary.render();
    Ok((report, result))
}

/// Configuration of one sweep point.
pub fn point_config(config: &CampaignConfig, kind: SweepKind, value: f64) -> CampaignConfig {
    let mut c = config.clone();
    match kind {
        SweepKind::Nnu => {
            let n = value as usize;
            c.motion.vibration.a_n = n;
            c.motion.vibration.b_n = n;
        }
        SweepKind::Band => {
            c.motion.vibration.a_nu = value;
            c.motion.vibration.b_nu = value + 4.0;
            c.filter.lower = value;
            c.filter.upper = value + 4.0;
        }
        SweepKind::Noise => {
            c.motion.vibration.xi_total = 0.5;
            c.motion.s_n = value;
        }
    }
    c.motions_dir = None;
    c
}

/// One row of a limits summary.
#[derive(Debug, Clone, PartialEq)]
pub struct LimitsPoint {
    pub value: f64,
    pub method: Variant,
    /// Per-seed rates in ascending seed order; `None` marks a failed cell.
    pub sr: Vec<Option<f64>>,
}

impl LimitsPoint {
    pub fn ok(&self) -> Vec<f64> {
        self.sr.iter().flatten().copied().collect()
    }

    pub fn mean(&self) -> Option<f64> {
        stats::mean(&self.ok())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
struct PointParams {
    value: f64,
    methods: BTreeMap<Variant, TunedMethod>,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
struct LimitsParams {
    config_hash: String,
    points: Vec<PointParams>,
}

/// `limits`: one sweep, each point repeated over all seeds.
pub fn limits(config: &CampaignConfig, out: &OutputDir) -> Result<(Report, Vec<LimitsPoint>), CliError> {
    let kind = config
        .campaign
        .sweep()
        .ok_or_else(|| CliError::Usage(format!("{} is not a limits campaign", config.campaign)))?;
    let values = config.sweep_values();
    let methods = sorted_methods(config);
    let mut log = ErrorLog::default();

    let mut points = Vec::with_capacity(values.len());
    for (i, &value) in values.iter().enumerate() {
        let pc = point_config(config, kind, value);
        let motions = load_motions(&pc)?;
        let label = format!("{} = {value}: ", kind.name());
        let params = method_params(&pc, &motions, config.tune_per_point, &label, &mut log)?;
        points.push((i, value, pc, motions, params));
    }

    let jobs: Vec<Job> = points
        .iter()
        .flat_map(|(i, _, pc, motions, params)| {
            motions.iter().flat_map(move |m| {
                params.iter().map(move |(&v, t)| Job {
                    key: CellKey { point: *i, seed: m.seed, method: v },
                    motion: m,
                    filter: FilterConfig { step: t.params, ..pc.filter_config(v) },
                    sim: pc.sim,
                })
            })
        })
        .collect();
    let results = evaluate(&jobs);
    let mut cells: BTreeMap<(usize, Variant, u64), Option<f64>> = BTreeMap::new();
    for (job, r) in jobs.iter().zip(results) {
        let k = job.key;
        let value = r.map_err(|e| log.push(format!("{} = {} seed {} {}", kind.name(), values[k.point], k.seed, k.method), e)).ok();
        cells.insert((k.point, k.method, k.seed), value);
    }

    let mut seeds = config.seeds.clone();
    seeds.sort_unstable();
    let mut long = Table::new(&["value", "seed", "method", "sr"]);
    let mut summary = Table::new(&["value", "method", "mean_sr", "std_sr", "ok", "failed"]);
    let mut rows = Vec::new();
    for (i, &value) in values.iter().enumerate() {
        for &v in &methods {
            let sr: Vec<Option<f64>> = seeds.iter().map(|&s| cells.get(&(i, v, s)).copied().flatten()).collect();
            for (s, c) in seeds.iter().zip(&sr) {
                long.push(vec![value.to_string(), s.to_string(), v.to_string(), cell(*c)]);
            }
            let point = LimitsPoint { value, method: v, sr };
            let ok = point.ok();
            summary.push(vec![
                value.to_string(),
                v.to_string(),
                cell(point.mean()),
                cell(stats::sample_std(&ok)),
                ok.len().to_string(),
                (seeds.len() - ok.len()).to_string(),
            ]);
            rows.push(point);
        }
    }
    let failed = rows.iter().map(|p| p.sr.len() - p.ok().len()).sum();

    let name = format!("limits_{}", kind.name());
    let mut report = Report { failed_cells: failed, ..Default::default() };
    report.files.push(out.write_csv(&format!("{name}.csv"), &long)?);
    report.files.push(out.write_csv(&format!("{name}_summary.csv"), &summary)?);
    let params = LimitsParams {
        config_hash: config.hash(),
        points: points.into_iter().map(|(_, value, _, _, methods)| PointParams { value, methods }).collect(),
    };
    let text = toml::to_string(&params).expect("limits parameters serialise");
    report.files.push(out.write_text(&format!("{name}_params.toml"), &text)?);
    report.files.push(out.write_text("errors.log", &log.render())?);
    let mut pretty = Table::new(&["value", "method", "mean_sr", "std_sr", "ok", "failed"]);
    for r in &summary.rows {
        let num = |s: &String| short(s.parse().ok());
        pretty.push(vec![r[0].clone(), r[1].clone(), num(&r[2]), num(&r[3]), r[4].clone(), r[5].clone()]);
    }
    report.summary = pretty.render();
    Ok((report, rows))
}

/// Scaling exponent of one method's per-step time.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ScalingFit {
    pub method: Variant,
    pub exponent: f64,
    pub prefactor_ns: f64,
}

/// `bench`: isolated update-step timing per method and grid size.
pub fn bench(config: &CampaignConfig, out: &OutputDir) -> Result<(Report, Vec<bmflc::metrics::TimingStats>, Vec<ScalingFit>), CliError> {
    let methods = sorted_methods(config);
    let mut lens = config.bench.lens.clone();
    lens.sort_unstable();
    lens.dedup();
    let mut all = Vec::new();
    for &len in &lens {
        all.extend(time_step_sizes(&methods, len, config.bench.reps));
    }

    let mut table = Table::new(&["method", "len", "samples", "mean_ns", "std_ns"]);
    let mut summary = Table::new(&["method", "len", "mean_ns", "std_ns", "x_damped"]);
    for s in &all {
        table.push(vec![s.variant.to_string(), s.len.to_string(), s.samples.to_string(), s.mean_ns.to_string(), s.std_ns.to_string()]);
        let damped = all.iter().find(|d| d.variant == Variant::Damped && d.len == s.len).map(|d| s.mean_ns / d.mean_ns);
        summary.push(vec![
            s.variant.to_string(),
            s.len.to_string(),
            format!("{:.1}", s.mean_ns),
            format!("{:.1}", s.std_ns),
            damped.map(|r| format!("{r:.2}")).unwrap_or_else(|| "-".into()),
        ]);
    }
    let mut report = Report::default();
    report.files.push(out.write_csv("bench.csv", &table)?);

    let mut fits = Vec::new();
    if lens.len() >= 2 {
        let mut fit_table = Table::new(&["method", "exponent", "prefactor_ns"]);
        for &v in &methods {
            let pts: Vec<(f64, f64)> = all.iter().filter(|s| s.variant == v).map(|s| (s.len as f64, s.mean_ns)).collect();
            if let Some((exponent, prefactor_ns)) = stats::power_law_fit(&pts) {
                fit_table.push(vec![v.to_string(), exponent.to_string(), prefactor_ns.to_string()]);
                fits.push(ScalingFit { method: v, exponent, prefactor_ns });
            }
        }
        report.files.push(out.write_csv("bench_fit.csv", &fit_table)?);
        let mut pretty = Table::new(&["method", "exponent"]);
        for f in &fits {
            pretty.push(vec![f.method.to_string(), format!("{:.3}", f.exponent)]);
        }
        report.summary = format!("{}\n{}", summary.render(), pretty.render());
    } else {
        report.summary = summary.render();
    }
    Ok((report, all, fits))
}
