//! Offline replay of a recorded velocity trace through a filter.
//!
//! The filter runs open loop on the velocity signal `v`: at sample `k` it
//! predicts `y_k`, the residual `v_k − y_k` is both its update error and
//! the cleaned signal. Error power and spectra are reported before and
//! after.

use std::path::Path;

use bmflc::metrics::{bandpass_mse, dft_magnitude, Spectrum};
use bmflc::{Bmflc, FilterConfig};

use crate::campaign::Report;
use crate::config::{CampaignConfig, ColumnMapping};
use crate::error::CliError;
use crate::output::{cell, OutputDir, Table};

/// Largest tolerated deviation of a time step from the median step.
pub const MAX_JITTER: f64 = 0.01;

/// Columns of a replayed trace.
#[derive(Debug, Clone, PartialEq)]
pub struct Trace {
    pub t: Vec<f64>,
    pub velocity: Vec<f64>,
    pub position_error: Option<Vec<f64>>,
    pub fs: f64,
}

/// Reads `path` using the column names in `mapping`.
///
/// The sample rate is `fs` when given, else the inverse median time step;
/// either way every step must be within 1% of `1/fs`.
pub fn read_trace(path: &Path, mapping: &ColumnMapping, fs: Option<f64>) -> Result<Trace, CliError> {
    let mut reader = csv::Reader::from_path(path).map_err(|e| CliError::Usage(format!("{}: {e}", path.display())))?;
    let headers = reader.headers().map_err(|e| CliError::Usage(format!("{}: {e}", path.display())))?.clone();
    let find = |name: &str| {
        headers.iter().position(|h| h.trim() == name).ok_or_else(|| {
            let found: Vec<&str> = headers.iter().collect();
            CliError::Usage(format!("{}: schema error: missing column `{name}` (found {found:?})", path.display()))
        })
    };
    let t_col = find(&mapping.time)?;
    let v_col = find(&mapping.velocity)?;
    let p_col = mapping.position_error.as_deref().map(find).transpose()?;

    let (mut t, mut velocity, mut pos) = (Vec::new(), Vec::new(), Vec::new());
    for (i, row) in reader.records().enumerate() {
        let line = i + 2;
        let row = row.map_err(|e| CliError::Usage(format!("{}: line {line}: {e}", path.display())))?;
        let get = |col: usize| -> Result<f64, CliError> {
            let raw = row.get(col).unwrap_or("");
            raw.trim()
                .parse::<f64>()
                .ok()
                .filter(|v| v.is_finite())
                .ok_or_else(|| CliError::Usage(format!("{}: line {line}: `{raw}` is not a finite number", path.display())))
        };
        t.push(get(t_col)?);
        velocity.push(get(v_col)?);
        if let Some(c) = p_col {
            pos.push(get(c)?);
        }
    }
    if t.len() < 3 {
        return Err(CliError::Usage(format!("{}: need at least 3 samples, found {}", path.display(), t.len())));
    }

    let steps: Vec<f64> = t.windows(2).map(|w| w[1] - w[0]).collect();
    let dt = match fs {
        Some(fs) if fs > 0.0 && fs.is_finite() => 1.0 / fs,
        Some(fs) => return Err(CliError::Usage(format!("sample rate {fs} is invalid"))),
        None => {
            let mut sorted = steps.clone();
            sorted.sort_by(f64::total_cmp);
            sorted[sorted.len() / 2]
        }
    };
    if dt <= 0.0 {
        return Err(CliError::Usage(format!("{}: timestamps are not increasing", path.display())));
    }
    if let Some((k, step)) = steps.iter().enumerate().find(|(_, s)| ((**s - dt) / dt).abs() > MAX_JITTER) {
        return Err(CliError::Usage(format!(
            "{}: non-uniform timestamps: step {k} is {step} s against {dt} s (more than {}% jitter)",
            path.display(),
            MAX_JITTER * 100.0
        )));
    }
    let position_error = p_col.map(|_| pos);
    Ok(Trace { t, velocity, position_error, fs: 1.0 / dt })
}

/// Outcome of one replay.
#[derive(Debug, Clone, PartialEq)]
pub struct ReplayResult {
    pub fs: f64,
    pub mse_before: f64,
    pub mse_after: f64,
    pub position_error_mse: Option<f64>,
    pub estimate: Vec<f64>,
    pub residual: Vec<f64>,
    pub before: Spectrum,
    pub after: Spectrum,
}

/// Runs `filter` over the velocity of `trace`.
pub fn replay_trace(trace: &Trace, filter: FilterConfig, metric_band: [f64; 2]) -> Result<ReplayResult, CliError> {
    let mut bmflc = Bmflc::new(filter).map_err(|e| CliError::Usage(e.to_string()))?;
    let n = trace.velocity.len();
    let (mut estimate, mut residual) = (Vec::with_capacity(n), Vec::with_capacity(n));
    for (k, &v) in trace.velocity.iter().enumerate() {
        let y = bmflc.predict_at(k as f64 / trace.fs);
        let e = v - y;
        bmflc.update(e).map_err(|err| CliError::Divergence(err.to_string()))?;
        estimate.push(y);
        residual.push(e);
    }
    let [low, high] = metric_band;
    let metric = |x: &[f64]| bandpass_mse(x, trace.fs, low, high).map_err(|e| CliError::Usage(e.to_string()));
    let spectrum = |x: &[f64]| dft_magnitude(x, trace.fs).map_err(|e| CliError::Usage(e.to_string()));
    Ok(ReplayResult {
        fs: trace.fs,
        mse_before: metric(&trace.velocity)?,
        mse_after: metric(&residual)?,
        position_error_mse: trace.position_error.as_deref().map(metric).transpose()?,
        before: spectrum(&trace.velocity)?,
        after: spectrum(&residual)?,
        estimate,
        residual,
    })
}

/// Dominant frequency inside the filter band and its first two harmonics.
pub fn harmonics(result: &ReplayResult, band: (f64, f64)) -> [f64; 3] {
    let (f0, _) = result.before.peak_in(band.0, band.1);
    [f0, 2.0 * f0, 3.0 * f0]
}

/// `replay`: reads the configured trace and writes metrics and spectra.
pub fn replay(config: &CampaignConfig, out: &OutputDir) -> Result<(Report, ReplayResult), CliError> {
    let settings = &config.replay;
    let input = settings.input.as_ref().ok_or_else(|| CliError::Usage("replay needs an input CSV".into()))?;
    let mapping = match &settings.mapping {
        Some(path) => ColumnMapping::load(path)?,
        None => ColumnMapping::default(),
    };
    let trace = read_trace(input, &mapping, settings.fs)?;
    let filter = config.filter_config(settings.method);
    let result = replay_trace(&trace, filter, settings.metric_band)?;

    let mut report = Report::default();
    let mut summary = Table::new(&["metric", "value"]);
    let mut add = |k: &str, v: Option<f64>| summary.push(vec![k.to_string(), cell(v)]);
    add("fs_hz", Some(result.fs));
    add("samples", Some(trace.t.len() as f64));
    add("bandpass_mse_before", Some(result.mse_before));
    add("bandpass_mse_after", Some(result.mse_after));
    add("position_error_mse", result.position_error_mse);
    for (i, f) in harmonics(&result, (filter.lower, filter.upper)).into_iter().enumerate() {
        add(&format!("h{}_hz", i + 1), Some(f));
        add(&format!("h{}_before", i + 1), Some(result.before.at(f)));
        add(&format!("h{}_after", i + 1), Some(result.after.at(f)));
    }
    report.files.push(out.write_csv("replay_summary.csv", &summary)?);

    let mut spectrum = Table::new(&["freq_hz", "before", "after"]);
    for ((f, b), a) in result.before.freq.iter().zip(&result.before.magnitude).zip(&result.after.magnitude) {
        spectrum.push(vec![f.to_string(), b.to_string(), a.to_string()]);
    }
    report.files.push(out.write_csv("replay_spectrum.csv", &spectrum)?);

    let mut series = Table::new(&["t", "input", "estimate", "residual"]);
    for (((t, v), y), e) in trace.t.iter().zip(&trace.velocity).zip(&result.estimate).zip(&result.residual) {
        series.push(vec![t.to_string(), v.to_string(), y.to_string(), e.to_string()]);
    }
    report.files.push(out.write_csv("replay_trace.csv", &series)?);

    let mut pretty = Table::new(&["metric", "value"]);
    for r in &summary.rows {
        pretty.push(vec![r[0].clone(), r[1].parse::<f64>().map(|v| format!("{v:.6e}")).unwrap_or_default()]);
    }
    report.summary = pretty.render();
    Ok((report, result))
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::io::Write;

    fn write(dir: &Path, name: &str, text: &str) -> std::path::PathBuf {
        let p = dir.join(name);
        std::fs::File::create(&p).unwrap().write_all(text.as_bytes()).unwrap();
        p
    }

    fn uniform_csv(n: usize, dt: f64) -> String {
        let mut s = String::from("t,e_vel,e_pos\n");
        for i in 0..n {
            s.push_str(&format!("{},{},0\n", i as f64 * dt, (i as f64 * 0.1).sin()));
        }
        s
    }

    #[test]
    fn reads_uniform_trace() {
        let dir = tempfile::tempdir().unwrap();
        let p = write(dir.path(), "a.csv", &uniform_csv(50, 0.001));
        let trace = read_trace(&p, &ColumnMapping::default(), None).unwrap();
        assert_eq!(trace.t.len(), 50);
        assert!((trace.fs - 1000.0).abs() < 1e-6);
        assert_eq!(trace.position_error.as_ref().unwrap().len(), 50);
    }

    #[test]
    fn missing_column_is_a_schema_error() {
        let dir = tempfile::tempdir().unwrap();
        let p = write(dir.path(), "a.csv", "time,vel\n0,1\n0.001,2\n0.002,3\n");
        let err = read_trace(&p, &ColumnMapping::default(), None).unwrap_err();
        assert!(err.to_string().contains("schema error: missing column `t`"), "{err}");
        let mapping = ColumnMapping { time: "time".into(), velocity: "vel".into(), position_error: None };
        assert_eq!(read_trace(&p, &mapping, None).unwrap().velocity, vec![1.0, 2.0, 3.0]);
    }

    #[test]
    fn jitter_above_one_percent_is_rejected() {
        let dir = tempfile::tempdir().unwrap();
        let ok = write(dir.path(), "ok.csv", "t,e_vel\n0,0\n0.001,0\n0.002005,0\n0.003,0\n");
        let mapping = ColumnMapping { position_error: None, ..Default::default() };
        assert!(read_trace(&ok, &mapping, None).is_ok());
        let bad = write(dir.path(), "bad.csv", "t,e_vel\n0,0\n0.001,0\n0.00202,0\n0.003,0\n");
        let err = read_trace(&bad, &mapping, None).unwrap_err();
        assert!(err.to_string().contains("non-uniform"), "{err}");
    }

    #[test]
    fn malformed_values_are_rejected() {
        let dir = tempfile::tempdir().unwrap();
        let mapping = ColumnMapping { position_error: None, ..Default::default() };
        let p = write(dir.path(), "a.csv", "t,e_vel\n0,0\n0.001,abc\n0.002,0\n");
        assert!(read_trace(&p, &mapping, None).unwrap_err().to_string().contains("line 3"));
        let short = write(dir.path(), "b.csv", "t,e_vel\n0,0\n");
        assert!(read_trace(&short, &mapping, None).is_err());
    }
}
