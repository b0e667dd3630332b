use std::f64::consts::TAU;
use std::fs;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use bmflc::metrics::bandpass_mse;
use bmflc::plant::{run_closed_loop, SimConfig};
use bmflc::{FilterConfig, MotionParams, MotionSpec, StepSizeParams, Variant};
use vibsim::config::{TunedMethod, TunedParams};

fn vibsim(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_vibsim")).args(args).output().expect("binary runs")
}

fn code(out: &Output) -> i32 {
    out.status.code().expect("exited normally")
}

fn stderr(out: &Output) -> String {
    String::from_utf8_lossy(&out.stderr).into_owned()
}

fn path(p: &Path) -> &str {
    p.to_str().unwrap()
}

/// Parameter file holding the default step sizes of every method.
fn default_params_file(dir: &Path, tweak: impl Fn(&mut StepSizeParams)) -> PathBuf {
    let methods = Variant::ALL
        .iter()
        .map(|&v| {
            let mut params = StepSizeParams::for_variant(v);
            tweak(&mut params);
            (v, TunedMethod { params, provenance: vec![], excluded: vec![] })
        })
        .collect();
    let file = dir.join("params.toml");
    fs::write(&file, TunedParams { config_hash: String::new(), methods }.to_toml()).unwrap();
    file
}

#[test]
fn synth_writes_reloadable_motions_and_refuses_to_overwrite() {
    let dir = tempfile::tempdir().unwrap();
    let out = vibsim(&["synth", "--out", path(dir.path()), "--seed", "0..10"]);
    assert_eq!(code(&out), 0, "{}", stderr(&out));
    let params = MotionParams::default();
    for seed in 0..10 {
        let file = dir.path().join(format!("motions/motion_{seed:06}.toml"));
        let spec: MotionSpec = toml::from_str(&fs::read_to_string(&file).unwrap()).unwrap();
        assert_eq!(spec, params.generate(seed).unwrap());
        assert!((1..=3).contains(&spec.vibration.len()));
        assert!(file.with_extension("toml.meta.toml").exists());
    }

    let again = vibsim(&["synth", "--out", path(dir.path()), "--seed", "0..10"]);
    assert_eq!(code(&again), 1);
    assert!(stderr(&again).contains("--force"));
    let forced = vibsim(&["synth", "--out", path(dir.path()), "--seed", "0..10", "--force"]);
    assert_eq!(code(&forced), 0);
}

#[test]
fn run_reads_motion_files() {
    let dir = tempfile::tempdir().unwrap();
    let d = path(dir.path());
    assert_eq!(code(&vibsim(&["synth", "--out", d, "--seed", "3"])), 0);
    let motions = format!("motions_dir=\"{}\"", dir.path().join("motions").display());
    let from_files = dir.path().join("files");
    let generated = dir.path().join("generated");
    let common = ["--seed", "3", "--method", "damped", "--set", "sim.duration=2.0"];
    let a = vibsim(&[&["run", "--out", path(&from_files), "--set", &motions][..], &common[..]].concat());
    let b = vibsim(&[&["run", "--out", path(&generated)][..], &common[..]].concat());
    assert_eq!((code(&a), code(&b)), (0, 0), "{}", stderr(&a));
    let sr = |d: &Path| {
        let text = fs::read_to_string(d.join("run_summary.csv")).unwrap();
        text.lines().nth(1).unwrap().split(',').nth(2).unwrap().to_string()
    };
    assert_eq!(sr(&from_files), sr(&generated));
    let record = fs::read_to_string(from_files.join("run_000003_damped.csv")).unwrap();
    assert_eq!(record.lines().next().unwrap(), "t,x_des,x,e_pos,e_vel,f_nu,f_n,f_imp,f_ff,y_vib,step_ns");
    assert_eq!(record.lines().count(), 2001);
}

#[test]
fn compare_layout_and_rerun_are_stable() {
    let dir = tempfile::tempdir().unwrap();
    let params = default_params_file(dir.path(), |_| {});
    let set = format!("params_file=\"{}\"", params.display());
    let run = |out: &str| {
        let o = dir.path().join(out);
        let r = vibsim(&["compare", "--out", path(&o), "--set", &set, "--set", "sim.duration=1.0"]);
        assert_eq!(code(&r), 0, "{}", stderr(&r));
        o
    };
    let (a, b) = (run("a"), run("b"));
    let csv = fs::read_to_string(a.join("compare.csv")).unwrap();
    let lines: Vec<&str> = csv.lines().collect();
    assert_eq!(lines[0], "seed,lms,damped,rls,kalman");
    assert_eq!(lines.len(), 12);
    assert!(lines[11].starts_with("mean,"));
    assert!(lines[1..11].iter().all(|l| l.split(',').skip(1).all(|c| c.parse::<f64>().is_ok())));
    for f in ["compare.csv", "compare.csv.meta.toml", "compare_params.toml", "errors.log"] {
        assert_eq!(fs::read(a.join(f)).unwrap(), fs::read(b.join(f)).unwrap(), "{f}");
    }
}

#[test]
fn failed_cells_are_empty_and_logged() {
    let dir = tempfile::tempdir().unwrap();
    let params = default_params_file(dir.path(), |p| {
        if p.variant == Variant::Lms {
            p.eta = 10.0;
        }
    });
    let set = format!("params_file=\"{}\"", params.display());
    let out = vibsim(&[
        "compare", "--out", path(dir.path()), "--seed", "0..2", "--method", "lms,damped", "--set", &set, "--set",
        "sim.duration=1.0",
    ]);
    assert_eq!(code(&out), 2, "{}", stderr(&out));
    let csv = fs::read_to_string(dir.path().join("compare.csv")).unwrap();
    for line in csv.lines().skip(1) {
        let cells: Vec<&str> = line.split(',').collect();
        assert_eq!(cells[1], "", "{line}");
        assert!(cells[2].parse::<f64>().is_ok(), "{line}");
    }
    let log = fs::read_to_string(dir.path().join("errors.log")).unwrap();
    assert_eq!(log.lines().count(), 2, "{log}");
    assert!(log.contains("seed 0 lms") && log.contains("seed 1 lms"));
}

#[test]
fn divergent_run_aborts_with_code_three() {
    let dir = tempfile::tempdir().unwrap();
    let out = vibsim(&[
        "run", "--out", path(dir.path()), "--seed", "0", "--method", "lms", "--set", "step.lms.eta=10.0", "--set",
        "sim.duration=1.0",
    ]);
    assert_eq!(code(&out), 3, "{}", stderr(&out));
}

#[test]
fn usage_errors_exit_with_one() {
    let dir = tempfile::tempdir().unwrap();
    let d = path(dir.path());
    assert_eq!(code(&vibsim(&["run", "--out", d, "--set", "sim.durration=1"])), 1);
    assert_eq!(code(&vibsim(&["limits", "--out", d])), 1);
    assert_eq!(code(&vibsim(&["run", "--out", d, "--seed", "5..2"])), 1);
    assert_eq!(code(&vibsim(&["compare", "--out", d, "--seed", "0..3"])), 1);
    assert_eq!(code(&vibsim(&["frobnicate"])), 1);
    assert_eq!(code(&vibsim(&["--help"])), 0);
}

#[test]
fn config_file_and_flags_layer() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = dir.path().join("c.toml");
    fs::write(&cfg, "# short runs\nseeds = [4, 5]\nmethods = [\"lms\"]\n[sim]\nduration = 0.5\n").unwrap();
    let out = vibsim(&["run", "--config", path(&cfg), "--out", path(dir.path()), "--seed", "6"]);
    assert_eq!(code(&out), 0, "{}", stderr(&out));
    assert!(dir.path().join("run_000006_lms.csv").exists());
    assert!(!dir.path().join("run_000004_lms.csv").exists());
    let record = fs::read_to_string(dir.path().join("run_000006_lms.csv")).unwrap();
    assert_eq!(record.lines().count(), 501);
}

#[test]
fn tune_writes_params_with_provenance() {
    let dir = tempfile::tempdir().unwrap();
    let out = vibsim(&["tune", "--out", path(dir.path()), "--seed", "0..5", "--method", "lms", "--set", "sim.duration=0.5"]);
    assert_eq!(code(&out), 0, "{}", stderr(&out));
    let tuned = TunedParams::load(&dir.path().join("params.toml")).unwrap();
    let lms = &tuned.methods[&Variant::Lms];
    assert_eq!(lms.provenance.iter().map(|p| p.seed).collect::<Vec<_>>(), vec![0, 1, 2, 3, 4]);
    assert!(lms.provenance.iter().all(|p| p.evals > 0 && p.f_best.is_finite()));
    assert!(lms.params.eta > 0.0 && lms.params.eta <= 1e-2);
}

#[test]
fn limits_and_bench_layouts() {
    let dir = tempfile::tempdir().unwrap();
    let d = path(dir.path());
    let out = vibsim(&[
        "limits", "--sweep", "noise", "--values", "0.01,1", "--out", d, "--seed", "0..2", "--method", "damped",
        "--set", "tune_per_point=false", "--set", "sim.duration=1.0",
    ]);
    assert_eq!(code(&out), 0, "{}", stderr(&out));
    let long = fs::read_to_string(dir.path().join("limits_noise.csv")).unwrap();
    assert_eq!(long.lines().next().unwrap(), "value,seed,method,sr");
    assert_eq!(long.lines().count(), 5);
    let summary = fs::read_to_string(dir.path().join("limits_noise_summary.csv")).unwrap();
    assert_eq!(summary.lines().next().unwrap(), "value,method,mean_sr,std_sr,ok,failed");
    assert_eq!(summary.lines().count(), 3);

    let out = vibsim(&["bench", "--lens", "8,16", "--reps", "3", "--out", d]);
    assert_eq!(code(&out), 0, "{}", stderr(&out));
    let bench = fs::read_to_string(dir.path().join("bench.csv")).unwrap();
    assert_eq!(bench.lines().next().unwrap(), "method,len,samples,mean_ns,std_ns");
    assert_eq!(bench.lines().count(), 9);
    assert_eq!(fs::read_to_string(dir.path().join("bench_fit.csv")).unwrap().lines().count(), 5);
}

#[test]
fn replay_of_an_export_matches_the_live_record() {
    let dir = tempfile::tempdir().unwrap();
    let spec = MotionParams::default().generate(2).unwrap();
    let sim = SimConfig { duration: 3.0, ..SimConfig::default() };
    let record = run_closed_loop(&spec, FilterConfig { step: StepSizeParams::default(), ..Default::default() }, &sim).unwrap();
    let csv = dir.path().join("export.csv");
    record.write_csv(fs::File::create(&csv).unwrap()).unwrap();

    let out = vibsim(&["replay", path(&csv), "--out", path(dir.path())]);
    assert_eq!(code(&out), 0, "{}", stderr(&out));
    let summary = fs::read_to_string(dir.path().join("replay_summary.csv")).unwrap();
    let metric = |name: &str| -> f64 {
        let line = summary.lines().find(|l| l.starts_with(&format!("{name},"))).unwrap();
        line.split(',').nth(1).unwrap().parse().unwrap()
    };
    let live_vel = bandpass_mse(&record.e_vel, 1000.0, 3.0, 100.0).unwrap();
    let live_pos = bandpass_mse(&record.e_pos, 1000.0, 3.0, 100.0).unwrap();
    assert!((metric("bandpass_mse_before") - live_vel).abs() <= 1e-9 * live_vel.max(1e-300));
    assert!((metric("position_error_mse") - live_pos).abs() <= 1e-9 * live_pos.max(1e-300));
    assert!((metric("fs_hz") - 1000.0).abs() < 1e-6);
}

#[test]
fn replay_reports_schema_errors() {
    let dir = tempfile::tempdir().unwrap();
    let csv = dir.path().join("trace.csv");
    let rows: String = (0..200).map(|i| format!("{},{}\n", i as f64 * 1e-3, (i as f64 * 0.05).sin())).collect();
    fs::write(&csv, format!("time,speed\n{rows}")).unwrap();
    let out = vibsim(&["replay", path(&csv), "--out", path(dir.path())]);
    assert_eq!(code(&out), 1);
    assert!(stderr(&out).contains("missing column `t`"), "{}", stderr(&out));

    let mapping = dir.path().join("map.toml");
    fs::write(&mapping, "time = \"time\"\nvelocity = \"speed\"\n").unwrap();
    let out = vibsim(&["replay", path(&csv), "--mapping", path(&mapping), "--out", path(dir.path())]);
    assert_eq!(code(&out), 0, "{}", stderr(&out));
}

/// A 6.3 Hz tremor-like trace with harmonics at 12.6 and 18.9 Hz on top of
/// slow motion, replayed through a damped filter on 3–9 Hz.
#[test]
fn replay_suppresses_the_dominant_peak() {
    let dir = tempfile::tempdir().unwrap();
    let csv = dir.path().join("tremor.csv");
    let mut text = String::from("t,v\n");
    for i in 0..20_000 {
        let t = i as f64 * 1e-3;
        let v = 0.05 * (TAU * 0.2 * t).sin()
            + 0.02 * (TAU * 6.3 * t + 0.4).sin()
            + 0.006 * (TAU * 12.6 * t + 1.1).sin()
            + 0.003 * (TAU * 18.9 * t + 2.0).sin();
        text.push_str(&format!("{t},{v}\n"));
    }
    fs::write(&csv, text).unwrap();
    let mapping = dir.path().join("map.toml");
    fs::write(&mapping, "time = \"t\"\nvelocity = \"v\"\n").unwrap();
    let out = vibsim(&[
        "replay", path(&csv), "--mapping", path(&mapping), "--out", path(dir.path()), "--set", "filter.lower=3.0",
        "--set", "filter.upper=9.0", "--set", "step.damped.eta=0.01", "--set", "step.damped.x_dmp=0.0",
        "--set", "step.damped.k_dmp=100.0",
    ]);
    assert_eq!(code(&out), 0, "{}", stderr(&out));
    let summary = fs::read_to_string(dir.path().join("replay_summary.csv")).unwrap();
    let metric = |name: &str| -> f64 {
        let line = summary.lines().find(|l| l.starts_with(&format!("{name},"))).unwrap();
        line.split(',').nth(1).unwrap().parse().unwrap()
    };
    assert!((metric("h1_hz") - 6.3).abs() < 0.06, "{}", metric("h1_hz"));
    assert!(metric("h1_after") < 0.2 * metric("h1_before"), "{summary}");
    assert!(metric("bandpass_mse_after") < metric("bandpass_mse_before"));
    // The harmonics lie outside the 3–9 Hz model; they must not grow.
    for h in ["h2", "h3"] {
        assert!(metric(&format!("{h}_after")) <= 1.05 * metric(&format!("{h}_before")), "{summary}");
    }
}
