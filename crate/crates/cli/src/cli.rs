//! Command-line front end.

use std::ffi::OsString;
use std::path::PathBuf;

use bmflc::Variant;
use clap::{Args, Parser, Subcommand};

use crate::campaign::{self, Report};
use crate::config::{self, CampaignConfig, CampaignKind, Override, SeedList, SweepKind};
use crate::error::{exit, CliError};
use crate::output::OutputDir;
use crate::replay;

#[derive(Debug, Parser)]
#[command(name = "vibsim", version, about = "Vibration suppression experiments with BMFLC filters")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

/// Flags shared by every command. Flags override the configuration file,
/// which overrides the built-in defaults.
#[derive(Debug, Clone, Args)]
pub struct Common {
    /// TOML configuration file.
    #[arg(long, value_name = "PATH")]
    pub config: Option<PathBuf>,
    /// Output directory.
    #[arg(long, value_name = "DIR")]
    pub out: Option<PathBuf>,
    /// Seeds: `4`, `0..10` (half-open) or `1,2,5`.
    #[arg(long, value_name = "SEEDS")]
    pub seed: Option<SeedList>,
    /// Methods to run (lms, damped, rls, kalman); repeat or comma-separate.
    #[arg(long = "method", value_name = "METHOD", value_delimiter = ',')]
    pub methods: Vec<Variant>,
    /// Worker threads; 0 uses one per CPU.
    #[arg(long, default_value_t = 0)]
    pub jobs: usize,
    /// Overwrite existing output files.
    #[arg(long)]
    pub force: bool,
    /// Override any configuration field, e.g. `--set step.damped.eta=1e-3`.
    #[arg(long = "set", value_name = "KEY=VALUE")]
    pub overrides: Vec<Override>,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Generate motion files, one per seed.
    Synth(Common),
    /// Run closed-loop simulations and write full time series.
    Run(Common),
    /// Tune step sizes per method on the first five seeds.
    Tune(Common),
    /// Compare all methods on all seeds with general parameters.
    Compare(Common),
    /// Sweep vibration complexity, band or noise.
    Limits {
        /// Sweep kind; defaults to the configuration's campaign.
        #[arg(long)]
        sweep: Option<SweepKind>,
        /// Sweep values, comma-separated.
        #[arg(long, value_delimiter = ',')]
        values: Vec<f64>,
        #[command(flatten)]
        common: Common,
    },
    /// Time isolated update steps.
    Bench {
        /// Grid sizes `L`, comma-separated.
        #[arg(long, value_delimiter = ',')]
        lens: Vec<usize>,
        #[arg(long)]
        reps: Option<usize>,
        #[command(flatten)]
        common: Common,
    },
    /// Run a filter offline over a recorded CSV trace.
    Replay {
        /// CSV trace.
        input: Option<PathBuf>,
        /// TOML file naming the `time`, `velocity` and `position_error` columns.
        #[arg(long)]
        mapping: Option<PathBuf>,
        /// Sample rate in Hz; inferred from timestamps when absent.
        #[arg(long)]
        fs: Option<f64>,
        #[command(flatten)]
        common: Common,
    },
}

fn toml_array<T: Clone + Into<toml::Value>>(values: &[T]) -> toml::Value {
    toml::Value::Array(values.iter().cloned().map(Into::into).collect())
}

fn path_value(p: &std::path::Path) -> toml::Value {
    toml::Value::String(p.display().to_string())
}

impl Command {
    fn common(&self) -> &Common {
        match self {
            Command::Synth(c) | Command::Run(c) | Command::Tune(c) | Command::Compare(c) => c,
            Command::Limits { common, .. } | Command::Bench { common, .. } | Command::Replay { common, .. } => common,
        }
    }

    /// Overrides implied by the command and its flags, in precedence order.
    fn overrides(&self) -> Vec<Override> {
        let common = self.common();
        let mut o = Vec::new();
        let kind = match self {
            Command::Synth(_) => Some(CampaignKind::Synth),
            Command::Run(_) => Some(CampaignKind::Run),
            Command::Tune(_) => Some(CampaignKind::Tune),
            Command::Compare(_) => Some(CampaignKind::Compare),
            Command::Bench { .. } => Some(CampaignKind::Bench),
            Command::Replay { .. } => Some(CampaignKind::Replay),
            Command::Limits { sweep, .. } => sweep.map(SweepKind::campaign),
        };
        if let Some(kind) = kind {
            o.push(Override::new("campaign", kind.name()));
        }
        if let Some(out) = &common.out {
            o.push(Override::new("out", path_value(out)));
        }
        if let Some(seeds) = &common.seed {
            let ints: Vec<i64> = seeds.0.iter().map(|&s| s as i64).collect();
            o.push(Override::new("seeds", toml_array(&ints)));
        }
        if !common.methods.is_empty() {
            let names: Vec<String> = common.methods.iter().map(|m| m.to_string()).collect();
            o.push(Override::new("methods", toml_array(&names)));
        }
        match self {
            Command::Limits { values, .. } if !values.is_empty() => o.push(Override::new("sweep", toml_array(values))),
            Command::Bench { lens, reps, .. } => {
                if !lens.is_empty() {
                    let ints: Vec<i64> = lens.iter().map(|&l| l as i64).collect();
                    o.push(Override::new("bench.lens", toml_array(&ints)));
                }
                if let Some(r) = reps {
                    o.push(Override::new("bench.reps", *r as i64));
                }
            }
            Command::Replay { input, mapping, fs, .. } => {
                if let Some(p) = input {
                    o.push(Override::new("replay.input", path_value(p)));
                }
                if let Some(p) = mapping {
                    o.push(Override::new("replay.mapping", path_value(p)));
                }
                if let Some(fs) = fs {
                    o.push(Override::new("replay.fs", *fs));
                }
            }
            _ => {}
        }
        o.extend(common.overrides.iter().cloned());
        o
    }

    /// Resolves the configuration this command runs with.
    pub fn config(&self) -> Result<CampaignConfig, CliError> {
        let config = config::resolve(self.common().config.as_deref(), &self.overrides())?;
        if matches!(self, Command::Limits { .. }) && config.campaign.sweep().is_none() {
            return Err(CliError::Usage("limits needs --sweep nnu|band|noise or a limits campaign in the config".into()));
        }
        config.validate()?;
        Ok(config)
    }
}

/// Resolves the configuration, runs the command on a pool of `--jobs`
/// threads and returns its report.
pub fn execute(command: &Command) -> Result<Report, CliError> {
    let config = command.config()?;
    let common = command.common();
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(common.jobs)
        .build()
        .map_err(|e| CliError::Usage(format!("cannot start {} worker threads: {e}", common.jobs)))?;
    let out = OutputDir::create(&config, common.force)?;
    pool.install(|| match config.campaign {
        CampaignKind::Synth => campaign::synth(&config, &out),
        CampaignKind::Run => campaign::run(&config, &out),
        CampaignKind::Tune => campaign::tune(&config, &out),
        CampaignKind::Compare => campaign::compare(&config, &out).map(|r| r.0),
        CampaignKind::LimitsNnu | CampaignKind::LimitsBand | CampaignKind::LimitsNoise => {
            campaign::limits(&config, &out).map(|r| r.0)
        }
        CampaignKind::Bench => campaign::bench(&config, &out).map(|r| r.0),
        CampaignKind::Replay => replay::replay(&config, &out).map(|r| r.0),
    })
}

/// Parses `args`, runs the command and returns the process exit code:
/// 0 success, 1 usage error, 2 completed with failed cells, 3 divergence
/// abort.
pub fn main_with_args<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { exit::USAGE } else { exit::SUCCESS };
        }
    };
    match execute(&cli.command) {
        Ok(report) => {
            print!("{}", report.summary);
            for f in &report.files {
                eprintln!("wrote {}", f.display());
            }
            if report.failed_cells > 0 {
                eprintln!("{} cell(s) failed; see errors.log", report.failed_cells);
            }
            report.exit_code()
        }
        Err(e) => {
            eprintln!("error: {e}");
            e.exit_code()
        }
    }
}
