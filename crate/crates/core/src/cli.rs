//! Command-line front end.

use std::collections::BTreeMap;
use std::ffi::OsString;
use std::fs;
use std::path::{Path, PathBuf};
use std::time::Instant;

use clap::{Args, Parser, Subcommand};
use serde::Deserialize;

use crate::config::{ExperimentConfig, ExperimentKind};
use crate::engine::{run, Report};
use crate::error::{Error, Result};
use crate::occupation::FunctionId;
use crate::report::{occupation_table, write_report, Format, RunManifest, Source};

/// Environment variable that overrides `--seed`.
pub const SEED_ENV: &str = "MMAF_SEED";

#[derive(Debug, Parser)]
#[command(name = "mmaf", version, about = "Monte Carlo studies of the modified massive Arratia flow")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Dump full realizations on every grid point.
    Simulate(CommonArgs),
    /// Distribution of the normalized occupation sum `Y`.
    Clt(CommonArgs),
    /// Moments of the occupation integral over `(0, n]`.
    Moments(CommonArgs),
    /// Gap probabilities, gap unions, coupling checks and covariance decay.
    Mixing(CommonArgs),
    /// Small-time behaviour of the variance series.
    Smalltime(CommonArgs),
}

impl Command {
    pub fn kind(&self) -> ExperimentKind {
        match self {
            Command::Simulate(_) => ExperimentKind::Simulate,
            Command::Clt(_) => ExperimentKind::Clt,
            Command::Moments(_) => ExperimentKind::Moments,
            Command::Mixing(_) => ExperimentKind::Mixing,
            Command::Smalltime(_) => ExperimentKind::Smalltime,
        }
    }

    pub fn args(&self) -> &CommonArgs {
        match self {
            Command::Simulate(a) | Command::Clt(a) | Command::Moments(a) | Command::Mixing(a) | Command::Smalltime(a) => a,
        }
    }
}

#[derive(Debug, Clone, Args)]
pub struct CommonArgs {
    /// Simulation horizon.
    #[arg(long = "T")]
    pub horizon: Option<f64>,
    /// Grid steps over the horizon.
    #[arg(long = "M")]
    pub steps: Option<usize>,
    /// Evaluation time.
    #[arg(long)]
    pub t: Option<f64>,
    /// Window size in unit intervals.
    #[arg(long)]
    pub n: Option<usize>,
    #[arg(long)]
    pub reps: Option<usize>,
    /// Particles added on each side of the window.
    #[arg(long)]
    pub pad: Option<usize>,
    #[arg(long)]
    pub seed: Option<u64>,
    #[arg(long, value_enum)]
    pub function: Option<FunctionId>,
    /// Interval offset in [0, 1).
    #[arg(long)]
    pub offset: Option<f64>,
    /// Covariance truncation lag.
    #[arg(long)]
    pub kmax: Option<usize>,
    /// Draw Brownian-bridge crossings between grid points.
    #[arg(long, num_args = 0..=1, default_missing_value = "true")]
    pub bridge: Option<bool>,
    /// Worker threads (1 runs sequentially).
    #[arg(long)]
    pub workers: Option<usize>,
    /// Evaluation times for `smalltime`, comma separated and decreasing.
    #[arg(long, value_delimiter = ',')]
    pub times: Option<Vec<f64>>,
    /// Moment orders for `moments`, comma separated.
    #[arg(long, value_delimiter = ',')]
    pub p: Option<Vec<f64>>,
    /// TOML file with any of the keys above; flags take precedence.
    #[arg(long)]
    pub config: Option<PathBuf>,
    /// Output directory.
    #[arg(long, default_value = ".")]
    pub out: PathBuf,
    #[arg(long, value_enum, default_value = "csv")]
    pub format: Format,
    /// Also write `occupation.csv` with `(rep, k, A_k)` rows (simulate).
    #[arg(long)]
    pub dump_occupation: bool,
}

#[derive(Debug, Default, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FileConfig {
    #[serde(rename = "T")]
    pub horizon: Option<f64>,
    #[serde(rename = "M")]
    pub steps: Option<usize>,
    pub t: Option<f64>,
    pub n: Option<usize>,
    pub reps: Option<usize>,
    pub pad: Option<usize>,
    pub seed: Option<u64>,
    pub function: Option<FunctionId>,
    pub offset: Option<f64>,
    pub kmax: Option<usize>,
    pub bridge: Option<bool>,
    pub workers: Option<usize>,
    pub times: Option<Vec<f64>>,
    pub p: Option<Vec<f64>>,
}

pub fn read_file_config(path: &Path) -> Result<FileConfig> {
    let text = fs::read_to_string(path)?;
    toml::from_str(&text).map_err(|e| {
        let key = unknown_key(e.message()).unwrap_or_else(|| "config".into());
        Error::config(key, format!("{}: {}", path.display(), e.message()))
    })
}

fn unknown_key(message: &str) -> Option<String> {
    let rest = message.strip_prefix("unknown field `")?;
    Some(rest[..rest.find('`')?].to_string())
}

/// Parsed invocation: the validated configuration plus output settings.
#[derive(Debug, Clone)]
pub struct Invocation {
    pub config: ExperimentConfig,
    pub provenance: BTreeMap<String, Source>,
    pub config_file: Option<PathBuf>,
    pub out: PathBuf,
    pub format: Format,
    pub dump_occupation: bool,
}

struct Layer<'a> {
    config: &'a mut ExperimentConfig,
    provenance: &'a mut BTreeMap<String, Source>,
}

impl Layer<'_> {
    fn set<T>(&mut self, key: &str, value: Option<T>, source: Source, apply: impl FnOnce(&mut ExperimentConfig, T)) {
        if let Some(v) = value {
            apply(self.config, v);
            self.provenance.insert(key.to_string(), source);
        }
    }

    fn apply(&mut self, values: FileConfig, source: Source) {
        self.set("T", values.horizon, source, |c, v| c.horizon = v);
        self.set("M", values.steps, source, |c, v| c.steps = v);
        self.set("t", values.t, source, |c, v| c.t = v);
        self.set("n", values.n, source, |c, v| c.n = v);
        self.set("reps", values.reps, source, |c, v| c.reps = v);
        self.set("pad", values.pad, source, |c, v| c.pad = Some(v));
        self.set("seed", values.seed, source, |c, v| c.seed = v);
        self.set("function", values.function, source, |c, v| c.function = v);
        self.set("offset", values.offset, source, |c, v| c.offset = v);
        self.set("kmax", values.kmax, source, |c, v| c.k_max = v);
        self.set("bridge", values.bridge, source, |c, v| c.bridge = v);
        self.set("workers", values.workers, source, |c, v| c.workers = Some(v));
        self.set("times", values.times, source, |c, v| c.times = v);
        self.set("p", values.p, source, |c, v| c.p = v);
    }
}

fn flag_values(a: &CommonArgs) -> FileConfig {
    FileConfig {
        horizon: a.horizon,
        steps: a.steps,
        t: a.t,
        n: a.n,
        reps: a.reps,
        pad: a.pad,
        seed: a.seed,
        function: a.function,
        offset: a.offset,
        kmax: a.kmax,
        bridge: a.bridge,
        workers: a.workers,
        times: a.times.clone(),
        p: a.p.clone(),
    }
}

const KEYS: [&str; 14] = [
    "T", "M", "t", "n", "reps", "pad", "seed", "function", "offset", "kmax", "bridge", "workers", "times", "p",
];

/// Builds the configuration with precedence defaults < file < flags < `MMAF_SEED`.
pub fn resolve(command: &Command, env_seed: Option<&str>) -> Result<Invocation> {
    let kind = command.kind();
    let args = command.args();
    let mut config = ExperimentConfig::defaults(kind);
    let mut provenance: BTreeMap<String, Source> = KEYS.iter().map(|k| (k.to_string(), Source::Default)).collect();
    let mut layer = Layer {
        config: &mut config,
        provenance: &mut provenance,
    };
    if let Some(path) = &args.config {
        layer.apply(read_file_config(path)?, Source::File);
    }
    layer.apply(flag_values(args), Source::Flag);
    if let Some(raw) = env_seed {
        let seed = raw
            .trim()
            .parse::<u64>()
            .map_err(|e| Error::config(SEED_ENV, format!("`{raw}` is not an unsigned integer: {e}")))?;
        layer.set("seed", Some(seed), Source::Env, |c, v| c.seed = v);
    }
    config.validate()?;
    Ok(Invocation {
        config,
        provenance,
        config_file: args.config.clone(),
        out: args.out.clone(),
        format: args.format,
        dump_occupation: args.dump_occupation,
    })
}

/// Parses arguments (including the program name) and the seed override.
pub fn parse_config<I, T>(args: I, env_seed: Option<&str>) -> Result<Invocation>
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = Cli::try_parse_from(args).map_err(|e| Error::config("arguments", e.to_string()))?;
    resolve(&cli.command, env_seed)
}

fn write_outputs(inv: &Invocation, report: &Report, manifest: &mut RunManifest) -> Result<()> {
    fs::create_dir_all(&inv.out)?;
    let kind = report.kind().as_str();
    let path = inv.out.join(format!("{kind}.{}", inv.format.extension()));
    write_report(report, inv.format, &path)?;
    manifest.outputs.insert(kind.to_string(), path);
    if inv.dump_occupation {
        if let Report::Simulate(r) = report {
            let path = inv.out.join("occupation.csv");
            fs::write(&path, occupation_table(r).to_csv())?;
            manifest.outputs.insert("occupation".into(), path);
        }
    }
    manifest.check_outputs()
}

/// Runs one invocation; returns the process exit code.
pub fn execute(inv: &Invocation) -> i32 {
    let start = Instant::now();
    let kind = inv.config.experiment.as_str();
    let mut manifest = RunManifest::new(inv.config.clone(), inv.provenance.clone(), inv.config_file.clone());
    let outcome = run(&inv.config).and_then(|report| write_outputs(inv, &report, &mut manifest));
    if let Err(e) = &outcome {
        eprintln!("error: {kind}: {e}");
        manifest.failed.push(kind.to_string());
    }
    manifest.wall_clock_seconds = start.elapsed().as_secs_f64();
    if let Err(e) = fs::create_dir_all(&inv.out).map_err(Error::from).and_then(|_| manifest.write(&inv.out.join("manifest.json"))) {
        eprintln!("error: manifest: {e}");
        if !manifest.failed.iter().any(|f| f == kind) {
            manifest.failed.push(kind.to_string());
        }
    }
    if manifest.failed.is_empty() {
        0
    } else {
        eprintln!("failed experiments: {}", manifest.failed.join(","));
        1
    }
}

/// Entry point used by the binary.
pub fn main_with<I, T>(args: I, env_seed: Option<&str>) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(cli) => cli,
        Err(e) => {
            let code = e.exit_code();
            let _ = e.print();
            return code;
        }
    };
    match resolve(&cli.command, env_seed) {
        Ok(inv) => execute(&inv),
        Err(e) => {
            eprintln!("error: {e}");
            eprintln!("failed experiments: {}", cli.command.kind().as_str());
            2
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn simulate_defaults_filled() {
        let inv = parse_config(["mmaf", "simulate", "--T", "1", "--M", "1000", "--seed", "42"], None).unwrap();
        assert_eq!(inv.config.seed, 42);
        assert_eq!(inv.config.steps, 1000);
        assert_eq!(inv.config.reps, 1);
        assert_eq!(inv.config.pad_for(1.0), 12);
        assert_eq!(inv.provenance["seed"], Source::Flag);
        assert_eq!(inv.provenance["reps"], Source::Default);
    }

    #[test]
    fn t_beyond_horizon() {
        let err = parse_config(["mmaf", "clt", "--t", "2", "--T", "1"], None).unwrap_err();
        let msg = err.to_string();
        assert!(msg.contains("t exceeds T"), "{msg}");
        assert!(msg.contains("`t`"), "{msg}");
    }

    #[test]
    fn env_seed_overrides_flag() {
        let inv = parse_config(["mmaf", "clt", "--seed", "1"], Some("99")).unwrap();
        assert_eq!(inv.config.seed, 99);
        assert_eq!(inv.provenance["seed"], Source::Env);
        assert!(parse_config(["mmaf", "clt"], Some("x")).is_err());
    }

    #[test]
    fn list_flags_split_on_commas() {
        let inv = parse_config(["mmaf", "smalltime", "--times", "0.1,0.05", "--T", "0.1"], None).unwrap();
        assert_eq!(inv.config.times, vec![0.1, 0.05]);
        let inv = parse_config(["mmaf", "moments", "--p", "2,3"], None).unwrap();
        assert_eq!(inv.config.p, vec![2.0, 3.0]);
    }

    #[test]
    fn bridge_flag_forms() {
        assert!(parse_config(["mmaf", "clt", "--bridge"], None).unwrap().config.bridge);
        assert!(!parse_config(["mmaf", "clt", "--bridge", "false"], None).unwrap().config.bridge);
    }

    #[test]
    fn unknown_key_extracted() {
        assert_eq!(unknown_key("unknown field `foo`, expected one of"), Some("foo".into()));
    }
}
