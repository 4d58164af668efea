//! Command-line front end.
//!
//! Every option can come from a flag or from a JSON file passed with
//! `--config`, whose keys are the long flag names (`t-min`, `va`, ...).
//! Flags win over the file. Output is CSV by default, or JSON with the same
//! records.

use std::ffi::OsString;
use std::fs;
use std::io::{self, Write};
use std::path::PathBuf;

use clap::{Args, Parser, Subcommand, ValueEnum};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use serde_json::{json, Map, Value};

use crate::channel::{record_covariance, ChannelParams, ProtocolParams};
use crate::error::Error;
use crate::keyrate::{keyrate, KeyRateReport};
use crate::mc::{simulate_pm, verify, McConfig, Verification};
use crate::optimizer::{optimize_thresholds, sweep, OptimizationSpec, Optimum};
use crate::postselection::{postselected_stats, PostSelectionRegion};

/// Environment variable holding the default worker count.
pub const JOBS_ENV: &str = "PSQKD_JOBS";

/// Significant digits of every printed float.
pub const SIGNIFICANT_DIGITS: usize = 12;

pub const EXIT_VERIFY_FAILED: i32 = 1;
pub const EXIT_CONFIG: i32 = 2;
pub const EXIT_COMPUTE: i32 = 3;
pub const EXIT_IO: i32 = 4;

const UNITS: &str = "\
Units: all variances (V_A, xi) are in shot-noise units. Alice's thresholds
L_A, U_A apply to |amplitude| of her Gaussian-modulated coherent state; Bob's
thresholds L_B, U_B apply to |raw heterodyne record| (no rescaling). Each
quadrature is thresholded separately and a symbol is kept only if all four
magnitudes fall inside their bands. Key rates are in bits per channel use.";

#[derive(Debug, Parser)]
#[command(name = "psqkd", version, about = "Key rates for post-selected CV-QKD", after_help = UNITS)]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum CommandKind {
    Point,
    Sweep,
    Optimize,
    Verify,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Key rate for one channel and one fixed region.
    #[command(after_help = UNITS)]
    Point(Invocation),
    /// Key rate over a grid of transmissions, one curve per excess noise.
    #[command(after_help = UNITS)]
    Sweep(Invocation),
    /// Best region (and optionally V_A) for one channel.
    #[command(after_help = UNITS)]
    Optimize(Invocation),
    /// Compare analytic post-selected statistics with Monte Carlo.
    #[command(after_help = UNITS)]
    Verify(Invocation),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize, ValueEnum)]
#[serde(rename_all = "lowercase")]
pub enum Format {
    #[default]
    Csv,
    Json,
}

#[derive(Debug, Args)]
pub struct Invocation {
    /// JSON file with default values; keys are the long flag names.
    #[arg(long)]
    pub config: Option<PathBuf>,
    #[command(flatten)]
    pub options: Options,
}

/// Every tunable, as given on the command line or in a config file.
#[derive(Debug, Clone, Default, PartialEq, Args, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case", deny_unknown_fields)]
pub struct Options {
    /// Channel transmission T in (0, 1].
    #[arg(long)]
    pub t: Option<f64>,
    /// Excess noise xi (SNU, referred to the channel output); a comma-separated list for `sweep`.
    #[arg(long, value_delimiter = ',')]
    #[serde(default, with = "scalar_or_list")]
    pub xi: Option<Vec<f64>>,
    /// Alice's modulation variance V_A (SNU). Default 4.
    #[arg(long)]
    pub va: Option<f64>,
    /// Reconciliation efficiency beta in (0, 1]. Default 1.
    #[arg(long)]
    pub beta: Option<f64>,
    /// Alice's lower threshold L_A (amplitude units). Default 0.
    #[arg(long)]
    pub la: Option<f64>,
    /// Alice's upper threshold U_A (amplitude units). Default inf.
    #[arg(long)]
    pub ua: Option<f64>,
    /// Bob's lower threshold L_B (raw record units). Default 0.
    #[arg(long)]
    pub lb: Option<f64>,
    /// Bob's upper threshold U_B (raw record units). Default inf.
    #[arg(long)]
    pub ub: Option<f64>,

    /// First transmission of a sweep. Default 0.05.
    #[arg(long)]
    pub t_min: Option<f64>,
    /// Last transmission of a sweep. Default 1.
    #[arg(long)]
    pub t_max: Option<f64>,
    /// Number of transmissions in a sweep, endpoints included. Default 20.
    #[arg(long)]
    pub t_steps: Option<usize>,
    /// Optimise the region at every sweep point instead of using the given one.
    #[arg(long, num_args = 0..=1, default_missing_value = "true")]
    pub optimize: Option<bool>,

    /// Largest lower threshold explored, in standard deviations of the record.
    #[arg(long)]
    pub lower_max: Option<f64>,
    /// Smallest finite band width U - L, in standard deviations.
    #[arg(long)]
    pub band_min: Option<f64>,
    /// Largest finite band width U - L, in standard deviations.
    #[arg(long)]
    pub band_max: Option<f64>,
    /// Explore finite upper thresholds.
    #[arg(long, num_args = 0..=1, default_missing_value = "true")]
    pub finite_upper: Option<bool>,
    /// Lower bound on V_A; together with `va-max` turns on V_A optimisation.
    #[arg(long)]
    pub va_min: Option<f64>,
    /// Upper bound on V_A.
    #[arg(long)]
    pub va_max: Option<f64>,
    /// Seed grid points per threshold axis.
    #[arg(long)]
    pub grid: Option<usize>,
    /// Seed grid points on the V_A axis.
    #[arg(long)]
    pub va_grid: Option<usize>,
    /// Number of seeds refined locally.
    #[arg(long)]
    pub refine_seeds: Option<usize>,
    /// Convergence tolerance on the key rate (bits per channel use).
    #[arg(long)]
    pub tol: Option<f64>,
    /// Evaluation budget of each local refinement.
    #[arg(long)]
    pub max_evals: Option<usize>,

    /// Monte Carlo symbol count.
    #[arg(long)]
    pub samples: Option<u64>,
    /// Monte Carlo seed.
    #[arg(long)]
    pub seed: Option<u64>,
    /// Symbols per Monte Carlo batch (one random substream per batch).
    #[arg(long)]
    pub batch_size: Option<u64>,
    /// Apply a random common rotation to each symbol before post-selection.
    #[arg(long, num_args = 0..=1, default_missing_value = "true")]
    pub symmetrise: Option<bool>,
    /// Largest accepted |z| in `verify`. Default 4.
    #[arg(long)]
    pub z_max: Option<f64>,

    /// Output file; standard output when absent.
    #[arg(long, short)]
    pub output: Option<PathBuf>,
    /// Output format.
    #[arg(long, value_enum)]
    pub format: Option<Format>,
    /// Worker threads. Defaults to $PSQKD_JOBS, then to the number of CPUs.
    #[arg(long, env = JOBS_ENV)]
    pub jobs: Option<usize>,
}

/// Lets `xi` be a number or a list in config files.
mod scalar_or_list {
    use serde::{Deserialize, Deserializer, Serialize, Serializer};

    #[derive(Deserialize)]
    #[serde(untagged)]
    enum OneOrMany {
        One(f64),
        Many(Vec<f64>),
    }

    pub fn serialize<S: Serializer>(v: &Option<Vec<f64>>, s: S) -> Result<S::Ok, S::Error> {
        v.serialize(s)
    }

    pub fn deserialize<'de, D: Deserializer<'de>>(d: D) -> Result<Option<Vec<f64>>, D::Error> {
        Ok(Option::<OneOrMany>::deserialize(d)?.map(|v| match v {
            OneOrMany::One(x) => vec![x],
            OneOrMany::Many(xs) => xs,
        }))
    }
}

impl Options {
    /// Fill every unset field from `base`.
    pub fn or(self, base: Options) -> Options {
        macro_rules! merge {
            ($($f:ident),*) => { Options { $($f: self.$f.or(base.$f)),* } };
        }
        merge!(
            t,
            xi,
            va,
            beta,
            la,
            ua,
            lb,
            ub,
            t_min,
            t_max,
            t_steps,
            optimize,
            lower_max,
            band_min,
            band_max,
            finite_upper,
            va_min,
            va_max,
            grid,
            va_grid,
            refine_seeds,
            tol,
            max_evals,
            samples,
            seed,
            batch_size,
            symmetrise,
            z_max,
            output,
            format,
            jobs
        )
    }
}

/// A fully resolved and validated run.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct RunConfig {
    pub command: CommandKind,
    pub protocol: ProtocolParams,
    pub t: Option<f64>,
    pub xi: Vec<f64>,
    pub region: PostSelectionRegion,
    pub t_grid: Vec<f64>,
    pub optimize: bool,
    pub spec: OptimizationSpec,
    pub mc: McConfig,
    pub z_max: f64,
    pub output: Option<PathBuf>,
    pub format: Format,
    pub jobs: Option<usize>,
}

#[derive(Debug)]
pub enum CliError {
    Config(String),
    Compute(String),
    Io(String),
}

impl CliError {
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Config(_) => EXIT_CONFIG,
            CliError::Compute(_) => EXIT_COMPUTE,
            CliError::Io(_) => EXIT_IO,
        }
    }

    /// One-line JSON description for standard error.
    pub fn to_json(&self) -> String {
        let (kind, message) = match self {
            CliError::Config(m) => ("config", m),
            CliError::Compute(m) => ("computation", m),
            CliError::Io(m) => ("io", m),
        };
        json!({ "error": kind, "message": message, "exit_code": self.exit_code() }).to_string()
    }
}

fn config_err(e: Error) -> CliError {
    CliError::Config(e.to_string())
}

fn need(v: Option<f64>, name: &str) -> Result<f64, CliError> {
    v.ok_or_else(|| CliError::Config(format!("`--{name}` is required for this command")))
}

impl RunConfig {
    pub fn resolve(command: CommandKind, o: Options) -> Result<Self, CliError> {
        let protocol = ProtocolParams::new(o.va.unwrap_or(4.0), o.beta.unwrap_or(1.0)).map_err(config_err)?;
        let region = PostSelectionRegion::new(
            o.la.unwrap_or(0.0),
            o.ua.unwrap_or(f64::INFINITY),
            o.lb.unwrap_or(0.0),
            o.ub.unwrap_or(f64::INFINITY),
        )
        .map_err(config_err)?;

        let defaults = OptimizationSpec::default();
        let va_bounds = match (o.va_min, o.va_max) {
            (Some(lo), Some(hi)) => Some((lo, hi)),
            (None, None) => None,
            _ => return Err(CliError::Config("`va-min` and `va-max` must be given together".into())),
        };
        let spec = OptimizationSpec {
            lower_max: o.lower_max.unwrap_or(defaults.lower_max),
            band_min: o.band_min.unwrap_or(defaults.band_min),
            band_max: o.band_max.unwrap_or(defaults.band_max),
            finite_upper: o.finite_upper.unwrap_or(defaults.finite_upper),
            va_bounds,
            grid: o.grid.unwrap_or(defaults.grid),
            va_grid: o.va_grid.unwrap_or(defaults.va_grid),
            refine_seeds: o.refine_seeds.unwrap_or(defaults.refine_seeds),
            tol: o.tol.unwrap_or(defaults.tol),
            max_evals: o.max_evals.unwrap_or(defaults.max_evals),
        };
        spec.validate().map_err(config_err)?;

        let mc_defaults = McConfig::default();
        let mc = McConfig {
            sample_count: o.samples.unwrap_or(mc_defaults.sample_count),
            seed: o.seed.unwrap_or(mc_defaults.seed),
            batch_size: o.batch_size.unwrap_or(mc_defaults.batch_size),
            symmetrise: o.symmetrise.unwrap_or(mc_defaults.symmetrise),
        };
        mc.validate().map_err(config_err)?;
        let z_max = o.z_max.unwrap_or(4.0);
        if !(z_max > 0.0) {
            return Err(CliError::Config(format!("`z-max` must be > 0, got {z_max}")));
        }

        let xi = o.xi.unwrap_or_else(|| vec![0.0]);
        if xi.is_empty() {
            return Err(CliError::Config("`xi` must not be empty".into()));
        }
        let mut t_grid = Vec::new();
        let mut t = None;
        if command == CommandKind::Sweep {
            let (lo, hi) = (o.t_min.unwrap_or(0.05), o.t_max.unwrap_or(1.0));
            let steps = o.t_steps.unwrap_or(20);
            if steps == 0 || hi < lo {
                return Err(CliError::Config(format!(
                    "sweep needs t-steps >= 1 and t-min <= t-max (got {steps}, {lo}, {hi})"
                )));
            }
            t_grid = linspace(lo, hi, steps);
            // Individual (T, xi) pairs such as T = 1 with noise are reported
            // per row rather than rejected up front.
            for &t in &t_grid {
                ChannelParams::new(t, 0.0).map_err(config_err)?;
            }
            for &x in &xi {
                ChannelParams::new(0.5, x).map_err(config_err)?;
            }
        } else {
            if xi.len() != 1 {
                return Err(CliError::Config("this command takes a single `xi`".into()));
            }
            let tv = need(o.t, "t")?;
            ChannelParams::new(tv, xi[0]).map_err(config_err)?;
            t = Some(tv);
        }
        if o.jobs == Some(0) {
            return Err(CliError::Config("`jobs` must be >= 1".into()));
        }

        Ok(Self {
            command,
            protocol,
            t,
            xi,
            region,
            t_grid,
            optimize: o.optimize.unwrap_or(false),
            spec,
            mc,
            z_max,
            output: o.output,
            format: o.format.unwrap_or_default(),
            jobs: o.jobs,
        })
    }

    fn channel(&self) -> ChannelParams {
        ChannelParams {
            t: self.t.expect("single-point command"),
            xi: self.xi[0],
        }
    }
}

/// `n` evenly spaced values from `lo` to `hi` inclusive.
pub fn linspace(lo: f64, hi: f64, n: usize) -> Vec<f64> {
    if n == 1 {
        return vec![lo];
    }
    (0..n)
        .map(|i| {
            if i == n - 1 {
                hi
            } else {
                lo + (hi - lo) * i as f64 / (n - 1) as f64
            }
        })
        .collect()
}

/// Format like C's `%.{digits}g`.
pub fn format_sig(x: f64, digits: usize) -> String {
    if x.is_nan() {
        return "nan".into();
    }
    if x.is_infinite() {
        return if x > 0.0 { "inf".into() } else { "-inf".into() };
    }
    if x == 0.0 {
        return "0".into();
    }
    let sci = format!("{:.*e}", digits - 1, x);
    let (mantissa, exp) = sci.split_once('e').expect("exponent");
    let exp: i32 = exp.parse().expect("integer exponent");
    if exp < -5 || exp >= digits as i32 {
        let m = trim_zeros(mantissa);
        format!("{m}e{}{:02}", if exp < 0 { '-' } else { '+' }, exp.abs())
    } else {
        let decimals = (digits as i32 - 1 - exp).max(0) as usize;
        trim_zeros(&format!("{x:.decimals$}")).to_string()
    }
}

fn trim_zeros(s: &str) -> &str {
    if s.contains('.') {
        s.trim_end_matches('0').trim_end_matches('.')
    } else {
        s
    }
}

fn num(x: f64) -> String {
    format_sig(x, SIGNIFICANT_DIGITS)
}

pub const RATE_COLUMNS: [&str; 15] = [
    "T",
    "xi",
    "V_A",
    "beta",
    "L_A",
    "U_A",
    "L_B",
    "U_B",
    "P_ps",
    "p_e",
    "I_ab",
    "chi_ea",
    "keyrate_raw",
    "keyrate_clamped",
    "status",
];

pub const VERIFY_COLUMNS: [&str; 6] = ["statistic", "analytic", "empirical", "std_error", "z", "status"];

/// One output record: formatted cells in column order.
type Record = Vec<String>;

fn rate_record(
    ch: &ChannelParams,
    va: f64,
    beta: f64,
    outcome: Result<(PostSelectionRegion, KeyRateReport), String>,
    region_hint: &PostSelectionRegion,
) -> Record {
    let mut rec = vec![num(ch.t), num(ch.xi), num(va), num(beta)];
    match outcome {
        Ok((r, k)) => {
            rec.extend([r.la, r.ua, r.lb, r.ub].map(num));
            rec.extend(
                [
                    k.p_ps,
                    k.p_e,
                    k.i_ab_bits,
                    k.chi_ea_bits,
                    k.key_rate,
                    k.key_rate_clamped(),
                ]
                .map(num),
            );
            rec.push("ok".into());
        }
        Err(msg) => {
            let r = region_hint;
            rec.extend([r.la, r.ua, r.lb, r.ub].map(num));
            rec.extend(std::iter::repeat_n(String::new(), 6));
            rec.push(format!("error: {msg}"));
        }
    }
    rec
}

fn optimum_record(ch: &ChannelParams, beta: f64, outcome: Result<Optimum, String>, hint: &RunConfig) -> Record {
    match outcome {
        Ok(o) => rate_record(ch, o.va, beta, Ok((o.region, o.report)), &o.region),
        Err(e) => rate_record(ch, hint.protocol.va, beta, Err(e), &PostSelectionRegion::none()),
    }
}

fn verify_records(v: &Verification) -> Vec<Record> {
    let mut out: Vec<Record> = v
        .scores
        .iter()
        .map(|s| {
            let ok = s.z.abs() <= v.z_max;
            vec![
                s.name.clone(),
                num(s.analytic),
                num(s.empirical),
                num(s.std_error),
                num(s.z),
                if ok { "pass" } else { "fail" }.into(),
            ]
        })
        .collect();
    let overall = match v.status {
        crate::mc::VerifyStatus::Pass => "pass",
        crate::mc::VerifyStatus::Fail => "fail",
        crate::mc::VerifyStatus::NoData => "no data",
    };
    out.push(vec![
        "overall".into(),
        String::new(),
        String::new(),
        String::new(),
        num(v.z_max),
        overall.into(),
    ]);
    out
}

/// Result of running a command, before serialisation.
pub struct Table {
    pub columns: &'static [&'static str],
    pub records: Vec<Record>,
    /// Whether the run succeeded as a whole (only `verify` can say no).
    pub passed: bool,
}

impl Table {
    pub fn to_csv(&self) -> Result<Vec<u8>, CliError> {
        let mut w = csv::WriterBuilder::new()
            .terminator(csv::Terminator::Any(b'\n'))
            .from_writer(Vec::new());
        let io = |e: csv::Error| CliError::Io(e.to_string());
        w.write_record(self.columns).map_err(io)?;
        for r in &self.records {
            w.write_record(r).map_err(io)?;
        }
        w.into_inner().map_err(|e| CliError::Io(e.to_string()))
    }

    /// Array of objects keyed by column name. Finite numbers are JSON numbers,
    /// infinities are the strings `"inf"`/`"-inf"` and missing values `null`.
    pub fn to_json(&self) -> Result<Vec<u8>, CliError> {
        let rows: Vec<Value> = self
            .records
            .iter()
            .map(|r| {
                let obj: Map<String, Value> = self
                    .columns
                    .iter()
                    .zip(r)
                    .map(|(&c, cell)| (c.to_string(), json_cell(c, cell)))
                    .collect();
                Value::Object(obj)
            })
            .collect();
        let mut bytes = serde_json::to_vec_pretty(&rows).map_err(|e| CliError::Io(e.to_string()))?;
        bytes.push(b'\n');
        Ok(bytes)
    }
}

fn json_cell(column: &str, cell: &str) -> Value {
    if column == "status" || column == "statistic" {
        return Value::String(cell.into());
    }
    if cell.is_empty() {
        return Value::Null;
    }
    match cell.parse::<f64>() {
        Ok(x) if x.is_finite() => serde_json::Number::from_f64(x).map_or(Value::Null, Value::Number),
        _ => Value::String(cell.into()),
    }
}

/// Run one resolved configuration.
pub fn execute(cfg: &RunConfig) -> Result<Table, CliError> {
    let compute = |e: Error| CliError::Compute(e.to_string());
    let beta = cfg.protocol.beta;
    let table = |records| Table {
        columns: &RATE_COLUMNS,
        records,
        passed: true,
    };
    match cfg.command {
        CommandKind::Point => {
            let ch = cfg.channel();
            let k = keyrate(&cfg.protocol, &ch, &cfg.region).map_err(compute)?;
            Ok(table(vec![rate_record(
                &ch,
                cfg.protocol.va,
                beta,
                Ok((cfg.region, k)),
                &cfg.region,
            )]))
        }
        CommandKind::Optimize => {
            let ch = cfg.channel();
            let o = optimize_thresholds(&cfg.protocol, &ch, &cfg.spec).map_err(compute)?;
            Ok(table(vec![optimum_record(&ch, beta, Ok(o), cfg)]))
        }
        CommandKind::Sweep if cfg.optimize => {
            let rows = sweep(&cfg.protocol, &cfg.xi, &cfg.t_grid, &cfg.spec).map_err(compute)?;
            Ok(table(
                rows.into_iter()
                    .map(|row| optimum_record(&ChannelParams { t: row.t, xi: row.xi }, beta, row.outcome, cfg))
                    .collect(),
            ))
        }
        CommandKind::Sweep => {
            let points: Vec<ChannelParams> = cfg
                .xi
                .iter()
                .flat_map(|&xi| cfg.t_grid.iter().map(move |&t| ChannelParams { t, xi }))
                .collect();
            let records = points
                .par_iter()
                .map(|ch| {
                    let k = ChannelParams::new(ch.t, ch.xi)
                        .and_then(|c| keyrate(&cfg.protocol, &c, &cfg.region))
                        .map_err(|e| e.to_string());
                    rate_record(ch, cfg.protocol.va, beta, k.map(|k| (cfg.region, k)), &cfg.region)
                })
                .collect();
            Ok(table(records))
        }
        CommandKind::Verify => {
            let ch = cfg.channel();
            let sigma = record_covariance(&cfg.protocol, &ch);
            let analytic = postselected_stats(&sigma, &cfg.region).map_err(compute)?;
            let mc = simulate_pm(&cfg.protocol, &ch, &cfg.region, &cfg.mc).map_err(compute)?;
            let v = verify(&analytic, &mc, cfg.z_max);
            Ok(Table {
                columns: &VERIFY_COLUMNS,
                records: verify_records(&v),
                passed: v.passed(),
            })
        }
    }
}

fn read_config(path: &PathBuf) -> Result<Options, CliError> {
    let text = fs::read_to_string(path).map_err(|e| CliError::Io(format!("{}: {e}", path.display())))?;
    serde_json::from_str(&text).map_err(|e| CliError::Config(format!("{}: {e}", path.display())))
}

/// Parse arguments, merge the config file and run. Returns the exit code.
pub fn run<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(c) => c,
        Err(e) => {
            let code = if e.use_stderr() { EXIT_CONFIG } else { 0 };
            let _ = e.print();
            return code;
        }
    };
    match run_cli(cli) {
        Ok(true) => 0,
        Ok(false) => EXIT_VERIFY_FAILED,
        Err(e) => {
            eprintln!("{}", e.to_json());
            e.exit_code()
        }
    }
}

fn run_cli(cli: Cli) -> Result<bool, CliError> {
    let (kind, inv) = match cli.command {
        Command::Point(i) => (CommandKind::Point, i),
        Command::Sweep(i) => (CommandKind::Sweep, i),
        Command::Optimize(i) => (CommandKind::Optimize, i),
        Command::Verify(i) => (CommandKind::Verify, i),
    };
    let options = match &inv.config {
        Some(path) => inv.options.or(read_config(path)?),
        None => inv.options,
    };
    let cfg = RunConfig::resolve(kind, options)?;

    let mut builder = rayon::ThreadPoolBuilder::new();
    if let Some(j) = cfg.jobs {
        builder = builder.num_threads(j);
    }
    let pool = builder.build().map_err(|e| CliError::Config(e.to_string()))?;
    let table = pool.install(|| execute(&cfg))?;

    let bytes = match cfg.format {
        Format::Csv => table.to_csv()?,
        Format::Json => table.to_json()?,
    };
    match &cfg.output {
        Some(path) => fs::write(path, &bytes).map_err(|e| CliError::Io(format!("{}: {e}", path.display())))?,
        None => io::stdout()
            .lock()
            .write_all(&bytes)
            .map_err(|e| CliError::Io(e.to_string()))?,
    }
    Ok(table.passed)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn significant_digit_formatting() {
        assert_eq!(format_sig(0.0, 12), "0");
        assert_eq!(format_sig(1.0, 12), "1");
        assert_eq!(format_sig(0.1, 12), "0.1");
        assert_eq!(format_sig(1.0 / 3.0, 12), "0.333333333333");
        assert_eq!(format_sig(-2.5e-7, 12), "-2.5e-07");
        assert_eq!(format_sig(123456789012345.0, 12), "1.23456789012e+14");
        assert_eq!(format_sig(f64::INFINITY, 12), "inf");
    }

    #[test]
    fn linspace_hits_both_ends() {
        let v = linspace(0.05, 1.0, 20);
        assert_eq!(v.len(), 20);
        assert_eq!(v[0], 0.05);
        assert_eq!(v[19], 1.0);
        assert!((v[1] - 0.1).abs() < 1e-15);
    }

    #[test]
    fn flags_override_file() {
        let file = Options {
            t: Some(0.5),
            va: Some(3.0),
            ..Default::default()
        };
        let flags = Options {
            va: Some(6.0),
            ..Default::default()
        };
        let merged = flags.or(file);
        assert_eq!(merged.t, Some(0.5));
        assert_eq!(merged.va, Some(6.0));
    }

    #[test]
    fn config_keys_match_flag_names() {
        let o: Options = serde_json::from_str(r#"{"t-min": 0.1, "xi": 0.02, "va-min": 1, "va-max": 9}"#).unwrap();
        assert_eq!(o.t_min, Some(0.1));
        assert_eq!(o.xi, Some(vec![0.02]));
        assert!(serde_json::from_str::<Options>(r#"{"t_min": 0.1}"#).is_err());
    }

    #[test]
    fn point_requires_transmission() {
        let err = RunConfig::resolve(CommandKind::Point, Options::default()).unwrap_err();
        assert_eq!(err.exit_code(), EXIT_CONFIG);
    }
}
