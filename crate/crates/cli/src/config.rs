//! Command-line and config-file parsing into a fully resolved
//! [`ExperimentConfig`].

use std::collections::{BTreeMap, BTreeSet};
use std::fmt;
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand};
use serde::Serialize;
use spinglass::SeedSpec;

use crate::CliError;

pub const SEED_ENV: &str = "SPINGLASS_SEED";

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize)]
#[serde(rename_all = "kebab-case")]
pub enum Command {
    SeSweep,
    AmpRun,
    AmpVsSe,
    Landscape,
    Phases,
    SbmBp,
    Popdyn,
    OracleCheck,
}

impl Command {
    pub fn name(self) -> &'static str {
        match self {
            Command::SeSweep => "se-sweep",
            Command::AmpRun => "amp-run",
            Command::AmpVsSe => "amp-vs-se",
            Command::Landscape => "landscape",
            Command::Phases => "phases",
            Command::SbmBp => "sbm-bp",
            Command::Popdyn => "popdyn",
            Command::OracleCheck => "oracle-check",
        }
    }
}

impl fmt::Display for Command {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize)]
#[serde(rename_all = "lowercase")]
pub enum Format {
    Csv,
    Json,
    Svg,
}

impl Format {
    fn parse(s: &str) -> Result<Self, CliError> {
        match s.trim() {
            "csv" => Ok(Format::Csv),
            "json" => Ok(Format::Json),
            "svg" => Ok(Format::Svg),
            other => Err(CliError::Usage(format!(
                "formats: unknown format {other:?} (expected csv, json or svg)"
            ))),
        }
    }
}

/// A typed parameter value.
#[derive(Debug, Clone, PartialEq, Serialize)]
#[serde(untagged)]
pub enum ParamValue {
    Real(f64),
    Count(u64),
    Flag(bool),
    Text(String),
}

#[derive(Debug, Clone, Copy)]
enum Kind {
    Real,
    Count,
    Flag,
    Choice(&'static [&'static str]),
}

struct ParamSpec {
    name: &'static str,
    kind: Kind,
    /// `None` marks a required parameter.
    default: Option<&'static str>,
}

const fn req(name: &'static str, kind: Kind) -> ParamSpec {
    ParamSpec {
        name,
        kind,
        default: None,
    }
}

const fn opt(name: &'static str, kind: Kind, default: &'static str) -> ParamSpec {
    ParamSpec {
        name,
        kind,
        default: Some(default),
    }
}

const MODES: &[&str] = &["edge-only", "full"];

use Kind::*;

const SE_SWEEP: &[ParamSpec] = &[
            req("lambda-min", Real),
            req("lambda-max", Real),
            req("step", Real),
            opt("gamma0", Real, "1e-3"),
            opt("tol", Real, "1e-10"),
            opt("max-iters", Count, "10000"),
        ];

const AMP: &[ParamSpec] = &[
            req("n", Count),
            req("lambda", Real),
            req("seeds", Count),
            opt("init-scale", Real, "1e-3"),
            opt("max-iters", Count, "500"),
            opt("tol", Real, "1e-7"),
            opt("onsager", Flag, "true"),
        ];

const LANDSCAPE: &[ParamSpec] = &[req("lambda", Real), req("grid-size", Count)];

const PHASES: &[ParamSpec] = &[
            req("lambda-min", Real),
            req("lambda-max", Real),
            req("step", Real),
            opt("grid-size", Count, "512"),
        ];

const SBM_BP: &[ParamSpec] = &[
            req("n", Count),
            req("a", Real),
            req("b", Real),
            req("mode", Choice(MODES)),
            opt("seeds", Count, "1"),
            opt("init-scale", Real, "0.1"),
            opt("max-iters", Count, "200"),
            opt("tol", Real, "1e-6"),
        ];

const POPDYN: &[ParamSpec] = &[
            req("k", Real),
            req("eps", Real),
            req("pool", Count),
            req("iters", Count),
            opt("init", Real, "1e-2"),
        ];

// lambda or (a, b) are checked separately
const ORACLE_CHECK: &[ParamSpec] = &[
            req("n", Count),
            opt("lambda", Real, ""),
            opt("a", Real, ""),
            opt("b", Real, ""),
            opt("trials", Count, "1000"),
        ];

fn schema(command: Command) -> &'static [ParamSpec] {
    match command {
        Command::SeSweep => SE_SWEEP,
        Command::AmpRun | Command::AmpVsSe => AMP,
        Command::Landscape => LANDSCAPE,
        Command::Phases => PHASES,
        Command::SbmBp => SBM_BP,
        Command::Popdyn => POPDYN,
        Command::OracleCheck => ORACLE_CHECK,
    }
}

const GLOBAL_KEYS: &[&str] = &["seed", "out", "formats", "store-observation"];

/// Everything needed to run one command, with defaults filled in.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ExperimentConfig {
    pub command: Command,
    pub params: BTreeMap<String, ParamValue>,
    pub seed: SeedSpec,
    pub output_dir: PathBuf,
    pub formats: BTreeSet<Format>,
    pub store_observation: bool,
}

impl ExperimentConfig {
    pub fn real(&self, key: &str) -> f64 {
        match self.params.get(key) {
            Some(ParamValue::Real(v)) => *v,
            Some(ParamValue::Count(v)) => *v as f64,
            other => panic!("parameter {key} is not real: {other:?}"),
        }
    }

    pub fn real_opt(&self, key: &str) -> Option<f64> {
        match self.params.get(key) {
            Some(ParamValue::Real(v)) => Some(*v),
            _ => None,
        }
    }

    pub fn count(&self, key: &str) -> usize {
        match self.params.get(key) {
            Some(ParamValue::Count(v)) => *v as usize,
            other => panic!("parameter {key} is not a count: {other:?}"),
        }
    }

    pub fn flag(&self, key: &str) -> bool {
        match self.params.get(key) {
            Some(ParamValue::Flag(v)) => *v,
            other => panic!("parameter {key} is not a flag: {other:?}"),
        }
    }

    pub fn text(&self, key: &str) -> &str {
        match self.params.get(key) {
            Some(ParamValue::Text(v)) => v,
            other => panic!("parameter {key} is not text: {other:?}"),
        }
    }

    pub fn wants(&self, format: Format) -> bool {
        self.formats.contains(&format)
    }
}

#[derive(Debug, Parser)]
#[command(
    name = "spinglass",
    version,
    about = "Phase-transition experiments for spiked Wigner and block models"
)]
pub struct Cli {
    /// Master seed [env: SPINGLASS_SEED] [default: 0]
    #[arg(long, global = true)]
    pub seed: Option<u64>,
    /// Output directory [default: out]
    #[arg(long, global = true)]
    pub out: Option<PathBuf>,
    /// Comma-separated subset of csv,json,svg [default: csv,json]
    #[arg(long, global = true)]
    pub formats: Option<String>,
    /// Store full observations in instance records
    #[arg(long, global = true)]
    pub store_observation: bool,
    /// Worker threads (results do not depend on it)
    #[arg(long, global = true)]
    pub threads: Option<usize>,
    /// Flat key=value file; flags take precedence
    #[arg(long, global = true)]
    pub config: Option<PathBuf>,
    #[command(subcommand)]
    pub command: CommandArgs,
}

#[derive(Debug, Subcommand)]
pub enum CommandArgs {
    /// State-evolution fixed points over a lambda grid
    SeSweep(SeSweepArgs),
    /// AMP trajectories on spiked Wigner instances
    AmpRun(AmpArgs),
    /// Mean AMP overlap against the state-evolution prediction
    AmpVsSe(AmpArgs),
    /// Replica-symmetric free-energy curve F(q)
    Landscape(LandscapeArgs),
    /// Phase labels and thresholds over a lambda grid
    Phases(PhasesArgs),
    /// Belief propagation on block-model graphs
    SbmBp(SbmBpArgs),
    /// Population dynamics for the tree recursion
    Popdyn(PopdynArgs),
    /// Exact enumeration on a small instance
    OracleCheck(OracleArgs),
}

#[derive(Debug, Args)]
pub struct SeSweepArgs {
    #[arg(long)]
    lambda_min: Option<String>,
    #[arg(long)]
    lambda_max: Option<String>,
    #[arg(long)]
    step: Option<String>,
    #[arg(long)]
    gamma0: Option<String>,
    #[arg(long)]
    tol: Option<String>,
    #[arg(long)]
    max_iters: Option<String>,
}

#[derive(Debug, Args)]
pub struct AmpArgs {
    #[arg(long)]
    n: Option<String>,
    #[arg(long)]
    lambda: Option<String>,
    #[arg(long)]
    seeds: Option<String>,
    #[arg(long)]
    init_scale: Option<String>,
    #[arg(long)]
    max_iters: Option<String>,
    #[arg(long)]
    tol: Option<String>,
    #[arg(long)]
    onsager: Option<String>,
}

#[derive(Debug, Args)]
pub struct LandscapeArgs {
    #[arg(long)]
    lambda: Option<String>,
    #[arg(long)]
    grid_size: Option<String>,
}

#[derive(Debug, Args)]
pub struct PhasesArgs {
    #[arg(long)]
    lambda_min: Option<String>,
    #[arg(long)]
    lambda_max: Option<String>,
    #[arg(long)]
    step: Option<String>,
    #[arg(long)]
    grid_size: Option<String>,
}

#[derive(Debug, Args)]
pub struct SbmBpArgs {
    #[arg(long)]
    n: Option<String>,
    #[arg(long)]
    a: Option<String>,
    #[arg(long)]
    b: Option<String>,
    #[arg(long)]
    mode: Option<String>,
    #[arg(long)]
    seeds: Option<String>,
    #[arg(long)]
    init_scale: Option<String>,
    #[arg(long)]
    max_iters: Option<String>,
    #[arg(long)]
    tol: Option<String>,
}

#[derive(Debug, Args)]
pub struct PopdynArgs {
    #[arg(long)]
    k: Option<String>,
    #[arg(long)]
    eps: Option<String>,
    #[arg(long)]
    pool: Option<String>,
    #[arg(long)]
    iters: Option<String>,
    #[arg(long)]
    init: Option<String>,
}

#[derive(Debug, Args)]
pub struct OracleArgs {
    #[arg(long)]
    n: Option<String>,
    #[arg(long)]
    lambda: Option<String>,
    #[arg(long)]
    a: Option<String>,
    #[arg(long)]
    b: Option<String>,
    #[arg(long)]
    trials: Option<String>,
}

type Given = Vec<(&'static str, Option<String>)>;

impl CommandArgs {
    fn split(self) -> (Command, Given) {
        match self {
            CommandArgs::SeSweep(a) => (
                Command::SeSweep,
                vec![
                    ("lambda-min", a.lambda_min),
                    ("lambda-max", a.lambda_max),
                    ("step", a.step),
                    ("gamma0", a.gamma0),
                    ("tol", a.tol),
                    ("max-iters", a.max_iters),
                ],
            ),
            CommandArgs::AmpRun(a) => (Command::AmpRun, a.given()),
            CommandArgs::AmpVsSe(a) => (Command::AmpVsSe, a.given()),
            CommandArgs::Landscape(a) => (
                Command::Landscape,
                vec![("lambda", a.lambda), ("grid-size", a.grid_size)],
            ),
            CommandArgs::Phases(a) => (
                Command::Phases,
                vec![
                    ("lambda-min", a.lambda_min),
                    ("lambda-max", a.lambda_max),
                    ("step", a.step),
                    ("grid-size", a.grid_size),
                ],
            ),
            CommandArgs::SbmBp(a) => (
                Command::SbmBp,
                vec![
                    ("n", a.n),
                    ("a", a.a),
                    ("b", a.b),
                    ("mode", a.mode),
                    ("seeds", a.seeds),
                    ("init-scale", a.init_scale),
                    ("max-iters", a.max_iters),
                    ("tol", a.tol),
                ],
            ),
            CommandArgs::Popdyn(a) => (
                Command::Popdyn,
                vec![
                    ("k", a.k),
                    ("eps", a.eps),
                    ("pool", a.pool),
                    ("iters", a.iters),
                    ("init", a.init),
                ],
            ),
            CommandArgs::OracleCheck(a) => (
                Command::OracleCheck,
                vec![
                    ("n", a.n),
                    ("lambda", a.lambda),
                    ("a", a.a),
                    ("b", a.b),
                    ("trials", a.trials),
                ],
            ),
        }
    }
}

impl AmpArgs {
    fn given(self) -> Given {
        vec![
            ("n", self.n),
            ("lambda", self.lambda),
            ("seeds", self.seeds),
            ("init-scale", self.init_scale),
            ("max-iters", self.max_iters),
            ("tol", self.tol),
            ("onsager", self.onsager),
        ]
    }
}

/// Reads a flat `key = value` file. Blank lines and `#` comments are
/// skipped; a repeated key is an error.
pub fn read_config_file(path: &Path) -> Result<BTreeMap<String, String>, CliError> {
    let text = std::fs::read_to_string(path)
        .map_err(|e| CliError::Usage(format!("cannot read config file {}: {e}", path.display())))?;
    let mut out = BTreeMap::new();
    for (lineno, raw) in text.lines().enumerate() {
        let line = raw.trim();
        if line.is_empty() || line.starts_with('#') {
            continue;
        }
        let (key, value) = line.split_once('=').ok_or_else(|| {
            CliError::Usage(format!(
                "{}:{}: expected key=value, got {line:?}",
                path.display(),
                lineno + 1
            ))
        })?;
        let key = key.trim().to_string();
        if out.insert(key.clone(), value.trim().to_string()).is_some() {
            return Err(CliError::Usage(format!("{key}: given twice in config file")));
        }
    }
    Ok(out)
}

fn parse_value(key: &str, kind: Kind, raw: &str) -> Result<ParamValue, CliError> {
    let mismatch = |what: &str| CliError::Usage(format!("{key}: expected {what}, got {raw:?}"));
    match kind {
        Kind::Real => raw
            .parse::<f64>()
            .ok()
            .filter(|v| v.is_finite())
            .map(ParamValue::Real)
            .ok_or_else(|| mismatch("a finite real number")),
        Kind::Count => raw
            .parse::<u64>()
            .map(ParamValue::Count)
            .map_err(|_| mismatch("a nonnegative integer")),
        Kind::Flag => match raw {
            "true" => Ok(ParamValue::Flag(true)),
            "false" => Ok(ParamValue::Flag(false)),
            _ => Err(mismatch("true or false")),
        },
        Kind::Choice(options) => {
            if options.contains(&raw) {
                Ok(ParamValue::Text(raw.to_string()))
            } else {
                Err(mismatch(&format!("one of {}", options.join(", "))))
            }
        }
    }
}

/// Parses an argument list (program name first). Values come from flags,
/// then the config file (`file`, or `--config` when `file` is `None`), then
/// built-in defaults; the seed falls back to `SPINGLASS_SEED` before its
/// default of 0.
pub fn parse_config(args: &[String], file: Option<&Path>) -> Result<(ExperimentConfig, Option<usize>), CliError> {
    let cli = Cli::try_parse_from(args).map_err(|e| CliError::Clap(e.to_string(), e.exit_code()))?;
    let env_seed = std::env::var(SEED_ENV).ok();
    resolve(cli, file, env_seed.as_deref())
}

pub fn resolve(cli: Cli, file: Option<&Path>, env_seed: Option<&str>) -> Result<(ExperimentConfig, Option<usize>), CliError> {
    let file_path = file.map(Path::to_path_buf).or(cli.config.clone());
    let mut from_file = match &file_path {
        Some(p) => read_config_file(p)?,
        None => BTreeMap::new(),
    };
    let (command, given) = cli.command.split();
    let spec = schema(command);

    if let Some(bad) = from_file
        .keys()
        .find(|k| !GLOBAL_KEYS.contains(&k.as_str()) && !spec.iter().any(|p| p.name == k.as_str()))
    {
        return Err(CliError::Usage(format!(
            "{bad}: unknown key for {command}"
        )));
    }

    let mut params = BTreeMap::new();
    for p in spec {
        let flag_value = given.iter().find(|(k, _)| *k == p.name).and_then(|(_, v)| v.clone());
        let raw = flag_value.or_else(|| from_file.remove(p.name));
        match (raw, p.default) {
            (Some(r), _) => {
                params.insert(p.name.to_string(), parse_value(p.name, p.kind, &r)?);
            }
            (None, Some("")) => {}
            (None, Some(d)) => {
                params.insert(p.name.to_string(), parse_value(p.name, p.kind, d)?);
            }
            (None, None) => {
                return Err(CliError::Usage(format!(
                    "{}: missing required parameter for {command}",
                    p.name
                )))
            }
        }
    }
    if command == Command::OracleCheck {
        let has = |k: &str| params.contains_key(k);
        match (has("lambda"), has("a"), has("b")) {
            (true, false, false) | (false, true, true) => {}
            (false, false, false) => {
                return Err(CliError::Usage(
                    "lambda: oracle-check needs lambda, or a and b".into(),
                ))
            }
            (false, true, false) => return Err(CliError::Usage("b: missing required parameter".into())),
            (false, false, true) => return Err(CliError::Usage("a: missing required parameter".into())),
            _ => {
                return Err(CliError::Usage(
                    "lambda: give either lambda or a and b, not both".into(),
                ))
            }
        }
    }

    let seed = match (cli.seed, from_file.remove("seed"), env_seed) {
        (Some(s), _, _) => s,
        (None, Some(raw), _) => parse_seed("seed", &raw)?,
        (None, None, Some(raw)) => parse_seed(SEED_ENV, raw)?,
        (None, None, None) => 0,
    };
    let output_dir = cli
        .out
        .or_else(|| from_file.remove("out").map(PathBuf::from))
        .unwrap_or_else(|| PathBuf::from("out"));
    let formats_raw = cli
        .formats
        .or_else(|| from_file.remove("formats"))
        .unwrap_or_else(|| "csv,json".to_string());
    let formats = formats_raw
        .split(',')
        .filter(|s| !s.trim().is_empty())
        .map(Format::parse)
        .collect::<Result<BTreeSet<_>, _>>()?;
    if formats.is_empty() {
        return Err(CliError::Usage("formats: at least one format is required".into()));
    }
    let store_observation = if cli.store_observation {
        true
    } else {
        match from_file.remove("store-observation") {
            Some(raw) => match parse_value("store-observation", Kind::Flag, &raw)? {
                ParamValue::Flag(b) => b,
                _ => unreachable!(),
            },
            None => false,
        }
    };

    Ok((
        ExperimentConfig {
            command,
            params,
            seed: SeedSpec::new(seed, 0),
            output_dir,
            formats,
            store_observation,
        },
        cli.threads,
    ))
}

fn parse_seed(key: &str, raw: &str) -> Result<u64, CliError> {
    raw.trim()
        .parse::<u64>()
        .map_err(|_| CliError::Usage(format!("{key}: expected a 64-bit unsigned integer, got {raw:?}")))
}

/// `min, min + step, …` up to `max` (inclusive, with a small allowance for
/// rounding). Points are rounded to 12 decimals so that e.g. `1.0` is not
/// reported as `1.0000000000000002`.
pub fn lambda_grid(min: f64, max: f64, step: f64) -> Result<Vec<f64>, CliError> {
    if !(step > 0.0) || !(min > 0.0) || !(max >= min) {
        return Err(CliError::Usage(format!(
            "lambda-min: need 0 < lambda-min <= lambda-max and step > 0, got {min}, {max}, {step}"
        )));
    }
    let count = ((max - min) / step + 1e-9).floor() as usize + 1;
    Ok((0..count)
        .map(|i| ((min + i as f64 * step) * 1e12).round() / 1e12)
        .collect())
}

#[cfg(test)]
mod tests {
    use super::*;

    fn args(s: &str) -> Vec<String> {
        std::iter::once("spinglass".to_string())
            .chain(s.split_whitespace().map(String::from))
            .collect()
    }

    fn parse(s: &str, file: Option<&Path>) -> Result<ExperimentConfig, CliError> {
        let cli = Cli::try_parse_from(args(s)).map_err(|e| CliError::Clap(e.to_string(), e.exit_code()))?;
        resolve(cli, file, None).map(|(c, _)| c)
    }

    #[test]
    fn phases_flags_populate_config() {
        let c = parse("phases --lambda-min 0.2 --lambda-max 2.0 --step 0.05 --seed 7", None).unwrap();
        assert_eq!(c.command, Command::Phases);
        assert_eq!(c.seed, SeedSpec::new(7, 0));
        assert_eq!(c.real("lambda-min"), 0.2);
        assert_eq!(c.count("grid-size"), 512);
        assert_eq!(c.formats, BTreeSet::from([Format::Csv, Format::Json]));
    }

    #[test]
    fn flag_beats_file() {
        let dir = std::env::temp_dir().join(format!("spinglass-config-{}", std::process::id()));
        std::fs::create_dir_all(&dir).unwrap();
        let path = dir.join("run.cfg");
        std::fs::write(&path, "# sweep\nlambda = 1.1\ngrid-size = 64\nseed = 3\n").unwrap();
        let c = parse("landscape --lambda 1.5", Some(&path)).unwrap();
        assert_eq!(c.real("lambda"), 1.5);
        assert_eq!(c.count("grid-size"), 64);
        assert_eq!(c.seed.master_seed, 3);
        std::fs::remove_dir_all(&dir).unwrap();
    }

    #[test]
    fn missing_required_names_key() {
        let err = parse("amp-run --lambda 1.5 --seeds 2", None).unwrap_err();
        match err {
            CliError::Usage(m) => assert!(m.starts_with("n:"), "{m}"),
            other => panic!("{other:?}"),
        }
    }

    #[test]
    fn unknown_and_mistyped_keys_are_rejected() {
        let dir = std::env::temp_dir().join(format!("spinglass-config-bad-{}", std::process::id()));
        std::fs::create_dir_all(&dir).unwrap();
        let path = dir.join("bad.cfg");
        std::fs::write(&path, "lambda = 1.5\ncolour = blue\n").unwrap();
        match parse("landscape --grid-size 64", Some(&path)).unwrap_err() {
            CliError::Usage(m) => assert!(m.starts_with("colour"), "{m}"),
            other => panic!("{other:?}"),
        }
        match parse("landscape --lambda x --grid-size 64", None).unwrap_err() {
            CliError::Usage(m) => assert!(m.starts_with("lambda"), "{m}"),
            other => panic!("{other:?}"),
        }
        match parse("sbm-bp --n 10 --a 3 --b 1 --mode sideways", None).unwrap_err() {
            CliError::Usage(m) => assert!(m.starts_with("mode"), "{m}"),
            other => panic!("{other:?}"),
        }
        assert!(parse("landscape --lambda 1 --grid-size 64 --bogus 1", None).is_err());
        std::fs::remove_dir_all(&dir).unwrap();
    }

    #[test]
    fn env_seed_is_a_fallback() {
        let cli = Cli::try_parse_from(args("landscape --lambda 1 --grid-size 64")).unwrap();
        let (c, _) = resolve(cli, None, Some("99")).unwrap();
        assert_eq!(c.seed.master_seed, 99);
        let cli = Cli::try_parse_from(args("landscape --lambda 1 --grid-size 64 --seed 4")).unwrap();
        let (c, _) = resolve(cli, None, Some("99")).unwrap();
        assert_eq!(c.seed.master_seed, 4);
    }

    #[test]
    fn oracle_check_needs_one_model() {
        assert!(parse("oracle-check --n 8 --lambda 2", None).is_ok());
        assert!(parse("oracle-check --n 8 --a 3 --b 1", None).is_ok());
        assert!(parse("oracle-check --n 8", None).is_err());
        assert!(parse("oracle-check --n 8 --a 3", None).is_err());
        assert!(parse("oracle-check --n 8 --lambda 2 --a 3 --b 1", None).is_err());
    }

    #[test]
    fn grid_has_expected_points() {
        let g = lambda_grid(0.2, 2.0, 0.05).unwrap();
        assert_eq!(g.len(), 37);
        assert_eq!(g[16], 1.0);
        assert_eq!(*g.last().unwrap(), 2.0);
    }
}
