//! The `spinglass` experiment harness: config resolution, command dispatch
//! and CSV / JSON / SVG reports.

#![allow(clippy::neg_cmp_op_on_partial_ord)]

use std::io;
use std::path::{Path, PathBuf};

use serde_json::Value;
use thiserror::Error;

mod commands;
pub mod config;
pub mod report;
pub mod svg;

use config::{ExperimentConfig, Format};

#[derive(Debug, Error)]
pub enum CliError {
    /// A parameter is missing, malformed or out of range. The message
    /// starts with the offending key.
    #[error("{0}")]
    Usage(String),
    /// Rendered clap output with its exit code (0 for `--help`).
    #[error("{0}")]
    Clap(String, i32),
    #[error("{path}: {source}", path = .0.display(), source = .1)]
    Io(PathBuf, #[source] io::Error),
    /// An experiment failed; the message names the parameters involved.
    #[error("{0}")]
    Failure(String),
}

impl CliError {
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Usage(_) => 2,
            CliError::Clap(_, code) => *code,
            CliError::Io(..) | CliError::Failure(_) => 1,
        }
    }
}

/// Files written and summary lines produced by one command.
#[derive(Debug, Clone, PartialEq)]
pub struct RunOutput {
    pub files: Vec<PathBuf>,
    pub lines: Vec<String>,
}

fn write(path: PathBuf, text: &str, files: &mut Vec<PathBuf>) -> Result<(), CliError> {
    std::fs::write(&path, text).map_err(|e| CliError::Io(path.clone(), e))?;
    files.push(path);
    Ok(())
}

/// Runs one command and writes `<out>/<command>.{csv,json,svg}` for the
/// requested formats. Every file embeds the resolved config.
pub fn run(config: &ExperimentConfig) -> Result<RunOutput, CliError> {
    let report = commands::execute(config)?;
    let dir = &config.output_dir;
    std::fs::create_dir_all(dir).map_err(|e| CliError::Io(dir.clone(), e))?;
    let stem = config.command.name();
    let config_json = serde_json::to_value(config).expect("config serializes");
    let mut files = Vec::new();

    if config.wants(Format::Csv) {
        let header = [
            ("command", stem.to_string()),
            ("config", report::to_json_string(&config_json).trim_end().to_string()),
        ];
        write(dir.join(format!("{stem}.csv")), &report.table.to_csv(&header), &mut files)?;
    }
    if config.wants(Format::Json) {
        let mut doc = serde_json::Map::new();
        doc.insert("command".into(), Value::from(stem));
        doc.insert("config".into(), config_json.clone());
        doc.insert("rows".into(), report.table.to_json_rows());
        doc.extend(report.extra);
        write(
            dir.join(format!("{stem}.json")),
            &report::to_json_string(&Value::Object(doc)),
            &mut files,
        )?;
        for (suffix, value) in &report.attachments {
            write(
                dir.join(format!("{stem}.{suffix}.json")),
                &report::to_json_string(value),
                &mut files,
            )?;
        }
    }
    if config.wants(Format::Svg) {
        let plot = &report.plot;
        let path = dir.join(format!("{stem}.svg"));
        svg::emit_svg(&plot.table, plot.x, &plot.ys, &plot.title, &path)?;
        files.push(path);
    }
    Ok(RunOutput {
        files,
        lines: report.lines,
    })
}

/// Parses `args` (program name first), runs the command on a pool of the
/// requested size, and prints summary lines to stdout.
pub fn run_args(args: &[String], file: Option<&Path>) -> Result<RunOutput, CliError> {
    let (config, threads) = config::parse_config(args, file)?;
    let mut builder = rayon::ThreadPoolBuilder::new();
    if let Some(t) = threads {
        builder = builder.num_threads(t);
    }
    let pool = builder
        .build()
        .map_err(|e| CliError::Usage(format!("threads: {e}")))?;
    let output = pool.install(|| run(&config))?;
    for line in &output.lines {
        println!("{line}");
    }
    Ok(output)
}

/// Entry point for the binary; returns the process exit code.
pub fn main_with_args(args: &[String]) -> i32 {
    match run_args(args, None) {
        Ok(_) => 0,
        Err(CliError::Clap(text, 0)) => {
            print!("{text}");
            0
        }
        Err(CliError::Clap(text, code)) => {
            eprint!("{text}");
            code
        }
        Err(e) => {
            eprintln!("error: {e}");
            e.exit_code()
        }
    }
}
