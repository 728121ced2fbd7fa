#![allow(clippy::neg_cmp_op_on_partial_ord)]

mod config;
mod experiment;
mod report;

use anyhow::{bail, Context, Result};
use clap::{Args, Parser, Subcommand};
use config::{ExperimentConfig, ValidationErrors, PRESETS};
use report::{compare_report, comparison_csv, comparison_table, FitReport};
use serde::Serialize;
use sha2::{Digest, Sha256};
use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

const MANIFEST: &str = "manifest.json";
const RESOLVED_CONFIG: &str = "config.toml";
const COMPARISON: &str = "comparison.csv";

/// Simulate, correlate and fit single-molecule single-photon source experiments.
#[derive(Parser)]
#[command(name = "zplsim", version)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Generate raw data: time tags, count-rate points, images or spectra.
    Simulate(Common),
    /// Build the coincidence histogram from simulated time tags.
    Correlate(Common),
    /// Fit the model for the experiment kind and write the fit report.
    Fit(Common),
    /// Simulate a confocal scan image through the solid immersion lens.
    Scan(Common),
    /// Compare the fit report with the config's expected ranges.
    Report(Common),
    /// Every stage in order, then the report.
    Run(Common),
    /// List the built-in presets, or print one.
    Presets { name: Option<String> },
}

#[derive(Args)]
struct Common {
    /// Experiment config (TOML).
    #[arg(long, conflicts_with = "preset", required_unless_present = "preset")]
    config: Option<PathBuf>,
    /// Built-in preset name.
    #[arg(long)]
    preset: Option<String>,
    /// Overrides the config seed.
    #[arg(long)]
    seed: Option<u64>,
    /// Output directory; defaults to the config's `output`, then `out/<kind>`.
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Serialize)]
struct Manifest {
    tool: &'static str,
    version: &'static str,
    kind: &'static str,
    seed: u64,
    config_sha256: String,
    artifacts: BTreeMap<String, String>,
}

fn sha256_hex(bytes: &[u8]) -> String {
    Sha256::digest(bytes)
        .iter()
        .map(|b| format!("{b:02x}"))
        .collect()
}

struct Session {
    cfg: ExperimentConfig,
    dir: PathBuf,
}

impl Session {
    fn open(c: &Common) -> Result<Self> {
        let text = match (&c.config, &c.preset) {
            (Some(path), _) => fs::read_to_string(path)
                .with_context(|| format!("reading config {}", path.display()))?,
            (None, Some(name)) => config::preset(name)
                .with_context(|| {
                    let names: Vec<_> = PRESETS.iter().map(|(n, _)| *n).collect();
                    format!("unknown preset `{name}`; available: {}", names.join(", "))
                })?
                .to_string(),
            (None, None) => bail!("one of --config and --preset is required"),
        };
        let mut cfg = ExperimentConfig::from_toml(&text)?;
        if c.seed.is_some() {
            cfg.seed = c.seed;
        }
        cfg.validate()?;
        let dir = c
            .out
            .clone()
            .or_else(|| cfg.output.clone())
            .unwrap_or_else(|| Path::new("out").join(cfg.kind.name()));
        fs::create_dir_all(&dir).with_context(|| format!("creating {}", dir.display()))?;
        cfg.output = None;
        Ok(Session { cfg, dir })
    }

    /// Records the resolved config and the hashes of every artifact present.
    fn write_manifest(&self) -> Result<()> {
        let resolved = self.cfg.to_toml();
        fs::write(self.dir.join(RESOLVED_CONFIG), &resolved)?;
        let mut artifacts = BTreeMap::new();
        let mut entries: Vec<_> = fs::read_dir(&self.dir)?.collect::<Result<_, _>>()?;
        entries.sort_by_key(|e| e.file_name());
        for e in entries {
            let name = e.file_name().to_string_lossy().into_owned();
            if name == MANIFEST || !e.file_type()?.is_file() {
                continue;
            }
            artifacts.insert(name, sha256_hex(&fs::read(e.path())?));
        }
        let manifest = Manifest {
            tool: "zplsim",
            version: env!("CARGO_PKG_VERSION"),
            kind: self.cfg.kind.name(),
            seed: self.cfg.seed(),
            config_sha256: sha256_hex(resolved.as_bytes()),
            artifacts,
        };
        fs::write(
            self.dir.join(MANIFEST),
            serde_json::to_string_pretty(&manifest)? + "\n",
        )?;
        Ok(())
    }
}

fn announce(paths: &[PathBuf]) {
    for p in paths {
        println!("wrote {}", p.display());
    }
}

/// Returns whether every expectation passed.
fn report(s: &Session) -> Result<bool> {
    let path = s.dir.join(experiment::REPORT_JSON);
    let text = fs::read_to_string(&path)
        .with_context(|| format!("reading {} (run `fit` first)", path.display()))?;
    let fit: FitReport =
        serde_json::from_str(&text).with_context(|| format!("parsing {}", path.display()))?;
    let rows = compare_report(&fit, &s.cfg.expect);
    fs::write(s.dir.join(COMPARISON), comparison_csv(&rows))?;
    print!("{}", comparison_table(&rows));
    let passed = rows.iter().filter(|r| r.pass).count();
    println!("{passed} of {} expectations met", rows.len());
    Ok(passed == rows.len())
}

fn run(cli: Cli) -> Result<ExitCode> {
    let common = match &cli.command {
        Command::Presets { name: Some(name) } => {
            let text = config::preset(name).with_context(|| format!("unknown preset `{name}`"))?;
            print!("{text}");
            return Ok(ExitCode::SUCCESS);
        }
        Command::Presets { name: None } => {
            for (name, _) in PRESETS {
                println!("{name}");
            }
            return Ok(ExitCode::SUCCESS);
        }
        Command::Simulate(c)
        | Command::Correlate(c)
        | Command::Fit(c)
        | Command::Scan(c)
        | Command::Report(c)
        | Command::Run(c) => c,
    };
    let s = Session::open(common)?;
    let mut ok = true;
    match &cli.command {
        Command::Simulate(_) => announce(&experiment::simulate(&s.cfg, &s.dir)?),
        Command::Correlate(_) => announce(&experiment::correlate(&s.cfg, &s.dir)?),
        Command::Fit(_) => {
            let (r, paths) = experiment::fit(&s.cfg, &s.dir)?;
            print!("{}", r.to_text());
            announce(&paths);
        }
        Command::Scan(_) => announce(&experiment::scan(&s.cfg, &s.dir)?),
        Command::Report(_) => ok = report(&s)?,
        Command::Run(_) => {
            announce(&experiment::simulate(&s.cfg, &s.dir)?);
            if matches!(s.cfg.kind, config::Kind::CwG2 | config::Kind::PulsedG2) {
                announce(&experiment::correlate(&s.cfg, &s.dir)?);
            }
            let (r, paths) = experiment::fit(&s.cfg, &s.dir)?;
            print!("{}", r.to_text());
            announce(&paths);
            ok = report(&s)?;
        }
        Command::Presets { .. } => unreachable!(),
    }
    s.write_manifest()?;
    Ok(if ok {
        ExitCode::SUCCESS
    } else {
        ExitCode::from(3)
    })
}

fn main() -> ExitCode {
    match run(Cli::parse()) {
        Ok(code) => code,
        Err(e) => {
            eprintln!("error: {e:#}");
            if e.downcast_ref::<ValidationErrors>().is_some() {
                ExitCode::from(2)
            } else {
                ExitCode::from(1)
            }
        }
    }
}
