use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::time::Instant;

use clap::{Args, Parser, Subcommand};
use omnisurf::harness::{self, ExperimentKind, ExperimentOptions, ExperimentSpec};
use omnisurf::Error;

/// Seeded link-level experiments for intelligent omni-surfaces.
///
/// Every run writes CSV files opening with a `#` header that records the
/// resolved configuration and seeds. Exit codes: 0 success, 1 configuration
/// error, 2 numerical failure, 3 infeasible instance.
#[derive(Parser, Debug)]
#[command(name = "omnisurf", version)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Steer the surface toward a direction and scan its beam pattern.
    Pattern(Common),
    /// CSI-known hybrid beamforming per seed.
    Hybrid(Common),
    /// Codebook beam training against the CSI-known optimum.
    Train(Common),
    /// Two-AP negotiation with baselines and the interference CDF.
    Multicell(Common),
    /// Grouped channel estimation error per seed.
    Estimate(Common),
    /// Omni, reflective-only, refractive-only and no surface.
    Compare(Common),
    /// Rate map of one probe user over a planar grid.
    Coverage(Common),
}

#[derive(Args, Debug)]
struct Common {
    /// Scenario file, or `canonical:<name>` for a shipped scenario.
    #[arg(long, short)]
    config: String,
    /// A single seed.
    #[arg(long, conflicts_with = "seeds")]
    seed: Option<u64>,
    /// Seed list such as `0..50` or `1,4,9` or `0..10,20`.
    #[arg(long)]
    seeds: Option<String>,
    /// Main output file; companions are written next to it.
    #[arg(long, short)]
    out: Option<PathBuf>,
    /// Suppress progress messages.
    #[arg(long, short)]
    quiet: bool,
    /// Print the wall-clock time of the run.
    #[arg(long)]
    timing: bool,
}

fn parse_seeds(text: &str) -> Result<Vec<u64>, Error> {
    let bad = |msg: String| Error::Config { key: "seeds".into(), line: None, msg };
    let mut out = Vec::new();
    for part in text.split(',').map(str::trim).filter(|p| !p.is_empty()) {
        let num = |s: &str| s.trim().parse::<u64>().map_err(|e| bad(format!("`{s}`: {e}")));
        match part.split_once("..") {
            Some((a, b)) => {
                let (a, b) = (num(a)?, num(b)?);
                if b <= a {
                    return Err(bad(format!("empty range `{part}`")));
                }
                out.extend(a..b);
            }
            None => out.push(num(part)?),
        }
    }
    if out.is_empty() {
        return Err(bad("no seeds given".into()));
    }
    Ok(out)
}

fn load(config: &str) -> Result<harness::ConfigFile, Error> {
    match config.strip_prefix("canonical:") {
        Some(name) => harness::parse_config(harness::canonical_text(name)?, None),
        None => harness::load_config(Path::new(config)),
    }
}

fn execute(kind: ExperimentKind, args: Common) -> Result<(), Error> {
    let start = Instant::now();
    let file = load(&args.config)?;
    let seeds = match (args.seed, &args.seeds) {
        (Some(s), _) => vec![s],
        (None, Some(list)) => parse_seeds(list)?,
        (None, None) => vec![0],
    };
    let spec = ExperimentSpec {
        kind,
        scenario: file.scenario,
        options: file.experiment.unwrap_or_else(ExperimentOptions::default),
        seeds,
    };
    let outputs = harness::run(&spec)?;
    let main = args
        .out
        .unwrap_or_else(|| PathBuf::from(format!("{}.csv", kind.as_str())));
    for o in &outputs {
        let path = o.path(&main);
        if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
            std::fs::create_dir_all(dir).map_err(|e| io_error(dir, e))?;
        }
        std::fs::write(&path, &o.contents).map_err(|e| io_error(&path, e))?;
        if !args.quiet {
            eprintln!("wrote {}", path.display());
        }
    }
    if args.timing {
        eprintln!("{}: {:.3} s", kind.as_str(), start.elapsed().as_secs_f64());
    }
    Ok(())
}

fn io_error(path: &Path, e: std::io::Error) -> Error {
    Error::Io { path: path.display().to_string(), msg: e.to_string() }
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            let code = if e.use_stderr() { 1 } else { 0 };
            let _ = e.print();
            return ExitCode::from(code);
        }
    };
    let (kind, args) = match cli.command {
        Command::Pattern(a) => (ExperimentKind::Pattern, a),
        Command::Hybrid(a) => (ExperimentKind::Hybrid, a),
        Command::Train(a) => (ExperimentKind::Train, a),
        Command::Multicell(a) => (ExperimentKind::Multicell, a),
        Command::Estimate(a) => (ExperimentKind::Estimate, a),
        Command::Compare(a) => (ExperimentKind::Compare, a),
        Command::Coverage(a) => (ExperimentKind::Coverage, a),
    };
    match execute(kind, args) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn seed_lists() {
        assert_eq!(parse_seeds("0..3").unwrap(), vec![0, 1, 2]);
        assert_eq!(parse_seeds("4, 1,0..2").unwrap(), vec![4, 1, 0, 1]);
        assert!(parse_seeds("3..3").is_err());
        assert!(parse_seeds("x").is_err());
        assert!(parse_seeds("").is_err());
    }
}
