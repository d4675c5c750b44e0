use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};
use log::{error, info};
use twistmetric::cli_io::{run, RunConfig, RunError};

/// Harmonic metrics with prescribed poles on flat bundles.
#[derive(Parser, Debug)]
#[command(name = "twistmetric", version)]
struct Cli {
    /// Run configuration (TOML).
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Output directory; defaults to `output.dir` of the configuration.
    #[arg(long, global = true)]
    out: Option<PathBuf>,
    /// Worker threads for the solver (0 = all cores).
    #[arg(long, global = true, default_value_t = 0)]
    threads: usize,
    #[arg(long, global = true, default_value = "info")]
    log_level: log::LevelFilter,
    #[command(subcommand)]
    verb: Verb,
}

#[derive(Subcommand, Debug)]
enum Verb {
    /// Check the configuration and build the grid.
    Validate,
    /// Minimize, verify and write all artifacts.
    Solve,
    /// Verify a stored field dump.
    Verify,
    /// Compare with the closed-form scalar oracle at two grid levels.
    OracleCompare,
    /// Write SVG heatmaps of a stored field dump.
    Plot,
}

fn execute(cli: &Cli) -> Result<(), RunError> {
    let path = cli.config.as_deref().ok_or_else(|| {
        RunError::Config(twistmetric::Error::Config("--config is required".into()))
    })?;
    let cfg = RunConfig::load(path).map_err(RunError::Config)?;
    let out = cli.out.clone().unwrap_or_else(|| cfg.output.dir.clone());
    match cli.verb {
        Verb::Validate => {
            let (s, _) = run::validate(&cfg)?;
            println!(
                "ok: rank {}, {} punctures, {} nodes, {} triangles, {} negative edges",
                s.rank, s.punctures, s.nodes, s.triangles, s.negative_edges
            );
        }
        Verb::Solve => {
            let rep = run::run(&cfg, &out)?;
            println!(
                "ok: verification passed (relative holomorphy residual {:.3e}); artifacts in {}",
                rep.holomorphy_relative,
                out.display()
            );
        }
        Verb::Verify => {
            let rep = run::verify(&cfg, &out)?;
            println!(
                "ok: verification passed (max coefficient error {:.3e})",
                rep.asymptotics.max_error()
            );
        }
        Verb::OracleCompare => {
            let name = path
                .file_stem()
                .map_or("config".into(), |s| s.to_string_lossy().into_owned());
            let cmp = run::oracle_compare(&cfg, &name)?;
            std::fs::create_dir_all(&out).map_err(|e| RunError::Io(e.into()))?;
            twistmetric::cli_io::io::write_json(&out.join("oracle_compare.json"), &cmp)
                .map_err(RunError::Io)?;
            println!("{}", cmp.line());
            if !cmp.pass {
                return Err(RunError::Verification(cmp.line()));
            }
        }
        Verb::Plot => {
            for p in run::plot(&cfg, &out)? {
                info!("wrote {}", p.display());
            }
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    env_logger::Builder::new()
        .filter_level(cli.log_level)
        .init();
    if cli.threads > 0 {
        if let Err(e) = rayon::ThreadPoolBuilder::new()
            .num_threads(cli.threads)
            .build_global()
        {
            error!("thread pool: {e}");
        }
    }
    match execute(&cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
