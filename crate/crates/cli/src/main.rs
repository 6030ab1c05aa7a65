// `!(x > 0.0)` is used deliberately so that NaN fails validation.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

mod commands;
mod config;

use std::io::Write;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Parser, Subcommand};
use serde::Serialize;

use config::RunConfig;

#[derive(Parser)]
#[command(
    name = "latent-langevin",
    version,
    about = "Posterior sampling for latent Gaussian generators"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
    /// TOML run configuration.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Overrides `seed` in the configuration.
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Output directory for reports and data.
    #[arg(long, global = true, default_value = "out")]
    out: PathBuf,
    /// Worker threads for chains and trials.
    #[arg(long, global = true)]
    jobs: Option<usize>,
}

#[derive(Subcommand, Clone, Copy)]
enum Command {
    /// Gradient-descent inversion of x; writes trace.csv.
    Invert,
    /// Full posterior pipeline; writes samples.csv and TV / exit reports.
    Sample,
    /// Compiles the pipeline into an encoder and self-tests it.
    Compile,
    /// Runs the verification experiments on the configured problem.
    Verify,
    /// Toy sign-generator demo.
    Lowerbound,
}

impl Command {
    fn name(self) -> &'static str {
        match self {
            Command::Invert => "invert",
            Command::Sample => "sample",
            Command::Compile => "compile",
            Command::Verify => "verify",
            Command::Lowerbound => "lowerbound",
        }
    }
}

#[derive(Serialize)]
struct Versions {
    #[serde(rename = "latent-langevin")]
    core: &'static str,
    cli: &'static str,
}

const VERSIONS: Versions = Versions {
    core: latent_langevin::VERSION,
    cli: env!("CARGO_PKG_VERSION"),
};

#[derive(Serialize)]
struct Report<'a, T> {
    command: &'static str,
    status: &'static str,
    versions: Versions,
    config_hash: String,
    seed: u64,
    config: &'a RunConfig,
    result: T,
}

#[derive(Serialize)]
struct ErrorReport<'a> {
    command: &'static str,
    status: &'static str,
    versions: Versions,
    code: &'a str,
    field: Option<&'a str>,
    message: &'a str,
}

fn emit_error(command: Command, out: &Path, code: &str, field: Option<&str>, message: &str) {
    let r = ErrorReport {
        command: command.name(),
        status: "error",
        versions: VERSIONS,
        code,
        field,
        message,
    };
    let text = serde_json::to_string_pretty(&r).expect("serializable");
    eprintln!("{text}");
    if std::fs::create_dir_all(out).is_ok() {
        let _ = std::fs::write(out.join("error.json"), format!("{text}\n"));
    }
}

fn write_report<T: Serialize>(
    command: Command,
    cfg: &RunConfig,
    out: &Path,
    ok: bool,
    result: T,
) -> std::io::Result<()> {
    let r = Report {
        command: command.name(),
        status: if ok { "ok" } else { "failed" },
        versions: VERSIONS,
        config_hash: cfg.hash(),
        seed: cfg.seed,
        config: cfg,
        result,
    };
    let text = serde_json::to_string_pretty(&r).expect("serializable");
    let path = out.join("report.json");
    std::fs::write(&path, format!("{text}\n"))?;
    let line = serde_json::json!({"command": r.command, "status": r.status, "report": path.display().to_string()});
    let _ = writeln!(std::io::stdout(), "{line}");
    Ok(())
}

fn run(cli: &Cli) -> Result<bool, (String, Option<String>, String)> {
    let path = cli.config.as_ref().ok_or_else(|| {
        (
            "config".to_string(),
            Some("config".to_string()),
            "--config PATH is required".to_string(),
        )
    })?;
    let mut cfg = RunConfig::load(path).map_err(|e| ("config".to_string(), e.field, e.message))?;
    if let Some(s) = cli.seed {
        cfg.seed = s;
    }
    if let Some(j) = cli.jobs {
        if j == 0 {
            return Err((
                "config".into(),
                Some("jobs".into()),
                "--jobs must be at least 1".into(),
            ));
        }
        // A second initialization only happens in tests; ignore it.
        let _ = rayon::ThreadPoolBuilder::new()
            .num_threads(j)
            .build_global();
    }
    std::fs::create_dir_all(&cli.out).map_err(|e| ("io".to_string(), None, e.to_string()))?;
    let lib = |e: latent_langevin::Error| {
        let field = match &e {
            latent_langevin::Error::InvalidArgument { name, .. } => Some(name.to_string()),
            _ => None,
        };
        (e.code().to_string(), field, e.to_string())
    };
    let io = |e: std::io::Error| ("io".to_string(), None, e.to_string());
    let out = cli.out.as_path();
    match cli.command {
        Command::Invert => {
            let o = commands::invert(&cfg, out).map_err(lib)?;
            write_report(cli.command, &cfg, out, o.ok, o.body).map_err(io)?;
            Ok(o.ok)
        }
        Command::Sample => {
            let o = commands::sample(&cfg, out).map_err(lib)?;
            write_report(cli.command, &cfg, out, o.ok, o.body).map_err(io)?;
            Ok(o.ok)
        }
        Command::Compile => {
            let o = commands::compile(&cfg, out).map_err(lib)?;
            write_report(cli.command, &cfg, out, o.ok, o.body).map_err(io)?;
            Ok(o.ok)
        }
        Command::Verify => {
            let o = commands::verify(&cfg, out).map_err(lib)?;
            write_report(cli.command, &cfg, out, o.ok, o.body).map_err(io)?;
            Ok(o.ok)
        }
        Command::Lowerbound => {
            let o = commands::lowerbound(&cfg, out).map_err(lib)?;
            write_report(cli.command, &cfg, out, o.ok, o.body).map_err(io)?;
            Ok(o.ok)
        }
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(&cli) {
        Ok(true) => ExitCode::SUCCESS,
        Ok(false) => ExitCode::from(1),
        Err((code, field, message)) => {
            emit_error(cli.command, &cli.out, &code, field.as_deref(), &message);
            ExitCode::from(if code == "config" { 2 } else { 1 })
        }
    }
}
