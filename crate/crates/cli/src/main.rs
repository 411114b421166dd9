//! `vtac`: compile matrix jobs and CNNs to VTA binaries, simulate them and
//! check the results against the golden model.
//!
//! Exit codes: 0 ok, 1 verification failure, 2 input error, 3 missing
//! artifact, 4 internal error.

mod artifacts;
mod manifest;

use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{anyhow, Context};
use clap::{Parser, Subcommand};

#[derive(Parser)]
#[command(name = "vtac", version, about = "Stand-alone VTA compiler, simulator and verifier")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Compile a manifest into binaries, a DRAM layout and the expected output.
    Compile {
        manifest: PathBuf,
        #[arg(short, long)]
        out: PathBuf,
    },
    /// Run compiled binaries on the functional simulator.
    Run {
        dir: PathBuf,
        /// Write the executed instruction trace to this file.
        #[arg(long)]
        trace: Option<PathBuf>,
        /// Fail on any dependency-token violation.
        #[arg(long)]
        strict_deps: bool,
    },
    /// Compare out.bin against expected_out.bin.
    Verify { dir: PathBuf },
    /// List instructions and UOPs of a compiled directory or a binary file.
    Disasm { path: PathBuf },
    /// Show the DRAM layout and the first bytes of every region.
    Inspect { dir: PathBuf },
}

/// An error with the exit code it maps to.
#[derive(Debug)]
pub struct Failure {
    pub code: u8,
    pub error: anyhow::Error,
}

impl Failure {
    pub fn input(error: impl Into<anyhow::Error>) -> Self {
        Failure { code: 2, error: error.into() }
    }

    pub fn missing(path: &Path) -> Self {
        Failure { code: 3, error: anyhow!("missing artifact {}", path.display()) }
    }

    pub fn internal(error: impl Into<anyhow::Error>) -> Self {
        Failure { code: 4, error: error.into() }
    }

    /// Pipeline errors caused by the job itself are input errors.
    pub fn pipeline(error: impl Into<vta_core::Error>) -> Self {
        let error: vta_core::Error = error.into();
        let stage = error.stage();
        let code = match stage {
            "config" | "data-definition" | "operations-definition" | "tensor-front-end" => 2,
            _ => 4,
        };
        Failure { code, error: anyhow!("{stage} stage failed: {error}") }
    }
}

pub type CmdResult = Result<u8, Failure>;

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return ExitCode::from(if e.use_stderr() { 2 } else { 0 });
        }
    };
    let result = match &cli.command {
        Command::Compile { manifest, out } => artifacts::compile(manifest, out),
        Command::Run { dir, trace, strict_deps } => artifacts::run(dir, trace.as_deref(), *strict_deps),
        Command::Verify { dir } => artifacts::verify(dir),
        Command::Disasm { path } => artifacts::disasm(path),
        Command::Inspect { dir } => artifacts::inspect(dir),
    };
    match result {
        Ok(code) => ExitCode::from(code),
        Err(f) => {
            eprintln!("error: {:#}", f.error);
            ExitCode::from(f.code)
        }
    }
}

/// Reads a required artifact, mapping absence to exit code 3.
pub fn read_artifact(path: &Path) -> Result<Vec<u8>, Failure> {
    match std::fs::read(path) {
        Ok(b) => Ok(b),
        Err(e) if e.kind() == std::io::ErrorKind::NotFound => Err(Failure::missing(path)),
        Err(e) => Err(Failure::internal(anyhow::Error::new(e).context(format!("reading {}", path.display())))),
    }
}

pub fn write_file(path: &Path, bytes: &[u8]) -> Result<(), Failure> {
    std::fs::write(path, bytes).with_context(|| format!("writing {}", path.display())).map_err(Failure::internal)
}
