use std::fs;
use std::path::PathBuf;

use clap::Subcommand;
use ssi_core::harness::{MetricsReport, Scenario, Simulation};
use ssi_core::transport::{payload_capacity, LinkProfile};

use crate::error::{CliError, Result};

#[derive(Subcommand, Debug)]
pub enum SimCommand {
    /// Run a scenario file and print a summary.
    Run {
        scenario: PathBuf,
        /// Override the scenario's seed.
        #[arg(long)]
        seed: Option<u64>,
        /// Write the metrics report here.
        #[arg(long)]
        report: Option<PathBuf>,
        /// Fail unless every step meets its `expect`.
        #[arg(long)]
        strict: bool,
    },
    /// List the built-in link profiles.
    Profiles,
}

pub fn run(cmd: SimCommand) -> Result<()> {
    match cmd {
        SimCommand::Run {
            scenario,
            seed,
            report,
            strict,
        } => {
            let bytes = fs::read(&scenario)?;
            let parsed = Scenario::from_bytes(&bytes)
                .map_err(|e| CliError::validation(format!("{}: {e}", scenario.display())))?;
            let seed = seed.unwrap_or(parsed.seed);
            let mut sim = Simulation::with_seed(parsed, seed)
                .map_err(|e| CliError::validation(format!("{}: {e}", scenario.display())))?;
            let metrics = sim.run();
            print_summary(&metrics);
            if let Some(path) = report {
                fs::write(path, metrics.to_json())?;
            }
            if strict {
                check_strict(&metrics)?;
            }
            Ok(())
        }
        SimCommand::Profiles => {
            println!("{:<10} {:>6} {:>8} {:>12}", "profile", "mtu", "payload", "frames/500B");
            for name in LinkProfile::BUILTIN {
                let p = LinkProfile::builtin(name).expect("built-in");
                let capacity = payload_capacity(p.mtu).expect("built-in mtu");
                println!("{:<10} {:>6} {:>8} {:>12}", p.name, p.mtu, capacity, 500usize.div_ceil(capacity));
            }
            Ok(())
        }
    }
}

fn print_summary(report: &MetricsReport) {
    println!("seed {}", report.seed);
    for (name, n) in &report.document_sizes.ddo_bytes {
        println!("ddo  {name:<16} {n:>6} bytes");
    }
    for (name, n) in &report.document_sizes.vc_bytes {
        println!("vc   {name:<16} {n:>6} bytes");
    }
    println!(
        "{:>4}  {:<28} {:<34} {:>4} {:>7} {:>6} {:>3} {:>5}  expect",
        "step", "action", "outcome", "msgs", "bytes", "frames", "rt", "retx"
    );
    for s in &report.steps {
        let expect = match (&s.expect, s.matched) {
            (Some(e), Some(true)) => format!("ok ({e})"),
            (Some(e), _) => format!("MISMATCH ({e})"),
            (None, _) => "-".into(),
        };
        println!(
            "{:>4}  {:<28} {:<34} {:>4} {:>7} {:>6} {:>3} {:>5}  {}",
            s.index,
            s.action,
            s.outcome,
            s.messages,
            s.bytes_sent,
            s.frames,
            s.round_trips.map_or("-".into(), |r| r.to_string()),
            s.retransmissions,
            expect
        );
    }
}

/// Transport failures take precedence: they say the link, not the
/// protocol, was the problem.
fn check_strict(report: &MetricsReport) -> Result<()> {
    let missed: Vec<_> = report.steps.iter().filter(|s| s.matched == Some(false)).collect();
    if missed.is_empty() {
        return Ok(());
    }
    let detail = missed
        .iter()
        .map(|s| format!("step {} expected {} got {}", s.index, s.expect.as_deref().unwrap_or("?"), s.outcome))
        .collect::<Vec<_>>()
        .join("; ");
    if missed.iter().any(|s| s.outcome.starts_with("transport_error")) {
        Err(CliError::transport(detail))
    } else {
        Err(CliError::verification(detail))
    }
}
