//! `ssi`: identities, credentials, wallets and link simulations for
//! constrained devices.
//!
//! Exit status: 0 success, 1 usage or I/O error, 2 validation error,
//! 3 verification failure, 4 transport failure.

mod commands;
mod error;
mod store;

use std::process::ExitCode;

use clap::{Parser, Subcommand};

use commands::identity::{DdocCommand, DidCommand};
use commands::keygen::KeygenArgs;
use commands::sim::SimCommand;
use commands::vc::VcCommand;
use commands::wallet::WalletCommand;

#[derive(Parser, Debug)]
#[command(name = "ssi", version, about = "Self-sovereign identity for machine-to-machine devices")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Generate a key pair.
    Keygen(KeygenArgs),
    /// Create and resolve DIDs.
    #[command(subcommand)]
    Did(DidCommand),
    /// Inspect DID Documents and rotate keys.
    #[command(subcommand)]
    Ddoc(DdocCommand),
    /// Issue, verify, present and revoke credentials.
    #[command(subcommand)]
    Vc(VcCommand),
    /// Manage encrypted wallets.
    #[command(subcommand)]
    Wallet(WalletCommand),
    /// Run scenarios over simulated links.
    #[command(subcommand)]
    Sim(SimCommand),
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let result = match cli.command {
        Command::Keygen(args) => commands::keygen::run(args),
        Command::Did(cmd) => commands::identity::run_did(cmd),
        Command::Ddoc(cmd) => commands::identity::run_ddoc(cmd),
        Command::Vc(cmd) => commands::vc::run(cmd),
        Command::Wallet(cmd) => commands::wallet::run(cmd),
        Command::Sim(cmd) => commands::sim::run(cmd),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => e.report(),
    }
}
