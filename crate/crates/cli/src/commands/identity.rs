use std::path::PathBuf;

use clap::{Args, Subcommand};
use ssi_core::identity::{validate_document, Did, ServiceEndpoint, PEER_METHOD, REGISTRY_METHOD};
use ssi_core::resolver::Resolve;
use ssi_core::wallet::Wallet;

use crate::error::{CliError, Result};
use crate::store::{now, pretty, read_document, resolver, write_output, RegistryArgs, WalletArgs};

#[derive(Args, Debug)]
pub struct CreateArgs {
    #[command(flatten)]
    pub wallet: WalletArgs,
    #[command(flatten)]
    pub registry: RegistryArgs,
    #[arg(long, default_value = PEER_METHOD, value_parser = [PEER_METHOD, REGISTRY_METHOD])]
    pub method: String,
    /// Service endpoint address; repeatable.
    #[arg(long = "endpoint")]
    pub endpoints: Vec<String>,
}

/// Creates a wallet holding a fresh identity and registers it if needed.
pub fn create(args: CreateArgs) -> Result<Did> {
    args.wallet.passphrase()?;
    if args.method == REGISTRY_METHOD {
        args.registry.require()?;
    }
    let endpoints = args
        .endpoints
        .iter()
        .enumerate()
        .map(|(i, address)| ServiceEndpoint {
            endpoint_id: format!("link-{i}"),
            kind: "sim-link".into(),
            address: address.clone(),
        })
        .collect();
    let w = Wallet::create_identity(&args.method, endpoints, &mut rand::thread_rng())
        .map_err(|e| CliError::validation(e.to_string()))?;
    if args.method == REGISTRY_METHOD {
        let registry = args.registry.load()?;
        registry
            .register(w.document(), w.signing_key().map_err(|e| CliError::validation(e.to_string()))?)
            .map_err(|e| CliError::validation(e.to_string()))?;
        args.wallet.create(&w)?;
        args.registry.store(&registry)?;
    } else {
        args.wallet.create(&w)?;
    }
    Ok(w.owner_did().clone())
}

#[derive(Subcommand, Debug)]
pub enum DidCommand {
    /// Create a new identity in a new wallet.
    Create(CreateArgs),
    /// Print the current DID Document for a DID.
    Resolve {
        did: String,
        #[command(flatten)]
        registry: RegistryArgs,
        /// Peer DID Document file; repeatable.
        #[arg(long = "ddoc")]
        ddocs: Vec<PathBuf>,
        /// Resolution time as Unix seconds.
        #[arg(long)]
        at: Option<u64>,
    },
}

pub fn run_did(cmd: DidCommand) -> Result<()> {
    match cmd {
        DidCommand::Create(args) => {
            println!("{}", create(args)?);
            Ok(())
        }
        DidCommand::Resolve {
            did,
            registry,
            ddocs,
            at,
        } => {
            let did: Did = did.parse().map_err(|e| CliError::validation(format!("{e}")))?;
            let resolver = resolver(registry.load()?, &ddocs, None)?;
            let doc = resolver
                .resolve(&did, now(at))
                .map_err(|e| CliError::verification(e.to_string()))?;
            println!("{}", pretty(&doc));
            Ok(())
        }
    }
}

#[derive(Subcommand, Debug)]
pub enum DdocCommand {
    /// Show a DID Document from a wallet or a file and check it.
    Show {
        #[arg(long, conflicts_with = "file")]
        wallet: Option<PathBuf>,
        #[arg(long, env = "SSI_PASSPHRASE", hide_env_values = true)]
        passphrase: Option<String>,
        /// A `.ddoc` file to inspect.
        #[arg(long)]
        file: Option<PathBuf>,
        /// Write the canonical bytes here.
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Replace the wallet's signing key and publish the new document.
    RotateKey {
        #[command(flatten)]
        wallet: WalletArgs,
        #[command(flatten)]
        registry: RegistryArgs,
        #[arg(long)]
        at: Option<u64>,
    },
}

pub fn run_ddoc(cmd: DdocCommand) -> Result<()> {
    match cmd {
        DdocCommand::Show {
            wallet,
            passphrase,
            file,
            out,
        } => {
            let doc = match (wallet, file) {
                (Some(wallet), None) => WalletArgs { wallet, passphrase }.open()?.document().clone(),
                (None, Some(file)) => read_document(&file)?,
                _ => return Err(CliError::usage("pass either --wallet or --file")),
            };
            match out {
                Some(path) => {
                    write_output(Some(&path), &doc.to_bytes())?;
                    println!("{} ({} bytes)", path.display(), doc.to_bytes().len());
                }
                None => println!("{}", pretty(&doc)),
            }
            let violations = validate_document(&doc);
            if violations.is_empty() {
                return Ok(());
            }
            for v in &violations {
                eprintln!("violation: {v}");
            }
            Err(CliError::validation(format!("{} document violation(s)", violations.len())))
        }
        DdocCommand::RotateKey { wallet, registry, at } => {
            let mut w = wallet.open()?;
            if w.owner_did().is_peer() {
                return Err(CliError::validation(
                    "peer DIDs are bound to their genesis document; create a new peer DID instead",
                ));
            }
            let reg = registry.load()?;
            registry.require()?;
            let (doc, old) = w
                .rotate_signing_key(now(at), &mut rand::thread_rng())
                .map_err(|e| CliError::validation(e.to_string()))?;
            reg.register(&doc, &old).map_err(|e| CliError::verification(e.to_string()))?;
            wallet.save(&w)?;
            registry.store(&reg)?;
            println!("{} version {}", w.owner_did(), doc.version);
            Ok(())
        }
    }
}
