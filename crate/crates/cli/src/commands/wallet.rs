use std::path::PathBuf;

use clap::Subcommand;
use ssi_core::identity::Did;

use super::identity::{self, CreateArgs};
use super::vc::{read_credential, read_openings};
use crate::error::{CliError, Result};
use crate::store::{read_document, WalletArgs};

#[derive(Subcommand, Debug)]
pub enum WalletCommand {
    /// Create an encrypted wallet holding a fresh identity.
    Create(CreateArgs),
    /// Decrypt a wallet and summarize its contents.
    Unlock {
        #[command(flatten)]
        wallet: WalletArgs,
    },
    /// List held credentials.
    List {
        #[command(flatten)]
        wallet: WalletArgs,
    },
    /// Store a credential with its openings, or a peer's DID Document.
    Import {
        #[command(flatten)]
        wallet: WalletArgs,
        #[arg(long, requires = "openings")]
        credential: Option<PathBuf>,
        #[arg(long)]
        openings: Option<PathBuf>,
        #[arg(long)]
        ddoc: Option<PathBuf>,
    },
}

pub fn run(cmd: WalletCommand) -> Result<()> {
    match cmd {
        WalletCommand::Create(args) => {
            let path = args.wallet.wallet.clone();
            let did = identity::create(args)?;
            println!("created {} for {did}", path.display());
            Ok(())
        }
        WalletCommand::Unlock { wallet } => {
            let w = wallet.open()?;
            println!("did: {}", w.owner_did());
            println!("document version: {}", w.document().version);
            for kp in w.keys() {
                let current = w.document().current_key(&kp.key_id).is_some();
                println!(
                    "key: {} {}{}",
                    kp.key_id,
                    kp.purpose,
                    if current { "" } else { " (retired)" }
                );
            }
            println!("credentials: {}", w.credentials().len());
            println!("known peers: {}", w.known_peers().len());
            Ok(())
        }
        WalletCommand::List { wallet } => {
            let w = wallet.open()?;
            for held in w.credentials() {
                let vc = &held.credential;
                let names: Vec<&str> = vc.claim_names().collect();
                println!("{} issuer={} expires_at={} claims={}", vc.vc_id, vc.issuer, vc.expires_at, names.join(","));
            }
            Ok(())
        }
        WalletCommand::Import {
            wallet,
            credential,
            openings,
            ddoc,
        } => {
            if credential.is_none() && ddoc.is_none() {
                return Err(CliError::usage("nothing to import: pass --credential/--openings or --ddoc"));
            }
            let mut w = wallet.open()?;
            if let (Some(c), Some(o)) = (credential, openings) {
                let vc = read_credential(&c)?;
                let id = vc.vc_id.clone();
                w.put_credential(vc, read_openings(&o)?)
                    .map_err(|e| CliError::validation(e.to_string()))?;
                println!("stored {id}");
            }
            if let Some(path) = ddoc {
                let doc = read_document(&path)?;
                let did: &Did = doc
                    .id
                    .as_ref()
                    .ok_or_else(|| CliError::validation("document has no id"))?;
                println!("remembered {did}");
                w.remember_peer(doc);
            }
            wallet.save(&w)
        }
    }
}
