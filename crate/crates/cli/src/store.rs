//! Files the commands share: wallets, the registry snapshot, peer documents.

use std::fs;
use std::path::{Path, PathBuf};
use std::sync::Arc;
use std::time::{SystemTime, UNIX_EPOCH};

use clap::Args;
use ssi_core::identity::DidDocument;
use ssi_core::resolver::{Registry, Resolver};
use ssi_core::wallet::{self, KdfParams, Wallet, WalletError};

use crate::error::{CliError, Result};

#[derive(Args, Debug, Clone)]
pub struct WalletArgs {
    /// Wallet file.
    #[arg(long, env = "SSI_WALLET")]
    pub wallet: PathBuf,
    #[arg(long, env = "SSI_PASSPHRASE", hide_env_values = true)]
    pub passphrase: Option<String>,
}

impl WalletArgs {
    pub fn passphrase(&self) -> Result<&str> {
        self.passphrase
            .as_deref()
            .ok_or_else(|| CliError::usage("a passphrase is required (--passphrase or SSI_PASSPHRASE)"))
    }

    pub fn open(&self) -> Result<Wallet> {
        let pass = self.passphrase()?;
        wallet::unlock(&self.wallet, pass).map_err(|e| wallet_error(&self.wallet, e))
    }

    /// Re-encrypts with the KDF parameters already in the file.
    pub fn save(&self, w: &Wallet) -> Result<()> {
        let bytes = fs::read(&self.wallet)?;
        let params = wallet::read_params(&bytes).map_err(|e| wallet_error(&self.wallet, e))?;
        wallet::save(&self.wallet, self.passphrase()?, w, params, &mut rand::thread_rng())
            .map_err(|e| wallet_error(&self.wallet, e))
    }

    pub fn create(&self, w: &Wallet) -> Result<()> {
        wallet::create(&self.wallet, self.passphrase()?, w, KdfParams::default(), &mut rand::thread_rng())
            .map_err(|e| wallet_error(&self.wallet, e))
    }
}

pub fn wallet_error(path: &Path, e: WalletError) -> CliError {
    let message = format!("{}: {e}", path.display());
    match e {
        WalletError::WrongPassphrase | WalletError::Integrity => CliError::verification(message),
        WalletError::Io(_) => CliError::usage(message),
        _ => CliError::validation(message),
    }
}

#[derive(Args, Debug, Clone)]
pub struct RegistryArgs {
    /// Registry snapshot file; created on first write.
    #[arg(long, env = "SSI_REGISTRY")]
    pub registry: Option<PathBuf>,
}

impl RegistryArgs {
    pub fn load(&self) -> Result<Registry> {
        match &self.registry {
            Some(path) if path.exists() => {
                let bytes = fs::read(path)?;
                Registry::import(&bytes).map_err(|e| CliError::validation(format!("{}: {e}", path.display())))
            }
            _ => Ok(Registry::new()),
        }
    }

    pub fn require(&self) -> Result<&Path> {
        self.registry
            .as_deref()
            .ok_or_else(|| CliError::usage("this operation needs --registry (or SSI_REGISTRY)"))
    }

    pub fn store(&self, registry: &Registry) -> Result<()> {
        let path = self.require()?;
        fs::write(path, registry.export())?;
        Ok(())
    }
}

pub fn read_document(path: &Path) -> Result<DidDocument> {
    let bytes = fs::read(path)?;
    DidDocument::from_bytes(&bytes).map_err(|e| CliError::validation(format!("{}: {e}", path.display())))
}

/// Resolver over the registry, preloaded with peer documents from files
/// and from an unlocked wallet.
pub fn resolver(registry: Registry, peer_files: &[PathBuf], wallet: Option<&Wallet>) -> Result<Resolver> {
    let resolver = Resolver::new(Arc::new(registry));
    let mut docs = Vec::new();
    for path in peer_files {
        docs.push(read_document(path)?);
    }
    if let Some(w) = wallet {
        docs.push(w.document().clone());
        docs.extend(w.known_peers().iter().cloned());
    }
    for doc in docs.iter().filter(|d| d.id.as_ref().is_some_and(|id| id.is_peer())) {
        let did = doc.id.as_ref().expect("filtered");
        resolver
            .store_peer(did, doc)
            .map_err(|e| CliError::verification(format!("peer document for {did}: {e}")))?;
    }
    Ok(resolver)
}

pub fn now(at: Option<u64>) -> u64 {
    at.unwrap_or_else(|| {
        SystemTime::now()
            .duration_since(UNIX_EPOCH)
            .expect("clock after 1970")
            .as_secs()
    })
}

pub fn write_output(path: Option<&Path>, bytes: &[u8]) -> Result<()> {
    match path {
        Some(p) => Ok(fs::write(p, bytes)?),
        None => {
            println!("{}", String::from_utf8_lossy(bytes));
            Ok(())
        }
    }
}

pub fn pretty(value: &impl serde::Serialize) -> String {
    serde_json::to_string_pretty(value).expect("value serializes")
}
