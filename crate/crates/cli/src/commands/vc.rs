use std::fs;
use std::path::{Path, PathBuf};
use std::time::Duration;

use clap::{Args, Subcommand};
use ssi_core::credentials::{
    issue, present, verify_credential_bytes, verify_presentation, Claim, ClaimOpenings, Presentation, Verdict,
    VerifiableCredential, PRESENTATION_EXTENSION,
};
use ssi_core::identity::Did;

use crate::error::{CliError, Result};
use crate::store::{now, pretty, resolver, RegistryArgs, WalletArgs};

const DAY: u64 = 86_400;

#[derive(Subcommand, Debug)]
pub enum VcCommand {
    /// Issue a credential from the wallet's identity.
    Issue(IssueArgs),
    /// Verify a credential (`.vc`) or presentation (`.vp`).
    Verify(VerifyArgs),
    /// Disclose a subset of a credential's claims.
    Present(PresentArgs),
    /// Revoke a credential this wallet issued.
    Revoke {
        #[command(flatten)]
        wallet: WalletArgs,
        #[command(flatten)]
        registry: RegistryArgs,
        /// Credential id (`urn:vc:...`).
        #[arg(long)]
        id: String,
    },
}

#[derive(Args, Debug)]
pub struct IssueArgs {
    #[command(flatten)]
    pub wallet: WalletArgs,
    #[arg(long)]
    pub subject: String,
    /// `name=value`; repeatable.
    #[arg(long = "claim", required = true)]
    pub claims: Vec<String>,
    #[arg(long, default_value_t = 365)]
    pub validity_days: u64,
    #[arg(long)]
    pub out: PathBuf,
    /// Where the holder's claim openings go. Defaults to `<out>.openings`.
    #[arg(long)]
    pub openings: Option<PathBuf>,
    #[arg(long)]
    pub at: Option<u64>,
}

#[derive(Args, Debug)]
pub struct VerifyArgs {
    pub file: PathBuf,
    #[command(flatten)]
    pub registry: RegistryArgs,
    /// Peer DID Document file; repeatable.
    #[arg(long = "ddoc")]
    pub ddocs: Vec<PathBuf>,
    #[arg(long)]
    pub at: Option<u64>,
}

#[derive(Args, Debug)]
pub struct PresentArgs {
    #[arg(long)]
    pub credential: PathBuf,
    /// Defaults to the credential path with an `.openings` extension.
    #[arg(long)]
    pub openings: Option<PathBuf>,
    /// Claim name to disclose; repeatable or comma-separated.
    #[arg(long = "disclose", value_delimiter = ',', required = true)]
    pub disclose: Vec<String>,
    #[arg(long)]
    pub out: PathBuf,
}

fn openings_path(credential: &Path) -> PathBuf {
    credential.with_extension("openings")
}

pub fn parse_claim(text: &str) -> Result<Claim> {
    let (name, value) = text
        .split_once('=')
        .ok_or_else(|| CliError::validation(format!("claim `{text}` is not name=value")))?;
    Ok(Claim::new(name.trim(), value))
}

pub fn read_openings(path: &Path) -> Result<ClaimOpenings> {
    let bytes = fs::read(path)?;
    serde_json::from_slice(&bytes).map_err(|e| CliError::validation(format!("{}: {e}", path.display())))
}

pub fn read_credential(path: &Path) -> Result<VerifiableCredential> {
    let bytes = fs::read(path)?;
    VerifiableCredential::from_bytes(&bytes).map_err(|e| CliError::validation(format!("{}: {e}", path.display())))
}

pub fn run(cmd: VcCommand) -> Result<()> {
    match cmd {
        VcCommand::Issue(args) => issue_cmd(args),
        VcCommand::Verify(args) => verify_cmd(args),
        VcCommand::Present(args) => present_cmd(args),
        VcCommand::Revoke { wallet, registry, id } => {
            let w = wallet.open()?;
            registry.require()?;
            let reg = registry.load()?;
            let key = w.signing_key().map_err(|e| CliError::validation(e.to_string()))?;
            let fresh = reg
                .revoke(w.document(), key, &id)
                .map_err(|e| CliError::verification(e.to_string()))?;
            registry.store(&reg)?;
            println!("{id} {}", if fresh { "revoked" } else { "already revoked" });
            Ok(())
        }
    }
}

fn issue_cmd(args: IssueArgs) -> Result<()> {
    let w = args.wallet.open()?;
    let subject: Did = args.subject.parse().map_err(|e| CliError::validation(format!("subject: {e}")))?;
    let claims = args.claims.iter().map(|c| parse_claim(c)).collect::<Result<Vec<_>>>()?;
    let key = w.signing_key().map_err(|e| CliError::validation(e.to_string()))?;
    let (vc, openings) = issue(
        key,
        w.document(),
        &subject,
        &claims,
        Duration::from_secs(args.validity_days.saturating_mul(DAY)),
        now(args.at),
        &mut rand::thread_rng(),
    )
    .map_err(|e| CliError::validation(e.to_string()))?;
    let openings_out = args.openings.unwrap_or_else(|| openings_path(&args.out));
    fs::write(&args.out, vc.to_bytes())?;
    fs::write(&openings_out, pretty(&openings))?;
    println!("{}", vc.vc_id);
    Ok(())
}

fn verify_cmd(args: VerifyArgs) -> Result<()> {
    let bytes = fs::read(&args.file)?;
    let resolver = resolver(args.registry.load()?, &args.ddocs, None)?;
    let registry = resolver.registry().clone();
    let at = now(args.at);
    let is_presentation = args.file.extension().is_some_and(|e| e == PRESENTATION_EXTENSION);
    let verdict = if is_presentation {
        match Presentation::from_bytes(&bytes) {
            Ok(p) => {
                let v = verify_presentation(&p, &resolver, &registry, at);
                if v.is_valid() {
                    for d in &p.disclosed {
                        println!("{} = {}", d.claim_name, d.value);
                    }
                }
                v
            }
            Err(e) => Verdict::Invalid(ssi_core::InvalidReason::Malformed(e.to_string())),
        }
    } else {
        verify_credential_bytes(&bytes, &resolver, &registry, at)
    };
    match verdict {
        Verdict::Valid => {
            println!("valid");
            Ok(())
        }
        Verdict::Invalid(reason) => {
            println!("invalid ({})", reason.code());
            Err(CliError::verification(reason.to_string()))
        }
    }
}

fn present_cmd(args: PresentArgs) -> Result<()> {
    let vc = read_credential(&args.credential)?;
    let openings = read_openings(&args.openings.unwrap_or_else(|| openings_path(&args.credential)))?;
    let p = present(&vc, &openings, args.disclose.iter().map(String::as_str))
        .map_err(|e| CliError::validation(e.to_string()))?;
    fs::write(&args.out, p.to_bytes())?;
    println!("{} ({} of {} claims)", args.out.display(), p.disclosed.len(), vc.commitments.len());
    Ok(())
}
