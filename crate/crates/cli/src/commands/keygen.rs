use std::path::PathBuf;

use clap::Args;
use serde::Serialize;
use ssi_core::crypto::{keygen, KeyPurpose};

use crate::error::{CliError, Result};
use crate::store::{pretty, write_output};

#[derive(Args, Debug)]
pub struct KeygenArgs {
    #[arg(long, default_value = "sign")]
    pub purpose: KeyPurpose,
    /// 32-byte seed as hex, for reproducible keys.
    #[arg(long)]
    pub seed: Option<String>,
    /// Write the key pair here instead of standard output.
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Serialize)]
struct KeyFile<'a> {
    key_id: &'a str,
    purpose: KeyPurpose,
    public_key: String,
    secret_key: String,
}

pub fn run(args: KeygenArgs) -> Result<()> {
    let seed = args
        .seed
        .as_deref()
        .map(hex::decode)
        .transpose()
        .map_err(|e| CliError::validation(format!("seed: {e}")))?;
    let kp = keygen(args.purpose, seed.as_deref()).map_err(|e| CliError::validation(e.to_string()))?;
    let file = KeyFile {
        key_id: &kp.key_id,
        purpose: kp.purpose,
        public_key: hex::encode(kp.public.as_bytes()),
        secret_key: hex::encode(kp.secret_bytes()),
    };
    write_output(args.out.as_deref(), pretty(&file).as_bytes())?;
    if args.out.is_some() {
        println!("{} {}", kp.key_id, hex::encode(kp.public.as_bytes()));
    }
    Ok(())
}
