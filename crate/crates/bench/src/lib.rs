//! Fixtures shared by the benchmarks.

use std::sync::Arc;
use std::time::Duration;

use rand::SeedableRng;
use rand_chacha::ChaCha20Rng;
use ssi_core::credentials::{issue, Claim};
use ssi_core::handshake::{HandshakeConfig, TrustPolicy};
use ssi_core::identity::{ServiceEndpoint, PEER_METHOD};
use ssi_core::resolver::{Registry, Resolver};
use ssi_core::wallet::Wallet;

pub const NOW: u64 = 1_700_000_000;

pub fn rng(seed: u64) -> ChaCha20Rng {
    ChaCha20Rng::seed_from_u64(seed)
}

fn endpoint() -> ServiceEndpoint {
    ServiceEndpoint {
        endpoint_id: "link-0".into(),
        kind: "sim-link".into(),
        address: "sim://bench".into(),
    }
}

/// An owner with two provisioned peer-DID devices, ready to handshake.
pub struct Pair {
    pub owner: Wallet,
    pub configs: [Arc<HandshakeConfig>; 2],
}

pub fn device_pair(rng: &mut ChaCha20Rng) -> Pair {
    let registry = Arc::new(Registry::new());
    let owner = Wallet::create_identity(PEER_METHOD, vec![endpoint()], rng).unwrap();
    let mut devices = [
        Wallet::create_identity(PEER_METHOD, vec![endpoint()], rng).unwrap(),
        Wallet::create_identity(PEER_METHOD, vec![endpoint()], rng).unwrap(),
    ];
    for d in &mut devices {
        let claims = [
            Claim::new("owner", owner.owner_did().to_string()),
            Claim::new("type", "Sensor"),
        ];
        let (vc, openings) = issue(
            owner.signing_key().unwrap(),
            owner.document(),
            d.owner_did(),
            &claims,
            Duration::from_secs(86_400),
            NOW - 1,
            rng,
        )
        .unwrap();
        d.put_credential(vc, openings).unwrap();
    }
    let config = |w: &Wallet| {
        let resolver = Arc::new(Resolver::new(registry.clone()));
        for peer in [&owner, &devices[0], &devices[1]] {
            resolver.store_peer(peer.owner_did(), peer.document()).unwrap();
        }
        Arc::new(HandshakeConfig::new(
            Arc::new(w.clone()),
            resolver,
            registry.clone(),
            TrustPolicy::OwnerMatch {
                my_owner: owner.owner_did().clone(),
            },
        ))
    };
    let configs = [config(&devices[0]), config(&devices[1])];
    Pair { owner, configs }
}
