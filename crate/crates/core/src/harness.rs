//! Scenario runner.
//!
//! A scenario declares actors, the credentials owners hand to devices, the
//! simulated links between actors and a list of steps. Running it yields a
//! [`MetricsReport`]; the same scenario and seed always give the same report.

use std::collections::{BTreeMap, BTreeSet};
use std::sync::Arc;
use std::time::Duration;

use rand::SeedableRng;
use rand::RngCore;
use rand_chacha::ChaCha20Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::credentials::{issue, Claim};
use crate::crypto::Role;
use crate::handshake::{HandshakeConfig, HandshakeSession, SessionState, TrustPolicy};
use crate::identity::{Did, ServiceEndpoint, PEER_METHOD, REGISTRY_METHOD};
use crate::resolver::{Registry, Resolve, Resolver};
use crate::transport::{LinkProfile, SimLink, TransportError, make_link};
use crate::wallet::Wallet;

/// Simulated wall clock at the start of every scenario, in seconds.
pub const BASE_TIME: u64 = 1_700_000_000;
pub const SCENARIO_EXTENSION: &str = "scn";
const DAY: u64 = 86_400;
const MAX_FLIGHTS: usize = 32;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ActorRole {
    Owner,
    Device,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "policy", rename_all = "snake_case")]
pub enum PolicySpec {
    /// Trust devices of this actor's owner.
    OwnerMatch,
    AlwaysTrust,
    RequireClaim { name: String, value: String },
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ActorSpec {
    pub name: String,
    pub role: ActorRole,
    #[serde(default = "default_method")]
    pub did_method: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub owner: Option<String>,
    /// Defaults to `owner_match` when `owner` is set, else `always_trust`.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub policy: Option<PolicySpec>,
}

fn default_method() -> String {
    PEER_METHOD.to_string()
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ClaimSpec {
    pub name: String,
    /// `${actor}` is replaced by that actor's DID.
    pub value: String,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct CredentialSpec {
    pub id: String,
    pub issuer: String,
    pub subject: String,
    pub claims: Vec<ClaimSpec>,
    #[serde(default = "default_validity")]
    pub validity_days: u64,
}

fn default_validity() -> u64 {
    365
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LinkSpec {
    pub a: String,
    pub b: String,
    pub profile: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub loss_probability: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub reorder_probability: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "action", rename_all = "snake_case")]
pub enum Action {
    Handshake { initiator: String, responder: String },
    Resolve { actor: String, target: String },
    Revoke { issuer: String, credential: String },
    Rotate { actor: String },
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct StepSpec {
    #[serde(flatten)]
    pub action: Action,
    /// Expected outcome. `untrusted` also matches `untrusted(<reason>)`.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub expect: Option<String>,
    /// Seconds of simulated time to let pass before the step runs.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub advance: Option<u64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Scenario {
    pub seed: u64,
    pub actors: Vec<ActorSpec>,
    #[serde(default)]
    pub credentials: Vec<CredentialSpec>,
    #[serde(default)]
    pub links: Vec<LinkSpec>,
    #[serde(default)]
    pub steps: Vec<StepSpec>,
}

#[derive(Debug, Error)]
pub enum ScenarioError {
    #[error("cannot parse scenario: {0}")]
    Parse(#[from] serde_json::Error),
    #[error("{context}: unknown actor `{name}`")]
    UnknownActor { context: String, name: String },
    #[error("duplicate actor `{0}`")]
    DuplicateActor(String),
    #[error("actor `{actor}`: unsupported DID method `{method}`")]
    UnsupportedMethod { actor: String, method: String },
    #[error("duplicate credential `{0}`")]
    DuplicateCredential(String),
    #[error("{context}: unknown credential `{id}`")]
    UnknownCredential { context: String, id: String },
    #[error("credential `{0}` has no claims")]
    EmptyCredential(String),
    #[error("credential `{0}` has zero validity")]
    ZeroValidity(String),
    #[error("no link between `{0}` and `{1}`")]
    MissingLink(String, String),
    #[error("link {a}-{b}: {source}")]
    InvalidLink {
        a: String,
        b: String,
        #[source]
        source: TransportError,
    },
    #[error("step {index}: an actor cannot handshake with itself")]
    SelfHandshake { index: usize },
    #[error("step {index}: rotating `{actor}` needs a `{REGISTRY_METHOD}` DID")]
    RotatePeer { index: usize, actor: String },
    #[error("scenario setup failed: {0}")]
    Setup(String),
}

impl Scenario {
    pub fn from_bytes(bytes: &[u8]) -> Result<Scenario, ScenarioError> {
        Ok(serde_json::from_slice(bytes)?)
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        let mut out = serde_json::to_vec_pretty(self).expect("scenario serializes");
        out.push(b'\n');
        out
    }

    /// Checks every reference before anything runs.
    pub fn validate(&self) -> Result<(), ScenarioError> {
        let mut actors: BTreeMap<&str, &ActorSpec> = BTreeMap::new();
        for a in &self.actors {
            if actors.insert(a.name.as_str(), a).is_some() {
                return Err(ScenarioError::DuplicateActor(a.name.clone()));
            }
            if a.did_method != PEER_METHOD && a.did_method != REGISTRY_METHOD {
                return Err(ScenarioError::UnsupportedMethod {
                    actor: a.name.clone(),
                    method: a.did_method.clone(),
                });
            }
        }
        let known = |context: String, name: &str| -> Result<(), ScenarioError> {
            if actors.contains_key(name) {
                Ok(())
            } else {
                Err(ScenarioError::UnknownActor {
                    context,
                    name: name.to_string(),
                })
            }
        };
        for a in &self.actors {
            if let Some(owner) = &a.owner {
                known(format!("owner of `{}`", a.name), owner)?;
            }
        }
        let mut credentials = BTreeSet::new();
        for c in &self.credentials {
            if !credentials.insert(c.id.as_str()) {
                return Err(ScenarioError::DuplicateCredential(c.id.clone()));
            }
            known(format!("issuer of credential `{}`", c.id), &c.issuer)?;
            known(format!("subject of credential `{}`", c.id), &c.subject)?;
            if c.claims.is_empty() {
                return Err(ScenarioError::EmptyCredential(c.id.clone()));
            }
            if c.validity_days == 0 {
                return Err(ScenarioError::ZeroValidity(c.id.clone()));
            }
            for claim in &c.claims {
                for name in placeholders(&claim.value) {
                    known(format!("claim `{}` of credential `{}`", claim.name, c.id), name)?;
                }
            }
        }
        for l in &self.links {
            known(format!("link {}-{}", l.a, l.b), &l.a)?;
            known(format!("link {}-{}", l.a, l.b), &l.b)?;
            link_profile(l, 0).map_err(|source| ScenarioError::InvalidLink {
                a: l.a.clone(),
                b: l.b.clone(),
                source,
            })?;
        }
        for (index, step) in self.steps.iter().enumerate() {
            let context = format!("step {index}");
            match &step.action {
                Action::Handshake { initiator, responder } => {
                    known(context.clone(), initiator)?;
                    known(context, responder)?;
                    if initiator == responder {
                        return Err(ScenarioError::SelfHandshake { index });
                    }
                    if self.find_link(initiator, responder).is_none() {
                        return Err(ScenarioError::MissingLink(initiator.clone(), responder.clone()));
                    }
                }
                Action::Resolve { actor, target } => {
                    known(context.clone(), actor)?;
                    known(context, target)?;
                }
                Action::Revoke { issuer, credential } => {
                    known(context.clone(), issuer)?;
                    if !credentials.contains(credential.as_str()) {
                        return Err(ScenarioError::UnknownCredential {
                            context,
                            id: credential.clone(),
                        });
                    }
                }
                Action::Rotate { actor } => {
                    known(context, actor)?;
                    if actors[actor.as_str()].did_method != REGISTRY_METHOD {
                        return Err(ScenarioError::RotatePeer {
                            index,
                            actor: actor.clone(),
                        });
                    }
                }
            }
        }
        Ok(())
    }

    fn find_link(&self, x: &str, y: &str) -> Option<usize> {
        self.links
            .iter()
            .position(|l| (l.a == x && l.b == y) || (l.a == y && l.b == x))
    }
}

/// Names referenced as `${name}` in `text`.
fn placeholders(text: &str) -> Vec<&str> {
    let mut out = Vec::new();
    let mut rest = text;
    while let Some(start) = rest.find("${") {
        let after = &rest[start + 2..];
        match after.find('}') {
            Some(end) => {
                out.push(&after[..end]);
                rest = &after[end + 1..];
            }
            None => break,
        }
    }
    out
}

fn substitute(text: &str, dids: &BTreeMap<String, Did>) -> String {
    let mut out = text.to_string();
    for name in placeholders(text) {
        if let Some(did) = dids.get(name) {
            out = out.replace(&format!("${{{name}}}"), &did.to_string());
        }
    }
    out
}

fn link_profile(spec: &LinkSpec, seed: u64) -> Result<LinkProfile, TransportError> {
    let mut profile = LinkProfile::builtin(&spec.profile)?.with_seed(seed);
    if let Some(p) = spec.loss_probability {
        profile = profile.with_loss(p);
    }
    if let Some(p) = spec.reorder_probability {
        profile = profile.with_reorder(p);
    }
    profile.validate()?;
    Ok(profile)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DocumentSizes {
    /// Canonical DID Document size per actor, at setup.
    pub ddo_bytes: BTreeMap<String, usize>,
    /// Canonical credential size per credential id.
    pub vc_bytes: BTreeMap<String, usize>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StepReport {
    pub index: usize,
    pub action: String,
    pub outcome: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub expect: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub matched: Option<bool>,
    /// Handshake messages exchanged.
    pub messages: usize,
    /// Link frames sent, data and acknowledgement, including dropped ones.
    pub frames: usize,
    pub bytes_sent: usize,
    /// Size of each handshake message before fragmentation.
    pub message_bytes: Vec<usize>,
    pub fragments_per_message: Vec<usize>,
    /// Protocol round trips until both sides reached a verdict.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub round_trips: Option<usize>,
    /// Data-frame transmissions, each awaiting one acknowledgement.
    pub link_round_trips: u32,
    pub retransmissions: u32,
    pub ticks: u64,
    /// Registry reads made during the step.
    pub registry_reads: u64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricsReport {
    pub seed: u64,
    pub document_sizes: DocumentSizes,
    pub steps: Vec<StepReport>,
}

impl MetricsReport {
    /// True when every step that declared an expectation met it.
    pub fn all_matched(&self) -> bool {
        self.steps.iter().all(|s| s.matched != Some(false))
    }

    pub fn to_json(&self) -> Vec<u8> {
        let mut out = serde_json::to_vec_pretty(self).expect("report serializes");
        out.push(b'\n');
        out
    }
}

/// `expect` matches `outcome` exactly or as the prefix before a `(`.
pub fn outcome_matches(expect: &str, outcome: &str) -> bool {
    outcome == expect || outcome.strip_prefix(expect).is_some_and(|rest| rest.starts_with('('))
}

pub struct Actor {
    pub spec: ActorSpec,
    pub wallet: Wallet,
    pub resolver: Arc<Resolver>,
}

struct Link {
    a: String,
    b: String,
    sim: SimLink,
}

/// A scenario with all actors, credentials and links set up.
pub struct Simulation {
    scenario: Scenario,
    seed: u64,
    rng: ChaCha20Rng,
    now: u64,
    registry: Arc<Registry>,
    actors: BTreeMap<String, Actor>,
    links: Vec<Link>,
    credential_ids: BTreeMap<String, (String, String)>,
    sizes: DocumentSizes,
}

impl Simulation {
    pub fn new(scenario: Scenario) -> Result<Simulation, ScenarioError> {
        let seed = scenario.seed;
        Self::with_seed(scenario, seed)
    }

    pub fn with_seed(scenario: Scenario, seed: u64) -> Result<Simulation, ScenarioError> {
        scenario.validate()?;
        let mut rng = ChaCha20Rng::seed_from_u64(seed);
        let registry = Arc::new(Registry::new());
        let now = BASE_TIME;
        let setup = |e: &dyn std::fmt::Display| ScenarioError::Setup(e.to_string());

        let mut actors = BTreeMap::new();
        for spec in &scenario.actors {
            let endpoint = ServiceEndpoint {
                endpoint_id: "link-0".into(),
                kind: "sim-link".into(),
                address: format!("sim://{}", spec.name),
            };
            let wallet = Wallet::create_identity(&spec.did_method, vec![endpoint], &mut rng).map_err(|e| setup(&e))?;
            if spec.did_method == REGISTRY_METHOD {
                registry
                    .register(wallet.document(), wallet.signing_key().map_err(|e| setup(&e))?)
                    .map_err(|e| setup(&e))?;
            }
            let resolver = Arc::new(Resolver::new(registry.clone()));
            actors.insert(
                spec.name.clone(),
                Actor {
                    spec: spec.clone(),
                    wallet,
                    resolver,
                },
            );
        }
        // Onboarding: every actor learns every peer-method document.
        let peer_docs: Vec<_> = actors
            .values()
            .filter(|a| a.wallet.owner_did().is_peer())
            .map(|a| (a.wallet.owner_did().clone(), a.wallet.document().clone()))
            .collect();
        for actor in actors.values_mut() {
            for (did, doc) in &peer_docs {
                if did != actor.wallet.owner_did() {
                    actor.resolver.store_peer(did, doc).map_err(|e| setup(&e))?;
                    actor.wallet.remember_peer(doc.clone());
                }
            }
        }

        let dids: BTreeMap<String, Did> = actors
            .iter()
            .map(|(name, a)| (name.clone(), a.wallet.owner_did().clone()))
            .collect();
        let mut sizes = DocumentSizes {
            ddo_bytes: actors
                .iter()
                .map(|(name, a)| (name.clone(), a.wallet.document().to_bytes().len()))
                .collect(),
            vc_bytes: BTreeMap::new(),
        };
        let mut credential_ids = BTreeMap::new();
        for c in &scenario.credentials {
            let claims: Vec<Claim> = c
                .claims
                .iter()
                .map(|claim| Claim::new(claim.name.clone(), substitute(&claim.value, &dids)))
                .collect();
            let issuer = &actors[&c.issuer].wallet;
            let (vc, openings) = issue(
                issuer.signing_key().map_err(|e| setup(&e))?,
                issuer.document(),
                &dids[&c.subject],
                &claims,
                Duration::from_secs(c.validity_days * DAY),
                now,
                &mut rng,
            )
            .map_err(|e| setup(&e))?;
            sizes.vc_bytes.insert(c.id.clone(), vc.to_bytes().len());
            credential_ids.insert(c.id.clone(), (c.issuer.clone(), vc.vc_id.clone()));
            actors
                .get_mut(&c.subject)
                .expect("validated")
                .wallet
                .put_credential(vc, openings)
                .map_err(|e| setup(&e))?;
        }

        let mut links = Vec::new();
        for spec in &scenario.links {
            let profile = link_profile(spec, rng.next_u64()).map_err(|source| ScenarioError::InvalidLink {
                a: spec.a.clone(),
                b: spec.b.clone(),
                source,
            })?;
            let sim = make_link(profile).map_err(|source| ScenarioError::InvalidLink {
                a: spec.a.clone(),
                b: spec.b.clone(),
                source,
            })?;
            links.push(Link {
                a: spec.a.clone(),
                b: spec.b.clone(),
                sim,
            });
        }

        Ok(Simulation {
            scenario,
            seed,
            rng,
            now,
            registry,
            actors,
            links,
            credential_ids,
            sizes,
        })
    }

    pub fn now(&self) -> u64 {
        self.now
    }

    pub fn registry(&self) -> &Arc<Registry> {
        &self.registry
    }

    pub fn actor(&self, name: &str) -> Option<&Actor> {
        self.actors.get(name)
    }

    pub fn did(&self, name: &str) -> Option<&Did> {
        self.actors.get(name).map(|a| a.wallet.owner_did())
    }

    pub fn document_sizes(&self) -> &DocumentSizes {
        &self.sizes
    }

    /// Runs every step in order.
    pub fn run(&mut self) -> MetricsReport {
        let steps = self.scenario.steps.clone();
        let reports = steps
            .iter()
            .enumerate()
            .map(|(index, step)| self.run_step(index, step))
            .collect();
        MetricsReport {
            seed: self.seed,
            document_sizes: self.sizes.clone(),
            steps: reports,
        }
    }

    fn run_step(&mut self, index: usize, step: &StepSpec) -> StepReport {
        self.now += step.advance.unwrap_or(0);
        let reads_before = self.registry.read_count();
        let mut report = StepReport {
            index,
            action: String::new(),
            outcome: String::new(),
            expect: step.expect.clone(),
            matched: None,
            messages: 0,
            frames: 0,
            bytes_sent: 0,
            message_bytes: Vec::new(),
            fragments_per_message: Vec::new(),
            round_trips: None,
            link_round_trips: 0,
            retransmissions: 0,
            ticks: 0,
            registry_reads: 0,
        };
        report.outcome = match &step.action {
            Action::Handshake { initiator, responder } => {
                report.action = format!("handshake {initiator}->{responder}");
                self.handshake(initiator, responder, &mut report)
            }
            Action::Resolve { actor, target } => {
                report.action = format!("resolve {actor}->{target}");
                self.resolve(actor, target)
            }
            Action::Revoke { issuer, credential } => {
                report.action = format!("revoke {credential}");
                self.revoke(issuer, credential)
            }
            Action::Rotate { actor } => {
                report.action = format!("rotate {actor}");
                self.rotate(actor)
            }
        };
        report.registry_reads = self.registry.read_count() - reads_before;
        report.matched = step.expect.as_deref().map(|e| outcome_matches(e, &report.outcome));
        report
    }

    fn policy_for(&self, spec: &ActorSpec) -> TrustPolicy {
        let owner_match = || match &spec.owner {
            Some(owner) => TrustPolicy::OwnerMatch {
                my_owner: self.actors[owner].wallet.owner_did().clone(),
            },
            None => TrustPolicy::AlwaysTrust,
        };
        match &spec.policy {
            None | Some(PolicySpec::OwnerMatch) => owner_match(),
            Some(PolicySpec::AlwaysTrust) => TrustPolicy::AlwaysTrust,
            Some(PolicySpec::RequireClaim { name, value }) => TrustPolicy::RequireClaim {
                name: name.clone(),
                value: value.clone(),
            },
        }
    }

    fn config(&self, name: &str) -> Arc<HandshakeConfig> {
        let actor = &self.actors[name];
        Arc::new(HandshakeConfig::new(
            Arc::new(actor.wallet.clone()),
            actor.resolver.clone(),
            self.registry.clone(),
            self.policy_for(&actor.spec),
        ))
    }

    fn handshake(&mut self, initiator: &str, responder: &str, report: &mut StepReport) -> String {
        let (ci, cr) = (self.config(initiator), self.config(responder));
        let now = self.now;
        let (mut i, hello) = match HandshakeSession::initiate(ci, None, &mut self.rng) {
            Ok(v) => v,
            Err(e) => return format!("error({e})"),
        };
        let mut r = match HandshakeSession::respond(cr, &mut self.rng) {
            Ok(v) => v,
            Err(e) => return format!("error({e})"),
        };
        let link_index = self
            .links
            .iter()
            .position(|l| (l.a == initiator && l.b == responder) || (l.a == responder && l.b == initiator))
            .expect("validated");
        let link = &mut self.links[link_index].sim;
        let trace_start = link.trace().len();
        let ticks_start = link.now();

        let mut flight = (Role::Initiator, vec![hello]);
        let mut transport_error = None;
        let decided = |s: &HandshakeSession| matches!(s.state(), SessionState::Trusted | SessionState::Untrusted(_));
        for index in 0..MAX_FLIGHTS {
            let from = flight.0;
            let messages = std::mem::take(&mut flight.1);
            if messages.is_empty() {
                break;
            }
            let (from_name, to_name, receiver) = match from {
                Role::Initiator => (initiator, responder, &mut r),
                Role::Responder => (responder, initiator, &mut i),
            };
            let mut replies = Vec::new();
            for m in &messages {
                report.messages += 1;
                report.message_bytes.push(m.len());
                match link.send_reliable(from_name, to_name, m) {
                    Ok(delivery) => {
                        report.fragments_per_message.push(delivery.fragments);
                        report.link_round_trips += delivery.round_trips;
                        report.retransmissions += delivery.retransmissions;
                        replies.extend(receiver.step(&delivery.delivered, now));
                    }
                    Err(e) => {
                        transport_error = Some(e);
                        break;
                    }
                }
            }
            if transport_error.is_some() {
                break;
            }
            if report.round_trips.is_none() && decided(&i) && decided(&r) {
                report.round_trips = Some(index / 2 + 1);
            }
            flight = (from.peer(), replies);
        }
        let trace = &link.trace()[trace_start..];
        report.frames = trace.len();
        report.bytes_sent = trace.iter().map(|e| e.len).sum();
        report.ticks = link.now() - ticks_start;

        if let Some(e) = transport_error {
            return format!("transport_error({e})");
        }
        combine(i.state(), r.state())
    }

    fn resolve(&mut self, actor: &str, target: &str) -> String {
        let did = self.actors[target].wallet.owner_did().clone();
        match self.actors[actor].resolver.resolve(&did, self.now) {
            Ok(doc) => format!("ok(v{})", doc.version),
            Err(e) => format!("error({e})"),
        }
    }

    fn revoke(&mut self, issuer: &str, credential: &str) -> String {
        let (real_issuer, vc_id) = self.credential_ids[credential].clone();
        // Revocations are filed under the revoker's DID, so only the issuer
        // can affect a credential.
        if real_issuer != issuer {
            return "error(not the issuer)".to_string();
        }
        let wallet = &self.actors[issuer].wallet;
        let key = match wallet.signing_key() {
            Ok(k) => k,
            Err(e) => return format!("error({e})"),
        };
        match self.registry.revoke(wallet.document(), key, &vc_id) {
            Ok(true) => "revoked".into(),
            Ok(false) => "already_revoked".into(),
            Err(e) => format!("error({e})"),
        }
    }

    fn rotate(&mut self, actor: &str) -> String {
        let now = self.now;
        let entry = self.actors.get_mut(actor).expect("validated");
        let (doc, old) = match entry.wallet.rotate_signing_key(now, &mut self.rng) {
            Ok(v) => v,
            Err(e) => return format!("error({e})"),
        };
        match self.registry.register(&doc, &old) {
            Ok(version) => format!("rotated(v{version})"),
            Err(e) => format!("error({e})"),
        }
    }
}

/// Joint outcome of one handshake, reported from the initiator's view
/// first.
fn combine(i: &SessionState, r: &SessionState) -> String {
    for s in [i, r] {
        if let SessionState::Failed(reason) = s {
            return format!("failed({})", reason.code());
        }
    }
    for s in [i, r] {
        if let SessionState::Untrusted(_) = s {
            return s.to_string();
        }
    }
    match (i, r) {
        (SessionState::Trusted, SessionState::Trusted) => "trusted".into(),
        _ => format!("incomplete({i}/{r})"),
    }
}

/// Parses, validates and runs a scenario under its own seed.
pub fn run_scenario(scenario: &Scenario) -> Result<MetricsReport, ScenarioError> {
    Ok(Simulation::new(scenario.clone())?.run())
}

#[cfg(test)]
mod tests {
    use super::*;

    fn scenario(method: &str) -> Scenario {
        let text = format!(
            r#"{{
            "seed": 7,
            "actors": [
                {{"name": "alice", "role": "owner", "did_method": "{method}"}},
                {{"name": "bob", "role": "owner", "did_method": "{method}"}},
                {{"name": "camera", "role": "device", "did_method": "{method}", "owner": "alice"}},
                {{"name": "lock", "role": "device", "did_method": "{method}", "owner": "alice"}},
                {{"name": "speaker", "role": "device", "did_method": "{method}", "owner": "bob"}}
            ],
            "credentials": [
                {{"id": "cam", "issuer": "alice", "subject": "camera",
                  "claims": [{{"name": "owner", "value": "${{alice}}"}}, {{"name": "type", "value": "Camera"}}]}},
                {{"id": "lock", "issuer": "alice", "subject": "lock",
                  "claims": [{{"name": "owner", "value": "${{alice}}"}}, {{"name": "type", "value": "SmartLock"}}]}},
                {{"id": "spk", "issuer": "bob", "subject": "speaker",
                  "claims": [{{"name": "owner", "value": "${{bob}}"}}]}}
            ],
            "links": [
                {{"a": "camera", "b": "lock", "profile": "lora"}},
                {{"a": "camera", "b": "speaker", "profile": "ble"}}
            ],
            "steps": [
                {{"action": "handshake", "initiator": "camera", "responder": "lock", "expect": "trusted"}},
                {{"action": "handshake", "initiator": "camera", "responder": "speaker", "expect": "untrusted"}},
                {{"action": "revoke", "issuer": "alice", "credential": "lock", "expect": "revoked"}},
                {{"action": "handshake", "initiator": "camera", "responder": "lock", "expect": "untrusted"}}
            ]
        }}"#
        );
        Scenario::from_bytes(text.as_bytes()).unwrap()
    }

    #[test]
    fn figure_scenario_outcomes() {
        for method in [PEER_METHOD, REGISTRY_METHOD] {
            let report = run_scenario(&scenario(method)).unwrap();
            let outcomes: Vec<_> = report.steps.iter().map(|s| s.outcome.as_str()).collect();
            assert_eq!(
                outcomes,
                ["trusted", "untrusted(owner_mismatch)", "revoked", "untrusted(invalid_presentation)"],
                "{method}"
            );
            assert!(report.all_matched());
            assert_eq!(report.steps[0].round_trips, Some(3));
            assert_eq!(report.steps[0].messages, 10);
            assert!(report.steps[0].bytes_sent > 0);
        }
    }

    #[test]
    fn deterministic_under_seed() {
        let s = scenario(PEER_METHOD);
        let a = run_scenario(&s).unwrap();
        let b = run_scenario(&s).unwrap();
        assert_eq!(a.to_json(), b.to_json());
        let c = Simulation::with_seed(s, 8).unwrap().run();
        assert_ne!(a.to_json(), c.to_json());
    }

    #[test]
    fn validation_rejects_unknown_actor() {
        let mut s = scenario(PEER_METHOD);
        s.steps.push(StepSpec {
            action: Action::Handshake {
                initiator: "camera".into(),
                responder: "toaster".into(),
            },
            expect: None,
            advance: None,
        });
        assert!(matches!(run_scenario(&s), Err(ScenarioError::UnknownActor { .. })));

        let mut s = scenario(PEER_METHOD);
        s.credentials[0].claims[0].value = "${carol}".into();
        assert!(matches!(s.validate(), Err(ScenarioError::UnknownActor { .. })));

        let mut s = scenario(PEER_METHOD);
        s.steps.push(StepSpec {
            action: Action::Handshake {
                initiator: "lock".into(),
                responder: "speaker".into(),
            },
            expect: None,
            advance: None,
        });
        assert!(matches!(s.validate(), Err(ScenarioError::MissingLink(..))));

        let mut s = scenario(PEER_METHOD);
        s.steps.push(StepSpec {
            action: Action::Rotate { actor: "alice".into() },
            expect: None,
            advance: None,
        });
        assert!(matches!(s.validate(), Err(ScenarioError::RotatePeer { .. })));
    }

    #[test]
    fn rotation_and_resolution() {
        let mut s = scenario(REGISTRY_METHOD);
        s.steps = vec![
            StepSpec {
                action: Action::Resolve {
                    actor: "camera".into(),
                    target: "alice".into(),
                },
                expect: Some("ok(v1)".into()),
                advance: None,
            },
            StepSpec {
                action: Action::Rotate { actor: "alice".into() },
                expect: Some("rotated(v2)".into()),
                advance: None,
            },
            StepSpec {
                action: Action::Resolve {
                    actor: "camera".into(),
                    target: "alice".into(),
                },
                expect: Some("ok(v2)".into()),
                advance: Some(10),
            },
            StepSpec {
                action: Action::Handshake {
                    initiator: "camera".into(),
                    responder: "lock".into(),
                },
                expect: Some("trusted".into()),
                advance: None,
            },
        ];
        let report = run_scenario(&s).unwrap();
        assert!(report.all_matched(), "{report:#?}");
    }

    #[test]
    fn lossy_link_still_trusts() {
        let mut s = scenario(PEER_METHOD);
        s.links[0].loss_probability = Some(0.1);
        s.steps.truncate(1);
        let report = run_scenario(&s).unwrap();
        assert_eq!(report.steps[0].outcome, "trusted");
    }

    #[test]
    fn outcome_prefix_match() {
        assert!(outcome_matches("untrusted", "untrusted(owner_mismatch)"));
        assert!(outcome_matches("trusted", "trusted"));
        assert!(!outcome_matches("trusted", "untrusted(issuer)"));
        assert!(!outcome_matches("fail", "failed(auth)"));
    }
}
