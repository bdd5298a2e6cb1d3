use std::fs;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use tempfile::TempDir;

const PASS: &str = "correct horse battery staple";
const AT: &str = "1700000000";

fn scenarios() -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("../../scenarios")
}

struct Run {
    code: i32,
    stdout: String,
    stderr: String,
}

fn ssi(dir: &Path, args: &[&str]) -> Run {
    let Output { status, stdout, stderr } = Command::new(env!("CARGO_BIN_EXE_ssi"))
        .args(args)
        .current_dir(dir)
        .env("SSI_PASSPHRASE", PASS)
        .env_remove("SSI_WALLET")
        .env_remove("SSI_REGISTRY")
        .output()
        .expect("binary runs");
    Run {
        code: status.code().unwrap_or(-1),
        stdout: String::from_utf8_lossy(&stdout).into_owned(),
        stderr: String::from_utf8_lossy(&stderr).into_owned(),
    }
}

fn ok(dir: &Path, args: &[&str]) -> String {
    let r = ssi(dir, args);
    assert_eq!(r.code, 0, "ssi {args:?}\nstdout: {}\nstderr: {}", r.stdout, r.stderr);
    r.stdout
}

/// Owner `alice` on the registry, device `camera` with a peer DID, and a
/// credential from alice to camera.
fn provisioned() -> (TempDir, String, String, String) {
    let dir = TempDir::new().unwrap();
    let d = dir.path();
    let alice = ok(d, &["did", "create", "--method", "reg", "--wallet", "alice.wallet", "--registry", "net.reg"]);
    let camera = ok(d, &["did", "create", "--wallet", "camera.wallet", "--endpoint", "lora://cam"]);
    let (alice, camera) = (alice.trim().to_string(), camera.trim().to_string());
    let vc_id = ok(
        d,
        &[
            "vc", "issue", "--wallet", "alice.wallet", "--subject", &camera, "--claim", &format!("owner={alice}"),
            "--claim", "type=SecurityCamera", "--claim", "location=garage", "--out", "camera.vc", "--at", AT,
        ],
    );
    (dir, alice, camera, vc_id.trim().to_string())
}

#[test]
fn issue_verify_present_revoke() {
    let (dir, alice, camera, vc_id) = provisioned();
    let d = dir.path();
    assert!(alice.starts_with("did:reg:") && camera.starts_with("did:peer:"));
    assert!(vc_id.starts_with("urn:vc:"));
    assert!(d.join("camera.openings").exists());

    let verified = ok(d, &["vc", "verify", "camera.vc", "--registry", "net.reg", "--at", AT]);
    assert_eq!(verified.trim(), "valid");

    ok(d, &["vc", "present", "--credential", "camera.vc", "--disclose", "owner", "--out", "camera.vp"]);
    let vp = ok(d, &["vc", "verify", "camera.vp", "--registry", "net.reg", "--at", AT]);
    assert!(vp.contains(&format!("owner = {alice}")) && vp.contains("valid"));
    let vp_bytes = fs::read_to_string(d.join("camera.vp")).unwrap();
    assert!(!vp_bytes.contains("garage") && !vp_bytes.contains("SecurityCamera"));

    ok(d, &["vc", "revoke", "--wallet", "alice.wallet", "--registry", "net.reg", "--id", &vc_id]);
    let revoked = ssi(d, &["vc", "verify", "camera.vc", "--registry", "net.reg", "--at", AT]);
    assert_eq!(revoked.code, 3);
    assert!(revoked.stdout.contains("invalid (revoked)"));
    assert!(revoked.stderr.starts_with("error[verification]"));
}

#[test]
fn tampered_credential_fails_with_signature_reason() {
    let (dir, _, _, _) = provisioned();
    let d = dir.path();
    let text = fs::read_to_string(d.join("camera.vc")).unwrap();
    // Move the issue date one second later; the document stays well formed.
    let tampered = text.replace(&format!("\"issued_at\":{AT}"), "\"issued_at\":1700000001");
    assert_ne!(text, tampered);
    fs::write(d.join("tampered.vc"), tampered).unwrap();
    let r = ssi(d, &["vc", "verify", "tampered.vc", "--registry", "net.reg", "--at", "1700000100"]);
    assert_eq!(r.code, 3);
    assert!(r.stdout.contains("invalid (signature)"), "{}", r.stdout);
}

#[test]
fn peer_issuer_needs_its_document() {
    let dir = TempDir::new().unwrap();
    let d = dir.path();
    let owner = ok(d, &["did", "create", "--wallet", "owner.wallet"]).trim().to_string();
    let device = ok(d, &["did", "create", "--wallet", "device.wallet"]).trim().to_string();
    ok(
        d,
        &["vc", "issue", "--wallet", "owner.wallet", "--subject", &device, "--claim", &format!("owner={owner}"), "--out", "d.vc", "--at", AT],
    );
    let unresolved = ssi(d, &["vc", "verify", "d.vc", "--at", AT]);
    assert_eq!(unresolved.code, 3);
    assert!(unresolved.stdout.contains("issuer_unresolvable"));

    ok(d, &["ddoc", "show", "--wallet", "owner.wallet", "--out", "owner.ddoc"]);
    assert_eq!(ok(d, &["vc", "verify", "d.vc", "--ddoc", "owner.ddoc", "--at", AT]).trim(), "valid");

    ok(d, &["wallet", "import", "--wallet", "device.wallet", "--credential", "d.vc", "--openings", "d.openings"]);
    let listed = ok(d, &["wallet", "list", "--wallet", "device.wallet"]);
    assert!(listed.contains("claims=owner"));
}

#[test]
fn rotation_keeps_old_credentials_valid() {
    let (dir, alice, _, _) = provisioned();
    let d = dir.path();
    let rotated = ok(d, &["ddoc", "rotate-key", "--wallet", "alice.wallet", "--registry", "net.reg", "--at", "1700000050"]);
    assert!(rotated.contains("version 2"));
    let resolved = ok(d, &["did", "resolve", &alice, "--registry", "net.reg", "--at", "1700000060"]);
    assert!(resolved.contains("\"version\": 2") && resolved.contains("previous_keys"));
    assert_eq!(ok(d, &["vc", "verify", "camera.vc", "--registry", "net.reg", "--at", "1700000060"]).trim(), "valid");
    let unlocked = ok(d, &["wallet", "unlock", "--wallet", "alice.wallet"]);
    assert!(unlocked.contains("(retired)") && unlocked.contains("document version: 2"));

    let peer = ssi(d, &["ddoc", "rotate-key", "--wallet", "camera.wallet", "--registry", "net.reg"]);
    assert_eq!(peer.code, 2);
}

#[test]
fn wallet_passphrase_and_integrity() {
    let (dir, _, camera, _) = provisioned();
    let d = dir.path();
    let unlocked = ok(d, &["wallet", "unlock", "--wallet", "camera.wallet"]);
    assert!(unlocked.contains(&camera));

    let wrong = ssi(d, &["wallet", "unlock", "--wallet", "camera.wallet", "--passphrase", "hunter2"]);
    assert_eq!(wrong.code, 3);
    assert!(wrong.stderr.contains("passphrase"), "{}", wrong.stderr);

    let mut bytes = fs::read(d.join("camera.wallet")).unwrap();
    let last = bytes.len() - 1;
    bytes[last] ^= 1;
    fs::write(d.join("camera.wallet"), bytes).unwrap();
    let corrupt = ssi(d, &["wallet", "unlock", "--wallet", "camera.wallet"]);
    assert_eq!(corrupt.code, 3);
    assert!(!corrupt.stderr.contains("passphrase"), "{}", corrupt.stderr);

    let exists = ssi(d, &["wallet", "create", "--wallet", "alice.wallet"]);
    assert_ne!(exists.code, 0);
}

#[test]
fn keygen_is_reproducible_from_seed() {
    let dir = TempDir::new().unwrap();
    let seed = "07".repeat(32);
    let a = ok(dir.path(), &["keygen", "--seed", &seed]);
    let b = ok(dir.path(), &["keygen", "--seed", &seed]);
    assert_eq!(a, b);
    assert!(a.contains("\"purpose\": \"sign\""));
    let bad = ssi(dir.path(), &["keygen", "--seed", "abcd"]);
    assert_eq!(bad.code, 2);
}

#[test]
fn sim_run_reports_and_determinism() {
    let dir = TempDir::new().unwrap();
    let d = dir.path();
    let scn = scenarios().join("owner-two-devices.scn");
    let scn = scn.to_str().unwrap();
    let out = ok(d, &["sim", "run", scn, "--report", "a.json", "--strict"]);
    assert!(out.contains("trusted"));
    ok(d, &["sim", "run", scn, "--report", "b.json"]);
    let a = fs::read(d.join("a.json")).unwrap();
    assert_eq!(a, fs::read(d.join("b.json")).unwrap());
    ok(d, &["sim", "run", scn, "--seed", "5", "--report", "c.json"]);
    assert_ne!(a, fs::read(d.join("c.json")).unwrap());

    let mixed = scenarios().join("mixed-owners.scn");
    ok(d, &["sim", "run", mixed.to_str().unwrap(), "--strict"]);
}

#[test]
fn sim_strict_exit_codes() {
    let dir = TempDir::new().unwrap();
    let d = dir.path();
    let base = fs::read_to_string(scenarios().join("owner-two-devices.scn")).unwrap();

    fs::write(d.join("wrong.scn"), base.replace("\"expect\": \"trusted\"", "\"expect\": \"untrusted\"")).unwrap();
    assert_eq!(ssi(d, &["sim", "run", "wrong.scn"]).code, 0);
    let strict = ssi(d, &["sim", "run", "wrong.scn", "--strict"]);
    assert_eq!(strict.code, 3, "{}", strict.stderr);

    fs::write(d.join("lossy.scn"), base.replace("\"profile\": \"lora\"", "\"profile\": \"lora\", \"loss_probability\": 0.95")).unwrap();
    assert_eq!(ssi(d, &["sim", "run", "lossy.scn", "--strict"]).code, 4);

    fs::write(d.join("bad.scn"), base.replace("\"responder\": \"lock\"", "\"responder\": \"doorbell\"")).unwrap();
    let invalid = ssi(d, &["sim", "run", "bad.scn"]);
    assert_eq!(invalid.code, 2);
    assert!(invalid.stderr.contains("doorbell"));
}

#[test]
fn sim_profiles_lists_builtins() {
    let dir = TempDir::new().unwrap();
    let out = ok(dir.path(), &["sim", "profiles"]);
    for line in ["lora", "ble", "lossless"] {
        assert!(out.contains(line));
    }
    assert!(out.lines().any(|l| l.starts_with("lora") && l.contains("222") && l.contains("214")));
}
