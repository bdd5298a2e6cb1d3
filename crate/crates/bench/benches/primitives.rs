use criterion::{black_box, criterion_group, criterion_main, BenchmarkId, Criterion, Throughput};
use ssi_core::crypto::{agree, counter_nonce, keygen, open, seal, sign, verify, KeyPurpose, Role};
use ssi_core::transport::{fragment, reassemble, LinkProfile};

fn signatures(c: &mut Criterion) {
    let kp = keygen(KeyPurpose::Sign, Some(&[7; 32])).unwrap();
    let msg = vec![0x5a; 512];
    let sig = sign(&kp, &msg).unwrap();
    c.bench_function("ed25519 sign 512B", |b| b.iter(|| sign(&kp, black_box(&msg)).unwrap()));
    c.bench_function("ed25519 verify 512B", |b| b.iter(|| verify(&kp.public, black_box(&msg), &sig)));

    let a = keygen(KeyPurpose::Agree, Some(&[1; 32])).unwrap();
    let p = keygen(KeyPurpose::Agree, Some(&[2; 32])).unwrap();
    c.bench_function("x25519 agree", |b| b.iter(|| agree(&a, black_box(&p.public)).unwrap()));
}

fn aead(c: &mut Criterion) {
    let key = [9u8; 32];
    let mut group = c.benchmark_group("chacha20poly1305");
    for size in [64usize, 222, 1024] {
        let msg = vec![1u8; size];
        let ct = seal(&key, &counter_nonce(Role::Initiator, 1), &msg, b"");
        group.throughput(Throughput::Bytes(size as u64));
        group.bench_with_input(BenchmarkId::new("seal", size), &msg, |b, m| {
            b.iter(|| seal(&key, &counter_nonce(Role::Initiator, 1), m, b""))
        });
        group.bench_with_input(BenchmarkId::new("open", size), &ct, |b, ct| {
            b.iter(|| open(&key, &counter_nonce(Role::Initiator, 1), ct, b"").unwrap())
        });
    }
    group.finish();
}

fn fragmentation(c: &mut Criterion) {
    let msg = vec![3u8; 2048];
    let mut group = c.benchmark_group("fragment+reassemble 2KiB");
    for profile in ["lora", "ble"] {
        let mtu = LinkProfile::builtin(profile).unwrap().mtu;
        group.bench_function(profile, |b| {
            b.iter(|| {
                let frames = fragment(black_box(&msg), mtu, 1).unwrap();
                reassemble(&frames).unwrap()
            })
        });
    }
    group.finish();
}

criterion_group!(benches, signatures, aead, fragmentation);
criterion_main!(benches);
