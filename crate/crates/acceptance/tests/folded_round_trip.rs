//! Serialization is the inverse of parsing on every canonical profile.

use acceptance::check;
use atys_core::profile::{
    parse_folded, serialize_folded, FoldedProfile, Frame, ProfileMeta, StackPath, TraceRecord,
};
use rand::prelude::*;
use rand_chacha::ChaCha8Rng;

/// Names exercise the delimiter rules: spaces (including doubled and
/// trailing ones) are legal anywhere, only `;` and newlines are not.
fn random_name(rng: &mut ChaCha8Rng) -> String {
    const ALPHABET: &[char] = &[
        'a', 'b', 'c', 'd', 'e', 'x', 'y', 'z', '0', '7', '_', ':', '(', ')', '<', '>', '.', ' ',
        ' ',
    ];
    loop {
        let len = rng.gen_range(1..=14);
        let name: String = (0..len).map(|_| ALPHABET[rng.gen_range(0..ALPHABET.len())]).collect();
        // All-space names are legal but indistinguishable in a shell; keep
        // at least one visible character so failures print usefully.
        if name.chars().any(|c| c != ' ') {
            return name;
        }
    }
}

fn random_profile(rng: &mut ChaCha8Rng) -> FoldedProfile {
    let thread_pool: Vec<String> = (0..rng.gen_range(1..=6)).map(|_| random_name(rng)).collect();
    let record_count = rng.gen_range(1..=60);
    let records: Vec<TraceRecord> = (0..record_count)
        .map(|_| {
            let depth = rng.gen_range(1..=8);
            let frames: Vec<Frame> = (0..depth)
                .map(|_| Frame::new(random_name(rng)).expect("generator emits valid names"))
                .collect();
            TraceRecord {
                thread: thread_pool[rng.gen_range(0..thread_pool.len())].clone(),
                path: StackPath::new(frames).expect("non-empty"),
                count: rng.gen_range(1..=1_000_000),
            }
        })
        .collect();
    FoldedProfile::new(records, ProfileMeta::synthetic("svc", "inst"))
        .expect("generator emits valid records")
}

#[test]
fn folded_round_trip_is_exact_on_random_profiles() {
    check("folded round-trip", 10.0, || {
        let mut rng = ChaCha8Rng::seed_from_u64(0x0ace);
        for case in 0..1_000 {
            let profile = random_profile(&mut rng);
            let text = serialize_folded(&profile);
            let reparsed = parse_folded(&text, true, profile.meta.clone())
                .map_err(|e| format!("case {case}: reparse failed: {e}"))?;
            if reparsed != profile {
                return Err(format!(
                    "case {case}: round-trip drifted; serialized form:\n{text}"
                ));
            }
        }
        Ok("1000 random canonical profiles round-tripped exactly".to_string())
    });
}
