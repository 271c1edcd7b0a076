//! Runs every checked-in corpus file through its harness on stable.

use std::fs;
use std::path::Path;

fn replay(target: &str, f: fn(&[u8])) {
    let dir = Path::new(env!("CARGO_MANIFEST_DIR")).join("corpus").join(target);
    let mut n = 0;
    for entry in fs::read_dir(&dir).unwrap() {
        f(&fs::read(entry.unwrap().path()).unwrap());
        n += 1;
    }
    assert!(n > 0, "empty corpus for {target}");
}

#[test]
fn corpora() {
    replay("prediction", amtgen_fuzz::prediction);
    replay("labeled_output", amtgen_fuzz::labeled_output);
    replay("jsonl_records", amtgen_fuzz::jsonl_records);
    replay("wire_response", amtgen_fuzz::wire_response);
    replay("clean_text", amtgen_fuzz::clean);
    replay("config", amtgen_fuzz::config);
    replay("source_adapter", amtgen_fuzz::source_adapter);
}

/// Cheap stand-in for a fuzzing session: byte flips, truncations and
/// splices of the corpus, deterministic so failures reproduce.
#[test]
fn mutated_corpora() {
    let targets: [(&str, fn(&[u8])); 7] = [
        ("prediction", amtgen_fuzz::prediction),
        ("labeled_output", amtgen_fuzz::labeled_output),
        ("jsonl_records", amtgen_fuzz::jsonl_records),
        ("wire_response", amtgen_fuzz::wire_response),
        ("clean_text", amtgen_fuzz::clean),
        ("config", amtgen_fuzz::config),
        ("source_adapter", amtgen_fuzz::source_adapter),
    ];
    let mut state = 0x9e37_79b9_7f4a_7c15u64;
    let mut next = move || {
        state ^= state << 13;
        state ^= state >> 7;
        state ^= state << 17;
        state
    };
    for (target, f) in targets {
        let dir = Path::new(env!("CARGO_MANIFEST_DIR")).join("corpus").join(target);
        let seeds: Vec<Vec<u8>> = fs::read_dir(&dir).unwrap().map(|e| fs::read(e.unwrap().path()).unwrap()).collect();
        for _ in 0..3000 {
            let mut d = seeds[next() as usize % seeds.len()].clone();
            for _ in 0..1 + next() % 4 {
                let at = if d.is_empty() { 0 } else { next() as usize % d.len() };
                match next() % 4 {
                    0 if !d.is_empty() => d[at] = next() as u8,
                    1 => d.truncate(at),
                    2 => d.insert(at, b"{}[]\":,\n\\ #@0.-e"[next() as usize % 16]),
                    _ => {
                        let other = &seeds[next() as usize % seeds.len()];
                        let from = if other.is_empty() { 0 } else { next() as usize % other.len() };
                        d.splice(at..at, other[from..].iter().copied());
                    }
                }
            }
            f(&d);
        }
    }
}
