mod common;

use std::time::Instant;

use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use common::brute_force_matches as brute_force;
use msr_core::matching::{frequency_array, longest_common_substring_len, maximal_common_substrings};

fn words(seq: &[u8]) -> Vec<String> {
    seq.iter().map(|c| format!("w{c}")).collect()
}

#[test]
fn brute_force_agrees_on_random_pairs() {
    let mut rng = ChaCha8Rng::seed_from_u64(2024);
    let mut mismatches = 0;
    for _ in 0..400 {
        let la = rng.gen_range(0..=40);
        let lb = rng.gen_range(0..=40);
        let a: Vec<u8> = (0..la).map(|_| rng.gen_range(0..5)).collect();
        let b: Vec<u8> = (0..lb).map(|_| rng.gen_range(0..5)).collect();
        if maximal_common_substrings(&words(&a), &words(&b)) != brute_force(&a, &b) {
            mismatches += 1;
        }
    }
    assert_eq!(mismatches, 0);
}

#[test]
fn oracle_reproduces_worked_example() {
    let r = "the cat sat on the mat".split(' ').collect::<Vec<_>>();
    let g = "the cat sat near the mat".split(' ').collect::<Vec<_>>();
    let to_ids = |s: &[&str]| s.iter().map(|w| match *w {
        "the" => 0, "cat" => 1, "sat" => 2, "on" => 3, "mat" => 4, _ => 5,
    }).collect::<Vec<u8>>();
    let oracle = brute_force(&to_ids(&r), &to_ids(&g));
    assert_eq!(maximal_common_substrings(&r, &g), oracle);
    let mut lengths: Vec<_> = oracle.iter().map(|m| m.length).collect();
    lengths.sort_unstable_by(|a, b| b.cmp(a));
    assert_eq!(lengths, [3, 2, 1, 1]);
    assert_eq!(frequency_array(&oracle, 1, 4).unwrap().counts, [4, 2, 1, 0]);
}

#[test]
fn no_shared_start_pairs() {
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    for _ in 0..50 {
        let a: Vec<u8> = (0..30).map(|_| rng.gen_range(0..3)).collect();
        let b: Vec<u8> = (0..30).map(|_| rng.gen_range(0..3)).collect();
        let ms = maximal_common_substrings(&words(&a), &words(&b));
        let mut starts: Vec<_> = ms.iter().map(|m| (m.pos_ref, m.pos_gen)).collect();
        starts.dedup();
        assert_eq!(starts.len(), ms.len());
    }
}

#[test]
fn long_pairs_are_fast() {
    let mut rng = ChaCha8Rng::seed_from_u64(9);
    let a: Vec<String> = (0..512).map(|_| format!("t{}", rng.gen_range(0..50))).collect();
    let mut b = a.clone();
    for w in b.iter_mut().step_by(7) {
        *w = format!("x{}", rng.gen_range(0..50));
    }
    let runs = 20;
    let start = Instant::now();
    for _ in 0..runs {
        std::hint::black_box(maximal_common_substrings(&a, &b));
    }
    let per_pair = start.elapsed() / runs;
    // Generous for unoptimized test builds.
    assert!(per_pair.as_millis() < 50, "{per_pair:?} per pair");
}

proptest! {
    #[test]
    fn proptest_oracle(a in prop::collection::vec(0u8..5, 0..=40), b in prop::collection::vec(0u8..5, 0..=40)) {
        prop_assert_eq!(maximal_common_substrings(&words(&a), &words(&b)), brute_force(&a, &b));
    }

    #[test]
    fn lcs_is_max_oracle_length(a in prop::collection::vec(0u8..4, 0..=30), b in prop::collection::vec(0u8..4, 0..=30)) {
        let expected = brute_force(&a, &b).iter().map(|m| m.length).max().unwrap_or(0);
        prop_assert_eq!(longest_common_substring_len(&words(&a), &words(&b)), expected);
    }
}
