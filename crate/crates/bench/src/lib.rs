//! Fixtures shared by the benches. Everything is seeded so timings are
//! comparable across runs.

use samo_core::dataset::{generate_synthetic, split_partitions, Protocol, SynthConfig};
use samo_core::numerics::SeededRng;
use samo_core::{Label, Partitions, ScoreSet};

/// `n` Gaussian vectors of length `dim`.
pub fn random_vectors(n: usize, dim: usize, seed: u64) -> Vec<Vec<f64>> {
    let mut rng = SeededRng::new(seed);
    (0..n)
        .map(|_| (0..dim).map(|_| rng.normal()).collect())
        .collect()
}

/// Overlapping bona fide / spoof score sets of `n` scores each.
pub fn score_set(n: usize, seed: u64) -> ScoreSet {
    let mut rng = SeededRng::new(seed);
    let bona = (0..n).map(|_| rng.normal() + 1.0).collect();
    let spoof = (0..n).map(|_| rng.normal() - 1.0).collect();
    ScoreSet::new(bona, spoof)
}

/// Alternating labels, every other sample spoofed.
pub fn labels(n: usize) -> Vec<Label> {
    (0..n)
        .map(|i| {
            if i % 2 == 0 {
                Label::BonaFide
            } else {
                Label::Spoof
            }
        })
        .collect()
}

/// Eight-speaker synthetic corpus split round-robin.
pub fn partitions() -> Partitions {
    let corpus = generate_synthetic(&SynthConfig {
        n_speakers: 8,
        bona_per_speaker: 20,
        spoof_per_attack: 20,
        n_attacks: 4,
        ..SynthConfig::default()
    })
    .expect("valid synthetic config");
    let protocol = Protocol::auto(&corpus, 2);
    split_partitions(&corpus, &protocol, &mut SeededRng::new(0)).expect("valid protocol")
}
