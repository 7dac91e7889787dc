#![allow(dead_code)]

use samo_core::dataset::{
    generate_synthetic, split_partitions, Protocol, SpoofPlacement, SynthConfig,
};
use samo_core::numerics::SeededRng;
use samo_core::trainer::{Objective, TrainConfig};
use samo_core::Partitions;

/// Eight speakers on signed axes with spoof clusters between speaker pairs.
pub fn scenario_corpus() -> SynthConfig {
    SynthConfig {
        n_speakers: 8,
        bona_per_speaker: 20,
        spoof_per_attack: 40,
        n_attacks: 4,
        feature_dim: 8,
        speaker_spread: 0.15,
        spoof_spread: 0.15,
        spoof_placement: SpoofPlacement::BetweenSpeakers,
        ..SynthConfig::default()
    }
}

pub fn partitions(cfg: &SynthConfig, enroll_per_speaker: usize) -> Partitions {
    let corpus = generate_synthetic(cfg).unwrap();
    let protocol = Protocol::auto(&corpus, enroll_per_speaker);
    split_partitions(&corpus, &protocol, &mut SeededRng::new(0)).unwrap()
}

/// Four speakers, few utterances: fast enough for many training runs.
pub fn small_partitions() -> Partitions {
    partitions(
        &SynthConfig {
            n_speakers: 4,
            bona_per_speaker: 8,
            spoof_per_attack: 6,
            // one attack per speaker pair, so every speaker is a spoof target
            n_attacks: 6,
            ..SynthConfig::default()
        },
        2,
    )
}

pub fn small_config(objective: Objective) -> TrainConfig {
    TrainConfig {
        epochs: 6,
        hidden_dims: vec![12],
        embedding_dim: 6,
        batch_size: 6,
        lr0: 1e-2,
        ..TrainConfig::new(objective)
    }
}
