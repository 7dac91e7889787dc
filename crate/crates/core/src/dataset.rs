//! Corpora of labeled feature vectors, the synthetic generator, and the
//! train/dev/eval partition protocol.

use std::collections::{BTreeMap, BTreeSet, HashSet};
use std::fmt;
use std::fs;
use std::path::Path;
use std::str::FromStr;

use crate::error::{Error, Result};
use crate::numerics::{norm, seeded_shuffle, SeededRng};

pub type SpeakerId = String;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum Label {
    BonaFide = 0,
    Spoof = 1,
}

impl Label {
    pub fn as_u8(self) -> u8 {
        self as u8
    }

    pub fn is_bona_fide(self) -> bool {
        self == Label::BonaFide
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct Utterance {
    pub utt_id: String,
    pub speaker: SpeakerId,
    pub label: Label,
    /// `"-"` for bona fide speech.
    pub attack_tag: String,
    pub features: Vec<f64>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct Corpus {
    utterances: Vec<Utterance>,
    feature_dim: usize,
}

impl Corpus {
    pub fn new(utterances: Vec<Utterance>) -> Result<Self> {
        let feature_dim = utterances.first().map_or(0, |u| u.features.len());
        let mut seen = HashSet::new();
        for (i, u) in utterances.iter().enumerate() {
            let line = i + 2;
            if u.features.len() != feature_dim {
                return Err(Error::DimensionMismatch {
                    expected: feature_dim,
                    found: u.features.len(),
                });
            }
            check_tag(u.label, &u.attack_tag).map_err(|msg| Error::Parse { line, msg })?;
            if !seen.insert(u.utt_id.as_str()) {
                return Err(Error::Parse {
                    line,
                    msg: format!("duplicate utt_id `{}`", u.utt_id),
                });
            }
        }
        Ok(Corpus {
            utterances,
            feature_dim,
        })
    }

    pub fn utterances(&self) -> &[Utterance] {
        &self.utterances
    }

    pub fn feature_dim(&self) -> usize {
        self.feature_dim
    }

    pub fn len(&self) -> usize {
        self.utterances.len()
    }

    pub fn is_empty(&self) -> bool {
        self.utterances.is_empty()
    }

    /// Distinct speakers in sorted order.
    pub fn speakers(&self) -> Vec<SpeakerId> {
        let set: BTreeSet<&str> = self.utterances.iter().map(|u| u.speaker.as_str()).collect();
        set.into_iter().map(String::from).collect()
    }

    pub fn to_csv(&self) -> String {
        let mut out = String::from("utt_id,speaker,label,attack_tag");
        for k in 0..self.feature_dim {
            out.push_str(&format!(",f{k}"));
        }
        out.push('\n');
        for u in &self.utterances {
            out.push_str(&format!(
                "{},{},{},{}",
                u.utt_id,
                u.speaker,
                u.label.as_u8(),
                u.attack_tag
            ));
            for v in &u.features {
                out.push_str(&format!(",{v}"));
            }
            out.push('\n');
        }
        out
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        fs::write(path, self.to_csv()).map_err(|e| Error::io(path, e))
    }
}

fn check_tag(label: Label, tag: &str) -> std::result::Result<(), String> {
    match (label, tag == "-") {
        (Label::BonaFide, false) => Err(format!("bona fide row carries attack tag `{tag}`")),
        (Label::Spoof, true) => Err("spoof row is missing an attack tag".into()),
        _ if tag.is_empty() => Err("empty attack tag".into()),
        _ => Ok(()),
    }
}

/// Reads a corpus CSV (`utt_id,speaker,label,attack_tag,f0,...`).
pub fn load_corpus(path: impl AsRef<Path>) -> Result<Corpus> {
    let path = path.as_ref();
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    parse_corpus(&text)
}

pub fn parse_corpus(text: &str) -> Result<Corpus> {
    let mut lines = text
        .lines()
        .enumerate()
        .map(|(i, l)| (i + 1, l.trim_end_matches('\r')));
    let (_, header) = lines
        .find(|(_, l)| !l.trim().is_empty())
        .ok_or(Error::Parse {
            line: 1,
            msg: "missing header".into(),
        })?;
    let cols: Vec<&str> = header.split(',').map(str::trim).collect();
    if cols.len() < 5 || cols[..4] != ["utt_id", "speaker", "label", "attack_tag"] {
        return Err(Error::Parse {
            line: 1,
            msg: "header must start with utt_id,speaker,label,attack_tag and list features".into(),
        });
    }
    let feature_dim = cols.len() - 4;
    for (k, c) in cols[4..].iter().enumerate() {
        if *c != format!("f{k}") {
            return Err(Error::Parse {
                line: 1,
                msg: format!("expected feature column f{k}, found `{c}`"),
            });
        }
    }

    let mut utterances = Vec::new();
    let mut seen = HashSet::new();
    for (line, raw) in lines {
        if raw.trim().is_empty() {
            continue;
        }
        let fields: Vec<&str> = raw.split(',').map(str::trim).collect();
        if fields.len() != 4 + feature_dim {
            return Err(Error::DimensionMismatch {
                expected: feature_dim,
                found: fields.len().saturating_sub(4),
            });
        }
        let perr = |msg: String| Error::Parse { line, msg };
        let label = match fields[2] {
            "0" => Label::BonaFide,
            "1" => Label::Spoof,
            other => return Err(perr(format!("label must be 0 or 1, found `{other}`"))),
        };
        check_tag(label, fields[3]).map_err(perr)?;
        if fields[0].is_empty() || fields[1].is_empty() {
            return Err(perr("empty utt_id or speaker".into()));
        }
        if !seen.insert(fields[0].to_string()) {
            return Err(perr(format!("duplicate utt_id `{}`", fields[0])));
        }
        let features = fields[4..]
            .iter()
            .map(|f| match f.parse::<f64>() {
                Ok(v) if v.is_finite() => Ok(v),
                _ => Err(perr(format!("invalid feature value `{f}`"))),
            })
            .collect::<Result<Vec<_>>>()?;
        utterances.push(Utterance {
            utt_id: fields[0].to_string(),
            speaker: fields[1].to_string(),
            label,
            attack_tag: fields[3].to_string(),
            features,
        });
    }
    Corpus::new(utterances)
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum SpoofPlacement {
    /// Spoof clusters sit at midpoints of pairs of speaker means.
    BetweenSpeakers,
    /// Each attack shifts every speaker mean by a fixed random offset.
    PerSpeakerOffset,
    /// Attack means are random directions at the speaker radius.
    UniformShell,
}

impl FromStr for SpoofPlacement {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "between_speakers" => Ok(SpoofPlacement::BetweenSpeakers),
            "per_speaker_offset" => Ok(SpoofPlacement::PerSpeakerOffset),
            "uniform_shell" => Ok(SpoofPlacement::UniformShell),
            _ => Err(Error::Config(format!("unknown spoof placement `{s}`"))),
        }
    }
}

impl fmt::Display for SpoofPlacement {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            SpoofPlacement::BetweenSpeakers => "between_speakers",
            SpoofPlacement::PerSpeakerOffset => "per_speaker_offset",
            SpoofPlacement::UniformShell => "uniform_shell",
        })
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct SynthConfig {
    pub n_speakers: usize,
    pub bona_per_speaker: usize,
    pub spoof_per_attack: usize,
    pub n_attacks: usize,
    pub feature_dim: usize,
    /// Distance of each speaker mean from the origin.
    pub speaker_scale: f64,
    pub speaker_spread: f64,
    pub spoof_spread: f64,
    pub spoof_placement: SpoofPlacement,
    pub seed: u64,
}

impl Default for SynthConfig {
    fn default() -> Self {
        SynthConfig {
            n_speakers: 2,
            bona_per_speaker: 10,
            spoof_per_attack: 10,
            n_attacks: 2,
            feature_dim: 8,
            speaker_scale: 1.0,
            speaker_spread: 0.15,
            spoof_spread: 0.15,
            spoof_placement: SpoofPlacement::BetweenSpeakers,
            seed: 0,
        }
    }
}

impl SynthConfig {
    pub fn validate(&self) -> Result<()> {
        let counts = [
            ("n_speakers", self.n_speakers),
            ("bona_per_speaker", self.bona_per_speaker),
            ("spoof_per_attack", self.spoof_per_attack),
            ("n_attacks", self.n_attacks),
            ("feature_dim", self.feature_dim),
        ];
        for (name, v) in counts {
            if v == 0 {
                return Err(Error::Config(format!("{name} must be >= 1")));
            }
        }
        for (name, v) in [
            ("speaker_scale", self.speaker_scale),
            ("speaker_spread", self.speaker_spread),
            ("spoof_spread", self.spoof_spread),
        ] {
            if !(v > 0.0 && v.is_finite()) {
                return Err(Error::Config(format!("{name} must be positive")));
            }
        }
        if self.n_speakers > self.feature_dim {
            return Err(Error::Config(format!(
                "n_speakers ({}) exceeds feature_dim ({})",
                self.n_speakers, self.feature_dim
            )));
        }
        if self.spoof_placement == SpoofPlacement::BetweenSpeakers && self.n_speakers < 2 {
            return Err(Error::Config(
                "between_speakers placement needs at least 2 speakers".into(),
            ));
        }
        Ok(())
    }

    /// Mean of speaker `s`: `±scale · e_{s/2}`, alternating sign.
    pub fn speaker_mean(&self, s: usize) -> Vec<f64> {
        let mut mu = vec![0.0; self.feature_dim];
        mu[s / 2] = if s.is_multiple_of(2) {
            self.speaker_scale
        } else {
            -self.speaker_scale
        };
        mu
    }
}

pub fn speaker_name(s: usize) -> SpeakerId {
    format!("spk{s:02}")
}

pub fn attack_name(k: usize) -> String {
    format!("A{:02}", k + 1)
}

/// Draws a corpus with Gaussian speaker clusters and placed spoof clusters.
pub fn generate_synthetic(cfg: &SynthConfig) -> Result<Corpus> {
    cfg.validate()?;
    let mut rng = SeededRng::new(cfg.seed);
    let dim = cfg.feature_dim;
    let sample = |rng: &mut SeededRng, mean: &[f64], spread: f64| -> Vec<f64> {
        mean.iter().map(|m| m + spread * rng.normal()).collect()
    };

    let mut utts = Vec::with_capacity(
        cfg.n_speakers * cfg.bona_per_speaker + cfg.n_attacks * cfg.spoof_per_attack,
    );
    for s in 0..cfg.n_speakers {
        let mean = cfg.speaker_mean(s);
        for j in 0..cfg.bona_per_speaker {
            utts.push(Utterance {
                utt_id: format!("{}_bona_{j:04}", speaker_name(s)),
                speaker: speaker_name(s),
                label: Label::BonaFide,
                attack_tag: "-".into(),
                features: sample(&mut rng, &mean, cfg.speaker_spread),
            });
        }
    }

    let mut pairs: Vec<(usize, usize)> = (0..cfg.n_speakers)
        .flat_map(|a| ((a + 1)..cfg.n_speakers).map(move |b| (a, b)))
        .collect();
    let order = seeded_shuffle(pairs.len(), &mut rng);
    pairs = order.into_iter().map(|i| pairs[i]).collect();

    let random_direction = |rng: &mut SeededRng| -> Vec<f64> {
        loop {
            let v: Vec<f64> = (0..dim).map(|_| rng.normal()).collect();
            let n = norm(&v);
            if n > 1e-8 {
                return v.into_iter().map(|x| x / n).collect();
            }
        }
    };

    for k in 0..cfg.n_attacks {
        let tag = attack_name(k);
        let (claimants, means): (Vec<usize>, Vec<Vec<f64>>) = match cfg.spoof_placement {
            SpoofPlacement::BetweenSpeakers => {
                let (a, b) = pairs[k % pairs.len()];
                let mid: Vec<f64> = cfg
                    .speaker_mean(a)
                    .iter()
                    .zip(cfg.speaker_mean(b))
                    .map(|(x, y)| 0.5 * (x + y))
                    .collect();
                (vec![a, b], vec![mid.clone(), mid])
            }
            SpoofPlacement::PerSpeakerOffset => {
                let offset: Vec<f64> = random_direction(&mut rng)
                    .into_iter()
                    .map(|x| 0.5 * cfg.speaker_scale * x)
                    .collect();
                let speakers: Vec<usize> = (0..cfg.n_speakers).collect();
                let means = speakers
                    .iter()
                    .map(|&s| {
                        cfg.speaker_mean(s)
                            .iter()
                            .zip(&offset)
                            .map(|(m, o)| m + o)
                            .collect()
                    })
                    .collect();
                (speakers, means)
            }
            SpoofPlacement::UniformShell => {
                let mean: Vec<f64> = random_direction(&mut rng)
                    .into_iter()
                    .map(|x| cfg.speaker_scale * x)
                    .collect();
                let speakers: Vec<usize> = (0..cfg.n_speakers).collect();
                let means = vec![mean; speakers.len()];
                (speakers, means)
            }
        };
        for j in 0..cfg.spoof_per_attack {
            let slot = j % claimants.len();
            let s = claimants[slot];
            utts.push(Utterance {
                utt_id: format!("{tag}_{j:04}"),
                speaker: speaker_name(s),
                label: Label::Spoof,
                attack_tag: tag.clone(),
                features: sample(&mut rng, &means[slot], cfg.spoof_spread),
            });
        }
    }
    Corpus::new(utts)
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum PartitionName {
    Train,
    Dev,
    Eval,
}

impl FromStr for PartitionName {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "train" => Ok(PartitionName::Train),
            "dev" => Ok(PartitionName::Dev),
            "eval" => Ok(PartitionName::Eval),
            _ => Err(Error::Config(format!("unknown partition `{s}`"))),
        }
    }
}

impl fmt::Display for PartitionName {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            PartitionName::Train => "train",
            PartitionName::Dev => "dev",
            PartitionName::Eval => "eval",
        })
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct Partition {
    pub name: PartitionName,
    pub train_utts: Vec<Utterance>,
    pub enroll_utts: Vec<Utterance>,
    pub test_utts: Vec<Utterance>,
}

impl Partition {
    /// Utterances that get scored: `train_utts` for the training
    /// partition, `test_utts` otherwise.
    pub fn scored_utts(&self) -> &[Utterance] {
        match self.name {
            PartitionName::Train => &self.train_utts,
            _ => &self.test_utts,
        }
    }

    pub fn speakers(&self) -> Vec<SpeakerId> {
        let set: BTreeSet<&str> = self
            .train_utts
            .iter()
            .chain(&self.enroll_utts)
            .chain(&self.test_utts)
            .map(|u| u.speaker.as_str())
            .collect();
        set.into_iter().map(String::from).collect()
    }

    pub fn all_utts(&self) -> impl Iterator<Item = &Utterance> {
        self.train_utts
            .iter()
            .chain(&self.enroll_utts)
            .chain(&self.test_utts)
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct Partitions {
    pub train: Partition,
    pub dev: Partition,
    pub eval: Partition,
}

impl Partitions {
    pub fn get(&self, name: PartitionName) -> &Partition {
        match name {
            PartitionName::Train => &self.train,
            PartitionName::Dev => &self.dev,
            PartitionName::Eval => &self.eval,
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct Protocol {
    pub train_speakers: Vec<SpeakerId>,
    pub dev_speakers: Vec<SpeakerId>,
    pub eval_speakers: Vec<SpeakerId>,
    pub enroll_per_speaker: usize,
}

impl Protocol {
    /// Round-robin assignment over sorted speakers: train, dev, train, eval.
    pub fn auto(corpus: &Corpus, enroll_per_speaker: usize) -> Self {
        let mut p = Protocol {
            train_speakers: Vec::new(),
            dev_speakers: Vec::new(),
            eval_speakers: Vec::new(),
            enroll_per_speaker,
        };
        for (k, s) in corpus.speakers().into_iter().enumerate() {
            match k % 4 {
                1 => p.dev_speakers.push(s),
                3 => p.eval_speakers.push(s),
                _ => p.train_speakers.push(s),
            }
        }
        p
    }
}

/// Splits a corpus by speaker and carves enrollment utterances out of the
/// dev/eval bona fide speech.
pub fn split_partitions(
    corpus: &Corpus,
    protocol: &Protocol,
    rng: &mut SeededRng,
) -> Result<Partitions> {
    let mut role: BTreeMap<&str, PartitionName> = BTreeMap::new();
    for (name, list) in [
        (PartitionName::Train, &protocol.train_speakers),
        (PartitionName::Dev, &protocol.dev_speakers),
        (PartitionName::Eval, &protocol.eval_speakers),
    ] {
        for s in list {
            if let Some(prev) = role.insert(s.as_str(), name) {
                return Err(Error::Protocol(format!(
                    "speaker `{s}` listed in both {prev} and {name}"
                )));
            }
        }
    }
    let corpus_speakers = corpus.speakers();
    for s in &corpus_speakers {
        if !role.contains_key(s.as_str()) {
            return Err(Error::Protocol(format!(
                "speaker `{s}` not assigned to any partition"
            )));
        }
    }
    for s in role.keys() {
        if corpus_speakers
            .binary_search_by(|c| c.as_str().cmp(s))
            .is_err()
        {
            return Err(Error::Protocol(format!(
                "speaker `{s}` does not occur in the corpus"
            )));
        }
    }
    if protocol.enroll_per_speaker == 0 {
        return Err(Error::Protocol("enroll_per_speaker must be >= 1".into()));
    }

    let mut parts = Partitions {
        train: empty_partition(PartitionName::Train),
        dev: empty_partition(PartitionName::Dev),
        eval: empty_partition(PartitionName::Eval),
    };

    let mut bona_by_speaker: BTreeMap<&str, Vec<usize>> = BTreeMap::new();
    for (i, u) in corpus.utterances().iter().enumerate() {
        if u.label.is_bona_fide() {
            bona_by_speaker
                .entry(u.speaker.as_str())
                .or_default()
                .push(i);
        }
    }

    let mut enrolled = vec![false; corpus.len()];
    for (name, list) in [
        (PartitionName::Dev, &protocol.dev_speakers),
        (PartitionName::Eval, &protocol.eval_speakers),
    ] {
        for s in list {
            let bona = bona_by_speaker
                .get(s.as_str())
                .map_or(&[][..], Vec::as_slice);
            if bona.len() <= protocol.enroll_per_speaker {
                return Err(Error::Protocol(format!(
                    "{name} speaker `{s}` has {} bona fide utterances; need more than {}",
                    bona.len(),
                    protocol.enroll_per_speaker
                )));
            }
            let perm = seeded_shuffle(bona.len(), rng);
            for &p in &perm[..protocol.enroll_per_speaker] {
                enrolled[bona[p]] = true;
            }
        }
    }

    for (i, u) in corpus.utterances().iter().enumerate() {
        let part = match role[u.speaker.as_str()] {
            PartitionName::Train => {
                parts.train.train_utts.push(u.clone());
                continue;
            }
            PartitionName::Dev => &mut parts.dev,
            PartitionName::Eval => &mut parts.eval,
        };
        if enrolled[i] {
            part.enroll_utts.push(u.clone());
        } else {
            part.test_utts.push(u.clone());
        }
    }
    Ok(parts)
}

fn empty_partition(name: PartitionName) -> Partition {
    Partition {
        name,
        train_utts: Vec::new(),
        enroll_utts: Vec::new(),
        test_utts: Vec::new(),
    }
}

/// One epoch of mini-batches over a fresh permutation; the last batch may be short.
pub fn batch_iter<'a>(
    utts: &'a [Utterance],
    batch_size: usize,
    rng: &mut SeededRng,
) -> Vec<Vec<&'a Utterance>> {
    assert!(batch_size >= 1, "batch size must be positive");
    let perm = seeded_shuffle(utts.len(), rng);
    perm.chunks(batch_size)
        .map(|chunk| chunk.iter().map(|&i| &utts[i]).collect())
        .collect()
}
