//! Flat `key=value` configuration shared by the CLI and protocol files.
//!
//! Lines are `key=value`; blank lines and `#` comments are ignored. Every
//! key has a default (see [`KEYS`]); unknown keys are rejected. An empty
//! value means "unset" for the optional keys.

use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use crate::dataset::{Corpus, Protocol, SpoofPlacement, SynthConfig};
use crate::encoder::Activation;
use crate::error::{Error, Result};
use crate::metrics::TdcfParams;
use crate::objective::{AttractorAveraging, MarginConfig};
use crate::trainer::{AttractorInit, Objective, TrainConfig};

/// `(key, default, description)` for every accepted key, in echo order.
pub const KEYS: &[(&str, &str, &str)] = &[
    // synthetic corpus
    ("n_speakers", "2", "speakers in the synthetic corpus"),
    ("bona_per_speaker", "10", "bona fide utterances per speaker"),
    ("spoof_per_attack", "10", "spoofed utterances per attack"),
    ("n_attacks", "2", "number of attacks"),
    ("feature_dim", "8", "feature dimension F"),
    (
        "speaker_scale",
        "1",
        "distance of speaker means from the origin",
    ),
    ("speaker_spread", "0.15", "std of bona fide clusters"),
    ("spoof_spread", "0.15", "std of spoof clusters"),
    (
        "spoof_placement",
        "between_speakers",
        "between_speakers | per_speaker_offset | uniform_shell",
    ),
    ("data_seed", "0", "seed of the synthetic generator"),
    // corpus and protocol
    (
        "corpus",
        "",
        "corpus CSV; empty generates the synthetic corpus in memory",
    ),
    (
        "train_speakers",
        "",
        "comma list; all three empty selects the round-robin split",
    ),
    ("dev_speakers", "", "comma list"),
    ("eval_speakers", "", "comma list"),
    (
        "enroll_per_speaker",
        "2",
        "enrollment utterances per dev/eval speaker",
    ),
    ("protocol_seed", "0", "seed choosing enrollment utterances"),
    // training
    ("objective", "samo", "samo | ocs | softmax"),
    ("epochs", "100", "total epochs T"),
    (
        "update_interval",
        "3",
        "attractor update interval M (epochs)",
    ),
    (
        "update_epochs",
        "",
        "explicit attractor update epochs, overriding the interval",
    ),
    ("attractors_frozen", "false", "never update attractors"),
    ("attractor_init", "onehot", "onehot | random_orthonormal"),
    ("attractor_averaging", "normalized", "normalized | raw"),
    (
        "alpha",
        "",
        "scale factor; empty uses the objective default (20)",
    ),
    (
        "m0",
        "",
        "bona fide margin; empty uses 0.7 (samo) or 0.5 (ocs)",
    ),
    ("m1", "", "spoof margin; empty uses 0 (samo) or -0.2 (ocs)"),
    ("lr", "0.0001", "initial learning rate"),
    ("lr_min", "0", "final learning rate of the cosine schedule"),
    ("batch_size", "24", "mini-batch size"),
    ("weight_decay", "0", "L2 penalty added to gradients"),
    ("seed", "0", "training seed"),
    ("hidden_dims", "64,64", "hidden layer widths"),
    ("embedding_dim", "160", "embedding dimension D"),
    ("activation", "relu", "relu | tanh"),
    ("threads", "1", "worker threads for per-utterance work"),
    // t-DCF
    ("pi_tar", "0.9405", "target prior"),
    ("pi_non", "0.0095", "non-target prior"),
    ("pi_spoof", "0.05", "spoof prior"),
    ("c_miss_cm", "1", "cost of a CM miss"),
    ("c_fa_cm", "10", "cost of a CM false alarm"),
    ("c_miss_asv", "1", "cost of an ASV miss"),
    ("c_fa_asv", "10", "cost of an ASV false alarm"),
    ("p_miss_asv", "0.05", "fixed ASV miss rate"),
    ("p_fa_asv", "0.01", "fixed ASV false alarm rate"),
    ("p_miss_spoof_asv", "0.5", "fixed ASV miss rate on spoofs"),
];

/// Resolved key/value pairs.
#[derive(Clone, Debug, PartialEq)]
pub struct Config {
    values: BTreeMap<String, String>,
}

impl Default for Config {
    fn default() -> Self {
        Config {
            values: KEYS
                .iter()
                .map(|(k, v, _)| (k.to_string(), v.to_string()))
                .collect(),
        }
    }
}

impl Config {
    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let mut cfg = Config::default();
        cfg.apply_text(&text)?;
        Ok(cfg)
    }

    pub fn parse(text: &str) -> Result<Self> {
        let mut cfg = Config::default();
        cfg.apply_text(text)?;
        Ok(cfg)
    }

    pub fn apply_text(&mut self, text: &str) -> Result<()> {
        for (i, raw) in text.lines().enumerate() {
            let line = raw.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let (k, v) = line.split_once('=').ok_or(Error::Parse {
                line: i + 1,
                msg: format!("expected key=value, found `{line}`"),
            })?;
            self.set(k.trim(), v.trim())?;
        }
        Ok(())
    }

    /// Applies a single `key=value` override.
    pub fn apply_override(&mut self, kv: &str) -> Result<()> {
        let (k, v) = kv
            .split_once('=')
            .ok_or_else(|| Error::Config(format!("override `{kv}` is not key=value")))?;
        self.set(k.trim(), v.trim())
    }

    pub fn set(&mut self, key: &str, value: &str) -> Result<()> {
        match self.values.get_mut(key) {
            Some(slot) => {
                *slot = value.to_string();
                Ok(())
            }
            None => Err(Error::Config(format!("unknown key `{key}`"))),
        }
    }

    pub fn get(&self, key: &str) -> &str {
        self.values
            .get(key)
            .map(String::as_str)
            .unwrap_or_else(|| panic!("`{key}` is not a known key"))
    }

    /// All keys in [`KEYS`] order, one `key=value` per line.
    pub fn to_text(&self) -> String {
        KEYS.iter()
            .map(|(k, _, _)| format!("{k}={}\n", self.get(k)))
            .collect()
    }

    fn parsed<T: FromStr>(&self, key: &str) -> Result<T> {
        let raw = self.get(key);
        raw.parse()
            .map_err(|_| Error::Config(format!("invalid value `{raw}` for `{key}`")))
    }

    fn optional<T: FromStr>(&self, key: &str) -> Result<Option<T>> {
        if self.get(key).is_empty() {
            Ok(None)
        } else {
            self.parsed(key).map(Some)
        }
    }

    fn list<T: FromStr>(&self, key: &str) -> Result<Vec<T>> {
        self.get(key)
            .split(',')
            .map(str::trim)
            .filter(|s| !s.is_empty())
            .map(|s| {
                s.parse()
                    .map_err(|_| Error::Config(format!("invalid entry `{s}` in `{key}`")))
            })
            .collect()
    }

    fn flag(&self, key: &str) -> Result<bool> {
        match self.get(key) {
            "true" | "1" | "yes" => Ok(true),
            "false" | "0" | "no" => Ok(false),
            other => Err(Error::Config(format!(
                "invalid boolean `{other}` for `{key}`"
            ))),
        }
    }

    pub fn synth(&self) -> Result<SynthConfig> {
        Ok(SynthConfig {
            n_speakers: self.parsed("n_speakers")?,
            bona_per_speaker: self.parsed("bona_per_speaker")?,
            spoof_per_attack: self.parsed("spoof_per_attack")?,
            n_attacks: self.parsed("n_attacks")?,
            feature_dim: self.parsed("feature_dim")?,
            speaker_scale: self.parsed("speaker_scale")?,
            speaker_spread: self.parsed("speaker_spread")?,
            spoof_spread: self.parsed("spoof_spread")?,
            spoof_placement: SpoofPlacement::from_str(self.get("spoof_placement"))?,
            seed: self.parsed("data_seed")?,
        })
    }

    pub fn corpus_path(&self) -> Option<PathBuf> {
        let p = self.get("corpus");
        (!p.is_empty()).then(|| PathBuf::from(p))
    }

    pub fn protocol_seed(&self) -> Result<u64> {
        self.parsed("protocol_seed")
    }

    /// The configured speaker split, or the round-robin split when no
    /// speaker lists are given.
    pub fn protocol(&self, corpus: &Corpus) -> Result<Protocol> {
        let enroll_per_speaker = self.parsed("enroll_per_speaker")?;
        let train: Vec<String> = self.list("train_speakers")?;
        let dev: Vec<String> = self.list("dev_speakers")?;
        let eval: Vec<String> = self.list("eval_speakers")?;
        if train.is_empty() && dev.is_empty() && eval.is_empty() {
            return Ok(Protocol::auto(corpus, enroll_per_speaker));
        }
        Ok(Protocol {
            train_speakers: train,
            dev_speakers: dev,
            eval_speakers: eval,
            enroll_per_speaker,
        })
    }

    pub fn objective(&self) -> Result<Objective> {
        Objective::from_str(self.get("objective"))
    }

    pub fn tdcf(&self) -> Result<TdcfParams> {
        let p = TdcfParams {
            pi_tar: self.parsed("pi_tar")?,
            pi_non: self.parsed("pi_non")?,
            pi_spoof: self.parsed("pi_spoof")?,
            c_miss_cm: self.parsed("c_miss_cm")?,
            c_fa_cm: self.parsed("c_fa_cm")?,
            c_miss_asv: self.parsed("c_miss_asv")?,
            c_fa_asv: self.parsed("c_fa_asv")?,
            p_miss_asv: self.parsed("p_miss_asv")?,
            p_fa_asv: self.parsed("p_fa_asv")?,
            p_miss_spoof_asv: self.parsed("p_miss_spoof_asv")?,
        };
        p.validate()?;
        Ok(p)
    }

    /// Margins, falling back per field to the objective's defaults.
    pub fn margins(&self, objective: Objective) -> Result<MarginConfig> {
        let base = objective.default_margins();
        Ok(MarginConfig {
            alpha: self.optional("alpha")?.unwrap_or(base.alpha),
            m_bona: self.optional("m0")?.unwrap_or(base.m_bona),
            m_spoof: self.optional("m1")?.unwrap_or(base.m_spoof),
        })
    }

    /// Fills unset margin keys with the objective's defaults, so an echoed
    /// config states the margins that were used.
    pub fn resolve_margins(&mut self) -> Result<()> {
        let m = self.margins(self.objective()?)?;
        for (key, value) in [("alpha", m.alpha), ("m0", m.m_bona), ("m1", m.m_spoof)] {
            if self.get(key).is_empty() {
                self.set(key, &value.to_string())?;
            }
        }
        Ok(())
    }

    pub fn train(&self) -> Result<TrainConfig> {
        let objective = self.objective()?;
        let update_epochs: Vec<usize> = self.list("update_epochs")?;
        let cfg = TrainConfig {
            objective,
            epochs: self.parsed("epochs")?,
            update_interval: self.parsed("update_interval")?,
            update_epochs_override: (!update_epochs.is_empty()).then_some(update_epochs),
            attractors_frozen: self.flag("attractors_frozen")?,
            attractor_init: AttractorInit::from_str(self.get("attractor_init"))?,
            attractor_averaging: AttractorAveraging::from_str(self.get("attractor_averaging"))?,
            margins: self.margins(objective)?,
            lr0: self.parsed("lr")?,
            lr_min: self.parsed("lr_min")?,
            batch_size: self.parsed("batch_size")?,
            weight_decay: self.parsed("weight_decay")?,
            seed: self.parsed("seed")?,
            hidden_dims: self.list("hidden_dims")?,
            embedding_dim: self.parsed("embedding_dim")?,
            activation: Activation::from_str(self.get("activation"))?,
            threads: self.parsed("threads")?,
            tdcf: self.tdcf()?,
        };
        cfg.validate()?;
        Ok(cfg)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn defaults_resolve() {
        let cfg = Config::default();
        let train = cfg.train().unwrap();
        assert_eq!(train.epochs, 100);
        assert_eq!(train.update_interval, 3);
        assert_eq!(train.margins, MarginConfig::SAMO);
        assert_eq!(train.lr0, 1e-4);
        assert_eq!(train.batch_size, 24);
        assert_eq!(train.embedding_dim, 160);
        assert_eq!(cfg.synth().unwrap(), SynthConfig::default());
        assert_eq!(cfg.tdcf().unwrap(), TdcfParams::default());
    }

    #[test]
    fn objective_selects_margin_defaults() {
        let mut cfg = Config::default();
        cfg.set("objective", "ocs").unwrap();
        assert_eq!(cfg.train().unwrap().margins, MarginConfig::OC_SOFTMAX);
        cfg.set("m0", "0.9").unwrap();
        assert_eq!(cfg.train().unwrap().margins.m_bona, 0.9);
        assert_eq!(cfg.train().unwrap().margins.m_spoof, -0.2);
    }

    #[test]
    fn parse_file_text_and_reject_unknown_keys() {
        let cfg = Config::parse("# comment\nepochs = 7\n\nupdate_epochs=2,5 # inline\n").unwrap();
        let t = cfg.train().unwrap();
        assert_eq!(t.epochs, 7);
        assert_eq!(t.update_epochs_override, Some(vec![2, 5]));
        let err = Config::parse("foo=1\n").unwrap_err();
        assert!(err.to_string().contains("foo"));
        assert!(Config::parse("epochs\n").is_err());
        let mut cfg = Config::default();
        assert!(cfg.apply_override("batch_size=abc").is_ok());
        assert!(cfg.train().is_err());
    }

    #[test]
    fn resolved_margins_follow_objective() {
        let mut cfg = Config::default();
        cfg.set("objective", "ocs").unwrap();
        cfg.resolve_margins().unwrap();
        assert_eq!(
            (cfg.get("alpha"), cfg.get("m0"), cfg.get("m1")),
            ("20", "0.5", "-0.2")
        );
        let mut cfg = Config::default();
        cfg.set("m1", "0.1").unwrap();
        cfg.resolve_margins().unwrap();
        assert_eq!((cfg.get("m0"), cfg.get("m1")), ("0.7", "0.1"));
        assert_eq!(cfg.train().unwrap().margins.m_spoof, 0.1);
    }

    #[test]
    fn echo_round_trips() {
        let mut cfg = Config::default();
        cfg.set("update_interval", "1").unwrap();
        cfg.set("train_speakers", "a,b").unwrap();
        let again = Config::parse(&cfg.to_text()).unwrap();
        assert_eq!(again, cfg);
        assert!(cfg.to_text().contains("update_interval=1\n"));
    }
}
