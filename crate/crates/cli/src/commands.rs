use std::collections::BTreeSet;
use std::fs;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use samo_core::checkpoint::Checkpoint;
use samo_core::config::Config;
use samo_core::dataset::{
    generate_synthetic, load_corpus, split_partitions, Corpus, PartitionName, Partitions,
};
use samo_core::numerics::{pca_project_2d, Mat, SeededRng};
use samo_core::trainer::{
    evaluate, history_csv, metrics_csv, run_ablation, run_seeds, scores_csv, seed_summary_csv,
    summarize_seeds, train_with, AblationSetup, ScoringMode, TrainConfig,
};
use thiserror::Error;

use crate::{Command, ConfigArgs};

pub const THREADS_ENV: &str = "SAMO_NUM_THREADS";

#[derive(Debug, Error)]
pub enum CliError {
    #[error(transparent)]
    Core(#[from] samo_core::Error),

    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("{0}")]
    Invalid(String),
}

impl CliError {
    pub fn exit_code(&self) -> u8 {
        match self {
            CliError::Core(e) if e.is_numeric() => 3,
            _ => 2,
        }
    }
}

type Result<T> = std::result::Result<T, CliError>;

fn write(path: &Path, text: &str) -> Result<()> {
    fs::write(path, text).map_err(|source| CliError::Io {
        path: path.to_path_buf(),
        source,
    })
}

fn make_dir(path: &Path) -> Result<()> {
    fs::create_dir_all(path).map_err(|source| CliError::Io {
        path: path.to_path_buf(),
        source,
    })
}

fn load_config(args: &ConfigArgs) -> Result<Config> {
    let mut cfg = match &args.config {
        Some(p) => Config::load(p)?,
        None => Config::default(),
    };
    for kv in &args.overrides {
        cfg.apply_override(kv)?;
    }
    Ok(cfg)
}

/// The configured corpus file, or the synthetic corpus when none is set.
fn corpus(cfg: &Config) -> Result<Corpus> {
    Ok(match cfg.corpus_path() {
        Some(p) => load_corpus(p)?,
        None => generate_synthetic(&cfg.synth()?)?,
    })
}

fn partitions(cfg: &Config, corpus: &Corpus) -> Result<Partitions> {
    let protocol = cfg.protocol(corpus)?;
    let mut rng = SeededRng::new(cfg.protocol_seed()?);
    Ok(split_partitions(corpus, &protocol, &mut rng)?)
}

/// `threads` from the config, capped by `SAMO_NUM_THREADS` when set.
fn train_config(cfg: &Config) -> Result<TrainConfig> {
    let mut t = cfg.train()?;
    if let Ok(raw) = std::env::var(THREADS_ENV) {
        let cap: usize = raw.trim().parse().ok().filter(|&n| n >= 1).ok_or_else(|| {
            CliError::Invalid(format!(
                "{THREADS_ENV} must be a positive integer, got `{raw}`"
            ))
        })?;
        t.threads = t.threads.min(cap);
    }
    Ok(t)
}

fn echo_config(dir: &Path, cfg: &Config) -> Result<()> {
    let mut resolved = cfg.clone();
    resolved.resolve_margins()?;
    write(&dir.join("config.txt"), &resolved.to_text())
}

pub fn run(command: Command) -> Result<()> {
    match command {
        Command::GenData { cfg, out } => gen_data(&load_config(&cfg)?, &out),
        Command::Train {
            cfg,
            objective,
            out_dir,
            save_every_epoch,
        } => {
            let mut cfg = load_config(&cfg)?;
            if let Some(o) = objective {
                cfg.set("objective", &o)?;
            }
            train_cmd(&cfg, &out_dir, save_every_epoch)
        }
        Command::Eval {
            cfg,
            checkpoint,
            partition,
            mode,
            out_dir,
        } => eval_cmd(
            &load_config(&cfg)?,
            &checkpoint,
            &partition,
            &mode,
            &out_dir,
        ),
        Command::Ablate {
            cfg,
            setup,
            out_dir,
        } => ablate_cmd(load_config(&cfg)?, setup, &out_dir),
        Command::Project {
            cfg,
            checkpoint,
            partition,
            speakers,
            out,
        } => project_cmd(
            &load_config(&cfg)?,
            &checkpoint,
            &partition,
            &speakers,
            &out,
        ),
        Command::Seeds {
            cfg,
            seeds,
            objective,
            out_dir,
        } => {
            let mut cfg = load_config(&cfg)?;
            if let Some(o) = objective {
                cfg.set("objective", &o)?;
            }
            seeds_cmd(&cfg, &seeds, &out_dir)
        }
    }
}

fn gen_data(cfg: &Config, out: &Path) -> Result<()> {
    let corpus = generate_synthetic(&cfg.synth()?)?;
    corpus.save(out)?;
    println!("wrote {} utterances to {}", corpus.len(), out.display());
    println!(
        "{:<10} {:>8} {:>10} {:>8}",
        "partition", "speakers", "bona fide", "spoofed"
    );
    let count = |utts: &mut dyn Iterator<Item = &samo_core::Utterance>| {
        let (mut b, mut s) = (0, 0);
        for u in utts {
            if u.label.is_bona_fide() {
                b += 1
            } else {
                s += 1
            }
        }
        (b, s)
    };
    match partitions(cfg, &corpus) {
        Ok(parts) => {
            for name in [
                PartitionName::Train,
                PartitionName::Dev,
                PartitionName::Eval,
            ] {
                let p = parts.get(name);
                let (b, s) = count(&mut p.all_utts());
                println!(
                    "{:<10} {:>8} {:>10} {:>8}",
                    name.to_string(),
                    p.speakers().len(),
                    b,
                    s
                );
            }
        }
        Err(e) => println!("(no partition summary: {e})"),
    }
    let (b, s) = count(&mut corpus.utterances().iter());
    println!(
        "{:<10} {:>8} {:>10} {:>8}",
        "total",
        corpus.speakers().len(),
        b,
        s
    );
    Ok(())
}

fn train_cmd(cfg: &Config, out_dir: &Path, save_every_epoch: bool) -> Result<()> {
    let tcfg = train_config(cfg)?;
    let corpus = corpus(cfg)?;
    let parts = partitions(cfg, &corpus)?;
    make_dir(out_dir)?;
    echo_config(out_dir, cfg)?;
    let epoch_dir = out_dir.join("epochs");
    if save_every_epoch {
        make_dir(&epoch_dir)?;
    }
    let outcome = train_with(&tcfg, &parts, |model, record| {
        if save_every_epoch {
            model.save(epoch_dir.join(format!("epoch_{:03}.ckpt", record.epoch)))?;
        }
        Ok(())
    })?;
    outcome.best.save(out_dir.join("best.ckpt"))?;
    outcome.last.save(out_dir.join("final.ckpt"))?;
    write(&out_dir.join("history.csv"), &history_csv(&outcome.history))?;
    let best = &outcome.history[outcome.best.epoch - 1];
    println!(
        "{}: best epoch {} (dev EER {:.4} with enrollment, {:.4} without)",
        tcfg.objective, best.epoch, best.dev_enroll.eer, best.dev_noenroll.eer
    );
    Ok(())
}

fn parse_modes(mode: &str) -> Result<Vec<ScoringMode>> {
    Ok(match mode {
        "both" => ScoringMode::BOTH.to_vec(),
        m => vec![ScoringMode::from_str(m)?],
    })
}

fn eval_cmd(
    cfg: &Config,
    checkpoint: &Path,
    partition: &str,
    mode: &str,
    out_dir: &Path,
) -> Result<()> {
    let model = Checkpoint::load(checkpoint)?;
    let tdcf = cfg.tdcf()?;
    let corpus = corpus(cfg)?;
    let parts = partitions(cfg, &corpus)?;
    let part = parts.get(PartitionName::from_str(partition)?);
    let evals = parse_modes(mode)?
        .into_iter()
        .map(|m| evaluate(&model, part, m, &tdcf))
        .collect::<samo_core::Result<Vec<_>>>()?;
    make_dir(out_dir)?;
    echo_config(out_dir, cfg)?;
    for e in &evals {
        write(
            &out_dir.join(format!("scores_{}.csv", e.mode)),
            &scores_csv(std::slice::from_ref(e)),
        )?;
        println!(
            "{partition} {}: EER {:.6} (threshold {:.6}), min t-DCF {:.6}",
            e.mode, e.metrics.eer, e.metrics.eer_threshold, e.metrics.min_tdcf
        );
    }
    write(&out_dir.join("metrics.csv"), &metrics_csv(&evals))
}

/// Config keys equivalent to an ablation setup, so the echoed config
/// records what actually ran.
fn setup_overrides(setup: AblationSetup) -> &'static [(&'static str, &'static str)] {
    match setup {
        AblationSetup::OneHotFixed => &[
            ("attractor_init", "onehot"),
            ("attractors_frozen", "true"),
            ("update_epochs", ""),
        ],
        AblationSetup::SingleUpdate => &[("attractors_frozen", "false"), ("update_epochs", "2")],
        AblationSetup::EveryEpoch => &[
            ("attractors_frozen", "false"),
            ("update_epochs", ""),
            ("update_interval", "1"),
        ],
        AblationSetup::EveryTenEpochs => &[
            ("attractors_frozen", "false"),
            ("update_epochs", ""),
            ("update_interval", "10"),
        ],
    }
}

fn ablate_cmd(mut cfg: Config, setup: u8, out_dir: &Path) -> Result<()> {
    let setup = AblationSetup::from_id(setup)?;
    cfg.set("objective", "samo")?;
    for (k, v) in setup_overrides(setup) {
        cfg.set(k, v)?;
    }
    let tcfg = train_config(&cfg)?;
    debug_assert_eq!(setup.apply(&tcfg), tcfg);
    let corpus = corpus(&cfg)?;
    let parts = partitions(&cfg, &corpus)?;
    make_dir(out_dir)?;
    echo_config(out_dir, &cfg)?;
    let run = run_ablation(setup, &tcfg, &parts)?;
    run.outcome.best.save(out_dir.join("best.ckpt"))?;
    write(
        &out_dir.join("history.csv"),
        &history_csv(&run.outcome.history),
    )?;
    let mut report = String::from("setup,description,mode,eer,min_tdcf\n");
    for e in &run.eval {
        report.push_str(&format!(
            "{},{},{},{:.10e},{:.10e}\n",
            setup.id(),
            setup.description(),
            e.mode,
            e.metrics.eer,
            e.metrics.min_tdcf
        ));
        println!(
            "setup {} ({}), {}: EER {:.6}, min t-DCF {:.6}",
            setup.id(),
            setup.description(),
            e.mode,
            e.metrics.eer,
            e.metrics.min_tdcf
        );
    }
    write(&out_dir.join("report.csv"), &report)
}

fn project_cmd(
    cfg: &Config,
    checkpoint: &Path,
    partition: &str,
    speakers: &[String],
    out: &Path,
) -> Result<()> {
    let model = Checkpoint::load(checkpoint)?;
    let corpus = corpus(cfg)?;
    let parts = partitions(cfg, &corpus)?;
    let part = parts.get(PartitionName::from_str(partition)?);
    let known: BTreeSet<String> = part.speakers().into_iter().collect();
    if let Some(s) = speakers.iter().find(|s| !known.contains(*s)) {
        return Err(samo_core::Error::UnknownSpeaker(s.clone()).into());
    }
    let wanted: BTreeSet<&str> = speakers.iter().map(String::as_str).collect();
    let utts: Vec<_> = part
        .scored_utts()
        .iter()
        .filter(|u| wanted.contains(u.speaker.as_str()))
        .collect();
    let embeddings = utts
        .iter()
        .map(|u| model.embed_normalized(&u.features))
        .collect::<samo_core::Result<Vec<_>>>()?;
    let points = pca_project_2d(&Mat::from_rows(&embeddings)?)?;
    let mut csv = String::from("utt_id,speaker,label,px,py\n");
    for (u, p) in utts.iter().zip(points.iter_rows()) {
        csv.push_str(&format!(
            "{},{},{},{:.16e},{:.16e}\n",
            u.utt_id,
            u.speaker,
            u.label.as_u8(),
            p[0],
            p[1]
        ));
    }
    write(out, &csv)?;
    println!("projected {} utterances to {}", utts.len(), out.display());
    Ok(())
}

fn seeds_cmd(cfg: &Config, seeds: &[u64], out_dir: &Path) -> Result<()> {
    if seeds.is_empty() {
        return Err(CliError::Invalid("at least one seed is required".into()));
    }
    let tcfg = train_config(cfg)?;
    let corpus = corpus(cfg)?;
    let parts = partitions(cfg, &corpus)?;
    make_dir(out_dir)?;
    echo_config(out_dir, cfg)?;
    let runs = run_seeds(&tcfg, &parts, seeds)?;
    for r in &runs {
        write(
            &out_dir.join(format!("history_seed{}.csv", r.config.seed)),
            &history_csv(&r.outcome.history),
        )?;
    }
    write(&out_dir.join("seeds.csv"), &seed_summary_csv(&runs))?;
    for s in summarize_seeds(&runs) {
        println!(
            "{} over {} seeds, {}: EER mean {:.6} best {:.6}; min t-DCF mean {:.6} best {:.6}",
            tcfg.objective,
            runs.len(),
            s.mode,
            s.mean_eer,
            s.best_eer,
            s.mean_min_tdcf,
            s.best_min_tdcf
        );
    }
    Ok(())
}
