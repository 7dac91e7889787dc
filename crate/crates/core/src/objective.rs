//! Training objectives and inference scoring.
//!
//! Three losses share the same geometry: raw embeddings are L2-normalized
//! before they meet a center, an attractor, or a classifier head.
//!
//! * SAMO: bona fide samples are pulled toward their own speaker attractor,
//!   spoofed samples are pushed away from the nearest attractor.
//! * OC-Softmax: a single trainable center plays both roles.
//! * Softmax: two-class cross entropy on a linear head.
//!
//! Every loss returns the gradient w.r.t. the raw embeddings so the encoder
//! can backpropagate through it.

use std::collections::BTreeMap;
use std::fmt;
use std::str::FromStr;

use nalgebra::DMatrix;

use crate::dataset::{Label, SpeakerId, Utterance};
use crate::encoder::{embed, EncoderParams};
use crate::error::{Error, Result};
use crate::numerics::{
    axpy, dot, l2_normalize, l2_normalize_backward, mean_vector, norm, Mat, SeededRng,
};

/// Scale and margins of the one-class losses.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct MarginConfig {
    pub alpha: f64,
    /// Margin for bona fide speech.
    pub m_bona: f64,
    /// Margin for spoofed speech.
    pub m_spoof: f64,
}

impl MarginConfig {
    pub const SAMO: MarginConfig = MarginConfig {
        alpha: 20.0,
        m_bona: 0.7,
        m_spoof: 0.0,
    };

    pub const OC_SOFTMAX: MarginConfig = MarginConfig {
        alpha: 20.0,
        m_bona: 0.5,
        m_spoof: -0.2,
    };

    pub fn validate(&self) -> Result<()> {
        if !(self.alpha > 0.0 && self.alpha.is_finite()) {
            return Err(Error::Config(format!(
                "alpha must be positive, got {}",
                self.alpha
            )));
        }
        let in_range = |m: f64| (-1.0..=1.0).contains(&m);
        if !in_range(self.m_bona) || !in_range(self.m_spoof) {
            return Err(Error::Config("margins must lie in [-1, 1]".into()));
        }
        if self.m_bona <= self.m_spoof {
            return Err(Error::Config(format!(
                "bona fide margin ({}) must exceed spoof margin ({})",
                self.m_bona, self.m_spoof
            )));
        }
        Ok(())
    }

    fn margin(&self, label: Label) -> f64 {
        match label {
            Label::BonaFide => self.m_bona,
            Label::Spoof => self.m_spoof,
        }
    }
}

/// `ln(1 + e^z)` without overflow.
pub fn softplus(z: f64) -> f64 {
    if z <= 0.0 {
        z.exp().ln_1p()
    } else {
        z + (-z).exp().ln_1p()
    }
}

fn sigmoid(z: f64) -> f64 {
    if z >= 0.0 {
        1.0 / (1.0 + (-z).exp())
    } else {
        let e = z.exp();
        e / (1.0 + e)
    }
}

/// `(−1)^y`
fn label_sign(label: Label) -> f64 {
    match label {
        Label::BonaFide => 1.0,
        Label::Spoof => -1.0,
    }
}

/// Exponent of the one-class loss term and its derivative w.r.t. the
/// similarity `d`.
fn one_class_term(d: f64, label: Label, cfg: &MarginConfig) -> (f64, f64) {
    let sign = label_sign(label);
    let z = cfg.alpha * (cfg.margin(label) - d) * sign;
    (softplus(z), -cfg.alpha * sign * sigmoid(z))
}

/// Loss value plus gradients w.r.t. the raw embeddings of a batch.
#[derive(Clone, Debug, PartialEq)]
pub struct LossOutput {
    pub loss: f64,
    /// Per-sample terms before the `1/N` average.
    pub per_sample: Vec<f64>,
    pub grad_embeddings: Vec<Vec<f64>>,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum AttractorAveraging {
    /// Average L2-normalized embeddings, then renormalize.
    Normalized,
    /// Average raw embeddings, then normalize.
    Raw,
}

impl FromStr for AttractorAveraging {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "normalized" => Ok(AttractorAveraging::Normalized),
            "raw" => Ok(AttractorAveraging::Raw),
            _ => Err(Error::Config(format!("unknown attractor averaging `{s}`"))),
        }
    }
}

impl fmt::Display for AttractorAveraging {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            AttractorAveraging::Normalized => "normalized",
            AttractorAveraging::Raw => "raw",
        })
    }
}

/// One unit-norm attractor per training speaker, kept in sorted id order.
#[derive(Clone, Debug, PartialEq)]
pub struct AttractorSet {
    speakers: Vec<SpeakerId>,
    vectors: Mat,
}

const UNIT_TOL: f64 = 1e-10;

impl AttractorSet {
    /// Speaker `k` (sorted order) gets the basis vector `e_k`.
    pub fn one_hot(speakers: &[SpeakerId], dim: usize) -> Result<Self> {
        let speakers = sorted_unique(speakers)?;
        if speakers.len() > dim {
            return Err(Error::TooManySpeakers {
                speakers: speakers.len(),
                dim,
            });
        }
        let mut vectors = Mat::zeros(speakers.len(), dim);
        for k in 0..speakers.len() {
            vectors.row_mut(k)[k] = 1.0;
        }
        Ok(AttractorSet { speakers, vectors })
    }

    /// Orthonormal rows from the QR factorization of a seeded Gaussian
    /// matrix. With more speakers than dimensions, each block of `dim`
    /// speakers is orthonormal.
    pub fn random_orthonormal(
        speakers: &[SpeakerId],
        dim: usize,
        rng: &mut SeededRng,
    ) -> Result<Self> {
        let speakers = sorted_unique(speakers)?;
        if dim == 0 {
            return Err(Error::Config("embedding dimension must be positive".into()));
        }
        let mut vectors = Mat::zeros(speakers.len(), dim);
        let mut start = 0;
        while start < speakers.len() {
            let block = (speakers.len() - start).min(dim);
            let g = DMatrix::from_fn(dim, block, |_, _| rng.normal());
            let q = g.qr().q();
            for k in 0..block {
                let col: Vec<f64> = q.column(k).iter().copied().collect();
                let (unit, _) = l2_normalize(&col)?;
                vectors.row_mut(start + k).copy_from_slice(&unit);
            }
            start += block;
        }
        Ok(AttractorSet { speakers, vectors })
    }

    /// Builds a set from explicit rows; rows must be unit-norm and ids
    /// strictly increasing.
    pub fn from_rows(speakers: Vec<SpeakerId>, vectors: Mat) -> Result<Self> {
        if speakers.len() != vectors.rows() {
            return Err(Error::DimensionMismatch {
                expected: speakers.len(),
                found: vectors.rows(),
            });
        }
        if speakers.windows(2).any(|w| w[0] >= w[1]) {
            return Err(Error::Config(
                "attractor speaker ids must be sorted and unique".into(),
            ));
        }
        for row in vectors.iter_rows() {
            if (norm(row) - 1.0).abs() > UNIT_TOL {
                return Err(Error::Config("attractor rows must be unit-norm".into()));
            }
        }
        Ok(AttractorSet { speakers, vectors })
    }

    pub fn speakers(&self) -> &[SpeakerId] {
        &self.speakers
    }

    pub fn vectors(&self) -> &Mat {
        &self.vectors
    }

    pub fn len(&self) -> usize {
        self.speakers.len()
    }

    pub fn is_empty(&self) -> bool {
        self.speakers.is_empty()
    }

    pub fn dim(&self) -> usize {
        self.vectors.cols()
    }

    pub fn index_of(&self, speaker: &str) -> Option<usize> {
        self.speakers
            .binary_search_by(|s| s.as_str().cmp(speaker))
            .ok()
    }

    pub fn get(&self, speaker: &str) -> Option<&[f64]> {
        self.index_of(speaker).map(|k| self.vectors.row(k))
    }

    /// Highest similarity and the first attractor reaching it.
    fn nearest(&self, x_hat: &[f64]) -> Result<(f64, usize)> {
        let mut best: Option<(f64, usize)> = None;
        for (k, w) in self.vectors.iter_rows().enumerate() {
            let s = dot(w, x_hat);
            if best.is_none_or(|(b, _)| s > b) {
                best = Some((s, k));
            }
        }
        best.ok_or(Error::EmptyAttractors)
    }
}

fn sorted_unique(speakers: &[SpeakerId]) -> Result<Vec<SpeakerId>> {
    let mut s = speakers.to_vec();
    s.sort();
    if s.windows(2).any(|w| w[0] == w[1]) {
        return Err(Error::Config("duplicate speaker ids".into()));
    }
    Ok(s)
}

/// Recomputes each attractor as the normalized mean bona fide embedding of
/// its speaker. Speakers without bona fide speech in `utts` keep their
/// previous attractor; spoofed utterances are ignored.
pub fn update_attractors(
    encoder: &EncoderParams,
    utts: &[Utterance],
    previous: &AttractorSet,
    averaging: AttractorAveraging,
) -> Result<AttractorSet> {
    let mut grouped: BTreeMap<usize, Vec<Vec<f64>>> = BTreeMap::new();
    for u in utts.iter().filter(|u| u.label.is_bona_fide()) {
        let k = previous
            .index_of(&u.speaker)
            .ok_or_else(|| Error::UnknownSpeaker(u.speaker.clone()))?;
        let e = embed(encoder, &u.features)?;
        let e = match averaging {
            AttractorAveraging::Normalized => l2_normalize(&e)?.0,
            AttractorAveraging::Raw => e,
        };
        grouped.entry(k).or_default().push(e);
    }
    let mut next = previous.clone();
    for (k, embs) in grouped {
        let mean = mean_vector(&embs).expect("non-empty group");
        let (unit, _) = l2_normalize(&mean)?;
        if unit.len() != next.dim() {
            return Err(Error::DimensionMismatch {
                expected: next.dim(),
                found: unit.len(),
            });
        }
        next.vectors.row_mut(k).copy_from_slice(&unit);
    }
    Ok(next)
}

fn select_attractor(
    x_hat: &[f64],
    label: Label,
    speaker: &str,
    attractors: &AttractorSet,
) -> Result<(f64, usize)> {
    match label {
        Label::BonaFide => {
            let k = attractors
                .index_of(speaker)
                .ok_or_else(|| Error::UnknownSpeaker(speaker.to_string()))?;
            Ok((dot(attractors.vectors.row(k), x_hat), k))
        }
        Label::Spoof => attractors.nearest(x_hat),
    }
}

/// Cosine similarity used by the SAMO loss: own attractor for bona fide
/// speech, nearest attractor for spoofs (ties go to the lowest id). The
/// second element names the nearest speaker for spoofs.
pub fn similarity_d(
    x_hat: &[f64],
    label: Label,
    speaker: &str,
    attractors: &AttractorSet,
) -> Result<(f64, Option<SpeakerId>)> {
    let (d, k) = select_attractor(x_hat, label, speaker, attractors)?;
    let argmax = (label == Label::Spoof).then(|| attractors.speakers[k].clone());
    Ok((d, argmax))
}

fn check_batch(embeddings: &[Vec<f64>], labels: &[Label]) -> Result<()> {
    if embeddings.is_empty() {
        return Err(Error::Config("loss needs a non-empty batch".into()));
    }
    if embeddings.len() != labels.len() {
        return Err(Error::DimensionMismatch {
            expected: embeddings.len(),
            found: labels.len(),
        });
    }
    Ok(())
}

/// SAMO loss over raw embeddings. Attractors are constants here; the
/// spoof gradient flows through the nearest attractor only.
pub fn samo_loss(
    embeddings: &[Vec<f64>],
    labels: &[Label],
    speakers: &[&str],
    attractors: &AttractorSet,
    cfg: &MarginConfig,
) -> Result<LossOutput> {
    check_batch(embeddings, labels)?;
    if speakers.len() != labels.len() {
        return Err(Error::DimensionMismatch {
            expected: labels.len(),
            found: speakers.len(),
        });
    }
    let n = embeddings.len() as f64;
    let mut per_sample = Vec::with_capacity(embeddings.len());
    let mut grads = Vec::with_capacity(embeddings.len());
    for ((x, &y), &s) in embeddings.iter().zip(labels).zip(speakers) {
        let (x_hat, _) = l2_normalize(x)?;
        let (d, k) = select_attractor(&x_hat, y, s, attractors)?;
        let (term, dterm_dd) = one_class_term(d, y, cfg);
        per_sample.push(term);
        let upstream: Vec<f64> = attractors
            .vectors
            .row(k)
            .iter()
            .map(|w| w * dterm_dd / n)
            .collect();
        grads.push(l2_normalize_backward(x, &upstream)?);
    }
    Ok(LossOutput {
        loss: per_sample.iter().sum::<f64>() / n,
        per_sample,
        grad_embeddings: grads,
    })
}

/// The trainable single center of OC-Softmax.
#[derive(Clone, Debug, PartialEq)]
pub struct OcCenter {
    pub w: Vec<f64>,
}

impl OcCenter {
    pub fn new(w: Vec<f64>) -> Result<Self> {
        l2_normalize(&w)?;
        Ok(OcCenter { w })
    }

    /// Standard-normal draw.
    pub fn random(dim: usize, rng: &mut SeededRng) -> Result<Self> {
        OcCenter::new((0..dim).map(|_| rng.normal()).collect())
    }

    pub fn unit(&self) -> Result<Vec<f64>> {
        Ok(l2_normalize(&self.w)?.0)
    }
}

/// OC-Softmax loss. Returns the batch output and the gradient w.r.t. the
/// raw center `w`.
pub fn oc_softmax_loss(
    embeddings: &[Vec<f64>],
    labels: &[Label],
    center: &OcCenter,
    cfg: &MarginConfig,
) -> Result<(LossOutput, Vec<f64>)> {
    check_batch(embeddings, labels)?;
    let w_hat = center.unit()?;
    if w_hat.len() != embeddings[0].len() {
        return Err(Error::DimensionMismatch {
            expected: w_hat.len(),
            found: embeddings[0].len(),
        });
    }
    let n = embeddings.len() as f64;
    let mut per_sample = Vec::with_capacity(embeddings.len());
    let mut grads = Vec::with_capacity(embeddings.len());
    let mut grad_w_hat = vec![0.0; w_hat.len()];
    for (x, &y) in embeddings.iter().zip(labels) {
        let (x_hat, _) = l2_normalize(x)?;
        let d = dot(&w_hat, &x_hat);
        let (term, dterm_dd) = one_class_term(d, y, cfg);
        per_sample.push(term);
        let coef = dterm_dd / n;
        let upstream: Vec<f64> = w_hat.iter().map(|w| w * coef).collect();
        grads.push(l2_normalize_backward(x, &upstream)?);
        axpy(coef, &x_hat, &mut grad_w_hat);
    }
    let grad_w = l2_normalize_backward(&center.w, &grad_w_hat)?;
    Ok((
        LossOutput {
            loss: per_sample.iter().sum::<f64>() / n,
            per_sample,
            grad_embeddings: grads,
        },
        grad_w,
    ))
}

/// Linear two-class head on normalized embeddings. Row 0 is bona fide.
#[derive(Clone, Debug, PartialEq)]
pub struct SoftmaxHead {
    /// `2 × D`
    pub weight: Mat,
    pub bias: Vec<f64>,
}

impl SoftmaxHead {
    /// Glorot-uniform weights, zero bias.
    pub fn init(dim: usize, rng: &mut SeededRng) -> Self {
        let limit = (6.0 / (dim + 2) as f64).sqrt();
        let data = (0..2 * dim).map(|_| rng.uniform(-limit, limit)).collect();
        SoftmaxHead {
            weight: Mat::from_vec(2, dim, data).expect("sized"),
            bias: vec![0.0; 2],
        }
    }

    pub fn zeros_like(&self) -> Self {
        SoftmaxHead {
            weight: Mat::zeros(2, self.weight.cols()),
            bias: vec![0.0; 2],
        }
    }

    pub fn logits(&self, x_hat: &[f64]) -> [f64; 2] {
        let z = self.weight.matvec(x_hat);
        [z[0] + self.bias[0], z[1] + self.bias[1]]
    }

    /// Bona fide logit minus spoof logit.
    pub fn score(&self, x_hat: &[f64]) -> f64 {
        let l = self.logits(x_hat);
        l[0] - l[1]
    }
}

/// Mean two-class cross entropy on `W x̂ + b`. Returns the batch output and
/// the head gradient.
pub fn softmax_ce_loss(
    embeddings: &[Vec<f64>],
    labels: &[Label],
    head: &SoftmaxHead,
) -> Result<(LossOutput, SoftmaxHead)> {
    check_batch(embeddings, labels)?;
    if head.weight.cols() != embeddings[0].len() {
        return Err(Error::DimensionMismatch {
            expected: head.weight.cols(),
            found: embeddings[0].len(),
        });
    }
    let n = embeddings.len() as f64;
    let mut head_grad = head.zeros_like();
    let mut per_sample = Vec::with_capacity(embeddings.len());
    let mut grads = Vec::with_capacity(embeddings.len());
    for (x, &y) in embeddings.iter().zip(labels) {
        let (x_hat, _) = l2_normalize(x)?;
        let l = head.logits(&x_hat);
        let target = y.as_u8() as usize;
        let other = 1 - target;
        // two-class cross entropy is softplus of the logit margin
        let margin = l[other] - l[target];
        per_sample.push(softplus(margin));
        let p_other = sigmoid(margin);
        let mut dlogit = [0.0; 2];
        dlogit[target] = -p_other / n;
        dlogit[other] = p_other / n;
        for (c, &g) in dlogit.iter().enumerate() {
            axpy(g, &x_hat, head_grad.weight.row_mut(c));
            head_grad.bias[c] += g;
        }
        let upstream = head.weight.matvec_t(&dlogit);
        grads.push(l2_normalize_backward(x, &upstream)?);
    }
    Ok((
        LossOutput {
            loss: per_sample.iter().sum::<f64>() / n,
            per_sample,
            grad_embeddings: grads,
        },
        head_grad,
    ))
}

/// Normalized mean of a speaker's normalized enrollment embeddings.
pub fn enrollment_center(embeddings: &[Vec<f64>]) -> Result<Vec<f64>> {
    if embeddings.is_empty() {
        return Err(Error::Config(
            "enrollment center needs at least one embedding".into(),
        ));
    }
    let units = embeddings
        .iter()
        .map(|e| l2_normalize(e).map(|(u, _)| u))
        .collect::<Result<Vec<_>>>()?;
    Ok(l2_normalize(&mean_vector(&units).expect("non-empty"))?.0)
}

/// Inference score: similarity to the claimed speaker's enrollment center
/// when one exists, otherwise to the nearest training attractor.
pub fn score(
    x_hat: &[f64],
    claimed_speaker: &str,
    enrollment_centers: &BTreeMap<SpeakerId, Vec<f64>>,
    attractors: &AttractorSet,
) -> Result<f64> {
    match enrollment_centers.get(claimed_speaker) {
        Some(center) => Ok(dot(center, x_hat)),
        None => attractors.nearest(x_hat).map(|(s, _)| s),
    }
}
