//! Plain-text model checkpoints.
//!
//! ```text
//! samo-ckpt v1
//! dims=8,64,64,160
//! activation=relu
//! objective=samo
//! epoch=12
//! W0 <values, row-major>
//! b0 <values>
//! ...
//! attractors n=2 d=160
//! s=spk00 <values>
//! s=spk01 <values>
//! ```
//!
//! OC-Softmax models end with `center d=D` and a `w` line; softmax models
//! end with `head d=D`, `W` (2×D) and `b` lines. Values are written with
//! 17 significant digits, so a save/load cycle is lossless.

use std::collections::BTreeMap;
use std::fs;
use std::path::Path;
use std::str::FromStr;

use crate::dataset::SpeakerId;
use crate::encoder::{embed, Activation, EncoderParams, Layer};
use crate::error::{Error, Result};
use crate::numerics::{dot, l2_normalize, Mat};
use crate::objective::{self, AttractorSet, OcCenter, SoftmaxHead};
use crate::trainer::Objective;

const MAGIC: &str = "samo-ckpt v1";

/// Objective-specific trainable state next to the encoder.
#[derive(Clone, Debug, PartialEq)]
pub enum Head {
    Attractors(AttractorSet),
    Center(OcCenter),
    Softmax(SoftmaxHead),
}

impl Head {
    pub fn objective(&self) -> Objective {
        match self {
            Head::Attractors(_) => Objective::Samo,
            Head::Center(_) => Objective::OcSoftmax,
            Head::Softmax(_) => Objective::Softmax,
        }
    }

    pub fn attractors(&self) -> Option<&AttractorSet> {
        match self {
            Head::Attractors(a) => Some(a),
            _ => None,
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct Checkpoint {
    /// Epoch after which the state was captured (0 = initialization).
    pub epoch: usize,
    pub encoder: EncoderParams,
    pub head: Head,
}

fn fmt_values(vs: &[f64]) -> String {
    let parts: Vec<String> = vs.iter().map(|v| format!("{v:.16e}")).collect();
    parts.join(" ")
}

impl Checkpoint {
    pub fn objective(&self) -> Objective {
        self.head.objective()
    }

    /// L2-normalized embedding of a feature vector.
    pub fn embed_normalized(&self, features: &[f64]) -> Result<Vec<f64>> {
        Ok(l2_normalize(&embed(&self.encoder, features)?)?.0)
    }

    /// Bona fide score of a normalized embedding. Only the attractor model
    /// uses enrollment centers; the baselines score the same either way.
    pub fn score(
        &self,
        x_hat: &[f64],
        claimed_speaker: &str,
        centers: &BTreeMap<SpeakerId, Vec<f64>>,
    ) -> Result<f64> {
        match &self.head {
            Head::Attractors(a) => objective::score(x_hat, claimed_speaker, centers, a),
            Head::Center(c) => Ok(dot(&c.unit()?, x_hat)),
            Head::Softmax(h) => Ok(h.score(x_hat)),
        }
    }

    pub fn to_text(&self) -> Result<String> {
        let dims: Vec<String> = self.encoder.dims().iter().map(usize::to_string).collect();
        let mut out = format!(
            "{MAGIC}\ndims={}\nactivation={}\nobjective={}\nepoch={}\n",
            dims.join(","),
            self.encoder.activation,
            self.objective(),
            self.epoch
        );
        for (i, l) in self.encoder.layers.iter().enumerate() {
            out.push_str(&format!("W{i} {}\n", fmt_values(l.weight.as_slice())));
            out.push_str(&format!("b{i} {}\n", fmt_values(&l.bias)));
        }
        match &self.head {
            Head::Attractors(a) => {
                out.push_str(&format!("attractors n={} d={}\n", a.len(), a.dim()));
                for (s, row) in a.speakers().iter().zip(a.vectors().iter_rows()) {
                    if s.is_empty() || s.chars().any(char::is_whitespace) {
                        return Err(Error::Config(format!(
                            "speaker id `{s}` cannot be stored in a checkpoint"
                        )));
                    }
                    out.push_str(&format!("s={s} {}\n", fmt_values(row)));
                }
            }
            Head::Center(c) => {
                out.push_str(&format!("center d={}\n", c.w.len()));
                out.push_str(&format!("w {}\n", fmt_values(&c.w)));
            }
            Head::Softmax(h) => {
                out.push_str(&format!("head d={}\n", h.weight.cols()));
                out.push_str(&format!("W {}\n", fmt_values(h.weight.as_slice())));
                out.push_str(&format!("b {}\n", fmt_values(&h.bias)));
            }
        }
        Ok(out)
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        fs::write(path, self.to_text()?).map_err(|e| Error::io(path, e))
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Checkpoint::parse(&text)
    }

    pub fn parse(text: &str) -> Result<Self> {
        let mut r = Reader::new(text);
        let magic = r.next_line()?;
        if magic != MAGIC {
            return Err(r.err(format!("expected `{MAGIC}`, found `{magic}`")));
        }
        let dims: Vec<usize> = {
            let v = r.keyed("dims")?;
            v.split(',')
                .map(|d| {
                    d.trim()
                        .parse()
                        .map_err(|_| r.err(format!("bad width `{d}`")))
                })
                .collect::<Result<_>>()?
        };
        if dims.len() < 2 || dims.contains(&0) {
            return Err(r.err(format!("invalid dims {dims:?}")));
        }
        let activation = Activation::from_str(r.keyed("activation")?)?;
        let objective = Objective::from_str(r.keyed("objective")?)?;
        let epoch: usize = {
            let v = r.keyed("epoch")?;
            v.parse().map_err(|_| r.err(format!("bad epoch `{v}`")))?
        };
        let mut layers = Vec::with_capacity(dims.len() - 1);
        for (i, w) in dims.windows(2).enumerate() {
            let weight = r.tagged_values(&format!("W{i}"), w[0] * w[1])?;
            let bias = r.tagged_values(&format!("b{i}"), w[1])?;
            layers.push(Layer {
                weight: Mat::from_vec(w[1], w[0], weight)?,
                bias,
            });
        }
        let encoder = EncoderParams::from_layers(layers, activation)?;
        let d = encoder.output_dim();
        let head = match objective {
            Objective::Samo => {
                let header = r.next_line()?;
                let n =
                    parse_block_header(header, "attractors", Some("n"), d).map_err(|m| r.err(m))?;
                let mut speakers = Vec::with_capacity(n);
                let mut rows = Vec::with_capacity(n);
                for _ in 0..n {
                    let line = r.next_line()?;
                    let (id, rest) = line
                        .strip_prefix("s=")
                        .and_then(|l| l.split_once(' '))
                        .ok_or_else(|| r.err("expected `s=<speaker> <values>`".into()))?;
                    speakers.push(id.to_string());
                    rows.push(r.values(rest, d)?);
                }
                let vectors = if n == 0 {
                    Mat::zeros(0, d)
                } else {
                    Mat::from_rows(&rows)?
                };
                Head::Attractors(AttractorSet::from_rows(speakers, vectors)?)
            }
            Objective::OcSoftmax => {
                parse_block_header(r.next_line()?, "center", None, d).map_err(|m| r.err(m))?;
                Head::Center(OcCenter::new(r.tagged_values("w", d)?)?)
            }
            Objective::Softmax => {
                parse_block_header(r.next_line()?, "head", None, d).map_err(|m| r.err(m))?;
                let weight = Mat::from_vec(2, d, r.tagged_values("W", 2 * d)?)?;
                let bias = r.tagged_values("b", 2)?;
                Head::Softmax(SoftmaxHead { weight, bias })
            }
        };
        if let Some(extra) = r.lines.find(|(_, l)| !l.trim().is_empty()) {
            return Err(Error::Parse {
                line: extra.0 + 1,
                msg: "trailing content after the model".into(),
            });
        }
        Ok(Checkpoint {
            epoch,
            encoder,
            head,
        })
    }
}

/// Parses `name [n=N] d=D`, checks `D`, and returns `N` (0 when absent).
fn parse_block_header(
    line: &str,
    name: &str,
    count: Option<&str>,
    dim: usize,
) -> std::result::Result<usize, String> {
    let mut parts = line.split_whitespace();
    if parts.next() != Some(name) {
        return Err(format!("expected a `{name}` block, found `{line}`"));
    }
    let mut n = 0;
    if let Some(key) = count {
        n = parts
            .next()
            .and_then(|p| p.strip_prefix(key)?.strip_prefix('='))
            .and_then(|v| v.parse().ok())
            .ok_or_else(|| format!("missing `{key}=` in `{line}`"))?;
    }
    let d: usize = parts
        .next()
        .and_then(|p| p.strip_prefix("d="))
        .and_then(|v| v.parse().ok())
        .ok_or_else(|| format!("missing `d=` in `{line}`"))?;
    if d != dim {
        return Err(format!(
            "block dimension {d} does not match embedding dimension {dim}"
        ));
    }
    Ok(n)
}

struct Reader<'a> {
    lines: std::iter::Enumerate<std::str::Lines<'a>>,
    line_no: usize,
}

impl<'a> Reader<'a> {
    fn new(text: &'a str) -> Self {
        Reader {
            lines: text.lines().enumerate(),
            line_no: 0,
        }
    }

    fn err(&self, msg: String) -> Error {
        Error::Parse {
            line: self.line_no,
            msg,
        }
    }

    fn next_line(&mut self) -> Result<&'a str> {
        match self.lines.next() {
            Some((i, l)) => {
                self.line_no = i + 1;
                Ok(l.trim_end())
            }
            None => {
                self.line_no += 1;
                Err(self.err("unexpected end of checkpoint".into()))
            }
        }
    }

    fn keyed(&mut self, key: &str) -> Result<&'a str> {
        let line = self.next_line()?;
        line.strip_prefix(key)
            .and_then(|l| l.strip_prefix('='))
            .ok_or_else(|| self.err(format!("expected `{key}=...`, found `{line}`")))
    }

    fn tagged_values(&mut self, tag: &str, n: usize) -> Result<Vec<f64>> {
        let line = self.next_line()?;
        let rest = line
            .strip_prefix(tag)
            .filter(|r| r.is_empty() || r.starts_with(' '))
            .ok_or_else(|| self.err(format!("expected `{tag}` line")))?;
        self.values(rest, n)
    }

    fn values(&self, text: &str, n: usize) -> Result<Vec<f64>> {
        let vs = text
            .split_whitespace()
            .map(|t| {
                t.parse::<f64>()
                    .ok()
                    .filter(|v| v.is_finite())
                    .ok_or_else(|| self.err(format!("bad value `{t}`")))
            })
            .collect::<Result<Vec<f64>>>()?;
        if vs.len() != n {
            return Err(self.err(format!("expected {n} values, found {}", vs.len())));
        }
        Ok(vs)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::numerics::SeededRng;

    fn encoder(rng: &mut SeededRng) -> EncoderParams {
        EncoderParams::init(&[3, 5, 4], Activation::Tanh, rng).unwrap()
    }

    fn all_heads(rng: &mut SeededRng) -> Vec<Head> {
        let ids: Vec<SpeakerId> = vec!["a".into(), "b".into(), "c".into()];
        vec![
            Head::Attractors(AttractorSet::random_orthonormal(&ids, 4, rng).unwrap()),
            Head::Center(OcCenter::random(4, rng).unwrap()),
            Head::Softmax(SoftmaxHead::init(4, rng)),
        ]
    }

    #[test]
    fn round_trip_is_bitwise() {
        let mut rng = SeededRng::new(5);
        for head in all_heads(&mut rng) {
            let mut enc = encoder(&mut rng);
            enc.layers[1].bias[2] = -1.0 / 3.0;
            let ck = Checkpoint {
                epoch: 4,
                encoder: enc,
                head,
            };
            let text = ck.to_text().unwrap();
            let back = Checkpoint::parse(&text).unwrap();
            assert_eq!(back, ck);
            assert_eq!(back.to_text().unwrap(), text);
        }
    }

    #[test]
    fn header_order() {
        let mut rng = SeededRng::new(1);
        let head = all_heads(&mut rng).remove(0);
        let ck = Checkpoint {
            epoch: 0,
            encoder: encoder(&mut rng),
            head,
        };
        let text = ck.to_text().unwrap();
        let first: Vec<&str> = text.lines().take(5).collect();
        assert_eq!(
            first,
            [
                "samo-ckpt v1",
                "dims=3,5,4",
                "activation=tanh",
                "objective=samo",
                "epoch=0"
            ]
        );
        assert!(text.lines().nth(5).unwrap().starts_with("W0 "));
        assert!(text.contains("\nattractors n=3 d=4\ns=a "));
    }

    #[test]
    fn corrupt_files_report_lines() {
        let mut rng = SeededRng::new(2);
        let head = all_heads(&mut rng).remove(1);
        let ck = Checkpoint {
            epoch: 1,
            encoder: encoder(&mut rng),
            head,
        };
        let text = ck.to_text().unwrap();

        let truncated: String = text.lines().take(7).map(|l| format!("{l}\n")).collect();
        match Checkpoint::parse(&truncated).unwrap_err() {
            Error::Parse { line, .. } => assert_eq!(line, 8),
            e => panic!("unexpected {e}"),
        }
        let bad = text.replacen("dims=3,5,4", "dims=3,5,5", 1);
        assert!(Checkpoint::parse(&bad).is_err());
        assert!(Checkpoint::parse("samo-ckpt v2\n").is_err());
        let extra = format!("{text}junk\n");
        assert!(Checkpoint::parse(&extra).is_err());
    }

    #[test]
    fn baseline_scores_ignore_enrollment() {
        let mut rng = SeededRng::new(3);
        let heads = all_heads(&mut rng);
        let enc = encoder(&mut rng);
        let x_hat = l2_normalize(&[0.3, -0.2, 0.5, 0.1]).unwrap().0;
        let mut centers = BTreeMap::new();
        centers.insert(
            "a".to_string(),
            l2_normalize(&[1.0, 0.0, 0.0, 0.0]).unwrap().0,
        );
        for head in heads.into_iter().skip(1) {
            let ck = Checkpoint {
                epoch: 0,
                encoder: enc.clone(),
                head,
            };
            let with = ck.score(&x_hat, "a", &centers).unwrap();
            let without = ck.score(&x_hat, "a", &BTreeMap::new()).unwrap();
            assert_eq!(with, without);
        }
    }
}
