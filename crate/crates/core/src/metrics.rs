//! Detection metrics: DET operating points, equal error rate, and the
//! ASV-constrained normalized minimum tandem detection cost.
//!
//! Convention: a score `>= τ` is accepted as bona fide. FAR is the fraction
//! of spoofs accepted, FRR the fraction of bona fide speech rejected.

use crate::error::{Error, Result};

#[derive(Clone, Debug, Default, PartialEq)]
pub struct ScoreSet {
    pub bona: Vec<f64>,
    pub spoof: Vec<f64>,
}

impl ScoreSet {
    pub fn new(bona: Vec<f64>, spoof: Vec<f64>) -> Self {
        ScoreSet { bona, spoof }
    }

    fn check(&self) -> Result<()> {
        if self.bona.is_empty() {
            return Err(Error::EmptyClass("bona fide"));
        }
        if self.spoof.is_empty() {
            return Err(Error::EmptyClass("spoof"));
        }
        if self.bona.iter().chain(&self.spoof).any(|s| !s.is_finite()) {
            return Err(Error::DegenerateData("non-finite score".into()));
        }
        Ok(())
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct DetPoint {
    pub threshold: f64,
    pub far: f64,
    pub frr: f64,
}

fn sorted(v: &[f64]) -> Vec<f64> {
    let mut s = v.to_vec();
    s.sort_by(f64::total_cmp);
    s
}

/// One operating point per distinct score, bracketed by the all-accept
/// (`-∞`) and all-reject (`+∞`) thresholds, in ascending threshold order.
pub fn det_points(scores: &ScoreSet) -> Result<Vec<DetPoint>> {
    scores.check()?;
    let bona = sorted(&scores.bona);
    let spoof = sorted(&scores.spoof);
    let (nb, ns) = (bona.len() as f64, spoof.len() as f64);

    let mut thresholds: Vec<f64> = bona.iter().chain(&spoof).copied().collect();
    thresholds.sort_by(f64::total_cmp);
    thresholds.dedup();

    let mut points = Vec::with_capacity(thresholds.len() + 2);
    points.push(DetPoint {
        threshold: f64::NEG_INFINITY,
        far: 1.0,
        frr: 0.0,
    });
    for &t in &thresholds {
        let spoof_below = spoof.partition_point(|&s| s < t);
        let bona_below = bona.partition_point(|&s| s < t);
        points.push(DetPoint {
            threshold: t,
            far: (spoof.len() - spoof_below) as f64 / ns,
            frr: bona_below as f64 / nb,
        });
    }
    points.push(DetPoint {
        threshold: f64::INFINITY,
        far: 0.0,
        frr: 1.0,
    });
    Ok(points)
}

/// Equal error rate and its threshold.
///
/// The EER is read off where `FAR − FRR` changes sign, interpolating
/// linearly between the two straddling operating points. An operating
/// point with `FAR = FRR` exactly holds over the whole threshold interval
/// `(τ_prev, τ]`; its midpoint is returned as the threshold.
pub fn eer(scores: &ScoreSet) -> Result<(f64, f64)> {
    let points = det_points(scores)?;
    Ok(eer_from_points(&points))
}

pub(crate) fn eer_from_points(points: &[DetPoint]) -> (f64, f64) {
    let diff = |p: &DetPoint| p.far - p.frr;
    // diff starts at +1 (−∞), ends at −1 (+∞) and strictly decreases at
    // every distinct score, so k >= 1
    let k = points
        .iter()
        .position(|p| diff(p) <= 0.0)
        .expect("+inf sentinel has FAR - FRR = -1");
    let p = points[k];
    let prev = points[k - 1];
    if diff(&p) == 0.0 {
        let threshold = if prev.threshold.is_finite() {
            0.5 * (prev.threshold + p.threshold)
        } else {
            p.threshold
        };
        return (p.far, threshold);
    }
    let (d0, d1) = (diff(&prev), diff(&p));
    let t = d0 / (d0 - d1);
    let rate = prev.far + t * (p.far - prev.far);
    let threshold = match (prev.threshold.is_finite(), p.threshold.is_finite()) {
        (true, true) => prev.threshold + t * (p.threshold - prev.threshold),
        (true, false) => prev.threshold,
        (false, _) => p.threshold,
    };
    (rate, threshold)
}

/// Priors, costs, and the fixed ASV error profile of the tandem cost.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct TdcfParams {
    pub pi_tar: f64,
    pub pi_non: f64,
    pub pi_spoof: f64,
    pub c_miss_cm: f64,
    pub c_fa_cm: f64,
    pub c_miss_asv: f64,
    pub c_fa_asv: f64,
    pub p_miss_asv: f64,
    pub p_fa_asv: f64,
    pub p_miss_spoof_asv: f64,
}

impl Default for TdcfParams {
    /// ASVspoof-style priors and costs with a nominal ASV error profile.
    /// These are configuration, not measured values.
    fn default() -> Self {
        TdcfParams {
            pi_tar: 0.9405,
            pi_non: 0.0095,
            pi_spoof: 0.05,
            c_miss_cm: 1.0,
            c_fa_cm: 10.0,
            c_miss_asv: 1.0,
            c_fa_asv: 10.0,
            p_miss_asv: 0.05,
            p_fa_asv: 0.01,
            p_miss_spoof_asv: 0.5,
        }
    }
}

impl TdcfParams {
    pub fn validate(&self) -> Result<()> {
        let priors = [self.pi_tar, self.pi_non, self.pi_spoof];
        if priors.iter().any(|&p| p.is_nan() || p <= 0.0)
            || (priors.iter().sum::<f64>() - 1.0).abs() > 1e-9
        {
            return Err(Error::Config(
                "t-DCF priors must be positive and sum to 1".into(),
            ));
        }
        let costs = [self.c_miss_cm, self.c_fa_cm, self.c_miss_asv, self.c_fa_asv];
        if costs.iter().any(|&c| !(c > 0.0 && c.is_finite())) {
            return Err(Error::Config("t-DCF costs must be positive".into()));
        }
        let rates = [self.p_miss_asv, self.p_fa_asv, self.p_miss_spoof_asv];
        if rates.iter().any(|r| !(0.0..=1.0).contains(r)) {
            return Err(Error::Config("ASV error rates must lie in [0, 1]".into()));
        }
        Ok(())
    }
}

/// `(C1, C2)` weighting CM misses and CM false alarms.
pub fn tdcf_coefficients(p: &TdcfParams) -> Result<(f64, f64)> {
    p.validate()?;
    // expanded product form; the factored form rounds differently in the last ulp
    let c1 = p.pi_tar * p.c_miss_cm
        - p.pi_tar * p.c_miss_asv * p.p_miss_asv
        - p.pi_non * p.c_fa_asv * p.p_fa_asv;
    let c2 = p.c_fa_cm * p.pi_spoof * (1.0 - p.p_miss_spoof_asv);
    if c1.is_nan() || c2.is_nan() || c1 <= 0.0 || c2 <= 0.0 {
        return Err(Error::InvalidCoefficients { c1, c2 });
    }
    Ok((c1, c2))
}

/// Minimum over thresholds of `(C1·FRR + C2·FAR) / min(C1, C2)`.
pub fn min_tdcf(scores: &ScoreSet, p: &TdcfParams) -> Result<f64> {
    let (c1, c2) = tdcf_coefficients(p)?;
    let points = det_points(scores)?;
    Ok(min_tdcf_from_points(&points, c1, c2))
}

pub(crate) fn min_tdcf_from_points(points: &[DetPoint], c1: f64, c2: f64) -> f64 {
    let norm = c1.min(c2);
    points
        .iter()
        .map(|pt| (c1 * pt.frr + c2 * pt.far) / norm)
        .fold(f64::INFINITY, f64::min)
}

/// EER, its threshold, and min t-DCF from one sweep.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Metrics {
    pub eer: f64,
    pub eer_threshold: f64,
    pub min_tdcf: f64,
}

pub fn compute_metrics(scores: &ScoreSet, p: &TdcfParams) -> Result<Metrics> {
    let (c1, c2) = tdcf_coefficients(p)?;
    let points = det_points(scores)?;
    let (eer, eer_threshold) = eer_from_points(&points);
    Ok(Metrics {
        eer,
        eer_threshold,
        min_tdcf: min_tdcf_from_points(&points, c1, c2),
    })
}

/// Groups a score file (`utt_id,speaker,label,attack_tag,mode,score`) by
/// mode, in order of first appearance.
pub fn parse_score_csv(text: &str) -> Result<Vec<(String, ScoreSet)>> {
    let mut lines = text.lines().enumerate();
    match lines.next() {
        Some((_, h)) if h.trim() == "utt_id,speaker,label,attack_tag,mode,score" => {}
        _ => {
            return Err(Error::Parse {
                line: 1,
                msg: "expected header utt_id,speaker,label,attack_tag,mode,score".into(),
            })
        }
    }
    let mut out: Vec<(String, ScoreSet)> = Vec::new();
    for (i, line) in lines {
        if line.trim().is_empty() {
            continue;
        }
        let err = |msg: String| Error::Parse { line: i + 1, msg };
        let cols: Vec<&str> = line.split(',').collect();
        if cols.len() != 6 {
            return Err(err(format!("expected 6 columns, found {}", cols.len())));
        }
        let score: f64 = cols[5]
            .trim()
            .parse()
            .map_err(|_| err(format!("bad score `{}`", cols[5])))?;
        let mode = cols[4].trim();
        let idx = match out.iter().position(|(m, _)| m == mode) {
            Some(k) => k,
            None => {
                out.push((mode.to_string(), ScoreSet::default()));
                out.len() - 1
            }
        };
        match cols[2].trim() {
            "0" => out[idx].1.bona.push(score),
            "1" => out[idx].1.spoof.push(score),
            other => return Err(err(format!("bad label `{other}`"))),
        }
    }
    Ok(out)
}

/// `mode,eer,eer_threshold,min_tdcf`, one row per entry.
pub fn metrics_csv(rows: &[(String, Metrics)]) -> String {
    let mut out = String::from("mode,eer,eer_threshold,min_tdcf\n");
    for (mode, m) in rows {
        out.push_str(&format!(
            "{mode},{:.16e},{:.16e},{:.16e}\n",
            m.eer, m.eer_threshold, m.min_tdcf
        ));
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::numerics::SeededRng;
    use proptest::prelude::*;

    fn set(bona: &[f64], spoof: &[f64]) -> ScoreSet {
        ScoreSet::new(bona.to_vec(), spoof.to_vec())
    }

    fn point_at(points: &[DetPoint], tau: f64) -> DetPoint {
        // operating point governing threshold tau
        *points.iter().find(|p| p.threshold >= tau).unwrap()
    }

    #[test]
    fn det_examples() {
        let pts = det_points(&set(&[0.9], &[0.1])).unwrap();
        let p = point_at(&pts, 0.5);
        assert_eq!((p.far, p.frr), (0.0, 0.0));
        let pts = det_points(&set(&[0.1], &[0.9])).unwrap();
        let p = point_at(&pts, 0.5);
        assert_eq!((p.far, p.frr), (1.0, 1.0));
        assert!(matches!(
            det_points(&set(&[], &[1.0])),
            Err(Error::EmptyClass(_))
        ));
        assert!(matches!(
            det_points(&set(&[1.0], &[])),
            Err(Error::EmptyClass(_))
        ));
    }

    #[test]
    fn det_monotone_on_random_scores() {
        let mut rng = SeededRng::new(8);
        let bona: Vec<f64> = (0..100).map(|_| rng.normal() + 1.0).collect();
        let spoof: Vec<f64> = (0..100).map(|_| rng.normal()).collect();
        let pts = det_points(&set(&bona, &spoof)).unwrap();
        for w in pts.windows(2) {
            assert!(w[1].threshold > w[0].threshold);
            assert!(w[1].far <= w[0].far);
            assert!(w[1].frr >= w[0].frr);
        }
    }

    #[test]
    fn eer_examples() {
        assert_eq!(eer(&set(&[0.9, 0.8], &[0.1, 0.2])).unwrap().0, 0.0);
        let (e, t) = eer(&set(&[0.8, 0.2], &[0.9, 0.1])).unwrap();
        assert_eq!(e, 0.5);
        // FAR = FRR = 0.5 for every threshold in (0.2, 0.8]
        assert_eq!(t, 0.5);
        assert_eq!(eer(&set(&[0.1], &[0.9])).unwrap().0, 1.0);
    }

    #[test]
    fn eer_ties_between_classes() {
        // identical scores: crossing between the tied point and +inf
        let (e, t) = eer(&set(&[0.5], &[0.5])).unwrap();
        assert_eq!(e, 0.5);
        assert_eq!(t, 0.5);
    }

    #[test]
    fn eer_flat_region_uses_midpoint() {
        let (e, t) = eer(&set(&[0.9, 0.8], &[0.1, 0.2])).unwrap();
        assert_eq!(e, 0.0);
        assert_eq!(t, 0.5);
        // zero crossing right after the -inf sentinel
        let (e, t) = eer(&set(&[0.1], &[0.9])).unwrap();
        assert_eq!((e, t), (1.0, 0.5));
    }

    #[test]
    fn coefficient_example() {
        let (c1, c2) = tdcf_coefficients(&TdcfParams::default()).unwrap();
        assert_eq!(c1, 0.892525);
        assert_eq!(c2, 0.25);
    }

    #[test]
    fn coefficient_boundaries() {
        let p = TdcfParams {
            p_miss_spoof_asv: 1.0,
            ..TdcfParams::default()
        };
        assert!(matches!(
            tdcf_coefficients(&p),
            Err(Error::InvalidCoefficients { .. })
        ));
        let p = TdcfParams {
            p_miss_asv: 0.0,
            p_fa_asv: 0.0,
            ..TdcfParams::default()
        };
        let (c1, _) = tdcf_coefficients(&p).unwrap();
        assert_eq!(c1, p.pi_tar * p.c_miss_cm);
        let bad = TdcfParams {
            pi_tar: 0.5,
            ..TdcfParams::default()
        };
        assert!(tdcf_coefficients(&bad).is_err());
    }

    #[test]
    fn min_tdcf_examples() {
        let p = TdcfParams::default();
        assert_eq!(min_tdcf(&set(&[0.9, 0.8], &[0.1, 0.2]), &p).unwrap(), 0.0);
        // C2 = C1: pick C_fa_cm so that C_fa_cm·0.05·0.5 = C1
        let (c1, _) = tdcf_coefficients(&p).unwrap();
        let equal = TdcfParams {
            c_fa_cm: c1 / (p.pi_spoof * (1.0 - p.p_miss_spoof_asv)),
            ..p
        };
        let (a, b) = tdcf_coefficients(&equal).unwrap();
        assert!((a - b).abs() < 1e-15);
        let v = min_tdcf(&set(&[0.1, 0.2], &[0.8, 0.9]), &equal).unwrap();
        assert!((v - 1.0).abs() < 1e-12);
    }

    proptest! {
        #[test]
        fn eer_invariant_under_increasing_maps(
            bona in prop::collection::vec(-5.0f64..5.0, 1..40),
            spoof in prop::collection::vec(-5.0f64..5.0, 1..40),
            slope in 0.1f64..10.0,
            offset in -3.0f64..3.0,
        ) {
            let base = eer(&set(&bona, &spoof)).unwrap().0;
            let map = |v: &Vec<f64>| v.iter().map(|x| x.exp()).collect::<Vec<_>>();
            prop_assert_eq!(base, eer(&set(&map(&bona), &map(&spoof))).unwrap().0);
            let aff = |v: &Vec<f64>| v.iter().map(|x| slope * x + offset).collect::<Vec<_>>();
            let affine = eer(&set(&aff(&bona), &aff(&spoof))).unwrap().0;
            // affine maps can merge distinct values only through rounding
            prop_assert!((base - affine).abs() < 1e-12);
        }

        #[test]
        fn metrics_bounded_and_order_free(
            bona in prop::collection::vec(-5.0f64..5.0, 1..40),
            spoof in prop::collection::vec(-5.0f64..5.0, 1..40),
        ) {
            let p = TdcfParams::default();
            let m = compute_metrics(&set(&bona, &spoof), &p).unwrap();
            prop_assert!((0.0..=1.0).contains(&m.eer));
            prop_assert!((0.0..=1.0).contains(&m.min_tdcf));
            let mut rb = bona.clone();
            rb.reverse();
            let mut rs = spoof.clone();
            rs.reverse();
            let r = compute_metrics(&set(&rb, &rs), &p).unwrap();
            prop_assert_eq!(m, r);
        }
    }
}
