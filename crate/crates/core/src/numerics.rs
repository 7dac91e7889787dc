//! Dense primitives shared by the rest of the crate.
//!
//! Everything is `f64`. Randomness comes from [`SeededRng`], a ChaCha8 stream
//! keyed by a 64-bit seed, so a seed reproduces the same draws on every
//! platform.

use nalgebra::{DMatrix, SymmetricEigen};
use rand::seq::SliceRandom;
use rand::{Rng as _, RngCore, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

use crate::error::{Error, Result};

/// Norms below this are treated as zero.
pub const ZERO_NORM: f64 = 1e-30;

/// Row-major dense matrix.
#[derive(Clone, Debug, PartialEq)]
pub struct Mat {
    rows: usize,
    cols: usize,
    data: Vec<f64>,
}

impl Mat {
    pub fn zeros(rows: usize, cols: usize) -> Self {
        Mat {
            rows,
            cols,
            data: vec![0.0; rows * cols],
        }
    }

    pub fn from_vec(rows: usize, cols: usize, data: Vec<f64>) -> Result<Self> {
        if data.len() != rows * cols {
            return Err(Error::DimensionMismatch {
                expected: rows * cols,
                found: data.len(),
            });
        }
        Ok(Mat { rows, cols, data })
    }

    /// Stacks equally sized rows.
    pub fn from_rows<R: AsRef<[f64]>>(rows: &[R]) -> Result<Self> {
        let cols = rows.first().map_or(0, |r| r.as_ref().len());
        let mut data = Vec::with_capacity(rows.len() * cols);
        for r in rows {
            let r = r.as_ref();
            if r.len() != cols {
                return Err(Error::DimensionMismatch {
                    expected: cols,
                    found: r.len(),
                });
            }
            data.extend_from_slice(r);
        }
        Ok(Mat {
            rows: rows.len(),
            cols,
            data,
        })
    }

    pub fn identity(n: usize) -> Self {
        let mut m = Mat::zeros(n, n);
        for i in 0..n {
            m.data[i * n + i] = 1.0;
        }
        m
    }

    pub fn rows(&self) -> usize {
        self.rows
    }

    pub fn cols(&self) -> usize {
        self.cols
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.data
    }

    pub fn as_mut_slice(&mut self) -> &mut [f64] {
        &mut self.data
    }

    pub fn get(&self, r: usize, c: usize) -> f64 {
        self.data[r * self.cols + c]
    }

    pub fn row(&self, r: usize) -> &[f64] {
        &self.data[r * self.cols..(r + 1) * self.cols]
    }

    pub fn row_mut(&mut self, r: usize) -> &mut [f64] {
        &mut self.data[r * self.cols..(r + 1) * self.cols]
    }

    pub fn iter_rows(&self) -> impl Iterator<Item = &[f64]> {
        self.data.chunks(self.cols.max(1)).take(self.rows)
    }

    /// `self · x`.
    pub fn matvec(&self, x: &[f64]) -> Vec<f64> {
        debug_assert_eq!(x.len(), self.cols);
        self.iter_rows().map(|row| dot(row, x)).collect()
    }

    /// `selfᵀ · y`.
    pub fn matvec_t(&self, y: &[f64]) -> Vec<f64> {
        debug_assert_eq!(y.len(), self.rows);
        let mut out = vec![0.0; self.cols];
        for (row, &yi) in self.iter_rows().zip(y) {
            axpy(yi, row, &mut out);
        }
        out
    }

    pub fn is_finite(&self) -> bool {
        self.data.iter().all(|v| v.is_finite())
    }
}

pub fn dot(a: &[f64], b: &[f64]) -> f64 {
    debug_assert_eq!(a.len(), b.len());
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

pub fn norm(v: &[f64]) -> f64 {
    dot(v, v).sqrt()
}

/// `y += a · x`
pub fn axpy(a: f64, x: &[f64], y: &mut [f64]) {
    for (yi, xi) in y.iter_mut().zip(x) {
        *yi += a * xi;
    }
}

/// Returns `(v / ‖v‖, ‖v‖)`.
pub fn l2_normalize(v: &[f64]) -> Result<(Vec<f64>, f64)> {
    let n = norm(v);
    if !n.is_finite() || n < ZERO_NORM {
        return Err(Error::ZeroNorm);
    }
    Ok((v.iter().map(|x| x / n).collect(), n))
}

/// Pulls a gradient w.r.t. `v / ‖v‖` back to a gradient w.r.t. `v`:
/// `(g − (x̂·g) x̂) / ‖v‖`.
pub fn l2_normalize_backward(v: &[f64], upstream: &[f64]) -> Result<Vec<f64>> {
    if v.len() != upstream.len() {
        return Err(Error::DimensionMismatch {
            expected: v.len(),
            found: upstream.len(),
        });
    }
    let (unit, n) = l2_normalize(v)?;
    let radial = dot(&unit, upstream);
    Ok(upstream
        .iter()
        .zip(&unit)
        .map(|(g, u)| (g - radial * u) / n)
        .collect())
}

/// Mean of a set of equally sized vectors.
pub fn mean_vector<V: AsRef<[f64]>>(vs: &[V]) -> Option<Vec<f64>> {
    let first = vs.first()?.as_ref();
    let mut acc = vec![0.0; first.len()];
    for v in vs {
        for (a, x) in acc.iter_mut().zip(v.as_ref()) {
            *a += x;
        }
    }
    let n = vs.len() as f64;
    acc.iter_mut().for_each(|a| *a /= n);
    Some(acc)
}

/// Projects rows of `points` onto their top two principal components.
///
/// Points are mean-centered first. Each component's sign is fixed so that
/// its largest-magnitude loading is positive.
pub fn pca_project_2d(points: &Mat) -> Result<Mat> {
    let (n, d) = (points.rows(), points.cols());
    if n < 2 || d < 2 {
        return Err(Error::DegenerateData(format!(
            "need at least 2 points of dimension >= 2, got {n}x{d}"
        )));
    }
    let first = points.row(0);
    if points.iter_rows().all(|r| r == first) {
        return Err(Error::DegenerateData("all points identical".into()));
    }

    let rows: Vec<&[f64]> = points.iter_rows().collect();
    let mean = mean_vector(&rows).expect("n >= 2");
    let centered = DMatrix::from_fn(n, d, |i, j| points.get(i, j) - mean[j]);
    let cov = centered.transpose() * &centered / (n as f64);
    let eig = SymmetricEigen::new(cov);

    let mut order: Vec<usize> = (0..d).collect();
    order.sort_by(|&a, &b| eig.eigenvalues[b].total_cmp(&eig.eigenvalues[a]));

    let mut out = Mat::zeros(n, 2);
    for (k, &idx) in order.iter().take(2).enumerate() {
        let mut axis: Vec<f64> = eig.eigenvectors.column(idx).iter().copied().collect();
        let lead = axis.iter().copied().fold(
            0.0_f64,
            |best, v| if v.abs() > best.abs() { v } else { best },
        );
        if lead < 0.0 {
            axis.iter_mut().for_each(|v| *v = -*v);
        }
        for i in 0..n {
            let p: f64 = (0..d).map(|j| centered[(i, j)] * axis[j]).sum();
            out.data[i * 2 + k] = p;
        }
    }
    Ok(out)
}

/// Deterministic random stream (ChaCha8 keyed by a 64-bit seed).
#[derive(Clone, Debug)]
pub struct SeededRng {
    inner: ChaCha8Rng,
}

impl SeededRng {
    pub fn new(seed: u64) -> Self {
        SeededRng {
            inner: ChaCha8Rng::seed_from_u64(seed),
        }
    }

    /// Uniform draw from `[lo, hi)`.
    pub fn uniform(&mut self, lo: f64, hi: f64) -> f64 {
        lo + (hi - lo) * self.inner.random::<f64>()
    }

    pub fn normal(&mut self) -> f64 {
        self.inner.sample(StandardNormal)
    }

    /// Uniform index in `0..n`.
    pub fn below(&mut self, n: usize) -> usize {
        self.inner.random_range(0..n)
    }

    /// Derives an independent child stream.
    pub fn fork(&mut self) -> SeededRng {
        SeededRng::new(self.inner.next_u64())
    }
}

/// Uniformly random permutation of `0..n` (Fisher–Yates).
pub fn seeded_shuffle(n: usize, rng: &mut SeededRng) -> Vec<usize> {
    let mut perm: Vec<usize> = (0..n).collect();
    perm.shuffle(&mut rng.inner);
    perm
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn normalize_fd(v: &[f64], g: &[f64], h: f64) -> Vec<f64> {
        // Gradient of g · normalize(v) by central differences.
        (0..v.len())
            .map(|i| {
                let mut p = v.to_vec();
                let mut m = v.to_vec();
                p[i] += h;
                m[i] -= h;
                let fp = dot(&l2_normalize(&p).unwrap().0, g);
                let fm = dot(&l2_normalize(&m).unwrap().0, g);
                (fp - fm) / (2.0 * h)
            })
            .collect()
    }

    #[test]
    fn normalize_examples() {
        let (u, n) = l2_normalize(&[3.0, 4.0]).unwrap();
        assert_eq!(n, 5.0);
        assert!((u[0] - 0.6).abs() < 1e-15 && (u[1] - 0.8).abs() < 1e-15);

        let (u, n) = l2_normalize(&[1.0, 0.0, 0.0]).unwrap();
        assert_eq!((u, n), (vec![1.0, 0.0, 0.0], 1.0));

        let (u, n) = l2_normalize(&[2.0, 2.0]).unwrap();
        assert!((u[0] - std::f64::consts::FRAC_1_SQRT_2).abs() < 1e-8);
        assert!((u[1] - std::f64::consts::FRAC_1_SQRT_2).abs() < 1e-8);
        assert!((n - 2.8284).abs() < 1e-4);
    }

    #[test]
    fn normalize_zero_vector_fails() {
        assert!(matches!(l2_normalize(&[0.0, 0.0]), Err(Error::ZeroNorm)));
        assert!(matches!(l2_normalize(&[1e-31]), Err(Error::ZeroNorm)));
        assert!(matches!(
            l2_normalize_backward(&[0.0, 0.0], &[1.0, 1.0]),
            Err(Error::ZeroNorm)
        ));
    }

    #[test]
    fn normalize_backward_examples() {
        assert_eq!(
            l2_normalize_backward(&[1.0, 0.0], &[0.0, 1.0]).unwrap(),
            vec![0.0, 1.0]
        );
        assert_eq!(
            l2_normalize_backward(&[1.0, 0.0], &[1.0, 0.0]).unwrap(),
            vec![0.0, 0.0]
        );
        let v = [3.0, 4.0];
        let g = [1.0, 1.0];
        let analytic = l2_normalize_backward(&v, &g).unwrap();
        let numeric = normalize_fd(&v, &g, 1e-6);
        for (a, n) in analytic.iter().zip(&numeric) {
            assert!((a - n).abs() < 1e-7, "{a} vs {n}");
        }
    }

    #[test]
    fn normalize_backward_matches_fd_on_random_pairs() {
        let mut rng = SeededRng::new(11);
        for _ in 0..100 {
            let d = 2 + rng.below(8);
            let v: Vec<f64> = (0..d).map(|_| rng.normal()).collect();
            let g: Vec<f64> = (0..d).map(|_| rng.normal()).collect();
            let analytic = l2_normalize_backward(&v, &g).unwrap();
            let numeric = normalize_fd(&v, &g, 1e-6);
            for (a, n) in analytic.iter().zip(&numeric) {
                let scale = a.abs().max(n.abs()).max(1e-3);
                assert!((a - n).abs() / scale < 1e-6, "{a} vs {n}");
            }
        }
    }

    #[test]
    fn pca_rank_one_data_has_zero_second_axis() {
        let pts = Mat::from_rows(&[[1.0, 0.0], [2.0, 0.0], [-3.0, 0.0], [5.0, 0.0]]).unwrap();
        let proj = pca_project_2d(&pts).unwrap();
        for r in proj.iter_rows() {
            assert!(r[1].abs() < 1e-12);
        }
    }

    #[test]
    fn pca_preserves_distances_for_full_rank_2d() {
        let mut rng = SeededRng::new(3);
        let rows: Vec<[f64; 2]> = (0..50).map(|_| [rng.normal(), rng.normal()]).collect();
        let pts = Mat::from_rows(&rows).unwrap();
        let proj = pca_project_2d(&pts).unwrap();
        for i in 0..50 {
            for j in 0..50 {
                let a =
                    ((rows[i][0] - rows[j][0]).powi(2) + (rows[i][1] - rows[j][1]).powi(2)).sqrt();
                let b = norm(&[
                    proj.get(i, 0) - proj.get(j, 0),
                    proj.get(i, 1) - proj.get(j, 1),
                ]);
                assert!((a - b).abs() < 1e-9);
            }
        }
    }

    #[test]
    fn pca_rejects_identical_points() {
        let pts = Mat::from_rows(&[[1.5, 2.0], [1.5, 2.0]]).unwrap();
        assert!(matches!(
            pca_project_2d(&pts),
            Err(Error::DegenerateData(_))
        ));
    }

    #[test]
    fn pca_sign_convention() {
        let mut rng = SeededRng::new(5);
        let rows: Vec<Vec<f64>> = (0..30)
            .map(|_| (0..4).map(|k| rng.normal() * (k + 1) as f64).collect())
            .collect();
        let proj = pca_project_2d(&Mat::from_rows(&rows).unwrap()).unwrap();
        let neg = Mat::from_rows(
            &rows
                .iter()
                .map(|r| r.iter().map(|v| -v).collect::<Vec<_>>())
                .collect::<Vec<_>>(),
        )
        .unwrap();
        // Negating the data flips the projections; the loading sign rule
        // keeps the axes themselves fixed.
        let proj_neg = pca_project_2d(&neg).unwrap();
        for (a, b) in proj.as_slice().iter().zip(proj_neg.as_slice()) {
            assert!((a + b).abs() < 1e-9);
        }
    }

    #[test]
    fn shuffle_edges_and_determinism() {
        assert!(seeded_shuffle(0, &mut SeededRng::new(1)).is_empty());
        assert_eq!(seeded_shuffle(1, &mut SeededRng::new(1)), vec![0]);
        let a = seeded_shuffle(5, &mut SeededRng::new(7));
        let b = seeded_shuffle(5, &mut SeededRng::new(7));
        assert_eq!(a, b);
        let mut sorted = a.clone();
        sorted.sort();
        assert_eq!(sorted, vec![0, 1, 2, 3, 4]);
    }

    #[test]
    fn shuffle_is_uniform_over_three() {
        let mut rng = SeededRng::new(2024);
        let mut counts = std::collections::HashMap::new();
        let draws = 10_000;
        for _ in 0..draws {
            *counts.entry(seeded_shuffle(3, &mut rng)).or_insert(0usize) += 1;
        }
        assert_eq!(counts.len(), 6);
        for c in counts.values() {
            let freq = *c as f64 / draws as f64;
            assert!((freq - 1.0 / 6.0).abs() < 0.02, "{freq}");
        }
    }

    #[test]
    fn streams_are_reproducible() {
        let mut a = SeededRng::new(99);
        let mut b = SeededRng::new(99);
        for _ in 0..100 {
            assert_eq!(a.normal().to_bits(), b.normal().to_bits());
        }
    }

    proptest! {
        #[test]
        fn normalize_then_rescale_reconstructs(
            v in prop::collection::vec(-1.0f64..1.0, 1..12),
            log_scale in -6.0f64..6.0,
        ) {
            let raw_norm = norm(&v);
            prop_assume!(raw_norm > 1e-3);
            let target = 10f64.powf(log_scale);
            let v: Vec<f64> = v.iter().map(|x| x / raw_norm * target).collect();
            let (u, n) = l2_normalize(&v).unwrap();
            prop_assert!((norm(&u) - 1.0).abs() < 1e-12);
            for (x, ui) in v.iter().zip(&u) {
                prop_assert!((ui * n - x).abs() <= 1e-9 * n);
            }
        }

        #[test]
        fn pca_is_translation_invariant(
            seed in 0u64..1000,
            shift in prop::collection::vec(-50.0f64..50.0, 3),
        ) {
            let mut rng = SeededRng::new(seed);
            let rows: Vec<Vec<f64>> = (0..12)
                .map(|_| vec![rng.normal() * 3.0, rng.normal() * 2.0, rng.normal() * 0.5])
                .collect();
            let shifted: Vec<Vec<f64>> = rows
                .iter()
                .map(|r| r.iter().zip(&shift).map(|(a, b)| a + b).collect())
                .collect();
            let a = pca_project_2d(&Mat::from_rows(&rows).unwrap()).unwrap();
            let b = pca_project_2d(&Mat::from_rows(&shifted).unwrap()).unwrap();
            for (x, y) in a.as_slice().iter().zip(b.as_slice()) {
                prop_assert!((x - y).abs() < 1e-9);
            }
        }
    }
}
