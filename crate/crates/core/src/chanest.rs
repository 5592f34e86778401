//! Packet reception and least-squares channel estimation.
//!
//! The transmitted preamble is a training sequence of `N_p` samples preceded by
//! an `L`-sample cyclic prefix. The receiver drops the first `L` samples and
//! sees `y = T h + n`, where `T` is the `N_p x L` circulant training matrix.

use std::f64::consts::PI;

use nalgebra::{DMatrix, DVector};
use num_complex::Complex64;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::raychan::{cfr_from_taps, CfrVector, ChannelTaps};

fn gcd(mut a: usize, mut b: usize) -> usize {
    while b != 0 {
        (a, b) = (b, a % b);
    }
    a
}

/// Training preamble: `base` repeated cyclically behind an `L`-sample prefix.
#[derive(Debug, Clone, PartialEq)]
pub struct TrainingSequence {
    base: Vec<Complex64>,
    prefix_len: usize,
}

impl TrainingSequence {
    pub fn new(base: Vec<Complex64>, prefix_len: usize) -> Result<Self> {
        if base.is_empty() {
            return Err(Error::Parameter("training sequence is empty".into()));
        }
        if prefix_len > base.len() {
            return Err(Error::Parameter(format!(
                "prefix of {prefix_len} samples longer than the {}-sample sequence",
                base.len()
            )));
        }
        Ok(TrainingSequence { base, prefix_len })
    }

    /// `N_p`, the number of samples kept after the prefix is removed.
    pub fn retained_len(&self) -> usize {
        self.base.len()
    }

    pub fn prefix_len(&self) -> usize {
        self.prefix_len
    }

    pub fn base(&self) -> &[Complex64] {
        &self.base
    }

    /// Full transmitted preamble `t[0..N_tr]`, `N_tr = N_p + L`.
    pub fn samples(&self) -> Vec<Complex64> {
        let n = self.base.len();
        (0..n + self.prefix_len)
            .map(|i| self.base[(i + n - self.prefix_len) % n])
            .collect()
    }
}

/// Zadoff-Chu sequence of length `n_p`: `exp(-j pi u k (k + n_p mod 2) / n_p)`.
pub fn zadoff_chu(n_p: usize, root: usize, prefix_len: usize) -> Result<TrainingSequence> {
    if n_p == 0 {
        return Err(Error::Parameter("Zadoff-Chu length must be > 0".into()));
    }
    if root == 0 || gcd(root, n_p) != 1 {
        return Err(Error::Parameter(format!(
            "Zadoff-Chu root {root} is not coprime with length {n_p}"
        )));
    }
    let cf = (n_p % 2) as u128;
    let base = (0..n_p as u128)
        .map(|k| {
            // exact integer phase numerator reduced mod 2 n_p
            let num = (root as u128 * k * (k + cf)) % (2 * n_p as u128);
            Complex64::from_polar(1.0, -PI * num as f64 / n_p as f64)
        })
        .collect();
    TrainingSequence::new(base, prefix_len)
}

/// Frequency-domain 802.11 long training symbol on subcarriers -26..=26.
const LTF_FREQ: [i8; 53] = [
    1, 1, -1, -1, 1, 1, -1, 1, -1, 1, 1, 1, 1, 1, 1, -1, -1, 1, 1, -1, 1, -1, 1, 1, 1, 1, 0, 1,
    -1, -1, 1, 1, -1, 1, -1, 1, -1, -1, -1, -1, -1, 1, 1, -1, -1, 1, -1, 1, -1, 1, 1, 1, 1,
];

/// 64-sample time-domain 802.11 long training symbol, scaled to unit mean power.
pub fn long_training_sequence(prefix_len: usize) -> Result<TrainingSequence> {
    let n = 64usize;
    let mut freq = vec![0.0f64; n];
    for (i, &v) in LTF_FREQ.iter().enumerate() {
        let k = i as i64 - 26;
        freq[k.rem_euclid(n as i64) as usize] = v as f64;
    }
    let mut base: Vec<Complex64> = (0..n)
        .map(|t| {
            freq.iter()
                .enumerate()
                .map(|(k, &v)| v * Complex64::from_polar(1.0, 2.0 * PI * ((k * t) % n) as f64 / n as f64))
                .sum::<Complex64>()
        })
        .collect();
    let power = base.iter().map(|v| v.norm_sqr()).sum::<f64>() / n as f64;
    let s = power.sqrt();
    base.iter_mut().for_each(|v| *v /= s);
    TrainingSequence::new(base, prefix_len)
}

/// Circularly shifted training matrix, `N_p x L`.
#[derive(Debug, Clone, PartialEq)]
pub struct TrainingMatrix {
    t: DMatrix<Complex64>,
}

impl TrainingMatrix {
    /// Row `r` corresponds to received sample `L + r`, so entry `(r, c)` is
    /// `t[L + r - c]`: the base sequence at `(r - c) mod N_p`.
    pub fn from_sequence(seq: &TrainingSequence, taps: usize) -> Result<Self> {
        if taps != seq.prefix_len() {
            return Err(Error::Shape {
                expected: seq.prefix_len(),
                got: taps,
            });
        }
        let samples = seq.samples();
        let rows = seq.retained_len();
        let t = DMatrix::from_fn(rows, taps, |r, c| samples[taps + r - c]);
        Ok(TrainingMatrix { t })
    }

    pub fn from_matrix(t: DMatrix<Complex64>) -> Self {
        TrainingMatrix { t }
    }

    pub fn rows(&self) -> usize {
        self.t.nrows()
    }

    pub fn cols(&self) -> usize {
        self.t.ncols()
    }

    pub fn matrix(&self) -> &DMatrix<Complex64> {
        &self.t
    }

    /// `T^H T`.
    pub fn gram(&self) -> DMatrix<Complex64> {
        self.t.adjoint() * &self.t
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct NoiseModel {
    /// Variance per complex sample.
    pub sigma_n_sq: f64,
    pub rng_seed: u64,
}

/// Draws `y = T h + n` with circular complex Gaussian noise.
pub fn simulate_reception(
    taps: &ChannelTaps,
    training: &TrainingMatrix,
    noise: &NoiseModel,
) -> Result<Vec<Complex64>> {
    if taps.len() != training.cols() {
        return Err(Error::Shape {
            expected: training.cols(),
            got: taps.len(),
        });
    }
    if !(noise.sigma_n_sq >= 0.0) {
        return Err(Error::Parameter("noise variance must be >= 0".into()));
    }
    let h = DVector::from_column_slice(&taps.h);
    let clean = training.matrix() * h;
    let mut rng = ChaCha8Rng::seed_from_u64(noise.rng_seed);
    let std = (noise.sigma_n_sq / 2.0).sqrt();
    Ok(clean
        .iter()
        .map(|&v| {
            let re: f64 = StandardNormal.sample(&mut rng);
            let im: f64 = StandardNormal.sample(&mut rng);
            v + Complex64::new(std * re, std * im)
        })
        .collect())
}

/// Least-squares estimator `(T^H T)^{-1} T^H` for a fixed training matrix.
#[derive(Debug, Clone)]
pub struct LsEstimator {
    training: TrainingMatrix,
    pinv: DMatrix<Complex64>,
}

impl LsEstimator {
    pub fn new(training: TrainingMatrix) -> Result<Self> {
        if training.rows() < training.cols() {
            return Err(Error::Estimation(format!(
                "training matrix {}x{} has fewer rows than taps",
                training.rows(),
                training.cols()
            )));
        }
        let gram = training.gram();
        let chol = gram
            .clone()
            .cholesky()
            .ok_or_else(|| Error::Estimation("training matrix is rank deficient".into()))?;
        let l = chol.l_dirty();
        let diag: Vec<f64> = (0..l.nrows()).map(|i| l[(i, i)].re).collect();
        let max = diag.iter().cloned().fold(0.0, f64::max);
        if diag.iter().any(|&d| !(d > max * 1e-8)) {
            return Err(Error::Estimation("training matrix is rank deficient".into()));
        }
        let pinv = chol.solve(&training.matrix().adjoint());
        Ok(LsEstimator { training, pinv })
    }

    pub fn training(&self) -> &TrainingMatrix {
        &self.training
    }

    pub fn estimate(&self, y: &[Complex64]) -> Result<ChannelTaps> {
        if y.len() != self.training.rows() {
            return Err(Error::Shape {
                expected: self.training.rows(),
                got: y.len(),
            });
        }
        let h = &self.pinv * DVector::from_column_slice(y);
        Ok(ChannelTaps::new(h.iter().copied().collect()))
    }

    /// `T^H y / N_p`, valid when `T^H T = N_p I`.
    pub fn matched_filter(&self, y: &[Complex64]) -> Result<ChannelTaps> {
        if y.len() != self.training.rows() {
            return Err(Error::Shape {
                expected: self.training.rows(),
                got: y.len(),
            });
        }
        let np = self.training.rows() as f64;
        let h = self.training.matrix().adjoint() * DVector::from_column_slice(y) / Complex64::new(np, 0.0);
        Ok(ChannelTaps::new(h.iter().copied().collect()))
    }
}

/// One-shot LS estimate; prefer [`LsEstimator`] when reusing `T`.
pub fn ls_estimate(y: &[Complex64], training: &TrainingMatrix) -> Result<ChannelTaps> {
    LsEstimator::new(training.clone())?.estimate(y)
}

pub fn estimated_cfr(taps_hat: &ChannelTaps, n: usize) -> Result<CfrVector> {
    cfr_from_taps(taps_hat, n)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn zc_matrix(root: usize) -> TrainingMatrix {
        TrainingMatrix::from_sequence(&zadoff_chu(64, root, 32).unwrap(), 32).unwrap()
    }

    #[test]
    fn zc_unit_modulus_and_root_validation() {
        for (n, u) in [(64, 1), (64, 3), (63, 2), (139, 25)] {
            let s = zadoff_chu(n, u, 0).unwrap();
            assert!(s.base().iter().all(|v| (v.norm() - 1.0).abs() < 1e-12));
        }
        assert!(zadoff_chu(64, 2, 0).is_err());
        assert!(zadoff_chu(64, 0, 0).is_err());
    }

    #[test]
    fn zc_periodic_autocorrelation() {
        for root in [1, 3] {
            let s = zadoff_chu(64, root, 0).unwrap();
            let b = s.base();
            for lag in 1..64 {
                let r: Complex64 = (0..64).map(|n| b[n] * b[(n + lag) % 64].conj()).sum();
                assert!(r.norm() < 1e-9, "root {root} lag {lag}: {r}");
            }
        }
        let a = zadoff_chu(64, 1, 0).unwrap();
        let b = zadoff_chu(64, 3, 0).unwrap();
        assert!(a.base()[1..].iter().zip(&b.base()[1..]).any(|(x, y)| (x - y).norm() > 1e-3));
    }

    #[test]
    fn training_matrix_layout() {
        let seq = zadoff_chu(64, 1, 32).unwrap();
        let s = seq.samples();
        assert_eq!(s.len(), 96);
        let t = TrainingMatrix::from_sequence(&seq, 32).unwrap();
        assert_eq!((t.rows(), t.cols()), (64, 32));
        for r in 0..64 {
            for c in 0..32 {
                assert_eq!(t.matrix()[(r, c)], s[32 + r - c]);
                assert_eq!(t.matrix()[(r, c)], seq.base()[(r + 64 - c) % 64]);
            }
        }
        assert!(TrainingMatrix::from_sequence(&seq, 16).is_err());
    }

    fn fixed_taps() -> ChannelTaps {
        ChannelTaps::new(
            (0..32)
                .map(|k| Complex64::new((k as f64 * 0.37).sin(), (k as f64 * 0.11).cos() * 0.5))
                .collect(),
        )
    }

    #[test]
    fn noiseless_estimate_is_exact() {
        let t = zc_matrix(1);
        let h = fixed_taps();
        let y = simulate_reception(&h, &t, &NoiseModel { sigma_n_sq: 0.0, rng_seed: 1 }).unwrap();
        let clean = t.matrix() * DVector::from_column_slice(&h.h);
        assert!(y.iter().zip(clean.iter()).all(|(a, b)| a == b));
        let est = ls_estimate(&y, &t).unwrap();
        for (a, b) in est.h.iter().zip(&h.h) {
            assert!((a - b).norm() < 1e-9);
        }
    }

    #[test]
    fn shortcut_matches_general_solve() {
        let est = LsEstimator::new(zc_matrix(3)).unwrap();
        let y = simulate_reception(
            &fixed_taps(),
            est.training(),
            &NoiseModel { sigma_n_sq: 0.3, rng_seed: 5 },
        )
        .unwrap();
        let a = est.estimate(&y).unwrap();
        let b = est.matched_filter(&y).unwrap();
        for (x, y) in a.h.iter().zip(&b.h) {
            assert!((x - y).norm() < 1e-9);
        }
    }

    #[test]
    fn estimate_is_linear_in_y() {
        let est = LsEstimator::new(zc_matrix(1)).unwrap();
        let y = simulate_reception(
            &fixed_taps(),
            est.training(),
            &NoiseModel { sigma_n_sq: 0.1, rng_seed: 9 },
        )
        .unwrap();
        let c = Complex64::new(0.7, -1.3);
        let scaled: Vec<_> = y.iter().map(|v| v * c).collect();
        let a = est.estimate(&y).unwrap();
        let b = est.estimate(&scaled).unwrap();
        for (x, y) in a.h.iter().zip(&b.h) {
            assert!((x * c - y).norm() < 1e-9);
        }
    }

    #[test]
    fn reception_is_affine_in_taps() {
        let t = zc_matrix(1);
        let noise = NoiseModel { sigma_n_sq: 0.5, rng_seed: 42 };
        let h1 = fixed_taps();
        let h2 = ChannelTaps::new(h1.h.iter().rev().map(|v| v * 0.5).collect());
        let sum = ChannelTaps::new(h1.h.iter().zip(&h2.h).map(|(a, b)| a + b).collect());
        let zero = ChannelTaps::new(vec![Complex64::new(0.0, 0.0); 32]);
        let y1 = simulate_reception(&h1, &t, &noise).unwrap();
        let y2 = simulate_reception(&h2, &t, &noise).unwrap();
        let ys = simulate_reception(&sum, &t, &noise).unwrap();
        let n = simulate_reception(&zero, &t, &noise).unwrap();
        for i in 0..64 {
            assert!((ys[i] - (y1[i] + y2[i] - n[i])).norm() < 1e-12);
        }
    }

    #[test]
    fn rank_deficient_training_rejected() {
        let t = TrainingMatrix::from_matrix(DMatrix::from_element(64, 32, Complex64::new(1.0, 0.0)));
        assert!(matches!(LsEstimator::new(t), Err(Error::Estimation(_))));
        let short = TrainingMatrix::from_matrix(DMatrix::identity(8, 32));
        assert!(LsEstimator::new(short).is_err());
    }

    #[test]
    fn shape_mismatch() {
        let t = zc_matrix(1);
        let h = ChannelTaps::new(vec![Complex64::new(1.0, 0.0); 16]);
        assert!(matches!(
            simulate_reception(&h, &t, &NoiseModel { sigma_n_sq: 0.0, rng_seed: 0 }),
            Err(Error::Shape { .. })
        ));
    }

    #[test]
    fn long_training_symbol_supports_ls() {
        let seq = long_training_sequence(32).unwrap();
        let p: f64 = seq.base().iter().map(|v| v.norm_sqr()).sum::<f64>() / 64.0;
        assert!((p - 1.0).abs() < 1e-12);
        let t = TrainingMatrix::from_sequence(&seq, 32).unwrap();
        let h = fixed_taps();
        let y = simulate_reception(&h, &t, &NoiseModel { sigma_n_sq: 0.0, rng_seed: 0 }).unwrap();
        let est = ls_estimate(&y, &t).unwrap();
        for (a, b) in est.h.iter().zip(&h.h) {
            assert!((a - b).norm() < 1e-8);
        }
    }
}
