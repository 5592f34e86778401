//! Per-subcarrier cleaning of magnitude CFR time series.
//!
//! Stages run in the order Hampel outlier removal, wavelet denoising,
//! background elimination. The first two act on the time series of one
//! subcarrier; the last acts on each packet's vector.

use log::warn;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::raychan::CfrVector;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct HampelParams {
    /// Window is `[i - half_window, i + half_window]`.
    pub half_window: usize,
    pub threshold: f64,
}

impl Default for HampelParams {
    fn default() -> Self {
        // window length 5, n = 3
        HampelParams {
            half_window: 2,
            threshold: 3.0,
        }
    }
}

fn median_sorted(sorted: &[f64]) -> f64 {
    let m = sorted.len() / 2;
    if sorted.len() % 2 == 0 {
        (sorted[m - 1] + sorted[m]) / 2.0
    } else {
        sorted[m]
    }
}

fn median(values: &mut [f64]) -> f64 {
    values.sort_by(f64::total_cmp);
    median_sorted(values)
}

/// Replaces `x[i]` with the local median when `|x[i] - m_i| > n * MAD_i`.
///
/// Windows shrink at the series edges. A window with zero MAD flags any
/// sample that differs from its median.
pub fn hampel_filter(series: &[f64], params: &HampelParams) -> Result<Vec<f64>> {
    if params.half_window < 1 {
        return Err(Error::Parameter("Hampel half window must be >= 1".into()));
    }
    let k = params.half_window;
    let n = series.len();
    let mut window = Vec::with_capacity(2 * k + 1);
    let mut out = series.to_vec();
    for i in 0..n {
        let lo = i.saturating_sub(k);
        let hi = (i + k + 1).min(n);
        window.clear();
        window.extend_from_slice(&series[lo..hi]);
        let m = median(&mut window);
        for v in window.iter_mut() {
            *v = (*v - m).abs();
        }
        let mad = median(&mut window);
        if (series[i] - m).abs() > params.threshold * mad {
            out[i] = m;
        }
    }
    Ok(out)
}

/// Symlet-4 decomposition low-pass filter.
pub const SYM4_DEC_LO: [f64; 8] = [
    -0.075_765_714_789_273_33,
    -0.029_635_527_645_998_51,
    0.497_618_667_632_015_45,
    0.803_738_751_805_916_1,
    0.297_857_795_605_277_36,
    -0.099_219_543_576_847_22,
    -0.012_603_967_262_037_833,
    0.032_223_100_604_042_702,
];

/// Quadrature-mirror high-pass filter `g[k] = (-1)^k h[L-1-k]`.
pub fn sym4_dec_hi() -> [f64; 8] {
    let mut g = [0.0; 8];
    for (k, v) in g.iter_mut().enumerate() {
        let sign = if k % 2 == 0 { 1.0 } else { -1.0 };
        *v = sign * SYM4_DEC_LO[7 - k];
    }
    g
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ThresholdRule {
    /// `sigma * sqrt(2 ln N)` with `sigma = median(|finest detail|) / 0.6745`.
    Universal,
    Fixed(f64),
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct WaveletParams {
    /// Upper bound on the decomposition depth.
    pub max_level: usize,
    pub threshold: ThresholdRule,
}

impl Default for WaveletParams {
    fn default() -> Self {
        WaveletParams {
            max_level: 9,
            threshold: ThresholdRule::Universal,
        }
    }
}

/// Multi-level periodic DWT coefficients.
#[derive(Debug, Clone, PartialEq)]
pub struct Decomposition {
    pub approx: Vec<f64>,
    /// Finest level first.
    pub details: Vec<Vec<f64>>,
    /// Input length at each level before odd-length padding.
    lengths: Vec<usize>,
}

/// Deepest level with at least `filter_len - 1` samples per coefficient block.
pub fn max_level(len: usize, filter_len: usize) -> usize {
    if filter_len < 2 || len < filter_len - 1 {
        return 0;
    }
    let ratio = len as f64 / (filter_len - 1) as f64;
    ratio.log2().floor() as usize
}

fn analysis_step(x: &[f64], lo: &[f64], hi: &[f64]) -> (Vec<f64>, Vec<f64>) {
    let n = x.len();
    let half = n / 2;
    let mut a = vec![0.0; half];
    let mut d = vec![0.0; half];
    for i in 0..half {
        for k in 0..lo.len() {
            let v = x[(2 * i + k) % n];
            a[i] += lo[k] * v;
            d[i] += hi[k] * v;
        }
    }
    (a, d)
}

fn synthesis_step(a: &[f64], d: &[f64], lo: &[f64], hi: &[f64]) -> Vec<f64> {
    let n = 2 * a.len();
    let mut x = vec![0.0; n];
    for i in 0..a.len() {
        for k in 0..lo.len() {
            x[(2 * i + k) % n] += lo[k] * a[i] + hi[k] * d[i];
        }
    }
    x
}

/// Periodic sym4 decomposition to `levels` levels. Odd-length blocks are
/// extended by repeating their last sample.
pub fn decompose(series: &[f64], levels: usize) -> Decomposition {
    let hi = sym4_dec_hi();
    let mut approx = series.to_vec();
    let mut details = Vec::with_capacity(levels);
    let mut lengths = Vec::with_capacity(levels);
    for _ in 0..levels {
        lengths.push(approx.len());
        if approx.len() % 2 == 1 {
            approx.push(*approx.last().expect("non-empty block"));
        }
        let (a, d) = analysis_step(&approx, &SYM4_DEC_LO, &hi);
        approx = a;
        details.push(d);
    }
    Decomposition {
        approx,
        details,
        lengths,
    }
}

pub fn reconstruct(dec: &Decomposition) -> Vec<f64> {
    let hi = sym4_dec_hi();
    let mut x = dec.approx.clone();
    for (d, &len) in dec.details.iter().zip(&dec.lengths).rev() {
        x = synthesis_step(&x, d, &SYM4_DEC_LO, &hi);
        x.truncate(len);
    }
    x
}

fn soft(v: f64, t: f64) -> f64 {
    v.signum() * (v.abs() - t).max(0.0)
}

#[derive(Debug, Clone, PartialEq)]
pub struct Denoised {
    pub values: Vec<f64>,
    /// Set when the series was too short to decompose and passed through.
    pub passed_through: bool,
}

/// Sym4 wavelet shrinkage with soft thresholding of every detail level.
pub fn wavelet_denoise(series: &[f64], params: &WaveletParams) -> Denoised {
    let levels = params.max_level.min(max_level(series.len(), SYM4_DEC_LO.len()));
    if levels == 0 {
        warn!(
            "series of length {} too short for one sym4 level; left unchanged",
            series.len()
        );
        return Denoised {
            values: series.to_vec(),
            passed_through: true,
        };
    }
    let mut dec = decompose(series, levels);
    let threshold = match params.threshold {
        ThresholdRule::Fixed(t) => t,
        ThresholdRule::Universal => {
            let mut finest: Vec<f64> = dec.details[0].iter().map(|v| v.abs()).collect();
            let sigma = median(&mut finest) / 0.6745;
            sigma * (2.0 * (series.len() as f64).ln()).sqrt()
        }
    };
    if threshold > 0.0 {
        for d in dec.details.iter_mut() {
            d.iter_mut().for_each(|v| *v = soft(*v, threshold));
        }
    }
    Denoised {
        values: reconstruct(&dec),
        passed_through: false,
    }
}

/// Mean magnitude CFR of vehicle-free packets.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BackgroundProfile {
    pub mean: Vec<f64>,
    pub sample_count: usize,
}

impl BackgroundProfile {
    pub fn from_magnitudes(frames: &[Vec<f64>]) -> Result<Self> {
        let first = frames
            .first()
            .ok_or_else(|| Error::Data("background needs at least one frame".into()))?;
        let mut mean = vec![0.0; first.len()];
        for f in frames {
            if f.len() != mean.len() {
                return Err(Error::Shape {
                    expected: mean.len(),
                    got: f.len(),
                });
            }
            mean.iter_mut().zip(f).for_each(|(m, v)| *m += v);
        }
        let count = frames.len() as f64;
        mean.iter_mut().for_each(|m| *m /= count);
        Ok(BackgroundProfile {
            mean,
            sample_count: frames.len(),
        })
    }
}

pub fn background_profile(zero_vehicle_cfrs: &[CfrVector]) -> Result<BackgroundProfile> {
    let frames: Vec<Vec<f64>> = zero_vehicle_cfrs.iter().map(CfrVector::magnitudes).collect();
    BackgroundProfile::from_magnitudes(&frames)
}

/// `H - H_b`, without clipping.
pub fn remove_background(h: &[f64], bg: &BackgroundProfile) -> Result<Vec<f64>> {
    if h.len() != bg.mean.len() {
        return Err(Error::Shape {
            expected: bg.mean.len(),
            got: h.len(),
        });
    }
    Ok(h.iter().zip(&bg.mean).map(|(x, b)| x - b).collect())
}

pub fn restore_background(h_bar: &[f64], bg: &BackgroundProfile) -> Result<Vec<f64>> {
    if h_bar.len() != bg.mean.len() {
        return Err(Error::Shape {
            expected: bg.mean.len(),
            got: h_bar.len(),
        });
    }
    Ok(h_bar.iter().zip(&bg.mean).map(|(x, b)| x + b).collect())
}

/// Stage toggles for a whole feature matrix.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PreprocessConfig {
    pub hampel: Option<HampelParams>,
    pub wavelet: Option<WaveletParams>,
    pub background: bool,
}

impl Default for PreprocessConfig {
    fn default() -> Self {
        PreprocessConfig {
            hampel: Some(HampelParams::default()),
            wavelet: Some(WaveletParams::default()),
            background: true,
        }
    }
}

impl PreprocessConfig {
    pub fn none() -> Self {
        PreprocessConfig {
            hampel: None,
            wavelet: None,
            background: false,
        }
    }
}

/// Applies the enabled stages to `rows` (one feature vector per packet, in
/// time order). Columns are filtered independently.
pub fn apply(
    rows: &[Vec<f64>],
    config: &PreprocessConfig,
    background: Option<&BackgroundProfile>,
) -> Result<Vec<Vec<f64>>> {
    let Some(width) = rows.first().map(Vec::len) else {
        return Ok(Vec::new());
    };
    if let Some(bad) = rows.iter().find(|r| r.len() != width) {
        return Err(Error::Shape {
            expected: width,
            got: bad.len(),
        });
    }
    let columns: Vec<Vec<f64>> = (0..width)
        .into_par_iter()
        .map(|c| -> Result<Vec<f64>> {
            let mut col: Vec<f64> = rows.iter().map(|r| r[c]).collect();
            if let Some(h) = &config.hampel {
                col = hampel_filter(&col, h)?;
            }
            if let Some(w) = &config.wavelet {
                col = wavelet_denoise(&col, w).values;
            }
            Ok(col)
        })
        .collect::<Result<_>>()?;
    let mut out: Vec<Vec<f64>> = (0..rows.len())
        .map(|i| columns.iter().map(|c| c[i]).collect())
        .collect();
    if config.background {
        let bg = background
            .ok_or_else(|| Error::Data("background elimination enabled but no profile given".into()))?;
        for row in out.iter_mut() {
            *row = remove_background(row, bg)?;
        }
    }
    Ok(out)
}
