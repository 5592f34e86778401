//! Geometric multipath synthesis and conversion to channel taps / CFR.
//!
//! Rays are built with the image method on a simplified urban canyon: the
//! direct path, one ground bounce, one bounce off each canyon wall and one
//! single bounce per vehicle face that sees both antennas.

use std::f64::consts::PI;
use std::io::Write;

use num_complex::Complex64;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::scene::{Scene, Vehicle};

pub const SPEED_OF_LIGHT: f64 = 299_792_458.0;

/// Upper bound on the multipath delay spread the tap window must cover.
pub const MAX_DELAY_SPREAD: f64 = 3.2e-6;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Reflector {
    /// Reflection coefficient magnitude in `[0, 1]`.
    pub magnitude: f64,
    /// Adds a phase of pi on reflection.
    pub invert_phase: bool,
}

impl Reflector {
    fn coefficient(&self) -> f64 {
        if self.invert_phase {
            -self.magnitude
        } else {
            self.magnitude
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Materials {
    pub vehicle: Reflector,
    pub ground: Reflector,
    pub wall: Reflector,
}

impl Default for Materials {
    fn default() -> Self {
        Materials {
            vehicle: Reflector {
                magnitude: 0.95,
                invert_phase: true,
            },
            ground: Reflector {
                magnitude: 0.5,
                invert_phase: true,
            },
            wall: Reflector {
                magnitude: 0.6,
                invert_phase: true,
            },
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RadioConfig {
    pub carrier_frequency: f64,
    pub bandwidth: f64,
    pub sample_time: f64,
    pub tap_count: usize,
    pub subcarrier_count: usize,
    pub rolloff: f64,
    pub max_rays: usize,
    pub tx_power_dbm: f64,
    pub materials: Materials,
    /// LOS attenuation when a vehicle box cuts the direct segment.
    pub blockage_loss_db: f64,
    /// Extra loss for a face whose mirror point falls off the face; such faces
    /// are dropped entirely when unset.
    pub off_specular_loss_db: Option<f64>,
}

impl Default for RadioConfig {
    fn default() -> Self {
        RadioConfig {
            carrier_frequency: 5.9e9,
            bandwidth: 10e6,
            sample_time: 1e-7,
            tap_count: 32,
            subcarrier_count: 64,
            rolloff: 0.1,
            max_rays: 25,
            tx_power_dbm: 30.0,
            materials: Materials::default(),
            blockage_loss_db: 15.0,
            off_specular_loss_db: Some(10.0),
        }
    }
}

impl RadioConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.carrier_frequency > 0.0) {
            return Err(Error::config("carrier_frequency", "must be > 0"));
        }
        if !(self.sample_time > 0.0) {
            return Err(Error::config("sample_time", "must be > 0"));
        }
        if !(self.rolloff > 0.0 && self.rolloff < 1.0) {
            return Err(Error::config("rolloff", "must lie in (0, 1)"));
        }
        if self.tap_count == 0 {
            return Err(Error::config("tap_count", "must be >= 1"));
        }
        if (self.tap_count as f64) * self.sample_time < MAX_DELAY_SPREAD * (1.0 - 1e-12) {
            return Err(Error::config(
                "tap_count",
                "tap window L * T_s must cover a 3.2 us delay spread",
            ));
        }
        if self.subcarrier_count < self.tap_count {
            return Err(Error::config("subcarrier_count", "must be >= tap_count"));
        }
        if self.max_rays == 0 {
            return Err(Error::config("max_rays", "must be >= 1"));
        }
        for (name, r) in [
            ("materials.vehicle", self.materials.vehicle),
            ("materials.ground", self.materials.ground),
            ("materials.wall", self.materials.wall),
        ] {
            if !(0.0..=1.0).contains(&r.magnitude) {
                return Err(Error::config(name, "magnitude must lie in [0, 1]"));
            }
        }
        if !(self.blockage_loss_db >= 0.0) {
            return Err(Error::config("blockage_loss_db", "must be >= 0"));
        }
        Ok(())
    }

    pub fn wavelength(&self) -> f64 {
        SPEED_OF_LIGHT / self.carrier_frequency
    }

    fn amplitude_scale(&self) -> f64 {
        let watts = 10f64.powf((self.tx_power_dbm - 30.0) / 10.0);
        watts.sqrt()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum WallSide {
    /// Wall at negative lateral offset.
    South,
    North,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Face {
    Top,
    /// Lateral face at lower y.
    South,
    North,
    /// End face at lower x.
    West,
    East,
}

/// What a ray bounced off on its way to the receiver.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub enum Bounce {
    Direct { blocked: bool },
    Ground,
    Wall(WallSide),
    Vehicle { id: usize, face: Face, specular: bool },
}

impl Bounce {
    pub fn vehicle_id(&self) -> Option<usize> {
        match self {
            Bounce::Vehicle { id, .. } => Some(*id),
            _ => None,
        }
    }

    fn label(&self) -> String {
        match self {
            Bounce::Direct { blocked: false } => "los".into(),
            Bounce::Direct { blocked: true } => "los-blocked".into(),
            Bounce::Ground => "ground".into(),
            Bounce::Wall(WallSide::South) => "wall-south".into(),
            Bounce::Wall(WallSide::North) => "wall-north".into(),
            Bounce::Vehicle { id, face, specular } => format!(
                "vehicle-{id}-{face:?}{}",
                if *specular { "" } else { "-offspec" }
            )
            .to_lowercase(),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Path {
    /// Complex amplitude excluding the carrier phase `exp(-j 2 pi f_c tau)`.
    pub gain: Complex64,
    pub delay: f64,
    pub bounce: Bounce,
}

/// Rays sorted by descending gain magnitude.
#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct PathSet {
    pub paths: Vec<Path>,
}

impl PathSet {
    pub fn len(&self) -> usize {
        self.paths.len()
    }

    pub fn is_empty(&self) -> bool {
        self.paths.is_empty()
    }

    /// Dumps `path_id,gain_magnitude,phase,delay,bounce` rows.
    pub fn write_csv<W: Write>(&self, writer: W) -> Result<()> {
        let mut w = csv::Writer::from_writer(writer);
        w.write_record(["path_id", "gain_magnitude", "phase", "delay", "bounce"])?;
        for (i, p) in self.paths.iter().enumerate() {
            w.write_record([
                i.to_string(),
                p.gain.norm().to_string(),
                p.gain.arg().to_string(),
                p.delay.to_string(),
                p.bounce.label(),
            ])?;
        }
        w.flush()?;
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ChannelTaps {
    pub h: Vec<Complex64>,
}

impl ChannelTaps {
    pub fn new(h: Vec<Complex64>) -> Self {
        ChannelTaps { h }
    }

    pub fn len(&self) -> usize {
        self.h.len()
    }

    pub fn is_empty(&self) -> bool {
        self.h.is_empty()
    }

    pub fn energy(&self) -> f64 {
        self.h.iter().map(|v| v.norm_sqr()).sum()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CfrVector {
    pub values: Vec<Complex64>,
}

impl CfrVector {
    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    pub fn magnitudes(&self) -> Vec<f64> {
        self.values.iter().map(|v| v.norm()).collect()
    }
}

fn sinc(x: f64) -> f64 {
    if x == 0.0 {
        1.0
    } else {
        (PI * x).sin() / (PI * x)
    }
}

/// Raised-cosine pulse with unit peak.
///
/// The factor `cos(pi b x) / (1 - (2 b x)^2)` is evaluated as
/// `sin(pi v / 2) / (v (1 + |2 b x|))` with `v = 1 - |2 b x|`, which stays
/// well conditioned through the removable singularity at `|t| = T_s / (2 b)`.
pub fn raised_cosine(t: f64, beta: f64, sample_time: f64) -> f64 {
    let x = t / sample_time;
    let a = (2.0 * beta * x).abs();
    let v = 1.0 - a;
    let half_pi_v = PI * v / 2.0;
    let sin_ratio = if half_pi_v.abs() < 1e-6 {
        // sin(pi v / 2) / v by its Taylor series
        PI / 2.0 * (1.0 - half_pi_v * half_pi_v / 6.0)
    } else {
        half_pi_v.sin() / v
    };
    sinc(x) * sin_ratio / (1.0 + a)
}

type Vec3 = [f64; 3];

fn sub(a: Vec3, b: Vec3) -> Vec3 {
    [a[0] - b[0], a[1] - b[1], a[2] - b[2]]
}

fn dist(a: Vec3, b: Vec3) -> f64 {
    let d = sub(a, b);
    (d[0] * d[0] + d[1] * d[1] + d[2] * d[2]).sqrt()
}

/// Axis-aligned box as `(min, max)` corners.
type Aabb = (Vec3, Vec3);

fn vehicle_box(scene: &Scene, v: &Vehicle) -> Aabb {
    let yc = scene.config.lane_center(v.lane);
    let (x0, x1) = v.x_extent();
    (
        [x0, yc - v.class.width / 2.0, 0.0],
        [x1, yc + v.class.width / 2.0, v.class.height],
    )
}

/// Slab test for the closed segment `p0 -> p1` against a box.
fn segment_hits_box(p0: Vec3, p1: Vec3, (lo, hi): Aabb) -> bool {
    let d = sub(p1, p0);
    let (mut t0, mut t1) = (0.0f64, 1.0f64);
    for axis in 0..3 {
        if d[axis].abs() < 1e-15 {
            if p0[axis] < lo[axis] || p0[axis] > hi[axis] {
                return false;
            }
        } else {
            let inv = 1.0 / d[axis];
            let mut a = (lo[axis] - p0[axis]) * inv;
            let mut b = (hi[axis] - p0[axis]) * inv;
            if a > b {
                std::mem::swap(&mut a, &mut b);
            }
            t0 = t0.max(a);
            t1 = t1.min(b);
            if t0 > t1 {
                return false;
            }
        }
    }
    true
}

/// A finite rectangle lying in the plane `coord[axis] = offset`.
struct Plate {
    axis: usize,
    offset: f64,
    /// +1 when the outward normal points along +axis.
    normal_sign: f64,
    lo: Vec3,
    hi: Vec3,
}

impl Plate {
    /// Mirror point of `tx -> rx` on the plate plane, clamped to the plate.
    /// Returns `None` unless both antennas lie strictly in front of the face.
    fn reflection_point(&self, tx: Vec3, rx: Vec3) -> Option<(Vec3, bool)> {
        let ht = (tx[self.axis] - self.offset) * self.normal_sign;
        let hr = (rx[self.axis] - self.offset) * self.normal_sign;
        if ht <= 0.0 || hr <= 0.0 {
            return None;
        }
        let frac = ht / (ht + hr);
        let mut p = [0.0; 3];
        let mut specular = true;
        for k in 0..3 {
            if k == self.axis {
                p[k] = self.offset;
            } else {
                let v = tx[k] + frac * (rx[k] - tx[k]);
                let c = v.clamp(self.lo[k], self.hi[k]);
                if c != v {
                    specular = false;
                }
                p[k] = c;
            }
        }
        Some((p, specular))
    }
}

fn vehicle_plates((lo, hi): Aabb) -> [(Face, Plate); 5] {
    let plate = |axis: usize, at_hi: bool| Plate {
        axis,
        offset: if at_hi { hi[axis] } else { lo[axis] },
        normal_sign: if at_hi { 1.0 } else { -1.0 },
        lo,
        hi,
    };
    [
        (Face::Top, plate(2, true)),
        (Face::South, plate(1, false)),
        (Face::North, plate(1, true)),
        (Face::West, plate(0, false)),
        (Face::East, plate(0, true)),
    ]
}

fn db_to_amplitude(db: f64) -> f64 {
    10f64.powf(-db / 20.0)
}

/// Traces the rays from the transmitter to receiver `rx_index`.
pub fn trace_paths(scene: &Scene, radio: &RadioConfig, rx_index: usize) -> Result<PathSet> {
    let cfg = &scene.config;
    let tx = cfg.tx_position;
    let rx = *cfg.rx_positions.get(rx_index).ok_or_else(|| {
        Error::Parameter(format!(
            "receiver index {rx_index} out of range ({} receivers)",
            cfg.rx_positions.len()
        ))
    })?;
    let direct = dist(tx, rx);
    if direct < 1e-9 {
        return Err(Error::Geometry("transmitter and receiver coincide".into()));
    }
    for (name, p) in [("transmitter", tx), ("receiver", rx)] {
        if p[1].abs() >= cfg.wall_offset {
            return Err(Error::Geometry(format!("{name} lies outside the canyon walls")));
        }
    }

    let lambda = radio.wavelength();
    let scale = radio.amplitude_scale();
    let free_space = |d: f64| scale * lambda / (4.0 * PI * d);
    let mut paths = Vec::new();

    let boxes: Vec<Aabb> = scene.vehicles.iter().map(|v| vehicle_box(scene, v)).collect();
    let blocked = boxes.iter().any(|&b| segment_hits_box(tx, rx, b));
    let mut los = free_space(direct);
    if blocked {
        los *= db_to_amplitude(radio.blockage_loss_db);
    }
    paths.push(Path {
        gain: Complex64::new(los, 0.0),
        delay: direct / SPEED_OF_LIGHT,
        bounce: Bounce::Direct { blocked },
    });

    let ground_img = [tx[0], tx[1], -tx[2]];
    let d = dist(ground_img, rx);
    paths.push(Path {
        gain: Complex64::new(free_space(d) * radio.materials.ground.coefficient(), 0.0),
        delay: d / SPEED_OF_LIGHT,
        bounce: Bounce::Ground,
    });

    for (side, y) in [(WallSide::South, -cfg.wall_offset), (WallSide::North, cfg.wall_offset)] {
        let img = [tx[0], 2.0 * y - tx[1], tx[2]];
        let d = dist(img, rx);
        paths.push(Path {
            gain: Complex64::new(free_space(d) * radio.materials.wall.coefficient(), 0.0),
            delay: d / SPEED_OF_LIGHT,
            bounce: Bounce::Wall(side),
        });
    }

    let vehicle_coef = radio.materials.vehicle.coefficient();
    for (v, &bx) in scene.vehicles.iter().zip(&boxes) {
        for (face, plate) in vehicle_plates(bx) {
            let Some((p, specular)) = plate.reflection_point(tx, rx) else {
                continue;
            };
            let extra = if specular {
                1.0
            } else {
                match radio.off_specular_loss_db {
                    Some(db) => db_to_amplitude(db),
                    None => continue,
                }
            };
            let d = dist(tx, p) + dist(p, rx);
            paths.push(Path {
                gain: Complex64::new(free_space(d) * vehicle_coef * extra, 0.0),
                delay: d / SPEED_OF_LIGHT,
                bounce: Bounce::Vehicle {
                    id: v.id,
                    face,
                    specular,
                },
            });
        }
    }

    // stable sort keeps construction order among equal magnitudes
    paths.sort_by(|a, b| b.gain.norm().total_cmp(&a.gain.norm()));
    paths.truncate(radio.max_rays);
    Ok(PathSet { paths })
}

/// Evaluates `h[n] = sum_k a_k exp(-j 2 pi f_c tau_k) g_rc(n T_s - tau_k)` for `n < L`.
pub fn taps_from_paths(paths: &PathSet, radio: &RadioConfig) -> Result<ChannelTaps> {
    let window = radio.tap_count as f64 * radio.sample_time;
    if let Some(p) = paths.paths.iter().find(|p| !(p.delay < window)) {
        return Err(Error::Truncation {
            delay: p.delay,
            window,
        });
    }
    let mut h = vec![Complex64::new(0.0, 0.0); radio.tap_count];
    for p in &paths.paths {
        let carrier = Complex64::from_polar(1.0, -2.0 * PI * radio.carrier_frequency * p.delay);
        let a = p.gain * carrier;
        for (n, tap) in h.iter_mut().enumerate() {
            let g = raised_cosine(n as f64 * radio.sample_time - p.delay, radio.rolloff, radio.sample_time);
            *tap += a * g;
        }
    }
    Ok(ChannelTaps { h })
}

/// N-point DFT of the zero-padded taps.
pub fn cfr_from_taps(taps: &ChannelTaps, n: usize) -> Result<CfrVector> {
    if taps.len() > n {
        return Err(Error::Shape {
            expected: n,
            got: taps.len(),
        });
    }
    let values = (0..n)
        .map(|i| {
            taps.h
                .iter()
                .enumerate()
                .map(|(k, &h)| {
                    // reduce the exponent mod n to keep the angle small
                    let e = ((i * k) % n) as f64;
                    h * Complex64::from_polar(1.0, -2.0 * PI * e / n as f64)
                })
                .sum()
        })
        .collect();
    Ok(CfrVector { values })
}
