//! Randomized traffic snapshots on a straight multi-lane road segment.
//!
//! Each lane is modeled as a ring slightly longer than the visible segment.
//! Vehicles are dropped onto the ring by sequential sampling (exponential
//! headways with a hard minimum gap) once per epoch, then advanced at constant
//! speed for the following snapshots of the same epoch. Vehicles whose box is
//! not entirely on the visible segment are hidden from the scene.

use std::io::Write;
use std::sync::Arc;

use rand::Rng;
use rand_distr::{Distribution, Exp};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::seed;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum VehicleKind {
    Car,
    Bus,
    Truck,
}

impl VehicleKind {
    pub fn as_str(self) -> &'static str {
        match self {
            VehicleKind::Car => "car",
            VehicleKind::Bus => "bus",
            VehicleKind::Truck => "truck",
        }
    }
}

/// Bounding-box dimensions of one vehicle type, in meters.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct VehicleClass {
    pub name: VehicleKind,
    pub width: f64,
    pub length: f64,
    pub height: f64,
}

impl VehicleClass {
    pub const CAR: VehicleClass = VehicleClass {
        name: VehicleKind::Car,
        width: 1.80,
        length: 4.60,
        height: 1.60,
    };
    pub const BUS: VehicleClass = VehicleClass {
        name: VehicleKind::Bus,
        width: 2.40,
        length: 9.00,
        height: 3.20,
    };
    pub const TRUCK: VehicleClass = VehicleClass {
        name: VehicleKind::Truck,
        width: 2.50,
        length: 12.00,
        height: 4.30,
    };
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MixEntry {
    pub class: VehicleClass,
    pub probability: f64,
}

/// Road, antenna and traffic parameters for scene generation.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SceneConfig {
    pub road_length: f64,
    pub lane_count: usize,
    pub lane_width: f64,
    /// Distance of each canyon wall from the road centerline.
    pub wall_offset: f64,
    pub tx_position: [f64; 3],
    pub rx_positions: Vec<[f64; 3]>,
    pub vehicle_mix: Vec<MixEntry>,
    /// Expected vehicles per lane per 100 m.
    pub density: f64,
    /// When set, each epoch draws its density uniformly from `[density, density_max]`.
    pub density_max: Option<f64>,
    pub min_gap: f64,
    /// Vehicle speed in m/s.
    pub speed: f64,
    /// Time between consecutive snapshots in seconds.
    pub time_step: f64,
    /// Snapshots sharing one placement before traffic is resampled.
    pub epoch_length: usize,
    /// Half-open longitudinal interval used for ground-truth counts; whole road when unset.
    pub count_region: Option<[f64; 2]>,
    pub rng_seed: u64,
}

impl Default for SceneConfig {
    fn default() -> Self {
        SceneConfig {
            road_length: 200.0,
            lane_count: 4,
            lane_width: 3.5,
            wall_offset: 14.0,
            tx_position: [10.0, -9.0, 2.0],
            rx_positions: vec![[110.0, -9.0, 2.0], [110.0, 9.0, 2.0]],
            vehicle_mix: vec![
                MixEntry {
                    class: VehicleClass::CAR,
                    probability: 0.8,
                },
                MixEntry {
                    class: VehicleClass::BUS,
                    probability: 0.1,
                },
                MixEntry {
                    class: VehicleClass::TRUCK,
                    probability: 0.1,
                },
            ],
            density: 0.0,
            density_max: Some(3.0),
            min_gap: 2.0,
            speed: 10.0,
            time_step: 0.1,
            epoch_length: 10,
            count_region: None,
            rng_seed: 0,
        }
    }
}

impl SceneConfig {
    pub fn validate(&self) -> Result<()> {
        let total: f64 = self.vehicle_mix.iter().map(|m| m.probability).sum();
        if self.vehicle_mix.is_empty() || (total - 1.0).abs() > 1e-9 {
            return Err(Error::config(
                "vehicle_mix",
                format!("probabilities must sum to 1, got {total}"),
            ));
        }
        for m in &self.vehicle_mix {
            if !(m.probability >= 0.0) {
                return Err(Error::config("vehicle_mix", "negative probability"));
            }
            if !(m.class.width > 0.0 && m.class.length > 0.0 && m.class.height > 0.0) {
                return Err(Error::config("vehicle_mix", "vehicle dimensions must be positive"));
            }
        }
        if !(self.road_length > 0.0) {
            return Err(Error::config("road_length", "must be > 0"));
        }
        if self.lane_count < 1 {
            return Err(Error::config("lane_count", "must be >= 1"));
        }
        if !(self.lane_width > 0.0) {
            return Err(Error::config("lane_width", "must be > 0"));
        }
        if !(self.wall_offset > self.half_road_width()) {
            return Err(Error::config("wall_offset", "walls must lie outside the road"));
        }
        if !(self.min_gap >= 0.0) {
            return Err(Error::config("min_gap", "must be >= 0"));
        }
        if !(self.density >= 0.0) {
            return Err(Error::config("density", "must be >= 0"));
        }
        if let Some(max) = self.density_max {
            if !(max >= self.density) {
                return Err(Error::config("density_max", "must be >= density"));
            }
        }
        if !(self.speed >= 0.0 && self.time_step >= 0.0) {
            return Err(Error::config("speed", "speed and time_step must be >= 0"));
        }
        if self.epoch_length < 1 {
            return Err(Error::config("epoch_length", "must be >= 1"));
        }
        if !(self.tx_position[2] > 0.0) {
            return Err(Error::config("tx_position", "antenna height must be > 0"));
        }
        if self.rx_positions.is_empty() {
            return Err(Error::config("rx_positions", "at least one receiver required"));
        }
        if self.rx_positions.iter().any(|p| !(p[2] > 0.0)) {
            return Err(Error::config("rx_positions", "antenna height must be > 0"));
        }
        if let Some([lo, hi]) = self.count_region {
            if !(lo < hi && lo >= 0.0 && hi <= self.road_length) {
                return Err(Error::config("count_region", "must be an interval inside the road"));
            }
        }
        Ok(())
    }

    pub fn half_road_width(&self) -> f64 {
        self.lane_count as f64 * self.lane_width / 2.0
    }

    /// Lateral coordinate of a lane center (road centerline at 0).
    pub fn lane_center(&self, lane: usize) -> f64 {
        -self.half_road_width() + (lane as f64 + 0.5) * self.lane_width
    }

    /// Hidden extension of each lane ring beyond the visible road.
    fn ring_margin(&self) -> f64 {
        let longest = self
            .vehicle_mix
            .iter()
            .map(|m| m.class.length)
            .fold(0.0, f64::max);
        longest + self.min_gap
    }

    fn mean_length(&self) -> f64 {
        self.vehicle_mix
            .iter()
            .map(|m| m.probability * m.class.length)
            .sum()
    }

    pub fn region(&self) -> (f64, f64) {
        match self.count_region {
            Some([lo, hi]) => (lo, hi),
            None => (0.0, self.road_length),
        }
    }
}

/// One vehicle placed in a scene.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Vehicle {
    /// Stable identifier within an epoch.
    pub id: usize,
    pub class: VehicleClass,
    pub lane: usize,
    /// Longitudinal center position in meters.
    pub x: f64,
}

impl Vehicle {
    pub fn x_extent(&self) -> (f64, f64) {
        (self.x - self.class.length / 2.0, self.x + self.class.length / 2.0)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Scene {
    pub config: Arc<SceneConfig>,
    pub vehicles: Vec<Vehicle>,
    pub snapshot_index: u64,
}

/// Generates the snapshot with the given index.
///
/// The result depends only on `(config, snapshot_index)`.
pub fn generate_scene(config: &Arc<SceneConfig>, snapshot_index: u64) -> Result<Scene> {
    config.validate()?;
    let epoch_len = config.epoch_length as u64;
    let epoch = snapshot_index / epoch_len;
    let step = (snapshot_index % epoch_len) as f64;
    let ring = config.road_length + config.ring_margin();

    let mut rng = seed::rng(config.rng_seed, "scene-epoch", epoch);
    let density = match config.density_max {
        Some(max) if max > config.density => rng.gen_range(config.density..=max),
        _ => config.density,
    };

    let mut vehicles = Vec::new();
    let mut next_id = 0;
    for lane in 0..config.lane_count {
        let placed = place_lane(config, density, ring, &mut rng);
        // lower half of the lanes drive towards +x, upper half towards -x
        let direction = if lane < config.lane_count.div_ceil(2) {
            1.0
        } else {
            -1.0
        };
        let shift = direction * config.speed * config.time_step * step;
        for (class, center) in placed {
            let id = next_id;
            next_id += 1;
            let x = (center + shift).rem_euclid(ring);
            let v = Vehicle { id, class, lane, x };
            let (lo, hi) = v.x_extent();
            if lo >= 0.0 && hi <= config.road_length {
                vehicles.push(v);
            }
        }
    }

    Ok(Scene {
        config: Arc::clone(config),
        vehicles,
        snapshot_index,
    })
}

/// Sequential placement around one lane ring. Returns `(class, center)` pairs.
fn place_lane(
    config: &SceneConfig,
    density: f64,
    ring: f64,
    rng: &mut impl Rng,
) -> Vec<(VehicleClass, f64)> {
    let mut out = Vec::new();
    if density <= 0.0 {
        return out;
    }
    let spacing = 100.0 / density;
    let extra_mean = spacing - config.mean_length() - config.min_gap;
    let headway = (extra_mean > 0.0).then(|| Exp::new(1.0 / extra_mean).expect("positive rate"));

    // anchor a virtual vehicle front at a uniform point of the ring; the first
    // real vehicle follows one gap later, so sparse lanes may stay empty
    let anchor = rng.gen_range(0.0..ring);
    let gap = |rng: &mut dyn rand::RngCore| config.min_gap + headway.as_ref().map_or(0.0, |e| e.sample(rng));
    let mut rear = anchor + gap(rng);
    loop {
        let class = sample_class(&config.vehicle_mix, rng);
        // the gap back to the first vehicle across the wrap is then >= min_gap
        if rear + class.length > anchor + ring {
            break;
        }
        out.push((class, rear + class.length / 2.0));
        rear += class.length + gap(rng);
    }
    out
}

fn sample_class(mix: &[MixEntry], rng: &mut impl Rng) -> VehicleClass {
    let u: f64 = rng.gen();
    let mut acc = 0.0;
    for m in mix {
        acc += m.probability;
        if u < acc {
            return m.class;
        }
    }
    mix[mix.len() - 1].class
}

/// Vehicles whose center lies in the half-open interval `[lo, hi)`, all lanes.
pub fn count_vehicles(scene: &Scene, region: (f64, f64)) -> usize {
    let (lo, hi) = region;
    scene
        .vehicles
        .iter()
        .filter(|v| v.x >= lo && v.x < hi)
        .count()
}

/// Traffic intensity label. `Heavy` is the positive class.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Label {
    Heavy,
    Light,
}

impl Label {
    pub fn sign(self) -> i8 {
        match self {
            Label::Heavy => 1,
            Label::Light => -1,
        }
    }

    pub fn is_positive(self) -> bool {
        self == Label::Heavy
    }
}

/// Heavy iff `count > gamma`.
pub fn label_intensity(count: usize, gamma: usize) -> Label {
    if count > gamma {
        Label::Heavy
    } else {
        Label::Light
    }
}

/// Writes scenes as CSV rows of `snapshot,lane,class,x`.
pub fn write_scenes_csv<W: Write>(writer: W, scenes: &[Scene]) -> Result<()> {
    let mut w = csv::Writer::from_writer(writer);
    w.write_record(["snapshot", "lane", "class", "x"])?;
    for scene in scenes {
        for v in &scene.vehicles {
            w.write_record([
                scene.snapshot_index.to_string(),
                v.lane.to_string(),
                v.class.name.as_str().to_string(),
                v.x.to_string(),
            ])?;
        }
    }
    w.flush()?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    fn cfg() -> Arc<SceneConfig> {
        Arc::new(SceneConfig {
            rng_seed: 11,
            ..SceneConfig::default()
        })
    }

    #[test]
    fn zero_density_is_empty() {
        let c = Arc::new(SceneConfig {
            density: 0.0,
            density_max: None,
            ..SceneConfig::default()
        });
        for i in 0..20 {
            assert!(generate_scene(&c, i).unwrap().vehicles.is_empty());
        }
    }

    #[test]
    fn same_seed_and_index_repeat() {
        let c = cfg();
        for i in [0, 3, 17, 250] {
            assert_eq!(
                generate_scene(&c, i).unwrap().vehicles,
                generate_scene(&c, i).unwrap().vehicles
            );
        }
    }

    #[test]
    fn per_lane_packing_bound() {
        let c = Arc::new(SceneConfig {
            density: 40.0,
            density_max: None,
            min_gap: 1.0,
            rng_seed: 3,
            ..SceneConfig::default()
        });
        let shortest = VehicleClass::CAR.length;
        let bound = (c.road_length / (shortest + c.min_gap)).floor() as usize + 1;
        for i in 0..200 {
            let s = generate_scene(&c, i).unwrap();
            for lane in 0..c.lane_count {
                let n = s.vehicles.iter().filter(|v| v.lane == lane).count();
                assert!(n <= bound, "lane {lane}: {n} > {bound}");
            }
        }
    }

    #[test]
    fn invalid_mix_names_field() {
        let c = Arc::new(SceneConfig {
            vehicle_mix: vec![MixEntry {
                class: VehicleClass::CAR,
                probability: 0.9,
            }],
            ..SceneConfig::default()
        });
        match generate_scene(&c, 0) {
            Err(Error::Config { field, .. }) => assert_eq!(field, "vehicle_mix"),
            other => panic!("unexpected {other:?}"),
        }
        let c = Arc::new(SceneConfig {
            lane_count: 0,
            ..SceneConfig::default()
        });
        assert!(matches!(generate_scene(&c, 0), Err(Error::Config { field, .. }) if field == "lane_count"));
        let c = Arc::new(SceneConfig {
            tx_position: [0.0, 0.0, 0.0],
            ..SceneConfig::default()
        });
        assert!(generate_scene(&c, 0).is_err());
    }

    fn scene_with(xs: &[f64]) -> Scene {
        let config = cfg();
        Scene {
            vehicles: xs
                .iter()
                .enumerate()
                .map(|(id, &x)| Vehicle {
                    id,
                    class: VehicleClass::CAR,
                    lane: 0,
                    x,
                })
                .collect(),
            config,
            snapshot_index: 0,
        }
    }

    #[test]
    fn counting_is_half_open() {
        assert_eq!(count_vehicles(&scene_with(&[]), (0.0, 100.0)), 0);
        assert_eq!(count_vehicles(&scene_with(&[50.0]), (0.0, 100.0)), 1);
        assert_eq!(count_vehicles(&scene_with(&[20.0]), (20.0, 40.0)), 1);
        assert_eq!(count_vehicles(&scene_with(&[40.0]), (20.0, 40.0)), 0);
    }

    #[test]
    fn intensity_threshold_is_strict() {
        assert_eq!(label_intensity(41, 40), Label::Heavy);
        assert_eq!(label_intensity(40, 40), Label::Light);
        assert_eq!(label_intensity(0, 3), Label::Light);
        assert_eq!(Label::Heavy.sign(), 1);
    }

    #[test]
    fn default_vehicle_dimensions() {
        assert_eq!(
            (VehicleClass::CAR.width, VehicleClass::CAR.length, VehicleClass::CAR.height),
            (1.80, 4.60, 1.60)
        );
        assert_eq!(
            (VehicleClass::BUS.width, VehicleClass::BUS.length, VehicleClass::BUS.height),
            (2.40, 9.00, 3.20)
        );
        assert_eq!(
            (VehicleClass::TRUCK.width, VehicleClass::TRUCK.length, VehicleClass::TRUCK.height),
            (2.50, 12.00, 4.30)
        );
    }

    #[test]
    fn snapshots_within_an_epoch_advance() {
        let c = cfg();
        let a = generate_scene(&c, 0).unwrap();
        let b = generate_scene(&c, 1).unwrap();
        let moved = a
            .vehicles
            .iter()
            .filter_map(|va| b.vehicles.iter().find(|vb| vb.id == va.id).map(|vb| (va, vb)))
            .collect::<Vec<_>>();
        assert!(!moved.is_empty());
        for (va, vb) in moved {
            assert!(((vb.x - va.x).abs() - 1.0).abs() < 1e-9);
        }
    }

    #[test]
    fn csv_rows() {
        let mut buf = Vec::new();
        write_scenes_csv(&mut buf, &[scene_with(&[12.5])]).unwrap();
        assert_eq!(String::from_utf8(buf).unwrap(), "snapshot,lane,class,x\n0,0,car,12.5\n");
    }
}
