use std::sync::Arc;

use dsrc_traffic::raychan::{
    cfr_from_taps, taps_from_paths, trace_paths, Bounce, ChannelTaps, Path, PathSet, RadioConfig, SPEED_OF_LIGHT,
};
use dsrc_traffic::scene::{generate_scene, SceneConfig};
use num_complex::Complex64;
use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn random_taps(rng: &mut ChaCha8Rng, n: usize) -> ChannelTaps {
    ChannelTaps::new(
        (0..n)
            .map(|_| Complex64::new(rng.gen_range(-1.0..1.0), rng.gen_range(-1.0..1.0)))
            .collect(),
    )
}

#[test]
fn impulse_has_a_flat_response() {
    let mut h = vec![Complex64::new(0.0, 0.0); 32];
    h[0] = Complex64::new(1.0, 0.0);
    let cfr = cfr_from_taps(&ChannelTaps::new(h), 64).unwrap();
    assert!(cfr.values.iter().all(|&v| v == Complex64::new(1.0, 0.0)));
}

#[test]
fn dft_preserves_energy() {
    let mut rng = ChaCha8Rng::seed_from_u64(21);
    for _ in 0..1000 {
        let taps = random_taps(&mut rng, 32);
        let cfr = cfr_from_taps(&taps, 64).unwrap();
        let freq: f64 = cfr.values.iter().map(|v| v.norm_sqr()).sum();
        let time = 64.0 * taps.energy();
        assert!((freq - time).abs() <= 1e-9 * time.max(1.0), "{freq} vs {time}");
    }
}

#[test]
fn dft_matches_direct_definition() {
    let mut rng = ChaCha8Rng::seed_from_u64(4);
    let taps = random_taps(&mut rng, 16);
    let cfr = cfr_from_taps(&taps, 64).unwrap();
    for (k, v) in cfr.values.iter().enumerate() {
        let mut expected = Complex64::new(0.0, 0.0);
        for (n, h) in taps.h.iter().enumerate() {
            let angle = -2.0 * std::f64::consts::PI * (k * n) as f64 / 64.0;
            expected += h * Complex64::from_polar(1.0, angle);
        }
        assert!((v - expected).norm() < 1e-12);
    }
}

fn scene_config(seed: u64) -> Arc<SceneConfig> {
    Arc::new(SceneConfig {
        density: 2.5,
        density_max: None,
        rng_seed: seed,
        ..SceneConfig::default()
    })
}

#[test]
fn no_path_arrives_before_line_of_sight() {
    let radio = RadioConfig::default();
    for seed in 0..50 {
        let cfg = scene_config(seed);
        let scene = generate_scene(&cfg, seed * 7).unwrap();
        for rx in 0..cfg.rx_positions.len() {
            let t = cfg.tx_position;
            let r = cfg.rx_positions[rx];
            let los = ((t[0] - r[0]).powi(2) + (t[1] - r[1]).powi(2) + (t[2] - r[2]).powi(2)).sqrt() / SPEED_OF_LIGHT;
            let paths = trace_paths(&scene, &radio, rx).unwrap();
            assert!(paths.len() <= radio.max_rays);
            for p in &paths.paths {
                assert!(p.delay >= los * (1.0 - 1e-12));
            }
            for w in paths.paths.windows(2) {
                assert!(w[0].gain.norm() >= w[1].gain.norm());
            }
        }
    }
}

fn key(p: &Path) -> String {
    format!("{:?}|{:e}|{:e}|{:e}", p.bounce, p.gain.re, p.gain.im, p.delay)
}

#[test]
fn moving_one_vehicle_only_changes_its_own_paths() {
    let radio = RadioConfig {
        max_rays: usize::MAX,
        ..RadioConfig::default()
    };
    for seed in 0..30 {
        let cfg = scene_config(seed);
        let before = generate_scene(&cfg, 0).unwrap();
        if before.vehicles.is_empty() {
            continue;
        }
        let moved_index = seed as usize % before.vehicles.len();
        let moved_id = before.vehicles[moved_index].id;
        let mut after = before.clone();
        after.vehicles[moved_index].x += 0.7;

        for rx in 0..cfg.rx_positions.len() {
            let a = trace_paths(&before, &radio, rx).unwrap();
            let b = trace_paths(&after, &radio, rx).unwrap();
            let unrelated = |set: &PathSet| {
                let mut keys: Vec<String> = set
                    .paths
                    .iter()
                    .filter(|p| p.bounce.vehicle_id() != Some(moved_id))
                    .filter(|p| !matches!(p.bounce, Bounce::Direct { .. }))
                    .map(key)
                    .collect();
                keys.sort();
                keys
            };
            assert_eq!(unrelated(&a), unrelated(&b));
            let direct = |set: &PathSet| {
                *set.paths
                    .iter()
                    .find(|p| matches!(p.bounce, Bounce::Direct { .. }))
                    .unwrap()
            };
            let (da, db) = (direct(&a), direct(&b));
            if da.bounce == db.bounce {
                assert_eq!(key(&da), key(&db));
            }
        }
    }
}

fn arb_path() -> impl Strategy<Value = Path> {
    (-1.0f64..1.0, -1.0f64..1.0, 0.0f64..3.1e-6).prop_map(|(re, im, delay)| Path {
        gain: Complex64::new(re, im),
        delay,
        bounce: Bounce::Ground,
    })
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(128))]

    #[test]
    fn taps_are_linear_over_path_concatenation(
        a in prop::collection::vec(arb_path(), 0..8),
        b in prop::collection::vec(arb_path(), 0..8),
    ) {
        let radio = RadioConfig::default();
        let ta = taps_from_paths(&PathSet { paths: a.clone() }, &radio).unwrap();
        let tb = taps_from_paths(&PathSet { paths: b.clone() }, &radio).unwrap();
        let joined = taps_from_paths(&PathSet { paths: [a, b].concat() }, &radio).unwrap();
        for ((x, y), z) in ta.h.iter().zip(&tb.h).zip(&joined.h) {
            prop_assert!((x + y - z).norm() <= 1e-12 * (1.0 + z.norm()));
        }
    }

    #[test]
    fn dft_is_linear(seed in any::<u64>(), alpha in -3.0f64..3.0) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let x = random_taps(&mut rng, 32);
        let y = random_taps(&mut rng, 32);
        let combo = ChannelTaps::new(x.h.iter().zip(&y.h).map(|(a, b)| a * alpha + b).collect());
        let (fx, fy, fc) = (
            cfr_from_taps(&x, 64).unwrap(),
            cfr_from_taps(&y, 64).unwrap(),
            cfr_from_taps(&combo, 64).unwrap(),
        );
        for ((a, b), c) in fx.values.iter().zip(&fy.values).zip(&fc.values) {
            prop_assert!((a * alpha + b - c).norm() < 1e-9);
        }
    }
}
