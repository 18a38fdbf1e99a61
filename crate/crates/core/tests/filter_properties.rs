//! Randomized invariants of the full filter recursion.

use gtbp::association::ScanFrame;
use gtbp::filter::{Filter, FilterConfig};
use gtbp::sim::{build_scenario1, BirthSampler};
use gtbp::KinematicState;
use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

const L: usize = 40;

#[derive(Debug, Clone)]
struct Scene {
    tracks: Vec<([f64; 2], f64, f64)>,
    scans: Vec<Vec<[f64; 2]>>,
    m_best: usize,
    max_tracks: usize,
    prune: f64,
    seed: u64,
}

fn point() -> impl Strategy<Value = [f64; 2]> {
    (-400.0..400.0f64, -400.0..400.0f64).prop_map(|(x, y)| [x, y])
}

fn scene() -> impl Strategy<Value = Scene> {
    (
        prop::collection::vec((point(), 0.0..=1.0f64, 1.0..40.0f64), 0..6),
        prop::collection::vec(prop::collection::vec(point(), 0..7), 1..4),
        1usize..5,
        1usize..9,
        prop_oneof![Just(0.0), 1e-6..1e-2f64],
        any::<u64>(),
    )
        .prop_map(|(tracks, scans, m_best, max_tracks, prune, seed)| Scene {
            tracks,
            scans,
            m_best,
            max_tracks,
            prune,
            seed,
        })
}

fn frame(k: usize, z: Vec<[f64; 2]>) -> ScanFrame {
    ScanFrame {
        k,
        measurements: z,
        clutter_mean: 10.0,
        clutter_density: 1.0 / (std::f64::consts::PI * 25e6),
        detection_prob: 0.995,
        birth_mean: 1e-4,
        meas_std: 10.0,
    }
}

fn build(scene: &Scene) -> (Filter, ChaCha8Rng) {
    let cfg = FilterConfig {
        num_particles: L,
        m_best: scene.m_best,
        max_tracks: scene.max_tracks.max(scene.tracks.len()),
        prune_threshold: scene.prune,
        ..FilterConfig::default()
    };
    let mut f = Filter::new(cfg).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(scene.seed);
    for &(c, r, spread) in &scene.tracks {
        let states = (0..L)
            .map(|_| {
                let n: [f64; 4] = std::array::from_fn(|_| rng.sample(StandardNormal));
                KinematicState::new(
                    c[0] + spread * n[0],
                    10.0 + 3.0 * n[1],
                    c[1] + spread * n[2],
                    3.0 * n[3],
                )
            })
            .collect();
        f.insert_track(states, r).unwrap();
    }
    f.config.max_tracks = scene.max_tracks;
    (f, rng)
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(48))]

    #[test]
    fn step_invariants(scene in scene()) {
        let (mut f, mut rng) = build(&scene);
        let birth = BirthSampler::for_scenario(&build_scenario1());
        for (k, z) in scene.scans.iter().enumerate() {
            let n_before = f.tracks.len();
            let confirmed: Vec<bool> = f.tracks.iter().map(|t| t.confirmed).collect();
            let r = f.step(&frame(k + 1, z.clone()), &birth, &mut rng).unwrap();

            prop_assert_eq!(r.num_legacy, n_before);
            prop_assert_eq!(r.num_before_prune, r.num_legacy + r.num_measurements);
            prop_assert!(f.tracks.len() <= scene.max_tracks);
            prop_assert_eq!(r.num_after_prune, f.tracks.len());

            for e in &r.estimates {
                prop_assert!((0.0..=1.0).contains(&e.existence));
                prop_assert!(e.existence >= scene.prune);
            }
            for t in &f.tracks {
                prop_assert_eq!(t.states.len(), L);
                prop_assert!(t.weights.iter().all(|&w| w >= 0.0));
                let s: f64 = t.weights.iter().sum();
                prop_assert!((s - t.existence).abs() <= 1e-9, "sum {} vs r {}", s, t.existence);
            }

            let h = &r.hypotheses;
            if r.num_legacy > 0 {
                prop_assert!(!h.is_empty() && h.len() <= scene.m_best);
                let sp: f64 = h.prior_weights.iter().sum();
                let sq: f64 = h.posterior_weights.iter().sum();
                prop_assert!((sp - 1.0).abs() <= 1e-12);
                prop_assert!((sq - 1.0).abs() <= 1e-12);
                for g in &h.partitions {
                    prop_assert!(g.is_canonical());
                    prop_assert_eq!(g.len(), r.num_legacy);
                    for (&l, &c) in g.labels().iter().zip(&confirmed) {
                        prop_assert!(l == 0 || c);
                    }
                }
            }
            let mut ids: Vec<u64> = f.tracks.iter().map(|t| t.id).collect();
            ids.sort_unstable();
            ids.dedup();
            prop_assert_eq!(ids.len(), f.tracks.len());
        }
    }

    #[test]
    fn same_seed_same_output(scene in scene()) {
        let birth = BirthSampler::for_scenario(&build_scenario1());
        let run = || {
            let (mut f, mut rng) = build(&scene);
            scene
                .scans
                .iter()
                .enumerate()
                .map(|(k, z)| f.step(&frame(k + 1, z.clone()), &birth, &mut rng).unwrap().estimates)
                .collect::<Vec<_>>()
        };
        prop_assert_eq!(run(), run());
    }
}
