//! End-to-end behavior on simulated scenes.

use gtbp::association::ScanFrame;
use gtbp::filter::{CandidatePolicy, Filter, FilterConfig, StepReport};
use gtbp::grouping::GroupPartition;
use gtbp::sim::{build_scenario1, generate_truth, synthesize, BirthSampler, ScenarioSpec};
use gtbp::KinematicState;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

fn run(spec: &ScenarioSpec, cfg: FilterConfig, meas_seed: u64, filter_seed: u64, steps: usize) -> Vec<StepReport> {
    let truth = generate_truth(spec).unwrap();
    let frames = synthesize(&truth, spec, &mut ChaCha8Rng::seed_from_u64(meas_seed)).unwrap();
    let birth = BirthSampler::for_scenario(spec);
    let mut f = Filter::new(cfg).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(filter_seed);
    frames[..steps]
        .iter()
        .map(|fr| f.step(fr, &birth, &mut rng).unwrap())
        .collect()
}

fn bits(r: &StepReport) -> Vec<(u64, u64, Option<[u64; 4]>, bool)> {
    r.estimates
        .iter()
        .map(|e| {
            let s = e.state.map(|s| [s.px.to_bits(), s.vx.to_bits(), s.py.to_bits(), s.vy.to_bits()]);
            (e.id, e.existence.to_bits(), s, e.confirmed)
        })
        .collect()
}

#[test]
fn singletons_only_matches_grouping_disabled() {
    let spec = build_scenario1();
    let grouped = FilterConfig {
        num_particles: 200,
        m_best: 1,
        candidates: CandidatePolicy::SingletonsOnly,
        ..FilterConfig::default()
    };
    let plain = FilterConfig { num_particles: 200, ..FilterConfig::bp_baseline() };
    for seed in 0..3 {
        let a = run(&spec, grouped.clone(), 100 + seed, seed, spec.duration);
        let b = run(&spec, plain.clone(), 100 + seed, seed, spec.duration);
        assert!(a.iter().any(|r| r.confirmed().count() >= 3));
        for (ra, rb) in a.iter().zip(&b) {
            assert_eq!(bits(ra), bits(rb), "seed {seed}, step {}", ra.step);
        }
    }
}

#[test]
fn targets_confirmed_within_five_steps() {
    let spec = build_scenario1();
    let truth = generate_truth(&spec).unwrap();
    let seeds = 25;
    let mut ok = 0;
    for seed in 0..seeds {
        let cfg = FilterConfig { num_particles: 1000, ..FilterConfig::default() };
        let reports = run(&spec, cfg, 1000 + seed, seed, 30);
        let all = spec.targets.iter().all(|t| {
            (t.birth..t.birth + 5).any(|k| {
                let Some(x) = truth.state(t.id, k) else { return false };
                reports[k - 1].confirmed().any(|(_, s)| {
                    let d = (s.px - x.px).hypot(s.py - x.py);
                    d < 50.0
                })
            })
        });
        ok += all as u32;
    }
    assert!(ok as f64 >= 0.9 * seeds as f64, "{ok}/{seeds} runs confirmed every target in time");
}

/// Two tracks flying in formation whose clouds carry independent velocity
/// errors. The grouped prediction averages those errors over the members,
/// so the scan that follows favors the grouped partition.
#[test]
fn posterior_favors_grouped_formation() {
    let l = 2000;
    let cfg = FilterConfig {
        num_particles: l,
        m_best: 2,
        sigma_v: 0.0,
        ..FilterConfig::default()
    };
    let truth = [KinematicState::new(0.0, 10.0, 0.0, 0.0), KinematicState::new(0.0, 10.0, 30.0, 0.0)];
    let mut wins = 0;
    let trials = 10;
    for seed in 0..trials {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut f = Filter::new(cfg.clone()).unwrap();
        for x in &truth {
            let states = (0..l)
                .map(|_| {
                    let n: [f64; 4] = std::array::from_fn(|_| rng.sample(StandardNormal));
                    KinematicState::new(x.px + 10.0 * n[0], x.vx + 20.0 * n[1], x.py + 10.0 * n[2], x.vy + 20.0 * n[3])
                })
                .collect();
            f.insert_track(states, 0.99).unwrap();
        }
        let z = truth
            .iter()
            .map(|x| [x.px + 2.0 * x.vx, x.py + 2.0 * x.vy])
            .collect();
        let frame = ScanFrame {
            k: 1,
            measurements: z,
            clutter_mean: 10.0,
            clutter_density: 1.0 / (std::f64::consts::PI * 25e6),
            detection_prob: 0.995,
            birth_mean: 1e-4,
            meas_std: 10.0,
        };
        let r = f.step(&frame, &BirthSampler::for_scenario(&build_scenario1()), &mut rng).unwrap();
        let h = &r.hypotheses;
        let g = h
            .partitions
            .iter()
            .position(|p| *p == GroupPartition::canonicalize(&[1, 1]))
            .expect("grouped partition not preserved");
        assert!(h.posterior_weights[g] > h.prior_weights[g], "seed {seed}: {h:?}");
        wins += (h.posterior_weights[g] > 0.5) as u32;
    }
    assert!(wins >= 8, "grouped partition won {wins}/{trials}");
}
