//! Ground-truth scenarios and synthetic measurements.
//!
//! Targets follow piecewise CV/CT motion without process noise. Each scan
//! detects every alive target with probability `p_d` under Gaussian
//! position noise and adds Poisson clutter, uniform over a disk centered at
//! the origin.

use rand::seq::SliceRandom;
use rand::{Rng, RngCore};
use rand_distr::{Distribution, Normal, Poisson};
use serde::{Deserialize, Serialize};

use crate::association::ScanFrame;
use crate::error::{Error, Result};
use crate::motion::{ct_step, cv_step, KinematicState, ModelKind};

/// Lower bound on the clutter mean the tracker is told about. A clutter-free
/// scenario still needs a positive intensity in the likelihood ratios.
pub const MIN_MODEL_CLUTTER: f64 = 1e-6;

/// Motion used for every transition into steps `..= until`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Segment {
    pub until: usize,
    #[serde(flatten)]
    pub kind: ModelKind,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TargetSpec {
    pub id: u64,
    /// First step the target is alive (steps start at 1).
    pub birth: usize,
    /// Last step the target is alive.
    pub death: usize,
    pub initial: KinematicState,
    /// Ordered by `until`; transitions past the last segment are CV.
    #[serde(default)]
    pub segments: Vec<Segment>,
    /// Moves as part of a group; used to split metrics into group and
    /// single-target subsets.
    #[serde(default)]
    pub grouped: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScenarioSpec {
    pub duration: usize,
    pub dt: f64,
    pub targets: Vec<TargetSpec>,
    pub region_radius: f64,
    pub meas_std: f64,
    pub detection_prob: f64,
    pub clutter_mean: f64,
    /// μ_b assumed by the tracker.
    pub birth_mean: f64,
    pub seed: u64,
}

/// Per-step `(target id, state)` lists; entry `k - 1` holds step `k`.
#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct GroundTruth {
    pub steps: Vec<Vec<(u64, KinematicState)>>,
}

impl GroundTruth {
    pub fn at(&self, k: usize) -> &[(u64, KinematicState)] {
        &self.steps[k - 1]
    }

    pub fn state(&self, id: u64, k: usize) -> Option<KinematicState> {
        self.steps
            .get(k.checked_sub(1)?)?
            .iter()
            .find(|(i, _)| *i == id)
            .map(|(_, s)| *s)
    }
}

impl ScenarioSpec {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::Scenario(m));
        if self.duration == 0 {
            return bad("duration must be >= 1".into());
        }
        if !(self.dt > 0.0) {
            return bad("dt must be > 0".into());
        }
        if !(self.region_radius > 0.0) {
            return bad("region radius must be > 0".into());
        }
        if !(self.meas_std > 0.0) {
            return bad("measurement std must be > 0".into());
        }
        if !(self.detection_prob > 0.0 && self.detection_prob <= 1.0) {
            return bad("detection probability must lie in (0, 1]".into());
        }
        if !(self.clutter_mean >= 0.0 && self.clutter_mean.is_finite()) {
            return bad("clutter mean must be >= 0".into());
        }
        if !(self.birth_mean > 0.0) {
            return bad("birth mean must be > 0".into());
        }
        let mut ids = std::collections::HashSet::new();
        for t in &self.targets {
            if !ids.insert(t.id) {
                return bad(format!("duplicate target id {}", t.id));
            }
            if !(t.birth >= 1 && t.birth <= t.death && t.death <= self.duration) {
                return bad(format!(
                    "target {}: lifespan [{}, {}] outside [1, {}]",
                    t.id, t.birth, t.death, self.duration
                ));
            }
            if !t.initial.is_finite() {
                return bad(format!("target {}: non-finite initial state", t.id));
            }
            if t.segments.windows(2).any(|w| w[0].until >= w[1].until) {
                return bad(format!("target {}: segments not ordered", t.id));
            }
            for s in &t.segments {
                if let ModelKind::ConstantTurn { omega } = s.kind {
                    if omega == 0.0 || !omega.is_finite() {
                        return bad(format!("target {}: zero turn rate", t.id));
                    }
                }
            }
        }
        Ok(())
    }

    /// `f_c`: uniform density over the surveillance disk.
    pub fn clutter_density(&self) -> f64 {
        1.0 / (std::f64::consts::PI * self.region_radius * self.region_radius)
    }

    /// Ids of targets that move in a group.
    pub fn grouped_ids(&self) -> Vec<u64> {
        self.targets.iter().filter(|t| t.grouped).map(|t| t.id).collect()
    }
}

/// Noiseless trajectories of every target over its lifespan.
pub fn generate_truth(spec: &ScenarioSpec) -> Result<GroundTruth> {
    spec.validate()?;
    let mut steps = vec![Vec::new(); spec.duration];
    for t in &spec.targets {
        let mut s = t.initial;
        steps[t.birth - 1].push((t.id, s));
        for k in t.birth + 1..=t.death {
            let kind = t
                .segments
                .iter()
                .find(|seg| k <= seg.until)
                .map_or(ModelKind::ConstantVelocity, |seg| seg.kind);
            s = match kind {
                ModelKind::ConstantVelocity => cv_step(s, spec.dt, None)?,
                ModelKind::ConstantTurn { omega } => ct_step(s, omega, spec.dt)?,
            };
            steps[k - 1].push((t.id, s));
        }
    }
    Ok(GroundTruth { steps })
}

const TURN: f64 = 2.25 * std::f64::consts::PI / 180.0;

/// Default values shared by the two built-in scenarios.
fn base(duration: usize, targets: Vec<TargetSpec>) -> ScenarioSpec {
    ScenarioSpec {
        duration,
        dt: 2.0,
        targets,
        region_radius: 5000.0,
        meas_std: 10.0,
        detection_prob: 0.995,
        clutter_mean: 10.0,
        birth_mean: 1e-5 * 10.0,
        seed: 0,
    }
}

/// Three targets converge into a formation, travel together, then diverge;
/// a fourth target moves on its own.
///
/// The outer targets turn toward the middle target for ten steps after a
/// short straight leg, which closes the 255 m gap to a 50 m spacing by step
/// 16, and they turn away again over steps 51 to 60.
pub fn build_scenario1() -> ScenarioSpec {
    let r2 = 2f64.sqrt();
    let ct = |until, omega| Segment { until, kind: ModelKind::ConstantTurn { omega } };
    let cv = |until| Segment { until, kind: ModelKind::ConstantVelocity };
    let outer = |omega: f64| vec![cv(6), ct(16, omega), cv(50), ct(60, omega)];
    let targets = vec![
        TargetSpec {
            id: 1,
            birth: 1,
            death: 80,
            initial: KinematicState::new(800.0, 10.0, 3255.0, -10.0),
            segments: outer(TURN),
            grouped: true,
        },
        TargetSpec {
            id: 2,
            birth: 1,
            death: 80,
            initial: KinematicState::new(740.0, 10.0 * r2, 3000.0, 0.0),
            segments: vec![],
            grouped: true,
        },
        TargetSpec {
            id: 3,
            birth: 1,
            death: 80,
            initial: KinematicState::new(800.0, 10.0, 2745.0, 10.0),
            segments: outer(-TURN),
            grouped: true,
        },
        TargetSpec {
            id: 4,
            birth: 21,
            death: 100,
            initial: KinematicState::new(1010.0, 8.0, 2500.0, -8.0),
            segments: vec![],
            grouped: false,
        },
    ];
    base(100, targets)
}

/// A rigid formation of `n` targets spaced `spacing` m apart along y that
/// performs two coordinated turns.
pub fn build_scenario2(n: usize, spacing: f64) -> Result<ScenarioSpec> {
    if n == 0 {
        return Err(Error::Scenario("scenario 2 needs at least one target".into()));
    }
    let segments = vec![
        Segment { until: 26, kind: ModelKind::ConstantVelocity },
        Segment { until: 46, kind: ModelKind::ConstantTurn { omega: -TURN } },
        Segment { until: 76, kind: ModelKind::ConstantVelocity },
        Segment { until: 96, kind: ModelKind::ConstantTurn { omega: TURN } },
    ];
    let targets = (0..n)
        .map(|i| TargetSpec {
            id: i as u64 + 1,
            birth: 1,
            death: 100,
            initial: KinematicState::new(800.0, 10.0, 3000.0 - spacing * i as f64, 0.0),
            segments: segments.clone(),
            grouped: n > 1,
        })
        .collect();
    Ok(base(100, targets))
}

/// Uniform point in a disk of the given radius.
pub fn sample_disk<R: Rng + ?Sized>(radius: f64, rng: &mut R) -> [f64; 2] {
    let r = radius * rng.random::<f64>().sqrt();
    let th = rng.random::<f64>() * std::f64::consts::TAU;
    [r * th.cos(), r * th.sin()]
}

/// Measurement frames for every step of `truth`, with detections and
/// clutter shuffled together.
pub fn synthesize<R: Rng + ?Sized>(
    truth: &GroundTruth,
    spec: &ScenarioSpec,
    rng: &mut R,
) -> Result<Vec<ScanFrame>> {
    spec.validate()?;
    let noise = Normal::new(0.0, spec.meas_std).map_err(|e| Error::Scenario(e.to_string()))?;
    let clutter = if spec.clutter_mean > 0.0 {
        Some(Poisson::new(spec.clutter_mean).map_err(|e| Error::Scenario(e.to_string()))?)
    } else {
        None
    };
    let model_clutter = spec.clutter_mean.max(MIN_MODEL_CLUTTER);
    let mut frames = Vec::with_capacity(truth.steps.len());
    for (k, alive) in truth.steps.iter().enumerate() {
        let mut z = Vec::new();
        for (_, s) in alive {
            if rng.random::<f64>() < spec.detection_prob {
                z.push([s.px + noise.sample(rng), s.py + noise.sample(rng)]);
            }
        }
        if let Some(c) = &clutter {
            let count = c.sample(rng) as usize;
            for _ in 0..count {
                z.push(sample_disk(spec.region_radius, rng));
            }
        }
        z.shuffle(rng);
        frames.push(ScanFrame {
            k: k + 1,
            measurements: z,
            clutter_mean: model_clutter,
            clutter_density: spec.clutter_density(),
            detection_prob: spec.detection_prob,
            birth_mean: spec.birth_mean,
            meas_std: spec.meas_std,
        });
    }
    Ok(frames)
}

/// Source of particles for new potential targets.
pub trait BirthModel {
    /// Draws `count` equally weighted particles for a new PT created by
    /// measurement `z`, given the measurements of the previous scan.
    fn sample(
        &self,
        previous: &[[f64; 2]],
        z: [f64; 2],
        count: usize,
        rng: &mut dyn RngCore,
    ) -> Vec<KinematicState>;
}

/// Birth particles seeded by the previous scan.
///
/// Positions are drawn around the previous measurement closest to `z`
/// with covariance `inflation · σ_w² I` and moved forward by one step of a
/// velocity drawn uniformly from `[-v_max, v_max]²`. Positions leaving the
/// surveillance disk are projected back onto its boundary.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BirthSampler {
    pub region_radius: f64,
    pub meas_std: f64,
    pub dt: f64,
    pub v_max: f64,
    pub inflation: f64,
}

impl BirthSampler {
    pub fn for_scenario(spec: &ScenarioSpec) -> Self {
        Self {
            region_radius: spec.region_radius,
            meas_std: spec.meas_std,
            dt: spec.dt,
            v_max: 30.0,
            inflation: 4.0,
        }
    }

    fn clamp(&self, p: [f64; 2]) -> [f64; 2] {
        let r = p[0].hypot(p[1]);
        if r > self.region_radius {
            let s = self.region_radius / r;
            [p[0] * s, p[1] * s]
        } else {
            p
        }
    }
}

impl BirthModel for BirthSampler {
    fn sample(
        &self,
        previous: &[[f64; 2]],
        z: [f64; 2],
        count: usize,
        rng: &mut dyn RngCore,
    ) -> Vec<KinematicState> {
        let seed = previous.iter().copied().min_by(|a, b| {
            let da = (a[0] - z[0]).powi(2) + (a[1] - z[1]).powi(2);
            let db = (b[0] - z[0]).powi(2) + (b[1] - z[1]).powi(2);
            da.total_cmp(&db)
        });
        let sd = self.meas_std * self.inflation.sqrt();
        (0..count)
            .map(|_| {
                let vx = rng.random_range(-self.v_max..=self.v_max);
                let vy = rng.random_range(-self.v_max..=self.v_max);
                let p = match seed {
                    Some(s) => {
                        let nx: f64 = rng.sample(rand_distr::StandardNormal);
                        let ny: f64 = rng.sample(rand_distr::StandardNormal);
                        [s[0] + sd * nx + vx * self.dt, s[1] + sd * ny + vy * self.dt]
                    }
                    None => sample_disk(self.region_radius, rng),
                };
                let p = self.clamp(p);
                KinematicState::new(p[0], vx, p[1], vy)
            })
            .collect()
    }
}
