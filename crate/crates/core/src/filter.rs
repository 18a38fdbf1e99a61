//! The particle recursion over preserved group partitions.
//!
//! One [`Filter::step`] runs, in order:
//!
//! 1. candidate partitions and their prior weights `α̃(g)`, keeping the `M`
//!    best;
//! 2. prediction of every track under every kept partition, using the group
//!    model for grouped tracks and CV otherwise;
//! 3. the association inputs `β` and `ξ(0)`, with birth particles drawn for
//!    every measurement and message censoring;
//! 4. loopy BP association;
//! 5. the legacy update, existence, estimates and the partition posterior
//!    `p̃(g)`;
//! 6. the new-PT update;
//! 7. pruning and the `N_max` cap;
//! 8. resampling of the `L × M` particles of each track down to `L` with
//!    equal weights.
//!
//! With grouping disabled the recursion keeps a single partition with every
//! track ungrouped, which is the plain BP multitarget tracker.

use std::time::Instant;

use rand::{Rng, RngCore};
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::association::{
    bp_associate, censor_new, compute_beta, xi_zero, AssociationProblem, PredictedCloud,
    ScanFrame,
};
use crate::error::{config_err, Error, Result};
use crate::grouping::{
    generate_candidates, normalize_log_weights, predict_partition_weights, GroupPartition,
    GroupingParams, ParticleView, PartitionHypothesisSet, TrackSummary,
};
use crate::motion::{cv_propagate, mean_state, noise_increment, KinematicState};
use crate::sim::BirthModel;

/// Which partitions are offered to the M-best selection.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum CandidatePolicy {
    /// Gated components, splits, merges and previous hypotheses.
    #[default]
    Full,
    /// Only the all-singletons partition.
    SingletonsOnly,
}

/// How the partition prior weights are evaluated.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum AlphaMode {
    /// From track point estimates.
    #[default]
    Estimate,
    /// Membership evaluated for every particle.
    Particle,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct FilterConfig {
    /// L
    pub num_particles: usize,
    /// M
    pub m_best: usize,
    /// N_max
    pub max_tracks: usize,
    /// P_e
    pub confirm_threshold: f64,
    /// P_pr
    pub prune_threshold: f64,
    /// P_0
    pub p0: f64,
    /// Gate on the pairwise Mahalanobis distance for candidate partitions.
    pub gate: f64,
    pub max_candidates: usize,
    /// p_s
    pub survival_prob: f64,
    pub bp_max_iter: usize,
    pub bp_tol: f64,
    pub censor_threshold: f64,
    /// σ_v, in m/s²
    pub sigma_v: f64,
    pub dt: f64,
    /// When false, every track is propagated on its own.
    pub grouping: bool,
    pub candidates: CandidatePolicy,
    pub alpha_mode: AlphaMode,
    /// Skip measurement likelihoods farther than this many σ_w from a
    /// predicted cloud; `None` evaluates every pair.
    pub likelihood_gate: Option<f64>,
}

impl Default for FilterConfig {
    fn default() -> Self {
        Self {
            num_particles: 3000,
            m_best: 2,
            max_tracks: 8,
            confirm_threshold: 0.8,
            prune_threshold: 1e-5 * 10.0,
            p0: 0.001,
            gate: 25.0,
            max_candidates: 64,
            survival_prob: 0.9999,
            bp_max_iter: 100,
            bp_tol: 1e-5,
            censor_threshold: 0.9,
            sigma_v: 10.0,
            dt: 2.0,
            grouping: true,
            candidates: CandidatePolicy::Full,
            alpha_mode: AlphaMode::Estimate,
            likelihood_gate: Some(10.0),
        }
    }
}

impl FilterConfig {
    /// The plain BP tracker: grouping disabled.
    pub fn bp_baseline() -> Self {
        Self {
            grouping: false,
            m_best: 1,
            ..Self::default()
        }
    }

    pub fn validate(&self) -> Result<()> {
        let prob = |v: f64, f: &'static str| {
            if (0.0..=1.0).contains(&v) {
                Ok(())
            } else {
                Err(config_err(f, "must lie in [0, 1]"))
            }
        };
        if self.num_particles < 1 {
            return Err(config_err("num_particles", "must be >= 1"));
        }
        if self.max_tracks < 1 {
            return Err(config_err("max_tracks", "must be >= 1"));
        }
        prob(self.confirm_threshold, "confirm_threshold")?;
        prob(self.prune_threshold, "prune_threshold")?;
        prob(self.survival_prob, "survival_prob")?;
        if !(self.censor_threshold > 0.0 && self.censor_threshold <= 1.0) {
            return Err(config_err("censor_threshold", "must lie in (0, 1]"));
        }
        if !(self.bp_tol >= 0.0) {
            return Err(config_err("bp_tol", "must be >= 0"));
        }
        if !(self.dt > 0.0) {
            return Err(config_err("dt", "must be > 0"));
        }
        if !(self.sigma_v >= 0.0 && self.sigma_v.is_finite()) {
            return Err(config_err("sigma_v", "must be >= 0"));
        }
        if let Some(g) = self.likelihood_gate {
            if !(g > 0.0) {
                return Err(config_err("likelihood_gate", "must be > 0"));
            }
        }
        self.grouping_params().validate()
    }

    pub fn grouping_params(&self) -> GroupingParams {
        GroupingParams {
            p0: self.p0,
            gate: self.gate,
            max_candidates: self.max_candidates,
            m_best: self.m_best,
        }
    }
}

/// A potential target: `L` particles whose weights sum to its existence
/// probability.
#[derive(Debug, Clone, PartialEq)]
pub struct Track {
    pub id: u64,
    pub states: Vec<KinematicState>,
    pub weights: Vec<f64>,
    pub existence: f64,
    pub confirmed: bool,
    pub birth_step: usize,
}

impl Track {
    /// Weighted mean of the particles, `None` when the weights vanish.
    pub fn estimate(&self) -> Option<KinematicState> {
        weighted_mean(&self.states, &self.weights)
    }
}

fn weighted_mean(states: &[KinematicState], weights: &[f64]) -> Option<KinematicState> {
    let total: f64 = weights.iter().sum();
    if !(total > 0.0) {
        return None;
    }
    let mut acc = KinematicState::ZERO;
    for (s, &w) in states.iter().zip(weights) {
        acc += *s * w;
    }
    Some(acc * (1.0 / total))
}

/// Per-track output of one step.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrackEstimate {
    pub id: u64,
    pub existence: f64,
    /// Omitted when the existence is negligible.
    pub state: Option<KinematicState>,
    pub confirmed: bool,
}

/// Wall-clock time per phase, in milliseconds.
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct PhaseTimings {
    pub predict_ms: f64,
    pub assoc_ms: f64,
    pub update_ms: f64,
    pub resample_ms: f64,
}

impl PhaseTimings {
    pub fn total_ms(&self) -> f64 {
        self.predict_ms + self.assoc_ms + self.update_ms + self.resample_ms
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct StepReport {
    pub step: usize,
    /// Surviving tracks after pruning, in storage order.
    pub estimates: Vec<TrackEstimate>,
    /// Preserved partitions over the legacy tracks of this step.
    pub hypotheses: PartitionHypothesisSet,
    pub bp_iterations: usize,
    pub bp_converged: bool,
    pub timings: PhaseTimings,
    /// n_k
    pub num_legacy: usize,
    /// m_k
    pub num_measurements: usize,
    /// n_k + m_k, before pruning.
    pub num_before_prune: usize,
    pub num_after_prune: usize,
    pub num_censored: usize,
    /// The partition posterior had no mass and fell back to the prior.
    pub degenerate_posterior: bool,
    /// Legacy tracks whose update had zero total mass.
    pub zero_mass_tracks: usize,
}

impl StepReport {
    pub fn confirmed(&self) -> impl Iterator<Item = (u64, KinematicState)> + '_ {
        self.estimates
            .iter()
            .filter(|e| e.confirmed)
            .filter_map(|e| e.state.map(|s| (e.id, s)))
    }
}

/// Systematic resampling: `count` indices drawn from `weights` with a
/// single uniform offset `u ∈ [0, 1)`.
pub fn systematic_resample(weights: &[f64], count: usize, u: f64) -> Vec<usize> {
    let total: f64 = weights.iter().sum();
    if weights.is_empty() || !(total > 0.0) {
        return Vec::new();
    }
    let step = total / count as f64;
    let mut out = Vec::with_capacity(count);
    let mut cum = weights[0];
    let mut j = 0;
    for k in 0..count {
        let target = (u + k as f64) * step;
        while cum <= target && j + 1 < weights.len() {
            j += 1;
            cum += weights[j];
        }
        // skip zero-weight entries reached through rounding
        while weights[j] == 0.0 && j + 1 < weights.len() {
            j += 1;
            cum += weights[j];
        }
        out.push(j);
    }
    out
}

/// Filter state: tracks, the preserved partitions and the previous scan.
#[derive(Debug, Clone, PartialEq)]
pub struct Filter {
    pub config: FilterConfig,
    pub tracks: Vec<Track>,
    pub hypotheses: PartitionHypothesisSet,
    pub step: usize,
    next_id: u64,
    previous_measurements: Vec<[f64; 2]>,
}

/// Predicted clouds of every track under one partition.
struct Prediction {
    states: Vec<Vec<KinematicState>>,
    weights: Vec<Vec<f64>>,
}

impl Filter {
    pub fn new(config: FilterConfig) -> Result<Self> {
        config.validate()?;
        Ok(Self {
            config,
            tracks: Vec::new(),
            hypotheses: PartitionHypothesisSet::default(),
            step: 0,
            next_id: 1,
            previous_measurements: Vec::new(),
        })
    }

    /// Adds a track with the given particles at equal weights summing to
    /// `existence`. Useful for tests and warm starts.
    pub fn insert_track(&mut self, states: Vec<KinematicState>, existence: f64) -> Result<u64> {
        if states.len() != self.config.num_particles {
            return Err(Error::Shape(format!(
                "{} particles, expected {}",
                states.len(),
                self.config.num_particles
            )));
        }
        if !(0.0..=1.0).contains(&existence) {
            return Err(config_err("existence", "must lie in [0, 1]"));
        }
        let id = self.next_id;
        self.next_id += 1;
        let l = states.len();
        self.tracks.push(Track {
            id,
            states,
            weights: vec![existence / l as f64; l],
            existence,
            confirmed: existence > self.config.confirm_threshold,
            birth_step: self.step,
        });
        Ok(id)
    }

    /// Sets the measurements used to seed birth particles at the next step.
    pub fn set_previous_measurements(&mut self, z: Vec<[f64; 2]>) {
        self.previous_measurements = z;
    }

    fn preserved_partitions(&self) -> Result<PartitionHypothesisSet> {
        let n = self.tracks.len();
        let ids: Vec<u64> = self.tracks.iter().map(|t| t.id).collect();
        if !self.config.grouping {
            return Ok(PartitionHypothesisSet::single(ids, GroupPartition::ungrouped(n)));
        }
        let summaries: Vec<TrackSummary> = self
            .tracks
            .iter()
            .map(|t| TrackSummary::from_particles(t.id, &t.states, &t.weights, t.confirmed))
            .collect();
        let params = self.config.grouping_params();
        let candidates = match self.config.candidates {
            CandidatePolicy::Full => generate_candidates(&summaries, Some(&self.hypotheses), &params)?,
            CandidatePolicy::SingletonsOnly => {
                let confirmed: Vec<bool> = self.tracks.iter().map(|t| t.confirmed).collect();
                vec![GroupPartition::singletons(&confirmed)]
            }
        };
        let views: Vec<ParticleView<'_>> = self
            .tracks
            .iter()
            .map(|t| ParticleView { states: &t.states, weights: &t.weights })
            .collect();
        let particles = match self.config.alpha_mode {
            AlphaMode::Estimate => None,
            AlphaMode::Particle => Some(views.as_slice()),
        };
        let (set, _) = predict_partition_weights(&summaries, &candidates, &params, particles)?;
        Ok(set)
    }

    /// Draws one acceleration per particle of every track, track by track.
    fn draw_noise(&self, rng: &mut dyn RngCore) -> Vec<Vec<[f64; 2]>> {
        let s = self.config.sigma_v;
        self.tracks
            .iter()
            .map(|t| {
                (0..t.states.len())
                    .map(|_| {
                        let ax: f64 = rng.sample(StandardNormal);
                        let ay: f64 = rng.sample(StandardNormal);
                        [s * ax, s * ay]
                    })
                    .collect()
            })
            .collect()
    }

    fn predict(&self, partition: &GroupPartition, noise: &[Vec<[f64; 2]>]) -> Prediction {
        let dt = self.config.dt;
        let ps = self.config.survival_prob;
        let mut states: Vec<Vec<KinematicState>> = self
            .tracks
            .iter()
            .zip(noise)
            .map(|(t, nz)| {
                t.states
                    .iter()
                    .zip(nz)
                    .map(|(&x, &n)| cv_propagate(x, dt) + noise_increment(dt, n))
                    .collect()
            })
            .collect();
        for members in partition.groups() {
            if members.len() < 2 {
                continue;
            }
            let l = self.config.num_particles;
            for p in 0..l {
                let leader = mean_state(
                    members.iter().map(|&i| self.tracks[i].states[p]),
                    members.len(),
                );
                let moved = cv_propagate(leader, dt);
                for &i in &members {
                    let off = self.tracks[i].states[p] - leader;
                    states[i][p] = moved + off + noise_increment(dt, noise[i][p]);
                }
            }
        }
        let weights = self
            .tracks
            .iter()
            .map(|t| t.weights.iter().map(|w| ps * w).collect())
            .collect();
        Prediction { states, weights }
    }

    /// Runs one full recursion on `frame`.
    pub fn step(
        &mut self,
        frame: &ScanFrame,
        birth: &dyn BirthModel,
        rng: &mut dyn RngCore,
    ) -> Result<StepReport> {
        if frame.k != self.step + 1 {
            return Err(Error::FrameOutOfOrder { expected: self.step + 1, got: frame.k });
        }
        frame.validate()?;
        let cfg = self.config.clone();
        let l = cfg.num_particles;
        let n = self.tracks.len();
        let m = frame.len();

        // Steps 1-2
        let t0 = Instant::now();
        let hyp = self.preserved_partitions()?;
        let alpha = hyp.prior_weights.clone();
        let predictions: Vec<Prediction> = hyp
            .partitions
            .iter()
            .map(|g| {
                let noise = self.draw_noise(rng);
                self.predict(g, &noise)
            })
            .collect();
        let t_predict = t0.elapsed();

        // Steps 3-4
        let t1 = Instant::now();
        let clouds: Vec<Vec<PredictedCloud<'_>>> = predictions
            .iter()
            .map(|p| {
                p.states
                    .iter()
                    .zip(&p.weights)
                    .map(|(s, w)| PredictedCloud { states: s, weights: w })
                    .collect()
            })
            .collect();
        let (beta, lik) = compute_beta(&clouds, &alpha, frame, cfg.likelihood_gate)?;
        let uniform = vec![1.0 / l as f64; l];
        let mut births = Vec::with_capacity(m);
        let mut xi0 = Vec::with_capacity(m);
        for (j, &z) in frame.measurements.iter().enumerate() {
            let b = birth.sample(&self.previous_measurements, z, l, rng);
            xi0.push(xi_zero(frame, j, &b, &uniform));
            births.push(b);
        }
        let spawn = censor_new(&beta, &xi0, cfg.censor_threshold)?;
        let mut spawns = vec![false; m];
        for &j in &spawn {
            spawns[j] = true;
        }
        let xi_bp: Vec<f64> = xi0
            .iter()
            .zip(&spawns)
            .map(|(&x, &s)| if s { x } else { 1.0 })
            .collect();
        let problem = AssociationProblem::new(beta, xi_bp)?;
        let marg = bp_associate(&problem, cfg.bp_max_iter, cfg.bp_tol)?;
        let t_assoc = t1.elapsed();

        // Steps 5-6
        let t2 = Instant::now();
        let pd = frame.detection_prob;
        let n_part = predictions.len();
        let mut post_w: Vec<Vec<Vec<f64>>> = Vec::with_capacity(n_part);
        let mut log_post: Vec<f64> = alpha.iter().map(|a| a.ln()).collect();
        let mut zero_mass = vec![true; n];
        for (g, pred) in predictions.iter().enumerate() {
            let mut per_track = Vec::with_capacity(n);
            for i in 0..n {
                let mut gamma = vec![(1.0 - pd) * marg.kappa[(i, 0)]; l];
                for (j, ratios) in &lik[g][i].entries {
                    let k = marg.kappa[(i, j + 1)];
                    for (gm, r) in gamma.iter_mut().zip(ratios) {
                        *gm += r * k;
                    }
                }
                let w_star = &pred.weights[i];
                let w_a: Vec<f64> = w_star.iter().zip(&gamma).map(|(w, gm)| w * gm).collect();
                let w_b = (1.0 - w_star.iter().sum::<f64>()).max(0.0) * marg.kappa[(i, 0)];
                let z = w_a.iter().sum::<f64>() + w_b;
                if z > 0.0 && z.is_finite() {
                    zero_mass[i] = false;
                    log_post[g] += z.ln();
                    per_track.push(w_a.into_iter().map(|w| w / z).collect());
                } else {
                    per_track.push(vec![0.0; l]);
                }
            }
            post_w.push(per_track);
        }
        // a track with no mass under every partition carries no evidence
        for (i, &zm) in zero_mass.iter().enumerate() {
            if zm {
                for g in 0..n_part {
                    post_w[g][i].iter_mut().for_each(|w| *w = 0.0);
                }
            }
        }
        let (posterior, degenerate_posterior) = if n_part > 0 {
            let (p, d) = normalize_log_weights(&log_post);
            if d {
                (alpha.clone(), true)
            } else {
                (p, false)
            }
        } else {
            (Vec::new(), false)
        };

        // existence and estimate use the prior partition weights
        let mut existence = vec![0.0; n];
        let mut estimates = vec![None; n];
        for i in 0..n {
            let mut acc = KinematicState::ZERO;
            for g in 0..n_part {
                for (x, &w) in predictions[g].states[i].iter().zip(&post_w[g][i]) {
                    existence[i] += alpha[g] * w;
                    acc += *x * (alpha[g] * w);
                }
            }
            existence[i] = existence[i].clamp(0.0, 1.0);
            if existence[i] >= 1e-12 {
                estimates[i] = Some(acc * (1.0 / existence[i]));
            }
        }

        let mut new_tracks: Vec<(Vec<KinematicState>, Vec<f64>, f64)> = Vec::with_capacity(m);
        let scale = frame.birth_mean / frame.clutter_intensity();
        for (j, parts) in births.into_iter().enumerate() {
            if !spawns[j] {
                new_tracks.push((parts, vec![0.0; l], 0.0));
                continue;
            }
            let z = frame.measurements[j];
            let iota0 = marg.iota[(j, 0)];
            let w_a: Vec<f64> = parts
                .iter()
                .map(|x| scale * frame.likelihood(z, x) * iota0 / l as f64)
                .collect();
            let w_b: f64 = marg.iota.row(j).iter().sum();
            let total = w_a.iter().sum::<f64>() + w_b;
            let w: Vec<f64> = w_a.iter().map(|v| v / total).collect();
            let r = w.iter().sum::<f64>().clamp(0.0, 1.0);
            new_tracks.push((parts, w, r));
        }
        let t_update = t2.elapsed();

        // Steps 7-8
        let t3 = Instant::now();
        let num_before_prune = n + m;
        // (existence, order key, source)
        enum Src {
            Legacy(usize),
            New(usize),
        }
        let mut keep: Vec<(f64, u64, Src)> = Vec::new();
        for i in 0..n {
            if existence[i] >= cfg.prune_threshold {
                keep.push((existence[i], self.tracks[i].id, Src::Legacy(i)));
            }
        }
        for (j, (_, _, r)) in new_tracks.iter().enumerate() {
            if *r >= cfg.prune_threshold {
                keep.push((*r, self.next_id + j as u64, Src::New(j)));
            }
        }
        if keep.len() > cfg.max_tracks {
            let mut order: Vec<usize> = (0..keep.len()).collect();
            order.sort_by(|&a, &b| keep[b].0.total_cmp(&keep[a].0).then(keep[a].1.cmp(&keep[b].1)));
            let mut drop = vec![true; keep.len()];
            for &k in order.iter().take(cfg.max_tracks) {
                drop[k] = false;
            }
            let mut it = drop.iter();
            keep.retain(|_| !*it.next().unwrap());
        }

        let mut tracks = Vec::with_capacity(keep.len());
        let mut report_est = Vec::with_capacity(keep.len());
        for (r, id, src) in keep {
            let u: f64 = rng.random();
            let (states, est) = match src {
                Src::Legacy(i) => {
                    let mut mix = Vec::with_capacity(n_part * l);
                    for g in 0..n_part {
                        let w = &post_w[g][i];
                        let s: f64 = w.iter().sum();
                        for &wl in w {
                            mix.push(if s > 0.0 { posterior[g] * wl / s } else { 0.0 });
                        }
                    }
                    let idx = systematic_resample(&mix, l, u);
                    let states = if idx.is_empty() {
                        // no mass anywhere: keep the first prediction as is
                        predictions[0].states[i].clone()
                    } else {
                        idx.into_iter()
                            .map(|k| predictions[k / l].states[i][k % l])
                            .collect()
                    };
                    (states, estimates[i])
                }
                Src::New(j) => {
                    let (parts, w, _) = &new_tracks[j];
                    let est = weighted_mean(parts, w);
                    let idx = systematic_resample(w, l, u);
                    let states = if idx.is_empty() {
                        parts.clone()
                    } else {
                        idx.into_iter().map(|k| parts[k]).collect()
                    };
                    (states, est)
                }
            };
            let confirmed = r > cfg.confirm_threshold;
            report_est.push(TrackEstimate {
                id,
                existence: r,
                state: if r >= 1e-12 { est } else { None },
                confirmed,
            });
            let birth_step = self
                .tracks
                .iter()
                .find(|t| t.id == id)
                .map_or(frame.k, |t| t.birth_step);
            tracks.push(Track {
                id,
                states,
                weights: vec![r / l as f64; l],
                existence: r,
                confirmed,
                birth_step,
            });
        }
        let t_resample = t3.elapsed();

        let hypotheses = PartitionHypothesisSet {
            posterior_weights: posterior,
            ..hyp
        };
        self.next_id += m as u64;
        self.tracks = tracks;
        self.hypotheses = hypotheses.clone();
        self.step = frame.k;
        self.previous_measurements = frame.measurements.clone();

        let ms = |d: std::time::Duration| d.as_secs_f64() * 1e3;
        Ok(StepReport {
            step: frame.k,
            num_after_prune: self.tracks.len(),
            estimates: report_est,
            hypotheses,
            bp_iterations: marg.iterations,
            bp_converged: marg.converged,
            timings: PhaseTimings {
                predict_ms: ms(t_predict),
                assoc_ms: ms(t_assoc),
                update_ms: ms(t_update),
                resample_ms: ms(t_resample),
            },
            num_legacy: n,
            num_measurements: m,
            num_before_prune,
            num_censored: m - spawn.len(),
            degenerate_posterior,
            zero_mass_tracks: zero_mass.iter().filter(|&&z| z).count(),
        })
    }
}
