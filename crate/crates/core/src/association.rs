//! Likelihood factors and iterative probabilistic data association.
//!
//! Legacy potential targets (PTs) enter the association through the
//! `n × (m+1)` matrix `β`, one row per PT with column `0` for "missed".
//! Measurements enter through `ξ(0)`, the evidence that a measurement is
//! explained by a new PT rather than clutter; `ξ(b) = 1` for `b ≥ 1`.
//!
//! [`bp_associate`] runs loopy belief propagation in the compact
//! two-message form, with target-to-measurement messages `ζ` and
//! measurement-to-target messages `ν`:
//!
//! ```text
//! ζ[i][m] = β_i(m) / (β_i(0) + Σ_{m'≠m} β_i(m') ν[m'][i])
//! ν[m][i] = 1 / (ξ_m(0) + Σ_{i'≠i} ζ[i'][m])
//! ```
//!
//! so that `κ_i = [1, ν[1][i], …, ν[m][i]]` and `ι_m = [1, ζ[1][m], …]`.

use nalgebra::DMatrix;

use crate::error::{config_err, Error, Result};
use crate::motion::KinematicState;

/// One batch of measurements together with the sensor and clutter model.
#[derive(Debug, Clone, PartialEq)]
pub struct ScanFrame {
    /// Time index `k`, starting at 1.
    pub k: usize,
    pub measurements: Vec<[f64; 2]>,
    /// μ_c
    pub clutter_mean: f64,
    /// f_c, in 1/m²
    pub clutter_density: f64,
    pub detection_prob: f64,
    /// μ_b
    pub birth_mean: f64,
    /// σ_w, in m
    pub meas_std: f64,
}

impl ScanFrame {
    pub fn validate(&self) -> Result<()> {
        let pos = |v: f64| v > 0.0 && v.is_finite();
        if !pos(self.clutter_mean) {
            return Err(config_err("clutter_mean", "must be > 0"));
        }
        if !pos(self.clutter_density) {
            return Err(config_err("clutter_density", "must be > 0"));
        }
        if !(self.detection_prob > 0.0 && self.detection_prob <= 1.0) {
            return Err(config_err("detection_prob", "must lie in (0, 1]"));
        }
        if !pos(self.birth_mean) {
            return Err(config_err("birth_mean", "must be > 0"));
        }
        if !pos(self.meas_std) {
            return Err(config_err("meas_std", "must be > 0"));
        }
        if self.measurements.iter().flatten().any(|v| !v.is_finite()) {
            return Err(Error::Shape("non-finite measurement".into()));
        }
        Ok(())
    }

    pub fn len(&self) -> usize {
        self.measurements.len()
    }

    pub fn is_empty(&self) -> bool {
        self.measurements.is_empty()
    }

    /// `f(z | x)`: isotropic Gaussian around the position of `x`.
    #[inline]
    pub fn likelihood(&self, z: [f64; 2], x: &KinematicState) -> f64 {
        let var = self.meas_std * self.meas_std;
        let dx = z[0] - x.px;
        let dy = z[1] - x.py;
        (-(dx * dx + dy * dy) / (2.0 * var)).exp() / (2.0 * std::f64::consts::PI * var)
    }

    /// `μ_c f_c`, the clutter intensity.
    #[inline]
    pub fn clutter_intensity(&self) -> f64 {
        self.clutter_mean * self.clutter_density
    }
}

/// The legacy factor `q(x, r, a; z)`; `a = 0` means missed detection and
/// `a = m` points at measurement `m - 1` of the frame.
pub fn legacy_factor(x: &KinematicState, exists: bool, a: usize, frame: &ScanFrame) -> f64 {
    match (exists, a) {
        (false, 0) => 1.0,
        (false, _) => 0.0,
        (true, 0) => 1.0 - frame.detection_prob,
        (true, a) => {
            frame.detection_prob * frame.likelihood(frame.measurements[a - 1], x)
                / frame.clutter_intensity()
        }
    }
}

/// The new-PT factor for an existing new PT at `x` created by measurement
/// `m` (0-based). Zero when a legacy PT claims the measurement (`b ≥ 1`).
///
/// The birth density is not included: particles are drawn from it, so it
/// cancels in the importance weights.
pub fn new_factor(x: &KinematicState, m: usize, b: usize, frame: &ScanFrame) -> f64 {
    if b >= 1 {
        return 0.0;
    }
    frame.birth_mean * frame.likelihood(frame.measurements[m], x) / frame.clutter_intensity()
}

/// `ξ(0)` for measurement `m` from weighted birth particles.
pub fn xi_zero(frame: &ScanFrame, m: usize, particles: &[KinematicState], weights: &[f64]) -> f64 {
    let z = frame.measurements[m];
    let s: f64 = particles
        .iter()
        .zip(weights)
        .map(|(x, &w)| w * frame.likelihood(z, x))
        .sum();
    1.0 + frame.birth_mean / frame.clutter_intensity() * s
}

/// Inputs of the association: `β` and the `ξ(0)` entries.
#[derive(Debug, Clone, PartialEq)]
pub struct AssociationProblem {
    /// `n × (m+1)`
    pub beta: DMatrix<f64>,
    /// `ξ_m(0)` per measurement.
    pub xi0: Vec<f64>,
}

impl AssociationProblem {
    pub fn new(beta: DMatrix<f64>, xi0: Vec<f64>) -> Result<Self> {
        if beta.ncols() != xi0.len() + 1 {
            return Err(Error::Shape(format!(
                "beta has {} columns for {} measurements",
                beta.ncols(),
                xi0.len()
            )));
        }
        Ok(Self { beta, xi0 })
    }

    pub fn num_targets(&self) -> usize {
        self.beta.nrows()
    }

    pub fn num_measurements(&self) -> usize {
        self.xi0.len()
    }
}

/// Outputs of the association.
#[derive(Debug, Clone, PartialEq)]
pub struct AssociationMarginals {
    /// `n × (m+1)`, `κ_i(a)` with `κ_i(0) = 1`.
    pub kappa: DMatrix<f64>,
    /// `m × (n+1)`, `ι_m(b)` with `ι_m(0) = 1`.
    pub iota: DMatrix<f64>,
    pub iterations: usize,
    pub converged: bool,
}

impl AssociationMarginals {
    /// Association probabilities of target `i`: `β_i(a) κ_i(a)` normalized.
    pub fn target_belief(&self, beta: &DMatrix<f64>, i: usize) -> Vec<f64> {
        normalized((0..beta.ncols()).map(|a| beta[(i, a)] * self.kappa[(i, a)]))
    }

    /// Association probabilities of measurement `m`: `ξ_m(b) ι_m(b)`
    /// normalized, index 0 meaning "not from a legacy PT".
    pub fn measurement_belief(&self, xi0: &[f64], m: usize) -> Vec<f64> {
        normalized(
            (0..self.iota.ncols()).map(|b| if b == 0 { xi0[m] } else { 1.0 } * self.iota[(m, b)]),
        )
    }
}

fn normalized(it: impl Iterator<Item = f64>) -> Vec<f64> {
    let v: Vec<f64> = it.collect();
    let s: f64 = v.iter().sum();
    v.into_iter().map(|x| x / s).collect()
}

/// `out[j] = Σ_{j'≠j} v[j']`, computed from prefix and suffix sums to avoid
/// cancellation.
fn exclusive_sums(v: &[f64], out: &mut [f64]) {
    let mut acc = 0.0;
    for (o, &x) in out.iter_mut().zip(v) {
        *o = acc;
        acc += x;
    }
    acc = 0.0;
    for (o, &x) in out.iter_mut().zip(v).rev() {
        *o += acc;
        acc += x;
    }
}

/// Normalized rows of `β ⊙ κ` with `κ_i(m) = ν[m][i]`.
fn belief_matrix(beta: &DMatrix<f64>, nu: Option<&DMatrix<f64>>) -> DMatrix<f64> {
    let (n, cols) = beta.shape();
    let mut b = DMatrix::zeros(n, cols);
    for i in 0..n {
        let mut s = 0.0;
        for a in 0..cols {
            let k = match (a, nu) {
                (0, _) | (_, None) => 1.0,
                (a, Some(nu)) => nu[(a - 1, i)],
            };
            b[(i, a)] = beta[(i, a)] * k;
            s += b[(i, a)];
        }
        if s > 0.0 {
            for a in 0..cols {
                b[(i, a)] /= s;
            }
        }
    }
    b
}

/// Iterative BP association.
///
/// Starts from `ν = 1` (which is the classic initialization of the
/// target-to-measurement messages), then alternates `ν` and `ζ` updates.
/// Stops after `max_iter` iterations or once the Frobenius norm of the
/// change in the normalized target-belief matrix drops below `tol`.
pub fn bp_associate(
    problem: &AssociationProblem,
    max_iter: usize,
    tol: f64,
) -> Result<AssociationMarginals> {
    let beta = &problem.beta;
    let xi0 = &problem.xi0;
    let n = problem.num_targets();
    let m = problem.num_measurements();
    if beta.ncols() != m + 1 {
        return Err(Error::Shape("beta/xi size mismatch".into()));
    }
    for ((r, c), &v) in beta.iter().enumerate().map(|(k, v)| ((k % n.max(1), k / n.max(1)), v)) {
        if !(v >= 0.0 && v.is_finite()) {
            return Err(Error::NumericalFailure { kind: "beta", row: r, col: c });
        }
    }
    for (j, &v) in xi0.iter().enumerate() {
        if !(v >= 0.0 && v.is_finite()) {
            return Err(Error::NumericalFailure { kind: "xi", row: j, col: 0 });
        }
    }

    if n == 0 || m == 0 {
        return Ok(AssociationMarginals {
            kappa: DMatrix::from_element(n, m + 1, 1.0),
            iota: DMatrix::from_element(m, n + 1, 1.0),
            iterations: 0,
            converged: true,
        });
    }

    // zeta: n × m, nu: m × n
    let mut zeta = DMatrix::<f64>::zeros(n, m);
    let mut nu = DMatrix::<f64>::from_element(m, n, 1.0);
    let mut row = vec![0.0; m];
    let mut excl_row = vec![0.0; m];
    let mut col = vec![0.0; n];
    let mut excl_col = vec![0.0; n];

    let update_zeta = |zeta: &mut DMatrix<f64>,
                       nu: &DMatrix<f64>,
                       row: &mut Vec<f64>,
                       excl: &mut Vec<f64>|
     -> Result<()> {
        for i in 0..n {
            for j in 0..m {
                row[j] = beta[(i, j + 1)] * nu[(j, i)];
            }
            exclusive_sums(row, excl);
            for j in 0..m {
                let v = beta[(i, j + 1)] / (beta[(i, 0)] + excl[j]);
                if !v.is_finite() {
                    return Err(Error::NumericalFailure { kind: "zeta", row: i, col: j });
                }
                zeta[(i, j)] = v;
            }
        }
        Ok(())
    };

    update_zeta(&mut zeta, &nu, &mut row, &mut excl_row)?;
    let mut prev = belief_matrix(beta, None);
    let mut iterations = 0;
    let mut converged = false;
    while iterations < max_iter {
        iterations += 1;
        for j in 0..m {
            for i in 0..n {
                col[i] = zeta[(i, j)];
            }
            exclusive_sums(&col, &mut excl_col);
            for i in 0..n {
                let v = 1.0 / (xi0[j] + excl_col[i]);
                if !v.is_finite() {
                    return Err(Error::NumericalFailure { kind: "nu", row: j, col: i });
                }
                nu[(j, i)] = v;
            }
        }
        update_zeta(&mut zeta, &nu, &mut row, &mut excl_row)?;
        let cur = belief_matrix(beta, Some(&nu));
        let delta = (&cur - &prev).norm();
        prev = cur;
        if delta < tol {
            converged = true;
            break;
        }
    }

    let mut kappa = DMatrix::from_element(n, m + 1, 1.0);
    for i in 0..n {
        for j in 0..m {
            kappa[(i, j + 1)] = nu[(j, i)];
        }
    }
    let mut iota = DMatrix::from_element(m, n + 1, 1.0);
    for j in 0..m {
        for i in 0..n {
            iota[(j, i + 1)] = zeta[(i, j)];
        }
    }
    Ok(AssociationMarginals {
        kappa,
        iota,
        iterations,
        converged,
    })
}

/// Per-particle likelihood ratios `p_d f(z|x) / (μ_c f_c)` of one
/// predicted cloud, kept sparse over measurements.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct CloudLikelihoods {
    /// `(measurement index, ratio per particle)`
    pub entries: Vec<(usize, Vec<f64>)>,
}

/// A predicted particle cloud: states and prediction weights `w*`.
#[derive(Debug, Clone, Copy)]
pub struct PredictedCloud<'a> {
    pub states: &'a [KinematicState],
    pub weights: &'a [f64],
}

/// `β` from the per-partition predicted clouds `clouds[g][i]` weighted by
/// the partition weights `alpha[g]`.
///
/// Measurements farther than `gate_sigmas · σ_w` from the bounding box of a
/// cloud are skipped for that cloud; `None` evaluates every pair.
/// Also returns the likelihood ratios per `(g, i)` for the update.
pub fn compute_beta(
    clouds: &[Vec<PredictedCloud<'_>>],
    alpha: &[f64],
    frame: &ScanFrame,
    gate_sigmas: Option<f64>,
) -> Result<(DMatrix<f64>, Vec<Vec<CloudLikelihoods>>)> {
    if clouds.len() != alpha.len() {
        return Err(Error::Shape(format!(
            "{} partitions with {} weights",
            clouds.len(),
            alpha.len()
        )));
    }
    let n = clouds.first().map_or(0, |c| c.len());
    if clouds.iter().any(|c| c.len() != n) {
        return Err(Error::Shape("partitions disagree on track count".into()));
    }
    let m = frame.len();
    let pd = frame.detection_prob;
    let scale = pd / frame.clutter_intensity();
    let margin = gate_sigmas.map(|s| s * frame.meas_std);

    let mut beta = DMatrix::zeros(n, m + 1);
    let mut cache = Vec::with_capacity(clouds.len());
    for (per_track, &a) in clouds.iter().zip(alpha) {
        let mut lik_g = Vec::with_capacity(n);
        for (i, cloud) in per_track.iter().enumerate() {
            let mass: f64 = cloud.weights.iter().sum();
            beta[(i, 0)] += a * ((1.0 - pd) * mass + (1.0 - mass));
            let bbox = margin.map(|d| bounding_box(cloud.states, d));
            let mut lik = CloudLikelihoods::default();
            for (j, &z) in frame.measurements.iter().enumerate() {
                if let Some(b) = &bbox {
                    if z[0] < b[0] || z[0] > b[1] || z[1] < b[2] || z[1] > b[3] {
                        continue;
                    }
                }
                let ratios: Vec<f64> = cloud
                    .states
                    .iter()
                    .map(|x| scale * frame.likelihood(z, x))
                    .collect();
                let s: f64 = ratios.iter().zip(cloud.weights).map(|(r, w)| r * w).sum();
                beta[(i, j + 1)] += a * s;
                lik.entries.push((j, ratios));
            }
            lik_g.push(lik);
        }
        cache.push(lik_g);
    }
    Ok((beta, cache))
}

fn bounding_box(states: &[KinematicState], margin: f64) -> [f64; 4] {
    let mut b = [f64::INFINITY, f64::NEG_INFINITY, f64::INFINITY, f64::NEG_INFINITY];
    for s in states {
        b[0] = b[0].min(s.px);
        b[1] = b[1].max(s.px);
        b[2] = b[2].min(s.py);
        b[3] = b[3].max(s.py);
    }
    [b[0] - margin, b[1] + margin, b[2] - margin, b[3] + margin]
}

/// Provisional probability that measurement `m` does not originate from any
/// legacy PT, treating the legacy PTs independently:
/// `ξ(0) / (ξ(0) + Σ_i β_i(m) / β_i(0))`.
pub fn new_target_score(beta: &DMatrix<f64>, xi0: &[f64], m: usize) -> f64 {
    let mut legacy = 0.0;
    for i in 0..beta.nrows() {
        let b0 = beta[(i, 0)];
        let bm = beta[(i, m + 1)];
        legacy += if b0 > 0.0 {
            bm / b0
        } else if bm > 0.0 {
            f64::INFINITY
        } else {
            0.0
        };
    }
    xi0[m] / (xi0[m] + legacy)
}

/// Indices of measurements allowed to spawn new PTs. A measurement is
/// censored when its [`new_target_score`] falls below `threshold`.
pub fn censor_new(beta: &DMatrix<f64>, xi0: &[f64], threshold: f64) -> Result<Vec<usize>> {
    if !(threshold > 0.0 && threshold <= 1.0) {
        return Err(config_err("censor_threshold", "must lie in (0, 1]"));
    }
    Ok((0..xi0.len())
        .filter(|&m| new_target_score(beta, xi0, m) >= threshold)
        .collect())
}
