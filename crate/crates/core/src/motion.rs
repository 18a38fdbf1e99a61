//! Planar kinematic models.
//!
//! States are `[px, vx, py, vy]`. The constant-velocity (CV) and constant-turn
//! (CT) transitions are used both to generate ground truth and to propagate
//! particles. Group members follow a virtual-leader model: every member moves
//! with the deterministic transition of the group mean plus its own fixed
//! offset and independent process noise.

use std::ops::{Add, AddAssign, Mul, Neg, Sub};

use nalgebra::{Matrix4, Vector4};
use rand::Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Planar position and velocity of a point target.
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct KinematicState {
    pub px: f64,
    pub vx: f64,
    pub py: f64,
    pub vy: f64,
}

impl KinematicState {
    pub const ZERO: Self = Self::new(0.0, 0.0, 0.0, 0.0);

    pub const fn new(px: f64, vx: f64, py: f64, vy: f64) -> Self {
        Self { px, vx, py, vy }
    }

    pub fn from_array(a: [f64; 4]) -> Self {
        Self::new(a[0], a[1], a[2], a[3])
    }

    pub fn to_array(self) -> [f64; 4] {
        [self.px, self.vx, self.py, self.vy]
    }

    pub fn to_vector(self) -> Vector4<f64> {
        Vector4::new(self.px, self.vx, self.py, self.vy)
    }

    pub fn from_vector(v: &Vector4<f64>) -> Self {
        Self::new(v[0], v[1], v[2], v[3])
    }

    pub fn position(self) -> [f64; 2] {
        [self.px, self.py]
    }

    pub fn speed(self) -> f64 {
        self.vx.hypot(self.vy)
    }

    pub fn is_finite(self) -> bool {
        self.px.is_finite() && self.vx.is_finite() && self.py.is_finite() && self.vy.is_finite()
    }

    fn check_finite(self) -> Result<Self> {
        if self.is_finite() {
            Ok(self)
        } else {
            Err(Error::NonFiniteState(self.to_array()))
        }
    }
}

impl Add for KinematicState {
    type Output = Self;
    fn add(self, o: Self) -> Self {
        Self::new(self.px + o.px, self.vx + o.vx, self.py + o.py, self.vy + o.vy)
    }
}

impl AddAssign for KinematicState {
    fn add_assign(&mut self, o: Self) {
        *self = *self + o;
    }
}

impl Sub for KinematicState {
    type Output = Self;
    fn sub(self, o: Self) -> Self {
        Self::new(self.px - o.px, self.vx - o.vx, self.py - o.py, self.vy - o.vy)
    }
}

impl Neg for KinematicState {
    type Output = Self;
    fn neg(self) -> Self {
        Self::new(-self.px, -self.vx, -self.py, -self.vy)
    }
}

impl Mul<f64> for KinematicState {
    type Output = Self;
    fn mul(self, s: f64) -> Self {
        Self::new(self.px * s, self.vx * s, self.py * s, self.vy * s)
    }
}

/// White acceleration sample `[ax, ay]` in m/s², already scaled by σ_v.
pub type Accel = [f64; 2];

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum ModelKind {
    ConstantVelocity,
    /// Turn rate in rad/s.
    ConstantTurn { omega: f64 },
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MotionModel {
    pub kind: ModelKind,
    pub dt: f64,
    pub sigma_v: f64,
}

impl MotionModel {
    pub fn cv(dt: f64, sigma_v: f64) -> Result<Self> {
        Self::new(ModelKind::ConstantVelocity, dt, sigma_v)
    }

    pub fn new(kind: ModelKind, dt: f64, sigma_v: f64) -> Result<Self> {
        let m = Self { kind, dt, sigma_v };
        m.validate()?;
        Ok(m)
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.dt > 0.0 && self.dt.is_finite()) {
            return Err(Error::InvalidModel(format!("dt must be > 0, got {}", self.dt)));
        }
        if !(self.sigma_v >= 0.0 && self.sigma_v.is_finite()) {
            return Err(Error::InvalidModel(format!(
                "sigma_v must be >= 0, got {}",
                self.sigma_v
            )));
        }
        if let ModelKind::ConstantTurn { omega } = self.kind {
            if omega == 0.0 || !omega.is_finite() {
                return Err(Error::InvalidModel(
                    "constant-turn model needs a nonzero finite turn rate".into(),
                ));
            }
        }
        Ok(())
    }

    /// Deterministic part of the transition.
    pub fn transition(&self, s: KinematicState) -> KinematicState {
        match self.kind {
            ModelKind::ConstantVelocity => cv_propagate(s, self.dt),
            ModelKind::ConstantTurn { omega } => ct_propagate(s, omega, self.dt),
        }
    }

    /// Draws one acceleration sample with standard deviation σ_v per axis.
    pub fn sample_accel<R: Rng + ?Sized>(&self, rng: &mut R) -> Accel {
        let ax: f64 = rng.sample(StandardNormal);
        let ay: f64 = rng.sample(StandardNormal);
        [self.sigma_v * ax, self.sigma_v * ay]
    }

    pub fn process_covariance(&self) -> Matrix4<f64> {
        process_covariance(self.dt, self.sigma_v)
    }
}

/// `Q = σ_v² G Gᵀ` for the white-acceleration input matrix `G`.
pub fn process_covariance(dt: f64, sigma_v: f64) -> Matrix4<f64> {
    let a = dt * dt / 2.0;
    let s2 = sigma_v * sigma_v;
    #[rustfmt::skip]
    let q = Matrix4::new(
        a * a, a * dt, 0.0, 0.0,
        a * dt, dt * dt, 0.0, 0.0,
        0.0, 0.0, a * a, a * dt,
        0.0, 0.0, a * dt, dt * dt,
    );
    q * s2
}

pub fn cv_matrix(dt: f64) -> Matrix4<f64> {
    #[rustfmt::skip]
    let f = Matrix4::new(
        1.0, dt, 0.0, 0.0,
        0.0, 1.0, 0.0, 0.0,
        0.0, 0.0, 1.0, dt,
        0.0, 0.0, 0.0, 1.0,
    );
    f
}

#[inline]
pub(crate) fn cv_propagate(s: KinematicState, dt: f64) -> KinematicState {
    KinematicState::new(s.px + dt * s.vx, s.vx, s.py + dt * s.vy, s.vy)
}

#[inline]
pub(crate) fn noise_increment(dt: f64, n: Accel) -> KinematicState {
    let a = dt * dt / 2.0;
    KinematicState::new(a * n[0], dt * n[0], a * n[1], dt * n[1])
}

#[inline]
fn ct_propagate(s: KinematicState, omega: f64, dt: f64) -> KinematicState {
    let (sin, cos) = (omega * dt).sin_cos();
    let a = sin / omega;
    let b = (1.0 - cos) / omega;
    KinematicState::new(
        s.px + a * s.vx - b * s.vy,
        cos * s.vx - sin * s.vy,
        s.py + b * s.vx + a * s.vy,
        sin * s.vx + cos * s.vy,
    )
}

/// Constant-velocity step `F_CV s (+ G n)`.
pub fn cv_step(s: KinematicState, dt: f64, noise: Option<Accel>) -> Result<KinematicState> {
    if !(dt > 0.0) {
        return Err(Error::InvalidModel(format!("dt must be > 0, got {dt}")));
    }
    let s = s.check_finite()?;
    let next = cv_propagate(s, dt);
    Ok(match noise {
        Some(n) => next + noise_increment(dt, n),
        None => next,
    })
}

/// Noiseless constant-turn step. A zero turn rate is rejected; use [`cv_step`].
pub fn ct_step(s: KinematicState, omega: f64, dt: f64) -> Result<KinematicState> {
    if omega == 0.0 || !omega.is_finite() {
        return Err(Error::InvalidModel(
            "turn rate must be nonzero; use cv_step".into(),
        ));
    }
    if !(dt > 0.0) {
        return Err(Error::InvalidModel(format!("dt must be > 0, got {dt}")));
    }
    Ok(ct_propagate(s.check_finite()?, omega, dt))
}

/// Componentwise mean of the member states.
pub fn virtual_leader(members: &[KinematicState]) -> Result<KinematicState> {
    if members.is_empty() {
        return Err(Error::EmptyGroup);
    }
    Ok(mean_state(members.iter().copied(), members.len()))
}

#[inline]
pub(crate) fn mean_state(it: impl Iterator<Item = KinematicState>, n: usize) -> KinematicState {
    let mut acc = KinematicState::ZERO;
    for s in it {
        acc += s;
    }
    acc * (1.0 / n as f64)
}

/// Leader, member states, and their offsets from the leader.
#[derive(Debug, Clone, PartialEq)]
pub struct GroupContext {
    pub members: Vec<KinematicState>,
    pub leader: KinematicState,
    pub offsets: Vec<KinematicState>,
}

impl GroupContext {
    pub fn new(members: Vec<KinematicState>) -> Result<Self> {
        let leader = virtual_leader(&members)?;
        let offsets = members.iter().map(|&m| m - leader).collect();
        Ok(Self {
            members,
            leader,
            offsets,
        })
    }
}

/// Propagates a group: `x_i' = f(leader) + (x_i - leader) + G n_i`.
///
/// `noise` is either empty (noiseless) or holds one acceleration draw per
/// member.
pub fn group_step(
    members: &[KinematicState],
    model: &MotionModel,
    noise: &[Accel],
) -> Result<Vec<KinematicState>> {
    model.validate()?;
    if !noise.is_empty() && noise.len() != members.len() {
        return Err(Error::Shape(format!(
            "{} noise draws for {} members",
            noise.len(),
            members.len()
        )));
    }
    for m in members {
        m.check_finite()?;
    }
    let ctx = GroupContext::new(members.to_vec())?;
    let moved = model.transition(ctx.leader);
    Ok(ctx
        .offsets
        .iter()
        .enumerate()
        .map(|(i, &off)| {
            let det = moved + off;
            match noise.get(i) {
                Some(&n) => det + noise_increment(model.dt, n),
                None => det,
            }
        })
        .collect())
}
