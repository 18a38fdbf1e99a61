//! Group partitions of confirmed tracks and their prior weights.
//!
//! A partition assigns every confirmed legacy track a group label `1..=N`;
//! unconfirmed tracks carry label `0` and are never grouped. Partitions are
//! scored with the distance-based membership probability
//! `P_ij = exp(-d_ij / 2)` between a track and the virtual leader of group
//! `j`, where `d_ij` is the Mahalanobis distance under the summed covariance
//! of the track and the group's average covariance.
//!
//! The full partition space grows with the Bell numbers, so candidates are
//! drawn from a gated neighborhood (see [`generate_candidates`]) and only the
//! `M` best survive into the filter.

use std::cmp::Ordering;
use std::collections::{HashMap, HashSet};

use nalgebra::Matrix4;
use serde::{Deserialize, Serialize};

use crate::error::{config_err, Error, Result};
use crate::motion::KinematicState;

/// Regularization added to every sample covariance before inversion.
pub const COVARIANCE_JITTER: f64 = 1e-6;

/// Canonical group-label vector over the legacy tracks.
#[derive(Debug, Clone, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct GroupPartition {
    labels: Vec<u32>,
}

impl GroupPartition {
    /// Relabels nonzero groups in order of first appearance, starting at 1.
    pub fn canonicalize(raw: &[u32]) -> Self {
        let mut map: HashMap<u32, u32> = HashMap::new();
        let labels = raw
            .iter()
            .map(|&l| {
                if l == 0 {
                    0
                } else {
                    let next = map.len() as u32 + 1;
                    *map.entry(l).or_insert(next)
                }
            })
            .collect();
        Self { labels }
    }

    /// Every confirmed track in its own group.
    pub fn singletons(confirmed: &[bool]) -> Self {
        let mut next = 0;
        let labels = confirmed
            .iter()
            .map(|&c| {
                if c {
                    next += 1;
                    next
                } else {
                    0
                }
            })
            .collect();
        Self { labels }
    }

    /// No groups at all; every track is propagated on its own.
    pub fn ungrouped(n: usize) -> Self {
        Self { labels: vec![0; n] }
    }

    pub fn labels(&self) -> &[u32] {
        &self.labels
    }

    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    /// `N(g)`, the number of groups.
    pub fn num_groups(&self) -> usize {
        self.labels.iter().copied().max().unwrap_or(0) as usize
    }

    /// Member indices per group; entry `j - 1` holds group `j`.
    pub fn groups(&self) -> Vec<Vec<usize>> {
        let mut out = vec![Vec::new(); self.num_groups()];
        for (i, &l) in self.labels.iter().enumerate() {
            if l > 0 {
                out[l as usize - 1].push(i);
            }
        }
        out
    }

    pub fn is_canonical(&self) -> bool {
        *self == Self::canonicalize(&self.labels)
    }
}

/// Point estimate and spread of one legacy track at the previous step.
#[derive(Debug, Clone, PartialEq)]
pub struct TrackSummary {
    pub id: u64,
    pub estimate: KinematicState,
    pub covariance: Matrix4<f64>,
    /// Sum of particle weights, the existence probability.
    pub existence: f64,
    pub confirmed: bool,
}

impl TrackSummary {
    /// Weighted mean and sample covariance (plus jitter) of a particle cloud.
    pub fn from_particles(
        id: u64,
        states: &[KinematicState],
        weights: &[f64],
        confirmed: bool,
    ) -> Self {
        let total: f64 = weights.iter().sum();
        let (estimate, mut covariance) = if total > 0.0 {
            let mut mean = KinematicState::ZERO;
            for (s, &w) in states.iter().zip(weights) {
                mean += *s * (w / total);
            }
            let m = mean.to_vector();
            let mut cov = Matrix4::zeros();
            for (s, &w) in states.iter().zip(weights) {
                let d = s.to_vector() - m;
                cov += d * d.transpose() * (w / total);
            }
            (mean, cov)
        } else {
            (KinematicState::ZERO, Matrix4::zeros())
        };
        covariance += Matrix4::identity() * COVARIANCE_JITTER;
        Self {
            id,
            estimate,
            covariance,
            existence: total.clamp(0.0, 1.0),
            confirmed,
        }
    }
}

/// Borrowed particle cloud used by the per-particle partition weights.
#[derive(Debug, Clone, Copy)]
pub struct ParticleView<'a> {
    pub states: &'a [KinematicState],
    pub weights: &'a [f64],
}

/// The preserved partitions together with their prior and posterior weights.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct PartitionHypothesisSet {
    /// Track ids the label vectors refer to, in label order.
    pub track_ids: Vec<u64>,
    pub partitions: Vec<GroupPartition>,
    /// α̃(g)
    pub prior_weights: Vec<f64>,
    /// p̃(g)
    pub posterior_weights: Vec<f64>,
}

impl PartitionHypothesisSet {
    pub fn single(track_ids: Vec<u64>, partition: GroupPartition) -> Self {
        Self {
            track_ids,
            partitions: vec![partition],
            prior_weights: vec![1.0],
            posterior_weights: vec![1.0],
        }
    }

    pub fn len(&self) -> usize {
        self.partitions.len()
    }

    pub fn is_empty(&self) -> bool {
        self.partitions.is_empty()
    }

    /// Index of the highest-posterior partition.
    pub fn best(&self) -> Option<usize> {
        (0..self.len()).max_by(|&a, &b| {
            self.posterior_weights[a]
                .total_cmp(&self.posterior_weights[b])
                .then_with(|| self.partitions[b].cmp(&self.partitions[a]))
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GroupingParams {
    /// Membership probability assigned to a nonexistent track.
    pub p0: f64,
    /// Gating threshold on the pairwise Mahalanobis distance.
    pub gate: f64,
    pub max_candidates: usize,
    /// Number of partitions preserved per step.
    pub m_best: usize,
}

impl Default for GroupingParams {
    fn default() -> Self {
        Self {
            p0: 0.001,
            gate: 25.0,
            max_candidates: 64,
            m_best: 2,
        }
    }
}

impl GroupingParams {
    pub fn validate(&self) -> Result<()> {
        if !(0.0..=1.0).contains(&self.p0) {
            return Err(config_err("p0", "must lie in [0, 1]"));
        }
        if !(self.gate > 0.0) {
            return Err(config_err("gate", "must be > 0"));
        }
        if self.m_best < 1 {
            return Err(config_err("m_best", "must be >= 1"));
        }
        if self.max_candidates < 1 {
            return Err(config_err("max_candidates", "must be >= 1"));
        }
        Ok(())
    }
}

/// `δᵀ Σ⁻¹ δ` via Cholesky.
pub fn mahalanobis(delta: &KinematicState, cov: &Matrix4<f64>) -> Result<f64> {
    let chol = cov.cholesky().ok_or(Error::SingularCovariance)?;
    let d = delta.to_vector();
    let y = chol.solve(&d);
    let v = d.dot(&y);
    if v.is_finite() {
        Ok(v.max(0.0))
    } else {
        Err(Error::SingularCovariance)
    }
}

/// Probability that a track belongs to a group with the given leader.
///
/// A nonexistent track gets the constant `p0`; otherwise the result is
/// `exp(-d/2)` with `d` the Mahalanobis distance under
/// `track.covariance + leader_cov`, floored at the smallest positive `f64`
/// so that it never reaches zero.
pub fn membership_prob(
    track: &TrackSummary,
    leader: &KinematicState,
    leader_cov: &Matrix4<f64>,
    exists: bool,
    p0: f64,
) -> Result<f64> {
    if !exists {
        return Ok(p0);
    }
    Ok(log_membership_prob(track, leader, leader_cov)?
        .exp()
        .max(f64::MIN_POSITIVE))
}

/// `ln P = -d/2` for an existing track.
fn log_membership_prob(
    track: &TrackSummary,
    leader: &KinematicState,
    leader_cov: &Matrix4<f64>,
) -> Result<f64> {
    let d = mahalanobis(&(track.estimate - *leader), &(track.covariance + leader_cov))?;
    Ok(-d / 2.0)
}

struct GroupStat {
    leader: KinematicState,
    cov: Matrix4<f64>,
}

/// Memoizes group leaders and track-to-leader probabilities across
/// candidate partitions, which share most of their groups.
struct Scorer<'a> {
    tracks: &'a [TrackSummary],
    p0: f64,
    group_ids: HashMap<Vec<usize>, usize>,
    stats: Vec<GroupStat>,
    probs: HashMap<(usize, usize), f64>,
}

impl<'a> Scorer<'a> {
    fn new(tracks: &'a [TrackSummary], p0: f64) -> Self {
        Self {
            tracks,
            p0,
            group_ids: HashMap::new(),
            stats: Vec::new(),
            probs: HashMap::new(),
        }
    }

    fn check(&self, partition: &GroupPartition) -> Result<()> {
        if partition.len() != self.tracks.len() {
            return Err(Error::InvalidPartition(format!(
                "{} labels for {} tracks",
                partition.len(),
                self.tracks.len()
            )));
        }
        for (t, &l) in self.tracks.iter().zip(partition.labels()) {
            if t.confirmed && l == 0 {
                return Err(Error::InvalidPartition(format!(
                    "confirmed track {} is not grouped",
                    t.id
                )));
            }
        }
        Ok(())
    }

    fn group_id(&mut self, members: &[usize]) -> usize {
        if let Some(&g) = self.group_ids.get(members) {
            return g;
        }
        let n = members.len() as f64;
        let mut leader = KinematicState::ZERO;
        let mut cov = Matrix4::zeros();
        for &i in members {
            leader += self.tracks[i].estimate;
            cov += self.tracks[i].covariance;
        }
        let id = self.stats.len();
        self.stats.push(GroupStat {
            leader: leader * (1.0 / n),
            cov: cov / n,
        });
        self.group_ids.insert(members.to_vec(), id);
        id
    }

    fn log_prob(&mut self, track: usize, group: usize) -> Result<f64> {
        if let Some(&p) = self.probs.get(&(track, group)) {
            return Ok(p);
        }
        let st = &self.stats[group];
        let p = log_membership_prob(&self.tracks[track], &st.leader, &st.cov)?;
        self.probs.insert((track, group), p);
        Ok(p)
    }

    fn group_ids_of(&mut self, partition: &GroupPartition) -> Vec<usize> {
        partition
            .groups()
            .iter()
            .map(|members| self.group_id(members))
            .collect()
    }

    /// `ln[P_{i,g(i)} Π_{j≠g(i)} (1 - P_ij)]` for every grouped track.
    fn log_membership(
        &mut self,
        partition: &GroupPartition,
        gids: &[usize],
    ) -> Result<Vec<(usize, f64)>> {
        let mut out = Vec::new();
        for (i, &l) in partition.labels().iter().enumerate() {
            if l == 0 {
                continue;
            }
            let own = l as usize - 1;
            let mut ls = self.log_prob(i, gids[own])?;
            for (j, &gid) in gids.iter().enumerate() {
                if j != own {
                    ls += (-self.log_prob(i, gid)?.exp()).ln_1p();
                }
            }
            out.push((i, ls));
        }
        Ok(out)
    }

    fn log_pmf_score(&mut self, partition: &GroupPartition) -> Result<f64> {
        self.check(partition)?;
        let partition = &GroupPartition::canonicalize(partition.labels());
        let gids = self.group_ids_of(partition);
        Ok(self
            .log_membership(partition, &gids)?
            .into_iter()
            .map(|(_, l)| l)
            .sum())
    }

    /// Unnormalized log α̃(g) from track estimates.
    fn log_alpha_estimate(&mut self, partition: &GroupPartition) -> Result<f64> {
        self.check(partition)?;
        let partition = &GroupPartition::canonicalize(partition.labels());
        let gids = self.group_ids_of(partition);
        let n_groups = gids.len();
        let mut total = 0.0;
        for (i, ls) in self.log_membership(partition, &gids)? {
            let r = self.tracks[i].existence;
            total += log_alpha_term(self.p0, n_groups, r, ls);
        }
        Ok(total)
    }

    /// Unnormalized log α̃(g) with the membership evaluated per particle.
    fn log_alpha_particles(
        &mut self,
        partition: &GroupPartition,
        particles: &[ParticleView<'_>],
    ) -> Result<f64> {
        self.check(partition)?;
        let partition = &GroupPartition::canonicalize(partition.labels());
        let gids = self.group_ids_of(partition);
        let n_groups = gids.len();
        let mut total = 0.0;
        for (i, &l) in partition.labels().iter().enumerate() {
            if l == 0 {
                continue;
            }
            let own = l as usize - 1;
            let track = &self.tracks[i];
            let cloud = particles[i];
            let chols = gids
                .iter()
                .map(|&g| {
                    (track.covariance + self.stats[g].cov)
                        .cholesky()
                        .ok_or(Error::SingularCovariance)
                })
                .collect::<Result<Vec<_>>>()?;
            let mut mass = 0.0;
            for (x, &w) in cloud.states.iter().zip(cloud.weights) {
                if w == 0.0 {
                    continue;
                }
                let mut v = w;
                for (j, &g) in gids.iter().enumerate() {
                    let d = (*x - self.stats[g].leader).to_vector();
                    let p = (-d.dot(&chols[j].solve(&d)) / 2.0).exp();
                    v *= if j == own { p } else { 1.0 - p };
                }
                mass += v;
            }
            let r: f64 = cloud.weights.iter().sum();
            let absent = self.p0 * (1.0 - self.p0).powi(n_groups as i32 - 1) * (1.0 - r).max(0.0);
            total += (absent + mass).ln();
        }
        Ok(total)
    }
}

fn log_alpha_term(p0: f64, n_groups: usize, existence: f64, log_membership: f64) -> f64 {
    let absent = p0 * (1.0 - p0).powi(n_groups as i32 - 1) * (1.0 - existence).max(0.0);
    let present = existence * log_membership.exp();
    if present > 0.0 && absent > 0.0 && present.is_finite() {
        (absent + present).ln()
    } else if absent > 0.0 {
        // exp underflowed: fall back to log-sum-exp
        let a = absent.ln();
        let b = existence.ln() + log_membership;
        let m = a.max(b);
        m + ((a - m).exp() + (b - m).exp()).ln()
    } else {
        existence.ln() + log_membership
    }
}

/// Normalizes log weights. Returns uniform weights and `true` if every
/// weight is zero.
pub fn normalize_log_weights(logw: &[f64]) -> (Vec<f64>, bool) {
    if logw.is_empty() {
        return (Vec::new(), false);
    }
    let max = logw.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    if !max.is_finite() {
        let u = 1.0 / logw.len() as f64;
        return (vec![u; logw.len()], true);
    }
    let raw: Vec<f64> = logw.iter().map(|&l| (l - max).exp()).collect();
    let sum: f64 = raw.iter().sum();
    (raw.into_iter().map(|w| w / sum).collect(), false)
}

/// Normalized weights produced by [`partition_pmf`].
#[derive(Debug, Clone, PartialEq)]
pub struct PartitionWeights {
    pub weights: Vec<f64>,
    /// All scores were zero; the weights fell back to uniform.
    pub uniform_fallback: bool,
}

/// Pseudo group-structure pmf over `candidates`.
pub fn partition_pmf(
    tracks: &[TrackSummary],
    candidates: &[GroupPartition],
    p0: f64,
) -> Result<PartitionWeights> {
    if candidates.is_empty() {
        return Err(Error::InvalidPartition("no candidate partitions".into()));
    }
    let mut scorer = Scorer::new(tracks, p0);
    let logw = candidates
        .iter()
        .map(|g| scorer.log_pmf_score(g))
        .collect::<Result<Vec<_>>>()?;
    let (weights, uniform_fallback) = normalize_log_weights(&logw);
    Ok(PartitionWeights {
        weights,
        uniform_fallback,
    })
}

/// α̃(g) for every candidate, reduced to the `m_best` highest and
/// renormalized. Passing `particles` switches to the per-particle form.
///
/// Ties are broken by lexicographic order of the canonical labels.
pub fn predict_partition_weights(
    tracks: &[TrackSummary],
    candidates: &[GroupPartition],
    params: &GroupingParams,
    particles: Option<&[ParticleView<'_>]>,
) -> Result<(PartitionHypothesisSet, bool)> {
    if params.m_best < 1 {
        return Err(config_err("m_best", "must be >= 1"));
    }
    if candidates.is_empty() {
        return Err(Error::InvalidPartition("no candidate partitions".into()));
    }
    if let Some(p) = particles {
        if p.len() != tracks.len() {
            return Err(Error::Shape(format!(
                "{} particle clouds for {} tracks",
                p.len(),
                tracks.len()
            )));
        }
    }
    let mut scorer = Scorer::new(tracks, params.p0);
    let logw = candidates
        .iter()
        .map(|g| match particles {
            Some(p) => scorer.log_alpha_particles(g, p),
            None => scorer.log_alpha_estimate(g),
        })
        .collect::<Result<Vec<_>>>()?;

    let mut order: Vec<usize> = (0..candidates.len()).collect();
    order.sort_by(|&a, &b| match logw[b].total_cmp(&logw[a]) {
        Ordering::Equal => candidates[a].cmp(&candidates[b]),
        o => o,
    });
    order.truncate(params.m_best);

    let kept: Vec<f64> = order.iter().map(|&i| logw[i]).collect();
    let (weights, degenerate) = normalize_log_weights(&kept);
    Ok((
        PartitionHypothesisSet {
            track_ids: tracks.iter().map(|t| t.id).collect(),
            partitions: order.iter().map(|&i| candidates[i].clone()).collect(),
            prior_weights: weights.clone(),
            posterior_weights: weights,
        },
        degenerate,
    ))
}

struct DisjointSet(Vec<usize>);

impl DisjointSet {
    fn new(n: usize) -> Self {
        Self((0..n).collect())
    }

    fn find(&mut self, i: usize) -> usize {
        let mut root = i;
        while self.0[root] != root {
            root = self.0[root];
        }
        let mut cur = i;
        while self.0[cur] != root {
            let next = self.0[cur];
            self.0[cur] = root;
            cur = next;
        }
        root
    }

    fn union(&mut self, a: usize, b: usize) {
        let (ra, rb) = (self.find(a), self.find(b));
        if ra != rb {
            self.0[ra.max(rb)] = ra.min(rb);
        }
    }
}

fn labels_from_groups(n: usize, groups: &[Vec<usize>]) -> GroupPartition {
    let mut raw = vec![0u32; n];
    for (j, g) in groups.iter().enumerate() {
        for &i in g {
            raw[i] = j as u32 + 1;
        }
    }
    GroupPartition::canonicalize(&raw)
}

/// Splits a group in two by cutting the heaviest edge of its minimum
/// spanning tree under `dist`.
fn mst_split(members: &[usize], dist: &[Vec<f64>]) -> (Vec<usize>, Vec<usize>) {
    let k = members.len();
    let mut in_tree = vec![false; k];
    let mut best = vec![f64::INFINITY; k];
    let mut parent = vec![usize::MAX; k];
    best[0] = 0.0;
    let mut edges = Vec::with_capacity(k - 1);
    for _ in 0..k {
        let u = (0..k)
            .filter(|&v| !in_tree[v])
            .min_by(|&a, &b| best[a].total_cmp(&best[b]))
            .unwrap();
        in_tree[u] = true;
        if parent[u] != usize::MAX {
            edges.push((parent[u], u, best[u]));
        }
        for v in 0..k {
            let d = dist[members[u]][members[v]];
            if !in_tree[v] && d < best[v] {
                best[v] = d;
                parent[v] = u;
            }
        }
    }
    let cut = edges
        .iter()
        .enumerate()
        .max_by(|a, b| a.1 .2.total_cmp(&b.1 .2).then(b.0.cmp(&a.0)))
        .map(|(e, _)| e)
        .unwrap();
    let mut ds = DisjointSet::new(k);
    for (e, &(a, b, _)) in edges.iter().enumerate() {
        if e != cut {
            ds.union(a, b);
        }
    }
    let root = ds.find(0);
    let (mut left, mut right) = (Vec::new(), Vec::new());
    for (v, &m) in members.iter().enumerate() {
        if ds.find(v) == root {
            left.push(m);
        } else {
            right.push(m);
        }
    }
    (left, right)
}

/// Candidate partitions of the confirmed tracks.
///
/// Always contains the connected components of the gating graph (edge when
/// the pairwise Mahalanobis distance is below `params.gate`), the
/// all-singletons partition and the previously preserved partitions mapped
/// onto the current tracks. The remaining budget up to
/// `params.max_candidates` is filled with one-group splits and merges of the
/// component partition.
pub fn generate_candidates(
    tracks: &[TrackSummary],
    previous: Option<&PartitionHypothesisSet>,
    params: &GroupingParams,
) -> Result<Vec<GroupPartition>> {
    if !(params.gate > 0.0) {
        return Err(config_err("gate", "must be > 0"));
    }
    let n = tracks.len();
    let confirmed: Vec<usize> = (0..n).filter(|&i| tracks[i].confirmed).collect();
    if confirmed.is_empty() {
        return Ok(vec![GroupPartition::ungrouped(n)]);
    }

    let mut dist = vec![vec![0.0; n]; n];
    for (a, &i) in confirmed.iter().enumerate() {
        for &j in &confirmed[a + 1..] {
            let d = mahalanobis(
                &(tracks[i].estimate - tracks[j].estimate),
                &(tracks[i].covariance + tracks[j].covariance),
            )?;
            dist[i][j] = d;
            dist[j][i] = d;
        }
    }

    let mut ds = DisjointSet::new(n);
    for (a, &i) in confirmed.iter().enumerate() {
        for &j in &confirmed[a + 1..] {
            if dist[i][j] < params.gate {
                ds.union(i, j);
            }
        }
    }
    let mut comp_of: HashMap<usize, usize> = HashMap::new();
    let mut components: Vec<Vec<usize>> = Vec::new();
    for &i in &confirmed {
        let root = ds.find(i);
        let c = *comp_of.entry(root).or_insert_with(|| {
            components.push(Vec::new());
            components.len() - 1
        });
        components[c].push(i);
    }

    let mut seen: HashSet<GroupPartition> = HashSet::new();
    let mut out: Vec<GroupPartition> = Vec::new();
    let mut push = |g: GroupPartition, out: &mut Vec<GroupPartition>| {
        if seen.insert(g.clone()) {
            out.push(g);
        }
    };

    let is_confirmed: Vec<bool> = tracks.iter().map(|t| t.confirmed).collect();
    push(labels_from_groups(n, &components), &mut out);
    push(GroupPartition::singletons(&is_confirmed), &mut out);

    if let Some(prev) = previous {
        for part in &prev.partitions {
            let by_id: HashMap<u64, u32> = prev
                .track_ids
                .iter()
                .zip(part.labels())
                .filter(|(_, &l)| l > 0)
                .map(|(&id, &l)| (id, l))
                .collect();
            let mut fresh = part.num_groups() as u32;
            let raw: Vec<u32> = tracks
                .iter()
                .map(|t| {
                    if !t.confirmed {
                        0
                    } else if let Some(&l) = by_id.get(&t.id) {
                        l
                    } else {
                        fresh += 1;
                        fresh
                    }
                })
                .collect();
            push(GroupPartition::canonicalize(&raw), &mut out);
        }
    }
    let required = out.len();

    let mut extra: Vec<GroupPartition> = Vec::new();
    // one-group splits at the weakest spanning-tree link
    for (c, members) in components.iter().enumerate() {
        if members.len() < 2 {
            continue;
        }
        let (a, b) = mst_split(members, &dist);
        let mut groups: Vec<Vec<usize>> = components.clone();
        groups[c] = a;
        groups.push(b);
        extra.push(labels_from_groups(n, &groups));
    }
    // merges of two components, closest first
    let mut pairs: Vec<(f64, usize, usize)> = Vec::new();
    for a in 0..components.len() {
        for b in a + 1..components.len() {
            let d = components[a]
                .iter()
                .flat_map(|&i| components[b].iter().map(move |&j| (i, j)))
                .map(|(i, j)| dist[i][j])
                .fold(f64::INFINITY, f64::min);
            pairs.push((d, a, b));
        }
    }
    pairs.sort_by(|x, y| x.0.total_cmp(&y.0).then((x.1, x.2).cmp(&(y.1, y.2))));
    for &(_, a, b) in &pairs {
        let mut groups: Vec<Vec<usize>> = Vec::new();
        for (c, m) in components.iter().enumerate() {
            if c == b {
                continue;
            }
            let mut m = m.clone();
            if c == a {
                m.extend(&components[b]);
            }
            groups.push(m);
        }
        extra.push(labels_from_groups(n, &groups));
    }
    // detaching one member of a group of three or more
    for (c, members) in components.iter().enumerate() {
        if members.len() < 3 {
            continue;
        }
        for &i in members {
            let mut groups = components.clone();
            groups[c].retain(|&x| x != i);
            groups.push(vec![i]);
            extra.push(labels_from_groups(n, &groups));
        }
    }

    let cap = params.max_candidates.max(required);
    for g in extra {
        if out.len() >= cap {
            break;
        }
        push(g, &mut out);
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn track(id: u64, px: f64, py: f64, var: f64) -> TrackSummary {
        TrackSummary {
            id,
            estimate: KinematicState::new(px, 10.0, py, 0.0),
            covariance: Matrix4::identity() * var,
            existence: 1.0,
            confirmed: true,
        }
    }

    fn gp(l: &[u32]) -> GroupPartition {
        GroupPartition::canonicalize(l)
    }

    #[test]
    fn canonicalize_examples() {
        assert_eq!(gp(&[2, 2, 5, 0]).labels(), &[1, 1, 2, 0]);
        assert_eq!(gp(&[1, 1, 2, 3, 3, 0]).labels(), &[1, 1, 2, 3, 3, 0]);
        let g = gp(&[1, 1, 2, 3, 3, 0]);
        assert_eq!(g.num_groups(), 3);
        assert_eq!(g.groups(), vec![vec![0, 1], vec![2], vec![3, 4]]);
    }

    #[test]
    fn canonicalize_idempotent_random() {
        use rand::{Rng, SeedableRng};
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(11);
        for _ in 0..1000 {
            let n = rng.random_range(0..12);
            let raw: Vec<u32> = (0..n).map(|_| rng.random_range(0..6)).collect();
            let once = GroupPartition::canonicalize(&raw);
            assert_eq!(GroupPartition::canonicalize(once.labels()), once);
            assert!(once.is_canonical());
        }
    }

    #[test]
    fn membership_examples() {
        let t = track(1, 10.0, 20.0, 4.0);
        let p = membership_prob(&t, &t.estimate, &Matrix4::identity(), true, 0.001).unwrap();
        assert_eq!(p, 1.0);
        let p = membership_prob(&t, &t.estimate, &Matrix4::identity(), false, 0.001).unwrap();
        assert_eq!(p, 0.001);
        // d = 2: offset 1 along px with unit total variance, scaled by 2
        let mut t2 = track(2, 0.0, 0.0, 0.5);
        t2.estimate = KinematicState::new(2f64.sqrt(), 0.0, 0.0, 0.0);
        let p = membership_prob(&t2, &KinematicState::ZERO, &(Matrix4::identity() * 0.5), true, 0.0)
            .unwrap();
        assert!((p - (-1f64).exp()).abs() < 1e-12);
        assert!((p - 0.367879).abs() < 1e-6);
    }

    #[test]
    fn membership_singular_covariance() {
        let mut t = track(1, 0.0, 0.0, 0.0);
        t.covariance = Matrix4::zeros();
        let r = membership_prob(&t, &KinematicState::ZERO, &Matrix4::zeros(), true, 0.001);
        assert_eq!(r, Err(Error::SingularCovariance));
    }

    #[test]
    fn pmf_single_candidate() {
        let t = [track(1, 0.0, 0.0, 10.0)];
        let w = partition_pmf(&t, &[gp(&[1])], 0.001).unwrap();
        assert_eq!(w.weights, vec![1.0]);
    }

    #[test]
    fn pmf_prefers_split_for_separated_tracks() {
        let t = [track(1, 0.0, 0.0, 10.0), track(2, 500.0, 0.0, 10.0)];
        let w = partition_pmf(&t, &[gp(&[1, 2]), gp(&[1, 1])], 0.001).unwrap();
        assert!(w.weights[0] > w.weights[1]);
        assert!((w.weights.iter().sum::<f64>() - 1.0).abs() < 1e-12);
    }

    #[test]
    fn pmf_merged_weight_matches_hand_value() {
        // two tracks 2 m apart on x, unit variance each: leader in the middle,
        // d to leader = 1 / (1 + 1) = 0.5 for each
        let t = [track(1, 0.0, 0.0, 1.0), track(2, 2.0, 0.0, 1.0)];
        let merged = (-0.25f64).exp().powi(2);
        // split: own P = 1, cross d = 4 / 2 = 2
        let split = (1.0 - (-1f64).exp()).powi(2);
        let w = partition_pmf(&t, &[gp(&[1, 1]), gp(&[1, 2])], 0.001).unwrap();
        let expect = merged / (merged + split);
        assert!((w.weights[0] - expect).abs() < 1e-9, "{} vs {}", w.weights[0], expect);
    }

    #[test]
    fn pmf_rejects_ungrouped_confirmed_track() {
        let t = [track(1, 0.0, 0.0, 1.0), track(2, 2.0, 0.0, 1.0)];
        assert!(partition_pmf(&t, &[gp(&[1, 0])], 0.001).is_err());
    }

    #[test]
    fn pmf_all_zero_falls_back_to_uniform() {
        // identical estimates: the cross term 1 - P = 0 kills the split
        let t = [track(1, 0.0, 0.0, 1.0), track(2, 0.0, 0.0, 1.0)];
        let w = partition_pmf(&t, &[gp(&[1, 2])], 0.001).unwrap();
        assert!(w.uniform_fallback);
        assert_eq!(w.weights, vec![1.0]);
    }

    #[test]
    fn alpha_with_full_existence_equals_pmf() {
        let t = [
            track(1, 0.0, 0.0, 50.0),
            track(2, 30.0, 0.0, 50.0),
            track(3, 70.0, 10.0, 50.0),
        ];
        let cands = [gp(&[1, 1, 1]), gp(&[1, 1, 2]), gp(&[1, 2, 3]), gp(&[1, 2, 2])];
        let pmf = partition_pmf(&t, &cands, 0.001).unwrap().weights;
        let params = GroupingParams { m_best: 4, ..Default::default() };
        let (set, _) = predict_partition_weights(&t, &cands, &params, None).unwrap();
        for (g, w) in set.partitions.iter().zip(&set.prior_weights) {
            let k = cands.iter().position(|c| c == g).unwrap();
            assert!((w - pmf[k]).abs() < 1e-12);
        }
    }

    #[test]
    fn alpha_single_track_is_one() {
        let mut t = [track(1, 0.0, 0.0, 1.0)];
        t[0].existence = 0.3;
        let (set, _) =
            predict_partition_weights(&t, &[gp(&[1])], &GroupingParams::default(), None).unwrap();
        assert_eq!(set.prior_weights, vec![1.0]);
    }

    #[test]
    fn alpha_m1_picks_argmax() {
        let t = [
            track(1, 0.0, 0.0, 50.0),
            track(2, 30.0, 0.0, 50.0),
            track(3, 70.0, 10.0, 50.0),
        ];
        let cands = [gp(&[1, 1, 1]), gp(&[1, 1, 2]), gp(&[1, 2, 3]), gp(&[1, 2, 2])];
        let all = GroupingParams { m_best: 4, ..Default::default() };
        let (full, _) = predict_partition_weights(&t, &cands, &all, None).unwrap();
        let one = GroupingParams { m_best: 1, ..Default::default() };
        let (best, _) = predict_partition_weights(&t, &cands, &one, None).unwrap();
        let k = (0..4)
            .max_by(|&a, &b| full.prior_weights[a].total_cmp(&full.prior_weights[b]))
            .unwrap();
        assert_eq!(best.partitions, vec![full.partitions[k].clone()]);
        assert_eq!(best.prior_weights, vec![1.0]);
    }

    #[test]
    fn alpha_rejects_zero_m() {
        let t = [track(1, 0.0, 0.0, 1.0)];
        let p = GroupingParams { m_best: 0, ..Default::default() };
        assert!(matches!(
            predict_partition_weights(&t, &[gp(&[1])], &p, None),
            Err(Error::Config { .. })
        ));
    }

    #[test]
    fn alpha_particle_form_close_to_estimate_form_for_tight_clouds() {
        let t = [track(1, 0.0, 0.0, 20.0), track(2, 10.0, 0.0, 20.0)];
        let s0 = [t[0].estimate; 3];
        let s1 = [t[1].estimate; 3];
        let w = [1.0 / 3.0; 3];
        let views = [
            ParticleView { states: &s0, weights: &w },
            ParticleView { states: &s1, weights: &w },
        ];
        let cands = [gp(&[1, 1]), gp(&[1, 2])];
        let p = GroupingParams { m_best: 2, ..Default::default() };
        let (a, _) = predict_partition_weights(&t, &cands, &p, None).unwrap();
        let (b, _) = predict_partition_weights(&t, &cands, &p, Some(&views)).unwrap();
        assert_eq!(a.partitions, b.partitions);
        for (x, y) in a.prior_weights.iter().zip(&b.prior_weights) {
            assert!((x - y).abs() < 1e-9);
        }
    }

    #[test]
    fn candidates_degenerate_inputs() {
        assert_eq!(
            generate_candidates(&[], None, &GroupingParams::default()).unwrap(),
            vec![GroupPartition::ungrouped(0)]
        );
        let mut t = track(1, 0.0, 0.0, 1.0);
        t.confirmed = false;
        assert_eq!(
            generate_candidates(&[t], None, &GroupingParams::default()).unwrap(),
            vec![GroupPartition::ungrouped(1)]
        );
    }

    #[test]
    fn candidates_two_close_tracks() {
        let t = [track(1, 0.0, 0.0, 50.0), track(2, 20.0, 0.0, 50.0)];
        let c = generate_candidates(&t, None, &GroupingParams::default()).unwrap();
        assert!(c.contains(&gp(&[1, 1])));
        assert!(c.contains(&gp(&[1, 2])));
    }

    #[test]
    fn candidates_keep_previous_hypotheses() {
        let t = [
            track(10, 0.0, 0.0, 1.0),
            track(11, 1000.0, 0.0, 1.0),
            track(12, 2000.0, 0.0, 1.0),
        ];
        let prev = PartitionHypothesisSet {
            track_ids: vec![11, 10],
            partitions: vec![gp(&[1, 1])],
            prior_weights: vec![1.0],
            posterior_weights: vec![1.0],
        };
        let c = generate_candidates(&t, Some(&prev), &GroupingParams::default()).unwrap();
        // 10 and 11 grouped as before, 12 newly confirmed gets its own group
        assert!(c.contains(&gp(&[1, 1, 2])));
    }

    #[test]
    fn candidates_respect_cap() {
        let t: Vec<_> = (0..8).map(|i| track(i, i as f64 * 15.0, 0.0, 50.0)).collect();
        let p = GroupingParams { max_candidates: 6, ..Default::default() };
        let c = generate_candidates(&t, None, &p).unwrap();
        assert!(c.len() <= 6);
        assert!(c.contains(&gp(&[1; 8])));
        assert!(c.contains(&GroupPartition::singletons(&[true; 8])));
    }

    #[test]
    fn mst_split_cuts_largest_gap() {
        let t = [
            track(1, 0.0, 0.0, 50.0),
            track(2, 10.0, 0.0, 50.0),
            track(3, 60.0, 0.0, 50.0),
            track(4, 70.0, 0.0, 50.0),
        ];
        let p = GroupingParams { gate: 1e6, ..Default::default() };
        let c = generate_candidates(&t, None, &p).unwrap();
        assert_eq!(c[0], gp(&[1, 1, 1, 1]));
        assert!(c.contains(&gp(&[1, 1, 2, 2])));
    }

    fn arb_tracks() -> impl Strategy<Value = Vec<TrackSummary>> {
        prop::collection::vec((-200.0..200f64, -200.0..200f64, 5.0..200f64, 0.05..1.0f64), 1..6)
            .prop_map(|v| {
                v.into_iter()
                    .enumerate()
                    .map(|(i, (x, y, var, r))| {
                        let mut t = track(i as u64, x, y, var);
                        t.existence = r;
                        t
                    })
                    .collect()
            })
    }

    proptest! {
        #[test]
        fn pmf_label_permutation_invariant(tracks in arb_tracks(), seed in 0u64..1000) {
            let n = tracks.len();
            let raw: Vec<u32> = (0..n).map(|i| ((seed >> (i * 2)) % 3) as u32 + 1).collect();
            let perm: Vec<u32> = raw.iter().map(|&l| 10 - l).collect();
            let canon = gp(&raw);
            let other = GroupPartition { labels: perm };
            let singles = GroupPartition::singletons(&vec![true; n]);
            let a = partition_pmf(&tracks, &[canon, singles.clone()], 0.001).unwrap();
            let b = partition_pmf(&tracks, &[other, singles], 0.001).unwrap();
            prop_assert!((a.weights[0] - b.weights[0]).abs() < 1e-12);
        }

        #[test]
        fn alpha_normalized_and_top_m(tracks in arb_tracks(), m in 1usize..5) {
            let params = GroupingParams { m_best: m, ..Default::default() };
            let cands = generate_candidates(&tracks, None, &params).unwrap();
            let (set, _) = predict_partition_weights(&tracks, &cands, &params, None).unwrap();
            prop_assert!(set.len() <= m);
            prop_assert!((set.prior_weights.iter().sum::<f64>() - 1.0).abs() < 1e-12);
            let mut uniq = set.partitions.clone();
            uniq.dedup();
            prop_assert_eq!(uniq.len(), set.len());
            // every dropped candidate scores no higher than every kept one
            let all = GroupingParams { m_best: cands.len(), ..params };
            let (full, _) = predict_partition_weights(&tracks, &cands, &all, None).unwrap();
            let kept_min = set.partitions.iter()
                .map(|g| full.prior_weights[full.partitions.iter().position(|x| x == g).unwrap()])
                .fold(f64::INFINITY, f64::min);
            for (g, w) in full.partitions.iter().zip(&full.prior_weights) {
                if !set.partitions.contains(g) {
                    prop_assert!(*w <= kept_min + 1e-15);
                }
            }
        }

        #[test]
        fn membership_in_unit_interval_and_monotone(
            d1 in 0.0..50f64, d2 in 0.0..50f64, var in 0.5..100f64
        ) {
            let t = |x: f64| TrackSummary {
                id: 0,
                estimate: KinematicState::new(x, 0.0, 0.0, 0.0),
                covariance: Matrix4::identity() * var,
                existence: 1.0,
                confirmed: true,
            };
            let cov = Matrix4::identity() * var;
            let p1 = membership_prob(&t(d1), &KinematicState::ZERO, &cov, true, 0.001).unwrap();
            let p2 = membership_prob(&t(d2), &KinematicState::ZERO, &cov, true, 0.001).unwrap();
            prop_assert!(p1 > 0.0 && p1 <= 1.0);
            if d1 < d2 { prop_assert!(p1 >= p2); }
        }
    }
}
