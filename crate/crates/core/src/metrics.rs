//! OSPA and OSPA(2) errors between estimated and true track sets.
//!
//! OSPA(2) compares *tracks* rather than points: the base distance between
//! two tracks is the weighted average, over a sliding window, of the
//! per-step cut-off distance. A step where only one of the two tracks exists
//! costs `c`; steps where neither exists are skipped and do not count toward
//! the normalizer.

use std::collections::{BTreeMap, HashMap, HashSet};

use serde::{Deserialize, Serialize};

use crate::error::{config_err, Result};
use crate::sim::GroundTruth;

/// Minimum-cost assignment of every row to a distinct column.
///
/// Requires `rows ≤ cols`. Returns the column of each row and the total cost.
pub fn hungarian(cost: &[Vec<f64>]) -> (Vec<usize>, f64) {
    let n = cost.len();
    if n == 0 {
        return (Vec::new(), 0.0);
    }
    let m = cost[0].len();
    assert!(n <= m, "hungarian needs rows <= cols");
    // potentials and matching, 1-based with a sentinel column 0
    let mut u = vec![0.0; n + 1];
    let mut v = vec![0.0; m + 1];
    let mut p = vec![0usize; m + 1];
    let mut way = vec![0usize; m + 1];
    for i in 1..=n {
        p[0] = i;
        let mut j0 = 0;
        let mut minv = vec![f64::INFINITY; m + 1];
        let mut used = vec![false; m + 1];
        loop {
            used[j0] = true;
            let i0 = p[j0];
            let mut delta = f64::INFINITY;
            let mut j1 = 0;
            for j in 1..=m {
                if !used[j] {
                    let cur = cost[i0 - 1][j - 1] - u[i0] - v[j];
                    if cur < minv[j] {
                        minv[j] = cur;
                        way[j] = j0;
                    }
                    if minv[j] < delta {
                        delta = minv[j];
                        j1 = j;
                    }
                }
            }
            for j in 0..=m {
                if used[j] {
                    u[p[j]] += delta;
                    v[j] -= delta;
                } else {
                    minv[j] -= delta;
                }
            }
            j0 = j1;
            if p[j0] == 0 {
                break;
            }
        }
        loop {
            let j1 = way[j0];
            p[j0] = p[j1];
            j0 = j1;
            if j0 == 0 {
                break;
            }
        }
    }
    let mut assign = vec![0; n];
    for j in 1..=m {
        if p[j] != 0 {
            assign[p[j] - 1] = j - 1;
        }
    }
    let total = (0..n).map(|i| cost[i][assign[i]]).sum();
    (assign, total)
}

/// OSPA from a matrix of base distances `d[x][y]`, each already at most `c`.
pub fn ospa_from_costs(d: &[Vec<f64>], n_x: usize, n_y: usize, c: f64, p: f64) -> f64 {
    let big = n_x.max(n_y);
    if big == 0 {
        return 0.0;
    }
    if n_x.min(n_y) == 0 {
        return c;
    }
    let pow = |x: f64| x.min(c).powf(p);
    let matched = if n_x <= n_y {
        let costs: Vec<Vec<f64>> = d.iter().map(|r| r.iter().map(|&x| pow(x)).collect()).collect();
        hungarian(&costs).1
    } else {
        let costs: Vec<Vec<f64>> = (0..n_y)
            .map(|y| (0..n_x).map(|x| pow(d[x][y])).collect())
            .collect();
        hungarian(&costs).1
    };
    let unmatched = (big - n_x.min(n_y)) as f64 * c.powf(p);
    ((matched + unmatched) / big as f64).powf(1.0 / p).min(c)
}

/// OSPA distance of order `p` with cutoff `c` between two point sets.
pub fn ospa(a: &[[f64; 2]], b: &[[f64; 2]], c: f64, p: f64) -> f64 {
    let d: Vec<Vec<f64>> = a
        .iter()
        .map(|x| b.iter().map(|y| (x[0] - y[0]).hypot(x[1] - y[1]).min(c)).collect())
        .collect();
    ospa_from_costs(&d, a.len(), b.len(), c, p)
}

/// Planar positions of each track keyed by step.
#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct TrackSet {
    pub tracks: BTreeMap<u64, BTreeMap<usize, [f64; 2]>>,
}

impl TrackSet {
    pub fn insert(&mut self, id: u64, step: usize, pos: [f64; 2]) {
        self.tracks.entry(id).or_default().insert(step, pos);
    }

    pub fn from_truth(truth: &GroundTruth) -> Self {
        let mut out = Self::default();
        for (k, alive) in truth.steps.iter().enumerate() {
            for (id, s) in alive {
                out.insert(*id, k + 1, s.position());
            }
        }
        out
    }

    /// Ids of tracks with a position somewhere in `lo..=hi`.
    fn present_in(&self, lo: usize, hi: usize) -> Vec<u64> {
        self.tracks
            .iter()
            .filter(|(_, t)| t.range(lo..=hi).next().is_some())
            .map(|(&id, _)| id)
            .collect()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OspaParams {
    pub c: f64,
    /// Order of the window average of per-step distances.
    pub p: f64,
    /// Order of the outer OSPA over tracks.
    pub q: f64,
    pub window: usize,
    /// Per-step weights, oldest first; uniform when `None`.
    #[serde(default)]
    pub weights: Option<Vec<f64>>,
}

impl Default for OspaParams {
    fn default() -> Self {
        Self {
            c: 50.0,
            p: 1.0,
            q: 2.0,
            window: 10,
            weights: None,
        }
    }
}

impl OspaParams {
    pub fn validate(&self) -> Result<()> {
        if !(self.c > 0.0) {
            return Err(config_err("ospa.c", "must be > 0"));
        }
        if !(self.p >= 1.0 && self.q >= 1.0) {
            return Err(config_err("ospa.p", "orders must be >= 1"));
        }
        if self.window < 1 {
            return Err(config_err("ospa.window", "must be >= 1"));
        }
        if let Some(w) = &self.weights {
            if w.len() != self.window || w.iter().any(|&x| !(x >= 0.0)) {
                return Err(config_err("ospa.weights", "need one nonnegative weight per step"));
            }
            if (w.iter().sum::<f64>() - 1.0).abs() > 1e-9 {
                return Err(config_err("ospa.weights", "must sum to 1"));
            }
        }
        Ok(())
    }

    fn weight(&self, offset_from_start: usize) -> f64 {
        match &self.weights {
            Some(w) => w[offset_from_start],
            None => 1.0,
        }
    }
}

/// Windowed base distance between two tracks over steps `lo..=hi`.
fn track_distance(
    x: &BTreeMap<usize, [f64; 2]>,
    y: &BTreeMap<usize, [f64; 2]>,
    lo: usize,
    hi: usize,
    params: &OspaParams,
) -> f64 {
    let c = params.c;
    let (mut num, mut den) = (0.0, 0.0);
    // weights are indexed relative to a full window ending at `hi`
    let start = hi + 1 - params.window.min(hi);
    for t in lo..=hi {
        let d = match (x.get(&t), y.get(&t)) {
            (Some(a), Some(b)) => (a[0] - b[0]).hypot(a[1] - b[1]).min(c),
            (None, None) => continue,
            _ => c,
        };
        let w = params.weight(t - start);
        num += w * d.powf(params.p);
        den += w;
    }
    if den > 0.0 {
        (num / den).powf(1.0 / params.p)
    } else {
        0.0
    }
}

fn window(params: &OspaParams, step: usize) -> (usize, usize) {
    (step.saturating_sub(params.window - 1).max(1), step)
}

fn ospa2_between(
    truth: &TrackSet,
    t_ids: &[u64],
    est: &TrackSet,
    e_ids: &[u64],
    params: &OspaParams,
    lo: usize,
    hi: usize,
) -> f64 {
    let d: Vec<Vec<f64>> = t_ids
        .iter()
        .map(|a| {
            e_ids
                .iter()
                .map(|b| track_distance(&truth.tracks[a], &est.tracks[b], lo, hi, params))
                .collect()
        })
        .collect();
    ospa_from_costs(&d, t_ids.len(), e_ids.len(), params.c, params.q)
}

/// OSPA(2) at `step` over the window ending there.
pub fn ospa2(truth: &TrackSet, est: &TrackSet, params: &OspaParams, step: usize) -> f64 {
    let (lo, hi) = window(params, step);
    let t = truth.present_in(lo, hi);
    let e = est.present_in(lo, hi);
    ospa2_between(truth, &t, est, &e, params, lo, hi)
}

/// OSPA(2) at `step` restricted to the true tracks in `subset`.
///
/// Every estimated track in the window is attached to the true track with
/// the smallest windowed base distance, provided that distance is below
/// `c`; only estimated tracks attached to `subset` take part. Estimated
/// tracks attached to nothing are left out of every subset.
pub fn ospa2_subset(
    truth: &TrackSet,
    est: &TrackSet,
    params: &OspaParams,
    step: usize,
    subset: &HashSet<u64>,
) -> f64 {
    let (lo, hi) = window(params, step);
    let t_all = truth.present_in(lo, hi);
    let mut attached: HashMap<u64, u64> = HashMap::new();
    for e in est.present_in(lo, hi) {
        let best = t_all
            .iter()
            .map(|t| (track_distance(&truth.tracks[t], &est.tracks[&e], lo, hi, params), *t))
            .min_by(|a, b| a.0.total_cmp(&b.0).then(a.1.cmp(&b.1)));
        if let Some((d, t)) = best {
            if d < params.c {
                attached.insert(e, t);
            }
        }
    }
    let t: Vec<u64> = t_all.into_iter().filter(|id| subset.contains(id)).collect();
    let mut e: Vec<u64> = attached
        .iter()
        .filter(|(_, t)| subset.contains(t))
        .map(|(&e, _)| e)
        .collect();
    e.sort_unstable();
    ospa2_between(truth, &t, est, &e, params, lo, hi)
}
