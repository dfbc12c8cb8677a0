//! Item reweighting of the evaluation protocol.
//!
//! With uniform `P(u)` over users holding at least one item and a per-user
//! item choice reweighted by positive `ω`,
//!
//! ```text
//! P(i|ω)   = 1/#U · Σ_{u∈U_i} ω_i / S_u                 S_u = Σ_{j∈I_u} ω_j
//! P(i,k|ω) = 1/#U · Σ_{u∈U_i∩U_k} ω_i ω_k / S_u²
//! D(ω)     = Σ_{i∈I_t0} P_t0(i) log(P_t0(i) / P_t1(i|ω))
//! ∂D/∂ω_k  = Σ_i P_t0(i) / (ω_k P_t1(i|ω)) · (P_t1(i,k|ω) − δ_ik P_t1(k|ω))
//! ```
//!
//! `D` is invariant under a global rescaling of `ω`. The optimizer works on
//! log-weights of an active item set and keeps every other weight at 1.

use std::io::{Read, Write};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::dataset::{ItemId, Snapshot};

/// Floor applied to `P_t1(i|ω)` inside the logarithm.
pub const PROBABILITY_FLOOR: f64 = 1e-12;

/// Below this divergence the target is considered matched.
const DIVERGENCE_FLOOR: f64 = 1e-15;

#[derive(Debug, Error)]
pub enum DebiasError {
    #[error("snapshot has no user with a non-empty profile")]
    DegenerateSnapshot,

    #[error("weight of item {item} must be positive and finite, got {value}")]
    InvalidWeight { item: ItemId, value: f64 },

    #[error("invalid optimizer configuration: {0}")]
    InvalidConfig(String),

    #[error("line {line}: {message}")]
    Malformed { line: u64, message: String },

    #[error(transparent)]
    Csv(#[from] csv::Error),

    #[error(transparent)]
    Io(#[from] std::io::Error),
}

/// Positive per-item weights `ω`, indexed by dense item id.
#[derive(Debug, Clone, PartialEq)]
pub struct WeightVector {
    weights: Vec<f64>,
}

impl WeightVector {
    pub fn ones(n_items: usize) -> Self {
        Self {
            weights: vec![1.0; n_items],
        }
    }

    pub fn from_vec(weights: Vec<f64>) -> Result<Self, DebiasError> {
        for (i, &w) in weights.iter().enumerate() {
            if !(w > 0.0 && w.is_finite()) {
                return Err(DebiasError::InvalidWeight {
                    item: ItemId(i as u32),
                    value: w,
                });
            }
        }
        Ok(Self { weights })
    }

    #[inline]
    pub fn get(&self, item: ItemId) -> f64 {
        self.weights[item.index()]
    }

    pub fn set(&mut self, item: ItemId, value: f64) -> Result<(), DebiasError> {
        if !(value > 0.0 && value.is_finite()) {
            return Err(DebiasError::InvalidWeight { item, value });
        }
        self.weights[item.index()] = value;
        Ok(())
    }

    pub fn len(&self) -> usize {
        self.weights.len()
    }

    pub fn is_empty(&self) -> bool {
        self.weights.is_empty()
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.weights
    }

    /// The same vector multiplied by `c > 0`.
    pub fn scaled(&self, c: f64) -> Self {
        Self {
            weights: self.weights.iter().map(|w| w * c).collect(),
        }
    }

    /// CSV `item_id,weight`, one row per item, with a schema comment line.
    pub fn write_csv<W: Write>(
        &self,
        out: W,
        name: impl Fn(ItemId) -> String,
    ) -> Result<(), DebiasError> {
        let mut out = out;
        writeln!(out, "# offeval weights v1")?;
        let mut w = csv::Writer::from_writer(out);
        w.write_record(["item_id", "weight"])?;
        for (i, weight) in self.weights.iter().enumerate() {
            w.write_record([name(ItemId(i as u32)), weight.to_string()])?;
        }
        w.flush()?;
        Ok(())
    }

    /// Reads `item_id,weight` rows; items not listed keep weight 1.
    pub fn read_csv<R: Read>(
        input: R,
        n_items: usize,
        resolve: impl Fn(&str) -> Option<ItemId>,
    ) -> Result<Self, DebiasError> {
        let mut reader = csv::ReaderBuilder::new()
            .comment(Some(b'#'))
            .trim(csv::Trim::All)
            .from_reader(input);
        let mut weights = Self::ones(n_items);
        for record in reader.records() {
            let record = record?;
            let line = record.position().map(|p| p.line()).unwrap_or(0);
            let malformed = |message: String| DebiasError::Malformed { line, message };
            if record.len() != 2 {
                return Err(malformed("expected `item_id,weight`".into()));
            }
            let item = resolve(&record[0])
                .filter(|i| i.index() < n_items)
                .ok_or_else(|| malformed(format!("unknown item `{}`", &record[0])))?;
            let value: f64 = record[1]
                .parse()
                .map_err(|_| malformed(format!("invalid weight `{}`", &record[1])))?;
            weights.set(item, value)?;
        }
        Ok(weights)
    }
}

/// A probability vector over dense item ids.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ItemDistribution {
    probs: Vec<f64>,
}

impl ItemDistribution {
    pub fn from_vec(probs: Vec<f64>) -> Self {
        Self { probs }
    }

    /// Probability of `item`; ids beyond the vector have probability 0.
    #[inline]
    pub fn get(&self, item: ItemId) -> f64 {
        self.probs.get(item.index()).copied().unwrap_or(0.0)
    }

    pub fn len(&self) -> usize {
        self.probs.len()
    }

    pub fn is_empty(&self) -> bool {
        self.probs.is_empty()
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.probs
    }

    pub fn support(&self) -> impl Iterator<Item = ItemId> + '_ {
        self.probs
            .iter()
            .enumerate()
            .filter(|(_, &p)| p > 0.0)
            .map(|(i, _)| ItemId(i as u32))
    }

    pub fn total(&self) -> f64 {
        self.probs.iter().sum()
    }
}

/// Ordered set of items whose weights are optimized.
#[derive(Debug, Clone, PartialEq, Eq, Default, Serialize, Deserialize)]
pub struct ActiveSet(pub Vec<ItemId>);

impl ActiveSet {
    pub fn items(&self) -> &[ItemId] {
        &self.0
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }
}

/// `S_u = Σ_{j∈I_u} ω_j` for every user of the universe (0 for empty profiles).
pub fn user_denominators(s: &Snapshot, w: &WeightVector) -> Vec<f64> {
    (0..s.n_user_universe())
        .map(|u| {
            s.items_of(crate::dataset::UserId(u as u32))
                .iter()
                .map(|&i| w.get(i))
                .sum()
        })
        .collect()
}

fn distribution_with(s: &Snapshot, w: &WeightVector, denom: &[f64]) -> ItemDistribution {
    let n_users = s.n_users();
    if n_users == 0 {
        return ItemDistribution::from_vec(vec![0.0; s.n_item_universe()]);
    }
    let inv_users = 1.0 / n_users as f64;
    let probs = (0..s.n_item_universe())
        .map(|i| {
            let item = ItemId(i as u32);
            let wi = w.get(item);
            let sum: f64 = s.users_of(item).iter().map(|&u| wi / denom[u.index()]).sum();
            sum * inv_users
        })
        .collect();
    ItemDistribution::from_vec(probs)
}

/// `P(i|ω)` for every item in `O(n_{U×I})`.
pub fn item_distribution(s: &Snapshot, w: &WeightVector) -> Result<ItemDistribution, DebiasError> {
    if s.n_users() == 0 {
        return Err(DebiasError::DegenerateSnapshot);
    }
    Ok(distribution_with(s, w, &user_denominators(s, w)))
}

/// `P(i,k|ω)`, iterating the shorter of `U_i`, `U_k` with membership tests on
/// the other.
pub fn pair_distribution(s: &Snapshot, w: &WeightVector, i: ItemId, k: ItemId) -> f64 {
    if s.n_users() == 0 {
        return 0.0;
    }
    let (short, long) = {
        let (a, b) = (s.users_of(i), s.users_of(k));
        if a.len() <= b.len() {
            (a, b)
        } else {
            (b, a)
        }
    };
    let wik = w.get(i) * w.get(k);
    let mut sum = 0.0;
    for &u in short {
        if long.binary_search(&u).is_ok() {
            let su: f64 = s.items_of(u).iter().map(|&j| w.get(j)).sum();
            sum += wik / (su * su);
        }
    }
    sum / s.n_users() as f64
}

/// Value of the KL objective with the number of floored terms.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Divergence {
    pub value: f64,
    /// Items with `P_t0 > 0` whose `P_t1` fell below [`PROBABILITY_FLOOR`].
    pub floored: usize,
}

/// `Σ_{i: P_t0(i)>0} P_t0(i) log(P_t0(i) / max(P_t1(i), ε))`.
pub fn divergence(target: &ItemDistribution, current: &ItemDistribution) -> Divergence {
    let mut value = 0.0;
    let mut floored = 0;
    for (i, &p0) in target.as_slice().iter().enumerate() {
        if p0 <= 0.0 {
            continue;
        }
        let mut p1 = current.get(ItemId(i as u32));
        if p1 < PROBABILITY_FLOOR {
            p1 = PROBABILITY_FLOOR;
            floored += 1;
        }
        value += p0 * (p0 / p1).ln();
    }
    Divergence { value, floored }
}

/// `D(ω)` between the reference distribution and the weighted marginal of `s1`.
pub fn kl_divergence(target: &ItemDistribution, s1: &Snapshot, w: &WeightVector) -> f64 {
    let denom = user_denominators(s1, w);
    divergence(target, &distribution_with(s1, w, &denom)).value
}

/// `P_t0(i) / P_t1(i|ω)` where the log term depends on `ω`, else 0.
fn ratios(target: &ItemDistribution, current: &ItemDistribution) -> Vec<f64> {
    current
        .as_slice()
        .iter()
        .enumerate()
        .map(|(i, &p1)| {
            let p0 = target.get(ItemId(i as u32));
            if p0 > 0.0 && p1 >= PROBABILITY_FLOOR {
                p0 / p1
            } else {
                0.0
            }
        })
        .collect()
}

/// `∂D/∂ω_k` for each active item, one coordinate at a time.
///
/// Each coordinate marks `1/S_u²` on the users of `U_k`, then walks the item
/// index once to accumulate `Σ_i r_i ω_i Σ_{u∈U_i∩U_k} 1/S_u²` with
/// `r_i = P_t0(i)/P_t1(i|ω)`: `O(n_{U×I})` per coordinate.
pub fn kl_gradient(
    target: &ItemDistribution,
    s1: &Snapshot,
    w: &WeightVector,
    active: &ActiveSet,
) -> Vec<f64> {
    if s1.n_users() == 0 {
        return vec![0.0; active.len()];
    }
    let denom = user_denominators(s1, w);
    let current = distribution_with(s1, w, &denom);
    let r = ratios(target, &current);
    let inv_users = 1.0 / s1.n_users() as f64;
    let weighted_ratio: Vec<(ItemId, f64)> = r
        .iter()
        .enumerate()
        .filter(|(_, &ri)| ri > 0.0)
        .map(|(i, &ri)| (ItemId(i as u32), ri * w.get(ItemId(i as u32))))
        .collect();

    let mut mark = vec![0.0f64; s1.n_user_universe()];
    active
        .items()
        .iter()
        .map(|&k| {
            let holders = s1.users_of(k);
            for &u in holders {
                let su = denom[u.index()];
                mark[u.index()] = 1.0 / (su * su);
            }
            let mut cross = 0.0;
            for &(i, rw) in &weighted_ratio {
                let overlap: f64 = s1.users_of(i).iter().map(|&u| mark[u.index()]).sum();
                cross += rw * overlap;
            }
            for &u in holders {
                mark[u.index()] = 0.0;
            }
            cross * inv_users - r[k.index()] * current.get(k) / w.get(k)
        })
        .collect()
}

/// `∂D/∂ω_k` for every item in one `O(n_{U×I})` pass, using the per-user sums
/// `A_u = Σ_{i∈I_u} ω_i r_i`: `∂D/∂ω_k = 1/#U · Σ_{u∈U_k} A_u/S_u² − r_k P_t1(k)/ω_k`.
pub fn kl_gradient_dense(target: &ItemDistribution, s1: &Snapshot, w: &WeightVector) -> Vec<f64> {
    if s1.n_users() == 0 {
        return vec![0.0; s1.n_item_universe()];
    }
    let denom = user_denominators(s1, w);
    let current = distribution_with(s1, w, &denom);
    gradient_dense_with(target, s1, w, &denom, &current)
}

fn gradient_dense_with(
    target: &ItemDistribution,
    s1: &Snapshot,
    w: &WeightVector,
    denom: &[f64],
    current: &ItemDistribution,
) -> Vec<f64> {
    let r = ratios(target, current);
    let per_user: Vec<f64> = (0..s1.n_user_universe())
        .map(|u| {
            let su = denom[u];
            if su == 0.0 {
                return 0.0;
            }
            let a: f64 = s1
                .items_of(crate::dataset::UserId(u as u32))
                .iter()
                .map(|&i| w.get(i) * r[i.index()])
                .sum();
            a / (su * su)
        })
        .collect();
    let inv_users = 1.0 / s1.n_users() as f64;
    (0..s1.n_item_universe())
        .map(|k| {
            let item = ItemId(k as u32);
            let cross: f64 = s1.users_of(item).iter().map(|&u| per_user[u.index()]).sum();
            cross * inv_users - r[k] * current.get(item) / w.get(item)
        })
        .collect()
}

/// The `p` items with the largest `|P_t0(i) − P_t1(i)|`, ties by ascending id.
/// Items with zero deviation are never selected.
pub fn select_active_items(p_t0: &ItemDistribution, p_t1: &ItemDistribution, p: usize) -> ActiveSet {
    let n = p_t0.len().max(p_t1.len());
    let mut deviations: Vec<(f64, ItemId)> = (0..n)
        .map(|i| {
            let item = ItemId(i as u32);
            ((p_t0.get(item) - p_t1.get(item)).abs(), item)
        })
        .filter(|&(d, _)| d > 0.0)
        .collect();
    deviations.sort_by(|a, b| b.0.total_cmp(&a.0).then(a.1.cmp(&b.1)));
    deviations.truncate(p);
    ActiveSet(deviations.into_iter().map(|(_, i)| i).collect())
}

/// Gradient descent on log-weights with Barzilai–Borwein trial steps and
/// Armijo backtracking.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct OptimizerConfig {
    /// Number of active items; `usize::MAX` selects every deviating item.
    pub p: usize,
    pub max_iters: usize,
    /// Trial step of the first iteration.
    pub initial_step: f64,
    /// Armijo sufficient-decrease constant.
    pub armijo: f64,
    /// Step shrink factor per backtrack.
    pub backtrack: f64,
    pub max_backtracks: usize,
    /// Stop when an accepted step decreases `D` by less than this fraction.
    pub rel_tol: f64,
    /// Stop when the log-weight gradient norm falls below this.
    pub grad_tol: f64,
}

impl Default for OptimizerConfig {
    fn default() -> Self {
        Self {
            p: 20,
            max_iters: 2000,
            initial_step: 1.0,
            armijo: 1e-4,
            backtrack: 0.5,
            max_backtracks: 60,
            rel_tol: 1e-12,
            grad_tol: 1e-10,
        }
    }
}

impl OptimizerConfig {
    pub fn with_p(mut self, p: usize) -> Self {
        self.p = p;
        self
    }

    pub fn validate(&self) -> Result<(), DebiasError> {
        let bad = |m: &str| Err(DebiasError::InvalidConfig(m.to_string()));
        if self.p == 0 {
            return bad("p must be at least 1");
        }
        if !(self.rel_tol > 0.0 && self.grad_tol > 0.0) {
            return bad("tolerances must be positive");
        }
        if self.initial_step.is_nan() || self.initial_step <= 0.0 {
            return bad("initial_step must be positive");
        }
        if !(self.armijo > 0.0 && self.armijo < 1.0) {
            return bad("armijo must lie in (0, 1)");
        }
        if !(self.backtrack > 0.0 && self.backtrack < 1.0) {
            return bad("backtrack must lie in (0, 1)");
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TraceRow {
    pub iter: usize,
    #[serde(rename = "D")]
    pub d: f64,
    pub grad_norm: f64,
    pub step: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum StopReason {
    NothingToOptimize,
    TargetMatched,
    GradientTolerance,
    RelativeDecrease,
    LineSearchFailed,
    MaxIterations,
}

#[derive(Debug, Clone)]
pub struct Optimized {
    pub weights: WeightVector,
    pub active: ActiveSet,
    pub trace: Vec<TraceRow>,
    pub stop: StopReason,
    /// Floored terms at the returned weights.
    pub floored: usize,
}

impl Optimized {
    /// False when the iteration budget ran out or the line search stalled; the
    /// weights are then the best iterate found.
    pub fn converged(&self) -> bool {
        !matches!(self.stop, StopReason::MaxIterations | StopReason::LineSearchFailed)
    }

    pub fn initial_divergence(&self) -> f64 {
        self.trace.first().map(|r| r.d).unwrap_or(0.0)
    }

    pub fn final_divergence(&self) -> f64 {
        self.trace.last().map(|r| r.d).unwrap_or(0.0)
    }
}

struct Objective<'a> {
    target: &'a ItemDistribution,
    s1: &'a Snapshot,
}

struct Point {
    weights: WeightVector,
    denom: Vec<f64>,
    current: ItemDistribution,
    div: Divergence,
}

impl Objective<'_> {
    fn at(&self, weights: WeightVector) -> Point {
        let denom = user_denominators(self.s1, &weights);
        let current = distribution_with(self.s1, &weights, &denom);
        let div = divergence(self.target, &current);
        Point {
            weights,
            denom,
            current,
            div,
        }
    }

    /// Gradient with respect to the log-weights of the active items.
    fn log_gradient(&self, pt: &Point, active: &[ItemId]) -> Vec<f64> {
        let g = gradient_dense_with(self.target, self.s1, &pt.weights, &pt.denom, &pt.current);
        active
            .iter()
            .map(|&k| pt.weights.get(k) * g[k.index()])
            .collect()
    }

    fn weights_from(&self, active: &[ItemId], theta: &[f64], n_items: usize) -> WeightVector {
        let mut w = vec![1.0; n_items];
        for (&k, &t) in active.iter().zip(theta) {
            w[k.index()] = t.exp();
        }
        WeightVector { weights: w }
    }
}

fn norm(v: &[f64]) -> f64 {
    v.iter().map(|x| x * x).sum::<f64>().sqrt()
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

/// Minimizes `D(ω)` over the weights of the `cfg.p` most deviating items.
///
/// Non-active weights stay exactly 1. When every item present in `s1` is
/// active, the result is rescaled so the active weights have geometric mean 1.
pub fn optimize_weights(
    target: &ItemDistribution,
    s1: &Snapshot,
    cfg: &OptimizerConfig,
) -> Result<Optimized, DebiasError> {
    cfg.validate()?;
    let unweighted = item_distribution(s1, &WeightVector::ones(s1.n_item_universe()))?;
    let active = select_active_items(target, &unweighted, cfg.p);
    let objective = Objective { target, s1 };
    let n_items = s1.n_item_universe();
    let idx = active.items();

    let mut theta = vec![0.0; idx.len()];
    let mut pt = objective.at(WeightVector::ones(n_items));
    let mut trace = Vec::new();
    let mut step_taken = 0.0;
    let mut prev: Option<(Vec<f64>, Vec<f64>)> = None;
    let mut trial = cfg.initial_step;
    let mut pending: Option<StopReason> = None;
    let mut iter = 0;

    let stop = loop {
        let grad = objective.log_gradient(&pt, idx);
        let gnorm = norm(&grad);
        trace.push(TraceRow {
            iter,
            d: pt.div.value,
            grad_norm: gnorm,
            step: step_taken,
        });
        if idx.is_empty() {
            break StopReason::NothingToOptimize;
        }
        if let Some(reason) = pending {
            break reason;
        }
        if pt.div.value <= DIVERGENCE_FLOOR {
            break StopReason::TargetMatched;
        }
        if gnorm < cfg.grad_tol {
            break StopReason::GradientTolerance;
        }
        if iter >= cfg.max_iters {
            break StopReason::MaxIterations;
        }

        if let Some((theta_prev, grad_prev)) = &prev {
            let s: Vec<f64> = theta.iter().zip(theta_prev).map(|(a, b)| a - b).collect();
            let y: Vec<f64> = grad.iter().zip(grad_prev).map(|(a, b)| a - b).collect();
            let sy = dot(&s, &y);
            if sy > 0.0 {
                trial = (dot(&s, &s) / sy).clamp(1e-12, 1e12);
            } else {
                trial = (step_taken * 2.0).max(1e-12);
            }
        }

        let mut alpha = trial;
        let mut accepted = None;
        for _ in 0..=cfg.max_backtracks {
            let cand: Vec<f64> = theta.iter().zip(&grad).map(|(t, g)| t - alpha * g).collect();
            let next = objective.at(objective.weights_from(idx, &cand, n_items));
            if next.div.value <= pt.div.value - cfg.armijo * alpha * gnorm * gnorm {
                accepted = Some((cand, next));
                break;
            }
            alpha *= cfg.backtrack;
        }
        let Some((cand, next)) = accepted else {
            break StopReason::LineSearchFailed;
        };

        let decrease = (pt.div.value - next.div.value) / pt.div.value;
        prev = Some((std::mem::replace(&mut theta, cand), grad));
        pt = next;
        step_taken = alpha;
        iter += 1;
        if decrease < cfg.rel_tol {
            pending = Some(StopReason::RelativeDecrease);
        }
    };

    let covers_graph = (0..n_items)
        .map(|i| ItemId(i as u32))
        .filter(|&i| s1.item_degree(i) > 0)
        .all(|i| idx.contains(&i));
    if covers_graph && !idx.is_empty() {
        let mean = theta.iter().sum::<f64>() / theta.len() as f64;
        for t in &mut theta {
            *t -= mean;
        }
        pt.weights = objective.weights_from(idx, &theta, n_items);
    }

    Ok(Optimized {
        weights: pt.weights,
        active,
        trace,
        stop,
        floored: pt.div.floored,
    })
}

/// Writes an optimizer trace as CSV `iter,D,grad_norm,step`.
pub fn write_trace_csv<W: Write>(out: W, trace: &[TraceRow]) -> Result<(), DebiasError> {
    let mut out = out;
    writeln!(out, "# offeval optimizer-trace v1")?;
    let mut w = csv::Writer::from_writer(out);
    for row in trace {
        w.serialize(row)?;
    }
    w.flush()?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dataset::UserId;

    fn snap(nu: usize, ni: usize, edges: &[(u32, u32)]) -> Snapshot {
        Snapshot::from_edges(0.0, nu, ni, edges.iter().map(|&(u, i)| (UserId(u), ItemId(i))))
    }

    #[test]
    fn uniform_single_user() {
        let s = snap(1, 2, &[(0, 0), (0, 1)]);
        let p = item_distribution(&s, &WeightVector::ones(2)).unwrap();
        assert_eq!(p.as_slice(), &[0.5, 0.5]);
        assert_eq!(pair_distribution(&s, &WeightVector::ones(2), ItemId(0), ItemId(0)), 0.25);
    }

    #[test]
    fn two_user_hand_values() {
        // I_u1 = {a}, I_u2 = {a, b}
        let s = snap(2, 2, &[(0, 0), (1, 0), (1, 1)]);
        let p = item_distribution(&s, &WeightVector::ones(2)).unwrap();
        assert_eq!(p.as_slice(), &[0.75, 0.25]);
        let mut w = WeightVector::ones(2);
        w.set(ItemId(1), 3.0).unwrap();
        let p = item_distribution(&s, &w).unwrap();
        assert_eq!(p.get(ItemId(1)), 0.375);
        assert_eq!(p.get(ItemId(0)), 0.625);
    }

    #[test]
    fn disjoint_pair_is_zero() {
        let s = snap(2, 2, &[(0, 0), (1, 1)]);
        assert_eq!(pair_distribution(&s, &WeightVector::ones(2), ItemId(0), ItemId(1)), 0.0);
    }

    #[test]
    fn degenerate_snapshot() {
        let s = snap(2, 2, &[]);
        assert!(matches!(
            item_distribution(&s, &WeightVector::ones(2)),
            Err(DebiasError::DegenerateSnapshot)
        ));
    }

    #[test]
    fn kl_values() {
        let s = snap(2, 2, &[(0, 0), (1, 1)]);
        let w = WeightVector::ones(2);
        let p = item_distribution(&s, &w).unwrap();
        assert_eq!(kl_divergence(&p, &s, &w), 0.0);
        let target = ItemDistribution::from_vec(vec![1.0, 0.0]);
        assert!((kl_divergence(&target, &s, &w) - 2f64.ln()).abs() < 1e-15);
    }

    #[test]
    fn kl_floors_missing_items() {
        let s = snap(1, 2, &[(0, 0)]);
        let target = ItemDistribution::from_vec(vec![0.5, 0.5]);
        let d = divergence(&target, &item_distribution(&s, &WeightVector::ones(2)).unwrap());
        assert_eq!(d.floored, 1);
        let expected = 0.5 * (0.5f64).ln() + 0.5 * (0.5 / PROBABILITY_FLOOR).ln();
        assert!((d.value - expected).abs() < 1e-12);
    }

    #[test]
    fn gradient_zero_at_optimum() {
        let s = snap(3, 3, &[(0, 0), (0, 1), (1, 1), (2, 2), (2, 0)]);
        let w = WeightVector::ones(3);
        let target = item_distribution(&s, &w).unwrap();
        let active = ActiveSet(vec![ItemId(0), ItemId(1), ItemId(2)]);
        for g in kl_gradient(&target, &s, &w, &active) {
            assert!(g.abs() < 1e-15);
        }
    }

    #[test]
    fn gradient_routes_agree() {
        let s = snap(4, 4, &[(0, 0), (0, 1), (1, 1), (1, 2), (2, 2), (2, 3), (3, 0), (3, 3), (3, 1)]);
        let w = WeightVector::from_vec(vec![0.7, 1.3, 1.9, 0.6]).unwrap();
        let target = ItemDistribution::from_vec(vec![0.4, 0.1, 0.3, 0.2]);
        let all = ActiveSet((0..4).map(ItemId).collect());
        let a = kl_gradient(&target, &s, &w, &all);
        let b = kl_gradient_dense(&target, &s, &w);
        for (x, y) in a.iter().zip(&b) {
            assert!((x - y).abs() <= 1e-13 * x.abs().max(1e-3), "{x} vs {y}");
        }
    }

    #[test]
    fn active_selection() {
        let p0 = ItemDistribution::from_vec(vec![0.5, 0.3, 0.2]);
        let p1 = ItemDistribution::from_vec(vec![0.2, 0.4, 0.2]);
        assert_eq!(select_active_items(&p0, &p1, 2).0, vec![ItemId(0), ItemId(1)]);
        assert!(select_active_items(&p0, &p0, 5).is_empty());
        let p0 = ItemDistribution::from_vec(vec![0.6, 0.4]);
        let p1 = ItemDistribution::from_vec(vec![0.4, 0.6]);
        assert_eq!(select_active_items(&p0, &p1, 1).0, vec![ItemId(0)]);
        // absent from one side counts as 0
        let short = ItemDistribution::from_vec(vec![1.0]);
        let long = ItemDistribution::from_vec(vec![0.75, 0.25]);
        assert_eq!(select_active_items(&short, &long, 5).0, vec![ItemId(0), ItemId(1)]);
    }

    #[test]
    fn optimizer_noop_when_already_optimal() {
        let s = snap(3, 3, &[(0, 0), (0, 1), (1, 1), (2, 2)]);
        let target = item_distribution(&s, &WeightVector::ones(3)).unwrap();
        let out = optimize_weights(&target, &s, &OptimizerConfig::default()).unwrap();
        assert_eq!(out.weights, WeightVector::ones(3));
        assert_eq!(out.trace.len(), 1);
        assert_eq!(out.final_divergence(), 0.0);
        assert_eq!(out.stop, StopReason::NothingToOptimize);
    }

    #[test]
    fn optimizer_rejects_bad_config() {
        let s = snap(1, 1, &[(0, 0)]);
        let target = item_distribution(&s, &WeightVector::ones(1)).unwrap();
        let cfg = OptimizerConfig {
            rel_tol: 0.0,
            ..OptimizerConfig::default()
        };
        assert!(matches!(
            optimize_weights(&target, &s, &cfg),
            Err(DebiasError::InvalidConfig(_))
        ));
    }

    #[test]
    fn weights_reject_non_positive() {
        assert!(WeightVector::from_vec(vec![1.0, 0.0]).is_err());
        let mut w = WeightVector::ones(2);
        assert!(w.set(ItemId(0), f64::NAN).is_err());
        assert!(w.set(ItemId(0), -1.0).is_err());
    }

    #[test]
    fn weights_csv_round_trip() {
        let w = WeightVector::from_vec(vec![0.25, 1.0, 3.5]).unwrap();
        let mut buf = Vec::new();
        w.write_csv(&mut buf, |i| i.to_string()).unwrap();
        let back = WeightVector::read_csv(buf.as_slice(), 3, |s| s.parse().ok().map(ItemId)).unwrap();
        assert_eq!(back, w);
    }
}
