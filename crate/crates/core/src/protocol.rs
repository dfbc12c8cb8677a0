//! Classical and weighted offline evaluation.
//!
//! A pair `(u, i)` is drawn by picking `u` uniformly among users with a
//! non-empty profile, then `i` from `I_u` with probability proportional to its
//! weight. The recommender sees `u_{-i}` and scores 1 when `i` is in its list.
//!
//! Stochastic runs split the draw budget into fixed blocks; block `b` reads
//! ChaCha substream `b` of the run seed. The result therefore does not depend
//! on how blocks are scheduled across threads.

use rand::{Rng as _, RngCore};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::dataset::{remove_item_view, ItemId, Snapshot, UserId};
use crate::debias::WeightVector;
use crate::recommend::{RecommendationList, Recommender};
use crate::rng;

/// Draws handled by one substream.
pub const BLOCK_DRAWS: u64 = 2048;

/// Two-sided 95% normal quantile used by the Wald interval.
pub const Z_95: f64 = 1.96;

/// Default recommendation list length.
pub const DEFAULT_K: usize = 5;

#[derive(Debug, Error, PartialEq)]
pub enum ProtocolError {
    #[error("snapshot has no user with a non-empty profile")]
    NoEligibleUser,

    #[error("n_draws must be at least 1")]
    NoDraws,

    #[error("weight vector covers {got} items, snapshot has {expected}")]
    WeightLength { expected: usize, got: usize },
}

#[derive(Debug, Clone, PartialEq)]
pub struct SamplingConfig {
    pub n_draws: u64,
    pub seed: u64,
    /// `None` is the classical uniform `P(i|u)`.
    pub weights: Option<WeightVector>,
}

impl SamplingConfig {
    pub fn classical(n_draws: u64, seed: u64) -> Self {
        Self {
            n_draws,
            seed,
            weights: None,
        }
    }

    pub fn weighted(n_draws: u64, seed: u64, weights: WeightVector) -> Self {
        Self {
            n_draws,
            seed,
            weights: Some(weights),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum EvaluationMode {
    Stochastic,
    Exhaustive,
}

/// Estimate of `L_t(g)` with its 95% interval.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvaluationResult {
    pub mode: EvaluationMode,
    pub score: f64,
    pub ci_low: f64,
    pub ci_high: f64,
    /// Stochastic: draws. Exhaustive: evaluated `(u, i)` pairs.
    pub n_draws: u64,
    /// Stochastic: successful draws. Exhaustive: pairs with a hit.
    pub hits: u64,
    /// `None` for exhaustive evaluation.
    pub seed: Option<u64>,
}

impl EvaluationResult {
    pub fn half_width(&self) -> f64 {
        (self.ci_high - self.ci_low) / 2.0
    }
}

/// `p ± 1.96 sqrt(p(1-p)/n)`, clamped to `[0, 1]`.
pub fn wald_ci(p_hat: f64, n: u64) -> (f64, f64) {
    let n = n.max(1) as f64;
    let half = Z_95 * (p_hat * (1.0 - p_hat) / n).max(0.0).sqrt();
    ((p_hat - half).max(0.0), (p_hat + half).min(1.0))
}

/// `l(g_t(u_{-i}), i) = 1{i ∈ g_t(u_{-i})}`.
pub fn quality(rec: &RecommendationList, target: ItemId) -> u8 {
    rec.contains(target) as u8
}

/// Per-snapshot sampling tables.
///
/// Weighted item selection compares a uniform `u64` against per-user
/// cumulative weights scaled to the `2^64` grid, so no floating-point value is
/// involved once the tables are built.
#[derive(Debug, Clone)]
pub struct PairSampler<'a> {
    snapshot: &'a Snapshot,
    // Per user: cumulative thresholds for all but the last item.
    thresholds: Option<(Vec<usize>, Vec<u64>)>,
}

impl<'a> PairSampler<'a> {
    pub fn new(snapshot: &'a Snapshot, weights: Option<&WeightVector>) -> Result<Self, ProtocolError> {
        if snapshot.n_users() == 0 {
            return Err(ProtocolError::NoEligibleUser);
        }
        let thresholds = match weights {
            None => None,
            Some(w) => {
                check_weights(snapshot, w)?;
                let users = snapshot.active_users();
                let mut offsets = Vec::with_capacity(users.len() + 1);
                let mut table = Vec::with_capacity(snapshot.n_edges());
                offsets.push(0);
                for &u in users {
                    let items = snapshot.items_of(u);
                    let total: f64 = items.iter().map(|&i| w.get(i)).sum();
                    let mut acc = 0.0;
                    for &i in &items[..items.len() - 1] {
                        acc += w.get(i);
                        table.push(scale_to_grid(acc / total));
                    }
                    offsets.push(table.len());
                }
                Some((offsets, table))
            }
        };
        Ok(Self {
            snapshot,
            thresholds,
        })
    }

    pub fn snapshot(&self) -> &'a Snapshot {
        self.snapshot
    }

    /// One `(u, i)` draw.
    pub fn draw<R: RngCore>(&self, rng: &mut R) -> (UserId, ItemId) {
        let users = self.snapshot.active_users();
        let slot = rng.random_range(0..users.len());
        let u = users[slot];
        let items = self.snapshot.items_of(u);
        let pick = match &self.thresholds {
            None => rng.random_range(0..items.len()),
            Some((offsets, table)) => {
                let row = &table[offsets[slot]..offsets[slot + 1]];
                let r = rng.next_u64();
                row.partition_point(|&t| t <= r)
            }
        };
        (u, items[pick])
    }
}

fn scale_to_grid(fraction: f64) -> u64 {
    const GRID: f64 = 18_446_744_073_709_551_616.0; // 2^64
    let x = fraction * GRID;
    if x >= GRID {
        u64::MAX
    } else {
        x as u64
    }
}

fn check_weights(snapshot: &Snapshot, w: &WeightVector) -> Result<(), ProtocolError> {
    if w.len() != snapshot.n_item_universe() {
        return Err(ProtocolError::WeightLength {
            expected: snapshot.n_item_universe(),
            got: w.len(),
        });
    }
    Ok(())
}

/// Draws one pair. Builds the sampling tables on every call; use
/// [`PairSampler`] for repeated draws.
pub fn draw_pair<R: RngCore>(
    snapshot: &Snapshot,
    weights: Option<&WeightVector>,
    rng: &mut R,
) -> Result<(UserId, ItemId), ProtocolError> {
    Ok(PairSampler::new(snapshot, weights)?.draw(rng))
}

fn hit(g: &dyn Recommender, snapshot: &Snapshot, u: UserId, i: ItemId, k: usize) -> u8 {
    let view = remove_item_view(snapshot, u, i).expect("sampled item belongs to the profile");
    quality(&g.recommend(&view, k), i)
}

/// Monte-Carlo estimate of `L_t(g)` from `cfg.n_draws` pairs.
pub fn evaluate_stochastic(
    g: &dyn Recommender,
    snapshot: &Snapshot,
    cfg: &SamplingConfig,
    k: usize,
) -> Result<EvaluationResult, ProtocolError> {
    if cfg.n_draws == 0 {
        return Err(ProtocolError::NoDraws);
    }
    let sampler = PairSampler::new(snapshot, cfg.weights.as_ref())?;
    let n_blocks = cfg.n_draws.div_ceil(BLOCK_DRAWS);
    let hits: u64 = (0..n_blocks)
        .into_par_iter()
        .map(|b| {
            let mut rng = rng::substream(cfg.seed, b);
            let draws = BLOCK_DRAWS.min(cfg.n_draws - b * BLOCK_DRAWS);
            (0..draws)
                .map(|_| {
                    let (u, i) = sampler.draw(&mut rng);
                    hit(g, snapshot, u, i, k) as u64
                })
                .sum::<u64>()
        })
        .sum();
    let score = hits as f64 / cfg.n_draws as f64;
    let (ci_low, ci_high) = wald_ci(score, cfg.n_draws);
    Ok(EvaluationResult {
        mode: EvaluationMode::Stochastic,
        score,
        ci_low,
        ci_high,
        n_draws: cfg.n_draws,
        hits,
        seed: Some(cfg.seed),
    })
}

/// Exact `L_t(g) = Σ_u P(u) Σ_{i∈I_u} P(i|u,ω) l(g(u_{-i}), i)`.
pub fn evaluate_exhaustive(
    g: &dyn Recommender,
    snapshot: &Snapshot,
    weights: Option<&WeightVector>,
    k: usize,
) -> Result<EvaluationResult, ProtocolError> {
    if snapshot.n_users() == 0 {
        return Err(ProtocolError::NoEligibleUser);
    }
    if let Some(w) = weights {
        check_weights(snapshot, w)?;
    }
    let users = snapshot.active_users();
    // Per-user partial sums, reduced in user order for a thread-independent result.
    let per_user: Vec<(f64, u64)> = users
        .par_iter()
        .map(|&u| {
            let items = snapshot.items_of(u);
            let total = weights.map(|w| items.iter().map(|&i| w.get(i)).sum::<f64>());
            let mut mass = 0.0;
            let mut hits = 0u64;
            for &i in items {
                if hit(g, snapshot, u, i, k) == 1 {
                    hits += 1;
                    mass += match (weights, total) {
                        (Some(w), Some(t)) => w.get(i) / t,
                        _ => 1.0 / items.len() as f64,
                    };
                }
            }
            (mass, hits)
        })
        .collect();
    let mass: f64 = per_user.iter().map(|p| p.0).sum();
    let hits: u64 = per_user.iter().map(|p| p.1).sum();
    let score = mass / users.len() as f64;
    Ok(EvaluationResult {
        mode: EvaluationMode::Exhaustive,
        score,
        ci_low: score,
        ci_high: score,
        n_draws: snapshot.n_edges() as u64,
        hits,
        seed: None,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::recommend::constant_recommender;

    fn snap(nu: usize, ni: usize, edges: &[(u32, u32)]) -> Snapshot {
        Snapshot::from_edges(0.0, nu, ni, edges.iter().map(|&(u, i)| (UserId(u), ItemId(i))))
    }

    fn ids(v: &[u32]) -> Vec<ItemId> {
        v.iter().map(|&i| ItemId(i)).collect()
    }

    #[test]
    fn wald_values() {
        let (lo, hi) = wald_ci(0.5, 20_000);
        // 1.96 * sqrt(0.25 / 20000) = 0.0069296...
        assert!((lo - 0.49307).abs() < 1e-5, "{lo}");
        assert!((hi - 0.50693).abs() < 1e-5, "{hi}");
        assert_eq!(wald_ci(0.0, 10), (0.0, 0.0));
        assert_eq!(wald_ci(1.0, 100), (1.0, 1.0));
    }

    #[test]
    fn quality_indicator() {
        let rec = RecommendationList(ids(&[0, 1, 2, 3, 4]));
        assert_eq!(quality(&rec, ItemId(2)), 1);
        assert_eq!(quality(&rec, ItemId(25)), 0);
        assert_eq!(quality(&RecommendationList::default(), ItemId(0)), 0);
    }

    #[test]
    fn single_user_single_item_always_drawn() {
        let s = snap(1, 1, &[(0, 0)]);
        let mut r = rng::seeded(3);
        for _ in 0..100 {
            assert_eq!(draw_pair(&s, None, &mut r).unwrap(), (UserId(0), ItemId(0)));
        }
    }

    #[test]
    fn weighted_draw_frequencies() {
        let s = snap(1, 2, &[(0, 0), (0, 1)]);
        let mut w = WeightVector::ones(2);
        w.set(ItemId(0), 3.0).unwrap();
        let sampler = PairSampler::new(&s, Some(&w)).unwrap();
        let mut r = rng::seeded(11);
        let n = 100_000;
        let a = (0..n).filter(|_| sampler.draw(&mut r).1 == ItemId(0)).count();
        let freq = a as f64 / n as f64;
        assert!((freq - 0.75).abs() < 0.01, "{freq}");
    }

    #[test]
    fn uniform_draw_frequencies() {
        let s = snap(1, 3, &[(0, 0), (0, 1), (0, 2)]);
        for weights in [None, Some(WeightVector::ones(3))] {
            let sampler = PairSampler::new(&s, weights.as_ref()).unwrap();
            let mut r = rng::seeded(5);
            let mut counts = [0usize; 3];
            let n = 60_000;
            for _ in 0..n {
                counts[sampler.draw(&mut r).1.index()] += 1;
            }
            for c in counts {
                assert!((c as f64 / n as f64 - 1.0 / 3.0).abs() < 0.01);
            }
        }
    }

    #[test]
    fn no_eligible_user() {
        let s = snap(2, 2, &[]);
        let mut r = rng::seeded(0);
        assert_eq!(draw_pair(&s, None, &mut r).unwrap_err(), ProtocolError::NoEligibleUser);
    }

    #[test]
    fn stochastic_extremes_and_determinism() {
        let s = snap(3, 3, &[(0, 0), (0, 1), (1, 2), (2, 0), (2, 2)]);
        let all = constant_recommender(ids(&[0, 1, 2])).unwrap();
        let cfg = SamplingConfig::classical(5000, 42);
        let r = evaluate_stochastic(&all, &s, &cfg, 3).unwrap();
        assert_eq!(r.score, 1.0);
        assert!(r.ci_low <= r.score && r.score <= r.ci_high);

        let s2 = snap(2, 6, &[(0, 0), (0, 1), (1, 2)]);
        let disjoint = constant_recommender(ids(&[3, 4, 5])).unwrap();
        assert_eq!(evaluate_stochastic(&disjoint, &s2, &cfg, 3).unwrap().score, 0.0);

        let half = constant_recommender(ids(&[0])).unwrap();
        let a = evaluate_stochastic(&half, &s, &cfg, 1).unwrap();
        let b = evaluate_stochastic(&half, &s, &cfg, 1).unwrap();
        assert_eq!(a, b);
        assert_eq!(a.score.to_bits(), b.score.to_bits());
        assert_eq!(a.hits as f64 / a.n_draws as f64, a.score);
    }

    #[test]
    fn zero_draws_rejected() {
        let s = snap(1, 1, &[(0, 0)]);
        let g = constant_recommender(ids(&[0])).unwrap();
        assert_eq!(
            evaluate_stochastic(&g, &s, &SamplingConfig::classical(0, 1), 5).unwrap_err(),
            ProtocolError::NoDraws
        );
    }

    #[test]
    fn exhaustive_hand_values() {
        let s = snap(1, 2, &[(0, 0), (0, 1)]);
        let g = constant_recommender(ids(&[0])).unwrap();
        let r = evaluate_exhaustive(&g, &s, None, 1).unwrap();
        assert_eq!(r.score, 0.5);
        assert_eq!((r.ci_low, r.ci_high), (0.5, 0.5));
        let mut w = WeightVector::ones(2);
        w.set(ItemId(0), 3.0).unwrap();
        assert_eq!(evaluate_exhaustive(&g, &s, Some(&w), 1).unwrap().score, 0.75);

        let all = constant_recommender(ids(&[0, 1])).unwrap();
        assert_eq!(evaluate_exhaustive(&all, &s, None, 2).unwrap().score, 1.0);
    }

    #[test]
    fn exhaustive_all_ones_equals_classical_exactly() {
        let s = snap(4, 5, &[(0, 0), (0, 3), (1, 1), (1, 2), (1, 4), (2, 0), (3, 4)]);
        let g = constant_recommender(ids(&[0, 4])).unwrap();
        let a = evaluate_exhaustive(&g, &s, None, 5).unwrap();
        let b = evaluate_exhaustive(&g, &s, Some(&WeightVector::ones(5)), 5).unwrap();
        assert_eq!(a.score.to_bits(), b.score.to_bits());
    }

    #[test]
    fn weight_length_checked() {
        let s = snap(1, 2, &[(0, 0), (0, 1)]);
        let g = constant_recommender(ids(&[0])).unwrap();
        assert!(matches!(
            evaluate_exhaustive(&g, &s, Some(&WeightVector::ones(5)), 1),
            Err(ProtocolError::WeightLength { .. })
        ));
    }
}
