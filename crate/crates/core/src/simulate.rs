//! Synthetic interaction histories: homogeneous organic growth with Zipf item
//! popularity, interrupted by recommendation campaigns whose accepted items
//! are tagged with the campaign id.

use std::collections::{BTreeMap, HashSet};

use rand::seq::index;
use rand::Rng as _;
use rand_distr::{Distribution, Exp, Zipf};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::dataset::{
    snapshot_at, DatasetError, Interaction, InteractionLog, ItemId, ProfileView, Source, UserId,
};
use crate::debias::{item_distribution, ItemDistribution, WeightVector};
use crate::recommend::{RecommendError, RecommenderSpec};
use crate::rng::{self, Rng};

/// Redraws allowed per organic event before it is dropped.
const MAX_ATTEMPTS: usize = 10_000;

#[derive(Debug, Error)]
pub enum SimulationError {
    #[error("invalid simulation config: {0}")]
    InvalidConfig(String),

    #[error("mean profile size {mean} exceeds the {n_items} available items")]
    Infeasible { mean: f64, n_items: usize },

    #[error("campaign {id} at t={time} precedes the last logged event at t={last}")]
    OutOfOrder { id: u32, time: f64, last: f64 },

    #[error("could not place {missing} of the initial events without duplicates")]
    Saturated { missing: usize },

    #[error(transparent)]
    Recommend(#[from] RecommendError),

    #[error(transparent)]
    Dataset(#[from] DatasetError),
}

fn default_response_days() -> f64 {
    7.0
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Campaign {
    pub id: u32,
    /// Day of the campaign.
    pub time: f64,
    pub recommender: RecommenderSpec,
    pub k: usize,
    /// Share of the user universe receiving the list, in `(0, 1]`.
    pub targeted_fraction: f64,
    /// Independent acceptance probability per recommended item, in `[0, 1]`.
    pub acceptance: f64,
    /// Accepted items arrive uniformly within this many days of the campaign.
    #[serde(default = "default_response_days")]
    pub response_days: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SimulationConfig {
    pub n_users: usize,
    pub n_items: usize,
    /// Exponent `s` of the item popularity law `P(rank r) ∝ r^-s`.
    pub popularity_exponent: f64,
    /// Edges per user of the universe at the first campaign (or the horizon).
    pub mean_profile_size: f64,
    /// Organic events per day after the first campaign.
    pub organic_rate: f64,
    /// Last simulated day.
    pub horizon: f64,
    #[serde(default)]
    pub seed: u64,
    #[serde(default)]
    pub campaigns: Vec<Campaign>,
}

impl SimulationConfig {
    pub fn validate(&self) -> Result<(), SimulationError> {
        let bad = |m: String| Err(SimulationError::InvalidConfig(m));
        if self.n_users == 0 || self.n_items == 0 {
            return bad("n_users and n_items must be positive".into());
        }
        if !(self.popularity_exponent >= 0.0 && self.popularity_exponent.is_finite()) {
            return bad("popularity_exponent must be a non-negative number".into());
        }
        if !(self.mean_profile_size > 0.0 && self.mean_profile_size.is_finite()) {
            return bad("mean_profile_size must be positive".into());
        }
        if self.mean_profile_size > self.n_items as f64 {
            return Err(SimulationError::Infeasible {
                mean: self.mean_profile_size,
                n_items: self.n_items,
            });
        }
        if !(self.organic_rate >= 0.0 && self.organic_rate.is_finite()) {
            return bad("organic_rate must be non-negative".into());
        }
        if !(self.horizon > 0.0 && self.horizon.is_finite()) {
            return bad("horizon must be positive".into());
        }
        let mut ids = HashSet::new();
        let mut last = 0.0;
        for c in &self.campaigns {
            if !ids.insert(c.id) {
                return bad(format!("duplicate campaign id {}", c.id));
            }
            if !(c.time > 0.0 && c.time < self.horizon) {
                return bad(format!("campaign {} must lie strictly inside (0, horizon)", c.id));
            }
            if c.time < last {
                return bad("campaigns must be listed in time order".into());
            }
            last = c.time;
            if c.k == 0 {
                return bad(format!("campaign {} has k = 0", c.id));
            }
            if !(c.targeted_fraction > 0.0 && c.targeted_fraction <= 1.0) {
                return bad(format!("campaign {} targeted_fraction must lie in (0, 1]", c.id));
            }
            if !(0.0..=1.0).contains(&c.acceptance) {
                return bad(format!("campaign {} acceptance must lie in [0, 1]", c.id));
            }
            if !(c.response_days >= 0.0 && c.response_days.is_finite()) {
                return bad(format!("campaign {} response_days must be non-negative", c.id));
            }
            if let RecommenderSpec::Constant { items, .. } = &c.recommender {
                if let Some(i) = items.iter().find(|&&i| i as usize >= self.n_items) {
                    return bad(format!("campaign {} recommends unknown item {i}", c.id));
                }
            }
            c.recommender.build()?;
        }
        Ok(())
    }

    /// End of the initial organic phase.
    pub fn first_campaign_time(&self) -> f64 {
        self.campaigns.first().map_or(self.horizon, |c| c.time)
    }

    fn popularity(&self) -> Zipf<f64> {
        Zipf::new(self.n_items as f64, self.popularity_exponent)
            .expect("validated popularity parameters")
    }
}

/// Item with popularity rank `id + 1`.
fn draw_item(z: &Zipf<f64>, rng: &mut Rng) -> ItemId {
    ItemId(z.sample(rng) as u32 - 1)
}

struct Organic<'a> {
    log: &'a InteractionLog,
    pending: HashSet<(UserId, ItemId)>,
    popularity: Zipf<f64>,
    n_users: usize,
}

impl Organic<'_> {
    /// A user-item pair held neither by the log nor by pending events.
    fn fresh_pair(&mut self, rng: &mut Rng) -> Option<(UserId, ItemId)> {
        for _ in 0..MAX_ATTEMPTS {
            let u = UserId(rng.random_range(0..self.n_users) as u32);
            let i = draw_item(&self.popularity, rng);
            if !self.log.contains(u, i) && self.pending.insert((u, i)) {
                return Some((u, i));
            }
        }
        None
    }
}

/// Organic events up to the first campaign: `round(mean · n_users)` events at
/// sorted uniform times in `[0, t_first)`, duplicates redrawn.
pub fn generate_initial(cfg: &SimulationConfig, rng: &mut Rng) -> Result<InteractionLog, SimulationError> {
    cfg.validate()?;
    let mut log = InteractionLog::with_universe(cfg.n_users, cfg.n_items);
    let n_events = (cfg.mean_profile_size * cfg.n_users as f64).round() as usize;
    let t_end = cfg.first_campaign_time();
    let mut times: Vec<f64> = (0..n_events).map(|_| rng.random::<f64>() * t_end).collect();
    times.sort_by(f64::total_cmp);

    let empty = InteractionLog::with_universe(cfg.n_users, cfg.n_items);
    let mut organic = Organic {
        log: &empty,
        pending: HashSet::with_capacity(n_events),
        popularity: cfg.popularity(),
        n_users: cfg.n_users,
    };
    let mut batch = Vec::with_capacity(n_events);
    for (placed, &t) in times.iter().enumerate() {
        let Some((user, item)) = organic.fresh_pair(rng) else {
            return Err(SimulationError::Saturated {
                missing: n_events - placed,
            });
        };
        batch.push(Interaction {
            user,
            item,
            timestamp: t,
            source: Source::Organic,
        });
    }
    log.extend(batch)?;
    Ok(log)
}

/// Organic Poisson events at `cfg.organic_rate` over `[from, until)`.
fn organic_events(
    cfg: &SimulationConfig,
    organic: &mut Organic<'_>,
    from: f64,
    until: f64,
    rng: &mut Rng,
) -> Vec<Interaction> {
    let mut out = Vec::new();
    if cfg.organic_rate <= 0.0 {
        return out;
    }
    let gap = Exp::new(cfg.organic_rate).expect("positive rate");
    let mut t = from;
    loop {
        t += gap.sample(rng);
        if t >= until {
            break;
        }
        if let Some((user, item)) = organic.fresh_pair(rng) {
            out.push(Interaction {
                user,
                item,
                timestamp: t,
                source: Source::Organic,
            });
        }
    }
    out
}

/// Applies campaign `c` to `log`, then lets organic growth run until `until`.
///
/// Targeted users get the top-`k` of the campaign recommender on their full
/// profile in the snapshot at `c.time`; each recommended item they do not hold
/// is accepted with probability `c.acceptance`, at a uniform time within the
/// response window (clipped to `until`).
pub fn run_campaign(
    cfg: &SimulationConfig,
    log: InteractionLog,
    c: &Campaign,
    until: f64,
    rng: &mut Rng,
) -> Result<InteractionLog, SimulationError> {
    let mut log = log;
    if let Some(last) = log.last_timestamp() {
        if c.time < last {
            return Err(SimulationError::OutOfOrder {
                id: c.id,
                time: c.time,
                last,
            });
        }
    }
    let recommender = c.recommender.build()?;
    let snapshot = snapshot_at(&log, c.time);
    let n_users = log.n_user_universe();
    let n_targeted = ((c.targeted_fraction * n_users as f64).round() as usize).clamp(1, n_users);
    let mut targeted = index::sample(rng, n_users, n_targeted).into_vec();
    targeted.sort_unstable();

    let window = c.response_days.min(until - c.time).max(0.0);
    let mut batch = Vec::new();
    for u in targeted {
        let user = UserId(u as u32);
        let list = recommender.recommend(&ProfileView::full(&snapshot, user), c.k);
        for &item in list.items() {
            if snapshot.holds(user, item) || item.index() >= log.n_item_universe() {
                continue;
            }
            if rng.random_bool(c.acceptance) {
                batch.push(Interaction {
                    user,
                    item,
                    timestamp: c.time + rng.random::<f64>() * window,
                    source: Source::Campaign(c.id),
                });
            }
        }
    }

    let mut organic = Organic {
        log: &log,
        pending: batch.iter().map(|e| (e.user, e.item)).collect(),
        popularity: cfg.popularity(),
        n_users,
    };
    let noise = organic_events(cfg, &mut organic, c.time, until, rng);
    batch.extend(noise);
    log.extend(batch)?;
    Ok(log)
}

/// Full history over `[0, horizon)` driven by `derive_seed(cfg.seed, "simulate")`.
pub fn run_timeline(cfg: &SimulationConfig) -> Result<InteractionLog, SimulationError> {
    cfg.validate()?;
    let mut rng = rng::seeded(rng::derive_seed(cfg.seed, "simulate"));
    let mut log = generate_initial(cfg, &mut rng)?;
    if cfg.campaigns.is_empty() {
        let mut organic = Organic {
            log: &log,
            pending: HashSet::new(),
            popularity: cfg.popularity(),
            n_users: cfg.n_users,
        };
        let t0 = cfg.first_campaign_time();
        let noise = organic_events(cfg, &mut organic, t0, cfg.horizon, &mut rng);
        log.extend(noise)?;
        return Ok(log);
    }
    for (j, c) in cfg.campaigns.iter().enumerate() {
        let until = cfg.campaigns.get(j + 1).map_or(cfg.horizon, |next| next.time);
        log = run_campaign(cfg, log, c, until, &mut rng)?;
    }
    Ok(log)
}

/// `P_t(i)` with unit weights for each `t`; an empty snapshot yields zeros.
pub fn item_probability_series(log: &InteractionLog, times: &[f64]) -> Vec<ItemDistribution> {
    let ones = WeightVector::ones(log.n_item_universe());
    times
        .iter()
        .map(|&t| {
            item_distribution(&snapshot_at(log, t), &ones)
                .unwrap_or_else(|_| ItemDistribution::from_vec(vec![0.0; log.n_item_universe()]))
        })
        .collect()
}

/// Number of campaign-sourced edges per item with timestamps in `[from, to]`.
pub fn campaign_item_counts(log: &InteractionLog, from: f64, to: f64) -> BTreeMap<ItemId, usize> {
    let mut counts = BTreeMap::new();
    for e in log.interactions() {
        if matches!(e.source, Source::Campaign(_)) && e.timestamp >= from && e.timestamp <= to {
            *counts.entry(e.item).or_insert(0) += 1;
        }
    }
    counts
}

/// The `k` items most often added by campaigns within `[from, to]`, ties by id.
pub fn most_recommended_items(log: &InteractionLog, from: f64, to: f64, k: usize) -> Vec<ItemId> {
    let mut counts: Vec<(ItemId, usize)> = campaign_item_counts(log, from, to).into_iter().collect();
    counts.sort_by(|a, b| b.1.cmp(&a.1).then(a.0.cmp(&b.0)));
    counts.into_iter().take(k).map(|(i, _)| i).collect()
}

/// The `k` most frequent items of the snapshot at `at` that no campaign added
/// within `[from, to]`, ties by id.
pub fn frequent_unrecommended_items(
    log: &InteractionLog,
    at: f64,
    from: f64,
    to: f64,
    k: usize,
) -> Vec<ItemId> {
    let campaigned = campaign_item_counts(log, from, to);
    let snapshot = snapshot_at(log, at);
    let mut items: Vec<(ItemId, usize)> = (0..snapshot.n_item_universe())
        .map(|i| ItemId(i as u32))
        .filter(|i| !campaigned.contains_key(i))
        .map(|i| (i, snapshot.item_degree(i)))
        .filter(|&(_, d)| d > 0)
        .collect();
    items.sort_by(|a, b| b.1.cmp(&a.1).then(a.0.cmp(&b.0)));
    items.into_iter().take(k).map(|(i, _)| i).collect()
}
