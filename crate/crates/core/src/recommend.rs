//! Recommenders behind a single scoring-and-ranking interface.
//!
//! Two collaborative-filtering scorers work on a [`ProfileView`]; the hidden
//! item of a leave-one-out view is removed from the user's own vector only.
//! Every other user's adjacency comes from the intact snapshot, which makes a
//! view equivalent to physically deleting the `(u, i)` edge.

use std::collections::HashSet;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::dataset::{ItemId, ProfileView};

#[derive(Debug, Error, PartialEq)]
pub enum RecommendError {
    #[error("constant recommender needs at least one item")]
    EmptyList,

    #[error("item {0} appears twice in the constant list")]
    DuplicateItem(ItemId),

    #[error("unknown recommender `{0}`")]
    UnknownRecommender(String),
}

/// Dense item scores; entries default to 0.
#[derive(Debug, Clone, PartialEq)]
pub struct ScoreVector {
    scores: Vec<f64>,
}

impl ScoreVector {
    pub fn zeros(n_items: usize) -> Self {
        Self {
            scores: vec![0.0; n_items],
        }
    }

    pub fn from_vec(scores: Vec<f64>) -> Self {
        debug_assert!(scores.iter().all(|s| s.is_finite()));
        Self { scores }
    }

    pub fn get(&self, item: ItemId) -> f64 {
        self.scores.get(item.index()).copied().unwrap_or(0.0)
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.scores
    }

    pub fn len(&self) -> usize {
        self.scores.len()
    }

    pub fn is_empty(&self) -> bool {
        self.scores.is_empty()
    }

    pub fn is_zero(&self) -> bool {
        self.scores.iter().all(|&s| s == 0.0)
    }
}

/// Ordered list of distinct items, best first.
#[derive(Debug, Clone, PartialEq, Eq, Default, Serialize, Deserialize)]
pub struct RecommendationList(pub Vec<ItemId>);

impl RecommendationList {
    pub fn items(&self) -> &[ItemId] {
        &self.0
    }

    pub fn contains(&self, item: ItemId) -> bool {
        self.0.contains(&item)
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }
}

/// A recommendation algorithm `g`. Implementations must be deterministic in
/// `(profile, k)`.
pub trait Recommender: Send + Sync {
    fn name(&self) -> &str;

    fn recommend(&self, profile: &ProfileView<'_>, k: usize) -> RecommendationList;
}

/// Keeps the `k` best `(score, id)` pairs among the eligible indices, ordered
/// by descending score then ascending id.
fn select_top(scores: &[f64], k: usize, mut eligible: impl FnMut(usize) -> bool) -> Vec<ItemId> {
    let mut best: Vec<(f64, usize)> = Vec::with_capacity(k + 1);
    if k == 0 {
        return Vec::new();
    }
    for (i, &s) in scores.iter().enumerate() {
        if best.len() == k && s <= best[k - 1].0 {
            continue;
        }
        if !eligible(i) {
            continue;
        }
        // Indices arrive ascending, so an equal score ranks after existing entries.
        let at = best.partition_point(|&(b, _)| b >= s);
        best.insert(at, (s, i));
        best.truncate(k);
    }
    best.into_iter().map(|(_, i)| ItemId(i as u32)).collect()
}

/// The `k` highest-scoring items not in `exclude`, ties by ascending id.
pub fn top_k(scores: &ScoreVector, k: usize, exclude: &[ItemId]) -> RecommendationList {
    let exclude: HashSet<ItemId> = exclude.iter().copied().collect();
    RecommendationList(select_top(&scores.scores, k, |i| {
        !exclude.contains(&ItemId(i as u32))
    }))
}

/// Returns the first `k` entries of a fixed list for every profile.
#[derive(Debug, Clone)]
pub struct ConstantRecommender {
    name: String,
    items: Vec<ItemId>,
    exclude_profile: bool,
}

impl ConstantRecommender {
    pub fn new(items: Vec<ItemId>) -> Result<Self, RecommendError> {
        if items.is_empty() {
            return Err(RecommendError::EmptyList);
        }
        let mut seen = HashSet::new();
        for &i in &items {
            if !seen.insert(i) {
                return Err(RecommendError::DuplicateItem(i));
            }
        }
        Ok(Self {
            name: "constant".to_string(),
            items,
            exclude_profile: false,
        })
    }

    /// Skip items already in the (remaining) profile. Off by default.
    pub fn excluding_profile(mut self, exclude: bool) -> Self {
        self.exclude_profile = exclude;
        self
    }

    pub fn named(mut self, name: impl Into<String>) -> Self {
        self.name = name.into();
        self
    }

    pub fn items(&self) -> &[ItemId] {
        &self.items
    }
}

impl Recommender for ConstantRecommender {
    fn name(&self) -> &str {
        &self.name
    }

    fn recommend(&self, profile: &ProfileView<'_>, k: usize) -> RecommendationList {
        let list = self
            .items
            .iter()
            .copied()
            .filter(|&i| !(self.exclude_profile && profile.contains(i)))
            .take(k)
            .collect();
        RecommendationList(list)
    }
}

pub fn constant_recommender(items: Vec<ItemId>) -> Result<ConstantRecommender, RecommendError> {
    ConstantRecommender::new(items)
}

/// Denominator of the cosine-CF similarity.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum CosineVariant {
    /// `<B_u,B_v> / sqrt(|B_u| |B_v|)`; the default.
    #[default]
    SqrtNorm,
    /// `<B_u,B_v> / (|B_u| |B_v|)`, the usual cosine.
    Textbook,
}

/// `Σ_{v≠u} sim(u,v) B_v` where only co-neighbours of the view contribute.
pub fn cosine_cf_scores_with(profile: &ProfileView<'_>, variant: CosineVariant) -> ScoreVector {
    let s = profile.snapshot();
    let mut scores = ScoreVector::zeros(s.n_item_universe());
    let n_profile = profile.len();
    if n_profile == 0 {
        return scores;
    }
    let me = profile.user();

    let mut overlap = vec![0u32; s.n_user_universe()];
    let mut touched = Vec::new();
    for j in profile.iter() {
        for &v in s.users_of(j) {
            if v == me {
                continue;
            }
            if overlap[v.index()] == 0 {
                touched.push(v);
            }
            overlap[v.index()] += 1;
        }
    }
    touched.sort_unstable();

    let norm_u = (n_profile as f64).sqrt();
    for v in touched {
        let dot = overlap[v.index()] as f64;
        let norm_v = (s.user_degree(v) as f64).sqrt();
        let sim = match variant {
            CosineVariant::SqrtNorm => dot / (norm_u * norm_v).sqrt(),
            CosineVariant::Textbook => dot / (norm_u * norm_v),
        };
        for &i in s.items_of(v) {
            scores.scores[i.index()] += sim;
        }
    }
    scores
}

pub fn cosine_cf_scores(profile: &ProfileView<'_>) -> ScoreVector {
    cosine_cf_scores_with(profile, CosineVariant::SqrtNorm)
}

/// `score(i) = max_{j in profile} #(U_i ∩ U_j) / #U_j`.
///
/// The profile owner contributes to the co-occurrence counts through the view,
/// so a hidden item never counts itself.
pub fn naive_cf_scores(profile: &ProfileView<'_>) -> ScoreVector {
    let s = profile.snapshot();
    let n_items = s.n_item_universe();
    let mut scores = ScoreVector::zeros(n_items);
    if profile.is_empty() {
        return scores;
    }
    let me = profile.user();
    let mine: Vec<ItemId> = profile.iter().collect();

    let mut co = vec![0u32; n_items];
    let mut touched: Vec<usize> = Vec::new();
    for &j in &mine {
        let holders = s.users_of(j);
        for &v in holders {
            if v == me {
                continue;
            }
            for &i in s.items_of(v) {
                if co[i.index()] == 0 {
                    touched.push(i.index());
                }
                co[i.index()] += 1;
            }
        }
        for &i in &mine {
            if co[i.index()] == 0 {
                touched.push(i.index());
            }
            co[i.index()] += 1;
        }
        let denom = holders.len() as f64;
        for &i in &touched {
            let ratio = co[i] as f64 / denom;
            if ratio > scores.scores[i] {
                scores.scores[i] = ratio;
            }
            co[i] = 0;
        }
        touched.clear();
    }
    scores
}

/// Items from a view's snapshot that can be recommended: held by someone once
/// the hidden edge is removed, and not in the remaining profile.
fn cf_top_k(profile: &ProfileView<'_>, scores: &ScoreVector, k: usize) -> RecommendationList {
    let s = profile.snapshot();
    let owned: Vec<ItemId> = profile.iter().collect();
    RecommendationList(select_top(scores.as_slice(), k, |i| {
        let item = ItemId(i as u32);
        let hidden = usize::from(profile.excluded_item() == Some(item));
        s.item_degree(item) > hidden && owned.binary_search(&item).is_err()
    }))
}

#[derive(Debug, Clone, Copy, Default)]
pub struct CosineCf {
    pub variant: CosineVariant,
}

impl Recommender for CosineCf {
    fn name(&self) -> &str {
        match self.variant {
            CosineVariant::SqrtNorm => "cosine-cf",
            CosineVariant::Textbook => "cosine-cf-textbook",
        }
    }

    fn recommend(&self, profile: &ProfileView<'_>, k: usize) -> RecommendationList {
        cf_top_k(profile, &cosine_cf_scores_with(profile, self.variant), k)
    }
}

#[derive(Debug, Clone, Copy, Default)]
pub struct NaiveCf;

impl Recommender for NaiveCf {
    fn name(&self) -> &str {
        "naive-cf"
    }

    fn recommend(&self, profile: &ProfileView<'_>, k: usize) -> RecommendationList {
        cf_top_k(profile, &naive_cf_scores(profile), k)
    }
}

/// Serializable recommender selection, used by configs.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case")]
pub enum RecommenderSpec {
    Constant {
        items: Vec<u32>,
        #[serde(default)]
        exclude_profile: bool,
    },
    Cosine {
        #[serde(default)]
        variant: CosineVariant,
    },
    Naive,
}

impl RecommenderSpec {
    pub fn build(&self) -> Result<Box<dyn Recommender>, RecommendError> {
        Ok(match self {
            RecommenderSpec::Constant {
                items,
                exclude_profile,
            } => Box::new(
                ConstantRecommender::new(items.iter().map(|&i| ItemId(i)).collect())?
                    .excluding_profile(*exclude_profile),
            ),
            RecommenderSpec::Cosine { variant } => Box::new(CosineCf { variant: *variant }),
            RecommenderSpec::Naive => Box::new(NaiveCf),
        })
    }

    /// Looks a recommender up by name: `cosine`, `cosine-textbook`, `naive`.
    pub fn by_name(name: &str) -> Result<Self, RecommendError> {
        match name {
            "cosine" | "cosine-cf" => Ok(RecommenderSpec::Cosine {
                variant: CosineVariant::SqrtNorm,
            }),
            "cosine-textbook" | "cosine-cf-textbook" => Ok(RecommenderSpec::Cosine {
                variant: CosineVariant::Textbook,
            }),
            "naive" | "naive-cf" => Ok(RecommenderSpec::Naive),
            other => Err(RecommendError::UnknownRecommender(other.to_string())),
        }
    }
}
