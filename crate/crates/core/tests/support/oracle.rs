//! Dense brute-force references over a small biadjacency matrix `b[u][i]`.
//! Nothing here calls into the library except to build its inputs.

#![allow(dead_code)]

use offeval_core::dataset::{ItemId, Snapshot, UserId};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

/// A random bipartite graph with weights and a reference distribution.
#[derive(Debug, Clone)]
pub struct Instance {
    pub b: Vec<Vec<bool>>,
    pub weights: Vec<f64>,
    /// Reference marginal; supported only on items present in the graph.
    pub target: Vec<f64>,
}

impl Instance {
    pub fn n_users(&self) -> usize {
        self.b.len()
    }

    pub fn n_items(&self) -> usize {
        self.b.first().map_or(0, Vec::len)
    }

    pub fn edges(&self) -> Vec<(UserId, ItemId)> {
        let mut out = Vec::new();
        for (u, row) in self.b.iter().enumerate() {
            for (i, &x) in row.iter().enumerate() {
                if x {
                    out.push((UserId(u as u32), ItemId(i as u32)));
                }
            }
        }
        out
    }

    pub fn snapshot(&self) -> Snapshot {
        Snapshot::from_edges(0.0, self.n_users(), self.n_items(), self.edges())
    }

    fn degree(&self, i: usize) -> usize {
        self.b.iter().filter(|row| row[i]).count()
    }
}

/// Instance with `1..=max_users` users, `1..=max_items` items, at least one
/// edge, weights uniform in `[0.5, 2]`.
pub fn instance(seed: u64, max_users: usize, max_items: usize) -> Instance {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let nu = rng.random_range(1..=max_users);
    let ni = rng.random_range(1..=max_items);
    let density: f64 = rng.random_range(0.1..0.7);
    let mut b: Vec<Vec<bool>> = (0..nu)
        .map(|_| (0..ni).map(|_| rng.random_bool(density)).collect())
        .collect();
    if !b.iter().flatten().any(|&x| x) {
        let u = rng.random_range(0..nu);
        let i = rng.random_range(0..ni);
        b[u][i] = true;
    }
    let weights = (0..ni).map(|_| rng.random_range(0.5..=2.0)).collect();
    let mut inst = Instance {
        b,
        weights,
        target: Vec::new(),
    };
    let mut target: Vec<f64> = (0..ni)
        .map(|i| {
            if inst.degree(i) > 0 && rng.random_bool(0.85) {
                rng.random_range(0.05..1.0)
            } else {
                0.0
            }
        })
        .collect();
    if target.iter().all(|&x| x == 0.0) {
        let i = (0..ni).find(|&i| inst.degree(i) > 0).unwrap();
        target[i] = 1.0;
    }
    let total: f64 = target.iter().sum();
    for x in &mut target {
        *x /= total;
    }
    inst.target = target;
    inst
}

fn active_users(b: &[Vec<bool>]) -> usize {
    b.iter().filter(|row| row.iter().any(|&x| x)).count()
}

fn row_mass(row: &[bool], w: &[f64]) -> f64 {
    row.iter().zip(w).filter(|(&x, _)| x).map(|(_, &wi)| wi).sum()
}

/// `P(i|ω)` summing `P(u) P(i|u,ω)` over the full matrix.
pub fn item_distribution(b: &[Vec<bool>], w: &[f64]) -> Vec<f64> {
    let n_items = w.len();
    let n_active = active_users(b) as f64;
    let mut p = vec![0.0; n_items];
    for row in b {
        let s = row_mass(row, w);
        if s == 0.0 {
            continue;
        }
        for i in 0..n_items {
            if row[i] {
                p[i] += w[i] / s / n_active;
            }
        }
    }
    p
}

/// Matrix of `P(i,k|ω)`.
pub fn pair_distribution(b: &[Vec<bool>], w: &[f64]) -> Vec<Vec<f64>> {
    let n_items = w.len();
    let n_active = active_users(b) as f64;
    let mut p = vec![vec![0.0; n_items]; n_items];
    for row in b {
        let s = row_mass(row, w);
        if s == 0.0 {
            continue;
        }
        for i in 0..n_items {
            for k in 0..n_items {
                if row[i] && row[k] {
                    p[i][k] += w[i] * w[k] / (s * s) / n_active;
                }
            }
        }
    }
    p
}

pub fn kl(target: &[f64], b: &[Vec<bool>], w: &[f64]) -> f64 {
    let p = item_distribution(b, w);
    target
        .iter()
        .zip(&p)
        .filter(|(&p0, _)| p0 > 0.0)
        .map(|(&p0, &p1)| p0 * (p0 / p1.max(1e-12)).ln())
        .sum()
}

/// Central differences of `D` with step `h` in each weight.
pub fn finite_difference_gradient(inst: &Instance, h: f64) -> Vec<f64> {
    (0..inst.n_items())
        .map(|k| {
            let mut up = inst.weights.clone();
            let mut down = inst.weights.clone();
            up[k] += h;
            down[k] -= h;
            (kl(&inst.target, &inst.b, &up) - kl(&inst.target, &inst.b, &down)) / (2.0 * h)
        })
        .collect()
}

/// `|a − b| / max(|a|, |b|, floor)`.
pub fn rel_err(a: f64, b: f64, floor: f64) -> f64 {
    (a - b).abs() / a.abs().max(b.abs()).max(floor)
}

/// `b` with user `u`'s row replaced by its leave-one-out profile.
fn hide(b: &[Vec<bool>], u: usize, hidden: Option<usize>) -> Vec<Vec<bool>> {
    let mut m = b.to_vec();
    if let Some(i) = hidden {
        m[u][i] = false;
    }
    m
}

/// `Σ_{v≠u} <B_u,B_v>/sqrt(‖B_u‖·‖B_v‖) · B_v` on the matrix with `hidden`
/// removed from `u`'s row; `textbook` divides by `‖B_u‖·‖B_v‖` instead.
pub fn cosine_scores(b: &[Vec<bool>], u: usize, hidden: Option<usize>, textbook: bool) -> Vec<f64> {
    let m = hide(b, u, hidden);
    let n_items = m[0].len();
    let norm = |row: &[bool]| (row.iter().filter(|&&x| x).count() as f64).sqrt();
    let mut scores = vec![0.0; n_items];
    let nu = norm(&m[u]);
    for (v, row) in m.iter().enumerate() {
        if v == u {
            continue;
        }
        let dot = (0..n_items).filter(|&i| m[u][i] && row[i]).count() as f64;
        if dot == 0.0 {
            continue;
        }
        let nv = norm(row);
        let sim = if textbook {
            dot / (nu * nv)
        } else {
            dot / (nu * nv).sqrt()
        };
        for i in 0..n_items {
            if row[i] {
                scores[i] += sim;
            }
        }
    }
    scores
}

/// `max_{j∈I_u} #(U_i ∩ U_j) / #U_j` on the matrix with `hidden` removed.
pub fn naive_scores(b: &[Vec<bool>], u: usize, hidden: Option<usize>) -> Vec<f64> {
    let m = hide(b, u, hidden);
    let n_items = m[0].len();
    let mut scores = vec![0.0; n_items];
    for j in 0..n_items {
        if !m[u][j] {
            continue;
        }
        let holders: Vec<usize> = (0..m.len()).filter(|&v| m[v][j]).collect();
        for (i, score) in scores.iter_mut().enumerate() {
            let both = holders.iter().filter(|&&v| m[v][i]).count() as f64;
            let ratio = both / holders.len() as f64;
            if ratio > *score {
                *score = ratio;
            }
        }
    }
    scores
}
