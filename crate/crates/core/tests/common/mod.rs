//! Independent reference implementations used as test oracles. Nothing here
//! calls into the code paths it checks.
#![allow(dead_code)]

use std::collections::{BTreeSet, HashMap, HashSet};

use landmark_retrieval::embeddings::EmbeddingMatrix;
use landmark_retrieval::rng::DetRng;

pub fn random_unit(n: usize, dim: usize, prefix: &str, rng: &mut DetRng) -> EmbeddingMatrix {
    let mut data = Vec::with_capacity(n * dim);
    for _ in 0..n {
        let row: Vec<f64> = (0..dim).map(|_| rng.unit() * 2.0 - 1.0).collect();
        let norm = row.iter().map(|v| v * v).sum::<f64>().sqrt();
        data.extend(row.iter().map(|v| (v / norm) as f32));
    }
    let ids = (0..n).map(|i| format!("{prefix}{i:04}")).collect();
    EmbeddingMatrix::new(dim, ids, data).unwrap()
}

pub fn random_unit_f64(dim: usize, rng: &mut DetRng) -> Vec<f64> {
    let v: Vec<f64> = (0..dim).map(|_| rng.unit() * 2.0 - 1.0).collect();
    let n = v.iter().map(|x| x * x).sum::<f64>().sqrt();
    v.into_iter().map(|x| x / n).collect()
}

/// f32-rounded cosine, the similarity domain used throughout.
pub fn sim(a: &[f32], b: &[f32]) -> f64 {
    let mut acc = 0.0f64;
    for i in 0..a.len() {
        acc += a[i] as f64 * b[i] as f64;
    }
    acc as f32 as f64
}

/// Full sort of every index row, similarity descending then id ascending.
pub fn naive_topk(q: &[f32], index: &EmbeddingMatrix, k: usize) -> Vec<(String, f64)> {
    let mut all: Vec<(String, f64)> = (0..index.len())
        .map(|j| (index.ids()[j].clone(), sim(q, index.row(j))))
        .collect();
    all.sort_by(|a, b| {
        if a.1 != b.1 {
            b.1.partial_cmp(&a.1).unwrap()
        } else {
            a.0.cmp(&b.0)
        }
    });
    all.truncate(k);
    all
}

/// Explicit-set k-reciprocal re-ranking.
pub struct NaiveKr {
    pub reciprocal: Vec<BTreeSet<usize>>,
    pub expanded: Vec<BTreeSet<usize>>,
    /// n_probe x n_gallery final distances.
    pub final_dist: Vec<Vec<f64>>,
    /// Gallery ids per probe in final order.
    pub order: Vec<Vec<String>>,
}

fn half_round_even(k: usize) -> usize {
    let lo = k / 2;
    if k % 2 == 1 && lo % 2 == 1 {
        lo + 1
    } else {
        lo
    }
}

pub fn naive_k_reciprocal(
    probe: &EmbeddingMatrix,
    gallery: &EmbeddingMatrix,
    k1: usize,
    k2: usize,
    lambda: f64,
) -> NaiveKr {
    let rows: Vec<&[f32]> = (0..probe.len())
        .map(|i| probe.row(i))
        .chain((0..gallery.len()).map(|i| gallery.row(i)))
        .collect();
    let ids: Vec<&String> = probe.ids().iter().chain(gallery.ids()).collect();
    let n = rows.len();
    let nq = probe.len();
    let dist = |i: usize, j: usize| 1.0 - sim(rows[i], rows[j]);

    let knn = |i: usize, count: usize| -> Vec<usize> {
        let mut all: Vec<usize> = (0..n).collect();
        all.sort_by(|&a, &b| {
            let (da, db) = (dist(i, a), dist(i, b));
            if da != db {
                da.partial_cmp(&db).unwrap()
            } else if ids[a] != ids[b] {
                ids[a].cmp(ids[b])
            } else {
                a.cmp(&b)
            }
        });
        all.truncate(count);
        all
    };

    let recip = |i: usize, k: usize| -> BTreeSet<usize> {
        let fwd: HashSet<usize> = knn(i, k + 1).into_iter().collect();
        fwd.iter()
            .copied()
            .filter(|&j| knn(j, k + 1).contains(&i))
            .collect()
    };

    let half = half_round_even(k1);
    let mut reciprocal = Vec::new();
    let mut expanded = Vec::new();
    let mut v: Vec<HashMap<usize, f64>> = Vec::new();
    for i in 0..n {
        let r = recip(i, k1);
        let mut e = r.clone();
        for &c in &r {
            let rc = recip(c, half);
            let inter = rc.intersection(&r).count();
            if (inter as f64) > (rc.len() as f64) * 2.0 / 3.0 {
                e.extend(rc);
            }
        }
        let total: f64 = e.iter().map(|&j| (-dist(i, j)).exp()).sum();
        v.push(e.iter().map(|&j| (j, (-dist(i, j)).exp() / total)).collect());
        reciprocal.push(r);
        expanded.push(e);
    }

    if k2 > 1 {
        let mut vq = Vec::new();
        for i in 0..n {
            let mut m: HashMap<usize, f64> = HashMap::new();
            for j in knn(i, k2) {
                for (&c, &w) in &v[j] {
                    *m.entry(c).or_insert(0.0) += w / k2 as f64;
                }
            }
            vq.push(m);
        }
        v = vq;
    }

    let mut final_dist = Vec::new();
    let mut order = Vec::new();
    for q in 0..nq {
        let mut row = Vec::new();
        for g in 0..gallery.len() {
            let gi = nq + g;
            let keys: HashSet<usize> = v[q].keys().chain(v[gi].keys()).copied().collect();
            let (mut num, mut den) = (0.0, 0.0);
            for k in keys {
                let a = v[q].get(&k).copied().unwrap_or(0.0);
                let b = v[gi].get(&k).copied().unwrap_or(0.0);
                num += a.min(b);
                den += a.max(b);
            }
            let dj = 1.0 - num / den;
            row.push(lambda * dist(q, gi) + (1.0 - lambda) * dj);
        }
        let mut idx: Vec<usize> = (0..gallery.len()).collect();
        idx.sort_by(|&a, &b| {
            if row[a] != row[b] {
                row[a].partial_cmp(&row[b]).unwrap()
            } else {
                gallery.ids()[a].cmp(&gallery.ids()[b])
            }
        });
        order.push(idx.into_iter().map(|g| gallery.ids()[g].clone()).collect());
        final_dist.push(row);
    }
    NaiveKr {
        reciprocal,
        expanded,
        final_dist,
        order,
    }
}

/// AP@100 via explicit prefix counts.
pub fn scratch_ap(ranked: &[String], relevant: &BTreeSet<String>) -> f64 {
    let n = ranked.len().min(100);
    let mut total = 0.0;
    for i in 1..=n {
        if relevant.contains(&ranked[i - 1]) {
            let hits = ranked[..i].iter().filter(|r| relevant.contains(*r)).count();
            total += hits as f64 / i as f64;
        }
    }
    total / relevant.len().min(100) as f64
}

pub fn scratch_map(
    pred: &std::collections::BTreeMap<String, Vec<String>>,
    gt: &std::collections::BTreeMap<String, BTreeSet<String>>,
) -> f64 {
    let sum: f64 = gt
        .iter()
        .map(|(q, rel)| pred.get(q).map_or(0.0, |r| scratch_ap(r, rel)))
        .sum();
    sum / gt.len() as f64
}

/// ArcFace cross-entropy computed through `acos`, an independent route to
/// the same loss.
pub fn arcface_loss_via_acos(x: &[f64], w: &[Vec<f64>], target: usize, s: f64, m: f64) -> f64 {
    let logits: Vec<f64> = w
        .iter()
        .enumerate()
        .map(|(j, wj)| {
            let c: f64 = x.iter().zip(wj).map(|(a, b)| a * b).sum::<f64>().clamp(-1.0, 1.0);
            if j == target {
                s * (c.acos() + m).cos()
            } else {
                s * c
            }
        })
        .collect();
    // ln(1 + sum_{j != t} e^(l_j - l_t)) keeps tiny losses accurate
    let rest: f64 = logits
        .iter()
        .enumerate()
        .filter(|&(j, _)| j != target)
        .map(|(_, l)| (l - logits[target]).exp())
        .sum();
    rest.ln_1p()
}

/// Central finite differences of the acos-route loss w.r.t. `x`.
pub fn arcface_fd_grad(x: &[f64], w: &[Vec<f64>], target: usize, s: f64, m: f64, h: f64) -> Vec<f64> {
    (0..x.len())
        .map(|d| {
            let mut up = x.to_vec();
            let mut dn = x.to_vec();
            up[d] += h;
            dn[d] -= h;
            (arcface_loss_via_acos(&up, w, target, s, m) - arcface_loss_via_acos(&dn, w, target, s, m))
                / (2.0 * h)
        })
        .collect()
}

pub fn rel_err(a: &[f64], b: &[f64]) -> f64 {
    let diff = a.iter().zip(b).map(|(x, y)| (x - y).powi(2)).sum::<f64>().sqrt();
    let scale = a.iter().map(|x| x * x).sum::<f64>().sqrt().max(b.iter().map(|x| x * x).sum::<f64>().sqrt());
    if scale == 0.0 {
        diff
    } else {
        diff / scale
    }
}
