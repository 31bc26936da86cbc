//! k-reciprocal re-ranking over a joint probe + gallery neighbourhood.
//!
//! Distances are `d = 1 - cos`. For every item `p` of the joint set:
//!
//! 1. `R(p, k1)`: members of the `k1 + 1` nearest neighbours of `p` that also
//!    have `p` among their own `k1 + 1` nearest neighbours.
//! 2. Expansion: for each `c` in `R(p, k1)`, if more than 2/3 of
//!    `R(c, round(k1 / 2))` lies in `R(p, k1)`, that set is merged in
//!    (`round` is half-to-even).
//! 3. Encoding: `V[p][j] = exp(-d(p, j))` over the expanded set, normalized
//!    to sum 1.
//! 4. Local expansion: with `k2 > 1`, `V[p]` is replaced by the mean of `V`
//!    over the `k2` nearest neighbours of `p`.
//! 5. `d_J(p, g) = 1 - m / (2 - m)` with `m = sum_j min(V[p][j], V[g][j])`.
//! 6. `d* = lambda * d + (1 - lambda) * d_J`.
//!
//! Neighbour ranks break distance ties by id, then by joint position
//! (probes first).

use std::cmp::Ordering;

use rayon::prelude::*;

use crate::embeddings::EmbeddingMatrix;
use crate::error::{Error, Result};
use crate::retrieval::{pairwise_sim, RankedList, Scored, SimMatrix};

/// Reciprocal set, expanded set and sparse encoding of one point.
type ItemSets = (Vec<usize>, Vec<usize>, Vec<(usize, f64)>);

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct KReciprocalParams {
    pub k1: usize,
    pub k2: usize,
    pub lambda: f64,
}

impl Default for KReciprocalParams {
    fn default() -> Self {
        Self {
            k1: 20,
            k2: 6,
            lambda: 0.3,
        }
    }
}

impl KReciprocalParams {
    pub fn validate(&self, gallery_len: usize) -> Result<()> {
        if self.k1 == 0 || self.k2 == 0 {
            return Err(Error::invalid("k1 and k2 must be positive"));
        }
        if self.k1 >= gallery_len {
            return Err(Error::invalid(format!(
                "k1={} must be smaller than the gallery ({gallery_len})",
                self.k1
            )));
        }
        if self.k2 > self.k1 {
            return Err(Error::invalid(format!("k2={} exceeds k1={}", self.k2, self.k1)));
        }
        if !(0.0..=1.0).contains(&self.lambda) {
            return Err(Error::invalid(format!("lambda must be in [0, 1], got {}", self.lambda)));
        }
        Ok(())
    }

    /// Neighbourhood size for the candidate expansion test.
    pub fn half_k1(&self) -> usize {
        (self.k1 as f64 / 2.0).round_ties_even() as usize
    }
}

/// Intermediate and final quantities, indexed by joint position
/// (`0..n_probe` probes, then gallery).
#[derive(Debug, Clone)]
pub struct KReciprocalState {
    pub n_probe: usize,
    pub n_gallery: usize,
    /// `R(p, k1)` per joint item, ascending joint position.
    pub reciprocal: Vec<Vec<usize>>,
    /// Expanded neighbour set per joint item, ascending joint position.
    pub expanded: Vec<Vec<usize>>,
    /// Sparse encodings after local expansion, ascending column.
    pub encoding: Vec<Vec<(usize, f64)>>,
    /// `n_probe x n_gallery` Jaccard distances.
    pub jaccard: Vec<f64>,
    /// `n_probe x n_gallery` final distances.
    pub final_dist: Vec<f64>,
}

struct Joint<'a> {
    sim: SimMatrix,
    ids: Vec<&'a str>,
}

impl Joint<'_> {
    #[inline]
    fn dist(&self, i: usize, j: usize) -> f64 {
        1.0 - self.sim.get(i, j) as f64
    }

    fn cmp(&self, i: usize, a: usize, b: usize) -> Ordering {
        self.dist(i, a)
            .total_cmp(&self.dist(i, b))
            .then_with(|| self.ids[a].cmp(self.ids[b]))
            .then(a.cmp(&b))
    }

    /// First `n` joint items by distance from `i`.
    fn nearest(&self, i: usize, n: usize) -> Vec<usize> {
        let total = self.ids.len();
        let mut order: Vec<usize> = (0..total).collect();
        let n = n.min(total);
        if n < total {
            order.select_nth_unstable_by(n, |&a, &b| self.cmp(i, a, b));
            order.truncate(n);
        }
        order.sort_by(|&a, &b| self.cmp(i, a, b));
        order
    }
}

fn reciprocal_of(p: usize, ranks: &[Vec<usize>], width: usize) -> Vec<usize> {
    ranks[p][..width.min(ranks[p].len())]
        .iter()
        .copied()
        .filter(|&f| ranks[f][..width.min(ranks[f].len())].contains(&p))
        .collect()
}

pub fn k_reciprocal_state(
    probe: &EmbeddingMatrix,
    gallery: &EmbeddingMatrix,
    params: KReciprocalParams,
    memory_budget: u64,
) -> Result<KReciprocalState> {
    params.validate(gallery.len())?;
    if probe.dim() != gallery.dim() {
        return Err(Error::DimMismatch {
            left: probe.dim(),
            right: gallery.dim(),
        });
    }
    let (nq, ng) = (probe.len(), gallery.len());
    let ids: Vec<&str> = probe
        .ids()
        .iter()
        .chain(gallery.ids())
        .map(String::as_str)
        .collect();
    let mut data = probe.data().to_vec();
    data.extend_from_slice(gallery.data());
    let all = EmbeddingMatrix::new_unchecked(probe.dim(), ids.iter().map(|s| s.to_string()).collect(), data);
    let joint = Joint {
        sim: pairwise_sim(&all, &all, memory_budget)?,
        ids,
    };
    let total = nq + ng;

    let width = params.k1 + 1;
    let half = params.half_k1() + 1;
    let ranks: Vec<Vec<usize>> = (0..total)
        .into_par_iter()
        .map(|i| joint.nearest(i, width.max(params.k2)))
        .collect();

    let per_item: Vec<ItemSets> = (0..total)
        .into_par_iter()
        .map(|p| {
            let recip = reciprocal_of(p, &ranks, width);
            let mut expanded = recip.clone();
            if expanded.is_empty() {
                expanded.push(p);
            }
            for &c in &recip {
                let cand = reciprocal_of(c, &ranks, half);
                let overlap = cand.iter().filter(|x| recip.contains(x)).count();
                if overlap as f64 > 2.0 / 3.0 * cand.len() as f64 {
                    expanded.extend_from_slice(&cand);
                }
            }
            expanded.sort_unstable();
            expanded.dedup();
            let weights: Vec<f64> = expanded.iter().map(|&j| (-joint.dist(p, j)).exp()).collect();
            let sum: f64 = weights.iter().sum();
            let enc = expanded
                .iter()
                .zip(&weights)
                .map(|(&j, &w)| (j, w / sum))
                .collect();
            let mut recip = recip;
            recip.sort_unstable();
            (recip, expanded, enc)
        })
        .collect();

    let mut reciprocal = Vec::with_capacity(total);
    let mut expanded = Vec::with_capacity(total);
    let mut encoding = Vec::with_capacity(total);
    for (r, e, v) in per_item {
        reciprocal.push(r);
        expanded.push(e);
        encoding.push(v);
    }

    if params.k2 > 1 {
        let k2 = params.k2;
        encoding = (0..total)
            .into_par_iter()
            .map(|i| {
                let mut acc = vec![0.0f64; total];
                for &j in &ranks[i][..k2] {
                    for &(col, v) in &encoding[j] {
                        acc[col] += v;
                    }
                }
                acc.iter()
                    .enumerate()
                    .filter(|(_, &v)| v != 0.0)
                    .map(|(c, &v)| (c, v / k2 as f64))
                    .collect()
            })
            .collect();
    }

    // inverted index: column -> (row, value)
    let mut inverted: Vec<Vec<(usize, f64)>> = vec![Vec::new(); total];
    for (row, enc) in encoding.iter().enumerate() {
        for &(col, v) in enc {
            inverted[col].push((row, v));
        }
    }

    let lambda = params.lambda;
    let rows: Vec<(Vec<f64>, Vec<f64>)> = (0..nq)
        .into_par_iter()
        .map(|i| {
            let mut min_sum = vec![0.0f64; total];
            for &(col, v) in &encoding[i] {
                for &(row, w) in &inverted[col] {
                    min_sum[row] += v.min(w);
                }
            }
            let jac: Vec<f64> = (nq..total)
                .map(|g| 1.0 - min_sum[g] / (2.0 - min_sum[g]))
                .collect();
            let fin = jac
                .iter()
                .enumerate()
                .map(|(g, &dj)| lambda * joint.dist(i, nq + g) + (1.0 - lambda) * dj)
                .collect();
            (jac, fin)
        })
        .collect();

    let mut jaccard = Vec::with_capacity(nq * ng);
    let mut final_dist = Vec::with_capacity(nq * ng);
    for (j, f) in rows {
        jaccard.extend(j);
        final_dist.extend(f);
    }

    Ok(KReciprocalState {
        n_probe: nq,
        n_gallery: ng,
        reciprocal,
        expanded,
        encoding,
        jaccard,
        final_dist,
    })
}

/// Every gallery item per probe, by ascending final distance (ties by id),
/// reported as similarity `1 - d*`.
pub fn k_reciprocal_rerank(
    probe: &EmbeddingMatrix,
    gallery: &EmbeddingMatrix,
    params: KReciprocalParams,
    memory_budget: u64,
) -> Result<Vec<RankedList>> {
    let state = k_reciprocal_state(probe, gallery, params, memory_budget)?;
    Ok(ranked_from_state(&state, probe, gallery))
}

pub fn ranked_from_state(
    state: &KReciprocalState,
    probe: &EmbeddingMatrix,
    gallery: &EmbeddingMatrix,
) -> Vec<RankedList> {
    let ng = state.n_gallery;
    (0..state.n_probe)
        .into_par_iter()
        .map(|q| {
            let d = &state.final_dist[q * ng..(q + 1) * ng];
            let mut order: Vec<usize> = (0..ng).collect();
            order.sort_by(|&a, &b| {
                d[a].total_cmp(&d[b])
                    .then_with(|| gallery.ids()[a].cmp(&gallery.ids()[b]))
            });
            RankedList {
                query_id: probe.ids()[q].clone(),
                entries: order
                    .into_iter()
                    .map(|g| Scored {
                        id: gallery.ids()[g].clone(),
                        sim: 1.0 - d[g],
                    })
                    .collect(),
            }
        })
        .collect()
}
