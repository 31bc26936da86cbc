//! Exact brute-force cosine search over unit-norm embeddings.

use std::cmp::Ordering;
use std::collections::BinaryHeap;

use rayon::prelude::*;

use crate::embeddings::EmbeddingMatrix;
use crate::error::{Error, Result};

/// Default cap for a dense similarity matrix: `rows * cols * 4` bytes.
pub const DEFAULT_MEMORY_BUDGET: u64 = 4 << 30;

const QUERY_BLOCK: usize = 16;
const INDEX_BLOCK: usize = 256;

#[derive(Debug, Clone, PartialEq)]
pub struct Scored {
    pub id: String,
    pub sim: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct RankedList {
    pub query_id: String,
    pub entries: Vec<Scored>,
}

impl RankedList {
    pub fn ids(&self) -> impl Iterator<Item = &str> {
        self.entries.iter().map(|e| e.id.as_str())
    }

    /// Sorts by similarity descending, ties by ascending id.
    pub fn sort(&mut self) {
        self.entries.sort_by(|a, b| rank_order(a.sim, &a.id, b.sim, &b.id));
    }

    pub fn truncate(&mut self, k: usize) {
        self.entries.truncate(k);
    }
}

/// Total ranking order: higher similarity first, then lexicographically
/// smaller id.
#[inline]
pub fn rank_order(sim_a: f64, id_a: &str, sim_b: f64, id_b: &str) -> Ordering {
    sim_b.total_cmp(&sim_a).then_with(|| id_a.cmp(id_b))
}

/// Dot product accumulated in f64, rounded to f32.
#[inline]
pub fn dot_f32(a: &[f32], b: &[f32]) -> f32 {
    a.iter()
        .zip(b)
        .map(|(&x, &y)| x as f64 * y as f64)
        .sum::<f64>() as f32
}

fn check_dims(a: &EmbeddingMatrix, b: &EmbeddingMatrix) -> Result<()> {
    if a.dim() != b.dim() {
        return Err(Error::DimMismatch {
            left: a.dim(),
            right: b.dim(),
        });
    }
    Ok(())
}

// Max-heap element whose top is the current worst of the kept candidates.
struct Cand<'a> {
    sim: f32,
    id: &'a str,
    row: usize,
}

impl Ord for Cand<'_> {
    fn cmp(&self, other: &Self) -> Ordering {
        rank_order(self.sim as f64, self.id, other.sim as f64, other.id)
    }
}

impl PartialOrd for Cand<'_> {
    fn partial_cmp(&self, other: &Self) -> Option<Ordering> {
        Some(self.cmp(other))
    }
}

impl PartialEq for Cand<'_> {
    fn eq(&self, other: &Self) -> bool {
        self.cmp(other) == Ordering::Equal
    }
}

impl Eq for Cand<'_> {}

/// Exact top-`k` index rows per query by dot product. `k` is clamped to the
/// index size. Output order follows query order and does not depend on the
/// number of worker threads.
pub fn search_topk(
    queries: &EmbeddingMatrix,
    index: &EmbeddingMatrix,
    k: usize,
) -> Result<Vec<RankedList>> {
    check_dims(queries, index)?;
    if k == 0 {
        return Err(Error::invalid("k must be positive"));
    }
    let k = k.min(index.len());
    let ids = index.ids();

    let blocks: Vec<Vec<RankedList>> = (0..queries.len())
        .collect::<Vec<_>>()
        .par_chunks(QUERY_BLOCK)
        .map(|qs| {
            let mut heaps: Vec<BinaryHeap<Cand>> =
                qs.iter().map(|_| BinaryHeap::with_capacity(k + 1)).collect();
            for start in (0..index.len()).step_by(INDEX_BLOCK) {
                let end = (start + INDEX_BLOCK).min(index.len());
                for (heap, &q) in heaps.iter_mut().zip(qs) {
                    let qv = queries.row(q);
                    for row in start..end {
                        let cand = Cand {
                            sim: dot_f32(qv, index.row(row)),
                            id: &ids[row],
                            row,
                        };
                        if heap.len() < k {
                            heap.push(cand);
                        } else if cand < *heap.peek().expect("k > 0") {
                            heap.pop();
                            heap.push(cand);
                        }
                    }
                }
            }
            heaps
                .into_iter()
                .zip(qs)
                .map(|(heap, &q)| RankedList {
                    query_id: queries.ids()[q].clone(),
                    entries: heap
                        .into_sorted_vec()
                        .into_iter()
                        .map(|c| Scored {
                            id: ids[c.row].clone(),
                            sim: c.sim as f64,
                        })
                        .collect(),
                })
                .collect()
        })
        .collect();
    Ok(blocks.into_iter().flatten().collect())
}

/// Dense row-major similarity matrix.
#[derive(Debug, Clone, PartialEq)]
pub struct SimMatrix {
    pub rows: usize,
    pub cols: usize,
    pub data: Vec<f32>,
}

impl SimMatrix {
    #[inline]
    pub fn get(&self, i: usize, j: usize) -> f32 {
        self.data[i * self.cols + j]
    }

    pub fn row(&self, i: usize) -> &[f32] {
        &self.data[i * self.cols..(i + 1) * self.cols]
    }
}

/// Bytes needed for an `rows x cols` f32 similarity matrix.
pub fn sim_matrix_bytes(rows: usize, cols: usize) -> u64 {
    rows as u64 * cols as u64 * std::mem::size_of::<f32>() as u64
}

/// All pairwise dot products `<a_i, b_j>`, refusing to allocate more than
/// `budget_bytes`.
pub fn pairwise_sim(
    a: &EmbeddingMatrix,
    b: &EmbeddingMatrix,
    budget_bytes: u64,
) -> Result<SimMatrix> {
    check_dims(a, b)?;
    let required = sim_matrix_bytes(a.len(), b.len());
    if required > budget_bytes {
        return Err(Error::Budget {
            required,
            allowed: budget_bytes,
        });
    }
    let cols = b.len();
    let mut data = vec![0.0f32; a.len() * cols];
    if cols > 0 {
        data.par_chunks_mut(cols).enumerate().for_each(|(i, out)| {
            let av = a.row(i);
            for (j, o) in out.iter_mut().enumerate() {
                *o = dot_f32(av, b.row(j));
            }
        });
    }
    Ok(SimMatrix {
        rows: a.len(),
        cols,
        data,
    })
}
