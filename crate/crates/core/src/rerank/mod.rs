//! Re-ranking: k-reciprocal refinement, landmark/country tag fusion, and the
//! pipeline that composes them.

mod kreciprocal;
mod tags;

use std::collections::HashMap;
use std::fmt;
use std::str::FromStr;

use rayon::prelude::*;

use crate::catalog::{Catalog, Split};
use crate::embeddings::EmbeddingMatrix;
use crate::error::{Error, Result};
use crate::retrieval::{search_topk, RankedList, DEFAULT_MEMORY_BUDGET};

pub use kreciprocal::{
    k_reciprocal_rerank, k_reciprocal_state, ranked_from_state, KReciprocalParams,
    KReciprocalState,
};
pub use tags::{assign_index_tags, assign_query_tags, fuse_tag_scores, IndexTags, QueryTags};

/// Length of the final ranked lists.
pub const OUTPUT_DEPTH: usize = 100;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum PipelineOrder {
    KReciprocalThenTags,
    TagsOnly,
    KReciprocalOnly,
}

impl PipelineOrder {
    pub fn as_str(self) -> &'static str {
        match self {
            PipelineOrder::KReciprocalThenTags => "kreciprocal_then_tags",
            PipelineOrder::TagsOnly => "tags_only",
            PipelineOrder::KReciprocalOnly => "kreciprocal_only",
        }
    }

    fn uses_kreciprocal(self) -> bool {
        self != PipelineOrder::TagsOnly
    }

    fn uses_tags(self) -> bool {
        self != PipelineOrder::KReciprocalOnly
    }
}

impl fmt::Display for PipelineOrder {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for PipelineOrder {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "kreciprocal_then_tags" => Ok(PipelineOrder::KReciprocalThenTags),
            "tags_only" => Ok(PipelineOrder::TagsOnly),
            "kreciprocal_only" => Ok(PipelineOrder::KReciprocalOnly),
            other => Err(Error::invalid(format!("unknown pipeline order `{other}`"))),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct RerankConfig {
    /// Train neighbours accumulated into query tag scores.
    pub k_tag: usize,
    /// Weight of the landmark tag score.
    pub alpha: f64,
    /// Weight of the country tag score.
    pub beta: f64,
    pub k1: usize,
    pub k2: usize,
    pub lambda: f64,
    pub order: PipelineOrder,
    /// Index images whose nearest train image is less similar than this
    /// stay untagged. Off by default.
    pub min_index_tag_sim: Option<f64>,
    /// Candidates per query that tag fusion may reorder before the final cut.
    pub candidate_depth: usize,
    pub memory_budget: u64,
}

impl Default for RerankConfig {
    fn default() -> Self {
        Self {
            k_tag: 5,
            alpha: 0.5,
            beta: 0.1,
            k1: 20,
            k2: 6,
            lambda: 0.3,
            order: PipelineOrder::KReciprocalThenTags,
            min_index_tag_sim: None,
            candidate_depth: 1000,
            memory_budget: DEFAULT_MEMORY_BUDGET,
        }
    }
}

impl RerankConfig {
    pub fn kreciprocal(&self) -> KReciprocalParams {
        KReciprocalParams {
            k1: self.k1,
            k2: self.k2,
            lambda: self.lambda,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.k_tag == 0 {
            return Err(Error::invalid("k_tag must be at least 1"));
        }
        if !(self.alpha >= 0.0 && self.beta >= 0.0) {
            return Err(Error::invalid("alpha and beta must be non-negative"));
        }
        if self.k2 > self.k1 {
            return Err(Error::invalid(format!("k2={} exceeds k1={}", self.k2, self.k1)));
        }
        if !(0.0..=1.0).contains(&self.lambda) {
            return Err(Error::invalid(format!("lambda must be in [0, 1], got {}", self.lambda)));
        }
        if self.candidate_depth == 0 {
            return Err(Error::invalid("candidate_depth must be positive"));
        }
        Ok(())
    }
}

/// Base ranking (plain cosine or k-reciprocal refined), then optional tag
/// fusion using train-set neighbours, cut to [`OUTPUT_DEPTH`].
pub fn rerank_pipeline(
    queries: &EmbeddingMatrix,
    index: &EmbeddingMatrix,
    train: &EmbeddingMatrix,
    catalog: &Catalog,
    cfg: &RerankConfig,
) -> Result<Vec<RankedList>> {
    cfg.validate()?;
    let depth = cfg.candidate_depth.min(index.len());

    let mut base = if cfg.order.uses_kreciprocal() {
        let mut lists = k_reciprocal_rerank(queries, index, cfg.kreciprocal(), cfg.memory_budget)?;
        for l in &mut lists {
            l.truncate(depth);
        }
        lists
    } else {
        search_topk(queries, index, depth)?
    };

    if cfg.order.uses_tags() {
        for id in train.ids() {
            match catalog.get(id) {
                Some(r) if r.split == Split::Train => {}
                _ => {
                    return Err(Error::Missing {
                        kind: "train catalog record",
                        id: id.clone(),
                    })
                }
            }
        }
        let q_train = search_topk(queries, train, cfg.k_tag)?;
        let i_train = search_topk(index, train, 1)?;
        let index_tags: HashMap<String, IndexTags> = i_train
            .iter()
            .map(|l| {
                assign_index_tags(l, catalog, cfg.min_index_tag_sim)
                    .map(|t| (l.query_id.clone(), t))
            })
            .collect::<Result<_>>()?;
        base = base
            .par_iter()
            .zip(&q_train)
            .map(|(list, qt)| {
                let tags = assign_query_tags(qt, catalog, cfg.k_tag)?;
                fuse_tag_scores(list, &tags, &index_tags, cfg.alpha, cfg.beta)
            })
            .collect::<Result<_>>()?;
    }

    for l in &mut base {
        l.truncate(OUTPUT_DEPTH);
    }
    Ok(base)
}
