//! Landmark/country tag accumulation over train-set neighbours and the
//! additive score fusion that promotes index images sharing those tags.

use std::collections::{BTreeMap, HashMap};

use crate::catalog::{Catalog, ImageRecord, LandmarkId, Split};
use crate::error::{Error, Result};
use crate::retrieval::{RankedList, Scored};

/// Tag scores for one query: summed similarity of its top train neighbours
/// per landmark and per country.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct QueryTags {
    pub landmark_scores: BTreeMap<LandmarkId, f64>,
    pub country_scores: BTreeMap<String, f64>,
}

/// Tags of an index image, copied from its nearest train image.
#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct IndexTags {
    pub landmark: Option<LandmarkId>,
    pub country: Option<String>,
}

fn train_record<'a>(catalog: &'a Catalog, id: &str) -> Result<&'a ImageRecord> {
    catalog
        .get(id)
        .filter(|r| r.split == Split::Train)
        .ok_or_else(|| Error::Missing {
            kind: "train record",
            id: id.to_string(),
        })
}

/// Accumulates the similarities of the first `k_tag` entries of a ranked
/// list over train images, per landmark and per country. Entries with a
/// non-positive similarity contribute nothing.
pub fn assign_query_tags(
    query_vs_train: &RankedList,
    catalog: &Catalog,
    k_tag: usize,
) -> Result<QueryTags> {
    if query_vs_train.entries.is_empty() {
        return Err(Error::invalid(format!(
            "empty train ranking for query `{}`",
            query_vs_train.query_id
        )));
    }
    if k_tag == 0 {
        return Err(Error::invalid("k_tag must be at least 1"));
    }
    let mut tags = QueryTags::default();
    for e in query_vs_train.entries.iter().take(k_tag) {
        let r = train_record(catalog, &e.id)?;
        if !(e.sim > 0.0) {
            continue;
        }
        if let Some(lm) = r.landmark_id {
            *tags.landmark_scores.entry(lm).or_default() += e.sim;
        }
        if let Some(c) = &r.country {
            *tags.country_scores.entry(c.clone()).or_default() += e.sim;
        }
    }
    Ok(tags)
}

/// Landmark and country of the rank-1 train image. With `min_sim` set, a
/// rank-1 similarity below it leaves the image untagged.
pub fn assign_index_tags(
    index_vs_train: &RankedList,
    catalog: &Catalog,
    min_sim: Option<f64>,
) -> Result<IndexTags> {
    let top = index_vs_train.entries.first().ok_or_else(|| {
        Error::invalid(format!(
            "empty train ranking for index image `{}`",
            index_vs_train.query_id
        ))
    })?;
    let r = train_record(catalog, &top.id)?;
    if min_sim.is_some_and(|t| top.sim < t) {
        return Ok(IndexTags::default());
    }
    Ok(IndexTags {
        landmark: r.landmark_id,
        country: r.country.clone(),
    })
}

/// `sim + alpha * L + beta * C`, where `L`/`C` are the query's scores for the
/// index image's landmark/country tag (0 when absent), then re-sorted.
pub fn fuse_tag_scores(
    base: &RankedList,
    q_tags: &QueryTags,
    index_tags: &HashMap<String, IndexTags>,
    alpha: f64,
    beta: f64,
) -> Result<RankedList> {
    let entries = base
        .entries
        .iter()
        .map(|e| {
            let tags = index_tags.get(&e.id).ok_or_else(|| Error::Missing {
                kind: "index tags",
                id: e.id.clone(),
            })?;
            let l = tags
                .landmark
                .and_then(|lm| q_tags.landmark_scores.get(&lm))
                .copied()
                .unwrap_or(0.0);
            let c = tags
                .country
                .as_ref()
                .and_then(|c| q_tags.country_scores.get(c))
                .copied()
                .unwrap_or(0.0);
            Ok(Scored {
                id: e.id.clone(),
                sim: e.sim + alpha * l + beta * c,
            })
        })
        .collect::<Result<Vec<_>>>()?;
    let mut out = RankedList {
        query_id: base.query_id.clone(),
        entries,
    };
    out.sort();
    Ok(out)
}
