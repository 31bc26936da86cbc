//! mAP@100 as scored for landmark retrieval submissions, plus the
//! `id,images` CSV format used for both predictions and ground truth.

use std::collections::{BTreeMap, BTreeSet, HashSet};
use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::Path;

use crate::error::{Error, Result};
use crate::retrieval::RankedList;

pub const CUTOFF: usize = 100;

/// Query id -> relevant index ids. Only queries with a non-empty set are scored.
#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct GroundTruth(pub BTreeMap<String, BTreeSet<String>>);

impl GroundTruth {
    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }

    pub fn get(&self, query: &str) -> Option<&BTreeSet<String>> {
        self.0.get(query)
    }

    /// Checks every relevant id against the set of index ids.
    pub fn validate_against(&self, index_ids: &HashSet<&str>) -> Result<()> {
        for (q, rel) in &self.0 {
            if rel.is_empty() {
                return Err(Error::invalid(format!("query `{q}` has no relevant images")));
            }
            if let Some(bad) = rel.iter().find(|r| !index_ids.contains(r.as_str())) {
                return Err(Error::Missing {
                    kind: "index image",
                    id: bad.clone(),
                });
            }
        }
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Self> {
        let rows = read_id_images(path)?;
        Ok(Self(
            rows.into_iter()
                .filter(|(_, imgs)| !imgs.is_empty())
                .map(|(q, imgs)| (q, imgs.into_iter().collect()))
                .collect(),
        ))
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        write_id_images(
            path,
            self.0.iter().map(|(q, rel)| (q.as_str(), rel.iter().map(String::as_str))),
        )
    }
}

/// Query id -> ranked index ids.
pub type Predictions = BTreeMap<String, Vec<String>>;

pub fn predictions_from_lists(lists: &[RankedList]) -> Predictions {
    lists
        .iter()
        .map(|l| (l.query_id.clone(), l.ids().map(str::to_string).collect()))
        .collect()
}

/// `(1 / min(m, 100)) * sum_{i <= min(n, 100)} P(i) * rel(i)` with
/// `m = |relevant|`.
pub fn ap_at_100<S: AsRef<str>>(ranked: &[S], relevant: &BTreeSet<String>) -> Result<f64> {
    if relevant.is_empty() {
        return Err(Error::invalid("average precision over an empty relevant set"));
    }
    let mut seen = HashSet::with_capacity(ranked.len().min(CUTOFF));
    let mut hits = 0usize;
    let mut sum = 0.0f64;
    for (i, id) in ranked.iter().take(CUTOFF).enumerate() {
        let id = id.as_ref();
        if !seen.insert(id) {
            return Err(Error::invalid(format!("`{id}` ranked twice")));
        }
        if relevant.contains(id) {
            hits += 1;
            sum += hits as f64 / (i + 1) as f64;
        }
    }
    Ok(sum / relevant.len().min(CUTOFF) as f64)
}

/// Mean of [`ap_at_100`] over ground-truth queries; a query without a
/// prediction scores 0.
pub fn mean_ap_at_100(pred: &Predictions, gt: &GroundTruth) -> Result<f64> {
    if gt.is_empty() {
        return Err(Error::invalid("empty ground truth"));
    }
    let mut total = 0.0;
    for (q, rel) in &gt.0 {
        if let Some(ranked) = pred.get(q) {
            total += ap_at_100(ranked, rel)?;
        }
    }
    Ok(total / gt.len() as f64)
}

pub fn mean_ap_of_lists(lists: &[RankedList], gt: &GroundTruth) -> Result<f64> {
    mean_ap_at_100(&predictions_from_lists(lists), gt)
}

fn read_id_images(path: &Path) -> Result<Vec<(String, Vec<String>)>> {
    let f = File::open(path).map_err(|e| Error::io(path, e))?;
    let mut rdr = csv::ReaderBuilder::new().flexible(true).from_reader(f);
    let parse_err = |line: u64, message: String| Error::Parse {
        path: path.to_path_buf(),
        line,
        message,
    };
    let header = rdr.headers().map_err(|e| parse_err(1, e.to_string()))?;
    if header.iter().map(str::trim).collect::<Vec<_>>() != ["id", "images"] {
        return Err(parse_err(1, "expected header `id,images`".into()));
    }
    let mut out = Vec::new();
    let mut seen = HashSet::new();
    for rec in rdr.records() {
        let rec = rec.map_err(|e| {
            let line = e.position().map_or(0, |p| p.line());
            parse_err(line, e.to_string())
        })?;
        let line = rec.position().map_or(0, |p| p.line());
        if rec.len() != 2 {
            return Err(parse_err(line, format!("expected 2 fields, got {}", rec.len())));
        }
        let id = rec[0].trim().to_string();
        if id.is_empty() {
            return Err(parse_err(line, "empty id".into()));
        }
        if !seen.insert(id.clone()) {
            return Err(parse_err(line, format!("duplicate id `{id}`")));
        }
        let images: Vec<String> = rec[1].split_whitespace().map(str::to_string).collect();
        out.push((id, images));
    }
    Ok(out)
}

fn write_id_images<'a, I>(path: &Path, rows: impl IntoIterator<Item = (&'a str, I)>) -> Result<()>
where
    I: IntoIterator<Item = &'a str>,
{
    let f = File::create(path).map_err(|e| Error::io(path, e))?;
    let mut w = BufWriter::new(f);
    let io = |e| Error::io(path, e);
    writeln!(w, "id,images").map_err(io)?;
    for (id, images) in rows {
        let joined = images.into_iter().collect::<Vec<_>>().join(" ");
        writeln!(w, "{id},{joined}").map_err(io)?;
    }
    w.flush().map_err(io)
}

pub fn load_predictions(path: &Path) -> Result<Predictions> {
    Ok(read_id_images(path)?.into_iter().collect())
}

/// Writes ranked lists as a submission file (at most 100 ids per row),
/// rows in the given order.
pub fn write_submission(lists: &[RankedList], path: &Path) -> Result<()> {
    write_id_images(
        path,
        lists
            .iter()
            .map(|l| (l.query_id.as_str(), l.ids().take(CUTOFF))),
    )
}
