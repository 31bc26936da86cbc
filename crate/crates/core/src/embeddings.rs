//! Dense row-major embedding matrices and the `EMB1` binary format.
//!
//! Layout (little-endian): magic `EMB1`, `u32` count, `u32` dim, then
//! `count * dim` `f32` values row by row. Ids live in a separate text file,
//! one per line, line `i` naming row `i`.

use std::collections::HashSet;
use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Read, Write};
use std::path::Path;

use crate::error::{Error, Result};

const MAGIC: &[u8; 4] = b"EMB1";

pub const NORM_TOLERANCE: f64 = 1e-6;

#[derive(Debug, Clone, PartialEq)]
pub struct EmbeddingMatrix {
    dim: usize,
    ids: Vec<String>,
    data: Vec<f32>,
}

impl EmbeddingMatrix {
    pub fn new(dim: usize, ids: Vec<String>, data: Vec<f32>) -> Result<Self> {
        if dim == 0 {
            return Err(Error::Format("dim must be positive".into()));
        }
        if data.len() != ids.len() * dim {
            return Err(Error::Format(format!(
                "{} ids x dim {} needs {} values, got {}",
                ids.len(),
                dim,
                ids.len() * dim,
                data.len()
            )));
        }
        let mut seen = HashSet::with_capacity(ids.len());
        for id in &ids {
            if !seen.insert(id.as_str()) {
                return Err(Error::DuplicateId(id.clone()));
            }
        }
        if let Some(pos) = data.iter().position(|v| !v.is_finite()) {
            return Err(Error::Format(format!(
                "non-finite value in row `{}`",
                ids[pos / dim]
            )));
        }
        Ok(Self { dim, ids, data })
    }

    /// Skips id uniqueness and finiteness checks; for joint matrices built
    /// from already validated parts.
    pub(crate) fn new_unchecked(dim: usize, ids: Vec<String>, data: Vec<f32>) -> Self {
        debug_assert_eq!(data.len(), ids.len() * dim);
        Self { dim, ids, data }
    }

    pub fn from_rows(ids: Vec<String>, rows: &[Vec<f32>]) -> Result<Self> {
        let dim = rows.first().map_or(0, Vec::len);
        if rows.iter().any(|r| r.len() != dim) {
            return Err(Error::Format("ragged rows".into()));
        }
        Self::new(dim, ids, rows.concat())
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn len(&self) -> usize {
        self.ids.len()
    }

    pub fn is_empty(&self) -> bool {
        self.ids.is_empty()
    }

    pub fn ids(&self) -> &[String] {
        &self.ids
    }

    pub fn data(&self) -> &[f32] {
        &self.data
    }

    pub fn row(&self, i: usize) -> &[f32] {
        &self.data[i * self.dim..(i + 1) * self.dim]
    }

    pub fn rows(&self) -> impl Iterator<Item = &[f32]> {
        self.data.chunks_exact(self.dim)
    }

    /// Scales every row to unit L2 norm. Norms are accumulated in f64.
    pub fn normalize_rows(&self) -> Result<Self> {
        let mut data = self.data.clone();
        for (row, id) in data.chunks_exact_mut(self.dim).zip(&self.ids) {
            let norm = row.iter().map(|&v| (v as f64) * (v as f64)).sum::<f64>().sqrt();
            if norm == 0.0 {
                return Err(Error::ZeroRow(id.clone()));
            }
            for v in row.iter_mut() {
                *v = (*v as f64 / norm) as f32;
            }
        }
        Ok(Self {
            dim: self.dim,
            ids: self.ids.clone(),
            data,
        })
    }

    /// True when every row norm is within `tol` of 1.
    pub fn is_normalized(&self, tol: f64) -> bool {
        self.rows()
            .all(|r| (row_norm(r) - 1.0).abs() <= tol)
    }

    /// Rows selected by id in the given order.
    pub fn select(&self, ids: &[&str]) -> Result<Self> {
        let lookup: std::collections::HashMap<&str, usize> = self
            .ids
            .iter()
            .enumerate()
            .map(|(i, id)| (id.as_str(), i))
            .collect();
        let mut data = Vec::with_capacity(ids.len() * self.dim);
        for id in ids {
            let &i = lookup.get(id).ok_or_else(|| Error::Missing {
                kind: "embedding",
                id: id.to_string(),
            })?;
            data.extend_from_slice(self.row(i));
        }
        Self::new(self.dim, ids.iter().map(|s| s.to_string()).collect(), data)
    }
}

pub(crate) fn row_norm(r: &[f32]) -> f64 {
    r.iter().map(|&v| (v as f64) * (v as f64)).sum::<f64>().sqrt()
}

pub fn load_embeddings(bin_path: &Path, ids_path: &Path) -> Result<EmbeddingMatrix> {
    let f = File::open(bin_path).map_err(|e| Error::io(bin_path, e))?;
    let mut r = BufReader::new(f);
    let (count, dim, data) = read_matrix(&mut r, bin_path).map_err(|e| match e {
        Error::Io { err, .. } if err.kind() == std::io::ErrorKind::UnexpectedEof => {
            Error::UnexpectedEof
        }
        other => other,
    })?;

    let f = File::open(ids_path).map_err(|e| Error::io(ids_path, e))?;
    let ids: Vec<String> = BufReader::new(f)
        .lines()
        .collect::<std::io::Result<Vec<_>>>()
        .map_err(|e| Error::io(ids_path, e))?
        .into_iter()
        .map(|l| l.trim_end_matches('\r').to_string())
        .filter(|l| !l.is_empty())
        .collect();
    if ids.len() != count {
        return Err(Error::Format(format!(
            "header declares {count} rows but {} has {} ids",
            ids_path.display(),
            ids.len()
        )));
    }
    EmbeddingMatrix::new(dim, ids, data)
}

fn read_matrix(r: &mut impl Read, path: &Path) -> Result<(usize, usize, Vec<f32>)> {
    let io = |e| Error::io(path, e);
    let mut magic = [0u8; 4];
    r.read_exact(&mut magic).map_err(io)?;
    if &magic != MAGIC {
        return Err(Error::Format(format!("bad magic {magic:?}, expected EMB1")));
    }
    let mut word = [0u8; 4];
    r.read_exact(&mut word).map_err(io)?;
    let count = u32::from_le_bytes(word) as usize;
    r.read_exact(&mut word).map_err(io)?;
    let dim = u32::from_le_bytes(word) as usize;
    if dim == 0 {
        return Err(Error::Format("dim must be positive".into()));
    }
    let mut bytes = vec![0u8; count * dim * 4];
    r.read_exact(&mut bytes).map_err(io)?;
    let mut rest = [0u8; 1];
    if r.read(&mut rest).map_err(io)? != 0 {
        return Err(Error::Format("trailing bytes after matrix".into()));
    }
    let data = bytes
        .chunks_exact(4)
        .map(|c| f32::from_le_bytes([c[0], c[1], c[2], c[3]]))
        .collect();
    Ok((count, dim, data))
}

pub fn save_embeddings(m: &EmbeddingMatrix, bin_path: &Path, ids_path: &Path) -> Result<()> {
    let count = u32::try_from(m.len()).map_err(|_| Error::Format("too many rows".into()))?;
    let dim = u32::try_from(m.dim()).map_err(|_| Error::Format("dim too large".into()))?;
    let f = File::create(bin_path).map_err(|e| Error::io(bin_path, e))?;
    let mut w = BufWriter::new(f);
    let io = |e| Error::io(bin_path, e);
    w.write_all(MAGIC).map_err(io)?;
    w.write_all(&count.to_le_bytes()).map_err(io)?;
    w.write_all(&dim.to_le_bytes()).map_err(io)?;
    for v in &m.data {
        w.write_all(&v.to_le_bytes()).map_err(io)?;
    }
    w.flush().map_err(io)?;
    crate::write_lines(ids_path, m.ids.iter().map(String::as_str))
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn ids(n: usize) -> Vec<String> {
        (0..n).map(|i| format!("r{i}")).collect()
    }

    #[test]
    fn load_two_by_three_verbatim() {
        let dir = tempfile::tempdir().unwrap();
        let mut bytes = b"EMB1".to_vec();
        bytes.extend(2u32.to_le_bytes());
        bytes.extend(3u32.to_le_bytes());
        for v in [1.0f32, 0.0, 0.0, 0.0, 1.0, 0.0] {
            bytes.extend(v.to_le_bytes());
        }
        std::fs::write(dir.path().join("e.bin"), &bytes).unwrap();
        std::fs::write(dir.path().join("e.ids"), "a\nb\n").unwrap();
        let m = load_embeddings(&dir.path().join("e.bin"), &dir.path().join("e.ids")).unwrap();
        assert_eq!(m.dim(), 3);
        assert_eq!(m.row(0), &[1.0, 0.0, 0.0]);
        assert_eq!(m.row(1), &[0.0, 1.0, 0.0]);
        assert_eq!(m.ids(), &["a", "b"]);
    }

    #[test]
    fn truncated_file_is_eof_error() {
        let dir = tempfile::tempdir().unwrap();
        let m = EmbeddingMatrix::new(2, ids(2), vec![1.0, 2.0, 3.0, 4.0]).unwrap();
        let (b, i) = (dir.path().join("e.bin"), dir.path().join("e.ids"));
        save_embeddings(&m, &b, &i).unwrap();
        let full = std::fs::read(&b).unwrap();
        std::fs::write(&b, &full[..full.len() - 3]).unwrap();
        let err = load_embeddings(&b, &i).unwrap_err();
        assert_eq!(err.to_string(), "unexpected end of data");
    }

    #[test]
    fn bad_magic_and_count_mismatch() {
        let dir = tempfile::tempdir().unwrap();
        let m = EmbeddingMatrix::new(1, ids(2), vec![1.0, 2.0]).unwrap();
        let (b, i) = (dir.path().join("e.bin"), dir.path().join("e.ids"));
        save_embeddings(&m, &b, &i).unwrap();
        std::fs::write(&i, "only\n").unwrap();
        assert!(load_embeddings(&b, &i).unwrap_err().to_string().contains("declares 2"));
        let mut raw = std::fs::read(&b).unwrap();
        raw[0] = b'X';
        std::fs::write(&b, raw).unwrap();
        assert!(load_embeddings(&b, &i).unwrap_err().to_string().contains("magic"));
    }

    #[test]
    fn non_finite_rejected() {
        let err = EmbeddingMatrix::new(2, ids(1), vec![1.0, f32::NAN]).unwrap_err();
        assert!(err.to_string().contains("non-finite"));
    }

    #[test]
    fn three_four_five() {
        let m = EmbeddingMatrix::new(2, ids(1), vec![3.0, 4.0]).unwrap();
        let n = m.normalize_rows().unwrap();
        assert!((n.row(0)[0] - 0.6).abs() < 1e-7);
        assert!((n.row(0)[1] - 0.8).abs() < 1e-7);
    }

    #[test]
    fn unit_row_unchanged() {
        let m = EmbeddingMatrix::new(3, ids(1), vec![0.0, 1.0, 0.0]).unwrap();
        assert_eq!(m.normalize_rows().unwrap(), m);
    }

    #[test]
    fn zero_row_names_id() {
        let m = EmbeddingMatrix::new(2, ids(2), vec![1.0, 0.0, 0.0, 0.0]).unwrap();
        let err = m.normalize_rows().unwrap_err();
        assert!(err.to_string().contains("`r1`"));
    }

    #[test]
    fn random_matrix_norms() {
        let mut rng = crate::rng::DetRng::new(5);
        let data: Vec<f32> = (0..1600).map(|_| (rng.unit() * 2.0 - 1.0) as f32).collect();
        let m = EmbeddingMatrix::new(16, ids(100), data).unwrap().normalize_rows().unwrap();
        for r in m.rows() {
            assert!((row_norm(r) - 1.0).abs() <= NORM_TOLERANCE);
        }
    }

    proptest! {
        #[test]
        fn normalize_is_idempotent(vals in prop::collection::vec(-100.0f32..100.0, 8 * 4)) {
            prop_assume!(vals.chunks(4).all(|r| r.iter().any(|v| v.abs() > 1e-3)));
            let m = EmbeddingMatrix::new(4, ids(8), vals).unwrap();
            let once = m.normalize_rows().unwrap();
            let twice = once.normalize_rows().unwrap();
            for (a, b) in once.data().iter().zip(twice.data()) {
                prop_assert!((a - b).abs() <= 1e-7);
            }
            // direction preserved
            for (orig, n) in m.rows().zip(once.rows()) {
                let dot: f64 = orig.iter().zip(n).map(|(&a, &b)| a as f64 * b as f64).sum();
                prop_assert!((dot / row_norm(orig) / row_norm(n) - 1.0).abs() < 1e-6);
            }
        }

        #[test]
        fn save_load_bit_identical(vals in prop::collection::vec(any::<f32>().prop_filter("finite", |v| v.is_finite()), 0..40)) {
            let dim = 4;
            let n = vals.len() / dim;
            let m = EmbeddingMatrix::new(dim, ids(n), vals[..n * dim].to_vec()).unwrap();
            let dir = tempfile::tempdir().unwrap();
            let (b, i) = (dir.path().join("e.bin"), dir.path().join("e.ids"));
            save_embeddings(&m, &b, &i).unwrap();
            let back = load_embeddings(&b, &i).unwrap();
            prop_assert_eq!(back.ids(), m.ids());
            let bits = |x: &EmbeddingMatrix| x.data().iter().map(|v| v.to_bits()).collect::<Vec<_>>();
            prop_assert_eq!(bits(&back), bits(&m));
        }
    }
}
