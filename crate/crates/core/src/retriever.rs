//! Exact cosine nearest-neighbour search over code embeddings.

use std::cmp::Ordering;
use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::Path;

use serde::Serialize;

use crate::dataset::EncodedPairs;
use crate::error::{contract_err, Error, Result};
use crate::model::Transformer;
use crate::tensor;

pub const INDEX_MAGIC: &[u8; 4] = b"JSIX";
pub const INDEX_VERSION: u32 = 1;

/// One search result.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct RetrievalHit {
    pub pair_id: String,
    /// Cosine similarity in `[-1, 1]`.
    pub score: f64,
    /// 1-based.
    pub rank: usize,
    /// Row of the hit inside the index.
    #[serde(skip)]
    pub row: usize,
}

/// Unit-normalised embeddings with their pair ids.
#[derive(Clone, Debug, PartialEq)]
pub struct EmbeddingIndex {
    rows: Vec<f64>,
    dim: usize,
    ids: Vec<String>,
    /// Fingerprint of the model that produced the rows.
    pub built_from: String,
}

/// Ordering used everywhere hits are ranked: score descending, then id ascending.
pub fn hit_order(a: (f64, &str), b: (f64, &str)) -> Ordering {
    b.0.partial_cmp(&a.0).unwrap_or(Ordering::Equal).then_with(|| a.1.cmp(b.1))
}

fn unit(v: &[f64]) -> Result<Vec<f64>> {
    let n = tensor::norm(v);
    if n == 0.0 || !n.is_finite() {
        return Err(Error::Degenerate("cannot normalise a zero or non-finite embedding".into()));
    }
    Ok(v.iter().map(|x| x / n).collect())
}

impl EmbeddingIndex {
    /// Normalise and store `embeddings`, one per id.
    pub fn from_embeddings(ids: Vec<String>, embeddings: &[Vec<f64>], built_from: impl Into<String>) -> Result<Self> {
        if ids.is_empty() {
            return Err(Error::Data("cannot build an index over an empty split".into()));
        }
        if ids.len() != embeddings.len() {
            return Err(Error::Shape(format!("{} ids for {} embeddings", ids.len(), embeddings.len())));
        }
        let dim = embeddings[0].len();
        if dim == 0 || embeddings.iter().any(|e| e.len() != dim) {
            return Err(Error::Shape("embeddings must share a positive dimension".into()));
        }
        let mut rows = Vec::with_capacity(ids.len() * dim);
        for e in embeddings {
            rows.extend(unit(e)?);
        }
        Ok(EmbeddingIndex { rows, dim, ids, built_from: built_from.into() })
    }

    /// Embed every pair's code with `model` in eval mode.
    pub fn build(model: &Transformer, pairs: &EncodedPairs, built_from: impl Into<String>) -> Result<Self> {
        let max = model.config().max_src_len;
        let embeddings = (0..pairs.len())
            .map(|i| model.embed(&pairs.source(i, max)?))
            .collect::<Result<Vec<_>>>()?;
        Self::from_embeddings(pairs.iter().map(|p| p.id.clone()).collect(), &embeddings, built_from)
    }

    pub fn len(&self) -> usize {
        self.ids.len()
    }

    pub fn is_empty(&self) -> bool {
        self.ids.is_empty()
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn ids(&self) -> &[String] {
        &self.ids
    }

    pub fn row(&self, i: usize) -> &[f64] {
        &self.rows[i * self.dim..(i + 1) * self.dim]
    }

    pub fn position(&self, id: &str) -> Option<usize> {
        self.ids.iter().position(|x| x == id)
    }

    /// The `k` rows most cosine-similar to `query`, skipping `exclude_id`.
    pub fn top_k(&self, query: &[f64], k: usize, exclude_id: Option<&str>) -> Result<Vec<RetrievalHit>> {
        if query.len() != self.dim {
            return Err(Error::Shape(format!("query of dim {} against index of dim {}", query.len(), self.dim)));
        }
        let excluded = exclude_id.is_some_and(|id| self.ids.iter().any(|x| x == id));
        let available = self.len() - usize::from(excluded);
        if k == 0 || k > available {
            return contract_err(format!("k={k} but only {available} rows are eligible"));
        }
        let q = unit(query)?;
        let mut scored: Vec<(f64, usize)> = (0..self.len())
            .filter(|&i| Some(self.ids[i].as_str()) != exclude_id)
            .map(|i| (tensor::dot(&q, self.row(i)).clamp(-1.0, 1.0), i))
            .collect();
        let order = |a: &(f64, usize), b: &(f64, usize)| hit_order((a.0, &self.ids[a.1]), (b.0, &self.ids[b.1]));
        if k < scored.len() {
            scored.select_nth_unstable_by(k - 1, order);
            scored.truncate(k);
        }
        scored.sort_by(order);
        Ok(scored
            .into_iter()
            .enumerate()
            .map(|(r, (score, row))| RetrievalHit { pair_id: self.ids[row].clone(), score, rank: r + 1, row })
            .collect())
    }

    /// Top-k for the pair stored at `row`, never returning that pair itself.
    pub fn top_k_for_row(&self, row: usize, k: usize) -> Result<Vec<RetrievalHit>> {
        self.top_k(self.row(row), k, Some(&self.ids[row]))
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        let mut w = BufWriter::new(File::create(path)?);
        w.write_all(INDEX_MAGIC)?;
        w.write_all(&INDEX_VERSION.to_le_bytes())?;
        w.write_all(&(self.len() as u64).to_le_bytes())?;
        w.write_all(&(self.dim as u64).to_le_bytes())?;
        write_str(&mut w, &self.built_from)?;
        for &x in &self.rows {
            w.write_all(&x.to_le_bytes())?;
        }
        for id in &self.ids {
            write_str(&mut w, id)?;
        }
        w.flush()?;
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Self> {
        let mut r = BufReader::new(File::open(path)?);
        let mut magic = [0u8; 4];
        r.read_exact(&mut magic)?;
        if &magic != INDEX_MAGIC {
            return Err(Error::Format(format!("{} is not an index file", path.display())));
        }
        let version = read_u32(&mut r)?;
        if version != INDEX_VERSION {
            return Err(Error::Format(format!("unsupported index version {version}")));
        }
        let n = read_u64(&mut r)? as usize;
        let dim = read_u64(&mut r)? as usize;
        let built_from = read_str(&mut r)?;
        let mut rows = Vec::with_capacity(n * dim);
        let mut b8 = [0u8; 8];
        for _ in 0..n * dim {
            r.read_exact(&mut b8)?;
            rows.push(f64::from_le_bytes(b8));
        }
        let ids = (0..n).map(|_| read_str(&mut r)).collect::<Result<Vec<_>>>()?;
        Ok(EmbeddingIndex { rows, dim, ids, built_from })
    }

    /// Fail unless the index was produced by the model with `fingerprint`.
    pub fn check_fingerprint(&self, fingerprint: &str) -> Result<()> {
        if self.built_from != fingerprint {
            return Err(Error::Fingerprint { expected: fingerprint.to_string(), found: self.built_from.clone() });
        }
        Ok(())
    }
}

fn write_str<W: Write>(w: &mut W, s: &str) -> Result<()> {
    w.write_all(&(s.len() as u32).to_le_bytes())?;
    w.write_all(s.as_bytes())?;
    Ok(())
}

fn read_u32<R: Read>(r: &mut R) -> Result<u32> {
    let mut b = [0u8; 4];
    r.read_exact(&mut b)?;
    Ok(u32::from_le_bytes(b))
}

fn read_u64<R: Read>(r: &mut R) -> Result<u64> {
    let mut b = [0u8; 8];
    r.read_exact(&mut b)?;
    Ok(u64::from_le_bytes(b))
}

fn read_str<R: Read>(r: &mut R) -> Result<String> {
    let n = read_u32(r)? as usize;
    let mut buf = vec![0u8; n];
    r.read_exact(&mut buf)?;
    String::from_utf8(buf).map_err(|_| Error::Format("index id is not UTF-8".into()))
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn toy() -> EmbeddingIndex {
        let ids = vec!["a".to_string(), "b".into(), "c".into()];
        EmbeddingIndex::from_embeddings(ids, &[vec![1.0, 0.0], vec![0.0, 1.0], vec![0.6, 0.8]], "fp").unwrap()
    }

    #[test]
    fn hand_computed_ranking() {
        let hits = toy().top_k(&[1.0, 0.0], 3, None).unwrap();
        let got: Vec<(&str, f64, usize)> = hits.iter().map(|h| (h.pair_id.as_str(), h.score, h.rank)).collect();
        assert_eq!(got[0].0, "a");
        assert!((got[0].1 - 1.0).abs() < 1e-15);
        assert_eq!(got[1].0, "c");
        assert!((got[1].1 - 0.6).abs() < 1e-15);
        assert_eq!(got[2].0, "b");
        assert!(got[2].1.abs() < 1e-15);
        assert_eq!(got.iter().map(|g| g.2).collect::<Vec<_>>(), [1, 2, 3]);
    }

    #[test]
    fn exclusion_and_k_limits() {
        let idx = toy();
        let hits = idx.top_k(&[1.0, 0.0], 2, Some("a")).unwrap();
        assert_eq!(hits[0].pair_id, "c");
        assert!(matches!(idx.top_k(&[1.0, 0.0], 3, Some("a")), Err(Error::Contract(_))));
        assert!(matches!(idx.top_k(&[1.0, 0.0], 0, None), Err(Error::Contract(_))));
        assert!(idx.top_k(&[1.0, 0.0], 3, Some("zzz")).is_ok());
        assert!(idx.top_k_for_row(1, 2).unwrap().iter().all(|h| h.pair_id != "b"));
    }

    #[test]
    fn rows_are_unit_and_empty_is_fatal() {
        let idx = toy();
        for i in 0..idx.len() {
            assert!((tensor::norm(idx.row(i)) - 1.0).abs() < 1e-12);
        }
        assert!(matches!(EmbeddingIndex::from_embeddings(vec![], &[], "x"), Err(Error::Data(_))));
        let zero = EmbeddingIndex::from_embeddings(vec!["z".into()], &[vec![0.0, 0.0]], "x");
        assert!(matches!(zero, Err(Error::Degenerate(_))));
    }

    #[test]
    fn ties_break_by_ascending_id() {
        let ids = vec!["m".to_string(), "b".into(), "z".into(), "a".into()];
        let e = vec![vec![1.0, 1.0], vec![2.0, 2.0], vec![1.0, 0.0], vec![3.0, 3.0]];
        let idx = EmbeddingIndex::from_embeddings(ids, &e, "x").unwrap();
        let hits = idx.top_k(&[1.0, 1.0], 4, None).unwrap();
        let order: Vec<&str> = hits.iter().map(|h| h.pair_id.as_str()).collect();
        assert_eq!(order, ["a", "b", "m", "z"]);
    }

    #[test]
    fn cache_roundtrip() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("index.bin");
        let idx = toy();
        idx.save(&path).unwrap();
        let back = EmbeddingIndex::load(&path).unwrap();
        assert_eq!(back, idx);
        assert!(back.check_fingerprint("fp").is_ok());
        assert!(matches!(back.check_fingerprint("other"), Err(Error::Fingerprint { .. })));
    }

    proptest! {
        #[test]
        fn positive_rescaling_keeps_ranking(
            rows in proptest::collection::vec(proptest::collection::vec(-1.0f64..1.0, 3), 2..20),
            q in proptest::collection::vec(-1.0f64..1.0, 3),
            scale in 0.01f64..100.0,
        ) {
            prop_assume!(rows.iter().all(|r| tensor::norm(r) > 1e-3) && tensor::norm(&q) > 1e-3);
            let ids: Vec<String> = (0..rows.len()).map(|i| format!("{i:03}")).collect();
            let scaled: Vec<Vec<f64>> = rows.iter().map(|r| r.iter().map(|x| x * scale).collect()).collect();
            let a = EmbeddingIndex::from_embeddings(ids.clone(), &rows, "x").unwrap();
            let b = EmbeddingIndex::from_embeddings(ids, &scaled, "x").unwrap();
            let k = rows.len();
            let sa = a.top_k(&q, k, None).unwrap();
            let sb = b.top_k(&q, k, None).unwrap();
            for (x, y) in sa.iter().zip(&sb) {
                prop_assert!((x.score - y.score).abs() < 1e-12);
                // positions may only swap between rows that tie to rounding
                if x.pair_id != y.pair_id {
                    let other = sa.iter().find(|h| h.pair_id == y.pair_id).unwrap();
                    prop_assert!((other.score - x.score).abs() < 1e-12);
                }
            }
        }
    }
}
