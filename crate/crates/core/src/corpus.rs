//! Code–comment corpora: line-delimited JSON loading, deduplication and batching.

use std::collections::{HashMap, HashSet};
use std::fmt;
use std::fs::File;
use std::io::{BufRead, BufReader, Read, Write};
use std::path::{Path, PathBuf};
use std::str::FromStr;

use flate2::read::GzDecoder;
use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::rng;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Split {
    Train,
    Valid,
    Test,
}

impl FromStr for Split {
    type Err = String;

    fn from_str(s: &str) -> std::result::Result<Self, String> {
        match s.trim().to_ascii_lowercase().as_str() {
            "train" => Ok(Split::Train),
            "valid" | "validation" | "dev" => Ok(Split::Valid),
            "test" => Ok(Split::Test),
            other => Err(format!("unknown split {other:?}")),
        }
    }
}

impl fmt::Display for Split {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Split::Train => "train",
            Split::Valid => "valid",
            Split::Test => "test",
        })
    }
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct CodeCommentPair {
    pub id: String,
    pub code: String,
    pub comment: String,
    pub split: Split,
}

/// Field names used in the corpus file.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Schema {
    pub id: String,
    pub code: String,
    pub comment: String,
    pub split: String,
}

impl Default for Schema {
    fn default() -> Self {
        Schema { id: "id".into(), code: "code".into(), comment: "comment".into(), split: "split".into() }
    }
}

impl FromStr for Schema {
    type Err = String;

    /// `"code=src,comment=doc"` renames individual fields; unspecified ones keep defaults.
    fn from_str(s: &str) -> std::result::Result<Self, String> {
        let mut schema = Schema::default();
        for part in s.split(',').map(str::trim).filter(|p| !p.is_empty()) {
            let (key, value) = part.split_once('=').ok_or_else(|| format!("expected field=name, got {part:?}"))?;
            let slot = match key.trim() {
                "id" => &mut schema.id,
                "code" => &mut schema.code,
                "comment" => &mut schema.comment,
                "split" => &mut schema.split,
                other => return Err(format!("unknown schema field {other:?}")),
            };
            *slot = value.trim().to_string();
        }
        Ok(schema)
    }
}

#[derive(Clone, Debug)]
pub struct LoadOptions {
    pub schema: Schema,
    pub dedup: bool,
    /// Fail on the first malformed record instead of collecting it.
    pub strict: bool,
}

impl Default for LoadOptions {
    fn default() -> Self {
        LoadOptions { schema: Schema::default(), dedup: true, strict: false }
    }
}

/// A record that was skipped during loading.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct RecordIssue {
    pub line: usize,
    pub message: String,
}

#[derive(Clone, Debug, Default)]
pub struct Corpus {
    pub pairs: Vec<CodeCommentPair>,
    pub rejected: Vec<RecordIssue>,
    pub duplicates_removed: usize,
    by_id: HashMap<String, usize>,
}

impl Corpus {
    pub fn from_pairs(pairs: Vec<CodeCommentPair>) -> Result<Self> {
        let mut by_id = HashMap::with_capacity(pairs.len());
        for (i, p) in pairs.iter().enumerate() {
            if by_id.insert(p.id.clone(), i).is_some() {
                return Err(Error::Data(format!("duplicate id {}", p.id)));
            }
        }
        Ok(Corpus { pairs, rejected: Vec::new(), duplicates_removed: 0, by_id })
    }

    pub fn len(&self) -> usize {
        self.pairs.len()
    }

    pub fn is_empty(&self) -> bool {
        self.pairs.is_empty()
    }

    pub fn get(&self, id: &str) -> Option<&CodeCommentPair> {
        self.by_id.get(id).map(|&i| &self.pairs[i])
    }

    pub fn split(&self, split: Split) -> Vec<&CodeCommentPair> {
        self.pairs.iter().filter(|p| p.split == split).collect()
    }

    /// Owned copy of one split, preserving file order.
    pub fn subset(&self, split: Split) -> Vec<CodeCommentPair> {
        self.pairs.iter().filter(|p| p.split == split).cloned().collect()
    }

    pub fn counts(&self) -> SplitCounts {
        let mut c = SplitCounts::default();
        for p in &self.pairs {
            match p.split {
                Split::Train => c.train += 1,
                Split::Valid => c.valid += 1,
                Split::Test => c.test += 1,
            }
        }
        c
    }

    /// Fails if any id or normalised (code, comment) text occurs in two splits.
    pub fn check_disjoint(&self) -> Result<()> {
        let mut seen: HashMap<(String, String), Split> = HashMap::new();
        let mut ids: HashMap<&str, Split> = HashMap::new();
        for p in &self.pairs {
            if let Some(prev) = ids.insert(&p.id, p.split) {
                if prev != p.split {
                    return Err(Error::Data(format!("id {} appears in {prev} and {}", p.id, p.split)));
                }
            }
            if let Some(prev) = seen.insert(normalized_key(p), p.split) {
                if prev != p.split {
                    return Err(Error::Data(format!("pair {} duplicates text across {prev} and {}", p.id, p.split)));
                }
            }
        }
        Ok(())
    }
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct SplitCounts {
    pub train: usize,
    pub valid: usize,
    pub test: usize,
}

/// Whitespace-collapsed code and lowercased, whitespace-collapsed comment.
pub fn normalized_key(p: &CodeCommentPair) -> (String, String) {
    let collapse = |s: &str| s.split_whitespace().collect::<Vec<_>>().join(" ");
    (collapse(&p.code), collapse(&p.comment.to_lowercase()))
}

fn open_maybe_gz(path: &Path) -> Result<Box<dyn BufRead>> {
    let mut file = File::open(path)?;
    let mut magic = [0u8; 2];
    let n = file.read(&mut magic)?;
    let file = File::open(path)?;
    if n == 2 && magic == [0x1f, 0x8b] {
        Ok(Box::new(BufReader::new(GzDecoder::new(file))))
    } else {
        Ok(Box::new(BufReader::new(file)))
    }
}

pub fn load_corpus(path: impl AsRef<Path>, opts: &LoadOptions) -> Result<Corpus> {
    let path = path.as_ref();
    parse_corpus(open_maybe_gz(path)?, path, opts)
}

/// Parse line-delimited JSON records. Blank lines and `{"provenance": ...}`
/// header lines are ignored.
pub fn parse_corpus<R: BufRead>(reader: R, source: &Path, opts: &LoadOptions) -> Result<Corpus> {
    let mut pairs = Vec::new();
    let mut rejected = Vec::new();
    let mut ids = HashSet::new();
    let mut keys = HashSet::new();
    let mut duplicates = 0;
    for (idx, line) in reader.lines().enumerate() {
        let line = line?;
        let lineno = idx + 1;
        if line.trim().is_empty() || is_header(&line) {
            continue;
        }
        let pair = match parse_record(&line, &opts.schema) {
            Ok(p) => p,
            Err(message) => {
                if opts.strict {
                    return Err(Error::Record { path: source.to_path_buf(), line: lineno, message });
                }
                rejected.push(RecordIssue { line: lineno, message });
                continue;
            }
        };
        if opts.dedup && !keys.insert(normalized_key(&pair)) {
            duplicates += 1;
            continue;
        }
        if !ids.insert(pair.id.clone()) {
            let message = format!("duplicate id {}", pair.id);
            if opts.strict {
                return Err(Error::Record { path: source.to_path_buf(), line: lineno, message });
            }
            rejected.push(RecordIssue { line: lineno, message });
            continue;
        }
        pairs.push(pair);
    }
    if pairs.is_empty() {
        return Err(Error::Data(format!("{}: corpus contains no valid records", source.display())));
    }
    let mut corpus = Corpus::from_pairs(pairs)?;
    corpus.rejected = rejected;
    corpus.duplicates_removed = duplicates;
    Ok(corpus)
}

fn is_header(line: &str) -> bool {
    line.trim_start().starts_with("{\"provenance\"")
}

fn parse_record(line: &str, schema: &Schema) -> std::result::Result<CodeCommentPair, String> {
    let value: serde_json::Value = serde_json::from_str(line).map_err(|e| format!("invalid JSON: {e}"))?;
    let field = |name: &str| -> std::result::Result<String, String> {
        match value.get(name) {
            Some(serde_json::Value::String(s)) => Ok(s.clone()),
            Some(serde_json::Value::Number(n)) => Ok(n.to_string()),
            Some(_) => Err(format!("field {name:?} is not a string")),
            None => Err(format!("missing field {name:?}")),
        }
    };
    let id = field(&schema.id)?;
    let code = field(&schema.code)?;
    let comment = field(&schema.comment)?;
    let split: Split = field(&schema.split)?.parse()?;
    if id.trim().is_empty() {
        return Err("empty id".into());
    }
    if code.trim().is_empty() {
        return Err("empty code".into());
    }
    if comment.trim().is_empty() {
        return Err("empty comment".into());
    }
    Ok(CodeCommentPair { id, code, comment, split })
}

pub fn write_corpus<W: Write>(mut w: W, pairs: &[CodeCommentPair]) -> Result<()> {
    for p in pairs {
        serde_json::to_writer(&mut w, p)?;
        w.write_all(b"\n")?;
    }
    Ok(())
}

pub fn save_corpus(path: impl AsRef<Path>, pairs: &[CodeCommentPair]) -> Result<PathBuf> {
    let path = path.as_ref().to_path_buf();
    let mut w = std::io::BufWriter::new(File::create(&path)?);
    write_corpus(&mut w, pairs)?;
    w.flush()?;
    Ok(path)
}

/// Deterministic permutation of `0..n` for one epoch.
pub fn epoch_order(n: usize, seed: u64, epoch: u64) -> Vec<usize> {
    let mut order: Vec<usize> = (0..n).collect();
    order.shuffle(&mut rng::rng_at(seed, &[epoch]));
    order
}
