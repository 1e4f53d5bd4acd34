//! JSONL corpora: loading, truncation to a word budget, and seeded splits.

use std::collections::HashSet;
use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::Path;

use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::rng::seeded;

/// Word budget applied to every document before sanitization.
pub const DEFAULT_MAX_WORDS: usize = 64;

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Document {
    pub id: String,
    pub text: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub source: Option<String>,
}

impl Document {
    pub fn new(id: impl Into<String>, text: impl Into<String>) -> Self {
        Document {
            id: id.into(),
            text: text.into(),
            source: None,
        }
    }
}

#[derive(Deserialize)]
struct RawLine {
    text: String,
    #[serde(default)]
    id: Option<serde_json::Value>,
    #[serde(default)]
    source: Option<String>,
}

pub fn parse_corpus(reader: impl BufRead, origin: &Path) -> Result<Vec<Document>> {
    let mut docs = Vec::new();
    let mut seen = HashSet::new();
    for (i, line) in reader.lines().enumerate() {
        let line = line.map_err(|e| Error::io(origin, e))?;
        if line.trim().is_empty() {
            continue;
        }
        let parse_err = |message: String| Error::Parse {
            path: origin.to_path_buf(),
            line: i + 1,
            message,
        };
        let raw: RawLine = serde_json::from_str(&line).map_err(|e| parse_err(e.to_string()))?;
        let id = match raw.id {
            None | Some(serde_json::Value::Null) => format!("{i:06}"),
            Some(serde_json::Value::String(s)) => s,
            Some(other) => other.to_string(),
        };
        if raw.text.trim().is_empty() {
            return Err(parse_err("empty text".into()));
        }
        if !seen.insert(id.clone()) {
            return Err(parse_err(format!("duplicate id {id:?}")));
        }
        docs.push(Document {
            id,
            text: raw.text,
            source: raw.source,
        });
    }
    Ok(docs)
}

pub fn load_corpus(path: impl AsRef<Path>) -> Result<Vec<Document>> {
    let path = path.as_ref();
    let file = File::open(path).map_err(|e| Error::io(path, e))?;
    parse_corpus(BufReader::new(file), path)
}

pub fn save_corpus(path: impl AsRef<Path>, docs: &[Document]) -> Result<()> {
    write_jsonl(path, docs)
}

pub fn write_jsonl<T: Serialize>(path: impl AsRef<Path>, items: &[T]) -> Result<()> {
    let path = path.as_ref();
    let file = File::create(path).map_err(|e| Error::io(path, e))?;
    let mut out = BufWriter::new(file);
    for item in items {
        serde_json::to_writer(&mut out, item)?;
        out.write_all(b"\n").map_err(|e| Error::io(path, e))?;
    }
    out.flush().map_err(|e| Error::io(path, e))
}

pub fn read_jsonl<T: serde::de::DeserializeOwned>(path: impl AsRef<Path>) -> Result<Vec<T>> {
    let path = path.as_ref();
    let file = File::open(path).map_err(|e| Error::io(path, e))?;
    let mut items = Vec::new();
    for (i, line) in BufReader::new(file).lines().enumerate() {
        let line = line.map_err(|e| Error::io(path, e))?;
        if line.trim().is_empty() {
            continue;
        }
        items.push(serde_json::from_str(&line).map_err(|e| Error::Parse {
            path: path.to_path_buf(),
            line: i + 1,
            message: e.to_string(),
        })?);
    }
    Ok(items)
}

/// Keeps the first `max_words` whitespace-delimited words.
pub fn truncate_doc(doc: &Document, max_words: usize) -> Document {
    let max_words = max_words.max(1);
    let mut words = doc.text.split_whitespace();
    let head: Vec<&str> = words.by_ref().take(max_words).collect();
    let text = if words.next().is_none() {
        doc.text.clone()
    } else {
        head.join(" ")
    };
    Document {
        text,
        ..doc.clone()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct SplitSpec {
    pub train: usize,
    pub validation: usize,
    pub test: usize,
    pub seed: u64,
}

impl SplitSpec {
    pub const PAPER_SCALE: SplitSpec = SplitSpec {
        train: 8000,
        validation: 1000,
        test: 1000,
        seed: 42,
    };
}

#[derive(Debug, Clone, Default)]
pub struct Splits {
    pub train: Vec<Document>,
    pub validation: Vec<Document>,
    pub test: Vec<Document>,
}

/// Seeded shuffle, then contiguous train / validation / test slices.
pub fn split_corpus(docs: &[Document], spec: &SplitSpec) -> Result<Splits> {
    let need = spec.train + spec.validation + spec.test;
    if need > docs.len() {
        return Err(Error::InvalidArgument(format!(
            "split needs {need} documents, corpus has {}",
            docs.len()
        )));
    }
    let mut order: Vec<usize> = (0..docs.len()).collect();
    order.shuffle(&mut seeded(spec.seed));
    let take = |range: std::ops::Range<usize>| -> Vec<Document> {
        order[range].iter().map(|&i| docs[i].clone()).collect()
    };
    Ok(Splits {
        train: take(0..spec.train),
        validation: take(spec.train..spec.train + spec.validation),
        test: take(spec.train + spec.validation..need),
    })
}

#[cfg(test)]
mod tests {
    use std::io::Cursor;

    use super::*;

    fn parse(s: &str) -> Result<Vec<Document>> {
        parse_corpus(Cursor::new(s), Path::new("c.jsonl"))
    }

    #[test]
    fn assigns_line_ids() {
        let docs = parse("{\"text\":\"a\"}\n{\"text\":\"b\"}\n{\"text\":\"c\"}\n").unwrap();
        let ids: Vec<_> = docs.iter().map(|d| d.id.as_str()).collect();
        assert_eq!(ids, ["000000", "000001", "000002"]);
    }

    #[test]
    fn malformed_line_is_named() {
        match parse("{\"text\":\"a\"}\n{oops\n") {
            Err(Error::Parse { line, .. }) => assert_eq!(line, 2),
            other => panic!("unexpected {other:?}"),
        }
    }

    #[test]
    fn truncation() {
        let long: Vec<String> = (0..100).map(|i| format!("w{i}")).collect();
        let doc = Document::new("x", long.join(" "));
        let t = truncate_doc(&doc, 64);
        assert_eq!(t.text.split_whitespace().count(), 64);
        assert!(t.text.starts_with("w0 w1"));
        assert!(t.text.ends_with("w63"));
        assert_eq!(truncate_doc(&t, 64), t);

        let short = Document::new("y", "only  ten words here but spaced   oddly ok then done");
        assert_eq!(truncate_doc(&short, 64), short);
    }

    #[test]
    fn split_sizes_and_determinism() {
        let docs: Vec<Document> = (0..100).map(|i| Document::new(format!("{i}"), "t")).collect();
        let spec = SplitSpec {
            train: 80,
            validation: 10,
            test: 10,
            seed: 42,
        };
        let a = split_corpus(&docs, &spec).unwrap();
        let b = split_corpus(&docs, &spec).unwrap();
        assert_eq!(a.train, b.train);
        let c = split_corpus(&docs, &SplitSpec { seed: 43, ..spec }).unwrap();
        assert_ne!(a.test, c.test);
        assert!(split_corpus(&docs, &SplitSpec { train: 95, ..spec }).is_err());
    }
}
