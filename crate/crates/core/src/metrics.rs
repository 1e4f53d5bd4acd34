//! Reconstruction metrics over PII sets.
//!
//! With `C` the PII of the original, `C~` of the sanitized text and `C^` of
//! the reconstruction, the matched set is `(C ∩ C^) − C~`:
//!
//! * recall    = |(C ∩ C^) − C~| / |C − C~|
//! * precision = |(C ∩ C^) − C~| / |C^ − C~|
//! * succ      = 1 if the matched set is nonempty
//!
//! An empty denominator leaves the ratio undefined. Undefined values are
//! excluded from corpus means and every mean carries its `n_defined`.

use std::collections::{BTreeMap, BTreeSet};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::pii::{PiiClass, PiiSet};

pub const UNDEFINED_POLICY: &str =
    "ratios with an empty denominator are excluded from means; n_defined counts the rest";

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
pub struct SetCounts {
    pub original: usize,
    pub sanitized: usize,
    pub reconstructed: usize,
    /// |(C ∩ C^) − C~|
    pub matched: usize,
    /// |C − C~|
    pub removed: usize,
    /// |C^ − C~|
    pub introduced: usize,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DocMetrics {
    pub succ: bool,
    pub recall: Option<f64>,
    pub precision: Option<f64>,
    pub counts: SetCounts,
}

fn ratio(num: usize, den: usize) -> Option<f64> {
    (den > 0).then(|| num as f64 / den as f64)
}

pub fn compute_doc_metrics(original: &PiiSet, sanitized: &PiiSet, reconstructed: &PiiSet) -> DocMetrics {
    let matched = original.intersection(reconstructed).difference(sanitized).len();
    let removed = original.difference(sanitized).len();
    let introduced = reconstructed.difference(sanitized).len();
    DocMetrics {
        succ: matched > 0,
        recall: ratio(matched, removed),
        precision: ratio(matched, introduced),
        counts: SetCounts {
            original: original.len(),
            sanitized: sanitized.len(),
            reconstructed: reconstructed.len(),
            matched,
            removed,
            introduced,
        },
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct Mean {
    pub value: Option<f64>,
    pub n_defined: usize,
}

impl Mean {
    pub fn of(values: impl IntoIterator<Item = Option<f64>>) -> Self {
        let (sum, n) = values
            .into_iter()
            .flatten()
            .fold((0.0, 0usize), |(s, n), v| (s + v, n + 1));
        Mean {
            value: (n > 0).then(|| sum / n as f64),
            n_defined: n,
        }
    }

    fn percent(self) -> Self {
        Mean {
            value: self.value.map(|v| v * 100.0),
            ..self
        }
    }
}

/// Corpus-level means. Succ, recall and precision are percentages.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Aggregate {
    pub n_docs: usize,
    pub succ_pct: f64,
    pub recall_pct: Mean,
    pub precision_pct: Mean,
}

pub fn aggregate(docs: &[DocMetrics]) -> Result<Aggregate> {
    if docs.is_empty() {
        return Err(Error::Empty("no document metrics to aggregate"));
    }
    let succ = docs.iter().filter(|d| d.succ).count() as f64 / docs.len() as f64;
    Ok(Aggregate {
        n_docs: docs.len(),
        succ_pct: succ * 100.0,
        recall_pct: Mean::of(docs.iter().map(|d| d.recall)).percent(),
        precision_pct: Mean::of(docs.iter().map(|d| d.precision)).percent(),
    })
}

/// Per-class recall and precision as fractions in [0, 1].
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ClassMetrics {
    pub recall: Mean,
    pub precision: Mean,
}

#[derive(Debug, Clone, Copy)]
pub struct DocSets<'a> {
    pub original: &'a PiiSet,
    pub sanitized: &'a PiiSet,
    pub reconstructed: &'a PiiSet,
}

/// Recall and precision restricted to each class's subsets. Classes where
/// both are undefined on every document are left out.
pub fn per_class_breakdown(docs: &[DocSets<'_>]) -> BTreeMap<PiiClass, ClassMetrics> {
    let classes: BTreeSet<PiiClass> = docs
        .iter()
        .flat_map(|d| {
            d.original
                .classes()
                .into_iter()
                .chain(d.sanitized.classes())
                .chain(d.reconstructed.classes())
        })
        .collect();
    let mut out = BTreeMap::new();
    for class in classes {
        let per_doc: Vec<DocMetrics> = docs
            .iter()
            .map(|d| {
                compute_doc_metrics(
                    &d.original.restrict(class),
                    &d.sanitized.restrict(class),
                    &d.reconstructed.restrict(class),
                )
            })
            .collect();
        let m = ClassMetrics {
            recall: Mean::of(per_doc.iter().map(|d| d.recall)),
            precision: Mean::of(per_doc.iter().map(|d| d.precision)),
        };
        if m.recall.n_defined > 0 || m.precision.n_defined > 0 {
            out.insert(class, m);
        }
    }
    out
}
