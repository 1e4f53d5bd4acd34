//! Corpus-level reports grouped by model, mechanism, budget and attack.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::attacks::{AttackKind, AttackResult};
use crate::error::{Error, Result};
use crate::manifest::write_atomic;
use crate::metrics::{aggregate, per_class_breakdown, ClassMetrics, DocMetrics, DocSets, Mean, UNDEFINED_POLICY};
use crate::pii::PiiClass;
use crate::record::Mechanism;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReportRow {
    pub model: String,
    pub mechanism: Mechanism,
    pub budget: f64,
    pub attack: AttackKind,
    /// Documents with metrics; errored documents are counted separately.
    pub n_docs: usize,
    pub n_errors: usize,
    pub succ_pct: f64,
    pub recall_pct: Mean,
    pub precision_pct: Mean,
    /// Mean judge score on the 0..=10 scale, over documents that have one.
    pub score: Mean,
    pub per_class: BTreeMap<PiiClass, ClassMetrics>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CorpusReport {
    pub undefined_policy: String,
    pub rows: Vec<ReportRow>,
}

impl CorpusReport {
    pub fn from_results(results: &[AttackResult]) -> Result<Self> {
        let mut groups: Vec<Vec<&AttackResult>> = Vec::new();
        for r in results {
            let same = |g: &&mut Vec<&AttackResult>| {
                let h = g[0];
                h.model == r.model
                    && h.mechanism == r.mechanism
                    && h.attack == r.attack
                    && h.budget.to_bits() == r.budget.to_bits()
            };
            match groups.iter_mut().find(|g| same(g)) {
                Some(g) => g.push(r),
                None => groups.push(vec![r]),
            }
        }
        let mut rows = groups.into_iter().map(row).collect::<Result<Vec<_>>>()?;
        rows.sort_by(|a, b| {
            (&a.model, a.mechanism, a.attack)
                .cmp(&(&b.model, b.mechanism, b.attack))
                .then(a.budget.total_cmp(&b.budget))
        });
        if rows.is_empty() {
            return Err(Error::Empty("no attack results to report"));
        }
        Ok(CorpusReport {
            undefined_policy: UNDEFINED_POLICY.to_string(),
            rows,
        })
    }

    pub fn to_json(&self) -> Result<Vec<u8>> {
        let mut bytes = serde_json::to_vec_pretty(self)?;
        bytes.push(b'\n');
        Ok(bytes)
    }

    pub fn to_csv(&self) -> Result<Vec<u8>> {
        let mut w = csv::Writer::from_writer(Vec::new());
        w.write_record([
            "model", "mechanism", "budget", "attack", "n_docs", "n_errors", "succ_pct",
            "recall_pct", "recall_n", "precision_pct", "precision_n", "score", "score_n",
        ])
        .map_err(csv_err)?;
        for r in &self.rows {
            w.write_record([
                r.model.clone(),
                r.mechanism.to_string(),
                r.budget.to_string(),
                r.attack.as_str().to_string(),
                r.n_docs.to_string(),
                r.n_errors.to_string(),
                format!("{:.2}", r.succ_pct),
                fmt_opt(r.recall_pct.value),
                r.recall_pct.n_defined.to_string(),
                fmt_opt(r.precision_pct.value),
                r.precision_pct.n_defined.to_string(),
                fmt_opt(r.score.value),
                r.score.n_defined.to_string(),
            ])
            .map_err(csv_err)?;
        }
        w.into_inner().map_err(|e| Error::InvalidArgument(e.to_string()))
    }

    /// One table per (mechanism, attack): rows are models, column groups are
    /// budgets with Succ / Recall / Precision in percent.
    pub fn to_markdown(&self) -> String {
        let mut out = String::new();
        let mut sections: Vec<(Mechanism, AttackKind)> =
            self.rows.iter().map(|r| (r.mechanism, r.attack)).collect();
        sections.sort();
        sections.dedup();
        for (mechanism, attack) in sections {
            let rows: Vec<&ReportRow> = self
                .rows
                .iter()
                .filter(|r| r.mechanism == mechanism && r.attack == attack)
                .collect();
            let mut budgets: Vec<f64> = rows.iter().map(|r| r.budget).collect();
            budgets.sort_by(f64::total_cmp);
            budgets.dedup_by(|a, b| a.to_bits() == b.to_bits());
            let mut models: Vec<&str> = rows.iter().map(|r| r.model.as_str()).collect();
            models.sort();
            models.dedup();

            let sym = mechanism.budget_symbol();
            let _ = writeln!(out, "### {} / {}\n", mechanism, attack.as_str());
            out.push_str("| model |");
            for b in &budgets {
                let _ = write!(out, " {sym}={b} Succ | {sym}={b} Recall | {sym}={b} Precision |");
            }
            out.push_str("\n|---|");
            out.push_str(&"---|".repeat(budgets.len() * 3));
            out.push('\n');
            for m in models {
                let _ = write!(out, "| {m} |");
                for b in &budgets {
                    match rows.iter().find(|r| r.model == m && r.budget.to_bits() == b.to_bits()) {
                        Some(r) => {
                            let _ = write!(
                                out,
                                " {:.2} | {} | {} |",
                                r.succ_pct,
                                fmt_opt(r.recall_pct.value),
                                fmt_opt(r.precision_pct.value)
                            );
                        }
                        None => out.push_str(" - | - | - |"),
                    }
                }
                out.push('\n');
            }
            out.push('\n');
        }
        out
    }

    /// Writes `report.json`, `report.csv` and `report.md` into `dir`.
    pub fn write_all(&self, dir: &Path) -> Result<Vec<std::path::PathBuf>> {
        let files = [
            ("report.json", self.to_json()?),
            ("report.csv", self.to_csv()?),
            ("report.md", self.to_markdown().into_bytes()),
        ];
        files
            .into_iter()
            .map(|(name, bytes)| {
                let path = dir.join(name);
                write_atomic(&path, &bytes)?;
                Ok(path)
            })
            .collect()
    }
}

fn csv_err(e: csv::Error) -> Error {
    Error::InvalidArgument(format!("csv: {e}"))
}

fn fmt_opt(v: Option<f64>) -> String {
    v.map_or_else(|| "n/a".to_string(), |v| format!("{v:.2}"))
}

fn row(group: Vec<&AttackResult>) -> Result<ReportRow> {
    let head = group[0];
    let scored: Vec<&AttackResult> = group
        .iter()
        .copied()
        .filter(|r| r.error.is_none() && r.metrics.is_some() && r.pii.is_some())
        .collect();
    let metrics: Vec<DocMetrics> = scored.iter().filter_map(|r| r.metrics).collect();
    let agg = aggregate(&metrics).map_err(|_| {
        Error::Empty("every document in a report group failed")
    })?;
    let sets: Vec<DocSets<'_>> = scored
        .iter()
        .filter_map(|r| r.pii.as_ref())
        .map(|p| DocSets {
            original: &p.original,
            sanitized: &p.sanitized,
            reconstructed: &p.reconstructed,
        })
        .collect();
    Ok(ReportRow {
        model: head.model.clone(),
        mechanism: head.mechanism,
        budget: head.budget,
        attack: head.attack,
        n_docs: agg.n_docs,
        n_errors: group.len() - scored.len(),
        succ_pct: agg.succ_pct,
        recall_pct: agg.recall_pct,
        precision_pct: agg.precision_pct,
        score: Mean::of(scored.iter().map(|r| r.score.map(f64::from))),
        per_class: per_class_breakdown(&sets),
    })
}
