//! Word-embedding table and exact nearest-neighbour search over it.

use std::collections::HashMap;
use std::fs::File;
use std::io::{BufRead, BufReader, Read};
use std::path::Path;
use std::sync::OnceLock;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::scalar::{squared_distance, Scalar};

pub const DEFAULT_DIM: usize = 50;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum SearchMode {
    ExactBruteforce,
    #[default]
    Accelerated,
}

/// Immutable vocabulary plus an `n x dim` row-major matrix of coordinates.
#[derive(Debug)]
pub struct EmbeddingTable<F> {
    words: Vec<String>,
    vectors: Vec<F>,
    dim: usize,
    word_index: HashMap<String, usize>,
    duplicates: usize,
    index: OnceLock<PivotIndex>,
}

impl<F: Scalar> EmbeddingTable<F> {
    /// Builds a table from `(word, vector)` rows. Words are lowercased; a word
    /// seen again keeps its first vector and bumps the duplicate count.
    pub fn from_rows<I, S>(rows: I, dim: usize) -> Result<Self>
    where
        I: IntoIterator<Item = (S, Vec<F>)>,
        S: AsRef<str>,
    {
        if dim == 0 {
            return Err(Error::InvalidArgument("embedding dim must be positive".into()));
        }
        let mut table = EmbeddingTable {
            words: Vec::new(),
            vectors: Vec::new(),
            dim,
            word_index: HashMap::new(),
            duplicates: 0,
            index: OnceLock::new(),
        };
        for (word, vector) in rows {
            if vector.len() != dim {
                return Err(Error::DimensionMismatch {
                    expected: dim,
                    actual: vector.len(),
                });
            }
            if vector.iter().any(|x| !x.is_finite()) {
                return Err(Error::InvalidArgument(format!(
                    "non-finite coordinate for {:?}",
                    word.as_ref()
                )));
            }
            table.push(word.as_ref(), &vector);
        }
        Ok(table)
    }

    fn push(&mut self, word: &str, vector: &[F]) -> bool {
        let key = word.to_lowercase();
        if self.word_index.contains_key(&key) {
            self.duplicates += 1;
            return false;
        }
        self.word_index.insert(key.clone(), self.words.len());
        self.words.push(key);
        self.vectors.extend_from_slice(vector);
        true
    }

    pub fn from_reader<R: Read>(reader: R, expected_dim: usize, origin: &Path) -> Result<Self> {
        if expected_dim == 0 {
            return Err(Error::InvalidArgument("expected_dim must be positive".into()));
        }
        let mut table = Self::from_rows(std::iter::empty::<(&str, Vec<F>)>(), expected_dim)?;
        let mut row = Vec::with_capacity(expected_dim);
        for (i, line) in BufReader::new(reader).lines().enumerate() {
            let lineno = i + 1;
            let line = line.map_err(|e| Error::io(origin, e))?;
            let mut fields = line.split_whitespace();
            let Some(word) = fields.next() else { continue };
            row.clear();
            for field in fields {
                let value: F = field.parse().map_err(|_| Error::Parse {
                    path: origin.to_path_buf(),
                    line: lineno,
                    message: format!("non-numeric coordinate {field:?}"),
                })?;
                if !value.is_finite() {
                    return Err(Error::Parse {
                        path: origin.to_path_buf(),
                        line: lineno,
                        message: format!("non-finite coordinate {field:?}"),
                    });
                }
                row.push(value);
            }
            if row.len() != expected_dim {
                return Err(Error::Parse {
                    path: origin.to_path_buf(),
                    line: lineno,
                    message: format!("expected {expected_dim} coordinates, found {}", row.len()),
                });
            }
            table.push(word, &row);
        }
        if table.is_empty() {
            return Err(Error::Empty("embedding file has no records"));
        }
        if table.duplicates > 0 {
            tracing::warn!(
                duplicates = table.duplicates,
                path = %origin.display(),
                "duplicate words in embedding file; kept first occurrence"
            );
        }
        Ok(table)
    }

    pub fn len(&self) -> usize {
        self.words.len()
    }

    pub fn is_empty(&self) -> bool {
        self.words.is_empty()
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    /// Number of rows dropped because their word had already been seen.
    pub fn duplicate_count(&self) -> usize {
        self.duplicates
    }

    pub fn words(&self) -> &[String] {
        &self.words
    }

    pub fn word(&self, row: usize) -> &str {
        &self.words[row]
    }

    pub fn vector(&self, row: usize) -> &[F] {
        &self.vectors[row * self.dim..(row + 1) * self.dim]
    }

    /// Row of `word`, lowercasing first.
    pub fn position(&self, word: &str) -> Option<usize> {
        match self.word_index.get(word) {
            Some(&i) => Some(i),
            None => self.word_index.get(&word.to_lowercase()).copied(),
        }
    }

    pub fn lookup(&self, word: &str) -> Option<&[F]> {
        self.position(word).map(|i| self.vector(i))
    }

    pub fn nearest_word(&self, query: &[F], mode: SearchMode) -> Result<&str> {
        self.nearest_row(query, mode).map(|i| self.word(i))
    }

    /// Row minimizing Euclidean distance to `query`; ties go to the lowest row.
    pub fn nearest_row(&self, query: &[F], mode: SearchMode) -> Result<usize> {
        if self.is_empty() {
            return Err(Error::Empty("embedding table"));
        }
        if query.len() != self.dim {
            return Err(Error::DimensionMismatch {
                expected: self.dim,
                actual: query.len(),
            });
        }
        if query.iter().any(|x| !x.is_finite()) {
            return Err(Error::InvalidArgument("query has non-finite coordinates".into()));
        }
        Ok(match mode {
            SearchMode::ExactBruteforce => self.brute_force(query),
            SearchMode::Accelerated => self.index().search(self, query),
        })
    }

    fn brute_force(&self, query: &[F]) -> usize {
        let mut best = F::infinity();
        let mut best_row = 0;
        for row in 0..self.len() {
            let d = squared_distance(self.vector(row), query);
            if d < best {
                best = d;
                best_row = row;
            }
        }
        best_row
    }

    fn index(&self) -> &PivotIndex {
        self.index.get_or_init(|| PivotIndex::build(self))
    }
}

impl<F: Scalar> EmbeddingTable<F> {
    pub fn load(path: impl AsRef<Path>, expected_dim: usize) -> Result<Self> {
        let path = path.as_ref();
        let file = File::open(path).map_err(|e| Error::io(path, e))?;
        Self::from_reader(file, expected_dim, path)
    }
}

pub fn load_embeddings<F: Scalar>(
    path: impl AsRef<Path>,
    expected_dim: usize,
) -> Result<EmbeddingTable<F>> {
    EmbeddingTable::load(path, expected_dim)
}

const PIVOTS: usize = 4;
// Slack on pivot lower bounds. Covers the rounding of the exact distance in
// the table's scalar type (f32 included) so pruning never drops a true argmin.
const PRUNE_REL_SLACK: f64 = 1e-4;

/// Exact search index: rows sorted by distance to a primary pivot, with
/// triangle-inequality bounds from a few extra pivots and early-exit partial
/// distances. Returns bit-for-bit the same row as brute force.
#[derive(Debug)]
struct PivotIndex {
    pivots: Vec<usize>,
    // pivot distances per row, `PIVOTS` wide, in original row order
    pivot_dist: Vec<f64>,
    // rows ordered by (distance to pivot 0, row)
    order: Vec<usize>,
    primary: Vec<f64>,
}

fn dist_f64<F: Scalar>(a: &[F], b: &[F]) -> f64 {
    a.iter()
        .zip(b)
        .map(|(&x, &y)| {
            let d = x.as_f64() - y.as_f64();
            d * d
        })
        .sum::<f64>()
        .sqrt()
}

impl PivotIndex {
    fn build<F: Scalar>(table: &EmbeddingTable<F>) -> Self {
        let n = table.len();
        let k = PIVOTS.min(n);
        // farthest-first pivot selection starting from row 0
        let mut pivots = vec![0usize];
        let mut min_dist: Vec<f64> = (0..n)
            .map(|r| dist_f64(table.vector(r), table.vector(0)))
            .collect();
        while pivots.len() < k {
            let (far, _) = min_dist
                .iter()
                .enumerate()
                .fold((0, -1.0), |acc, (i, &d)| if d > acc.1 { (i, d) } else { acc });
            pivots.push(far);
            for (r, m) in min_dist.iter_mut().enumerate() {
                *m = m.min(dist_f64(table.vector(r), table.vector(far)));
            }
        }
        let mut pivot_dist = vec![0.0; n * PIVOTS];
        for r in 0..n {
            for (p, &pv) in pivots.iter().enumerate() {
                pivot_dist[r * PIVOTS + p] = dist_f64(table.vector(r), table.vector(pv));
            }
        }
        let mut order: Vec<usize> = (0..n).collect();
        order.sort_by(|&a, &b| {
            pivot_dist[a * PIVOTS]
                .total_cmp(&pivot_dist[b * PIVOTS])
                .then(a.cmp(&b))
        });
        let primary = order.iter().map(|&r| pivot_dist[r * PIVOTS]).collect();
        PivotIndex {
            pivots,
            pivot_dist,
            order,
            primary,
        }
    }

    fn search<F: Scalar>(&self, table: &EmbeddingTable<F>, query: &[F]) -> usize {
        let q_piv: Vec<f64> = self
            .pivots
            .iter()
            .map(|&p| dist_f64(query, table.vector(p)))
            .collect();
        let mut best = F::infinity();
        let mut best_row = usize::MAX;

        let prunable = |lb: f64, best: F| -> bool {
            if !best.is_finite() {
                return false;
            }
            let lb = lb * (1.0 - 1e-9) - 1e-12;
            lb > 0.0 && lb * lb > best.as_f64() * (1.0 + PRUNE_REL_SLACK)
        };

        let visit = |row: usize, best: &mut F, best_row: &mut usize| {
            let bounds = &self.pivot_dist[row * PIVOTS..row * PIVOTS + self.pivots.len()];
            let lb = bounds
                .iter()
                .zip(&q_piv)
                .map(|(a, b)| (a - b).abs())
                .fold(0.0, f64::max);
            if prunable(lb, *best) {
                return;
            }
            if let Some(d) = bounded_distance(table.vector(row), query, *best) {
                if d < *best || (d == *best && row < *best_row) {
                    *best = d;
                    *best_row = row;
                }
            }
        };

        let start = self.primary.partition_point(|&d| d < q_piv[0]);
        let (mut lo, mut hi) = (start, start);
        let n = self.order.len();
        let mut lo_open = lo > 0;
        let mut hi_open = hi < n;
        while lo_open || hi_open {
            if hi_open {
                let gap = self.primary[hi] - q_piv[0];
                if prunable(gap, best) {
                    hi_open = false;
                } else {
                    visit(self.order[hi], &mut best, &mut best_row);
                    hi += 1;
                    hi_open = hi < n;
                }
            }
            if lo_open {
                let gap = q_piv[0] - self.primary[lo - 1];
                if prunable(gap, best) {
                    lo_open = false;
                } else {
                    visit(self.order[lo - 1], &mut best, &mut best_row);
                    lo -= 1;
                    lo_open = lo > 0;
                }
            }
        }
        best_row
    }
}

/// Squared distance with the same summation order as [`squared_distance`];
/// `None` once the partial sum exceeds `bound`.
fn bounded_distance<F: Scalar>(a: &[F], b: &[F], bound: F) -> Option<F> {
    let mut acc = F::zero();
    for (chunk_a, chunk_b) in a.chunks(8).zip(b.chunks(8)) {
        for (&x, &y) in chunk_a.iter().zip(chunk_b) {
            let d = x - y;
            acc = acc + d * d;
        }
        if acc > bound {
            return None;
        }
    }
    Some(acc)
}
