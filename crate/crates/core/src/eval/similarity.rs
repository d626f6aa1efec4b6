//! Word similarity: cosine similarity of word pairs ranked against human
//! ratings with Spearman's correlation.

use std::path::Path;

use num_traits::Float;

use crate::error::{Error, Result};
use crate::eval::{file_stem, read_text};
use crate::io::Embeddings;

/// Word pairs with human similarity ratings.
#[derive(Clone, Debug, PartialEq)]
pub struct WordPairDataset {
    pub name: String,
    pub entries: Vec<(String, String, f64)>,
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct SimilarityResult {
    pub rho: f64,
    pub n_used: usize,
    /// Pairs with an out-of-vocabulary or zero-norm word.
    pub n_skipped: usize,
}

impl SimilarityResult {
    pub fn coverage(&self) -> f64 {
        self.n_used as f64 / (self.n_used + self.n_skipped) as f64
    }
}

impl WordPairDataset {
    /// Lines of `word1 word2 score`, separated by tabs or spaces. Lines
    /// starting with `#` and blank lines are ignored; words are lowercased.
    pub fn parse(text: &str, name: &str) -> Result<Self> {
        let mut entries = Vec::new();
        for (idx, line) in text.lines().enumerate() {
            let line = line.trim();
            if line.is_empty() || line.starts_with('#') {
                continue;
            }
            let fields: Vec<&str> = line.split_whitespace().collect();
            let [w1, w2, score] = fields[..] else {
                return Err(Error::parse(
                    name,
                    idx + 1,
                    format!(
                        "expected 'word1 word2 score', found {} fields",
                        fields.len()
                    ),
                ));
            };
            let score: f64 = score
                .parse()
                .ok()
                .filter(|s: &f64| s.is_finite())
                .ok_or_else(|| Error::parse(name, idx + 1, format!("invalid score '{score}'")))?;
            entries.push((w1.to_lowercase(), w2.to_lowercase(), score));
        }
        if entries.is_empty() {
            return Err(Error::parse(name, 0, "dataset has no word pairs"));
        }
        Ok(WordPairDataset {
            name: name.to_owned(),
            entries,
        })
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = read_text(path)?;
        let mut ds = Self::parse(&text, &path.display().to_string())?;
        ds.name = file_stem(path);
        Ok(ds)
    }
}

/// Cosine similarity, accumulated in 64-bit.
pub fn cosine<F: Float>(u: &[F], v: &[F]) -> Result<f64> {
    assert_eq!(u.len(), v.len(), "cosine of vectors with different widths");
    let (mut uv, mut uu, mut vv) = (0.0f64, 0.0f64, 0.0f64);
    for (&a, &b) in u.iter().zip(v) {
        let (a, b) = (a.to_f64().unwrap(), b.to_f64().unwrap());
        uv += a * b;
        uu += a * a;
        vv += b * b;
    }
    if uu == 0.0 || vv == 0.0 {
        return Err(Error::ZeroNorm);
    }
    Ok((uv / (uu.sqrt() * vv.sqrt())).clamp(-1.0, 1.0))
}

/// 1-based ranks; tied values share the mean of the ranks they span.
pub fn average_ranks(values: &[f64]) -> Vec<f64> {
    let mut order: Vec<usize> = (0..values.len()).collect();
    order.sort_by(|&a, &b| values[a].total_cmp(&values[b]));
    let mut ranks = vec![0.0; values.len()];
    let mut start = 0;
    while start < order.len() {
        let mut end = start + 1;
        while end < order.len() && values[order[end]] == values[order[start]] {
            end += 1;
        }
        // Positions start..end hold ranks start+1..=end.
        let rank = (start + 1 + end) as f64 / 2.0;
        for &idx in &order[start..end] {
            ranks[idx] = rank;
        }
        start = end;
    }
    ranks
}

pub fn pearson(a: &[f64], b: &[f64]) -> Result<f64> {
    if a.len() != b.len() || a.len() < 2 {
        return Err(Error::InsufficientData(format!(
            "correlation needs two equal-length lists of at least 2 values, got {} and {}",
            a.len(),
            b.len()
        )));
    }
    let n = a.len() as f64;
    let ma = a.iter().sum::<f64>() / n;
    let mb = b.iter().sum::<f64>() / n;
    let (mut cov, mut va, mut vb) = (0.0, 0.0, 0.0);
    for (x, y) in a.iter().zip(b) {
        let (dx, dy) = (x - ma, y - mb);
        cov += dx * dy;
        va += dx * dx;
        vb += dy * dy;
    }
    if va == 0.0 || vb == 0.0 {
        return Err(Error::UndefinedCorrelation("constant input".into()));
    }
    Ok((cov / (va.sqrt() * vb.sqrt())).clamp(-1.0, 1.0))
}

/// Spearman's rank correlation with average ranks for ties.
pub fn spearman(a: &[f64], b: &[f64]) -> Result<f64> {
    if a.iter().chain(b).any(|v| v.is_nan()) {
        return Err(Error::UndefinedCorrelation("NaN in input".into()));
    }
    pearson(&average_ranks(a), &average_ranks(b))
}

pub fn evaluate_similarity(
    emb: &Embeddings,
    dataset: &WordPairDataset,
) -> Result<SimilarityResult> {
    let mut model = Vec::with_capacity(dataset.entries.len());
    let mut human = Vec::with_capacity(dataset.entries.len());
    for (w1, w2, score) in &dataset.entries {
        let sim = match (emb.vector(w1), emb.vector(w2)) {
            (Some(u), Some(v)) => cosine(u, v).ok(),
            _ => None,
        };
        if let Some(sim) = sim {
            model.push(sim);
            human.push(*score);
        }
    }
    let n_used = model.len();
    if n_used < 2 {
        return Err(Error::InsufficientData(format!(
            "{}: only {n_used} of {} pairs are in vocabulary",
            dataset.name,
            dataset.entries.len()
        )));
    }
    Ok(SimilarityResult {
        rho: spearman(&model, &human)?,
        n_used,
        n_skipped: dataset.entries.len() - n_used,
    })
}
