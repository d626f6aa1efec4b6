//! Word analogies ("a is to a* as b is to ?") answered with 3CosAdd and
//! 3CosMul over unit-normalized rows.

use std::path::Path;

use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::eval::{file_stem, read_text};
use crate::io::Embeddings;

/// Denominator offset of 3CosMul.
pub const COSMUL_EPSILON: f64 = 1e-3;

/// Google-style column order: `a a_star b expected`.
pub const DEFAULT_COLUMNS: [usize; 4] = [0, 1, 2, 3];

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct AnalogyQuestion {
    pub a: String,
    pub a_star: String,
    pub b: String,
    pub expected: String,
}

#[derive(Clone, Debug, PartialEq)]
pub struct AnalogyResult {
    pub accuracy_add: f64,
    pub accuracy_mul: f64,
    pub n_used: usize,
    pub n_skipped: usize,
}

impl AnalogyResult {
    pub fn coverage(&self) -> f64 {
        self.n_used as f64 / (self.n_used + self.n_skipped) as f64
    }
}

/// Parse question lines. `columns` gives the field index of `a`, `a_star`,
/// `b` and `expected`; lines starting with `:` are section headers.
pub fn parse_questions(
    text: &str,
    name: &str,
    columns: [usize; 4],
) -> Result<Vec<AnalogyQuestion>> {
    let needed = columns.iter().max().unwrap() + 1;
    let mut questions = Vec::new();
    for (idx, line) in text.lines().enumerate() {
        let line = line.trim();
        if line.is_empty() || line.starts_with(':') || line.starts_with('#') {
            continue;
        }
        let fields: Vec<&str> = line.split_whitespace().collect();
        if fields.len() < needed {
            return Err(Error::parse(
                name,
                idx + 1,
                format!("expected at least {needed} fields, found {}", fields.len()),
            ));
        }
        let get = |c: usize| fields[columns[c]].to_lowercase();
        questions.push(AnalogyQuestion {
            a: get(0),
            a_star: get(1),
            b: get(2),
            expected: get(3),
        });
    }
    if questions.is_empty() {
        return Err(Error::parse(name, 0, "no analogy questions"));
    }
    Ok(questions)
}

pub fn load_questions(
    path: impl AsRef<Path>,
    columns: [usize; 4],
) -> Result<(String, Vec<AnalogyQuestion>)> {
    let path = path.as_ref();
    let text = read_text(path)?;
    let questions = parse_questions(&text, &path.display().to_string(), columns)?;
    Ok((file_stem(path), questions))
}

/// Selected word and its objective value.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Answer {
    pub id: usize,
    pub score: f64,
}

/// Unit-normalized copy of an embedding table, built once and shared by
/// all questions.
pub struct AnalogySolver<'a> {
    emb: &'a Embeddings,
    unit: Vec<f64>,
    d: usize,
    candidates: usize,
}

impl<'a> AnalogySolver<'a> {
    pub fn new(emb: &'a Embeddings) -> Self {
        let d = emb.dim();
        let mut unit: Vec<f64> = emb.matrix().as_slice().iter().map(|&v| v as f64).collect();
        for row in unit.chunks_exact_mut(d) {
            let norm = row.iter().map(|v| v * v).sum::<f64>().sqrt();
            if norm > 0.0 {
                row.iter_mut().for_each(|v| *v /= norm);
            }
        }
        AnalogySolver {
            emb,
            unit,
            d,
            candidates: emb.len(),
        }
    }

    /// Only consider the first `k` rows as answers.
    pub fn with_max_vocab(mut self, k: usize) -> Self {
        self.candidates = k.min(self.emb.len());
        self
    }

    pub fn word(&self, id: usize) -> &str {
        &self.emb.words()[id]
    }

    fn unit_row(&self, id: usize) -> &[f64] {
        &self.unit[id * self.d..(id + 1) * self.d]
    }

    fn ids(&self, a: &str, a_star: &str, b: &str) -> Option<[usize; 3]> {
        Some([self.emb.id(a)?, self.emb.id(a_star)?, self.emb.id(b)?])
    }

    /// Both answers from a single sweep over the candidates, or `None` if
    /// an input word is out of vocabulary.
    pub fn answer_both(&self, a: &str, a_star: &str, b: &str) -> Option<(Answer, Answer)> {
        let ids = self.ids(a, a_star, b)?;
        let [va, vs, vb] = ids.map(|id| self.unit_row(id));
        let mut best_add: Option<Answer> = None;
        let mut best_mul: Option<Answer> = None;
        for id in 0..self.candidates {
            if ids.contains(&id) {
                continue;
            }
            let w = self.unit_row(id);
            let (mut ca, mut cs, mut cb) = (0.0, 0.0, 0.0);
            for k in 0..self.d {
                ca += w[k] * va[k];
                cs += w[k] * vs[k];
                cb += w[k] * vb[k];
            }
            let add = cs - ca + cb;
            let mul = cosmul(ca, cs, cb);
            // Strict comparison keeps the lowest id on ties.
            if best_add.is_none_or(|best| add > best.score) {
                best_add = Some(Answer { id, score: add });
            }
            if best_mul.is_none_or(|best| mul > best.score) {
                best_mul = Some(Answer { id, score: mul });
            }
        }
        Some((best_add?, best_mul?))
    }

    /// argmax of `cos(w, a*) - cos(w, a) + cos(w, b)` over candidates other
    /// than the three inputs.
    pub fn answer_3cosadd(&self, a: &str, a_star: &str, b: &str) -> Option<Answer> {
        self.answer_both(a, a_star, b).map(|(add, _)| add)
    }

    /// argmax of `c(w, a*)·c(w, b) / (c(w, a) + ε)` with `c = (cos + 1) / 2`.
    pub fn answer_3cosmul(&self, a: &str, a_star: &str, b: &str) -> Option<Answer> {
        self.answer_both(a, a_star, b).map(|(_, mul)| mul)
    }
}

#[inline]
fn cosmul(cos_a: f64, cos_a_star: f64, cos_b: f64) -> f64 {
    let shift = |c: f64| (c + 1.0) / 2.0;
    shift(cos_a_star) * shift(cos_b) / (shift(cos_a) + COSMUL_EPSILON)
}

/// Accuracy of both selection rules; questions with any out-of-vocabulary
/// word are skipped.
pub fn evaluate_analogy(
    solver: &AnalogySolver<'_>,
    questions: &[AnalogyQuestion],
) -> Result<AnalogyResult> {
    let outcomes: Vec<Option<(bool, bool)>> = questions
        .par_iter()
        .map(|q| {
            solver.emb.id(&q.expected)?;
            let (add, mul) = solver.answer_both(&q.a, &q.a_star, &q.b)?;
            Some((
                solver.word(add.id) == q.expected,
                solver.word(mul.id) == q.expected,
            ))
        })
        .collect();

    let used: Vec<(bool, bool)> = outcomes.iter().flatten().copied().collect();
    if used.is_empty() {
        return Err(Error::InsufficientData(format!(
            "none of {} analogy questions is fully in vocabulary",
            questions.len()
        )));
    }
    let n = used.len() as f64;
    Ok(AnalogyResult {
        accuracy_add: used.iter().filter(|(add, _)| *add).count() as f64 / n,
        accuracy_mul: used.iter().filter(|(_, mul)| *mul).count() as f64 / n,
        n_used: used.len(),
        n_skipped: questions.len() - used.len(),
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::EmbeddingMatrix;

    fn embeddings<const D: usize>(words: &[&str], rows: &[[f32; D]]) -> Embeddings {
        let data = rows.iter().flatten().copied().collect();
        Embeddings::new(
            words.iter().map(|w| w.to_string()).collect(),
            EmbeddingMatrix::from_vec(rows.len(), D, data).unwrap(),
        )
        .unwrap()
    }

    fn planted() -> Embeddings {
        // king - man + woman = queen exactly; distractors are nearly
        // orthogonal to all question words.
        embeddings(
            &["man", "woman", "king", "queen", "apple", "stone"],
            &[
                [1.0, 0.0, 0.0, 0.0, 0.0],
                [1.0, 1.0, 0.0, 0.0, 0.0],
                [1.0, 0.0, 1.0, 0.0, 0.0],
                [1.0, 1.0, 1.0, 0.0, 0.0],
                [0.01, 0.0, 0.0, 1.0, 0.0],
                [0.0, 0.02, 0.0, 0.0, 1.0],
            ],
        )
    }

    #[test]
    fn planted_answer_is_found_by_both_rules() {
        let emb = planted();
        let solver = AnalogySolver::new(&emb);
        let add = solver.answer_3cosadd("man", "king", "woman").unwrap();
        let mul = solver.answer_3cosmul("man", "king", "woman").unwrap();
        assert_eq!(solver.word(add.id), "queen");
        assert_eq!(solver.word(mul.id), "queen");
    }

    #[test]
    fn oov_inputs_signal_skip() {
        let emb = planted();
        let solver = AnalogySolver::new(&emb);
        assert!(solver.answer_3cosadd("man", "king", "girl").is_none());
    }

    #[test]
    fn equal_scores_pick_lowest_id() {
        let emb = embeddings(
            &["a", "b", "c", "p", "q", "r"],
            &[
                [1.0, 0.0, 0.0],
                [1.0, 0.0, 0.0],
                [1.0, 0.0, 0.0],
                [0.0, 1.0, 0.0],
                [0.0, 1.0, 0.0],
                [0.0, 1.0, 0.0],
            ],
        );
        let solver = AnalogySolver::new(&emb);
        assert_eq!(solver.answer_3cosadd("a", "b", "c").unwrap().id, 3);
        assert_eq!(solver.answer_3cosmul("a", "b", "c").unwrap().id, 3);
    }

    #[test]
    fn candidate_truncation() {
        let emb = planted();
        let solver = AnalogySolver::new(&emb).with_max_vocab(5);
        let add = solver.answer_3cosadd("king", "man", "queen").unwrap();
        assert!(add.id < 5);
    }

    #[test]
    fn evaluation_counts_and_errors() {
        let emb = planted();
        let solver = AnalogySolver::new(&emb);
        let qs = parse_questions(
            ": family\nman king woman queen\nman woman king queen\nman king boy girl\n",
            "t",
            DEFAULT_COLUMNS,
        )
        .unwrap();
        let res = evaluate_analogy(&solver, &qs).unwrap();
        assert_eq!((res.n_used, res.n_skipped), (2, 1));
        assert_eq!(res.accuracy_add, 1.0);
        assert_eq!(res.accuracy_mul, 1.0);

        let oov = parse_questions("x y z w\n", "t", DEFAULT_COLUMNS).unwrap();
        assert!(evaluate_analogy(&solver, &oov).is_err());
    }

    #[test]
    fn column_mapping() {
        let qs =
            parse_questions("good better JJ_JJR rough rougher\n", "msr", [0, 1, 3, 4]).unwrap();
        assert_eq!(qs[0].b, "rough");
        assert_eq!(qs[0].expected, "rougher");
        assert!(parse_questions("a b c\n", "t", DEFAULT_COLUMNS).is_err());
    }
}
