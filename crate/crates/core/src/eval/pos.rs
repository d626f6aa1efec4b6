//! Next-word part-of-speech probe.
//!
//! A softmax regression reads the (frozen) embedding of the word at
//! position `t` and predicts the tag of the word at `t + 1`. Comparing the
//! probe accuracy on whole vectors and on each half shows how much
//! syntactic information each part carries.

use std::collections::hash_map::DefaultHasher;
use std::collections::BTreeSet;
use std::hash::{Hash, Hasher};
use std::path::Path;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};
use crate::eval::read_text;
use crate::io::{Embeddings, Part};
use crate::model::SignSignature;

/// Sentences of `(word, tag)` tokens.
#[derive(Clone, Debug, PartialEq)]
pub struct TaggedCorpus {
    pub sentences: Vec<Vec<(String, String)>>,
    /// Sorted tag inventory; a tag's id is its position here.
    pub tagset: Vec<String>,
}

impl TaggedCorpus {
    /// One sentence per line, tokens `word_TAG` separated by spaces. The
    /// last underscore splits word from tag. Words are lowercased.
    pub fn parse(text: &str, name: &str) -> Result<Self> {
        let mut sentences = Vec::new();
        let mut tags = BTreeSet::new();
        for (idx, line) in text.lines().enumerate() {
            if line.trim().is_empty() {
                continue;
            }
            let mut sentence = Vec::new();
            for token in line.split_whitespace() {
                let (word, tag) = token
                    .rsplit_once('_')
                    .filter(|(w, t)| !w.is_empty() && !t.is_empty())
                    .ok_or_else(|| {
                        Error::parse(name, idx + 1, format!("token '{token}' is not word_TAG"))
                    })?;
                tags.insert(tag.to_owned());
                sentence.push((word.to_lowercase(), tag.to_owned()));
            }
            sentences.push(sentence);
        }
        if sentences.is_empty() {
            return Err(Error::parse(name, 0, "no tagged sentences"));
        }
        Ok(TaggedCorpus {
            sentences,
            tagset: tags.into_iter().collect(),
        })
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        Self::parse(&read_text(path)?, &path.display().to_string())
    }

    pub fn tag_id(&self, tag: &str) -> Option<usize> {
        self.tagset.binary_search_by(|t| t.as_str().cmp(tag)).ok()
    }

    /// Shuffle sentences with `seed` and cut after `train_frac` of them.
    /// Both halves keep the full tag inventory.
    pub fn split(&self, train_frac: f64, seed: u64) -> (TaggedCorpus, TaggedCorpus) {
        let mut order: Vec<usize> = (0..self.sentences.len()).collect();
        order.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));
        let cut = ((self.sentences.len() as f64) * train_frac).round() as usize;
        let cut = cut.min(self.sentences.len());
        let take = |ids: &[usize]| TaggedCorpus {
            sentences: ids.iter().map(|&i| self.sentences[i].clone()).collect(),
            tagset: self.tagset.clone(),
        };
        (take(&order[..cut]), take(&order[cut..]))
    }

    fn fingerprint(&self) -> u64 {
        let mut h = DefaultHasher::new();
        self.sentences.hash(&mut h);
        self.tagset.hash(&mut h);
        h.finish()
    }
}

/// Dense probe examples: `features` is row-major `len × dim`.
#[derive(Clone, Debug, PartialEq)]
pub struct ProbeData {
    pub features: Vec<f64>,
    pub labels: Vec<usize>,
    pub dim: usize,
    pub num_tags: usize,
}

impl ProbeData {
    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    pub fn example(&self, i: usize) -> &[f64] {
        &self.features[i * self.dim..(i + 1) * self.dim]
    }
}

/// Pair the `part` slice of each in-vocabulary word with the tag of the
/// following token in the same sentence.
pub fn build_probe_dataset(
    tagged: &TaggedCorpus,
    emb: &Embeddings,
    part: Part,
    sig: Option<&SignSignature>,
) -> Result<ProbeData> {
    let cols = part.columns(emb.dim(), sig)?;
    let mut features = Vec::new();
    let mut labels = Vec::new();
    for sentence in &tagged.sentences {
        for pair in sentence.windows(2) {
            let (word, _) = &pair[0];
            let (_, next_tag) = &pair[1];
            let Some(v) = emb.vector(word) else { continue };
            let label = tagged.tag_id(next_tag).ok_or_else(|| {
                Error::Config(format!("tag '{next_tag}' missing from tag inventory"))
            })?;
            features.extend(v[cols.clone()].iter().map(|&x| x as f64));
            labels.push(label);
        }
    }
    if labels.is_empty() {
        return Err(Error::InsufficientData(
            "no probe examples: every current word is out of vocabulary".into(),
        ));
    }
    Ok(ProbeData {
        features,
        labels,
        dim: cols.len(),
        num_tags: tagged.tagset.len(),
    })
}

#[derive(Clone, Debug, PartialEq)]
pub struct ProbeConfig {
    pub epochs: usize,
    pub lr: f64,
    pub batch: usize,
    pub l2: f64,
    pub seed: u64,
    /// Fraction of sentences used for training.
    pub train_frac: f64,
}

impl Default for ProbeConfig {
    fn default() -> Self {
        ProbeConfig {
            epochs: 30,
            lr: 0.05,
            batch: 256,
            l2: 1e-4,
            seed: 1,
            train_frac: 0.8,
        }
    }
}

impl ProbeConfig {
    pub fn validate(&self) -> Result<()> {
        if self.epochs == 0 || self.batch == 0 || !(self.lr > 0.0) || !(self.l2 >= 0.0) {
            return Err(Error::Config(
                "probe needs epochs, batch and lr > 0 and l2 >= 0".into(),
            ));
        }
        if !(self.train_frac > 0.0 && self.train_frac < 1.0) {
            return Err(Error::Config(format!(
                "train fraction must lie in (0, 1), got {}",
                self.train_frac
            )));
        }
        Ok(())
    }

    pub fn fingerprint(&self) -> u64 {
        let mut h = DefaultHasher::new();
        (self.epochs, self.batch, self.seed).hash(&mut h);
        for v in [self.lr, self.l2, self.train_frac] {
            v.to_bits().hash(&mut h);
        }
        h.finish()
    }
}

/// `softmax(A x + b)` classifier; `weights` is row-major `num_tags × dim`.
#[derive(Clone, Debug, PartialEq)]
pub struct SoftmaxRegressor {
    pub weights: Vec<f64>,
    pub bias: Vec<f64>,
    pub num_tags: usize,
    pub dim: usize,
}

impl SoftmaxRegressor {
    pub fn zeros(num_tags: usize, dim: usize) -> Self {
        SoftmaxRegressor {
            weights: vec![0.0; num_tags * dim],
            bias: vec![0.0; num_tags],
            num_tags,
            dim,
        }
    }

    pub fn logits(&self, x: &[f64]) -> Vec<f64> {
        self.weights
            .chunks_exact(self.dim)
            .zip(&self.bias)
            .map(|(row, b)| row.iter().zip(x).map(|(w, v)| w * v).sum::<f64>() + b)
            .collect()
    }

    /// Class probabilities.
    pub fn predict(&self, x: &[f64]) -> Vec<f64> {
        let mut p = self.logits(x);
        softmax_in_place(&mut p);
        p
    }

    /// Most probable tag id; the lowest id wins ties.
    pub fn predict_label(&self, x: &[f64]) -> usize {
        argmax(&self.logits(x))
    }

    /// Mean cross-entropy plus `l2·‖A‖²/2`.
    pub fn objective(&self, data: &ProbeData, l2: f64) -> f64 {
        let ce: f64 = (0..data.len())
            .map(|i| {
                let z = self.logits(data.example(i));
                log_sum_exp(&z) - z[data.labels[i]]
            })
            .sum();
        ce / data.len() as f64 + 0.5 * l2 * self.weights.iter().map(|w| w * w).sum::<f64>()
    }

    /// Gradient of [`Self::objective`] restricted to the examples `idx`,
    /// as `(dA, db)`.
    pub fn gradient(&self, data: &ProbeData, idx: &[usize], l2: f64) -> (Vec<f64>, Vec<f64>) {
        let mut ga = vec![0.0; self.weights.len()];
        let mut gb = vec![0.0; self.num_tags];
        for &i in idx {
            let x = data.example(i);
            let mut p = self.predict(x);
            p[data.labels[i]] -= 1.0;
            for (t, pt) in p.iter().enumerate() {
                gb[t] += pt;
                for (g, v) in ga[t * self.dim..(t + 1) * self.dim].iter_mut().zip(x) {
                    *g += pt * v;
                }
            }
        }
        let scale = 1.0 / idx.len() as f64;
        for (g, w) in ga.iter_mut().zip(&self.weights) {
            *g = *g * scale + l2 * w;
        }
        gb.iter_mut().for_each(|g| *g *= scale);
        (ga, gb)
    }
}

fn log_sum_exp(z: &[f64]) -> f64 {
    let max = z.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    max + z.iter().map(|v| (v - max).exp()).sum::<f64>().ln()
}

fn softmax_in_place(z: &mut [f64]) {
    let max = z.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let mut sum = 0.0;
    for v in z.iter_mut() {
        *v = (*v - max).exp();
        sum += *v;
    }
    z.iter_mut().for_each(|v| *v /= sum);
}

fn argmax(z: &[f64]) -> usize {
    let mut best = 0;
    for (i, v) in z.iter().enumerate().skip(1) {
        if *v > z[best] {
            best = i;
        }
    }
    best
}

/// Mini-batch gradient descent from a zero initialization.
pub fn train_softmax(data: &ProbeData, cfg: &ProbeConfig) -> Result<SoftmaxRegressor> {
    train_softmax_with_observer(data, cfg, |_, _| {})
}

pub fn train_softmax_with_observer<O>(
    data: &ProbeData,
    cfg: &ProbeConfig,
    mut observer: O,
) -> Result<SoftmaxRegressor>
where
    O: FnMut(usize, &SoftmaxRegressor),
{
    cfg.validate()?;
    let distinct: BTreeSet<usize> = data.labels.iter().copied().collect();
    if distinct.len() < 2 {
        return Err(Error::InsufficientData(
            "softmax probe needs at least two distinct labels".into(),
        ));
    }

    let mut model = SoftmaxRegressor::zeros(data.num_tags, data.dim);
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut order: Vec<usize> = (0..data.len()).collect();
    for epoch in 0..cfg.epochs {
        order.shuffle(&mut rng);
        for batch in order.chunks(cfg.batch) {
            let (ga, gb) = model.gradient(data, batch, cfg.l2);
            for (w, g) in model.weights.iter_mut().zip(&ga) {
                *w -= cfg.lr * g;
            }
            for (b, g) in model.bias.iter_mut().zip(&gb) {
                *b -= cfg.lr * g;
            }
        }
        if model
            .weights
            .iter()
            .chain(&model.bias)
            .any(|v| !v.is_finite())
        {
            return Err(Error::Config(format!(
                "probe diverged in epoch {}; lower the learning rate",
                epoch + 1
            )));
        }
        observer(epoch, &model);
    }
    Ok(model)
}

/// Fraction of examples whose predicted tag equals the gold tag.
pub fn evaluate_pos(model: &SoftmaxRegressor, test: &ProbeData) -> Result<f64> {
    if test.is_empty() {
        return Err(Error::InsufficientData("empty probe test set".into()));
    }
    let correct = (0..test.len())
        .filter(|&i| model.predict_label(test.example(i)) == test.labels[i])
        .count();
    Ok(correct as f64 / test.len() as f64)
}

/// `counts[gold][predicted]`.
pub fn confusion(model: &SoftmaxRegressor, test: &ProbeData) -> Vec<Vec<u64>> {
    let mut counts = vec![vec![0u64; model.num_tags]; model.num_tags];
    for i in 0..test.len() {
        counts[test.labels[i]][model.predict_label(test.example(i))] += 1;
    }
    counts
}

#[derive(Clone, Debug)]
pub struct ProbeReport {
    pub part: Part,
    pub accuracy: f64,
    pub n_train: usize,
    pub n_test: usize,
    /// Test positions with a following token, including skipped ones.
    pub test_positions: usize,
    pub confusion: Vec<Vec<u64>>,
    /// Hash of the probe hyperparameters.
    pub config_fingerprint: u64,
    /// Hash of the train/test sentence split.
    pub split_fingerprint: u64,
}

/// Train and score one probe per part on a shared sentence split.
pub fn run_probe(
    tagged: &TaggedCorpus,
    emb: &Embeddings,
    parts: &[Part],
    sig: Option<&SignSignature>,
    cfg: &ProbeConfig,
) -> Vec<(Part, Result<ProbeReport>)> {
    if let Err(e) = cfg.validate() {
        let msg = e.to_string();
        return parts
            .iter()
            .map(|&p| (p, Err(Error::Config(msg.clone()))))
            .collect();
    }
    let (train, test) = tagged.split(cfg.train_frac, cfg.seed);
    let split_fingerprint = {
        let mut h = DefaultHasher::new();
        (train.fingerprint(), test.fingerprint()).hash(&mut h);
        h.finish()
    };
    parts
        .iter()
        .map(|&part| {
            let report = (|| {
                let train_data = build_probe_dataset(&train, emb, part, sig)?;
                let test_data = build_probe_dataset(&test, emb, part, sig)?;
                let model = train_softmax(&train_data, cfg)?;
                Ok(ProbeReport {
                    part,
                    accuracy: evaluate_pos(&model, &test_data)?,
                    n_train: train_data.len(),
                    n_test: test_data.len(),
                    test_positions: test
                        .sentences
                        .iter()
                        .map(|s| s.len().saturating_sub(1))
                        .sum(),
                    confusion: confusion(&model, &test_data),
                    config_fingerprint: cfg.fingerprint(),
                    split_fingerprint,
                })
            })();
            (part, report)
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use rand_distr::{Distribution, Normal};

    use super::*;
    use crate::model::EmbeddingMatrix;

    fn toy_embeddings() -> Embeddings {
        let words = ["the", "dog", "barks"].map(String::from).to_vec();
        let data = vec![1.0, 0.0, 0.5, -1.0, 0.0, 1.0, 2.0, 0.5, 0.3, 0.3, 0.3, 0.3];
        Embeddings::new(words, EmbeddingMatrix::from_vec(3, 4, data).unwrap()).unwrap()
    }

    #[test]
    fn parse_uses_last_underscore() {
        let tc = TaggedCorpus::parse("The_DET new_york_ADJ city_NOUN ._.\n\nHi_X\n", "t").unwrap();
        assert_eq!(tc.sentences.len(), 2);
        assert_eq!(tc.sentences[0][1], ("new_york".into(), "ADJ".into()));
        assert_eq!(tc.sentences[0][0].0, "the");
        assert_eq!(tc.tagset, vec![".", "ADJ", "DET", "NOUN", "X"]);
        assert!(TaggedCorpus::parse("word\n", "t").is_err());
        assert!(TaggedCorpus::parse("word_\n", "t").is_err());
    }

    #[test]
    fn next_word_examples() {
        let tc = TaggedCorpus::parse("the_DET dog_NOUN barks_VERB\nalone_ADV\n", "t").unwrap();
        let emb = toy_embeddings();
        let data = build_probe_dataset(&tc, &emb, Part::Whole, None).unwrap();
        assert_eq!(data.len(), 2);
        assert_eq!(
            data.labels,
            vec![tc.tag_id("NOUN").unwrap(), tc.tag_id("VERB").unwrap()]
        );
        assert_eq!(data.example(0), &[1.0, 0.0, 0.5, -1.0]);

        let sig = SignSignature::half(4).unwrap();
        let y = build_probe_dataset(&tc, &emb, Part::Y, Some(&sig)).unwrap();
        assert_eq!(y.dim, 2);
        assert_eq!(y.example(1), &[2.0, 0.5]);
    }

    #[test]
    fn oov_current_words_are_dropped() {
        // cat is OOV as a current word; the OOV word "wolf" still supplies a tag.
        let tc = TaggedCorpus::parse(
            "the_DET cat_NOUN barks_VERB\nthe_DET wolf_NOUN\ndog_NOUN barks_VERB the_DET\n",
            "t",
        )
        .unwrap();
        let emb = toy_embeddings();
        let data = build_probe_dataset(&tc, &emb, Part::Whole, None).unwrap();
        // the->NOUN, (cat skipped), the->NOUN, dog->VERB, barks->DET
        assert_eq!(data.len(), 4);
    }

    #[test]
    fn no_examples_is_an_error() {
        let tc = TaggedCorpus::parse("solo_X\nzz_X yy_X\n", "t").unwrap();
        assert!(build_probe_dataset(&tc, &toy_embeddings(), Part::Whole, None).is_err());
    }

    #[test]
    fn zero_model_predicts_uniformly() {
        let model = SoftmaxRegressor::zeros(4, 3);
        for p in model.predict(&[1.0, -2.0, 3.0]) {
            assert!((p - 0.25).abs() < 1e-15);
        }
        assert_eq!(model.predict_label(&[1.0, 2.0, 3.0]), 0);
    }

    fn blobs(n: usize, seed: u64) -> ProbeData {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let noise = Normal::new(0.0, 0.5).unwrap();
        let mut features = Vec::new();
        let mut labels = Vec::new();
        for i in 0..n {
            let label = i % 2;
            let center = if label == 0 { [-2.0, -2.0] } else { [2.0, 2.0] };
            for c in center {
                features.push(c + noise.sample(&mut rng));
            }
            labels.push(label);
        }
        ProbeData {
            features,
            labels,
            dim: 2,
            num_tags: 2,
        }
    }

    #[test]
    fn separable_blobs_are_fit_perfectly() {
        let data = blobs(200, 5);
        let model = train_softmax(&data, &ProbeConfig::default()).unwrap();
        assert_eq!(evaluate_pos(&model, &data).unwrap(), 1.0);
    }

    #[test]
    fn objective_does_not_increase_across_epochs() {
        let data = blobs(200, 6);
        let mut history = Vec::new();
        train_softmax_with_observer(&data, &ProbeConfig::default(), |_, m| {
            history.push(m.objective(&data, ProbeConfig::default().l2));
        })
        .unwrap();
        for w in history.windows(2) {
            assert!(w[1] <= w[0], "{history:?}");
        }
    }

    #[test]
    fn single_label_is_rejected() {
        let mut data = blobs(10, 1);
        data.labels.iter_mut().for_each(|l| *l = 1);
        assert!(train_softmax(&data, &ProbeConfig::default()).is_err());
    }

    #[test]
    fn majority_predictor_accuracy() {
        let mut model = SoftmaxRegressor::zeros(3, 1);
        model.bias[2] = 1.0;
        let labels = [2, 2, 2, 2, 2, 2, 2, 0, 1, 0];
        let test = ProbeData {
            features: vec![0.5; labels.len()],
            labels: labels.to_vec(),
            dim: 1,
            num_tags: 3,
        };
        assert!((evaluate_pos(&model, &test).unwrap() - 0.7).abs() < 1e-12);
        let cm = confusion(&model, &test);
        assert_eq!(cm[2][2], 7);
        assert_eq!(cm[0][2], 2);
    }

    #[test]
    fn split_is_seeded_and_disjoint() {
        let text: String = (0..50).map(|i| format!("w{i}_NOUN x_VERB\n")).collect();
        let tc = TaggedCorpus::parse(&text, "t").unwrap();
        let (a, b) = tc.split(0.8, 3);
        let (a2, _) = tc.split(0.8, 3);
        assert_eq!(a, a2);
        assert_eq!((a.sentences.len(), b.sentences.len()), (40, 10));
        for s in &b.sentences {
            assert!(!a.sentences.contains(s));
        }
    }
}
