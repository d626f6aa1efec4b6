//! Token streams, vocabulary construction, frequent-word subsampling and
//! the negative-sampling noise distribution.

use std::collections::HashMap;
use std::fs;
use std::io::{BufWriter, Write};
use std::path::Path;

use rand::Rng;

use crate::error::{Error, Result};

/// Exponent applied to unigram probabilities for the noise distribution.
pub const NOISE_EXPONENT: f64 = 0.75;

/// Tokens are windowed in chunks of this many retained ids. Context windows
/// never straddle two chunks.
const CHUNK_LEN: usize = 10_000;

/// Word/id mapping with corpus counts.
///
/// Words are ordered by descending count; equal counts keep the order in
/// which the words first appeared in the token stream.
#[derive(Clone, Debug)]
pub struct Vocab {
    words: Vec<String>,
    ids: HashMap<String, usize>,
    counts: Vec<u64>,
    total_tokens: u64,
    unigram_probs: Vec<f64>,
}

/// Count `tokens` and keep every word that occurs at least `min_count` times.
pub fn build_vocab<I, S>(tokens: I, min_count: u64) -> Result<Vocab>
where
    I: IntoIterator<Item = S>,
    S: AsRef<str>,
{
    if min_count == 0 {
        return Err(Error::Config("min_count must be at least 1".into()));
    }

    // word -> (count, first occurrence)
    let mut seen: HashMap<String, (u64, usize)> = HashMap::new();
    for (pos, token) in tokens.into_iter().enumerate() {
        let token = token.as_ref();
        match seen.get_mut(token) {
            Some(entry) => entry.0 += 1,
            None => {
                seen.insert(token.to_owned(), (1, pos));
            }
        }
    }

    let mut entries: Vec<_> = seen
        .into_iter()
        .filter(|(_, (count, _))| *count >= min_count)
        .collect();
    entries.sort_by(|(_, (c1, p1)), (_, (c2, p2))| c2.cmp(c1).then(p1.cmp(p2)));

    if entries.is_empty() {
        return Err(Error::EmptyVocabulary { min_count });
    }

    let (words, counts): (Vec<String>, Vec<u64>) =
        entries.into_iter().map(|(w, (c, _))| (w, c)).unzip();
    Ok(Vocab::from_counts(words, counts))
}

impl Vocab {
    fn from_counts(words: Vec<String>, counts: Vec<u64>) -> Self {
        let total_tokens: u64 = counts.iter().sum();
        let unigram_probs = counts
            .iter()
            .map(|&c| c as f64 / total_tokens as f64)
            .collect();
        let ids = words
            .iter()
            .enumerate()
            .map(|(id, w)| (w.clone(), id))
            .collect();
        Vocab {
            words,
            ids,
            counts,
            total_tokens,
            unigram_probs,
        }
    }

    pub fn len(&self) -> usize {
        self.words.len()
    }

    pub fn is_empty(&self) -> bool {
        self.words.is_empty()
    }

    pub fn id(&self, word: &str) -> Option<usize> {
        self.ids.get(word).copied()
    }

    pub fn word(&self, id: usize) -> Option<&str> {
        self.words.get(id).map(String::as_str)
    }

    pub fn words(&self) -> &[String] {
        &self.words
    }

    pub fn counts(&self) -> &[u64] {
        &self.counts
    }

    /// Number of corpus tokens that belong to retained words.
    pub fn total_tokens(&self) -> u64 {
        self.total_tokens
    }

    pub fn unigram_probs(&self) -> &[f64] {
        &self.unigram_probs
    }

    /// Map tokens to ids, dropping out-of-vocabulary tokens.
    pub fn encode<I, S>(&self, tokens: I) -> Vec<u32>
    where
        I: IntoIterator<Item = S>,
        S: AsRef<str>,
    {
        tokens
            .into_iter()
            .filter_map(|t| self.id(t.as_ref()))
            .map(|id| id as u32)
            .collect()
    }

    /// Per-word probability of surviving frequent-word subsampling.
    pub fn keep_probabilities(&self, threshold: f64) -> Vec<f64> {
        self.unigram_probs
            .iter()
            .map(|&f| keep_probability(f, threshold))
            .collect()
    }

    /// Write `word<TAB>count` lines in id order.
    pub fn write_tsv(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        let file = fs::File::create(path).map_err(|e| Error::io(path, e))?;
        let mut out = BufWriter::new(file);
        for (word, count) in self.words.iter().zip(&self.counts) {
            writeln!(out, "{}\t{}", word, count).map_err(|e| Error::io(path, e))?;
        }
        out.flush().map_err(|e| Error::io(path, e))
    }
}

/// Probability of keeping a token whose word has relative frequency
/// `word_freq`, given the subsampling threshold. A threshold of zero (or
/// less) disables subsampling.
pub fn keep_probability(word_freq: f64, threshold: f64) -> f64 {
    if threshold <= 0.0 {
        return 1.0;
    }
    let raw = ((word_freq / threshold).sqrt() + 1.0) * (threshold / word_freq);
    raw.min(1.0)
}

/// Smoothed unigram distribution `q_i ∝ p_i^0.75`, sampled with Vose's
/// alias method.
#[derive(Clone, Debug)]
pub struct NoiseDistribution {
    probs: Vec<f64>,
    threshold: Vec<f64>,
    alias: Vec<u32>,
}

impl NoiseDistribution {
    pub fn new(vocab: &Vocab) -> Self {
        Self::with_exponent(vocab, NOISE_EXPONENT)
    }

    pub fn with_exponent(vocab: &Vocab, exponent: f64) -> Self {
        let weights: Vec<f64> = vocab
            .counts()
            .iter()
            .map(|&c| (c as f64).powf(exponent))
            .collect();
        Self::from_weights(&weights).expect("vocabulary counts are positive")
    }

    /// Build from arbitrary nonnegative weights (at least one positive).
    pub fn from_weights(weights: &[f64]) -> Result<Self> {
        let total: f64 = weights.iter().sum();
        if weights.is_empty() || !(total > 0.0) || weights.iter().any(|w| !(*w >= 0.0)) {
            return Err(Error::Config(
                "noise weights must be nonnegative with a positive sum".into(),
            ));
        }
        let n = weights.len();
        let probs: Vec<f64> = weights.iter().map(|w| w / total).collect();

        let mut threshold: Vec<f64> = probs.iter().map(|p| p * n as f64).collect();
        let mut alias: Vec<u32> = (0..n as u32).collect();
        let (mut small, mut large): (Vec<usize>, Vec<usize>) =
            (0..n).partition(|&i| threshold[i] < 1.0);

        while let (Some(&s), Some(&l)) = (small.last(), large.last()) {
            small.pop();
            alias[s] = l as u32;
            threshold[l] -= 1.0 - threshold[s];
            if threshold[l] < 1.0 {
                large.pop();
                small.push(l);
            }
        }
        // Whatever is left is 1 up to rounding.
        for i in small.into_iter().chain(large) {
            threshold[i] = 1.0;
        }

        Ok(NoiseDistribution {
            probs,
            threshold,
            alias,
        })
    }

    pub fn len(&self) -> usize {
        self.probs.len()
    }

    pub fn is_empty(&self) -> bool {
        self.probs.is_empty()
    }

    /// Normalized noise probabilities `q`.
    pub fn probs(&self) -> &[f64] {
        &self.probs
    }

    /// Probability mass each outcome receives from the alias table.
    pub fn table_mass(&self) -> Vec<f64> {
        let n = self.len() as f64;
        let mut mass: Vec<f64> = self.threshold.iter().map(|t| t / n).collect();
        for (slot, &a) in self.alias.iter().enumerate() {
            mass[a as usize] += (1.0 - self.threshold[slot]) / n;
        }
        mass
    }

    #[inline]
    pub fn sample<R: Rng + ?Sized>(&self, rng: &mut R) -> usize {
        let slot = rng.random_range(0..self.threshold.len());
        if rng.random::<f64>() < self.threshold[slot] {
            slot
        } else {
            self.alias[slot] as usize
        }
    }
}

/// A vocabulary together with the id-encoded token stream it was built from.
#[derive(Clone, Debug)]
pub struct Corpus {
    pub vocab: Vocab,
    /// Token ids with out-of-vocabulary tokens removed.
    pub ids: Vec<u32>,
}

impl Corpus {
    pub fn from_text(text: &str, min_count: u64) -> Result<Self> {
        let vocab = build_vocab(text.split_whitespace(), min_count)?;
        let ids = vocab.encode(text.split_whitespace());
        Ok(Corpus { vocab, ids })
    }

    pub fn from_file(path: impl AsRef<Path>, min_count: u64) -> Result<Self> {
        let path = path.as_ref();
        let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::from_text(&text, min_count)
    }
}

/// Iterator over `(center, context)` id pairs of a token stream.
///
/// Tokens are first thinned by subsampling (each occurrence survives with
/// its word's keep probability), then every surviving position draws a
/// window radius `b` uniformly from `1..=window` and is paired with all
/// surviving neighbours at distance at most `b`.
pub struct WindowStream<'a, R: Rng + ?Sized> {
    ids: &'a [u32],
    keep: Option<&'a [f64]>,
    window: usize,
    dynamic: bool,
    rng: &'a mut R,
    next_chunk: usize,
    buf: Vec<u32>,
    center: usize,
    cursor: usize,
    hi: usize,
}

impl<'a, R: Rng + ?Sized> WindowStream<'a, R> {
    /// `keep` holds per-word keep probabilities; `None` disables subsampling.
    pub fn new(ids: &'a [u32], keep: Option<&'a [f64]>, window: usize, rng: &'a mut R) -> Self {
        assert!(window >= 1, "window must be at least 1");
        WindowStream {
            ids,
            keep,
            window,
            dynamic: true,
            rng,
            next_chunk: 0,
            buf: Vec::with_capacity(CHUNK_LEN),
            center: 0,
            cursor: 1,
            hi: 0,
        }
    }

    /// Always use the full window instead of drawing a radius per center.
    pub fn fixed_window(mut self) -> Self {
        self.dynamic = false;
        self
    }

    fn fill_chunk(&mut self) -> bool {
        self.buf.clear();
        while self.buf.is_empty() && self.next_chunk < self.ids.len() {
            let end = (self.next_chunk + CHUNK_LEN).min(self.ids.len());
            for &id in &self.ids[self.next_chunk..end] {
                let kept = match self.keep {
                    Some(keep) => {
                        let p = keep[id as usize];
                        p >= 1.0 || self.rng.random::<f64>() < p
                    }
                    None => true,
                };
                if kept {
                    self.buf.push(id);
                }
            }
            self.next_chunk = end;
        }
        !self.buf.is_empty()
    }

    fn start_center(&mut self, center: usize) {
        let radius = if self.dynamic {
            self.rng.random_range(1..=self.window)
        } else {
            self.window
        };
        self.center = center;
        self.cursor = center.saturating_sub(radius);
        self.hi = (center + radius).min(self.buf.len() - 1);
    }
}

impl<R: Rng + ?Sized> Iterator for WindowStream<'_, R> {
    type Item = (usize, usize);

    fn next(&mut self) -> Option<Self::Item> {
        loop {
            if self.cursor == self.center {
                self.cursor += 1;
            }
            if !self.buf.is_empty() && self.cursor <= self.hi {
                let pair = (
                    self.buf[self.center] as usize,
                    self.buf[self.cursor] as usize,
                );
                self.cursor += 1;
                return Some(pair);
            }

            let next_center = if self.buf.is_empty() {
                None
            } else {
                Some(self.center + 1).filter(|&c| c < self.buf.len())
            };
            match next_center {
                Some(c) => self.start_center(c),
                None => {
                    if !self.fill_chunk() {
                        return None;
                    }
                    self.start_center(0);
                }
            }
        }
    }
}

/// Expected number of pairs one pass of [`WindowStream`] produces, ignoring
/// chunk edges.
pub fn expected_pairs(ids: &[u32], keep: Option<&[f64]>, window: usize, dynamic: bool) -> f64 {
    let per_center = if dynamic {
        (window + 1) as f64
    } else {
        2.0 * window as f64
    };
    let kept: f64 = match keep {
        Some(keep) => ids.iter().map(|&id| keep[id as usize].min(1.0)).sum(),
        None => ids.len() as f64,
    };
    kept * per_center
}
