//! SGNS optimization of the tied-weight model.
//!
//! Every observed pair `(j, i)` contributes `log σ(s_ji)` and each sampled
//! noise word `n` contributes `log σ(-s_jn)`, with `s` the context score
//! `w_j·D w_i`. Because there is only one table, both endpoints of every
//! scored pair receive an update.

use std::cell::UnsafeCell;
use std::sync::atomic::{AtomicBool, AtomicU64, Ordering};
use std::time::{Duration, Instant};

use num_traits::Float;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::corpus::{expected_pairs, Corpus, NoiseDistribution, WindowStream};
use crate::error::{Error, Result};
use crate::model::{half_dots, EmbeddingMatrix, SignSignature};

/// Scores are clamped to this magnitude before the logistic function.
pub const SCORE_CLIP: f64 = 30.0;

/// Pairs each worker processes between updates of the shared progress
/// counter.
const FLUSH_EVERY: u64 = 10_000;

const REPORT_EVERY: u64 = 1_000_000;

/// Running loss is estimated from one pair in this many.
const LOSS_SAMPLE_EVERY: u64 = 16;

#[derive(Clone, Debug, PartialEq)]
pub struct TrainConfig {
    pub dim: usize,
    pub window: usize,
    pub negatives: usize,
    pub epochs: usize,
    pub initial_lr: f32,
    pub min_lr: f32,
    /// Subsampling threshold; `0` disables subsampling.
    pub subsample: f64,
    pub min_count: u64,
    pub seed: u64,
    pub threads: usize,
    /// Split index of the sign signature; `None` means `dim / 2`.
    pub split_index: Option<usize>,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            dim: 200,
            window: 5,
            negatives: 5,
            epochs: 5,
            initial_lr: 0.025,
            min_lr: 1e-4,
            subsample: 1e-4,
            min_count: 5,
            seed: 1,
            threads: 1,
            split_index: None,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |msg: String| Err(Error::Config(msg));
        if self.dim < 2 || !self.dim.is_multiple_of(2) {
            return bad(format!("dimension must be even, got {}", self.dim));
        }
        if self.window == 0 || self.negatives == 0 || self.epochs == 0 || self.threads == 0 {
            return bad("window, negatives, epochs and threads must be positive".into());
        }
        if self.min_count == 0 {
            return bad("min_count must be at least 1".into());
        }
        if !(self.initial_lr > 0.0) || !(self.min_lr > 0.0) || self.min_lr > self.initial_lr {
            return bad(format!(
                "learning rates must satisfy 0 < min_lr <= lr, got lr = {}, min_lr = {}",
                self.initial_lr, self.min_lr
            ));
        }
        if !(self.subsample >= 0.0) {
            return bad(format!(
                "subsample threshold must be >= 0, got {}",
                self.subsample
            ));
        }
        self.signature().map(|_| ())
    }

    pub fn signature(&self) -> Result<SignSignature> {
        match self.split_index {
            Some(m) => SignSignature::new(self.dim, m),
            None => SignSignature::half(self.dim),
        }
    }
}

/// Logistic function with the argument clamped to `±SCORE_CLIP`.
#[inline]
pub fn sigmoid<F: Float>(s: F) -> F {
    let clip = F::from(SCORE_CLIP).unwrap();
    let s = s.max(-clip).min(clip);
    F::one() / (F::one() + (-s).exp())
}

/// `log σ(s)` without overflow for any finite `s`.
pub fn log_sigmoid(s: f64) -> f64 {
    if s >= 0.0 {
        -(-s).exp().ln_1p()
    } else {
        s - s.exp().ln_1p()
    }
}

/// Log-likelihood of one observed pair against its noise words:
/// `log σ(s_ji) + Σ_n log σ(-s_jn)`. Training maximizes this, so it is at
/// most zero and its negation is the loss being minimized.
pub fn pair_loss<F: Float>(
    e: &EmbeddingMatrix<F>,
    sig: &SignSignature,
    j: usize,
    i: usize,
    negatives: &[usize],
) -> Result<f64> {
    let mut total = log_sigmoid(e.score(sig, j, i)?.to_f64().unwrap());
    for &n in negatives {
        total += log_sigmoid(-e.score(sig, j, n)?.to_f64().unwrap());
    }
    Ok(total)
}

/// Gradient of [`pair_loss`] with respect to every entry of the table,
/// row-major like the table itself.
pub fn pair_loss_gradient<F: Float>(
    e: &EmbeddingMatrix<F>,
    sig: &SignSignature,
    j: usize,
    i: usize,
    negatives: &[usize],
) -> Result<Vec<F>> {
    let d = e.dim();
    let mut grad = vec![F::zero(); e.rows() * d];
    let terms = std::iter::once((i, true)).chain(negatives.iter().map(|&n| (n, false)));
    for (other, label) in terms {
        let s = e.score(sig, j, other)?;
        // d/ds log σ(s) = 1 - σ(s), d/ds log σ(-s) = -σ(s)
        let coeff = if label {
            F::one() - unclipped_sigmoid(s)
        } else {
            -unclipped_sigmoid(s)
        };
        let (wj, wo) = (e.row(j), e.row(other));
        for k in 0..d {
            let sgn = sig.sign::<F>(k);
            grad[j * d + k] = grad[j * d + k] + coeff * sgn * wo[k];
            grad[other * d + k] = grad[other * d + k] + coeff * sgn * wj[k];
        }
    }
    Ok(grad)
}

fn unclipped_sigmoid<F: Float>(s: F) -> F {
    if s >= F::zero() {
        F::one() / (F::one() + (-s).exp())
    } else {
        let z = s.exp();
        z / (F::one() + z)
    }
}

/// One gradient-ascent step on `log σ(±s_ji)`.
///
/// With `g = label - σ(s_ji)`, row `j` moves by `lr·g·D w_i` and row `i` by
/// `lr·g·D w_j`, both computed from the rows as they were before the step.
/// Returns the score before the update.
pub fn sgd_step<F: Float>(
    e: &mut EmbeddingMatrix<F>,
    sig: &SignSignature,
    j: usize,
    i: usize,
    label: bool,
    lr: F,
) -> Result<F> {
    e.check_id(j)?;
    e.check_id(i)?;
    assert_eq!(sig.dim(), e.dim(), "signature width does not match matrix");
    let d = e.dim();
    Ok(step_rows(
        e.as_mut_slice(),
        d,
        sig.split_index(),
        j,
        i,
        label,
        lr,
    ))
}

#[inline]
fn step_rows<F: Float>(
    data: &mut [F],
    d: usize,
    m: usize,
    j: usize,
    i: usize,
    label: bool,
    lr: F,
) -> F {
    let s = {
        let (xx, yy) = half_dots(&data[j * d..(j + 1) * d], &data[i * d..(i + 1) * d], m);
        xx - yy
    };
    let target = if label { F::one() } else { F::zero() };
    let g = lr * (target - sigmoid(s));
    if g == F::zero() {
        return s;
    }

    if i == j {
        // Both updates land on the same row: w += 2g·D w.
        let row = &mut data[j * d..(j + 1) * d];
        let g2 = g + g;
        for v in &mut row[..m] {
            *v = *v + g2 * *v;
        }
        for v in &mut row[m..] {
            *v = *v - g2 * *v;
        }
        return s;
    }

    let (rj, ri) = two_rows_mut(data, d, j, i);
    let (xj, yj) = rj.split_at_mut(m);
    let (xi, yi) = ri.split_at_mut(m);
    for (a, b) in xj.iter_mut().zip(xi.iter_mut()) {
        let (va, vb) = (*a, *b);
        *a = va + g * vb;
        *b = vb + g * va;
    }
    for (a, b) in yj.iter_mut().zip(yi.iter_mut()) {
        let (va, vb) = (*a, *b);
        *a = va - g * vb;
        *b = vb - g * va;
    }
    s
}

#[inline]
fn two_rows_mut<F>(data: &mut [F], d: usize, a: usize, b: usize) -> (&mut [F], &mut [F]) {
    debug_assert_ne!(a, b);
    if a < b {
        let (lo, hi) = data.split_at_mut(b * d);
        (&mut lo[a * d..(a + 1) * d], &mut hi[..d])
    } else {
        let (lo, hi) = data.split_at_mut(a * d);
        (&mut hi[..d], &mut lo[b * d..(b + 1) * d])
    }
}

/// Linearly decayed learning rate after `done` of `total` expected pairs.
pub fn learning_rate(config: &TrainConfig, done: u64, total: f64) -> f32 {
    let frac = if total > 0.0 {
        (done as f64 / total).min(1.0)
    } else {
        1.0
    };
    let lr = config.initial_lr as f64 - (config.initial_lr - config.min_lr) as f64 * frac;
    (lr as f32).max(config.min_lr)
}

#[derive(Clone, Debug)]
pub struct TrainOutcome {
    pub embeddings: EmbeddingMatrix<f32>,
    pub signature: SignSignature,
    /// Positive pairs processed over all epochs.
    pub pairs: u64,
    pub elapsed: Duration,
}

/// Train with the configured number of epochs.
pub fn train(corpus: &Corpus, config: &TrainConfig) -> Result<TrainOutcome> {
    train_with_observer(corpus, config, |_, _| {})
}

/// Like [`train`], calling `observer(epoch, &table)` after every epoch once
/// all workers have joined.
pub fn train_with_observer<O>(
    corpus: &Corpus,
    config: &TrainConfig,
    mut observer: O,
) -> Result<TrainOutcome>
where
    O: FnMut(usize, &EmbeddingMatrix<f32>),
{
    config.validate()?;
    let sig = config.signature()?;
    if corpus.ids.len() < 2 {
        return Err(Error::InsufficientData(
            "corpus yields no training pairs".into(),
        ));
    }

    let vocab = &corpus.vocab;
    let noise = NoiseDistribution::new(vocab);
    let keep = vocab.keep_probabilities(config.subsample);
    let keep = (config.subsample > 0.0).then_some(keep.as_slice());
    let mut embeddings =
        EmbeddingMatrix::<f32>::init_gaussian(vocab.len(), config.dim, config.seed)?;

    let threads = config.threads.min(corpus.ids.len());
    let shard_len = corpus.ids.len().div_ceil(threads);
    let shards: Vec<&[u32]> = corpus.ids.chunks(shard_len).collect();

    let mut rngs: Vec<(ChaCha8Rng, ChaCha8Rng)> = (0..shards.len())
        .map(|t| {
            let mut windows = ChaCha8Rng::seed_from_u64(config.seed.wrapping_add(1));
            windows.set_stream(2 * t as u64);
            let mut negatives = ChaCha8Rng::seed_from_u64(config.seed.wrapping_add(1));
            negatives.set_stream(2 * t as u64 + 1);
            (windows, negatives)
        })
        .collect();

    let progress = Progress {
        pairs: AtomicU64::new(0),
        total: config.epochs as f64 * expected_pairs(&corpus.ids, keep, config.window, true),
        start: Instant::now(),
        abort: AtomicBool::new(false),
    };

    for epoch in 0..config.epochs {
        let shared = Hogwild::new(embeddings.as_mut_slice());
        let results: Vec<Result<()>> = std::thread::scope(|scope| {
            let handles: Vec<_> = shards
                .iter()
                .zip(rngs.iter_mut())
                .map(|(shard, (win_rng, neg_rng))| {
                    let worker = Worker {
                        // Each worker sees the whole table; rows are updated
                        // without synchronization.
                        data: unsafe { shared.slice_mut() },
                        d: config.dim,
                        m: sig.split_index(),
                        config,
                        noise: &noise,
                        progress: &progress,
                        epoch,
                    };
                    scope.spawn(move || worker.run(shard, keep, win_rng, neg_rng))
                })
                .collect();
            handles
                .into_iter()
                .map(|h| h.join().expect("training worker panicked"))
                .collect()
        });
        results.into_iter().collect::<Result<Vec<_>>>()?;

        if let Some(row) = embeddings.first_non_finite_row() {
            return Err(Error::NonFinite { row, epoch });
        }
        observer(epoch, &embeddings);
    }

    let pairs = progress.pairs.load(Ordering::Relaxed);
    if pairs == 0 {
        return Err(Error::InsufficientData(
            "corpus yields no training pairs".into(),
        ));
    }
    Ok(TrainOutcome {
        embeddings,
        signature: sig,
        pairs,
        elapsed: progress.start.elapsed(),
    })
}

struct Progress {
    pairs: AtomicU64,
    total: f64,
    start: Instant,
    abort: AtomicBool,
}

/// Shared view of the table for lock-free training. Concurrent workers
/// read and write rows without synchronization and lost updates are
/// accepted. The table must not be read elsewhere until all workers have
/// joined.
struct Hogwild<'a> {
    data: UnsafeCell<&'a mut [f32]>,
}

unsafe impl Sync for Hogwild<'_> {}

impl<'a> Hogwild<'a> {
    fn new(data: &'a mut [f32]) -> Self {
        Hogwild {
            data: UnsafeCell::new(data),
        }
    }

    #[allow(clippy::mut_from_ref)]
    unsafe fn slice_mut(&self) -> &'a mut [f32] {
        let inner: &mut &'a mut [f32] = &mut *self.data.get();
        std::slice::from_raw_parts_mut(inner.as_mut_ptr(), inner.len())
    }
}

struct Worker<'a> {
    data: &'a mut [f32],
    d: usize,
    m: usize,
    config: &'a TrainConfig,
    noise: &'a NoiseDistribution,
    progress: &'a Progress,
    epoch: usize,
}

impl Worker<'_> {
    fn run(
        self,
        shard: &[u32],
        keep: Option<&[f64]>,
        win_rng: &mut ChaCha8Rng,
        neg_rng: &mut ChaCha8Rng,
    ) -> Result<()> {
        let Worker {
            data,
            d,
            m,
            config,
            noise,
            progress,
            epoch,
        } = self;

        let mut lr = learning_rate(
            config,
            progress.pairs.load(Ordering::Relaxed),
            progress.total,
        );
        let mut local = 0u64;
        let (mut loss_sum, mut loss_n) = (0.0f64, 0u64);

        for (center, context) in WindowStream::new(shard, keep, config.window, win_rng) {
            let sample_loss = local.is_multiple_of(LOSS_SAMPLE_EVERY);
            let s = step_rows(data, d, m, center, context, true, lr);
            if !s.is_finite() {
                progress.abort.store(true, Ordering::Relaxed);
                return Err(Error::NonFinite { row: center, epoch });
            }
            let mut pair_ll = if sample_loss {
                log_sigmoid(s as f64)
            } else {
                0.0
            };
            for _ in 0..config.negatives {
                let neg = noise.sample(neg_rng);
                // Noise equal to the observed context would cancel the
                // positive step; such draws are dropped, as in word2vec.
                if neg == context {
                    continue;
                }
                let s = step_rows(data, d, m, center, neg, false, lr);
                if sample_loss {
                    pair_ll += log_sigmoid(-s as f64);
                }
            }
            if sample_loss {
                loss_sum -= pair_ll;
                loss_n += 1;
            }

            local += 1;
            if local.is_multiple_of(FLUSH_EVERY) {
                let before = progress.pairs.fetch_add(FLUSH_EVERY, Ordering::Relaxed);
                let now = before + FLUSH_EVERY;
                lr = learning_rate(config, now, progress.total);
                if now / REPORT_EVERY != before / REPORT_EVERY {
                    let secs = progress.start.elapsed().as_secs_f64().max(1e-9);
                    log::info!(
                        "epoch {} pairs {} ({:.0} pairs/s) lr {:.6} loss {:.4}",
                        epoch + 1,
                        now,
                        now as f64 / secs,
                        lr,
                        loss_sum / loss_n.max(1) as f64
                    );
                    loss_sum = 0.0;
                    loss_n = 0;
                }
                if progress.abort.load(Ordering::Relaxed) {
                    return Ok(());
                }
            }
        }
        progress
            .pairs
            .fetch_add(local % FLUSH_EVERY, Ordering::Relaxed);
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use proptest::prelude::*;

    use super::*;

    fn matrix(n: usize, d: usize, seed: u64) -> EmbeddingMatrix<f64> {
        EmbeddingMatrix::<f64>::init_gaussian(n, d, seed).unwrap()
    }

    #[test]
    fn zero_scores_give_log_half() {
        let e = EmbeddingMatrix::<f64>::zeros(4, 4);
        let sig = SignSignature::half(4).unwrap();
        let ll = pair_loss(&e, &sig, 0, 1, &[2, 3, 1]).unwrap();
        assert!((ll - 4.0 * 0.5f64.ln()).abs() < 1e-15);
    }

    #[test]
    fn saturated_positive_has_zero_loss() {
        let mut data = vec![0.0; 4];
        data[0] = 40.0;
        let e = EmbeddingMatrix::from_vec(1, 4, data).unwrap();
        let sig = SignSignature::half(4).unwrap();
        let ll = pair_loss(&e, &sig, 0, 0, &[]).unwrap();
        assert!(ll.abs() < 1e-300);
    }

    #[test]
    fn log_sigmoid_is_finite_for_large_scores() {
        for s in [-1e3, -50.0, 0.0, 50.0, 1e3] {
            let v = log_sigmoid(s);
            assert!(v.is_finite() && v <= 0.0, "{s} -> {v}");
        }
        assert!((log_sigmoid(-1e3) + 1e3).abs() < 1e-9);
    }

    #[test]
    fn pair_loss_matches_scalar_reimplementation() {
        let (n, d, m) = (7, 10, 5);
        let e = matrix(n, d, 4);
        let sig = SignSignature::new(d, m).unwrap();
        let negs = [3, 6, 0, 3, 5];

        let raw = |a: usize, b: usize| {
            let mut s = 0.0;
            for k in 0..d {
                let sign = if k < m { 1.0 } else { -1.0 };
                s += sign * e.as_slice()[a * d + k] * e.as_slice()[b * d + k];
            }
            s
        };
        let logistic = |z: f64| 1.0 / (1.0 + (-z).exp());
        let mut oracle = logistic(raw(2, 4)).ln();
        for &neg in &negs {
            oracle += logistic(-raw(2, neg)).ln();
        }
        let ll = pair_loss(&e, &sig, 2, 4, &negs).unwrap();
        assert!((ll - oracle).abs() < 1e-10);
    }

    #[test]
    fn zero_gradient_leaves_rows_unchanged() {
        let mut e = EmbeddingMatrix::<f32>::zeros(2, 2);
        e.row_mut(0)[0] = 100.0;
        e.row_mut(1)[0] = 100.0;
        let before = e.clone();
        let sig = SignSignature::half(2).unwrap();
        // σ(clamped score) rounds to exactly 1 in f32, so g = 0.
        sgd_step(&mut e, &sig, 0, 1, true, 0.5).unwrap();
        assert_eq!(e, before);
    }

    #[test]
    fn hand_computed_single_step() {
        let mut e = EmbeddingMatrix::from_vec(2, 2, vec![1.0, 0.0, 0.0, 1.0]).unwrap();
        let sig = SignSignature::new(2, 1).unwrap();
        let s = sgd_step(&mut e, &sig, 0, 1, true, 0.1).unwrap();
        assert_eq!(s, 0.0);
        assert!((e.row(0)[0] - 1.0).abs() < 1e-15);
        assert!((e.row(0)[1] + 0.05).abs() < 1e-15);
        assert!((e.row(1)[0] - 0.05).abs() < 1e-15);
        assert!((e.row(1)[1] - 1.0).abs() < 1e-15);
    }

    #[test]
    fn self_pair_step_matches_gradient() {
        let mut e = matrix(3, 6, 8);
        let sig = SignSignature::half(6).unwrap();
        let grad = pair_loss_gradient(&e, &sig, 1, 1, &[]).unwrap();
        let before = e.clone();
        let lr = 1e-3;
        sgd_step(&mut e, &sig, 1, 1, true, lr).unwrap();
        for (k, (a, b)) in e.as_slice().iter().zip(before.as_slice()).enumerate() {
            assert!((a - b - lr * grad[k]).abs() < 1e-12);
        }
    }

    #[test]
    fn step_sequence_follows_gradient_direction() {
        // A positive step plus negative steps with a tiny learning rate is a
        // first-order move along the gradient of the pair objective.
        let (n, d) = (6, 8);
        let sig = SignSignature::half(d).unwrap();
        let negs = [2, 5, 4];
        let mut e = matrix(n, d, 21);
        let grad = pair_loss_gradient(&e, &sig, 0, 3, &negs).unwrap();
        let before = e.clone();
        let lr = 1e-7;
        sgd_step(&mut e, &sig, 0, 3, true, lr).unwrap();
        for &neg in &negs {
            sgd_step(&mut e, &sig, 0, neg, false, lr).unwrap();
        }
        for (k, (a, b)) in e.as_slice().iter().zip(before.as_slice()).enumerate() {
            let moved = (a - b) / lr;
            assert!(
                (moved - grad[k]).abs() < 1e-5,
                "coord {k}: {moved} vs {}",
                grad[k]
            );
        }
    }

    #[test]
    fn config_validation() {
        assert!(TrainConfig::default().validate().is_ok());
        let odd = TrainConfig {
            dim: 7,
            ..Default::default()
        };
        assert!(odd
            .validate()
            .unwrap_err()
            .to_string()
            .contains("dimension must be even"));
        let no_neg = TrainConfig {
            negatives: 0,
            ..Default::default()
        };
        assert!(no_neg.validate().is_err());
        let lr = TrainConfig {
            min_lr: 0.1,
            ..Default::default()
        };
        assert!(lr.validate().is_err());
        let split = TrainConfig {
            split_index: Some(200),
            ..Default::default()
        };
        assert!(split.validate().is_err());
    }

    proptest! {
        #[test]
        fn learning_rate_stays_in_range(done in 0u64..10_000_000, total in 1.0f64..5e6) {
            let cfg = TrainConfig::default();
            let lr = learning_rate(&cfg, done, total);
            prop_assert!(lr >= cfg.min_lr && lr <= cfg.initial_lr);
        }

        #[test]
        fn learning_rate_is_nonincreasing(a in 0u64..1_000_000, b in 0u64..1_000_000) {
            let cfg = TrainConfig::default();
            let (lo, hi) = if a <= b { (a, b) } else { (b, a) };
            prop_assert!(learning_rate(&cfg, hi, 5e5) <= learning_rate(&cfg, lo, 5e5));
        }
    }

    #[test]
    fn empty_corpus_is_rejected() {
        let corpus = Corpus::from_text("lonely", 1).unwrap();
        let cfg = TrainConfig {
            dim: 4,
            min_count: 1,
            ..Default::default()
        };
        assert!(matches!(
            train(&corpus, &cfg),
            Err(Error::InsufficientData(_))
        ));
    }
}
