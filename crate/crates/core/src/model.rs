//! The tied-weight embedding table and its sign signature.
//!
//! Context vectors are never stored: the context vector of word `i` is
//! `D w_i`, where `D` flips the sign of every coordinate at or after the
//! split index. The score of a (center, context) pair is therefore
//! `w_j·D w_i = x_j·x_i - y_j·y_i`.

use num_traits::Float;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal, StandardNormal};

use crate::error::{Error, Result};

/// Row-major `n × d` embedding table, one row per word.
#[derive(Clone, Debug, PartialEq)]
pub struct EmbeddingMatrix<F = f32> {
    n: usize,
    d: usize,
    data: Vec<F>,
}

/// Split point of the diagonal ±1 matrix `D`: coordinates `0..m` carry
/// sign `+1`, coordinates `m..d` carry `-1`.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct SignSignature {
    d: usize,
    m: usize,
}

/// Borrowed halves of one embedding row.
#[derive(Clone, Copy, Debug)]
pub struct SplitEmbedding<'a, F> {
    pub x: &'a [F],
    pub y: &'a [F],
}

/// All four pairwise quantities of two rows.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct DotDecomposition<F> {
    /// `x_j·x_i`
    pub xx: F,
    /// `y_j·y_i`
    pub yy: F,
    /// `xx - yy`, the context score `w_j·D w_i`.
    pub score: F,
    /// `xx + yy`, the plain dot product `w_j·w_i`.
    pub dot: F,
}

impl SignSignature {
    pub fn new(d: usize, m: usize) -> Result<Self> {
        if m == 0 || m >= d {
            return Err(Error::Config(format!(
                "split index must satisfy 0 < m < d, got m = {m}, d = {d}"
            )));
        }
        Ok(SignSignature { d, m })
    }

    /// Even split `m = d / 2`.
    pub fn half(d: usize) -> Result<Self> {
        if !d.is_multiple_of(2) {
            return Err(Error::Config(format!("dimension must be even, got {d}")));
        }
        Self::new(d, d / 2)
    }

    pub fn dim(&self) -> usize {
        self.d
    }

    pub fn split_index(&self) -> usize {
        self.m
    }

    #[inline]
    pub fn sign<F: Float>(&self, k: usize) -> F {
        if k < self.m {
            F::one()
        } else {
            -F::one()
        }
    }

    /// `D v`.
    pub fn apply<F: Float>(&self, v: &[F]) -> Vec<F> {
        let mut out = v.to_vec();
        self.apply_in_place(&mut out);
        out
    }

    pub fn apply_in_place<F: Float>(&self, v: &mut [F]) {
        assert_eq!(v.len(), self.d, "vector width does not match signature");
        for c in &mut v[self.m..] {
            *c = -*c;
        }
    }
}

impl<'a, F: Copy> SplitEmbedding<'a, F> {
    /// `[x; y]`
    pub fn concat(&self) -> Vec<F> {
        let mut w = Vec::with_capacity(self.x.len() + self.y.len());
        w.extend_from_slice(self.x);
        w.extend_from_slice(self.y);
        w
    }
}

/// Dot product with eight independent accumulators so the loop vectorizes.
/// Summation order is fixed, so results are deterministic.
#[inline]
pub fn dot<F: Float>(a: &[F], b: &[F]) -> F {
    debug_assert_eq!(a.len(), b.len());
    let mut acc = [F::zero(); 8];
    let ca = a.chunks_exact(8);
    let cb = b.chunks_exact(8);
    let (ra, rb) = (ca.remainder(), cb.remainder());
    for (xa, xb) in ca.zip(cb) {
        for l in 0..8 {
            acc[l] = acc[l] + xa[l] * xb[l];
        }
    }
    let mut tail = F::zero();
    for (&p, &q) in ra.iter().zip(rb) {
        tail = tail + p * q;
    }
    ((acc[0] + acc[4]) + (acc[1] + acc[5])) + ((acc[2] + acc[6]) + (acc[3] + acc[7])) + tail
}

/// `(x_a·x_b, y_a·y_b)` for rows split at `m`.
#[inline]
pub fn half_dots<F: Float>(a: &[F], b: &[F], m: usize) -> (F, F) {
    (dot(&a[..m], &b[..m]), dot(&a[m..], &b[m..]))
}

impl<F: Float> EmbeddingMatrix<F> {
    pub fn zeros(n: usize, d: usize) -> Self {
        EmbeddingMatrix {
            n,
            d,
            data: vec![F::zero(); n * d],
        }
    }

    pub fn from_vec(n: usize, d: usize, data: Vec<F>) -> Result<Self> {
        if data.len() != n * d {
            return Err(Error::Config(format!(
                "buffer of length {} cannot hold a {n}×{d} matrix",
                data.len()
            )));
        }
        Ok(EmbeddingMatrix { n, d, data })
    }

    /// Entries drawn i.i.d. from `Normal(0, 1/d)`.
    pub fn init_gaussian(n: usize, d: usize, seed: u64) -> Result<Self>
    where
        StandardNormal: Distribution<F>,
    {
        if n == 0 {
            return Err(Error::Config("vocabulary size must be at least 1".into()));
        }
        if d < 2 || !d.is_multiple_of(2) {
            return Err(Error::Config(format!("dimension must be even, got {d}")));
        }
        let std_dev = F::from(1.0 / (d as f64).sqrt()).unwrap();
        let normal = Normal::new(F::zero(), std_dev).expect("positive standard deviation");
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let data = (0..n * d).map(|_| normal.sample(&mut rng)).collect();
        Ok(EmbeddingMatrix { n, d, data })
    }

    pub fn rows(&self) -> usize {
        self.n
    }

    pub fn dim(&self) -> usize {
        self.d
    }

    pub fn as_slice(&self) -> &[F] {
        &self.data
    }

    pub fn as_mut_slice(&mut self) -> &mut [F] {
        &mut self.data
    }

    #[inline]
    pub fn row(&self, i: usize) -> &[F] {
        &self.data[i * self.d..(i + 1) * self.d]
    }

    #[inline]
    pub fn row_mut(&mut self, i: usize) -> &mut [F] {
        &mut self.data[i * self.d..(i + 1) * self.d]
    }

    pub fn check_id(&self, id: usize) -> Result<()> {
        if id < self.n {
            Ok(())
        } else {
            Err(Error::IndexOutOfRange { id, len: self.n })
        }
    }

    fn check_signature(&self, sig: &SignSignature) {
        assert_eq!(sig.dim(), self.d, "signature width does not match matrix");
    }

    /// Context score `w_j·D w_i`.
    pub fn score(&self, sig: &SignSignature, j: usize, i: usize) -> Result<F> {
        Ok(self.decompose_dot(sig, j, i)?.score)
    }

    pub fn split(&self, sig: &SignSignature, i: usize) -> Result<SplitEmbedding<'_, F>> {
        self.check_id(i)?;
        self.check_signature(sig);
        let (x, y) = self.row(i).split_at(sig.split_index());
        Ok(SplitEmbedding { x, y })
    }

    pub fn decompose_dot(
        &self,
        sig: &SignSignature,
        j: usize,
        i: usize,
    ) -> Result<DotDecomposition<F>> {
        self.check_id(j)?;
        self.check_id(i)?;
        self.check_signature(sig);
        let (xx, yy) = half_dots(self.row(j), self.row(i), sig.split_index());
        Ok(DotDecomposition {
            xx,
            yy,
            score: xx - yy,
            dot: xx + yy,
        })
    }

    /// First row containing a NaN or infinity.
    pub fn first_non_finite_row(&self) -> Option<usize> {
        self.data
            .iter()
            .position(|v| !v.is_finite())
            .map(|pos| pos / self.d.max(1))
    }

    /// Copy of the columns `range` of every row.
    pub fn columns(&self, range: std::ops::Range<usize>) -> Self {
        assert!(range.end <= self.d && range.start < range.end);
        let width = range.len();
        let mut data = Vec::with_capacity(self.n * width);
        for i in 0..self.n {
            data.extend_from_slice(&self.row(i)[range.clone()]);
        }
        EmbeddingMatrix {
            n: self.n,
            d: width,
            data,
        }
    }

    pub fn cast<G: Float>(&self) -> EmbeddingMatrix<G> {
        EmbeddingMatrix {
            n: self.n,
            d: self.d,
            data: self.data.iter().map(|v| G::from(*v).unwrap()).collect(),
        }
    }
}

#[cfg(test)]
mod tests {
    use proptest::prelude::*;

    use super::*;

    fn basis(d: usize, k: usize) -> Vec<f64> {
        let mut v = vec![0.0; d];
        v[k] = 1.0;
        v
    }

    #[test]
    fn score_on_basis_vectors() {
        let d = 6;
        let sig = SignSignature::half(d).unwrap();
        let mut data = basis(d, 0);
        data.extend(basis(d, d - 1));
        let e = EmbeddingMatrix::from_vec(2, d, data).unwrap();
        assert_eq!(e.score(&sig, 0, 0).unwrap(), 1.0);
        assert_eq!(e.score(&sig, 1, 1).unwrap(), -1.0);
        assert_eq!(e.score(&sig, 0, 1).unwrap(), 0.0);
    }

    #[test]
    fn split_slices_rows() {
        let e = EmbeddingMatrix::from_vec(1, 4, vec![1.0f32, 2.0, 3.0, 4.0]).unwrap();
        let sig = SignSignature::half(4).unwrap();
        let s = e.split(&sig, 0).unwrap();
        assert_eq!(s.x, &[1.0, 2.0]);
        assert_eq!(s.y, &[3.0, 4.0]);
        assert_eq!(s.concat(), e.row(0));

        let edge = SignSignature::new(4, 3).unwrap();
        assert_eq!(e.split(&edge, 0).unwrap().y, &[4.0]);
    }

    #[test]
    fn signature_bounds() {
        assert!(SignSignature::new(4, 0).is_err());
        assert!(SignSignature::new(4, 4).is_err());
        assert!(SignSignature::half(7).is_err());
        assert_eq!(SignSignature::half(200).unwrap().split_index(), 100);
    }

    #[test]
    fn out_of_range_ids() {
        let e = EmbeddingMatrix::<f32>::zeros(2, 4);
        let sig = SignSignature::half(4).unwrap();
        assert!(matches!(
            e.score(&sig, 0, 2),
            Err(Error::IndexOutOfRange { id: 2, len: 2 })
        ));
        assert!(e.split(&sig, 5).is_err());
    }

    #[test]
    fn orthogonal_rows_decompose_to_zero() {
        let d = 4;
        let mut data = vec![1.0, 0.0, 1.0, 0.0];
        data.extend([0.0, 1.0, 0.0, 1.0]);
        let e = EmbeddingMatrix::from_vec(2, d, data).unwrap();
        let dd = e
            .decompose_dot(&SignSignature::half(d).unwrap(), 0, 1)
            .unwrap();
        assert_eq!((dd.xx, dd.yy, dd.score, dd.dot), (0.0, 0.0, 0.0, 0.0));
    }

    #[test]
    fn gaussian_init_moments() {
        let (n, d) = (5000, 200);
        let e = EmbeddingMatrix::<f64>::init_gaussian(n, d, 17).unwrap();
        let count = (n * d) as f64;
        let mean = e.as_slice().iter().sum::<f64>() / count;
        assert!(mean.abs() < 4.0 / count.sqrt() / (d as f64).sqrt());

        let var = e.as_slice().iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (count - 1.0);
        let target = 1.0 / d as f64;
        assert!((var - target).abs() / target < 0.01, "variance {var}");

        let norms = (0..n).map(|i| dot(e.row(i), e.row(i))).sum::<f64>() / n as f64;
        assert!((norms - 1.0).abs() < 0.2);
    }

    #[test]
    fn gaussian_init_is_seeded_and_validated() {
        let a = EmbeddingMatrix::<f32>::init_gaussian(10, 8, 3).unwrap();
        let b = EmbeddingMatrix::<f32>::init_gaussian(10, 8, 3).unwrap();
        assert_eq!(a, b);
        assert!(EmbeddingMatrix::<f32>::init_gaussian(10, 7, 3).is_err());
        assert!(EmbeddingMatrix::<f32>::init_gaussian(0, 8, 3).is_err());
    }

    #[test]
    fn columns_and_non_finite_scan() {
        let mut e =
            EmbeddingMatrix::from_vec(2, 4, vec![1.0f32, 2.0, 3.0, 4.0, 5.0, 6.0, 7.0, 8.0])
                .unwrap();
        assert_eq!(e.columns(2..4).as_slice(), &[3.0, 4.0, 7.0, 8.0]);
        assert_eq!(e.first_non_finite_row(), None);
        e.row_mut(1)[2] = f32::NAN;
        assert_eq!(e.first_non_finite_row(), Some(1));
    }

    fn pair_strategy(d: usize) -> impl Strategy<Value = Vec<f64>> {
        proptest::collection::vec(-2.0f64..2.0, 2 * d)
    }

    proptest! {
        #[test]
        fn score_symmetry_and_split_identity(data in pair_strategy(10), m in 1usize..10) {
            let e = EmbeddingMatrix::from_vec(2, 10, data).unwrap();
            let sig = SignSignature::new(10, m).unwrap();
            prop_assert_eq!(e.score(&sig, 0, 1).unwrap(), e.score(&sig, 1, 0).unwrap());

            let (sj, si) = (e.split(&sig, 0).unwrap(), e.split(&sig, 1).unwrap());
            let via_split = dot(sj.x, si.x) - dot(sj.y, si.y);
            prop_assert_eq!(e.score(&sig, 0, 1).unwrap(), via_split);
            prop_assert_eq!(sj.concat(), e.row(0).to_vec());
        }

        #[test]
        fn signature_is_an_involution(v in proptest::collection::vec(-10.0f32..10.0, 8), m in 1usize..8) {
            let sig = SignSignature::new(8, m).unwrap();
            let twice = sig.apply(&sig.apply(&v));
            prop_assert_eq!(twice, v.clone());
            for (k, (a, b)) in sig.apply(&v).iter().zip(&v).enumerate() {
                prop_assert_eq!(*a, sig.sign::<f32>(k) * b);
            }
        }

        #[test]
        fn dot_matches_naive_sum(a in proptest::collection::vec(-1.0f64..1.0, 0..40)) {
            let b: Vec<f64> = a.iter().rev().copied().collect();
            let naive: f64 = a.iter().zip(&b).map(|(p, q)| p * q).sum();
            prop_assert!((dot(&a, &b) - naive).abs() < 1e-12);
        }
    }
}
