//! The F-Adapter: a private low-rank residual map on token embeddings,
//! `E[C] + E[C]·A·B`.

use ndarray::{Array2, ArrayView2};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::lm::Scalar;
use crate::{Error, Result};

#[derive(Clone, Debug, PartialEq)]
pub struct FAdapter<F> {
    /// `d × d′`
    pub a: Array2<F>,
    /// `d′ × d`
    pub b: Array2<F>,
}

impl<F: Scalar> FAdapter<F> {
    /// `A` uniform in `±1/√d`, `B = 0`, so the adapter starts as the identity.
    pub fn init(d_model: usize, rank: usize, seed: u64) -> Result<Self> {
        if rank == 0 || rank > d_model {
            return Err(Error::InvalidConfig(format!(
                "adapter rank {rank} must be in 1..={d_model}"
            )));
        }
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let bound = 1.0 / (d_model as f64).sqrt();
        let a = Array2::from_shape_fn((d_model, rank), |_| F::lit(rng.gen_range(-bound..bound)));
        Ok(Self { a, b: Array2::zeros((rank, d_model)) })
    }

    pub fn zeros(d_model: usize, rank: usize) -> Self {
        Self { a: Array2::zeros((d_model, rank)), b: Array2::zeros((rank, d_model)) }
    }

    pub fn zeros_like(&self) -> Self {
        Self::zeros(self.d_model(), self.rank())
    }

    pub fn d_model(&self) -> usize {
        self.a.nrows()
    }

    pub fn rank(&self) -> usize {
        self.a.ncols()
    }

    pub fn check(&self) -> Result<()> {
        let (d, r) = self.a.dim();
        if self.b.dim() != (r, d) {
            return Err(Error::ShapeMismatch(format!(
                "adapter A is {d}×{r} but B is {:?}",
                self.b.dim()
            )));
        }
        Ok(())
    }

    pub fn all_finite(&self) -> bool {
        self.a.iter().chain(self.b.iter()).all(|x| x.is_finite())
    }

    pub fn cast<G: Scalar>(&self) -> FAdapter<G> {
        FAdapter { a: self.a.mapv(|x| G::lit(x.as_f64())), b: self.b.mapv(|x| G::lit(x.as_f64())) }
    }
}

/// Returns `E + (E·A)·B`, associating the product left to right.
pub fn apply_fadapter<F: Scalar>(rows: ArrayView2<'_, F>, adapter: &FAdapter<F>) -> Result<Array2<F>> {
    adapter.check()?;
    if rows.ncols() != adapter.d_model() {
        return Err(Error::ShapeMismatch(format!(
            "embedding width {} does not match adapter width {}",
            rows.ncols(),
            adapter.d_model()
        )));
    }
    let low = rows.dot(&adapter.a);
    Ok(&rows + &low.dot(&adapter.b))
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::array;

    #[test]
    fn zero_product_is_identity() {
        let e = array![[0.5f64, -1.0, 2.0], [3.0, 0.25, -0.75]];
        let adapter = FAdapter::<f64>::init(3, 2, 1).unwrap();
        assert_eq!(apply_fadapter(e.view(), &adapter).unwrap(), e);
    }

    #[test]
    fn rank_one_matches_hand_arithmetic() {
        // A = [1, 2, -1]ᵀ, B = [0.5, 0, 1]
        let e = array![[1.0f64, 0.0, 2.0], [-1.0, 3.0, 0.5]];
        let adapter = FAdapter { a: array![[1.0], [2.0], [-1.0]], b: array![[0.5, 0.0, 1.0]] };
        // row 0: e·A = 1 - 2 = -1 -> + [-0.5, 0, -1] = [0.5, 0, 1]
        // row 1: e·A = -1 + 6 - 0.5 = 4.5 -> + [2.25, 0, 4.5] = [1.25, 3, 5]
        let expected = array![[0.5, 0.0, 1.0], [1.25, 3.0, 5.0]];
        let out = apply_fadapter(e.view(), &adapter).unwrap();
        for (o, x) in out.iter().zip(expected.iter()) {
            assert!((o - x).abs() < 1e-7);
        }
    }

    #[test]
    fn shapes_follow_d_by_rank() {
        let adapter = FAdapter::<f32>::init(64, 8, 0).unwrap();
        assert_eq!(adapter.a.dim(), (64, 8));
        assert_eq!(adapter.b.dim(), (8, 64));
    }

    #[test]
    fn width_mismatch_is_rejected() {
        let adapter = FAdapter::<f32>::init(4, 2, 0).unwrap();
        let e = Array2::<f32>::zeros((2, 3));
        assert!(matches!(apply_fadapter(e.view(), &adapter), Err(Error::ShapeMismatch(_))));
    }
}
