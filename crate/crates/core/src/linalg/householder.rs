//! Products of Householder reflections `H = H_1 H_2 … H_L`, with
//! `H_ℓ = I − 2 r_ℓ r_ℓᵀ / ‖r_ℓ‖²`.

use rand::Rng;

use super::flops::{record, FlopCounter};
use super::matrix::Matrix;
use crate::error::{MooreError, Result};

/// Columns with Euclidean norm at or below this are rejected.
pub const NORM_FLOOR: f64 = 1e-12;

/// An orthogonal map stored as the `D × L` matrix of reflection vectors.
#[derive(Debug, Clone, PartialEq)]
pub struct HouseholderChain {
    r: Matrix,
    norms_sq: Vec<f64>,
}

impl HouseholderChain {
    /// Chain from the columns of `r`. `L = r.cols()` must be even.
    pub fn new(r: Matrix) -> Result<Self> {
        if !r.cols().is_multiple_of(2) {
            return Err(MooreError::OddL(r.cols()));
        }
        Self::new_any_parity(r)
    }

    /// Skips the even-length rule. Everything else is validated.
    pub(crate) fn new_any_parity(r: Matrix) -> Result<Self> {
        let mut chain = Self {
            r,
            norms_sq: Vec::new(),
        };
        chain.refresh()?;
        Ok(chain)
    }

    /// The empty chain (`H = I_D`).
    pub fn identity(dim: usize) -> Self {
        Self {
            r: Matrix::zeros(dim, 0),
            norms_sq: Vec::new(),
        }
    }

    /// `len` columns in equal consecutive pairs, entries `uniform(-scale, scale)`,
    /// so that `H = I` up to rounding.
    pub fn paired<R: Rng + ?Sized>(dim: usize, len: usize, scale: f64, rng: &mut R) -> Result<Self> {
        if !len.is_multiple_of(2) {
            return Err(MooreError::OddL(len));
        }
        let mut r = Matrix::zeros(dim, len);
        for pair in 0..len / 2 {
            for i in 0..dim {
                let v = rng.random_range(-scale..scale);
                r.set(i, 2 * pair, v);
                r.set(i, 2 * pair + 1, v);
            }
        }
        Self::new(r)
    }

    /// Recomputes cached norms after `r` changed, enforcing the norm floor.
    pub(crate) fn refresh(&mut self) -> Result<()> {
        if !self.r.all_finite() {
            return Err(MooreError::NonFinite("HouseholderChain"));
        }
        self.norms_sq.clear();
        for l in 0..self.r.cols() {
            let n2: f64 = (0..self.r.rows()).map(|i| self.r.get(i, l).powi(2)).sum();
            if n2.sqrt() <= NORM_FLOOR {
                return Err(MooreError::NormFloor {
                    column: l,
                    norm: n2.sqrt(),
                });
            }
            self.norms_sq.push(n2);
        }
        Ok(())
    }

    /// Replaces the reflection vectors (same shape required).
    pub fn set_r(&mut self, r: Matrix) -> Result<()> {
        if r.shape() != self.r.shape() {
            return Err(MooreError::shape(
                "HouseholderChain::set_r",
                format!("{:?}", self.r.shape()),
                format!("{:?}", r.shape()),
            ));
        }
        self.r = r;
        self.refresh()
    }

    pub(crate) fn r_mut(&mut self) -> &mut Matrix {
        &mut self.r
    }

    pub fn r(&self) -> &Matrix {
        &self.r
    }

    pub fn dim(&self) -> usize {
        self.r.rows()
    }

    /// Number of reflections `L`.
    pub fn len(&self) -> usize {
        self.r.cols()
    }

    pub fn is_empty(&self) -> bool {
        self.r.cols() == 0
    }

    pub fn column(&self, l: usize) -> Vec<f64> {
        self.r.col(l)
    }

    pub(crate) fn norm_sq(&self, l: usize) -> f64 {
        self.norms_sq[l]
    }

    /// Applies reflection `l` to `y` in place: `D` MACs for the dot product
    /// and `D` for the update.
    fn reflect(&self, l: usize, y: &mut [f64], counter: Option<&FlopCounter>) {
        let d = self.dim();
        let mut rty = 0.0;
        for (i, yi) in y.iter().enumerate() {
            rty += self.r.get(i, l) * yi;
        }
        let coef = 2.0 * rty / self.norms_sq[l];
        for (i, yi) in y.iter_mut().enumerate() {
            *yi -= coef * self.r.get(i, l);
        }
        record(counter, 2 * d);
    }

    /// `H x`, applying `H_L` first and `H_1` last. Records exactly `2·L·D` MACs.
    pub fn apply(&self, x: &[f64], counter: Option<&FlopCounter>) -> Result<Vec<f64>> {
        self.check_len(x)?;
        let mut y = x.to_vec();
        for l in (0..self.len()).rev() {
            self.reflect(l, &mut y, counter);
        }
        Ok(y)
    }

    /// `Hᵀ x = H_L … H_1 x` (each reflection is symmetric).
    pub fn apply_transpose(&self, x: &[f64], counter: Option<&FlopCounter>) -> Result<Vec<f64>> {
        self.check_len(x)?;
        let mut y = x.to_vec();
        for l in 0..self.len() {
            self.reflect(l, &mut y, counter);
        }
        Ok(y)
    }

    /// Intermediate vectors of [`apply`](Self::apply): element `l` is the
    /// input seen by reflection `l`, element `L` is `x` itself, element 0 is `Hx`.
    pub(crate) fn apply_stages(&self, x: &[f64]) -> Result<Vec<Vec<f64>>> {
        self.check_len(x)?;
        let l_count = self.len();
        let mut stages = vec![Vec::new(); l_count + 1];
        stages[l_count] = x.to_vec();
        for l in (0..l_count).rev() {
            let mut y = stages[l + 1].clone();
            self.reflect(l, &mut y, None);
            stages[l] = y;
        }
        Ok(stages)
    }

    /// Dense `H`, built as `I · H_1 · H_2 ⋯ H_L` by rank-one updates.
    pub fn matrix(&self) -> Matrix {
        let d = self.dim();
        let mut h = Matrix::identity(d);
        for l in 0..self.len() {
            let r = self.column(l);
            let hr = h.matvec(&r, None).expect("square");
            h.add_outer(-2.0 / self.norms_sq[l], &hr, &r);
        }
        h
    }

    /// `det H = (−1)^L`, one factor of −1 per reflection.
    pub fn determinant(&self) -> f64 {
        if self.len().is_multiple_of(2) {
            1.0
        } else {
            -1.0
        }
    }

    fn check_len(&self, x: &[f64]) -> Result<()> {
        if x.len() != self.dim() {
            return Err(MooreError::shape("householder_apply", self.dim(), x.len()));
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn empty_chain_is_identity() {
        let c = HouseholderChain::identity(3);
        assert_eq!(c.apply(&[1.0, 2.0, 3.0], None).unwrap(), vec![1.0, 2.0, 3.0]);
        assert_eq!(c.matrix(), Matrix::identity(3));
    }

    #[test]
    fn single_axis_reflection() {
        let r = Matrix::from_rows(&[&[1.0], &[0.0], &[0.0]]);
        let c = HouseholderChain::new_any_parity(r.clone()).unwrap();
        assert_eq!(c.apply(&[1.0, 2.0, 3.0], None).unwrap(), vec![-1.0, 2.0, 3.0]);
        assert_eq!(c.determinant(), -1.0);
        assert!(matches!(HouseholderChain::new(r), Err(MooreError::OddL(1))));
    }

    #[test]
    fn zero_column_rejected() {
        let r = Matrix::from_rows(&[&[1.0, 0.0], &[1.0, 0.0]]);
        assert!(matches!(
            HouseholderChain::new(r),
            Err(MooreError::NormFloor { column: 1, .. })
        ));
    }

    #[test]
    fn repeated_column_is_involution() {
        let v = [0.3, -1.2, 0.7, 2.0];
        let r = Matrix::from_columns(4, &[v.to_vec(), v.to_vec()]);
        let c = HouseholderChain::new(r).unwrap();
        assert!(c.matrix().max_abs_diff(&Matrix::identity(4)) < 1e-12);
    }

    #[test]
    fn transpose_inverts() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let r = Matrix::random_uniform(5, 4, -1.0, 1.0, &mut rng);
        let c = HouseholderChain::new(r).unwrap();
        let x = [1.0, -2.0, 0.5, 0.0, 3.0];
        let back = c.apply_transpose(&c.apply(&x, None).unwrap(), None).unwrap();
        for (a, b) in back.iter().zip(&x) {
            assert!((a - b).abs() < 1e-12);
        }
    }

    #[test]
    fn stages_end_at_apply() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let c = HouseholderChain::new(Matrix::random_uniform(4, 2, -1.0, 1.0, &mut rng)).unwrap();
        let x = [0.1, 0.2, 0.3, 0.4];
        let st = c.apply_stages(&x).unwrap();
        assert_eq!(st[2], x.to_vec());
        assert_eq!(st[0], c.apply(&x, None).unwrap());
    }

    #[test]
    fn shape_mismatch() {
        let c = HouseholderChain::identity(3);
        assert!(c.apply(&[1.0], None).is_err());
    }

    #[test]
    fn mac_count_is_2ld() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let c = HouseholderChain::paired(6, 4, 0.5, &mut rng).unwrap();
        let f = FlopCounter::new();
        c.apply(&[1.0; 6], Some(&f)).unwrap();
        assert_eq!(f.mac_count(), 2 * 4 * 6);
    }
}
