//! Banded (tridiagonal) factorization used by the preconditioner and the
//! implicit time stepper.

use std::ops::{Add, Div, Mul, Sub};

pub trait Field:
    Copy + Add<Output = Self> + Sub<Output = Self> + Mul<Output = Self> + Div<Output = Self> + From<f64>
{
}

impl<T> Field for T where T: Copy + Add<Output = T> + Sub<Output = T> + Mul<Output = T> + Div<Output = T> + From<f64> {}

/// LU factors of a tridiagonal matrix (Thomas algorithm without pivoting).
///
/// Only used on diagonally dominant systems.
#[derive(Debug, Clone)]
pub struct TridiagLu<T> {
    lower: Vec<T>,
    inv_pivot: Vec<T>,
    upper: Vec<T>,
}

impl<T: Field> TridiagLu<T> {
    /// `lower[0]` and `upper[n-1]` are ignored.
    pub fn factor(lower: &[T], diag: &[T], upper: &[T]) -> Self {
        let n = diag.len();
        assert!(lower.len() == n && upper.len() == n && n > 0);
        let mut inv_pivot = Vec::with_capacity(n);
        let mut modified_upper = Vec::with_capacity(n);
        let one = T::from(1.0);
        let mut prev_c = T::from(0.0);
        for i in 0..n {
            let pivot = if i == 0 { diag[0] } else { diag[i] - lower[i] * prev_c };
            let inv = one / pivot;
            inv_pivot.push(inv);
            prev_c = if i + 1 < n { upper[i] * inv } else { T::from(0.0) };
            modified_upper.push(prev_c);
        }
        Self {
            lower: lower.to_vec(),
            inv_pivot,
            upper: modified_upper,
        }
    }

    #[allow(clippy::len_without_is_empty)]
    pub fn len(&self) -> usize {
        self.inv_pivot.len()
    }

    /// Solves in place: on entry `rhs` holds b, on exit x.
    pub fn solve_in_place<S>(&self, rhs: &mut [S])
    where
        S: Copy + Sub<Output = S> + Mul<T, Output = S>,
    {
        let n = self.len();
        assert_eq!(rhs.len(), n);
        rhs[0] = rhs[0] * self.inv_pivot[0];
        for i in 1..n {
            rhs[i] = (rhs[i] - rhs[i - 1] * self.lower[i]) * self.inv_pivot[i];
        }
        for i in (0..n - 1).rev() {
            rhs[i] = rhs[i] - rhs[i + 1] * self.upper[i];
        }
    }
}
