//! Cell-centred radial discretization of radially symmetric functions on
//! R^n, 1 <= n <= 5.
//!
//! Nodes sit at `r_j = (j + 1/2) h` and carry the midpoint weights
//! `w_j = |S^{n-1}| r_j^{n-1} h`. The Laplacian is assembled in flux form
//! over the faces `r = (j + 1) h`, with zero flux through the origin and a
//! homogeneous Dirichlet wall at `r_max`, so it is symmetric in the weighted
//! inner product `<f, g> = sum_j w_j conj(f_j) g_j`.

use std::f64::consts::PI;
use std::ops::{Add, Mul, Sub};
use std::sync::Arc;

use num_complex::Complex64;

use crate::error::{Error, Result};

pub const MAX_DIM: usize = 5;

/// Sample type stored on a grid: real profiles or complex wave functions.
pub trait Scalar:
    Copy + Default + Add<Output = Self> + Sub<Output = Self> + Mul<f64, Output = Self> + Send + Sync
{
    fn abs2(self) -> f64;
    fn is_finite_value(self) -> bool;
}

impl Scalar for f64 {
    #[inline]
    fn abs2(self) -> f64 {
        self * self
    }
    fn is_finite_value(self) -> bool {
        self.is_finite()
    }
}

impl Scalar for Complex64 {
    #[inline]
    fn abs2(self) -> f64 {
        self.norm_sqr()
    }
    fn is_finite_value(self) -> bool {
        self.re.is_finite() && self.im.is_finite()
    }
}

/// Gamma(n/2) for n = 1..=5 by the half-integer recurrence.
pub fn gamma_half(n: usize) -> f64 {
    match n {
        1 => PI.sqrt(),
        2 => 1.0,
        3 => 0.5 * PI.sqrt(),
        4 => 1.0,
        5 => 0.75 * PI.sqrt(),
        _ => panic!("gamma_half only tabulated for n <= 5"),
    }
}

/// Surface measure of the unit sphere S^{n-1}; `2` for the line.
pub fn sphere_area(n: usize) -> f64 {
    2.0 * PI.powf(n as f64 / 2.0) / gamma_half(n)
}

#[derive(Debug, Clone)]
pub struct RadialGrid {
    dim: usize,
    r_max: f64,
    num_nodes: usize,
    h: f64,
    nodes: Vec<f64>,
    weights: Vec<f64>,
    /// r^{n-1} at faces (j+1)h, j = 0..num_nodes-1; the last one is the wall.
    face_rho: Vec<f64>,
    lap_lower: Vec<f64>,
    lap_diag: Vec<f64>,
    lap_upper: Vec<f64>,
}

impl PartialEq for RadialGrid {
    fn eq(&self, other: &Self) -> bool {
        self.dim == other.dim && self.num_nodes == other.num_nodes && self.r_max.to_bits() == other.r_max.to_bits()
    }
}

impl RadialGrid {
    pub fn new(dim: usize, r_max: f64, num_nodes: usize) -> Result<Self> {
        if !(1..=MAX_DIM).contains(&dim) {
            return Err(Error::InvalidGrid(format!("dimension {dim} outside 1..={MAX_DIM}")));
        }
        if !(r_max.is_finite() && r_max > 0.0) {
            return Err(Error::InvalidGrid(format!("r_max = {r_max} must be positive")));
        }
        if num_nodes == 0 {
            return Err(Error::InvalidGrid("num_nodes must be positive".into()));
        }
        let h = r_max / num_nodes as f64;
        let area = sphere_area(dim);
        let pow = (dim - 1) as i32;
        let nodes: Vec<f64> = (0..num_nodes).map(|j| (j as f64 + 0.5) * h).collect();
        let weights: Vec<f64> = nodes.iter().map(|&r| area * r.powi(pow) * h).collect();
        let face_rho: Vec<f64> = (0..num_nodes).map(|j| ((j + 1) as f64 * h).powi(pow)).collect();

        let mut lap_lower = vec![0.0; num_nodes];
        let mut lap_diag = vec![0.0; num_nodes];
        let mut lap_upper = vec![0.0; num_nodes];
        for j in 0..num_nodes {
            let denom = nodes[j].powi(pow) * h * h;
            if j > 0 {
                lap_lower[j] = face_rho[j - 1] / denom;
            }
            if j + 1 < num_nodes {
                lap_upper[j] = face_rho[j] / denom;
                lap_diag[j] = -(lap_lower[j] + lap_upper[j]);
            } else {
                // u = 0 on the wall, half a cell beyond the last node
                lap_diag[j] = -(lap_lower[j] + 2.0 * face_rho[j] / denom);
            }
        }

        Ok(Self {
            dim,
            r_max,
            num_nodes,
            h,
            nodes,
            weights,
            face_rho,
            lap_lower,
            lap_diag,
            lap_upper,
        })
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn r_max(&self) -> f64 {
        self.r_max
    }

    pub fn h(&self) -> f64 {
        self.h
    }

    pub fn num_nodes(&self) -> usize {
        self.num_nodes
    }

    pub fn nodes(&self) -> &[f64] {
        &self.nodes
    }

    pub fn weights(&self) -> &[f64] {
        &self.weights
    }

    pub fn sphere_area(&self) -> f64 {
        sphere_area(self.dim)
    }

    /// Volume of the ball of radius `r_max`.
    pub fn ball_volume(&self) -> f64 {
        self.sphere_area() * self.r_max.powi(self.dim as i32) / self.dim as f64
    }

    /// The same grid stretched by `l`: h -> l h, r_max -> l r_max.
    pub fn dilate(&self, l: f64) -> Result<Self> {
        if !(l.is_finite() && l > 0.0) {
            return Err(Error::InvalidParameter {
                name: "dilation",
                reason: format!("{l} must be positive"),
            });
        }
        Self::new(self.dim, self.r_max * l, self.num_nodes)
    }

    /// Same spacing with more nodes; the existing nodes are unchanged.
    pub fn extended(&self, num_nodes: usize) -> Result<Self> {
        if num_nodes < self.num_nodes {
            return Err(Error::InvalidGrid(format!(
                "cannot extend {} nodes to {num_nodes}",
                self.num_nodes
            )));
        }
        Self::new(self.dim, self.h * num_nodes as f64, num_nodes)
    }

    /// Tridiagonal coefficients (lower, diag, upper) of the discrete Laplacian.
    pub fn laplacian_bands(&self) -> (&[f64], &[f64], &[f64]) {
        (&self.lap_lower, &self.lap_diag, &self.lap_upper)
    }

    /// `sum_j w_j values_j`, rejecting non-finite input.
    pub fn integrate(&self, values: &[f64]) -> Result<f64> {
        self.check_len(values.len())?;
        if let Some(index) = values.iter().position(|v| !v.is_finite()) {
            return Err(Error::NonFinite { index });
        }
        Ok(self.integrate_unchecked(values))
    }

    pub(crate) fn integrate_unchecked(&self, values: &[f64]) -> f64 {
        self.weights.iter().zip(values).map(|(w, v)| w * v).sum()
    }

    /// Weighted squared L2 norm `sum w_j |f_j|^2`.
    pub fn norm_sq<T: Scalar>(&self, f: &[T]) -> f64 {
        self.weights.iter().zip(f).map(|(w, x)| w * x.abs2()).sum()
    }

    /// `||f'||^2` by the face rule, consistent with `-<lap f, f>`.
    pub fn gradient_sq<T: Scalar>(&self, f: &[T]) -> f64 {
        let n = self.num_nodes;
        let mut acc = 0.0;
        for j in 0..n - 1 {
            acc += self.face_rho[j] * (f[j + 1] - f[j]).abs2();
        }
        acc += 2.0 * self.face_rho[n - 1] * f[n - 1].abs2();
        acc * self.sphere_area() / self.h
    }

    /// Like `gradient_sq` but with a per-face multiplier `m(r_face)`.
    pub fn weighted_gradient_sq<T: Scalar>(&self, f: &[T], m: impl Fn(f64) -> f64) -> f64 {
        let n = self.num_nodes;
        let h = self.h;
        let mut acc = 0.0;
        for j in 0..n - 1 {
            acc += m((j + 1) as f64 * h) * self.face_rho[j] * (f[j + 1] - f[j]).abs2();
        }
        acc += m(n as f64 * h) * 2.0 * self.face_rho[n - 1] * f[n - 1].abs2();
        acc * self.sphere_area() / h
    }

    /// out = lap(f) for samples laid out on this grid.
    pub fn apply_laplacian<T: Scalar>(&self, f: &[T], out: &mut [T]) {
        let n = self.num_nodes;
        debug_assert!(f.len() == n && out.len() == n);
        if n == 1 {
            out[0] = f[0] * self.lap_diag[0];
            return;
        }
        out[0] = f[0] * self.lap_diag[0] + f[1] * self.lap_upper[0];
        for j in 1..n - 1 {
            out[j] = f[j - 1] * self.lap_lower[j] + f[j] * self.lap_diag[j] + f[j + 1] * self.lap_upper[j];
        }
        out[n - 1] = f[n - 2] * self.lap_lower[n - 1] + f[n - 1] * self.lap_diag[n - 1];
    }

    pub(crate) fn check_len(&self, len: usize) -> Result<()> {
        if len != self.num_nodes {
            return Err(Error::GridMismatch(format!(
                "{len} samples on a grid of {} nodes",
                self.num_nodes
            )));
        }
        Ok(())
    }
}

/// Samples of a radial function together with a lazily applied scaling:
/// the field represents `amp * f(x / dilation)`.
#[derive(Debug, Clone)]
pub struct RadialField {
    grid: Arc<RadialGrid>,
    samples: Vec<Complex64>,
    amp: f64,
    dilation: f64,
}

impl RadialField {
    pub fn new(grid: Arc<RadialGrid>, samples: Vec<Complex64>) -> Result<Self> {
        grid.check_len(samples.len())?;
        if let Some(index) = samples.iter().position(|s| !s.is_finite_value()) {
            return Err(Error::NonFinite { index });
        }
        Ok(Self {
            grid,
            samples,
            amp: 1.0,
            dilation: 1.0,
        })
    }

    pub fn from_real(grid: Arc<RadialGrid>, samples: &[f64]) -> Result<Self> {
        Self::new(grid, samples.iter().map(|&x| Complex64::new(x, 0.0)).collect())
    }

    pub fn from_fn(grid: Arc<RadialGrid>, f: impl Fn(f64) -> Complex64) -> Self {
        let samples = grid.nodes().iter().map(|&r| f(r)).collect();
        Self {
            grid,
            samples,
            amp: 1.0,
            dilation: 1.0,
        }
    }

    pub fn zeros(grid: Arc<RadialGrid>) -> Self {
        let n = grid.num_nodes();
        Self {
            grid,
            samples: vec![Complex64::default(); n],
            amp: 1.0,
            dilation: 1.0,
        }
    }

    /// The underlying (unscaled) grid.
    pub fn grid(&self) -> &Arc<RadialGrid> {
        &self.grid
    }

    pub fn samples(&self) -> &[Complex64] {
        &self.samples
    }

    pub fn samples_mut(&mut self) -> &mut [Complex64] {
        &mut self.samples
    }

    pub fn amp(&self) -> f64 {
        self.amp
    }

    pub fn dilation(&self) -> f64 {
        self.dilation
    }

    pub fn is_materialized(&self) -> bool {
        self.amp == 1.0 && self.dilation == 1.0
    }

    /// Returns `a * delta_l` of this field; only the metadata changes.
    pub fn scaled(&self, a: f64, l: f64) -> Result<Self> {
        if !(a.is_finite() && a != 0.0) {
            return Err(Error::InvalidParameter {
                name: "amplitude",
                reason: format!("{a} must be finite and nonzero"),
            });
        }
        if !(l.is_finite() && l > 0.0) {
            return Err(Error::InvalidParameter {
                name: "dilation",
                reason: format!("{l} must be positive"),
            });
        }
        Ok(Self {
            grid: Arc::clone(&self.grid),
            samples: self.samples.clone(),
            amp: self.amp * a,
            dilation: self.dilation * l,
        })
    }

    /// Multiplies the samples by a complex constant.
    pub fn times(&self, c: Complex64) -> Self {
        Self {
            grid: Arc::clone(&self.grid),
            samples: self.samples.iter().map(|s| s * c).collect(),
            amp: self.amp,
            dilation: self.dilation,
        }
    }

    /// Folds (amp, dilation) into samples and grid.
    pub fn materialize(&self) -> Self {
        if self.is_materialized() {
            return self.clone();
        }
        let grid = if self.dilation == 1.0 {
            Arc::clone(&self.grid)
        } else {
            Arc::new(
                self.grid
                    .dilate(self.dilation)
                    .expect("dilation validated at construction"),
            )
        };
        Self {
            grid,
            samples: self.samples.iter().map(|s| s * self.amp).collect(),
            amp: 1.0,
            dilation: 1.0,
        }
    }

    /// Materialized samples re-attached to an explicitly provided grid.
    pub(crate) fn materialize_onto(&self, grid: &Arc<RadialGrid>) -> Self {
        Self {
            grid: Arc::clone(grid),
            samples: self.samples.iter().map(|s| s * self.amp).collect(),
            amp: 1.0,
            dilation: 1.0,
        }
    }

    /// True when every sample has zero imaginary part.
    pub fn is_real(&self) -> bool {
        self.samples.iter().all(|s| s.im == 0.0)
    }

    /// Real parts of the materialized samples.
    pub fn real_samples(&self) -> Vec<f64> {
        self.samples.iter().map(|s| s.re * self.amp).collect()
    }
}

/// Discrete Laplacian of a materialized field.
pub fn laplacian(field: &RadialField) -> Result<RadialField> {
    if !field.is_materialized() {
        return Err(Error::NotMaterialized {
            amp: field.amp,
            dilation: field.dilation,
        });
    }
    let grid = field.grid();
    if grid.num_nodes() < 3 {
        return Err(Error::InvalidGrid(format!(
            "laplacian needs at least 3 nodes, grid has {}",
            grid.num_nodes()
        )));
    }
    let mut out = vec![Complex64::default(); grid.num_nodes()];
    grid.apply_laplacian(field.samples(), &mut out);
    RadialField::new(Arc::clone(grid), out)
}

/// `sum_j w_j values_j` on `grid`.
pub fn integrate(grid: &RadialGrid, values: &[f64]) -> Result<f64> {
    grid.integrate(values)
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn sphere_areas_match_closed_forms() {
        assert_eq!(sphere_area(1), 2.0);
        assert!((sphere_area(2) - 2.0 * PI).abs() < 1e-14);
        assert!((sphere_area(3) - 4.0 * PI).abs() < 1e-14);
        assert!((sphere_area(4) - 2.0 * PI * PI).abs() < 1e-13);
        assert!((sphere_area(5) - 8.0 * PI * PI / 3.0).abs() < 1e-13);
    }

    #[test]
    fn nodes_positive_and_increasing() {
        let g = RadialGrid::new(3, 4.0, 100).unwrap();
        assert!(g.nodes()[0] > 0.0);
        assert!(g.nodes().windows(2).all(|w| w[1] > w[0]));
        assert!((g.nodes()[0] - 0.02).abs() < 1e-15);
    }

    #[test]
    fn weights_sum_to_ball_volume() {
        for n in 1..=5 {
            let g = RadialGrid::new(n, 2.0, 200).unwrap();
            let sum: f64 = g.weights().iter().sum();
            let rel = (sum - g.ball_volume()).abs() / g.ball_volume();
            assert!(rel <= 10.0 * (g.h() / g.r_max()).powi(2), "n={n} rel={rel}");
        }
    }

    #[test]
    fn integrate_constant_on_5_ball() {
        // vol(B_2) in R^5 = pi^{5/2} / Gamma(7/2) * 2^5
        let g = RadialGrid::new(5, 2.0, 1000).unwrap();
        let ones = vec![1.0; g.num_nodes()];
        let exact = PI.powf(2.5) / (2.5 * gamma_half(5)) * 32.0;
        let got = integrate(&g, &ones).unwrap();
        assert!((got - exact).abs() / exact < 1e-5);
    }

    #[test]
    fn integrate_zero_and_gaussian() {
        let g = RadialGrid::new(5, 10.0, 2000).unwrap();
        assert_eq!(integrate(&g, &vec![0.0; 2000]).unwrap(), 0.0);
        let vals: Vec<f64> = g.nodes().iter().map(|r| (-2.0 * r * r).exp()).collect();
        let exact = (PI / 2.0).powf(2.5);
        assert!((integrate(&g, &vals).unwrap() - exact).abs() / exact < 1e-5);
        assert!((exact - 3.0925).abs() < 1e-4);
    }

    #[test]
    fn integrate_rejects_non_finite() {
        let g = RadialGrid::new(2, 1.0, 4).unwrap();
        let err = integrate(&g, &[1.0, f64::NAN, 0.0, 0.0]).unwrap_err();
        assert!(matches!(err, Error::NonFinite { index: 1 }));
    }

    #[test]
    fn integrate_is_linear() {
        let g = RadialGrid::new(4, 3.0, 64).unwrap();
        let a: Vec<f64> = g.nodes().iter().map(|r| r.sin()).collect();
        let b: Vec<f64> = g.nodes().iter().map(|r| r.cos()).collect();
        let c: Vec<f64> = a.iter().zip(&b).map(|(x, y)| 2.0 * x - 3.0 * y).collect();
        let lhs = integrate(&g, &c).unwrap();
        let rhs = 2.0 * integrate(&g, &a).unwrap() - 3.0 * integrate(&g, &b).unwrap();
        assert!((lhs - rhs).abs() <= 1e-12 * lhs.abs().max(1.0));
    }

    #[test]
    fn polynomial_moments_second_order() {
        for n in 1..=5 {
            for k in 0..=2 {
                let mut errs = vec![];
                for nodes in [100, 200] {
                    let g = RadialGrid::new(n, 2.0, nodes).unwrap();
                    let vals: Vec<f64> = g.nodes().iter().map(|r| r.powi(k)).collect();
                    let exact = sphere_area(n) * 2f64.powi(k + n as i32) / (k + n as i32) as f64;
                    errs.push((integrate(&g, &vals).unwrap() - exact).abs() / exact);
                }
                // halving h divides the error by ~4
                assert!(errs[1] < errs[0] / 3.0 || errs[1] < 1e-13, "n={n} k={k} {errs:?}");
            }
        }
    }

    #[test]
    fn laplacian_of_constant_vanishes_in_interior() {
        let g = Arc::new(RadialGrid::new(5, 4.0, 200).unwrap());
        let f = RadialField::from_fn(g.clone(), |_| Complex64::new(1.0, 0.0));
        let lap = laplacian(&f).unwrap();
        for s in &lap.samples()[..199] {
            assert!(s.norm() < 1e-9);
        }
        // the Dirichlet wall makes the last cell see a jump
        assert!(lap.samples()[199].re < 0.0);
    }

    #[test]
    fn laplacian_of_r_squared_is_2n() {
        let g = Arc::new(RadialGrid::new(5, 4.0, 256).unwrap());
        let f = RadialField::from_fn(g.clone(), |r| Complex64::new(r * r, 0.0));
        let lap = laplacian(&f).unwrap();
        let h = g.h();
        for (j, &r) in g.nodes().iter().enumerate().take(250) {
            if r < 1.0 {
                continue;
            }
            let err = (lap.samples()[j].re - 10.0).abs();
            // exact local error is 5 h^2 / r^2 + O(h^4)
            assert!(err <= 6.0 * h * h / (r * r), "r={r} err={err}");
        }
    }

    #[test]
    fn laplacian_self_adjoint_weighted() {
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        for n in 1..=5 {
            let g = Arc::new(RadialGrid::new(n, 5.0, 300).unwrap());
            let f: Vec<f64> = (0..300).map(|_| rng.gen_range(-1.0..1.0)).collect();
            let q: Vec<f64> = (0..300).map(|_| rng.gen_range(-1.0..1.0)).collect();
            let mut lf = vec![0.0; 300];
            let mut lq = vec![0.0; 300];
            g.apply_laplacian(&f, &mut lf);
            g.apply_laplacian(&q, &mut lq);
            let a: f64 = g
                .weights()
                .iter()
                .zip(lf.iter().zip(&q))
                .map(|(w, (x, y))| w * x * y)
                .sum();
            let b: f64 = g
                .weights()
                .iter()
                .zip(f.iter().zip(&lq))
                .map(|(w, (x, y))| w * x * y)
                .sum();
            assert!((a - b).abs() <= 1e-12 * a.abs().max(b.abs()), "n={n} {a} {b}");
        }
    }

    #[test]
    fn gradient_routes_agree() {
        let g = Arc::new(RadialGrid::new(5, 8.0, 512).unwrap());
        let f: Vec<f64> = g.nodes().iter().map(|r| (-r * r).exp() * (1.0 + 0.3 * r)).collect();
        let mut lf = vec![0.0; 512];
        g.apply_laplacian(&f, &mut lf);
        let via_lap: f64 = -g
            .weights()
            .iter()
            .zip(lf.iter().zip(&f))
            .map(|(w, (x, y))| w * x * y)
            .sum::<f64>();
        let via_faces = g.gradient_sq(&f);
        assert!((via_lap - via_faces).abs() <= 1e-10 * via_faces);
    }

    #[test]
    fn laplacian_rejects_tiny_grid_and_lazy_fields() {
        let g = Arc::new(RadialGrid::new(1, 1.0, 2).unwrap());
        assert!(laplacian(&RadialField::zeros(g)).is_err());
        let g = Arc::new(RadialGrid::new(1, 1.0, 8).unwrap());
        let f = RadialField::zeros(g).scaled(2.0, 1.0).unwrap();
        assert!(matches!(laplacian(&f), Err(Error::NotMaterialized { .. })));
    }

    #[test]
    fn invalid_grids_rejected() {
        assert!(RadialGrid::new(0, 1.0, 10).is_err());
        assert!(RadialGrid::new(6, 1.0, 10).is_err());
        assert!(RadialGrid::new(3, -1.0, 10).is_err());
        assert!(RadialGrid::new(3, 1.0, 0).is_err());
    }

    #[test]
    fn dilation_scales_metadata() {
        let g = RadialGrid::new(3, 2.0, 10).unwrap();
        let d = g.dilate(3.0).unwrap();
        assert!((d.h() - 3.0 * g.h()).abs() < 1e-15);
        assert!((d.r_max() - 6.0).abs() < 1e-15);
    }
}
