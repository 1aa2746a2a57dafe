//! Conserved and variational quantities of the system
//!
//! ```text
//! i u_t + Δu = -2 v ū,    i v_t + κ Δv = -u²
//! ```
//!
//! together with the scaling calculus `a·δ_l` and the symmetric-decreasing
//! rearrangement. Functionals read the lazy (amp, dilation) metadata of the
//! fields analytically, so scaled states never need resampling.

use std::sync::Arc;

use num_complex::Complex64;
use serde::{Deserialize, Serialize};

use crate::error::{invalid, Error, Result};
use crate::radial_grid::{RadialField, RadialGrid};

/// Raw constants of the unnormalized system
/// `i u_t + Δu/(2m) = λ ū v`, `i v_t + Δv/(2M) = μ u²`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RawConstants {
    pub m: f64,
    #[serde(rename = "M")]
    pub big_m: f64,
    pub lambda: Complex64,
    pub mu: Complex64,
    pub c: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SystemParams {
    pub kappa: f64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub raw: Option<RawConstants>,
}

impl SystemParams {
    pub fn new(kappa: f64) -> Result<Self> {
        check_kappa(kappa)?;
        Ok(Self { kappa, raw: None })
    }

    /// Derives `κ = m/M` from the raw constants and validates them.
    pub fn from_raw(raw: RawConstants) -> Result<Self> {
        let p = Self {
            kappa: raw.m / raw.big_m,
            raw: Some(raw),
        };
        p.validate()?;
        Ok(p)
    }

    pub fn validate(&self) -> Result<()> {
        check_kappa(self.kappa)?;
        if let Some(raw) = &self.raw {
            if !(raw.m.is_finite() && raw.m > 0.0) {
                return Err(invalid("m", format!("{} must be positive", raw.m)));
            }
            if !(raw.big_m.is_finite() && raw.big_m > 0.0) {
                return Err(invalid("M", format!("{} must be positive", raw.big_m)));
            }
            if raw.c == 0.0 || !raw.c.is_finite() {
                return Err(invalid("c", "must be a nonzero real"));
            }
            let gap = (raw.lambda - raw.mu.conj() * raw.c).norm();
            let scale = raw.lambda.norm().max(raw.mu.norm() * raw.c.abs()).max(1.0);
            if gap > 1e-12 * scale {
                return Err(Error::Inconsistent(format!(
                    "lambda = {} is not c * conj(mu) = {} (gap {gap:e})",
                    raw.lambda,
                    raw.mu.conj() * raw.c
                )));
            }
            let ratio = raw.m / raw.big_m;
            if (self.kappa - ratio).abs() > 1e-12 * ratio {
                return Err(Error::Inconsistent(format!("kappa = {} but m/M = {ratio}", self.kappa)));
            }
        }
        Ok(())
    }
}

fn check_kappa(kappa: f64) -> Result<()> {
    if !(kappa.is_finite() && kappa > 0.0) {
        return Err(invalid("kappa", format!("{kappa} must be positive")));
    }
    Ok(())
}

/// Maps a state of the raw system to the normalized one:
/// `ũ = √(c/2)|μ| u(x/√(2m))`, `ṽ = -(λ/2) v(x/√(2m))`.
///
/// The spatial part is recorded as dilation metadata `l = √(2m)`.
pub fn normalize_system(params: &SystemParams, state: &FieldPair) -> Result<FieldPair> {
    params.validate()?;
    let raw = params
        .raw
        .ok_or_else(|| invalid("raw", "normalization needs m, M, lambda, mu, c"))?;
    if raw.c <= 0.0 {
        return Err(invalid(
            "c",
            format!("{} <= 0 leaves sqrt(c/2) imaginary; only c > 0 is supported", raw.c),
        ));
    }
    if raw.mu.norm() == 0.0 {
        return Err(invalid("mu", "must be nonzero"));
    }
    let a_u = (0.5 * raw.c).sqrt() * raw.mu.norm();
    let b_v = -0.5 * raw.lambda;
    let l = (2.0 * raw.m).sqrt();
    FieldPair::new(state.u.scaled(a_u, l)?, state.v.times(b_v).scaled(1.0, l)?)
}

/// A state `(u, v)` of the system. Both components live on the same grid
/// with the same dilation; amplitudes may differ.
#[derive(Debug, Clone)]
pub struct FieldPair {
    pub u: RadialField,
    pub v: RadialField,
}

impl FieldPair {
    pub fn new(u: RadialField, v: RadialField) -> Result<Self> {
        if !Arc::ptr_eq(u.grid(), v.grid()) && **u.grid() != **v.grid() {
            return Err(Error::GridMismatch(format!(
                "u on (n={}, r_max={}, N={}), v on (n={}, r_max={}, N={})",
                u.grid().dim(),
                u.grid().r_max(),
                u.grid().num_nodes(),
                v.grid().dim(),
                v.grid().r_max(),
                v.grid().num_nodes()
            )));
        }
        if u.dilation() != v.dilation() {
            return Err(Error::GridMismatch(format!(
                "components dilated differently ({} vs {})",
                u.dilation(),
                v.dilation()
            )));
        }
        Ok(Self { u, v })
    }

    pub fn from_real(grid: Arc<RadialGrid>, u: &[f64], v: &[f64]) -> Result<Self> {
        Self::new(
            RadialField::from_real(Arc::clone(&grid), u)?,
            RadialField::from_real(grid, v)?,
        )
    }

    pub fn from_fns(grid: Arc<RadialGrid>, u: impl Fn(f64) -> Complex64, v: impl Fn(f64) -> Complex64) -> Self {
        Self {
            u: RadialField::from_fn(Arc::clone(&grid), u),
            v: RadialField::from_fn(grid, v),
        }
    }

    pub fn zeros(grid: Arc<RadialGrid>) -> Self {
        Self {
            u: RadialField::zeros(Arc::clone(&grid)),
            v: RadialField::zeros(grid),
        }
    }

    pub fn grid(&self) -> &Arc<RadialGrid> {
        self.u.grid()
    }

    pub fn dim(&self) -> usize {
        self.grid().dim()
    }

    pub fn dilation(&self) -> f64 {
        self.u.dilation()
    }

    pub fn is_materialized(&self) -> bool {
        self.u.is_materialized() && self.v.is_materialized()
    }

    /// Folds all metadata into samples, sharing one dilated grid.
    pub fn materialize(&self) -> Self {
        if self.is_materialized() {
            return self.clone();
        }
        let grid = if self.dilation() == 1.0 {
            Arc::clone(self.grid())
        } else {
            Arc::new(
                self.grid()
                    .dilate(self.dilation())
                    .expect("dilation validated at construction"),
            )
        };
        Self {
            u: self.u.materialize_onto(&grid),
            v: self.v.materialize_onto(&grid),
        }
    }

    /// Materializes and zero-pads onto a longer grid with the same spacing.
    pub fn extended(&self, num_nodes: usize) -> Result<Self> {
        let state = self.materialize();
        let grid = Arc::new(state.grid().extended(num_nodes)?);
        let pad = |f: &RadialField| {
            let mut s = f.samples().to_vec();
            s.resize(num_nodes, Complex64::default());
            RadialField::new(Arc::clone(&grid), s)
        };
        Self::new(pad(&state.u)?, pad(&state.v)?)
    }

    /// `(e^{iθ} u, e^{2iθ} v)`.
    pub fn gauge(&self, theta: f64) -> Self {
        Self {
            u: self.u.times(Complex64::from_polar(1.0, theta)),
            v: self.v.times(Complex64::from_polar(1.0, 2.0 * theta)),
        }
    }

    pub fn is_real(&self) -> bool {
        self.u.is_real() && self.v.is_real()
    }
}

/// Snapshot of every functional at one state.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct FunctionalValues {
    #[serde(rename = "Q")]
    pub q: f64,
    #[serde(rename = "E")]
    pub e: f64,
    #[serde(rename = "K")]
    pub k: f64,
    #[serde(rename = "P")]
    pub p: f64,
    #[serde(rename = "I_omega")]
    pub i_omega: f64,
    /// Present only on the positive set P > 0.
    #[serde(rename = "J")]
    pub j: Option<f64>,
}

impl FunctionalValues {
    pub fn compute(state: &FieldPair, kappa: f64, omega: f64) -> Result<Self> {
        check_kappa(kappa)?;
        check_omega(omega)?;
        let q = charge(state);
        let k = kinetic_unchecked(state, kappa);
        let p = interaction(state);
        let e = k - 2.0 * p;
        let j = (p > 0.0).then(|| weinstein_from(state.dim(), q, k, p));
        Ok(Self {
            q,
            e,
            k,
            p,
            i_omega: 0.5 * (e + omega * q),
            j,
        })
    }
}

fn check_omega(omega: f64) -> Result<()> {
    if !(omega.is_finite() && omega > 0.0) {
        return Err(invalid("omega", format!("{omega} must be positive")));
    }
    Ok(())
}

// l^{n + shift}
fn dilation_factor(state: &FieldPair, shift: i32) -> f64 {
    state.dilation().powi(state.dim() as i32 + shift)
}

/// `Q = ||u||² + 2||v||²`.
pub fn charge(state: &FieldPair) -> f64 {
    let g = state.grid();
    let au = state.u.amp();
    let av = state.v.amp();
    let raw = au * au * g.norm_sq(state.u.samples()) + 2.0 * av * av * g.norm_sq(state.v.samples());
    raw * dilation_factor(state, 0)
}

/// `K = ||∇u||² + κ||∇v||²`.
pub fn kinetic(state: &FieldPair, kappa: f64) -> Result<f64> {
    check_kappa(kappa)?;
    Ok(kinetic_unchecked(state, kappa))
}

fn kinetic_unchecked(state: &FieldPair, kappa: f64) -> f64 {
    let g = state.grid();
    let au = state.u.amp();
    let av = state.v.amp();
    let raw = au * au * g.gradient_sq(state.u.samples()) + kappa * av * av * g.gradient_sq(state.v.samples());
    raw * dilation_factor(state, -2)
}

/// `P = Re ∫ u² v̄`, which is `∫ φ²ψ` for real pairs.
pub fn interaction(state: &FieldPair) -> f64 {
    let g = state.grid();
    let s: f64 = g
        .weights()
        .iter()
        .zip(state.u.samples().iter().zip(state.v.samples()))
        .map(|(w, (u, v))| w * (u * u * v.conj()).re)
        .sum();
    let au = state.u.amp();
    s * au * au * state.v.amp() * dilation_factor(state, 0)
}

/// `E = K - 2P`.
pub fn energy(state: &FieldPair, kappa: f64) -> Result<f64> {
    Ok(kinetic(state, kappa)? - 2.0 * interaction(state))
}

/// `I_ω = (E + ωQ)/2`.
pub fn action(state: &FieldPair, kappa: f64, omega: f64) -> Result<f64> {
    check_omega(omega)?;
    Ok(0.5 * (energy(state, kappa)? + omega * charge(state)))
}

/// Weinstein quotient `Q^{3/2-n/4} K^{n/4} / P` on the set P > 0.
pub fn weinstein(state: &FieldPair, kappa: f64) -> Result<f64> {
    let p = interaction(state);
    if p.is_nan() || p <= 0.0 {
        return Err(Error::OutsidePositiveSet { p });
    }
    let q = charge(state);
    let k = kinetic(state, kappa)?;
    Ok(weinstein_from(state.dim(), q, k, p))
}

pub(crate) fn weinstein_from(n: usize, q: f64, k: f64, p: f64) -> f64 {
    let nf = n as f64;
    q.powf(1.5 - 0.25 * nf) * k.powf(0.25 * nf) / p
}

/// `½ ∫ |x|² (|u|² + 2|v|²)`.
pub fn virial_weight(state: &FieldPair) -> f64 {
    let g = state.grid();
    let au2 = state.u.amp().powi(2);
    let av2 = state.v.amp().powi(2);
    let s: f64 = g
        .weights()
        .iter()
        .zip(g.nodes())
        .zip(state.u.samples().iter().zip(state.v.samples()))
        .map(|((w, r), (u, v))| w * r * r * (au2 * u.norm_sqr() + 2.0 * av2 * v.norm_sqr()))
        .sum();
    0.5 * s * dilation_factor(state, 2)
}

/// `a·δ_l` on both components, recorded as metadata only.
pub fn scale(state: &FieldPair, a: f64, l: f64) -> Result<FieldPair> {
    Ok(FieldPair {
        u: state.u.scaled(a, l)?,
        v: state.v.scaled(a, l)?,
    })
}

/// Symmetric-decreasing rearrangement of a real non-negative pair.
///
/// The output keeps the grid and dilation of the input; amplitudes are
/// folded into the samples.
pub fn rearrange(state: &FieldPair) -> Result<FieldPair> {
    let g = Arc::clone(state.grid());
    let u = nonneg_values(&state.u, "u")?;
    let v = nonneg_values(&state.v, "v")?;
    let mut out = FieldPair::from_real(Arc::clone(&g), &rearrange_values(&g, &u), &rearrange_values(&g, &v))?;
    if state.dilation() != 1.0 {
        out = scale(&out, 1.0, state.dilation())?;
    }
    Ok(out)
}

fn nonneg_values(f: &RadialField, name: &str) -> Result<Vec<f64>> {
    let a = f.amp();
    f.samples()
        .iter()
        .enumerate()
        .map(|(j, s)| {
            let x = s.re * a;
            if s.im != 0.0 {
                Err(Error::NotNonNegative(format!("{name} is complex at node {j}")))
            } else if x < 0.0 {
                Err(Error::NotNonNegative(format!("{name}[{j}] = {x:e} < 0")))
            } else {
                Ok(x)
            }
        })
        .collect()
}

/// Decreasing rearrangement of node values with respect to the grid weights.
///
/// Node `j` receives the value whose sorted cumulative weight first exceeds
/// the weighted midpoint of cell `j`. Monotone inputs come back unchanged.
pub fn rearrange_values(grid: &RadialGrid, values: &[f64]) -> Vec<f64> {
    let w = grid.weights();
    let mut order: Vec<usize> = (0..values.len()).collect();
    order.sort_by(|&i, &j| values[j].total_cmp(&values[i]));

    let mut out = Vec::with_capacity(values.len());
    let mut k = 0;
    let mut sorted_mass = w[order[0]];
    let mut cell_start = 0.0;
    for &wj in w {
        let target = cell_start + 0.5 * wj;
        while sorted_mass <= target && k + 1 < order.len() {
            k += 1;
            sorted_mass += w[order[k]];
        }
        out.push(values[order[k]]);
        cell_start += wj;
    }
    out
}

/// True when `values` is nonincreasing.
pub fn is_nonincreasing(values: &[f64]) -> bool {
    values.windows(2).all(|p| p[1] <= p[0])
}
