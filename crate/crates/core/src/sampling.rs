//! Seeded random test data.

use std::sync::Arc;

use num_complex::Complex64;
use rand::Rng;

use crate::error::Result;
use crate::functionals::{interaction, FieldPair};
use crate::radial_grid::RadialGrid;

/// Random radial profile: a few Gaussian shells with random signs, widths and
/// centres, optionally with a radially varying phase.
fn random_profile<R: Rng>(grid: &RadialGrid, rng: &mut R, complex: bool) -> Vec<Complex64> {
    let extent = 0.25 * grid.r_max();
    let bumps: Vec<(f64, f64, f64)> = (0..rng.gen_range(1..=4))
        .map(|_| {
            let amp = rng.gen_range(-1.0..1.0) * 3.0;
            let centre = rng.gen_range(0.0..0.5) * extent;
            let width = rng.gen_range(0.05..0.3) * extent;
            (amp, centre, width)
        })
        .collect();
    let twist = if complex {
        rng.gen_range(-1.0..1.0) / extent
    } else {
        0.0
    };
    grid.nodes()
        .iter()
        .map(|&r| {
            let m: f64 = bumps.iter().map(|&(a, c, w)| a * (-((r - c) / w).powi(2)).exp()).sum();
            Complex64::from_polar(m, twist * r)
        })
        .collect()
}

/// Random pair with P > 0 on `grid`; about a third are complex.
pub fn random_positive_pair<R: Rng>(grid: &Arc<RadialGrid>, rng: &mut R) -> Result<FieldPair> {
    loop {
        let complex = rng.gen_bool(1.0 / 3.0);
        let u = random_profile(grid, rng, complex);
        let mut v = random_profile(grid, rng, complex);
        let probe = FieldPair::new(
            crate::RadialField::new(Arc::clone(grid), u.clone())?,
            crate::RadialField::new(Arc::clone(grid), v.clone())?,
        )?;
        let p = interaction(&probe);
        if p.abs() < 1e-12 {
            continue;
        }
        if p < 0.0 {
            v.iter_mut().for_each(|z| *z = -*z);
        }
        return FieldPair::new(
            crate::RadialField::new(Arc::clone(grid), u)?,
            crate::RadialField::new(Arc::clone(grid), v)?,
        );
    }
}

/// Random `(a, l)` with `a ∈ ±[0.1, 10]` and `l ∈ [0.1, 10]`, log-uniform.
pub fn random_scaling<R: Rng>(rng: &mut R) -> (f64, f64) {
    let a = 10f64.powf(rng.gen_range(-1.0..1.0)) * if rng.gen_bool(0.5) { 1.0 } else { -1.0 };
    let l = 10f64.powf(rng.gen_range(-1.0..1.0));
    (a, l)
}
