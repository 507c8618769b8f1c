use nalgebra::{DMatrix, DVector};
use rand::seq::index::sample as sample_indices;
use rand::Rng as _;

use crate::error::{Error, Result};
use crate::linalg::factor_strict;
use crate::metrics::Expectations;
use crate::rng::Seed;
use crate::subset::FeatureSet;

fn binomial(n: usize, k: usize) -> f64 {
    (0..k).fold(1.0, |acc, i| acc * (n - i) as f64 / (i + 1) as f64)
}

/// Shapley kernel weight of a coalition of size `s` out of `d`.
fn kernel_weight(d: usize, s: usize) -> f64 {
    (d - 1) as f64 / (binomial(d, s) * s as f64 * (d - s) as f64)
}

/// Weighted coalitions for the regression. Every proper nonempty subset is
/// used when `2^D - 2 <= budget`; otherwise coalition sizes are drawn in
/// proportion to their total kernel mass and each draw is paired with its
/// complement, all with unit weight.
fn coalitions(d: usize, budget: usize, seed: Seed) -> Vec<(FeatureSet, f64)> {
    if d < 64 && (1u64 << d) - 2 <= budget as u64 {
        return (1..(1u64 << d) - 1)
            .map(|bits| {
                let s = FeatureSet::from_bits(bits);
                (s, kernel_weight(d, s.len()))
            })
            .collect();
    }
    let mass: Vec<f64> = (1..d).map(|s| kernel_weight(d, s) * binomial(d, s)).collect();
    let total: f64 = mass.iter().sum();
    let mut rng = seed.rng();
    let mut out = Vec::with_capacity(budget);
    while out.len() + 2 <= budget {
        let u: f64 = rng.random::<f64>() * total;
        let mut acc = 0.0;
        let mut size = d - 1;
        for (i, m) in mass.iter().enumerate() {
            acc += m;
            if u < acc {
                size = i + 1;
                break;
            }
        }
        let chosen = FeatureSet::from_indices(&sample_indices(&mut rng, d, size).into_vec());
        out.push((chosen, 1.0));
        out.push((chosen.complement(d), 1.0));
    }
    out
}

/// Kernel SHAP with the efficiency constraint imposed exactly: the last
/// coefficient is eliminated as `Δ - Σ_{j<D} φ_j`. Returns the weights and
/// `v(∅)`.
pub fn kernel_shap(ctx: &Expectations, x: &[f64], budget: usize, seed: Seed) -> Result<(Vec<f64>, f64)> {
    let d = ctx.dim();
    let base = ctx.value(x, FeatureSet::empty())?.mean;
    let full = ctx.value(x, FeatureSet::full(d))?.mean;
    let delta = full - base;
    if d == 1 {
        return Ok((vec![delta], base));
    }
    let last = d - 1;
    let mut a = DMatrix::<f64>::zeros(last, last);
    let mut b = DVector::<f64>::zeros(last);
    let mut z = vec![0.0; last];
    for (set, k) in coalitions(d, budget, seed) {
        let y = ctx.value(x, set)?.mean - base;
        let zl = if set.contains(last) { 1.0 } else { 0.0 };
        for (j, zj) in z.iter_mut().enumerate() {
            *zj = if set.contains(j) { 1.0 } else { 0.0 } - zl;
        }
        let yt = y - zl * delta;
        for i in 0..last {
            if z[i] == 0.0 {
                continue;
            }
            b[i] += k * z[i] * yt;
            for j in 0..last {
                a[(i, j)] += k * z[i] * z[j];
            }
        }
    }
    let chol = factor_strict(&a).ok_or_else(|| {
        Error::Singular("kernel SHAP design is singular; increase the coalition budget".into())
    })?;
    let head = chol.solve(&b);
    let mut phi: Vec<f64> = head.iter().copied().collect();
    phi.push(delta - head.sum());
    Ok((phi, base))
}
