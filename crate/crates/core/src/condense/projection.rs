//! Euclidean projection onto `C = {x : 0 ≤ xᵢ ≤ 1, Σxᵢ ≤ budget}`.
//!
//! The projection is `clamp(x − μ, 0, 1)` with `μ = 0` when the plain clamp is
//! already within budget, otherwise the unique `μ > 0` at which the clamped
//! sum equals the budget. `μ` is bracketed by bisection and then solved
//! exactly on the identified free set.

const SUM_TOL: f64 = 1e-10;
const MAX_BISECTIONS: usize = 200;

#[inline]
fn clamp01(v: f64) -> f64 {
    v.clamp(0.0, 1.0)
}

fn shifted_sum(values: &[f64], mu: f64) -> f64 {
    values.iter().map(|&v| clamp01(v - mu)).sum()
}

/// Returns the shift `μ ≥ 0` of the projection of `values`.
pub fn projection_shift(values: &[f64], budget: f64) -> f64 {
    let clamped = shifted_sum(values, 0.0);
    if clamped <= budget {
        return 0.0;
    }
    let mut lo = 0.0f64;
    let mut hi = values.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    for _ in 0..MAX_BISECTIONS {
        let mid = 0.5 * (lo + hi);
        if mid <= lo || mid >= hi {
            break;
        }
        let s = shifted_sum(values, mid);
        if s > budget {
            lo = mid;
        } else {
            hi = mid;
        }
        if (s - budget).abs() <= SUM_TOL * 1e-3 {
            break;
        }
    }
    // On (lo, hi) the sets {x−μ ≥ 1} and {0 < x−μ < 1} are (nearly) fixed;
    // solve Σ_free (x − μ) + |ones| = budget exactly.
    let mid = 0.5 * (lo + hi);
    let (mut free_sum, mut n_free, mut n_ones) = (0.0, 0usize, 0usize);
    for &v in values {
        let y = v - mid;
        if y >= 1.0 {
            n_ones += 1;
        } else if y > 0.0 {
            free_sum += v;
            n_free += 1;
        }
    }
    if n_free > 0 {
        let exact = (free_sum - (budget - n_ones as f64)) / n_free as f64;
        if exact.is_finite() && exact > 0.0 && (shifted_sum(values, exact) - budget).abs() <= SUM_TOL {
            return nudge_within_budget(values, budget, exact).unwrap_or(hi);
        }
    }
    hi
}

/// Smallest float at or above `mu` whose clamped sum does not exceed the
/// budget, so a projected vector is a fixed point of the projection.
fn nudge_within_budget(values: &[f64], budget: f64, mut mu: f64) -> Option<f64> {
    for _ in 0..64 {
        if shifted_sum(values, mu) <= budget {
            return Some(mu);
        }
        mu = mu.next_up();
    }
    None
}

/// Euclidean projection of `values` onto the box `[0,1]ⁿ` intersected with
/// `Σx ≤ budget`. A non-positive budget projects onto the origin.
pub fn project_feasible(values: &[f64], budget: f64) -> Vec<f64> {
    let mut out = values.to_vec();
    project_in_place(&mut out, budget);
    out
}

pub fn project_in_place(values: &mut [f64], budget: f64) {
    if budget <= 0.0 {
        values.iter_mut().for_each(|v| *v = 0.0);
        return;
    }
    let mu = projection_shift(values, budget);
    values.iter_mut().for_each(|v| *v = clamp01(*v - mu));
}

/// True when `values` lies in `C` up to `tol` on the budget.
pub fn is_feasible(values: &[f64], budget: f64, tol: f64) -> bool {
    values.iter().all(|v| (0.0..=1.0).contains(v)) && values.iter().sum::<f64>() <= budget + tol
}
