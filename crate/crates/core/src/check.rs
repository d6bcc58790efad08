//! Finite-difference helpers shared by the unit tests, the acceptance suite
//! and `pointspec selftest`.

/// Central differences of `f` at `x`, one coordinate at a time.
pub fn numeric_grad(x: &[f64], h: f64, mut f: impl FnMut(&[f64]) -> f64) -> Vec<f64> {
    let mut probe = x.to_vec();
    (0..x.len())
        .map(|i| {
            let orig = probe[i];
            probe[i] = orig + h;
            let up = f(&probe);
            probe[i] = orig - h;
            let down = f(&probe);
            probe[i] = orig;
            (up - down) / (2.0 * h)
        })
        .collect()
}

/// Smallest denominator used by [`rel_error`].
pub const REL_FLOOR: f64 = 1e-6;

/// `|a − b| / max(|a|, |b|, REL_FLOOR)`.
pub fn rel_error(a: f64, b: f64) -> f64 {
    (a - b).abs() / a.abs().max(b.abs()).max(REL_FLOOR)
}

pub fn max_rel_error(analytic: &[f64], numeric: &[f64]) -> f64 {
    assert_eq!(analytic.len(), numeric.len(), "gradient length mismatch");
    analytic.iter().zip(numeric).map(|(&a, &b)| rel_error(a, b)).fold(0.0, f64::max)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn quadratic_gradient() {
        let g = numeric_grad(&[1.0, -2.0], 1e-5, |v| v[0] * v[0] + 3.0 * v[1]);
        assert!(max_rel_error(&[2.0, 3.0], &g) < 1e-9);
    }
}
