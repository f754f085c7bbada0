//! Central finite differences for verifying analytic gradients.

/// `|analytic - numeric| / max(|analytic|, |numeric|, 1e-6)`.
///
/// The floor keeps the ratio meaningful when both gradients are near zero.
pub fn relative_error(analytic: f64, numeric: f64) -> f64 {
    (analytic - numeric).abs() / analytic.abs().max(numeric.abs()).max(1e-6)
}

/// Central difference of `f` along coordinate `i` of `x` with step `h`.
pub fn central_difference<F>(mut f: F, x: &mut [f64], i: usize, h: f64) -> f64
where
    F: FnMut(&[f64]) -> f64,
{
    let orig = x[i];
    x[i] = orig + h;
    let plus = f(x);
    x[i] = orig - h;
    let minus = f(x);
    x[i] = orig;
    (plus - minus) / (2.0 * h)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn cubic_derivative() {
        let mut x = [2.0];
        let d = central_difference(|v| v[0].powi(3), &mut x, 0, 1e-5);
        assert!(relative_error(12.0, d) < 1e-9);
        assert_eq!(x[0], 2.0);
    }
}
