//! Finite-difference helpers for verifying analytic gradients.

/// Central differences `(f(x + h e_i) − f(x − h e_i)) / 2h` for every coordinate.
pub fn central_difference<F>(f: F, point: &[f64], step: f64) -> Vec<f64>
where
    F: Fn(&[f64]) -> f64,
{
    let mut probe = point.to_vec();
    (0..point.len())
        .map(|i| {
            probe[i] = point[i] + step;
            let up = f(&probe);
            probe[i] = point[i] - step;
            let down = f(&probe);
            probe[i] = point[i];
            (up - down) / (2.0 * step)
        })
        .collect()
}

/// Denominator floor for [`relative_error`]; below it the comparison is absolute.
pub const RELATIVE_FLOOR: f64 = 1e-6;

/// `|a − b| / max(|a|, |b|, RELATIVE_FLOOR)`.
pub fn relative_error(a: f64, b: f64) -> f64 {
    (a - b).abs() / a.abs().max(b.abs()).max(RELATIVE_FLOOR)
}
