//! Central finite differences, used as an independent oracle for adjoints.

/// Step used by the finite-difference checks throughout the workspace.
pub const DEFAULT_STEP: f64 = 1e-5;

/// Central-difference estimate of `d f / d x[i]` for every index in `which`.
pub fn central_difference<F>(mut f: F, x: &[f64], which: &[usize], step: f64) -> Vec<f64>
where
    F: FnMut(&[f64]) -> f64,
{
    let mut probe = x.to_vec();
    which
        .iter()
        .map(|&i| {
            let orig = probe[i];
            probe[i] = orig + step;
            let up = f(&probe);
            probe[i] = orig - step;
            let down = f(&probe);
            probe[i] = orig;
            (up - down) / (2.0 * step)
        })
        .collect()
}

/// `|a - b| / max(|a|, |b|, floor)`.
///
/// The floor keeps the ratio meaningful for derivatives that are zero up to
/// round-off, where both sides are pure noise.
pub fn relative_error(analytic: f64, numeric: f64, floor: f64) -> f64 {
    let denom = analytic.abs().max(numeric.abs()).max(floor);
    (analytic - numeric).abs() / denom
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn cubic() {
        let d = central_difference(|x| x[0].powi(3), &[2.0], &[0], DEFAULT_STEP);
        assert!((d[0] - 12.0).abs() < 1e-8);
    }
}
