//! Central finite-difference oracle for analytic gradients.
//!
//! Every backward pass in this crate is hand-written, so each one is tested
//! against `(f(x + εe) - f(x - εe)) / 2ε` on sampled coordinates. The error
//! measure is the floored relative form `|a - n| / max(|a|, |n|, 1e-8)`,
//! which stays meaningful for gradients near zero.

use ndarray::ArrayD;
use rand::Rng;
use rand_chacha::ChaCha12Rng;

/// Up to `max` distinct flat indices into a tensor of `n` elements.
fn sample_flat_indices(rng: &mut ChaCha12Rng, n: usize, max: usize) -> Vec<usize> {
    if n <= max {
        return (0..n).collect();
    }
    let mut picked = std::collections::BTreeSet::new();
    while picked.len() < max {
        picked.insert(rng.gen_range(0..n));
    }
    picked.into_iter().collect()
}

/// Outcome of a finite-difference sweep.
#[derive(Debug, Clone, Copy)]
pub struct GradCheckReport {
    /// Max over checked coordinates of |analytic - numeric| / max(|a|,|n|,1e-8).
    pub max_rel_err: f64,
    /// Coordinates actually compared.
    pub checked: usize,
}

/// Relative error between an analytic and a numeric derivative.
pub fn rel_err(analytic: f64, numeric: f64) -> f64 {
    (analytic - numeric).abs() / analytic.abs().max(numeric.abs()).max(1e-8)
}

/// Compares `analytic` (the claimed gradient of `f` at `x`) against central
/// differences with step `eps` on up to `max_coords` sampled coordinates.
pub fn grad_check(
    f: &dyn Fn(&ArrayD<f64>) -> f64,
    x: &ArrayD<f64>,
    analytic: &ArrayD<f64>,
    eps: f64,
    max_coords: usize,
    rng: &mut ChaCha12Rng,
) -> GradCheckReport {
    assert_eq!(
        x.shape(),
        analytic.shape(),
        "gradient shape must match input shape"
    );
    let idxs = sample_flat_indices(&mut *rng, x.len(), max_coords);
    let mut max_rel = 0.0f64;
    for &idx in &idxs {
        let mut xp = x.clone();
        xp.as_slice_mut().unwrap()[idx] += eps;
        let mut xm = x.clone();
        xm.as_slice_mut().unwrap()[idx] -= eps;
        let numeric = (f(&xp) - f(&xm)) / (2.0 * eps);
        let a = analytic.as_slice().unwrap()[idx];
        max_rel = max_rel.max(rel_err(a, numeric));
    }
    GradCheckReport {
        max_rel_err: max_rel,
        checked: idxs.len(),
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::nn::testutil::rand_arr;
    use crate::train::loss::{l1_loss, l1_loss_backward};
    use rand::SeedableRng;

    #[test]
    fn linear_map_checks_at_machine_epsilon_scale() {
        let mut rng = ChaCha12Rng::seed_from_u64(0);
        let w = rand_arr(&mut rng, &[10]);
        let x = rand_arr(&mut rng, &[10]);
        let f = |x: &ArrayD<f64>| (x * &w).sum();
        let report = grad_check(&f, &x, &w, 1e-5, 64, &mut rng);
        assert_eq!(report.checked, 10);
        assert!(
            report.max_rel_err < 1e-9,
            "linear map should be exact, got {}",
            report.max_rel_err
        );
    }

    #[test]
    fn l1_loss_checks_away_from_ties() {
        let mut rng = ChaCha12Rng::seed_from_u64(1);
        let gt = rand_arr(&mut rng, &[3, 4]);
        let sr = rand_arr(&mut rng, &[3, 4]);
        let f = |x: &ArrayD<f64>| l1_loss(x, &gt).unwrap();
        let g = l1_loss_backward(&sr, &gt).unwrap();
        let report = grad_check(&f, &sr, &g, 1e-6, 64, &mut rng);
        assert!(report.max_rel_err < 1e-6, "got {}", report.max_rel_err);
    }

    #[test]
    fn sigmoid_composition_checks_tightly() {
        let mut rng = ChaCha12Rng::seed_from_u64(2);
        let x = rand_arr(&mut rng, &[8]);
        let w = rand_arr(&mut rng, &[8]);
        // f(x) = sum sigmoid(w * x)
        let f = |x: &ArrayD<f64>| {
            (x * &w)
                .iter()
                .map(|v| 1.0 / (1.0 + (-v).exp()))
                .sum::<f64>()
        };
        let s = (&x * &w).mapv(|v| 1.0 / (1.0 + (-v).exp()));
        let analytic = &w * &s.mapv(|s| s * (1.0 - s));
        let report = grad_check(&f, &x, &analytic, 1e-5, 64, &mut rng);
        assert!(report.max_rel_err < 1e-7, "got {}", report.max_rel_err);
    }

    #[test]
    fn a_wrong_gradient_is_flagged() {
        let mut rng = ChaCha12Rng::seed_from_u64(3);
        let w = rand_arr(&mut rng, &[6]);
        let x = rand_arr(&mut rng, &[6]);
        let f = |x: &ArrayD<f64>| (x * &w).sum();
        let wrong = w.mapv(|v| v * 1.5 + 0.2);
        let report = grad_check(&f, &x, &wrong, 1e-5, 64, &mut rng);
        assert!(report.max_rel_err > 1e-2);
    }

    #[test]
    fn relative_error_uses_the_floored_denominator() {
        assert_eq!(rel_err(0.0, 0.0), 0.0);
        // Both tiny: denominator floors at 1e-8 instead of exploding.
        let e = rel_err(1e-12, -1e-12);
        assert!((e - 2e-4).abs() < 1e-9);
        // Ordinary case: |2 - 1| / 2.
        assert!((rel_err(2.0, 1.0) - 0.5).abs() < 1e-15);
    }
}
