use super::tensor::Tensor;

/// Relative error `|a - b| / max(|a|, |b|, 1e-8)`.
pub fn relative_error(a: f64, b: f64) -> f64 {
    (a - b).abs() / a.abs().max(b.abs()).max(1e-8)
}

/// Compares `analytic_grad` to central differences of `loss_fn` at every
/// coordinate of `point` and returns the largest relative error.
pub fn finite_diff_check(loss_fn: impl FnMut(&Tensor) -> f64, point: &Tensor, analytic_grad: &Tensor, h: f64) -> f64 {
    let coords: Vec<usize> = (0..point.len()).collect();
    finite_diff_check_at(loss_fn, point, analytic_grad, h, &coords)
}

/// Same as [`finite_diff_check`] restricted to `coords`.
pub fn finite_diff_check_at(
    mut loss_fn: impl FnMut(&Tensor) -> f64,
    point: &Tensor,
    analytic_grad: &Tensor,
    h: f64,
    coords: &[usize],
) -> f64 {
    assert!(h > 0.0, "finite-difference step must be positive");
    assert_eq!(point.len(), analytic_grad.len(), "gradient length mismatch");
    let mut probe = point.clone();
    let mut worst: f64 = 0.0;
    for &i in coords {
        let original = probe.data()[i];
        probe.data_mut()[i] = original + h;
        let plus = loss_fn(&probe);
        probe.data_mut()[i] = original - h;
        let minus = loss_fn(&probe);
        probe.data_mut()[i] = original;
        let numeric = (plus - minus) / (2.0 * h);
        worst = worst.max(relative_error(numeric, analytic_grad.data()[i]));
    }
    worst
}
