use super::Parameters;

/// Step used by the finite-difference checks.
pub const FD_STEP: f64 = 1e-5;

/// Gradients smaller than this are compared in absolute rather than relative
/// terms.
pub const REL_ERR_FLOOR: f64 = 1e-6;

/// Central differences `(f(x + h e_i) − f(x − h e_i)) / 2h` for every `i`.
pub fn central_difference(mut f: impl FnMut(&[f64]) -> f64, x: &[f64], h: f64) -> Vec<f64> {
    let mut x = x.to_vec();
    (0..x.len())
        .map(|i| {
            let orig = x[i];
            x[i] = orig + h;
            let up = f(&x);
            x[i] = orig - h;
            let down = f(&x);
            x[i] = orig;
            (up - down) / (2.0 * h)
        })
        .collect()
}

/// `max_i |a_i − n_i| / max(|a_i|, |n_i|, REL_ERR_FLOOR)`.
pub fn max_relative_error(analytic: &[f64], numeric: &[f64]) -> f64 {
    assert_eq!(analytic.len(), numeric.len(), "gradient length mismatch");
    analytic
        .iter()
        .zip(numeric)
        .map(|(a, n)| (a - n).abs() / a.abs().max(n.abs()).max(REL_ERR_FLOOR))
        .fold(0.0, f64::max)
}

/// Compares analytic parameter gradients against central differences over
/// every parameter of `model`.
///
/// `loss` returns the scalar loss and the analytic gradient flattened in
/// [`Parameters::param_slices`] order. Returns the maximum relative error.
pub fn fd_gradcheck<P: Parameters>(model: &mut P, mut loss: impl FnMut(&P) -> (f64, Vec<f64>)) -> f64 {
    let (_, analytic) = loss(model);
    assert_eq!(analytic.len(), model.num_params(), "analytic gradient length mismatch");
    let mut numeric = Vec::with_capacity(analytic.len());
    let n_slices = model.param_slices().len();
    for s in 0..n_slices {
        let len = model.param_slices()[s].len();
        for i in 0..len {
            let orig = model.param_slices()[s][i];
            model.param_slices_mut()[s][i] = orig + FD_STEP;
            let up = loss(model).0;
            model.param_slices_mut()[s][i] = orig - FD_STEP;
            let down = loss(model).0;
            model.param_slices_mut()[s][i] = orig;
            numeric.push((up - down) / (2.0 * FD_STEP));
        }
    }
    max_relative_error(&analytic, &numeric)
}
