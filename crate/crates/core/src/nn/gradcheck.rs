use super::Params;

#[derive(Clone, Debug, PartialEq)]
pub struct GradCheck {
    pub max_rel_error: f64,
    /// Tensor and element index where the worst error occurred.
    pub worst: (usize, usize),
    pub analytic: f64,
    pub numeric: f64,
    pub checked: usize,
}

/// Compare analytic gradients against central differences of `loss`.
///
/// The relative error of one coordinate is
/// `|analytic - numeric| / max(|analytic|, |numeric|, 1e-12)`; the maximum
/// over checked coordinates is returned. With `max_per_tensor`, at most that
/// many evenly strided coordinates of each tensor are checked.
pub fn grad_check<N, F>(
    net: &N,
    analytic: &N,
    loss: F,
    eps: f64,
    max_per_tensor: Option<usize>,
) -> GradCheck
where
    N: Params<f64> + Clone,
    F: Fn(&N) -> f64,
{
    let grads: Vec<Vec<f64>> = analytic.params().iter().map(|g| g.to_vec()).collect();
    let sizes: Vec<usize> = net.params().iter().map(|p| p.len()).collect();
    let mut probe = net.clone();
    let mut out = GradCheck {
        max_rel_error: 0.0,
        worst: (0, 0),
        analytic: 0.0,
        numeric: 0.0,
        checked: 0,
    };
    for (t, &size) in sizes.iter().enumerate() {
        let stride = match max_per_tensor {
            Some(limit) if limit > 0 && size > limit => size.div_ceil(limit),
            _ => 1,
        };
        for j in (0..size).step_by(stride) {
            let orig = probe.params()[t][j];
            probe.params_mut()[t][j] = orig + eps;
            let up = loss(&probe);
            probe.params_mut()[t][j] = orig - eps;
            let down = loss(&probe);
            probe.params_mut()[t][j] = orig;
            let numeric = (up - down) / (2.0 * eps);
            let a = grads[t][j];
            let rel = (a - numeric).abs() / a.abs().max(numeric.abs()).max(1e-12);
            out.checked += 1;
            if rel > out.max_rel_error {
                out.max_rel_error = rel;
                out.worst = (t, j);
                out.analytic = a;
                out.numeric = numeric;
            }
        }
    }
    out
}
