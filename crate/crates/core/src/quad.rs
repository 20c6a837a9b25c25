//! Log-spaced nodes and trapezoid weights in `log t`.

/// `count` log-spaced points from `lo` to `hi` inclusive.
pub fn log_space(lo: f64, hi: f64, count: usize) -> Vec<f64> {
    assert!(count >= 2 && lo > 0.0 && hi > lo);
    let (a, b) = (lo.ln(), hi.ln());
    let step = (b - a) / (count - 1) as f64;
    (0..count)
        .map(|k| match k {
            0 => lo,
            k if k + 1 == count => hi,
            k => (a + step * k as f64).exp(),
        })
        .collect()
}

/// Trapezoid weights for `∫ F(t) dt/t = ∫ F(e^s) ds` on strictly increasing
/// nodes (any spacing).
pub fn dt_over_t_weights(nodes: &[f64]) -> Vec<f64> {
    let n = nodes.len();
    let mut w = vec![0.0; n];
    for k in 0..n.saturating_sub(1) {
        let ds = (nodes[k + 1] / nodes[k]).ln();
        w[k] += 0.5 * ds;
        w[k + 1] += 0.5 * ds;
    }
    w
}

/// Trapezoid weights for `∫ F(u) du` written as `∫ F(e^s) e^s ds`.
pub fn du_weights(nodes: &[f64]) -> Vec<f64> {
    dt_over_t_weights(nodes).into_iter().zip(nodes).map(|(w, u)| w * u).collect()
}
