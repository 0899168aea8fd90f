/// Central differences `(f(x+ε) − f(x−ε)) / 2ε` for every coordinate of `x`.
pub fn finite_diff(mut f: impl FnMut(&[f64]) -> f64, x: &[f64], eps: f64) -> Vec<f64> {
    let mut probe = x.to_vec();
    (0..x.len())
        .map(|i| {
            probe[i] = x[i] + eps;
            let up = f(&probe);
            probe[i] = x[i] - eps;
            let down = f(&probe);
            probe[i] = x[i];
            (up - down) / (2.0 * eps)
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn polynomials() {
        let g = finite_diff(|v| 3.0 * v[0] - 2.0 * v[1], &[0.3, -1.0], 1e-3);
        assert!((g[0] - 3.0).abs() < 1e-9 && (g[1] + 2.0).abs() < 1e-9);
        let g = finite_diff(|v| v[0] * v[0], &[1.5], 1e-2);
        assert!((g[0] - 3.0).abs() < 1e-4);
    }
}
