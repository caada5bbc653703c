//! Finite-difference and quadrature weights on uniform grids.

/// Fornberg's recursion: weights `w[j]` such that
/// `f^{(deriv)}(x0) ≈ Σ_j w[j] f(nodes[j])`.
pub fn fornberg(deriv: usize, x0: f64, nodes: &[f64]) -> Vec<f64> {
    let n = nodes.len();
    assert!(n > deriv, "need more nodes than the derivative order");
    let mut c = vec![vec![0.0; deriv + 1]; n];
    let mut c1 = 1.0;
    let mut c4 = nodes[0] - x0;
    c[0][0] = 1.0;
    for i in 1..n {
        let mn = i.min(deriv);
        let mut c2 = 1.0;
        let c5 = c4;
        c4 = nodes[i] - x0;
        for j in 0..i {
            let c3 = nodes[i] - nodes[j];
            c2 *= c3;
            if j == i - 1 {
                for k in (1..=mn).rev() {
                    c[i][k] = c1 * (k as f64 * c[i - 1][k - 1] - c5 * c[i - 1][k]) / c2;
                }
                c[i][0] = -c1 * c5 * c[i - 1][0] / c2;
            }
            for k in (1..=mn).rev() {
                c[j][k] = (c4 * c[j][k] - k as f64 * c[j][k - 1]) / c3;
            }
            c[j][0] = c4 * c[j][0] / c3;
        }
        c1 = c2;
    }
    c.into_iter().map(|row| row[deriv]).collect()
}

/// Central stencil of the given half-width on unit spacing (offsets
/// `-half..=half`). Divide by `h^deriv` at the call site.
pub fn central(deriv: usize, half: usize) -> Vec<f64> {
    let nodes: Vec<f64> = (-(half as i64)..=half as i64).map(|o| o as f64).collect();
    fornberg(deriv, 0.0, &nodes)
}

/// Weights for `∫_0^1 p(s) ds` where `p` interpolates at the integer
/// `offsets` (unit spacing).
pub fn cell_integral(offsets: &[i64]) -> Vec<f64> {
    let m = offsets.len();
    // Vandermonde moments: Σ_j w_j o_j^k = 1/(k+1)
    let mut a = vec![vec![0.0; m + 1]; m];
    for (k, row) in a.iter_mut().enumerate() {
        for (j, &o) in offsets.iter().enumerate() {
            row[j] = (o as f64).powi(k as i32);
        }
        row[m] = 1.0 / (k as f64 + 1.0);
    }
    solve_dense(a)
}

/// Gaussian elimination with partial pivoting on an augmented matrix.
fn solve_dense(mut a: Vec<Vec<f64>>) -> Vec<f64> {
    let m = a.len();
    for col in 0..m {
        let piv = (col..m)
            .max_by(|&i, &j| a[i][col].abs().total_cmp(&a[j][col].abs()))
            .unwrap();
        a.swap(col, piv);
        for i in col + 1..m {
            let l = a[i][col] / a[col][col];
            for j in col..=m {
                a[i][j] -= l * a[col][j];
            }
        }
    }
    let mut x = vec![0.0; m];
    for i in (0..m).rev() {
        let s: f64 = (i + 1..m).map(|j| a[i][j] * x[j]).sum();
        x[i] = (a[i][m] - s) / a[i][i];
    }
    x
}

/// Lagrange weights for evaluating at `x` the polynomial through `(nodes, ·)`.
pub fn lagrange(x: f64, nodes: &[f64]) -> Vec<f64> {
    (0..nodes.len())
        .map(|j| {
            nodes
                .iter()
                .enumerate()
                .filter(|&(k, _)| k != j)
                .map(|(_, &xk)| (x - xk) / (nodes[j] - xk))
                .product()
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn classic_stencils() {
        let d1 = central(1, 2);
        let expect = [1.0 / 12.0, -8.0 / 12.0, 0.0, 8.0 / 12.0, -1.0 / 12.0];
        for (a, b) in d1.iter().zip(expect) {
            assert!((a - b).abs() < 1e-14);
        }
        let d2 = central(2, 2);
        let expect = [
            -1.0 / 12.0,
            16.0 / 12.0,
            -30.0 / 12.0,
            16.0 / 12.0,
            -1.0 / 12.0,
        ];
        for (a, b) in d2.iter().zip(expect) {
            assert!((a - b).abs() < 1e-13);
        }
    }

    #[test]
    fn sixth_order_exact_on_polynomials() {
        for deriv in 1..=4 {
            let w = central(deriv, 4);
            for p in 0..=8i32 {
                let approx: f64 = w
                    .iter()
                    .enumerate()
                    .map(|(j, wj)| wj * (j as f64 - 4.0).powi(p))
                    .sum();
                let exact = if p as usize == deriv {
                    (1..=deriv).product::<usize>() as f64
                } else {
                    0.0
                };
                assert!(
                    (approx - exact).abs() < 1e-9,
                    "deriv {deriv} p {p}: {approx}"
                );
            }
        }
    }

    #[test]
    fn cell_weights_integrate_polynomials() {
        let offs = [-2, -1, 0, 1, 2, 3];
        let w = cell_integral(&offs);
        for p in 0..6 {
            let approx: f64 = w
                .iter()
                .zip(offs)
                .map(|(wj, o)| wj * (o as f64).powi(p))
                .sum();
            assert!((approx - 1.0 / (p as f64 + 1.0)).abs() < 1e-12);
        }
    }

    #[test]
    fn lagrange_reproduces_quadratics() {
        let nodes = [0.1, 0.3, 0.7];
        let w = lagrange(-0.2, &nodes);
        let f = |x: f64| 2.0 - x + 3.0 * x * x;
        let approx: f64 = w.iter().zip(nodes).map(|(a, x)| a * f(x)).sum();
        assert!((approx - f(-0.2)).abs() < 1e-13);
    }
}
