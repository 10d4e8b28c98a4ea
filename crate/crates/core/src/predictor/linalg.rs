//! Row-major dense products on top of `matrixmultiply`.

/// `c = a · b (+ c when accumulate)`, with `a: m×k`, `b: k×n`, `c: m×n`.
pub fn matmul(a: &[f64], b: &[f64], c: &mut [f64], m: usize, k: usize, n: usize, accumulate: bool) {
    debug_assert!(a.len() >= m * k && b.len() >= k * n && c.len() >= m * n);
    let beta = if accumulate { 1.0 } else { 0.0 };
    // SAFETY: slice lengths checked above; strides describe row-major layouts
    // that stay within each slice.
    unsafe {
        matrixmultiply::dgemm(
            m, k, n, 1.0,
            a.as_ptr(), k as isize, 1,
            b.as_ptr(), n as isize, 1,
            beta,
            c.as_mut_ptr(), n as isize, 1,
        );
    }
}

/// `c = aᵀ · b (+ c)`, with `a: m×k`, `b: m×n`, `c: k×n`.
pub fn matmul_at_b(a: &[f64], b: &[f64], c: &mut [f64], m: usize, k: usize, n: usize, accumulate: bool) {
    debug_assert!(a.len() >= m * k && b.len() >= m * n && c.len() >= k * n);
    let beta = if accumulate { 1.0 } else { 0.0 };
    // SAFETY: as above; `a` is read through transposed strides.
    unsafe {
        matrixmultiply::dgemm(
            k, m, n, 1.0,
            a.as_ptr(), 1, k as isize,
            b.as_ptr(), n as isize, 1,
            beta,
            c.as_mut_ptr(), n as isize, 1,
        );
    }
}

/// `c = a · bᵀ`, with `a: m×n`, `b: k×n`, `c: m×k`.
pub fn matmul_a_bt(a: &[f64], b: &[f64], c: &mut [f64], m: usize, n: usize, k: usize) {
    debug_assert!(a.len() >= m * n && b.len() >= k * n && c.len() >= m * k);
    // SAFETY: as above; `b` is read through transposed strides.
    unsafe {
        matrixmultiply::dgemm(
            m, n, k, 1.0,
            a.as_ptr(), n as isize, 1,
            b.as_ptr(), 1, n as isize,
            0.0,
            c.as_mut_ptr(), k as isize, 1,
        );
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn naive(a: &[f64], b: &[f64], m: usize, k: usize, n: usize) -> Vec<f64> {
        let mut c = vec![0.0; m * n];
        for i in 0..m {
            for j in 0..n {
                for p in 0..k {
                    c[i * n + j] += a[i * k + p] * b[p * n + j];
                }
            }
        }
        c
    }

    fn transpose(a: &[f64], r: usize, c: usize) -> Vec<f64> {
        let mut t = vec![0.0; r * c];
        for i in 0..r {
            for j in 0..c {
                t[j * r + i] = a[i * c + j];
            }
        }
        t
    }

    fn close(a: &[f64], b: &[f64]) {
        assert_eq!(a.len(), b.len());
        for (x, y) in a.iter().zip(b) {
            assert!((x - y).abs() <= 1e-12 * (1.0 + y.abs()), "{x} vs {y}");
        }
    }

    #[test]
    fn products_match_naive() {
        let (m, k, n) = (5, 3, 4);
        let a: Vec<f64> = (0..m * k).map(|v| v as f64 * 0.5 - 2.0).collect();
        let b: Vec<f64> = (0..k * n).map(|v| (v as f64).sin()).collect();
        let mut c = vec![0.0; m * n];
        matmul(&a, &b, &mut c, m, k, n, false);
        close(&c, &naive(&a, &b, m, k, n));

        // aᵀ·x with a: m×k, x: m×n.
        let x: Vec<f64> = (0..m * n).map(|v| v as f64).collect();
        let mut c = vec![0.0; k * n];
        matmul_at_b(&a, &x, &mut c, m, k, n, false);
        let want = naive(&transpose(&a, m, k), &x, k, m, n);
        for (g, w) in c.iter().zip(&want) {
            assert!((g - w).abs() < 1e-12);
        }

        // x·bᵀ with x: m×n, b: k×n.
        let bb: Vec<f64> = (0..k * n).map(|v| v as f64 - 3.0).collect();
        let mut c = vec![0.0; m * k];
        matmul_a_bt(&x, &bb, &mut c, m, n, k);
        let want = naive(&x, &transpose(&bb, k, n), m, n, k);
        for (g, w) in c.iter().zip(&want) {
            assert!((g - w).abs() < 1e-12);
        }
    }
}
