//! Dense row-major kernels used by the forward and backward passes.

/// `out[n×m] += a[n×k] · b[k×m]`
pub fn mm_acc(a: &[f64], b: &[f64], n: usize, k: usize, m: usize, out: &mut [f64]) {
    debug_assert!(a.len() >= n * k && b.len() >= k * m && out.len() >= n * m);
    for i in 0..n {
        let row = &mut out[i * m..(i + 1) * m];
        for (p, &av) in a[i * k..(i + 1) * k].iter().enumerate() {
            if av == 0.0 {
                continue;
            }
            for (o, &bv) in row.iter_mut().zip(&b[p * m..(p + 1) * m]) {
                *o += av * bv;
            }
        }
    }
}

/// `out[n×m] += a[n×k] · bᵀ` with `b` stored as `[m×k]`.
pub fn mm_bt_acc(a: &[f64], b: &[f64], n: usize, k: usize, m: usize, out: &mut [f64]) {
    for i in 0..n {
        let ar = &a[i * k..(i + 1) * k];
        for j in 0..m {
            out[i * m + j] += dot(ar, &b[j * k..(j + 1) * k]);
        }
    }
}

/// `out[k×m] += aᵀ · b` with `a` stored as `[n×k]` and `b` as `[n×m]`.
pub fn mm_at_acc(a: &[f64], b: &[f64], n: usize, k: usize, m: usize, out: &mut [f64]) {
    for i in 0..n {
        let br = &b[i * m..(i + 1) * m];
        for (p, &av) in a[i * k..(i + 1) * k].iter().enumerate() {
            if av == 0.0 {
                continue;
            }
            for (o, &bv) in out[p * m..(p + 1) * m].iter_mut().zip(br) {
                *o += av * bv;
            }
        }
    }
}

pub fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

pub fn sigmoid(x: f64) -> f64 {
    1.0 / (1.0 + (-x).exp())
}

pub fn silu(x: f64) -> f64 {
    x * sigmoid(x)
}

pub fn silu_grad(x: f64) -> f64 {
    let s = sigmoid(x);
    s * (1.0 + x * (1.0 - s))
}

/// In-place numerically stable softmax.
pub fn softmax(row: &mut [f64]) {
    let max = row.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let mut sum = 0.0;
    for v in row.iter_mut() {
        *v = (*v - max).exp();
        sum += *v;
    }
    for v in row.iter_mut() {
        *v /= sum;
    }
}

/// Adds `bias` to each of the `n` rows of `x`.
pub fn add_bias(x: &mut [f64], bias: &[f64], n: usize) {
    let m = bias.len();
    for i in 0..n {
        for (v, b) in x[i * m..(i + 1) * m].iter_mut().zip(bias) {
            *v += b;
        }
    }
}

/// `out[j] += Σ_i x[i, j]`
pub fn col_sum_acc(x: &[f64], n: usize, m: usize, out: &mut [f64]) {
    for i in 0..n {
        for (o, v) in out.iter_mut().zip(&x[i * m..(i + 1) * m]) {
            *o += v;
        }
    }
}

/// Sinusoidal features of a scalar position: `dim/2` sines then cosines
/// interleaved as (sin, cos) pairs.
pub fn sinusoid(pos: f64, dim: usize) -> Vec<f64> {
    let half = dim / 2;
    let mut out = vec![0.0; dim];
    for i in 0..half {
        let w = 1.0 / 10_000f64.powf(i as f64 / half as f64);
        out[2 * i] = (pos * w).sin();
        out[2 * i + 1] = (pos * w).cos();
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn matmul_variants_agree() {
        let a = [1.0, 2.0, 3.0, 4.0, 5.0, 6.0]; // 2×3
        let b = [1.0, 0.0, -1.0, 2.0, 0.5, 1.0]; // 3×2
        let mut ab = [0.0; 4];
        mm_acc(&a, &b, 2, 3, 2, &mut ab);
        assert_eq!(ab, [1.0 - 2.0 + 1.5, 0.0 + 4.0 + 3.0, 4.0 - 5.0 + 3.0, 10.0 + 6.0]);
        // bᵀ stored explicitly
        let bt = [1.0, -1.0, 0.5, 0.0, 2.0, 1.0];
        let mut ab2 = [0.0; 4];
        mm_bt_acc(&a, &bt, 2, 3, 2, &mut ab2);
        assert_eq!(ab, ab2);
        let mut ata = [0.0; 9];
        mm_at_acc(&a, &a, 2, 3, 3, &mut ata);
        assert_eq!(ata[0], 1.0 + 16.0);
        assert_eq!(ata[5], 2.0 * 3.0 + 5.0 * 6.0);
    }

    #[test]
    fn softmax_rows_sum_to_one() {
        let mut r = [1000.0, 1001.0, 999.0];
        softmax(&mut r);
        assert!((r.iter().sum::<f64>() - 1.0).abs() < 1e-12);
        assert!(r.iter().all(|v| *v > 0.0));
    }

    #[test]
    fn silu_derivative_matches_difference() {
        for x in [-3.0, -0.5, 0.0, 0.7, 4.0] {
            let h = 1e-6;
            let fd = (silu(x + h) - silu(x - h)) / (2.0 * h);
            assert!((fd - silu_grad(x)).abs() < 1e-8);
        }
    }
}
