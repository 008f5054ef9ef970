// Matrix kernels. Each output row is computed with a fixed inner-loop order
// regardless of how many rows there are or which thread runs it, so batched,
// chunked and threaded evaluations agree bit for bit.

use crate::par::{self, PAR_MAC_THRESHOLD};

/// `out[m, n] = a[m, k] * b[k, n]`
pub fn matmul_into(a: &[f64], b: &[f64], out: &mut [f64], m: usize, k: usize, n: usize) {
    debug_assert_eq!(a.len(), m * k);
    debug_assert_eq!(b.len(), k * n);
    debug_assert_eq!(out.len(), m * n);
    let parallel = m > 1 && m * k * n >= PAR_MAC_THRESHOLD;
    par::rows_mut(out, n, parallel, |i, row| {
        row.fill(0.0);
        let ai = &a[i * k..(i + 1) * k];
        for (p, &av) in ai.iter().enumerate() {
            if av == 0.0 {
                continue;
            }
            let bp = &b[p * n..(p + 1) * n];
            for (o, &bv) in row.iter_mut().zip(bp) {
                *o += av * bv;
            }
        }
    });
}

/// `out[m, n] = a[m, k] * b[n, k]^T`
pub fn matmul_t_into(a: &[f64], b: &[f64], out: &mut [f64], m: usize, k: usize, n: usize) {
    debug_assert_eq!(a.len(), m * k);
    debug_assert_eq!(b.len(), n * k);
    let parallel = m > 1 && m * k * n >= PAR_MAC_THRESHOLD;
    par::rows_mut(out, n, parallel, |i, row| {
        let ai = &a[i * k..(i + 1) * k];
        for (j, o) in row.iter_mut().enumerate() {
            let bj = &b[j * k..(j + 1) * k];
            *o = ai.iter().zip(bj).map(|(x, y)| x * y).sum();
        }
    });
}

/// `out[k, n] = a[m, k]^T * b[m, n]`
pub fn t_matmul_into(a: &[f64], b: &[f64], out: &mut [f64], m: usize, k: usize, n: usize) {
    debug_assert_eq!(a.len(), m * k);
    debug_assert_eq!(b.len(), m * n);
    let parallel = k > 1 && m * k * n >= PAR_MAC_THRESHOLD;
    par::rows_mut(out, n, parallel, |i, row| {
        row.fill(0.0);
        for r in 0..m {
            let av = a[r * k + i];
            if av == 0.0 {
                continue;
            }
            let br = &b[r * n..(r + 1) * n];
            for (o, &bv) in row.iter_mut().zip(br) {
                *o += av * bv;
            }
        }
    });
}
