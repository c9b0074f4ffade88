//! Slice-level kernels. Every reduction runs in ascending index order so
//! results are bitwise reproducible.

use super::CsrMatrix;

/// `c[m×n] = a[m×k] · b[k×n]`
pub fn matmul(a: &[f32], b: &[f32], m: usize, k: usize, n: usize) -> Vec<f32> {
    let mut c = vec![0f32; m * n];
    for i in 0..m {
        let crow = &mut c[i * n..(i + 1) * n];
        let arow = &a[i * k..(i + 1) * k];
        for (p, &av) in arow.iter().enumerate() {
            if av == 0.0 {
                continue;
            }
            let brow = &b[p * n..(p + 1) * n];
            for (cv, &bv) in crow.iter_mut().zip(brow) {
                *cv += av * bv;
            }
        }
    }
    c
}

/// `c[k×n] = a[m×k]ᵀ · b[m×n]`
pub fn matmul_tn(a: &[f32], b: &[f32], m: usize, k: usize, n: usize) -> Vec<f32> {
    let mut c = vec![0f32; k * n];
    for i in 0..m {
        let arow = &a[i * k..(i + 1) * k];
        let brow = &b[i * n..(i + 1) * n];
        for (p, &av) in arow.iter().enumerate() {
            if av == 0.0 {
                continue;
            }
            let crow = &mut c[p * n..(p + 1) * n];
            for (cv, &bv) in crow.iter_mut().zip(brow) {
                *cv += av * bv;
            }
        }
    }
    c
}

/// `c[m×n] = a[m×k] · b[n×k]ᵀ`
pub fn matmul_nt(a: &[f32], b: &[f32], m: usize, k: usize, n: usize) -> Vec<f32> {
    let mut c = vec![0f32; m * n];
    for i in 0..m {
        let arow = &a[i * k..(i + 1) * k];
        for j in 0..n {
            c[i * n + j] = dot(arow, &b[j * k..(j + 1) * k]);
        }
    }
    c
}

pub fn dot(a: &[f32], b: &[f32]) -> f32 {
    let mut s = 0f32;
    for (x, y) in a.iter().zip(b) {
        s += x * y;
    }
    s
}

/// `c[rows×n] = a · b[cols×n]`, summing each row in ascending column order.
pub fn spmm(a: &CsrMatrix, b: &[f32], n: usize) -> Vec<f32> {
    let mut c = vec![0f32; a.n_rows() * n];
    let (cols, vals) = (a.col_idx(), a.values());
    for r in 0..a.n_rows() {
        let crow = &mut c[r * n..(r + 1) * n];
        for k in a.row_range(r) {
            let v = vals[k];
            let brow = &b[cols[k] * n..(cols[k] + 1) * n];
            for (cv, &bv) in crow.iter_mut().zip(brow) {
                *cv += v * bv;
            }
        }
    }
    c
}

pub fn add_assign(dst: &mut [f32], src: &[f32]) {
    for (d, s) in dst.iter_mut().zip(src) {
        *d += s;
    }
}

/// Column sums of a row-major `m×n` matrix.
pub fn sum_rows(a: &[f32], m: usize, n: usize) -> Vec<f32> {
    let mut out = vec![0f32; n];
    for i in 0..m {
        add_assign(&mut out, &a[i * n..(i + 1) * n]);
    }
    out
}
