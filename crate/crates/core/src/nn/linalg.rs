//! Flat-slice matrix kernels for the tiny dense shapes used here.
//! Row-major layout throughout: `w[r * cols + c]`.

/// out += W x
pub fn matvec_add(w: &[f64], rows: usize, cols: usize, x: &[f64], out: &mut [f64]) {
    debug_assert_eq!(w.len(), rows * cols);
    for r in 0..rows {
        let row = &w[r * cols..(r + 1) * cols];
        let mut acc = 0.0;
        for (wv, xv) in row.iter().zip(x) {
            acc += wv * xv;
        }
        out[r] += acc;
    }
}

/// out += W^T d  (d has `rows` entries, out has `cols`)
pub fn matvec_t_add(w: &[f64], rows: usize, cols: usize, d: &[f64], out: &mut [f64]) {
    debug_assert_eq!(w.len(), rows * cols);
    debug_assert_eq!(d.len(), rows);
    debug_assert_eq!(out.len(), cols);
    for r in 0..rows {
        let row = &w[r * cols..(r + 1) * cols];
        let dv = d[r];
        for (o, wv) in out.iter_mut().zip(row) {
            *o += wv * dv;
        }
    }
}

/// grad += d ⊗ x  (outer product accumulation)
pub fn outer_add(d: &[f64], x: &[f64], grad: &mut [f64]) {
    debug_assert_eq!(grad.len(), d.len() * x.len());
    for (r, dv) in d.iter().enumerate() {
        let row = &mut grad[r * x.len()..(r + 1) * x.len()];
        for (g, xv) in row.iter_mut().zip(x) {
            *g += dv * xv;
        }
    }
}

pub fn add_assign(a: &mut [f64], b: &[f64]) {
    debug_assert_eq!(a.len(), b.len());
    for (av, bv) in a.iter_mut().zip(b) {
        *av += bv;
    }
}
