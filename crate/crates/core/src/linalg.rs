//! Dense row-major matrix kernels used by the tensor layer.
//!
//! Matrices are passed as flat row-major slices with explicit dimensions.
//! GEMM goes through `matrixmultiply`; the factorizations are delegated to
//! `nalgebra` and re-sorted so that spectra are always non-increasing.

use nalgebra::{DMatrix, SymmetricEigen};

/// `C = A · B` with `A: m×k`, `B: k×n`, all row-major.
pub fn matmul(a: &[f64], m: usize, k: usize, b: &[f64], n: usize) -> Vec<f64> {
    debug_assert_eq!(a.len(), m * k);
    debug_assert_eq!(b.len(), k * n);
    let mut c = vec![0.0; m * n];
    if m == 0 || n == 0 || k == 0 {
        return c;
    }
    // SAFETY: slices are sized m*k, k*n and m*n and the strides describe
    // dense row-major storage of exactly those extents.
    unsafe {
        matrixmultiply::dgemm(
            m,
            k,
            n,
            1.0,
            a.as_ptr(),
            k as isize,
            1,
            b.as_ptr(),
            n as isize,
            1,
            0.0,
            c.as_mut_ptr(),
            n as isize,
            1,
        );
    }
    c
}

/// `C = Aᵀ · B` with `A: k×m`, `B: k×n`, all row-major.
pub fn matmul_tn(a: &[f64], k: usize, m: usize, b: &[f64], n: usize) -> Vec<f64> {
    debug_assert_eq!(a.len(), k * m);
    debug_assert_eq!(b.len(), k * n);
    let mut c = vec![0.0; m * n];
    if m == 0 || n == 0 || k == 0 {
        return c;
    }
    // SAFETY: A is read through transposed strides over its own k*m buffer.
    unsafe {
        matrixmultiply::dgemm(
            m,
            k,
            n,
            1.0,
            a.as_ptr(),
            1,
            m as isize,
            b.as_ptr(),
            n as isize,
            1,
            0.0,
            c.as_mut_ptr(),
            n as isize,
            1,
        );
    }
    c
}

/// `C = A · Bᵀ` with `A: m×k`, `B: n×k`, all row-major.
pub fn matmul_nt(a: &[f64], m: usize, k: usize, b: &[f64], n: usize) -> Vec<f64> {
    debug_assert_eq!(a.len(), m * k);
    debug_assert_eq!(b.len(), n * k);
    let mut c = vec![0.0; m * n];
    if m == 0 || n == 0 || k == 0 {
        return c;
    }
    // SAFETY: B is read through transposed strides over its own n*k buffer.
    unsafe {
        matrixmultiply::dgemm(
            m,
            k,
            n,
            1.0,
            a.as_ptr(),
            k as isize,
            1,
            b.as_ptr(),
            1,
            k as isize,
            0.0,
            c.as_mut_ptr(),
            n as isize,
            1,
        );
    }
    c
}

/// Thin SVD of a row-major `m×n` matrix.
///
/// Returns `(u, s, v)` with `u: m×r`, `v: n×r` (both row-major, orthonormal
/// columns) and `s` non-increasing, where `r = min(m, n)`.
pub fn svd(a: &[f64], m: usize, n: usize) -> (Vec<f64>, Vec<f64>, Vec<f64>) {
    let r = m.min(n);
    let mat = DMatrix::from_row_slice(m, n, &flush_tiny(a));
    let dec = mat.svd(true, true);
    let u = dec.u.expect("u requested");
    let vt = dec.v_t.expect("v_t requested");
    let mut order: Vec<usize> = (0..r).collect();
    order.sort_by(|&i, &j| {
        dec.singular_values[j].partial_cmp(&dec.singular_values[i]).unwrap_or(std::cmp::Ordering::Equal).then(i.cmp(&j))
    });
    let mut uo = vec![0.0; m * r];
    let mut vo = vec![0.0; n * r];
    let mut so = vec![0.0; r];
    for (c, &src) in order.iter().enumerate() {
        so[c] = dec.singular_values[src].max(0.0);
        for i in 0..m {
            uo[i * r + c] = u[(i, src)];
        }
        for j in 0..n {
            vo[j * r + c] = vt[(src, j)];
        }
    }
    (uo, so, vo)
}

/// Zeroes entries 100 orders of magnitude below the largest. The Jacobi
/// and QR sweeps square entries, and near-underflow inputs (common once a
/// fixed point is almost rank one) otherwise turn into inf/NaN.
fn flush_tiny(a: &[f64]) -> Vec<f64> {
    let m = a.iter().fold(0.0f64, |m, v| m.max(v.abs()));
    let floor = m * 1e-100;
    a.iter().map(|&v| if v.abs() < floor { 0.0 } else { v }).collect()
}

/// Eigen-decomposition of a symmetric row-major `n×n` matrix.
///
/// Returns eigenvalues in non-increasing order together with the matching
/// eigenvectors as the columns of a row-major `n×n` matrix.
pub fn sym_eig(a: &[f64], n: usize) -> (Vec<f64>, Vec<f64>) {
    let mut mat = DMatrix::from_row_slice(n, n, &flush_tiny(a));
    // symmetrize to wash out rounding asymmetry from Gram accumulations
    for i in 0..n {
        for j in (i + 1)..n {
            let v = 0.5 * (mat[(i, j)] + mat[(j, i)]);
            mat[(i, j)] = v;
            mat[(j, i)] = v;
        }
    }
    let dec = SymmetricEigen::new(mat);
    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&i, &j| {
        dec.eigenvalues[j].partial_cmp(&dec.eigenvalues[i]).unwrap_or(std::cmp::Ordering::Equal).then(i.cmp(&j))
    });
    let mut vals = vec![0.0; n];
    let mut vecs = vec![0.0; n * n];
    for (c, &src) in order.iter().enumerate() {
        vals[c] = dec.eigenvalues[src];
        for i in 0..n {
            vecs[i * n + c] = dec.eigenvectors[(i, src)];
        }
    }
    (vals, vecs)
}

/// [`sym_eig`] of a matrix that commutes with the grading `parity`: each
/// sector is diagonalized on its own and the eigenvector columns are
/// supported on one sector. Returns `(values, vectors, column parity)`, the
/// values non-increasing with ties keeping the even sector first.
pub fn sym_eig_graded(a: &[f64], n: usize, parity: &[i8]) -> (Vec<f64>, Vec<f64>, Vec<i8>) {
    let mut cols: Vec<(f64, i8, Vec<f64>)> = Vec::with_capacity(n);
    for p in [1i8, -1] {
        let idx: Vec<usize> = (0..n).filter(|&i| parity[i] == p).collect();
        let k = idx.len();
        if k == 0 {
            continue;
        }
        let mut sub = Vec::with_capacity(k * k);
        for &i in &idx {
            sub.extend(idx.iter().map(|&j| a[i * n + j]));
        }
        let (vals, vecs) = sym_eig(&sub, k);
        for c in 0..k {
            let mut full = vec![0.0; n];
            for (r, &i) in idx.iter().enumerate() {
                full[i] = vecs[r * k + c];
            }
            cols.push((vals[c], p, full));
        }
    }
    cols.sort_by(|x, y| y.0.partial_cmp(&x.0).unwrap_or(std::cmp::Ordering::Equal));
    let mut vecs = vec![0.0; n * n];
    for (c, (_, _, v)) in cols.iter().enumerate() {
        for i in 0..n {
            vecs[i * n + c] = v[i];
        }
    }
    (cols.iter().map(|c| c.0).collect(), vecs, cols.iter().map(|c| c.1).collect())
}

/// Solves `A x = b` for a symmetric positive definite row-major `A`.
///
/// Falls back to an LU solve when the Cholesky factorization breaks down
/// (which only happens when the ridge term is below rounding level).
pub fn solve_spd(a: &[f64], n: usize, b: &[f64]) -> Vec<f64> {
    let mat = DMatrix::from_row_slice(n, n, a);
    let rhs = nalgebra::DVector::from_column_slice(b);
    if let Some(ch) = mat.clone().cholesky() {
        return ch.solve(&rhs).iter().copied().collect();
    }
    match mat.lu().solve(&rhs) {
        Some(x) => x.iter().copied().collect(),
        None => vec![0.0; n],
    }
}

/// Flips the sign of each column so that its largest-magnitude entry is
/// positive; ties go to the lowest row index. `partner` columns are flipped
/// together with `cols`.
pub fn fix_column_signs(cols: &mut [f64], rows: usize, ncols: usize, partner: &mut [f64], prow: usize) {
    for c in 0..ncols {
        let mut best = 0usize;
        let mut best_abs = -1.0f64;
        for i in 0..rows {
            let v = cols[i * ncols + c].abs();
            if v > best_abs {
                best_abs = v;
                best = i;
            }
        }
        if rows > 0 && cols[best * ncols + c] < 0.0 {
            for i in 0..rows {
                cols[i * ncols + c] = -cols[i * ncols + c];
            }
            for i in 0..prow {
                partner[i * ncols + c] = -partner[i * ncols + c];
            }
        }
    }
}
