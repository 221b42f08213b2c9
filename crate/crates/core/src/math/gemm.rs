//! Safe wrappers over `matrixmultiply::dgemm` for the row-major layouts used
//! by the batched network passes.

fn check(len: usize, need: usize, what: &str) {
    assert!(len >= need, "{what}: buffer of {len} too small for {need}");
}

/// `out[r×n] = beta·out + a[r×k] · bᵀ` where `b` is `n×k` row-major.
///
/// This is the `X·Wᵀ` product of a batch of inputs with a weight matrix
/// stored as `[out, in]`.
pub fn matmul_a_bt(a: &[f64], b: &[f64], r: usize, k: usize, n: usize, beta: f64, out: &mut [f64]) {
    check(a.len(), r * k, "matmul_a_bt lhs");
    check(b.len(), n * k, "matmul_a_bt rhs");
    check(out.len(), r * n, "matmul_a_bt out");
    if r == 0 || n == 0 {
        return;
    }
    // SAFETY: bounds verified above; strides describe row-major buffers.
    unsafe {
        matrixmultiply::dgemm(
            r,
            k,
            n,
            1.0,
            a.as_ptr(),
            k as isize,
            1,
            b.as_ptr(),
            1,
            k as isize,
            beta,
            out.as_mut_ptr(),
            n as isize,
            1,
        );
    }
}

/// `out[r×n] = beta·out + a[r×k] · b[k×n]`.
pub fn matmul(a: &[f64], b: &[f64], r: usize, k: usize, n: usize, beta: f64, out: &mut [f64]) {
    check(a.len(), r * k, "matmul lhs");
    check(b.len(), k * n, "matmul rhs");
    check(out.len(), r * n, "matmul out");
    if r == 0 || n == 0 {
        return;
    }
    // SAFETY: bounds verified above.
    unsafe {
        matrixmultiply::dgemm(
            r,
            k,
            n,
            1.0,
            a.as_ptr(),
            k as isize,
            1,
            b.as_ptr(),
            n as isize,
            1,
            beta,
            out.as_mut_ptr(),
            n as isize,
            1,
        );
    }
}

/// `out[k×n] = beta·out + aᵀ · b` where `a` is `r×k` and `b` is `r×n`.
///
/// Accumulates weight gradients `gradᵀ · input` over a batch.
pub fn matmul_at_b(a: &[f64], b: &[f64], r: usize, k: usize, n: usize, beta: f64, out: &mut [f64]) {
    check(a.len(), r * k, "matmul_at_b lhs");
    check(b.len(), r * n, "matmul_at_b rhs");
    check(out.len(), k * n, "matmul_at_b out");
    if k == 0 || n == 0 {
        return;
    }
    // SAFETY: bounds verified above.
    unsafe {
        matrixmultiply::dgemm(
            k,
            r,
            n,
            1.0,
            a.as_ptr(),
            1,
            k as isize,
            b.as_ptr(),
            n as isize,
            1,
            beta,
            out.as_mut_ptr(),
            n as isize,
            1,
        );
    }
}

/// Strided variant of [`matmul_a_bt`] over a column window of a wider batch
/// matrix: reads `a[i, a_off..a_off+k]` with row stride `a_rs` and writes
/// `out[i, o_off..o_off+n]` with row stride `o_rs`.
#[allow(clippy::too_many_arguments)]
pub fn matmul_a_bt_window(
    a: &[f64],
    a_rs: usize,
    a_off: usize,
    b: &[f64],
    r: usize,
    k: usize,
    n: usize,
    beta: f64,
    out: &mut [f64],
    o_rs: usize,
    o_off: usize,
) {
    if r == 0 || n == 0 {
        return;
    }
    check(a.len(), (r - 1) * a_rs + a_off + k, "window lhs");
    check(b.len(), n * k, "window rhs");
    check(out.len(), (r - 1) * o_rs + o_off + n, "window out");
    // SAFETY: the last touched element of each operand is bounds-checked above.
    unsafe {
        matrixmultiply::dgemm(
            r,
            k,
            n,
            1.0,
            a.as_ptr().add(a_off),
            a_rs as isize,
            1,
            b.as_ptr(),
            1,
            k as isize,
            beta,
            out.as_mut_ptr().add(o_off),
            o_rs as isize,
            1,
        );
    }
}

/// `out[i, o_off..o_off+k] = beta·out + a[i, a_off..a_off+n] · b[n×k]`, the
/// input-gradient counterpart of [`matmul_a_bt_window`].
#[allow(clippy::too_many_arguments)]
pub fn matmul_window(
    a: &[f64],
    a_rs: usize,
    a_off: usize,
    b: &[f64],
    r: usize,
    n: usize,
    k: usize,
    beta: f64,
    out: &mut [f64],
    o_rs: usize,
    o_off: usize,
) {
    if r == 0 || k == 0 {
        return;
    }
    check(a.len(), (r - 1) * a_rs + a_off + n, "window lhs");
    check(b.len(), n * k, "window rhs");
    check(out.len(), (r - 1) * o_rs + o_off + k, "window out");
    // SAFETY: bounds checked above.
    unsafe {
        matrixmultiply::dgemm(
            r,
            n,
            k,
            1.0,
            a.as_ptr().add(a_off),
            a_rs as isize,
            1,
            b.as_ptr(),
            k as isize,
            1,
            beta,
            out.as_mut_ptr().add(o_off),
            o_rs as isize,
            1,
        );
    }
}

/// `out[n×k] = beta·out + a[:, a_off..a_off+n]ᵀ · b[:, b_off..b_off+k]` over
/// `r` batch rows.
#[allow(clippy::too_many_arguments)]
pub fn matmul_at_b_window(
    a: &[f64],
    a_rs: usize,
    a_off: usize,
    b: &[f64],
    b_rs: usize,
    b_off: usize,
    r: usize,
    n: usize,
    k: usize,
    beta: f64,
    out: &mut [f64],
) {
    if n == 0 || k == 0 {
        return;
    }
    check(out.len(), n * k, "window out");
    if r == 0 {
        if beta == 0.0 {
            out[..n * k].fill(0.0);
        }
        return;
    }
    check(a.len(), (r - 1) * a_rs + a_off + n, "window lhs");
    check(b.len(), (r - 1) * b_rs + b_off + k, "window rhs");
    // SAFETY: bounds checked above.
    unsafe {
        matrixmultiply::dgemm(
            n,
            r,
            k,
            1.0,
            a.as_ptr().add(a_off),
            1,
            a_rs as isize,
            b.as_ptr().add(b_off),
            b_rs as isize,
            1,
            beta,
            out.as_mut_ptr(),
            k as isize,
            1,
        );
    }
}
