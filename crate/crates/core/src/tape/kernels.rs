//! Inner loops for the heavier primitives. Plain slices in, plain slices out.

/// `c[m,n] += a[m,k] * b[k,n]`
pub(super) fn matmul_acc(a: &[f64], b: &[f64], c: &mut [f64], m: usize, k: usize, n: usize) {
    for i in 0..m {
        let c_row = &mut c[i * n..(i + 1) * n];
        for p in 0..k {
            let av = a[i * k + p];
            if av == 0.0 {
                continue;
            }
            let b_row = &b[p * n..(p + 1) * n];
            for (cv, bv) in c_row.iter_mut().zip(b_row) {
                *cv += av * bv;
            }
        }
    }
}

/// `c[m,n] += a[m,k] * b[n,k]^T`
pub(super) fn matmul_bt_acc(a: &[f64], b: &[f64], c: &mut [f64], m: usize, k: usize, n: usize) {
    for i in 0..m {
        let a_row = &a[i * k..(i + 1) * k];
        for j in 0..n {
            let b_row = &b[j * k..(j + 1) * k];
            c[i * n + j] += dot(a_row, b_row);
        }
    }
}

/// `c[k,n] += a[m,k]^T * b[m,n]`
pub(super) fn matmul_at_acc(a: &[f64], b: &[f64], c: &mut [f64], m: usize, k: usize, n: usize) {
    for i in 0..m {
        let b_row = &b[i * n..(i + 1) * n];
        for p in 0..k {
            let av = a[i * k + p];
            if av == 0.0 {
                continue;
            }
            let c_row = &mut c[p * n..(p + 1) * n];
            for (cv, bv) in c_row.iter_mut().zip(b_row) {
                *cv += av * bv;
            }
        }
    }
}

#[inline]
pub(super) fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

/// Output positions `o` for which tap `k` of a 3-wide kernel with padding 1
/// reads input `o + k - 1` inside `[0, n)`.
#[inline]
fn tap_range(k: usize, n: usize) -> (usize, usize) {
    match k {
        0 => (1, n),
        1 => (0, n),
        _ => (0, n - 1),
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub(super) struct ConvDims {
    pub batch: usize,
    pub c_in: usize,
    pub c_out: usize,
    pub h: usize,
    pub w: usize,
}

/// 3x3 cross-correlation, stride 1, zero padding 1.
pub(super) fn conv3x3_forward(x: &[f64], kernels: &[f64], bias: Option<&[f64]>, d: ConvDims) -> alloc::vec::Vec<f64> {
    let hw = d.h * d.w;
    let mut out = alloc::vec![0.0; d.batch * d.c_out * hw];
    for b in 0..d.batch {
        for o in 0..d.c_out {
            let out_plane = &mut out[(b * d.c_out + o) * hw..(b * d.c_out + o + 1) * hw];
            if let Some(bias) = bias {
                out_plane.fill(bias[o]);
            }
            for c in 0..d.c_in {
                let in_plane = &x[(b * d.c_in + c) * hw..(b * d.c_in + c + 1) * hw];
                let kern = &kernels[(o * d.c_in + c) * 9..(o * d.c_in + c + 1) * 9];
                for ky in 0..3 {
                    let (ylo, yhi) = tap_range(ky, d.h);
                    for kx in 0..3 {
                        let wv = kern[ky * 3 + kx];
                        if wv == 0.0 {
                            continue;
                        }
                        let (xlo, xhi) = tap_range(kx, d.w);
                        let len = xhi - xlo;
                        for y in ylo..yhi {
                            let iy = y + ky - 1;
                            let out_row = &mut out_plane[y * d.w + xlo..y * d.w + xlo + len];
                            let in_start = iy * d.w + xlo + kx - 1;
                            let in_row = &in_plane[in_start..in_start + len];
                            for (ov, iv) in out_row.iter_mut().zip(in_row) {
                                *ov += wv * iv;
                            }
                        }
                    }
                }
            }
        }
    }
    out
}

/// Gradient of [`conv3x3_forward`] with respect to its input.
pub(super) fn conv3x3_backward_input(dout: &[f64], kernels: &[f64], dx: &mut [f64], d: ConvDims) {
    let hw = d.h * d.w;
    for b in 0..d.batch {
        for o in 0..d.c_out {
            let g_plane = &dout[(b * d.c_out + o) * hw..(b * d.c_out + o + 1) * hw];
            for c in 0..d.c_in {
                let dx_plane = &mut dx[(b * d.c_in + c) * hw..(b * d.c_in + c + 1) * hw];
                let kern = &kernels[(o * d.c_in + c) * 9..(o * d.c_in + c + 1) * 9];
                for ky in 0..3 {
                    let (ylo, yhi) = tap_range(ky, d.h);
                    for kx in 0..3 {
                        let wv = kern[ky * 3 + kx];
                        if wv == 0.0 {
                            continue;
                        }
                        let (xlo, xhi) = tap_range(kx, d.w);
                        let len = xhi - xlo;
                        for y in ylo..yhi {
                            let iy = y + ky - 1;
                            let g_row = &g_plane[y * d.w + xlo..y * d.w + xlo + len];
                            let start = iy * d.w + xlo + kx - 1;
                            let dx_row = &mut dx_plane[start..start + len];
                            for (dv, gv) in dx_row.iter_mut().zip(g_row) {
                                *dv += wv * gv;
                            }
                        }
                    }
                }
            }
        }
    }
}

/// Gradient of [`conv3x3_forward`] with respect to kernels and bias.
pub(super) fn conv3x3_backward_params(
    dout: &[f64],
    x: &[f64],
    dk: Option<&mut [f64]>,
    dbias: Option<&mut [f64]>,
    d: ConvDims,
) {
    let hw = d.h * d.w;
    if let Some(dk) = dk {
        for b in 0..d.batch {
            for o in 0..d.c_out {
                let g_plane = &dout[(b * d.c_out + o) * hw..(b * d.c_out + o + 1) * hw];
                for c in 0..d.c_in {
                    let in_plane = &x[(b * d.c_in + c) * hw..(b * d.c_in + c + 1) * hw];
                    for ky in 0..3 {
                        let (ylo, yhi) = tap_range(ky, d.h);
                        for kx in 0..3 {
                            let (xlo, xhi) = tap_range(kx, d.w);
                            let len = xhi - xlo;
                            let mut acc = 0.0;
                            for y in ylo..yhi {
                                let iy = y + ky - 1;
                                let start = iy * d.w + xlo + kx - 1;
                                acc += dot(
                                    &g_plane[y * d.w + xlo..y * d.w + xlo + len],
                                    &in_plane[start..start + len],
                                );
                            }
                            dk[((o * d.c_in + c) * 3 + ky) * 3 + kx] += acc;
                        }
                    }
                }
            }
        }
    }
    if let Some(db) = dbias {
        for b in 0..d.batch {
            for (o, dbv) in db.iter_mut().enumerate() {
                *dbv += dout[(b * d.c_out + o) * hw..(b * d.c_out + o + 1) * hw]
                    .iter()
                    .sum::<f64>();
            }
        }
    }
}
