//! Raw numeric kernels over flat row-major buffers. Accumulation order is
//! fixed, so results are bitwise reproducible.

pub(crate) fn dot(a: &[f64], b: &[f64]) -> f64 {
    debug_assert_eq!(a.len(), b.len());
    let mut acc = [0.0f64; 4];
    let chunks = a.len() / 4;
    for c in 0..chunks {
        let i = c * 4;
        acc[0] += a[i] * b[i];
        acc[1] += a[i + 1] * b[i + 1];
        acc[2] += a[i + 2] * b[i + 2];
        acc[3] += a[i + 3] * b[i + 3];
    }
    let mut tail = 0.0;
    for i in chunks * 4..a.len() {
        tail += a[i] * b[i];
    }
    (acc[0] + acc[1]) + (acc[2] + acc[3]) + tail
}

#[inline]
fn axpy(acc: &mut [f64], alpha: f64, x: &[f64]) {
    for (a, &v) in acc.iter_mut().zip(x) {
        *a += alpha * v;
    }
}

/// `[m,k] x [k,n] -> [m,n]`
pub(crate) fn matmul(a: &[f64], b: &[f64], m: usize, k: usize, n: usize) -> Vec<f64> {
    let mut out = Vec::with_capacity(m * n);
    let mut acc = vec![0.0f64; n];
    for i in 0..m {
        acc.iter_mut().for_each(|v| *v = 0.0);
        for p in 0..k {
            let av = a[i * k + p];
            if av != 0.0 {
                axpy(&mut acc, av, &b[p * n..(p + 1) * n]);
            }
        }
        out.extend(acc.iter().copied());
    }
    out
}

/// Gradient w.r.t. the left operand: `dY · Bᵀ`.
pub(crate) fn matmul_grad_lhs(dy: &[f64], b: &[f64], m: usize, k: usize, n: usize) -> Vec<f64> {
    let mut out = Vec::with_capacity(m * k);
    for i in 0..m {
        let row = &dy[i * n..(i + 1) * n];
        for p in 0..k {
            out.push(dot(row, &b[p * n..(p + 1) * n]));
        }
    }
    out
}

/// Gradient w.r.t. the right operand: `Aᵀ · dY`.
pub(crate) fn matmul_grad_rhs(a: &[f64], dy: &[f64], m: usize, k: usize, n: usize) -> Vec<f64> {
    let mut acc = vec![0.0f64; k * n];
    for i in 0..m {
        let row = &dy[i * n..(i + 1) * n];
        for p in 0..k {
            let av = a[i * k + p];
            if av != 0.0 {
                axpy(&mut acc[p * n..(p + 1) * n], av, row);
            }
        }
    }
    acc
}

/// Geometry of a 2-D convolution from `[c_in, h, w]` to `[c_out, oh, ow]`.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub(crate) struct ConvGeom {
    pub c_in: usize,
    pub h: usize,
    pub w: usize,
    pub c_out: usize,
    pub kh: usize,
    pub kw: usize,
    pub stride: usize,
    pub pad: usize,
    pub oh: usize,
    pub ow: usize,
}

impl ConvGeom {
    fn taps(&self) -> usize {
        self.c_in * self.kh * self.kw
    }

    fn positions(&self) -> usize {
        self.oh * self.ow
    }
}

fn im2col(input: &[f64], g: &ConvGeom) -> Vec<f64> {
    let p_len = g.positions();
    let mut col = vec![0.0f64; g.taps() * p_len];
    for c in 0..g.c_in {
        for i in 0..g.kh {
            for j in 0..g.kw {
                let k = (c * g.kh + i) * g.kw + j;
                let dst = &mut col[k * p_len..(k + 1) * p_len];
                for oy in 0..g.oh {
                    let y = (oy * g.stride + i) as isize - g.pad as isize;
                    if y < 0 || y >= g.h as isize {
                        continue;
                    }
                    let src_row = &input[(c * g.h + y as usize) * g.w..][..g.w];
                    for ox in 0..g.ow {
                        let x = (ox * g.stride + j) as isize - g.pad as isize;
                        if x >= 0 && x < g.w as isize {
                            dst[oy * g.ow + ox] = src_row[x as usize];
                        }
                    }
                }
            }
        }
    }
    col
}

fn col2im_add(dcol: &[f64], g: &ConvGeom, out: &mut [f64]) {
    let p_len = g.positions();
    for c in 0..g.c_in {
        for i in 0..g.kh {
            for j in 0..g.kw {
                let k = (c * g.kh + i) * g.kw + j;
                let src = &dcol[k * p_len..(k + 1) * p_len];
                for oy in 0..g.oh {
                    let y = (oy * g.stride + i) as isize - g.pad as isize;
                    if y < 0 || y >= g.h as isize {
                        continue;
                    }
                    let dst_row = &mut out[(c * g.h + y as usize) * g.w..][..g.w];
                    for ox in 0..g.ow {
                        let x = (ox * g.stride + j) as isize - g.pad as isize;
                        if x >= 0 && x < g.w as isize {
                            dst_row[x as usize] += src[oy * g.ow + ox];
                        }
                    }
                }
            }
        }
    }
}

pub(crate) fn conv_forward(input: &[f64], kernel: &[f64], g: &ConvGeom) -> Vec<f64> {
    let col = im2col(input, g);
    let (taps, p_len) = (g.taps(), g.positions());
    let mut out = Vec::with_capacity(g.c_out * p_len);
    let mut acc = vec![0.0f64; p_len];
    for oc in 0..g.c_out {
        acc.iter_mut().for_each(|v| *v = 0.0);
        let wrow = &kernel[oc * taps..(oc + 1) * taps];
        for (k, &wv) in wrow.iter().enumerate() {
            if wv != 0.0 {
                axpy(&mut acc, wv, &col[k * p_len..(k + 1) * p_len]);
            }
        }
        out.extend(acc.iter().copied());
    }
    out
}

/// Adjoint of [`conv_forward`] in its input argument. This is also the
/// forward pass of a transposed convolution.
pub(crate) fn conv_backward_input(dout: &[f64], kernel: &[f64], g: &ConvGeom) -> Vec<f64> {
    let (taps, p_len) = (g.taps(), g.positions());
    let mut dcol = vec![0.0f64; taps * p_len];
    for oc in 0..g.c_out {
        let drow = &dout[oc * p_len..(oc + 1) * p_len];
        let wrow = &kernel[oc * taps..(oc + 1) * taps];
        for (k, &wv) in wrow.iter().enumerate() {
            if wv != 0.0 {
                axpy(&mut dcol[k * p_len..(k + 1) * p_len], wv, drow);
            }
        }
    }
    let mut din = vec![0.0f64; g.c_in * g.h * g.w];
    col2im_add(&dcol, g, &mut din);
    din
}

pub(crate) fn conv_backward_kernel(input: &[f64], dout: &[f64], g: &ConvGeom) -> Vec<f64> {
    let col = im2col(input, g);
    let (taps, p_len) = (g.taps(), g.positions());
    let mut dk = Vec::with_capacity(g.c_out * taps);
    for oc in 0..g.c_out {
        let drow = &dout[oc * p_len..(oc + 1) * p_len];
        for k in 0..taps {
            dk.push(dot(drow, &col[k * p_len..(k + 1) * p_len]));
        }
    }
    dk
}
