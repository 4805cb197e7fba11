use super::{Tensor, TensorError};

/// Output extent of a strided, padded window sweep.
pub fn conv_output_extent(extent: usize, kernel: usize, stride: usize, padding: usize) -> usize {
    (extent + 2 * padding - kernel) / stride + 1
}

/// `c (m×n) = a (m×k) · b (k×n) + beta·c`, all row-major, with explicit
/// strides so transposed operands can be passed without copying.
#[allow(clippy::too_many_arguments)]
pub(crate) fn gemm(
    m: usize,
    k: usize,
    n: usize,
    a: &[f64],
    a_strides: (isize, isize),
    b: &[f64],
    b_strides: (isize, isize),
    beta: f64,
    c: &mut [f64],
) {
    assert!(a.len() >= m * k && b.len() >= k * n && c.len() >= m * n);
    // SAFETY: the asserts above bound every index the strided access can
    // reach, and `c` does not alias `a` or `b` (distinct borrows).
    unsafe {
        matrixmultiply::dgemm(
            m,
            k,
            n,
            1.0,
            a.as_ptr(),
            a_strides.0,
            a_strides.1,
            b.as_ptr(),
            b_strides.0,
            b_strides.1,
            beta,
            c.as_mut_ptr(),
            n as isize,
            1,
        );
    }
}

pub(crate) struct ConvGeometry {
    pub cin: usize,
    pub h: usize,
    pub w: usize,
    pub cout: usize,
    pub k: usize,
    pub stride: usize,
    pub padding: usize,
    pub out_h: usize,
    pub out_w: usize,
}

impl ConvGeometry {
    pub fn check(
        input: &Tensor,
        kernels: &Tensor,
        bias: &Tensor,
        stride: usize,
        padding: usize,
    ) -> Result<Self, TensorError> {
        let op = "conv2d";
        let &[cin, h, w] = input.shape() else {
            return Err(TensorError::shape(
                op,
                format!("input must be [Cin,H,W], got {:?}", input.shape()),
            ));
        };
        let &[cout, kcin, kh, kw] = kernels.shape() else {
            return Err(TensorError::shape(
                op,
                format!("kernels must be [Cout,Cin,k,k], got {:?}", kernels.shape()),
            ));
        };
        if kcin != cin {
            return Err(TensorError::shape(
                op,
                format!("input has {cin} channels but kernels expect {kcin}"),
            ));
        }
        if kh != kw {
            return Err(TensorError::shape(op, format!("kernel must be square, got {kh}×{kw}")));
        }
        if bias.shape() != [cout] {
            return Err(TensorError::shape(
                op,
                format!("bias must be [{cout}], got {:?}", bias.shape()),
            ));
        }
        if stride == 0 {
            return Err(TensorError::InvalidArgument {
                op,
                detail: "stride must be at least 1".into(),
            });
        }
        if kh > h + 2 * padding || kh > w + 2 * padding {
            return Err(TensorError::shape(
                op,
                format!("kernel {kh} exceeds padded input {h}×{w} (padding {padding})"),
            ));
        }
        Ok(ConvGeometry {
            cin,
            h,
            w,
            cout,
            k: kh,
            stride,
            padding,
            out_h: conv_output_extent(h, kh, stride, padding),
            out_w: conv_output_extent(w, kh, stride, padding),
        })
    }

    fn patch_len(&self) -> usize {
        self.cin * self.k * self.k
    }

    fn out_len(&self) -> usize {
        self.out_h * self.out_w
    }
}

/// Unfolds the input into a `(Cin·k·k) × (H'·W')` patch matrix.
pub(crate) fn im2col(input: &[f64], g: &ConvGeometry) -> Vec<f64> {
    let n = g.out_len();
    let mut cols = vec![0.0; g.patch_len() * n];
    for c in 0..g.cin {
        let plane = &input[c * g.h * g.w..(c + 1) * g.h * g.w];
        for ky in 0..g.k {
            for kx in 0..g.k {
                let row = (c * g.k + ky) * g.k + kx;
                let dst = &mut cols[row * n..(row + 1) * n];
                for oy in 0..g.out_h {
                    let iy = (oy * g.stride + ky) as isize - g.padding as isize;
                    if iy < 0 || iy >= g.h as isize {
                        continue;
                    }
                    let src = &plane[iy as usize * g.w..(iy as usize + 1) * g.w];
                    let out_row = &mut dst[oy * g.out_w..(oy + 1) * g.out_w];
                    for (ox, slot) in out_row.iter_mut().enumerate() {
                        let ix = (ox * g.stride + kx) as isize - g.padding as isize;
                        if ix >= 0 && ix < g.w as isize {
                            *slot = src[ix as usize];
                        }
                    }
                }
            }
        }
    }
    cols
}

/// Adjoint of [`im2col`]: scatters patch gradients back onto the input.
pub(crate) fn col2im(cols: &[f64], g: &ConvGeometry) -> Vec<f64> {
    let n = g.out_len();
    let mut out = vec![0.0; g.cin * g.h * g.w];
    for c in 0..g.cin {
        let plane = &mut out[c * g.h * g.w..(c + 1) * g.h * g.w];
        for ky in 0..g.k {
            for kx in 0..g.k {
                let row = (c * g.k + ky) * g.k + kx;
                let src = &cols[row * n..(row + 1) * n];
                for oy in 0..g.out_h {
                    let iy = (oy * g.stride + ky) as isize - g.padding as isize;
                    if iy < 0 || iy >= g.h as isize {
                        continue;
                    }
                    let dst = &mut plane[iy as usize * g.w..(iy as usize + 1) * g.w];
                    for ox in 0..g.out_w {
                        let ix = (ox * g.stride + kx) as isize - g.padding as isize;
                        if ix >= 0 && ix < g.w as isize {
                            dst[ix as usize] += src[oy * g.out_w + ox];
                        }
                    }
                }
            }
        }
    }
    out
}

pub(crate) fn conv2d_with_cols(
    input: &Tensor,
    kernels: &Tensor,
    bias: &Tensor,
    g: &ConvGeometry,
) -> (Tensor, Vec<f64>) {
    let cols = im2col(input.data(), g);
    let n = g.out_len();
    let kk = g.patch_len();
    let mut out = vec![0.0; g.cout * n];
    for (o, &b) in bias.data().iter().enumerate() {
        out[o * n..(o + 1) * n].fill(b);
    }
    gemm(
        g.cout,
        kk,
        n,
        kernels.data(),
        (kk as isize, 1),
        &cols,
        (n as isize, 1),
        1.0,
        &mut out,
    );
    let out = Tensor {
        shape: vec![g.cout, g.out_h, g.out_w],
        data: out,
    };
    (out, cols)
}

/// Gradients of a convolution with respect to (input, kernels, bias).
pub(crate) fn conv2d_backward(
    grad_out: &[f64],
    kernels: &Tensor,
    cols: &[f64],
    g: &ConvGeometry,
    need_input: bool,
    need_kernel: bool,
) -> (Option<Vec<f64>>, Option<Vec<f64>>, Vec<f64>) {
    let n = g.out_len();
    let kk = g.patch_len();
    let dk = need_kernel.then(|| {
        // dK = dOut · colsᵀ
        let mut dk = vec![0.0; g.cout * kk];
        gemm(
            g.cout,
            n,
            kk,
            grad_out,
            (n as isize, 1),
            cols,
            (1, n as isize),
            0.0,
            &mut dk,
        );
        dk
    });
    let db = grad_out.chunks_exact(n).map(|row| row.iter().sum()).collect();
    let dx = need_input.then(|| {
        // dcols = Kᵀ · dOut
        let mut dcols = vec![0.0; kk * n];
        gemm(
            kk,
            g.cout,
            n,
            kernels.data(),
            (1, kk as isize),
            grad_out,
            (n as isize, 1),
            0.0,
            &mut dcols,
        );
        col2im(&dcols, g)
    });
    (dx, dk, db)
}

/// Cross-correlation of `input [Cin,H,W]` with `kernels [Cout,Cin,k,k]`.
pub fn conv2d_forward(
    input: &Tensor,
    kernels: &Tensor,
    bias: &Tensor,
    stride: usize,
    padding: usize,
) -> Result<Tensor, TensorError> {
    let g = ConvGeometry::check(input, kernels, bias, stride, padding)?;
    Ok(conv2d_with_cols(input, kernels, bias, &g).0)
}

/// Returns the pooled tensor and, per output value, the flat input index of
/// the window maximum (first in row-major order on ties).
pub(crate) fn maxpool2_with_argmax(input: &Tensor) -> Result<(Tensor, Vec<usize>), TensorError> {
    let &[c, h, w] = input.shape() else {
        return Err(TensorError::shape(
            "maxpool2",
            format!("input must be [C,H,W], got {:?}", input.shape()),
        ));
    };
    if h % 2 != 0 || w % 2 != 0 {
        return Err(TensorError::shape(
            "maxpool2",
            format!("spatial extent {h}×{w} is not even"),
        ));
    }
    let (oh, ow) = (h / 2, w / 2);
    let data = input.data();
    let mut out = Vec::with_capacity(c * oh * ow);
    let mut argmax = Vec::with_capacity(c * oh * ow);
    for ch in 0..c {
        let base = ch * h * w;
        for oy in 0..oh {
            for ox in 0..ow {
                let mut best_idx = base + 2 * oy * w + 2 * ox;
                let mut best = data[best_idx];
                for (dy, dx) in [(0, 1), (1, 0), (1, 1)] {
                    let idx = base + (2 * oy + dy) * w + 2 * ox + dx;
                    if data[idx] > best {
                        best = data[idx];
                        best_idx = idx;
                    }
                }
                out.push(best);
                argmax.push(best_idx);
            }
        }
    }
    Ok((
        Tensor {
            shape: vec![c, oh, ow],
            data: out,
        },
        argmax,
    ))
}

pub fn maxpool2_forward(input: &Tensor) -> Result<Tensor, TensorError> {
    maxpool2_with_argmax(input).map(|(t, _)| t)
}

pub(crate) fn check_dense(
    input: &Tensor,
    weights: &Tensor,
    bias: &Tensor,
) -> Result<(usize, usize), TensorError> {
    let op = "dense";
    let &[m, n] = weights.shape() else {
        return Err(TensorError::shape(
            op,
            format!("weights must be [m,n], got {:?}", weights.shape()),
        ));
    };
    if input.shape() != [n] {
        return Err(TensorError::shape(
            op,
            format!("input must be [{n}], got {:?}", input.shape()),
        ));
    }
    if bias.shape() != [m] {
        return Err(TensorError::shape(
            op,
            format!("bias must be [{m}], got {:?}", bias.shape()),
        ));
    }
    Ok((m, n))
}

/// `weights · input + bias`.
pub fn dense_forward(input: &Tensor, weights: &Tensor, bias: &Tensor) -> Result<Tensor, TensorError> {
    let (m, n) = check_dense(input, weights, bias)?;
    let mut out = bias.data().to_vec();
    gemm(m, n, 1, weights.data(), (n as isize, 1), input.data(), (1, 1), 1.0, &mut out);
    Ok(Tensor::from_vec(out))
}
