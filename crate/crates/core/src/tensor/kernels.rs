//! Forward and backward kernels on raw tensors. The tape in `graph` calls
//! these; they are public so tests and callers without a tape can use them.

use super::{Scalar, Tensor, TensorError};

/// Output spatial size of a valid convolution.
pub fn conv_output_size(input: usize, kernel: usize, stride: usize) -> usize {
    (input - kernel) / stride + 1
}

/// Unfolds `x` (C x H x W) into a `(C*kh*kw) x (oh*ow)` row-major matrix.
pub fn im2col<F: Scalar>(x: &Tensor<F>, kh: usize, kw: usize, stride: usize) -> Result<Vec<F>, TensorError> {
    let (c, h, w) = x.chw()?;
    if kh > h || kw > w {
        return Err(TensorError::KernelTooLarge {
            kernel: (kh, kw),
            input: (h, w),
        });
    }
    if stride == 0 {
        return Err(TensorError::ZeroStride);
    }
    let oh = conv_output_size(h, kh, stride);
    let ow = conv_output_size(w, kw, stride);
    let n = oh * ow;
    let xd = x.data();
    let mut cols = vec![F::zero(); c * kh * kw * n];
    for ch in 0..c {
        let plane = &xd[ch * h * w..(ch + 1) * h * w];
        for ki in 0..kh {
            for kj in 0..kw {
                let row = (ch * kh + ki) * kw + kj;
                let dst = &mut cols[row * n..(row + 1) * n];
                for i in 0..oh {
                    let src = &plane[(i * stride + ki) * w + kj..];
                    let dst = &mut dst[i * ow..(i + 1) * ow];
                    if stride == 1 {
                        dst.copy_from_slice(&src[..ow]);
                    } else {
                        for (j, d) in dst.iter_mut().enumerate() {
                            *d = src[j * stride];
                        }
                    }
                }
            }
        }
    }
    Ok(cols)
}

/// Adjoint of [`im2col`]: accumulates columns back into a C x H x W buffer.
pub fn col2im<F: Scalar>(cols: &[F], shape: (usize, usize, usize), kh: usize, kw: usize, stride: usize) -> Vec<F> {
    let (c, h, w) = shape;
    let oh = conv_output_size(h, kh, stride);
    let ow = conv_output_size(w, kw, stride);
    let n = oh * ow;
    let mut out = vec![F::zero(); c * h * w];
    for ch in 0..c {
        let plane = &mut out[ch * h * w..(ch + 1) * h * w];
        for ki in 0..kh {
            for kj in 0..kw {
                let row = (ch * kh + ki) * kw + kj;
                let src = &cols[row * n..(row + 1) * n];
                for i in 0..oh {
                    let base = (i * stride + ki) * w + kj;
                    for j in 0..ow {
                        plane[base + j * stride] += src[i * ow + j];
                    }
                }
            }
        }
    }
    out
}

fn kernel_dims<F: Scalar>(k: &Tensor<F>) -> Result<(usize, usize, usize, usize), TensorError> {
    match k.shape()[..] {
        [a, b, c, d] => Ok((a, b, c, d)),
        _ => Err(TensorError::Shape {
            op: "kernel",
            detail: format!("expected rank 4, got {:?}", k.shape()),
        }),
    }
}

/// Valid cross-correlation with per-output-channel bias.
///
/// `x`: C x H x W, `kernel`: O x C x kh x kw, `bias`: O. Returns the output and
/// the unfolded input, which the backward pass reuses.
pub fn conv2d<F: Scalar>(
    x: &Tensor<F>,
    kernel: &Tensor<F>,
    bias: &Tensor<F>,
    stride: usize,
) -> Result<(Tensor<F>, Vec<F>), TensorError> {
    let (c, h, w) = x.chw()?;
    let (o, kc, kh, kw) = kernel_dims(kernel)?;
    if kc != c || bias.shape() != [o] {
        return Err(TensorError::Shape {
            op: "conv2d",
            detail: format!("input {:?}, kernel {:?}, bias {:?}", x.shape(), kernel.shape(), bias.shape()),
        });
    }
    let cols = im2col(x, kh, kw, stride)?;
    let oh = conv_output_size(h, kh, stride);
    let ow = conv_output_size(w, kw, stride);
    let n = oh * ow;
    let kk = c * kh * kw;
    let mut out = vec![F::zero(); o * n];
    for (row, &b) in out.chunks_mut(n).zip(bias.data()) {
        row.fill(b);
    }
    F::gemm(o, kk, n, kernel.data(), kk as isize, 1, &cols, n as isize, 1, F::one(), &mut out, n as isize, 1);
    Ok((Tensor::from_vec(&[o, oh, ow], out)?, cols))
}

/// Gradients of [`conv2d`] given the upstream gradient. The input gradient is
/// only computed when `want_input` is set.
pub fn conv2d_backward<F: Scalar>(
    grad_out: &Tensor<F>,
    input_shape: (usize, usize, usize),
    kernel: &Tensor<F>,
    cols: &[F],
    stride: usize,
    want_input: bool,
) -> (Option<Tensor<F>>, Tensor<F>, Tensor<F>) {
    let (o, c, kh, kw) = kernel_dims(kernel).expect("kernel validated in forward");
    let (_, oh, ow) = grad_out.chw().expect("output validated in forward");
    let n = oh * ow;
    let kk = c * kh * kw;
    let g = grad_out.data();

    let mut dk = vec![F::zero(); o * kk];
    // dK (o x kk) = dOut (o x n) * cols^T (n x kk)
    F::gemm(o, n, kk, g, n as isize, 1, cols, 1, n as isize, F::zero(), &mut dk, kk as isize, 1);
    let db: Vec<F> = g.chunks(n).map(|r| r.iter().copied().sum()).collect();

    let dx = want_input.then(|| {
        let mut dcols = vec![F::zero(); kk * n];
        // dCols (kk x n) = K^T (kk x o) * dOut (o x n)
        F::gemm(kk, o, n, kernel.data(), 1, kk as isize, g, n as isize, 1, F::zero(), &mut dcols, n as isize, 1);
        let (c, h, w) = input_shape;
        Tensor::from_vec(&[c, h, w], col2im(&dcols, input_shape, kh, kw, stride)).expect("shape from input")
    });
    (
        dx,
        Tensor::from_vec(kernel.shape(), dk).expect("kernel shape"),
        Tensor::from_vec(&[o], db).expect("bias shape"),
    )
}

fn check_transpose<F: Scalar>(
    x: &Tensor<F>,
    kernel: &Tensor<F>,
    stride: usize,
) -> Result<(usize, usize, usize, usize), TensorError> {
    let (c, h, w) = x.chw()?;
    let (kc, o, kh, kw) = kernel_dims(kernel)?;
    if stride == 0 {
        return Err(TensorError::ZeroStride);
    }
    if kh != stride || kw != stride {
        return Err(TensorError::OverlappingTranspose {
            stride,
            kernel: (kh, kw),
        });
    }
    if kc != c {
        return Err(TensorError::Shape {
            op: "transposed_conv2d",
            detail: format!("input {:?}, kernel {:?}", x.shape(), kernel.shape()),
        });
    }
    Ok((o, c, h, w))
}

/// Transposed convolution with kernel size equal to stride, so output blocks
/// never overlap. `x`: C x H x W, `kernel`: C x O x s x s; output
/// O x (H*s) x (W*s).
pub fn transposed_conv2d<F: Scalar>(x: &Tensor<F>, kernel: &Tensor<F>, stride: usize) -> Result<Tensor<F>, TensorError> {
    let (o, c, h, w) = check_transpose(x, kernel, stride)?;
    let n = h * w;
    let oss = o * stride * stride;
    let mut ycols = vec![F::zero(); oss * n];
    // Ycols (oss x n) = K^T (oss x c) * X (c x n)
    F::gemm(oss, c, n, kernel.data(), 1, oss as isize, x.data(), n as isize, 1, F::zero(), &mut ycols, n as isize, 1);
    let out = col2im(&ycols, (o, h * stride, w * stride), stride, stride, stride);
    Tensor::from_vec(&[o, h * stride, w * stride], out)
}

pub fn transposed_conv2d_backward<F: Scalar>(
    grad_out: &Tensor<F>,
    x: &Tensor<F>,
    kernel: &Tensor<F>,
    stride: usize,
    want_input: bool,
) -> (Option<Tensor<F>>, Tensor<F>) {
    let (o, c, h, w) = check_transpose(x, kernel, stride).expect("validated in forward");
    let n = h * w;
    let oss = o * stride * stride;
    let dy = im2col(grad_out, stride, stride, stride).expect("output shape from forward");
    let mut dk = vec![F::zero(); c * oss];
    // dK (c x oss) = X (c x n) * dY^T (n x oss)
    F::gemm(c, n, oss, x.data(), n as isize, 1, &dy, 1, n as isize, F::zero(), &mut dk, oss as isize, 1);
    let dx = want_input.then(|| {
        let mut dx = vec![F::zero(); c * n];
        // dX (c x n) = K (c x oss) * dY (oss x n)
        F::gemm(c, oss, n, kernel.data(), oss as isize, 1, &dy, n as isize, 1, F::zero(), &mut dx, n as isize, 1);
        Tensor::from_vec(&[c, h, w], dx).expect("input shape")
    });
    (dx, Tensor::from_vec(kernel.shape(), dk).expect("kernel shape"))
}

pub fn leaky_relu<F: Scalar>(x: &Tensor<F>, slope: F) -> Tensor<F> {
    x.map(|v| if v > F::zero() { v } else { v * slope })
}

pub fn leaky_relu_backward<F: Scalar>(grad_out: &Tensor<F>, x: &Tensor<F>, slope: F) -> Tensor<F> {
    let data = grad_out
        .data()
        .iter()
        .zip(x.data())
        .map(|(&g, &v)| if v > F::zero() { g } else { g * slope })
        .collect();
    Tensor::from_vec(x.shape(), data).expect("same shape")
}

/// Mean over the spatial axes of a C x H x W tensor, giving shape `[C]`.
pub fn global_avg_pool<F: Scalar>(x: &Tensor<F>) -> Result<Tensor<F>, TensorError> {
    let (c, h, w) = x.chw()?;
    let n = F::from_f64((h * w) as f64);
    let data = x.data().chunks(h * w).map(|p| p.iter().copied().sum::<F>() / n).collect();
    Tensor::from_vec(&[c], data)
}

pub fn global_avg_pool_backward<F: Scalar>(grad_out: &Tensor<F>, shape: (usize, usize, usize)) -> Tensor<F> {
    let (c, h, w) = shape;
    let n = F::from_f64((h * w) as f64);
    let mut data = Vec::with_capacity(c * h * w);
    for &g in grad_out.data() {
        data.extend(std::iter::repeat_n(g / n, h * w));
    }
    Tensor::from_vec(&[c, h, w], data).expect("input shape")
}

/// `weights * x + bias` with `x`: n, `weights`: m x n, `bias`: m.
pub fn affine<F: Scalar>(x: &Tensor<F>, weights: &Tensor<F>, bias: &Tensor<F>) -> Result<Tensor<F>, TensorError> {
    let n = x.len();
    let m = bias.len();
    if weights.shape() != [m, n] || bias.shape() != [m] {
        return Err(TensorError::Shape {
            op: "affine",
            detail: format!("x {:?}, weights {:?}, bias {:?}", x.shape(), weights.shape(), bias.shape()),
        });
    }
    let data = weights
        .data()
        .chunks(n)
        .zip(bias.data())
        .map(|(row, &b)| row.iter().zip(x.data()).map(|(&a, &v)| a * v).sum::<F>() + b)
        .collect();
    Tensor::from_vec(&[m], data)
}

pub fn affine_backward<F: Scalar>(
    grad_out: &Tensor<F>,
    x: &Tensor<F>,
    weights: &Tensor<F>,
) -> (Tensor<F>, Tensor<F>, Tensor<F>) {
    let n = x.len();
    let g = grad_out.data();
    let mut dx = vec![F::zero(); n];
    let mut dw = Vec::with_capacity(g.len() * n);
    for (row, &gi) in weights.data().chunks(n).zip(g) {
        for (d, &a) in dx.iter_mut().zip(row) {
            *d += gi * a;
        }
        dw.extend(x.data().iter().map(|&v| gi * v));
    }
    (
        Tensor::from_vec(x.shape(), dx).expect("x shape"),
        Tensor::from_vec(weights.shape(), dw).expect("weight shape"),
        grad_out.clone(),
    )
}

/// Mean of squared element differences, as a shape-`[1]` tensor.
pub fn mse<F: Scalar>(a: &Tensor<F>, b: &Tensor<F>) -> Result<Tensor<F>, TensorError> {
    if a.shape() != b.shape() {
        return Err(TensorError::Shape {
            op: "mse",
            detail: format!("{:?} vs {:?}", a.shape(), b.shape()),
        });
    }
    let n = F::from_f64(a.len() as f64);
    let s: F = a.data().iter().zip(b.data()).map(|(&p, &q)| (p - q) * (p - q)).sum();
    Ok(Tensor::scalar(s / n))
}

/// Gradient of [`mse`] with respect to `a`; the gradient for `b` is its
/// negation.
pub fn mse_backward<F: Scalar>(grad_out: F, a: &Tensor<F>, b: &Tensor<F>) -> Tensor<F> {
    let scale = grad_out * F::from_f64(2.0 / a.len() as f64);
    let data = a.data().iter().zip(b.data()).map(|(&p, &q)| scale * (p - q)).collect();
    Tensor::from_vec(a.shape(), data).expect("same shape")
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum PoolMode {
    Sum,
    Mean,
}

/// Non-overlapping `factor x factor` block pooling of a C x H x W tensor.
pub fn pool2d<F: Scalar>(x: &Tensor<F>, factor: usize, mode: PoolMode) -> Result<Tensor<F>, TensorError> {
    let (c, h, w) = x.chw()?;
    if factor == 0 || h % factor != 0 || w % factor != 0 {
        return Err(TensorError::Shape {
            op: "pool2d",
            detail: format!("factor {factor} does not divide {h}x{w}"),
        });
    }
    let (oh, ow) = (h / factor, w / factor);
    let mut out = vec![F::zero(); c * oh * ow];
    let xd = x.data();
    for ch in 0..c {
        for i in 0..h {
            let src = &xd[(ch * h + i) * w..(ch * h + i + 1) * w];
            let dst = &mut out[(ch * oh + i / factor) * ow..(ch * oh + i / factor + 1) * ow];
            for (j, &v) in src.iter().enumerate() {
                dst[j / factor] += v;
            }
        }
    }
    if mode == PoolMode::Mean {
        let n = F::from_f64((factor * factor) as f64);
        out.iter_mut().for_each(|v| *v = *v / n);
    }
    Tensor::from_vec(&[c, oh, ow], out)
}

pub fn pool2d_backward<F: Scalar>(
    grad_out: &Tensor<F>,
    shape: (usize, usize, usize),
    factor: usize,
    mode: PoolMode,
) -> Tensor<F> {
    let (c, h, w) = shape;
    let (oh, ow) = (h / factor, w / factor);
    let scale = match mode {
        PoolMode::Sum => F::one(),
        PoolMode::Mean => F::one() / F::from_f64((factor * factor) as f64),
    };
    let g = grad_out.data();
    let mut out = Vec::with_capacity(c * h * w);
    for ch in 0..c {
        for i in 0..h {
            let row = &g[(ch * oh + i / factor) * ow..(ch * oh + i / factor + 1) * ow];
            out.extend((0..w).map(|j| row[j / factor] * scale));
        }
    }
    Tensor::from_vec(&[c, h, w], out).expect("input shape")
}

/// Concatenates two C x H x W tensors along the channel axis.
pub fn concat_channels<F: Scalar>(a: &Tensor<F>, b: &Tensor<F>) -> Result<Tensor<F>, TensorError> {
    let (ca, ha, wa) = a.chw()?;
    let (cb, hb, wb) = b.chw()?;
    if (ha, wa) != (hb, wb) {
        return Err(TensorError::Shape {
            op: "concat_channels",
            detail: format!("{:?} vs {:?}", a.shape(), b.shape()),
        });
    }
    let mut data = Vec::with_capacity(a.len() + b.len());
    data.extend_from_slice(a.data());
    data.extend_from_slice(b.data());
    Tensor::from_vec(&[ca + cb, ha, wa], data)
}
