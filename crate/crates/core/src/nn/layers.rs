//! Layer kernels: forward passes plus their hand-written reverse-mode rules.
//!
//! Every kernel operates on a whole batch (`N` leading) in row-major layout.
//! Convolutions are "valid" with stride 1, pooling is 2×2 with stride 2
//! (trailing odd rows/columns are dropped).

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::tensor::Tensor;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum LayerKind {
    Conv2d,
    Relu,
    MaxPool2,
    Flatten,
    Dense,
}

impl LayerKind {
    pub fn code(self) -> u8 {
        match self {
            LayerKind::Conv2d => 0,
            LayerKind::Relu => 1,
            LayerKind::MaxPool2 => 2,
            LayerKind::Flatten => 3,
            LayerKind::Dense => 4,
        }
    }

    pub fn from_code(code: u8) -> Option<Self> {
        Some(match code {
            0 => LayerKind::Conv2d,
            1 => LayerKind::Relu,
            2 => LayerKind::MaxPool2,
            3 => LayerKind::Flatten,
            4 => LayerKind::Dense,
            _ => return None,
        })
    }
}

/// One stage of a sequential network.
///
/// Convolution weights are `[out_channels, in_channels, k, k]`; dense
/// weights are `[out_features, in_features]`. Biases are one value per
/// output channel/feature.
#[derive(Debug, Clone, PartialEq)]
pub enum Layer {
    Conv2d { weight: Tensor, bias: Tensor },
    Relu,
    MaxPool2,
    Flatten,
    Dense { weight: Tensor, bias: Tensor },
}

/// Per-layer state captured during the forward pass.
#[derive(Debug, Clone)]
pub(crate) enum Cache {
    None,
    /// Flat input index of each pooled maximum.
    PoolArgmax(Vec<usize>),
}

impl Layer {
    pub fn kind(&self) -> LayerKind {
        match self {
            Layer::Conv2d { .. } => LayerKind::Conv2d,
            Layer::Relu => LayerKind::Relu,
            Layer::MaxPool2 => LayerKind::MaxPool2,
            Layer::Flatten => LayerKind::Flatten,
            Layer::Dense { .. } => LayerKind::Dense,
        }
    }

    /// `(weight, bias)` for parameterised layers.
    pub fn params(&self) -> Option<(&Tensor, &Tensor)> {
        match self {
            Layer::Conv2d { weight, bias } | Layer::Dense { weight, bias } => Some((weight, bias)),
            _ => None,
        }
    }

    pub fn params_mut(&mut self) -> Option<(&mut Tensor, &mut Tensor)> {
        match self {
            Layer::Conv2d { weight, bias } | Layer::Dense { weight, bias } => Some((weight, bias)),
            _ => None,
        }
    }

    /// Output shape for a batched input shape, or an error naming the
    /// expected layout.
    pub(crate) fn output_shape(&self, input: &[usize]) -> Result<Vec<usize>> {
        let bad = |expected: String| Error::InputShape {
            expected,
            actual: input.to_vec(),
        };
        match self {
            Layer::Conv2d { weight, .. } => {
                let (o, c, k) = (weight.shape()[0], weight.shape()[1], weight.shape()[2]);
                match input {
                    [n, ci, h, w] if *ci == c && *h >= k && *w >= k => {
                        Ok(vec![*n, o, h - k + 1, w - k + 1])
                    }
                    _ => Err(bad(format!("N×{c}×H×W with H,W ≥ {k}"))),
                }
            }
            Layer::Relu => Ok(input.to_vec()),
            Layer::MaxPool2 => match input {
                [n, c, h, w] if *h >= 2 && *w >= 2 => Ok(vec![*n, *c, h / 2, w / 2]),
                _ => Err(bad("N×C×H×W with H,W ≥ 2".into())),
            },
            Layer::Flatten => match input {
                [n, rest @ ..] if !rest.is_empty() => Ok(vec![*n, rest.iter().product()]),
                _ => Err(bad("N×…".into())),
            },
            Layer::Dense { weight, .. } => {
                let (o, i) = (weight.shape()[0], weight.shape()[1]);
                match input {
                    [n, f] if *f == i => Ok(vec![*n, o]),
                    _ => Err(bad(format!("N×{i}"))),
                }
            }
        }
    }

    pub(crate) fn forward(&self, input: &Tensor) -> Result<(Tensor, Cache)> {
        let out_shape = self.output_shape(input.shape())?;
        Ok(match self {
            Layer::Conv2d { weight, bias } => {
                let mut out = Tensor::zeros(out_shape);
                conv_forward(input, weight, bias, &mut out);
                (out, Cache::None)
            }
            Layer::Relu => {
                let values = input.values().iter().map(|&x| if x > 0.0 { x } else { 0.0 }).collect();
                (Tensor::new(out_shape, values)?, Cache::None)
            }
            Layer::MaxPool2 => {
                let (values, argmax) = pool_forward(input, &out_shape);
                (Tensor::new(out_shape, values)?, Cache::PoolArgmax(argmax))
            }
            Layer::Flatten => (input.reshaped(out_shape)?, Cache::None),
            Layer::Dense { weight, bias } => {
                let mut out = Tensor::zeros(out_shape);
                dense_forward(input, weight, bias, &mut out);
                (out, Cache::None)
            }
        })
    }

    /// Propagates `grad_out` back through the layer.
    ///
    /// Parameter gradients are accumulated (added) into `param_grads` as
    /// `(weight, bias)` buffers when supplied. The input gradient is only
    /// computed when `want_input` is set.
    pub(crate) fn backward(
        &self,
        input: &Tensor,
        cache: &Cache,
        grad_out: &Tensor,
        param_grads: Option<(&mut [f64], &mut [f64])>,
        want_input: bool,
    ) -> Option<Tensor> {
        match self {
            Layer::Conv2d { weight, .. } => {
                conv_backward(input, weight, grad_out, param_grads, want_input)
            }
            Layer::Relu => want_input.then(|| {
                let values = grad_out
                    .values()
                    .iter()
                    .zip(input.values())
                    .map(|(&go, &x)| if x > 0.0 { go } else { 0.0 })
                    .collect();
                Tensor::new(input.shape().to_vec(), values).expect("relu keeps its shape")
            }),
            Layer::MaxPool2 => want_input.then(|| {
                let mut g = Tensor::zeros(input.shape().to_vec());
                if let Cache::PoolArgmax(idx) = cache {
                    let gv = g.values_mut();
                    for (&i, &go) in idx.iter().zip(grad_out.values()) {
                        gv[i] += go;
                    }
                }
                g
            }),
            Layer::Flatten => want_input.then(|| {
                grad_out
                    .reshaped(input.shape().to_vec())
                    .expect("flatten preserves the element count")
            }),
            Layer::Dense { weight, .. } => {
                dense_backward(input, weight, grad_out, param_grads, want_input)
            }
        }
    }
}

fn conv_dims(input: &Tensor, weight: &Tensor) -> (usize, usize, usize, usize, usize, usize) {
    let s = input.shape();
    let ws = weight.shape();
    (s[0], s[1], s[2], s[3], ws[0], ws[2])
}

/// Row-major `C = A·B + beta·C` with explicit (row, column) strides.
#[allow(clippy::too_many_arguments)]
fn gemm(
    m: usize,
    k: usize,
    n: usize,
    a: &[f64],
    (rsa, csa): (usize, usize),
    b: &[f64],
    (rsb, csb): (usize, usize),
    beta: f64,
    c: &mut [f64],
    (rsc, csc): (usize, usize),
) {
    if m == 0 || n == 0 {
        return;
    }
    let last = |rs: usize, cs: usize, r: usize, cl: usize| (r - 1) * rs + (cl - 1) * cs;
    assert!(k == 0 || a.len() > last(rsa, csa, m, k), "gemm: A too short");
    assert!(k == 0 || b.len() > last(rsb, csb, k, n), "gemm: B too short");
    assert!(c.len() > last(rsc, csc, m, n), "gemm: C too short");
    // SAFETY: the asserts above keep every strided access inside the slices,
    // and `c` is exclusively borrowed so it cannot alias `a` or `b`.
    unsafe {
        matrixmultiply::dgemm(
            m,
            k,
            n,
            1.0,
            a.as_ptr(),
            rsa as isize,
            csa as isize,
            b.as_ptr(),
            rsb as isize,
            csb as isize,
            beta,
            c.as_mut_ptr(),
            rsc as isize,
            csc as isize,
        );
    }
}

/// Unfolds one `C×H×W` sample into a `(C·k·k) × (OH·OW)` patch matrix.
fn im2col(x: &[f64], c: usize, h: usize, w: usize, k: usize, col: &mut [f64]) {
    let (oh, ow) = (h - k + 1, w - k + 1);
    let p = oh * ow;
    for ic in 0..c {
        for ky in 0..k {
            for kx in 0..k {
                let row = &mut col[((ic * k + ky) * k + kx) * p..][..p];
                for r in 0..oh {
                    let src = &x[ic * h * w + (r + ky) * w + kx..][..ow];
                    row[r * ow..(r + 1) * ow].copy_from_slice(src);
                }
            }
        }
    }
}

/// Adjoint of [`im2col`]: scatter-adds patch gradients back onto the image.
fn col2im(col: &[f64], c: usize, h: usize, w: usize, k: usize, x: &mut [f64]) {
    let (oh, ow) = (h - k + 1, w - k + 1);
    let p = oh * ow;
    for ic in 0..c {
        for ky in 0..k {
            for kx in 0..k {
                let row = &col[((ic * k + ky) * k + kx) * p..][..p];
                for r in 0..oh {
                    let dst = &mut x[ic * h * w + (r + ky) * w + kx..][..ow];
                    for (d, &v) in dst.iter_mut().zip(&row[r * ow..(r + 1) * ow]) {
                        *d += v;
                    }
                }
            }
        }
    }
}

/// Unfolds a whole batch into a `(C·k·k) × (N·OH·OW)` patch matrix.
fn im2col_batch(x: &[f64], n: usize, c: usize, h: usize, w: usize, k: usize) -> Vec<f64> {
    let p = (h - k + 1) * (w - k + 1);
    let ckk = c * k * k;
    let mut sample_col = vec![0.0; ckk * p];
    let mut col = vec![0.0; ckk * n * p];
    for s in 0..n {
        im2col(&x[s * c * h * w..][..c * h * w], c, h, w, k, &mut sample_col);
        for (r, src) in sample_col.chunks_exact(p).enumerate() {
            col[r * n * p + s * p..][..p].copy_from_slice(src);
        }
    }
    col
}

fn conv_forward(input: &Tensor, weight: &Tensor, bias: &Tensor, out: &mut Tensor) {
    let (n, c, h, w, o, k) = conv_dims(input, weight);
    let p = (h - k + 1) * (w - k + 1);
    let ckk = c * k * k;
    let col = im2col_batch(input.values(), n, c, h, w, k);
    // T[o, N·p] = W[o, ckk] · col[ckk, N·p]
    let mut t = vec![0.0; o * n * p];
    gemm(o, ckk, n * p, weight.values(), (ckk, 1), &col, (n * p, 1), 0.0, &mut t, (n * p, 1));
    let b = bias.values();
    let y = out.values_mut();
    for s in 0..n {
        for oc in 0..o {
            let src = &t[oc * n * p + s * p..][..p];
            for (d, &v) in y[(s * o + oc) * p..][..p].iter_mut().zip(src) {
                *d = v + b[oc];
            }
        }
    }
}

fn conv_backward(
    input: &Tensor,
    weight: &Tensor,
    grad_out: &Tensor,
    param_grads: Option<(&mut [f64], &mut [f64])>,
    want_input: bool,
) -> Option<Tensor> {
    let (n, c, h, w, o, k) = conv_dims(input, weight);
    let p = (h - k + 1) * (w - k + 1);
    let ckk = c * k * k;
    let g = grad_out.values();
    // dY regrouped as [o, N·p]
    let mut gt = vec![0.0; o * n * p];
    for s in 0..n {
        for oc in 0..o {
            gt[oc * n * p + s * p..][..p].copy_from_slice(&g[(s * o + oc) * p..][..p]);
        }
    }
    if let Some((gw, gb)) = param_grads {
        let col = im2col_batch(input.values(), n, c, h, w, k);
        for (oc, row) in gt.chunks_exact(n * p).enumerate() {
            gb[oc] += row.iter().sum::<f64>();
        }
        // dW[o, ckk] += dY[o, N·p] · colᵀ[N·p, ckk]
        gemm(o, n * p, ckk, &gt, (n * p, 1), &col, (1, n * p), 1.0, gw, (ckk, 1));
    }
    want_input.then(|| {
        // dcol[ckk, N·p] = Wᵀ[ckk, o] · dY[o, N·p]
        let mut dcol = vec![0.0; ckk * n * p];
        gemm(ckk, o, n * p, weight.values(), (1, ckk), &gt, (n * p, 1), 0.0, &mut dcol, (n * p, 1));
        let mut gin = Tensor::zeros(input.shape().to_vec());
        let gv = gin.values_mut();
        let mut sample_col = vec![0.0; ckk * p];
        for s in 0..n {
            for (r, dst) in sample_col.chunks_exact_mut(p).enumerate() {
                dst.copy_from_slice(&dcol[r * n * p + s * p..][..p]);
            }
            col2im(&sample_col, c, h, w, k, &mut gv[s * c * h * w..][..c * h * w]);
        }
        gin
    })
}

fn pool_forward(input: &Tensor, out_shape: &[usize]) -> (Vec<f64>, Vec<usize>) {
    let s = input.shape();
    let (h, w) = (s[2], s[3]);
    let (oh, ow) = (out_shape[2], out_shape[3]);
    let x = input.values();
    let total: usize = out_shape.iter().product();
    let mut values = Vec::with_capacity(total);
    let mut argmax = Vec::with_capacity(total);
    for plane in 0..s[0] * s[1] {
        let base = plane * h * w;
        for r in 0..oh {
            for col in 0..ow {
                let mut best = base + 2 * r * w + 2 * col;
                for (dy, dx) in [(0, 1), (1, 0), (1, 1)] {
                    let idx = base + (2 * r + dy) * w + 2 * col + dx;
                    // strict: ties keep the first position in scan order
                    if x[idx] > x[best] {
                        best = idx;
                    }
                }
                values.push(x[best]);
                argmax.push(best);
            }
        }
    }
    (values, argmax)
}

fn dense_forward(input: &Tensor, weight: &Tensor, bias: &Tensor, out: &mut Tensor) {
    let (o, i) = (weight.shape()[0], weight.shape()[1]);
    let n = input.rows();
    let y = out.values_mut();
    // Y[n, o] = X[n, i] · Wᵀ[i, o] + b
    gemm(n, i, o, input.values(), (i, 1), weight.values(), (1, i), 0.0, y, (o, 1));
    for row in y.chunks_exact_mut(o) {
        for (v, &b) in row.iter_mut().zip(bias.values()) {
            *v += b;
        }
    }
}

fn dense_backward(
    input: &Tensor,
    weight: &Tensor,
    grad_out: &Tensor,
    param_grads: Option<(&mut [f64], &mut [f64])>,
    want_input: bool,
) -> Option<Tensor> {
    let (o, i) = (weight.shape()[0], weight.shape()[1]);
    let n = input.rows();
    let g = grad_out.values();

    if let Some((gw, gb)) = param_grads {
        for row in g.chunks_exact(o) {
            for (d, &v) in gb.iter_mut().zip(row) {
                *d += v;
            }
        }
        // dW[o, i] += dYᵀ[o, n] · X[n, i]
        gemm(o, n, i, g, (1, o), input.values(), (i, 1), 1.0, gw, (i, 1));
    }

    want_input.then(|| {
        let mut gin = Tensor::zeros(input.shape().to_vec());
        // dX[n, i] = dY[n, o] · W[o, i]
        gemm(n, o, i, g, (o, 1), weight.values(), (i, 1), 0.0, gin.values_mut(), (i, 1));
        gin
    })
}
