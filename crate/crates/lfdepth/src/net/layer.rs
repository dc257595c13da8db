//! Network layers: forward passes, caches, and analytic backward passes.

use super::tensor::{Scalar, Tensor4};
use super::NetError;

/// Batch-normalization epsilon.
pub const BN_EPS: f64 = 1e-5;
/// Running-statistics update rate (`running += momentum * (batch - running)`).
pub const BN_MOMENTUM: f64 = 0.1;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Mode {
    Train,
    Eval,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct ConvSpec {
    pub in_channels: usize,
    pub out_channels: usize,
    pub kernel: usize,
    pub stride: usize,
    pub padding: usize,
}

impl ConvSpec {
    pub fn out_size(&self, input: usize) -> usize {
        (input + 2 * self.padding - self.kernel) / self.stride + 1
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct TransposedConvSpec {
    pub in_channels: usize,
    pub out_channels: usize,
    pub kernel: usize,
    pub stride: usize,
    pub padding: usize,
    pub output_padding: usize,
}

impl TransposedConvSpec {
    pub fn out_size(&self, input: usize) -> usize {
        (input - 1) * self.stride + self.kernel + self.output_padding - 2 * self.padding
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct FcSpec {
    pub in_features: usize,
    pub out_features: usize,
    /// `(C, H, W)` layout of the output tensor; the product must equal
    /// `out_features`. Defaults to `(out_features, 1, 1)`.
    pub out_shape: (usize, usize, usize),
}

/// One network layer with its parameters.
///
/// Weight layouts: conv `(out_c, in_c, k, k)`, transposed conv
/// `(in_c, out_c, k, k)`, fully connected `(out_features, in_features)`.
#[derive(Debug, Clone)]
pub enum Layer<T> {
    Conv { spec: ConvSpec, weight: Vec<T>, bias: Vec<T> },
    BatchNorm {
        channels: usize,
        gamma: Vec<T>,
        beta: Vec<T>,
        running_mean: Vec<T>,
        running_var: Vec<T>,
    },
    Relu,
    FullyConnected { spec: FcSpec, weight: Vec<T>, bias: Vec<T> },
    TransposedConv { spec: TransposedConvSpec, weight: Vec<T>, bias: Vec<T> },
}

/// Saved activations needed by the backward pass.
#[derive(Debug, Clone)]
pub enum LayerCache<T> {
    Conv { input: Tensor4<T> },
    BatchNorm { xhat: Tensor4<T>, inv_std: Vec<T>, train: bool },
    Relu { mask: Vec<bool> },
    Fc { input: Tensor4<T> },
    TConv { input: Tensor4<T> },
}

/// Parameter gradients aligned with [`Layer`].
#[derive(Debug, Clone)]
pub enum LayerGrads<T> {
    Conv { dweight: Vec<T>, dbias: Vec<T> },
    BatchNorm { dgamma: Vec<T>, dbeta: Vec<T> },
    None,
    Fc { dweight: Vec<T>, dbias: Vec<T> },
    TConv { dweight: Vec<T>, dbias: Vec<T> },
}

impl<T: Scalar> Layer<T> {
    /// Output shape for a given input shape, validating channel counts.
    pub fn output_shape(
        &self,
        shape: (usize, usize, usize, usize),
    ) -> Result<(usize, usize, usize, usize), NetError> {
        let (n, c, h, w) = shape;
        match self {
            Layer::Conv { spec, .. } => {
                if c != spec.in_channels {
                    return Err(NetError::shape(format!(
                        "conv expects {} input channels, got {c}",
                        spec.in_channels
                    )));
                }
                if h + 2 * spec.padding < spec.kernel || w + 2 * spec.padding < spec.kernel {
                    return Err(NetError::shape(format!("conv kernel exceeds padded input {h}x{w}")));
                }
                Ok((n, spec.out_channels, spec.out_size(h), spec.out_size(w)))
            }
            Layer::BatchNorm { channels, .. } => {
                if c != *channels {
                    return Err(NetError::shape(format!(
                        "batchnorm expects {channels} channels, got {c}"
                    )));
                }
                Ok(shape)
            }
            Layer::Relu => Ok(shape),
            Layer::FullyConnected { spec, .. } => {
                if c * h * w != spec.in_features {
                    return Err(NetError::shape(format!(
                        "fully connected expects {} features, got {}",
                        spec.in_features,
                        c * h * w
                    )));
                }
                let (oc, oh, ow) = spec.out_shape;
                Ok((n, oc, oh, ow))
            }
            Layer::TransposedConv { spec, .. } => {
                if c != spec.in_channels {
                    return Err(NetError::shape(format!(
                        "transposed conv expects {} input channels, got {c}",
                        spec.in_channels
                    )));
                }
                Ok((n, spec.out_channels, spec.out_size(h), spec.out_size(w)))
            }
        }
    }

    pub fn forward(
        &mut self,
        input: Tensor4<T>,
        mode: Mode,
    ) -> Result<(Tensor4<T>, LayerCache<T>), NetError> {
        self.output_shape(input.shape())?;
        match self {
            Layer::Conv { spec, weight, bias } => {
                let out = conv_forward(*spec, weight, bias, &input);
                Ok((out, LayerCache::Conv { input }))
            }
            Layer::BatchNorm { channels, gamma, beta, running_mean, running_var } => {
                let (out, cache) = batchnorm_forward(
                    *channels,
                    gamma,
                    beta,
                    running_mean,
                    running_var,
                    &input,
                    mode,
                );
                Ok((out, cache))
            }
            Layer::Relu => {
                let mut out = input;
                let mask: Vec<bool> = out.as_slice().iter().map(|v| *v > T::zero()).collect();
                for v in out.as_mut_slice() {
                    if *v < T::zero() {
                        *v = T::zero();
                    }
                }
                Ok((out, LayerCache::Relu { mask }))
            }
            Layer::FullyConnected { spec, weight, bias } => {
                let out = fc_forward(*spec, weight, bias, &input);
                Ok((out, LayerCache::Fc { input }))
            }
            Layer::TransposedConv { spec, weight, bias } => {
                let out = tconv_forward(*spec, weight, bias, &input);
                Ok((out, LayerCache::TConv { input }))
            }
        }
    }

    /// Eval-mode forward without caches or mutation; safe on shared frozen
    /// parameters.
    pub fn forward_eval(&self, input: &Tensor4<T>) -> Result<Tensor4<T>, NetError> {
        self.output_shape(input.shape())?;
        match self {
            Layer::Conv { spec, weight, bias } => Ok(conv_forward(*spec, weight, bias, input)),
            Layer::BatchNorm { channels, gamma, beta, running_mean, running_var } => {
                let (n, _, h, w) = input.shape();
                let mut out = Tensor4::zeros(n, *channels, h, w);
                for c in 0..*channels {
                    let istd = T::one() / (running_var[c] + T::from_f64(BN_EPS)).sqrt();
                    let (g, bta, mean) = (gamma[c], beta[c], running_mean[c]);
                    for b in 0..n {
                        let src = input.plane(b, c);
                        let dst = out.plane_mut(b, c);
                        for (o, &v) in dst.iter_mut().zip(src) {
                            *o = g * (v - mean) * istd + bta;
                        }
                    }
                }
                Ok(out)
            }
            Layer::Relu => {
                let mut out = input.clone();
                for v in out.as_mut_slice() {
                    if *v < T::zero() {
                        *v = T::zero();
                    }
                }
                Ok(out)
            }
            Layer::FullyConnected { spec, weight, bias } => Ok(fc_forward(*spec, weight, bias, input)),
            Layer::TransposedConv { spec, weight, bias } => Ok(tconv_forward(*spec, weight, bias, input)),
        }
    }

    /// Gradients of the loss w.r.t. the layer input and parameters.
    pub fn backward(&self, cache: &LayerCache<T>, grad_out: &Tensor4<T>) -> (Tensor4<T>, LayerGrads<T>) {
        match (self, cache) {
            (Layer::Conv { spec, weight, .. }, LayerCache::Conv { input }) => {
                let (dinput, dweight, dbias) = conv_backward(*spec, weight, input, grad_out);
                (dinput, LayerGrads::Conv { dweight, dbias })
            }
            (Layer::BatchNorm { gamma, .. }, LayerCache::BatchNorm { xhat, inv_std, train }) => {
                let (dinput, dgamma, dbeta) = batchnorm_backward(gamma, xhat, inv_std, *train, grad_out);
                (dinput, LayerGrads::BatchNorm { dgamma, dbeta })
            }
            (Layer::Relu, LayerCache::Relu { mask }) => {
                let mut dinput = grad_out.clone();
                for (v, &keep) in dinput.as_mut_slice().iter_mut().zip(mask) {
                    if !keep {
                        *v = T::zero();
                    }
                }
                (dinput, LayerGrads::None)
            }
            (Layer::FullyConnected { spec, weight, .. }, LayerCache::Fc { input }) => {
                let (dinput, dweight, dbias) = fc_backward(*spec, weight, input, grad_out);
                (dinput, LayerGrads::Fc { dweight, dbias })
            }
            (Layer::TransposedConv { spec, weight, .. }, LayerCache::TConv { input }) => {
                let (dinput, dweight, dbias) = tconv_backward(*spec, weight, input, grad_out);
                (dinput, LayerGrads::TConv { dweight, dbias })
            }
            _ => panic!("layer cache kind does not match layer"),
        }
    }

    /// Trainable parameter arrays in a fixed order (running stats excluded).
    pub fn params(&self) -> Vec<&Vec<T>> {
        match self {
            Layer::Conv { weight, bias, .. } => vec![weight, bias],
            Layer::BatchNorm { gamma, beta, .. } => vec![gamma, beta],
            Layer::Relu => vec![],
            Layer::FullyConnected { weight, bias, .. } => vec![weight, bias],
            Layer::TransposedConv { weight, bias, .. } => vec![weight, bias],
        }
    }

    pub fn params_mut(&mut self) -> Vec<&mut Vec<T>> {
        match self {
            Layer::Conv { weight, bias, .. } => vec![weight, bias],
            Layer::BatchNorm { gamma, beta, .. } => vec![gamma, beta],
            Layer::Relu => vec![],
            Layer::FullyConnected { weight, bias, .. } => vec![weight, bias],
            Layer::TransposedConv { weight, bias, .. } => vec![weight, bias],
        }
    }
}

impl<T: Scalar> LayerGrads<T> {
    /// Gradient arrays aligned with [`Layer::params`].
    pub fn arrays(&self) -> Vec<&Vec<T>> {
        match self {
            LayerGrads::Conv { dweight, dbias } => vec![dweight, dbias],
            LayerGrads::BatchNorm { dgamma, dbeta } => vec![dgamma, dbeta],
            LayerGrads::None => vec![],
            LayerGrads::Fc { dweight, dbias } => vec![dweight, dbias],
            LayerGrads::TConv { dweight, dbias } => vec![dweight, dbias],
        }
    }
}

/// Inclusive output-index bounds `lo..hi` such that
/// `out_idx * stride + tap - padding` stays inside `0..in_size`.
#[inline]
fn valid_range(padding: i64, tap: i64, stride: i64, in_size: i64, out_size: i64) -> (i64, i64) {
    let lo = (padding - tap + stride - 1).div_euclid(stride).max(0);
    let hi = ((in_size - 1 - tap + padding).div_euclid(stride) + 1).min(out_size);
    (lo, hi.max(lo))
}

// The convolution kernels work on channel-last scratch layouts: the input
// item is transposed to `[pixel][channel]` and the weights to
// `[tap][out][in]`, so every inner loop is a contiguous dot product or axpy
// over the channel axis regardless of stride. Results transpose back into
// the `(N, C, H, W)` tensors.

/// `[c][hw]` plane set -> `[hw][c]`.
fn transpose_to_pixel_major<T: Scalar>(item: &[T], channels: usize, pixels: usize, out: &mut [T]) {
    for c in 0..channels {
        let src = &item[c * pixels..(c + 1) * pixels];
        for (p, &v) in src.iter().enumerate() {
            out[p * channels + c] = v;
        }
    }
}

/// `[hw][c]` -> `[c][hw]`.
fn transpose_to_channel_major<T: Scalar>(buf: &[T], channels: usize, pixels: usize, out: &mut [T]) {
    for p in 0..pixels {
        let src = &buf[p * channels..(p + 1) * channels];
        for (c, &v) in src.iter().enumerate() {
            out[c * pixels + p] = v;
        }
    }
}

/// Conv weight `(oc, ic, k, k)` -> `[tap][oc][ic]`.
fn conv_weight_tap_major<T: Scalar>(weight: &[T], oc_n: usize, ic_n: usize, k: usize) -> Vec<T> {
    let taps = k * k;
    let mut out = vec![T::zero(); weight.len()];
    for oc in 0..oc_n {
        for ic in 0..ic_n {
            for tap in 0..taps {
                out[(tap * oc_n + oc) * ic_n + ic] = weight[(oc * ic_n + ic) * taps + tap];
            }
        }
    }
    out
}

/// Transposed-conv weight `(ic, oc, k, k)` -> `[tap][oc][ic]`.
fn tconv_weight_tap_major<T: Scalar>(weight: &[T], ic_n: usize, oc_n: usize, k: usize) -> Vec<T> {
    let taps = k * k;
    let mut out = vec![T::zero(); weight.len()];
    for ic in 0..ic_n {
        for oc in 0..oc_n {
            for tap in 0..taps {
                out[(tap * oc_n + oc) * ic_n + ic] = weight[(ic * oc_n + oc) * taps + tap];
            }
        }
    }
    out
}

#[inline]
fn dot<T: Scalar>(a: &[T], b: &[T]) -> T {
    let mut acc = T::zero();
    for (x, y) in a.iter().zip(b) {
        acc += *x * *y;
    }
    acc
}

#[inline]
fn axpy<T: Scalar>(alpha: T, x: &[T], y: &mut [T]) {
    for (yi, xi) in y.iter_mut().zip(x) {
        *yi += alpha * *xi;
    }
}

/// The (input pixel, output pixel) pairs of one kernel tap, given the
/// geometric mapping `out = in_pos * stride + tap - padding` (conv reads
/// with `in`/`out` swapped; transposed conv scatters this way).
struct TapGeometry {
    k: usize,
    stride: i64,
    padding: i64,
    /// (scatter-source height/width, scatter-target height/width).
    src: (usize, usize),
    dst: (usize, usize),
}

impl TapGeometry {
    /// Calls `f(src_pixel, dst_pixel)` for every in-bounds pair of the tap.
    #[inline]
    fn for_each_pair(&self, tap: usize, mut f: impl FnMut(usize, usize)) {
        let (kh, kw) = ((tap / self.k) as i64, (tap % self.k) as i64);
        let (sy_lo, sy_hi) =
            valid_range(self.padding, kh, self.stride, self.dst.0 as i64, self.src.0 as i64);
        let (sx_lo, sx_hi) =
            valid_range(self.padding, kw, self.stride, self.dst.1 as i64, self.src.1 as i64);
        for sy in sy_lo..sy_hi {
            let dy = (sy * self.stride + kh - self.padding) as usize;
            for sx in sx_lo..sx_hi {
                let dx = (sx * self.stride + kw - self.padding) as usize;
                f(sy as usize * self.src.1 + sx as usize, dy * self.dst.1 + dx);
            }
        }
    }
}

fn conv_forward<T: Scalar>(spec: ConvSpec, weight: &[T], bias: &[T], input: &Tensor4<T>) -> Tensor4<T> {
    let (n, ic, ih, iw) = input.shape();
    let (oh, ow) = (spec.out_size(ih), spec.out_size(iw));
    let (oc_n, k) = (spec.out_channels, spec.kernel);
    let taps = k * k;
    let geom = TapGeometry {
        k,
        stride: spec.stride as i64,
        padding: spec.padding as i64,
        src: (oh, ow),
        dst: (ih, iw),
    };
    let wt = conv_weight_tap_major(weight, oc_n, ic, k);
    let mut out = Tensor4::zeros(n, oc_n, oh, ow);
    let mut in_t = vec![T::zero(); ic * ih * iw];
    let mut out_t = vec![T::zero(); oc_n * oh * ow];
    for b in 0..n {
        transpose_to_pixel_major(input.item(b), ic, ih * iw, &mut in_t);
        for (p, chunk) in out_t.chunks_exact_mut(oc_n).enumerate() {
            let _ = p;
            chunk.copy_from_slice(bias);
        }
        for tap in 0..taps {
            let w_tap = &wt[tap * oc_n * ic..(tap + 1) * oc_n * ic];
            // Conv gathers: output pixel `op` reads input pixel `ip`.
            geom.for_each_pair(tap, |op, ip| {
                let x = &in_t[ip * ic..(ip + 1) * ic];
                let y = &mut out_t[op * oc_n..(op + 1) * oc_n];
                for (oc, yv) in y.iter_mut().enumerate() {
                    *yv += dot(&w_tap[oc * ic..(oc + 1) * ic], x);
                }
            });
        }
        transpose_to_channel_major(&out_t, oc_n, oh * ow, out.item_mut(b));
    }
    out
}

fn conv_backward<T: Scalar>(
    spec: ConvSpec,
    weight: &[T],
    input: &Tensor4<T>,
    grad_out: &Tensor4<T>,
) -> (Tensor4<T>, Vec<T>, Vec<T>) {
    let (n, ic, ih, iw) = input.shape();
    let (_, oc_n, oh, ow) = grad_out.shape();
    let k = spec.kernel;
    let taps = k * k;
    let geom = TapGeometry {
        k,
        stride: spec.stride as i64,
        padding: spec.padding as i64,
        src: (oh, ow),
        dst: (ih, iw),
    };
    let wt = conv_weight_tap_major(weight, oc_n, ic, k);
    let mut dwt = vec![T::zero(); weight.len()];
    let mut dbias = vec![T::zero(); oc_n];
    let mut dinput = Tensor4::zeros(n, ic, ih, iw);
    let mut in_t = vec![T::zero(); ic * ih * iw];
    let mut din_t = vec![T::zero(); ic * ih * iw];
    let mut gout_t = vec![T::zero(); oc_n * oh * ow];
    for b in 0..n {
        transpose_to_pixel_major(input.item(b), ic, ih * iw, &mut in_t);
        transpose_to_pixel_major(grad_out.item(b), oc_n, oh * ow, &mut gout_t);
        din_t.fill(T::zero());
        for chunk in gout_t.chunks_exact(oc_n) {
            for (oc, &g) in chunk.iter().enumerate() {
                dbias[oc] += g;
            }
        }
        for tap in 0..taps {
            let w_tap = &wt[tap * oc_n * ic..(tap + 1) * oc_n * ic];
            let dw_tap = &mut dwt[tap * oc_n * ic..(tap + 1) * oc_n * ic];
            geom.for_each_pair(tap, |op, ip| {
                let x = &in_t[ip * ic..(ip + 1) * ic];
                let dx = &mut din_t[ip * ic..(ip + 1) * ic];
                let g = &gout_t[op * oc_n..(op + 1) * oc_n];
                for (oc, &gv) in g.iter().enumerate() {
                    axpy(gv, &w_tap[oc * ic..(oc + 1) * ic], dx);
                    axpy(gv, x, &mut dw_tap[oc * ic..(oc + 1) * ic]);
                }
            });
        }
        transpose_to_channel_major(&din_t, ic, ih * iw, dinput.item_mut(b));
    }
    // Back to the canonical (oc, ic, k, k) weight layout.
    let mut dweight = vec![T::zero(); weight.len()];
    for oc in 0..oc_n {
        for icx in 0..ic {
            for tap in 0..taps {
                dweight[(oc * ic + icx) * taps + tap] = dwt[(tap * oc_n + oc) * ic + icx];
            }
        }
    }
    (dinput, dweight, dbias)
}

fn tconv_forward<T: Scalar>(
    spec: TransposedConvSpec,
    weight: &[T],
    bias: &[T],
    input: &Tensor4<T>,
) -> Tensor4<T> {
    let (n, ic, ih, iw) = input.shape();
    let (oh, ow) = (spec.out_size(ih), spec.out_size(iw));
    let (oc_n, k) = (spec.out_channels, spec.kernel);
    let taps = k * k;
    let geom = TapGeometry {
        k,
        stride: spec.stride as i64,
        padding: spec.padding as i64,
        src: (ih, iw),
        dst: (oh, ow),
    };
    let wt = tconv_weight_tap_major(weight, ic, oc_n, k);
    let mut out = Tensor4::zeros(n, oc_n, oh, ow);
    let mut in_t = vec![T::zero(); ic * ih * iw];
    let mut out_t = vec![T::zero(); oc_n * oh * ow];
    for b in 0..n {
        transpose_to_pixel_major(input.item(b), ic, ih * iw, &mut in_t);
        for chunk in out_t.chunks_exact_mut(oc_n) {
            chunk.copy_from_slice(bias);
        }
        for tap in 0..taps {
            let w_tap = &wt[tap * oc_n * ic..(tap + 1) * oc_n * ic];
            // Transposed conv scatters: input pixel `ip` feeds output `op`.
            geom.for_each_pair(tap, |ip, op| {
                let x = &in_t[ip * ic..(ip + 1) * ic];
                let y = &mut out_t[op * oc_n..(op + 1) * oc_n];
                for (oc, yv) in y.iter_mut().enumerate() {
                    *yv += dot(&w_tap[oc * ic..(oc + 1) * ic], x);
                }
            });
        }
        transpose_to_channel_major(&out_t, oc_n, oh * ow, out.item_mut(b));
    }
    out
}

fn tconv_backward<T: Scalar>(
    spec: TransposedConvSpec,
    weight: &[T],
    input: &Tensor4<T>,
    grad_out: &Tensor4<T>,
) -> (Tensor4<T>, Vec<T>, Vec<T>) {
    let (n, ic, ih, iw) = input.shape();
    let (_, oc_n, oh, ow) = grad_out.shape();
    let k = spec.kernel;
    let taps = k * k;
    let geom = TapGeometry {
        k,
        stride: spec.stride as i64,
        padding: spec.padding as i64,
        src: (ih, iw),
        dst: (oh, ow),
    };
    let wt = tconv_weight_tap_major(weight, ic, oc_n, k);
    let mut dwt = vec![T::zero(); weight.len()];
    let mut dbias = vec![T::zero(); oc_n];
    let mut dinput = Tensor4::zeros(n, ic, ih, iw);
    let mut in_t = vec![T::zero(); ic * ih * iw];
    let mut din_t = vec![T::zero(); ic * ih * iw];
    let mut gout_t = vec![T::zero(); oc_n * oh * ow];
    for b in 0..n {
        transpose_to_pixel_major(input.item(b), ic, ih * iw, &mut in_t);
        transpose_to_pixel_major(grad_out.item(b), oc_n, oh * ow, &mut gout_t);
        din_t.fill(T::zero());
        for chunk in gout_t.chunks_exact(oc_n) {
            for (oc, &g) in chunk.iter().enumerate() {
                dbias[oc] += g;
            }
        }
        for tap in 0..taps {
            let w_tap = &wt[tap * oc_n * ic..(tap + 1) * oc_n * ic];
            let dw_tap = &mut dwt[tap * oc_n * ic..(tap + 1) * oc_n * ic];
            geom.for_each_pair(tap, |ip, op| {
                let x = &in_t[ip * ic..(ip + 1) * ic];
                let dx = &mut din_t[ip * ic..(ip + 1) * ic];
                let g = &gout_t[op * oc_n..(op + 1) * oc_n];
                for (oc, &gv) in g.iter().enumerate() {
                    axpy(gv, &w_tap[oc * ic..(oc + 1) * ic], dx);
                    axpy(gv, x, &mut dw_tap[oc * ic..(oc + 1) * ic]);
                }
            });
        }
        transpose_to_channel_major(&din_t, ic, ih * iw, dinput.item_mut(b));
    }
    let mut dweight = vec![T::zero(); weight.len()];
    for icx in 0..ic {
        for oc in 0..oc_n {
            for tap in 0..taps {
                dweight[(icx * oc_n + oc) * taps + tap] = dwt[(tap * oc_n + oc) * ic + icx];
            }
        }
    }
    (dinput, dweight, dbias)
}

fn fc_forward<T: Scalar>(spec: FcSpec, weight: &[T], bias: &[T], input: &Tensor4<T>) -> Tensor4<T> {
    let (n, _, _, _) = input.shape();
    let (fi, fo) = (spec.in_features, spec.out_features);
    let (oc, oh, ow) = spec.out_shape;
    let mut out = Tensor4::zeros(n, oc, oh, ow);
    for b in 0..n {
        let x = input.item(b);
        let y = out.item_mut(b);
        for j in 0..fo {
            let row = &weight[j * fi..(j + 1) * fi];
            let mut acc = bias[j];
            for (w, v) in row.iter().zip(x) {
                acc += *w * *v;
            }
            y[j] = acc;
        }
    }
    out
}

fn fc_backward<T: Scalar>(
    spec: FcSpec,
    weight: &[T],
    input: &Tensor4<T>,
    grad_out: &Tensor4<T>,
) -> (Tensor4<T>, Vec<T>, Vec<T>) {
    let (n, c, h, w) = input.shape();
    let (fi, fo) = (spec.in_features, spec.out_features);
    let mut dinput = Tensor4::zeros(n, c, h, w);
    let mut dweight = vec![T::zero(); weight.len()];
    let mut dbias = vec![T::zero(); fo];
    for b in 0..n {
        let x = input.item(b);
        let g = grad_out.item(b);
        let dx = dinput.item_mut(b);
        for j in 0..fo {
            let gj = g[j];
            dbias[j] += gj;
            let row = &weight[j * fi..(j + 1) * fi];
            let drow = &mut dweight[j * fi..(j + 1) * fi];
            for i in 0..fi {
                dx[i] += row[i] * gj;
                drow[i] += x[i] * gj;
            }
        }
    }
    (dinput, dweight, dbias)
}

fn batchnorm_forward<T: Scalar>(
    channels: usize,
    gamma: &[T],
    beta: &[T],
    running_mean: &mut [T],
    running_var: &mut [T],
    input: &Tensor4<T>,
    mode: Mode,
) -> (Tensor4<T>, LayerCache<T>) {
    let (n, _, h, w) = input.shape();
    let count = (n * h * w) as f64;
    let mut out = Tensor4::zeros(n, channels, h, w);
    let mut xhat = Tensor4::zeros(n, channels, h, w);
    let mut inv_std = vec![T::zero(); channels];

    for c in 0..channels {
        let (mean, var) = match mode {
            Mode::Train => {
                // Batch statistics accumulated in f64 for stability.
                let mut sum = 0.0;
                let mut sq = 0.0;
                for b in 0..n {
                    for &v in input.plane(b, c) {
                        let v = v.to_f64();
                        sum += v;
                        sq += v * v;
                    }
                }
                let mean = sum / count;
                let var = (sq / count - mean * mean).max(0.0);
                running_mean[c] += T::from_f64(BN_MOMENTUM * (mean - running_mean[c].to_f64()));
                running_var[c] += T::from_f64(BN_MOMENTUM * (var - running_var[c].to_f64()));
                (T::from_f64(mean), T::from_f64(var))
            }
            Mode::Eval => (running_mean[c], running_var[c]),
        };
        let istd = T::one() / (var + T::from_f64(BN_EPS)).sqrt();
        inv_std[c] = istd;
        let (g, bta) = (gamma[c], beta[c]);
        for b in 0..n {
            let src = input.plane(b, c);
            let xh = xhat.plane_mut(b, c);
            for (o, &v) in xh.iter_mut().zip(src) {
                *o = (v - mean) * istd;
            }
            let dst = out.plane_mut(b, c);
            let xh = xhat.plane(b, c);
            for (o, &v) in dst.iter_mut().zip(xh) {
                *o = g * v + bta;
            }
        }
    }
    let train = mode == Mode::Train;
    (out, LayerCache::BatchNorm { xhat, inv_std, train })
}

fn batchnorm_backward<T: Scalar>(
    gamma: &[T],
    xhat: &Tensor4<T>,
    inv_std: &[T],
    train: bool,
    grad_out: &Tensor4<T>,
) -> (Tensor4<T>, Vec<T>, Vec<T>) {
    let (n, channels, h, w) = xhat.shape();
    let count = T::from_f64((n * h * w) as f64);
    let mut dinput = Tensor4::zeros(n, channels, h, w);
    let mut dgamma = vec![T::zero(); channels];
    let mut dbeta = vec![T::zero(); channels];

    for c in 0..channels {
        let mut sum_dy = T::zero();
        let mut sum_dy_xhat = T::zero();
        for b in 0..n {
            let g = grad_out.plane(b, c);
            let xh = xhat.plane(b, c);
            for (gy, &x) in g.iter().zip(xh) {
                sum_dy += *gy;
                sum_dy_xhat += *gy * x;
            }
        }
        dgamma[c] = sum_dy_xhat;
        dbeta[c] = sum_dy;
        let scale = gamma[c] * inv_std[c];
        if train {
            let mean_dy = sum_dy / count;
            let mean_dy_xhat = sum_dy_xhat / count;
            for b in 0..n {
                let g = grad_out.plane(b, c);
                let xh = xhat.plane(b, c);
                let dst = dinput.plane_mut(b, c);
                for ((d, gy), &x) in dst.iter_mut().zip(g).zip(xh) {
                    *d = scale * (*gy - mean_dy - x * mean_dy_xhat);
                }
            }
        } else {
            // Eval mode is a fixed affine map.
            for b in 0..n {
                let g = grad_out.plane(b, c);
                let dst = dinput.plane_mut(b, c);
                for (d, gy) in dst.iter_mut().zip(g) {
                    *d = scale * *gy;
                }
            }
        }
    }
    (dinput, dgamma, dbeta)
}
