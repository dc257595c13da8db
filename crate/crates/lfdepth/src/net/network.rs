//! Layer composition, the canonical architecture, and seeded initialization.

use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use super::layer::{ConvSpec, FcSpec, Layer, LayerCache, LayerGrads, Mode, TransposedConvSpec};
use super::tensor::{Scalar, Tensor4};
use super::NetError;

/// An ordered layer stack with forward/backward execution.
#[derive(Debug, Clone)]
pub struct Network<T> {
    layers: Vec<Layer<T>>,
}

impl<T: Scalar> Network<T> {
    pub fn from_layers(layers: Vec<Layer<T>>) -> Self {
        Network { layers }
    }

    pub fn layers(&self) -> &[Layer<T>] {
        &self.layers
    }

    pub fn layers_mut(&mut self) -> &mut [Layer<T>] {
        &mut self.layers
    }

    /// Folds the shape contract through the stack, validating every link.
    pub fn output_shape(
        &self,
        input: (usize, usize, usize, usize),
    ) -> Result<(usize, usize, usize, usize), NetError> {
        let mut shape = input;
        for layer in &self.layers {
            shape = layer.output_shape(shape)?;
        }
        Ok(shape)
    }

    /// Full forward pass. Train mode updates batch-norm running statistics;
    /// eval mode reads them. Returns the output and per-layer caches for the
    /// backward pass.
    pub fn forward(
        &mut self,
        input: &Tensor4<T>,
        mode: Mode,
    ) -> Result<(Tensor4<T>, Vec<LayerCache<T>>), NetError> {
        let mut caches = Vec::with_capacity(self.layers.len());
        let mut cur = input.clone();
        for layer in &mut self.layers {
            let (out, cache) = layer.forward(cur, mode)?;
            caches.push(cache);
            cur = out;
        }
        Ok((cur, caches))
    }

    /// Eval-mode forward without caches; usable on shared frozen parameters.
    pub fn forward_eval(&self, input: &Tensor4<T>) -> Result<Tensor4<T>, NetError> {
        let mut cur = input.clone();
        for layer in &self.layers {
            cur = layer.forward_eval(&cur)?;
        }
        Ok(cur)
    }

    /// Backward pass from the loss gradient at the output. Returns per-layer
    /// parameter gradients (aligned with `layers`) and the gradient at the
    /// network input.
    pub fn backward(
        &self,
        caches: &[LayerCache<T>],
        grad_output: &Tensor4<T>,
    ) -> (Vec<LayerGrads<T>>, Tensor4<T>) {
        assert_eq!(caches.len(), self.layers.len(), "cache count must match layer count");
        let mut grads_rev = Vec::with_capacity(self.layers.len());
        let mut grad = grad_output.clone();
        for (layer, cache) in self.layers.iter().zip(caches).rev() {
            let (gin, gparams) = layer.backward(cache, &grad);
            grads_rev.push(gparams);
            grad = gin;
        }
        grads_rev.reverse();
        (grads_rev, grad)
    }

    /// Every trainable parameter array, in fixed layer order.
    pub fn param_arrays(&self) -> Vec<&Vec<T>> {
        self.layers.iter().flat_map(|l| l.params()).collect()
    }

    pub fn param_arrays_mut(&mut self) -> Vec<&mut Vec<T>> {
        self.layers.iter_mut().flat_map(|l| l.params_mut()).collect()
    }

    pub fn param_count(&self) -> usize {
        self.param_arrays().iter().map(|a| a.len()).sum()
    }

    /// Element-wise cast of parameters and running statistics.
    pub fn cast<U: Scalar>(&self) -> Network<U> {
        let conv = |v: &Vec<T>| v.iter().map(|x| U::from_f64(x.to_f64())).collect::<Vec<U>>();
        let layers = self
            .layers
            .iter()
            .map(|l| match l {
                Layer::Conv { spec, weight, bias } => Layer::Conv {
                    spec: *spec,
                    weight: conv(weight),
                    bias: conv(bias),
                },
                Layer::BatchNorm { channels, gamma, beta, running_mean, running_var } => {
                    Layer::BatchNorm {
                        channels: *channels,
                        gamma: conv(gamma),
                        beta: conv(beta),
                        running_mean: conv(running_mean),
                        running_var: conv(running_var),
                    }
                }
                Layer::Relu => Layer::Relu,
                Layer::FullyConnected { spec, weight, bias } => Layer::FullyConnected {
                    spec: *spec,
                    weight: conv(weight),
                    bias: conv(bias),
                },
                Layer::TransposedConv { spec, weight, bias } => Layer::TransposedConv {
                    spec: *spec,
                    weight: conv(weight),
                    bias: conv(bias),
                },
            })
            .collect();
        Network { layers }
    }
}

/// Seeded He-uniform initializer: weights from U(-L, L) with
/// L = sqrt(6 / fan_in), zero biases, identity batch norm.
pub struct Initializer {
    rng: ChaCha8Rng,
}

impl Initializer {
    pub fn new(seed: u64) -> Self {
        Initializer { rng: ChaCha8Rng::seed_from_u64(seed) }
    }

    fn uniform<T: Scalar>(&mut self, count: usize, limit: f64) -> Vec<T> {
        (0..count)
            .map(|_| T::from_f64((self.rng.random::<f64>() * 2.0 - 1.0) * limit))
            .collect()
    }

    pub fn conv<T: Scalar>(&mut self, spec: ConvSpec) -> Layer<T> {
        let fan_in = (spec.in_channels * spec.kernel * spec.kernel) as f64;
        let weight = self.uniform(
            spec.out_channels * spec.in_channels * spec.kernel * spec.kernel,
            (6.0 / fan_in).sqrt(),
        );
        Layer::Conv { spec, weight, bias: vec![T::zero(); spec.out_channels] }
    }

    pub fn batchnorm<T: Scalar>(&mut self, channels: usize) -> Layer<T> {
        Layer::BatchNorm {
            channels,
            gamma: vec![T::one(); channels],
            beta: vec![T::zero(); channels],
            running_mean: vec![T::zero(); channels],
            running_var: vec![T::one(); channels],
        }
    }

    pub fn fully_connected<T: Scalar>(&mut self, spec: FcSpec) -> Layer<T> {
        let weight = self.uniform(
            spec.out_features * spec.in_features,
            (6.0 / spec.in_features as f64).sqrt(),
        );
        Layer::FullyConnected { spec, weight, bias: vec![T::zero(); spec.out_features] }
    }

    pub fn transposed_conv<T: Scalar>(&mut self, spec: TransposedConvSpec) -> Layer<T> {
        let fan_in = (spec.in_channels * spec.kernel * spec.kernel) as f64;
        let weight = self.uniform(
            spec.in_channels * spec.out_channels * spec.kernel * spec.kernel,
            (6.0 / fan_in).sqrt(),
        );
        Layer::TransposedConv { spec, weight, bias: vec![T::zero(); spec.out_channels] }
    }
}

/// Encoder channel widths; the decoder mirrors them down to one channel.
const WIDTHS: [usize; 6] = [21, 32, 64, 128, 256, 256];
/// Encoder strides (kernel 3, padding 1 throughout).
const STRIDES: [usize; 5] = [2, 2, 2, 1, 1];
const MLP_HIDDEN: [usize; 2] = [512, 128];

/// Builds the microlens depth network for `crop_size`-pixel stacks.
///
/// Encoder: five stride-scheduled 3x3 convolutions with batch norm and ReLU
/// (21 -> 32 -> 64 -> 128 -> 256 -> 256). Bottleneck: an MLP over the
/// flattened encoding (512 -> 128 -> 512) plus the expansion back to the
/// encoder volume. Decoder: five transposed convolutions mirroring the
/// encoder, the last one emitting a single linear depth channel at the input
/// resolution.
pub fn microlens_depth_network<T: Scalar>(
    crop_size: usize,
    seed: u64,
) -> Result<Network<T>, NetError> {
    // Spatial chain through the encoder.
    if crop_size < 8 {
        return Err(NetError::shape(format!("crop size {crop_size} too small for the encoder")));
    }
    let mut sizes = vec![crop_size];
    for &s in &STRIDES {
        let prev = *sizes.last().unwrap();
        sizes.push((prev + 2 - 3) / s + 1);
    }
    let bottleneck_side = sizes[5];

    let mut init = Initializer::new(seed);
    let mut layers: Vec<Layer<T>> = Vec::new();

    for i in 0..5 {
        layers.push(init.conv(ConvSpec {
            in_channels: WIDTHS[i],
            out_channels: WIDTHS[i + 1],
            kernel: 3,
            stride: STRIDES[i],
            padding: 1,
        }));
        layers.push(init.batchnorm(WIDTHS[i + 1]));
        layers.push(Layer::Relu);
    }

    let volume = WIDTHS[5] * bottleneck_side * bottleneck_side;
    let mlp_dims = [volume, MLP_HIDDEN[0], MLP_HIDDEN[1], MLP_HIDDEN[0], volume];
    for i in 0..4 {
        let out_shape = if i == 3 {
            (WIDTHS[5], bottleneck_side, bottleneck_side)
        } else {
            (mlp_dims[i + 1], 1, 1)
        };
        layers.push(init.fully_connected(FcSpec {
            in_features: mlp_dims[i],
            out_features: mlp_dims[i + 1],
            out_shape,
        }));
        layers.push(Layer::Relu);
    }

    // Decoder: invert encoder stage 4 down to stage 0; the final transposed
    // convolution outputs the single depth channel.
    for j in 0..5 {
        let stage = 4 - j; // encoder conv being inverted
        let in_c = WIDTHS[stage + 1];
        let out_c = if stage == 0 { 1 } else { WIDTHS[stage] };
        let stride = STRIDES[stage];
        let out_size = sizes[stage];
        let in_size = sizes[stage + 1];
        let output_padding = out_size - ((in_size - 1) * stride + 1);
        layers.push(init.transposed_conv(TransposedConvSpec {
            in_channels: in_c,
            out_channels: out_c,
            kernel: 3,
            stride,
            padding: 1,
            output_padding,
        }));
        if stage != 0 {
            layers.push(init.batchnorm(out_c));
            layers.push(Layer::Relu);
        }
    }

    let net = Network::from_layers(layers);
    let out = net.output_shape((1, WIDTHS[0], crop_size, crop_size))?;
    debug_assert_eq!(out, (1, 1, crop_size, crop_size));
    Ok(net)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn canonical_network_maps_21x23x23_to_1x23x23() {
        let net: Network<f32> = microlens_depth_network(23, 0).unwrap();
        for n in [1usize, 2, 5] {
            let shape = net.output_shape((n, 21, 23, 23)).unwrap();
            assert_eq!(shape, (n, 1, 23, 23));
        }
    }

    #[test]
    fn forward_output_shape_and_determinism() {
        let mut net: Network<f32> = microlens_depth_network(23, 7).unwrap();
        let input = Tensor4::from_vec(
            2,
            21,
            23,
            23,
            (0..2 * 21 * 23 * 23).map(|i| ((i % 83) as f32) / 83.0).collect(),
        );
        let a = net.forward_eval(&input).unwrap();
        let b = net.forward_eval(&input).unwrap();
        assert_eq!(a.shape(), (2, 1, 23, 23));
        assert_eq!(a.as_slice(), b.as_slice());
        let (c, _) = net.forward(&input, Mode::Eval).unwrap();
        assert_eq!(a.as_slice(), c.as_slice());
    }

    #[test]
    fn same_seed_gives_identical_parameters() {
        let a: Network<f32> = microlens_depth_network(23, 3).unwrap();
        let b: Network<f32> = microlens_depth_network(23, 3).unwrap();
        for (pa, pb) in a.param_arrays().iter().zip(b.param_arrays()) {
            assert_eq!(*pa, pb);
        }
        let c: Network<f32> = microlens_depth_network(23, 4).unwrap();
        let differs = a
            .param_arrays()
            .iter()
            .zip(c.param_arrays())
            .any(|(x, y)| **x != *y);
        assert!(differs);
    }

    #[test]
    fn rejects_wrong_channel_count() {
        let net: Network<f32> = microlens_depth_network(23, 0).unwrap();
        assert!(net.output_shape((1, 20, 23, 23)).is_err());
    }
}
