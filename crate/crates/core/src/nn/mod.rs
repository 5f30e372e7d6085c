//! Dense feed-forward networks with hand-written reverse-mode gradients.
//!
//! Everything is `f64`. Weights are stored row-major as `[out][in]`.

mod adam;
pub mod checkpoint;

pub use adam::{adam_step, AdamConfig, AdamState};

use rand::Rng;
use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum NnError {
    #[error("dimension mismatch: expected {expected}, got {actual}")]
    DimensionMismatch { expected: usize, actual: usize },
    #[error("forward cache does not match this network")]
    StaleCache,
    #[error("parameter/gradient shapes disagree")]
    ShapeMismatch,
    #[error("non-finite gradient")]
    NonFiniteGradient,
    #[error("invalid architecture: {0}")]
    BadArchitecture(String),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Activation {
    Tanh,
    Identity,
}

impl Activation {
    pub fn as_str(self) -> &'static str {
        match self {
            Activation::Tanh => "tanh",
            Activation::Identity => "identity",
        }
    }

    fn apply(self, xs: &mut [f64]) {
        if let Activation::Tanh = self {
            xs.iter_mut().for_each(|x| *x = x.tanh());
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct DenseLayer {
    pub inputs: usize,
    pub outputs: usize,
    /// Row-major `[outputs][inputs]`.
    pub weights: Vec<f64>,
    pub biases: Vec<f64>,
    pub activation: Activation,
}

impl DenseLayer {
    pub fn zeros(inputs: usize, outputs: usize, activation: Activation) -> Self {
        Self {
            inputs,
            outputs,
            weights: vec![0.0; inputs * outputs],
            biases: vec![0.0; outputs],
            activation,
        }
    }

    /// Glorot-uniform weights, zero biases.
    pub fn glorot<R: Rng + ?Sized>(
        inputs: usize,
        outputs: usize,
        activation: Activation,
        rng: &mut R,
    ) -> Self {
        let limit = (6.0 / (inputs + outputs) as f64).sqrt();
        let mut layer = Self::zeros(inputs, outputs, activation);
        for w in &mut layer.weights {
            *w = rng.gen_range(-limit..=limit);
        }
        layer
    }

    pub fn row(&self, o: usize) -> &[f64] {
        &self.weights[o * self.inputs..(o + 1) * self.inputs]
    }

    fn affine_into(&self, x: &[f64], out: &mut [f64]) {
        kernels::affine(&self.weights, &self.biases, x, out);
    }

    fn parameter_count(&self) -> usize {
        self.weights.len() + self.biases.len()
    }
}

mod kernels {
    //! Inner loops. An AVX build of the same code is picked at runtime; it
    //! performs the same operations in the same order, so results match the
    //! portable path bit for bit.

    /// Four-lane dot product with a fixed summation order.
    #[inline(always)]
    fn dot(a: &[f64], b: &[f64]) -> f64 {
        let mut acc = [0.0f64; 4];
        let ca = a.chunks_exact(4);
        let cb = b.chunks_exact(4);
        let (ta, tb) = (ca.remainder(), cb.remainder());
        for (x, y) in ca.zip(cb) {
            acc[0] += x[0] * y[0];
            acc[1] += x[1] * y[1];
            acc[2] += x[2] * y[2];
            acc[3] += x[3] * y[3];
        }
        let mut tail = 0.0;
        for (x, y) in ta.iter().zip(tb) {
            tail += x * y;
        }
        (acc[0] + acc[1]) + (acc[2] + acc[3]) + tail
    }

    #[inline(always)]
    fn axpy(alpha: f64, x: &[f64], y: &mut [f64]) {
        for (yi, xi) in y.iter_mut().zip(x) {
            *yi += alpha * xi;
        }
    }

    #[inline(always)]
    fn affine_body(w: &[f64], b: &[f64], x: &[f64], out: &mut [f64]) {
        let n = x.len();
        for ((y, bias), row) in out.iter_mut().zip(b).zip(w.chunks_exact(n)) {
            *y = bias + dot(row, x);
        }
    }

    #[inline(always)]
    fn backward_body(
        w: &[f64],
        input: &[f64],
        delta: &[f64],
        gw: &mut [f64],
        gb: &mut [f64],
        mut input_grad: Option<&mut [f64]>,
    ) {
        let n = input.len();
        for (o, &d) in delta.iter().enumerate() {
            gb[o] += d;
            if d != 0.0 {
                axpy(d, input, &mut gw[o * n..(o + 1) * n]);
                if let Some(ig) = input_grad.as_deref_mut() {
                    axpy(d, &w[o * n..(o + 1) * n], ig);
                }
            }
        }
    }

    #[cfg(target_arch = "x86_64")]
    #[target_feature(enable = "avx")]
    unsafe fn affine_avx(w: &[f64], b: &[f64], x: &[f64], out: &mut [f64]) {
        affine_body(w, b, x, out)
    }

    #[cfg(target_arch = "x86_64")]
    #[target_feature(enable = "avx")]
    unsafe fn backward_avx(
        w: &[f64],
        input: &[f64],
        delta: &[f64],
        gw: &mut [f64],
        gb: &mut [f64],
        input_grad: Option<&mut [f64]>,
    ) {
        backward_body(w, input, delta, gw, gb, input_grad)
    }

    /// `out = W·x + b` with `W` row-major `[out.len()][x.len()]`.
    pub(super) fn affine(w: &[f64], b: &[f64], x: &[f64], out: &mut [f64]) {
        #[cfg(target_arch = "x86_64")]
        if std::is_x86_feature_detected!("avx") {
            // SAFETY: the CPU supports AVX.
            return unsafe { affine_avx(w, b, x, out) };
        }
        affine_body(w, b, x, out)
    }

    /// Accumulates `delta ⊗ input` into `gw`, `delta` into `gb`, and `Wᵀ·delta` into `input_grad`.
    pub(super) fn backward(
        w: &[f64],
        input: &[f64],
        delta: &[f64],
        gw: &mut [f64],
        gb: &mut [f64],
        input_grad: Option<&mut [f64]>,
    ) {
        #[cfg(target_arch = "x86_64")]
        if std::is_x86_feature_detected!("avx") {
            // SAFETY: the CPU supports AVX.
            return unsafe { backward_avx(w, input, delta, gw, gb, input_grad) };
        }
        backward_body(w, input, delta, gw, gb, input_grad)
    }
}

/// Multi-layer perceptron.
#[derive(Debug, Clone, PartialEq)]
pub struct Mlp {
    layers: Vec<DenseLayer>,
}

impl Mlp {
    pub fn from_layers(layers: Vec<DenseLayer>) -> Result<Self, NnError> {
        if layers.is_empty() {
            return Err(NnError::BadArchitecture("no layers".into()));
        }
        for l in &layers {
            if l.weights.len() != l.inputs * l.outputs || l.biases.len() != l.outputs {
                return Err(NnError::ShapeMismatch);
            }
        }
        for pair in layers.windows(2) {
            if pair[0].outputs != pair[1].inputs {
                return Err(NnError::DimensionMismatch {
                    expected: pair[0].outputs,
                    actual: pair[1].inputs,
                });
            }
        }
        Ok(Self { layers })
    }

    /// `sizes = [in, h1, ..., out]`; `hidden` on every layer but the last, identity output.
    pub fn new<R: Rng + ?Sized>(sizes: &[usize], hidden: Activation, rng: &mut R) -> Self {
        assert!(sizes.len() >= 2, "an MLP needs input and output sizes");
        let n = sizes.len() - 1;
        let layers = (0..n)
            .map(|i| {
                let act = if i + 1 == n {
                    Activation::Identity
                } else {
                    hidden
                };
                DenseLayer::glorot(sizes[i], sizes[i + 1], act, rng)
            })
            .collect();
        Self { layers }
    }

    pub fn layers(&self) -> &[DenseLayer] {
        &self.layers
    }

    pub fn layers_mut(&mut self) -> &mut [DenseLayer] {
        &mut self.layers
    }

    pub fn input_size(&self) -> usize {
        self.layers[0].inputs
    }

    pub fn output_size(&self) -> usize {
        self.layers[self.layers.len() - 1].outputs
    }

    pub fn parameter_count(&self) -> usize {
        self.layers.iter().map(DenseLayer::parameter_count).sum()
    }

    fn check_input(&self, input: &[f64]) -> Result<(), NnError> {
        if input.len() != self.input_size() {
            return Err(NnError::DimensionMismatch {
                expected: self.input_size(),
                actual: input.len(),
            });
        }
        Ok(())
    }

    /// Forward pass without keeping intermediates.
    pub fn forward(&self, input: &[f64]) -> Result<Vec<f64>, NnError> {
        self.check_input(input)?;
        let mut x = input.to_vec();
        for layer in &self.layers {
            let mut y = vec![0.0; layer.outputs];
            layer.affine_into(&x, &mut y);
            layer.activation.apply(&mut y);
            x = y;
        }
        Ok(x)
    }

    /// Forward pass recording each layer's input and output for [`Mlp::backward`].
    pub fn forward_cached(&self, input: &[f64], cache: &mut ForwardCache) -> Result<(), NnError> {
        self.check_input(input)?;
        cache.shape_for(self);
        cache.activations[0].copy_from_slice(input);
        for (i, layer) in self.layers.iter().enumerate() {
            let (before, after) = cache.activations.split_at_mut(i + 1);
            let out = &mut after[0];
            layer.affine_into(&before[i], out);
            layer.activation.apply(out);
        }
        Ok(())
    }

    /// Accumulates parameter gradients of a scalar loss into `grads` and returns dL/dinput.
    pub fn backward(
        &self,
        cache: &ForwardCache,
        output_grad: &[f64],
        grads: &mut Gradients,
    ) -> Result<Vec<f64>, NnError> {
        if !cache.matches(self) || !grads.matches(self) {
            return Err(NnError::StaleCache);
        }
        if output_grad.len() != self.output_size() {
            return Err(NnError::DimensionMismatch {
                expected: self.output_size(),
                actual: output_grad.len(),
            });
        }
        let mut delta = output_grad.to_vec();
        for (i, layer) in self.layers.iter().enumerate().rev() {
            let out = &cache.activations[i + 1];
            if let Activation::Tanh = layer.activation {
                for (d, y) in delta.iter_mut().zip(out) {
                    *d *= 1.0 - y * y;
                }
            }
            let input = &cache.activations[i];
            let g = &mut grads.layers[i];
            let mut input_grad = vec![0.0; layer.inputs];
            kernels::backward(
                &layer.weights,
                input,
                &delta,
                &mut g.weights,
                &mut g.biases,
                Some(&mut input_grad),
            );
            delta = input_grad;
        }
        Ok(delta)
    }

    pub fn zero_gradients(&self) -> Gradients {
        Gradients {
            layers: self
                .layers
                .iter()
                .map(|l| LayerGradient {
                    weights: vec![0.0; l.weights.len()],
                    biases: vec![0.0; l.biases.len()],
                })
                .collect(),
        }
    }

    /// Parameters in layer order, weights (row-major) then biases.
    pub fn parameters(&self) -> Vec<f64> {
        let mut out = Vec::with_capacity(self.parameter_count());
        for l in &self.layers {
            out.extend_from_slice(&l.weights);
            out.extend_from_slice(&l.biases);
        }
        out
    }

    pub fn set_parameters(&mut self, params: &[f64]) -> Result<(), NnError> {
        if params.len() != self.parameter_count() {
            return Err(NnError::ShapeMismatch);
        }
        let mut k = 0;
        for l in &mut self.layers {
            let nw = l.weights.len();
            l.weights.copy_from_slice(&params[k..k + nw]);
            k += nw;
            let nb = l.biases.len();
            l.biases.copy_from_slice(&params[k..k + nb]);
            k += nb;
        }
        Ok(())
    }
}

/// Per-layer inputs/outputs from the last [`Mlp::forward_cached`] call.
#[derive(Debug, Clone, Default)]
pub struct ForwardCache {
    /// `activations[0]` is the input, `activations[i + 1]` the output of layer `i`.
    activations: Vec<Vec<f64>>,
}

impl ForwardCache {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn output(&self) -> &[f64] {
        self.activations.last().map(Vec::as_slice).unwrap_or(&[])
    }

    fn shape_for(&mut self, net: &Mlp) {
        if !self.matches(net) {
            self.activations = std::iter::once(net.input_size())
                .chain(net.layers.iter().map(|l| l.outputs))
                .map(|n| vec![0.0; n])
                .collect();
        }
    }

    fn matches(&self, net: &Mlp) -> bool {
        self.activations.len() == net.layers.len() + 1
            && self.activations[0].len() == net.input_size()
            && net
                .layers
                .iter()
                .zip(&self.activations[1..])
                .all(|(l, a)| a.len() == l.outputs)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct LayerGradient {
    pub weights: Vec<f64>,
    pub biases: Vec<f64>,
}

/// Parameter gradients shaped like an [`Mlp`].
#[derive(Debug, Clone, PartialEq)]
pub struct Gradients {
    pub layers: Vec<LayerGradient>,
}

impl Gradients {
    fn matches(&self, net: &Mlp) -> bool {
        self.layers.len() == net.layers.len()
            && self.layers.iter().zip(&net.layers).all(|(g, l)| {
                g.weights.len() == l.weights.len() && g.biases.len() == l.biases.len()
            })
    }

    pub fn zero(&mut self) {
        for g in &mut self.layers {
            g.weights.fill(0.0);
            g.biases.fill(0.0);
        }
    }

    fn values_mut(&mut self) -> impl Iterator<Item = &mut f64> {
        self.layers
            .iter_mut()
            .flat_map(|g| g.weights.iter_mut().chain(g.biases.iter_mut()))
    }

    pub fn values(&self) -> impl Iterator<Item = f64> + '_ {
        self.layers
            .iter()
            .flat_map(|g| g.weights.iter().chain(g.biases.iter()).copied())
    }

    pub fn scale(&mut self, factor: f64) {
        self.values_mut().for_each(|v| *v *= factor);
    }

    pub fn l2_norm(&self) -> f64 {
        self.values().map(|v| v * v).sum::<f64>().sqrt()
    }

    /// Rescales to at most `max_norm` in L2; returns the norm before clipping.
    pub fn clip_norm(&mut self, max_norm: f64) -> f64 {
        let norm = self.l2_norm();
        if norm > max_norm && norm > 0.0 {
            self.scale(max_norm / norm);
        }
        norm
    }
}

/// Max-subtracted softmax.
pub fn softmax(logits: &[f64]) -> Vec<f64> {
    let max = logits.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let exps: Vec<f64> = logits.iter().map(|z| (z - max).exp()).collect();
    let total: f64 = exps.iter().sum();
    exps.into_iter().map(|e| e / total).collect()
}

/// Softmax over the three action logits.
pub fn softmax_logits_to_distribution(logits: &[f64; 3]) -> [f64; 3] {
    let p = softmax(logits);
    [p[0], p[1], p[2]]
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn zero_weights_identity_outputs_bias() {
        let mut layer = DenseLayer::zeros(3, 2, Activation::Identity);
        layer.biases = vec![0.25, -1.5];
        let net = Mlp::from_layers(vec![layer]).unwrap();
        assert_eq!(net.forward(&[1.0, 2.0, 3.0]).unwrap(), vec![0.25, -1.5]);
    }

    #[test]
    fn scalar_affine() {
        let mut layer = DenseLayer::zeros(1, 1, Activation::Identity);
        layer.weights[0] = 2.0;
        let net = Mlp::from_layers(vec![layer]).unwrap();
        assert_eq!(net.forward(&[3.0]).unwrap(), vec![6.0]);

        let mut cache = ForwardCache::new();
        net.forward_cached(&[3.0], &mut cache).unwrap();
        let mut g = net.zero_gradients();
        let dx = net.backward(&cache, &[1.0], &mut g).unwrap();
        assert_eq!(g.layers[0].weights[0], 3.0);
        assert_eq!(g.layers[0].biases[0], 1.0);
        assert_eq!(dx, vec![2.0]);
    }

    #[test]
    fn zero_output_gradient_gives_zero_gradients() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let net = Mlp::new(&[4, 8, 3], Activation::Tanh, &mut rng);
        let mut cache = ForwardCache::new();
        net.forward_cached(&[0.1, 0.2, 0.3, 0.4], &mut cache)
            .unwrap();
        let mut g = net.zero_gradients();
        net.backward(&cache, &[0.0; 3], &mut g).unwrap();
        assert!(g.values().all(|v| v == 0.0));
    }

    #[test]
    fn dimension_errors() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let net = Mlp::new(&[4, 8, 3], Activation::Tanh, &mut rng);
        assert!(matches!(
            net.forward(&[1.0; 3]),
            Err(NnError::DimensionMismatch {
                expected: 4,
                actual: 3
            })
        ));
        let other = Mlp::new(&[4, 5, 3], Activation::Tanh, &mut rng);
        let mut cache = ForwardCache::new();
        other.forward_cached(&[0.0; 4], &mut cache).unwrap();
        let mut g = net.zero_gradients();
        assert_eq!(
            net.backward(&cache, &[1.0; 3], &mut g),
            Err(NnError::StaleCache)
        );
        assert!(Mlp::from_layers(vec![
            DenseLayer::zeros(2, 3, Activation::Tanh),
            DenseLayer::zeros(4, 1, Activation::Identity),
        ])
        .is_err());
    }

    #[test]
    fn glorot_bounds_and_zero_bias() {
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        let net = Mlp::new(&[4, 64, 64, 3], Activation::Tanh, &mut rng);
        let limit = (6.0f64 / 128.0).sqrt();
        assert!(net.layers()[1].weights.iter().all(|w| w.abs() <= limit));
        assert!(net
            .layers()
            .iter()
            .all(|l| l.biases.iter().all(|b| *b == 0.0)));
        assert_eq!(net.layers()[2].activation, Activation::Identity);
    }

    #[test]
    fn softmax_examples() {
        let p = softmax_logits_to_distribution(&[0.0, 0.0, 0.0]);
        for v in p {
            assert!((v - 1.0 / 3.0).abs() < 1e-15);
        }
        let p = softmax_logits_to_distribution(&[1000.0, 0.0, 0.0]);
        assert!(p.iter().all(|v| v.is_finite()));
        assert!((p[0] - 1.0).abs() < 1e-12);

        let z = [1.0f64, 2.0, 3.0];
        let denom: f64 = z.iter().map(|v| v.exp()).sum();
        let p = softmax_logits_to_distribution(&z);
        for i in 0..3 {
            assert!((p[i] - z[i].exp() / denom).abs() < 1e-12);
        }
    }

    #[test]
    fn parameter_round_trip() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let net = Mlp::new(&[4, 6, 2], Activation::Tanh, &mut rng);
        let mut other = Mlp::new(&[4, 6, 2], Activation::Tanh, &mut rng);
        other.set_parameters(&net.parameters()).unwrap();
        assert_eq!(other, net);
    }

    #[test]
    fn clip_norm_rescales() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let net = Mlp::new(&[2, 2], Activation::Tanh, &mut rng);
        let mut g = net.zero_gradients();
        g.layers[0].weights = vec![3.0, 0.0, 0.0, 4.0];
        assert_eq!(g.clip_norm(0.5), 5.0);
        assert!((g.l2_norm() - 0.5).abs() < 1e-12);
    }
}
