use rand::Rng as _;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::rng::Rng;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Activation {
    Relu,
    Sigmoid,
    Identity,
}

impl Activation {
    #[inline]
    fn apply(self, z: f64) -> f64 {
        match self {
            Activation::Relu => z.max(0.0),
            Activation::Sigmoid => sigmoid(z),
            Activation::Identity => z,
        }
    }

    /// Derivative expressed through the activation output `y`.
    /// ReLU uses subgradient 0 at the kink.
    #[inline]
    fn derivative_from_output(self, y: f64) -> f64 {
        match self {
            Activation::Relu => {
                if y > 0.0 {
                    1.0
                } else {
                    0.0
                }
            }
            Activation::Sigmoid => y * (1.0 - y),
            Activation::Identity => 1.0,
        }
    }
}

/// Logistic function, kept strictly inside (0, 1) even when it would round to an endpoint.
#[inline]
pub fn sigmoid(z: f64) -> f64 {
    let y = if z >= 0.0 {
        1.0 / (1.0 + (-z).exp())
    } else {
        let e = z.exp();
        e / (1.0 + e)
    };
    y.clamp(f64::MIN_POSITIVE, 1.0 - f64::EPSILON / 2.0)
}

/// Shape of one affine layer.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct LayerSpec {
    pub inputs: usize,
    pub outputs: usize,
    pub activation: Activation,
}

impl LayerSpec {
    fn weight_count(&self) -> usize {
        self.inputs * self.outputs
    }

    fn param_count(&self) -> usize {
        self.weight_count() + self.outputs
    }
}

/// Fully connected feed-forward network.
///
/// Parameters live in one flat vector, layer by layer: the row-major
/// `outputs x inputs` weight matrix followed by the bias vector.
#[derive(Debug, Clone, PartialEq)]
pub struct DenseNet {
    layers: Vec<LayerSpec>,
    params: Vec<f64>,
}

/// Post-activation values of every layer from one forward pass; index 0 is the input.
#[derive(Debug, Clone, Default)]
pub struct Trace {
    activations: Vec<Vec<f64>>,
}

impl Trace {
    pub fn output(&self) -> &[f64] {
        self.activations.last().map(Vec::as_slice).unwrap_or(&[])
    }
}

impl DenseNet {
    /// Zero-initialized network. `layers` must chain.
    pub fn zeros(layers: Vec<LayerSpec>) -> Result<Self> {
        if layers.is_empty() {
            return Err(Error::invalid("network needs at least one layer"));
        }
        for pair in layers.windows(2) {
            if pair[0].outputs != pair[1].inputs {
                return Err(Error::DimensionMismatch {
                    expected: pair[0].outputs,
                    actual: pair[1].inputs,
                });
            }
        }
        let count = layers.iter().map(LayerSpec::param_count).sum();
        Ok(Self {
            layers,
            params: vec![0.0; count],
        })
    }

    /// Chain of layers through `widths` with `hidden` activations and a final `output` activation.
    pub fn mlp(widths: &[usize], hidden: Activation, output: Activation) -> Result<Self> {
        if widths.len() < 2 {
            return Err(Error::invalid("an mlp needs input and output widths"));
        }
        let last = widths.len() - 2;
        let layers = widths
            .windows(2)
            .enumerate()
            .map(|(i, w)| LayerSpec {
                inputs: w[0],
                outputs: w[1],
                activation: if i == last { output } else { hidden },
            })
            .collect();
        Self::zeros(layers)
    }

    /// He-uniform weights for ReLU layers, Glorot-uniform otherwise; zero biases.
    pub fn init(&mut self, rng: &mut Rng) {
        let mut offset = 0;
        for layer in &self.layers {
            let limit = match layer.activation {
                Activation::Relu => (6.0 / layer.inputs as f64).sqrt(),
                _ => (6.0 / (layer.inputs + layer.outputs) as f64).sqrt(),
            };
            let wc = layer.weight_count();
            for w in &mut self.params[offset..offset + wc] {
                *w = rng.random_range(-limit..limit);
            }
            self.params[offset + wc..offset + layer.param_count()].fill(0.0);
            offset += layer.param_count();
        }
    }

    pub fn initialized(mut self, rng: &mut Rng) -> Self {
        self.init(rng);
        self
    }

    pub fn layers(&self) -> &[LayerSpec] {
        &self.layers
    }

    pub fn input_dim(&self) -> usize {
        self.layers[0].inputs
    }

    pub fn output_dim(&self) -> usize {
        self.layers[self.layers.len() - 1].outputs
    }

    pub fn params(&self) -> &[f64] {
        &self.params
    }

    pub fn params_mut(&mut self) -> &mut [f64] {
        &mut self.params
    }

    pub fn num_params(&self) -> usize {
        self.params.len()
    }

    pub fn set_params(&mut self, params: Vec<f64>) -> Result<()> {
        if params.len() != self.params.len() {
            return Err(Error::DimensionMismatch {
                expected: self.params.len(),
                actual: params.len(),
            });
        }
        self.params = params;
        Ok(())
    }

    /// Zero the weights and bias of the last layer.
    pub fn zero_last_layer(&mut self) {
        let last = self.layers[self.layers.len() - 1].param_count();
        let n = self.params.len();
        self.params[n - last..].fill(0.0);
    }

    fn check_input(&self, x: &[f64]) -> Result<()> {
        if x.len() != self.input_dim() {
            return Err(Error::DimensionMismatch {
                expected: self.input_dim(),
                actual: x.len(),
            });
        }
        Ok(())
    }

    pub fn forward(&self, x: &[f64]) -> Result<Vec<f64>> {
        self.check_input(x)?;
        let mut current = x.to_vec();
        let mut offset = 0;
        for layer in &self.layers {
            current = self.layer_forward(layer, offset, &current);
            offset += layer.param_count();
        }
        Ok(current)
    }

    pub fn forward_traced(&self, x: &[f64]) -> Result<Trace> {
        self.check_input(x)?;
        let mut activations = Vec::with_capacity(self.layers.len() + 1);
        activations.push(x.to_vec());
        let mut offset = 0;
        for layer in &self.layers {
            let next = self.layer_forward(layer, offset, activations.last().expect("non-empty"));
            activations.push(next);
            offset += layer.param_count();
        }
        Ok(Trace { activations })
    }

    #[inline]
    fn layer_forward(&self, layer: &LayerSpec, offset: usize, x: &[f64]) -> Vec<f64> {
        let (w, rest) = self.params[offset..].split_at(layer.weight_count());
        let b = &rest[..layer.outputs];
        w.chunks_exact(layer.inputs)
            .zip(b)
            .map(|(row, bias)| layer.activation.apply(dot(row, x) + bias))
            .collect()
    }

    /// Pre-activation of the last layer for a traced forward.
    pub fn last_preactivation(&self, trace: &Trace) -> Vec<f64> {
        let layer = self.layers[self.layers.len() - 1];
        let offset = self.params.len() - layer.param_count();
        let (w, b) = self.params[offset..].split_at(layer.weight_count());
        let x = &trace.activations[trace.activations.len() - 2];
        w.chunks_exact(layer.inputs).zip(b).map(|(row, bias)| dot(row, x) + bias).collect()
    }

    /// Reverse pass for a traced forward. Parameter gradients of
    /// `upstream · output` are added into `grads`; returns the input gradient.
    pub fn backward(&self, trace: &Trace, upstream: &[f64], grads: &mut [f64]) -> Result<Vec<f64>> {
        self.reverse(trace, upstream, Some(grads), false)
    }

    /// Input gradient only; parameter gradients are not formed.
    pub fn backward_input(&self, trace: &Trace, upstream: &[f64]) -> Result<Vec<f64>> {
        self.reverse(trace, upstream, None, false)
    }

    /// As [`DenseNet::backward`], with `upstream` taken with respect to the
    /// last layer's pre-activation. Pairs a sigmoid output with a loss
    /// written on logits, so saturation does not zero the signal.
    pub fn backward_from_logits(&self, trace: &Trace, upstream: &[f64], grads: &mut [f64]) -> Result<Vec<f64>> {
        self.reverse(trace, upstream, Some(grads), true)
    }

    pub fn backward_input_from_logits(&self, trace: &Trace, upstream: &[f64]) -> Result<Vec<f64>> {
        self.reverse(trace, upstream, None, true)
    }

    fn reverse(
        &self,
        trace: &Trace,
        upstream: &[f64],
        mut grads: Option<&mut [f64]>,
        from_logits: bool,
    ) -> Result<Vec<f64>> {
        if upstream.len() != self.output_dim() {
            return Err(Error::DimensionMismatch {
                expected: self.output_dim(),
                actual: upstream.len(),
            });
        }
        if let Some(g) = &grads {
            if g.len() != self.params.len() {
                return Err(Error::DimensionMismatch {
                    expected: self.params.len(),
                    actual: g.len(),
                });
            }
        }
        if trace.activations.len() != self.layers.len() + 1 {
            return Err(Error::invalid("trace does not belong to this network"));
        }
        let last = self.layers.len() - 1;
        let mut delta = upstream.to_vec();
        let mut offset = self.params.len();
        for (idx, layer) in self.layers.iter().enumerate().rev() {
            offset -= layer.param_count();
            let input = &trace.activations[idx];
            if !(from_logits && idx == last) {
                for (d, y) in delta.iter_mut().zip(&trace.activations[idx + 1]) {
                    *d *= layer.activation.derivative_from_output(*y);
                }
            }
            let wc = layer.weight_count();
            if let Some(g) = grads.as_deref_mut() {
                let (gw, gb) = g[offset..offset + layer.param_count()].split_at_mut(wc);
                for ((grow, gbias), d) in gw.chunks_exact_mut(layer.inputs).zip(gb.iter_mut()).zip(&delta) {
                    if *d == 0.0 {
                        continue;
                    }
                    *gbias += d;
                    for (g, xi) in grow.iter_mut().zip(input) {
                        *g += d * xi;
                    }
                }
            }
            let w = &self.params[offset..offset + wc];
            let mut next = vec![0.0; layer.inputs];
            for (row, d) in w.chunks_exact(layer.inputs).zip(&delta) {
                if *d == 0.0 {
                    continue;
                }
                for (n, wij) in next.iter_mut().zip(row) {
                    *n += d * wij;
                }
            }
            delta = next;
        }
        Ok(delta)
    }

    /// Forward then backward at `x`: `(param_grads, input_grad)` of `upstream · f(x)`.
    pub fn gradients(&self, x: &[f64], upstream: &[f64]) -> Result<(Vec<f64>, Vec<f64>)> {
        let trace = self.forward_traced(x)?;
        let mut grads = vec![0.0; self.params.len()];
        let input_grad = self.backward(&trace, upstream, &mut grads)?;
        Ok((grads, input_grad))
    }
}

#[inline]
fn dot(a: &[f64], b: &[f64]) -> f64 {
    // four accumulators let the compiler keep the adds independent
    let mut acc = [0.0f64; 4];
    let chunks_a = a.chunks_exact(4);
    let chunks_b = b.chunks_exact(4);
    let tail: f64 = chunks_a
        .remainder()
        .iter()
        .zip(chunks_b.remainder())
        .map(|(x, y)| x * y)
        .sum();
    for (ca, cb) in chunks_a.zip(chunks_b) {
        acc[0] += ca[0] * cb[0];
        acc[1] += ca[1] * cb[1];
        acc[2] += ca[2] * cb[2];
        acc[3] += ca[3] * cb[3];
    }
    (acc[0] + acc[1]) + (acc[2] + acc[3]) + tail
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng;

    fn single(w: f64, b: f64, act: Activation) -> DenseNet {
        let mut net = DenseNet::mlp(&[1, 1], act, act).unwrap();
        net.set_params(vec![w, b]).unwrap();
        net
    }

    #[test]
    fn zero_net_outputs_zero() {
        let net = DenseNet::mlp(&[3, 4, 2], Activation::Identity, Activation::Identity).unwrap();
        assert_eq!(net.forward(&[1.0, -2.0, 3.0]).unwrap(), vec![0.0, 0.0]);
    }

    #[test]
    fn affine_and_relu_examples() {
        assert_eq!(single(2.0, 1.0, Activation::Identity).forward(&[3.0]).unwrap(), vec![7.0]);
        assert_eq!(single(1.0, 0.0, Activation::Relu).forward(&[-5.0]).unwrap(), vec![0.0]);
    }

    #[test]
    fn sigmoid_output_in_open_interval() {
        let mut rng = rng::from_seed(1);
        let net = DenseNet::mlp(&[2, 8, 1], Activation::Relu, Activation::Sigmoid)
            .unwrap()
            .initialized(&mut rng);
        for x in [-3.0, -1.0, 0.0, 1.0, 3.0] {
            let y = net.forward(&[x, -x]).unwrap()[0];
            assert!(y > 0.0 && y < 1.0);
        }
        assert!(sigmoid(0.0) == 0.5);
        for z in [-800.0, -40.0, 40.0, 800.0] {
            assert!(sigmoid(z) > 0.0 && sigmoid(z) < 1.0, "{z}");
        }
    }

    #[test]
    fn identity_net_passes_gradient_through() {
        let net = single(1.0, 0.0, Activation::Identity);
        let (_, input_grad) = net.gradients(&[0.3], &[2.5]).unwrap();
        assert_eq!(input_grad, vec![2.5]);
    }

    #[test]
    fn relu_kink_has_zero_subgradient() {
        let net = single(1.0, 0.0, Activation::Relu);
        let (grads, input_grad) = net.gradients(&[0.0], &[1.0]).unwrap();
        assert_eq!(input_grad, vec![0.0]);
        assert_eq!(grads, vec![0.0, 0.0]);
    }

    #[test]
    fn dimension_mismatch_is_reported() {
        let net = DenseNet::mlp(&[3, 2], Activation::Relu, Activation::Identity).unwrap();
        assert!(matches!(
            net.forward(&[1.0]),
            Err(Error::DimensionMismatch { expected: 3, actual: 1 })
        ));
        let trace = net.forward_traced(&[1.0, 2.0, 3.0]).unwrap();
        let mut g = vec![0.0; net.num_params()];
        assert!(net.backward(&trace, &[1.0], &mut g).is_err());
        let bad = DenseNet::zeros(vec![
            LayerSpec { inputs: 2, outputs: 3, activation: Activation::Relu },
            LayerSpec { inputs: 4, outputs: 1, activation: Activation::Identity },
        ]);
        assert!(bad.is_err());
    }

    #[test]
    fn init_is_bounded_and_biases_zero() {
        let mut rng = rng::from_seed(2);
        let net = DenseNet::mlp(&[10, 20, 1], Activation::Relu, Activation::Sigmoid)
            .unwrap()
            .initialized(&mut rng);
        let he = (6.0f64 / 10.0).sqrt();
        let p = net.params();
        assert!(p[..200].iter().all(|w| w.abs() <= he));
        assert!(p[200..220].iter().all(|b| *b == 0.0));
        let glorot = (6.0f64 / 21.0).sqrt();
        assert!(p[220..240].iter().all(|w| w.abs() <= glorot));
    }
}
