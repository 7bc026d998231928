//! Small dense multilayer perceptron with hand-written backprop and SGD.
//!
//! Loss convention throughout: `L = (1 / 2N) * sum_i ||f(x_i) - y_i||^2`.

use std::path::Path;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Activation {
    Relu,
    Tanh,
    Identity,
}

impl Activation {
    #[inline]
    fn apply(self, x: f64) -> f64 {
        match self {
            Activation::Relu => x.max(0.0),
            Activation::Tanh => x.tanh(),
            Activation::Identity => x,
        }
    }

    /// Derivative expressed through the activation's output.
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
            Activation::Tanh => 1.0 - y * y,
            Activation::Identity => 1.0,
        }
    }
}

/// Dense layer, weights stored row-major as `out_dim x in_dim`.
#[derive(Debug, Clone, PartialEq)]
pub struct Layer {
    in_dim: usize,
    out_dim: usize,
    weights: Vec<f64>,
    biases: Vec<f64>,
}

impl Layer {
    pub fn in_dim(&self) -> usize {
        self.in_dim
    }

    pub fn out_dim(&self) -> usize {
        self.out_dim
    }

    pub fn weights(&self) -> &[f64] {
        &self.weights
    }

    pub fn biases(&self) -> &[f64] {
        &self.biases
    }

    pub fn weights_mut(&mut self) -> &mut [f64] {
        &mut self.weights
    }

    pub fn biases_mut(&mut self) -> &mut [f64] {
        &mut self.biases
    }

    #[inline]
    fn affine(&self, x: &[f64], out: &mut [f64]) {
        for (o, out_v) in out.iter_mut().enumerate() {
            let row = &self.weights[o * self.in_dim..(o + 1) * self.in_dim];
            let mut acc = self.biases[o];
            for (w, xi) in row.iter().zip(x) {
                acc += w * xi;
            }
            *out_v = acc;
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Mlp {
    layers: Vec<Layer>,
    hidden: Activation,
}

/// Activations from one forward pass: `values()[0]` is the input,
/// `values()[k]` the post-activation output of layer `k - 1`.
#[derive(Debug, Clone)]
pub struct ForwardCache {
    values: Vec<Vec<f64>>,
}

impl ForwardCache {
    pub fn output(&self) -> &[f64] {
        self.values.last().expect("cache holds at least the input")
    }

    pub fn values(&self) -> &[Vec<f64>] {
        &self.values
    }

    /// Output of hidden layer `k` (1-based, as in `values`).
    pub fn hidden(&self, k: usize) -> &[f64] {
        &self.values[k]
    }
}

/// Parameter gradients, same layout as the network.
#[derive(Debug, Clone, PartialEq)]
pub struct Gradients {
    pub weights: Vec<Vec<f64>>,
    pub biases: Vec<Vec<f64>>,
}

impl Gradients {
    pub fn zeros_like(net: &Mlp) -> Self {
        Gradients {
            weights: net
                .layers
                .iter()
                .map(|l| vec![0.0; l.weights.len()])
                .collect(),
            biases: net
                .layers
                .iter()
                .map(|l| vec![0.0; l.biases.len()])
                .collect(),
        }
    }

    pub fn clear(&mut self) {
        self.weights
            .iter_mut()
            .chain(self.biases.iter_mut())
            .for_each(|v| v.fill(0.0));
    }

    pub fn scale(&mut self, s: f64) {
        self.weights
            .iter_mut()
            .chain(self.biases.iter_mut())
            .flat_map(|v| v.iter_mut())
            .for_each(|g| *g *= s);
    }

    pub fn flat(&self) -> impl Iterator<Item = f64> + '_ {
        self.weights
            .iter()
            .zip(&self.biases)
            .flat_map(|(w, b)| w.iter().chain(b.iter()).copied())
    }

    fn first_non_finite(&self) -> Option<usize> {
        self.weights
            .iter()
            .zip(&self.biases)
            .position(|(w, b)| w.iter().chain(b).any(|g| !g.is_finite()))
    }
}

impl Mlp {
    /// Network with all parameters zero.
    pub fn zeros(layer_sizes: &[usize], hidden: Activation) -> Result<Self> {
        if layer_sizes.len() < 2 || layer_sizes.contains(&0) {
            return Err(Error::Architecture(format!(
                "invalid layer sizes {layer_sizes:?}"
            )));
        }
        let layers = layer_sizes
            .windows(2)
            .map(|w| Layer {
                in_dim: w[0],
                out_dim: w[1],
                weights: vec![0.0; w[0] * w[1]],
                biases: vec![0.0; w[1]],
            })
            .collect();
        Ok(Mlp { layers, hidden })
    }

    /// Glorot-uniform weights in `[-s, s]`, `s = scale * sqrt(6 / (fan_in + fan_out))`; zero biases.
    pub fn random(
        layer_sizes: &[usize],
        hidden: Activation,
        scale: f64,
        seed: u64,
    ) -> Result<Self> {
        let mut net = Self::zeros(layer_sizes, hidden)?;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        for l in &mut net.layers {
            let s = scale * (6.0 / (l.in_dim + l.out_dim) as f64).sqrt();
            l.weights
                .iter_mut()
                .for_each(|w| *w = rng.random_range(-s..=s));
        }
        Ok(net)
    }

    pub fn layer_sizes(&self) -> Vec<usize> {
        std::iter::once(self.layers[0].in_dim)
            .chain(self.layers.iter().map(|l| l.out_dim))
            .collect()
    }

    pub fn input_dim(&self) -> usize {
        self.layers[0].in_dim
    }

    pub fn output_dim(&self) -> usize {
        self.layers.last().map(|l| l.out_dim).unwrap_or(0)
    }

    pub fn hidden_activation(&self) -> Activation {
        self.hidden
    }

    pub fn layers(&self) -> &[Layer] {
        &self.layers
    }

    pub fn layers_mut(&mut self) -> &mut [Layer] {
        &mut self.layers
    }

    pub fn param_count(&self) -> usize {
        self.layers
            .iter()
            .map(|l| l.weights.len() + l.biases.len())
            .sum()
    }

    fn activation_of(&self, layer: usize) -> Activation {
        if layer + 1 == self.layers.len() {
            Activation::Identity
        } else {
            self.hidden
        }
    }

    pub fn forward(&self, x: &[f64]) -> Result<ForwardCache> {
        if x.len() != self.input_dim() {
            return Err(Error::Shape {
                expected: self.input_dim(),
                got: x.len(),
            });
        }
        let mut values = Vec::with_capacity(self.layers.len() + 1);
        values.push(x.to_vec());
        for (k, layer) in self.layers.iter().enumerate() {
            let mut out = vec![0.0; layer.out_dim];
            layer.affine(&values[k], &mut out);
            let act = self.activation_of(k);
            if act != Activation::Identity {
                out.iter_mut().for_each(|v| *v = act.apply(*v));
            }
            values.push(out);
        }
        Ok(ForwardCache { values })
    }

    pub fn predict(&self, x: &[f64]) -> Result<Vec<f64>> {
        Ok(self.forward(x)?.values.pop().unwrap_or_default())
    }

    /// Accumulates parameter gradients into `grads` and returns dL/dx.
    ///
    /// `d_output` is dL/d(output). `taps` inject extra upstream gradients on
    /// hidden outputs, indexed as in [`ForwardCache::values`]; this is how a
    /// downstream network consuming a hidden layer sends its gradient back.
    pub fn backward(
        &self,
        cache: &ForwardCache,
        d_output: &[f64],
        taps: &[(usize, &[f64])],
        grads: &mut Gradients,
    ) -> Result<Vec<f64>> {
        if d_output.len() != self.output_dim() {
            return Err(Error::Shape {
                expected: self.output_dim(),
                got: d_output.len(),
            });
        }
        for &(k, g) in taps {
            if k == 0 || k >= self.layers.len() || g.len() != self.layers[k - 1].out_dim {
                return Err(Error::Architecture(format!(
                    "bad gradient tap at hidden layer {k}"
                )));
            }
        }
        let mut delta = d_output.to_vec();
        for k in (0..self.layers.len()).rev() {
            let layer = &self.layers[k];
            for &(tk, g) in taps {
                if tk == k + 1 {
                    delta.iter_mut().zip(g).for_each(|(d, gi)| *d += gi);
                }
            }
            let act = self.activation_of(k);
            let out = &cache.values[k + 1];
            if act != Activation::Identity {
                delta
                    .iter_mut()
                    .zip(out)
                    .for_each(|(d, &y)| *d *= act.derivative_from_output(y));
            }
            let input = &cache.values[k];
            let gw = &mut grads.weights[k];
            let gb = &mut grads.biases[k];
            let mut d_in = vec![0.0; layer.in_dim];
            for (o, &d) in delta.iter().enumerate() {
                if d == 0.0 {
                    continue;
                }
                gb[o] += d;
                let row = o * layer.in_dim;
                for i in 0..layer.in_dim {
                    gw[row + i] += d * input[i];
                    d_in[i] += layer.weights[row + i] * d;
                }
            }
            delta = d_in;
        }
        Ok(delta)
    }

    /// `params -= lr * grads`.
    pub fn apply_gradients(&mut self, grads: &Gradients, lr: f64) {
        for (k, l) in self.layers.iter_mut().enumerate() {
            l.weights
                .iter_mut()
                .zip(&grads.weights[k])
                .for_each(|(w, g)| *w -= lr * g);
            l.biases
                .iter_mut()
                .zip(&grads.biases[k])
                .for_each(|(b, g)| *b -= lr * g);
        }
    }

    /// One plain SGD step on the half squared error; returns the pre-update mean loss.
    pub fn sgd_step(&mut self, inputs: &[Vec<f64>], targets: &[Vec<f64>], lr: f64) -> Result<f64> {
        let mut grads = Gradients::zeros_like(self);
        let loss = self.batch_gradients(inputs, targets, &mut grads)?;
        self.apply_gradients(&grads, lr);
        Ok(loss)
    }

    /// Mean-loss gradients over the batch (overwrites `grads`). Returns the mean loss.
    pub fn batch_gradients(
        &self,
        inputs: &[Vec<f64>],
        targets: &[Vec<f64>],
        grads: &mut Gradients,
    ) -> Result<f64> {
        if inputs.is_empty() || inputs.len() != targets.len() {
            return Err(Error::Shape {
                expected: inputs.len().max(1),
                got: targets.len(),
            });
        }
        grads.clear();
        let n = inputs.len() as f64;
        let mut loss = 0.0;
        for (x, y) in inputs.iter().zip(targets) {
            let cache = self.forward(x)?;
            if y.len() != self.output_dim() {
                return Err(Error::Shape {
                    expected: self.output_dim(),
                    got: y.len(),
                });
            }
            let d: Vec<f64> = cache.output().iter().zip(y).map(|(f, t)| f - t).collect();
            loss += 0.5 * d.iter().map(|v| v * v).sum::<f64>();
            self.backward(&cache, &d, &[], grads)?;
        }
        loss /= n;
        grads.scale(1.0 / n);
        check_finite(loss, grads)?;
        Ok(loss)
    }

    /// Overwrites this network's parameters with `src`'s.
    pub fn copy_weights_from(&mut self, src: &Mlp) -> Result<()> {
        if self.layer_sizes() != src.layer_sizes() || self.hidden != src.hidden {
            return Err(Error::Architecture(format!(
                "cannot copy {:?} into {:?}",
                src.layer_sizes(),
                self.layer_sizes()
            )));
        }
        for (d, s) in self.layers.iter_mut().zip(&src.layers) {
            d.weights.copy_from_slice(&s.weights);
            d.biases.copy_from_slice(&s.biases);
        }
        Ok(())
    }

    pub fn all_finite(&self) -> bool {
        self.layers
            .iter()
            .all(|l| l.weights.iter().chain(&l.biases).all(|v| v.is_finite()))
    }

    fn param_mut(&mut self, mut idx: usize) -> &mut f64 {
        for l in &mut self.layers {
            if idx < l.weights.len() {
                return &mut l.weights[idx];
            }
            idx -= l.weights.len();
            if idx < l.biases.len() {
                return &mut l.biases[idx];
            }
            idx -= l.biases.len();
        }
        panic!("parameter index out of range");
    }
}

pub(crate) fn check_finite(loss: f64, grads: &Gradients) -> Result<()> {
    if !loss.is_finite() {
        return Err(Error::NonFinite(format!("loss = {loss}")));
    }
    if let Some(k) = grads.first_non_finite() {
        return Err(Error::NonFinite(format!(
            "gradient of layer {k} (loss = {loss})"
        )));
    }
    Ok(())
}

/// Max relative error between backprop and central finite differences for one sample.
///
/// Per parameter: `|analytic - numeric| / max(1e-8, |analytic| + |numeric|)`.
pub fn gradient_check(net: &Mlp, input: &[f64], target: &[f64], step: f64) -> Result<f64> {
    let mut grads = Gradients::zeros_like(net);
    net.batch_gradients(&[input.to_vec()], &[target.to_vec()], &mut grads)?;
    let analytic: Vec<f64> = grads.flat().collect();

    let loss_at = |n: &Mlp| -> Result<f64> {
        let f = n.predict(input)?;
        Ok(0.5
            * f.iter()
                .zip(target)
                .map(|(a, b)| (a - b) * (a - b))
                .sum::<f64>())
    };
    let mut probe = net.clone();
    let mut worst = 0.0f64;
    for (i, &a) in analytic.iter().enumerate() {
        let orig = *probe.param_mut(i);
        *probe.param_mut(i) = orig + step;
        let up = loss_at(&probe)?;
        *probe.param_mut(i) = orig - step;
        let down = loss_at(&probe)?;
        *probe.param_mut(i) = orig;
        let numeric = (up - down) / (2.0 * step);
        let rel = (a - numeric).abs() / (a.abs() + numeric.abs()).max(1e-8);
        worst = worst.max(rel);
    }
    Ok(worst)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TrainConfig {
    pub learning_rate: f64,
    pub batch_size: usize,
    pub epochs: usize,
    pub seed: u64,
    pub weight_init_scale: f64,
    pub momentum: f64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            learning_rate: 0.01,
            batch_size: 64,
            epochs: 10,
            seed: 0,
            weight_init_scale: 1.0,
            momentum: 0.0,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.learning_rate > 0.0)
            || self.batch_size == 0
            || !(self.weight_init_scale > 0.0)
            || !(0.0..1.0).contains(&self.momentum)
        {
            return Err(Error::Config(format!("invalid training config {self:?}")));
        }
        Ok(())
    }
}

/// SGD with optional heavy-ball momentum (0 gives plain SGD).
#[derive(Debug, Clone)]
pub struct Sgd {
    pub lr: f64,
    pub momentum: f64,
    velocity: Option<Gradients>,
}

impl Sgd {
    pub fn new(lr: f64, momentum: f64) -> Self {
        Sgd {
            lr,
            momentum,
            velocity: None,
        }
    }

    pub fn step(&mut self, net: &mut Mlp, grads: &Gradients) {
        if self.momentum == 0.0 {
            net.apply_gradients(grads, self.lr);
            return;
        }
        let v = self
            .velocity
            .get_or_insert_with(|| Gradients::zeros_like(net));
        for (vs, gs) in v
            .weights
            .iter_mut()
            .zip(&grads.weights)
            .chain(v.biases.iter_mut().zip(&grads.biases))
        {
            vs.iter_mut()
                .zip(gs)
                .for_each(|(vi, gi)| *vi = self.momentum * *vi + gi);
        }
        net.apply_gradients(v, self.lr);
    }
}

// Serialization: see docs/formats.md.

pub const MLP_FORMAT: &str = "carpool-mlp";
pub const MLP_FORMAT_VERSION: u32 = 1;

#[derive(Serialize, Deserialize)]
struct LayerFile {
    weights: Vec<f64>,
    biases: Vec<f64>,
}

#[derive(Serialize, Deserialize)]
struct MlpFile {
    format: String,
    version: u32,
    layer_sizes: Vec<usize>,
    hidden_activation: Activation,
    output_activation: Activation,
    layers: Vec<LayerFile>,
}

impl Mlp {
    pub fn to_json(&self) -> Result<String> {
        let file = MlpFile {
            format: MLP_FORMAT.into(),
            version: MLP_FORMAT_VERSION,
            layer_sizes: self.layer_sizes(),
            hidden_activation: self.hidden,
            output_activation: Activation::Identity,
            layers: self
                .layers
                .iter()
                .map(|l| LayerFile {
                    weights: l.weights.clone(),
                    biases: l.biases.clone(),
                })
                .collect(),
        };
        Ok(serde_json::to_string(&file)?)
    }

    pub fn from_json(s: &str) -> Result<Self> {
        let file: MlpFile = serde_json::from_str(s)?;
        if file.format != MLP_FORMAT {
            return Err(Error::Config(format!(
                "not an MLP file (format `{}`)",
                file.format
            )));
        }
        if file.version != MLP_FORMAT_VERSION {
            return Err(Error::FormatVersion {
                found: file.version,
                expected: MLP_FORMAT_VERSION,
            });
        }
        if file.output_activation != Activation::Identity {
            return Err(Error::Architecture(
                "output activation must be identity".into(),
            ));
        }
        let mut net = Mlp::zeros(&file.layer_sizes, file.hidden_activation)?;
        if file.layers.len() != net.layers.len() {
            return Err(Error::Shape {
                expected: net.layers.len(),
                got: file.layers.len(),
            });
        }
        for (l, f) in net.layers.iter_mut().zip(file.layers) {
            if f.weights.len() != l.weights.len() || f.biases.len() != l.biases.len() {
                return Err(Error::Shape {
                    expected: l.weights.len(),
                    got: f.weights.len(),
                });
            }
            l.weights = f.weights;
            l.biases = f.biases;
        }
        if !net.all_finite() {
            return Err(Error::NonFinite("stored parameters".into()));
        }
        Ok(net)
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        std::fs::write(path, self.to_json()?).map_err(|e| Error::io(path, e))
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let s = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::from_json(&s)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    /// Straight-line recomputation of a forward pass from raw parameter arrays.
    fn oracle_forward(net: &Mlp, x: &[f64]) -> Vec<f64> {
        let mut cur = x.to_vec();
        let n = net.layers().len();
        for (k, l) in net.layers().iter().enumerate() {
            let mut next = Vec::new();
            for o in 0..l.out_dim() {
                let mut s = l.biases()[o];
                for i in 0..l.in_dim() {
                    s += l.weights()[o * l.in_dim() + i] * cur[i];
                }
                next.push(if k + 1 < n { s.max(0.0) } else { s });
            }
            cur = next;
        }
        cur
    }

    #[test]
    fn zero_net_outputs_zero() {
        let net = Mlp::zeros(&[3, 5, 2], Activation::Relu).unwrap();
        assert_eq!(net.predict(&[1.0, -2.0, 3.0]).unwrap(), vec![0.0, 0.0]);
    }

    #[test]
    fn identity_linear_layer() {
        let mut net = Mlp::zeros(&[3, 3], Activation::Relu).unwrap();
        for i in 0..3 {
            net.layers_mut()[0].weights_mut()[i * 3 + i] = 1.0;
        }
        assert_eq!(
            net.predict(&[1.5, -2.0, 0.25]).unwrap(),
            vec![1.5, -2.0, 0.25]
        );
    }

    #[test]
    fn forward_matches_oracle() {
        let net = Mlp::random(&[4, 8, 8, 1], Activation::Relu, 1.0, 11).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        for _ in 0..50 {
            let x: Vec<f64> = (0..4).map(|_| rng.random_range(-3.0..3.0)).collect();
            let got = net.predict(&x).unwrap();
            let want = oracle_forward(&net, &x);
            assert!((got[0] - want[0]).abs() < 1e-10);
        }
    }

    #[test]
    fn shape_mismatch_rejected() {
        let net = Mlp::zeros(&[2, 1], Activation::Relu).unwrap();
        assert!(matches!(
            net.forward(&[1.0]),
            Err(Error::Shape {
                expected: 2,
                got: 1
            })
        ));
    }

    #[test]
    fn zero_learning_rate_keeps_parameters() {
        let mut net = Mlp::random(&[2, 4, 1], Activation::Relu, 1.0, 3).unwrap();
        let before = net.clone();
        net.sgd_step(&[vec![0.3, 0.7]], &[vec![2.0]], 0.0).unwrap();
        assert_eq!(net, before);
    }

    #[test]
    fn single_neuron_step_matches_closed_form() {
        let mut net = Mlp::zeros(&[1, 1], Activation::Relu).unwrap();
        let (w, b, x, y, lr) = (0.5, -0.2, 2.0, 3.0, 0.1);
        net.layers_mut()[0].weights_mut()[0] = w;
        net.layers_mut()[0].biases_mut()[0] = b;
        let loss = net.sgd_step(&[vec![x]], &[vec![y]], lr).unwrap();
        // d/dw of (wx + b - y)^2 / 2 is (wx + b - y) x.
        let r: f64 = w * x + b - y;
        assert!((loss - 0.5 * r * r).abs() < 1e-15);
        assert!((net.layers()[0].weights()[0] - (w - lr * r * x)).abs() < 1e-15);
        assert!((net.layers()[0].biases()[0] - (b - lr * r)).abs() < 1e-15);
    }

    #[test]
    fn linear_target_converges() {
        let mut net = Mlp::zeros(&[2, 1], Activation::Relu).unwrap();
        let xs: Vec<Vec<f64>> = (0..20)
            .map(|i| vec![i as f64 / 10.0 - 1.0, (i % 7) as f64 / 7.0])
            .collect();
        let ys: Vec<Vec<f64>> = xs.iter().map(|x| vec![2.0 * x[0] - x[1] + 0.5]).collect();
        let mut last = f64::INFINITY;
        for _ in 0..100 {
            let loss = net.sgd_step(&xs, &ys, 0.5).unwrap();
            assert!(loss <= last + 1e-12);
            last = loss;
        }
        assert!(last < 1e-3, "loss {last}");
    }

    #[test]
    fn non_finite_loss_is_an_error() {
        let mut net = Mlp::zeros(&[1, 1], Activation::Relu).unwrap();
        let err = net
            .sgd_step(&[vec![f64::INFINITY]], &[vec![1.0]], 0.1)
            .unwrap_err();
        assert!(matches!(err, Error::NonFinite(_)));
    }

    #[test]
    fn gradient_check_cases() {
        let net = Mlp::random(&[3, 6, 5, 2], Activation::Relu, 1.0, 9).unwrap();
        assert!(gradient_check(&net, &[0.4, -1.2, 0.8], &[0.5, -0.3], 1e-5).unwrap() < 1e-4);

        let lin = Mlp::random(&[3, 2], Activation::Relu, 1.0, 4).unwrap();
        assert!(gradient_check(&lin, &[0.4, -1.2, 0.8], &[0.5, -0.3], 1e-5).unwrap() < 1e-7);

        let zero = Mlp::zeros(&[3, 4, 1], Activation::Relu).unwrap();
        assert_eq!(gradient_check(&zero, &[0.0; 3], &[0.0], 1e-5).unwrap(), 0.0);

        let tanh = Mlp::random(&[2, 5, 1], Activation::Tanh, 1.0, 1).unwrap();
        assert!(gradient_check(&tanh, &[0.3, 0.2], &[1.0], 1e-5).unwrap() < 1e-4);
    }

    #[test]
    fn gradient_taps_match_composed_network() {
        // A tapped hidden gradient must equal what a second network consuming that
        // hidden layer would backpropagate: check against finite differences on the
        // composed loss L = 0.5 * (head(hidden(x)) - y)^2.
        let mut base = Mlp::random(&[2, 4, 3, 1], Activation::Relu, 1.0, 21).unwrap();
        // Positive biases keep every ReLU away from its kink.
        base.layers_mut()
            .iter_mut()
            .for_each(|l| l.biases_mut().fill(0.5));
        let head = Mlp::random(&[3, 2, 1], Activation::Relu, 1.0, 22).unwrap();
        let x = [0.7, -0.4];
        let y = 0.9;
        let composed = |b: &Mlp| {
            let c = b.forward(&x).unwrap();
            let f = head.predict(c.hidden(2)).unwrap()[0];
            0.5 * (f - y) * (f - y)
        };
        let cache = base.forward(&x).unwrap();
        let hc = head.forward(cache.hidden(2)).unwrap();
        let d = vec![hc.output()[0] - y];
        let mut hg = Gradients::zeros_like(&head);
        let d_hidden = head.backward(&hc, &d, &[], &mut hg).unwrap();
        let mut g = Gradients::zeros_like(&base);
        base.backward(&cache, &[0.0], &[(2, &d_hidden)], &mut g)
            .unwrap();
        let analytic: Vec<f64> = g.flat().collect();
        let mut probe = base.clone();
        for (i, a) in analytic.iter().enumerate() {
            let o = *probe.param_mut(i);
            *probe.param_mut(i) = o + 1e-6;
            let up = composed(&probe);
            *probe.param_mut(i) = o - 1e-6;
            let down = composed(&probe);
            *probe.param_mut(i) = o;
            let num = (up - down) / 2e-6;
            assert!(
                (a - num).abs() <= 1e-6 * (1.0 + a.abs()),
                "param {i}: {a} vs {num}"
            );
        }
    }

    #[test]
    fn copy_weights_semantics() {
        let mut src = Mlp::random(&[3, 4, 2], Activation::Relu, 1.0, 1).unwrap();
        let mut dst = Mlp::random(&[3, 4, 2], Activation::Relu, 1.0, 2).unwrap();
        dst.copy_weights_from(&src).unwrap();
        assert_eq!(dst, src);
        let x = [0.1, 0.2, 0.3];
        assert_eq!(src.predict(&x).unwrap(), dst.predict(&x).unwrap());
        dst.copy_weights_from(&src).unwrap();
        assert_eq!(dst, src);
        src.layers_mut()[0].weights_mut()[0] += 1.0;
        assert_ne!(dst, src);

        let mut other = Mlp::zeros(&[3, 5, 2], Activation::Relu).unwrap();
        assert!(matches!(
            other.copy_weights_from(&src),
            Err(Error::Architecture(_))
        ));
    }

    #[test]
    fn json_round_trip_and_version_guard() {
        let net = Mlp::random(&[3, 4, 2], Activation::Tanh, 0.5, 8).unwrap();
        let back = Mlp::from_json(&net.to_json().unwrap()).unwrap();
        assert_eq!(back, net);
        let bumped = net
            .to_json()
            .unwrap()
            .replace("\"version\":1", "\"version\":9");
        assert!(matches!(
            Mlp::from_json(&bumped),
            Err(Error::FormatVersion { found: 9, .. })
        ));
    }

    #[test]
    fn momentum_zero_is_plain_sgd() {
        let mut a = Mlp::random(&[2, 3, 1], Activation::Relu, 1.0, 5).unwrap();
        let mut b = a.clone();
        let mut g = Gradients::zeros_like(&a);
        a.batch_gradients(&[vec![0.2, 0.4]], &[vec![1.0]], &mut g)
            .unwrap();
        Sgd::new(0.1, 0.0).step(&mut a, &g);
        b.apply_gradients(&g, 0.1);
        assert_eq!(a, b);
    }
}
