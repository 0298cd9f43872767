use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;

use super::layers::{softmax, softmax_cross_entropy, Conv2d, Dense, Layer};
use super::{NetworkConfig, PredictionDistribution, Scalar, Tensor};
use crate::d4::OrientationLabel;
use crate::error::{Error, Result};
use crate::imgops::NormalizedSlice;

/// Gradients for every parameter tensor, in [`Network::param_names`] order.
#[derive(Debug, Clone, PartialEq)]
pub struct Gradients<T> {
    pub tensors: Vec<Tensor<T>>,
}

impl<T: Scalar> Gradients<T> {
    fn zeros_like(params: &[&Tensor<T>]) -> Self {
        Gradients {
            tensors: params.iter().map(|p| Tensor::zeros(p.dims())).collect(),
        }
    }

    fn add(&mut self, other: &Gradients<T>) {
        for (a, b) in self.tensors.iter_mut().zip(&other.tensors) {
            a.add_assign(b);
        }
    }
}

/// Mean loss and mean gradients over a batch.
#[derive(Debug, Clone)]
pub struct BatchGradients<T> {
    pub gradients: Gradients<T>,
    pub loss: T,
    /// Samples whose argmax matched the label.
    pub correct: usize,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Network<T = f32> {
    config: NetworkConfig,
    layers: Vec<Layer<T>>,
}

impl<T: Scalar> Network<T> {
    /// Builds the architecture with all parameters zero.
    pub fn zeroed(config: NetworkConfig) -> Result<Self> {
        config.validate()?;
        let [c1, c2, c3] = config.conv_channels;
        let k = config.kernel;
        let layers = vec![
            Layer::Conv(Conv2d::new(config.in_channels, c1, k)),
            Layer::Relu,
            Layer::MaxPool,
            Layer::Conv(Conv2d::new(c1, c2, k)),
            Layer::Relu,
            Layer::MaxPool,
            Layer::Conv(Conv2d::new(c2, c3, k)),
            Layer::Relu,
            Layer::MaxPool,
            Layer::Flatten,
            Layer::Dense(Dense::new(config.flat_features(), config.hidden_units)),
            Layer::Relu,
            Layer::Dense(Dense::new(config.hidden_units, config.classes)),
        ];
        Ok(Network { config, layers })
    }

    /// Kaiming-uniform weights (bound `sqrt(6 / fan_in)`), zero biases,
    /// drawn from `config.seed`. Values are sampled in `f32` so networks of
    /// either precision start identical.
    pub fn new(config: NetworkConfig) -> Result<Self> {
        let mut net = Self::zeroed(config)?;
        let mut rng = ChaCha8Rng::seed_from_u64(config.seed as u64);
        for layer in &mut net.layers {
            let (weight, fan_in) = match layer {
                Layer::Conv(c) => (&mut c.weight, c.in_channels * c.kernel * c.kernel),
                Layer::Dense(d) => (&mut d.weight, d.inputs),
                _ => continue,
            };
            let bound = (6.0 / fan_in as f32).sqrt();
            for w in weight.data_mut() {
                *w = T::from_f32(rng.gen_range(-bound..bound)).unwrap();
            }
        }
        Ok(net)
    }

    pub fn config(&self) -> &NetworkConfig {
        &self.config
    }

    pub fn layers(&self) -> &[Layer<T>] {
        &self.layers
    }

    pub fn layers_mut(&mut self) -> &mut [Layer<T>] {
        &mut self.layers
    }

    /// Parameter names such as `conv1.weight` or `fc2.bias`, in storage order.
    pub fn param_names(&self) -> Vec<String> {
        let (mut conv, mut fc) = (0, 0);
        let mut names = Vec::new();
        for layer in &self.layers {
            let prefix = match layer {
                Layer::Conv(_) => {
                    conv += 1;
                    format!("conv{conv}")
                }
                Layer::Dense(_) => {
                    fc += 1;
                    format!("fc{fc}")
                }
                _ => continue,
            };
            names.push(format!("{prefix}.weight"));
            names.push(format!("{prefix}.bias"));
        }
        names
    }

    pub fn params(&self) -> Vec<&Tensor<T>> {
        self.layers.iter().flat_map(Layer::params).collect()
    }

    pub fn params_mut(&mut self) -> Vec<&mut Tensor<T>> {
        self.layers.iter_mut().flat_map(Layer::params_mut).collect()
    }

    /// True for parameters of convolution layers.
    pub fn conv_param_mask(&self) -> Vec<bool> {
        self.layers
            .iter()
            .flat_map(|l| {
                let n = l.params().len();
                std::iter::repeat_n(matches!(l, Layer::Conv(_)), n)
            })
            .collect()
    }

    pub fn cast<U: Scalar>(&self) -> Network<U> {
        Network {
            config: self.config,
            layers: self.layers.iter().map(Layer::cast).collect(),
        }
    }

    /// Zeroes the output layer, making every prediction uniform.
    pub fn zero_output_layer(&mut self) {
        if let Some(Layer::Dense(d)) = self.layers.last_mut() {
            d.weight.data_mut().fill(T::zero());
            d.bias.data_mut().fill(T::zero());
        }
    }

    /// Raw class scores for one `[c, h, w]` input.
    pub fn logits(&self, input: &Tensor<T>) -> Vec<T> {
        let mut x = input.clone();
        for layer in &self.layers {
            x = layer.forward(&x);
        }
        x.into_data()
    }

    /// Activations `[input, out_1, ..., out_n]`.
    fn trace(&self, input: &Tensor<T>) -> Vec<Tensor<T>> {
        let mut acts = Vec::with_capacity(self.layers.len() + 1);
        acts.push(input.clone());
        for layer in &self.layers {
            let next = layer.forward(acts.last().unwrap());
            acts.push(next);
        }
        acts
    }

    /// Loss and gradients of one sample.
    fn sample_gradients(&self, input: &Tensor<T>, label: usize) -> (T, bool, Gradients<T>) {
        let acts = self.trace(input);
        let logits = acts.last().unwrap().data();
        let (loss, grad_logits, probs) = softmax_cross_entropy(logits, label);
        let predicted = argmax(&probs);

        let params = self.params();
        let mut grads = Gradients::zeros_like(&params);
        // parameter slot of each layer's first tensor
        let mut offsets = Vec::with_capacity(self.layers.len());
        let mut slot = 0;
        for layer in &self.layers {
            offsets.push(slot);
            slot += layer.params().len();
        }

        let mut grad = Tensor::from_vec(&[grad_logits.len()], grad_logits);
        for (idx, layer) in self.layers.iter().enumerate().rev() {
            let n = layer.params().len();
            let slots = &mut grads.tensors[offsets[idx]..offsets[idx] + n];
            grad = layer.backward(&acts[idx], &grad, slots);
        }
        (loss, predicted == label, grads)
    }

    /// Mean cross-entropy loss and gradients over raw input tensors.
    pub fn loss_and_gradients(&self, inputs: &[Tensor<T>], labels: &[usize]) -> BatchGradients<T> {
        assert_eq!(inputs.len(), labels.len());
        assert!(!inputs.is_empty(), "empty batch");
        let per_sample: Vec<(T, bool, Gradients<T>)> = inputs
            .par_iter()
            .zip(labels.par_iter())
            .map(|(x, &y)| self.sample_gradients(x, y))
            .collect();

        // sequential reduction keeps results independent of thread count
        let mut iter = per_sample.into_iter();
        let (mut loss, first_ok, mut total) = iter.next().unwrap();
        let mut correct = first_ok as usize;
        for (l, ok, g) in iter {
            loss += l;
            correct += ok as usize;
            total.add(&g);
        }
        let n = T::from_usize(inputs.len()).unwrap();
        for t in &mut total.tensors {
            t.scale(T::one() / n);
        }
        BatchGradients {
            gradients: total,
            loss: loss / n,
            correct,
        }
    }

    /// Mean cross-entropy loss only.
    pub fn loss(&self, inputs: &[Tensor<T>], labels: &[usize]) -> T {
        let total: T = inputs
            .iter()
            .zip(labels)
            .map(|(x, &y)| softmax_cross_entropy(&self.logits(x), y).0)
            .sum();
        total / T::from_usize(inputs.len()).unwrap()
    }

    /// Converts a normalized slice into an input tensor, replicating a single
    /// channel when the network expects more.
    pub fn input_tensor(&self, slice: &NormalizedSlice) -> Result<Tensor<T>> {
        let cfg = &self.config;
        if slice.height() != cfg.input_size {
            return Err(Error::shape("input height", cfg.input_size, slice.height()));
        }
        if slice.width() != cfg.input_size {
            return Err(Error::shape("input width", cfg.input_size, slice.width()));
        }
        let px = slice.pixels();
        let data: Vec<T> = if slice.channels() == cfg.in_channels {
            px.iter().map(|&v| T::from_f32(v).unwrap()).collect()
        } else if slice.channels() == 1 {
            (0..cfg.in_channels)
                .flat_map(|_| px.iter().map(|&v| T::from_f32(v).unwrap()))
                .collect()
        } else {
            return Err(Error::shape("input channels", cfg.in_channels, slice.channels()));
        };
        Ok(Tensor::from_vec(
            &[cfg.in_channels, cfg.input_size, cfg.input_size],
            data,
        ))
    }

    pub fn predict_tensor(&self, input: &Tensor<T>) -> PredictionDistribution {
        let probs = softmax(&self.logits(input));
        let mut out = [0.0f32; 8];
        for (o, p) in out.iter_mut().zip(probs) {
            *o = p.to_f32().unwrap();
        }
        PredictionDistribution { probs: out }
    }

    /// Softmax outputs for a batch.
    pub fn forward(&self, batch: &[NormalizedSlice]) -> Result<Vec<PredictionDistribution>> {
        let inputs = batch
            .iter()
            .map(|s| self.input_tensor(s))
            .collect::<Result<Vec<_>>>()?;
        Ok(inputs.par_iter().map(|x| self.predict_tensor(x)).collect())
    }

    /// Mean loss and gradients for a labelled batch.
    pub fn backward(
        &self,
        batch: &[NormalizedSlice],
        labels: &[OrientationLabel],
    ) -> Result<BatchGradients<T>> {
        if batch.len() != labels.len() {
            return Err(Error::shape("batch labels", batch.len(), labels.len()));
        }
        if batch.is_empty() {
            return Err(Error::Argument("empty batch".into()));
        }
        let inputs = batch
            .iter()
            .map(|s| self.input_tensor(s))
            .collect::<Result<Vec<_>>>()?;
        let labels: Vec<usize> = labels.iter().map(|l| l.index()).collect();
        Ok(self.loss_and_gradients(&inputs, &labels))
    }
}

fn argmax<T: Scalar>(v: &[T]) -> usize {
    let mut best = 0;
    for i in 1..v.len() {
        if v[i] > v[best] {
            best = i;
        }
    }
    best
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::imgops::{normalize, Modality, Slice};
    use crate::nn::Adam;

    fn tiny_config() -> NetworkConfig {
        NetworkConfig {
            input_size: 8,
            in_channels: 3,
            conv_channels: [2, 3, 4],
            kernel: 3,
            hidden_units: 6,
            classes: 8,
            seed: 3,
        }
    }

    fn random_slice(seed: u64, side: usize) -> NormalizedSlice {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let px = (0..side * side).map(|_| rng.gen::<f32>()).collect();
        normalize(&Slice::new(px, 1, side, side, "p", Modality::C0).unwrap())
    }

    #[test]
    fn param_layout() {
        let net = Network::<f32>::new(tiny_config()).unwrap();
        assert_eq!(
            net.param_names(),
            vec![
                "conv1.weight", "conv1.bias", "conv2.weight", "conv2.bias",
                "conv3.weight", "conv3.bias", "fc1.weight", "fc1.bias", "fc2.weight", "fc2.bias"
            ]
        );
        let dims: Vec<Vec<usize>> = net.params().iter().map(|p| p.dims().to_vec()).collect();
        assert_eq!(dims[0], vec![2, 3, 3, 3]);
        assert_eq!(dims[6], vec![6, 4]);
        assert_eq!(dims[8], vec![8, 6]);
        assert_eq!(net.conv_param_mask(), vec![true, true, true, true, true, true, false, false, false, false]);
    }

    #[test]
    fn zeroed_output_is_uniform() {
        let mut net = Network::<f32>::new(tiny_config()).unwrap();
        net.zero_output_layer();
        let out = net.forward(&[random_slice(1, 8)]).unwrap();
        assert!(out[0].probs.iter().all(|&p| (p - 0.125).abs() < 1e-7));
    }

    #[test]
    fn forward_sums_to_one_and_is_deterministic() {
        let net = Network::<f32>::new(tiny_config()).unwrap();
        let batch = vec![random_slice(2, 8), random_slice(3, 8)];
        let a = net.forward(&batch).unwrap();
        let b = net.forward(&batch).unwrap();
        assert_eq!(a, b);
        for p in &a {
            let s: f64 = p.probs.iter().map(|&v| v as f64).sum();
            assert!((s - 1.0).abs() < 1e-6);
            assert!(p.probs.iter().all(|&v| (0.0..=1.0).contains(&v)));
        }
    }

    #[test]
    fn forward_shape_errors_name_dimension() {
        let net = Network::<f32>::new(tiny_config()).unwrap();
        let err = net.forward(&[random_slice(2, 16)]).unwrap_err();
        assert!(err.to_string().contains("input height"), "{err}");
    }

    #[test]
    fn output_bias_gradient_is_softmax_residual() {
        let net = Network::<f64>::new(tiny_config()).unwrap();
        let batch = vec![random_slice(4, 8), random_slice(5, 8)];
        let labels = [OrientationLabel::new(1).unwrap(), OrientationLabel::new(1).unwrap()];
        let g = net.backward(&batch, &labels).unwrap();
        let probs = net.forward(&batch).unwrap();
        let fc2_bias = &g.gradients.tensors[9];
        for class in 0..8 {
            let expected: f64 = probs
                .iter()
                .map(|p| p.probs[class] as f64 - if class == 1 { 1.0 } else { 0.0 })
                .sum::<f64>()
                / 2.0;
            assert!((fc2_bias.data()[class] - expected).abs() < 1e-6);
        }
    }

    #[test]
    fn zero_input_conv1_weight_grad_vanishes() {
        let net = Network::<f32>::new(tiny_config()).unwrap();
        let zero = normalize(&Slice::new(vec![0.0; 64], 1, 8, 8, "p", Modality::C0).unwrap());
        let g = net.backward(&[zero], &[OrientationLabel::new(4).unwrap()]).unwrap();
        assert!(g.gradients.tensors[0].data().iter().all(|&v| v == 0.0));
        assert!(g.gradients.tensors[9].data().iter().any(|&v| v != 0.0));
    }

    #[test]
    fn overfits_two_samples() {
        let net0 = Network::<f32>::new(tiny_config()).unwrap();
        let mut net = net0.clone();
        let batch = vec![random_slice(6, 8), random_slice(7, 8)];
        let labels = [OrientationLabel::new(2).unwrap(), OrientationLabel::new(5).unwrap()];
        let mut adam = Adam::new(&net);
        let mut losses = Vec::new();
        for _ in 0..200 {
            let g = net.backward(&batch, &labels).unwrap();
            losses.push(g.loss);
            adam.step_network(&mut net, &g.gradients, 1e-2, None).unwrap();
        }
        let last = net.backward(&batch, &labels).unwrap();
        assert!(last.loss < 0.01, "loss {}", last.loss);
        assert_eq!(last.correct, 2);
        assert!(losses[..50].windows(2).all(|w| w[1] < w[0]), "{:?}", &losses[..50]);
    }
}
