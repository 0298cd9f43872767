//! Central finite-difference checks of analytic gradients.
//!
//! The numeric side only ever calls `forward`/`logits`; losses are
//! accumulated in `f64` whatever the network precision.

use rand::seq::index::sample;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::layers::{softmax, softmax_cross_entropy, Layer};
use super::{Network, Scalar, Tensor};

#[derive(Debug, Clone, Copy)]
pub struct GradCheckOptions {
    /// Coordinates sampled in total, spread over the input and every parameter tensor.
    pub coords: usize,
    pub step: f64,
    /// Lower bound on the relative-error denominator, so gradients that are
    /// zero on both sides do not divide by zero.
    pub floor: f64,
    pub seed: u64,
}

impl GradCheckOptions {
    /// In single precision the difference quotient is limited by roundoff
    /// (about `eps * |loss| / step`), so the step is large; inputs to ReLU
    /// and max-pool must then stay more than a step away from their kinks.
    pub fn f32_default() -> Self {
        GradCheckOptions { coords: 120, step: 3e-2, floor: 1e-3, seed: 0 }
    }

    pub fn f64_default() -> Self {
        GradCheckOptions { coords: 120, step: 1e-6, floor: 1e-6, seed: 0 }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Discrepancy {
    pub tensor: String,
    pub index: usize,
    pub analytic: f64,
    pub numeric: f64,
    pub rel_error: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct GradCheckReport {
    pub name: String,
    pub checked: usize,
    pub max_rel_error: f64,
    pub worst: Option<Discrepancy>,
}

impl GradCheckReport {
    pub fn passes(&self, tolerance: f64) -> bool {
        self.max_rel_error <= tolerance
    }
}

pub fn relative_error(analytic: f64, numeric: f64, floor: f64) -> f64 {
    (analytic - numeric).abs() / analytic.abs().max(numeric.abs()).max(floor)
}

struct Accumulator {
    report: GradCheckReport,
    floor: f64,
}

impl Accumulator {
    fn new(name: &str, floor: f64) -> Self {
        Accumulator {
            report: GradCheckReport { name: name.to_string(), checked: 0, max_rel_error: 0.0, worst: None },
            floor,
        }
    }

    fn record(&mut self, tensor: &str, index: usize, analytic: f64, numeric: f64) {
        let rel = relative_error(analytic, numeric, self.floor);
        self.report.checked += 1;
        if self.report.worst.is_none() || rel > self.report.max_rel_error {
            self.report.max_rel_error = rel;
            self.report.worst = Some(Discrepancy {
                tensor: tensor.to_string(),
                index,
                analytic,
                numeric,
                rel_error: rel,
            });
        }
    }
}

/// Splits `coords` over tensors of the given lengths; small tensors are
/// checked in full and their unused share goes to the larger ones.
fn allocate(lens: &[usize], coords: usize) -> Vec<usize> {
    let mut order: Vec<usize> = (0..lens.len()).collect();
    order.sort_by_key(|&i| lens[i]);
    let mut out = vec![0; lens.len()];
    let mut left = coords;
    for (done, &i) in order.iter().enumerate() {
        let share = left.div_ceil(lens.len() - done);
        out[i] = share.min(lens[i]);
        left = left.saturating_sub(out[i]);
    }
    out
}

fn pick(rng: &mut ChaCha8Rng, len: usize, k: usize) -> Vec<usize> {
    if k >= len {
        (0..len).collect()
    } else {
        let mut v = sample(rng, len, k).into_vec();
        v.sort_unstable();
        v
    }
}

/// Central difference of `f` at `data[index]`, using the step actually
/// representable in `T`.
fn central_difference<T: Scalar>(
    data: &mut [T],
    index: usize,
    step: f64,
    mut f: impl FnMut(&[T]) -> f64,
) -> f64 {
    let orig = data[index];
    let h = super::cast::<T>(step);
    let plus = orig + h;
    let minus = orig - h;
    data[index] = plus;
    let fp = f(data);
    data[index] = minus;
    let fm = f(data);
    data[index] = orig;
    (fp - fm) / (plus - minus).to_f64().unwrap()
}

fn dot_f64<T: Scalar>(a: &[T], r: &[f64]) -> f64 {
    a.iter().zip(r).map(|(&v, &w)| v.to_f64().unwrap() * w).sum()
}

/// Checks one layer under the probe loss `Σ r ⊙ layer(input)` with fixed random `r`.
pub fn check_layer<T: Scalar>(layer: &Layer<T>, input: &Tensor<T>, opts: &GradCheckOptions) -> GradCheckReport {
    let mut rng = ChaCha8Rng::seed_from_u64(opts.seed);
    let out = layer.forward(input);
    let r: Vec<f64> = (0..out.len()).map(|_| rng.gen_range(-1.0..1.0)).collect();
    let r_t = Tensor::from_vec(out.dims(), r.iter().map(|&v| super::cast::<T>(v)).collect());

    let mut param_grads: Vec<Tensor<T>> = layer.params().iter().map(|p| Tensor::zeros(p.dims())).collect();
    let grad_in = layer.backward(input, &r_t, &mut param_grads);

    let mut acc = Accumulator::new(layer.name(), opts.floor);
    let lens: Vec<usize> = std::iter::once(input.len()).chain(param_grads.iter().map(|g| g.len())).collect();
    let per = allocate(&lens, opts.coords);

    let mut x = input.clone();
    for idx in pick(&mut rng, x.len(), per[0]) {
        let dims = x.dims().to_vec();
        let numeric = central_difference(x.data_mut(), idx, opts.step, |d| {
            let t = Tensor::from_vec(&dims, d.to_vec());
            dot_f64(layer.forward(&t).data(), &r)
        });
        acc.record("input", idx, grad_in.data()[idx].to_f64().unwrap(), numeric);
    }

    let names = ["weight", "bias"];
    for (slot, grad) in param_grads.iter().enumerate() {
        let mut probe = layer.clone();
        let len = probe.params()[slot].len();
        for idx in pick(&mut rng, len, per[slot + 1]) {
            let orig = probe.params()[slot].data()[idx];
            let h = super::cast::<T>(opts.step);
            let eval = |v: T, probe: &mut Layer<T>| {
                probe.params_mut()[slot].data_mut()[idx] = v;
                dot_f64(probe.forward(input).data(), &r)
            };
            let fp = eval(orig + h, &mut probe);
            let fm = eval(orig - h, &mut probe);
            probe.params_mut()[slot].data_mut()[idx] = orig;
            let numeric = (fp - fm) / ((orig + h) - (orig - h)).to_f64().unwrap();
            acc.record(names[slot], idx, grad.data()[idx].to_f64().unwrap(), numeric);
        }
    }
    acc.report
}

/// Checks `p - onehot` against differences of `-ln softmax(z)[label]`.
pub fn check_softmax_cross_entropy<T: Scalar>(logits: &[T], label: usize, opts: &GradCheckOptions) -> GradCheckReport {
    let (_, grad, _) = softmax_cross_entropy(logits, label);
    let mut acc = Accumulator::new("softmax_cross_entropy", opts.floor);
    let mut z = logits.to_vec();
    for idx in 0..z.len() {
        let numeric = central_difference(&mut z, idx, opts.step, |d| {
            let p = softmax(d);
            -(p[label].to_f64().unwrap() + super::LOSS_EPSILON).ln()
        });
        acc.record("logits", idx, grad[idx].to_f64().unwrap(), numeric);
    }
    acc.report
}

fn mean_loss_f64<T: Scalar>(net: &Network<T>, inputs: &[Tensor<T>], labels: &[usize]) -> f64 {
    let total: f64 = inputs
        .iter()
        .zip(labels)
        .map(|(x, &y)| {
            let z: Vec<f64> = net.logits(x).iter().map(|v| v.to_f64().unwrap()).collect();
            let p = softmax(&z);
            -(p[y] + super::LOSS_EPSILON).ln()
        })
        .sum();
    total / inputs.len() as f64
}

/// End-to-end check of every parameter tensor of a network.
pub fn check_network<T: Scalar>(
    net: &Network<T>,
    inputs: &[Tensor<T>],
    labels: &[usize],
    opts: &GradCheckOptions,
) -> GradCheckReport {
    let mut rng = ChaCha8Rng::seed_from_u64(opts.seed);
    let analytic = net.loss_and_gradients(inputs, labels).gradients;
    let names = net.param_names();
    let lens: Vec<usize> = analytic.tensors.iter().map(|t| t.len()).collect();
    let per = allocate(&lens, opts.coords);
    let mut acc = Accumulator::new("network", opts.floor);
    let mut probe = net.clone();
    for (slot, name) in names.iter().enumerate() {
        let len = analytic.tensors[slot].len();
        for idx in pick(&mut rng, len, per[slot]) {
            let orig = probe.params()[slot].data()[idx];
            let h = super::cast::<T>(opts.step);
            probe.params_mut()[slot].data_mut()[idx] = orig + h;
            let fp = mean_loss_f64(&probe, inputs, labels);
            probe.params_mut()[slot].data_mut()[idx] = orig - h;
            let fm = mean_loss_f64(&probe, inputs, labels);
            probe.params_mut()[slot].data_mut()[idx] = orig;
            let numeric = (fp - fm) / ((orig + h) - (orig - h)).to_f64().unwrap();
            acc.record(name, idx, analytic.tensors[slot].data()[idx].to_f64().unwrap(), numeric);
        }
    }
    acc.report
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn allocation_spills_over() {
        assert_eq!(allocate(&[8, 1000, 3], 120), vec![8, 109, 3]);
        assert_eq!(allocate(&[5, 5], 120), vec![5, 5]);
        assert_eq!(allocate(&[100, 100], 120), vec![60, 60]);
    }

    #[test]
    fn relative_error_floor() {
        assert_eq!(relative_error(0.0, 0.0, 1e-3), 0.0);
        assert!((relative_error(1.0, 1.1, 1e-6) - 0.1 / 1.1).abs() < 1e-12);
        assert!((relative_error(1e-6, 2e-6, 1e-3) - 1e-3).abs() < 1e-12);
    }
}
