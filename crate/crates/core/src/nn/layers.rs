use super::{Scalar, Tensor};

/// 2D convolution, stride 1, zero padding `kernel / 2` so spatial dims are kept.
#[derive(Debug, Clone, PartialEq)]
pub struct Conv2d<T> {
    pub in_channels: usize,
    pub out_channels: usize,
    pub kernel: usize,
    /// `[out, in, k, k]`
    pub weight: Tensor<T>,
    /// `[out]`
    pub bias: Tensor<T>,
}

/// Fully connected layer `y = W x + b`.
#[derive(Debug, Clone, PartialEq)]
pub struct Dense<T> {
    pub inputs: usize,
    pub outputs: usize,
    /// `[out, in]`
    pub weight: Tensor<T>,
    /// `[out]`
    pub bias: Tensor<T>,
}

#[derive(Debug, Clone, PartialEq)]
pub enum Layer<T> {
    Conv(Conv2d<T>),
    Relu,
    /// 2×2 max pooling with stride 2.
    MaxPool,
    Flatten,
    Dense(Dense<T>),
}

/// Valid output range `[lo, hi)` along one axis for a tap offset `d`.
#[inline]
fn tap_range(n: usize, d: isize) -> (usize, usize) {
    let lo = (-d).max(0) as usize;
    let hi = (n as isize - d).min(n as isize).max(0) as usize;
    (lo, hi.max(lo))
}

impl<T: Scalar> Conv2d<T> {
    pub fn new(in_channels: usize, out_channels: usize, kernel: usize) -> Self {
        Conv2d {
            in_channels,
            out_channels,
            kernel,
            weight: Tensor::zeros(&[out_channels, in_channels, kernel, kernel]),
            bias: Tensor::zeros(&[out_channels]),
        }
    }

    fn forward(&self, input: &Tensor<T>) -> Tensor<T> {
        let (c, h, w) = chw(input);
        assert_eq!(c, self.in_channels, "conv input channels");
        let k = self.kernel;
        let pad = (k / 2) as isize;
        let plane = h * w;
        let x = input.data();
        let wt = self.weight.data();
        let mut out = vec![T::zero(); self.out_channels * plane];
        for o in 0..self.out_channels {
            let out_plane = &mut out[o * plane..(o + 1) * plane];
            out_plane.fill(self.bias.data()[o]);
            for i in 0..c {
                let in_plane = &x[i * plane..(i + 1) * plane];
                for ky in 0..k {
                    let dy = ky as isize - pad;
                    let (y0, y1) = tap_range(h, dy);
                    for kx in 0..k {
                        let dx = kx as isize - pad;
                        let (x0, x1) = tap_range(w, dx);
                        let wv = wt[((o * c + i) * k + ky) * k + kx];
                        for y in y0..y1 {
                            let sy = (y as isize + dy) as usize;
                            let src = &in_plane[sy * w + (x0 as isize + dx) as usize..][..x1 - x0];
                            let dst = &mut out_plane[y * w + x0..y * w + x1];
                            for (d, &s) in dst.iter_mut().zip(src) {
                                *d += wv * s;
                            }
                        }
                    }
                }
            }
        }
        Tensor::from_vec(&[self.out_channels, h, w], out)
    }

    fn backward(
        &self,
        input: &Tensor<T>,
        grad_out: &Tensor<T>,
        grad_w: &mut Tensor<T>,
        grad_b: &mut Tensor<T>,
    ) -> Tensor<T> {
        let (c, h, w) = chw(input);
        let k = self.kernel;
        let pad = (k / 2) as isize;
        let plane = h * w;
        let x = input.data();
        let g = grad_out.data();
        let wt = self.weight.data();
        let gw = grad_w.data_mut();
        let mut grad_in = vec![T::zero(); c * plane];
        for o in 0..self.out_channels {
            let g_plane = &g[o * plane..(o + 1) * plane];
            grad_b.data_mut()[o] += g_plane.iter().copied().sum();
            for i in 0..c {
                let in_plane = &x[i * plane..(i + 1) * plane];
                let gi_plane = &mut grad_in[i * plane..(i + 1) * plane];
                for ky in 0..k {
                    let dy = ky as isize - pad;
                    let (y0, y1) = tap_range(h, dy);
                    for kx in 0..k {
                        let dx = kx as isize - pad;
                        let (x0, x1) = tap_range(w, dx);
                        let widx = ((o * c + i) * k + ky) * k + kx;
                        let wv = wt[widx];
                        let mut acc = T::zero();
                        for y in y0..y1 {
                            let sy = (y as isize + dy) as usize;
                            let start = sy * w + (x0 as isize + dx) as usize;
                            let grow = &g_plane[y * w + x0..y * w + x1];
                            let src = &in_plane[start..start + (x1 - x0)];
                            for (&gv, &s) in grow.iter().zip(src) {
                                acc += gv * s;
                            }
                            let dst = &mut gi_plane[start..start + (x1 - x0)];
                            for (d, &gv) in dst.iter_mut().zip(grow) {
                                *d += wv * gv;
                            }
                        }
                        gw[widx] += acc;
                    }
                }
            }
        }
        Tensor::from_vec(&[c, h, w], grad_in)
    }
}

impl<T: Scalar> Dense<T> {
    pub fn new(inputs: usize, outputs: usize) -> Self {
        Dense {
            inputs,
            outputs,
            weight: Tensor::zeros(&[outputs, inputs]),
            bias: Tensor::zeros(&[outputs]),
        }
    }

    fn forward(&self, input: &Tensor<T>) -> Tensor<T> {
        assert_eq!(input.len(), self.inputs, "dense input length");
        let x = input.data();
        let out = self
            .weight
            .data()
            .chunks_exact(self.inputs)
            .zip(self.bias.data())
            .map(|(row, &b)| b + row.iter().zip(x).map(|(&w, &v)| w * v).sum::<T>())
            .collect();
        Tensor::from_vec(&[self.outputs], out)
    }

    fn backward(
        &self,
        input: &Tensor<T>,
        grad_out: &Tensor<T>,
        grad_w: &mut Tensor<T>,
        grad_b: &mut Tensor<T>,
    ) -> Tensor<T> {
        let x = input.data();
        let mut grad_in = vec![T::zero(); self.inputs];
        let gw = grad_w.data_mut();
        for (o, &g) in grad_out.data().iter().enumerate() {
            grad_b.data_mut()[o] += g;
            if g == T::zero() {
                continue;
            }
            let row = &self.weight.data()[o * self.inputs..(o + 1) * self.inputs];
            let grow = &mut gw[o * self.inputs..(o + 1) * self.inputs];
            for ((gwv, gi), (&wv, &xv)) in grow.iter_mut().zip(grad_in.iter_mut()).zip(row.iter().zip(x)) {
                *gwv += g * xv;
                *gi += g * wv;
            }
        }
        Tensor::from_vec(input.dims(), grad_in)
    }
}

fn chw<T: Scalar>(t: &Tensor<T>) -> (usize, usize, usize) {
    match *t.dims() {
        [c, h, w] => (c, h, w),
        ref d => panic!("expected [c, h, w] activation, got {d:?}"),
    }
}

fn max_pool_forward<T: Scalar>(input: &Tensor<T>) -> Tensor<T> {
    let (c, h, w) = chw(input);
    let (oh, ow) = (h / 2, w / 2);
    let x = input.data();
    let mut out = Vec::with_capacity(c * oh * ow);
    for ch in 0..c {
        let p = &x[ch * h * w..(ch + 1) * h * w];
        for y in 0..oh {
            let r0 = &p[2 * y * w..];
            let r1 = &p[(2 * y + 1) * w..];
            for xx in 0..ow {
                let m = r0[2 * xx].max(r0[2 * xx + 1]).max(r1[2 * xx].max(r1[2 * xx + 1]));
                out.push(m);
            }
        }
    }
    Tensor::from_vec(&[c, oh, ow], out)
}

/// Routes each pooled gradient to the first maximal element of its window.
fn max_pool_backward<T: Scalar>(input: &Tensor<T>, grad_out: &Tensor<T>) -> Tensor<T> {
    let (c, h, w) = chw(input);
    let (oh, ow) = (h / 2, w / 2);
    let x = input.data();
    let g = grad_out.data();
    let mut grad_in = vec![T::zero(); x.len()];
    for ch in 0..c {
        let base = ch * h * w;
        for y in 0..oh {
            for xx in 0..ow {
                let candidates = [
                    base + 2 * y * w + 2 * xx,
                    base + 2 * y * w + 2 * xx + 1,
                    base + (2 * y + 1) * w + 2 * xx,
                    base + (2 * y + 1) * w + 2 * xx + 1,
                ];
                let mut best = candidates[0];
                for &idx in &candidates[1..] {
                    if x[idx] > x[best] {
                        best = idx;
                    }
                }
                grad_in[best] += g[(ch * oh + y) * ow + xx];
            }
        }
    }
    Tensor::from_vec(&[c, h, w], grad_in)
}

impl<T: Scalar> Layer<T> {
    pub fn name(&self) -> &'static str {
        match self {
            Layer::Conv(_) => "conv",
            Layer::Relu => "relu",
            Layer::MaxPool => "maxpool",
            Layer::Flatten => "flatten",
            Layer::Dense(_) => "dense",
        }
    }

    pub fn forward(&self, input: &Tensor<T>) -> Tensor<T> {
        match self {
            Layer::Conv(conv) => conv.forward(input),
            Layer::Relu => {
                let data = input.data().iter().map(|&v| v.max(T::zero())).collect();
                Tensor::from_vec(input.dims(), data)
            }
            Layer::MaxPool => max_pool_forward(input),
            Layer::Flatten => input.clone().reshaped(&[input.len()]),
            Layer::Dense(dense) => dense.forward(input),
        }
    }

    /// Gradient with respect to the layer input. Parameter gradients are
    /// accumulated into `param_grads` (weight, bias) for layers that have them.
    pub fn backward(
        &self,
        input: &Tensor<T>,
        grad_out: &Tensor<T>,
        param_grads: &mut [Tensor<T>],
    ) -> Tensor<T> {
        match self {
            Layer::Conv(conv) => {
                let (gw, rest) = param_grads.split_first_mut().expect("conv grads");
                conv.backward(input, grad_out, gw, &mut rest[0])
            }
            Layer::Relu => {
                let data = input
                    .data()
                    .iter()
                    .zip(grad_out.data())
                    .map(|(&x, &g)| if x > T::zero() { g } else { T::zero() })
                    .collect();
                Tensor::from_vec(input.dims(), data)
            }
            Layer::MaxPool => max_pool_backward(input, grad_out),
            Layer::Flatten => grad_out.clone().reshaped(input.dims()),
            Layer::Dense(dense) => {
                let (gw, rest) = param_grads.split_first_mut().expect("dense grads");
                dense.backward(input, grad_out, gw, &mut rest[0])
            }
        }
    }

    pub fn params(&self) -> Vec<&Tensor<T>> {
        match self {
            Layer::Conv(c) => vec![&c.weight, &c.bias],
            Layer::Dense(d) => vec![&d.weight, &d.bias],
            _ => Vec::new(),
        }
    }

    pub fn params_mut(&mut self) -> Vec<&mut Tensor<T>> {
        match self {
            Layer::Conv(c) => vec![&mut c.weight, &mut c.bias],
            Layer::Dense(d) => vec![&mut d.weight, &mut d.bias],
            _ => Vec::new(),
        }
    }

    pub fn cast<U: Scalar>(&self) -> Layer<U> {
        match self {
            Layer::Conv(c) => Layer::Conv(Conv2d {
                in_channels: c.in_channels,
                out_channels: c.out_channels,
                kernel: c.kernel,
                weight: c.weight.cast(),
                bias: c.bias.cast(),
            }),
            Layer::Dense(d) => Layer::Dense(Dense {
                inputs: d.inputs,
                outputs: d.outputs,
                weight: d.weight.cast(),
                bias: d.bias.cast(),
            }),
            Layer::Relu => Layer::Relu,
            Layer::MaxPool => Layer::MaxPool,
            Layer::Flatten => Layer::Flatten,
        }
    }
}

pub fn softmax<T: Scalar>(logits: &[T]) -> Vec<T> {
    let max = logits.iter().copied().fold(T::neg_infinity(), T::max);
    let exps: Vec<T> = logits.iter().map(|&z| (z - max).exp()).collect();
    let total: T = exps.iter().copied().sum();
    exps.into_iter().map(|e| e / total).collect()
}

/// Loss `-ln(p_label + ε)` and its gradient `p - onehot` with respect to the logits.
pub fn softmax_cross_entropy<T: Scalar>(logits: &[T], label: usize) -> (T, Vec<T>, Vec<T>) {
    let probs = softmax(logits);
    let eps = super::cast::<T>(super::LOSS_EPSILON);
    let loss = -(probs[label] + eps).ln();
    let mut grad = probs.clone();
    grad[label] = grad[label] - T::one();
    (loss, grad, probs)
}

#[cfg(test)]
mod tests {
    use super::*;

    /// Direct 4-loop convolution used as an oracle for the row-sliced kernel.
    fn naive_conv(conv: &Conv2d<f64>, x: &Tensor<f64>) -> Vec<f64> {
        let (c, h, w) = chw(x);
        let k = conv.kernel;
        let pad = (k / 2) as isize;
        let mut out = vec![0.0; conv.out_channels * h * w];
        for o in 0..conv.out_channels {
            for y in 0..h {
                for xx in 0..w {
                    let mut acc = conv.bias.data()[o];
                    for i in 0..c {
                        for ky in 0..k {
                            for kx in 0..k {
                                let sy = y as isize + ky as isize - pad;
                                let sx = xx as isize + kx as isize - pad;
                                if sy < 0 || sx < 0 || sy >= h as isize || sx >= w as isize {
                                    continue;
                                }
                                acc += conv.weight.data()[((o * c + i) * k + ky) * k + kx]
                                    * x.data()[(i * h + sy as usize) * w + sx as usize];
                            }
                        }
                    }
                    out[(o * h + y) * w + xx] = acc;
                }
            }
        }
        out
    }

    #[test]
    fn conv_matches_naive() {
        let mut conv = Conv2d::<f64>::new(2, 3, 3);
        for (i, v) in conv.weight.data_mut().iter_mut().enumerate() {
            *v = ((i * 7919) % 13) as f64 / 13.0 - 0.5;
        }
        conv.bias.data_mut().copy_from_slice(&[0.1, -0.2, 0.3]);
        let x = Tensor::from_vec(&[2, 4, 5], (0..40).map(|v| (v as f64 * 0.37).sin()).collect());
        let fast = Layer::Conv(conv.clone()).forward(&x);
        let slow = naive_conv(&conv, &x);
        for (a, b) in fast.data().iter().zip(&slow) {
            assert!((a - b).abs() < 1e-12);
        }
    }

    #[test]
    fn zero_input_gives_zero_conv_weight_grad() {
        let mut conv = Conv2d::<f32>::new(1, 2, 3);
        conv.weight.data_mut().fill(0.3);
        let layer = Layer::Conv(conv);
        let x = Tensor::zeros(&[1, 4, 4]);
        let g = Tensor::from_vec(&[2, 4, 4], vec![1.0; 32]);
        let mut grads = vec![Tensor::zeros(&[2, 1, 3, 3]), Tensor::zeros(&[2])];
        layer.backward(&x, &g, &mut grads);
        assert!(grads[0].data().iter().all(|&v| v == 0.0));
        assert_eq!(grads[1].data(), &[16.0, 16.0]);
    }

    #[test]
    fn max_pool_routes_to_max() {
        let x = Tensor::from_vec(&[1, 2, 2], vec![1.0f32, 4.0, 3.0, 2.0]);
        let y = Layer::MaxPool.forward(&x);
        assert_eq!(y.data(), &[4.0]);
        let g = Layer::MaxPool.backward(&x, &Tensor::from_vec(&[1, 1, 1], vec![2.0]), &mut []);
        assert_eq!(g.data(), &[0.0, 2.0, 0.0, 0.0]);
    }

    #[test]
    fn softmax_of_zeros_is_uniform() {
        let p = softmax(&[0.0f32; 8]);
        assert!(p.iter().all(|&v| (v - 0.125).abs() < 1e-7));
        let (loss, grad, _) = softmax_cross_entropy(&[0.0f64; 8], 2);
        assert!((loss - 8f64.ln()).abs() < 1e-9);
        assert!((grad[2] + 0.875).abs() < 1e-12 && (grad[0] - 0.125).abs() < 1e-12);
    }
}
