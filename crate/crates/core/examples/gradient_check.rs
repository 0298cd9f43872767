//! Finite-difference checks of every layer in single and double precision.

use orient8::nn::gradcheck::{check_layer, check_network, GradCheckOptions, GradCheckReport};
use orient8::nn::{Conv2d, Dense, Layer, Network, NetworkConfig, Scalar, Tensor};
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn tensor<T: Scalar>(rng: &mut ChaCha8Rng, dims: &[usize], margin: f64) -> Tensor<T> {
    let n = dims.iter().product();
    let data = (0..n)
        .map(|_| {
            let v = rng.gen_range(margin..1.0);
            T::from_f64(if rng.gen_bool(0.5) { v } else { -v }).unwrap()
        })
        .collect();
    Tensor::from_vec(dims, data)
}

fn report(precision: &str, r: &GradCheckReport) {
    println!("{precision} {:<8} {:>4} coords  max rel error {:.2e}", r.name, r.checked, r.max_rel_error);
}

fn run<T: Scalar>(precision: &str, opts: GradCheckOptions) {
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    let mut conv = Conv2d::<T>::new(2, 4, 3);
    conv.weight = tensor(&mut rng, conv.weight.dims(), 0.0);
    conv.bias = tensor(&mut rng, conv.bias.dims(), 0.0);
    let mut dense = Dense::<T>::new(48, 8);
    dense.weight = tensor(&mut rng, dense.weight.dims(), 0.0);

    // pooling inputs on a shuffled grid so no window has a near tie
    let mut grid: Vec<T> = (0..128).map(|k| T::from_f64(k as f64 * 0.05 - 3.2).unwrap()).collect();
    grid.shuffle(&mut rng);

    let cases = [
        (Layer::Conv(conv), tensor(&mut rng, &[2, 8, 8], 0.0)),
        (Layer::Relu, tensor(&mut rng, &[2, 8, 8], 0.1)),
        (Layer::MaxPool, Tensor::from_vec(&[2, 8, 8], grid)),
        (Layer::Flatten, tensor(&mut rng, &[3, 6, 6], 0.0)),
        (Layer::Dense(dense), tensor(&mut rng, &[48], 0.0)),
    ];
    for (layer, input) in &cases {
        report(precision, &check_layer(layer, input, &opts));
    }
}

fn main() {
    run::<f32>("f32", GradCheckOptions::f32_default());
    run::<f64>("f64", GradCheckOptions::f64_default());

    let cfg = NetworkConfig { input_size: 16, conv_channels: [2, 3, 4], hidden_units: 6, seed: 2, ..Default::default() };
    let net = Network::<f32>::new(cfg).unwrap().cast::<f64>();
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let inputs: Vec<Tensor<f64>> = (0..2).map(|_| tensor(&mut rng, &[3, 16, 16], 0.0)).collect();
    report("f64", &check_network(&net, &inputs, &[1, 6], &GradCheckOptions::f64_default()));
}
