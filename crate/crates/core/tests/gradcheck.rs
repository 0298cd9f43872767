use orient8::nn::gradcheck::{check_layer, check_network, check_softmax_cross_entropy, GradCheckOptions, GradCheckReport};
use orient8::nn::{Conv2d, Dense, Layer, Network, NetworkConfig, Scalar, Tensor};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn random<T: Scalar>(dims: &[usize], seed: u64) -> Tensor<T> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let n = dims.iter().product();
    Tensor::from_vec(dims, (0..n).map(|_| T::from_f64(rng.gen_range(-1.0..1.0)).unwrap()).collect())
}

// values with |v| >= 0.1, so a step of 1e-2 never crosses the ReLU kink
fn away_from_zero<T: Scalar>(dims: &[usize], seed: u64) -> Tensor<T> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let n = dims.iter().product();
    let data = (0..n)
        .map(|_| {
            let v: f64 = rng.gen_range(0.1..1.0);
            T::from_f64(if rng.gen_bool(0.5) { v } else { -v }).unwrap()
        })
        .collect();
    Tensor::from_vec(dims, data)
}

// a shuffled grid with spacing 0.05 keeps every pooling window's maximum
// unique under the step
fn distinct<T: Scalar>(dims: &[usize], seed: u64) -> Tensor<T> {
    use rand::seq::SliceRandom;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let n: usize = dims.iter().product();
    let mut data: Vec<T> = (0..n).map(|i| T::from_f64(i as f64 * 0.05 - 2.0).unwrap()).collect();
    data.shuffle(&mut rng);
    Tensor::from_vec(dims, data)
}

fn layers<T: Scalar>() -> Vec<(Layer<T>, Tensor<T>)> {
    let mut conv = Conv2d::new(2, 3, 3);
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    for v in conv.weight.data_mut().iter_mut().chain(conv.bias.data_mut()) {
        *v = T::from_f64(rng.gen_range(-0.5..0.5)).unwrap();
    }
    let mut dense = Dense::new(64, 10);
    for v in dense.weight.data_mut().iter_mut().chain(dense.bias.data_mut()) {
        *v = T::from_f64(rng.gen_range(-0.5..0.5)).unwrap();
    }
    vec![
        (Layer::Conv(conv), random(&[2, 8, 8], 2)),
        (Layer::Relu, away_from_zero(&[3, 8, 8], 3)),
        (Layer::MaxPool, distinct(&[3, 8, 8], 4)),
        (Layer::Flatten, random(&[3, 6, 6], 5)),
        (Layer::Dense(dense), random(&[64], 6)),
    ]
}

fn assert_report(r: &GradCheckReport, tol: f64) {
    println!("{}: checked {} max rel {:.3e}", r.name, r.checked, r.max_rel_error);
    assert!(r.checked >= 100, "{}: only {} coordinates", r.name, r.checked);
    assert!(r.passes(tol), "{r:?}");
}

fn small_net<T: Scalar>() -> (Network<T>, Vec<Tensor<T>>, Vec<usize>) {
    let cfg = NetworkConfig { input_size: 16, conv_channels: [2, 3, 4], hidden_units: 6, seed: 5, ..Default::default() };
    let net = Network::<f32>::new(cfg).unwrap().cast::<T>();
    let inputs = (0..2).map(|i| random(&[3, 16, 16], 10 + i)).collect();
    (net, inputs, vec![3, 6])
}

#[test]
fn layers_f32() {
    let opts = GradCheckOptions { coords: 150, ..GradCheckOptions::f32_default() };
    for (layer, x) in layers::<f32>() {
        assert_report(&check_layer(&layer, &x, &opts), 1e-2);
    }
}

#[test]
fn layers_f64() {
    let opts = GradCheckOptions { coords: 150, ..GradCheckOptions::f64_default() };
    for (layer, x) in layers::<f64>() {
        assert_report(&check_layer(&layer, &x, &opts), 1e-6);
    }
}

#[test]
fn softmax_cross_entropy_both_precisions() {
    let z = [0.3, -1.2, 2.0, 0.0, 0.5, -0.7, 1.1, 0.2];
    let r32 = check_softmax_cross_entropy(&z.map(|v| v as f32), 2, &GradCheckOptions::f32_default());
    assert!(r32.passes(1e-2), "{r32:?}");
    let r64 = check_softmax_cross_entropy(&z, 5, &GradCheckOptions::f64_default());
    assert!(r64.passes(1e-7), "{r64:?}");
}

// Central differences through the full f32 stack cannot both beat roundoff
// and stay clear of ReLU/pool kinks, so the f32 backward pass is compared
// with the f64 one, which is itself checked numerically below.
#[test]
fn whole_network_f32_matches_f64() {
    let (net, x, y) = small_net::<f64>();
    let net32 = net.cast::<f32>();
    let x32: Vec<Tensor<f32>> = x.iter().map(|t| t.cast()).collect();
    let g64 = net.loss_and_gradients(&x, &y).gradients;
    let g32 = net32.loss_and_gradients(&x32, &y).gradients;
    let mut worst = 0.0f64;
    for (a, b) in g32.tensors.iter().zip(&g64.tensors) {
        for (&p, &q) in a.data().iter().zip(b.data()) {
            worst = worst.max(orient8::nn::gradcheck::relative_error(p as f64, q, 1e-3));
        }
    }
    assert!(worst < 1e-3, "f32 vs f64 backward: {worst:e}");
}

#[test]
fn whole_network_f64() {
    let (net, x, y) = small_net::<f64>();
    let opts = GradCheckOptions { coords: 150, ..GradCheckOptions::f64_default() };
    assert_report(&check_network(&net, &x, &y, &opts), 1e-5);
}
