use cilab_core::nn::{Activation, Batch, IndexKind, ModelSpec, Network};
use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn random_case(seed: u64, activation: Activation) -> (Network, Vec<f64>, Vec<usize>) {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let spec = ModelSpec::new(4, vec![6, 5], activation, 3).unwrap();
    let net = Network::init(spec, &mut rng).unwrap();
    let x: Vec<f64> = (0..7 * 4).map(|_| rng.random_range(-1.5..1.5)).collect();
    let y: Vec<usize> = (0..7).map(|_| rng.random_range(0..3)).collect();
    (net, x, y)
}

fn loss_at(net: &Network, values: &[f64], x: &[f64], y: &[usize]) -> f64 {
    let mut n = net.clone();
    n.params_mut().copy_from_slice(values);
    n.loss(&Batch::new(x, y, 4).unwrap()).unwrap()
}

#[test]
fn every_coordinate_matches_central_differences() {
    for (seed, act) in [(1, Activation::Tanh), (2, Activation::Relu)] {
        let (net, x, y) = random_case(seed, act);
        let (_, g) = net.gradient(&Batch::new(&x, &y, 4).unwrap()).unwrap();
        let theta = net.params().values().to_vec();
        let h = 1e-5;
        for i in 0..theta.len() {
            let mut plus = theta.clone();
            let mut minus = theta.clone();
            plus[i] += h;
            minus[i] -= h;
            let fd = (loss_at(&net, &plus, &x, &y) - loss_at(&net, &minus, &x, &y)) / (2.0 * h);
            let scale = g[i].abs().max(fd.abs()).max(1e-4);
            assert!(
                (fd - g[i]).abs() / scale < 1e-6,
                "coordinate {i}: analytic {} vs numeric {fd}",
                g[i]
            );
        }
    }
}

#[test]
fn deterministic_forward_and_gradient() {
    let (a, x, y) = random_case(3, Activation::Relu);
    let (b, _, _) = random_case(3, Activation::Relu);
    let batch = Batch::new(&x, &y, 4).unwrap();
    assert_eq!(a.gradient(&batch).unwrap(), b.gradient(&batch).unwrap());
    assert_eq!(a.forward(&batch).unwrap(), b.forward(&batch).unwrap());
}

#[test]
fn head_blocks_cover_the_last_layer() {
    let (net, _, _) = random_case(4, Activation::Tanh);
    let last = net.index_set(IndexKind::LastLayer).unwrap();
    let total: usize = (0..net.classes())
        .map(|c| net.index_set(IndexKind::Class(c)).unwrap().len())
        .sum();
    assert_eq!(total, last.len());
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(32))]

    #[test]
    fn directional_derivative(seed in 0u64..10_000) {
        let (net, x, y) = random_case(seed, Activation::Tanh);
        let (_, g) = net.gradient(&Batch::new(&x, &y, 4).unwrap()).unwrap();
        let norm = g.iter().map(|v| v * v).sum::<f64>().sqrt();
        prop_assume!(norm > 1e-6);
        let u: Vec<f64> = g.iter().map(|v| v / norm).collect();
        let theta = net.params().values();
        let h = 1e-5;
        let plus: Vec<f64> = theta.iter().zip(&u).map(|(t, d)| t + h * d).collect();
        let minus: Vec<f64> = theta.iter().zip(&u).map(|(t, d)| t - h * d).collect();
        let fd = (loss_at(&net, &plus, &x, &y) - loss_at(&net, &minus, &x, &y)) / (2.0 * h);
        prop_assert!((fd - norm).abs() / norm < 1e-6);
    }
}
