use proptest::prelude::*;
use rbp_core::linalg::{sample_bernoulli, sample_gaussian, Matrix, SeededRng};
use rbp_core::net::{activation_derivative, count_bp_ops, count_srbp_ops, init_weights, ActivationKind, Architecture, ForwardNet};

fn matrix(rows: usize, cols: usize) -> impl Strategy<Value = Matrix> {
    prop::collection::vec(-10.0f64..10.0, rows * cols).prop_map(move |v| Matrix::from_vec(rows, cols, v).unwrap())
}

proptest! {
    #[test]
    fn double_transpose_is_exact(m in (1usize..9, 1usize..9).prop_flat_map(|(r, c)| matrix(r, c))) {
        prop_assert_eq!(m.transpose().transpose(), m);
    }

    #[test]
    fn matmul_associative(a in matrix(8, 8), b in matrix(8, 8), c in matrix(8, 8)) {
        let left = a.matmul(&b).unwrap().matmul(&c).unwrap();
        let right = a.matmul(&b.matmul(&c).unwrap()).unwrap();
        // Relative to the scale of the summed magnitudes, not to possibly cancelled entries.
        let scale = a.map(f64::abs).matmul(&b.map(f64::abs)).unwrap().matmul(&c.map(f64::abs)).unwrap().max_abs();
        prop_assert!(left.sub(&right).unwrap().max_abs() <= 1e-12 * scale.max(1.0));
    }

    #[test]
    fn sampling_reproducible(seed in any::<u64>(), std in 0.0f64..3.0, p in 0.0f64..=1.0) {
        let g1 = sample_gaussian(&mut SeededRng::new(seed), 5, 4, std).unwrap();
        let g2 = sample_gaussian(&mut SeededRng::new(seed), 5, 4, std).unwrap();
        prop_assert_eq!(g1, g2);
        let b1 = sample_bernoulli(&mut SeededRng::new(seed), 5, 4, p).unwrap();
        let b2 = sample_bernoulli(&mut SeededRng::new(seed), 5, 4, p).unwrap();
        prop_assert_eq!(b1, b2);
        prop_assert_eq!(SeededRng::new(seed).algorithm_id(), SeededRng::new(seed ^ 1).algorithm_id());
    }

    #[test]
    fn linear_net_is_one_product(seed in any::<u64>(), sizes in prop::collection::vec(1usize..6, 2..6)) {
        let depth = sizes.len() - 1;
        let arch = Architecture::new(sizes.clone(), vec![ActivationKind::Identity; depth], false).unwrap();
        let mut rng = SeededRng::new(seed);
        let net = init_weights(&arch, &mut rng).unwrap();
        let x = sample_gaussian(&mut rng, 3, sizes[0], 1.0).unwrap();
        let mut p = Matrix::identity(sizes[0]);
        for w in &net.weights {
            p = w.matmul(&p).unwrap();
        }
        let want = x.matmul(&p.transpose()).unwrap();
        let got = net.forward_batch(&x).unwrap();
        let out = got.output();
        prop_assert!(out.sub(&want).unwrap().max_abs() <= 1e-10 * want.max_abs().max(1.0));
    }

    #[test]
    fn relu_trace_and_shapes(seed in any::<u64>(), sizes in prop::collection::vec(1usize..7, 3..5)) {
        let depth = sizes.len() - 1;
        let arch = Architecture::uniform(sizes.clone(), ActivationKind::Relu, ActivationKind::Identity, true).unwrap();
        let mut rng = SeededRng::new(seed);
        let net = init_weights(&arch, &mut rng).unwrap();
        let x = sample_gaussian(&mut rng, 4, sizes[0], 1.0).unwrap();
        let t = net.forward_batch(&x).unwrap();
        prop_assert_eq!(t.pre.len(), depth);
        for h in 1..=depth {
            prop_assert_eq!(t.pre[h - 1].shape(), (4, sizes[h]));
            prop_assert_eq!(t.post[h - 1].shape(), (4, sizes[h]));
        }
        for h in 1..depth {
            let s = &t.pre[h - 1];
            let d = t.deriv[h - 1].as_ref().unwrap();
            for ((o, s), d) in t.post[h - 1].as_slice().iter().zip(s.as_slice()).zip(d.as_slice()) {
                if *s != 0.0 {
                    prop_assert_eq!(*o, s * d);
                }
            }
        }
    }

    #[test]
    fn srbp_count_formula(sizes in prop::collection::vec(1usize..50, 2..7)) {
        let arch = Architecture::uniform(sizes.clone(), ActivationKind::Tanh, ActivationKind::Identity, false).unwrap();
        let l = sizes.len() - 1;
        let want: usize = sizes[1..l].iter().map(|n| n * sizes[l]).sum();
        prop_assert_eq!(count_srbp_ops(&arch), want as u64);
        let w: usize = sizes.windows(2).map(|p| p[0] * p[1]).sum();
        prop_assert_eq!(count_bp_ops(&arch), w as u64);
    }
}

#[test]
fn matmul_examples() {
    let m = Matrix::from_rows(&[vec![1.0, 2.0], vec![3.0, 4.0]]).unwrap();
    assert_eq!(Matrix::identity(2).matmul(&m).unwrap(), m);
    let v = Matrix::from_rows(&[vec![0.0], vec![1.0]]).unwrap();
    assert_eq!(m.matmul(&v).unwrap().into_vec(), vec![2.0, 4.0]);
    assert!(v.matmul(&v).is_err());
    assert_eq!(m.trace().unwrap(), 5.0);
    assert_eq!(Matrix::row_vector(&[3.0, 4.0]).frobenius(), 5.0);
    assert_eq!(Matrix::zeros(3, 2).frobenius(), 0.0);
}

#[test]
fn sampler_statistics() {
    let mut rng = SeededRng::new(42);
    assert_eq!(sample_gaussian(&mut rng, 3, 3, 0.0).unwrap(), Matrix::zeros(3, 3));
    let g = sample_gaussian(&mut rng, 1000, 1000, 1.0).unwrap();
    let n = g.as_slice().len() as f64;
    let mean = g.as_slice().iter().sum::<f64>() / n;
    let sd = (g.as_slice().iter().map(|x| (x - mean).powi(2)).sum::<f64>() / n).sqrt();
    assert!(mean.abs() < 5e-3 && (sd - 1.0).abs() < 5e-3, "{mean} {sd}");
    assert_eq!(sample_bernoulli(&mut rng, 4, 4, 0.0).unwrap(), Matrix::zeros(4, 4));
    assert_eq!(sample_bernoulli(&mut rng, 4, 4, 1.0).unwrap(), Matrix::filled(4, 4, 1.0));
    let b = sample_bernoulli(&mut rng, 1000, 1000, 0.5).unwrap();
    let frac = b.as_slice().iter().sum::<f64>() / 1e6;
    assert!((frac - 0.5).abs() < 3e-3);
}

fn mnist_arch() -> Architecture {
    Architecture::uniform(vec![784, 100, 100, 100, 100, 10], ActivationKind::Tanh, ActivationKind::Softmax, true).unwrap()
}

#[test]
fn mnist_init_shapes_and_scale() {
    let arch = mnist_arch();
    let net = init_weights(&arch, &mut SeededRng::new(1)).unwrap();
    assert_eq!(net.weights[0].shape(), (100, 784));
    let w = net.weights[0].as_slice();
    let sd = (w.iter().map(|x| x * x).sum::<f64>() / w.len() as f64).sqrt();
    let want = (2.0f64 / 884.0).sqrt();
    assert!((sd / want - 1.0).abs() < 0.1);
    assert_eq!(net, init_weights(&arch, &mut SeededRng::new(1)).unwrap());
    assert_eq!(count_bp_ops(&arch), 109_400);
    assert_eq!(count_srbp_ops(&arch), 4000);
    let square = Architecture::uniform(vec![7, 7, 7], ActivationKind::Tanh, ActivationKind::Identity, false).unwrap();
    assert_eq!((count_bp_ops(&square), count_srbp_ops(&square)), (98, 49));
}

fn scalar_net(acts: Vec<ActivationKind>, weights: &[f64]) -> ForwardNet {
    let arch = Architecture::new(vec![1; weights.len() + 1], acts, false).unwrap();
    ForwardNet {
        arch,
        weights: weights.iter().map(|&w| Matrix::filled(1, 1, w)).collect(),
        biases: Vec::new(),
    }
}

#[test]
fn scalar_forward_examples() {
    let lin = scalar_net(vec![ActivationKind::Identity; 2], &[2.0, 3.0]);
    assert_eq!(lin.forward(&[1.0]).unwrap().output()[(0, 0)], 6.0);
    let pow = scalar_net(vec![ActivationKind::Power(2.0), ActivationKind::Identity], &[2.0, 1.0]);
    assert_eq!(pow.forward(&[1.0]).unwrap().output()[(0, 0)], 4.0);
    assert!(pow.forward(&[-1.0]).is_err());
}

#[test]
fn tanh_range_and_derivatives() {
    let arch = Architecture::uniform(vec![5, 20, 3], ActivationKind::Tanh, ActivationKind::Identity, true).unwrap();
    let mut rng = SeededRng::new(3);
    let net = init_weights(&arch, &mut rng).unwrap();
    let x = sample_gaussian(&mut rng, 50, 5, 2.0).unwrap();
    assert!(net.forward_batch(&x).unwrap().post[0].as_slice().iter().all(|o| o.abs() < 1.0));
    assert_eq!(activation_derivative(ActivationKind::Identity, 123.0).unwrap(), 1.0);
    assert_eq!(activation_derivative(ActivationKind::Tanh, 0.0).unwrap(), 1.0);
    assert_eq!(activation_derivative(ActivationKind::Logistic, 0.0).unwrap(), 0.25);
    assert!(activation_derivative(ActivationKind::Softmax, 0.0).is_err());
}

#[test]
fn rejects_bad_architectures() {
    assert!(Architecture::new(vec![3], vec![], false).is_err());
    assert!(Architecture::new(vec![3, 0, 2], vec![ActivationKind::Tanh, ActivationKind::Identity], false).is_err());
    assert!(Architecture::new(vec![3, 2], vec![ActivationKind::Tanh, ActivationKind::Identity], false).is_err());
    assert!(Architecture::parse_sizes("784,100,x").is_err());
    assert_eq!(Architecture::parse_sizes("784,100,10").unwrap(), vec![784, 100, 10]);
}
