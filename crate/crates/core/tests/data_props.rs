use std::io::Write;

use proptest::prelude::*;
use rbp_core::channel::{ChannelAlgorithm, ChannelSpec};
use rbp_core::data::{autoencoder_identity, load_idx, read_idx_images, synthetic_multivariate, synthetic_scalar, write_idx, Dataset, MnistFiles, MomentSpec};
use rbp_core::linalg::{sample_gaussian, Matrix, SeededRng};
use rbp_core::net::{ActivationKind, Architecture};
use rbp_core::train::{sgd_epoch, Loss, TrainConfig, TrainState};
use rbp_core::Error;

fn pixel_dataset(m: usize, side: usize, classes: usize, seed: u64) -> Dataset {
    let mut rng = SeededRng::new(seed);
    let pix: Vec<f64> = (0..m * side * side).map(|_| rng.below(256) as f64 / 255.0).collect();
    let labels: Vec<usize> = (0..m).map(|_| rng.below(classes)).collect();
    Dataset::from_labels(Matrix::from_vec(m, side * side, pix).unwrap(), &labels, classes).unwrap()
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(32))]

    #[test]
    fn idx_round_trip_is_exact(m in 1usize..20, side in 1usize..6, seed in any::<u64>()) {
        let ds = pixel_dataset(m, side, 10, seed);
        let dir = tempfile::tempdir().unwrap();
        let (img, lab) = (dir.path().join("img"), dir.path().join("lab"));
        write_idx(&ds, &img, &lab).unwrap();
        let back = load_idx(&img, &lab).unwrap();
        prop_assert_eq!(back, ds);
    }

    #[test]
    fn scalar_moments_exact(alpha in -3.0f64..3.0, beta in 0.1f64..4.0, m in 10usize..500, seed in any::<u64>()) {
        let ds = synthetic_scalar(&MomentSpec::linear(alpha, beta), m, &mut SeededRng::new(seed)).unwrap();
        let (sii, sti) = ds.second_moments().unwrap();
        prop_assert!((sii[(0, 0)] - beta).abs() < 1e-12 * beta.max(1.0));
        prop_assert!((sti[(0, 0)] - alpha).abs() < 1e-12 * alpha.abs().max(1.0));
    }

    #[test]
    fn matrix_moments_exact(n in 1usize..5, k in 1usize..4, extra in 0usize..50, seed in any::<u64>()) {
        let mut rng = SeededRng::new(seed);
        let g = sample_gaussian(&mut rng, n, n, 1.0).unwrap();
        let sii = g.matmul(&g.transpose()).unwrap().add(&Matrix::identity(n)).unwrap().symmetric_part().unwrap();
        let sti = sample_gaussian(&mut rng, k, n, 1.0).unwrap();
        let ds = synthetic_multivariate(&sii, &sti, n + 1 + extra, &mut rng).unwrap();
        let (a, b) = ds.second_moments().unwrap();
        prop_assert!(a.sub(&sii).unwrap().max_abs() < 1e-8);
        prop_assert!(b.sub(&sti).unwrap().max_abs() < 1e-8);
    }
}

#[test]
fn corrupted_magic_is_a_format_error() {
    let ds = pixel_dataset(3, 2, 10, 0);
    let dir = tempfile::tempdir().unwrap();
    let (img, lab) = (dir.path().join("img"), dir.path().join("lab"));
    write_idx(&ds, &img, &lab).unwrap();
    let mut bytes = std::fs::read(&img).unwrap();
    bytes[2] = 0x09;
    std::fs::File::create(&img).unwrap().write_all(&bytes).unwrap();
    let err = read_idx_images(&img).unwrap_err();
    assert!(matches!(err, Error::BadMagic { .. }), "{err}");
    assert!(err.is_data_error());
    let missing = load_idx(&dir.path().join("nope"), &lab).unwrap_err();
    assert!(missing.to_string().contains("nope"));
}

#[test]
fn truncated_file_rejected() {
    let ds = pixel_dataset(4, 3, 10, 1);
    let dir = tempfile::tempdir().unwrap();
    let (img, lab) = (dir.path().join("img"), dir.path().join("lab"));
    write_idx(&ds, &img, &lab).unwrap();
    let bytes = std::fs::read(&img).unwrap();
    std::fs::write(&img, &bytes[..bytes.len() - 5]).unwrap();
    assert!(matches!(read_idx_images(&img), Err(Error::Truncated { .. })));
}

#[test]
fn official_mnist_sizes_when_present() {
    let dir = std::env::var("RBP_MNIST_DIR").unwrap_or_else(|_| "/root/data/mnist".into());
    let files = MnistFiles::in_dir(std::path::Path::new(&dir));
    if !files.exist() {
        eprintln!("MNIST not found in {dir}; skipping");
        return;
    }
    let (train, test) = files.load().unwrap();
    assert_eq!((train.len(), train.input_dim()), (60_000, 784));
    assert_eq!(test.len(), 10_000);
}

#[test]
fn synthetic_examples() {
    let ds = synthetic_scalar(&MomentSpec::linear(1.0, 1.0), 1000, &mut SeededRng::new(0)).unwrap();
    let (sii, sti) = ds.second_moments().unwrap();
    assert!((sii[(0, 0)] - 1.0).abs() < 1e-12 && (sti[(0, 0)] - 1.0).abs() < 1e-12);
    assert_eq!(ds, synthetic_scalar(&MomentSpec::linear(1.0, 1.0), 1000, &mut SeededRng::new(0)).unwrap());

    let auto = autoencoder_identity(2, 500, &mut SeededRng::new(1)).unwrap();
    let (sii, _) = auto.second_moments().unwrap();
    assert!(sii.sub(&Matrix::identity(2)).unwrap().max_abs() < 1e-8);
    assert_eq!(auto.inputs, auto.targets);
    assert!(autoencoder_identity(5, 4, &mut SeededRng::new(1)).is_err());

    // Σ_TI = Σ_II gives the identity as least-squares map.
    let s = Matrix::from_rows(&[vec![2.0, 0.5], vec![0.5, 1.0]]).unwrap();
    let ds = synthetic_multivariate(&s, &s, 300, &mut SeededRng::new(2)).unwrap();
    let (sii, sti) = ds.second_moments().unwrap();
    let map = sti.matmul(&sii.inverse().unwrap()).unwrap();
    assert!(map.sub(&Matrix::identity(2)).unwrap().max_abs() < 1e-8);
}

#[test]
fn uncorrelated_targets_drive_chain_to_zero() {
    let ds = synthetic_scalar(&MomentSpec::linear(0.0, 1.0), 200, &mut SeededRng::new(3)).unwrap();
    let arch = Architecture::new(vec![1, 1, 1], vec![ActivationKind::Identity; 2], false).unwrap();
    let cfg = TrainConfig { loss: Loss::Mse, batch_size: 200, lr0: 0.1, decay: 0.0, ..TrainConfig::default() };
    let mut st = TrainState::new(&arch, &ChannelSpec::new(ChannelAlgorithm::Srbp), &SeededRng::new(0)).unwrap();
    st.net.weights = vec![Matrix::filled(1, 1, 0.6), Matrix::filled(1, 1, 0.9)];
    st.channel.backward = vec![Matrix::filled(1, 1, 1.0)];
    for _ in 0..3000 {
        sgd_epoch(&mut st, &cfg, &ds, &mut SeededRng::new(0)).unwrap();
    }
    let p = st.net.weights[0][(0, 0)] * st.net.weights[1][(0, 0)];
    assert!(p.abs() < 1e-6, "{p}");
}
