use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use symcast_neural::{
    build_cnn7, build_mlp, build_resnet1d, grad_check, grad_check_network, io, LayerSpec, Mode, Network, NetworkSpec,
    Tape, Tensor,
};

fn random_batch(rows: usize, cols: usize, seed: u64) -> Tensor {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    Tensor::new(vec![rows, cols], (0..rows * cols).map(|_| rng.gen_range(-1.5..1.5)).collect()).unwrap()
}

const H: f64 = 1e-4;
const TOL: f64 = 1e-4;

#[test]
fn dense_gradient_matches_central_differences() {
    // Direct check without going through Network: y = sum((x W + b)^2 * c)
    let mut rng = ChaCha8Rng::seed_from_u64(7);
    let x: Vec<f64> = (0..12).map(|_| rng.gen_range(-1.0..1.0)).collect();
    let w: Vec<f64> = (0..8).map(|_| rng.gen_range(-1.0..1.0)).collect();
    let b: Vec<f64> = (0..2).map(|_| rng.gen_range(-1.0..1.0)).collect();
    let eval = |w: &[f64], b: &[f64]| -> f64 {
        let mut s = 0.0;
        for r in 0..3 {
            for o in 0..2 {
                let mut z = b[o];
                for k in 0..4 {
                    z += x[r * 4 + k] * w[k * 2 + o];
                }
                s += z * z;
            }
        }
        s
    };
    let mut tape = Tape::new();
    let xv = tape.constant(Tensor::new(vec![3, 4], x.clone()).unwrap());
    let wv = tape.param("w", Tensor::new(vec![4, 2], w.clone()).unwrap());
    let bv = tape.param("b", Tensor::new(vec![2], b.clone()).unwrap());
    let z = tape.matmul(xv, wv).unwrap();
    let z = tape.channel_bias(z, bv).unwrap();
    let sq = tape.mul(z, z).unwrap();
    let loss = tape.sum(sq);
    let grads = tape.backward(loss).unwrap();

    for i in 0..w.len() {
        let (mut wp, mut wm) = (w.clone(), w.clone());
        wp[i] += H;
        wm[i] -= H;
        let fd = (eval(&wp, &b) - eval(&wm, &b)) / (2.0 * H);
        let a = grads["w"].values()[i];
        assert!((a - fd).abs() / a.abs().max(fd.abs()).max(1e-12) < TOL, "w[{i}]: {a} vs {fd}");
    }
    for i in 0..b.len() {
        let (mut bp, mut bm) = (b.clone(), b.clone());
        bp[i] += H;
        bm[i] -= H;
        let fd = (eval(&w, &bp) - eval(&w, &bm)) / (2.0 * H);
        let a = grads["b"].values()[i];
        assert!((a - fd).abs() / a.abs().max(fd.abs()).max(1e-12) < TOL, "b[{i}]: {a} vs {fd}");
    }
}

#[test]
fn mlp_gradients() {
    for seed in 0..3 {
        let spec = build_mlp(6, &[5, 4], seed);
        let report = grad_check(&spec, &random_batch(4, 6, seed + 10), H).unwrap();
        assert!(report.max_rel_deviation <= TOL, "{report:?}");
        assert!(report.checked > report.skipped_at_kinks * 10, "{report:?}");
    }
}

#[test]
fn conv_gap_dense_gradients() {
    let spec = NetworkSpec {
        input_shape: (1, 9),
        layers: vec![
            LayerSpec::Conv1d {
                out_channels: 3,
                kernel_size: 3,
                stride: 2,
                padding: 1,
            },
            LayerSpec::Batchnorm1d,
            LayerSpec::GlobalAvgPool,
            LayerSpec::Dense { out_units: 1 },
        ],
        seed: 5,
    };
    let report = grad_check(&spec, &random_batch(3, 9, 1), H).unwrap();
    assert!(report.max_rel_deviation <= TOL, "{report:?}");
    assert_eq!(report.skipped_at_kinks, 0);
}

#[test]
fn cnn7_gradients() {
    let spec = build_cnn7(8, &[2, 2, 3, 3, 2, 2, 2], 3).unwrap();
    let report = grad_check(&spec, &random_batch(3, 8, 2), H).unwrap();
    assert!(report.max_rel_deviation <= TOL, "{report:?}");
}

#[test]
fn resnet1d_gradients() {
    let spec = build_resnet1d(8, &[2, 3, 3], 4).unwrap();
    let report = grad_check(&spec, &random_batch(3, 8, 3), H).unwrap();
    assert!(report.max_rel_deviation <= TOL, "{report:?}");
}

#[test]
fn parameter_free_network_passes_vacuously() {
    let spec = NetworkSpec {
        input_shape: (1, 5),
        layers: vec![LayerSpec::GlobalAvgPool],
        seed: 0,
    };
    let report = grad_check(&spec, &random_batch(2, 5, 0), H).unwrap();
    assert_eq!(report.max_rel_deviation, 0.0);
    assert_eq!(report.checked, 0);
}

#[test]
fn inference_mode_batch_norm_gradients() {
    let mut net = Network::init(build_resnet1d(6, &[2, 2, 2], 9).unwrap()).unwrap();
    for (name, t) in net.buffers.iter_mut() {
        let fill = if name.ends_with("running_var") { 1.7 } else { 0.3 };
        t.values_mut().iter_mut().for_each(|v| *v = fill);
    }
    let report = grad_check_network(&net, &random_batch(2, 6, 4), &[0.1, -0.4], H, Mode::Infer).unwrap();
    assert!(report.max_rel_deviation <= TOL, "{report:?}");
}

#[test]
fn pooling_is_shift_invariant_with_pointwise_convolutions() {
    let spec = NetworkSpec {
        input_shape: (1, 7),
        layers: vec![
            LayerSpec::Conv1d {
                out_channels: 4,
                kernel_size: 1,
                stride: 1,
                padding: 0,
            },
            LayerSpec::Relu,
            LayerSpec::Conv1d {
                out_channels: 3,
                kernel_size: 1,
                stride: 1,
                padding: 0,
            },
            LayerSpec::GlobalAvgPool,
        ],
        seed: 21,
    };
    let net = Network::init(spec).unwrap();
    let x = random_batch(1, 7, 8);
    let base = net.forward(&x, Mode::Infer).unwrap();
    for shift in 1..7 {
        let v = x.values();
        let rotated: Vec<f64> = (0..7).map(|i| v[(i + shift) % 7]).collect();
        let out = net.forward(&Tensor::new(vec![1, 7], rotated).unwrap(), Mode::Infer).unwrap();
        for (a, b) in out.values().iter().zip(base.values()) {
            assert!((a - b).abs() < 1e-12);
        }
    }
}

#[test]
fn saved_network_predicts_identically() {
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    let x: Vec<f64> = (0..40 * 6).map(|_| rng.gen_range(0.0..100.0)).collect();
    let y: Vec<f64> = (0..40).map(|i| x[i * 6] * 0.5 + 3.0).collect();
    let opts = symcast_neural::TrainOptions {
        epochs: 3,
        ..Default::default()
    };
    let spec = build_resnet1d(6, &[2, 3, 4], 0).unwrap();
    let model = symcast_neural::train_network(spec, &x, 6, &y, &opts).unwrap().model;
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("net.json");
    io::save(&model, &path).unwrap();
    assert!(dir.path().join("net.bin").exists());
    let loaded = io::load(&path).unwrap();
    assert_eq!(loaded, model);
    assert_eq!(loaded.predict(&x, 6).unwrap(), model.predict(&x, 6).unwrap());
}

#[test]
fn loss_curve_csv_layout() {
    assert_eq!(io::loss_curve_csv(&[0.5, 0.25]), "epoch,loss\n1,0.5\n2,0.25\n");
}
