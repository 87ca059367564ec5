use proptest::prelude::*;
use symcast_neural::{build_cnn7, build_mlp, io, train_network, Mode, Network, Tensor, TrainOptions};

fn rows_strategy(cols: usize) -> impl Strategy<Value = Vec<f64>> {
    (1usize..6).prop_flat_map(move |r| prop::collection::vec(-3.0f64..3.0, r * cols))
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(24))]

    // Inference uses running statistics, so each row's output is independent
    // of what else is in the batch.
    #[test]
    fn inference_is_row_independent(values in rows_strategy(8), seed in 0u64..50) {
        let net = Network::init(build_cnn7(8, &[2, 2, 3, 3, 2, 2, 2], seed).unwrap()).unwrap();
        let rows = values.len() / 8;
        let batch = net.forward(&Tensor::new(vec![rows, 8], values.clone()).unwrap(), Mode::Infer).unwrap();
        for r in 0..rows {
            let single = net
                .forward(&Tensor::new(vec![1, 8], values[r * 8..(r + 1) * 8].to_vec()).unwrap(), Mode::Infer)
                .unwrap();
            prop_assert!((single.values()[0] - batch.values()[r]).abs() < 1e-12);
        }
    }

    #[test]
    fn encode_decode_preserves_predictions(
        hidden in prop::collection::vec(1usize..6, 0..3),
        values in rows_strategy(4),
        seed in 0u64..50,
    ) {
        let targets: Vec<f64> = values.chunks(4).map(|r| r.iter().sum::<f64>() * 10.0 + 3.0).collect();
        let opts = TrainOptions { epochs: 2, seed, ..TrainOptions::default() };
        let model = train_network(build_mlp(4, &hidden, seed), &values, 4, &targets, &opts).unwrap().model;
        let (header, blob) = io::encode(&model, "net.bin");
        let back = io::decode(header, &blob).unwrap();
        prop_assert_eq!(model.predict(&values, 4).unwrap(), back.predict(&values, 4).unwrap());
    }
}
