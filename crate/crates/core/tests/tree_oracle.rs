use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use symcast_core::tabmodels::{fit_gbdt, fit_tree, RegressionTree, TreeHyperparams, TreeNode};
use symcast_core::Matrix;

fn sse(values: &[f64]) -> f64 {
    if values.is_empty() {
        return 0.0;
    }
    let m = values.iter().sum::<f64>() / values.len() as f64;
    values.iter().map(|v| (v - m) * (v - m)).sum()
}

/// Exhaustive root split: every (feature, midpoint) candidate, impurity
/// evaluated directly. Returns the first candidate in (feature, threshold)
/// order whose reduction is within 1e-9 of the best.
fn brute_force_root(x: &[Vec<f64>], y: &[f64], min_leaf: usize) -> Option<(usize, f64)> {
    let parent = sse(y);
    let mut cands = Vec::new();
    for f in 0..x[0].len() {
        let mut vals: Vec<f64> = x.iter().map(|r| r[f]).collect();
        vals.sort_by(f64::total_cmp);
        vals.dedup();
        for w in vals.windows(2) {
            let mid = 0.5 * (w[0] + w[1]);
            let t = if mid > w[0] { mid } else { w[1] };
            let (l, r): (Vec<f64>, Vec<f64>) = x.iter().zip(y).map(|(row, v)| (row[f] < t, *v)).fold(
                (Vec::new(), Vec::new()),
                |(mut l, mut r), (left, v)| {
                    if left { l.push(v) } else { r.push(v) }
                    (l, r)
                },
            );
            if l.len() < min_leaf || r.len() < min_leaf {
                continue;
            }
            cands.push((f, t, parent - sse(&l) - sse(&r)));
        }
    }
    let best = cands.iter().map(|c| c.2).fold(f64::NEG_INFINITY, f64::max);
    if !(best > 1e-12 * y.iter().map(|v| v * v).sum::<f64>()) {
        return None;
    }
    cands
        .into_iter()
        .find(|c| c.2 >= best - 1e-9 * parent.max(1.0))
        .map(|c| (c.0, c.1))
}

fn random_instance(rng: &mut ChaCha8Rng, n: usize, f: usize, discrete: bool) -> (Vec<Vec<f64>>, Vec<f64>) {
    let x: Vec<Vec<f64>> = (0..n)
        .map(|_| {
            (0..f)
                .map(|_| if discrete { rng.gen_range(0..5) as f64 } else { rng.gen_range(-10.0..10.0) })
                .collect()
        })
        .collect();
    let y = x
        .iter()
        .map(|r| r[0] * 1.5 - r[f - 1] + rng.gen_range(-3.0..3.0))
        .collect();
    (x, y)
}

fn root_hp(min_leaf: usize) -> TreeHyperparams {
    TreeHyperparams {
        max_depth: 1,
        min_samples_leaf: min_leaf,
        ..TreeHyperparams::default()
    }
}

#[test]
fn eight_row_two_feature_root_matches_enumeration() {
    let x = vec![
        vec![1.0, 7.0],
        vec![2.0, 3.0],
        vec![3.0, 8.0],
        vec![4.0, 1.0],
        vec![5.0, 6.0],
        vec![6.0, 2.0],
        vec![7.0, 5.0],
        vec![8.0, 4.0],
    ];
    let y = [10.0, 2.0, 11.0, 1.0, 9.0, 2.5, 8.0, 3.0];
    let tree = fit_tree(&Matrix::from_rows(&x).unwrap(), &y, &root_hp(1)).unwrap();
    let expected = brute_force_root(&x, &y, 1).unwrap();
    assert_eq!(tree.root_split(), Some(expected));
    assert_eq!(expected.0, 1);
}

#[test]
fn random_roots_match_enumeration() {
    let mut rng = ChaCha8Rng::seed_from_u64(11);
    for i in 0..300 {
        let n = rng.gen_range(2..=32);
        let f = rng.gen_range(1..=4);
        let min_leaf = rng.gen_range(1..=3);
        let (x, y) = random_instance(&mut rng, n, f, i % 3 == 0);
        let tree = fit_tree(&Matrix::from_rows(&x).unwrap(), &y, &root_hp(min_leaf)).unwrap();
        assert_eq!(tree.root_split(), brute_force_root(&x, &y, min_leaf), "instance {i}");
    }
}

fn routed_leaf_means(tree: &RegressionTree, x: &Matrix, y: &[f64]) {
    let mut sums = vec![(0.0, 0usize); tree.nodes.len()];
    for i in 0..x.rows() {
        let leaf = tree.leaf_index(x.row(i));
        sums[leaf].0 += y[i];
        sums[leaf].1 += 1;
    }
    for (idx, node) in tree.nodes.iter().enumerate() {
        if let TreeNode::Leaf { value, n_samples } = node {
            assert_eq!(sums[idx].1, *n_samples);
            let mean = sums[idx].0 / sums[idx].1 as f64;
            assert!((mean - value).abs() <= 1e-9 * mean.abs().max(1.0), "{mean} vs {value}");
        }
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn leaves_hold_routed_means_and_depth_is_bounded(
        seed in any::<u64>(), n in 1usize..60, f in 1usize..5, depth in 1usize..7, leaf in 1usize..4
    ) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let (rows, y) = random_instance(&mut rng, n, f, seed % 2 == 0);
        let x = Matrix::from_rows(&rows).unwrap();
        let hp = TreeHyperparams { max_depth: depth, min_samples_leaf: leaf, ..TreeHyperparams::default() };
        let tree = fit_tree(&x, &y, &hp).unwrap();
        prop_assert!(tree.depth() <= depth);
        routed_leaf_means(&tree, &x, &y);
        let again = fit_tree(&x, &y, &hp).unwrap();
        prop_assert_eq!(again, tree);
    }

    #[test]
    fn ensemble_is_base_plus_shrunk_tree_sum(seed in any::<u64>(), n in 2usize..40) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let (rows, y) = random_instance(&mut rng, n, 3, false);
        let x = Matrix::from_rows(&rows).unwrap();
        let hp = TreeHyperparams { n_rounds: 15, shrinkage: 0.3, ..TreeHyperparams::default() };
        let m = fit_gbdt(&x, &y, &hp).unwrap();
        let pred = m.predict(&x).unwrap();
        for (i, p) in pred.iter().enumerate() {
            let manual = m.base_prediction + m.trees.iter().map(|t| 0.3 * t.predict_row(x.row(i))).sum::<f64>();
            prop_assert!((p - manual).abs() <= 1e-9 * manual.abs().max(1.0));
        }
    }
}

#[test]
fn one_round_unbounded_tree_contract() {
    let mut rng = ChaCha8Rng::seed_from_u64(4);
    let (rows, y) = random_instance(&mut rng, 25, 2, false);
    let x = Matrix::from_rows(&rows).unwrap();
    let hp = TreeHyperparams {
        n_rounds: 1,
        shrinkage: 1.0,
        max_depth: usize::MAX,
        min_samples_leaf: 1,
        ..TreeHyperparams::default()
    };
    let m = fit_gbdt(&x, &y, &hp).unwrap();
    let mean = y.iter().sum::<f64>() / y.len() as f64;
    let residuals: Vec<f64> = y.iter().map(|v| v - mean).collect();
    let single = fit_tree(&x, &residuals, &hp).unwrap();
    let pred = m.predict(&x).unwrap();
    for i in 0..x.rows() {
        assert!((pred[i] - (mean + single.predict_row(x.row(i)))).abs() < 1e-9);
    }
    let var = residuals.iter().map(|r| r * r).sum::<f64>() / y.len() as f64;
    assert!(m.train_mse[0] <= var);
}

#[test]
fn constant_target_boosts_to_zero_trees() {
    let x = Matrix::from_rows(&[vec![1.0], vec![2.0], vec![3.0]]).unwrap();
    let m = fit_gbdt(&x, &[4.0; 3], &TreeHyperparams::default()).unwrap();
    assert_eq!(m.base_prediction, 4.0);
    assert!(m.trees.iter().all(|t| t.predict_row(&[2.0]).abs() < 1e-12));
}
