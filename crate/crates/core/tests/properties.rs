use proptest::prelude::*;

use clusterhead_core::diagnostics::{gradient_bound, sparsity_curve};
use clusterhead_core::gradients::{backprop_loss_gradient, closed_form_loss_gradient, relative_error, TrainMask};
use clusterhead_core::model::{forward, init_params, HyperParams, Layer};
use clusterhead_core::numerics::{operator_norm, tv_distance, Matrix, NormVariant};
use clusterhead_core::task::{prefix_class, sample_dataset, target, TaskSpec};

fn spec() -> TaskSpec {
    TaskSpec::new(12, 5, 3).unwrap()
}

fn tokens(p: usize) -> impl Strategy<Value = Vec<usize>> {
    prop::collection::vec(0..p, 12)
}

proptest! {
    #[test]
    fn target_ignores_suffix_and_prefix_order(x in tokens(3), suffix in tokens(3), rot in 0usize..5) {
        let spec = spec();
        let mut y = x.clone();
        y[5..].copy_from_slice(&suffix[5..]);
        y[..5].rotate_left(rot);
        prop_assert_eq!(target(&x, &spec).unwrap(), target(&y, &spec).unwrap());
        prop_assert_eq!(prefix_class(&x, &spec).unwrap(), prefix_class(&y, &spec).unwrap());
        prop_assert_eq!(target(&x, &spec).unwrap(), x[..5].iter().sum::<usize>() % 3);
    }

    #[test]
    fn forward_outputs_distributions(seed in 0u64..500, x in tokens(3)) {
        let hyper = HyperParams { task: spec(), ..HyperParams::default() };
        let params = init_params(&hyper, seed).unwrap();
        let t = forward(&params, &x, NormVariant::Standard);
        prop_assert!((t.attn.iter().sum::<f64>() - 1.0).abs() < 1e-12);
        prop_assert!((t.mu.iter().sum::<f64>() - 1.0).abs() < 1e-12);
        prop_assert!((t.xi_bar.iter().map(|v| v * v).sum::<f64>() - 1.0).abs() < 1e-12);
    }

    #[test]
    fn closed_form_matches_backprop(seed in 0u64..500, d in 2usize..6) {
        let hyper = HyperParams { embed_dim: d, ..HyperParams::default() };
        let params = init_params(&hyper, seed).unwrap();
        let batch = sample_dataset(16, &hyper.task, seed).unwrap();
        let closed = closed_form_loss_gradient(&params, &batch).unwrap();
        let bp = backprop_loss_gradient(&params, &batch, TrainMask::theory(), NormVariant::Standard).unwrap();
        for layer in Layer::ATTENTION_AND_MLP {
            prop_assert!(relative_error(closed.tensor(layer), bp.tensor(layer)) < 1e-10);
        }
    }

    #[test]
    fn gradient_bound_holds_at_random_init(seed in 0u64..200) {
        let hyper = HyperParams::default();
        let params = init_params(&hyper, seed).unwrap();
        let data = sample_dataset(64, &hyper.task, seed).unwrap();
        prop_assert!(gradient_bound(&params, &data).unwrap().holds());
    }

    #[test]
    fn operator_norm_between_column_and_frobenius(entries in prop::collection::vec(-3.0f64..3.0, 1..64), cols in 1usize..8) {
        let rows = entries.len().div_ceil(cols);
        let m = Matrix::from_fn(rows, cols, |r, c| entries.get(r * cols + c).copied().unwrap_or(0.0));
        let op = operator_norm(&m).unwrap();
        let max_col = (0..cols).map(|c| m.col(c).iter().map(|v| v * v).sum::<f64>().sqrt()).fold(0.0, f64::max);
        prop_assert!(op >= max_col * (1.0 - 1e-9));
        prop_assert!(op <= m.frobenius() * (1.0 + 1e-9));
    }

    #[test]
    fn tv_is_a_metric_on_distributions(a in prop::collection::vec(0.01f64..1.0, 4), b in prop::collection::vec(0.01f64..1.0, 4)) {
        let norm = |v: &[f64]| { let s: f64 = v.iter().sum(); v.iter().map(|x| x / s).collect::<Vec<_>>() };
        let (p, q) = (norm(&a), norm(&b));
        let d = tv_distance(&p, &q).unwrap();
        prop_assert!((0.0..=1.0).contains(&d));
        prop_assert!((d - tv_distance(&q, &p).unwrap()).abs() < 1e-15);
        prop_assert!(tv_distance(&p, &p).unwrap() < 1e-15);
    }

    #[test]
    fn sparsity_is_monotone(seed in 0u64..100) {
        let hyper = HyperParams::default();
        let params = init_params(&hyper, seed).unwrap();
        let data = sample_dataset(32, &hyper.task, seed).unwrap();
        let grid = [1e-6, 1e-3, 1e-2, 0.1, 1.0, 1e2];
        let curve = sparsity_curve(&params, &data, &grid, NormVariant::Standard).unwrap();
        prop_assert!(curve.windows(2).all(|w| w[0].1 <= w[1].1));
        prop_assert_eq!(curve.last().unwrap().1, 1.0);
    }
}
