use proptest::prelude::*;

use metaloss::autodiff::{backward, scalar};
use metaloss::harness::{split_rows, OptimizerConfig, OptimizerState};
use metaloss::losses::{cross_entropy, lsr, sparse_lsr, sparse_lsr_from_logp, NoCount};
use metaloss::lossnet::{transition, LossNetwork, WeightInit};
use metaloss::rng::rng_from;
use metaloss::symbolic::{
    crossover_one_point, enforce_arguments, evaluate, mutate_uniform, random_tree, ExprTree,
    GpConfig,
};
use metaloss::{LossArtifact, Tape, Tensor};

fn tree(seed: u64) -> ExprTree {
    let mut rng = rng_from(seed);
    let t = random_tree(&GpConfig::default(), seed as usize, &mut rng);
    enforce_arguments(&t, &mut rng)
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(128))]

    #[test]
    fn trees_print_and_parse_back(seed in any::<u64>()) {
        let t = tree(seed);
        let back: ExprTree = t.to_string().parse().unwrap();
        prop_assert_eq!(&back, &t);
        prop_assert_eq!(back.canonical_key(), t.canonical_key());
    }

    #[test]
    fn variation_respects_depth_and_arguments(a in any::<u64>(), b in any::<u64>()) {
        let cfg = GpConfig::default();
        let mut rng = rng_from(a ^ b.rotate_left(7));
        let (ta, tb) = (tree(a), tree(b));
        for child in [
            crossover_one_point(&ta, &tb, &cfg, &mut rng),
            mutate_uniform(&ta, &cfg, &mut rng),
        ] {
            prop_assert!(child.depth() <= cfg.max_depth);
            prop_assert!(child.has_required_arguments());
        }
    }

    #[test]
    fn wrapped_outputs_are_finite_and_nonnegative(
        seed in any::<u64>(),
        y in -50.0f64..50.0,
        f in -50.0f64..50.0,
    ) {
        let v = evaluate(&tree(seed), &[y], &[f], true)[0];
        prop_assert!(v.is_finite() && v >= 0.0);
    }

    #[test]
    fn network_artifacts_round_trip(seed in any::<u64>(), gaussian in any::<bool>()) {
        let init = if gaussian { WeightInit::Gaussian } else { WeightInit::Unit };
        let net = transition(&tree(seed), init, seed % 2 == 0, &mut rng_from(seed));
        let json = LossArtifact::Network(net.clone()).to_json();
        match LossArtifact::from_json(&json).unwrap() {
            LossArtifact::Network(back) => {
                prop_assert_eq!(&back, &net);
                prop_assert_eq!(LossArtifact::Network(back).to_json(), json);
            }
            other => prop_assert!(false, "wrong variant {:?}", other),
        }
    }

    #[test]
    fn network_edge_count_is_node_count_minus_one(seed in any::<u64>()) {
        let t = tree(seed);
        let net: LossNetwork = transition(&t, WeightInit::Unit, true, &mut rng_from(0));
        prop_assert_eq!(net.edges().len(), t.len() - 1);
        prop_assert_eq!(net.weights().len(), t.len() - 1);
        for (i, &(child, parent)) in net.edges().iter().enumerate() {
            prop_assert_eq!(child, i + 1);
            prop_assert!(parent < child);
        }
    }

    #[test]
    fn sparse_matches_dense_under_uniform_rest(
        c in 2usize..80,
        p in 0.01f64..0.99,
        xi in 0.0f64..0.5,
    ) {
        let other = (1.0 - p) / (c as f64 - 1.0);
        let logits: Vec<f64> = (0..c).map(|i| if i == 0 { p.ln() } else { other.ln() }).collect();
        let exact = sparse_lsr_from_logp(p.ln(), xi, c, 0.0, &mut NoCount);
        prop_assert!((exact - lsr(0, &logits, xi)).abs() < 1e-9);
        // the stable form stays within the eps shift of the dense value
        prop_assert!((sparse_lsr(0, &logits, xi) - lsr(0, &logits, xi)).abs() < 1e-5);
    }

    #[test]
    fn smoothing_zero_is_cross_entropy(logits in prop::collection::vec(-5.0f64..5.0, 2..20)) {
        let ce = cross_entropy(1, &logits);
        prop_assert!((lsr(1, &logits, 0.0) - ce).abs() < 1e-12);
        prop_assert!((sparse_lsr(1, &logits, 0.0) - ce).abs() < 1e-12);
    }

    #[test]
    fn log_sum_exp_is_shift_invariant(
        logits in prop::collection::vec(-30.0f64..30.0, 1..40),
        shift in -500.0f64..500.0,
    ) {
        let moved: Vec<f64> = logits.iter().map(|v| v + shift).collect();
        let a = scalar::log_sum_exp(&logits) + shift;
        let b = scalar::log_sum_exp(&moved);
        prop_assert!((a - b).abs() <= 1e-9 * a.abs().max(1.0));
    }

    #[test]
    fn splits_are_disjoint_and_exhaustive(n in 30usize..400, seed in any::<u64>()) {
        let (tr, va, te) = split_rows(n, &mut rng_from(seed));
        let mut all: Vec<usize> = tr.iter().chain(&va).chain(&te).copied().collect();
        all.sort_unstable();
        prop_assert_eq!(all, (0..n).collect::<Vec<_>>());
        prop_assert_eq!(tr.len(), (n as f64 * 0.6).round() as usize);
    }

    #[test]
    fn sgd_step_is_exact(theta in -10.0f64..10.0, g in -10.0f64..10.0, lr in 1e-4f64..1.0) {
        let mut p = vec![theta];
        OptimizerState::new(OptimizerConfig::sgd(lr)).step_flat(&mut p, &[g]).unwrap();
        prop_assert_eq!(p[0], theta - lr * g);
    }

    #[test]
    fn square_gradient_is_twice_input(xs in prop::collection::vec(-100.0f64..100.0, 1..16)) {
        let tape = Tape::new();
        let x = tape.var(Tensor::column(xs.clone()));
        let g = backward(x.square().sum(), &[x], false).unwrap()[0].value();
        for (gi, xi) in g.data().iter().zip(&xs) {
            prop_assert_eq!(*gi, 2.0 * xi);
        }
    }
}
