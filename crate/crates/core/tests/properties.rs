mod common;

use std::f32::consts::PI;
use proptest::prelude::*;

use kdst::graphio::{make_inductive_split, make_transductive_split};
use kdst::metrics::MeanStd;
use kdst::numkit::{Input, ParamStore, Rng, Tape, Tensor};
use kdst::sadsd::{attention_weights, consistency_reweight, distill_loss, prob_from_phi, ProbConfig};
use kdst::students::{FrKanLayer, FrKanPlusLayer, SplineGrid};

proptest! {
    #![proptest_config(ProptestConfig::with_cases(100))]

    #[test]
    fn frkan_plus_embeds_frkan(seed in any::<u64>(), n in 1usize..8, d in 1usize..7, o in 1usize..5, g in 1usize..6, sparse in any::<bool>()) {
        let diff = common::checks::embedding_diff(seed, n, d, o, g, sparse);
        prop_assert!(diff < 1e-5, "diff {diff}");
    }

    #[test]
    fn frkan_is_two_pi_periodic(seed in any::<u64>(), d in 1usize..5, g in 1usize..4, col in 0usize..5) {
        let col = col % d;
        let mut rng = Rng::new(seed);
        let mut store = ParamStore::new();
        let layer = FrKanLayer::new(&mut store, "p", d, 3, g, &mut rng);
        let x = rng.normal_vec(2 * d, 1.0);
        let mut shifted = x.clone();
        shifted[col] += 2.0 * PI;
        shifted[d + col] -= 2.0 * PI;
        let mut tape = Tape::new();
        let a = tape.constant(Tensor::new(&[2, d], x).unwrap());
        let b = tape.constant(Tensor::new(&[2, d], shifted).unwrap());
        let ya = layer.forward(&mut tape, &store, &Input::Dense(a)).unwrap();
        let yb = layer.forward(&mut tape, &store, &Input::Dense(b)).unwrap();
        prop_assert!(tape.value(ya).max_abs_diff(tape.value(yb)) < 1e-4);
    }

    #[test]
    fn spline_basis_is_a_partition_of_unity(x in -10.0f32..10.0, intervals in 1usize..12) {
        let grid = SplineGrid { lo: -2.0, hi: 2.0, intervals };
        let mut b = vec![0f32; grid.n_basis()];
        let mut d = vec![0f32; grid.n_basis()];
        grid.eval(x, &mut b, &mut d);
        prop_assert!(b.iter().all(|&v| v >= -1e-7));
        prop_assert!((b.iter().sum::<f32>() - 1.0).abs() < 1e-5);
        prop_assert!(d.iter().sum::<f32>().abs() < 1e-4);
    }

    #[test]
    fn probabilities_respect_the_clamp(phi in -50.0f32..50.0, log_beta in -5.0f32..5.0,
                                       agree_u in any::<bool>(), agree_v in any::<bool>()) {
        let cfg = ProbConfig::default();
        let p = prob_from_phi(phi, log_beta.exp(), &cfg);
        prop_assert!((cfg.prob_floor..=cfg.prob_ceil).contains(&p));
        let student = vec![0, 0];
        let teacher = vec![usize::from(!agree_u), usize::from(!agree_v)];
        let r = consistency_reweight(&[p], &teacher, &student, &[(0, 1)], &cfg).unwrap()[0];
        prop_assert!((cfg.prob_floor..=cfg.prob_ceil).contains(&r));
    }

    #[test]
    fn attention_rows_are_distributions(seed in any::<u64>(), n in 2usize..30, h in 1usize..6) {
        let g = common::random_graph(n, 3, 2, n, seed);
        let mut rng = Rng::new(seed ^ 1);
        let q = Tensor::new(&[n, h], rng.normal_vec(n * h, 2.0)).unwrap();
        let k = Tensor::new(&[n, h], rng.normal_vec(n * h, 2.0)).unwrap();
        let pattern = kdst::graphio::with_self_loops(&g);
        let a = attention_weights(&q, &k, &pattern).unwrap();
        for i in 0..n {
            let row = &a[pattern.row_range(i)];
            prop_assert!(row.iter().all(|&v| v >= 0.0));
            prop_assert!((row.iter().sum::<f32>() - 1.0).abs() < 1e-5);
        }
    }

    #[test]
    fn distillation_loss_is_nonnegative(seed in any::<u64>(), tau in 0.1f32..8.0) {
        let mut rng = Rng::new(seed);
        let t = Tensor::new(&[6, 4], rng.normal_vec(24, 3.0)).unwrap();
        let s = Tensor::new(&[6, 4], rng.normal_vec(24, 3.0)).unwrap();
        let pairs = [(0, 1), (1, 0), (2, 5), (5, 2)];
        prop_assert!(distill_loss(&t, &s, &pairs, tau, false).unwrap() >= 0.0);
        prop_assert!(distill_loss(&t, &t, &pairs, tau, true).unwrap() < 1e-4);
    }

    #[test]
    fn splits_partition_the_nodes(seed in any::<u64>(), train in 1usize..4, val in 1usize..4, frac in 0.05f64..0.95) {
        let g = common::random_graph(60, 2, 3, 40, seed);
        let s = make_transductive_split(&g, seed, train, val).unwrap();
        let mut seen = vec![0u8; g.n_nodes()];
        for &u in s.train.iter().chain(&s.val).chain(&s.test) {
            seen[u] += 1;
        }
        prop_assert!(seen.iter().all(|&c| c == 1));
        for c in 0..g.n_classes() {
            prop_assert_eq!(s.train.iter().filter(|&&u| g.labels()[u] == c).count(), train);
            prop_assert_eq!(s.val.iter().filter(|&&u| g.labels()[u] == c).count(), val);
        }
        prop_assert_eq!(&s, &make_transductive_split(&g, seed, train, val).unwrap());

        let (ind, view) = make_inductive_split(&g, &s, seed, frac).unwrap();
        let mut test: Vec<usize> = ind.obs.iter().chain(&ind.ind).copied().collect();
        test.sort_unstable();
        prop_assert_eq!(&test, &s.test);
        prop_assert_eq!(ind.ind.len(), (frac * s.test.len() as f64).floor() as usize);
        let hidden: std::collections::HashSet<_> = ind.ind.iter().copied().collect();
        prop_assert!(view.edges().iter().all(|(u, v)| !hidden.contains(u) && !hidden.contains(v)));
    }

    #[test]
    fn mean_std_recomputes(values in proptest::collection::vec(0.0f64..100.0, 1..10)) {
        let m = MeanStd::of(&values);
        let mean = values.iter().sum::<f64>() / values.len() as f64;
        let var = values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / values.len() as f64;
        prop_assert!((m.mean - mean).abs() < 1e-9);
        prop_assert!((m.std - var.sqrt()).abs() < 1e-9);
    }
}

#[test]
fn centered_layer_only_shifts_outputs() {
    let mut rng = Rng::new(3);
    let mut store = ParamStore::new();
    let layer = FrKanPlusLayer::new(&mut store, "c", 4, 2, 3, &mut rng);
    let phase = rng.normal_vec(12, 1.0);
    store.get_mut(layer.phase).data_mut().copy_from_slice(&phase);
    let centered = layer.clone().with_centering(true);
    let x = Tensor::new(&[5, 4], rng.normal_vec(20, 1.0)).unwrap();
    let mut tape = Tape::new();
    let xv = tape.constant(x);
    let a = layer.forward(&mut tape, &store, &Input::Dense(xv)).unwrap();
    let b = centered.forward(&mut tape, &store, &Input::Dense(xv)).unwrap();
    let (a, b) = (tape.value(a), tape.value(b));
    for o in 0..2 {
        let shift = a.at(0, o) - b.at(0, o);
        for n in 1..5 {
            assert!((a.at(n, o) - b.at(n, o) - shift).abs() < 1e-5);
        }
    }
}
