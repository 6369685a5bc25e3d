use proptest::prelude::*;

use hegcn::graph_io::{sample_neighbors, synthetic};
use hegcn::matrix::Matrix;
use hegcn::noo::run_noo;
use hegcn::pipeline::{chain, dry_run, infer, Activation, InferOptions, ModeChoice};

fn mode(i: u8) -> ModeChoice {
    [ModeChoice::Auto, ModeChoice::Inter, ModeChoice::SpIntra][i as usize % 3]
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(48))]

    #[test]
    fn dry_run_predicts_every_count(
        nodes in 4usize..80,
        n in 1usize..4,
        f0 in 1usize..6,
        f1 in 1usize..5,
        f2 in 1usize..4,
        slot_shift in 0u32..3,
        m1 in 0u8..3,
        t in prop::option::of(0u32..3),
        seed in 0u64..1000,
        flags in 0u8..8,
        last_identity in any::<bool>(),
    ) {
        let g = synthetic::random(nodes, 3.0, seed);
        let adj = sample_neighbors(&g, n, seed).unwrap();
        let mut layers = chain(&[f0, f1, f2]).unwrap();
        layers[1].mode = mode(m1);
        if last_identity {
            layers[1].activation = Activation::Identity;
        }
        let slots = (nodes.next_power_of_two() << slot_shift).max(8) << t.unwrap_or(0);
        let opts = InferOptions {
            slots,
            t: t.map(|k| 1 << k),
            aoo: flags & 1 != 0,
            cpoo_threshold: if flags & 2 != 0 { 0.3 } else { 0.0 },
            noo: flags & 4 != 0,
            th: 16,
            ..InferOptions::default()
        };
        let x = Matrix::random(nodes, f0, seed);
        let w = vec![Matrix::random(f0, f1, seed + 1), Matrix::random(f1, f2, seed + 2)];
        let run = infer(&adj, &x, &w, &layers, &opts).unwrap();
        prop_assert!(run.verify.passed(), "{:?}", run.verify);

        let depth: u32 = layers.iter().map(|l| l.depth()).sum();
        prop_assert_eq!(run.plan.depth, depth);
        prop_assert_eq!(run.final_level, opts.levels - depth);
        let recomputed = run.hoc.recompute_latency(&opts.cost);
        prop_assert!((recomputed - run.hoc.latency).abs() <= 1e-9 * recomputed.max(1.0));

        let dry = dry_run(&adj, &layers, &opts).unwrap();
        prop_assert_eq!(dry.hoc.total, run.hoc.total);
        prop_assert_eq!(&dry.hoc.by_level, &run.hoc.by_level);
        prop_assert_eq!(dry.final_level, run.final_level);
        for (a, b) in dry.layers.iter().zip(&run.layers) {
            prop_assert_eq!(a.counts, b.counts);
            prop_assert_eq!(a.mode, b.mode);
        }
    }

    #[test]
    fn node_order_is_a_placement(
        nodes in 1usize..200,
        extra in 0usize..3,
        n in 1usize..5,
        th in 1usize..64,
        seed in 0u64..1000,
    ) {
        let g = synthetic::power_law(nodes, 2, seed);
        let adj = sample_neighbors(&g, n, seed).unwrap();
        let ring = nodes.next_power_of_two() << extra;
        let order = run_noo(&adj, ring, th).unwrap();
        let mut seen = vec![false; ring];
        for &p in order.positions() {
            prop_assert!(p < ring);
            prop_assert!(!seen[p]);
            seen[p] = true;
        }
        prop_assert_eq!(order.positions().len(), nodes);
    }
}
