use literoof_core::hardware::default_gpu_config;
use literoof_core::roofline::{evaluate_config, ClusterConfig};
use literoof_core::search::{sweep, BatchGrid, Constraints, SweepGrid};
use literoof_core::workload::{default_models, Phase};
use proptest::prelude::*;

fn small_grid() -> impl Strategy<Value = (Vec<u32>, Vec<u64>)> {
    (
        prop::sample::subsequence(vec![1u32, 2, 4, 8, 16, 32], 1..=4),
        prop::collection::vec(1u64..600, 1..=8),
    )
}

fn constraints() -> impl Strategy<Value = Constraints> {
    (0.0f64..2.0, 0.0f64..0.1, 1u64..3000, 1u64..3000).prop_map(
        |(max_ttft, max_tbt, prompt_len, decode_ctx)| Constraints {
            max_ttft,
            max_tbt,
            prompt_len,
            decode_ctx,
        },
    )
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(24))]

    #[test]
    fn sweep_equals_brute_force(
        mi in 0usize..3,
        (tps, batches) in small_grid(),
        c in constraints(),
    ) {
        let model = &default_models()[mi];
        let gpus = default_gpu_config().gpus;
        let grid = SweepGrid {
            tp: Some(tps.clone()),
            batch: BatchGrid::Explicit(batches.clone()),
            ..Default::default()
        };
        let result = sweep(model, &gpus, &c, &grid).unwrap();
        let mut batches = batches;
        batches.sort_unstable();
        batches.dedup();

        for (gs, gpu) in result.gpus.iter().zip(&gpus) {
            let mut expected = Vec::new();
            for &tp in &tps {
                if tp > gpu.max_gpus || !model.heads.is_multiple_of(u64::from(tp)) {
                    continue;
                }
                for &batch in &batches {
                    let cfg = ClusterConfig {
                        prompt_len: c.prompt_len,
                        decode_ctx: c.decode_ctx,
                        ..ClusterConfig::new(gpu.clone(), tp, batch)
                    };
                    expected.push((tp, batch, evaluate_config(model, &cfg).unwrap().metrics));
                }
            }
            let got: Vec<_> = gs.candidates.iter().map(|x| (x.tp, x.batch, x.metrics)).collect();
            prop_assert_eq!(&got, &expected);

            for phase in Phase::ALL {
                let ok = |m: &literoof_core::roofline::PhaseMetrics| {
                    m.fits_memory && m.ttft <= c.max_ttft && m.tbt <= c.max_tbt
                };
                let top = expected
                    .iter()
                    .filter(|e| ok(&e.2))
                    .map(|e| e.2.tput_per_sm(phase))
                    .fold(None, |acc: Option<f64>, v| Some(acc.map_or(v, |a| a.max(v))));
                match (gs.best(phase), top) {
                    (None, None) => {}
                    (Some(b), Some(t)) => {
                        prop_assert!(ok(&b.result.metrics));
                        prop_assert_eq!(b.result.metrics.tput_per_sm(phase), t);
                    }
                    (b, t) => prop_assert!(false, "best {:?} vs brute-force top {:?}", b.map(|b| b.config.tp), t),
                }
            }
        }
    }
}
