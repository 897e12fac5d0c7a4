use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use pta_core::checkpoint;
use pta_core::control::{self, ControlPolicy, PolicyFlags};
use pta_core::data::{assign_splits, Batch, Labels, Split, SplitRatio};
use pta_core::graph::dropout_mask;
use pta_core::harness::moving_average;
use pta_core::model::{Activation, LayerSpec, LossKind, ModelSpec, TaskHead, UnderlyingModel};
use pta_core::theory::mean_decoder;
use pta_core::training::{
    accumulate_gradients, decoder_predictions, pta_loss, select_best, DecoderReduction, JointModel, LossOptions,
    Score,
};
use pta_core::{Graph, Mode, Tensor};

fn gauss_vec(r: &mut ChaCha8Rng, len: usize) -> Vec<f64> {
    (0..len).map(|_| r.random_range(-2.0..2.0)).collect()
}

fn random_spec(r: &mut ChaCha8Rng) -> ModelSpec {
    let acts = [Activation::Relu, Activation::Tanh, Activation::Identity];
    let depth = r.random_range(0..=2);
    ModelSpec {
        input_dim: r.random_range(1..=6),
        hidden_layers: (0..depth)
            .map(|_| LayerSpec {
                units: r.random_range(1..=7),
                activation: acts[r.random_range(0..3)],
            })
            .collect(),
        embedding_dim: r.random_range(1..=6),
        embedding_activation: acts[r.random_range(0..3)],
        internal_dropout: 0.0,
    }
}

/// Single-task joint model with `d` decoders, random params, and a batch.
fn random_joint(seed: u64, d: usize, rate: f64) -> (JointModel, Batch) {
    let mut r = ChaCha8Rng::seed_from_u64(seed);
    let spec = random_spec(&mut r);
    let mut model = UnderlyingModel::new(spec.clone(), seed).unwrap();
    for layer in &mut model.layers {
        let len = layer.bias.len();
        layer.bias.values_mut().copy_from_slice(&gauss_vec(&mut r, len));
    }
    let c = r.random_range(2..=4);
    let mut head = TaskHead::new(0, d, spec.embedding_dim, c, LossKind::CrossEntropy).unwrap();
    for dec in &mut head.decoders {
        let (wl, bl) = (dec.weights.len(), dec.bias.len());
        dec.weights.values_mut().copy_from_slice(&gauss_vec(&mut r, wl));
        dec.bias.values_mut().copy_from_slice(&gauss_vec(&mut r, bl));
        dec.dropout_rate = rate;
    }
    let n = r.random_range(1..=6);
    let features = Tensor::from_vec(vec![n, spec.input_dim], gauss_vec(&mut r, n * spec.input_dim)).unwrap();
    let labels = Labels::Classes {
        labels: (0..n).map(|_| r.random_range(0..c)).collect(),
        num_classes: c,
    };
    (JointModel::single(model, vec![head]), Batch { features, labels })
}

fn close(a: &[f64], b: &[f64], tol: f64) -> bool {
    a.len() == b.len() && a.iter().zip(b).all(|(x, y)| (x - y).abs() <= tol * (1.0 + x.abs().max(y.abs())))
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn matmul_matches_naive_product(n in 1usize..6, k in 1usize..6, m in 1usize..6, seed in any::<u64>()) {
        let mut r = ChaCha8Rng::seed_from_u64(seed);
        let a = gauss_vec(&mut r, n * k);
        let b = gauss_vec(&mut r, k * m);
        let mut g = Graph::new();
        let an = g.leaf(&Tensor::from_vec(vec![n, k], a.clone()).unwrap());
        let bn = g.leaf(&Tensor::from_vec(vec![k, m], b.clone()).unwrap());
        let c = g.matmul(an, bn).unwrap();
        let mut naive = vec![0.0; n * m];
        for i in 0..n {
            for j in 0..m {
                for p in 0..k {
                    naive[i * m + j] += a[i * k + p] * b[p * m + j];
                }
            }
        }
        prop_assert_eq!(g.value(c).shape(), &[n, m][..]);
        prop_assert!(close(g.value(c).values(), &naive, 1e-12));
    }

    #[test]
    fn embedding_matches_loop_forward(seed in any::<u64>()) {
        let (joint, batch) = random_joint(seed, 1, 0.0);
        let model = &joint.models[0];
        let got = model.embed_eval(&batch.features).unwrap();
        let (n, _) = batch.features.dims2().unwrap();
        let mut rows: Vec<Vec<f64>> = (0..n).map(|i| batch.features.row_slice(i).to_vec()).collect();
        for layer in &model.layers {
            let (inp, out) = layer.weights.dims2().unwrap();
            rows = rows
                .iter()
                .map(|x| {
                    (0..out)
                        .map(|j| {
                            let z = layer.bias.values()[j]
                                + (0..inp).map(|p| x[p] * layer.weights.values()[p * out + j]).sum::<f64>();
                            match layer.activation {
                                Activation::Relu => z.max(0.0),
                                Activation::Tanh => z.tanh(),
                                Activation::Identity => z,
                            }
                        })
                        .collect()
                })
                .collect();
        }
        let flat: Vec<f64> = rows.concat();
        prop_assert!(close(got.values(), &flat, 1e-12));
    }

    #[test]
    fn dropout_masks_are_inverted_and_seeded(len in 1usize..200, rate in 0.0f64..0.95, seed in any::<u64>()) {
        let mask = dropout_mask(len, rate, seed);
        let keep = 1.0 / (1.0 - rate);
        prop_assert!(mask.iter().all(|&v| v == 0.0 || v == keep));
        prop_assert_eq!(&mask, &dropout_mask(len, rate, seed));
        let x = Tensor::from_vec(vec![1, len], vec![1.5; len]).unwrap();
        let mut g = Graph::new();
        let xn = g.leaf(&x);
        let eval = g.dropout(xn, rate, seed, Mode::Eval).unwrap();
        prop_assert_eq!(g.value(eval).values(), x.values());
    }

    #[test]
    fn identical_decoders_collapse_to_one(seed in any::<u64>(), d in 2usize..6) {
        let (mut joint, batch) = random_joint(seed, 1, 0.5);
        let single = joint.clone();
        let dec = joint.heads[0].decoders[0].clone();
        joint.heads[0].decoders = vec![dec; d];
        let opts = LossOptions { mask_seed: seed, ..Default::default() };

        let one = pta_loss(&single, std::slice::from_ref(&batch), &opts).unwrap().value();
        let mut lg = pta_loss(&joint, std::slice::from_ref(&batch), &opts).unwrap();
        prop_assert!((lg.value() - one).abs() <= 1e-12 * (1.0 + one.abs()));

        accumulate_gradients(&mut joint, &mut lg).unwrap();
        let g0 = joint.heads[0].decoders[0].weights.grad().to_vec();
        for dec in &joint.heads[0].decoders[1..] {
            prop_assert_eq!(dec.weights.grad(), &g0[..]);
        }

        let mut summed = joint.clone();
        summed.zero_grad();
        let sum_opts = LossOptions { reduction: DecoderReduction::Sum, ..opts };
        let mut lg = pta_loss(&summed, std::slice::from_ref(&batch), &sum_opts).unwrap();
        prop_assert!((lg.value() - d as f64 * one).abs() <= 1e-10 * (1.0 + one.abs()));
        accumulate_gradients(&mut summed, &mut lg).unwrap();
        for (a, b) in summed.models[0].params().zip(joint.models[0].params()) {
            let scaled: Vec<f64> = b.grad().iter().map(|v| v * d as f64).collect();
            prop_assert!(close(a.grad(), &scaled, 1e-10));
        }
    }

    #[test]
    fn ensemble_prediction_is_the_mean_decoder(seed in any::<u64>(), d in 1usize..6) {
        let (joint, batch) = random_joint(seed, d, 0.3);
        let preds = decoder_predictions(&joint, 0, &batch).unwrap();
        let mut avg = vec![0.0; preds[0].len()];
        for p in &preds {
            for (a, v) in avg.iter_mut().zip(p.values()) {
                *a += v / d as f64;
            }
        }
        let mut collapsed = joint.clone();
        collapsed.heads[0].decoders = vec![mean_decoder(&joint.heads[0].decoders)];
        let mean_pred = &decoder_predictions(&collapsed, 0, &batch).unwrap()[0];
        prop_assert!(close(mean_pred.values(), &avg, 1e-12));
    }

    #[test]
    fn best_selection_is_lowest_index_argmin(costs in prop::collection::vec(prop::collection::vec(0u8..6, 1..6), 1..4)) {
        let scores: Vec<Vec<Score>> = costs
            .iter()
            .map(|t| t.iter().map(|&c| Score { cost: c as f64, error: c as f64 / 10.0 }).collect())
            .collect();
        let best = select_best(&scores);
        for (t, row) in costs.iter().enumerate() {
            let min = *row.iter().min().unwrap();
            prop_assert_eq!(best.tasks[t].decoder, row.iter().position(|&c| c == min).unwrap());
        }
        let mean = costs.iter().map(|r| *r.iter().min().unwrap() as f64).sum::<f64>() / costs.len() as f64;
        prop_assert!((best.aggregate_cost - mean).abs() < 1e-12);
    }

    #[test]
    fn splits_are_a_seeded_partition(n in 1usize..300, a in 0.1f64..0.8, seed in any::<u64>()) {
        let ratio = SplitRatio(a, (1.0 - a) / 2.0, (1.0 - a) / 2.0);
        let splits = assign_splits(n, ratio, seed);
        let (train, val, test) = ratio.counts(n);
        prop_assert_eq!(train + val + test, n);
        let count = |s| splits.iter().filter(|&&x| x == s).count();
        prop_assert_eq!((count(Split::Train), count(Split::Val), count(Split::Test)), (train, val, test));
        prop_assert_eq!(splits, assign_splits(n, ratio, seed));
    }

    #[test]
    fn moving_average_is_a_trailing_mean(series in prop::collection::vec(0.0f64..1.0, 1..40), w in 1usize..12) {
        let ma = moving_average(&series, w);
        prop_assert_eq!(ma.len(), series.len());
        for (i, &v) in ma.iter().enumerate() {
            let lo = (i + 1).saturating_sub(w);
            let expect = series[lo..=i].iter().sum::<f64>() / (i + 1 - lo) as f64;
            prop_assert!((v - expect).abs() < 1e-12);
        }
        prop_assert_eq!(moving_average(&series, 1), series);
    }

    #[test]
    fn policy_names_roundtrip(bits in 0u8..32) {
        let flags = PolicyFlags {
            freeze: bits & 1 != 0,
            independent_dropout: bits & 2 != 0,
            perturb: bits & 4 != 0,
            hyperperturb: bits & 8 != 0,
            greedy: bits & 16 != 0,
        };
        let parsed: PolicyFlags = flags.name().parse().unwrap();
        prop_assert_eq!(parsed, flags);
        prop_assert_eq!(flags.name().to_lowercase().parse::<PolicyFlags>().unwrap(), flags);
    }

    #[test]
    fn decoder_update_invariants(bits in 0u8..32, seed in any::<u64>(), d in 1usize..6, rounds in 1usize..30) {
        let flags = PolicyFlags {
            freeze: bits & 1 != 0,
            independent_dropout: bits & 2 != 0,
            perturb: bits & 4 != 0,
            hyperperturb: bits & 8 != 0,
            greedy: bits & 16 != 0,
        };
        let policy = ControlPolicy::new(flags);
        let mut heads = vec![TaskHead::new(0, d, 4, 3, LossKind::CrossEntropy).unwrap()];
        control::dec_initialize(&policy, &mut heads, seed);
        let initial = heads[0].clone();
        let mut r = ChaCha8Rng::seed_from_u64(seed);
        for round in 0..rounds {
            let costs: Vec<f64> = (0..d).map(|_| r.random_range(0..4) as f64).collect();
            let before = heads[0].clone();
            let mut stream = control::control_stream(seed, 0, round);
            let report = control::dec_update(&policy, &mut heads[0], &costs, &mut stream).unwrap();
            prop_assert_eq!(report.best, costs.iter().position(|&c| c == costs[report.best]).unwrap());
            prop_assert!(heads[0].decoders[report.best].same_params(&before.decoders[report.best]));
            for (k, dec) in heads[0].decoders.iter().enumerate() {
                prop_assert!((0.2..=0.8).contains(&dec.dropout_rate) || dec.dropout_rate == 0.5);
                if costs[k] == costs[report.best] && !report.copied.contains(&k) {
                    prop_assert!(dec.same_params(&before.decoders[k]));
                }
                if dec.frozen && !flags.perturb && !flags.hyperperturb {
                    prop_assert!(dec.same_params(&initial.decoders[k]));
                }
            }
        }
    }

    #[test]
    fn checkpoints_roundtrip(seed in any::<u64>(), d in 1usize..4) {
        let (joint, _) = random_joint(seed, d, 0.25);
        let mut buf = Vec::new();
        checkpoint::write_checkpoint(&joint, &mut buf).unwrap();
        let back = checkpoint::read_checkpoint(&mut buf.as_slice()).unwrap();
        prop_assert_eq!(back.models, joint.models);
        prop_assert_eq!(back.heads, joint.heads);
    }
}
