use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use tspm_core::data::{
    chrono_split, draw_mask, make_windows, synth_generate, SeriesFrame, SynthSpec,
};
use tspm_core::metrics::{cka, point_metrics, smape};
use tspm_core::mixer::{
    fold_to_image, multi_resolution_mix, resolution_weights, unfold_image, AttentionAxis,
    AxisAttention,
};
use tspm_core::nn::{adam_step, AdamConfig, AdamState, MultiHeadAttention, ParamStore};
use tspm_core::spectral::top_k_periods;
use tspm_core::tasks::{flag_scores, task_loss, AnomalyCriterion};
use tspm_core::tensor::{conv2d, conv_transpose2d, softmax};
use tspm_core::{ModelConfig, MultiScaleMixer, TaskKind, Tensor};

fn values(seed: u64, n: usize) -> Vec<f64> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    (0..n).map(|_| rng.gen_range(-2.0..2.0)).collect()
}

fn tensor(seed: u64, shape: &[usize]) -> Tensor {
    Tensor::constant(shape, values(seed, shape.iter().product())).unwrap()
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

/// Gathers `[.., n, ..]` entries along `axis` of a row-major buffer in `order`.
fn permute_axis(data: &[f64], shape: &[usize], axis: usize, order: &[usize]) -> Vec<f64> {
    let inner: usize = shape[axis + 1..].iter().product();
    let outer: usize = shape[..axis].iter().product();
    let n = shape[axis];
    let mut out = Vec::with_capacity(data.len());
    for o in 0..outer {
        for &i in order {
            let start = (o * n + i) * inner;
            out.extend_from_slice(&data[start..start + inner]);
        }
    }
    out
}

fn shuffled(n: usize, seed: u64) -> Vec<usize> {
    use rand::seq::SliceRandom;
    let mut v: Vec<usize> = (0..n).collect();
    v.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));
    v
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn reshape_and_transpose_round_trip(a in 1usize..5, b in 1usize..5, c in 1usize..5, seed in any::<u64>()) {
        let x = tensor(seed, &[a, b, c]);
        let back = x.reshape(&[a * b, c]).unwrap().reshape(&[a, b, c]).unwrap();
        prop_assert_eq!(back.to_vec(), x.to_vec());
        let twice = x.transpose(0, 2).unwrap().transpose(0, 2).unwrap();
        prop_assert_eq!(twice.to_vec(), x.to_vec());
    }

    #[test]
    fn conv_transpose_is_adjoint(oh in 2usize..5, ow in 2usize..5, sh in 1usize..3, sw in 1usize..3, seed in any::<u64>()) {
        // extents where the strided conv reads every input cell
        let (h, w) = (sh * (oh - 1) + 1, sw * (ow - 1) + 1);
        let x = tensor(seed, &[2, h, w, 3]);
        let k = tensor(seed ^ 1, &[3, 3, 3, 2]);
        let y = conv2d(&x, &k, (sh, sw), (1, 1)).unwrap();
        let g = tensor(seed ^ 2, y.shape());
        let back = conv_transpose2d(&g, &k, (sh, sw), (1, 1)).unwrap();
        prop_assert_eq!(back.shape(), x.shape());
        let lhs = dot(&y.to_vec(), &g.to_vec());
        let rhs = dot(&x.to_vec(), &back.to_vec());
        prop_assert!((lhs - rhs).abs() < 1e-9 * (1.0 + lhs.abs()));
    }

    #[test]
    fn softmax_rows_and_shift(rows in 1usize..5, cols in 1usize..9, shift in -50.0f64..50.0, seed in any::<u64>()) {
        let x = tensor(seed, &[rows, cols]);
        let s = softmax(&x, 1).unwrap().to_vec();
        for r in s.chunks(cols) {
            prop_assert!((r.iter().sum::<f64>() - 1.0).abs() < 1e-12);
        }
        let shifted = softmax(&x.add_scalar(shift), 1).unwrap().to_vec();
        for (a, b) in s.iter().zip(&shifted) {
            prop_assert!((a - b).abs() < 1e-12);
        }
    }

    #[test]
    fn attention_is_token_equivariant(tokens in 2usize..7, heads in 1usize..3, seed in any::<u64>()) {
        let mut store = ParamStore::new(seed);
        let mha = MultiHeadAttention::new(&mut store, "mha", 3, 4, 3, heads).unwrap();
        let x = tensor(seed, &[2, tokens, 3]);
        let order = shuffled(tokens, seed);
        let xp = Tensor::constant(x.shape(), permute_axis(&x.to_vec(), x.shape(), 1, &order)).unwrap();
        let y = mha.forward(&x, &x, &x).unwrap().output;
        let yp = mha.forward(&xp, &xp, &xp).unwrap().output;
        // key order changes the softmax summation order, so allow last-bit drift
        for (a, b) in permute_axis(&y.to_vec(), y.shape(), 1, &order).iter().zip(&yp.to_vec()) {
            prop_assert!((a - b).abs() <= 1e-12);
        }
    }

    #[test]
    fn top_k_ignores_channel_order(len in 8usize..64, ch in 1usize..5, k in 1usize..4, seed in any::<u64>()) {
        let x = tensor(seed, &[len, ch]);
        let order = shuffled(ch, seed);
        let xp = Tensor::constant(x.shape(), permute_axis(&x.to_vec(), x.shape(), 1, &order)).unwrap();
        let a = top_k_periods(&x, k).unwrap();
        let b = top_k_periods(&xp, k).unwrap();
        prop_assert_eq!(a.periods(), b.periods());
    }

    #[test]
    fn resolution_mix_is_convex(k in 1usize..5, len in 1usize..8, seed in any::<u64>()) {
        let amps: Vec<f64> = values(seed, k).iter().map(|v| v * 10.0).collect();
        let w = resolution_weights(&amps).unwrap();
        prop_assert!((w.iter().sum::<f64>() - 1.0).abs() < 1e-12);
        let reps: Vec<Tensor> = (0..k).map(|i| tensor(seed.wrapping_add(i as u64), &[len, 2])).collect();
        let mixed = multi_resolution_mix(&reps, &amps).unwrap().to_vec();
        let per: Vec<Vec<f64>> = reps.iter().map(Tensor::to_vec).collect();
        for (j, m) in mixed.iter().enumerate() {
            let lo = per.iter().map(|r| r[j]).fold(f64::INFINITY, f64::min);
            let hi = per.iter().map(|r| r[j]).fold(f64::NEG_INFINITY, f64::max);
            prop_assert!(*m >= lo - 1e-12 && *m <= hi + 1e-12);
        }
    }

    #[test]
    fn imputation_loss_ignores_visible_targets(t in 2usize..10, seed in any::<u64>()) {
        let pred = tensor(seed, &[2, t, 3]);
        let target = tensor(seed ^ 1, &[2, t, 3]);
        let mut mask = draw_mask(2 * t, 0.5, seed).unwrap();
        mask[0] = true;
        let mut altered = target.to_vec();
        for (i, v) in altered.iter_mut().enumerate() {
            if !mask[i / 3] {
                *v += 100.0;
            }
        }
        let altered = Tensor::constant(&[2, t, 3], altered).unwrap();
        let a = task_loss(&TaskKind::Imputation, &pred, &target, Some(&mask)).unwrap().item();
        let b = task_loss(&TaskKind::Imputation, &pred, &altered, Some(&mask)).unwrap().item();
        prop_assert_eq!(a, b);
    }

    #[test]
    fn anomaly_flags_monotone(scores in prop::collection::vec(0.0f64..10.0, 1..50), lo in 0.0f64..10.0, delta in 0.0f64..5.0) {
        let low = flag_scores(&scores, &AnomalyCriterion { threshold: lo, q: 0.99 });
        let high = flag_scores(&scores, &AnomalyCriterion { threshold: lo + delta, q: 0.99 });
        for (l, h) in low.iter().zip(&high) {
            prop_assert!(*l || !*h);
        }
    }

    #[test]
    fn metrics_permutation_invariant(n in 2usize..30, seed in any::<u64>()) {
        let pred = values(seed, n);
        let actual: Vec<f64> = values(seed ^ 7, n).iter().map(|v| v + 3.0).collect();
        let order = shuffled(n, seed);
        let pp: Vec<f64> = order.iter().map(|&i| pred[i]).collect();
        let ap: Vec<f64> = order.iter().map(|&i| actual[i]).collect();
        let (a, b) = (point_metrics(&pred, &actual).unwrap(), point_metrics(&pp, &ap).unwrap());
        prop_assert!((a.mse - b.mse).abs() < 1e-12 && (a.mae - b.mae).abs() < 1e-12);
        let s = smape(&pred, &actual).unwrap().0;
        prop_assert!((s - smape(&pp, &ap).unwrap().0).abs() < 1e-9);
        prop_assert!((0.0..=200.0).contains(&s));
    }

    #[test]
    fn cka_symmetric_and_bounded(n in 3usize..20, dx in 1usize..6, dy in 1usize..6, seed in any::<u64>()) {
        let x = values(seed, n * dx);
        let y = values(seed ^ 3, n * dy);
        let a = cka(&x, dx, &y, dy).unwrap();
        let b = cka(&y, dy, &x, dx).unwrap();
        prop_assert!((a - b).abs() <= 1e-12);
        prop_assert!((-1e-10..=1.0 + 1e-10).contains(&a));
    }

    #[test]
    fn windows_stay_inside_their_split(rows in 100usize..300, t in 4usize..12, h in 1usize..6, stride in 1usize..4) {
        let frame = SeriesFrame::new(vec!["x".into()], (0..rows).map(|i| i as f64).collect()).unwrap();
        let parts = chrono_split(&frame, (0.6, 0.2, 0.2), t + h).unwrap();
        let mut offset = 0.0;
        for part in &parts {
            let ds = make_windows(part, t, h, stride).unwrap();
            let first = part.values()[0];
            prop_assert_eq!(first, offset);
            for w in &ds.windows {
                prop_assert!(w.start + t + h <= part.rows());
                // values encode absolute row indices, so a leak would show up here
                prop_assert_eq!(w.input[0], first + w.start as f64);
            }
            offset += part.rows() as f64;
        }
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(20))]

    #[test]
    fn fold_unfold_round_trip(len in 1usize..=64, p_frac in 0.0f64..1.0, seed in any::<u64>()) {
        let p = 1 + ((len - 1) as f64 * p_frac) as usize;
        let x = tensor(seed, &[len, 2]);
        let img = fold_to_image(&x, p, 0, 0).unwrap();
        prop_assert_eq!(unfold_image(&img.data, len).unwrap().to_vec(), x.to_vec());
    }

    #[test]
    fn axis_attention_commutes_with_the_other_axis(p in 2usize..6, f in 2usize..6, seed in any::<u64>()) {
        let mut store = ParamStore::new(seed);
        // a 1x1 Q/K/V kernel keeps rows (and columns) independent of their neighbours
        let col = AxisAttention::new(&mut store, "col", 4, 2, 1, AttentionAxis::Column).unwrap();
        let row = AxisAttention::new(&mut store, "row", 4, 2, 1, AttentionAxis::Row).unwrap();
        let img = tensor(seed, &[2, p, f, 4]);
        let shape = img.shape().to_vec();
        let rows = shuffled(p, seed);
        let permuted = Tensor::constant(&shape, permute_axis(&img.to_vec(), &shape, 1, &rows)).unwrap();
        let out = col.forward(&img).unwrap().to_vec();
        prop_assert_eq!(permute_axis(&out, &shape, 1, &rows), col.forward(&permuted).unwrap().to_vec());
        let cols = shuffled(f, seed ^ 5);
        let permuted = Tensor::constant(&shape, permute_axis(&img.to_vec(), &shape, 2, &cols)).unwrap();
        let out = row.forward(&img).unwrap().to_vec();
        prop_assert_eq!(permute_axis(&out, &shape, 2, &cols), row.forward(&permuted).unwrap().to_vec());
    }

    #[test]
    fn generators_and_masks_are_pure(seed in any::<u64>()) {
        let spec = SynthSpec::MultiSine { periods: vec![12.0, 5.0], amplitudes: vec![1.0, 0.3], trend: 0.01, noise: 0.2 };
        let a = synth_generate(&spec, 50, 2, seed).unwrap();
        let b = synth_generate(&spec, 50, 2, seed).unwrap();
        prop_assert_eq!(a.frame.values(), b.frame.values());
        prop_assert_eq!(draw_mask(40, 0.25, seed).unwrap(), draw_mask(40, 0.25, seed).unwrap());
    }

    #[test]
    fn adam_with_zero_lr_is_a_no_op(seed in any::<u64>()) {
        let mut store = ParamStore::new(seed);
        let mha = MultiHeadAttention::new(&mut store, "mha", 3, 4, 3, 2).unwrap();
        let x = tensor(seed, &[1, 4, 3]);
        mha.forward(&x, &x, &x).unwrap().output.square().sum().backward().unwrap();
        let before = store.snapshot();
        let mut state = AdamState::new(&store, AdamConfig { lr: 0.0, ..AdamConfig::default() });
        adam_step(&store, &mut state).unwrap();
        prop_assert_eq!(store.snapshot(), before);
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(12))]

    #[test]
    fn outputs_stay_finite_when_inputs_double(
        scales in 0usize..3,
        top_k in 1usize..4,
        task_pick in 0usize..4,
        seed in any::<u64>(),
    ) {
        let t = 32;
        let task = match task_pick {
            0 => TaskKind::Forecast { horizon: 8 },
            1 => TaskKind::Imputation,
            2 => TaskKind::AnomalyDetection,
            _ => TaskKind::Classification { n_classes: 3 },
        };
        let mut cfg = ModelConfig::new(t, 2, task);
        cfg.scales = scales;
        cfg.top_k = top_k;
        cfg.d_model = 8;
        let model = MultiScaleMixer::new(cfg.clone(), seed).unwrap();
        let x = tensor(seed, &[2, t, 2]);
        let mut shape = vec![2];
        shape.extend(cfg.output_shape());
        let y = model.predict(&x, None).unwrap();
        prop_assert_eq!(y.shape(), &shape[..]);
        let y2 = model.predict(&x.scale(2.0), None).unwrap();
        prop_assert!(y2.to_vec().iter().all(|v| v.is_finite()));
    }
}
