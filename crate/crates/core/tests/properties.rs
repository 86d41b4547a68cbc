use dispatcher::checks::{dense_mix_oracle, relative_deviation};
use dispatcher::corpus::{preprocess, TokenizerMode, Vocab};
use dispatcher::dispatcher::{dispatch_mix, num_rows, CausalShiftMask, RowDropoutMask};
use dispatcher::trainer::{clip_grad_norm, warmup_lr, StreamBatcher};
use dispatcher::{checkpoint, LayerKind, LmModel, ModelConfig};
use dispatcher_tensor::{Buffer, Tensor};
use proptest::prelude::*;

fn mix_case() -> impl Strategy<Value = (usize, usize, Vec<f64>, Vec<f64>, Vec<bool>)> {
    (1usize..40, 1usize..3).prop_flat_map(|(n, heads)| {
        let rows = num_rows(n).unwrap();
        let width = 2 * heads;
        (
            Just(n),
            Just(heads),
            prop::collection::vec(-2.0f64..2.0, n * width),
            prop::collection::vec(-6.0f64..6.0, n * rows.max(1) * heads),
            prop::collection::vec(any::<bool>(), rows),
        )
    })
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn mixing_matches_the_dense_operator((n, heads, v, logits, keep) in mix_case()) {
        let rows = num_rows(n).unwrap();
        let width = 2 * heads;
        let mask = CausalShiftMask::for_len(n).unwrap();
        let gates = Tensor::new(&[n, rows.max(1) * heads], logits).unwrap()
            .sigmoid()
            .mul(&mask.gate_tensor(rows.max(1), heads))
            .unwrap();
        let keep = RowDropoutMask::from_keep(keep);
        let fused = dispatch_mix(&Tensor::new(&[n, width], v.clone()).unwrap(), &gates, &mask, heads, &keep).unwrap();
        let (oracle, triangular) = dense_mix_oracle(&v, &gates.to_vec(), n, width, heads, keep.keep());
        prop_assert!(triangular);
        prop_assert!(relative_deviation(&fused.to_vec(), &oracle) <= 1e-12);
    }

    #[test]
    fn char_vocab_round_trips(text in "[a-zé \\n\\r]{1,60}") {
        let tokens = preprocess(text.as_bytes(), TokenizerMode::Char).unwrap();
        prop_assume!(!tokens.is_empty());
        let vocab = Vocab::build(&tokens, 1, None).unwrap();
        let ids = vocab.encode(&tokens);
        prop_assert_eq!(vocab.encode(&vocab.decode(&ids).unwrap()), ids.clone());
        prop_assert_eq!(vocab.render(&ids, TokenizerMode::Char).unwrap(), text.replace("\r\n", "\n"));
        prop_assert_eq!(Vocab::from_text(&vocab.to_text()).unwrap(), vocab);
    }

    #[test]
    fn clipped_norm_respects_the_limit(grads in prop::collection::vec(-100.0f64..100.0, 1..30), limit in 0.01f64..10.0) {
        let params: Vec<(String, Tensor)> = grads
            .chunks(4)
            .enumerate()
            .map(|(i, g)| {
                let t = Tensor::param(&[g.len()], vec![0.0; g.len()]).unwrap();
                *t.grad_mut() = Some(Buffer::from_slice(g));
                (format!("p{i}"), t)
            })
            .collect();
        let before = clip_grad_norm(&params, limit).unwrap();
        let after: f64 = params.iter().map(|(_, t)| t.grad().unwrap().iter().map(|v| v * v).sum::<f64>()).sum::<f64>().sqrt();
        prop_assert!(after <= limit + 1e-9);
        prop_assert!((after - before.min(limit)).abs() <= 1e-9 * before.max(1.0));
    }

    #[test]
    fn warmup_is_monotone_and_capped(base in 0.0f64..1.0, warmup in 0usize..500, step in 0usize..1000) {
        let lr = warmup_lr(base, step, warmup);
        prop_assert!(lr <= base && lr >= 0.0);
        prop_assert!(warmup_lr(base, step + 1, warmup) >= lr);
    }

    #[test]
    fn batches_are_shifted_windows(len in 20usize..200, batch in 1usize..4, seq in 1usize..6, take in 1usize..12) {
        let ids: Vec<usize> = (0..len).collect();
        prop_assume!(len / batch > seq);
        for b in StreamBatcher::new(&ids, batch, seq).unwrap().take(take) {
            for row in 0..b.batch {
                let inputs = &b.inputs[row * seq..][..seq];
                let targets = &b.targets[row * seq..][..seq];
                prop_assert!(inputs.iter().zip(targets).all(|(i, t)| t == &(i + 1)));
                prop_assert!(inputs.iter().all(|&i| i / (len / batch) == row));
            }
        }
    }

    #[test]
    fn checkpoints_restore_every_parameter(
        kind in prop_oneof![Just(LayerKind::Dispatcher), Just(LayerKind::Msa)],
        heads in 1usize..3,
        layers in 1usize..3,
        max_seq in 1usize..20,
        seed in any::<u64>(),
    ) {
        let cfg = ModelConfig {
            layer_kind: kind,
            d_model: 4 * heads,
            d_inner: 6,
            n_layers: layers,
            n_heads: heads,
            max_seq,
            vocab_size: 7,
            dropout_p: 0.0,
            row_dropout_p: None,
            seed,
        };
        let model = LmModel::new(cfg).unwrap();
        let restored = checkpoint::from_bytes(&checkpoint::to_bytes(&model).unwrap()).unwrap();
        prop_assert_eq!(restored.config(), model.config());
        for ((na, a), (nb, b)) in model.named_parameters().iter().zip(restored.named_parameters()) {
            prop_assert_eq!(na, &nb);
            let same = a.to_vec().iter().zip(b.to_vec()).all(|(x, y)| x.to_bits() == y.to_bits());
            prop_assert!(same);
        }
    }
}
