use emhrnn::autodiff::{log_sum_exp, softmax_values, Graph, Tensor};
use emhrnn::data::{batch_by_length, encode, split_sentences_tokenize, Vocabulary};
use emhrnn::em::{enumerate_posterior, Enumeration, PosteriorTable};
use emhrnn::layers::{attention_pool, lstm_encode, AttentionParams, LstmParams, LstmState};
use emhrnn::model::{indicator_probs, segments_from, Document, IndicatorAssignment, ModelConfig, ModelParams};
use proptest::prelude::*;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

fn small_vec(len: usize) -> impl Strategy<Value = Vec<f64>> {
    prop::collection::vec(-5.0f64..5.0, len)
}

fn doc_strategy(dim: usize) -> impl Strategy<Value = Document> {
    prop::collection::vec(prop::collection::vec(small_vec(dim), 1..4), 1..3)
        .prop_map(|sentences| Document::new(sentences, 0).unwrap())
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn softmax_is_a_distribution_and_shift_invariant(x in prop::collection::vec(-50.0f64..50.0, 1..12), c in -100.0f64..100.0) {
        let p = softmax_values(&x);
        prop_assert!((p.iter().sum::<f64>() - 1.0).abs() < 1e-12);
        prop_assert!(p.iter().all(|&v| (0.0..=1.0).contains(&v)));
        let shifted: Vec<f64> = x.iter().map(|v| v + c).collect();
        for (a, b) in p.iter().zip(softmax_values(&shifted)) {
            prop_assert!((a - b).abs() < 1e-12);
        }
    }

    #[test]
    fn attention_output_lies_in_convex_hull(states in prop::collection::vec(small_vec(3), 1..6), seed in 0u64..1000) {
        let params = AttentionParams::init(&mut ChaCha8Rng::seed_from_u64(seed), 3, 4);
        let mut g = Graph::new();
        let p = params.bind(&mut g);
        let vars: Vec<_> = states.iter().map(|s| g.constant_vector(s.clone())).collect();
        let (pooled, weights) = attention_pool(&mut g, &p, &vars).unwrap();
        let w = g.value(weights).to_vec();
        prop_assert!((w.iter().sum::<f64>() - 1.0).abs() < 1e-12);
        let v = g.value(pooled);
        for k in 0..3 {
            let lo = states.iter().map(|s| s[k]).fold(f64::INFINITY, f64::min);
            let hi = states.iter().map(|s| s[k]).fold(f64::NEG_INFINITY, f64::max);
            prop_assert!(v[k] >= lo - 1e-12 && v[k] <= hi + 1e-12);
        }
    }

    #[test]
    fn attention_is_permutation_equivariant(states in prop::collection::vec(small_vec(3), 2..6), seed in 0u64..1000) {
        let params = AttentionParams::init(&mut ChaCha8Rng::seed_from_u64(seed), 3, 4);
        let run = |s: &[Vec<f64>]| {
            let mut g = Graph::new();
            let p = params.bind(&mut g);
            let vars: Vec<_> = s.iter().map(|x| g.constant_vector(x.clone())).collect();
            let (pooled, weights) = attention_pool(&mut g, &p, &vars).unwrap();
            (g.value(pooled).to_vec(), g.value(weights).to_vec())
        };
        let (v1, w1) = run(&states);
        let mut rev = states.clone();
        rev.reverse();
        let (v2, w2) = run(&rev);
        for (a, b) in v1.iter().zip(&v2) {
            prop_assert!((a - b).abs() < 1e-12);
        }
        for (i, a) in w1.iter().enumerate() {
            prop_assert!((a - w2[w2.len() - 1 - i]).abs() < 1e-12);
        }
    }

    #[test]
    fn lstm_hidden_state_is_bounded(inputs in prop::collection::vec(prop::collection::vec(-100.0f64..100.0, 2), 1..8), seed in 0u64..1000) {
        let params = LstmParams::init(&mut ChaCha8Rng::seed_from_u64(seed), 2, 3);
        let mut g = Graph::new();
        let p = params.bind(&mut g);
        let xs: Vec<_> = inputs.iter().map(|x| g.constant_vector(x.clone())).collect();
        let init = LstmState::zeros(&mut g, 3);
        for s in lstm_encode(&mut g, &p, &xs, init).unwrap() {
            prop_assert!(g.value(s.h).iter().all(|h| h.abs() < 1.0));
        }
    }

    #[test]
    fn segments_partition_each_sentence(lens in prop::collection::vec(1usize..6, 1..4), bits in prop::collection::vec(any::<bool>(), 20)) {
        let doc = Document::new(lens.iter().map(|&n| vec![vec![0.0]; n]).collect(), 0).unwrap();
        let n = doc.token_count();
        let z = IndicatorAssignment(bits[..n].to_vec());
        let segs = segments_from(&doc, &z).unwrap();
        for (span, sentence) in doc.sentence_spans().into_iter().zip(&segs) {
            let mut next = span.start;
            for r in sentence {
                prop_assert_eq!(r.start, next);
                prop_assert!(!r.is_empty());
                let closes = z.0[r.end - 1] || r.end == span.end;
                prop_assert!(closes);
                prop_assert!((r.start..r.end - 1).all(|t| !z.0[t]));
                next = r.end;
            }
            prop_assert_eq!(next, span.end);
        }
    }

    #[test]
    fn posterior_weights_normalize_and_ignore_offsets(lj in prop::collection::vec(-700.0f64..0.0, 1..64), c in -500.0f64..500.0) {
        let configs = vec![IndicatorAssignment::zeros(1); lj.len()];
        let t = PosteriorTable::from_log_joint(configs.clone(), lj.clone());
        prop_assert!((t.weights.iter().sum::<f64>() - 1.0).abs() < 1e-9);
        let shifted = PosteriorTable::from_log_joint(configs, lj.iter().map(|v| v + c).collect());
        for (a, b) in t.weights.iter().zip(&shifted.weights) {
            prop_assert!((a - b).abs() < 1e-12);
        }
        prop_assert!((shifted.log_marginal() - t.log_marginal() - c).abs() < 1e-9);
        prop_assert!((log_sum_exp(&lj) - t.log_marginal()).abs() == 0.0);
    }

    #[test]
    fn tokenizer_is_idempotent(text in "[A-Za-z0-9 ,;.!?'-]{1,60}") {
        if let Ok(sentences) = split_sentences_tokenize(&text) {
            let joined = sentences.iter().flatten().cloned().collect::<Vec<_>>().join(" ");
            prop_assert_eq!(split_sentences_tokenize(&joined).unwrap(), sentences);
        }
    }

    #[test]
    fn encoding_preserves_token_count(text in "[a-z ,.!?]{1,60}") {
        let vocab = Vocabulary::new(vec![("a".to_string(), vec![1.0, 2.0])], 2).unwrap();
        if let Ok(sentences) = split_sentences_tokenize(&text) {
            let doc = encode(&text, 0, &vocab).unwrap();
            prop_assert_eq!(doc.token_count(), sentences.iter().map(Vec::len).sum::<usize>());
        }
    }

    #[test]
    fn length_batches_partition_the_corpus(lengths in prop::collection::vec(1usize..20, 1..100), batch in 1usize..40, seed in 0u64..100) {
        let docs: Vec<Document> = lengths.iter().map(|&n| Document::new(vec![vec![vec![0.0]; n]], 0).unwrap()).collect();
        let batches = batch_by_length(&docs, batch, &mut ChaCha8Rng::seed_from_u64(seed));
        let mut seen: Vec<usize> = batches.iter().flatten().copied().collect();
        seen.sort_unstable();
        prop_assert_eq!(seen, (0..docs.len()).collect::<Vec<_>>());
        prop_assert!(batches.iter().all(|b| !b.is_empty() && b.len() <= batch));
        prop_assert_eq!(batches.iter().filter(|b| b.len() < batch).count() <= 1, true);
    }

    #[test]
    fn prior_over_all_configs_sums_to_one(doc in doc_strategy(2), seed in 0u64..100) {
        // Product of Bernoulli terms over the full cube.
        let cfg = ModelConfig { d_emb: 2, d_h: 2, d_a: 2, classes: 2 };
        let params = ModelParams::init(&cfg, &mut ChaCha8Rng::seed_from_u64(seed));
        let pis = indicator_probs(&params, &doc).unwrap();
        let n = pis.len();
        let total: f64 = (0..1usize << n)
            .map(|m| (0..n).map(|t| if m >> t & 1 == 1 { pis[t] } else { 1.0 - pis[t] }).product::<f64>())
            .sum();
        prop_assert!((total - 1.0).abs() < 1e-12);
    }

    #[test]
    fn posterior_over_documents_sums_to_one(doc in doc_strategy(2), seed in 0u64..100) {
        let cfg = ModelConfig { d_emb: 2, d_h: 2, d_a: 2, classes: 2 };
        let params = ModelParams::init(&cfg, &mut ChaCha8Rng::seed_from_u64(seed));
        let t = enumerate_posterior(&params, &doc, Enumeration::Full, 16).unwrap();
        prop_assert_eq!(t.len(), 1usize << doc.token_count());
        prop_assert!((t.weights.iter().sum::<f64>() - 1.0).abs() < 1e-9);
    }
}

#[test]
fn sorted_batches_are_tighter_than_random_ones() {
    use rand::seq::SliceRandom;
    let mut rng = ChaCha8Rng::seed_from_u64(17);
    let lengths: Vec<usize> = (0..640).map(|i| 1 + (i * 37 + i / 3) % 50).collect();
    let docs: Vec<Document> = lengths
        .iter()
        .map(|&n| Document::new(vec![vec![vec![0.0]; n]], 0).unwrap())
        .collect();
    let spread = |b: &[usize]| {
        let ls: Vec<usize> = b.iter().map(|&i| lengths[i]).collect();
        ls.iter().max().unwrap() - ls.iter().min().unwrap()
    };
    let sorted_worst = batch_by_length(&docs, 64, &mut rng)
        .iter()
        .map(|b| spread(b))
        .max()
        .unwrap();
    let mut order: Vec<usize> = (0..docs.len()).collect();
    for _ in 0..20 {
        order.shuffle(&mut rng);
        let random_best = order.chunks(64).map(spread).min().unwrap();
        assert!(sorted_worst <= random_best, "{sorted_worst} > {random_best}");
    }
}

#[test]
fn tensors_reject_inconsistent_shapes() {
    assert!(Tensor::new(vec![2, 3], vec![0.0; 5]).is_err());
}
