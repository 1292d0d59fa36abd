use emhrnn::em::{train, Strategy, TrainConfig, TrainingSet, LOCAL_BLOCKS};
use emhrnn::model::{Document, ModelConfig, ModelParams};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn tiny() -> ModelConfig {
    ModelConfig {
        d_emb: 3,
        d_h: 3,
        d_a: 3,
        classes: 3,
    }
}

fn corpus(n_docs: usize, lens: &[usize], seed: u64) -> Vec<Document> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    (0..n_docs)
        .map(|_| {
            let s = lens
                .iter()
                .map(|&l| {
                    (0..l)
                        .map(|_| (0..3).map(|_| rng.random_range(-1.0..1.0)).collect())
                        .collect()
                })
                .collect();
            Document::new(s, rng.random_range(0..3)).unwrap()
        })
        .collect()
}

fn run(docs: &[Document], strategy: Strategy, epochs: usize, k: usize, m: usize) -> emhrnn::em::TrainOutcome {
    let params = ModelParams::init(&tiny(), &mut ChaCha8Rng::seed_from_u64(1));
    let cfg = TrainConfig {
        strategy,
        epochs,
        outer_k: k,
        inner_m: m,
        batch_size: 4,
        seed: 2,
        ..TrainConfig::default()
    };
    train(params, TrainingSet { docs, truth: None }, &cfg, |_| {}).unwrap()
}

#[test]
fn evaluation_counters_follow_the_cost_formulas() {
    let docs = corpus(3, &[5, 5], 3);
    let exact = run(&docs, Strategy::Exact, 1, 1, 1);
    assert_eq!(exact.history[0].evals_per_doc_sweep_max, 1024);
    assert_eq!(exact.history[0].config_evals, 3 * 1024);
    for (l, per_doc) in [(1, 20), (2, 20), (5, 64), (10, 1024)] {
        let h = &run(&docs, Strategy::NonOverlap(l), 1, 1, 1).history[0];
        assert_eq!(
            (h.evals_per_doc_sweep_min, h.evals_per_doc_sweep_max),
            (per_doc, per_doc),
            "l = {l}"
        );
    }
    // Short trailing block: 8 + 8 + 8 + 2.
    let h = &run(&docs, Strategy::NonOverlap(3), 1, 1, 1).history[0];
    assert_eq!(h.evals_per_doc_sweep_max, 26);
    for m in [1, 3] {
        let h = &run(&docs, Strategy::Local, 1, 2, m).history[0];
        assert_eq!(h.sweeps_per_doc, 2);
        assert_eq!(h.evals_per_doc_sweep_max, 32 * LOCAL_BLOCKS as u64 * m as u64);
        assert_eq!(h.config_evals, 3 * 2 * 32 * LOCAL_BLOCKS as u64 * m as u64);
    }
}

#[test]
fn one_block_covering_the_document_is_exact_em() {
    let docs = corpus(6, &[4, 4], 4);
    let exact = run(&docs, Strategy::Exact, 3, 1, 1);
    let block = run(&docs, Strategy::NonOverlap(8), 3, 1, 1);
    for (a, b) in exact.history.iter().zip(&block.history) {
        assert!((a.q - b.q).abs() <= 1e-9, "{} vs {}", a.q, b.q);
    }
    assert_eq!(exact.params, block.params);
}

#[test]
fn exact_em_marginal_does_not_decrease() {
    let docs = corpus(8, &[3, 2], 5);
    let params = ModelParams::init(&tiny(), &mut ChaCha8Rng::seed_from_u64(6));
    let cfg = TrainConfig {
        epochs: 8,
        batch_size: 8,
        ..TrainConfig::default()
    };
    let out = train(
        params,
        TrainingSet {
            docs: &docs,
            truth: None,
        },
        &cfg,
        |_| {},
    )
    .unwrap();
    let ml: Vec<f64> = out.history.iter().map(|r| r.marginal_ll.unwrap()).collect();
    for w in ml.windows(2) {
        assert!(w[1] >= w[0] - 1e-6, "{ml:?}");
    }
    for r in &out.history {
        if let Some(d) = r.min_accepted_delta_q {
            assert!(d >= -1e-9);
        }
    }
}

#[test]
fn local_bootstrap_handles_short_documents() {
    let docs = corpus(2, &[2, 1], 7);
    let h = &run(&docs, Strategy::Local, 1, 1, 1).history[0];
    assert_eq!(h.evals_per_doc_sweep_max, 8 * LOCAL_BLOCKS as u64);
}
