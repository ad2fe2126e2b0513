use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use xhembed::combine::{build_initial_embeddings, InitInputs, InitStrategy};
use xhembed::corpus::{Vocabulary, BOS, EOS, PAD};
use xhembed::metrics::corpus_bleu;
use xhembed::nmt::{
    build_model, fine_tune, load_checkpoint, perplexity, save_checkpoint, train, translate, Seq2Seq, Seq2SeqConfig,
    TrainHyper, TrainingHistory,
};
use xhembed::Scalar;

fn vocab(n: usize) -> Vocabulary {
    let words: Vec<String> = (0..n - 4).map(|i| format!("t{i:02}")).collect();
    Vocabulary::build(std::iter::once(&words), 1)
}

fn model<T: Scalar>(v: &Vocabulary, emb: usize, hidden: usize, dropout: f64, seed: u64) -> Seq2Seq<T> {
    let inputs = InitInputs {
        projected: None,
        subword: None,
        mapping: None,
        dim: emb,
        seed,
    };
    let init = build_initial_embeddings::<T>(InitStrategy::Random, v, &inputs).unwrap();
    let config = Seq2SeqConfig {
        hidden,
        dropout,
        seed,
        ..Default::default()
    };
    build_model(&config, v, &init, v).unwrap()
}

/// Every output of at most `max_len` tokens: EOS-terminated sequences, plus
/// unterminated ones of exactly `max_len` tokens.
fn exhaustive_best<T: Scalar>(m: &Seq2Seq<T>, src: &[usize], max_len: usize) -> (Vec<usize>, T) {
    let emit: Vec<usize> = (0..m.target_vocab().len()).filter(|&t| t != PAD && t != BOS).collect();
    let mut best: Option<(Vec<usize>, T)> = None;
    let mut frontier: Vec<Vec<usize>> = vec![vec![]];
    for len in 1..=max_len {
        let mut next = Vec::new();
        for prefix in &frontier {
            for &t in &emit {
                let mut s = prefix.clone();
                s.push(t);
                if t == EOS || len == max_len {
                    let score = m.sequence_log_prob(src, &s);
                    if best.as_ref().map_or(true, |(_, b)| score > *b) {
                        best = Some((s.clone(), score));
                    }
                }
                if t != EOS {
                    next.push(s);
                }
            }
        }
        frontier = next;
    }
    let (mut s, score) = best.unwrap();
    if s.last() == Some(&EOS) {
        s.pop();
    }
    (s, score)
}

fn copy_data(n: usize, lo: usize, hi: usize, seed: u64) -> Vec<(Vec<usize>, Vec<usize>)> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    (0..n)
        .map(|_| {
            let len = rng.gen_range(3..=8);
            let s: Vec<usize> = (0..len).map(|_| rng.gen_range(lo..hi)).collect();
            (s.clone(), s)
        })
        .collect()
}

#[test]
fn copy_task_overfits_and_translates_back() {
    let v = vocab(20);
    let data = copy_data(200, 4, 20, 42);
    let hyper = TrainHyper {
        learning_rate: 5e-3,
        batch_size: 8,
        max_epochs: 30,
        patience: 30,
        seed: 0,
        ..Default::default()
    };
    let (m, h) = train(model::<f32>(&v, 32, 64, 0.0, 10), &data, &data, &hyper).unwrap();
    assert!(h.best_dev_perplexity().unwrap() <= h.records[1].dev_perplexity);
    let sources: Vec<Vec<String>> = data.iter().map(|(s, _)| v.decode(s)).collect();
    let hyps = translate(&m, &sources, 5, 20, 4);
    let split: Vec<Vec<String>> = hyps.iter().map(|l| l.split_whitespace().map(String::from).collect()).collect();
    let bleu = corpus_bleu(&split, &sources).unwrap();
    assert!(bleu >= 99.0, "copy-task BLEU {bleu}");
    let exact = hyps.iter().zip(&sources).filter(|(h, s)| **h == s.join(" ")).count();
    assert!(exact >= 195, "{exact} of 200 copied exactly");
}

#[test]
fn beam_one_matches_greedy_on_random_inputs() {
    let v = vocab(20);
    let mut m = model::<f64>(&v, 8, 8, 0.0, 5);
    m.randomize_params(1.0, 5);
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    for _ in 0..50 {
        let src: Vec<usize> = (0..rng.gen_range(0..9)).map(|_| rng.gen_range(1..20)).collect();
        assert_eq!(m.beam_search(&src, 1, 15).output(), m.greedy_decode(&src, 15));
    }
}

#[test]
fn full_width_beam_matches_enumeration() {
    let v = vocab(6);
    for seed in 0..50 {
        let mut m = model::<f64>(&v, 4, 4, 0.0, seed);
        m.randomize_params(1.0, seed);
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let src: Vec<usize> = (0..rng.gen_range(1..5)).map(|_| rng.gen_range(4..6)).collect();
        let (expected, score) = exhaustive_best(&m, &src, 4);
        let h = m.beam_search(&src, v.len(), 4);
        assert_eq!(h.output(), expected, "seed {seed}");
        assert!((h.log_prob - score).abs() < 1e-12);
    }
}

#[test]
fn fine_tuning_moves_to_the_new_domain() {
    let v = vocab(20);
    let a_train = copy_data(120, 4, 12, 1);
    let a_dev = copy_data(30, 4, 12, 2);
    let b_train: Vec<_> = copy_data(120, 12, 20, 3).into_iter().map(|(s, t)| (s, t.into_iter().rev().collect())).collect();
    let b_dev: Vec<_> = copy_data(30, 12, 20, 4).into_iter().map(|(s, t)| (s, t.into_iter().rev().collect())).collect();
    let hyper = TrainHyper {
        learning_rate: 5e-3,
        batch_size: 8,
        max_epochs: 8,
        seed: 2,
        ..Default::default()
    };
    let (pre, _) = train(model::<f32>(&v, 16, 32, 0.1, 4), &a_train, &a_dev, &hyper).unwrap();
    let before = perplexity(&pre, &b_dev, 64).unwrap();
    let tune = TrainHyper {
        max_epochs: 5,
        ..TrainHyper::fine_tune_default()
    };
    let (tuned, h) = fine_tune(pre.clone(), &b_train, &b_dev, &tune).unwrap();
    let after = perplexity(&tuned, &b_dev, 64).unwrap();
    assert!(after < before, "{after} !< {before}");
    assert_eq!(h.records[0].dev_perplexity, before);

    // tuning on the original dev set cannot make it worse
    let (same, _) = fine_tune(pre.clone(), &a_dev, &a_dev, &tune).unwrap();
    assert!(perplexity(&same, &a_dev, 64).unwrap() <= perplexity(&pre, &a_dev, 64).unwrap());
}

#[test]
fn checkpoint_round_trip_preserves_decoding() {
    let v = vocab(12);
    let m = model::<f32>(&v, 6, 8, 0.3, 9);
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("model.ckpt");
    save_checkpoint(&path, &m, &TrainingHistory::default()).unwrap();
    let (back, _) = load_checkpoint::<f32>(&path).unwrap();
    for src in [vec![4, 5, 6], vec![], vec![7, 7, 11, 1]] {
        assert_eq!(back.beam_search(&src, 3, 10).tokens, m.beam_search(&src, 3, 10).tokens);
    }
}
