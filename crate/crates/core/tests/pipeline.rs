use layoutlab::corpus::{parse_corpus, payslips_labels, LabelSet, Page};
use layoutlab::model::{Checkpoint, LayoutEncoder, ModelConfig, VocabStamp};
use layoutlab::synth::{synth_pages, SynthConfig};
use layoutlab::tensor::Tape;
use layoutlab::textcodec::{build_vocab, encode_page, Batch, Vocab};
use layoutlab::train::{
    finetune, mlm_accuracy, multi_run, predict, pretrain, write_loss_log, FinetuneConfig, PretrainConfig,
};
use layoutlab::Error;

fn small(vocab: usize) -> ModelConfig {
    ModelConfig { vocab_size: vocab, hidden: 32, layers: 2, heads: 2, ff_dim: 64, max_seq: 96, ..ModelConfig::default() }
}

fn corpus(pages: usize, seed: u64) -> (Vec<Page>, Vocab) {
    let (p, _) = synth_pages(&SynthConfig { pages, seed, ..SynthConfig::default() });
    let v = build_vocab(&p, 10_000, 1, true).unwrap();
    (p, v)
}

#[test]
fn pretrain_logs_every_update_and_is_reproducible() {
    let (pages, vocab) = corpus(6, 1);
    let cfg = PretrainConfig { batch_size: 4, epochs: 3, base_lr: 1e-3, seed: 2, ..PretrainConfig::default() };
    let a = pretrain(&pages, &vocab, &small(0), &cfg).unwrap();
    assert_eq!(a.losses.len(), 6);
    assert_eq!(a.losses[0].lr, 0.0);
    assert!(a.losses.iter().all(|l| l.loss.is_finite() && l.lr >= 0.0));
    let mut log = Vec::new();
    write_loss_log(&mut log, &a.losses).unwrap();
    let text = String::from_utf8(log).unwrap();
    assert_eq!(text.lines().count(), 6);
    assert_eq!(text.lines().next().unwrap().split('\t').count(), 3);
    let b = pretrain(&pages, &vocab, &small(0), &cfg).unwrap();
    assert_eq!(a.checkpoint.to_bytes(), b.checkpoint.to_bytes());
    assert_eq!(a.losses, b.losses);
    let acc = mlm_accuracy(&a.model, &pages, &vocab, 0.15, 0).unwrap();
    assert!((0.0..=1.0).contains(&acc));
}

#[test]
fn pretrain_rejects_bad_inputs() {
    let (pages, vocab) = corpus(2, 1);
    let cfg = PretrainConfig::default();
    assert!(pretrain(&[], &vocab, &small(0), &cfg).is_err());
    assert!(pretrain(&pages, &vocab, &small(vocab.len() + 1), &cfg).is_err());
    assert!(pretrain(&pages, &vocab, &small(0), &PretrainConfig { mask_rate: 0.0, ..cfg.clone() }).is_err());
    assert!(pretrain(&pages, &vocab, &small(0), &PretrainConfig { warmup_fraction: 1.0, ..cfg }).is_err());
}

#[test]
fn finetune_checks_its_inputs() {
    let (pages, vocab) = corpus(3, 2);
    let labels = payslips_labels();
    let ckpt = Checkpoint::from_model(&LayoutEncoder::<f32>::new(small(vocab.len()), 0).unwrap(), &VocabStamp::of(&vocab));
    let cfg = FinetuneConfig { epochs: 1, ..FinetuneConfig::default() };

    let mut unlabeled = pages.clone();
    unlabeled[1].tags = None;
    assert!(finetune(&ckpt, &vocab, &unlabeled, &labels, &cfg, None).is_err());

    let other = LabelSet::new(["PAY_DATE"]).unwrap();
    assert!(finetune(&ckpt, &vocab, &pages, &other, &cfg, None).is_err());

    let (_, other_vocab) = corpus(3, 99);
    assert!(matches!(
        finetune(&ckpt, &other_vocab, &pages, &labels, &cfg, None),
        Err(Error::Fingerprint { .. })
    ));

    let out = finetune(&ckpt, &vocab, &pages, &labels, &cfg, None).unwrap();
    assert!(out.summary.f1.is_none() && out.summary.final_loss.is_some());
    assert_eq!(out.checkpoint.labels.as_ref(), Some(&labels));
}

#[test]
fn finetuned_checkpoint_survives_disk_and_predicts_the_same() {
    let (pages, vocab) = corpus(4, 3);
    let labels = payslips_labels();
    let ckpt = Checkpoint::from_model(&LayoutEncoder::<f32>::new(small(vocab.len()), 1).unwrap(), &VocabStamp::of(&vocab));
    let cfg = FinetuneConfig { batch_size: 2, epochs: 2, lr: 1e-3, ..FinetuneConfig::default() };
    let out = finetune(&ckpt, &vocab, &pages, &labels, &cfg, Some(&pages)).unwrap();
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("m.ckpt");
    out.checkpoint.save(&path).unwrap();
    let loaded: LayoutEncoder<f32> = Checkpoint::load(&path).unwrap().to_model().unwrap();
    let a = predict(&out.model, &pages, &vocab, None, 3).unwrap();
    let b = predict(&loaded, &pages, &vocab, None, 1).unwrap();
    assert_eq!(a, b);
    for (p, t) in pages.iter().zip(&a) {
        assert_eq!(p.words.len(), t.len());
    }
}

#[test]
fn words_past_the_sequence_cap_are_outside() {
    let (pages, vocab) = corpus(1, 4);
    let labels = payslips_labels();
    let mut cfg = small(vocab.len());
    cfg.max_seq = 12;
    let mut m = LayoutEncoder::<f32>::new(cfg, 0).unwrap();
    m.init_ner_head(&labels, 0).unwrap();
    let tags = predict(&m, &pages, &vocab, None, 1).unwrap();
    assert_eq!(tags[0].len(), pages[0].words.len());
    assert!(tags[0][10..].iter().all(|t| t == "O"));
}

#[test]
fn multi_run_needs_two_seeds_and_orders_by_seed_list() {
    let (pages, vocab) = corpus(3, 5);
    let labels = payslips_labels();
    let ckpt = Checkpoint::from_model(&LayoutEncoder::<f32>::new(small(vocab.len()), 1).unwrap(), &VocabStamp::of(&vocab));
    let cfg = FinetuneConfig { batch_size: 2, epochs: 1, lr: 1e-3, ..FinetuneConfig::default() };
    assert!(multi_run(&ckpt, &vocab, &pages, &labels, &cfg, &[1], &pages).is_err());
    let r = multi_run(&ckpt, &vocab, &pages, &labels, &cfg, &[3, 1, 2], &pages).unwrap();
    assert_eq!(r.runs.iter().map(|s| s.seed).collect::<Vec<_>>(), [3, 1, 2]);
    assert!(!r.partial && r.failures.is_empty());
    assert_eq!(r.f1.unwrap().runs, 3);
    assert!(r.runs.iter().all(|s| s.doc_scores.len() == pages.len()));
    let json = serde_json::to_value(&r.runs[0]).unwrap();
    for k in ["seed", "f1", "precision", "recall", "seconds"] {
        assert!(json.get(k).is_some(), "{k}");
    }
}

#[test]
fn every_spatial_table_receives_gradient() {
    let (pages, vocab) = corpus(2, 6);
    let model = LayoutEncoder::<f32>::new(small(vocab.len()), 0).unwrap();
    let enc: Vec<_> = pages.iter().map(|p| encode_page(p, &vocab, 96).unwrap()).collect();
    let batch = Batch::from_pages(&enc.iter().collect::<Vec<_>>()).unwrap();
    let targets: Vec<Option<usize>> = batch.token_ids.iter().enumerate().map(|(i, t)| batch.is_word(i).then_some(*t)).collect();
    let mut tape = Tape::new();
    let h = model.encode(&mut tape, &batch, None, None).unwrap();
    let logits = model.mlm_head(&mut tape, h).unwrap();
    let loss = tape.cross_entropy(logits, &targets).unwrap();
    let mut model = model;
    tape.backward(loss, model.params_mut()).unwrap();
    for name in ["embeddings.x", "embeddings.y", "embeddings.width", "embeddings.height"] {
        let id = model.params().id(name).unwrap();
        assert!(model.params().grad(id).sq_norm() > 0.0, "{name}");
    }
}

#[test]
fn batch_order_permutes_outputs() {
    let (pages, vocab) = corpus(3, 7);
    let model = LayoutEncoder::<f32>::new(small(vocab.len()), 2).unwrap();
    let enc: Vec<_> = pages.iter().map(|p| encode_page(p, &vocab, 96).unwrap()).collect();
    let fwd = Batch::from_pages(&[&enc[0], &enc[1], &enc[2]]).unwrap();
    let rev = Batch::from_pages(&[&enc[2], &enc[1], &enc[0]]).unwrap();
    let (a, b) = (model.forward(&fwd, None).unwrap(), model.forward(&rev, None).unwrap());
    let row = a.len() / 3;
    assert_eq!(a.data()[..row], b.data()[2 * row..]);
    assert_eq!(a.data()[row..2 * row], b.data()[row..2 * row]);
}

#[test]
fn bundled_fixture_parses() {
    let dir = std::path::Path::new(env!("CARGO_MANIFEST_DIR")).join("tests/fixtures/payslips_synth");
    let labels = LabelSet::load(dir.join("labels.txt")).unwrap();
    assert_eq!(labels, payslips_labels());
    assert_eq!(parse_corpus(dir.join("train.jsonl"), Some(&labels)).unwrap().len(), 40);
    assert_eq!(parse_corpus(dir.join("test.jsonl"), Some(&labels)).unwrap().len(), 12);
}
