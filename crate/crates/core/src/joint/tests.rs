use super::*;
use crate::autodiff::gradcheck::check_params;
use crate::autodiff::ParamId;
use crate::corpus::CodeCommentPair;
use crate::model::TransformerConfig;
use crate::synth::{self, SynthConfig};
use crate::vocab::Vocabulary;

fn toy(n: usize) -> (Vec<CodeCommentPair>, Vocabulary, EncodedPairs) {
    let pairs = synth::generate(&SynthConfig::train_only(n, 4)).unwrap();
    let vocab = Vocabulary::build(pairs.iter(), 1);
    let enc = EncodedPairs::new(pairs.iter(), &vocab).unwrap();
    (pairs, vocab, enc)
}

fn small(vocab: usize, dropout_p: f64) -> TransformerConfig {
    TransformerConfig {
        d_model: 8,
        n_heads: 2,
        n_enc_layers: 1,
        n_dec_layers: 1,
        ff_dim: 12,
        vocab_size: vocab,
        max_src_len: 48,
        max_tgt_len: 16,
        dropout_p,
    }
}

fn hit(id: &str, score: f64) -> RetrievalHit {
    RetrievalHit { pair_id: id.into(), score, rank: 1, row: 0 }
}

#[test]
fn segments_keep_order_with_two_separators() {
    let s = concat_segments(&[10, 11], &[20], &[30, 31, 32], 20).unwrap();
    assert_eq!(s.ids(), &[BOS, 10, 11, SEP, 20, SEP, 30, 31, 32, EOS]);
    assert_eq!(s.ids().iter().filter(|&&t| t == SEP).count(), 2);
}

#[test]
fn budget_trims_exemplar_code_then_comment_never_query() {
    let q = [10, 11, 12];
    let c = [20, 21];
    let r = [30, 31, 32, 33];
    let s = concat_segments(&q, &c, &r, 10).unwrap();
    assert_eq!(s.ids(), &[BOS, 10, 11, 12, SEP, 20, 21, SEP, 30, EOS]);
    let s = concat_segments(&q, &c, &r, 8).unwrap();
    assert_eq!(s.ids(), &[BOS, 10, 11, 12, SEP, 20, SEP, EOS]);
    // only an over-long query is itself cut, and only to the space left by the markers
    let s = concat_segments(&[9; 10], &c, &r, 8).unwrap();
    assert_eq!(s.ids(), &[BOS, 9, 9, 9, 9, SEP, SEP, EOS]);
    assert!(concat_segments(&q, &c, &r, 4).is_err());
}

#[test]
fn dangling_exemplar_is_a_data_error() {
    let (_, _, enc) = toy(4);
    let err = build_augmented_input(&[5], &hit("missing", 0.5), &enc, 32).unwrap_err();
    assert!(matches!(err, Error::Data(_)));
    let id = enc.get(1).id.clone();
    let a = build_augmented_input(&[5], &hit(&id, 0.5), &enc, 64).unwrap();
    assert_eq!(a.exemplar_id, id);
    assert_eq!(a.retrieval_score, 0.5);
}

#[test]
fn combine_matches_hand_arithmetic() {
    assert_eq!(combine(&[2.0, 4.0], &[1.0, 0.5]), 2.0);
    let rec = CompositeLossRecord {
        epoch: 0,
        query_id: "q".into(),
        exemplar_ids: vec!["a".into(), "b".into()],
        losses: vec![2.0, 4.0],
        weights: vec![1.0, 0.5],
        combined: 2.0,
        k: 2,
    };
    assert_eq!(rec.recompute(), rec.combined);
}

struct Fixture {
    model: Transformer,
    enc: EncodedPairs,
    index: EmbeddingIndex,
}

fn fixture(dropout_p: f64) -> Fixture {
    let (_, vocab, enc) = toy(6);
    let model = Transformer::init(small(vocab.len(), dropout_p), 9).unwrap();
    let index = EmbeddingIndex::build(&model, &enc, "test").unwrap();
    Fixture { model, enc, index }
}

impl Fixture {
    fn inputs(&self, q: usize, k: usize) -> (TokenSequence, Vec<AugmentedInput>, Vec<&[f64]>, TokenSequence) {
        let max = self.model.config().max_src_len;
        let hits = self.index.top_k_for_row(q, k).unwrap();
        let inputs = hits.iter().map(|h| build_augmented_input(&self.enc.get(q).code, h, &self.enc, max).unwrap()).collect();
        let rows = hits.iter().map(|h| self.index.row(h.row)).collect();
        let target = self.enc.target(q, self.model.config().max_tgt_len).unwrap();
        (self.enc.source(q, max).unwrap(), inputs, rows, target)
    }
}

fn cfg_with(weighting: Weighting, floor_weights: bool) -> FinetuneConfig {
    FinetuneConfig { weighting, floor_weights, ..FinetuneConfig::default() }
}

#[test]
fn single_unit_weight_equals_plain_cross_entropy() {
    let f = fixture(0.1);
    let (query, inputs, rows, target) = f.inputs(0, 1);
    let mut g = Graph::with_params(f.model.params());
    let vars = composite_loss_in(&f.model, &mut g, &query, &inputs, &rows, &target, &cfg_with(Weighting::Uniform, true), &[77]).unwrap();
    let composite = g.value(vars.combined).item();
    let mut h = Graph::with_params(f.model.params());
    let (logits, gold) = f.model.teacher_forced_in(&mut h, inputs[0].tokens.ids(), target.ids(), Mode::Train { seed: 77 }).unwrap();
    let ce = h.cross_entropy(logits, &gold, PAD, Reduction::Sum).unwrap();
    assert!((composite - h.value(ce).item()).abs() < 1e-12);
}

#[test]
fn constant_weights_scale_the_mean_cross_entropy() {
    let f = fixture(0.1);
    let (query, inputs, rows, target) = f.inputs(2, 3);
    let scaled: Vec<AugmentedInput> = inputs.iter().map(|a| AugmentedInput { retrieval_score: 0.7, ..a.clone() }).collect();
    let mut g = Graph::with_params(f.model.params());
    let vars = composite_loss_in(&f.model, &mut g, &query, &scaled, &rows, &target, &cfg_with(Weighting::Retrieval, true), &[1, 2, 3]).unwrap();
    let losses: Vec<f64> = vars.losses.iter().map(|&v| g.value(v).item()).collect();
    let mean = losses.iter().sum::<f64>() / 3.0;
    assert!((g.value(vars.combined).item() - 0.7 * mean).abs() < 1e-12);
}

#[test]
fn live_weights_equal_retrieval_scores_at_build_time() {
    let f = fixture(0.1);
    let (query, inputs, rows, target) = f.inputs(1, 2);
    let mut g = Graph::with_params(f.model.params());
    let vars = composite_loss_in(&f.model, &mut g, &query, &inputs, &rows, &target, &cfg_with(Weighting::Live, false), &[4, 5]).unwrap();
    for (w, a) in vars.weights.iter().zip(&inputs) {
        assert!((g.value(*w).item() - a.retrieval_score).abs() < 1e-12);
    }
}

#[test]
fn floor_clamps_negative_weights() {
    let f = fixture(0.0);
    let (query, inputs, rows, target) = f.inputs(0, 1);
    let negated: Vec<f64> = rows[0].iter().map(|x| -x).collect();
    let rows = vec![negated.as_slice()];
    for (floor, positive) in [(true, false), (false, true)] {
        let mut g = Graph::with_params(f.model.params());
        let vars = composite_loss_in(&f.model, &mut g, &query, &inputs, &rows, &target, &cfg_with(Weighting::Live, floor), &[0]).unwrap();
        let w = g.value(vars.weights[0]).item();
        if floor {
            assert_eq!(w, 0.0);
        } else {
            assert!(w < 0.0);
        }
        assert_eq!(g.value(vars.combined).item() < 0.0, positive);
    }
}

#[test]
fn composite_loss_has_correct_gradients() {
    let f = fixture(0.0);
    let (query, inputs, rows, target) = f.inputs(3, 2);
    let cfg = cfg_with(Weighting::Live, false);
    let ps = f.model.params();
    let ids: Vec<ParamId> = ps.ids().filter(|&id| !ps.name(id).ends_with("key.bias")).collect();
    let r = check_params(ps, &ids, 1e-5, 4, |g: &mut Graph| {
        Ok(composite_loss_in(&f.model, g, &query, &inputs, &rows, &target, &cfg, &[0, 1])?.combined)
    })
    .unwrap();
    assert!(r.max_error() < 1e-4, "{r:?}");
}

#[test]
fn encoder_gradient_flows_through_inputs_and_weights() {
    let f = fixture(0.1);
    let (query, inputs, rows, target) = f.inputs(0, 2);
    let ps = f.model.params();
    let encoder: Vec<ParamId> = ps.ids().filter(|&id| ps.name(id).starts_with("encoder.")).collect();
    let reach = |pick: &dyn Fn(&CompositeVars) -> Var| {
        let mut g = Graph::with_params(ps);
        let vars = composite_loss_in(&f.model, &mut g, &query, &inputs, &rows, &target, &cfg_with(Weighting::Live, true), &[8, 9]).unwrap();
        let grads = g.backward(pick(&vars)).unwrap();
        encoder.iter().filter_map(|&id| grads.param(id)).flatten().map(|x| x.abs()).sum::<f64>()
    };
    // through the augmented inputs only
    assert!(reach(&|v| v.losses[0]) > 0.0);
    // through the similarity weight only
    assert!(reach(&|v| v.weights[0]) > 0.0);
}

fn run(f: &Fixture, cfg: &FinetuneConfig) -> (Transformer, FinetuneLog) {
    let mut model = f.model.clone();
    let log = finetune(&mut model, &f.enc, cfg, IndexSource::Live, 11, &mut |_, _| Ok(())).unwrap();
    (model, log)
}

#[test]
fn zero_epochs_leave_the_model_unchanged() {
    let f = fixture(0.1);
    let (model, log) = run(&f, &FinetuneConfig { epochs: 0, k: 2, ..FinetuneConfig::default() });
    assert!(model.params().same_values(f.model.params()));
    assert!(log.records.is_empty());
}

#[test]
fn training_logs_reproducible_records_without_self_retrieval() {
    let f = fixture(0.1);
    let cfg = FinetuneConfig { epochs: 3, k: 2, batch_size: 4, learning_rate: 3e-3, ..FinetuneConfig::default() };
    let (a, log) = run(&f, &cfg);
    assert_eq!(log.records.len(), 3 * f.enc.len());
    for r in &log.records {
        assert_eq!(r.k, 2);
        assert!(!r.exemplar_ids.contains(&r.query_id));
        assert!((r.recompute() - r.combined).abs() < 1e-12);
        assert!(r.weights.iter().all(|&w| w >= 0.0));
    }
    let (b, again) = run(&f, &cfg);
    assert!(a.params().same_values(b.params()));
    assert_eq!(log, again);
    assert!(!a.params().same_values(f.model.params()));
}

#[test]
fn k_must_leave_room_for_self_exclusion() {
    let f = fixture(0.1);
    let mut model = f.model.clone();
    let cfg = FinetuneConfig { epochs: 1, k: f.enc.len(), ..FinetuneConfig::default() };
    let err = finetune(&mut model, &f.enc, &cfg, IndexSource::Live, 1, &mut |_, _| Ok(())).unwrap_err();
    assert!(matches!(err, Error::Contract(_)));
    let cfg = FinetuneConfig { k: 0, ..cfg };
    assert!(matches!(finetune(&mut model, &f.enc, &cfg, IndexSource::Live, 1, &mut |_, _| Ok(())), Err(Error::Config(_))));
}

#[test]
fn no_retrieval_mode_trains_on_bare_queries() {
    let f = fixture(0.1);
    let cfg = FinetuneConfig { epochs: 2, batch_size: 3, learning_rate: 3e-3, no_retrieval: true, ..FinetuneConfig::default() };
    let (model, log) = run(&f, &cfg);
    assert!(log.records.is_empty());
    assert_eq!(log.epochs.len(), 2);
    assert!(!model.params().same_values(f.model.params()));
}
