//! Pre-norm encoder–decoder transformer built on the autodiff graph.
//!
//! One embedding table serves the encoder input, the decoder input and the
//! output projection, so a token copied from the source has the same
//! representation on both sides.

use rand::Rng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};

use super::config::TransformerConfig;
use crate::autodiff::{Graph, ParamId, ParamStore, Var};
use crate::error::{contract_err, Result};
use crate::rng;
use crate::tensor::Tensor;
use crate::vocab::{TokenSequence, PAD};

const LN_EPS: f64 = 1e-5;

/// Whether a forward pass applies dropout, and from which seed.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Mode {
    Eval,
    Train { seed: u64 },
}

#[derive(Clone, Debug)]
struct LayerNormIds {
    gain: ParamId,
    bias: ParamId,
}

#[derive(Clone, Debug)]
struct LinearIds {
    weight: ParamId,
    bias: ParamId,
}

#[derive(Clone, Debug)]
struct AttentionIds {
    query: LinearIds,
    key: LinearIds,
    value: LinearIds,
    out: LinearIds,
}

#[derive(Clone, Debug)]
struct FeedForwardIds {
    up: LinearIds,
    down: LinearIds,
}

#[derive(Clone, Debug)]
struct EncoderLayerIds {
    ln_attn: LayerNormIds,
    attn: AttentionIds,
    ln_ff: LayerNormIds,
    ff: FeedForwardIds,
}

#[derive(Clone, Debug)]
struct DecoderLayerIds {
    ln_self: LayerNormIds,
    self_attn: AttentionIds,
    ln_cross: LayerNormIds,
    cross_attn: AttentionIds,
    ln_ff: LayerNormIds,
    ff: FeedForwardIds,
}

#[derive(Clone, Debug)]
struct Layout {
    embedding: ParamId,
    encoder: Vec<EncoderLayerIds>,
    encoder_norm: LayerNormIds,
    decoder: Vec<DecoderLayerIds>,
    decoder_norm: LayerNormIds,
}

/// Encoder result inside a graph.
#[derive(Clone, Debug)]
pub struct EncodedVars {
    /// `[T × d]` final hidden states.
    pub states: Var,
    /// `[d]` mean over non-pad positions.
    pub pooled: Var,
    /// `true` where the input token is not padding.
    pub pad_mask: Vec<bool>,
}

/// Detached encoder result.
#[derive(Clone, Debug, PartialEq)]
pub struct EncoderOutput {
    pub states: Tensor,
    pub pooled: Vec<f64>,
    pub pad_mask: Vec<bool>,
}

/// Model weights together with their configuration.
#[derive(Clone, Debug)]
pub struct Transformer {
    config: TransformerConfig,
    params: ParamStore,
    layout: Layout,
    positions: Tensor,
}

/// Names and shapes of every parameter in registration order.
fn parameter_shapes(c: &TransformerConfig) -> Vec<(String, Vec<usize>)> {
    let (d, ff) = (c.d_model, c.ff_dim);
    let mut out = vec![("embedding".to_string(), vec![c.vocab_size, d])];
    let ln = |out: &mut Vec<(String, Vec<usize>)>, p: &str| {
        out.push((format!("{p}.gain"), vec![d]));
        out.push((format!("{p}.bias"), vec![d]));
    };
    let lin = |out: &mut Vec<(String, Vec<usize>)>, p: &str, i: usize, o: usize| {
        out.push((format!("{p}.weight"), vec![i, o]));
        out.push((format!("{p}.bias"), vec![o]));
    };
    let attn = |out: &mut Vec<(String, Vec<usize>)>, p: &str| {
        for part in ["query", "key", "value", "out"] {
            lin(out, &format!("{p}.{part}"), d, d);
        }
    };
    let feed = |out: &mut Vec<(String, Vec<usize>)>, p: &str| {
        lin(out, &format!("{p}.up"), d, ff);
        lin(out, &format!("{p}.down"), ff, d);
    };
    for l in 0..c.n_enc_layers {
        let p = format!("encoder.{l}");
        ln(&mut out, &format!("{p}.ln_attn"));
        attn(&mut out, &format!("{p}.attn"));
        ln(&mut out, &format!("{p}.ln_ff"));
        feed(&mut out, &format!("{p}.ff"));
    }
    ln(&mut out, "encoder.norm");
    for l in 0..c.n_dec_layers {
        let p = format!("decoder.{l}");
        ln(&mut out, &format!("{p}.ln_self"));
        attn(&mut out, &format!("{p}.self_attn"));
        ln(&mut out, &format!("{p}.ln_cross"));
        attn(&mut out, &format!("{p}.cross_attn"));
        ln(&mut out, &format!("{p}.ln_ff"));
        feed(&mut out, &format!("{p}.ff"));
    }
    ln(&mut out, "decoder.norm");
    out
}

fn resolve_layout(c: &TransformerConfig, ps: &ParamStore) -> Result<Layout> {
    let id = |name: String| {
        ps.id(&name).ok_or_else(|| crate::Error::Format(format!("missing parameter {name}")))
    };
    let ln = |p: &str| -> Result<LayerNormIds> {
        Ok(LayerNormIds { gain: id(format!("{p}.gain"))?, bias: id(format!("{p}.bias"))? })
    };
    let lin = |p: &str| -> Result<LinearIds> {
        Ok(LinearIds { weight: id(format!("{p}.weight"))?, bias: id(format!("{p}.bias"))? })
    };
    let attn = |p: &str| -> Result<AttentionIds> {
        Ok(AttentionIds {
            query: lin(&format!("{p}.query"))?,
            key: lin(&format!("{p}.key"))?,
            value: lin(&format!("{p}.value"))?,
            out: lin(&format!("{p}.out"))?,
        })
    };
    let feed = |p: &str| -> Result<FeedForwardIds> {
        Ok(FeedForwardIds { up: lin(&format!("{p}.up"))?, down: lin(&format!("{p}.down"))? })
    };
    let encoder = (0..c.n_enc_layers)
        .map(|l| {
            let p = format!("encoder.{l}");
            Ok(EncoderLayerIds {
                ln_attn: ln(&format!("{p}.ln_attn"))?,
                attn: attn(&format!("{p}.attn"))?,
                ln_ff: ln(&format!("{p}.ln_ff"))?,
                ff: feed(&format!("{p}.ff"))?,
            })
        })
        .collect::<Result<_>>()?;
    let decoder = (0..c.n_dec_layers)
        .map(|l| {
            let p = format!("decoder.{l}");
            Ok(DecoderLayerIds {
                ln_self: ln(&format!("{p}.ln_self"))?,
                self_attn: attn(&format!("{p}.self_attn"))?,
                ln_cross: ln(&format!("{p}.ln_cross"))?,
                cross_attn: attn(&format!("{p}.cross_attn"))?,
                ln_ff: ln(&format!("{p}.ln_ff"))?,
                ff: feed(&format!("{p}.ff"))?,
            })
        })
        .collect::<Result<_>>()?;
    Ok(Layout {
        embedding: id("embedding".into())?,
        encoder,
        encoder_norm: ln("encoder.norm")?,
        decoder,
        decoder_norm: ln("decoder.norm")?,
    })
}

/// Sinusoidal position table `[len × d]`.
pub fn sinusoidal_positions(len: usize, d: usize) -> Tensor {
    let mut data = vec![0.0; len * d];
    for pos in 0..len {
        for i in 0..d {
            let rate = 10000f64.powf((2 * (i / 2)) as f64 / d as f64);
            let angle = pos as f64 / rate;
            data[pos * d + i] = if i % 2 == 0 { angle.sin() } else { angle.cos() };
        }
    }
    Tensor::new(vec![len, d], data).expect("positive sizes")
}

impl Transformer {
    /// Fresh weights: gains 1, biases 0, matrices `N(0, 1/fan_in)`,
    /// embeddings `N(0, 1/d)`.
    pub fn init(config: TransformerConfig, seed: u64) -> Result<Self> {
        config.validate()?;
        let mut r = rng::rng_at(seed, &[rng::stream::INIT]);
        let mut params = ParamStore::new();
        for (name, shape) in parameter_shapes(&config) {
            let n: usize = shape.iter().product();
            let data = if name.ends_with(".gain") {
                vec![1.0; n]
            } else if name.ends_with(".bias") {
                vec![0.0; n]
            } else {
                let fan_in = if name == "embedding" { shape[1] } else { shape[0] };
                let normal = Normal::new(0.0, (1.0 / fan_in as f64).sqrt()).expect("finite std");
                (0..n).map(|_| normal.sample(&mut r)).collect()
            };
            params.add(name, Tensor::new(shape, data)?)?;
        }
        Self::from_params(config, params)
    }

    /// Wrap stored weights, checking every expected parameter is present with the right shape.
    pub fn from_params(config: TransformerConfig, params: ParamStore) -> Result<Self> {
        config.validate()?;
        for (name, shape) in parameter_shapes(&config) {
            match params.id(&name) {
                Some(id) if params.get(id).shape() == shape.as_slice() => {}
                Some(id) => {
                    return Err(crate::Error::Format(format!(
                        "parameter {name} has shape {:?}, expected {shape:?}",
                        params.get(id).shape()
                    )))
                }
                None => return Err(crate::Error::Format(format!("missing parameter {name}"))),
            }
        }
        if params.len() != parameter_shapes(&config).len() {
            return Err(crate::Error::Format("unexpected extra parameters".into()));
        }
        let layout = resolve_layout(&config, &params)?;
        let positions = sinusoidal_positions(config.max_src_len.max(config.max_tgt_len), config.d_model);
        Ok(Transformer { config, params, layout, positions })
    }

    pub fn config(&self) -> &TransformerConfig {
        &self.config
    }

    pub fn params(&self) -> &ParamStore {
        &self.params
    }

    pub fn params_mut(&mut self) -> &mut ParamStore {
        &mut self.params
    }

    pub fn into_params(self) -> ParamStore {
        self.params
    }

    fn layer_norm(&self, g: &mut Graph, x: Var, ids: &LayerNormIds) -> Result<Var> {
        let gain = g.param(ids.gain);
        let bias = g.param(ids.bias);
        g.layer_norm(x, gain, bias, LN_EPS)
    }

    fn linear(&self, g: &mut Graph, x: Var, ids: &LinearIds) -> Result<Var> {
        let w = g.param(ids.weight);
        let b = g.param(ids.bias);
        let y = g.matmul(x, w)?;
        g.add_row(y, b)
    }

    /// Multi-head attention of `queries` over `keys_values`; `mask` is `[Tq × Tk]`.
    fn attention(&self, g: &mut Graph, queries: Var, keys_values: Var, ids: &AttentionIds, mask: &[bool]) -> Result<Var> {
        let q = self.linear(g, queries, &ids.query)?;
        let k = self.linear(g, keys_values, &ids.key)?;
        let v = self.linear(g, keys_values, &ids.value)?;
        let dh = self.config.head_dim();
        let scale = 1.0 / (dh as f64).sqrt();
        let mut heads = Vec::with_capacity(self.config.n_heads);
        for h in 0..self.config.n_heads {
            let qh = g.slice_cols(q, h * dh, dh)?;
            let kh = g.slice_cols(k, h * dh, dh)?;
            let vh = g.slice_cols(v, h * dh, dh)?;
            let scores = g.matmul_t(qh, kh)?;
            let scores = g.scale(scores, scale)?;
            let probs = g.masked_softmax(scores, mask)?;
            heads.push(g.matmul(probs, vh)?);
        }
        let joined = if heads.len() == 1 { heads[0] } else { g.concat_cols(&heads)? };
        self.linear(g, joined, &ids.out)
    }

    fn feed_forward(&self, g: &mut Graph, x: Var, ids: &FeedForwardIds) -> Result<Var> {
        let h = self.linear(g, x, &ids.up)?;
        let h = g.gelu(h)?;
        self.linear(g, h, &ids.down)
    }

    fn maybe_dropout(&self, g: &mut Graph, x: Var, rng: &mut Option<ChaCha8Rng>) -> Result<Var> {
        match rng {
            Some(r) => g.dropout(x, self.config.dropout_p, r),
            None => Ok(x),
        }
    }

    /// `x + dropout(branch)`
    fn residual(&self, g: &mut Graph, x: Var, branch: Var, rng: &mut Option<ChaCha8Rng>) -> Result<Var> {
        let b = self.maybe_dropout(g, branch, rng)?;
        g.add(x, b)
    }

    /// Scaled token embeddings plus positions.
    fn embed_tokens(&self, g: &mut Graph, ids: &[usize], rng: &mut Option<ChaCha8Rng>) -> Result<Var> {
        if let Some(&bad) = ids.iter().find(|&&i| i >= self.config.vocab_size) {
            return contract_err(format!("token id {bad} outside vocabulary of {}", self.config.vocab_size));
        }
        let d = self.config.d_model;
        let table = g.param(self.layout.embedding);
        let e = g.embedding(table, ids)?;
        let e = g.scale(e, (d as f64).sqrt())?;
        let pos = Tensor::new(vec![ids.len(), d], self.positions.data()[..ids.len() * d].to_vec())?;
        let pos = g.constant(pos);
        let x = g.add(e, pos)?;
        self.maybe_dropout(g, x, rng)
    }

    fn dropout_rng(&self, mode: Mode) -> Option<ChaCha8Rng> {
        match mode {
            Mode::Train { seed } if self.config.dropout_p > 0.0 => Some(rng::rng(seed)),
            _ => None,
        }
    }

    /// Encode `ids` inside `g`. In train mode dropout masks are drawn from `seed`.
    pub fn encode_in(&self, g: &mut Graph, ids: &[usize], mode: Mode) -> Result<EncodedVars> {
        let mut rng = self.dropout_rng(mode);
        self.encode_with(g, ids, &mut rng)
    }

    fn encode_with(&self, g: &mut Graph, ids: &[usize], rng: &mut Option<ChaCha8Rng>) -> Result<EncodedVars> {
        if ids.is_empty() || ids.len() > self.config.max_src_len {
            return contract_err(format!(
                "source length {} outside 1..={}",
                ids.len(),
                self.config.max_src_len
            ));
        }
        let t = ids.len();
        let pad_mask: Vec<bool> = ids.iter().map(|&i| i != PAD).collect();
        if !pad_mask.iter().any(|&b| b) {
            return contract_err("source sequence is all padding");
        }
        let attn_mask: Vec<bool> = (0..t).flat_map(|_| pad_mask.iter().copied()).collect();
        let mut x = self.embed_tokens(g, ids, rng)?;
        for layer in &self.layout.encoder {
            let h = self.layer_norm(g, x, &layer.ln_attn)?;
            let a = self.attention(g, h, h, &layer.attn, &attn_mask)?;
            x = self.residual(g, x, a, rng)?;
            let h = self.layer_norm(g, x, &layer.ln_ff)?;
            let f = self.feed_forward(g, h, &layer.ff)?;
            x = self.residual(g, x, f, rng)?;
        }
        let states = self.layer_norm(g, x, &self.layout.encoder_norm)?;
        let pooled = g.masked_mean_rows(states, &pad_mask)?;
        Ok(EncodedVars { states, pooled, pad_mask })
    }

    /// Decoder logits `[T × V]` for `target_in` attending to `memory` (`[S × d]`).
    pub fn decode_in(
        &self,
        g: &mut Graph,
        memory: Var,
        memory_mask: &[bool],
        target_in: &[usize],
        mode: Mode,
    ) -> Result<Var> {
        let mut rng = self.dropout_rng(mode);
        self.decode_with(g, memory, memory_mask, target_in, &mut rng)
    }

    fn decode_with(
        &self,
        g: &mut Graph,
        memory: Var,
        memory_mask: &[bool],
        target_in: &[usize],
        rng: &mut Option<ChaCha8Rng>,
    ) -> Result<Var> {
        let t = target_in.len();
        if t == 0 || t > self.config.max_tgt_len {
            return contract_err(format!("target length {t} outside 1..={}", self.config.max_tgt_len));
        }
        let keep: Vec<bool> = target_in.iter().map(|&i| i != PAD).collect();
        let keep = &keep;
        let causal: Vec<bool> = (0..t).flat_map(|i| (0..t).map(move |j| j <= i && keep[j])).collect();
        let cross: Vec<bool> = (0..t).flat_map(|_| memory_mask.iter().copied()).collect();
        let mut x = self.embed_tokens(g, target_in, rng)?;
        for layer in &self.layout.decoder {
            let h = self.layer_norm(g, x, &layer.ln_self)?;
            let a = self.attention(g, h, h, &layer.self_attn, &causal)?;
            x = self.residual(g, x, a, rng)?;
            let h = self.layer_norm(g, x, &layer.ln_cross)?;
            let a = self.attention(g, h, memory, &layer.cross_attn, &cross)?;
            x = self.residual(g, x, a, rng)?;
            let h = self.layer_norm(g, x, &layer.ln_ff)?;
            let f = self.feed_forward(g, h, &layer.ff)?;
            x = self.residual(g, x, f, rng)?;
        }
        let h = self.layer_norm(g, x, &self.layout.decoder_norm)?;
        let table = g.param(self.layout.embedding);
        g.matmul_t(h, table)
    }

    /// Teacher-forced logits for `target` given `source`, both framed sequences.
    /// Returns logits for positions predicting `target[1..]`, plus those targets.
    pub fn teacher_forced_in(
        &self,
        g: &mut Graph,
        source: &[usize],
        target: &[usize],
        mode: Mode,
    ) -> Result<(Var, Vec<usize>)> {
        if target.len() < 2 {
            return contract_err("target needs at least <bos> and one more token");
        }
        let mut rng = self.dropout_rng(mode);
        let enc = self.encode_with(g, source, &mut rng)?;
        let logits = self.decode_with(g, enc.states, &enc.pad_mask, &target[..target.len() - 1], &mut rng)?;
        Ok((logits, target[1..].to_vec()))
    }

    /// Encoder output as plain tensors.
    pub fn encode(&self, source: &TokenSequence, mode: Mode) -> Result<EncoderOutput> {
        let mut g = Graph::with_params(&self.params);
        let enc = self.encode_in(&mut g, source.ids(), mode)?;
        Ok(EncoderOutput {
            states: g.value(enc.states).clone(),
            pooled: g.value(enc.pooled).data().to_vec(),
            pad_mask: enc.pad_mask,
        })
    }

    /// Pooled eval-mode embedding.
    pub fn embed(&self, source: &TokenSequence) -> Result<Vec<f64>> {
        Ok(self.encode(source, Mode::Eval)?.pooled)
    }

    /// Eval-mode teacher-forced logits `[T-1 × V]`.
    pub fn forward_teacher_forced(&self, source: &TokenSequence, target: &TokenSequence) -> Result<Tensor> {
        let mut g = Graph::with_params(&self.params);
        let (logits, _) = self.teacher_forced_in(&mut g, source.ids(), target.ids(), Mode::Eval)?;
        Ok(g.value(logits).clone())
    }

    /// Next-token logits after `prefix`, given precomputed encoder states.
    pub fn next_logits(&self, encoded: &EncoderOutput, prefix: &[usize]) -> Result<Vec<f64>> {
        let mut g = Graph::with_params(&self.params);
        let memory = g.constant(encoded.states.clone());
        let logits = self.decode_in(&mut g, memory, &encoded.pad_mask, prefix, Mode::Eval)?;
        Ok(g.value(logits).row(prefix.len() - 1).to_vec())
    }

    /// Draw a token id from `probs` (already normalised).
    pub(crate) fn sample_index<R: Rng>(probs: &[f64], rng: &mut R) -> usize {
        let u: f64 = rng.gen();
        let mut acc = 0.0;
        let mut last = 0;
        for (i, &p) in probs.iter().enumerate() {
            if p > 0.0 {
                acc += p;
                last = i;
                if u < acc {
                    return i;
                }
            }
        }
        last
    }
}
