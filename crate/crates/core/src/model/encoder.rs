use rand::Rng;
use rand_distr::StandardNormal;

use super::config::ModelConfig;
use crate::corpus::LabelSet;
use crate::error::{invalid, shape, Result};
use crate::rng::{self, StreamRng};
use crate::tensor::{HasParams, NodeId, ParamId, ParamStore, Scalar, Tape, Tensor};
use crate::textcodec::Batch;

#[derive(Clone, Debug)]
struct EmbeddingIds {
    token: ParamId,
    position: ParamId,
    x: ParamId,
    y: ParamId,
    width: ParamId,
    height: ParamId,
    norm_gain: ParamId,
    norm_bias: ParamId,
}

#[derive(Clone, Copy, Debug)]
struct Affine {
    weight: ParamId,
    bias: ParamId,
}

#[derive(Clone, Debug)]
struct LayerIds {
    query: Affine,
    key: Affine,
    value: Affine,
    output: Affine,
    attn_norm: Affine,
    inner: Affine,
    outer: Affine,
    ffn_norm: Affine,
}

#[derive(Clone, Debug)]
struct NerHead {
    proj: Affine,
    labels: LabelSet,
}

/// The layout encoder: summed token, sequence-position and six spatial
/// embeddings, a post-norm self-attention stack, an MLM projection and an
/// optional BIO tagging head.
#[derive(Clone, Debug)]
pub struct LayoutEncoder<F: Scalar> {
    config: ModelConfig,
    store: ParamStore<F>,
    emb: EmbeddingIds,
    layers: Vec<LayerIds>,
    mlm: Affine,
    ner: Option<NerHead>,
}

/// Sample from a normal truncated at two standard deviations.
fn trunc_normal(rng: &mut StreamRng, std: f64) -> f64 {
    loop {
        let z: f64 = rng.sample(StandardNormal);
        if z.abs() <= 2.0 {
            return z * std;
        }
    }
}

fn normal_tensor<F: Scalar>(rng: &mut StreamRng, shape: &[usize], std: f64) -> Tensor<F> {
    let n: usize = shape.iter().product();
    Tensor::new(shape.to_vec(), (0..n).map(|_| F::of(trunc_normal(rng, std))).collect())
        .expect("shape matches")
}

pub(crate) fn layer_prefix(i: usize) -> String {
    format!("layers.{i}.")
}

/// Every parameter name and shape the configured model owns, in
/// registration order, without the NER head.
pub fn parameter_layout(cfg: &ModelConfig) -> Vec<(String, Vec<usize>)> {
    let h = cfg.hidden;
    let mut out = vec![
        ("embeddings.token".to_string(), vec![cfg.vocab_size, h]),
        ("embeddings.position".into(), vec![cfg.max_seq, h]),
        ("embeddings.x".into(), vec![cfg.coord_bins, h]),
        ("embeddings.y".into(), vec![cfg.coord_bins, h]),
        ("embeddings.width".into(), vec![cfg.coord_bins, h]),
        ("embeddings.height".into(), vec![cfg.coord_bins, h]),
        ("embeddings.norm.gain".into(), vec![h]),
        ("embeddings.norm.bias".into(), vec![h]),
    ];
    for i in 0..cfg.layers {
        let p = layer_prefix(i);
        for (name, rows, cols) in [
            ("attention.query", h, h),
            ("attention.key", h, h),
            ("attention.value", h, h),
            ("attention.output", h, h),
        ] {
            out.push((format!("{p}{name}.weight"), vec![rows, cols]));
            out.push((format!("{p}{name}.bias"), vec![cols]));
        }
        out.push((format!("{p}attention.norm.gain"), vec![h]));
        out.push((format!("{p}attention.norm.bias"), vec![h]));
        out.push((format!("{p}ffn.inner.weight"), vec![h, cfg.ff_dim]));
        out.push((format!("{p}ffn.inner.bias"), vec![cfg.ff_dim]));
        out.push((format!("{p}ffn.outer.weight"), vec![cfg.ff_dim, h]));
        out.push((format!("{p}ffn.outer.bias"), vec![h]));
        out.push((format!("{p}ffn.norm.gain"), vec![h]));
        out.push((format!("{p}ffn.norm.bias"), vec![h]));
    }
    out.push(("mlm.weight".into(), vec![h, cfg.vocab_size]));
    out.push(("mlm.bias".into(), vec![cfg.vocab_size]));
    out
}

fn initial_value<F: Scalar>(name: &str, shape: &[usize], rng: &mut StreamRng, std: f64) -> Tensor<F> {
    if name.ends_with(".gain") {
        Tensor::filled(shape, F::one())
    } else if name.ends_with(".bias") {
        Tensor::zeros(shape)
    } else {
        normal_tensor(rng, shape, std)
    }
}

impl<F: Scalar> LayoutEncoder<F> {
    /// Fresh weights drawn from the `(seed, "init")` stream.
    pub fn new(config: ModelConfig, seed: u64) -> Result<Self> {
        config.validate()?;
        let mut r = rng::stream(seed, "init", 0);
        let std = config.init_std;
        Self::assemble(config, |name, shape| Ok(initial_value(name, shape, &mut r, std)))
    }

    /// Build from named tensors; `fetch` must supply every parameter of the
    /// configured layout.
    pub(crate) fn assemble(
        config: ModelConfig,
        mut fetch: impl FnMut(&str, &[usize]) -> Result<Tensor<F>>,
    ) -> Result<Self> {
        config.validate()?;
        let mut store = ParamStore::new();
        let mut ids = Vec::new();
        for (name, shp) in parameter_layout(&config) {
            let t = fetch(&name, &shp)?;
            if t.shape() != shp.as_slice() {
                return Err(shape(format!("{name}: expected {shp:?}, got {:?}", t.shape())));
            }
            ids.push(store.add(name, t)?);
        }
        let mut it = ids.into_iter();
        let mut next = || it.next().expect("layout length");
        let emb = EmbeddingIds {
            token: next(),
            position: next(),
            x: next(),
            y: next(),
            width: next(),
            height: next(),
            norm_gain: next(),
            norm_bias: next(),
        };
        let mut affine = || Affine { weight: next(), bias: next() };
        let mut layers = Vec::with_capacity(config.layers);
        for _ in 0..config.layers {
            layers.push(LayerIds {
                query: affine(),
                key: affine(),
                value: affine(),
                output: affine(),
                attn_norm: affine(),
                inner: affine(),
                outer: affine(),
                ffn_norm: affine(),
            });
        }
        let mlm = affine();
        Ok(Self { config, store, emb, layers, mlm, ner: None })
    }

    pub fn config(&self) -> &ModelConfig {
        &self.config
    }

    pub fn params(&self) -> &ParamStore<F> {
        &self.store
    }

    pub fn params_mut(&mut self) -> &mut ParamStore<F> {
        &mut self.store
    }

    pub fn ner_labels(&self) -> Option<&LabelSet> {
        self.ner.as_ref().map(|h| &h.labels)
    }

    /// Replace the tagging head with fresh weights from `(seed, "head-init")`.
    pub fn init_ner_head(&mut self, labels: &LabelSet, seed: u64) -> Result<()> {
        let mut r = rng::stream(seed, "head-init", 0);
        let t = labels.num_tags();
        let w = normal_tensor(&mut r, &[self.config.hidden, t], self.config.init_std);
        self.set_ner_head(labels.clone(), w, Tensor::zeros(&[t]))
    }

    pub(crate) fn set_ner_head(&mut self, labels: LabelSet, weight: Tensor<F>, bias: Tensor<F>) -> Result<()> {
        let t = labels.num_tags();
        if weight.shape() != [self.config.hidden, t] || bias.shape() != [t] {
            return Err(shape(format!(
                "ner head {:?}/{:?} for hidden {} and {t} tags",
                weight.shape(),
                bias.shape(),
                self.config.hidden
            )));
        }
        match &self.ner {
            Some(head) if head.labels.num_tags() == t => {
                *self.store.get_mut(head.proj.weight).value_mut() = weight;
                *self.store.get_mut(head.proj.bias).value_mut() = bias;
                self.ner = Some(NerHead { proj: head.proj, labels });
            }
            Some(_) => {
                // Rebuild so the store has no stale head of the wrong width.
                let mut fresh = Self::assemble(self.config.clone(), |name, _| {
                    let id = self.store.id(name).expect("layout name");
                    Ok(self.store.value(id).clone())
                })?;
                fresh.ner = None;
                fresh.add_head(labels, weight, bias)?;
                *self = fresh;
            }
            None => self.add_head(labels, weight, bias)?,
        }
        Ok(())
    }

    fn add_head(&mut self, labels: LabelSet, weight: Tensor<F>, bias: Tensor<F>) -> Result<()> {
        let proj = Affine { weight: self.store.add("ner.weight", weight)?, bias: self.store.add("ner.bias", bias)? };
        self.ner = Some(NerHead { proj, labels });
        Ok(())
    }

    fn check_batch(&self, batch: &Batch) -> Result<()> {
        let n = batch.tokens();
        if batch.token_ids.len() != n || batch.boxes.len() != n || batch.positions.len() != n || batch.attn_mask.len() != n {
            return Err(shape("batch arrays disagree with batch*seq"));
        }
        if batch.seq > self.config.max_seq {
            return Err(invalid(format!("sequence length {} exceeds max_seq {}", batch.seq, self.config.max_seq)));
        }
        if let Some(&p) = batch.positions.iter().find(|&&p| p >= self.config.max_seq) {
            return Err(invalid(format!("position {p} exceeds max_seq {}", self.config.max_seq)));
        }
        if let Some(&t) = batch.token_ids.iter().find(|&&t| t >= self.config.vocab_size) {
            return Err(invalid(format!("token id {t} outside vocabulary of {}", self.config.vocab_size)));
        }
        if let Some(b) = batch.boxes.iter().find(|b| !b.is_valid()) {
            return Err(invalid(format!("coordinate out of range in {b:?}")));
        }
        Ok(())
    }

    fn affine(&self, tape: &mut Tape<F>, x: NodeId, a: Affine) -> Result<NodeId> {
        let w = tape.param(&self.store, a.weight);
        let b = tape.param(&self.store, a.bias);
        let y = tape.matmul(x, w)?;
        tape.add_bias(y, b)
    }

    fn norm(&self, tape: &mut Tape<F>, x: NodeId, a: Affine) -> Result<NodeId> {
        let g = tape.param(&self.store, a.weight);
        let b = tape.param(&self.store, a.bias);
        tape.layer_norm(x, g, b, F::of(self.config.layer_norm_eps))
    }

    fn drop(&self, tape: &mut Tape<F>, x: NodeId, rng: Option<&mut StreamRng>) -> Result<NodeId> {
        match rng {
            Some(r) if self.config.dropout > 0.0 => tape.dropout(x, self.config.dropout, r),
            _ => Ok(x),
        }
    }

    /// Embedding sum, layer norm and dropout: `[batch*seq, hidden]`.
    /// Passing an rng turns on dropout.
    pub fn embed(&self, tape: &mut Tape<F>, batch: &Batch, rng: Option<&mut StreamRng>) -> Result<NodeId> {
        self.check_batch(batch)?;
        let e = &self.emb;
        let col = |f: fn(&crate::corpus::BBox) -> u32| -> Vec<usize> {
            batch.boxes.iter().map(|b| f(b) as usize).collect()
        };
        let lookups: [(ParamId, Vec<usize>); 8] = [
            (e.token, batch.token_ids.clone()),
            (e.position, batch.positions.clone()),
            (e.x, col(|b| b.x0)),
            (e.x, col(|b| b.x1)),
            (e.y, col(|b| b.y0)),
            (e.y, col(|b| b.y1)),
            (e.width, col(|b| b.width())),
            (e.height, col(|b| b.height())),
        ];
        let mut sum: Option<NodeId> = None;
        for (table, idx) in lookups {
            let t = tape.param(&self.store, table);
            let g = tape.gather(t, &idx)?;
            sum = Some(match sum {
                None => g,
                Some(s) => tape.add(s, g)?,
            });
        }
        let x = self.norm(tape, sum.expect("eight lookups"), Affine { weight: e.norm_gain, bias: e.norm_bias })?;
        self.drop(tape, x, rng)
    }

    /// One encoder layer over `[batch*seq, hidden]`.
    pub fn layer(
        &self,
        tape: &mut Tape<F>,
        x: NodeId,
        index: usize,
        batch: &Batch,
        mut rng: Option<&mut StreamRng>,
    ) -> Result<NodeId> {
        let l = self.layers.get(index).ok_or_else(|| invalid(format!("layer {index} out of range")))?;
        let (b, s, h) = (batch.batch, batch.seq, self.config.heads);
        if tape.shape(x) != [b * s, self.config.hidden] {
            return Err(shape(format!("layer input {:?} for batch {b}x{s}", tape.shape(x))));
        }
        let q = self.affine(tape, x, l.query)?;
        let k = self.affine(tape, x, l.key)?;
        let v = self.affine(tape, x, l.value)?;
        let q = tape.split_heads(q, b, s, h)?;
        let k = tape.split_heads(k, b, s, h)?;
        let v = tape.split_heads(v, b, s, h)?;
        let scores = tape.bmm(q, k, true)?;
        let scores = tape.scale(scores, F::one() / F::of(self.config.head_dim() as f64).sqrt())?;
        let probs = tape.masked_softmax(scores, &batch.attn_mask, h)?;
        let ctx = tape.bmm(probs, v, false)?;
        let ctx = tape.merge_heads(ctx, b, s, h)?;
        let attn = self.affine(tape, ctx, l.output)?;
        let attn = self.drop(tape, attn, rng.as_deref_mut())?;
        let x = tape.add(x, attn)?;
        let x = self.norm(tape, x, l.attn_norm)?;

        let inner = self.affine(tape, x, l.inner)?;
        let inner = tape.gelu(inner)?;
        let out = self.affine(tape, inner, l.outer)?;
        let out = self.drop(tape, out, rng)?;
        let x2 = tape.add(x, out)?;
        self.norm(tape, x2, l.ffn_norm)
    }

    /// Embeddings followed by the bottom `k_layers` layers (all by default).
    pub fn encode(
        &self,
        tape: &mut Tape<F>,
        batch: &Batch,
        k_layers: Option<usize>,
        mut rng: Option<&mut StreamRng>,
    ) -> Result<NodeId> {
        let k = self.check_depth(k_layers)?;
        let mut x = self.embed(tape, batch, rng.as_deref_mut())?;
        for i in 0..k {
            x = self.layer(tape, x, i, batch, rng.as_deref_mut())?;
        }
        Ok(x)
    }

    pub fn check_depth(&self, k_layers: Option<usize>) -> Result<usize> {
        let k = k_layers.unwrap_or(self.config.layers);
        if k == 0 || k > self.config.layers {
            return Err(invalid(format!("k_layers {k} outside 1..={}", self.config.layers)));
        }
        Ok(k)
    }

    /// Vocabulary logits `[rows, vocab]` for hidden states `[rows, hidden]`.
    pub fn mlm_head(&self, tape: &mut Tape<F>, hidden: NodeId) -> Result<NodeId> {
        self.check_hidden(tape, hidden)?;
        self.affine(tape, hidden, self.mlm)
    }

    /// Tag logits `[rows, tags]`.
    pub fn ner_head(&self, tape: &mut Tape<F>, hidden: NodeId) -> Result<NodeId> {
        self.check_hidden(tape, hidden)?;
        let head = self.ner.as_ref().ok_or_else(|| invalid("model has no tagging head"))?;
        self.affine(tape, hidden, head.proj)
    }

    fn check_hidden(&self, tape: &Tape<F>, hidden: NodeId) -> Result<()> {
        if tape.value(hidden).cols() != self.config.hidden {
            return Err(shape(format!("hidden states {:?} for width {}", tape.shape(hidden), self.config.hidden)));
        }
        Ok(())
    }

    /// Inference-mode contextual embeddings `[batch, seq, hidden]`.
    pub fn forward(&self, batch: &Batch, k_layers: Option<usize>) -> Result<Tensor<F>> {
        let mut tape = Tape::no_grad();
        let x = self.encode(&mut tape, batch, k_layers, None)?;
        tape.value(x).clone().reshaped(&[batch.batch, batch.seq, self.config.hidden])
    }

    /// `[batch, seq, vocab]` logits for `[batch, seq, hidden]` states.
    pub fn mlm_logits(&self, hidden: &Tensor<F>) -> Result<Tensor<F>> {
        self.apply_head(hidden, |m, t, h| m.mlm_head(t, h))
    }

    /// `[batch, seq, tags]` logits for `[batch, seq, hidden]` states.
    pub fn ner_logits(&self, hidden: &Tensor<F>) -> Result<Tensor<F>> {
        self.apply_head(hidden, |m, t, h| m.ner_head(t, h))
    }

    fn apply_head(
        &self,
        hidden: &Tensor<F>,
        head: impl Fn(&Self, &mut Tape<F>, NodeId) -> Result<NodeId>,
    ) -> Result<Tensor<F>> {
        let s = hidden.shape().to_vec();
        if s.len() != 3 {
            return Err(shape(format!("expected [batch, seq, hidden], got {s:?}")));
        }
        let mut tape = Tape::no_grad();
        let h = tape.constant(hidden.clone().reshaped(&[s[0] * s[1], s[2]])?)?;
        let out = head(self, &mut tape, h)?;
        let c = tape.value(out).cols();
        tape.value(out).clone().reshaped(&[s[0], s[1], c])
    }

    /// Convert weights to another precision.
    pub fn cast<G: Scalar>(&self) -> LayoutEncoder<G> {
        let mut out = LayoutEncoder::<G>::assemble(self.config.clone(), |name, _| {
            Ok(self.store.value(self.store.id(name).expect("layout name")).cast())
        })
        .expect("same layout");
        if let Some(head) = &self.ner {
            out.set_ner_head(
                head.labels.clone(),
                self.store.value(head.proj.weight).cast(),
                self.store.value(head.proj.bias).cast(),
            )
            .expect("same head shape");
        }
        out
    }
}

impl<F: Scalar> HasParams<F> for LayoutEncoder<F> {
    fn params(&self) -> &ParamStore<F> {
        &self.store
    }

    fn params_mut(&mut self) -> &mut ParamStore<F> {
        &mut self.store
    }
}
