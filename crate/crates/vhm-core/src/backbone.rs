//! Shared transformer encoder and decoder: multi-head attention,
//! position-wise feed-forward sublayers with post-norm residuals, sinusoidal
//! positions and the shared bilingual embedding table.

use alloc::format;
use alloc::string::String;
use alloc::vec;
use alloc::vec::Vec;

use crate::error::VhmError;
use crate::math;
use crate::params::{Binding, ParamGroup, ParamId, ParamStore};
use crate::rng::SeededRng;
use crate::tensor::{Graph, TensorId};
use crate::Result;

pub const LAYER_NORM_EPS: f64 = 1e-6;
const MASK_NEG: f64 = -1e9;

#[derive(Debug, Clone, PartialEq)]
pub struct BackboneConfig {
    pub n_encoder_layers: usize,
    pub n_decoder_layers: usize,
    pub d_model: usize,
    pub n_heads: usize,
    pub d_ff: usize,
    pub max_len: usize,
    pub dropout_rate: f64,
}

impl BackboneConfig {
    pub fn validate(&self) -> Result<()> {
        if self.d_model == 0 || self.d_ff == 0 || self.n_heads == 0 || self.max_len == 0 {
            return Err(VhmError::Config("backbone dimensions must be positive".into()));
        }
        if self.n_encoder_layers == 0 || self.n_decoder_layers == 0 {
            return Err(VhmError::Config("layer counts must be positive".into()));
        }
        if self.d_model % self.n_heads != 0 {
            return Err(VhmError::Config(format!(
                "d_model {} not divisible by n_heads {}",
                self.d_model, self.n_heads
            )));
        }
        if !(0.0..1.0).contains(&self.dropout_rate) {
            return Err(VhmError::Config("dropout_rate must be in [0, 1)".into()));
        }
        Ok(())
    }
}

/// Per-pass forward context: the tape, the bound parameters, and the
/// dropout state. `rng: None` disables dropout (inference / checks).
pub struct Fwd<'a> {
    pub g: &'a mut Graph,
    pub p: &'a Binding,
    pub dropout: f64,
    pub rng: Option<&'a mut SeededRng>,
}

impl<'a> Fwd<'a> {
    pub fn eval(g: &'a mut Graph, p: &'a Binding) -> Self {
        Fwd { g, p, dropout: 0.0, rng: None }
    }

    /// Inverted dropout; identity when disabled.
    fn apply_dropout(&mut self, t: TensorId) -> Result<TensorId> {
        let rate = self.dropout;
        match self.rng.as_deref_mut() {
            Some(rng) if rate > 0.0 => {
                let n = self.g.data(t).len();
                let keep = 1.0 - rate;
                let mask: Vec<f64> = (0..n).map(|_| if rng.bernoulli(keep) { 1.0 / keep } else { 0.0 }).collect();
                let shape = self.g.shape(t).to_vec();
                let m = self.g.leaf(mask, shape, false)?;
                self.g.mul(t, m)
            }
            _ => Ok(t),
        }
    }
}

/// Affine map `x W + b`.
#[derive(Debug, Clone)]
pub struct Linear {
    pub w: ParamId,
    pub b: ParamId,
    pub d_in: usize,
    pub d_out: usize,
}

impl Linear {
    pub fn new(
        store: &mut ParamStore,
        rng: &mut SeededRng,
        name: &str,
        d_in: usize,
        d_out: usize,
        group: ParamGroup,
    ) -> Result<Self> {
        let w = store.xavier(rng, format!("{name}.w"), d_in, d_out, group)?;
        let b = store.zeros(format!("{name}.b"), d_out, group)?;
        Ok(Linear { w, b, d_in, d_out })
    }

    pub fn forward(&self, g: &mut Graph, p: &Binding, x: TensorId) -> Result<TensorId> {
        let y = g.matmul(x, p.id(self.w))?;
        g.add_row(y, p.id(self.b))
    }
}

#[derive(Debug, Clone)]
pub struct LayerNorm {
    pub gamma: ParamId,
    pub beta: ParamId,
}

impl LayerNorm {
    pub fn new(store: &mut ParamStore, name: &str, d: usize, group: ParamGroup) -> Result<Self> {
        let gamma = store.ones(format!("{name}.gamma"), d, group)?;
        let beta = store.zeros(format!("{name}.beta"), d, group)?;
        Ok(LayerNorm { gamma, beta })
    }

    pub fn forward(&self, g: &mut Graph, p: &Binding, x: TensorId) -> Result<TensorId> {
        g.layer_norm(x, p.id(self.gamma), p.id(self.beta), LAYER_NORM_EPS)
    }
}

/// Scaled dot-product attention `softmax(Q K^T / sqrt(d_k) + mask) V`.
///
/// `mask` is an additive `[q, k]` matrix (0 = attend, large negative =
/// blocked). A query row with every key blocked is a contract error.
pub fn scaled_dot_attention(
    fwd: &mut Fwd,
    q: TensorId,
    k: TensorId,
    v: TensorId,
    mask: Option<&[f64]>,
) -> Result<TensorId> {
    let d_k = fwd.g.shape(q)[1];
    let n_q = fwd.g.shape(q)[0];
    let n_k = fwd.g.shape(k)[0];
    if let Some(m) = mask {
        if m.len() != n_q * n_k {
            return Err(VhmError::Contract(format!(
                "attention mask has {} entries for {}x{} scores",
                m.len(),
                n_q,
                n_k
            )));
        }
        for (row, chunk) in m.chunks_exact(n_k).enumerate() {
            if chunk.iter().all(|&x| x <= MASK_NEG / 2.0) {
                return Err(VhmError::Contract(format!("attention query row {row} has no attendable keys")));
            }
        }
    }
    let kt = fwd.g.transpose(k)?;
    let scores = fwd.g.matmul(q, kt)?;
    let mut scores = fwd.g.scale(scores, 1.0 / math::sqrt(d_k as f64));
    if let Some(m) = mask {
        let ml = fwd.g.leaf(m.to_vec(), vec![n_q, n_k], false)?;
        scores = fwd.g.add(scores, ml)?;
    }
    let weights = fwd.g.softmax(scores, 1)?;
    let weights = fwd.apply_dropout(weights)?;
    fwd.g.matmul(weights, v)
}

/// Additive causal mask for self-attention over a length-`n` prefix.
pub fn causal_mask(n: usize) -> Vec<f64> {
    let mut m = vec![0.0; n * n];
    for i in 0..n {
        for j in (i + 1)..n {
            m[i * n + j] = MASK_NEG;
        }
    }
    m
}

#[derive(Debug, Clone)]
pub struct MultiHeadAttention {
    wq: Linear,
    wk: Linear,
    wv: Linear,
    wo: Linear,
    n_heads: usize,
    d_head: usize,
}

impl MultiHeadAttention {
    pub fn new(
        store: &mut ParamStore,
        rng: &mut SeededRng,
        name: &str,
        d_model: usize,
        n_heads: usize,
        group: ParamGroup,
    ) -> Result<Self> {
        Ok(MultiHeadAttention {
            wq: Linear::new(store, rng, &format!("{name}.wq"), d_model, d_model, group)?,
            wk: Linear::new(store, rng, &format!("{name}.wk"), d_model, d_model, group)?,
            wv: Linear::new(store, rng, &format!("{name}.wv"), d_model, d_model, group)?,
            wo: Linear::new(store, rng, &format!("{name}.wo"), d_model, d_model, group)?,
            n_heads,
            d_head: d_model / n_heads,
        })
    }

    pub fn forward(
        &self,
        fwd: &mut Fwd,
        queries: TensorId,
        keys_values: TensorId,
        mask: Option<&[f64]>,
    ) -> Result<TensorId> {
        let q = self.wq.forward(fwd.g, fwd.p, queries)?;
        let k = self.wk.forward(fwd.g, fwd.p, keys_values)?;
        let v = self.wv.forward(fwd.g, fwd.p, keys_values)?;
        let mut ctx = None;
        for h in 0..self.n_heads {
            let start = h * self.d_head;
            let qh = fwd.g.slice_cols(q, start, self.d_head)?;
            let kh = fwd.g.slice_cols(k, start, self.d_head)?;
            let vh = fwd.g.slice_cols(v, start, self.d_head)?;
            let oh = scaled_dot_attention(fwd, qh, kh, vh, mask)?;
            ctx = Some(match ctx {
                None => oh,
                Some(c) => fwd.g.concat(c, oh)?,
            });
        }
        self.wo.forward(fwd.g, fwd.p, ctx.expect("n_heads >= 1"))
    }
}

#[derive(Debug, Clone)]
pub struct FeedForward {
    w1: Linear,
    w2: Linear,
}

impl FeedForward {
    pub fn new(
        store: &mut ParamStore,
        rng: &mut SeededRng,
        name: &str,
        d_model: usize,
        d_ff: usize,
        group: ParamGroup,
    ) -> Result<Self> {
        Ok(FeedForward {
            w1: Linear::new(store, rng, &format!("{name}.w1"), d_model, d_ff, group)?,
            w2: Linear::new(store, rng, &format!("{name}.w2"), d_ff, d_model, group)?,
        })
    }

    pub fn forward(&self, fwd: &mut Fwd, x: TensorId) -> Result<TensorId> {
        let h = self.w1.forward(fwd.g, fwd.p, x)?;
        let h = fwd.g.relu(h);
        self.w2.forward(fwd.g, fwd.p, h)
    }
}

/// Encoder layer: self-attention and feed-forward sublayers, each with a
/// residual connection followed by layer normalization (post-norm).
#[derive(Debug, Clone)]
pub struct EncoderLayer {
    attn: MultiHeadAttention,
    ln1: LayerNorm,
    ffn: FeedForward,
    ln2: LayerNorm,
}

impl EncoderLayer {
    pub fn new(store: &mut ParamStore, rng: &mut SeededRng, name: &str, cfg: &BackboneConfig) -> Result<Self> {
        Ok(EncoderLayer {
            attn: MultiHeadAttention::new(store, rng, &format!("{name}.self_attn"), cfg.d_model, cfg.n_heads, ParamGroup::Generative)?,
            ln1: LayerNorm::new(store, &format!("{name}.ln1"), cfg.d_model, ParamGroup::Generative)?,
            ffn: FeedForward::new(store, rng, &format!("{name}.ffn"), cfg.d_model, cfg.d_ff, ParamGroup::Generative)?,
            ln2: LayerNorm::new(store, &format!("{name}.ln2"), cfg.d_model, ParamGroup::Generative)?,
        })
    }

    pub fn forward(&self, fwd: &mut Fwd, h: TensorId) -> Result<TensorId> {
        let s = self.attn.forward(fwd, h, h, None)?;
        let s = fwd.apply_dropout(s)?;
        let s = fwd.g.add(h, s)?;
        let h1 = self.ln1.forward(fwd.g, fwd.p, s)?;
        let f = self.ffn.forward(fwd, h1)?;
        let f = fwd.apply_dropout(f)?;
        let f = fwd.g.add(h1, f)?;
        self.ln2.forward(fwd.g, fwd.p, f)
    }
}

/// Decoder layer: causal self-attention, cross-attention over the encoder
/// states, then feed-forward; post-norm residuals throughout.
#[derive(Debug, Clone)]
pub struct DecoderLayer {
    self_attn: MultiHeadAttention,
    ln1: LayerNorm,
    cross_attn: MultiHeadAttention,
    ln2: LayerNorm,
    ffn: FeedForward,
    ln3: LayerNorm,
}

impl DecoderLayer {
    pub fn new(store: &mut ParamStore, rng: &mut SeededRng, name: &str, cfg: &BackboneConfig) -> Result<Self> {
        Ok(DecoderLayer {
            self_attn: MultiHeadAttention::new(store, rng, &format!("{name}.self_attn"), cfg.d_model, cfg.n_heads, ParamGroup::Generative)?,
            ln1: LayerNorm::new(store, &format!("{name}.ln1"), cfg.d_model, ParamGroup::Generative)?,
            cross_attn: MultiHeadAttention::new(store, rng, &format!("{name}.cross_attn"), cfg.d_model, cfg.n_heads, ParamGroup::Generative)?,
            ln2: LayerNorm::new(store, &format!("{name}.ln2"), cfg.d_model, ParamGroup::Generative)?,
            ffn: FeedForward::new(store, rng, &format!("{name}.ffn"), cfg.d_model, cfg.d_ff, ParamGroup::Generative)?,
            ln3: LayerNorm::new(store, &format!("{name}.ln3"), cfg.d_model, ParamGroup::Generative)?,
        })
    }

    pub fn forward(&self, fwd: &mut Fwd, h: TensorId, enc_states: TensorId, mask: &[f64]) -> Result<TensorId> {
        let s = self.self_attn.forward(fwd, h, h, Some(mask))?;
        let s = fwd.apply_dropout(s)?;
        let s = fwd.g.add(h, s)?;
        let h1 = self.ln1.forward(fwd.g, fwd.p, s)?;
        let c = self.cross_attn.forward(fwd, h1, enc_states, None)?;
        let c = fwd.apply_dropout(c)?;
        let c = fwd.g.add(h1, c)?;
        let h2 = self.ln2.forward(fwd.g, fwd.p, c)?;
        let f = self.ffn.forward(fwd, h2)?;
        let f = fwd.apply_dropout(f)?;
        let f = fwd.g.add(h2, f)?;
        self.ln3.forward(fwd.g, fwd.p, f)
    }
}

/// Final encoder states for one sequence plus its attendable-position mask.
#[derive(Debug, Clone, Copy)]
pub struct EncoderStates {
    pub states: TensorId,
    pub len: usize,
}

/// Sinusoidal position table `[max_len, d]`.
pub fn sinusoidal_table(max_len: usize, d: usize) -> Vec<f64> {
    let mut pe = vec![0.0; max_len * d];
    for pos in 0..max_len {
        for i in 0..d / 2 {
            let rate = 1.0 / math::powf(10000.0, (2 * i) as f64 / d as f64);
            pe[pos * d + 2 * i] = math::sin(pos as f64 * rate);
            if 2 * i + 1 < d {
                pe[pos * d + 2 * i + 1] = math::cos(pos as f64 * rate);
            }
        }
    }
    pe
}

/// The shared encoder-decoder stack with one bilingual embedding table.
#[derive(Debug, Clone)]
pub struct TransformerCore {
    pub cfg: BackboneConfig,
    pub embedding: ParamId,
    pos: Vec<f64>,
    enc_layers: Vec<EncoderLayer>,
    dec_layers: Vec<DecoderLayer>,
    vocab_size: usize,
}

impl TransformerCore {
    pub fn new(store: &mut ParamStore, rng: &mut SeededRng, cfg: BackboneConfig, vocab_size: usize) -> Result<Self> {
        cfg.validate()?;
        let embedding = store.xavier(rng, String::from("embedding.table"), vocab_size, cfg.d_model, ParamGroup::Generative)?;
        let pos = sinusoidal_table(cfg.max_len, cfg.d_model);
        let enc_layers = (0..cfg.n_encoder_layers)
            .map(|i| EncoderLayer::new(store, rng, &format!("encoder.layer{i}"), &cfg))
            .collect::<Result<Vec<_>>>()?;
        let dec_layers = (0..cfg.n_decoder_layers)
            .map(|i| DecoderLayer::new(store, rng, &format!("decoder.layer{i}"), &cfg))
            .collect::<Result<Vec<_>>>()?;
        Ok(TransformerCore { cfg, embedding, pos, enc_layers, dec_layers, vocab_size })
    }

    pub fn vocab_size(&self) -> usize {
        self.vocab_size
    }

    fn embed_with_pos(&self, fwd: &mut Fwd, tokens: &[u32], what: &'static str) -> Result<TensorId> {
        if tokens.is_empty() {
            return Err(VhmError::EmptySequence(what));
        }
        let d = self.cfg.d_model;
        if tokens.len() > self.cfg.max_len {
            return Err(VhmError::Contract(format!(
                "sequence length {} exceeds max_len {}",
                tokens.len(),
                self.cfg.max_len
            )));
        }
        let e = fwd.g.embed(fwd.p.id(self.embedding), tokens)?;
        let e = fwd.g.scale(e, math::sqrt(d as f64));
        let pos = fwd.g.leaf(self.pos[..tokens.len() * d].to_vec(), vec![tokens.len(), d], false)?;
        fwd.g.add(e, pos)
    }

    /// Run the encoder stack over a token sequence.
    pub fn encode(&self, fwd: &mut Fwd, tokens: &[u32]) -> Result<EncoderStates> {
        let mut h = self.embed_with_pos(fwd, tokens, "encode")?;
        for layer in &self.enc_layers {
            h = layer.forward(fwd, h)?;
        }
        Ok(EncoderStates { states: h, len: tokens.len() })
    }

    /// Run the decoder stack over a teacher-forced prefix; returns the final
    /// hidden states `[prefix_len, d_model]` (before latent fusion and the
    /// output head).
    pub fn decode(&self, fwd: &mut Fwd, prefix: &[u32], enc: &EncoderStates) -> Result<TensorId> {
        let mut h = self.embed_with_pos(fwd, prefix, "decode")?;
        let mask = causal_mask(prefix.len());
        for layer in &self.dec_layers {
            h = layer.forward(fwd, h, enc.states, &mask)?;
        }
        Ok(h)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::Stream;

    fn tiny_cfg() -> BackboneConfig {
        BackboneConfig {
            n_encoder_layers: 2,
            n_decoder_layers: 2,
            d_model: 8,
            n_heads: 2,
            d_ff: 16,
            max_len: 16,
            dropout_rate: 0.0,
        }
    }

    fn build(seed: u64) -> (ParamStore, TransformerCore) {
        let mut store = ParamStore::new();
        let mut rng = SeededRng::new(seed, Stream::Init);
        let core = TransformerCore::new(&mut store, &mut rng, tiny_cfg(), 12).unwrap();
        (store, core)
    }

    #[test]
    fn config_validation() {
        let mut cfg = tiny_cfg();
        cfg.n_heads = 3;
        assert!(cfg.validate().is_err());
        cfg = tiny_cfg();
        cfg.dropout_rate = 1.0;
        assert!(cfg.validate().is_err());
        assert!(tiny_cfg().validate().is_ok());
    }

    #[test]
    fn encode_shape_and_determinism() {
        let (store, core) = build(3);
        let run = |tokens: &[u32]| {
            let mut g = Graph::new();
            let binding = store.bind(&mut g, false);
            let mut fwd = Fwd::eval(&mut g, &binding);
            let enc = core.encode(&mut fwd, tokens).unwrap();
            (g.shape(enc.states).to_vec(), g.data(enc.states).to_vec())
        };
        for len in 1..=16usize {
            let tokens: Vec<u32> = (0..len as u32).map(|i| i % 12).collect();
            let (shape, _) = run(&tokens);
            assert_eq!(shape, vec![len, 8]);
        }
        {
            let mut g = Graph::new();
            let binding = store.bind(&mut g, false);
            let mut fwd = Fwd::eval(&mut g, &binding);
            assert!(core.encode(&mut fwd, &[0u32; 17]).is_err(), "length beyond max_len must error");
        }
        let (_, a) = run(&[4, 5, 6]);
        let (_, b) = run(&[4, 5, 6]);
        assert_eq!(a, b, "dropout-off encode must be bit-identical");
        // Positions matter: permuting tokens changes the states.
        let (_, c) = run(&[6, 5, 4]);
        assert_ne!(a, c);
    }

    #[test]
    fn encode_errors() {
        let (store, core) = build(3);
        let mut g = Graph::new();
        let binding = store.bind(&mut g, false);
        let mut fwd = Fwd::eval(&mut g, &binding);
        assert!(matches!(core.encode(&mut fwd, &[]), Err(VhmError::EmptySequence(_))));
        assert!(matches!(core.encode(&mut fwd, &[99]), Err(VhmError::Vocab { .. })));
    }

    #[test]
    fn attention_single_key_and_uniform() {
        let mut g = Graph::new();
        let binding = ParamStore::new().bind(&mut g, false);
        let mut fwd = Fwd::eval(&mut g, &binding);
        // Single key: the output row is that V row regardless of Q.
        let q = fwd.g.leaf(vec![0.3, -4.0], vec![1, 2], false).unwrap();
        let k = fwd.g.leaf(vec![1.0, 2.0], vec![1, 2], false).unwrap();
        let v = fwd.g.leaf(vec![7.0, 8.0, 9.0], vec![1, 3], false).unwrap();
        let out = scaled_dot_attention(&mut fwd, q, k, v, None).unwrap();
        assert_eq!(fwd.g.data(out), &[7.0, 8.0, 9.0]);

        // Q orthogonal to all keys: uniform weights, output = mean of V rows.
        let q = fwd.g.leaf(vec![0.0, 0.0], vec![1, 2], false).unwrap();
        let k = fwd.g.leaf(vec![1.0, 0.0, 0.0, 1.0, 1.0, 1.0], vec![3, 2], false).unwrap();
        let v = fwd.g.leaf(vec![3.0, 0.0, 6.0, 0.0, 0.0, 9.0], vec![3, 2], false).unwrap();
        let out = scaled_dot_attention(&mut fwd, q, k, v, None).unwrap();
        for (got, want) in fwd.g.data(out).iter().zip([3.0, 3.0]) {
            assert!((got - want).abs() < 1e-12);
        }
    }

    #[test]
    fn attention_hand_logits() {
        // d_k = 1 so logits equal q*k directly; row softmax [0, ln2, 0]
        // gives weights [1/4, 1/2, 1/4].
        let mut g = Graph::new();
        let binding = ParamStore::new().bind(&mut g, false);
        let mut fwd = Fwd::eval(&mut g, &binding);
        let ln2 = core::f64::consts::LN_2;
        let q = fwd.g.leaf(vec![1.0, 2.0], vec![2, 1], false).unwrap();
        let k = fwd.g.leaf(vec![0.0, ln2, 0.0], vec![3, 1], false).unwrap();
        let v = fwd.g.leaf(vec![1.0, 0.0, 0.0, 0.0, 1.0, 0.0, 0.0, 0.0, 1.0], vec![3, 3], false).unwrap();
        let out = scaled_dot_attention(&mut fwd, q, k, v, None).unwrap();
        let row0 = &fwd.g.data(out)[..3];
        for (got, want) in row0.iter().zip([0.25, 0.5, 0.25]) {
            assert!((got - want).abs() < 1e-12, "{row0:?}");
        }
    }

    #[test]
    fn attention_rejects_fully_masked_row() {
        let mut g = Graph::new();
        let binding = ParamStore::new().bind(&mut g, false);
        let mut fwd = Fwd::eval(&mut g, &binding);
        let q = fwd.g.leaf(vec![0.0, 0.0], vec![2, 1], false).unwrap();
        let k = fwd.g.leaf(vec![1.0], vec![1, 1], false).unwrap();
        let v = fwd.g.leaf(vec![1.0], vec![1, 1], false).unwrap();
        let mask = vec![0.0, MASK_NEG];
        let err = scaled_dot_attention(&mut fwd, q, k, v, Some(&mask)).unwrap_err();
        assert!(matches!(err, VhmError::Contract(_)));
    }

    #[test]
    fn decode_is_causal_and_uses_encoder() {
        let (store, core) = build(7);
        let decode_states = |prefix: &[u32], zero_enc: bool| {
            let mut g = Graph::new();
            let binding = store.bind(&mut g, false);
            let mut fwd = Fwd::eval(&mut g, &binding);
            let enc = if zero_enc {
                let states = fwd.g.leaf(vec![0.0; 3 * 8], vec![3, 8], false).unwrap();
                EncoderStates { states, len: 3 }
            } else {
                core.encode(&mut fwd, &[1, 2, 3]).unwrap()
            };
            let out = core.decode(&mut fwd, prefix, &enc).unwrap();
            g.data(out).to_vec()
        };
        let a = decode_states(&[5, 6, 7, 8], false);
        // Editing a suffix token leaves earlier positions bit-identical.
        let b = decode_states(&[5, 6, 9, 8], false);
        assert_eq!(&a[..2 * 8], &b[..2 * 8]);
        assert_ne!(&a[2 * 8..3 * 8], &b[2 * 8..3 * 8]);
        // Cross-attention is live: zeroing encoder states changes output.
        let c = decode_states(&[5, 6, 7, 8], true);
        assert_ne!(a, c);
    }

    #[test]
    fn layer_norm_params_start_as_identity() {
        let (store, _) = build(3);
        let (_, gamma) = store.by_name("encoder.layer0.ln1.gamma").unwrap();
        assert!(gamma.data.iter().all(|&v| v == 1.0));
        let (_, beta) = store.by_name("encoder.layer0.ln1.beta").unwrap();
        assert!(beta.data.iter().all(|&v| v == 0.0));
    }
}
