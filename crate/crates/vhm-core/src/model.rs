//! The full variational hierarchical model: shared encoder, latent
//! hierarchy, decoder with latent fusion, training-path loss assembly,
//! prior-path inference, and the ablation variants.

use alloc::format;
use alloc::string::String;
use alloc::vec;
use alloc::vec::Vec;
use core::sync::atomic::{AtomicU64, Ordering};

use crate::backbone::{BackboneConfig, EncoderStates, Fwd, Linear, TransformerCore};
use crate::data::{TaskExample, BOS_ID, EOS_ID};
use crate::error::VhmError;
use crate::eval::{beam_search, DecodeConfig, NextTokenScorer};
use crate::latent::{kl_divergence, sample, DiagonalGaussian, LatentModule, LatentSample, LatentSource};
use crate::math;
use crate::params::{Binding, ParamGroup, ParamStore};
use crate::rng::{SeededRng, Stream};
use crate::tensor::{Graph, TensorId};
use crate::Result;

/// Which latent variables to remove, mirroring the ablation table.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub struct AblationFlags {
    pub drop_z_mt: bool,
    pub drop_z_ms: bool,
    pub drop_global: bool,
    pub flat_hierarchy: bool,
}

impl AblationFlags {
    pub fn validate(&self) -> Result<()> {
        if self.drop_global && self.flat_hierarchy {
            return Err(VhmError::Config(
                "drop_global and flat_hierarchy are mutually exclusive".into(),
            ));
        }
        Ok(())
    }
}

/// Model family member: the hierarchical latent model (with optional
/// ablations) or the no-latent multi-task baseline.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ModelVariant {
    Vhm(AblationFlags),
    NoLatentBaseline,
}

impl ModelVariant {
    pub fn full() -> Self {
        ModelVariant::Vhm(AblationFlags::default())
    }

    pub fn validate(&self) -> Result<()> {
        match self {
            ModelVariant::Vhm(f) => f.validate(),
            ModelVariant::NoLatentBaseline => Ok(()),
        }
    }

    /// Stable label used in results tables and config files.
    pub fn label(&self) -> String {
        match self {
            ModelVariant::NoLatentBaseline => "baseline".into(),
            ModelVariant::Vhm(f) => {
                let mut s = String::from("vhm");
                if f.drop_z_mt {
                    s.push_str("-zmt");
                }
                if f.drop_z_ms {
                    s.push_str("-zms");
                }
                if f.drop_global {
                    s.push_str("-zcls");
                }
                if f.flat_hierarchy {
                    s.push_str("-flat");
                }
                s
            }
        }
    }

    pub fn from_label(label: &str) -> Result<Self> {
        if label == "baseline" {
            return Ok(ModelVariant::NoLatentBaseline);
        }
        let Some(rest) = label.strip_prefix("vhm") else {
            return Err(VhmError::Config(format!("unknown model variant {label:?}")));
        };
        let mut flags = AblationFlags::default();
        for part in rest.split('-').filter(|p| !p.is_empty()) {
            match part {
                "zmt" => flags.drop_z_mt = true,
                "zms" => flags.drop_z_ms = true,
                "zcls" => flags.drop_global = true,
                "flat" => flags.flat_hierarchy = true,
                _ => return Err(VhmError::Config(format!("unknown model variant {label:?}"))),
            }
        }
        flags.validate()?;
        Ok(ModelVariant::Vhm(flags))
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ModelConfig {
    pub backbone: BackboneConfig,
    pub latent_dim: usize,
    pub vocab_size: usize,
    pub variant: ModelVariant,
}

impl ModelConfig {
    pub fn validate(&self) -> Result<()> {
        self.backbone.validate()?;
        self.variant.validate()?;
        if self.latent_dim == 0 {
            return Err(VhmError::Config("latent_dim must be positive".into()));
        }
        if self.vocab_size == 0 {
            return Err(VhmError::Config("vocab_size must be positive".into()));
        }
        Ok(())
    }
}

/// Per-component loss values for one step. `total` is assembled in the
/// graph with the same association order as [`LossBreakdown::recompose`],
/// so the identity is bit-exact.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LossBreakdown {
    pub nll_mt: f64,
    pub nll_ms: f64,
    pub nll_cls: f64,
    pub kl_mt: f64,
    pub kl_ms: f64,
    pub kl_cls: f64,
    pub kl_weight: f64,
    pub total: f64,
}

impl LossBreakdown {
    pub fn recompose(&self) -> f64 {
        ((self.nll_mt + self.nll_ms) + self.nll_cls)
            + self.kl_weight * ((self.kl_mt + self.kl_ms) + self.kl_cls)
    }

    pub fn components(&self) -> [(&'static str, f64); 6] {
        [
            ("nll_mt", self.nll_mt),
            ("nll_ms", self.nll_ms),
            ("nll_cls", self.nll_cls),
            ("kl_mt", self.kl_mt),
            ("kl_ms", self.kl_ms),
            ("kl_cls", self.kl_cls),
        ]
    }

    pub fn check_finite(&self) -> Result<()> {
        for (name, v) in self.components() {
            if !v.is_finite() {
                return Err(VhmError::Numerics(format!("loss component {name} is non-finite ({v})")));
            }
        }
        if !self.total.is_finite() {
            return Err(VhmError::Numerics(format!("total loss is non-finite ({})", self.total)));
        }
        Ok(())
    }
}

/// One aligned mini-batch: the i-th examples of each task form a triple.
#[derive(Debug, Clone, Copy)]
pub struct TrainBatch<'a> {
    pub mt: &'a [TaskExample],
    pub ms: &'a [TaskExample],
    pub cls: &'a [TaskExample],
}

/// Caller-supplied reparameterization noise for one example triple.
#[derive(Debug, Clone)]
pub struct TripleNoise {
    pub mt: Vec<f64>,
    pub ms: Vec<f64>,
    pub cls: Vec<f64>,
}

impl TripleNoise {
    pub fn zeros(latent_dim: usize) -> Self {
        TripleNoise { mt: vec![0.0; latent_dim], ms: vec![0.0; latent_dim], cls: vec![0.0; latent_dim] }
    }

    pub fn draw(rng: &mut SeededRng, latent_dim: usize) -> Self {
        TripleNoise {
            mt: rng.normal_vec(latent_dim),
            ms: rng.normal_vec(latent_dim),
            cls: rng.normal_vec(latent_dim),
        }
    }
}

/// Which tasks contribute to the step loss (joint training vs strict
/// rotation).
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum TaskSelection {
    All,
    Only(crate::data::Task),
}

impl TaskSelection {
    fn covers(&self, task: crate::data::Task) -> bool {
        match self {
            TaskSelection::All => true,
            TaskSelection::Only(t) => *t == task,
        }
    }
}

/// Result of a training forward pass; the graph is ready for backward.
pub struct TrainForward {
    pub graph: Graph,
    pub binding: Binding,
    pub breakdown: LossBreakdown,
    pub total: TensorId,
}

/// Prior-path audit trail of one inference call.
#[derive(Debug, Clone)]
pub struct InferAudit {
    pub latent_sources: Vec<LatentSource>,
    pub recognition_calls: u64,
}

pub struct VhmModel {
    pub cfg: ModelConfig,
    pub store: ParamStore,
    core: TransformerCore,
    prior_mt: Option<LatentModule>,
    posterior_mt: Option<LatentModule>,
    prior_ms: Option<LatentModule>,
    posterior_ms: Option<LatentModule>,
    prior_cls: Option<LatentModule>,
    posterior_cls: Option<LatentModule>,
    fusion: Linear,
    output: Linear,
    recognition_calls: AtomicU64,
}

impl VhmModel {
    pub fn new(cfg: ModelConfig, seed: u64) -> Result<Self> {
        cfg.validate()?;
        let mut store = ParamStore::new();
        let mut rng = SeededRng::new(seed, Stream::Init);
        let core = TransformerCore::new(&mut store, &mut rng, cfg.backbone.clone(), cfg.vocab_size)?;

        let d = cfg.backbone.d_model;
        let l = cfg.latent_dim;
        let (has_mt, has_ms, has_cls, flat) = match cfg.variant {
            ModelVariant::NoLatentBaseline => (false, false, false, false),
            ModelVariant::Vhm(f) => (!f.drop_z_mt, !f.drop_z_ms, !f.drop_global, f.flat_hierarchy),
        };

        let latent_pair = |store: &mut ParamStore,
                               rng: &mut SeededRng,
                               name: &str,
                               prior_in: usize|
         -> Result<(LatentModule, LatentModule)> {
            let prior = LatentModule::new(store, rng, &format!("latent.prior_{name}"), prior_in, d, l, ParamGroup::Generative)?;
            let posterior = LatentModule::new(
                store,
                rng,
                &format!("latent.posterior_{name}"),
                prior_in + d,
                d,
                l,
                ParamGroup::Recognition,
            )?;
            Ok((prior, posterior))
        };

        let (prior_mt, posterior_mt) = if has_mt {
            let (p, q) = latent_pair(&mut store, &mut rng, "mt", d)?;
            (Some(p), Some(q))
        } else {
            (None, None)
        };
        let (prior_ms, posterior_ms) = if has_ms {
            let (p, q) = latent_pair(&mut store, &mut rng, "ms", d)?;
            (Some(p), Some(q))
        } else {
            (None, None)
        };
        let (prior_cls, posterior_cls) = if has_cls {
            let locals = if flat { 0 } else { usize::from(has_mt) + usize::from(has_ms) };
            let (p, q) = latent_pair(&mut store, &mut rng, "cls", d + l * locals)?;
            (Some(p), Some(q))
        } else {
            (None, None)
        };

        let n_slots = match cfg.variant {
            ModelVariant::NoLatentBaseline => 0,
            ModelVariant::Vhm(f) => {
                if f.drop_global {
                    2
                } else if f.flat_hierarchy {
                    3
                } else {
                    1
                }
            }
        };
        let fusion = Linear::new(&mut store, &mut rng, "fusion.proj", d + n_slots * l, d, ParamGroup::Generative)?;
        let output = Linear::new(&mut store, &mut rng, "output.head", d, cfg.vocab_size, ParamGroup::Generative)?;

        Ok(VhmModel {
            cfg,
            store,
            core,
            prior_mt,
            posterior_mt,
            prior_ms,
            posterior_ms,
            prior_cls,
            posterior_cls,
            fusion,
            output,
            recognition_calls: AtomicU64::new(0),
        })
    }

    pub fn has_z_mt(&self) -> bool {
        self.prior_mt.is_some()
    }

    pub fn has_z_ms(&self) -> bool {
        self.prior_ms.is_some()
    }

    pub fn has_z_cls(&self) -> bool {
        self.prior_cls.is_some()
    }

    /// Latent slots in the fusion projection input, in order.
    fn fusion_slots(&self) -> usize {
        (self.fusion.d_in - self.cfg.backbone.d_model) / self.cfg.latent_dim.max(1)
    }

    /// Conditioning width of the global prior network (test hook).
    pub fn prior_cls_input_width(&self) -> Option<usize> {
        self.prior_cls.as_ref().map(|m| m.d_in)
    }

    pub fn posterior_cls_input_width(&self) -> Option<usize> {
        self.posterior_cls.as_ref().map(|m| m.d_in)
    }

    /// Total recognition-network invocations since construction.
    pub fn recognition_calls(&self) -> u64 {
        self.recognition_calls.load(Ordering::Relaxed)
    }

    fn posterior_gaussian(&self, module: &LatentModule, fwd: &mut Fwd, input: TensorId) -> Result<DiagonalGaussian> {
        self.recognition_calls.fetch_add(1, Ordering::Relaxed);
        module.gaussian(fwd, input)
    }

    /// Encode a sequence and mean-pool the final states.
    fn encode_pooled(&self, fwd: &mut Fwd, tokens: &[u32]) -> Result<(EncoderStates, TensorId)> {
        let enc = self.core.encode(fwd, tokens)?;
        let mask = vec![true; enc.len];
        let pooled = fwd.g.mean_pool(enc.states, &mask)?;
        Ok((enc, pooled))
    }

    /// `o_t = tanh(W_p [h_t; z] + b_p)` with `z` broadcast to every step.
    /// `z` must be `None` exactly when the variant has no latent slots.
    pub fn fuse_latent(&self, g: &mut Graph, p: &Binding, h_top: TensorId, z: Option<TensorId>) -> Result<TensorId> {
        let rows = g.shape(h_top)[0];
        let fused = match z {
            None => {
                if self.fusion_slots() != 0 {
                    return Err(VhmError::Contract("variant expects a fused latent vector".into()));
                }
                h_top
            }
            Some(z) => {
                let want = self.fusion_slots() * self.cfg.latent_dim;
                if g.data(z).len() != want {
                    return Err(VhmError::shape("fuse_latent", g.shape(z), &[want]));
                }
                let tiled = g.tile_rows(z, rows)?;
                g.concat(h_top, tiled)?
            }
        };
        let projected = self.fusion.forward(g, p, fused)?;
        Ok(g.tanh(projected))
    }

    /// Assemble the per-task slot vector fused into the decoder. Missing
    /// slots are zero-padded so one projection serves every task.
    fn slot_vector(
        &self,
        g: &mut Graph,
        task: crate::data::Task,
        z_mt: Option<TensorId>,
        z_ms: Option<TensorId>,
        z_cls: Option<TensorId>,
    ) -> Result<Option<TensorId>> {
        use crate::data::Task;
        let l = self.cfg.latent_dim;
        let zero = |g: &mut Graph| g.leaf(vec![0.0; l], vec![l], false);
        let pick = |g: &mut Graph, z: Option<TensorId>| -> Result<TensorId> {
            match z {
                Some(z) => Ok(z),
                None => zero(g),
            }
        };
        let slots: Vec<TensorId> = match self.cfg.variant {
            ModelVariant::NoLatentBaseline => return Ok(None),
            ModelVariant::Vhm(f) if f.drop_global => {
                // [z_mt, z_ms]; each task contributes the locals it has.
                match task {
                    Task::Mt => vec![pick(g, z_mt)?, zero(g)?],
                    Task::Ms => vec![zero(g)?, pick(g, z_ms)?],
                    Task::Cls => vec![pick(g, z_mt)?, pick(g, z_ms)?],
                }
            }
            ModelVariant::Vhm(f) if f.flat_hierarchy => {
                // [z_cls, z_mt, z_ms].
                match task {
                    Task::Mt => vec![zero(g)?, pick(g, z_mt)?, zero(g)?],
                    Task::Ms => vec![zero(g)?, zero(g)?, pick(g, z_ms)?],
                    Task::Cls => vec![pick(g, z_cls)?, pick(g, z_mt)?, pick(g, z_ms)?],
                }
            }
            ModelVariant::Vhm(_) => {
                // Single slot carrying the task's own latent.
                let own = match task {
                    Task::Mt => z_mt,
                    Task::Ms => z_ms,
                    Task::Cls => z_cls,
                };
                vec![pick(g, own)?]
            }
        };
        let mut combined = slots[0];
        for &s in &slots[1..] {
            combined = g.concat(combined, s)?;
        }
        Ok(Some(combined))
    }

    /// Teacher-forced token-mean negative log-likelihood of `target`.
    fn decode_nll(
        &self,
        fwd: &mut Fwd,
        enc: &EncoderStates,
        target: &[u32],
        slot: Option<TensorId>,
    ) -> Result<TensorId> {
        if target.is_empty() {
            return Err(VhmError::EmptySequence("decode target"));
        }
        let mut input = Vec::with_capacity(target.len() + 1);
        input.push(BOS_ID);
        input.extend_from_slice(target);
        let mut labels = target.to_vec();
        labels.push(EOS_ID);
        let states = self.core.decode(fwd, &input, enc)?;
        let fused = self.fuse_latent(fwd.g, fwd.p, states, slot)?;
        let logits = self.output.forward(fwd.g, fwd.p, fused)?;
        fwd.g.cross_entropy_mean(logits, &labels)
    }

    /// Training objective for one aligned mini-batch: three KL terms
    /// (posterior-first) weighted by `lambda` plus three token-mean
    /// reconstruction terms, each averaged over the batch.
    ///
    /// Local latents are sampled from the posteriors; the global prior and
    /// posterior both condition on those posterior-path samples.
    pub fn forward_train(
        &self,
        batch: &TrainBatch,
        noise: &[TripleNoise],
        lambda: f64,
        mut dropout_rng: Option<&mut SeededRng>,
        selection: TaskSelection,
    ) -> Result<TrainForward> {
        use crate::data::Task;
        if !(0.0..=1.0).contains(&lambda) {
            return Err(VhmError::Contract(format!("kl weight {lambda} outside [0, 1]")));
        }
        let b = batch.mt.len();
        if b == 0 || batch.ms.len() != b || batch.cls.len() != b || noise.len() != b {
            return Err(VhmError::Data(format!(
                "misaligned batch: mt {}, ms {}, cls {}, noise {}",
                batch.mt.len(),
                batch.ms.len(),
                batch.cls.len(),
                noise.len()
            )));
        }

        let mut graph = Graph::new();
        let binding = self.store.bind(&mut graph, true);
        let dropout = if dropout_rng.is_some() { self.cfg.backbone.dropout_rate } else { 0.0 };
        let mut fwd = Fwd { g: &mut graph, p: &binding, dropout, rng: dropout_rng.as_deref_mut() };

        // Per-component accumulators over the batch.
        let mut acc: [Option<TensorId>; 6] = [None; 6]; // nll mt/ms/cls, kl mt/ms/cls

        let needs_locals_for_cls = selection.covers(Task::Cls) && self.has_z_cls() && !self.flat_hierarchy();

        for i in 0..b {
            let mt_ex = &batch.mt[i];
            let ms_ex = &batch.ms[i];
            let cls_ex = &batch.cls[i];

            // MT side: encode + latents when the loss or the hierarchy
            // needs them.
            let mt_active = selection.covers(Task::Mt);
            let mut z_mt: Option<LatentSample> = None;
            let mut enc_mt: Option<EncoderStates> = None;
            if (mt_active || (needs_locals_for_cls && self.has_z_mt())) && !mt_ex.source.is_empty() {
                let (enc, h_x) = self.encode_pooled(&mut fwd, &mt_ex.source)?;
                enc_mt = Some(enc);
                if let (Some(prior), Some(post)) = (&self.prior_mt, &self.posterior_mt) {
                    let (_, h_y) = self.encode_pooled(&mut fwd, &mt_ex.target)?;
                    let cond_q = fwd.g.concat(h_x, h_y)?;
                    let q = self.posterior_gaussian(post, &mut fwd, cond_q)?;
                    let s = sample(fwd.g, &q, &noise[i].mt, LatentSource::PosteriorPath)?;
                    if mt_active {
                        let p = prior.gaussian(&mut fwd, h_x)?;
                        let kl = kl_divergence(fwd.g, &q, &p)?;
                        accumulate(fwd.g, &mut acc[3], kl)?;
                    }
                    z_mt = Some(s);
                }
            } else if mt_ex.source.is_empty() {
                return Err(VhmError::EmptySequence("mt source"));
            }

            // MS side, symmetric.
            let ms_active = selection.covers(Task::Ms);
            let mut z_ms: Option<LatentSample> = None;
            let mut enc_ms: Option<EncoderStates> = None;
            if (ms_active || (needs_locals_for_cls && self.has_z_ms())) && !ms_ex.source.is_empty() {
                let (enc, h_x) = self.encode_pooled(&mut fwd, &ms_ex.source)?;
                enc_ms = Some(enc);
                if let (Some(prior), Some(post)) = (&self.prior_ms, &self.posterior_ms) {
                    let (_, h_y) = self.encode_pooled(&mut fwd, &ms_ex.target)?;
                    let cond_q = fwd.g.concat(h_x, h_y)?;
                    let q = self.posterior_gaussian(post, &mut fwd, cond_q)?;
                    let s = sample(fwd.g, &q, &noise[i].ms, LatentSource::PosteriorPath)?;
                    if ms_active {
                        let p = prior.gaussian(&mut fwd, h_x)?;
                        let kl = kl_divergence(fwd.g, &q, &p)?;
                        accumulate(fwd.g, &mut acc[4], kl)?;
                    }
                    z_ms = Some(s);
                }
            } else if ms_ex.source.is_empty() {
                return Err(VhmError::EmptySequence("ms source"));
            }

            // MT / MS reconstruction with their posterior samples fused.
            if mt_active {
                let slot = self.slot_vector(fwd.g, Task::Mt, z_mt.map(|s| s.z), None, None)?;
                let nll = self.decode_nll(&mut fwd, enc_mt.as_ref().expect("encoded"), &mt_ex.target, slot)?;
                accumulate(fwd.g, &mut acc[0], nll)?;
            }
            if ms_active {
                let slot = self.slot_vector(fwd.g, Task::Ms, None, z_ms.map(|s| s.z), None)?;
                let nll = self.decode_nll(&mut fwd, enc_ms.as_ref().expect("encoded"), &ms_ex.target, slot)?;
                accumulate(fwd.g, &mut acc[1], nll)?;
            }

            // CLS: global latent conditioned on the posterior-path locals.
            if selection.covers(Task::Cls) {
                if cls_ex.source.is_empty() {
                    return Err(VhmError::EmptySequence("cls source"));
                }
                let (enc_cls, h_x) = self.encode_pooled(&mut fwd, &cls_ex.source)?;
                let mut z_cls: Option<LatentSample> = None;
                if let (Some(prior), Some(post)) = (&self.prior_cls, &self.posterior_cls) {
                    let mut cond = h_x;
                    if !self.flat_hierarchy() {
                        if let Some(s) = &z_mt {
                            cond = fwd.g.concat(cond, s.z)?;
                        }
                        if let Some(s) = &z_ms {
                            cond = fwd.g.concat(cond, s.z)?;
                        }
                    }
                    let p = prior.gaussian(&mut fwd, cond)?;
                    let (_, h_y) = self.encode_pooled(&mut fwd, &cls_ex.target)?;
                    let cond_q = fwd.g.concat(cond, h_y)?;
                    let q = self.posterior_gaussian(post, &mut fwd, cond_q)?;
                    let kl = kl_divergence(fwd.g, &q, &p)?;
                    accumulate(fwd.g, &mut acc[5], kl)?;
                    z_cls = Some(sample(fwd.g, &q, &noise[i].cls, LatentSource::PosteriorPath)?);
                }
                let slot = self.slot_vector(
                    fwd.g,
                    Task::Cls,
                    z_mt.map(|s| s.z),
                    z_ms.map(|s| s.z),
                    z_cls.map(|s| s.z),
                )?;
                let nll = self.decode_nll(&mut fwd, &enc_cls, &cls_ex.target, slot)?;
                accumulate(fwd.g, &mut acc[2], nll)?;
            }
        }

        // Batch means; absent components are exact zeros.
        let inv_b = 1.0 / b as f64;
        let comp: Vec<TensorId> = acc
            .into_iter()
            .map(|a| match a {
                Some(t) => graph.scale(t, inv_b),
                None => graph.scalar(0.0),
            })
            .collect();
        let (nll_mt, nll_ms, nll_cls, kl_mt, kl_ms, kl_cls) =
            (comp[0], comp[1], comp[2], comp[3], comp[4], comp[5]);
        let nll_a = graph.add(nll_mt, nll_ms)?;
        let nll_sum = graph.add(nll_a, nll_cls)?;
        let kl_a = graph.add(kl_mt, kl_ms)?;
        let kl_sum = graph.add(kl_a, kl_cls)?;
        let weighted = graph.scale(kl_sum, lambda);
        let total = graph.add(nll_sum, weighted)?;

        let breakdown = LossBreakdown {
            nll_mt: graph.scalar_value(nll_mt),
            nll_ms: graph.scalar_value(nll_ms),
            nll_cls: graph.scalar_value(nll_cls),
            kl_mt: graph.scalar_value(kl_mt),
            kl_ms: graph.scalar_value(kl_ms),
            kl_cls: graph.scalar_value(kl_cls),
            kl_weight: lambda,
            total: graph.scalar_value(total),
        };
        Ok(TrainForward { graph, binding, breakdown, total })
    }

    fn flat_hierarchy(&self) -> bool {
        matches!(self.cfg.variant, ModelVariant::Vhm(f) if f.flat_hierarchy)
    }

    /// Summarize an article with prior-mean latents and beam search.
    /// Never touches reference targets or recognition networks.
    pub fn infer(&self, article: &[u32], decode: &DecodeConfig) -> Result<Vec<u32>> {
        Ok(self.infer_audited(article, decode, None)?.0)
    }

    /// Summarize with latents sampled stochastically from the priors.
    pub fn infer_sampled(&self, article: &[u32], decode: &DecodeConfig, rng: &mut SeededRng) -> Result<Vec<u32>> {
        Ok(self.infer_audited(article, decode, Some(rng))?.0)
    }

    /// Inference with an audit trail of latent sources and recognition
    /// network usage.
    pub fn infer_audited(
        &self,
        article: &[u32],
        decode: &DecodeConfig,
        sample_rng: Option<&mut SeededRng>,
    ) -> Result<(Vec<u32>, InferAudit)> {
        decode.validate()?;
        let calls_before = self.recognition_calls();
        let mut session = InferSession::build(self, article, sample_rng)?;
        let tokens = beam_search(&mut session, decode, EOS_ID)?;
        let audit = InferAudit {
            latent_sources: session.latent_sources.clone(),
            recognition_calls: self.recognition_calls() - calls_before,
        };
        Ok((tokens, audit))
    }

    /// Open an incremental decoding session (used by beam search).
    pub fn infer_session<'m>(&'m self, article: &[u32]) -> Result<InferSession<'m>> {
        InferSession::build(self, article, None)
    }
}

/// Frozen-parameter decoding session: encoder states and prior-path latents
/// are computed once; each `log_probs` call appends a decoder pass to the
/// tape and rolls it back.
pub struct InferSession<'m> {
    model: &'m VhmModel,
    graph: Graph,
    binding: Binding,
    enc: EncoderStates,
    slot: Option<TensorId>,
    mark: usize,
    pub latent_sources: Vec<LatentSource>,
}

impl<'m> InferSession<'m> {
    fn build(model: &'m VhmModel, article: &[u32], mut sample_rng: Option<&mut SeededRng>) -> Result<Self> {
        let mut graph = Graph::new();
        let binding = model.store.bind(&mut graph, false);
        let mut latent_sources = Vec::new();
        let (enc, slot) = {
            let mut fwd = Fwd::eval(&mut graph, &binding);
            let (enc, h) = model.encode_pooled(&mut fwd, article)?;

            // Prior-path latents conditioned on the article.
            let z_mt = match &model.prior_mt {
                Some(prior) => {
                    let gauss = prior.gaussian(&mut fwd, h)?;
                    Some(draw_prior(&mut fwd, &gauss, &mut sample_rng, &mut latent_sources)?)
                }
                None => None,
            };
            let z_ms = match &model.prior_ms {
                Some(prior) => {
                    let gauss = prior.gaussian(&mut fwd, h)?;
                    Some(draw_prior(&mut fwd, &gauss, &mut sample_rng, &mut latent_sources)?)
                }
                None => None,
            };
            let z_cls = match &model.prior_cls {
                Some(prior) => {
                    let mut cond = h;
                    if !model.flat_hierarchy() {
                        if let Some(s) = &z_mt {
                            cond = fwd.g.concat(cond, s.z)?;
                        }
                        if let Some(s) = &z_ms {
                            cond = fwd.g.concat(cond, s.z)?;
                        }
                    }
                    let gauss = prior.gaussian(&mut fwd, cond)?;
                    Some(draw_prior(&mut fwd, &gauss, &mut sample_rng, &mut latent_sources)?)
                }
                None => None,
            };
            let slot = model.slot_vector(
                fwd.g,
                crate::data::Task::Cls,
                z_mt.map(|s| s.z),
                z_ms.map(|s| s.z),
                z_cls.map(|s| s.z),
            )?;
            (enc, slot)
        };
        let mark = graph.len();
        Ok(InferSession { model, graph, binding, enc, slot, mark, latent_sources })
    }
}

/// Mean (or stochastic) prior-path draw, recorded for the purity audit.
fn draw_prior(
    fwd: &mut Fwd,
    gauss: &DiagonalGaussian,
    rng: &mut Option<&mut SeededRng>,
    sources: &mut Vec<LatentSource>,
) -> Result<LatentSample> {
    let s = match rng.as_deref_mut() {
        None => LatentSample { z: gauss.mu, source: LatentSource::PriorPath },
        Some(r) => {
            let eps = r.normal_vec(gauss.dim);
            sample(fwd.g, gauss, &eps, LatentSource::PriorPath)?
        }
    };
    sources.push(s.source);
    Ok(s)
}

fn accumulate(g: &mut Graph, acc: &mut Option<TensorId>, v: TensorId) -> Result<()> {
    *acc = Some(match *acc {
        None => v,
        Some(prev) => g.add(prev, v)?,
    });
    Ok(())
}

impl NextTokenScorer for InferSession<'_> {
    fn vocab_size(&self) -> usize {
        self.model.cfg.vocab_size
    }

    fn log_probs(&mut self, prefix: &[u32]) -> Result<Vec<f64>> {
        self.graph.truncate(self.mark);
        let mut input = Vec::with_capacity(prefix.len() + 1);
        input.push(BOS_ID);
        input.extend_from_slice(prefix);
        let mut fwd = Fwd::eval(&mut self.graph, &self.binding);
        let states = self.model.core.decode(&mut fwd, &input, &self.enc)?;
        let fused = self.model.fuse_latent(fwd.g, fwd.p, states, self.slot)?;
        let logits = self.model.output.forward(fwd.g, fwd.p, fused)?;
        let v = self.model.cfg.vocab_size;
        let row = &self.graph.data(logits)[(input.len() - 1) * v..input.len() * v];
        let max = row.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        let lse = math::ln(row.iter().map(|&x| math::exp(x - max)).sum::<f64>()) + max;
        Ok(row.iter().map(|&x| x - lse).collect())
    }
}
