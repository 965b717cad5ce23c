//! The compositional toy summarization universe and its exact oracle.
//!
//! Translation is a bijective token map between the source and target
//! vocabulary blocks; summarization extracts the per-sentence key tokens of
//! a structured document; cross-lingual summarization is their composition.

use alloc::collections::{BTreeMap, BTreeSet};
use alloc::format;
use alloc::string::{String, ToString};
use alloc::vec::Vec;

use crate::error::VhmError;
use crate::rng::{SeededRng, Stream};
use crate::Result;

pub const PAD_ID: u32 = 0;
pub const BOS_ID: u32 = 1;
pub const EOS_ID: u32 = 2;
pub const UNK_ID: u32 = 3;
pub const RESERVED_TOKENS: usize = 4;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Task {
    Mt,
    Ms,
    Cls,
}

impl Task {
    pub fn name(self) -> &'static str {
        match self {
            Task::Mt => "mt",
            Task::Ms => "ms",
            Task::Cls => "cls",
        }
    }

    pub fn from_name(s: &str) -> Option<Task> {
        match s {
            "mt" => Some(Task::Mt),
            "ms" => Some(Task::Ms),
            "cls" => Some(Task::Cls),
            _ => None,
        }
    }
}

/// One training instance: a source sequence and its reference target.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct TaskExample {
    pub task: Task,
    pub source: Vec<u32>,
    pub target: Vec<u32>,
}

/// How to treat tokens missing from the vocabulary when encoding text.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum VocabPolicy {
    /// Map unknown tokens to `<unk>`.
    MapUnknown,
    /// Reject sequences containing unknown tokens.
    RejectUnknown,
}

/// Bilingual vocabulary shared by all tasks: four reserved tokens, then a
/// source block `s1..sV` and a target block `t1..tV` of equal size.
#[derive(Debug, Clone)]
pub struct Vocabulary {
    tokens: Vec<String>,
    index: BTreeMap<String, u32>,
    block_size: usize,
}

impl Vocabulary {
    /// Vocabulary of the synthetic universe with `block_size` content
    /// tokens per language block.
    pub fn synthetic(block_size: usize) -> Vocabulary {
        let mut tokens: Vec<String> =
            ["<pad>", "<bos>", "<eos>", "<unk>"].iter().map(|s| s.to_string()).collect();
        for i in 1..=block_size {
            tokens.push(format!("s{i}"));
        }
        for i in 1..=block_size {
            tokens.push(format!("t{i}"));
        }
        Self::from_tokens(tokens).expect("synthetic layout is always valid")
    }

    /// Rebuild from a token list (one token per id, reserved tokens first,
    /// equal source and target blocks after).
    pub fn from_tokens(tokens: Vec<String>) -> Result<Vocabulary> {
        if tokens.len() < RESERVED_TOKENS || (tokens.len() - RESERVED_TOKENS) % 2 != 0 {
            return Err(VhmError::Data(format!(
                "vocabulary must hold {RESERVED_TOKENS} reserved tokens plus equal blocks, got {} tokens",
                tokens.len()
            )));
        }
        let mut index = BTreeMap::new();
        for (i, t) in tokens.iter().enumerate() {
            if index.insert(t.clone(), i as u32).is_some() {
                return Err(VhmError::Data(format!("duplicate vocabulary token {t:?}")));
            }
        }
        let block_size = (tokens.len() - RESERVED_TOKENS) / 2;
        Ok(Vocabulary { tokens, index, block_size })
    }

    pub fn len(&self) -> usize {
        self.tokens.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tokens.is_empty()
    }

    pub fn block_size(&self) -> usize {
        self.block_size
    }

    pub fn id(&self, token: &str) -> Option<u32> {
        self.index.get(token).copied()
    }

    pub fn token(&self, id: u32) -> Option<&str> {
        self.tokens.get(id as usize).map(|s| s.as_str())
    }

    pub fn tokens(&self) -> &[String] {
        &self.tokens
    }

    /// Id of `s{i}` for 0-based block offset `i`.
    pub fn source_id(&self, offset: usize) -> u32 {
        (RESERVED_TOKENS + offset) as u32
    }

    /// Id of `t{i}` for 0-based block offset `i`.
    pub fn target_id(&self, offset: usize) -> u32 {
        (RESERVED_TOKENS + self.block_size + offset) as u32
    }

    pub fn is_source_block(&self, id: u32) -> bool {
        let id = id as usize;
        id >= RESERVED_TOKENS && id < RESERVED_TOKENS + self.block_size
    }

    pub fn is_target_block(&self, id: u32) -> bool {
        let id = id as usize;
        id >= RESERVED_TOKENS + self.block_size && id < RESERVED_TOKENS + 2 * self.block_size
    }

    /// Whitespace-tokenize and map to ids under the given policy.
    pub fn encode(&self, text: &str, policy: VocabPolicy) -> Result<Vec<u32>> {
        text.split_whitespace()
            .map(|tok| match (self.id(tok), policy) {
                (Some(id), _) => Ok(id),
                (None, VocabPolicy::MapUnknown) => Ok(UNK_ID),
                (None, VocabPolicy::RejectUnknown) => {
                    Err(VhmError::Data(format!("unknown token {tok:?}")))
                }
            })
            .collect()
    }

    pub fn decode(&self, ids: &[u32]) -> Result<String> {
        let mut out = String::new();
        for (i, &id) in ids.iter().enumerate() {
            let tok = self.token(id).ok_or(VhmError::Vocab { id, vocab_size: self.len() })?;
            if i > 0 {
                out.push(' ');
            }
            out.push_str(tok);
        }
        Ok(out)
    }
}

/// Shape of the synthetic universe and the corpus sizes drawn from it.
#[derive(Debug, Clone, PartialEq)]
pub struct SyntheticConfig {
    /// Content tokens per language block.
    pub vocab_size: usize,
    /// Sentences per document (k); each contributes one key token.
    pub sentences_per_doc: usize,
    /// Noise tokens following each key token (m).
    pub noise_per_sentence: usize,
    pub n_mt: usize,
    pub n_ms: usize,
    pub n_cls: usize,
    pub n_heldout: usize,
    pub seed: u64,
}

impl Default for SyntheticConfig {
    fn default() -> Self {
        SyntheticConfig {
            vocab_size: 50,
            sentences_per_doc: 3,
            noise_per_sentence: 4,
            n_mt: 8000,
            n_ms: 8000,
            n_cls: 8000,
            n_heldout: 500,
            seed: 42,
        }
    }
}

impl SyntheticConfig {
    pub fn validate(&self) -> Result<()> {
        if self.vocab_size == 0 || self.sentences_per_doc == 0 {
            return Err(VhmError::Config("vocab_size and sentences_per_doc must be positive".into()));
        }
        if self.vocab_size < self.sentences_per_doc + self.noise_per_sentence {
            return Err(VhmError::Config(format!(
                "vocab_size {} must be at least k + m = {}",
                self.vocab_size,
                self.sentences_per_doc + self.noise_per_sentence
            )));
        }
        let salient = self.vocab_size / 2;
        if salient < self.sentences_per_doc {
            return Err(VhmError::Config(format!(
                "salient block {salient} too small for {} sentences per doc",
                self.sentences_per_doc
            )));
        }
        if self.noise_per_sentence > 0 && self.vocab_size - salient == 0 {
            return Err(VhmError::Config("no noise tokens available".into()));
        }
        Ok(())
    }

    pub fn doc_len(&self) -> usize {
        self.sentences_per_doc * (1 + self.noise_per_sentence)
    }
}

/// Generated corpora for the three tasks plus a held-out slice for
/// evaluation, all drawn over disjoint source sequences.
#[derive(Debug, Clone)]
pub struct Corpora {
    pub mt: Vec<TaskExample>,
    pub ms: Vec<TaskExample>,
    pub cls: Vec<TaskExample>,
    pub heldout_cls: Vec<TaskExample>,
}

/// The synthetic task family: vocabulary plus the exact oracles.
///
/// Documents are `k` sentences of the form `KEY NOISE^m`, where keys come
/// from the salient half of the source block and noise from the other half,
/// so summarization is learnable from both position and identity cues.
#[derive(Debug, Clone)]
pub struct SyntheticUniverse {
    pub cfg: SyntheticConfig,
    pub vocab: Vocabulary,
}

impl SyntheticUniverse {
    pub fn new(cfg: SyntheticConfig) -> Result<Self> {
        cfg.validate()?;
        let vocab = Vocabulary::synthetic(cfg.vocab_size);
        Ok(SyntheticUniverse { cfg, vocab })
    }

    fn salient_count(&self) -> usize {
        self.cfg.vocab_size / 2
    }

    fn is_salient(&self, id: u32) -> bool {
        self.vocab.is_source_block(id) && (id as usize - RESERVED_TOKENS) < self.salient_count()
    }

    /// Elementwise bijection `s_i -> t_i`.
    pub fn translate_oracle(&self, src: &[u32]) -> Result<Vec<u32>> {
        src.iter()
            .map(|&id| {
                if self.vocab.is_source_block(id) {
                    Ok(id + self.cfg.vocab_size as u32)
                } else {
                    Err(VhmError::Data(format!("token id {id} is not in the source block")))
                }
            })
            .collect()
    }

    /// Inverse of [`SyntheticUniverse::translate_oracle`].
    pub fn inverse_translate(&self, tgt: &[u32]) -> Result<Vec<u32>> {
        tgt.iter()
            .map(|&id| {
                if self.vocab.is_target_block(id) {
                    Ok(id - self.cfg.vocab_size as u32)
                } else {
                    Err(VhmError::Data(format!("token id {id} is not in the target block")))
                }
            })
            .collect()
    }

    /// Extract the `k` key tokens of a structured document, in order.
    pub fn summarize_oracle(&self, doc: &[u32]) -> Result<Vec<u32>> {
        let k = self.cfg.sentences_per_doc;
        let m = self.cfg.noise_per_sentence;
        let stride = 1 + m;
        if doc.len() != k * stride {
            return Err(VhmError::Data(format!(
                "malformed document: length {} is not {k} sentences of {stride} tokens",
                doc.len()
            )));
        }
        let mut keys = Vec::with_capacity(k);
        for (s, sentence) in doc.chunks_exact(stride).enumerate() {
            let key = sentence[0];
            if !self.is_salient(key) {
                return Err(VhmError::Data(format!("sentence {s} does not start with a salient key token")));
            }
            for &noise in &sentence[1..] {
                if !self.vocab.is_source_block(noise) || self.is_salient(noise) {
                    return Err(VhmError::Data(format!("sentence {s} has a non-noise filler token")));
                }
            }
            keys.push(key);
        }
        Ok(keys)
    }

    /// Cross-lingual summary oracle: translation of the extractive summary.
    pub fn oracle_cls(&self, doc: &[u32]) -> Result<Vec<u32>> {
        let summary = self.summarize_oracle(doc)?;
        self.translate_oracle(&summary)
    }

    fn gen_doc(&self, rng: &mut SeededRng) -> Vec<u32> {
        let k = self.cfg.sentences_per_doc;
        let m = self.cfg.noise_per_sentence;
        let salient = self.salient_count();
        let noise_count = self.cfg.vocab_size - salient;
        let keys = rng.sample_without_replacement(salient, k);
        let mut doc = Vec::with_capacity(k * (1 + m));
        for key in keys {
            doc.push(self.vocab.source_id(key));
            for _ in 0..m {
                doc.push(self.vocab.source_id(salient + rng.below(noise_count)));
            }
        }
        doc
    }

    /// MT sources are random doc-like sequences truncated to a random
    /// length, so the translation prior sees in-distribution inputs when an
    /// article is encoded at summarization inference time.
    fn gen_mt_source(&self, rng: &mut SeededRng) -> Vec<u32> {
        let max_len = self.cfg.doc_len().max(2);
        let len = 2 + rng.below(max_len - 1);
        let mut doc = self.gen_doc(rng);
        if doc.len() < len {
            doc.extend(self.gen_doc(rng));
        }
        doc.truncate(len);
        doc
    }
}

/// Deterministically generate the three task corpora plus the held-out
/// evaluation slice. All source sequences are globally unique so no split
/// leaks supervision into another.
pub fn gen_corpus(cfg: &SyntheticConfig) -> Result<(SyntheticUniverse, Corpora)> {
    let universe = SyntheticUniverse::new(cfg.clone())?;
    let mut rng = SeededRng::new(cfg.seed, Stream::DataGen);
    let mut seen: BTreeSet<Vec<u32>> = BTreeSet::new();

    let mut fresh = |gen: &mut dyn FnMut(&mut SeededRng) -> Vec<u32>, rng: &mut SeededRng| -> Result<Vec<u32>> {
        for _ in 0..10_000 {
            let cand = gen(rng);
            if seen.insert(cand.clone()) {
                return Ok(cand);
            }
        }
        Err(VhmError::Data("could not draw a fresh source sequence; corpus too large for config".into()))
    };

    let mut mt = Vec::with_capacity(cfg.n_mt);
    for _ in 0..cfg.n_mt {
        let source = fresh(&mut |r| universe.gen_mt_source(r), &mut rng)?;
        let target = universe.translate_oracle(&source)?;
        mt.push(TaskExample { task: Task::Mt, source, target });
    }

    let mut ms = Vec::with_capacity(cfg.n_ms);
    for _ in 0..cfg.n_ms {
        let source = fresh(&mut |r| universe.gen_doc(r), &mut rng)?;
        let target = universe.summarize_oracle(&source)?;
        ms.push(TaskExample { task: Task::Ms, source, target });
    }

    let mut cls = Vec::with_capacity(cfg.n_cls);
    for _ in 0..cfg.n_cls {
        let source = fresh(&mut |r| universe.gen_doc(r), &mut rng)?;
        let target = universe.oracle_cls(&source)?;
        cls.push(TaskExample { task: Task::Cls, source, target });
    }

    let mut heldout_cls = Vec::with_capacity(cfg.n_heldout);
    for _ in 0..cfg.n_heldout {
        let source = fresh(&mut |r| universe.gen_doc(r), &mut rng)?;
        let target = universe.oracle_cls(&source)?;
        heldout_cls.push(TaskExample { task: Task::Cls, source, target });
    }

    Ok((universe, Corpora { mt, ms, cls, heldout_cls }))
}
