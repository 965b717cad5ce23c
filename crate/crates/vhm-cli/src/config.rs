//! Flat `section.key=value` configuration with a fixed key table. Every key
//! has a default, can come from a config file, and is mirrored by a CLI
//! flag of the same name. Unknown keys are rejected before any work starts;
//! the effective post-merge config is echoed into every run directory.

use std::collections::BTreeMap;

use vhm_core::backbone::BackboneConfig;
use vhm_core::data::SyntheticConfig;
use vhm_core::eval::DecodeConfig;
use vhm_core::model::{ModelConfig, ModelVariant};
use vhm_core::train::{FewShotSpec, ScheduleMode, TrainingSchedule};

use crate::error::{CliError, Result};

pub struct KeySpec {
    pub key: &'static str,
    pub default: &'static str,
    pub help: &'static str,
}

pub const KEYS: &[KeySpec] = &[
    KeySpec { key: "seed", default: "42", help: "master seed; all run randomness derives from it" },
    KeySpec { key: "data.vocab_size", default: "50", help: "content tokens per language block" },
    KeySpec { key: "data.sentences_per_doc", default: "3", help: "sentences (key tokens) per document" },
    KeySpec { key: "data.noise_per_sentence", default: "4", help: "noise tokens after each key token" },
    KeySpec { key: "data.n_mt", default: "8000", help: "translation training pairs" },
    KeySpec { key: "data.n_ms", default: "8000", help: "monolingual summarization training pairs" },
    KeySpec { key: "data.n_cls", default: "8000", help: "cross-lingual summarization training pairs" },
    KeySpec { key: "data.n_heldout", default: "500", help: "held-out evaluation documents" },
    KeySpec { key: "model.n_encoder_layers", default: "2", help: "encoder layers" },
    KeySpec { key: "model.n_decoder_layers", default: "2", help: "decoder layers" },
    KeySpec { key: "model.d_model", default: "64", help: "model width" },
    KeySpec { key: "model.n_heads", default: "4", help: "attention heads" },
    KeySpec { key: "model.d_ff", default: "128", help: "feed-forward width" },
    KeySpec { key: "model.max_len", default: "64", help: "maximum sequence length" },
    KeySpec { key: "model.dropout", default: "0.1", help: "dropout rate (attention weights and sublayer outputs)" },
    KeySpec { key: "model.latent_dim", default: "16", help: "latent variable dimension" },
    KeySpec {
        key: "model.variant",
        default: "vhm",
        help: "vhm | baseline | vhm-zmt | vhm-zms | vhm-zmt-zms | vhm-zcls | vhm-flat",
    },
    KeySpec { key: "train.total_steps", default: "3000", help: "optimization steps" },
    KeySpec { key: "train.anneal_steps", default: "1500", help: "linear KL annealing horizon" },
    KeySpec { key: "train.warmup_steps", default: "200", help: "learning-rate warmup steps" },
    KeySpec { key: "train.peak_lr", default: "1e-3", help: "peak learning rate" },
    KeySpec { key: "train.adam_beta1", default: "0.9", help: "Adam first-moment decay" },
    KeySpec { key: "train.adam_beta2", default: "0.998", help: "Adam second-moment decay" },
    KeySpec { key: "train.adam_eps", default: "1e-8", help: "Adam epsilon" },
    KeySpec { key: "train.batch_size", default: "8", help: "examples per task per step" },
    KeySpec { key: "train.clip_norm", default: "1.0", help: "global gradient-norm clip (0 disables)" },
    KeySpec { key: "train.mode", default: "joint", help: "joint (sum all tasks) or rotate (strict task rotation)" },
    KeySpec { key: "train.eval_every", default: "500", help: "validation cadence in steps (0 disables)" },
    KeySpec { key: "train.eval_slice", default: "64", help: "held-out docs decoded per validation pass" },
    KeySpec { key: "decode.beam_size", default: "4", help: "beam width" },
    KeySpec { key: "decode.length_penalty", default: "0.6", help: "length penalty exponent" },
    KeySpec { key: "decode.max_len", default: "16", help: "maximum generated length" },
    KeySpec { key: "decode.sample_latents", default: "false", help: "sample latents at inference instead of prior means" },
    KeySpec { key: "fewshot.fraction", default: "1.0", help: "fraction of CLS training data used (MT/MS stay full)" },
    KeySpec { key: "fewshot.seed", default: "0", help: "subset seed; 0 means reuse the run seed" },
    KeySpec { key: "grid.fractions", default: "0.001,0.01,0.1,0.5,1.0", help: "comma-separated CLS fractions" },
    KeySpec {
        key: "grid.variants",
        default: "vhm,baseline,vhm-zmt,vhm-zms,vhm-zmt-zms,vhm-zcls,vhm-flat",
        help: "comma-separated model variants",
    },
    KeySpec { key: "grid.seeds", default: "1,2,3", help: "comma-separated seeds per cell" },
    KeySpec { key: "grid.jobs", default: "1", help: "parallel worker threads for grid cells" },
];

/// Merged key-value view (defaults, then file, then flags).
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ConfigMap {
    values: BTreeMap<String, String>,
}

impl Default for ConfigMap {
    fn default() -> Self {
        let values = KEYS.iter().map(|k| (k.key.to_string(), k.default.to_string())).collect();
        ConfigMap { values }
    }
}

impl ConfigMap {
    pub fn get(&self, key: &str) -> &str {
        self.values.get(key).map(|s| s.as_str()).unwrap_or_else(|| panic!("unknown config key {key}"))
    }

    pub fn set(&mut self, key: &str, value: &str) -> Result<()> {
        if !KEYS.iter().any(|k| k.key == key) {
            return Err(CliError::Config(format!("unknown config key {key:?}")));
        }
        self.values.insert(key.to_string(), value.to_string());
        Ok(())
    }

    /// Overlay `key=value` lines (`#` comments and blank lines allowed).
    pub fn apply_file_text(&mut self, text: &str) -> Result<()> {
        for (lineno, raw) in text.lines().enumerate() {
            let line = raw.trim();
            if line.is_empty() || line.starts_with('#') {
                continue;
            }
            let Some((key, value)) = line.split_once('=') else {
                return Err(CliError::Config(format!("config line {}: expected key=value, got {line:?}", lineno + 1)));
            };
            self.set(key.trim(), value.trim())
                .map_err(|e| CliError::Config(format!("config line {}: {e}", lineno + 1)))?;
        }
        Ok(())
    }

    /// Canonical echo: every key, sorted, one `key=value` per line.
    pub fn echo(&self) -> String {
        let mut out = String::new();
        for (k, v) in &self.values {
            out.push_str(k);
            out.push('=');
            out.push_str(v);
            out.push('\n');
        }
        out
    }

    fn parse<T: std::str::FromStr>(&self, key: &str) -> Result<T> {
        self.get(key)
            .parse::<T>()
            .map_err(|_| CliError::Config(format!("config key {key}: cannot parse value {:?}", self.get(key))))
    }

    fn parse_list<T: std::str::FromStr>(&self, key: &str) -> Result<Vec<T>> {
        self.get(key)
            .split(',')
            .filter(|s| !s.trim().is_empty())
            .map(|s| {
                s.trim()
                    .parse::<T>()
                    .map_err(|_| CliError::Config(format!("config key {key}: cannot parse element {s:?}")))
            })
            .collect()
    }
}

/// Grid extent: fractions x variants x seeds, run with up to `jobs` workers.
#[derive(Debug, Clone)]
pub struct GridSpec {
    pub fractions: Vec<f64>,
    pub variants: Vec<ModelVariant>,
    pub seeds: Vec<u64>,
    pub jobs: usize,
}

/// Fully validated typed view of one run configuration.
#[derive(Debug, Clone)]
pub struct ExperimentSetup {
    pub seed: u64,
    pub synth: SyntheticConfig,
    pub model: ModelConfig,
    pub schedule: TrainingSchedule,
    pub decode: DecodeConfig,
    pub sample_latents: bool,
    pub fewshot: FewShotSpec,
    pub grid: GridSpec,
}

impl ExperimentSetup {
    pub fn from_map(map: &ConfigMap) -> Result<ExperimentSetup> {
        let seed: u64 = map.parse("seed")?;
        let synth = SyntheticConfig {
            vocab_size: map.parse("data.vocab_size")?,
            sentences_per_doc: map.parse("data.sentences_per_doc")?,
            noise_per_sentence: map.parse("data.noise_per_sentence")?,
            n_mt: map.parse("data.n_mt")?,
            n_ms: map.parse("data.n_ms")?,
            n_cls: map.parse("data.n_cls")?,
            n_heldout: map.parse("data.n_heldout")?,
            seed,
        };
        synth.validate()?;

        let variant = ModelVariant::from_label(map.get("model.variant"))?;
        let backbone = BackboneConfig {
            n_encoder_layers: map.parse("model.n_encoder_layers")?,
            n_decoder_layers: map.parse("model.n_decoder_layers")?,
            d_model: map.parse("model.d_model")?,
            n_heads: map.parse("model.n_heads")?,
            d_ff: map.parse("model.d_ff")?,
            max_len: map.parse("model.max_len")?,
            dropout_rate: map.parse("model.dropout")?,
        };
        let model = ModelConfig {
            backbone,
            latent_dim: map.parse("model.latent_dim")?,
            vocab_size: vhm_core::data::RESERVED_TOKENS + 2 * synth.vocab_size,
            variant,
        };
        model.validate()?;
        if synth.doc_len() + 2 > model.backbone.max_len {
            return Err(CliError::Config(format!(
                "document length {} (+2 framing tokens) exceeds model.max_len {}",
                synth.doc_len(),
                model.backbone.max_len
            )));
        }

        let mode = ScheduleMode::from_name(map.get("train.mode"))
            .ok_or_else(|| CliError::Config(format!("config key train.mode: unknown mode {:?}", map.get("train.mode"))))?;
        let schedule = TrainingSchedule {
            total_steps: map.parse("train.total_steps")?,
            anneal_steps: map.parse("train.anneal_steps")?,
            warmup_steps: map.parse("train.warmup_steps")?,
            peak_lr: map.parse("train.peak_lr")?,
            adam_beta1: map.parse("train.adam_beta1")?,
            adam_beta2: map.parse("train.adam_beta2")?,
            adam_eps: map.parse("train.adam_eps")?,
            batch_size: map.parse("train.batch_size")?,
            clip_norm: map.parse("train.clip_norm")?,
            mode,
            eval_every: map.parse("train.eval_every")?,
            eval_slice: map.parse("train.eval_slice")?,
            seed,
        };
        schedule.validate()?;

        let decode = DecodeConfig {
            beam_size: map.parse("decode.beam_size")?,
            length_penalty: map.parse("decode.length_penalty")?,
            max_len: map.parse("decode.max_len")?,
        };
        decode.validate()?;

        let fewshot_seed: u64 = map.parse("fewshot.seed")?;
        let fewshot = FewShotSpec {
            fraction: map.parse("fewshot.fraction")?,
            seed: if fewshot_seed == 0 { seed } else { fewshot_seed },
        };
        if !(fewshot.fraction > 0.0 && fewshot.fraction <= 1.0) {
            return Err(CliError::Config(format!(
                "config key fewshot.fraction: {} outside (0, 1]",
                fewshot.fraction
            )));
        }

        let variants = map
            .get("grid.variants")
            .split(',')
            .filter(|s| !s.trim().is_empty())
            .map(|s| ModelVariant::from_label(s.trim()).map_err(CliError::from))
            .collect::<Result<Vec<_>>>()?;
        let grid = GridSpec {
            fractions: map.parse_list("grid.fractions")?,
            variants,
            seeds: map.parse_list("grid.seeds")?,
            jobs: map.parse::<usize>("grid.jobs")?.max(1),
        };
        for f in &grid.fractions {
            if !(*f > 0.0 && *f <= 1.0) {
                return Err(CliError::Config(format!("config key grid.fractions: {f} outside (0, 1]")));
            }
        }
        if grid.fractions.is_empty() || grid.variants.is_empty() || grid.seeds.is_empty() {
            return Err(CliError::Config("grid axes must be non-empty".into()));
        }

        Ok(ExperimentSetup {
            seed,
            synth,
            model,
            schedule,
            decode,
            sample_latents: map.parse("decode.sample_latents")?,
            fewshot,
            grid,
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn defaults_validate() {
        let map = ConfigMap::default();
        let setup = ExperimentSetup::from_map(&map).unwrap();
        assert_eq!(setup.model.vocab_size, 104);
        assert_eq!(setup.schedule.total_steps, 3000);
        assert_eq!(setup.grid.variants.len(), 7);
    }

    #[test]
    fn unknown_key_rejected_with_name() {
        let mut map = ConfigMap::default();
        let err = map.apply_file_text("model.bogus=1\n").unwrap_err();
        assert!(format!("{err}").contains("model.bogus"));
    }

    #[test]
    fn file_overlay_and_echo_round_trip() {
        let mut map = ConfigMap::default();
        map.apply_file_text("# comment\n\nmodel.d_model = 32\nseed=7\n").unwrap();
        assert_eq!(map.get("model.d_model"), "32");
        assert_eq!(map.get("seed"), "7");
        let echo = map.echo();
        let mut map2 = ConfigMap::default();
        map2.apply_file_text(&echo).unwrap();
        assert_eq!(map, map2);
    }

    #[test]
    fn cross_field_validation() {
        let mut map = ConfigMap::default();
        map.set("model.max_len", "8").unwrap();
        let err = ExperimentSetup::from_map(&map).unwrap_err();
        assert!(format!("{err}").contains("max_len"));
    }

    #[test]
    fn bad_values_name_the_key() {
        let mut map = ConfigMap::default();
        map.set("train.peak_lr", "zero").unwrap();
        let err = ExperimentSetup::from_map(&map).unwrap_err();
        assert!(format!("{err}").contains("train.peak_lr"));
    }
}
