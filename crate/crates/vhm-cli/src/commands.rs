//! The five operator commands: data generation, training, evaluation,
//! single-document summarization, and the few-shot/ablation grid.

use std::io::Write;
use std::path::Path;

use vhm_core::data::{gen_corpus, Corpora, Vocabulary, VocabPolicy};
use vhm_core::model::VhmModel;
use vhm_core::rng::{SeededRng, Stream};
use vhm_core::train::{evaluate_set, sample_fewshot, train, StdClock, TrainState};

use crate::checkpoint::{self, Checkpoint};
use crate::config::{ConfigMap, ExperimentSetup};
use crate::corpus_io;
use crate::error::{CliError, Result};
use crate::grid::{cell_label, run_grid};
use crate::report;
use crate::runs::{write_text, RunDir};

/// Resolve the training corpora: external JSONL directory or the
/// deterministic synthetic universe.
fn resolve_corpora(setup: &ExperimentSetup, data_dir: Option<&Path>) -> Result<(Vocabulary, Corpora)> {
    match data_dir {
        Some(dir) => {
            let (vocab, corpora) = corpus_io::load_corpora(dir)?;
            if vocab.len() != setup.model.vocab_size {
                return Err(CliError::Config(format!(
                    "vocabulary at {} has {} tokens but the configured model expects {}",
                    dir.display(),
                    vocab.len(),
                    setup.model.vocab_size
                )));
            }
            Ok((vocab, corpora))
        }
        None => {
            let (universe, corpora) = gen_corpus(&setup.synth)?;
            Ok((universe.vocab, corpora))
        }
    }
}

pub fn cmd_generate_data(map: &ConfigMap, setup: &ExperimentSetup, out: &Path) -> Result<()> {
    let (universe, corpora) = gen_corpus(&setup.synth)?;
    corpus_io::save_corpora(out, &universe.vocab, &corpora)?;
    write_text(&out.join("config.echo"), &map.echo())?;
    println!(
        "wrote {} mt / {} ms / {} cls / {} held-out examples and vocab ({} tokens) to {}",
        corpora.mt.len(),
        corpora.ms.len(),
        corpora.cls.len(),
        corpora.heldout_cls.len(),
        universe.vocab.len(),
        out.display()
    );
    Ok(())
}

pub fn cmd_train(map: &ConfigMap, setup: &ExperimentSetup, run: &RunDir, data_dir: Option<&Path>) -> Result<()> {
    let (_vocab, mut corpora) = resolve_corpora(setup, data_dir)?;
    if setup.fewshot.fraction < 1.0 {
        corpora.cls = sample_fewshot(&corpora.cls, &setup.fewshot)?;
    }
    let echo = map.echo();
    write_text(&run.config_echo(), &echo)?;

    let mut model = VhmModel::new(setup.model.clone(), setup.seed)?;
    let log_path = run.train_log();
    let log_file = std::fs::File::create(&log_path).map_err(CliError::io(log_path.display().to_string()))?;
    let mut log = std::io::BufWriter::new(log_file);
    let started = std::time::SystemTime::now()
        .duration_since(std::time::UNIX_EPOCH)
        .map(|d| d.as_millis())
        .unwrap_or(0);
    // Timestamps live only in log preambles.
    writeln!(log, "# vhm training log (started_unix_ms={started})").map_err(CliError::io(log_path.display().to_string()))?;

    let clock = StdClock::start();
    let mut write_record = |r: &vhm_core::train::TrainRecord| {
        let _ = writeln!(log, "{}", report::format_train_record(r));
    };
    let mut sink: Option<&mut dyn FnMut(&vhm_core::train::TrainRecord)> = Some(&mut write_record);
    let outcome = {
        let on_record = sink.take();
        train(&mut model, &corpora, &setup.schedule, &setup.decode, &clock, on_record)?
    };
    log.flush().map_err(CliError::io(log_path.display().to_string()))?;

    let state = TrainState {
        adam: outcome.state.adam.clone(),
        next_step: outcome.state.next_step,
        train_rng: outcome.state.train_rng.clone(),
        dropout_rng: outcome.state.dropout_rng.clone(),
    };
    let last = Checkpoint::capture(&model, &echo, Some(&state));
    checkpoint::save(&run.checkpoint_last(), &last)?;

    // Best-by-validation parameters; identical to last when validation is
    // disabled or never improved.
    let best = match &outcome.best {
        Some(b) => {
            let mut snapshot_model = VhmModel::new(setup.model.clone(), setup.seed)?;
            snapshot_model.store.restore(&b.params)?;
            Checkpoint::capture(&snapshot_model, &echo, None)
        }
        None => Checkpoint::capture(&model, &echo, None),
    };
    checkpoint::save(&run.checkpoint_best(), &best)?;

    let final_record = outcome.records.last().expect("at least one step");
    println!(
        "trained {} steps; final total loss {:.4}; checkpoints at {}",
        outcome.records.len(),
        ((final_record.nll_mt + final_record.nll_ms) + final_record.nll_cls)
            + final_record.lambda * ((final_record.kl_mt + final_record.kl_ms) + final_record.kl_cls),
        run.path.join("checkpoints").display()
    );
    if let Some(b) = &outcome.best {
        println!("best validation exact-match {:.4} at step {}", b.exact_match, b.step);
    }
    Ok(())
}

/// Rebuild a model from a checkpoint's embedded config echo.
pub fn model_from_checkpoint(ckpt: &Checkpoint) -> Result<(ExperimentSetup, VhmModel)> {
    let mut map = ConfigMap::default();
    map.apply_file_text(&ckpt.config_echo)?;
    let setup = ExperimentSetup::from_map(&map)?;
    let mut model = VhmModel::new(setup.model.clone(), setup.seed)?;
    ckpt.apply_params(&mut model)?;
    Ok((setup, model))
}

pub fn cmd_evaluate(
    map: &ConfigMap,
    setup: &ExperimentSetup,
    run: &RunDir,
    checkpoint_path: &Path,
    data_dir: Option<&Path>,
) -> Result<()> {
    let ckpt = checkpoint::load(checkpoint_path)?;
    let (ckpt_setup, model) = model_from_checkpoint(&ckpt)?;
    if ckpt_setup.model.vocab_size != setup.model.vocab_size {
        return Err(CliError::Config(format!(
            "checkpoint vocabulary size {} does not match configured {}",
            ckpt_setup.model.vocab_size, setup.model.vocab_size
        )));
    }
    let (_vocab, corpora) = resolve_corpora(setup, data_dir)?;
    if corpora.heldout_cls.is_empty() {
        return Err(CliError::Data("no held-out examples to evaluate".into()));
    }
    let report_data = evaluate_set(&model, &corpora.heldout_cls, &setup.decode)?;
    let text = report::metrics_report(&map.echo(), &report_data);
    write_text(&run.metrics_report(), &text)?;
    println!(
        "evaluated {} examples: rouge1_f1={:.4} rouge2_f1={:.4} rouge_l_f1={:.4} exact_match={:.4} token_accuracy={:.4}",
        report_data.per_example.len(),
        report_data.rouge1_f1,
        report_data.rouge2_f1,
        report_data.rouge_l_f1,
        report_data.exact_match,
        report_data.token_accuracy
    );
    println!("report written to {}", run.metrics_report().display());
    Ok(())
}

pub fn cmd_summarize(
    setup: &ExperimentSetup,
    checkpoint_path: &Path,
    input: &Path,
    output: Option<&Path>,
    vocab_path: Option<&Path>,
) -> Result<()> {
    let ckpt = checkpoint::load(checkpoint_path)?;
    let (ckpt_setup, model) = model_from_checkpoint(&ckpt)?;
    let vocab = match vocab_path {
        Some(p) => corpus_io::load_vocab(p)?,
        None => Vocabulary::synthetic(ckpt_setup.synth.vocab_size),
    };
    if vocab.len() != ckpt_setup.model.vocab_size {
        return Err(CliError::Config(format!(
            "vocabulary has {} tokens but the checkpointed model expects {}",
            vocab.len(),
            ckpt_setup.model.vocab_size
        )));
    }
    let text = crate::runs::read_text(input)?;
    let mut out = String::new();
    let mut rng = SeededRng::new(setup.seed, Stream::Eval);
    for (idx, line) in text.lines().enumerate() {
        let article = vocab.encode(line, VocabPolicy::MapUnknown)?;
        if article.is_empty() {
            return Err(CliError::Data(format!("{}: line {}: empty article", input.display(), idx + 1)));
        }
        let summary = if setup.sample_latents {
            model.infer_sampled(&article, &setup.decode, &mut rng)?
        } else {
            model.infer(&article, &setup.decode)?
        };
        out.push_str(&vocab.decode(&summary)?);
        out.push('\n');
    }
    match output {
        Some(path) => write_text(path, &out)?,
        None => print!("{out}"),
    }
    Ok(())
}

pub fn cmd_grid(map: &ConfigMap, setup: &ExperimentSetup, run: &RunDir, data_dir: Option<&Path>) -> Result<()> {
    let (_vocab, corpora) = resolve_corpora(setup, data_dir)?;
    write_text(&run.config_echo(), &map.echo())?;
    let outcomes = run_grid(
        &setup.model,
        &corpora,
        &setup.schedule,
        &setup.decode,
        &setup.grid,
        |spec, result| {
            let label = cell_label(spec);
            match result {
                Ok(row) => println!(
                    "cell {label}: rouge1_f1={:.4} exact_match={:.4}",
                    row.rouge1_f1, row.exact_match
                ),
                Err(e) => println!("cell {label}: FAILED: {e}"),
            }
        },
    );
    // Per-cell isolation: each cell's outcome lands in its own directory.
    for cell in &outcomes {
        let dir = run.cell_dir(&cell_label(&cell.spec))?;
        let body = match &cell.result {
            Ok(row) => format!(
                "fraction={} variant={} seed={} rouge1_f1={:.6} rouge2_f1={:.6} rouge_l_f1={:.6} exact_match={:.6} token_accuracy={:.6}\n",
                row.fraction, row.variant, row.seed, row.rouge1_f1, row.rouge2_f1, row.rouge_l_f1, row.exact_match, row.token_accuracy
            ),
            Err(e) => format!("failed: {e}\n"),
        };
        write_text(&dir.join("result.txt"), &body)?;
    }
    let table = report::results_table(&map.echo(), &outcomes);
    write_text(&run.results_table(), &table)?;
    let failed = outcomes.iter().filter(|c| c.result.is_err()).count();
    println!(
        "grid complete: {} cells ({} failed); table at {}",
        outcomes.len(),
        failed,
        run.results_table().display()
    );
    Ok(())
}
