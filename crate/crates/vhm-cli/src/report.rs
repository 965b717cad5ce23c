//! Text artifacts: per-step training log lines, metrics reports with
//! per-example scores and bootstrap intervals, and the tab-separated
//! results table for experiment grids. Reports never embed timestamps so
//! identical runs produce byte-identical files.

use vhm_core::train::{EvalReport, TrainRecord};

use crate::grid::CellOutcome;

/// `key=value` record, one line per optimization step.
pub fn format_train_record(r: &TrainRecord) -> String {
    format!(
        "step={} nll_mt={:.6} nll_ms={:.6} nll_cls={:.6} kl_mt={:.6} kl_ms={:.6} kl_cls={:.6} lambda={:.6} lr={:.6e} wall_ms={:.3}",
        r.step, r.nll_mt, r.nll_ms, r.nll_cls, r.kl_mt, r.kl_ms, r.kl_cls, r.lambda, r.lr, r.wall_ms
    )
}

fn echo_preamble(config_echo: &str) -> String {
    let mut out = String::new();
    for line in config_echo.lines() {
        out.push_str("# ");
        out.push_str(line);
        out.push('\n');
    }
    out
}

/// Metrics report: config preamble, one row per example, then aggregates
/// with 95% bootstrap intervals.
pub fn metrics_report(config_echo: &str, report: &EvalReport) -> String {
    let mut out = echo_preamble(config_echo);
    out.push_str("example\trouge1_f1\trouge2_f1\trouge_l_f1\texact\toutput_len\n");
    for (i, ex) in report.per_example.iter().enumerate() {
        out.push_str(&format!(
            "{}\t{:.6}\t{:.6}\t{:.6}\t{}\t{}\n",
            i,
            ex.rouge1.f1,
            ex.rouge2.f1,
            ex.rouge_l.f1,
            u8::from(ex.exact),
            ex.output.len()
        ));
    }
    out.push_str(&format!(
        "# aggregate rouge1_f1={:.6} ci95=[{:.6},{:.6}]\n",
        report.rouge1_f1, report.rouge1_ci.0, report.rouge1_ci.1
    ));
    out.push_str(&format!(
        "# aggregate rouge2_f1={:.6} ci95=[{:.6},{:.6}]\n",
        report.rouge2_f1, report.rouge2_ci.0, report.rouge2_ci.1
    ));
    out.push_str(&format!(
        "# aggregate rouge_l_f1={:.6} ci95=[{:.6},{:.6}]\n",
        report.rouge_l_f1, report.rouge_l_ci.0, report.rouge_l_ci.1
    ));
    out.push_str(&format!("# aggregate exact_match={:.6}\n", report.exact_match));
    out.push_str(&format!("# aggregate token_accuracy={:.6}\n", report.token_accuracy));
    out
}

pub const RESULTS_HEADER: &str =
    "fraction\tvariant\tseed\tsteps\tcls_examples\trouge1_f1\trouge2_f1\trouge_l_f1\texact_match\ttoken_accuracy\tstatus";

/// Results table: config preamble, header, one row per grid cell (failed
/// cells keep their coordinates with an error note).
pub fn results_table(config_echo: &str, outcomes: &[CellOutcome]) -> String {
    let mut out = echo_preamble(config_echo);
    out.push_str(RESULTS_HEADER);
    out.push('\n');
    for cell in outcomes {
        match &cell.result {
            Ok(row) => out.push_str(&format!(
                "{}\t{}\t{}\t{}\t{}\t{:.6}\t{:.6}\t{:.6}\t{:.6}\t{:.6}\tok\n",
                row.fraction,
                row.variant,
                row.seed,
                row.steps,
                row.cls_examples,
                row.rouge1_f1,
                row.rouge2_f1,
                row.rouge_l_f1,
                row.exact_match,
                row.token_accuracy
            )),
            Err(msg) => out.push_str(&format!(
                "{}\t{}\t{}\t-\t-\t-\t-\t-\t-\t-\tfailed: {}\n",
                cell.spec.fraction,
                cell.spec.variant.label(),
                cell.spec.seed,
                msg.replace(['\t', '\n'], " ")
            )),
        }
    }
    out
}
