//! End-to-end command tests against the built binary, on configurations
//! small enough to run in seconds.

use std::path::{Path, PathBuf};
use std::process::{Command, Output};

fn vhm() -> Command {
    Command::new(env!("CARGO_BIN_EXE_vhm"))
}

/// Tiny-but-trainable flags shared by most tests.
fn tiny_flags(cmd: &mut Command) {
    for (k, v) in [
        ("data.vocab_size", "10"),
        ("data.sentences_per_doc", "2"),
        ("data.noise_per_sentence", "1"),
        ("data.n_mt", "30"),
        ("data.n_ms", "30"),
        ("data.n_cls", "30"),
        ("data.n_heldout", "6"),
        ("model.d_model", "16"),
        ("model.n_heads", "2"),
        ("model.d_ff", "32"),
        ("model.n_encoder_layers", "1"),
        ("model.n_decoder_layers", "1"),
        ("model.max_len", "16"),
        ("model.latent_dim", "4"),
        ("train.total_steps", "12"),
        ("train.anneal_steps", "6"),
        ("train.warmup_steps", "4"),
        ("train.batch_size", "2"),
        ("train.eval_every", "6"),
        ("train.eval_slice", "4"),
        ("decode.beam_size", "2"),
        ("decode.max_len", "8"),
    ] {
        cmd.arg(format!("--{k}")).arg(v);
    }
}

fn run(cmd: &mut Command) -> Output {
    cmd.output().expect("binary runs")
}

fn assert_ok(out: &Output) {
    assert!(
        out.status.success(),
        "stdout: {}\nstderr: {}",
        String::from_utf8_lossy(&out.stdout),
        String::from_utf8_lossy(&out.stderr)
    );
}

fn train_into(runs: &Path, name: &str) -> PathBuf {
    let mut cmd = vhm();
    cmd.arg("train").arg("--runs-dir").arg(runs).arg("--run-name").arg(name);
    tiny_flags(&mut cmd);
    assert_ok(&run(&mut cmd));
    runs.join(name)
}

#[test]
fn help_lists_every_config_key_with_default() {
    let out = run(vhm().arg("train").arg("--help"));
    assert_ok(&out);
    let text = String::from_utf8_lossy(&out.stdout);
    for key in vhm_cli::config::KEYS {
        assert!(text.contains(key.key), "missing flag {}", key.key);
        assert!(text.contains(&format!("default: {}", key.default)), "missing default for {}", key.key);
    }
}

#[test]
fn generate_data_writes_corpora_and_is_deterministic() {
    let dir = tempfile::tempdir().unwrap();
    let out_a = dir.path().join("a");
    let out_b = dir.path().join("b");
    for out in [&out_a, &out_b] {
        let mut cmd = vhm();
        cmd.arg("generate-data").arg("--out").arg(out);
        tiny_flags(&mut cmd);
        assert_ok(&run(&mut cmd));
    }
    for file in ["mt.jsonl", "ms.jsonl", "cls.jsonl", "heldout_cls.jsonl", "vocab.txt", "config.echo"] {
        let a = std::fs::read(out_a.join(file)).unwrap();
        let b = std::fs::read(out_b.join(file)).unwrap();
        assert!(!a.is_empty());
        assert_eq!(a, b, "{file} differs between identical runs");
    }
    let mt = std::fs::read_to_string(out_a.join("mt.jsonl")).unwrap();
    assert_eq!(mt.lines().count(), 30);
}

#[test]
fn train_writes_echo_log_and_checkpoints() {
    let dir = tempfile::tempdir().unwrap();
    let run_path = train_into(dir.path(), "t1");
    assert!(run_path.join("config.echo").is_file());
    let log = std::fs::read_to_string(run_path.join("train.log")).unwrap();
    let data_lines = log.lines().filter(|l| !l.starts_with('#')).count();
    assert_eq!(data_lines, 12, "one record per step");
    assert!(log.lines().next().unwrap().starts_with('#'), "preamble first");
    assert!(run_path.join("checkpoints/last.ckpt").is_file());
    assert!(run_path.join("checkpoints/best.ckpt").is_file());

    let echo = std::fs::read_to_string(run_path.join("config.echo")).unwrap();
    assert!(echo.contains("model.d_model=16"));
}

#[test]
fn evaluate_writes_byte_identical_reports() {
    let dir = tempfile::tempdir().unwrap();
    let run_path = train_into(dir.path(), "t2");
    let ckpt = run_path.join("checkpoints/last.ckpt");

    let report = |name: &str| -> Vec<u8> {
        let mut cmd = vhm();
        cmd.arg("evaluate")
            .arg("--runs-dir")
            .arg(dir.path())
            .arg("--run-name")
            .arg(name)
            .arg("--checkpoint")
            .arg(&ckpt);
        tiny_flags(&mut cmd);
        assert_ok(&run(&mut cmd));
        std::fs::read(dir.path().join(name).join("metrics/report.txt")).unwrap()
    };
    let a = report("e1");
    let b = report("e2");
    assert_eq!(a, b, "metrics reports must be byte-identical across reruns");
    let text = String::from_utf8(a).unwrap();
    assert!(text.contains("# aggregate rouge1_f1="));
    assert!(text.lines().filter(|l| !l.starts_with('#')).count() >= 6);
}

#[test]
fn summarize_emits_one_line_per_input_line() {
    let dir = tempfile::tempdir().unwrap();
    let run_path = train_into(dir.path(), "t3");
    let ckpt = run_path.join("checkpoints/best.ckpt");
    let input = dir.path().join("articles.txt");
    std::fs::write(&input, "s1 s6 s2 s7\n").unwrap();

    let mut cmd = vhm();
    cmd.arg("summarize").arg("--checkpoint").arg(&ckpt).arg("--input").arg(&input);
    tiny_flags(&mut cmd);
    let out = run(&mut cmd);
    assert_ok(&out);
    let text = String::from_utf8(out.stdout).unwrap();
    assert_eq!(text.lines().count(), 1, "exactly one summary line: {text:?}");

    // Three inputs -> three lines, and --output writes a file instead.
    std::fs::write(&input, "s1 s6 s2 s7\ns3 s8 s4 s9\ns2 s6 s1 s8\n").unwrap();
    let out_file = dir.path().join("summaries.txt");
    let mut cmd = vhm();
    cmd.arg("summarize")
        .arg("--checkpoint")
        .arg(&ckpt)
        .arg("--input")
        .arg(&input)
        .arg("--output")
        .arg(&out_file);
    tiny_flags(&mut cmd);
    assert_ok(&run(&mut cmd));
    assert_eq!(std::fs::read_to_string(&out_file).unwrap().lines().count(), 3);
}

#[test]
fn unknown_config_key_exits_2_and_writes_nothing() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = dir.path().join("bad.cfg");
    std::fs::write(&cfg, "model.bogus_knob=1\n").unwrap();
    let runs = dir.path().join("runs");
    let mut cmd = vhm();
    cmd.arg("train").arg("--runs-dir").arg(&runs).arg("--config").arg(&cfg);
    let out = run(&mut cmd);
    assert_eq!(out.status.code(), Some(2));
    let stderr = String::from_utf8_lossy(&out.stderr);
    assert!(stderr.contains("model.bogus_knob"), "{stderr}");
    assert!(!runs.exists(), "no files may be written on config errors");
}

#[test]
fn invalid_flag_value_exits_2_with_key_name() {
    let mut cmd = vhm();
    cmd.arg("train").arg("--train.peak_lr").arg("banana");
    let out = run(&mut cmd);
    assert_eq!(out.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&out.stderr).contains("train.peak_lr"));
}

#[test]
fn missing_checkpoint_exits_5() {
    let dir = tempfile::tempdir().unwrap();
    let mut cmd = vhm();
    cmd.arg("evaluate")
        .arg("--runs-dir")
        .arg(dir.path())
        .arg("--checkpoint")
        .arg(dir.path().join("nope.ckpt"));
    tiny_flags(&mut cmd);
    let out = run(&mut cmd);
    assert_eq!(out.status.code(), Some(5));
}

#[test]
fn malformed_jsonl_exits_3_with_line_number() {
    let dir = tempfile::tempdir().unwrap();
    // Generate valid data, then corrupt one line.
    let data = dir.path().join("data");
    let mut cmd = vhm();
    cmd.arg("generate-data").arg("--out").arg(&data);
    tiny_flags(&mut cmd);
    assert_ok(&run(&mut cmd));
    let mt = data.join("mt.jsonl");
    let mut text = std::fs::read_to_string(&mt).unwrap();
    text.push_str("{\"task\":\"mt\",\"source\":\"s1\"}\n");
    std::fs::write(&mt, text).unwrap();

    let mut cmd = vhm();
    cmd.arg("train").arg("--runs-dir").arg(dir.path().join("runs")).arg("--data-dir").arg(&data);
    tiny_flags(&mut cmd);
    let out = run(&mut cmd);
    assert_eq!(out.status.code(), Some(3));
    let stderr = String::from_utf8_lossy(&out.stderr);
    assert!(stderr.contains("line 31") && stderr.contains("target"), "{stderr}");
}

#[test]
fn grid_single_cell_table_and_rerun_identical() {
    let dir = tempfile::tempdir().unwrap();
    let table = |name: &str| -> Vec<u8> {
        let mut cmd = vhm();
        cmd.arg("grid")
            .arg("--runs-dir")
            .arg(dir.path())
            .arg("--run-name")
            .arg(name)
            .arg("--grid.fractions")
            .arg("0.5")
            .arg("--grid.variants")
            .arg("vhm")
            .arg("--grid.seeds")
            .arg("1");
        tiny_flags(&mut cmd);
        assert_ok(&run(&mut cmd));
        std::fs::read(dir.path().join(name).join("results.tsv")).unwrap()
    };
    let a = table("g1");
    let b = table("g2");
    assert_eq!(a, b, "results tables must be byte-identical across reruns");
    let text = String::from_utf8(a).unwrap();
    let data_lines: Vec<&str> = text.lines().filter(|l| !l.starts_with('#')).collect();
    assert_eq!(data_lines.len(), 2, "header + one row:\n{text}");
    assert!(data_lines[0].starts_with("fraction\t"));
    assert!(data_lines[1].ends_with("ok"));
    // Cell isolation: its own subdirectory with a result file.
    assert!(dir.path().join("g1/cells/f0.5_vhm_s1/result.txt").is_file());
}

#[test]
fn grid_cell_count_matches_axes() {
    let dir = tempfile::tempdir().unwrap();
    let mut cmd = vhm();
    cmd.arg("grid")
        .arg("--runs-dir")
        .arg(dir.path())
        .arg("--run-name")
        .arg("g12")
        .arg("--grid.fractions")
        .arg("0.4,0.8")
        .arg("--grid.variants")
        .arg("vhm,baseline")
        .arg("--grid.seeds")
        .arg("1,2,3")
        .arg("--jobs")
        .arg("2");
    tiny_flags(&mut cmd);
    assert_ok(&run(&mut cmd));
    let text = std::fs::read_to_string(dir.path().join("g12/results.tsv")).unwrap();
    let rows = text.lines().filter(|l| !l.starts_with('#') && !l.starts_with("fraction")).count();
    assert_eq!(rows, 12, "2 fractions x 2 variants x 3 seeds");
}

#[test]
fn runs_dir_env_var_is_honored() {
    let dir = tempfile::tempdir().unwrap();
    let mut cmd = vhm();
    cmd.env(vhm_cli::runs::RUNS_DIR_ENV, dir.path());
    cmd.arg("train").arg("--run-name").arg("enved");
    tiny_flags(&mut cmd);
    assert_ok(&run(&mut cmd));
    assert!(dir.path().join("enved/train.log").is_file());
}

#[test]
fn train_does_not_mutate_input_data() {
    let dir = tempfile::tempdir().unwrap();
    let data = dir.path().join("data");
    let mut cmd = vhm();
    cmd.arg("generate-data").arg("--out").arg(&data);
    tiny_flags(&mut cmd);
    assert_ok(&run(&mut cmd));
    let before: Vec<Vec<u8>> = ["mt.jsonl", "ms.jsonl", "cls.jsonl", "heldout_cls.jsonl", "vocab.txt"]
        .iter()
        .map(|f| std::fs::read(data.join(f)).unwrap())
        .collect();

    let mut cmd = vhm();
    cmd.arg("train").arg("--runs-dir").arg(dir.path().join("runs")).arg("--data-dir").arg(&data);
    tiny_flags(&mut cmd);
    assert_ok(&run(&mut cmd));

    for (f, b) in ["mt.jsonl", "ms.jsonl", "cls.jsonl", "heldout_cls.jsonl", "vocab.txt"].iter().zip(before) {
        assert_eq!(std::fs::read(data.join(f)).unwrap(), b, "{f} was mutated");
    }
}
