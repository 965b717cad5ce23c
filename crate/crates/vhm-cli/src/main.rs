use std::path::PathBuf;

use clap::{Arg, ArgAction, ArgMatches, Command};

use vhm_cli::commands;
use vhm_cli::config::{ConfigMap, ExperimentSetup, KEYS};
use vhm_cli::error::{CliError, Result};
use vhm_cli::runs::{runs_root, RunDir};

fn with_common_args(cmd: Command) -> Command {
    let mut cmd = cmd
        .arg(Arg::new("config").long("config").value_name("FILE").help("key=value config file"))
        .arg(Arg::new("run-name").long("run-name").value_name("NAME").help("run directory name under the runs root (default: run)"))
        .arg(Arg::new("runs-dir").long("runs-dir").value_name("DIR").help("runs root (overrides VHM_RUNS_DIR; default: runs)"));
    for key in KEYS {
        cmd = cmd.arg(
            Arg::new(key.key)
                .long(key.key)
                .value_name("VALUE")
                .help(format!("{} (default: {})", key.help, key.default)),
        );
    }
    cmd
}

fn build_cli() -> Command {
    Command::new("vhm")
        .about("Variational hierarchical cross-lingual summarization at desk scale")
        .subcommand_required(true)
        .arg_required_else_help(true)
        .subcommand(with_common_args(
            Command::new("generate-data")
                .about("Generate the synthetic corpora and vocabulary as JSONL + sidecar")
                .arg(Arg::new("out").long("out").value_name("DIR").help("output directory (default: <runs>/<run-name>/data)")),
        ))
        .subcommand(with_common_args(
            Command::new("train")
                .about("Train a model; writes config echo, per-step log and checkpoints")
                .arg(Arg::new("data-dir").long("data-dir").value_name("DIR").help("JSONL corpus directory (default: regenerate synthetic data)")),
        ))
        .subcommand(with_common_args(
            Command::new("evaluate")
                .about("Decode the held-out set with a checkpoint and write a metrics report")
                .arg(Arg::new("checkpoint").long("checkpoint").value_name("FILE").required(true))
                .arg(Arg::new("data-dir").long("data-dir").value_name("DIR")),
        ))
        .subcommand(with_common_args(
            Command::new("summarize")
                .about("Summarize one whitespace-tokenized article per input line")
                .arg(Arg::new("checkpoint").long("checkpoint").value_name("FILE").required(true))
                .arg(Arg::new("input").long("input").value_name("FILE").required(true))
                .arg(Arg::new("output").long("output").value_name("FILE").help("write summaries here instead of stdout"))
                .arg(Arg::new("vocab").long("vocab").value_name("FILE").help("vocabulary sidecar (default: synthetic vocabulary)")),
        ))
        .subcommand(with_common_args(
            Command::new("grid")
                .about("Run the few-shot x variant x seed experiment grid and write the results table")
                .arg(Arg::new("data-dir").long("data-dir").value_name("DIR"))
                .arg(
                    Arg::new("jobs")
                        .long("jobs")
                        .value_name("N")
                        .help("parallel cell workers (mirrors grid.jobs)")
                        .action(ArgAction::Set),
                ),
        ))
}

/// Defaults, then the config file, then explicit flags.
fn merge_config(matches: &ArgMatches) -> Result<ConfigMap> {
    let mut map = ConfigMap::default();
    if let Some(path) = matches.get_one::<String>("config") {
        let text = vhm_cli::runs::read_text(PathBuf::from(path).as_path())?;
        map.apply_file_text(&text)?;
    }
    for key in KEYS {
        if let Some(v) = matches.get_one::<String>(key.key) {
            map.set(key.key, v)?;
        }
    }
    if let Some(jobs) = matches.try_get_one::<String>("jobs").ok().flatten() {
        map.set("grid.jobs", jobs)?;
    }
    Ok(map)
}

fn run_dir(matches: &ArgMatches) -> Result<RunDir> {
    let root = runs_root(matches.get_one::<String>("runs-dir").map(PathBuf::from).as_deref());
    let name = matches.get_one::<String>("run-name").map(String::as_str).unwrap_or("run");
    RunDir::create(&root, name)
}

fn real_main() -> Result<()> {
    let matches = build_cli().get_matches();
    let (name, sub) = matches.subcommand().expect("subcommand required");
    let map = merge_config(sub)?;
    let setup = ExperimentSetup::from_map(&map)?;

    match name {
        "generate-data" => {
            let out = match sub.get_one::<String>("out") {
                Some(p) => PathBuf::from(p),
                None => run_dir(sub)?.path.join("data"),
            };
            commands::cmd_generate_data(&map, &setup, &out)
        }
        "train" => {
            let run = run_dir(sub)?;
            let data_dir = sub.get_one::<String>("data-dir").map(PathBuf::from);
            commands::cmd_train(&map, &setup, &run, data_dir.as_deref())
        }
        "evaluate" => {
            let run = run_dir(sub)?;
            let ckpt = PathBuf::from(sub.get_one::<String>("checkpoint").expect("required"));
            let data_dir = sub.get_one::<String>("data-dir").map(PathBuf::from);
            commands::cmd_evaluate(&map, &setup, &run, &ckpt, data_dir.as_deref())
        }
        "summarize" => {
            let ckpt = PathBuf::from(sub.get_one::<String>("checkpoint").expect("required"));
            let input = PathBuf::from(sub.get_one::<String>("input").expect("required"));
            let output = sub.get_one::<String>("output").map(PathBuf::from);
            let vocab = sub.get_one::<String>("vocab").map(PathBuf::from);
            commands::cmd_summarize(&setup, &ckpt, &input, output.as_deref(), vocab.as_deref())
        }
        "grid" => {
            let run = run_dir(sub)?;
            let data_dir = sub.get_one::<String>("data-dir").map(PathBuf::from);
            commands::cmd_grid(&map, &setup, &run, data_dir.as_deref())
        }
        other => Err(CliError::Config(format!("unknown command {other}"))),
    }
}

fn main() {
    match real_main() {
        Ok(()) => {}
        Err(e) => {
            eprintln!("error: {e}");
            std::process::exit(e.category().exit_code());
        }
    }
}
