//! Run directory layout: `runs/<name>/{config.echo, train.log, checkpoints/,
//! metrics/, cells/}`. The runs root comes from `--runs-dir`, the
//! `VHM_RUNS_DIR` environment variable, or defaults to `./runs`.

use std::path::{Path, PathBuf};

use crate::error::{CliError, Result};

pub const RUNS_DIR_ENV: &str = "VHM_RUNS_DIR";

pub fn runs_root(cli_override: Option<&Path>) -> PathBuf {
    if let Some(p) = cli_override {
        return p.to_path_buf();
    }
    if let Ok(env) = std::env::var(RUNS_DIR_ENV) {
        if !env.is_empty() {
            return PathBuf::from(env);
        }
    }
    PathBuf::from("runs")
}

#[derive(Debug, Clone)]
pub struct RunDir {
    pub path: PathBuf,
}

impl RunDir {
    pub fn create(root: &Path, name: &str) -> Result<RunDir> {
        let path = root.join(name);
        for sub in ["checkpoints", "metrics"] {
            let dir = path.join(sub);
            std::fs::create_dir_all(&dir).map_err(CliError::io(dir.display().to_string()))?;
        }
        Ok(RunDir { path })
    }

    pub fn config_echo(&self) -> PathBuf {
        self.path.join("config.echo")
    }

    pub fn train_log(&self) -> PathBuf {
        self.path.join("train.log")
    }

    pub fn checkpoint_last(&self) -> PathBuf {
        self.path.join("checkpoints").join("last.ckpt")
    }

    pub fn checkpoint_best(&self) -> PathBuf {
        self.path.join("checkpoints").join("best.ckpt")
    }

    pub fn metrics_report(&self) -> PathBuf {
        self.path.join("metrics").join("report.txt")
    }

    pub fn results_table(&self) -> PathBuf {
        self.path.join("results.tsv")
    }

    pub fn cell_dir(&self, label: &str) -> Result<PathBuf> {
        let dir = self.path.join("cells").join(label);
        std::fs::create_dir_all(&dir).map_err(CliError::io(dir.display().to_string()))?;
        Ok(dir)
    }
}

pub fn write_text(path: &Path, text: &str) -> Result<()> {
    std::fs::write(path, text).map_err(CliError::io(path.display().to_string()))
}

pub fn read_text(path: &Path) -> Result<String> {
    std::fs::read_to_string(path).map_err(CliError::io(path.display().to_string()))
}
