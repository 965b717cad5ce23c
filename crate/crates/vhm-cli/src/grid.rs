//! Experiment-grid driver: enumerate (fraction x variant x seed) cells,
//! run them on a small worker pool, isolate per-cell failures, and keep
//! the output order deterministic regardless of scheduling.

use std::sync::atomic::{AtomicUsize, Ordering};
use std::sync::Mutex;

use vhm_core::data::Corpora;
use vhm_core::eval::DecodeConfig;
use vhm_core::model::ModelConfig;
use vhm_core::train::{run_cell, CellSpec, GridRow, NullClock, TrainingSchedule};

use crate::config::GridSpec;

/// One cell's result; failures carry the error text and keep their slot.
pub struct CellOutcome {
    pub spec: CellSpec,
    pub result: Result<GridRow, String>,
}

/// Cells in canonical order: fraction-major, then variant, then seed.
pub fn enumerate_cells(grid: &GridSpec) -> Vec<CellSpec> {
    let mut cells = Vec::with_capacity(grid.fractions.len() * grid.variants.len() * grid.seeds.len());
    for &fraction in &grid.fractions {
        for &variant in &grid.variants {
            for &seed in &grid.seeds {
                cells.push(CellSpec { fraction, variant, seed });
            }
        }
    }
    cells
}

pub fn cell_label(spec: &CellSpec) -> String {
    format!("f{}_{}_s{}", spec.fraction, spec.variant.label(), spec.seed)
}

/// Run every cell with up to `jobs` worker threads. Each cell builds its
/// own model and trains independently; the shared corpora are read-only.
pub fn run_grid(
    base: &ModelConfig,
    corpora: &Corpora,
    schedule: &TrainingSchedule,
    decode: &DecodeConfig,
    grid: &GridSpec,
    mut on_done: impl FnMut(&CellSpec, &Result<GridRow, String>),
) -> Vec<CellOutcome> {
    let cells = enumerate_cells(grid);
    let n = cells.len();
    let next = AtomicUsize::new(0);
    let slots: Vec<Mutex<Option<Result<GridRow, String>>>> = (0..n).map(|_| Mutex::new(None)).collect();

    let workers = grid.jobs.min(n).max(1);
    std::thread::scope(|scope| {
        for _ in 0..workers {
            scope.spawn(|| loop {
                let idx = next.fetch_add(1, Ordering::Relaxed);
                if idx >= n {
                    break;
                }
                let spec = &cells[idx];
                let result = run_cell(base, corpora, schedule, decode, spec, &NullClock)
                    .map_err(|e| e.to_string());
                *slots[idx].lock().expect("no poisoned cell slot") = Some(result);
            });
        }
    });

    cells
        .into_iter()
        .zip(slots)
        .map(|(spec, slot)| {
            let result = slot.into_inner().expect("no poisoned cell slot").expect("every cell ran");
            on_done(&spec, &result);
            CellOutcome { spec, result }
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use vhm_core::model::ModelVariant;

    #[test]
    fn enumeration_is_fraction_major_and_complete() {
        let grid = GridSpec {
            fractions: vec![0.01, 0.1],
            variants: vec![ModelVariant::full(), ModelVariant::NoLatentBaseline],
            seeds: vec![1, 2, 3],
            jobs: 1,
        };
        let cells = enumerate_cells(&grid);
        assert_eq!(cells.len(), 12);
        assert_eq!(cells[0].fraction, 0.01);
        assert_eq!(cells[11].fraction, 0.1);
        assert_eq!(cells[0].seed, 1);
        assert_eq!(cells[2].seed, 3);
    }
}
