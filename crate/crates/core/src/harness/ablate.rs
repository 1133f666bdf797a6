//! Sweeps over critics, exploration strategies and seeds.

use std::fmt::Write as _;

use serde::{Deserialize, Serialize};

use super::config::{RunConfig, Strategy};
use super::eval::evaluate;
use super::experiment::{online, pretrained};
use crate::critic::CriticKind;
use crate::sim::BinSim;

/// One configuration of the sweep.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct Cell {
    pub critic: CriticKind,
    pub strategy: Strategy,
}

impl Cell {
    pub fn label(&self) -> String {
        format!("{}/{}", self.critic, self.strategy)
    }
}

/// {mv, qr20} x every strategy, then qr10 and qr100 with epi-adaptive.
pub fn default_grid() -> Vec<Cell> {
    let mut cells = Vec::new();
    for critic in [CriticKind::Mv, CriticKind::Qr { heads: 20 }] {
        for strategy in Strategy::sweep() {
            cells.push(Cell { critic, strategy });
        }
    }
    let adaptive: Strategy = "epi-adaptive".parse().expect("valid strategy");
    for heads in [10, 100] {
        cells.push(Cell {
            critic: CriticKind::Qr { heads },
            strategy: adaptive,
        });
    }
    cells
}

/// Head-count table: qr{10,20,100} with epi-adaptive.
pub fn heads_grid() -> Vec<Cell> {
    let adaptive: Strategy = "epi-adaptive".parse().expect("valid strategy");
    [10, 20, 100]
        .into_iter()
        .map(|heads| Cell {
            critic: CriticKind::Qr { heads },
            strategy: adaptive,
        })
        .collect()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SeedRow {
    pub cell: Cell,
    pub seed: u64,
    pub grasp_success_rate: Option<f64>,
    pub clearing_rate: Option<f64>,
    pub error: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AggregateRow {
    pub cell: Cell,
    /// Seeds that completed.
    pub n: usize,
    pub failed: usize,
    pub success_mean: f64,
    pub success_std: f64,
    pub clearing_mean: f64,
    pub clearing_std: f64,
}

/// Mean and sample standard deviation; zero spread for fewer than two
/// values, NaN mean for none.
pub fn mean_std(xs: &[f64]) -> (f64, f64) {
    let n = xs.len();
    if n == 0 {
        return (f64::NAN, f64::NAN);
    }
    let mean = xs.iter().sum::<f64>() / n as f64;
    if n == 1 {
        return (mean, 0.0);
    }
    let ss: f64 = xs.iter().map(|x| (x - mean).powi(2)).sum();
    (mean, (ss / (n - 1) as f64).sqrt())
}

/// Runs every cell on every seed. Pretraining is shared by cells with the
/// same critic. A failing cell is recorded and the sweep moves on.
pub fn run_ablation(
    sim: &BinSim,
    cfg: &RunConfig,
    cells: &[Cell],
    seeds: &[u64],
    mut progress: impl FnMut(&SeedRow),
) -> Vec<SeedRow> {
    let mut rows = Vec::with_capacity(cells.len() * seeds.len());
    let mut critics: Vec<CriticKind> = Vec::new();
    for c in cells {
        if !critics.contains(&c.critic) {
            critics.push(c.critic);
        }
    }
    let mut by_cell: Vec<Vec<SeedRow>> = vec![Vec::new(); cells.len()];
    for &seed in seeds {
        for &critic in &critics {
            let offline = pretrained(sim, cfg, critic, seed);
            for (i, cell) in cells.iter().enumerate().filter(|(_, c)| c.critic == critic) {
                let result = offline.as_ref().map_err(|e| e.to_string()).and_then(|init| {
                    let run = online(sim, cfg, init, cell.strategy, seed).map_err(|e| e.to_string())?;
                    if let Some(f) = run.failure {
                        return Err(f);
                    }
                    evaluate(sim, &run.ensemble, &cfg.eval, run.updates).map_err(|e| e.to_string())
                });
                let row = match result {
                    Ok(m) => SeedRow {
                        cell: *cell,
                        seed,
                        grasp_success_rate: Some(m.grasp_success_rate),
                        clearing_rate: Some(m.clearing_rate),
                        error: None,
                    },
                    Err(e) => SeedRow {
                        cell: *cell,
                        seed,
                        grasp_success_rate: None,
                        clearing_rate: None,
                        error: Some(e),
                    },
                };
                progress(&row);
                by_cell[i].push(row);
            }
        }
    }
    for mut r in by_cell {
        rows.append(&mut r);
    }
    rows
}

/// One aggregate per cell, in order of first appearance.
pub fn aggregate(rows: &[SeedRow]) -> Vec<AggregateRow> {
    let mut cells: Vec<Cell> = Vec::new();
    for r in rows {
        if !cells.contains(&r.cell) {
            cells.push(r.cell);
        }
    }
    cells
        .into_iter()
        .map(|cell| {
            let mine: Vec<&SeedRow> = rows.iter().filter(|r| r.cell == cell).collect();
            let ok: Vec<&SeedRow> = mine.iter().copied().filter(|r| r.error.is_none()).collect();
            let s: Vec<f64> = ok.iter().filter_map(|r| r.grasp_success_rate).collect();
            let c: Vec<f64> = ok.iter().filter_map(|r| r.clearing_rate).collect();
            let (success_mean, success_std) = mean_std(&s);
            let (clearing_mean, clearing_std) = mean_std(&c);
            AggregateRow {
                cell,
                n: ok.len(),
                failed: mine.len() - ok.len(),
                success_mean,
                success_std,
                clearing_mean,
                clearing_std,
            }
        })
        .collect()
}

pub const CSV_HEADER: &str =
    "row,critic,strategy,seed,n,grasp_success_mean,grasp_success_std,clearing_mean,clearing_std,error";

fn opt(x: Option<f64>) -> String {
    x.map(|v| format!("{v:?}")).unwrap_or_default()
}

/// Per-seed rows (`row = seed`) followed by one `row = aggregate` line per
/// cell. Errors are quoted with inner quotes doubled.
pub fn ablation_csv(rows: &[SeedRow]) -> String {
    let mut s = String::new();
    s.push_str(CSV_HEADER);
    s.push('\n');
    for r in rows {
        let err = r
            .error
            .as_deref()
            .map(|e| format!("\"{}\"", e.replace('"', "\"\"")))
            .unwrap_or_default();
        let ok = r.error.is_none() as usize;
        let _ = writeln!(
            s,
            "seed,{},{},{},{ok},{},,{},,{err}",
            r.cell.critic,
            r.cell.strategy,
            r.seed,
            opt(r.grasp_success_rate),
            opt(r.clearing_rate)
        );
    }
    for a in aggregate(rows) {
        let _ = writeln!(
            s,
            "aggregate,{},{},,{},{:?},{:?},{:?},{:?},{}",
            a.cell.critic,
            a.cell.strategy,
            a.n,
            a.success_mean,
            a.success_std,
            a.clearing_mean,
            a.clearing_std,
            if a.failed > 0 { format!("{} failed", a.failed) } else { String::new() }
        );
    }
    s
}

#[cfg(test)]
mod tests {
    use super::*;

    fn row(cell: Cell, seed: u64, s: f64, c: f64) -> SeedRow {
        SeedRow {
            cell,
            seed,
            grasp_success_rate: Some(s),
            clearing_rate: Some(c),
            error: None,
        }
    }

    #[test]
    fn sample_std() {
        let (m, s) = mean_std(&[0.2, 0.4, 0.6]);
        assert!((m - 0.4).abs() < 1e-15);
        assert!((s - 0.2).abs() < 1e-15);
        assert_eq!(mean_std(&[0.3]), (0.3, 0.0));
        assert!(mean_std(&[]).0.is_nan());
    }

    #[test]
    fn aggregates_skip_failures() {
        let g = default_grid();
        let mut rows = vec![row(g[0], 1, 0.5, 0.6), row(g[0], 2, 0.7, 0.8), row(g[1], 1, 0.1, 0.2)];
        rows.push(SeedRow {
            cell: g[1],
            seed: 2,
            grasp_success_rate: None,
            clearing_rate: None,
            error: Some("worker \"x\" died".into()),
        });
        let a = aggregate(&rows);
        assert_eq!(a.len(), 2);
        assert_eq!((a[0].n, a[0].failed), (2, 0));
        assert!((a[0].clearing_mean - 0.7).abs() < 1e-15);
        assert_eq!((a[1].n, a[1].failed, a[1].clearing_std), (1, 1, 0.0));
        let csv = ablation_csv(&rows);
        assert_eq!(csv.lines().count(), 1 + 4 + 2);
        assert!(csv.contains("\"worker \"\"x\"\" died\""));
    }

    #[test]
    fn grids() {
        assert_eq!(default_grid().len(), 12);
        assert_eq!(heads_grid()[2].label(), "qr100/epi-adaptive");
    }
}
