//! Reward, uncertainty and UCB maps of one observation.

use std::path::Path;

use ndarray::Array2;

use crate::agent::Ensemble;
use crate::error::Result;
use crate::explore::{ucb_map, UcbConfig};
use crate::gridio::{write_csv, write_pgm_normalized};
use crate::sim::Observation;

#[derive(Debug, Clone, PartialEq)]
pub struct MapSet {
    pub q_mean: Array2<f64>,
    pub v_epi: Array2<f64>,
    pub v_ale: Array2<f64>,
    pub v_all: Array2<f64>,
    pub q_ucb: Array2<f64>,
}

impl MapSet {
    pub fn named(&self) -> [(&'static str, &Array2<f64>); 5] {
        [
            ("q_mean", &self.q_mean),
            ("v_epi", &self.v_epi),
            ("v_ale", &self.v_ale),
            ("v_all", &self.v_all),
            ("q_ucb", &self.q_ucb),
        ]
    }
}

/// Maps at training step `t` (the step only matters for adaptive
/// schedules).
pub fn compute_maps(ensemble: &Ensemble, obs: &Observation, ucb: &UcbConfig, t: u64) -> Result<MapSet> {
    let pred = ensemble.predict(obs)?;
    let q_ucb = ucb_map(&pred.stats.q_mean, &pred.stats, ucb, t)?;
    let s = pred.stats;
    Ok(MapSet {
        q_mean: s.q_mean,
        v_epi: s.v_epi,
        v_ale: s.v_ale,
        v_all: s.v_all,
        q_ucb,
    })
}

/// Writes `<name>.csv` (exact values) and `<name>.pgm` normalized to the
/// map's own min/max, with a `<name>.pgm.txt` sidecar.
pub fn export_maps(dir: &Path, maps: &MapSet) -> Result<()> {
    std::fs::create_dir_all(dir)?;
    for (name, grid) in maps.named() {
        write_csv(&dir.join(format!("{name}.csv")), grid.view())?;
        write_pgm_normalized(&dir.join(format!("{name}.pgm")), grid.view())?;
    }
    Ok(())
}
