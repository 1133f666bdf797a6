//! Ensemble of actor-critic members and full-map inference.

use std::path::{Path, PathBuf};

use ndarray::{Array2, Array3};
use serde::{Deserialize, Serialize};

use crate::actor::{actor_architecture, actor_predict_features, ensemble_action_mean, ActionMaps};
use crate::critic::mv::{mv_ensemble_stats, mv_predict_inputs};
use crate::critic::qr::{qr_ensemble_stats, qr_predict_inputs};
use crate::critic::{CriticInputs, CriticKind, UncertaintyMaps};
use crate::error::{Error, Result};
use crate::net::{checkpoint, init_params, Mlp, ObsFeatures, DEFAULT_PATCH};
use crate::sim::Observation;

#[derive(Debug, Clone, PartialEq)]
pub struct Member {
    pub actor: Mlp,
    pub critic: Mlp,
}

impl Member {
    pub fn checksum(&self) -> u64 {
        self.actor.checksum().rotate_left(1) ^ self.critic.checksum()
    }

    pub fn is_finite(&self) -> bool {
        self.actor.is_finite() && self.critic.is_finite()
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Ensemble {
    pub kind: CriticKind,
    pub patch: usize,
    pub members: Vec<Member>,
}

/// Everything the explorer needs from one forward pass of the ensemble.
#[derive(Debug, Clone)]
pub struct EnsemblePrediction {
    pub actions: Vec<ActionMaps>,
    pub action_mean: Array3<f64>,
    pub stats: UncertaintyMaps,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
struct CheckpointMeta {
    critic: String,
    patch: usize,
    members: usize,
}

impl Ensemble {
    /// Independently initialized members: member `j` initializes both of
    /// its networks from seed `seed + j`.
    pub fn init(seed: u64, kind: CriticKind, patch: usize, n: usize) -> Result<Self> {
        if n == 0 {
            return Err(Error::EmptyEnsemble);
        }
        if patch % 2 == 0 {
            return Err(Error::EvenWindow(patch));
        }
        let members = (0..n as u64)
            .map(|j| Member {
                actor: init_params(seed.wrapping_add(j), &actor_architecture(patch)),
                critic: init_params(seed.wrapping_add(j), &kind.architecture(patch)),
            })
            .collect();
        Ok(Self { kind, patch, members })
    }

    pub fn standard(seed: u64, kind: CriticKind) -> Result<Self> {
        Self::init(seed, kind, DEFAULT_PATCH, 3)
    }

    pub fn len(&self) -> usize {
        self.members.len()
    }

    pub fn is_empty(&self) -> bool {
        self.members.is_empty()
    }

    pub fn checksum(&self) -> u64 {
        self.members
            .iter()
            .fold(0xcbf2_9ce4_8422_2325, |h, m| (h ^ m.checksum()).wrapping_mul(0x100_0000_01b3))
    }

    pub fn predict(&self, obs: &Observation) -> Result<EnsemblePrediction> {
        self.predict_features(&ObsFeatures::new(obs, self.patch)?)
    }

    /// Member action maps, their mean, and the critics evaluated at the
    /// mean action.
    pub fn predict_features(&self, features: &ObsFeatures) -> Result<EnsemblePrediction> {
        if self.members.is_empty() {
            return Err(Error::EmptyEnsemble);
        }
        let actions = self
            .members
            .iter()
            .map(|m| actor_predict_features(&m.actor, features))
            .collect::<Result<Vec<_>>>()?;
        let action_mean = ensemble_action_mean(&actions)?;
        let inputs = CriticInputs::new(features, &action_mean)?;
        let stats = match self.kind {
            CriticKind::Mv => {
                let preds = self
                    .members
                    .iter()
                    .map(|m| mv_predict_inputs(&m.critic, &inputs))
                    .collect::<Result<Vec<_>>>()?;
                mv_ensemble_stats(&preds)?
            }
            CriticKind::Qr { .. } => {
                let preds = self
                    .members
                    .iter()
                    .map(|m| qr_predict_inputs(&m.critic, &inputs))
                    .collect::<Result<Vec<_>>>()?;
                qr_ensemble_stats(&preds)?
            }
        };
        Ok(EnsemblePrediction {
            actions,
            action_mean,
            stats,
        })
    }

    /// Reward map only.
    pub fn q_map(&self, obs: &Observation) -> Result<Array2<f64>> {
        Ok(self.predict(obs)?.stats.q_mean)
    }

    fn meta_path(path: &Path) -> PathBuf {
        let mut name = path.as_os_str().to_owned();
        name.push(".json");
        PathBuf::from(name)
    }

    /// Writes the networks (actor then critic per member) and a JSON
    /// sidecar naming the critic family and patch size.
    pub fn save(&self, path: &Path) -> Result<()> {
        let nets: Vec<&Mlp> = self.members.iter().flat_map(|m| [&m.actor, &m.critic]).collect();
        checkpoint::write(path, &nets)?;
        let meta = CheckpointMeta {
            critic: self.kind.to_string(),
            patch: self.patch,
            members: self.members.len(),
        };
        crate::gridio::write_atomic(&Self::meta_path(path), serde_json::to_string_pretty(&meta)?.as_bytes())
    }

    pub fn load(path: &Path) -> Result<Self> {
        let meta_file = Self::meta_path(path);
        let meta: CheckpointMeta = serde_json::from_str(
            &std::fs::read_to_string(&meta_file)
                .map_err(|e| Error::Checkpoint(format!("{}: {e}", meta_file.display())))?,
        )?;
        let kind: CriticKind = meta.critic.parse()?;
        let nets = checkpoint::read(path)?;
        if nets.len() != 2 * meta.members || meta.members == 0 {
            return Err(Error::Checkpoint(format!(
                "expected {} networks, found {}",
                2 * meta.members,
                nets.len()
            )));
        }
        let actor_arch = actor_architecture(meta.patch);
        let critic_arch = kind.architecture(meta.patch);
        let mut members = Vec::with_capacity(meta.members);
        let mut it = nets.into_iter();
        while let (Some(actor), Some(critic)) = (it.next(), it.next()) {
            if actor.architecture().input != actor_arch.input
                || actor.head_count() != actor_arch.heads
                || critic.architecture().input != critic_arch.input
                || critic.head_count() != critic_arch.heads
            {
                return Err(Error::Checkpoint("network shapes do not match the metadata".into()));
            }
            members.push(Member { actor, critic });
        }
        Ok(Self {
            kind,
            patch: meta.patch,
            members,
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::sim::{generate_scene, render, Difficulty};

    #[test]
    fn members_differ_and_init_is_deterministic() {
        let a = Ensemble::standard(1, CriticKind::Mv).unwrap();
        let b = Ensemble::standard(1, CriticKind::Mv).unwrap();
        assert_eq!(a, b);
        assert_ne!(a.members[0].critic, a.members[1].critic);
        assert_ne!(a.checksum(), Ensemble::standard(2, CriticKind::Mv).unwrap().checksum());
    }

    #[test]
    fn identical_members_have_zero_epistemic_map() {
        let mut e = Ensemble::standard(4, CriticKind::Qr { heads: 5 }).unwrap();
        let m = e.members[0].clone();
        e.members = vec![m.clone(), m.clone(), m];
        let obs = render(&generate_scene(3, 8, Difficulty::Mixed).unwrap());
        let p = e.predict(&obs).unwrap();
        assert!(p.stats.v_epi.iter().all(|&v| v.abs() < 1e-15));
    }

    #[test]
    fn prediction_is_invariant_to_member_order() {
        let e = Ensemble::standard(4, CriticKind::Mv).unwrap();
        let mut r = e.clone();
        r.members.reverse();
        let obs = render(&generate_scene(3, 8, Difficulty::Mixed).unwrap());
        let (a, b) = (e.predict(&obs).unwrap(), r.predict(&obs).unwrap());
        for (x, y) in a.stats.v_all.iter().zip(b.stats.v_all.iter()) {
            assert!((x - y).abs() < 1e-12);
        }
    }

    #[test]
    fn checkpoint_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("ens.ckpt");
        let e = Ensemble::init(9, CriticKind::Qr { heads: 2 }, 3, 2).unwrap();
        e.save(&path).unwrap();
        assert_eq!(Ensemble::load(&path).unwrap(), e);
        assert!(Ensemble::load(&dir.path().join("missing.ckpt")).is_err());
    }
}
