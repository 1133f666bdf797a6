//! Per-member training: offline pretraining and selected-pixel updates.

use rand::Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use super::buffers::ReplayBuffer;
use super::offline::OfflineSample;
use crate::actor::{actor_head_gradient, actor_loss, gaussian_head, reparam_sample, DEFAULT_ENTROPY_COEFF};
use crate::agent::{Ensemble, Member};
use crate::critic::qr::DEFAULT_KAPPA;
use crate::critic::CriticKind;
use crate::error::{Error, Result};
use crate::net::{extract_patch_transformed, Adam, Gradients, GridTransform, Mlp};
use crate::rng::{derive_seed, stream, Tag};
use crate::sim::{tilt_from_axis, tool_axis};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TrainConfig {
    pub lr: f64,
    pub batch: usize,
    /// Huber threshold of the quantile loss.
    pub kappa: f64,
    pub entropy_coeff: f64,
    /// When false the actors keep their parameters.
    pub train_actor: bool,
    /// Random quarter turns and shifts during pretraining.
    pub augment: bool,
    pub max_shift: i32,
    /// Share of pretraining pixels drawn from object pixels; the rest are
    /// drawn from the whole bin.
    pub object_fraction: f64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            lr: 1e-4,
            batch: 12,
            kappa: DEFAULT_KAPPA,
            entropy_coeff: DEFAULT_ENTROPY_COEFF,
            train_actor: true,
            augment: true,
            max_shift: 4,
            object_fraction: 0.5,
        }
    }
}

/// Critic loss for one `(patch, action, target)`; parameter gradients are
/// added to `grads`.
pub fn critic_sample_grad(
    kind: CriticKind,
    critic: &Mlp,
    patch: &[f64],
    action: [f64; 2],
    target: f64,
    kappa: f64,
    grads: &mut Gradients,
) -> Result<f64> {
    let mut x = Vec::with_capacity(patch.len() + 2);
    x.extend_from_slice(patch);
    x.extend_from_slice(&action);
    let trace = critic.trace(&x)?;
    let (loss, d_raw) = kind.head_loss(trace.output().as_slice().expect("contiguous"), target, kappa);
    critic.backward_from(&trace, &d_raw, grads)?;
    Ok(loss)
}

/// Actor loss at the reparameterized sample `mu + sigma * eps`, with the
/// critic held fixed; actor gradients are added to `grads`.
pub fn actor_sample_grad(
    kind: CriticKind,
    actor: &Mlp,
    critic: &Mlp,
    patch: &[f64],
    eps: [f64; 2],
    entropy_coeff: f64,
    grads: &mut Gradients,
) -> Result<f64> {
    let a_trace = actor.trace(patch)?;
    let head = gaussian_head(a_trace.output().as_slice().expect("contiguous"));
    let sample = reparam_sample(head.mu, head.sigma, eps);
    let mut x = Vec::with_capacity(patch.len() + 2);
    x.extend_from_slice(patch);
    x.extend_from_slice(&sample.action);
    let c_trace = critic.trace(&x)?;
    let (q, dq_draw) = kind.expected_reward(c_trace.output().as_slice().expect("contiguous"));
    let d_in = critic.input_gradient(&c_trace, &dq_draw)?;
    let n = patch.len();
    let dq_da = [d_in[n], d_in[n + 1]];
    let d_raw = actor_head_gradient(&head, eps, dq_da, entropy_coeff);
    actor.backward_from(&a_trace, &d_raw, grads)?;
    Ok(actor_loss(q, sample.log_prob, entropy_coeff).loss)
}

/// Squared error between the actor mean and `target`; the standard
/// deviation heads get no gradient.
pub fn actor_regression_grad(actor: &Mlp, patch: &[f64], target: [f64; 2], grads: &mut Gradients) -> Result<f64> {
    let trace = actor.trace(patch)?;
    let head = gaussian_head(trace.output().as_slice().expect("contiguous"));
    let mut d = [0.0; 4];
    let mut loss = 0.0;
    for i in 0..2 {
        let e = head.mu[i] - target[i];
        loss += 0.5 * e * e;
        d[i] = e * head.d_mu[i];
    }
    actor.backward_from(&trace, &d, grads)?;
    Ok(loss)
}

/// One member with its optimizers and update counter.
#[derive(Debug, Clone)]
pub struct MemberTrainer {
    pub index: usize,
    pub member: Member,
    pub updates: u64,
    seed: u64,
    actor_opt: Adam,
    critic_opt: Adam,
}

/// Losses of one update, averaged over the batch.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct UpdateStats {
    pub critic_loss: f64,
    pub actor_loss: f64,
}

impl MemberTrainer {
    pub fn new(index: usize, member: Member, seed: u64) -> Self {
        Self {
            index,
            actor_opt: Adam::new(&member.actor),
            critic_opt: Adam::new(&member.critic),
            member,
            updates: 0,
            seed: derive_seed(seed, Tag::Batch, index as u64),
        }
    }

    fn apply(&mut self, actor_g: &mut Gradients, critic_g: &mut Gradients, batch: usize, cfg: &TrainConfig) -> Result<()> {
        let k = 1.0 / batch as f64;
        critic_g.scale(k);
        self.critic_opt.step(&mut self.member.critic, critic_g, cfg.lr)?;
        if cfg.train_actor {
            actor_g.scale(k);
            self.actor_opt.step(&mut self.member.actor, actor_g, cfg.lr)?;
        }
        self.updates += 1;
        Ok(())
    }

    fn diverged(&self, what: &str, loss: f64) -> Error {
        Error::Diverged(format!(
            "member {} {what} loss {loss} at update {}",
            self.index, self.updates
        ))
    }
}

/// Per-sample pixel lists used for pretraining draws.
struct PixelIndex {
    objects: Vec<(usize, usize)>,
    bin: Vec<(usize, usize)>,
}

fn pixel_index(s: &OfflineSample) -> PixelIndex {
    PixelIndex {
        objects: s.valid_mask.indexed_iter().filter(|(_, &v)| v).map(|(i, _)| i).collect(),
        bin: s.scene.bin_mask.indexed_iter().filter(|(_, &v)| v).map(|(i, _)| i).collect(),
    }
}

fn rotate_action(t: &GridTransform, alpha: f64, beta: f64) -> [f64; 2] {
    if t.quarter_turns % 4 == 0 {
        return [alpha, beta];
    }
    let axis = tool_axis(alpha, beta);
    let (r, c) = t.rotate_vector(axis[0], axis[1]);
    let (a, b) = tilt_from_axis([r, c, axis[2]]);
    [a, b]
}

/// Offline regression of every member on the labelled dataset. Member `j`
/// draws batches from its own stream, so members see different data.
pub fn pretrain(
    dataset: &[OfflineSample],
    ensemble: &Ensemble,
    steps: u64,
    cfg: &TrainConfig,
    seed: u64,
) -> Result<Ensemble> {
    if steps == 0 {
        return Ok(ensemble.clone());
    }
    if dataset.is_empty() {
        return Err(Error::InvalidArgument("pretraining needs a non-empty dataset".into()));
    }
    let index: Vec<PixelIndex> = dataset.iter().map(pixel_index).collect();
    let mut out = ensemble.clone();
    for (j, member) in out.members.iter_mut().enumerate() {
        let mut tr = MemberTrainer::new(j, member.clone(), seed);
        for step in 0..steps {
            let mut rng = stream(tr.seed, Tag::Augment, step);
            let mut critic_g = tr.member.critic.zero_gradients();
            let mut actor_g = tr.member.actor.zero_gradients();
            let (mut cl, mut al) = (0.0, 0.0);
            for _ in 0..cfg.batch {
                let k = rng.random_range(0..dataset.len());
                let s = &dataset[k];
                let px = &index[k];
                let pool = if !px.objects.is_empty() && rng.random::<f64>() < cfg.object_fraction {
                    &px.objects
                } else {
                    &px.bin
                };
                let (r, c) = pool[rng.random_range(0..pool.len())];
                let (h, w) = s.observation.dim();
                let mut t = GridTransform::identity();
                if cfg.augment {
                    t.quarter_turns = if h == w { rng.random_range(0..4) } else { 2 * rng.random_range(0..2) };
                    t.shift = (
                        rng.random_range(-cfg.max_shift..=cfg.max_shift),
                        rng.random_range(-cfg.max_shift..=cfg.max_shift),
                    );
                }
                let (fr, fc) = match t.forward(r, c, h, w) {
                    Some(p) => p,
                    None => {
                        t = GridTransform::identity();
                        (r, c)
                    }
                };
                let patch = extract_patch_transformed(&s.observation, fr, fc, ensemble.patch, &t)?;
                let action = rotate_action(&t, s.target_action[[r, c, 0]], s.target_action[[r, c, 1]]);
                cl += critic_sample_grad(
                    ensemble.kind,
                    &tr.member.critic,
                    patch.as_slice(),
                    action,
                    s.target_q[[r, c]],
                    cfg.kappa,
                    &mut critic_g,
                )?;
                if cfg.train_actor {
                    al += actor_regression_grad(&tr.member.actor, patch.as_slice(), action, &mut actor_g)?;
                }
            }
            if !cl.is_finite() {
                return Err(tr.diverged("critic", cl));
            }
            if !al.is_finite() {
                return Err(tr.diverged("actor", al));
            }
            tr.apply(&mut actor_g, &mut critic_g, cfg.batch, cfg)?;
            if step % 1000 == 999 {
                log::debug!(
                    "pretrain member {j} step {}: critic {:.5} actor {:.5}",
                    step + 1,
                    cl / cfg.batch as f64,
                    al / cfg.batch as f64
                );
            }
        }
        *member = tr.member;
    }
    Ok(out)
}

/// One update of one member on a uniform batch from the replay buffer,
/// using only the stored pixel of each transition. Returns `None` (and
/// leaves the member untouched) when the buffer is empty.
pub fn learner_update(
    tr: &mut MemberTrainer,
    replay: &ReplayBuffer,
    kind: CriticKind,
    cfg: &TrainConfig,
) -> Result<Option<UpdateStats>> {
    let mut rng = stream(tr.seed, Tag::Batch, tr.updates);
    let batch = replay.sample(&mut rng, cfg.batch);
    if batch.is_empty() {
        log::warn!("member {}: replay buffer is empty, skipping update", tr.index);
        return Ok(None);
    }
    let mut critic_g = tr.member.critic.zero_gradients();
    let mut actor_g = tr.member.actor.zero_gradients();
    let (mut cl, mut al) = (0.0, 0.0);
    let mut noise = stream(tr.seed, Tag::ActorNoise, tr.updates);
    for t in &batch {
        cl += critic_sample_grad(
            kind,
            &tr.member.critic,
            t.patch.as_slice(),
            t.action,
            t.reward as f64,
            cfg.kappa,
            &mut critic_g,
        )?;
        if cfg.train_actor {
            let eps = [noise.sample(StandardNormal), noise.sample(StandardNormal)];
            al += actor_sample_grad(
                kind,
                &tr.member.actor,
                &tr.member.critic,
                t.patch.as_slice(),
                eps,
                cfg.entropy_coeff,
                &mut actor_g,
            )?;
        }
    }
    if !cl.is_finite() || !al.is_finite() {
        return Err(tr.diverged("online", cl + al));
    }
    let n = batch.len();
    tr.apply(&mut actor_g, &mut critic_g, n, cfg)?;
    Ok(Some(UpdateStats {
        critic_loss: cl / n as f64,
        actor_loss: al / n as f64,
    }))
}
