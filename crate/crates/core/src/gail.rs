//! Adversarial imitation training of the multi-stream head-movement policy.
//!
//! One generator network is shared by all streams and conditioned on a
//! one-hot stream code. A discriminator scores (observation, action) pairs as
//! expert or generated; a selector head on the same trunk recovers the
//! stream code. The generator is trained with REINFORCE on
//! `-log(1 - D) + lambda1 * log S(c)` rewards.

use std::collections::HashMap;
use std::path::Path;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::env::{transition, ActionId, EnvConfig, FixationMode, HeadEnv, Rollout};
use crate::error::{Error, Result};
use crate::exec::{self, derive_seed, ExecMode};
use crate::image::{EquirectImage, ImagePatch};
use crate::io::Provenance;
use crate::nn::{
    read_checkpoint, write_checkpoint, Checkpoint, DiscriminatorNet, NamedTensor, NetConfig,
    Optimizer, OptimizerKind, PolicyValueNet, Tensor,
};
use crate::salmap::{build_fcb, fuse_fcb, render_saliency, FcbParams, SaliencyMap};
use crate::sphere::SpherePoint;

/// Discriminator outputs are clamped to `[D_CLAMP, 1 - D_CLAMP]` before any log.
pub const D_CLAMP: f64 = 1e-6;
/// Floor applied to probabilities before taking logs.
const PROB_FLOOR: f64 = 1e-12;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct LatentCode {
    index: usize,
    streams: usize,
}

impl LatentCode {
    pub fn new(index: usize, streams: usize) -> Result<Self> {
        if index >= streams {
            return Err(Error::invalid(format!(
                "stream {index} out of range for {streams} streams"
            )));
        }
        Ok(LatentCode { index, streams })
    }

    pub fn index(self) -> usize {
        self.index
    }

    pub fn streams(self) -> usize {
        self.streams
    }

    pub fn one_hot(self) -> Vec<f64> {
        let mut v = vec![0.0; self.streams];
        v[self.index] = 1.0;
        v
    }
}

/// One observation-action pair plus everything computed about it.
#[derive(Clone, Debug, PartialEq)]
pub struct TransitionRecord {
    pub obs: ImagePatch,
    pub action: ActionId,
    pub stream: usize,
    /// Eval-mode discriminator output at reward time.
    pub d_out: f64,
    pub reward: f64,
    pub return_: f64,
    /// Policy-gradient weight used in the generator update.
    pub weight: f64,
    /// `pi(a) / mu(a)` at sampling time, where `mu` is the epsilon mixture
    /// the action was drawn from; 1 for greedy and expert pairs.
    pub rho: f64,
}

impl TransitionRecord {
    pub fn new(obs: ImagePatch, action: ActionId, stream: usize) -> Self {
        TransitionRecord {
            obs,
            action,
            stream,
            d_out: 0.0,
            reward: 0.0,
            return_: 0.0,
            weight: 0.0,
            rho: 1.0,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct GailHyper {
    /// Maximum training cycles (H).
    pub cycles: usize,
    /// Episodes per cycle (I).
    pub episodes: usize,
    /// Steps per episode (B).
    pub episode_len: usize,
    /// Number of streams (N).
    pub streams: usize,
    pub gamma: f64,
    pub lambda1: f64,
    pub lambda2: f64,
    /// Generator minibatch size.
    pub minibatch: usize,
    /// Largest discriminator / selector batch per side.
    pub d_batch: usize,
    pub gen_lr: f64,
    pub disc_lr: f64,
    /// L2 decay for the discriminator and selector.
    pub weight_decay: f64,
    pub policy_slope: f64,
    pub disc_slope: f64,
    pub bn_eps: f64,
    pub bn_momentum: f64,
    pub eps_start: f64,
    pub eps_end: f64,
    /// Fraction of `cycles` over which epsilon decays linearly.
    pub eps_decay_frac: f64,
    /// Relative change of the moving-average reward that stops training; 0 disables.
    pub early_stop_tol: f64,
    pub early_stop_window: usize,
    pub early_stop_min_cycles: usize,
    /// Weight the policy gradient by `lambda2 + R - V` instead of `lambda2 + R`.
    pub advantage: bool,
    /// Coefficient of an explicit entropy bonus on the policy; 0 keeps the
    /// update to the `lambda2 + R` weighted score function alone.
    pub entropy_coef: f64,
    /// Scale each policy-gradient term by `pi(a) / mu(a)` so that actions
    /// drawn from the epsilon mixture give an unbiased on-policy gradient.
    pub importance_weighting: bool,
    /// Which labeled pairs the selector is fitted on.
    pub selector_data: SelectorData,
    /// Add `gamma^(B-t) V(s_B)` to each return so credit reaches past the
    /// end of an episode.
    pub bootstrap: bool,
}

/// Training data for the selector. Generated pairs alone leave the mapping
/// from stream to subject arbitrary; expert pairs labeled with their subject
/// tie stream `n` to subject `n`.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum SelectorData {
    Generated,
    #[default]
    Expert,
    Joint,
}

impl Default for GailHyper {
    fn default() -> Self {
        GailHyper::desk()
    }
}

impl GailHyper {
    pub fn paper() -> Self {
        GailHyper {
            cycles: 50_000,
            episodes: 42,
            episode_len: 5,
            streams: 30,
            gamma: 0.99,
            lambda1: 0.7,
            lambda2: 0.01,
            minibatch: 6,
            d_batch: 150,
            gen_lr: 7e-4,
            disc_lr: 2e-4,
            weight_decay: 2e-3,
            policy_slope: 0.01,
            disc_slope: 0.2,
            bn_eps: 1e-5,
            bn_momentum: 0.1,
            eps_start: 1.0,
            eps_end: 0.05,
            eps_decay_frac: 0.5,
            early_stop_tol: 1e-3,
            early_stop_window: 10,
            early_stop_min_cycles: 20,
            advantage: false,
            entropy_coef: 0.0,
            importance_weighting: false,
            selector_data: SelectorData::default(),
            bootstrap: false,
        }
    }

    pub fn desk() -> Self {
        GailHyper {
            cycles: 2_000,
            streams: 2,
            ..GailHyper::paper()
        }
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: &str| Err(Error::Config(m.to_string()));
        if self.cycles == 0 || self.episodes == 0 || self.episode_len == 0 {
            return bad("cycles, episodes and episode_len must be positive");
        }
        if self.streams == 0 {
            return bad("streams must be positive");
        }
        if !(self.gamma > 0.0 && self.gamma <= 1.0) {
            return bad("gamma must lie in (0, 1]");
        }
        if !(self.lambda1 >= 0.0 && self.lambda2 >= 0.0) {
            return bad("lambda1 and lambda2 must be non-negative");
        }
        if self.minibatch == 0 || self.d_batch == 0 {
            return bad("batch sizes must be positive");
        }
        if !(self.gen_lr > 0.0 && self.disc_lr > 0.0 && self.weight_decay >= 0.0) {
            return bad("learning rates must be positive and weight decay non-negative");
        }
        let unit = |v: f64| (0.0..=1.0).contains(&v);
        if !unit(self.eps_start) || !unit(self.eps_end) || !unit(self.eps_decay_frac) {
            return bad("epsilon schedule values must lie in [0, 1]");
        }
        if !(self.entropy_coef >= 0.0) {
            return bad("entropy_coef must be non-negative");
        }
        if !(self.early_stop_tol >= 0.0) || self.early_stop_window == 0 {
            return bad("early stop tolerance must be non-negative and window positive");
        }
        Ok(())
    }

    pub fn generator_terms(&self) -> GeneratorTerms {
        GeneratorTerms {
            lambda2: self.lambda2,
            advantage: self.advantage,
            entropy_coef: self.entropy_coef,
            importance_weighting: self.importance_weighting,
        }
    }

    /// Exploration rate for a zero-based cycle index.
    pub fn epsilon(&self, cycle: usize) -> f64 {
        let span = self.eps_decay_frac * self.cycles as f64;
        if span <= 0.0 || cycle as f64 >= span {
            return self.eps_end;
        }
        self.eps_start + (self.eps_end - self.eps_start) * cycle as f64 / span
    }

    fn net_config(&self, channels: usize, env: &EnvConfig) -> NetConfig {
        NetConfig {
            policy_slope: self.policy_slope,
            disc_slope: self.disc_slope,
            bn_eps: self.bn_eps,
            bn_momentum: self.bn_momentum,
            ..NetConfig::new(
                channels,
                env.viewport.out_h,
                env.viewport.out_w,
                self.streams,
            )
        }
    }
}

/// With probability `epsilon` a uniform action, otherwise a draw from `probs`.
pub fn sample_action(probs: &[f64], epsilon: f64, rng: &mut impl Rng) -> Result<ActionId> {
    if probs.len() != ActionId::COUNT {
        return Err(Error::invalid(format!(
            "policy must give {} probabilities, got {}",
            ActionId::COUNT,
            probs.len()
        )));
    }
    let total: f64 = probs.iter().sum();
    if probs.iter().any(|p| !(*p >= 0.0)) || (total - 1.0).abs() > 1e-6 {
        return Err(Error::invalid("policy output is not a probability distribution"));
    }
    if !(0.0..=1.0).contains(&epsilon) {
        return Err(Error::invalid("epsilon must lie in [0, 1]"));
    }
    if rng.random::<f64>() < epsilon {
        return ActionId::new(rng.random_range(0..ActionId::COUNT));
    }
    let u = rng.random::<f64>() * total;
    let mut acc = 0.0;
    for (i, p) in probs.iter().enumerate() {
        acc += p;
        if u < acc {
            return ActionId::new(i);
        }
    }
    // u landed in the rounding gap; take the last action with mass
    let last = probs.iter().rposition(|p| *p > 0.0).unwrap_or(0);
    ActionId::new(last)
}

/// Most probable action; ties go to the lower id.
pub fn greedy_action(probs: &[f64]) -> ActionId {
    let mut best = 0;
    for (i, p) in probs.iter().enumerate() {
        if *p > probs[best] {
            best = i;
        }
    }
    ActionId::new(best).expect("policy head has nine outputs")
}

fn clamp_d(d: f64) -> f64 {
    d.clamp(D_CLAMP, 1.0 - D_CLAMP)
}

/// `-log(1 - D) + lambda1 * log S(c_true)`, with `D` clamped.
pub fn reward(d_out: f64, s_out: &[f64], c: LatentCode, lambda1: f64) -> Result<f64> {
    if s_out.len() != c.streams() {
        return Err(Error::invalid(format!(
            "selector gives {} probabilities for {} streams",
            s_out.len(),
            c.streams()
        )));
    }
    if d_out.is_nan() {
        return Err(Error::numerical("discriminator output is NaN"));
    }
    let d = clamp_d(d_out);
    let s = s_out[c.index()].max(D_CLAMP);
    Ok(-(1.0 - d).ln() + lambda1 * s.ln())
}

/// `R_t = sum_{b >= t} gamma^(b - t) r_b` within one episode.
pub fn discounted_returns(rewards: &[f64], gamma: f64) -> Result<Vec<f64>> {
    if rewards.is_empty() {
        return Err(Error::invalid("cannot discount an empty reward sequence"));
    }
    let mut out = vec![0.0; rewards.len()];
    let mut acc = 0.0;
    for (t, r) in rewards.iter().enumerate().rev() {
        acc = r + gamma * acc;
        out[t] = acc;
    }
    Ok(out)
}

/// `mean log D(expert) + mean log(1 - D(generated))`, with `D` clamped.
pub fn discriminator_objective(d_expert: &[f64], d_generated: &[f64]) -> f64 {
    let mean = |v: &[f64], f: &dyn Fn(f64) -> f64| v.iter().map(|&d| f(clamp_d(d))).sum::<f64>() / v.len() as f64;
    mean(d_expert, &|d| d.ln()) + mean(d_generated, &|d| (1.0 - d).ln())
}

fn patch_tensor(records: &[&TransitionRecord]) -> Result<Tensor> {
    let first = &records
        .first()
        .ok_or_else(|| Error::invalid("empty transition batch"))?
        .obs;
    let per = first.data.len();
    let mut data = Vec::with_capacity(records.len() * per);
    for r in records {
        if r.obs.data.len() != per {
            return Err(Error::shape("observations in one batch differ in size"));
        }
        data.extend(r.obs.data.iter().map(|&v| v as f64));
    }
    Tensor::new(
        vec![records.len(), first.channels, first.height, first.width],
        data,
    )
}

fn action_tensor(records: &[&TransitionRecord]) -> Tensor {
    let mut t = Tensor::zeros(&[records.len(), ActionId::COUNT]);
    for (i, r) in records.iter().enumerate() {
        t.data_mut()[i * ActionId::COUNT + r.action.index()] = 1.0;
    }
    t
}

fn code_tensor(records: &[&TransitionRecord], streams: usize) -> Result<Tensor> {
    let mut t = Tensor::zeros(&[records.len(), streams]);
    for (i, r) in records.iter().enumerate() {
        if r.stream >= streams {
            return Err(Error::invalid(format!("stream {} out of range", r.stream)));
        }
        t.data_mut()[i * streams + r.stream] = 1.0;
    }
    Ok(t)
}

/// One Adam ascent step on the discriminator objective over the joint batch.
/// Returns the objective before the step.
pub fn update_discriminator(
    disc: &mut DiscriminatorNet,
    opt: &mut Optimizer,
    chi_s: &[TransitionRecord],
    chi: &[TransitionRecord],
) -> Result<f64> {
    if chi_s.is_empty() || chi.is_empty() {
        return Err(Error::invalid("discriminator update needs expert and generated transitions"));
    }
    let all: Vec<&TransitionRecord> = chi_s.iter().chain(chi).collect();
    let obs = patch_tensor(&all)?;
    let acts = action_tensor(&all);
    disc.zero_grad();
    let d = disc.discriminate(&obs, &acts, true)?;
    let (ne, ng) = (chi_s.len() as f64, chi.len() as f64);
    let objective = discriminator_objective(&d.data()[..chi_s.len()], &d.data()[chi_s.len()..]);
    // gradient of the negated objective w.r.t. D
    let mut g = Tensor::zeros(d.shape());
    for (i, gi) in g.data_mut().iter_mut().enumerate() {
        let di = d.data()[i].clamp(PROB_FLOOR, 1.0 - PROB_FLOOR);
        *gi = if i < chi_s.len() {
            -1.0 / (ne * di)
        } else {
            1.0 / (ng * (1.0 - di))
        };
    }
    disc.backward_discriminate(&g)?;
    opt.step(disc.disc_params_mut())?;
    Ok(objective)
}

/// One Adam step minimizing `lambda1 * NLL` of the true stream.
/// Returns the unscaled mean negative log-likelihood before the step.
pub fn update_selector(
    disc: &mut DiscriminatorNet,
    opt: &mut Optimizer,
    chi: &[TransitionRecord],
    lambda1: f64,
) -> Result<f64> {
    if chi.is_empty() {
        return Err(Error::invalid("selector update needs transitions"));
    }
    let refs: Vec<&TransitionRecord> = chi.iter().collect();
    let obs = patch_tensor(&refs)?;
    let acts = action_tensor(&refs);
    disc.zero_grad();
    let s = disc.select(&obs, &acts, true)?;
    let k = s.shape()[1];
    let n = chi.len() as f64;
    let mut nll = 0.0;
    let mut g = Tensor::zeros(s.shape());
    for (i, r) in chi.iter().enumerate() {
        if r.stream >= k {
            return Err(Error::invalid(format!("stream {} out of range", r.stream)));
        }
        let p = s.data()[i * k + r.stream].max(PROB_FLOOR);
        nll -= p.ln() / n;
        g.data_mut()[i * k + r.stream] = -lambda1 / (n * p);
    }
    disc.backward_select(&g)?;
    opt.step(disc.selector_params_mut())?;
    Ok(nll)
}

/// What the generator's policy loss is made of.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct GeneratorTerms {
    pub lambda2: f64,
    pub advantage: bool,
    pub entropy_coef: f64,
    pub importance_weighting: bool,
}

/// One RMSprop step on a generator minibatch: policy gradient weighted by
/// `lambda2 + R_t` (or `lambda2 + R_t - V` with `advantage`) and squared
/// value error. With `importance_weighting` each weight is also scaled by
/// the record's `rho`, correcting for epsilon-mixed sampling. Writes the
/// weights used into the records and returns
/// `(policy_loss, value_loss)` before the step.
pub fn update_generator(
    policy: &mut PolicyValueNet,
    opt: &mut Optimizer,
    batch: &mut [TransitionRecord],
    terms: &GeneratorTerms,
) -> Result<(f64, f64)> {
    let GeneratorTerms {
        lambda2,
        advantage,
        entropy_coef,
        importance_weighting,
    } = *terms;
    if batch.is_empty() {
        return Err(Error::invalid("generator update needs transitions"));
    }
    let streams = policy.trunk.specs().iter().find_map(|s| match s {
        crate::nn::LayerSpec::Concat { extra } => Some(*extra),
        _ => None,
    });
    let streams = streams.ok_or_else(|| Error::invalid("policy has no stream input"))?;
    let (obs, codes) = {
        let refs: Vec<&TransitionRecord> = batch.iter().collect();
        (patch_tensor(&refs)?, code_tensor(&refs, streams)?)
    };
    policy.zero_grad();
    let (probs, values) = policy.forward(&obs, &codes)?;
    let m = batch.len() as f64;
    let k = ActionId::COUNT;
    let mut gp = Tensor::zeros(probs.shape());
    let mut gv = Tensor::zeros(values.shape());
    let (mut policy_loss, mut value_loss) = (0.0, 0.0);
    for (i, r) in batch.iter_mut().enumerate() {
        if !r.return_.is_finite() {
            return Err(Error::numerical(format!(
                "non-finite return {} for stream {}",
                r.return_, r.stream
            )));
        }
        let v = values.data()[i];
        r.weight = if advantage {
            lambda2 + r.return_ - v
        } else {
            lambda2 + r.return_
        };
        if importance_weighting {
            r.weight *= r.rho;
        }
        let a = r.action.index();
        let p = probs.data()[i * k + a].max(PROB_FLOOR);
        policy_loss -= r.weight * p.ln() / m;
        gp.data_mut()[i * k + a] = -r.weight / (m * p);
        if entropy_coef != 0.0 {
            // d(-coef * H)/dp_j = coef * (ln p_j + 1)
            for j in 0..k {
                let pj = probs.data()[i * k + j].max(PROB_FLOOR);
                policy_loss += entropy_coef * pj * pj.ln() / m;
                gp.data_mut()[i * k + j] += entropy_coef * (pj.ln() + 1.0) / m;
            }
        }
        let err = r.return_ - v;
        value_loss += err * err / m;
        gv.data_mut()[i] = -2.0 * err / m;
    }
    policy.backward(&gp, &gv)?;
    opt.step(policy.params_mut()).map_err(|e| match e {
        Error::Numerical(msg) => Error::Numerical(format!(
            "{msg} in generator update (policy loss {policy_loss}, value loss {value_loss})"
        )),
        other => other,
    })?;
    Ok((policy_loss, value_loss))
}

/// Training corpus: images and, per image, one expert head path per stream.
#[derive(Clone, Debug, Default)]
pub struct Demonstrations {
    pub images: Vec<EquirectImage>,
    /// `paths[image][stream]`: expert positions at consecutive steps.
    pub paths: Vec<Vec<Vec<SpherePoint>>>,
}

impl Demonstrations {
    pub fn validate(&self, streams: usize, min_len: usize) -> Result<()> {
        if self.images.is_empty() {
            return Err(Error::invalid("no training images"));
        }
        if self.paths.len() != self.images.len() {
            return Err(Error::invalid(format!(
                "{} images but expert paths for {}",
                self.images.len(),
                self.paths.len()
            )));
        }
        let channels = self.images[0].channels();
        for (i, (img, per_stream)) in self.images.iter().zip(&self.paths).enumerate() {
            if img.channels() != channels {
                return Err(Error::invalid("training images differ in channel count"));
            }
            if per_stream.len() != streams {
                return Err(Error::invalid(format!(
                    "image {i} has {} expert streams, expected {streams}",
                    per_stream.len()
                )));
            }
            if let Some(s) = per_stream.iter().position(|p| p.len() < min_len) {
                return Err(Error::invalid(format!(
                    "expert path for image {i}, stream {s} is shorter than {min_len}"
                )));
            }
        }
        Ok(())
    }

    pub fn channels(&self) -> usize {
        self.images.first().map_or(0, |i| i.channels())
    }
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct CycleLog {
    pub cycle: usize,
    pub mean_reward: f64,
    pub d_acc: f64,
    pub sel_acc: f64,
    pub policy_loss: f64,
    pub value_loss: f64,
}

/// Everything a finished cycle produced.
#[derive(Clone, Debug)]
pub struct CycleOutcome {
    pub log: CycleLog,
    /// Generated transitions of the last episode, as used in its updates.
    pub last_generated: Vec<TransitionRecord>,
}

/// Generator, discriminator/selector, their optimizers and the configuration
/// they were built for.
#[derive(Clone, Debug)]
pub struct GailModel {
    pub hyper: GailHyper,
    pub env: EnvConfig,
    pub net: NetConfig,
    pub seed: u64,
    pub cycles_trained: usize,
    pub policy: PolicyValueNet,
    pub disc: DiscriminatorNet,
    pub opt_gen: Optimizer,
    pub opt_d: Optimizer,
    pub opt_s: Optimizer,
}

#[derive(Serialize, Deserialize)]
struct CheckpointMeta {
    hyper: GailHyper,
    env: EnvConfig,
    net: NetConfig,
    seed: u64,
    cycles_trained: usize,
    optimizer_steps: [u64; 3],
    provenance: Provenance,
}

impl GailModel {
    pub fn new(hyper: GailHyper, env: EnvConfig, channels: usize, seed: u64) -> Result<Self> {
        hyper.validate()?;
        env.validate()?;
        let net = hyper.net_config(channels, &env);
        let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(seed, &[0]));
        let policy = PolicyValueNet::new(&net, &mut rng)?;
        let disc = DiscriminatorNet::new(&net, &mut rng)?;
        Ok(GailModel {
            opt_gen: Optimizer::new(OptimizerKind::rmsprop(), hyper.gen_lr, 0.0),
            opt_d: Optimizer::new(OptimizerKind::adam(), hyper.disc_lr, hyper.weight_decay),
            opt_s: Optimizer::new(OptimizerKind::adam(), hyper.disc_lr, hyper.weight_decay),
            hyper,
            env,
            net,
            seed,
            cycles_trained: 0,
            policy,
            disc,
        })
    }

    pub fn streams(&self) -> usize {
        self.hyper.streams
    }

    fn code(&self, stream: usize) -> Result<Tensor> {
        let c = LatentCode::new(stream, self.streams())?;
        Tensor::new(vec![1, self.streams()], c.one_hot())
    }

    /// Action probabilities for one observation.
    pub fn action_probs(&self, obs: &ImagePatch, stream: usize) -> Result<Vec<f64>> {
        let rec = TransitionRecord::new(obs.clone(), ActionId::STAY, stream);
        let (p, _) = self.policy.infer(&patch_tensor(&[&rec])?, &self.code(stream)?)?;
        Ok(p.into_data())
    }

    /// Value estimate of `obs` for `stream`.
    pub fn state_value(&self, obs: &ImagePatch, stream: usize) -> Result<f64> {
        let rec = TransitionRecord::new(obs.clone(), ActionId::STAY, stream);
        let (_, v) = self.policy.infer(&patch_tensor(&[&rec])?, &self.code(stream)?)?;
        Ok(v.data()[0])
    }

    /// Runs `steps` steps from `start`; `epsilon = None` means greedy.
    pub fn rollout(
        &self,
        image: &EquirectImage,
        stream: usize,
        start: SpherePoint,
        steps: usize,
        epsilon: Option<(f64, &mut ChaCha8Rng)>,
    ) -> Result<(Rollout, Vec<TransitionRecord>)> {
        let env = HeadEnv::new(image, self.env)?;
        let mut pos = start;
        let mut positions = vec![pos];
        let mut actions = Vec::with_capacity(steps);
        let mut records = Vec::with_capacity(steps);
        let mut eps = epsilon;
        for _ in 0..steps {
            let obs = env.observe(pos)?;
            let probs = self.action_probs(&obs, stream)?;
            if probs.iter().any(|p| !p.is_finite()) {
                return Err(Error::numerical("policy produced non-finite probabilities"));
            }
            let a = match eps.as_mut() {
                Some((e, rng)) => sample_action(&probs, *e, &mut **rng)?,
                None => greedy_action(&probs),
            };
            let mut rec = TransitionRecord::new(obs, a, stream);
            if let Some((e, _)) = eps.as_ref() {
                let p = probs[a.index()];
                rec.rho = p / ((1.0 - e) * p + e / ActionId::COUNT as f64);
            }
            records.push(rec);
            pos = transition(pos, a, self.env.step_mag_deg);
            positions.push(pos);
            actions.push(a);
        }
        Ok((
            Rollout {
                stream,
                positions,
                actions,
            },
            records,
        ))
    }

    /// Greedy rollouts of every stream from (0, 0) for the configured horizon.
    pub fn simulate(&self, image: &EquirectImage, mode: ExecMode) -> Result<Vec<Rollout>> {
        exec::map_range(mode, self.streams(), |n| {
            self.rollout(image, n, SpherePoint::ORIGIN, self.env.horizon, None)
                .map(|(r, _)| r)
        })
        .into_iter()
        .collect()
    }

    fn expert_window(
        &self,
        env: &HeadEnv<'_>,
        path: &[SpherePoint],
        stream: usize,
        rng: &mut impl Rng,
    ) -> Result<Vec<TransitionRecord>> {
        let b = self.hyper.episode_len.min(path.len() - 1);
        let start = rng.random_range(0..=path.len() - 1 - b);
        (start..start + b)
            .map(|t| {
                let a = crate::env::infer_action(path[t], path[t + 1], self.env.step_mag_deg);
                Ok(TransitionRecord::new(env.observe(path[t])?, a, stream))
            })
            .collect()
    }

    /// One full training cycle: per-stream image draw, `episodes` episodes of
    /// rollouts, rewards, and the discriminator, selector and generator updates.
    pub fn run_cycle(&mut self, demos: &Demonstrations, mode: ExecMode) -> Result<CycleOutcome> {
        let h = &self.hyper;
        let n_streams = h.streams;
        let cycle = self.cycles_trained;
        let eps = h.epsilon(cycle);
        let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(self.seed, &[1, cycle as u64]));
        let image_of: Vec<usize> = (0..n_streams)
            .map(|_| rng.random_range(0..demos.images.len()))
            .collect();
        let mut positions = vec![SpherePoint::ORIGIN; n_streams];
        let (mut reward_sum, mut reward_n) = (0.0, 0usize);
        let (mut d_hits, mut d_n, mut s_hits, mut s_n) = (0usize, 0usize, 0usize, 0usize);
        let (mut pl_sum, mut vl_sum, mut updates) = (0.0, 0.0, 0usize);
        let mut last_generated = Vec::new();

        for episode in 0..self.hyper.episodes {
            let model = &*self;
            let gen: Vec<Result<(Rollout, Vec<TransitionRecord>)>> =
                exec::map_range(mode, n_streams, |n| {
                    let mut r = ChaCha8Rng::seed_from_u64(derive_seed(
                        model.seed,
                        &[2, cycle as u64, episode as u64, n as u64],
                    ));
                    model.rollout(
                        &demos.images[image_of[n]],
                        n,
                        positions[n],
                        model.hyper.episode_len,
                        Some((eps, &mut r)),
                    )
                });
            let mut chi = Vec::with_capacity(n_streams * self.hyper.episode_len);
            for (n, g) in gen.into_iter().enumerate() {
                let (roll, recs) = g?;
                positions[n] = *roll.positions.last().expect("rollout has a start");
                chi.extend(recs);
            }
            let mut chi_s = Vec::with_capacity(chi.len());
            for (n, &img) in image_of.iter().enumerate() {
                let env = HeadEnv::new(&demos.images[img], self.env)?;
                chi_s.extend(self.expert_window(&env, &demos.paths[img][n], n, &mut rng)?);
            }

            // rewards from the current discriminator, eval mode
            let d_exp = self.score(&chi_s)?.0;
            let (d_gen, s_gen) = self.score(&chi)?;
            d_hits += d_exp.iter().filter(|&&d| d > 0.5).count();
            d_hits += d_gen.iter().filter(|&&d| d < 0.5).count();
            d_n += d_exp.len() + d_gen.len();
            for (i, r) in chi.iter_mut().enumerate() {
                let s = &s_gen[i * n_streams..(i + 1) * n_streams];
                if greedy_stream(s) == r.stream {
                    s_hits += 1;
                }
                r.d_out = d_gen[i];
                r.reward = reward(d_gen[i], s, LatentCode::new(r.stream, n_streams)?, self.hyper.lambda1)?;
                reward_sum += r.reward;
            }
            s_n += chi.len();
            reward_n += chi.len();
            let b = self.hyper.episode_len;
            let tails: Vec<f64> = if self.hyper.bootstrap {
                (0..n_streams)
                    .map(|n| {
                        let env = HeadEnv::new(&demos.images[image_of[n]], self.env)?;
                        self.state_value(&env.observe(positions[n])?, n)
                    })
                    .collect::<Result<_>>()?
            } else {
                vec![0.0; n_streams]
            };
            for (per_stream, tail) in chi.chunks_mut(b).zip(tails) {
                let rewards: Vec<f64> = per_stream.iter().map(|r| r.reward).collect();
                let rets = discounted_returns(&rewards, self.hyper.gamma)?;
                let len = per_stream.len();
                for (t, (r, ret)) in per_stream.iter_mut().zip(rets).enumerate() {
                    r.return_ = ret + self.hyper.gamma.powi((len - t) as i32) * tail;
                }
            }

            let db = self.hyper.d_batch;
            for (es, gs) in chi_s.chunks(db).zip(chi.chunks(db)) {
                update_discriminator(&mut self.disc, &mut self.opt_d, es, gs)?;
            }
            match self.hyper.selector_data {
                SelectorData::Generated => {
                    for gs in chi.chunks(db) {
                        update_selector(&mut self.disc, &mut self.opt_s, gs, self.hyper.lambda1)?;
                    }
                }
                SelectorData::Expert => {
                    for es in chi_s.chunks(db) {
                        update_selector(&mut self.disc, &mut self.opt_s, es, self.hyper.lambda1)?;
                    }
                }
                SelectorData::Joint => {
                    for (es, gs) in chi_s.chunks(db).zip(chi.chunks(db)) {
                        let joint: Vec<TransitionRecord> = es.iter().chain(gs).cloned().collect();
                        update_selector(&mut self.disc, &mut self.opt_s, &joint, self.hyper.lambda1)?;
                    }
                }
            }
            chi.shuffle(&mut rng);
            for mb in chi.chunks_mut(self.hyper.minibatch) {
                let (pl, vl) = update_generator(
                    &mut self.policy,
                    &mut self.opt_gen,
                    mb,
                    &self.hyper.generator_terms(),
                )?;
                pl_sum += pl;
                vl_sum += vl;
                updates += 1;
            }
            last_generated = chi;
        }
        self.cycles_trained += 1;
        let ratio = |a: usize, b: usize| if b == 0 { 0.0 } else { a as f64 / b as f64 };
        Ok(CycleOutcome {
            log: CycleLog {
                cycle,
                mean_reward: reward_sum / reward_n.max(1) as f64,
                d_acc: ratio(d_hits, d_n),
                sel_acc: ratio(s_hits, s_n),
                policy_loss: pl_sum / updates.max(1) as f64,
                value_loss: vl_sum / updates.max(1) as f64,
            },
            last_generated,
        })
    }

    /// Eval-mode `(D, S)` for a batch; `S` is flattened row-major.
    fn score(&self, records: &[TransitionRecord]) -> Result<(Vec<f64>, Vec<f64>)> {
        let refs: Vec<&TransitionRecord> = records.iter().collect();
        let (d, s) = self
            .disc
            .infer(&patch_tensor(&refs)?, &action_tensor(&refs))?;
        Ok((d.into_data(), s.into_data()))
    }

    pub fn save(&self, path: &Path, provenance: &Provenance) -> Result<()> {
        let meta = CheckpointMeta {
            hyper: self.hyper.clone(),
            env: self.env,
            net: self.net.clone(),
            seed: self.seed,
            cycles_trained: self.cycles_trained,
            optimizer_steps: [
                self.opt_gen.steps_taken(),
                self.opt_d.steps_taken(),
                self.opt_s.steps_taken(),
            ],
            provenance: provenance.clone(),
        };
        let mut tensors = self.policy.named_tensors();
        tensors.extend(self.disc.named_tensors());
        for (name, opt) in [("gen", &self.opt_gen), ("d", &self.opt_d), ("s", &self.opt_s)] {
            let (_, first, second) = opt.state();
            for (i, t) in first.iter().enumerate() {
                tensors.push(NamedTensor::new(format!("opt.{name}.m{i}"), t.clone()));
            }
            for (i, t) in second.iter().enumerate() {
                tensors.push(NamedTensor::new(format!("opt.{name}.v{i}"), t.clone()));
            }
        }
        write_checkpoint(
            path,
            &Checkpoint {
                meta: serde_json::to_value(meta)?,
                tensors,
            },
        )
    }

    pub fn load(path: &Path) -> Result<Self> {
        let ck = read_checkpoint(path)?;
        let meta: CheckpointMeta = serde_json::from_value(ck.meta)
            .map_err(|e| Error::malformed(path, format!("checkpoint metadata: {e}")))?;
        let mut model = GailModel::new(meta.hyper, meta.env, meta.net.channels, meta.seed)?;
        if model.net != meta.net {
            return Err(Error::malformed(path, "network configuration mismatch"));
        }
        model.cycles_trained = meta.cycles_trained;
        let map: HashMap<&str, &Tensor> =
            ck.tensors.iter().map(|t| (t.name.as_str(), &t.tensor)).collect();
        model.policy.load_named(&map)?;
        model.disc.load_named(&map)?;
        for (k, (name, opt)) in [
            ("gen", &mut model.opt_gen),
            ("d", &mut model.opt_d),
            ("s", &mut model.opt_s),
        ]
        .into_iter()
        .enumerate()
        {
            let collect = |prefix: &str| -> Vec<Tensor> {
                (0..)
                    .map_while(|i| map.get(format!("opt.{name}.{prefix}{i}").as_str()).map(|t| (*t).clone()))
                    .collect()
            };
            opt.restore_state(meta.optimizer_steps[k], collect("m"), collect("v"));
        }
        Ok(model)
    }
}

fn greedy_stream(s: &[f64]) -> usize {
    let mut best = 0;
    for (i, v) in s.iter().enumerate() {
        if *v > s[best] {
            best = i;
        }
    }
    best
}

/// True when the mean reward over the last `window` cycles moved by less
/// than `tol` (relative) from the `window` cycles before it.
pub fn rewards_converged(history: &[f64], window: usize, tol: f64) -> bool {
    if tol <= 0.0 || window == 0 || history.len() < 2 * window {
        return false;
    }
    let n = history.len();
    let mean = |s: &[f64]| s.iter().sum::<f64>() / s.len() as f64;
    let cur = mean(&history[n - window..]);
    let prev = mean(&history[n - 2 * window..n - window]);
    (cur - prev).abs() <= tol * prev.abs().max(f64::MIN_POSITIVE)
}

/// Trains a fresh model, calling `on_cycle` after every cycle. Stops after
/// `hyper.cycles` cycles or once rewards converge.
pub fn train(
    demos: &Demonstrations,
    hyper: &GailHyper,
    env: &EnvConfig,
    seed: u64,
    mode: ExecMode,
    mut on_cycle: impl FnMut(&CycleLog),
) -> Result<(GailModel, Vec<CycleLog>)> {
    hyper.validate()?;
    demos.validate(hyper.streams, 2)?;
    let mut model = GailModel::new(hyper.clone(), *env, demos.channels(), seed)?;
    let mut logs = Vec::new();
    let mut history = Vec::new();
    while model.cycles_trained < hyper.cycles {
        let out = model.run_cycle(demos, mode)?;
        on_cycle(&out.log);
        history.push(out.log.mean_reward);
        logs.push(out.log);
        if model.cycles_trained >= hyper.early_stop_min_cycles
            && rewards_converged(&history, hyper.early_stop_window, hyper.early_stop_tol)
        {
            break;
        }
    }
    Ok((model, logs))
}

pub fn write_training_log(path: &Path, logs: &[CycleLog], prov: &Provenance) -> Result<()> {
    let mut w = crate::io::csv_writer(path, prov)?;
    for l in logs {
        w.serialize(l)?;
    }
    w.flush().map_err(|e| Error::io(path, e))
}

/// How rollouts become a saliency map.
#[derive(Clone, Debug, PartialEq)]
pub struct PredictConfig {
    pub env: EnvConfig,
    /// Center-bias prior to fuse in; `None` skips fusion.
    pub fcb: Option<FcbParams>,
    pub fixations: FixationMode,
}

impl PredictConfig {
    pub fn for_model(model: &GailModel) -> Self {
        PredictConfig {
            env: model.env,
            fcb: Some(FcbParams::default()),
            fixations: FixationMode::default(),
        }
    }
}

/// Greedy rollouts of all streams, rendered at the image's resolution and
/// optionally fused with the center-bias prior.
pub fn predict_saliency(
    model: &GailModel,
    image: &EquirectImage,
    cfg: &PredictConfig,
    mode: ExecMode,
) -> Result<SaliencyMap> {
    if model.cycles_trained == 0 {
        return Err(Error::invalid("model has not been trained"));
    }
    predict_with_rollouts(model, image, cfg, mode).map(|(_, map)| map)
}

/// Like [`predict_saliency`] but also returns the rollouts.
pub fn predict_with_rollouts(
    model: &GailModel,
    image: &EquirectImage,
    cfg: &PredictConfig,
    mode: ExecMode,
) -> Result<(Vec<Rollout>, SaliencyMap)> {
    if cfg.env.viewport.out_w != model.env.viewport.out_w
        || cfg.env.viewport.out_h != model.env.viewport.out_h
    {
        return Err(Error::invalid("viewport size differs from the trained observation size"));
    }
    let mut m = model.clone();
    m.env = cfg.env;
    let rollouts = m.simulate(image, mode)?;
    let fixations: Vec<SpherePoint> = rollouts
        .iter()
        .flat_map(|r| r.fixations(cfg.fixations))
        .collect();
    let (w, h) = (image.width(), image.height());
    let s = render_saliency(&fixations, w, h);
    let map = match &cfg.fcb {
        Some(p) => fuse_fcb(&s, &build_fcb(w, h, p)?)?,
        None => s,
    };
    Ok((rollouts, map))
}

/// Held-out imitation quality.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct ImitationReport {
    /// Per stream: fraction of greedy steps matching the scripted expert.
    pub agreement: Vec<f64>,
    /// Selector accuracy on generated transitions.
    pub selector_acc: f64,
    /// Selector accuracy on expert transitions.
    pub selector_acc_expert: f64,
    /// `0.5 * (P[D > 0.5 | expert] + P[D < 0.5 | generated])`.
    pub d_acc: f64,
}

/// Greedy rollouts on held-out images scored against a scripted expert.
/// `expert(stream, image_index, position)` gives the expert's action.
pub fn evaluate_imitation<F>(
    model: &GailModel,
    held_out: &Demonstrations,
    expert: F,
    mode: ExecMode,
) -> Result<ImitationReport>
where
    F: Fn(usize, usize, SpherePoint) -> ActionId + Sync,
{
    held_out.validate(model.streams(), 2)?;
    let n = model.streams();
    let jobs: Vec<(usize, usize)> = (0..held_out.images.len())
        .flat_map(|i| (0..n).map(move |s| (i, s)))
        .collect();
    let results = exec::map(mode, &jobs, |&(img, stream)| -> Result<_> {
        let image = &held_out.images[img];
        let (roll, gen) = model.rollout(image, stream, SpherePoint::ORIGIN, model.env.horizon, None)?;
        let agree = roll
            .positions
            .iter()
            .zip(&roll.actions)
            .filter(|(p, a)| expert(stream, img, **p) == **a)
            .count();
        let env = HeadEnv::new(image, model.env)?;
        let path = &held_out.paths[img][stream];
        let exp: Vec<TransitionRecord> = path
            .windows(2)
            .take(model.env.horizon)
            .map(|w| {
                let a = crate::env::infer_action(w[0], w[1], model.env.step_mag_deg);
                Ok(TransitionRecord::new(env.observe(w[0])?, a, stream))
            })
            .collect::<Result<_>>()?;
        let (d_gen, s_gen) = model.score(&gen)?;
        let (d_exp, s_exp) = model.score(&exp)?;
        let sel = |s: &[f64]| s.chunks(n).filter(|row| greedy_stream(row) == stream).count();
        Ok((
            stream,
            agree,
            roll.actions.len(),
            sel(&s_gen),
            sel(&s_exp),
            exp.len(),
            d_exp.iter().filter(|&&d| d > 0.5).count(),
            d_gen.iter().filter(|&&d| d < 0.5).count(),
        ))
    });
    let mut agree = vec![(0usize, 0usize); n];
    let (mut sg, mut sg_n, mut se, mut se_n, mut de, mut dg) = (0, 0, 0, 0, 0, 0);
    for r in results {
        let (stream, a, steps, s_gen, s_exp, n_exp, d_e, d_g) = r?;
        agree[stream].0 += a;
        agree[stream].1 += steps;
        sg += s_gen;
        sg_n += steps;
        se += s_exp;
        se_n += n_exp;
        de += d_e;
        dg += d_g;
    }
    let frac = |a: usize, b: usize| if b == 0 { 0.0 } else { a as f64 / b as f64 };
    Ok(ImitationReport {
        agreement: agree.iter().map(|&(a, b)| frac(a, b)).collect(),
        selector_acc: frac(sg, sg_n),
        selector_acc_expert: frac(se, se_n),
        d_acc: 0.5 * (frac(de, se_n) + frac(dg, sg_n)),
    })
}
