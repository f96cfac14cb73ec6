//! Policy-gradient fine-tuning of the generator against an understanding model.
//!
//! Each iteration samples acts from the training pool, decodes one utterance
//! per act, optionally corrupts it through a word channel, scores the
//! understood act against the reference, and takes clipped-surrogate steps.

use alloc::string::String;
use alloc::vec;
use alloc::vec::Vec;

use rand::seq::SliceRandom;
use rand::Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::channel::{corrupt, ConfusionMatrix};
use crate::corpus::TokenId;
use crate::da::{f1, reward, DialogueAct, IdfTable};
use crate::eval::Understander;
use crate::nn::ops::softmax;
use crate::nn::policy::{log_prob_at, Decoding, PolicyModel};
use crate::nn::{Adam, AdamConfig, LinearSchedule, ModelError};
use crate::seed;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum RlError {
    #[error(transparent)]
    Model(#[from] ModelError),
    #[error("non-finite log-probability at token {0}")]
    NonFinite(usize),
    #[error("length mismatch: {0} vs {1}")]
    LengthMismatch(usize, usize),
    #[error("empty act pool")]
    EmptyPool,
    #[error("invalid fine-tuning configuration: {0}")]
    BadConfig(&'static str),
}

/// Where the task reward and the log-ratio penalty land among the tokens.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum RewardPlacement {
    /// `-β·log-ratio` at every token, task reward added at the last token.
    #[default]
    PerToken,
    /// The whole shaped return at the last token.
    Terminal,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PpoConfig {
    pub iterations: usize,
    /// Rollouts per iteration.
    pub batch_size: usize,
    pub epochs: usize,
    pub minibatch_size: usize,
    pub clip_eps: f64,
    pub kl_coef: f64,
    pub gamma: f64,
    pub lam: f64,
    pub lr: f64,
    /// Linear decay of `lr` to zero over all updates when set.
    pub lr_decay: bool,
    pub value_coef: f64,
    /// Learning-rate multiplier for the value head alone.
    pub value_lr_scale: f64,
    /// Keep value-loss gradients out of the shared transformer.
    pub detach_value: bool,
    pub normalize_advantages: bool,
    pub placement: RewardPlacement,
    /// Abort when the batch-mean log-ratio exceeds this.
    pub kl_ceiling: Option<f64>,
    pub max_len: usize,
    pub temperature: f64,
    pub adam: AdamConfig,
    pub seed: u64,
}

impl Default for PpoConfig {
    fn default() -> Self {
        PpoConfig {
            iterations: 60,
            batch_size: 1024,
            epochs: 4,
            minibatch_size: 1,
            clip_eps: 0.2,
            kl_coef: 0.1,
            gamma: 1.0,
            lam: 0.95,
            lr: 5e-6,
            lr_decay: true,
            value_coef: 0.5,
            value_lr_scale: 1.0,
            detach_value: true,
            normalize_advantages: true,
            placement: RewardPlacement::PerToken,
            kl_ceiling: Some(50.0),
            max_len: 40,
            temperature: 1.0,
            adam: AdamConfig::default(),
            seed: 0,
        }
    }
}

impl PpoConfig {
    /// Small-batch preset sized for a single CPU core.
    pub fn desk() -> Self {
        PpoConfig { batch_size: 128, minibatch_size: 8, lr: 1e-5, value_lr_scale: 100.0, ..Self::default() }
    }

    // Negated comparisons also reject NaN.
    #[allow(clippy::neg_cmp_op_on_partial_ord)]
    pub fn validate(&self) -> Result<(), RlError> {
        if self.batch_size == 0 || self.epochs == 0 || self.minibatch_size == 0 || self.max_len == 0 {
            return Err(RlError::BadConfig("batch_size, epochs, minibatch_size and max_len must be positive"));
        }
        if !(self.lr >= 0.0 && self.lr.is_finite()) || !(self.clip_eps > 0.0) || self.kl_coef < 0.0 {
            return Err(RlError::BadConfig("lr and kl_coef must be non-negative, clip_eps positive"));
        }
        if !(0.0..=1.0).contains(&self.gamma) || !(0.0..=1.0).contains(&self.lam) {
            return Err(RlError::BadConfig("gamma and lam must lie in [0, 1]"));
        }
        if !(self.value_lr_scale >= 0.0 && self.value_lr_scale.is_finite()) {
            return Err(RlError::BadConfig("value_lr_scale must be finite and non-negative"));
        }
        if !(self.temperature > 0.0) {
            return Err(RlError::BadConfig("temperature must be positive"));
        }
        Ok(())
    }
}

/// Shaped return `R = r - β·Σ(π_t - ρ_t)` and its per-token split.
pub fn compute_reward(
    reference: &DialogueAct,
    predicted: &DialogueAct,
    idf: &IdfTable,
    pi_logprobs: &[f64],
    ref_logprobs: &[f64],
    beta: f64,
    placement: RewardPlacement,
) -> Result<(f64, Vec<f64>), RlError> {
    if pi_logprobs.len() != ref_logprobs.len() {
        return Err(RlError::LengthMismatch(pi_logprobs.len(), ref_logprobs.len()));
    }
    if let Some(k) = (0..pi_logprobs.len()).find(|&k| !pi_logprobs[k].is_finite() || !ref_logprobs[k].is_finite()) {
        return Err(RlError::NonFinite(k));
    }
    let r = reward(reference, predicted, idf);
    let mut shaped: Vec<f64> = pi_logprobs.iter().zip(ref_logprobs).map(|(p, q)| -beta * (p - q)).collect();
    let penalty: f64 = shaped.iter().sum();
    let total = r + penalty;
    if let Some(last) = shaped.last_mut() {
        match placement {
            RewardPlacement::PerToken => *last += r,
            RewardPlacement::Terminal => {
                let n = pi_logprobs.len();
                shaped = vec![0.0; n];
                shaped[n - 1] = total;
            }
        }
    }
    Ok((total, shaped))
}

/// Generalized advantage estimates and returns, bootstrapping 0 after the last step.
pub fn gae(rewards: &[f64], values: &[f64], gamma: f64, lam: f64) -> (Vec<f64>, Vec<f64>) {
    let n = rewards.len();
    let mut adv = vec![0.0; n];
    let mut next_adv = 0.0;
    for t in (0..n).rev() {
        let next_v = if t + 1 < n { values[t + 1] } else { 0.0 };
        let delta = rewards[t] + gamma * next_v - values[t];
        next_adv = delta + gamma * lam * next_adv;
        adv[t] = next_adv;
    }
    let ret = adv.iter().zip(values).map(|(a, v)| a + v).collect();
    (adv, ret)
}

/// Mean over tokens of `min(ρ·A, clip(ρ, 1-ε, 1+ε)·A)` with `ρ = exp(new - old)`.
pub fn ppo_clip_objective(new_logprobs: &[f64], old_logprobs: &[f64], advantages: &[f64], eps: f64) -> Result<f64, RlError> {
    if new_logprobs.len() != old_logprobs.len() || new_logprobs.len() != advantages.len() {
        return Err(RlError::LengthMismatch(new_logprobs.len(), advantages.len()));
    }
    if new_logprobs.is_empty() {
        return Ok(0.0);
    }
    let mut sum = 0.0;
    for k in 0..new_logprobs.len() {
        let (term, _) = clipped_term(new_logprobs[k], old_logprobs[k], advantages[k], eps).ok_or(RlError::NonFinite(k))?;
        sum += term;
    }
    Ok(sum / new_logprobs.len() as f64)
}

/// `(term, d term / d new_logprob)`; `None` if the ratio is not finite.
fn clipped_term(new: f64, old: f64, adv: f64, eps: f64) -> Option<(f64, f64)> {
    let ratio = libm::exp(new - old);
    if !ratio.is_finite() {
        return None;
    }
    let unclipped = ratio * adv;
    let clipped = ratio.clamp(1.0 - eps, 1.0 + eps) * adv;
    Some(if unclipped <= clipped { (unclipped, unclipped) } else { (clipped, 0.0) })
}

/// One sampled episode.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Rollout {
    pub da: DialogueAct,
    /// Emitted ids, `[EOS]` included unless truncated.
    pub actions: Vec<TokenId>,
    /// Words handed to the understanding model, after any corruption.
    pub heard: Vec<String>,
    pub old_logprobs: Vec<f64>,
    pub ref_logprobs: Vec<f64>,
    pub values: Vec<f64>,
    pub predicted: DialogueAct,
    pub task_reward: f64,
    pub total_reward: f64,
    pub shaped: Vec<f64>,
    pub advantages: Vec<f64>,
    pub returns: Vec<f64>,
    pub truncated: bool,
}

impl Rollout {
    /// Realized log-ratio `Σ(π_t - ρ_t)`.
    pub fn kl(&self) -> f64 {
        self.old_logprobs.iter().zip(&self.ref_logprobs).map(|(p, q)| p - q).sum()
    }
}

/// Samples one rollout per act. Rollout `k` draws from streams derived from `(batch_seed, k)` only.
#[allow(clippy::too_many_arguments)]
pub fn collect_rollouts<U: Understander + ?Sized>(
    policy: &PolicyModel,
    reference: &PolicyModel,
    nlu: &U,
    das: &[DialogueAct],
    channel: Option<&ConfusionMatrix>,
    idf: &IdfTable,
    config: &PpoConfig,
    batch_seed: u64,
) -> Result<Vec<Rollout>, RlError> {
    das.iter()
        .enumerate()
        .map(|(k, da)| {
            let mut sample_rng = seed::child_rng(batch_seed, &[k as u64, 0]);
            let g = policy.generate(da, Decoding::Sample { temperature: config.temperature }, config.max_len, &mut sample_rng)?;
            let words = policy.vocab.decode(g.utterance());
            let heard = match channel {
                Some(m) => corrupt(&words, m, &mut seed::child_rng(batch_seed, &[k as u64, 1])),
                None => words,
            };
            let predicted = nlu.understand(&heard);
            let (_, ref_logprobs) = reference.sequence_logprob(da, &g.actions)?;
            let task_reward = reward(da, &predicted, idf);
            let (total_reward, shaped) = compute_reward(da, &predicted, idf, &g.logprobs, &ref_logprobs, config.kl_coef, config.placement)?;
            let (advantages, returns) = gae(&shaped, &g.values, config.gamma, config.lam);
            Ok(Rollout {
                da: da.clone(),
                actions: g.actions,
                heard,
                old_logprobs: g.logprobs,
                ref_logprobs,
                values: g.values,
                predicted,
                task_reward,
                total_reward,
                shaped,
                advantages,
                returns,
                truncated: g.truncated,
            })
        })
        .collect()
}

/// Scales all advantages in the batch to zero mean and unit variance.
pub fn normalize_advantages(rollouts: &mut [Rollout]) {
    let all: Vec<f64> = rollouts.iter().flat_map(|r| r.advantages.iter().copied()).collect();
    if all.len() < 2 {
        return;
    }
    let n = all.len() as f64;
    let mean = all.iter().sum::<f64>() / n;
    let var = all.iter().map(|a| (a - mean) * (a - mean)).sum::<f64>() / n;
    let std = libm::sqrt(var) + 1e-8;
    for r in rollouts {
        for a in &mut r.advantages {
            *a = (*a - mean) / std;
        }
    }
}

/// Minibatch loss terms: mean clipped surrogate and mean squared value error over all tokens.
///
/// When `grads` is given, accumulates the gradient of `-surrogate + value_coef·value_loss`.
pub fn ppo_loss(policy: &PolicyModel, batch: &[&Rollout], clip_eps: f64, value_coef: f64, detach_value: bool, mut grads: Option<&mut [f64]>) -> Result<(f64, f64), RlError> {
    let n_tok: usize = batch.iter().map(|r| r.actions.len()).sum();
    if n_tok == 0 {
        return Ok((0.0, 0.0));
    }
    let nf = n_tok as f64;
    let v = policy.vocab_size();
    let (mut surrogate, mut value_loss) = (0.0, 0.0);
    for r in batch {
        if r.actions.is_empty() {
            continue;
        }
        let prefix = policy.vocab.encode_da(&r.da);
        let p = prefix.len();
        let mut ids = prefix;
        ids.extend_from_slice(&r.actions);
        let tr = policy.trace(&ids, p - 1)?;
        let rows = ids.len() - (p - 1);
        let mut dlogits = vec![0.0; rows * v];
        let mut dvalues = vec![0.0; ids.len()];
        for (i, &a) in r.actions.iter().enumerate() {
            let pos = p - 1 + i;
            let logits = tr.logits(pos);
            let new = log_prob_at(logits, a as usize);
            let (term, dterm) = clipped_term(new, r.old_logprobs[i], r.advantages[i], clip_eps).ok_or(RlError::NonFinite(i))?;
            surrogate += term;
            let err = tr.values[pos] - r.returns[i];
            value_loss += err * err;
            dvalues[pos] = value_coef * 2.0 * err / nf;
            if dterm != 0.0 {
                let row = &mut dlogits[i * v..(i + 1) * v];
                row.copy_from_slice(logits);
                softmax(row);
                row[a as usize] -= 1.0;
                for g in row.iter_mut() {
                    *g *= dterm / nf;
                }
            }
        }
        if let Some(g) = grads.as_deref_mut() {
            policy.backward(&tr, &dlogits, &dvalues, detach_value, g);
        }
    }
    Ok((surrogate / nf, value_loss / nf))
}

/// Per-iteration training summary.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct IterMetrics {
    pub iter: usize,
    pub mean_reward: f64,
    pub mean_f1: f64,
    pub mean_kl: f64,
    pub objective: f64,
    pub lr: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub enum AbortReason {
    NonFiniteLoss { iter: usize },
    KlCeiling { iter: usize, kl: f64 },
}

#[derive(Debug, Clone)]
pub struct Finetuned {
    /// Final policy, or the last policy before the abort.
    pub policy: PolicyModel,
    pub metrics: Vec<IterMetrics>,
    pub aborted: Option<AbortReason>,
}

/// Fine-tunes a copy of `mle_policy` against `nlu`, keeping `mle_policy` as the
/// frozen reference. `on_iter` sees each iteration's metrics and the policy right after its update.
#[allow(clippy::too_many_arguments)]
pub fn finetune<U: Understander + ?Sized>(
    mle_policy: &PolicyModel,
    nlu: &U,
    pool: &[DialogueAct],
    idf: &IdfTable,
    channel: Option<&ConfusionMatrix>,
    config: &PpoConfig,
    mut on_iter: impl FnMut(&IterMetrics, &PolicyModel),
) -> Result<Finetuned, RlError> {
    config.validate()?;
    if pool.is_empty() {
        return Err(RlError::EmptyPool);
    }
    let mut policy = mle_policy.clone();
    policy.reset_value_head(seed::derive(config.seed, &[0x7b]));
    let per_epoch = config.batch_size.div_ceil(config.minibatch_size);
    let total = config.iterations * config.epochs * per_epoch;
    let sched = LinearSchedule { base: config.lr, total: if config.lr_decay { total } else { 0 } };
    let mut opt = Adam::new(policy.params.len(), config.adam);
    opt.scale_lr(policy.value_head_range(), config.value_lr_scale);
    let mut grads = vec![0.0; policy.params.len()];
    let mut metrics = Vec::with_capacity(config.iterations);
    let mut step = 0;
    let mut last_good = policy.clone();

    for iter in 0..config.iterations {
        let mut pick = seed::child_rng(config.seed, &[0xda, iter as u64]);
        let das: Vec<DialogueAct> = (0..config.batch_size).map(|_| pool[pick.gen_range(0..pool.len())].clone()).collect();
        let batch_seed = seed::derive(config.seed, &[0xb0, iter as u64]);
        let mut rollouts = collect_rollouts(&policy, mle_policy, nlu, &das, channel, idf, config, batch_seed)?;
        let n = rollouts.len() as f64;
        let mean_reward = rollouts.iter().map(|r| r.total_reward).sum::<f64>() / n;
        let mean_f1 = rollouts.iter().map(|r| f1(&r.da, &r.predicted)).sum::<f64>() / n;
        let mean_kl = rollouts.iter().map(Rollout::kl).sum::<f64>() / n;
        if let Some(ceiling) = config.kl_ceiling {
            if mean_kl.is_nan() || mean_kl > ceiling {
                return Ok(Finetuned { policy: last_good, metrics, aborted: Some(AbortReason::KlCeiling { iter, kl: mean_kl }) });
            }
        }
        last_good.clone_from(&policy);
        if config.normalize_advantages {
            normalize_advantages(&mut rollouts);
        }
        let lr = sched.at(step);
        let mut objective = 0.0;
        let mut count = 0usize;
        let mut order: Vec<usize> = (0..rollouts.len()).collect();
        for epoch in 0..config.epochs {
            order.shuffle(&mut seed::child_rng(config.seed, &[0x5f, iter as u64, epoch as u64]));
            for chunk in order.chunks(config.minibatch_size) {
                let batch: Vec<&Rollout> = chunk.iter().map(|&i| &rollouts[i]).collect();
                grads.fill(0.0);
                let (surr, vloss) = ppo_loss(&policy, &batch, config.clip_eps, config.value_coef, config.detach_value, Some(&mut grads))?;
                let obj = surr - config.value_coef * vloss;
                if !obj.is_finite() || grads.iter().any(|g| !g.is_finite()) {
                    return Ok(Finetuned { policy: last_good, metrics, aborted: Some(AbortReason::NonFiniteLoss { iter }) });
                }
                objective += obj;
                count += 1;
                opt.step(&mut policy.params.data, &grads, sched.at(step));
                step += 1;
            }
        }
        let m = IterMetrics { iter, mean_reward, mean_f1, mean_kl, objective: objective / count.max(1) as f64, lr };
        log::info!("iter {iter}: reward {mean_reward:.4} f1 {mean_f1:.4} kl {mean_kl:.4}");
        on_iter(&m, &policy);
        metrics.push(m);
    }
    Ok(Finetuned { policy, metrics, aborted: None })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn da(t: &[(&str, &str, &str)]) -> DialogueAct {
        DialogueAct::from_strs(t).unwrap()
    }

    #[test]
    fn reward_examples() {
        let a = da(&[("Inform-Hotel", "Stars", "4")]);
        let idf = IdfTable::build([&a]).unwrap();
        let (r, shaped) = compute_reward(&a, &a, &idf, &[-1.0, -2.0], &[-1.0, -2.0], 0.1, RewardPlacement::PerToken).unwrap();
        assert_eq!(r, reward(&a, &a, &idf));
        assert_eq!(shaped.iter().sum::<f64>(), r);
        let empty = DialogueAct::new();
        let (r, _) = compute_reward(&a, &empty, &idf, &[-1.0], &[-3.0], 0.0, RewardPlacement::PerToken).unwrap();
        assert_eq!(r, 0.0);
        assert!(compute_reward(&a, &a, &idf, &[f64::NAN], &[0.0], 0.1, RewardPlacement::PerToken).is_err());
        assert!(compute_reward(&a, &a, &idf, &[0.0], &[], 0.1, RewardPlacement::PerToken).is_err());
    }

    #[test]
    fn reward_substitution() {
        // r = 0.5 is reached by F1 = 0.5 with unit idf weights.
        let reference = da(&[("a", "x", "1"), ("b", "y", "2")]);
        let predicted = da(&[("a", "x", "1"), ("q", "q", "q")]);
        let idf = IdfTable::build([&da(&[("k", "k", "k")])]).unwrap();
        let pi = [-0.2, -0.3, -0.4];
        let rf = [-0.4, -0.5, -0.7];
        for placement in [RewardPlacement::PerToken, RewardPlacement::Terminal] {
            let (r, shaped) = compute_reward(&reference, &predicted, &idf, &pi, &rf, 0.1, placement).unwrap();
            assert!((r - 0.43).abs() < 1e-12, "{r}");
            assert!((shaped.iter().sum::<f64>() - r).abs() < 1e-12);
        }
    }

    #[test]
    fn gae_examples() {
        let (a, ret) = gae(&[0.0, 0.0, 1.0], &[0.5, 0.5, 0.5], 1.0, 0.95);
        let want = [0.45125, 0.475, 0.5];
        for k in 0..3 {
            assert!((a[k] - want[k]).abs() < 1e-12);
            assert!((ret[k] - (a[k] + 0.5)).abs() < 1e-15);
        }
        let (a, _) = gae(&[0.0; 4], &[0.0; 4], 1.0, 0.95);
        assert!(a.iter().all(|&x| x == 0.0));
        assert!(gae(&[], &[], 1.0, 0.95).0.is_empty());
    }

    #[test]
    fn clip_examples() {
        let l2 = libm::log(2.0);
        assert!((ppo_clip_objective(&[l2], &[0.0], &[1.0], 0.2).unwrap() - 1.2).abs() < 1e-12);
        assert!((ppo_clip_objective(&[l2], &[0.0], &[-1.0], 0.2).unwrap() + 2.0).abs() < 1e-12);
        let adv = [0.3, -1.0, 2.0];
        let lp = [-1.0, -2.0, -0.5];
        assert!((ppo_clip_objective(&lp, &lp, &adv, 0.2).unwrap() - 1.3 / 3.0).abs() < 1e-12);
        assert!(ppo_clip_objective(&[1000.0], &[0.0], &[1.0], 0.2).is_err());
        assert!(ppo_clip_objective(&[0.0], &[0.0, 1.0], &[1.0], 0.2).is_err());
    }

    #[test]
    fn placement_terminal_puts_everything_last() {
        let a = da(&[("Inform-Hotel", "Stars", "4")]);
        let idf = IdfTable::build([&a]).unwrap();
        let (r, shaped) = compute_reward(&a, &a, &idf, &[-1.0, -1.0], &[-1.5, -1.5], 0.1, RewardPlacement::Terminal).unwrap();
        assert_eq!(shaped[0], 0.0);
        assert_eq!(shaped[1], r);
    }

    #[test]
    fn config_validation() {
        assert!(PpoConfig::default().validate().is_ok());
        assert!(PpoConfig::desk().validate().is_ok());
        assert!(PpoConfig { minibatch_size: 0, ..PpoConfig::default() }.validate().is_err());
        assert!(PpoConfig { gamma: 1.5, ..PpoConfig::default() }.validate().is_err());
    }
}
