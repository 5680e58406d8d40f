//! The PPO training loop: parallel rollout collection over vectorized
//! environments, generalized advantage estimation, and clipped-surrogate
//! updates. Everything is seeded and reduction orders are fixed, so repeated
//! runs with the same configuration produce bit-identical policies.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use rayon::prelude::*;
use std::path::Path;

use crate::config::Config;
use crate::env::{Observation, PackagingEnv};
use crate::error::Result;
use crate::ppo::adam::{lr_schedule, Adam};
use crate::ppo::checkpoint::Checkpoint;
use crate::ppo::gae::advantages;
use crate::ppo::net::{log_prob, log_prob_grads, PolicyNet};
use crate::scenario::generate_scenario;

/// splitmix64-style mixer for deriving independent seed streams.
fn mix_seed(a: u64, b: u64) -> u64 {
    let mut z = a ^ b.wrapping_mul(0x9e3779b97f4a7c15);
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58476d1ce4e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d049bb133111eb);
    z ^ (z >> 31)
}

/// Scenario seed of one training episode: a function of the base seed, the
/// environment index and the episode counter only, so schedules never depend
/// on thread timing.
pub fn train_scenario_seed(base: u64, env_idx: usize, episode: usize) -> u64 {
    mix_seed(mix_seed(base, 0x7261696e), (env_idx as u64) << 32 | episode as u64)
}

/// Held-out evaluation scenario seed; a namespace disjoint from training.
pub fn eval_scenario_seed(base: u64, index: usize) -> u64 {
    mix_seed(mix_seed(base, 0x6576616c), index as u64)
}

/// The held-out seeds the trainer evaluates on periodically.
pub fn held_out_seeds(cfg: &Config) -> Vec<u64> {
    (0..cfg.train.eval_seeds)
        .map(|i| eval_scenario_seed(cfg.train.seed, i as usize))
        .collect()
}

struct EnvSlot {
    env: PackagingEnv,
    obs: Observation,
    rng: ChaCha8Rng,
    episodes_started: usize,
    episode_return: f64,
    index: usize,
}

struct SlotRollout {
    obs: Vec<Observation>,
    actions: Vec<f64>,
    logps: Vec<f64>,
    values: Vec<f64>,
    rewards: Vec<f64>,
    dones: Vec<bool>,
    bootstrap: f64,
    finished_returns: Vec<f64>,
}

/// Per-iteration training statistics.
#[derive(Debug, Clone, serde::Serialize)]
pub struct IterStats {
    pub iteration: usize,
    pub lr: f64,
    /// Mean undiscounted return of episodes that finished this iteration.
    pub mean_return: Option<f64>,
    pub episodes_finished: usize,
    pub policy_loss: f64,
    pub value_loss: f64,
    /// Mean deterministic-policy return over the held-out seeds, on
    /// evaluation iterations.
    pub eval_return: Option<f64>,
}

pub struct TrainOutcome {
    pub net: PolicyNet,
    pub stats: Vec<IterStats>,
}

/// Undiscounted deterministic-policy (mean action) returns, one per seed.
pub fn evaluate(cfg: &Config, net: &PolicyNet, seeds: &[u64]) -> Result<Vec<f64>> {
    let results: Vec<Result<f64>> = seeds
        .par_iter()
        .map(|&seed| {
            let scenario = generate_scenario(&cfg.scenario, seed, &cfg.machine);
            let mut env = PackagingEnv::new(cfg, scenario)?;
            let mut obs = env.observe();
            let mut total = 0.0;
            loop {
                let (out, _) = net.forward(&obs);
                let step = env.step(out.mean)?;
                total += step.reward;
                if step.done {
                    return Ok(total);
                }
                obs = step.obs;
            }
        })
        .collect();
    results.into_iter().collect()
}

fn collect_rollout(slot: &mut EnvSlot, net: &PolicyNet, cfg: &Config) -> Result<SlotRollout> {
    let t = cfg.train.rollout_len;
    let mut roll = SlotRollout {
        obs: Vec::with_capacity(t),
        actions: Vec::with_capacity(t),
        logps: Vec::with_capacity(t),
        values: Vec::with_capacity(t),
        rewards: Vec::with_capacity(t),
        dones: Vec::with_capacity(t),
        bootstrap: 0.0,
        finished_returns: Vec::new(),
    };
    for _ in 0..t {
        let (out, _) = net.forward(&slot.obs);
        let z: f64 = slot.rng.sample(StandardNormal);
        let action = out.mean + out.log_std.exp() * z;
        let logp = log_prob(action, out.mean, out.log_std);
        let step = slot.env.step(action)?;
        slot.episode_return += step.reward;

        roll.obs.push(std::mem::replace(&mut slot.obs, step.obs));
        roll.actions.push(action);
        roll.logps.push(logp);
        roll.values.push(out.value);
        roll.rewards.push(step.reward);
        roll.dones.push(step.done);

        if step.done {
            roll.finished_returns.push(slot.episode_return);
            slot.episode_return = 0.0;
            let seed = train_scenario_seed(cfg.train.seed, slot.index, slot.episodes_started);
            slot.episodes_started += 1;
            let scenario = generate_scenario(&cfg.scenario, seed, &cfg.machine);
            slot.obs = slot.env.reset(scenario)?;
        }
    }
    let (out, _) = net.forward(&slot.obs);
    roll.bootstrap = out.value;
    Ok(roll)
}

pub fn train(
    cfg: &Config,
    init: Option<PolicyNet>,
    out_dir: Option<&Path>,
    mut progress: Option<&mut dyn FnMut(&IterStats)>,
) -> Result<TrainOutcome> {
    let tc = &cfg.train;
    let mut init_rng = ChaCha8Rng::seed_from_u64(mix_seed(tc.seed, 0x696e6974));
    let obs_dim = crate::env::obs_dim(&cfg.env);
    // Warm start from an existing policy when given; otherwise fresh weights.
    let mut net = match init {
        Some(net) => {
            if net.input_dim != obs_dim {
                return Err(crate::error::Error::Checkpoint(format!(
                    "initial policy expects {} inputs, environment produces {obs_dim}",
                    net.input_dim
                )));
            }
            net
        }
        None => PolicyNet::new(
            obs_dim,
            &tc.hidden_sizes,
            tc.log_std_init,
            tc.log_std_min,
            tc.log_std_max,
            &mut init_rng,
        ),
    };
    let mut opt = Adam::new(net.len());
    let mut update_rng = ChaCha8Rng::seed_from_u64(mix_seed(tc.seed, 0x75706474));

    let mut slots: Vec<EnvSlot> = (0..tc.num_envs)
        .map(|i| {
            let seed = train_scenario_seed(tc.seed, i, 0);
            let scenario = generate_scenario(&cfg.scenario, seed, &cfg.machine);
            let env = PackagingEnv::new(cfg, scenario)?;
            let obs = env.observe();
            Ok(EnvSlot {
                env,
                obs,
                rng: ChaCha8Rng::seed_from_u64(mix_seed(tc.seed, 0xac0000 + i as u64)),
                episodes_started: 1,
                episode_return: 0.0,
                index: i,
            })
        })
        .collect::<Result<_>>()?;

    let held_out = held_out_seeds(cfg);
    let mut stats = Vec::with_capacity(tc.iterations);

    for iteration in 0..tc.iterations {
        let lr = lr_schedule(tc.learning_rate, iteration, tc.iterations);

        // Rollouts: each slot is fully independent, so the parallel map is
        // deterministic once results are collected back in slot order.
        let rollouts: Vec<Result<SlotRollout>> = slots
            .par_iter_mut()
            .map(|slot| collect_rollout(slot, &net, cfg))
            .collect();
        let rollouts: Vec<SlotRollout> = rollouts.into_iter().collect::<Result<_>>()?;

        // Flatten in slot order and compute advantages per slot.
        let total = tc.num_envs * tc.rollout_len;
        let mut batch_obs: Vec<Observation> = Vec::with_capacity(total);
        let mut batch_actions = Vec::with_capacity(total);
        let mut batch_logps = Vec::with_capacity(total);
        let mut batch_adv = Vec::with_capacity(total);
        let mut batch_ret = Vec::with_capacity(total);
        let mut finished = Vec::new();
        for mut roll in rollouts {
            let mut values = std::mem::take(&mut roll.values);
            values.push(roll.bootstrap);
            let (adv, ret) =
                advantages(&roll.rewards, &values, &roll.dones, tc.discount, tc.gae_lambda);
            batch_obs.append(&mut roll.obs);
            batch_actions.append(&mut roll.actions);
            batch_logps.append(&mut roll.logps);
            batch_adv.extend(adv);
            batch_ret.extend(ret);
            finished.append(&mut roll.finished_returns);
        }

        // Normalize advantages across the whole batch.
        let mean = batch_adv.iter().sum::<f64>() / total as f64;
        let var = batch_adv.iter().map(|a| (a - mean) * (a - mean)).sum::<f64>() / total as f64;
        let std = var.sqrt().max(1e-8);
        for a in &mut batch_adv {
            *a = (*a - mean) / std;
        }

        // Clipped-surrogate updates over shuffled minibatches.
        let mut order: Vec<usize> = (0..total).collect();
        let mut policy_loss_acc = 0.0;
        let mut value_loss_acc = 0.0;
        let mut loss_samples = 0usize;
        for _ in 0..tc.epochs {
            // Fisher–Yates with the dedicated update stream.
            for i in (1..order.len()).rev() {
                let j = update_rng.gen_range(0..=i);
                order.swap(i, j);
            }
            for mb in order.chunks(tc.minibatch_size) {
                let (grads, pl, vl) = minibatch_gradients(
                    &net,
                    mb,
                    &batch_obs,
                    &batch_actions,
                    &batch_logps,
                    &batch_adv,
                    &batch_ret,
                    tc.clip_ratio,
                    tc.value_coef,
                    tc.entropy_coef,
                );
                let mut grads = grads;
                if tc.max_grad_norm > 0.0 {
                    let norm = grads.iter().map(|g| g * g).sum::<f64>().sqrt();
                    if norm > tc.max_grad_norm {
                        let scale = tc.max_grad_norm / norm;
                        for g in &mut grads {
                            *g *= scale;
                        }
                    }
                }
                opt.step(&mut net.params, &grads, lr);
                let ls = net.len() - 1;
                net.params[ls] = net.params[ls].clamp(net.log_std_min, net.log_std_max);
                policy_loss_acc += pl;
                value_loss_acc += vl;
                loss_samples += mb.len();
            }
        }

        let is_eval = tc.eval_every > 0
            && ((iteration + 1) % tc.eval_every == 0 || iteration + 1 == tc.iterations);
        let eval_return = if is_eval && !held_out.is_empty() {
            let returns = evaluate(cfg, &net, &held_out)?;
            Some(returns.iter().sum::<f64>() / returns.len() as f64)
        } else {
            None
        };

        let stat = IterStats {
            iteration,
            lr,
            mean_return: if finished.is_empty() {
                None
            } else {
                Some(finished.iter().sum::<f64>() / finished.len() as f64)
            },
            episodes_finished: finished.len(),
            policy_loss: policy_loss_acc / loss_samples.max(1) as f64,
            value_loss: value_loss_acc / loss_samples.max(1) as f64,
            eval_return,
        };
        if let Some(cb) = progress.as_deref_mut() {
            cb(&stat);
        }
        if is_eval {
            if let Some(dir) = out_dir {
                let ck = Checkpoint {
                    config_digest: cfg.digest(),
                    iteration: iteration + 1,
                    obs_dim,
                    net: net.clone(),
                };
                ck.save(&dir.join(format!("checkpoint_{:04}.json", iteration + 1)))?;
            }
        }
        stats.push(stat);
    }

    if let Some(dir) = out_dir {
        let ck = Checkpoint {
            config_digest: cfg.digest(),
            iteration: tc.iterations,
            obs_dim,
            net: net.clone(),
        };
        ck.save(&dir.join("policy.json"))?;
    }
    Ok(TrainOutcome { net, stats })
}

#[allow(clippy::too_many_arguments)]
fn minibatch_gradients(
    net: &PolicyNet,
    mb: &[usize],
    obs: &[Observation],
    actions: &[f64],
    old_logps: &[f64],
    adv: &[f64],
    ret: &[f64],
    clip: f64,
    value_coef: f64,
    entropy_coef: f64,
) -> (Vec<f64>, f64, f64) {
    // Fixed chunking keeps the final serial reduction order independent of
    // thread scheduling, which keeps training bit-reproducible.
    let chunk = mb.len().div_ceil(rayon::current_num_threads().max(1)).max(1);
    let partials: Vec<(Vec<f64>, f64, f64)> = mb
        .par_chunks(chunk)
        .map(|idxs| {
            let mut g = vec![0.0; net.len()];
            let mut pl = 0.0;
            let mut vl = 0.0;
            let ls_idx = net.len() - 1;
            for &i in idxs {
                let (out, cache) = net.forward(&obs[i]);
                let lp = log_prob(actions[i], out.mean, out.log_std);
                let ratio = (lp - old_logps[i]).exp();
                let a = adv[i];
                pl += -(ratio * a).min(ratio.clamp(1.0 - clip, 1.0 + clip) * a);
                // The gradient flows only while the unclipped term is active.
                let active = if a >= 0.0 { ratio <= 1.0 + clip } else { ratio >= 1.0 - clip };
                let d_logp = if active { -a * ratio } else { 0.0 };
                let (dlp_dmean, dlp_dls) = log_prob_grads(actions[i], out.mean, out.log_std);

                let verr = out.value - ret[i];
                vl += verr * verr;
                net.backward(&cache, d_logp * dlp_dmean, value_coef * 2.0 * verr, &mut g);
                g[ls_idx] += d_logp * dlp_dls - entropy_coef;
            }
            (g, pl, vl)
        })
        .collect();

    let mut grads = vec![0.0; net.len()];
    let (mut pl, mut vl) = (0.0, 0.0);
    for (g, p, v) in partials {
        for (acc, x) in grads.iter_mut().zip(&g) {
            *acc += x;
        }
        pl += p;
        vl += v;
    }
    let inv = 1.0 / mb.len() as f64;
    for g in &mut grads {
        *g *= inv;
    }
    (grads, pl, vl)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn tiny_config() -> Config {
        let mut cfg = Config::default();
        cfg.scenario.episode_length = 40.0;
        cfg.machine.warmup_time = 20.0;
        cfg.train.num_envs = 2;
        cfg.train.rollout_len = 16;
        cfg.train.iterations = 2;
        cfg.train.hidden_sizes = vec![16];
        cfg.train.minibatch_size = 8;
        cfg.train.epochs = 2;
        cfg.train.eval_every = 0;
        cfg.train.eval_seeds = 0;
        cfg
    }

    #[test]
    fn seed_namespaces_are_disjoint() {
        let train: std::collections::HashSet<u64> = (0..8)
            .flat_map(|e| (0..8).map(move |ep| train_scenario_seed(0, e, ep)))
            .collect();
        for i in 0..8 {
            assert!(!train.contains(&eval_scenario_seed(0, i)));
        }
        assert_eq!(train.len(), 64);
    }

    #[test]
    fn training_is_bit_reproducible() {
        let cfg = tiny_config();
        let a = train(&cfg, None, None, None).unwrap();
        let b = train(&cfg, None, None, None).unwrap();
        assert_eq!(a.net.params, b.net.params);
        assert_eq!(a.stats.len(), 2);
    }

    #[test]
    fn warm_start_resumes_from_given_policy() {
        let cfg = tiny_config();
        let first = train(&cfg, None, None, None).unwrap().net;
        // Zero further iterations: the warm-started net must come back as-is.
        let mut cont = cfg.clone();
        cont.train.iterations = 0;
        let resumed = train(&cont, Some(first.clone()), None, None).unwrap().net;
        assert_eq!(first.params, resumed.params);
        // Mismatched input width is rejected.
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let wrong = PolicyNet::new(3, &[4], -0.7, -4.0, 1.0, &mut rng);
        assert!(train(&cont, Some(wrong), None, None).is_err());
    }

    #[test]
    fn evaluation_is_deterministic() {
        let cfg = tiny_config();
        let out = train(&cfg, None, None, None).unwrap();
        let seeds = [eval_scenario_seed(1, 0), eval_scenario_seed(1, 1)];
        let r1 = evaluate(&cfg, &out.net, &seeds).unwrap();
        let r2 = evaluate(&cfg, &out.net, &seeds).unwrap();
        assert_eq!(r1, r2);
        assert!(r1.iter().all(|&r| r <= 0.0));
    }
}
