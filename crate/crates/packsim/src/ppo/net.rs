//! Policy/value network: a tanh MLP trunk with a Gaussian-mean head, a value
//! head, and a state-independent log standard deviation. Parameters live in
//! one flat vector so the optimizer and checkpoints stay trivial; forward and
//! backward passes are written out by hand.

use rand::Rng;
use serde::{Deserialize, Serialize};

/// Flat-parameter MLP. Layout: for each trunk layer, weights (row-major,
/// out×in) then biases; then the mean head (weights+bias), the value head
/// (weights+bias), and finally the single log-std parameter.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct PolicyNet {
    pub input_dim: usize,
    pub hidden: Vec<usize>,
    pub params: Vec<f64>,
    pub log_std_min: f64,
    pub log_std_max: f64,
}

/// Intermediate activations of one forward pass, kept for backprop.
pub struct Cache {
    /// Layer inputs: obs, then each hidden activation (post-tanh).
    acts: Vec<Vec<f64>>,
}

/// Output of a forward pass.
#[derive(Debug, Clone, Copy)]
pub struct NetOut {
    pub mean: f64,
    pub value: f64,
    pub log_std: f64,
}

impl PolicyNet {
    pub fn new(
        input_dim: usize,
        hidden: &[usize],
        log_std_init: f64,
        log_std_min: f64,
        log_std_max: f64,
        rng: &mut impl Rng,
    ) -> Self {
        let mut params = Vec::with_capacity(Self::param_count(input_dim, hidden));
        let mut fan_in = input_dim;
        for &h in hidden {
            // Orthogonal-ish init is overkill; scaled uniform is plenty here.
            let bound = (1.0 / fan_in as f64).sqrt();
            for _ in 0..h * fan_in {
                params.push(rng.gen_range(-bound..bound));
            }
            params.extend(std::iter::repeat_n(0.0, h));
            fan_in = h;
        }
        let head_bound = (1.0 / fan_in as f64).sqrt();
        // Mean head scaled down so the initial policy stays near zero action.
        for _ in 0..fan_in {
            params.push(rng.gen_range(-head_bound..head_bound) * 0.01);
        }
        params.push(0.0);
        for _ in 0..fan_in {
            params.push(rng.gen_range(-head_bound..head_bound));
        }
        params.push(0.0);
        params.push(log_std_init.clamp(log_std_min, log_std_max));
        Self {
            input_dim,
            hidden: hidden.to_vec(),
            params,
            log_std_min,
            log_std_max,
        }
    }

    pub fn param_count(input_dim: usize, hidden: &[usize]) -> usize {
        let mut n = 0;
        let mut fan_in = input_dim;
        for &h in hidden {
            n += h * fan_in + h;
            fan_in = h;
        }
        n + 2 * (fan_in + 1) + 1
    }

    #[allow(clippy::len_without_is_empty)]
    pub fn len(&self) -> usize {
        self.params.len()
    }

    fn trunk_end(&self) -> usize {
        let mut n = 0;
        let mut fan_in = self.input_dim;
        for &h in &self.hidden {
            n += h * fan_in + h;
            fan_in = h;
        }
        n
    }

    fn last_hidden(&self) -> usize {
        *self.hidden.last().unwrap_or(&self.input_dim)
    }

    pub fn log_std(&self) -> f64 {
        self.params[self.len() - 1].clamp(self.log_std_min, self.log_std_max)
    }

    /// Forward pass; the cache is sufficient for one matching backward pass.
    pub fn forward(&self, obs: &[f64]) -> (NetOut, Cache) {
        debug_assert_eq!(obs.len(), self.input_dim);
        let mut acts: Vec<Vec<f64>> = Vec::with_capacity(self.hidden.len() + 1);
        acts.push(obs.to_vec());
        let mut offset = 0;
        let mut fan_in = self.input_dim;
        for &h in &self.hidden {
            let input = acts.last().unwrap();
            let mut out = vec![0.0; h];
            for (o, out_o) in out.iter_mut().enumerate() {
                let w = &self.params[offset + o * fan_in..offset + (o + 1) * fan_in];
                let mut s = self.params[offset + h * fan_in + o];
                for (wi, xi) in w.iter().zip(input) {
                    s += wi * xi;
                }
                *out_o = s.tanh();
            }
            offset += h * fan_in + h;
            fan_in = h;
            acts.push(out);
        }
        let last = acts.last().unwrap();
        let hm = self.last_hidden();
        let mean_off = self.trunk_end();
        let value_off = mean_off + hm + 1;
        let mut mean = self.params[mean_off + hm];
        let mut value = self.params[value_off + hm];
        for i in 0..hm {
            mean += self.params[mean_off + i] * last[i];
            value += self.params[value_off + i] * last[i];
        }
        (
            NetOut {
                mean,
                value,
                log_std: self.log_std(),
            },
            Cache { acts },
        )
    }

    /// Accumulate gradients for one sample given the loss gradients with
    /// respect to the two heads (the log-std gradient is the caller's, since
    /// log-std does not pass through the trunk).
    pub fn backward(&self, cache: &Cache, d_mean: f64, d_value: f64, grads: &mut [f64]) {
        debug_assert_eq!(grads.len(), self.len());
        let hm = self.last_hidden();
        let mean_off = self.trunk_end();
        let value_off = mean_off + hm + 1;
        let last = cache.acts.last().unwrap();

        let mut d_last = vec![0.0; hm];
        for i in 0..hm {
            grads[mean_off + i] += d_mean * last[i];
            grads[value_off + i] += d_value * last[i];
            d_last[i] =
                d_mean * self.params[mean_off + i] + d_value * self.params[value_off + i];
        }
        grads[mean_off + hm] += d_mean;
        grads[value_off + hm] += d_value;

        // Walk the trunk backwards.
        let mut layer_offsets = Vec::with_capacity(self.hidden.len());
        {
            let mut off = 0;
            let mut fan_in = self.input_dim;
            for &h in &self.hidden {
                layer_offsets.push((off, fan_in, h));
                off += h * fan_in + h;
                fan_in = h;
            }
        }
        let mut d_out = d_last;
        for (l, &(off, fan_in, h)) in layer_offsets.iter().enumerate().rev() {
            let input = &cache.acts[l];
            let output = &cache.acts[l + 1];
            let mut d_in = vec![0.0; fan_in];
            for o in 0..h {
                // d pre-activation through tanh.
                let dz = d_out[o] * (1.0 - output[o] * output[o]);
                if dz == 0.0 {
                    continue;
                }
                grads[off + h * fan_in + o] += dz;
                let w_row = &self.params[off + o * fan_in..off + (o + 1) * fan_in];
                let g_row = &mut grads[off + o * fan_in..off + (o + 1) * fan_in];
                for i in 0..fan_in {
                    g_row[i] += dz * input[i];
                    d_in[i] += dz * w_row[i];
                }
            }
            d_out = d_in;
        }
    }
}

/// Gaussian log density of `action` under (mean, log_std).
pub fn log_prob(action: f64, mean: f64, log_std: f64) -> f64 {
    let std = log_std.exp();
    let z = (action - mean) / std;
    -0.5 * z * z - log_std - 0.5 * (2.0 * std::f64::consts::PI).ln()
}

/// Gradients of [`log_prob`] with respect to mean and log_std.
pub fn log_prob_grads(action: f64, mean: f64, log_std: f64) -> (f64, f64) {
    let std = log_std.exp();
    let z = (action - mean) / std;
    (z / std, z * z - 1.0)
}

/// Entropy of the Gaussian policy.
pub fn entropy(log_std: f64) -> f64 {
    log_std + 0.5 * (2.0 * std::f64::consts::PI * std::f64::consts::E).ln()
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn tiny_net(seed: u64) -> PolicyNet {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        PolicyNet::new(3, &[5, 4], -0.5, -4.0, 1.0, &mut rng)
    }

    #[test]
    fn param_count_matches_layout() {
        let net = tiny_net(0);
        assert_eq!(net.len(), PolicyNet::param_count(3, &[5, 4]));
        assert_eq!(net.len(), 3 * 5 + 5 + 5 * 4 + 4 + 2 * (4 + 1) + 1);
    }

    #[test]
    fn forward_is_deterministic() {
        let net = tiny_net(7);
        let obs = [0.3, -0.2, 0.9];
        let (a, _) = net.forward(&obs);
        let (b, _) = net.forward(&obs);
        assert_eq!(a.mean, b.mean);
        assert_eq!(a.value, b.value);
    }

    #[test]
    fn log_prob_matches_closed_form() {
        // Standard normal at 0: log(1/sqrt(2π)).
        let lp = log_prob(0.0, 0.0, 0.0);
        assert!((lp + 0.5 * (2.0 * std::f64::consts::PI).ln()).abs() < 1e-12);
    }

    #[test]
    fn backward_matches_finite_differences() {
        // Scalar probe loss L = 2·mean + 3·value checked against central
        // differences on every parameter.
        let mut net = tiny_net(42);
        let obs = [0.5, -1.0, 0.25];
        let (_, cache) = net.forward(&obs);
        let mut grads = vec![0.0; net.len()];
        net.backward(&cache, 2.0, 3.0, &mut grads);

        let eps = 1e-6;
        for p in 0..net.len() - 1 {
            let orig = net.params[p];
            net.params[p] = orig + eps;
            let (hi, _) = net.forward(&obs);
            net.params[p] = orig - eps;
            let (lo, _) = net.forward(&obs);
            net.params[p] = orig;
            let num = (2.0 * (hi.mean - lo.mean) + 3.0 * (hi.value - lo.value)) / (2.0 * eps);
            let denom = num.abs().max(grads[p].abs()).max(1e-8);
            assert!(
                (num - grads[p]).abs() / denom < 1e-4,
                "param {p}: analytic {} vs numeric {num}",
                grads[p]
            );
        }
    }

    #[test]
    fn log_prob_grads_match_finite_differences() {
        let (a, m, ls) = (0.7, 0.2, -0.3);
        let (dm, dls) = log_prob_grads(a, m, ls);
        let eps = 1e-6;
        let ndm = (log_prob(a, m + eps, ls) - log_prob(a, m - eps, ls)) / (2.0 * eps);
        let ndls = (log_prob(a, m, ls + eps) - log_prob(a, m, ls - eps)) / (2.0 * eps);
        assert!((dm - ndm).abs() < 1e-6);
        assert!((dls - ndls).abs() < 1e-6);
    }
}
