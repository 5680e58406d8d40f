//! Generalized advantage estimation over fixed-length rollout segments.

/// Advantages and discounted-return targets for one environment's segment.
///
/// `values` has one bootstrap entry more than `rewards`; `dones[t]` marks that
/// the episode ended at step `t`, cutting both the advantage recursion and the
/// bootstrap.
pub fn advantages(
    rewards: &[f64],
    values: &[f64],
    dones: &[bool],
    discount: f64,
    lambda: f64,
) -> (Vec<f64>, Vec<f64>) {
    let n = rewards.len();
    assert_eq!(values.len(), n + 1);
    assert_eq!(dones.len(), n);
    let mut adv = vec![0.0; n];
    let mut carry = 0.0;
    for t in (0..n).rev() {
        let nonterminal = if dones[t] { 0.0 } else { 1.0 };
        let delta = rewards[t] + discount * values[t + 1] * nonterminal - values[t];
        carry = delta + discount * lambda * nonterminal * carry;
        adv[t] = carry;
    }
    let returns = adv
        .iter()
        .zip(values)
        .map(|(a, v)| a + v)
        .collect();
    (adv, returns)
}

#[cfg(test)]
mod tests {
    use super::*;

    /// Textbook double sum: A_t = Σ_l (γλ)^l δ_{t+l}, truncated at episode end.
    fn brute_force(
        rewards: &[f64],
        values: &[f64],
        dones: &[bool],
        discount: f64,
        lambda: f64,
    ) -> Vec<f64> {
        let n = rewards.len();
        let mut adv = vec![0.0; n];
        for t in 0..n {
            let mut weight = 1.0;
            for l in 0..n - t {
                let k = t + l;
                let nonterminal = if dones[k] { 0.0 } else { 1.0 };
                let delta = rewards[k] + discount * values[k + 1] * nonterminal - values[k];
                adv[t] += weight * delta;
                if dones[k] {
                    break;
                }
                weight *= discount * lambda;
            }
        }
        adv
    }

    #[test]
    fn matches_brute_force_on_random_segments() {
        use rand::{Rng, SeedableRng};
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(3);
        for case in 0..50 {
            let n = 6;
            let rewards: Vec<f64> = (0..n).map(|_| rng.gen_range(-2.0..2.0)).collect();
            let values: Vec<f64> = (0..=n).map(|_| rng.gen_range(-1.0..1.0)).collect();
            let dones: Vec<bool> = (0..n).map(|_| rng.gen_bool(0.2)).collect();
            let (adv, returns) = advantages(&rewards, &values, &dones, 0.99, 0.95);
            let expect = brute_force(&rewards, &values, &dones, 0.99, 0.95);
            for t in 0..n {
                assert!(
                    (adv[t] - expect[t]).abs() < 1e-12,
                    "case {case} step {t}: {} vs {}",
                    adv[t],
                    expect[t]
                );
                assert!((returns[t] - (adv[t] + values[t])).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn terminal_step_has_no_bootstrap() {
        let (adv, _) = advantages(&[1.0], &[0.5, 9.0], &[true], 0.99, 0.95);
        assert!((adv[0] - (1.0 - 0.5)).abs() < 1e-15);
    }
}
