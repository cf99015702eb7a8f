use crate::error::{Error, Result};

/// Generalised advantage estimation over one trajectory segment.
///
/// `dones[t]` marks that the transition at `t` ended its episode, which cuts both
/// bootstrapping and the advantage recursion at that step. `bootstrap_value` is the
/// value of the state following the last transition. Returns `(advantages, returns)`
/// with `returns = advantages + values`.
pub fn gae(
    values: &[f64],
    bootstrap_value: f64,
    rewards: &[f64],
    dones: &[bool],
    gamma: f64,
    lambda_gae: f64,
) -> Result<(Vec<f64>, Vec<f64>)> {
    let n = rewards.len();
    if values.len() != n {
        return Err(Error::LengthMismatch { expected: n, actual: values.len() });
    }
    if dones.len() != n {
        return Err(Error::LengthMismatch { expected: n, actual: dones.len() });
    }
    let mut adv = vec![0.0; n];
    let mut running = 0.0;
    for t in (0..n).rev() {
        let next = if t + 1 == n { bootstrap_value } else { values[t + 1] };
        let live = if dones[t] { 0.0 } else { 1.0 };
        let delta = rewards[t] + gamma * next * live - values[t];
        running = delta + gamma * lambda_gae * live * running;
        adv[t] = running;
    }
    let returns = adv.iter().zip(values).map(|(a, v)| a + v).collect();
    Ok((adv, returns))
}

/// Zero-mean, unit-variance rescaling (population statistics).
pub fn normalize(xs: &mut [f64]) {
    if xs.is_empty() {
        return;
    }
    let n = xs.len() as f64;
    let mean = xs.iter().sum::<f64>() / n;
    let var = xs.iter().map(|x| (x - mean) * (x - mean)).sum::<f64>() / n;
    let std = var.sqrt() + 1e-8;
    xs.iter_mut().for_each(|x| *x = (*x - mean) / std);
}
