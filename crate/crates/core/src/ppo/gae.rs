use super::PpoError;

/// Generalized advantage estimates and returns, computed backwards.
///
/// `bootstrap_value` is V of the state after the last step; it is masked out
/// when that step is terminal.
pub fn compute_gae(
    rewards: &[f64],
    values: &[f64],
    dones: &[bool],
    bootstrap_value: f64,
    discount: f64,
    gae_lambda: f64,
) -> Result<(Vec<f64>, Vec<f64>), PpoError> {
    if rewards.len() != values.len() || rewards.len() != dones.len() {
        return Err(PpoError::LengthMismatch(format!(
            "rewards {}, values {}, dones {}",
            rewards.len(),
            values.len(),
            dones.len()
        )));
    }
    let n = rewards.len();
    let mut advantages = vec![0.0; n];
    let mut returns = vec![0.0; n];
    let mut next_value = bootstrap_value;
    let mut next_advantage = 0.0;
    for t in (0..n).rev() {
        let live = if dones[t] { 0.0 } else { 1.0 };
        let delta = rewards[t] + discount * next_value * live - values[t];
        let a = delta + discount * gae_lambda * live * next_advantage;
        advantages[t] = a;
        returns[t] = a + values[t];
        next_value = values[t];
        next_advantage = a;
    }
    Ok((advantages, returns))
}

/// Shifts to mean 0 and scales to unit (population) standard deviation.
/// A constant vector becomes all zeros.
pub fn standardize(xs: &mut [f64]) {
    if xs.is_empty() {
        return;
    }
    let n = xs.len() as f64;
    let mean = xs.iter().sum::<f64>() / n;
    let var = xs.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / n;
    let std = var.sqrt();
    for x in xs.iter_mut() {
        *x -= mean;
        if std > 1e-12 {
            *x /= std;
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn single_terminal_step() {
        let (a, r) = compute_gae(&[1.0], &[0.0], &[true], 5.0, 0.89, 0.95).unwrap();
        assert_eq!(a, vec![1.0]);
        assert_eq!(r, vec![1.0]);
    }

    #[test]
    fn lambda_zero_is_td_residual() {
        let rewards = [1.0, -2.0, 0.5, 3.0];
        let values = [0.3, 0.1, -0.4, 0.9];
        let dones = [false, false, true, false];
        let boot = 0.7;
        let (a, _) = compute_gae(&rewards, &values, &dones, boot, 0.89, 0.0).unwrap();
        for t in 0..4 {
            let next = if t + 1 < 4 { values[t + 1] } else { boot };
            let live = if dones[t] { 0.0 } else { 1.0 };
            let td = rewards[t] + 0.89 * next * live - values[t];
            assert_eq!(a[t], td);
        }
    }

    #[test]
    fn length_mismatch() {
        assert!(matches!(
            compute_gae(&[1.0, 2.0], &[0.0], &[false, true], 0.0, 0.9, 0.9),
            Err(PpoError::LengthMismatch(_))
        ));
    }

    #[test]
    fn standardize_moments() {
        let mut xs = vec![1.0, 2.0, 3.0, 10.0];
        standardize(&mut xs);
        let mean: f64 = xs.iter().sum::<f64>() / 4.0;
        let var: f64 = xs.iter().map(|x| x * x).sum::<f64>() / 4.0;
        assert!(mean.abs() < 1e-12);
        assert!((var.sqrt() - 1.0).abs() < 1e-12);

        let mut flat = vec![4.0; 5];
        standardize(&mut flat);
        assert!(flat.iter().all(|x| *x == 0.0));
    }
}
