use rand::Rng;
use rand_distr::StandardNormal;

use crate::error::{Error, Result};
use crate::numerics::rng_stream;
use crate::systems::{States, Trajectory};

/// Add Gaussian observation noise: per dimension, the noise standard
/// deviation is `strength` times the standard deviation of that dimension
/// over the whole dataset, so `strength = 1` matches the data magnitude.
pub fn add_observation_noise(
    trajs: &[Trajectory],
    strength: f64,
    seed: u64,
) -> Result<Vec<Trajectory>> {
    if strength < 0.0 {
        return Err(Error::Config("noise strength must be >= 0".into()));
    }
    if trajs.iter().any(|t| t.is_discrete()) {
        return Err(Error::Data(
            "observation noise applies to continuous trajectories only".into(),
        ));
    }
    if trajs.is_empty() {
        return Ok(Vec::new());
    }
    if strength == 0.0 {
        return Ok(trajs.to_vec());
    }
    let dim = trajs[0].dim();
    // Dataset-wide per-dimension standard deviation.
    let mut n = 0.0;
    let mut mean = vec![0.0; dim];
    for t in trajs {
        for i in 0..t.len() {
            for (m, v) in mean.iter_mut().zip(t.state(i)) {
                *m += v;
            }
            n += 1.0;
        }
    }
    mean.iter_mut().for_each(|m| *m /= n);
    let mut var = vec![0.0; dim];
    for t in trajs {
        for i in 0..t.len() {
            for d in 0..dim {
                let dv = t.state(i)[d] - mean[d];
                var[d] += dv * dv;
            }
        }
    }
    let std: Vec<f64> = var.iter().map(|v| (v / n).sqrt()).collect();

    let mut out = Vec::with_capacity(trajs.len());
    for (k, t) in trajs.iter().enumerate() {
        let mut rng = rng_stream(seed, "observation-noise", k as u64);
        let States::Continuous { dim, values } = &t.states else {
            unreachable!()
        };
        let noisy: Vec<f64> = values
            .iter()
            .enumerate()
            .map(|(i, v)| {
                let xi: f64 = rng.sample(StandardNormal);
                v + strength * std[i % dim] * xi
            })
            .collect();
        out.push(Trajectory::continuous(
            *dim,
            noisy,
            t.lag_time,
            &t.system_id,
        )?);
    }
    Ok(out)
}

/// Time-delay embedding: the state at `t` becomes the concatenation of the
/// observations at `t-lookback+1..=t`, so the dimension grows to
/// `D * lookback` and the length shrinks by `lookback - 1`.
pub fn delay_embed(traj: &Trajectory, lookback: usize) -> Result<Trajectory> {
    if lookback < 1 {
        return Err(Error::Config("lookback must be >= 1".into()));
    }
    if traj.is_discrete() {
        return Err(Error::Data("delay embedding applies to continuous trajectories".into()));
    }
    if lookback > traj.len() {
        return Err(Error::Data(format!(
            "lookback {} exceeds trajectory length {}",
            lookback,
            traj.len()
        )));
    }
    if lookback == 1 {
        return Ok(traj.clone());
    }
    let dim = traj.dim();
    let out_len = traj.len() - lookback + 1;
    let mut values = Vec::with_capacity(out_len * dim * lookback);
    for t in 0..out_len {
        for w in 0..lookback {
            values.extend_from_slice(traj.state(t + w));
        }
    }
    Trajectory::continuous(dim * lookback, values, traj.lag_time, &traj.system_id)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn traj(values: Vec<f64>) -> Trajectory {
        Trajectory::continuous(1, values, 1, "test").unwrap()
    }

    #[test]
    fn zero_strength_is_identity() {
        let ts = vec![traj(vec![1.0, 2.0, 3.0])];
        let out = add_observation_noise(&ts, 0.0, 0).unwrap();
        assert_eq!(out, ts);
    }

    #[test]
    fn unit_strength_matches_data_scale() {
        let mut rng = rng_stream(4, "noise-test", 0);
        use rand::Rng;
        let clean: Vec<f64> = (0..20_000).map(|_| rng.random_range(-3.0..3.0)).collect();
        let ts = vec![traj(clean.clone())];
        let noisy = add_observation_noise(&ts, 1.0, 7).unwrap();
        let diffs: Vec<f64> = (0..noisy[0].len())
            .map(|i| noisy[0].state(i)[0] - clean[i])
            .collect();
        let n = diffs.len() as f64;
        let mean = diffs.iter().sum::<f64>() / n;
        let var = diffs.iter().map(|d| (d - mean) * (d - mean)).sum::<f64>() / n;
        let data_mean = clean.iter().sum::<f64>() / n;
        let data_var = clean.iter().map(|d| (d - data_mean) * (d - data_mean)).sum::<f64>() / n;
        let ratio = (var / data_var).sqrt();
        assert!((ratio - 1.0).abs() < 0.05, "noise/data std ratio {ratio}");
    }

    #[test]
    fn equal_seeds_give_equal_noise() {
        let ts = vec![traj(vec![0.0, 1.0, 2.0, 3.0])];
        let a = add_observation_noise(&ts, 0.5, 9).unwrap();
        let b = add_observation_noise(&ts, 0.5, 9).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn discrete_input_rejected() {
        let t = Trajectory::discrete(10, vec![0, 1, 2], 1, "test").unwrap();
        assert!(add_observation_noise(&[t], 0.1, 0).is_err());
    }

    #[test]
    fn lookback_one_is_identity() {
        let t = traj(vec![1.0, 2.0, 3.0]);
        assert_eq!(delay_embed(&t, 1).unwrap(), t);
    }

    #[test]
    fn lookback_two_stacks_pairs() {
        let t = traj(vec![1.0, 2.0, 3.0]);
        let e = delay_embed(&t, 2).unwrap();
        assert_eq!(e.len(), 2);
        assert_eq!(e.dim(), 2);
        assert_eq!(e.state(0), &[1.0, 2.0]);
        assert_eq!(e.state(1), &[2.0, 3.0]);
    }

    #[test]
    fn output_length_shrinks_by_lookback_minus_one() {
        let t = traj((0..10).map(|i| i as f64).collect());
        for lb in 1..=5 {
            assert_eq!(delay_embed(&t, lb).unwrap().len(), 10 - lb + 1);
        }
    }

    #[test]
    fn excessive_lookback_rejected() {
        let t = traj(vec![1.0, 2.0]);
        assert!(delay_embed(&t, 3).is_err());
    }
}
