use crate::error::{Error, Result};
use crate::numerics::Tensor;

/// Variance schedule indexed by timestep `t` in `1..=T` (stored at `t - 1`).
#[derive(Clone, Debug, PartialEq)]
pub struct NoiseSchedule {
    pub beta: Vec<f64>,
    pub alpha: Vec<f64>,
    pub alpha_bar: Vec<f64>,
}

/// Linear betas from `beta_start` to `beta_end` inclusive.
pub fn make_schedule(steps: usize, beta_start: f64, beta_end: f64) -> Result<NoiseSchedule> {
    if steps == 0 {
        return Err(Error::InvalidArgument("schedule needs at least one step".into()));
    }
    if !(beta_start > 0.0 && beta_start <= beta_end && beta_end < 1.0) {
        return Err(Error::InvalidArgument(format!(
            "beta range must satisfy 0 < start <= end < 1, got [{beta_start}, {beta_end}]"
        )));
    }
    let beta: Vec<f64> = (0..steps)
        .map(|i| if steps == 1 { beta_start } else { beta_start + (beta_end - beta_start) * i as f64 / (steps - 1) as f64 })
        .collect();
    let alpha: Vec<f64> = beta.iter().map(|b| 1.0 - b).collect();
    let mut alpha_bar = Vec::with_capacity(steps);
    let mut acc = 1.0;
    for a in &alpha {
        acc *= a;
        alpha_bar.push(acc);
    }
    Ok(NoiseSchedule { beta, alpha, alpha_bar })
}

impl NoiseSchedule {
    pub fn steps(&self) -> usize {
        self.beta.len()
    }

    /// `ᾱ_t`, with `ᾱ_0 = 1`.
    pub fn alpha_bar_at(&self, t: usize) -> f64 {
        if t == 0 {
            1.0
        } else {
            self.alpha_bar[t - 1]
        }
    }

    fn check_t(&self, t: usize) -> Result<()> {
        if t == 0 || t > self.steps() {
            return Err(Error::InvalidArgument(format!("timestep {t} outside 1..={}", self.steps())));
        }
        Ok(())
    }

    /// Evenly strided descending subsequence from `T` down to 1.
    pub fn ddim_timesteps(&self, count: usize) -> Result<Vec<usize>> {
        let t = self.steps();
        if count == 0 || count > t {
            return Err(Error::InvalidArgument(format!("{count} sampling steps for a {t}-step schedule")));
        }
        if count == 1 {
            return Ok(vec![t]);
        }
        Ok((0..count).rev().map(|i| 1 + ((t - 1) as f64 * i as f64 / (count - 1) as f64).round() as usize).collect())
    }
}

/// `√ᾱ_t x0 + √(1 − ᾱ_t) ε`.
pub fn q_sample(x0: &Tensor, t: usize, eps: &Tensor, sched: &NoiseSchedule) -> Result<Tensor> {
    sched.check_t(t)?;
    if x0.dims() != eps.dims() {
        return Err(Error::Shape(format!("x0 {:?} vs noise {:?}", x0.dims(), eps.dims())));
    }
    let ab = sched.alpha_bar_at(t);
    let (a, b) = (ab.sqrt(), (1.0 - ab).sqrt());
    let data = x0.data().iter().zip(eps.data()).map(|(x, e)| a * x + b * e).collect();
    Tensor::new(x0.dims(), data)
}

/// One DDIM update from `t` to `t_prev < t` given the predicted noise.
///
/// With `clip`, the implied clean image is clamped to `[-1, 1]` and the noise
/// direction re-derived from it. `noise` is only read when `eta > 0`.
pub fn ddim_step(
    x_t: &[f64],
    eps: &[f64],
    t: usize,
    t_prev: usize,
    sched: &NoiseSchedule,
    eta: f64,
    clip: bool,
    noise: &[f64],
) -> Vec<f64> {
    let ab = sched.alpha_bar_at(t);
    let ab_prev = sched.alpha_bar_at(t_prev);
    let (sa, sb) = (ab.sqrt(), (1.0 - ab).sqrt());
    let sigma = if eta > 0.0 { eta * ((1.0 - ab_prev) / (1.0 - ab)).sqrt() * (1.0 - ab / ab_prev).sqrt() } else { 0.0 };
    let dir = (1.0 - ab_prev - sigma * sigma).max(0.0).sqrt();
    x_t.iter()
        .zip(eps)
        .enumerate()
        .map(|(i, (&x, &e))| {
            let mut x0 = (x - sb * e) / sa;
            let mut e = e;
            if clip && !(-1.0..=1.0).contains(&x0) {
                x0 = x0.clamp(-1.0, 1.0);
                e = (x - sa * x0) / sb;
            }
            let mut out = ab_prev.sqrt() * x0 + dir * e;
            if sigma > 0.0 {
                out += sigma * noise[i];
            }
            out
        })
        .collect()
}
