//! Drifted forward/reverse diffusion: schedules, the cumulative drift
//! `Q_t = c_t q`, the per-step reverse drift `q'_k`, training and sampling.
//!
//! The forward chain adds noise with mean `q` at every step,
//!
//! ```text
//! x_t = sqrt(a_t) x_{t-1} + sqrt(1 - a_t) (z + q)
//!     = sqrt(abar_t) x_0 + sqrt(1 - abar_t) zbar + c_t q
//! ```
//!
//! with `c_0 = 0`, `c_t = sqrt(a_t) c_{t-1} + sqrt(1 - a_t)`.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::codec::{GeometryFrame, FRAME_LEN};
use crate::dataset::ContextVector;
use crate::error::{Error, Result};
use crate::num::Real;

/// Reverse-step standard deviation.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize, Default)]
pub enum SigmaVariant {
    /// `sigma_t = sqrt(beta_t)`.
    #[default]
    AlgorithmTwo,
    /// `sigma_t^2 = (1 - abar_{t-1}) / (1 - abar_t) * beta_t`.
    PosteriorEq3,
}

/// Serializable schedule parameters recorded in run manifests.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ScheduleSpec {
    pub steps: usize,
    pub beta_start: f64,
    pub beta_end: f64,
    #[serde(default)]
    pub variant: SigmaVariant,
}

impl Default for ScheduleSpec {
    fn default() -> Self {
        ScheduleSpec {
            steps: 500,
            beta_start: 1e-4,
            beta_end: 0.02,
            variant: SigmaVariant::AlgorithmTwo,
        }
    }
}

impl ScheduleSpec {
    pub fn build<S: Real>(&self) -> Result<DiffusionSchedule<S>> {
        let mut s = linear_schedule(self.steps, self.beta_start, self.beta_end)?;
        s.variant = self.variant;
        Ok(s)
    }
}

/// Precomputed schedule sequences, indexed by timestep `t` in `1..=T`.
#[derive(Clone, Debug)]
pub struct DiffusionSchedule<S> {
    steps: usize,
    beta: Vec<S>,
    alpha: Vec<S>,
    alpha_bar: Vec<S>,
    drift: Vec<S>,
    pub variant: SigmaVariant,
}

/// Linear deformation schedule `beta_t = beta_1 + (t - 1)(beta_T - beta_1)/(T - 1)`.
pub fn linear_schedule<S: Real>(steps: usize, beta_start: f64, beta_end: f64) -> Result<DiffusionSchedule<S>> {
    if steps == 0 {
        return Err(Error::InvalidSchedule("T must be at least 1".into()));
    }
    if !(beta_start > 0.0 && beta_start <= beta_end && beta_end < 1.0) {
        return Err(Error::InvalidSchedule(format!(
            "need 0 < beta_1 <= beta_T < 1, got {beta_start}, {beta_end}"
        )));
    }
    let betas: Vec<f64> = (1..=steps)
        .map(|t| {
            if steps == 1 {
                beta_start
            } else {
                beta_start + (t - 1) as f64 * (beta_end - beta_start) / (steps - 1) as f64
            }
        })
        .collect();
    Ok(DiffusionSchedule::from_betas(&betas))
}

impl<S: Real> DiffusionSchedule<S> {
    /// Derived sequences are accumulated in `f64` and then converted.
    fn from_betas(betas: &[f64]) -> Self {
        let steps = betas.len();
        let mut alpha_bar = Vec::with_capacity(steps + 1);
        let mut drift = Vec::with_capacity(steps + 1);
        alpha_bar.push(1.0);
        drift.push(0.0);
        for (i, &b) in betas.iter().enumerate() {
            let a = 1.0 - b;
            alpha_bar.push(alpha_bar[i] * a);
            drift.push(a.sqrt() * drift[i] + b.sqrt());
        }
        DiffusionSchedule {
            steps,
            beta: betas.iter().map(|&b| S::of(b)).collect(),
            alpha: betas.iter().map(|&b| S::of(1.0 - b)).collect(),
            alpha_bar: alpha_bar.into_iter().map(S::of).collect(),
            drift: drift.into_iter().map(S::of).collect(),
            variant: SigmaVariant::AlgorithmTwo,
        }
    }

    pub fn steps(&self) -> usize {
        self.steps
    }

    pub fn check_step(&self, t: usize) -> Result<()> {
        if t == 0 || t > self.steps {
            return Err(Error::StepOutOfRange { t, max: self.steps });
        }
        Ok(())
    }

    pub fn beta(&self, t: usize) -> S {
        self.beta[t - 1]
    }

    pub fn alpha(&self, t: usize) -> S {
        self.alpha[t - 1]
    }

    /// `abar_t`, with `abar_0 = 1`.
    pub fn alpha_bar(&self, t: usize) -> S {
        self.alpha_bar[t]
    }

    /// Cumulative drift coefficient `c_t`, with `c_0 = 0`.
    pub fn drift_coeff(&self, t: usize) -> S {
        self.drift[t]
    }

    pub fn sigma(&self, t: usize) -> S {
        match self.variant {
            SigmaVariant::AlgorithmTwo => self.beta(t).sqrt(),
            SigmaVariant::PosteriorEq3 => {
                ((S::one() - self.alpha_bar(t - 1)) / (S::one() - self.alpha_bar(t)) * self.beta(t)).sqrt()
            }
        }
    }

    /// Timestep encoding fed to the denoiser: `t / T`.
    pub fn normalized_step(&self, t: usize) -> S {
        S::of(t as f64 / self.steps as f64)
    }
}

/// Per-slot adjustment term `q` (mean of the forward-step noise).
#[derive(Clone, Debug, PartialEq)]
pub struct DriftField<S>(pub GeometryFrame<S>);

/// Standard-normal frame-shaped sample.
#[derive(Clone, Debug, PartialEq)]
pub struct NoiseDraw<S>(pub GeometryFrame<S>);

impl<S: Real> NoiseDraw<S> {
    pub fn zeros() -> Self {
        NoiseDraw(GeometryFrame::zeros())
    }

    pub fn sample<R: Rng + ?Sized>(rng: &mut R) -> Self {
        let data = (0..FRAME_LEN)
            .map(|_| S::of(rng.sample::<f64, _>(StandardNormal)))
            .collect();
        NoiseDraw(GeometryFrame { data })
    }

    /// Draw restricted to the first `live` slots.
    pub fn sample_live<R: Rng + ?Sized>(rng: &mut R, live: usize) -> Self {
        let mut z = Self::sample(rng);
        z.0.mask_to(live);
        z
    }
}

/// Recovers `q` from a forward endpoint.
///
/// Paired mode (`x0` given): `q = (x_target - sqrt(abar_T) x0) / c_T`, so that
/// the expected endpoint is exactly `x_target`. Inference mode: `q =
/// x_target / c_T`, the large-`T` limit where the `x0` term has decayed.
pub fn drift_from_target<S: Real>(
    x_target: &GeometryFrame<S>,
    schedule: &DiffusionSchedule<S>,
    x0: Option<&GeometryFrame<S>>,
) -> DriftField<S> {
    let t = schedule.steps();
    let c = schedule.drift_coeff(t);
    let numerator = match x0 {
        Some(x0) => x_target.add_scaled(-schedule.alpha_bar(t).sqrt(), x0),
        None => x_target.clone(),
    };
    DriftField(numerator.scaled(S::one() / c))
}

/// One forward step from `x_{t-1}` to `x_t`.
pub fn forward_step<S: Real>(
    schedule: &DiffusionSchedule<S>,
    x_prev: &GeometryFrame<S>,
    t: usize,
    q: &DriftField<S>,
    z: &NoiseDraw<S>,
) -> Result<GeometryFrame<S>> {
    schedule.check_step(t)?;
    let a = schedule.alpha(t).sqrt();
    let b = (S::one() - schedule.alpha(t)).sqrt();
    let data = x_prev
        .data
        .iter()
        .zip(&q.0.data)
        .zip(&z.0.data)
        .map(|((&x, &q), &z)| a * x + b * (z + q))
        .collect();
    Ok(GeometryFrame { data })
}

/// Closed-form forward marginal sample at step `t`.
pub fn forward_closed<S: Real>(
    schedule: &DiffusionSchedule<S>,
    x0: &GeometryFrame<S>,
    t: usize,
    q: &DriftField<S>,
    zbar: &NoiseDraw<S>,
) -> Result<GeometryFrame<S>> {
    schedule.check_step(t)?;
    let a = schedule.alpha_bar(t).sqrt();
    let s = (S::one() - schedule.alpha_bar(t)).sqrt();
    let c = schedule.drift_coeff(t);
    let data = x0
        .data
        .iter()
        .zip(&q.0.data)
        .zip(&zbar.0.data)
        .map(|((&x, &q), &z)| a * x + s * z + c * q)
        .collect();
    Ok(GeometryFrame { data })
}

/// Reverse-process drift at step `k`: `q'_k = sqrt(1 - abar_k) / sqrt(1 - a_k) q`.
pub fn reverse_drift<S: Real>(schedule: &DiffusionSchedule<S>, k: usize, q: &DriftField<S>) -> Result<DriftField<S>> {
    schedule.check_step(k)?;
    let f = ((S::one() - schedule.alpha_bar(k)) / (S::one() - schedule.alpha(k))).sqrt();
    Ok(DriftField(q.0.scaled(f)))
}

/// One reverse step `x_t -> x_{t-1}`. `z_new` is ignored at `t = 1`.
pub fn reverse_step<S: Real>(
    schedule: &DiffusionSchedule<S>,
    x_t: &GeometryFrame<S>,
    t: usize,
    z_hat: &GeometryFrame<S>,
    q: &DriftField<S>,
    z_new: &NoiseDraw<S>,
) -> Result<GeometryFrame<S>> {
    schedule.check_step(t)?;
    let qp = reverse_drift(schedule, t, q)?;
    let inv_sqrt_alpha = S::one() / schedule.alpha(t).sqrt();
    let k = schedule.beta(t) / (S::one() - schedule.alpha_bar(t)).sqrt();
    let sigma = if t > 1 { schedule.sigma(t) } else { S::zero() };
    let data = x_t
        .data
        .iter()
        .zip(&z_hat.data)
        .zip(&qp.0.data)
        .zip(&z_new.0.data)
        .map(|(((&x, &zh), &qp), &zn)| inv_sqrt_alpha * (x - k * (zh + qp)) + sigma * zn)
        .collect();
    Ok(GeometryFrame { data })
}

/// Noise predictor queried by the reverse chain.
pub trait Denoiser<S> {
    /// Predicts the standard-normal component of `x_t` at step `t` (of `T`).
    fn predict(&mut self, x_t: &GeometryFrame<S>, t: usize, steps: usize, context: &ContextVector) -> Result<GeometryFrame<S>>;
}

impl<S, F> Denoiser<S> for F
where
    F: FnMut(&GeometryFrame<S>, usize, usize, &ContextVector) -> Result<GeometryFrame<S>>,
{
    fn predict(&mut self, x_t: &GeometryFrame<S>, t: usize, steps: usize, context: &ContextVector) -> Result<GeometryFrame<S>> {
        self(x_t, t, steps, context)
    }
}

/// Supplies fresh reverse-step noise; lets tests force the zero-noise chain.
pub trait NoiseSource<S> {
    fn next(&mut self, t: usize, live: usize) -> NoiseDraw<S>;
}

/// Seeded Gaussian noise restricted to the live slots.
pub struct SeededNoise(pub ChaCha8Rng);

impl SeededNoise {
    pub fn new(seed: u64) -> Self {
        SeededNoise(ChaCha8Rng::seed_from_u64(seed))
    }
}

impl<S: Real> NoiseSource<S> for SeededNoise {
    fn next(&mut self, _t: usize, live: usize) -> NoiseDraw<S> {
        NoiseDraw::sample_live(&mut self.0, live)
    }
}

pub struct ZeroNoise;

impl<S: Real> NoiseSource<S> for ZeroNoise {
    fn next(&mut self, _t: usize, _live: usize) -> NoiseDraw<S> {
        NoiseDraw::zeros()
    }
}

/// Runs the reverse chain from `x_T` down to `x_0` with an explicit drift.
/// Slots at or beyond `live` are held at zero.
#[allow(clippy::too_many_arguments)]
pub fn reverse_chain<S: Real>(
    denoiser: &mut dyn Denoiser<S>,
    x_t: &GeometryFrame<S>,
    q: &DriftField<S>,
    context: &ContextVector,
    schedule: &DiffusionSchedule<S>,
    noise: &mut dyn NoiseSource<S>,
    live: usize,
    mut observe: Option<&mut dyn FnMut(usize, &GeometryFrame<S>)>,
) -> Result<GeometryFrame<S>> {
    let steps = schedule.steps();
    let mut x = x_t.clone();
    x.mask_to(live);
    for t in (1..=steps).rev() {
        let mut z_hat = denoiser.predict(&x, t, steps, context)?;
        if z_hat.data.len() != FRAME_LEN {
            return Err(Error::Shape(format!("denoiser returned {} values", z_hat.data.len())));
        }
        z_hat.mask_to(live);
        let z_new = if t > 1 { noise.next(t, live) } else { NoiseDraw::zeros() };
        x = reverse_step(schedule, &x, t, &z_hat, q, &z_new)?;
        x.mask_to(live);
        if let Some(f) = observe.as_mut() {
            f(t - 1, &x);
        }
    }
    Ok(x)
}

/// Deforms an encoded input geometry `x'_T` toward its polycube `x'_0`.
pub fn sample_polycube<S: Real>(
    denoiser: &mut dyn Denoiser<S>,
    x_t: &GeometryFrame<S>,
    context: &ContextVector,
    schedule: &DiffusionSchedule<S>,
    seed: u64,
    live: usize,
) -> Result<GeometryFrame<S>> {
    let mut masked = x_t.clone();
    masked.mask_to(live);
    let q = drift_from_target(&masked, schedule, None);
    let mut noise = SeededNoise::new(seed);
    reverse_chain(denoiser, &masked, &q, context, schedule, &mut noise, live, None)
}

/// One clean training example.
#[derive(Clone, Debug)]
pub struct TrainItem<S> {
    pub x0: GeometryFrame<S>,
    pub q: DriftField<S>,
    pub context: ContextVector,
    pub live: usize,
}

/// A network that can take one optimization step on a noised batch.
pub trait TrainableDenoiser<S> {
    /// Forward, masked loss, backward and parameter update on one batch.
    /// Returns the loss before the update.
    fn fit_batch(&mut self, batch: &NoisedBatch<S>) -> Result<S>;
}

/// Inputs and regression targets for one optimization step.
#[derive(Clone, Debug)]
pub struct NoisedBatch<S> {
    pub inputs: Vec<GeometryFrame<S>>,
    pub steps: Vec<usize>,
    pub total_steps: usize,
    pub contexts: Vec<ContextVector>,
    pub targets: Vec<GeometryFrame<S>>,
    pub live: Vec<usize>,
}

/// Draws `t ~ U{1..T}` and `z ~ N(0, I)` (live slots only) per item and
/// builds `x_t = sqrt(abar_t) x0 + sqrt(1 - abar_t) z + c_t q`.
pub fn noise_batch<S: Real, R: Rng + ?Sized>(
    batch: &[TrainItem<S>],
    schedule: &DiffusionSchedule<S>,
    rng: &mut R,
) -> Result<NoisedBatch<S>> {
    let mut out = NoisedBatch {
        inputs: Vec::with_capacity(batch.len()),
        steps: Vec::with_capacity(batch.len()),
        total_steps: schedule.steps(),
        contexts: Vec::with_capacity(batch.len()),
        targets: Vec::with_capacity(batch.len()),
        live: Vec::with_capacity(batch.len()),
    };
    for item in batch {
        let t = rng.random_range(1..=schedule.steps());
        let z = NoiseDraw::sample_live(rng, item.live);
        let mut x_t = forward_closed(schedule, &item.x0, t, &item.q, &z)?;
        x_t.mask_to(item.live);
        out.inputs.push(x_t);
        out.steps.push(t);
        out.contexts.push(item.context);
        out.targets.push(z.0);
        out.live.push(item.live);
    }
    Ok(out)
}

/// One training iteration: noise the batch and let the denoiser fit it.
pub fn training_step<S: Real>(
    denoiser: &mut dyn TrainableDenoiser<S>,
    batch: &[TrainItem<S>],
    schedule: &DiffusionSchedule<S>,
    seed: u64,
) -> Result<S> {
    if batch.is_empty() {
        return Err(Error::Shape("empty training batch".into()));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let noised = noise_batch(batch, schedule, &mut rng)?;
    denoiser.fit_batch(&noised)
}

/// Masked loss used by training: per-slot squared error summed over
/// channels, averaged over live slots of the whole batch.
pub fn masked_mse<S: Real>(pred: &[GeometryFrame<S>], target: &[GeometryFrame<S>], live: &[usize]) -> S {
    let mut total = S::zero();
    let mut count = 0usize;
    for ((p, t), &n) in pred.iter().zip(target).zip(live) {
        for c in 0..3 {
            for s in 0..n {
                let d = p.get(c, s) - t.get(c, s);
                total += d * d;
            }
        }
        count += n;
    }
    if count == 0 {
        S::zero()
    } else {
        total / S::of(count as f64)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dataset::ContextVector;

    fn sched() -> DiffusionSchedule<f64> {
        linear_schedule(500, 1e-4, 0.02).unwrap()
    }

    fn random_frame(rng: &mut ChaCha8Rng) -> GeometryFrame<f64> {
        GeometryFrame {
            data: (0..FRAME_LEN).map(|_| rng.random_range(-1.0..1.0)).collect(),
        }
    }

    #[test]
    fn schedule_endpoints() {
        let s = sched();
        assert_eq!(s.beta(1), 1e-4);
        assert!((s.beta(500) - 0.02).abs() < 1e-17);
        assert!((s.alpha_bar(1) - 0.9999).abs() < 1e-16);
        assert!((s.drift_coeff(1) - 0.01).abs() < 1e-16);
        for t in 2..=500 {
            assert!(s.beta(t) >= s.beta(t - 1));
            assert!(s.alpha_bar(t) < s.alpha_bar(t - 1));
        }
    }

    #[test]
    fn invalid_bounds_rejected() {
        assert!(linear_schedule::<f64>(0, 1e-4, 0.02).is_err());
        assert!(linear_schedule::<f64>(10, 0.0, 0.02).is_err());
        assert!(linear_schedule::<f64>(10, 0.03, 0.02).is_err());
        assert!(linear_schedule::<f64>(10, 1e-4, 1.0).is_err());
        assert!(linear_schedule::<f64>(1, 0.01, 0.01).is_ok());
    }

    #[test]
    fn drift_coeff_matches_unrolled_sum() {
        let s = sched();
        for t in 1..=500 {
            // sum_k sqrt(1 - a_k) prod_{i=k+1}^t sqrt(a_i)
            let mut total = 0.0;
            for k in 1..=t {
                let mut prod = 1.0f64;
                for i in k + 1..=t {
                    prod *= s.alpha(i).sqrt();
                }
                total += (1.0 - s.alpha(k)).sqrt() * prod;
            }
            assert!((total - s.drift_coeff(t)).abs() < 1e-12, "t={t}");
        }
    }

    #[test]
    fn drift_from_target_modes() {
        let s = sched();
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let v = random_frame(&mut rng);
        let c = s.drift_coeff(500);
        let q = drift_from_target(&v.scaled(c), &s, None);
        assert!(q.0.max_abs_diff(&v) < 1e-14);
        let x0 = random_frame(&mut rng);
        let target = x0.scaled(s.alpha_bar(500).sqrt());
        let q = drift_from_target(&target, &s, Some(&x0));
        assert!(q.0.data.iter().all(|v| v.abs() < 1e-15));
    }

    #[test]
    fn forward_step_special_cases() {
        let s = sched();
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let x = random_frame(&mut rng);
        let q = DriftField(random_frame(&mut rng));
        let zero_q = DriftField(GeometryFrame::zeros());
        let z0 = NoiseDraw::zeros();
        let y = forward_step(&s, &x, 7, &zero_q, &z0).unwrap();
        assert!(y.max_abs_diff(&x.scaled(s.alpha(7).sqrt())) < 1e-15);
        let y = forward_step(&s, &GeometryFrame::zeros(), 7, &q, &z0).unwrap();
        assert!(y.max_abs_diff(&q.0.scaled((1.0 - s.alpha(7)).sqrt())) < 1e-15);
        assert!(forward_step(&s, &x, 0, &q, &z0).is_err());
        assert!(forward_step(&s, &x, 501, &q, &z0).is_err());
    }

    #[test]
    fn closed_form_first_step_and_linearity() {
        let s = sched();
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let x0 = random_frame(&mut rng);
        let q = DriftField(random_frame(&mut rng));
        let z = NoiseDraw::sample(&mut rng);
        let a = forward_closed(&s, &x0, 1, &q, &z).unwrap();
        let b = forward_step(&s, &x0, 1, &q, &z).unwrap();
        assert!(a.max_abs_diff(&b) < 1e-15);
        let q2 = DriftField(q.0.scaled(2.0));
        let r1 = forward_closed(&s, &x0, 250, &q, &z).unwrap();
        let r2 = forward_closed(&s, &x0, 250, &q2, &z).unwrap();
        let diff = r2.add_scaled(-1.0, &r1);
        assert!(diff.max_abs_diff(&q.0.scaled(s.drift_coeff(250))) < 1e-14);
    }

    #[test]
    fn reverse_drift_first_step_and_homogeneity() {
        let s = sched();
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let q = DriftField(random_frame(&mut rng));
        assert!(reverse_drift(&s, 1, &q).unwrap().0.max_abs_diff(&q.0) < 1e-15);
        let z = DriftField(GeometryFrame::zeros());
        assert!(reverse_drift(&s, 300, &z).unwrap().0.data.iter().all(|&v| v == 0.0));
    }

    #[test]
    fn reverse_step_inverts_zero_noise_forward_step() {
        let s = sched();
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let x = random_frame(&mut rng);
        let q = DriftField(random_frame(&mut rng));
        let zero = GeometryFrame::zeros();
        for t in [1, 2, 100, 499, 500] {
            let fwd = forward_step(&s, &x, t, &q, &NoiseDraw::zeros()).unwrap();
            let back = reverse_step(&s, &fwd, t, &zero, &q, &NoiseDraw::zeros()).unwrap();
            assert!(back.max_abs_diff(&x) < 1e-12, "t={t}");
        }
    }

    #[test]
    fn reverse_step_reduces_to_classical_update() {
        let s = sched();
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let x = random_frame(&mut rng);
        let z = random_frame(&mut rng);
        let zn = NoiseDraw::sample(&mut rng);
        let q0 = DriftField(GeometryFrame::zeros());
        let t = 40;
        let got = reverse_step(&s, &x, t, &z, &q0, &zn).unwrap();
        let k = s.beta(t) / (1.0 - s.alpha_bar(t)).sqrt();
        let want: Vec<f64> = (0..FRAME_LEN)
            .map(|i| (x.data[i] - k * z.data[i]) / s.alpha(t).sqrt() + s.beta(t).sqrt() * zn.0.data[i])
            .collect();
        assert!(got.max_abs_diff(&GeometryFrame { data: want }) < 1e-14);
    }

    #[test]
    fn first_reverse_step_is_deterministic() {
        let s = sched();
        let mut rng = ChaCha8Rng::seed_from_u64(6);
        let x = random_frame(&mut rng);
        let q = DriftField(random_frame(&mut rng));
        let zh = random_frame(&mut rng);
        let a = reverse_step(&s, &x, 1, &zh, &q, &NoiseDraw::sample(&mut rng)).unwrap();
        let b = reverse_step(&s, &x, 1, &zh, &q, &NoiseDraw::zeros()).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn posterior_variance_variant() {
        let mut s = sched();
        s.variant = SigmaVariant::PosteriorEq3;
        let t = 10;
        let want = ((1.0 - s.alpha_bar(t - 1)) / (1.0 - s.alpha_bar(t)) * s.beta(t)).sqrt();
        assert_eq!(s.sigma(t), want);
        assert!(s.sigma(t) < s.beta(t).sqrt());
    }

    #[test]
    fn sample_output_shape_and_determinism() {
        let s: DiffusionSchedule<f64> = linear_schedule(20, 1e-4, 0.02).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        let x = random_frame(&mut rng);
        let ctx = ContextVector::for_type(0).unwrap();
        let mut den = |x: &GeometryFrame<f64>, _t: usize, _n: usize, _c: &ContextVector| Ok(x.scaled(0.1));
        let a = sample_polycube(&mut den, &x, &ctx, &s, 9, 1024).unwrap();
        let b = sample_polycube(&mut den, &x, &ctx, &s, 9, 1024).unwrap();
        assert_eq!(a.data.len(), FRAME_LEN);
        assert_eq!(a, b);
        let mut bad = |_: &GeometryFrame<f64>, _: usize, _: usize, _: &ContextVector| Ok(GeometryFrame { data: vec![0.0; 5] });
        assert!(sample_polycube(&mut bad, &x, &ctx, &s, 9, 1024).is_err());
    }

    #[test]
    fn masked_mse_ignores_padding() {
        let mut rng = ChaCha8Rng::seed_from_u64(8);
        let p = random_frame(&mut rng);
        let mut t = p.clone();
        for s in 10..FRAME_LEN / 3 {
            t.set(1, s, 99.0);
        }
        assert_eq!(masked_mse(std::slice::from_ref(&p), &[t.clone()], &[10]), 0.0);
        assert!(masked_mse(&[p], &[t], &[11]) > 0.0);
    }
}
