//! Two-phase toy-scale training: L2 loss, Adam, linear warmup + linear
//! decay, random aligned patch pairs. Deterministic for a given seed.

use rand::Rng;
use rand_chacha::ChaCha8Rng;
use rand::SeedableRng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::metrics;
use crate::network::{self, NetParams, Pass};
use crate::tensor::{self, GradTape, Scalar, Tensor4};

/// Training hyperparameters. Defaults are the full-scale values; desk runs
/// scale the schedule and patch sizes down through the same fields.
#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
#[serde(default)]
pub struct TrainConfig {
    pub lr_peak: f64,
    pub warmup_epochs: usize,
    pub total_epochs: usize,
    pub lr_floor: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub adam_eps: f64,
    pub hr_patch: usize,
    pub lr_patch: usize,
    pub batch_size: usize,
    pub batches_per_epoch: usize,
    pub seed: u64,
    /// FLOPs regularization weight (phase-1 objective).
    pub lambda: f64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            lr_peak: 5e-4,
            warmup_epochs: 500,
            total_epochs: 2500,
            lr_floor: 1e-8,
            beta1: 0.9,
            beta2: 0.999,
            adam_eps: 1e-8,
            hr_patch: 384,
            lr_patch: 96,
            batch_size: 16,
            batches_per_epoch: 32,
            seed: 0,
            lambda: 0.0,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if self.lr_patch * 4 != self.hr_patch {
            return Err(Error::Config(format!(
                "hr_patch must be 4 * lr_patch ({} vs {})",
                self.hr_patch, self.lr_patch
            )));
        }
        if self.lr_floor >= self.lr_peak {
            return Err(Error::Config("lr_floor must be below lr_peak".into()));
        }
        if !(0.0..1.0).contains(&self.beta1) || !(0.0..1.0).contains(&self.beta2) {
            return Err(Error::Config("betas must lie in (0, 1)".into()));
        }
        if self.beta1 <= 0.0 || self.beta2 <= 0.0 {
            return Err(Error::Config("betas must lie in (0, 1)".into()));
        }
        if self.total_epochs <= self.warmup_epochs {
            return Err(Error::Config(
                "total_epochs must exceed warmup_epochs".into(),
            ));
        }
        if self.batch_size == 0 || self.batches_per_epoch == 0 {
            return Err(Error::Config("batch sizes must be >= 1".into()));
        }
        if self.lambda < 0.0 {
            return Err(Error::Config("lambda must be >= 0".into()));
        }
        Ok(())
    }
}

/// Mean squared error over all elements, with its gradient
/// `2 * (pred - target) / N`.
pub fn l2_loss<T: Scalar>(pred: &Tensor4<T>, target: &Tensor4<T>) -> Result<(T, Tensor4<T>)> {
    if pred.dims() != target.dims() {
        return Err(Error::Shape(format!(
            "l2_loss dims {:?} vs {:?}",
            pred.dims(),
            target.dims()
        )));
    }
    let n = T::from_usize(pred.len().max(1)).unwrap();
    let mut loss = T::zero();
    let mut grad = Tensor4::zeros(pred.dims());
    let two = T::from_f64_lossy(2.0);
    for (i, (&p, &t)) in pred.data().iter().zip(target.data()).enumerate() {
        let d = p - t;
        loss = loss + d * d;
        grad.data_mut()[i] = two * d / n;
    }
    Ok((loss / n, grad))
}

/// Search objective: task loss plus `lambda` times the FLOPs regularizer.
/// FLOPs enter in GFLOPs so useful lambdas sit near 1e-3..1e-1.
pub fn objective(loss: f64, flops: u64, lambda: f64) -> f64 {
    loss + lambda * (flops as f64 / 1e9)
}

/// Learning rate at `epoch`: linear ramp 0 -> lr_peak over the warmup,
/// then linear decay lr_peak -> lr_floor until the last epoch.
pub fn lr_at(epoch: usize, cfg: &TrainConfig) -> Result<f64> {
    if epoch > cfg.total_epochs {
        return Err(Error::InvalidArg(format!(
            "epoch {} out of range 0..={}",
            epoch, cfg.total_epochs
        )));
    }
    if epoch <= cfg.warmup_epochs {
        if cfg.warmup_epochs == 0 {
            return Ok(cfg.lr_peak);
        }
        return Ok(cfg.lr_peak * epoch as f64 / cfg.warmup_epochs as f64);
    }
    let span = (cfg.total_epochs - cfg.warmup_epochs) as f64;
    let t = (epoch - cfg.warmup_epochs) as f64 / span;
    // lerp form keeps both endpoints exact
    Ok(cfg.lr_peak * (1.0 - t) + cfg.lr_floor * t)
}

/// First/second moment estimates for every parameter tensor.
#[derive(Debug, Clone)]
pub struct AdamState<T> {
    m: Vec<Vec<T>>,
    v: Vec<Vec<T>>,
    t: u64,
}

impl<T: Scalar> AdamState<T> {
    pub fn new(sizes: &[usize]) -> Self {
        Self {
            m: sizes.iter().map(|&s| vec![T::zero(); s]).collect(),
            v: sizes.iter().map(|&s| vec![T::zero(); s]).collect(),
            t: 0,
        }
    }

    pub fn step_count(&self) -> u64 {
        self.t
    }
}

/// One bias-corrected Adam update:
/// `p -= lr * m_hat / (sqrt(v_hat) + eps)`.
pub fn adam_step<T: Scalar>(
    params: &mut [&mut [T]],
    grads: &[&[T]],
    state: &mut AdamState<T>,
    lr: f64,
    cfg: &TrainConfig,
) -> Result<()> {
    if params.len() != grads.len() || params.len() != state.m.len() {
        return Err(Error::Shape(format!(
            "adam_step arity mismatch: {} params, {} grads, {} state slots",
            params.len(),
            grads.len(),
            state.m.len()
        )));
    }
    for ((p, g), i) in params.iter().zip(grads).zip(0..) {
        if p.len() != g.len() || p.len() != state.m[i].len() {
            return Err(Error::Shape(format!(
                "adam_step slot {} size mismatch: param {}, grad {}, state {}",
                i,
                p.len(),
                g.len(),
                state.m[i].len()
            )));
        }
    }
    state.t += 1;
    let b1 = T::from_f64_lossy(cfg.beta1);
    let b2 = T::from_f64_lossy(cfg.beta2);
    let one = T::one();
    let corr1 = T::from_f64_lossy(1.0 - cfg.beta1.powi(state.t as i32));
    let corr2 = T::from_f64_lossy(1.0 - cfg.beta2.powi(state.t as i32));
    let lr_t = T::from_f64_lossy(lr);
    let eps = T::from_f64_lossy(cfg.adam_eps);
    for (slot, (p, g)) in params.iter_mut().zip(grads).enumerate() {
        let (m, v) = (&mut state.m[slot], &mut state.v[slot]);
        for j in 0..p.len() {
            let gj = g[j];
            m[j] = b1 * m[j] + (one - b1) * gj;
            v[j] = b2 * v[j] + (one - b2) * gj * gj;
            let m_hat = m[j] / corr1;
            let v_hat = v[j] / corr2;
            p[j] = p[j] - lr_t * m_hat / (v_hat.sqrt() + eps);
        }
    }
    Ok(())
}

/// Crop an aligned patch pair: an `lr_patch`^2 window of the LR clip at a
/// uniform random offset and the 4x window of the HR clip at 4x that
/// offset.
pub fn sample_patch_pair<T: Scalar, R: Rng>(
    lr_clip: &Tensor4<T>,
    hr_clip: &Tensor4<T>,
    lr_patch: usize,
    rng: &mut R,
) -> Result<(Tensor4<T>, Tensor4<T>)> {
    let [ln, lc, lh, lw] = lr_clip.dims();
    if hr_clip.dims() != [ln, lc, 4 * lh, 4 * lw] {
        return Err(Error::Shape(format!(
            "hr clip {:?} is not 4x the lr clip {:?}",
            hr_clip.dims(),
            lr_clip.dims()
        )));
    }
    if lr_patch > lh || lr_patch > lw {
        return Err(Error::InvalidArg(format!(
            "clip {}x{} smaller than patch {}",
            lh, lw, lr_patch
        )));
    }
    let y = rng.random_range(0..=lh - lr_patch);
    let x = rng.random_range(0..=lw - lr_patch);
    let lr = lr_clip.crop_spatial(y, x, lr_patch, lr_patch)?;
    let hr = hr_clip.crop_spatial(4 * y, 4 * x, 4 * lr_patch, 4 * lr_patch)?;
    Ok((lr, hr))
}

#[derive(Debug, Clone, Serialize)]
pub struct EpochStats {
    pub epoch: usize,
    pub lr: f64,
    pub train_loss: f64,
    pub val_psnr: Option<f64>,
}

#[derive(Debug, Clone, Serialize)]
pub struct TrainReport {
    pub curve: Vec<EpochStats>,
    pub steps: u64,
    pub final_val_psnr: Option<f64>,
}

/// Stack per-sample clips `(1, C, h, w)` into one batch `(B, C, h, w)`.
fn stack_batch<T: Scalar>(samples: &[Tensor4<T>]) -> Result<Tensor4<T>> {
    let [_, c, h, w] = samples[0].dims();
    let mut data = Vec::with_capacity(samples.len() * c * h * w);
    for s in samples {
        if s.dims() != [1, c, h, w] {
            return Err(Error::Shape("ragged batch".into()));
        }
        data.extend_from_slice(s.data());
    }
    Tensor4::new([samples.len(), c, h, w], data)
}

/// Minibatch Adam on L2 loss over sampled patch pairs.
///
/// `dataset` and `val` hold (lr_clip, hr_clip) pairs. Training mutates
/// `params` in place and returns the per-epoch curve. Aborts with
/// [`Error::Numeric`] if the loss stops being finite.
pub fn train<T: Scalar>(
    params: &mut NetParams<T>,
    dataset: &[(Tensor4<T>, Tensor4<T>)],
    val: &[(Tensor4<T>, Tensor4<T>)],
    cfg: &TrainConfig,
) -> Result<TrainReport> {
    cfg.validate()?;
    if dataset.is_empty() {
        return Err(Error::InvalidArg("dataset is empty".into()));
    }
    let sizes: Vec<usize> = params.param_slices_mut().iter().map(|s| s.len()).collect();
    let mut state = AdamState::<T>::new(&sizes);
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut curve = Vec::with_capacity(cfg.total_epochs);

    for epoch in 0..cfg.total_epochs {
        let lr = lr_at(epoch, cfg)?;
        let mut epoch_loss = 0.0f64;
        for batch in 0..cfg.batches_per_epoch {
            let mut lr_samples = Vec::with_capacity(cfg.batch_size);
            let mut hr_samples = Vec::with_capacity(cfg.batch_size);
            for _ in 0..cfg.batch_size {
                let idx = rng.random_range(0..dataset.len());
                let (lp, hp) =
                    sample_patch_pair(&dataset[idx].0, &dataset[idx].1, cfg.lr_patch, &mut rng)?;
                lr_samples.push(lp);
                hr_samples.push(hp);
            }
            let lr_batch = stack_batch(&lr_samples)?;
            let hr_batch = stack_batch(&hr_samples)?;

            let mut tape = GradTape::new();
            let x = tape.leaf(lr_batch);
            let vars = network::register_params(&mut tape, params)?;
            let out = network::forward_clip_traced(&mut tape, x, &vars, &params.config)?;
            let (loss, loss_grad) = l2_loss(tape.value(out), &hr_batch)?;
            let loss_f64 = loss.to_f64().unwrap();
            if !loss_f64.is_finite() {
                return Err(Error::Numeric(format!(
                    "loss diverged at epoch {epoch} batch {batch}: {loss_f64}"
                )));
            }
            epoch_loss += loss_f64;

            let mut grads = tape.backward(out, loss_grad)?;
            let ordered = vars.ordered();
            let grad_tensors: Vec<Tensor4<T>> = ordered
                .iter()
                .map(|&id| grads.take(id).expect("parameter missing from backward"))
                .collect();
            let grad_slices: Vec<&[T]> = grad_tensors.iter().map(|t| t.data()).collect();
            let mut param_slices = params.param_slices_mut();
            adam_step(&mut param_slices, &grad_slices, &mut state, lr, cfg)?;
        }
        epoch_loss /= cfg.batches_per_epoch as f64;

        let val_psnr = if val.is_empty() {
            None
        } else {
            Some(validation_psnr(params, val)?)
        };
        curve.push(EpochStats {
            epoch,
            lr,
            train_loss: epoch_loss,
            val_psnr,
        });
    }

    Ok(TrainReport {
        steps: state.step_count(),
        final_val_psnr: curve.last().and_then(|s| s.val_psnr),
        curve,
    })
}

/// Mean PSNR of deploy-mode forward over the validation pairs.
pub fn validation_psnr<T: Scalar>(
    params: &NetParams<T>,
    val: &[(Tensor4<T>, Tensor4<T>)],
) -> Result<f64> {
    let mut sum = 0.0;
    for (lr_clip, hr_clip) in val {
        let pred = network::forward_clip(lr_clip, params, Pass::Deploy)?;
        sum += metrics::psnr(&pred, hr_clip)?;
    }
    Ok(sum / val.len() as f64)
}

/// Loss-curve CSV: `epoch, lr, train_loss, val_psnr`.
pub fn write_curve_csv(path: &std::path::Path, curve: &[EpochStats]) -> Result<()> {
    use std::io::Write;
    let mut f = std::io::BufWriter::new(std::fs::File::create(path)?);
    writeln!(f, "epoch,lr,train_loss,val_psnr")?;
    for s in curve {
        match s.val_psnr {
            Some(p) => writeln!(f, "{},{},{},{}", s.epoch, s.lr, s.train_loss, p)?,
            None => writeln!(f, "{},{},{},", s.epoch, s.lr, s.train_loss)?,
        }
    }
    Ok(())
}

/// L2 loss gradcheck (driver from the tensor module).
pub fn check_l2_loss(seed: u64, tolerance: f64) -> tensor::GradCheckReport {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let pred = Tensor4::<f64>::random_uniform(&mut rng, [1, 3, 4, 4], 0.0, 1.0);
    let target = Tensor4::<f64>::random_uniform(&mut rng, [1, 3, 4, 4], 0.0, 1.0);
    tensor::check(
        "l2_loss",
        &[("pred".into(), pred)],
        |vals| {
            let (loss, _) = l2_loss(&vals[0], &target).unwrap();
            Tensor4::new([1, 1, 1, 1], vec![loss]).unwrap()
        },
        |vals, g| {
            let (_, grad) = l2_loss(&vals[0], &target).unwrap();
            vec![grad.map(|v| v * g.data()[0])]
        },
        tolerance,
        seed ^ 0x5eed,
        None,
    )
}

/// End-to-end gradcheck of a tiny network: d(loss)/d(every parameter) and
/// d(loss)/d(input) against central differences.
pub fn check_network(seed: u64, tolerance: f64) -> tensor::GradCheckReport {
    use crate::network::{expected_tensor_layout, params_from_flat, Mode, NetConfig};

    let mut cfg = NetConfig::new(2, 1).unwrap();
    cfg.frames = 1;
    let proto = NetParams::<f64>::init(cfg, seed).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0xA11CE);
    let x = Tensor4::<f64>::random_uniform(&mut rng, [1, 3, 4, 4], 0.0, 1.0);
    let target = Tensor4::<f64>::random_uniform(&mut rng, [1, 3, 16, 16], 0.0, 1.0);

    let mut inputs = vec![("input".to_string(), x)];
    let layout = expected_tensor_layout(&cfg, Mode::Branched);
    for ((name, dims), (_, _, data)) in layout.iter().zip(proto.tensor_views()) {
        let t = if dims.len() == 4 {
            Tensor4::new([dims[0], dims[1], dims[2], dims[3]], data.to_vec()).unwrap()
        } else {
            Tensor4::new([dims[0], 1, 1, 1], data.to_vec()).unwrap()
        };
        inputs.push((name.clone(), t));
    }

    let rebuild = move |vals: &[Tensor4<f64>]| -> NetParams<f64> {
        let flats = vals[1..].iter().map(|t| t.data().to_vec()).collect();
        params_from_flat(cfg, Mode::Branched, flats).unwrap()
    };

    tensor::check(
        "network_e2e",
        &inputs,
        {
            let target = target.clone();
            move |vals| {
                let params = rebuild(vals);
                let pred = network::forward_clip(&vals[0], &params, Pass::Train).unwrap();
                let (loss, _) = l2_loss(&pred, &target).unwrap();
                Tensor4::new([1, 1, 1, 1], vec![loss]).unwrap()
            }
        },
        move |vals, g| {
            let flats = vals[1..].iter().map(|t| t.data().to_vec()).collect();
            let params = params_from_flat(cfg, Mode::Branched, flats).unwrap();
            let mut tape = GradTape::new();
            let x = tape.leaf(vals[0].clone());
            let vars = network::register_params(&mut tape, &params).unwrap();
            let out = network::forward_clip_traced(&mut tape, x, &vars, &cfg).unwrap();
            let (_, loss_grad) = l2_loss(tape.value(out), &target).unwrap();
            let seeded = loss_grad.map(|v| v * g.data()[0]);
            let mut grads = tape.backward(out, seeded).unwrap();
            let mut result = vec![grads.take(x).unwrap()];
            for id in vars.ordered() {
                result.push(grads.take(id).unwrap());
            }
            result
        },
        tolerance,
        seed ^ 0x5eed,
        None,
    )
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::network::NetConfig;

    fn desk_cfg() -> TrainConfig {
        TrainConfig {
            lr_peak: 1e-3,
            warmup_epochs: 2,
            total_epochs: 10,
            lr_floor: 1e-8,
            hr_patch: 16,
            lr_patch: 4,
            batch_size: 2,
            batches_per_epoch: 2,
            seed: 7,
            ..TrainConfig::default()
        }
    }

    fn toy_pair(seed: u64, frames: usize, lh: usize, lw: usize) -> (Tensor4<f32>, Tensor4<f32>) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let hr = Tensor4::random_uniform(&mut rng, [1, 3 * frames, 4 * lh, 4 * lw], 0.0, 1.0);
        let lr = Tensor4::random_uniform(&mut rng, [1, 3 * frames, lh, lw], 0.0, 1.0);
        (lr, hr)
    }

    #[test]
    fn l2_loss_cases() {
        let a = Tensor4::<f64>::filled([1, 2, 3, 3], 0.4);
        let (loss, grad) = l2_loss(&a, &a).unwrap();
        assert_eq!(loss, 0.0);
        assert!(grad.data().iter().all(|&v| v == 0.0));

        let b = a.map(|v| v + 0.1);
        let (loss, _) = l2_loss(&b, &a).unwrap();
        assert!((loss - 0.01).abs() < 1e-12);

        let c = Tensor4::<f64>::zeros([1, 2, 3, 4]);
        assert!(l2_loss(&a, &c).is_err());
    }

    #[test]
    fn l2_loss_gradcheck() {
        let report = check_l2_loss(3, 1e-6);
        assert!(report.passed(), "{:?}", report);
    }

    #[test]
    fn objective_cases() {
        assert_eq!(objective(0.5, 2_000_000_000, 0.0), 0.5);
        assert_eq!(objective(0.0, 2_000_000_000, 1.0), 2.0);
        // strictly increasing in flops for lambda > 0
        assert!(objective(0.3, 3_000_000_000, 0.01) > objective(0.3, 2_000_000_000, 0.01));
    }

    #[test]
    fn lr_schedule_endpoints_and_midpoints() {
        let cfg = TrainConfig {
            warmup_epochs: 500,
            total_epochs: 2500,
            ..TrainConfig::default()
        };
        assert_eq!(lr_at(0, &cfg).unwrap(), 0.0);
        assert_eq!(lr_at(500, &cfg).unwrap(), 5e-4);
        assert_eq!(lr_at(250, &cfg).unwrap(), 2.5e-4);
        assert_eq!(lr_at(2500, &cfg).unwrap(), 1e-8);
        assert!(lr_at(2501, &cfg).is_err());
        // peak is the max over the whole range
        let max = (0..=2500)
            .map(|e| lr_at(e, &cfg).unwrap())
            .fold(0.0, f64::max);
        assert_eq!(max, 5e-4);
    }

    #[test]
    fn lr_schedule_is_piecewise_linear_and_continuous() {
        let cfg = TrainConfig {
            warmup_epochs: 50,
            total_epochs: 200,
            ..TrainConfig::default()
        };
        for e in 1..200 {
            let (prev, cur, next) = (
                lr_at(e - 1, &cfg).unwrap(),
                lr_at(e, &cfg).unwrap(),
                lr_at(e + 1, &cfg).unwrap(),
            );
            // one-step jumps stay bounded by the larger segment slope
            let ramp = cfg.lr_peak / 50.0;
            let decay = (cfg.lr_peak - cfg.lr_floor) / 150.0;
            let bound = ramp.max(decay) * 1.0001;
            assert!((cur - prev).abs() <= bound);
            // second difference vanishes except at the knee
            if e != 50 {
                assert!((next - 2.0 * cur + prev).abs() < 1e-18);
            }
        }
    }

    #[test]
    fn adam_zero_grad_is_identity() {
        let mut p = vec![1.0f64, -2.0, 3.0];
        let g = vec![0.0f64; 3];
        let mut state = AdamState::new(&[3]);
        let cfg = TrainConfig::default();
        for _ in 0..5 {
            let mut slices = [p.as_mut_slice()];
            adam_step(&mut slices, &[g.as_slice()], &mut state, 1e-3, &cfg).unwrap();
        }
        assert_eq!(p, vec![1.0, -2.0, 3.0]);
        assert_eq!(state.step_count(), 5);
    }

    /// Hand-rolled scalar recurrence of the same update formula, tracked
    /// independently of the vectorized implementation.
    #[test]
    fn adam_matches_scalar_recurrence_oracle() {
        let cfg = TrainConfig::default();
        let lr = 1e-3;
        let gs = [0.4f64, -0.2, 0.05, 0.9, -1.3];
        let mut p = vec![0.7f64];
        let mut state = AdamState::new(&[1]);

        let (mut m, mut v, mut p_ref) = (0.0f64, 0.0f64, 0.7f64);
        for (t, &g) in gs.iter().enumerate() {
            let mut slices = [p.as_mut_slice()];
            adam_step(&mut slices, &[&[g][..]], &mut state, lr, &cfg).unwrap();

            m = cfg.beta1 * m + (1.0 - cfg.beta1) * g;
            v = cfg.beta2 * v + (1.0 - cfg.beta2) * g * g;
            let m_hat = m / (1.0 - cfg.beta1.powi(t as i32 + 1));
            let v_hat = v / (1.0 - cfg.beta2.powi(t as i32 + 1));
            p_ref -= lr * m_hat / (v_hat.sqrt() + cfg.adam_eps);
            assert!((p[0] - p_ref).abs() < 1e-15, "step {}", t);
        }
        // first-step magnitude is ~ lr * sign(g) for |g| >> eps
        let mut q = vec![0.0f64];
        let mut s2 = AdamState::new(&[1]);
        let mut slices = [q.as_mut_slice()];
        adam_step(&mut slices, &[&[0.4][..]], &mut s2, lr, &cfg).unwrap();
        assert!((q[0].abs() - lr).abs() / lr < 1e-6);
    }

    #[test]
    fn adam_trajectories_are_deterministic() {
        let cfg = TrainConfig::default();
        let run = || {
            let mut p = vec![0.3f32, -0.6];
            let mut state = AdamState::new(&[2]);
            for i in 0..20 {
                let g = [(i as f32 * 0.1).sin(), (i as f32 * 0.2).cos()];
                let mut slices = [p.as_mut_slice()];
                adam_step(&mut slices, &[&g[..]], &mut state, 1e-2, &cfg).unwrap();
            }
            p
        };
        assert_eq!(run(), run());
    }

    #[test]
    fn patch_pair_offsets_correspond() {
        let (lr, hr) = toy_pair(1, 2, 8, 8);
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        for _ in 0..10 {
            let (lp, hp) = sample_patch_pair(&lr, &hr, 3, &mut rng).unwrap();
            assert_eq!(lp.dims(), [1, 6, 3, 3]);
            assert_eq!(hp.dims(), [1, 6, 12, 12]);
        }
        // offset (0,0) maps to hr offset (0,0): force with patch == clip
        let (lp, hp) = sample_patch_pair(&lr, &hr, 8, &mut rng).unwrap();
        assert_eq!(lp, lr);
        assert_eq!(hp, hr);
        assert!(sample_patch_pair(&lr, &hr, 9, &mut rng).is_err());
    }

    #[test]
    fn patch_pair_mapping_is_pixel_exact() {
        // encode coordinates in the pixel values, then verify the 4x map
        let lh = 6;
        let hr = Tensor4::<f32>::from_fn([1, 3, 4 * lh, 4 * lh], |_, c, y, x| {
            (c * 1_000_000 + y * 1000 + x) as f32
        });
        let lr = Tensor4::<f32>::from_fn([1, 3, lh, lh], |_, c, y, x| {
            (c * 1_000_000 + y * 1000 + x) as f32
        });
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let (lp, hp) = sample_patch_pair(&lr, &hr, 2, &mut rng).unwrap();
        let l0 = lp.at(0, 0, 0, 0);
        let (ly, lx) = ((l0 as usize % 1_000_000) / 1000, l0 as usize % 1000);
        let h0 = hp.at(0, 0, 0, 0);
        let (hy, hx) = ((h0 as usize % 1_000_000) / 1000, h0 as usize % 1000);
        assert_eq!((hy, hx), (4 * ly, 4 * lx));
    }

    #[test]
    fn zero_lr_keeps_params_unchanged() {
        let mut cfg = desk_cfg();
        cfg.lr_peak = 1e-30; // effectively zero while satisfying floor < peak
        cfg.lr_floor = 1e-32;
        let net_cfg = NetConfig::new(2, 1).unwrap();
        let mut params = NetParams::<f32>::init(net_cfg, 5).unwrap();
        let before = params.clone();
        let data = vec![toy_pair(2, 1, 4, 4)];
        train(&mut params, &data, &[], &cfg).unwrap();
        let views_a = before.tensor_views();
        let views_b = params.tensor_views();
        for ((_, _, a), (_, _, b)) in views_a.iter().zip(&views_b) {
            for (x, y) in a.iter().zip(*b) {
                assert!((x - y).abs() < 1e-7);
            }
        }
    }

    #[test]
    fn training_is_deterministic() {
        let cfg = desk_cfg();
        let net_cfg = NetConfig::new(2, 1).unwrap();
        let data = vec![toy_pair(3, 1, 4, 4)];
        let run = || {
            let mut params = NetParams::<f32>::init(net_cfg, 5).unwrap();
            train(&mut params, &data, &[], &cfg).unwrap();
            params
        };
        assert_eq!(run(), run());
    }

    #[test]
    fn one_small_step_does_not_increase_batch_loss() {
        let net_cfg = NetConfig::new(2, 1).unwrap();
        let mut params = NetParams::<f32>::init(net_cfg, 8).unwrap();
        let (lr_clip, hr_clip) = toy_pair(9, 1, 4, 4);

        let loss_of = |p: &NetParams<f32>| {
            let pred = network::forward_clip(&lr_clip, p, Pass::Train).unwrap();
            l2_loss(&pred, &hr_clip).unwrap().0
        };
        let before = loss_of(&params);

        let mut tape = GradTape::new();
        let x = tape.leaf(lr_clip.clone());
        let vars = network::register_params(&mut tape, &params).unwrap();
        let out = network::forward_clip_traced(&mut tape, x, &vars, &params.config).unwrap();
        let (_, g) = l2_loss(tape.value(out), &hr_clip).unwrap();
        let mut grads = tape.backward(out, g).unwrap();
        let gt: Vec<Tensor4<f32>> = vars
            .ordered()
            .iter()
            .map(|&id| grads.take(id).unwrap())
            .collect();
        let gs: Vec<&[f32]> = gt.iter().map(|t| t.data()).collect();
        let sizes: Vec<usize> = gs.iter().map(|s| s.len()).collect();
        let mut state = AdamState::new(&sizes);
        let cfg = TrainConfig::default();
        let mut slices = params.param_slices_mut();
        adam_step(&mut slices, &gs, &mut state, 1e-6, &cfg).unwrap();

        assert!(loss_of(&params) <= before + 1e-9);
    }

    #[test]
    fn network_gradcheck_passes() {
        let report = check_network(12, 1e-4);
        assert!(report.passed(), "worst {}", report.worst());
    }

    #[test]
    fn config_round_trips_snake_case_json() {
        let cfg = TrainConfig::default();
        let json = serde_json::to_string(&cfg).unwrap();
        assert!(json.contains("\"lr_peak\""));
        assert!(json.contains("\"batches_per_epoch\""));
        let back: TrainConfig = serde_json::from_str(&json).unwrap();
        assert_eq!(back, cfg);
    }
}
