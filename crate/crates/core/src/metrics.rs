//! PSNR, the challenge score and a wall-clock inference benchmark.
//!
//! PSNR convention: float RGB in [0, 1], MAX = 1, per-frame PSNR (MSE over
//! the frame's 3 channels) then arithmetic mean over frames. No 8-bit
//! quantization, no Y-channel conversion. Capped at 100 dB so identical
//! inputs do not produce infinities.

use std::time::Instant;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::Serialize;

use crate::error::{Error, Result};
use crate::network::{self, NetParams, Pass, RGB_CHANNELS};
use crate::tensor::{Scalar, Tensor4};

pub const PSNR_CAP_DB: f64 = 100.0;

#[derive(Debug, Clone, Serialize)]
pub struct EvalReport {
    pub per_frame_psnr: Vec<f64>,
    pub mean_psnr: f64,
    pub frames: usize,
}

/// Per-frame PSNR of a prediction against ground truth. Inputs are clips
/// `(n, 3T, h, w)`; frames are enumerated batch-major.
pub fn psnr_clip<T: Scalar>(pred: &Tensor4<T>, gt: &Tensor4<T>) -> Result<EvalReport> {
    if pred.dims() != gt.dims() {
        return Err(Error::Shape(format!(
            "psnr dims {:?} vs {:?}",
            pred.dims(),
            gt.dims()
        )));
    }
    let [n, c, h, w] = pred.dims();
    if c % RGB_CHANNELS != 0 || n * c * h * w == 0 {
        return Err(Error::Shape(format!(
            "psnr expects non-empty clips with channels divisible by 3, got {:?}",
            pred.dims()
        )));
    }
    let frames_per_item = c / RGB_CHANNELS;
    let frame_len = RGB_CHANNELS * h * w;
    let mut per_frame = Vec::with_capacity(n * frames_per_item);
    for f in 0..n * frames_per_item {
        let base = f * frame_len;
        let mut se = 0.0f64;
        for i in 0..frame_len {
            let d = pred.data()[base + i].to_f64().unwrap() - gt.data()[base + i].to_f64().unwrap();
            se += d * d;
        }
        let mse = se / frame_len as f64;
        let db = if mse < 1e-10 {
            PSNR_CAP_DB
        } else {
            10.0 * (1.0 / mse).log10()
        };
        per_frame.push(db.min(PSNR_CAP_DB));
    }
    let mean = per_frame.iter().sum::<f64>() / per_frame.len() as f64;
    Ok(EvalReport {
        frames: per_frame.len(),
        mean_psnr: mean,
        per_frame_psnr: per_frame,
    })
}

/// Mean PSNR in dB (see [`psnr_clip`]).
pub fn psnr<T: Scalar>(pred: &Tensor4<T>, gt: &Tensor4<T>) -> Result<f64> {
    Ok(psnr_clip(pred, gt)?.mean_psnr)
}

/// Challenge score: `2^(2*(psnr - 27)) / runtime_ms`. Doubling the speed
/// and gaining 0.5 dB are worth the same factor of two.
pub fn score_formula(psnr_db: f64, runtime_ms: f64) -> Result<f64> {
    if runtime_ms <= 0.0 {
        return Err(Error::InvalidArg(format!(
            "runtime must be positive, got {runtime_ms}"
        )));
    }
    Ok((2.0f64).powf(2.0 * (psnr_db - 27.0)) / runtime_ms)
}

#[derive(Debug, Clone, Serialize)]
pub struct BenchResult {
    /// Median wall-clock milliseconds per clip forward.
    pub runtime_ms: f64,
    pub trials: usize,
    pub warmup_runs: usize,
    pub dims: [usize; 4],
}

/// Median wall-clock of deploy-mode clip forwards on a fixed seeded random
/// input. Timings vary run to run; the input never does.
pub fn bench_forward<T: Scalar>(
    params: &NetParams<T>,
    h: usize,
    w: usize,
    trials: usize,
    warmup: usize,
) -> Result<BenchResult> {
    if trials < 3 {
        return Err(Error::InvalidArg(format!(
            "bench needs at least 3 trials, got {trials}"
        )));
    }
    let dims = [1, RGB_CHANNELS * params.config.frames, h, w];
    let mut rng = ChaCha8Rng::seed_from_u64(0xBE7C);
    let clip = Tensor4::<T>::random_uniform(&mut rng, dims, 0.0, 1.0);
    for _ in 0..warmup {
        network::forward_clip(&clip, params, Pass::Deploy)?;
    }
    let mut times = Vec::with_capacity(trials);
    for _ in 0..trials {
        let t0 = Instant::now();
        network::forward_clip(&clip, params, Pass::Deploy)?;
        times.push(t0.elapsed().as_secs_f64() * 1e3);
    }
    times.sort_by(f64::total_cmp);
    let runtime_ms = if trials % 2 == 1 {
        times[trials / 2]
    } else {
        0.5 * (times[trials / 2 - 1] + times[trials / 2])
    };
    Ok(BenchResult {
        runtime_ms,
        trials,
        warmup_runs: warmup,
        dims,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::network::NetConfig;

    #[test]
    fn psnr_identical_inputs_hit_cap() {
        let x = Tensor4::<f32>::filled([1, 3, 4, 4], 0.25);
        assert_eq!(psnr(&x, &x).unwrap(), 100.0);
    }

    #[test]
    fn psnr_uniform_error_analytic() {
        let a = Tensor4::<f64>::filled([1, 3, 5, 5], 0.5);
        let b = Tensor4::<f64>::filled([1, 3, 5, 5], 0.6);
        // MSE = 0.01 -> exactly 20 dB
        assert!((psnr(&a, &b).unwrap() - 20.0).abs() < 1e-9);
        let zeros = Tensor4::<f64>::zeros([1, 3, 2, 2]);
        let ones = Tensor4::<f64>::filled([1, 3, 2, 2], 1.0);
        assert_eq!(psnr(&zeros, &ones).unwrap(), 0.0);
    }

    #[test]
    fn psnr_is_symmetric_and_checks_shapes() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let a = Tensor4::<f32>::random_uniform(&mut rng, [1, 6, 3, 3], 0.0, 1.0);
        let b = Tensor4::<f32>::random_uniform(&mut rng, [1, 6, 3, 3], 0.0, 1.0);
        assert_eq!(psnr(&a, &b).unwrap(), psnr(&b, &a).unwrap());
        let c = Tensor4::<f32>::zeros([1, 6, 3, 4]);
        assert!(psnr(&a, &c).is_err());
    }

    #[test]
    fn per_frame_report_means_out() {
        let mut pred = Tensor4::<f64>::filled([1, 6, 2, 2], 0.5);
        let gt = Tensor4::<f64>::filled([1, 6, 2, 2], 0.5);
        // disturb only frame 1
        for c in 3..6 {
            for i in 0..4 {
                let idx = c * 4 + i;
                pred.data_mut()[idx] = 0.6;
            }
        }
        let report = psnr_clip(&pred, &gt).unwrap();
        assert_eq!(report.frames, 2);
        assert_eq!(report.per_frame_psnr[0], 100.0);
        assert!((report.per_frame_psnr[1] - 20.0).abs() < 1e-9);
        let expect = (100.0 + report.per_frame_psnr[1]) / 2.0;
        assert!((report.mean_psnr - expect).abs() < 1e-12);
    }

    #[test]
    fn score_exponent_zero_is_exact() {
        assert_eq!(score_formula(27.0, 1.0).unwrap(), 1.0);
        assert!(score_formula(27.0, 0.0).is_err());
        assert!(score_formula(27.0, -3.0).is_err());
    }

    #[test]
    fn score_doubling_identities() {
        let s = score_formula(27.6, 80.0).unwrap();
        // doubling runtime halves the score exactly
        assert_eq!(score_formula(27.6, 160.0).unwrap(), s / 2.0);
        // +0.5 dB doubles the score exactly
        assert!((score_formula(28.1, 80.0).unwrap() - 2.0 * s).abs() < 1e-15);
        // monotonicity
        assert!(score_formula(28.0, 80.0).unwrap() > s);
        assert!(score_formula(27.6, 81.0).unwrap() < s);
    }

    #[test]
    fn bench_contract_and_shape() {
        let cfg = NetConfig {
            frames: 2,
            ..NetConfig::new(2, 0).unwrap()
        };
        let params = NetParams::<f32>::init(cfg, 1).unwrap();
        assert!(bench_forward(&params, 8, 8, 2, 0).is_err());
        let r = bench_forward(&params, 8, 8, 3, 1).unwrap();
        assert_eq!(r.trials, 3);
        assert_eq!(r.dims, [1, 6, 8, 8]);
        assert!(r.runtime_ms > 0.0);
    }
}
