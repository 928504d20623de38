//! Procedural texture clips for demos and training tests: colored
//! sinusoidal gratings with per-frame phase drift, so clips look like
//! slowly moving band-limited video with energy both above and below the
//! 4x downsampling Nyquist rate.

use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::clip_io::bicubic_resize;
use crate::error::{Error, Result};
use crate::tensor::{Scalar, Tensor4};

struct Grating {
    fx: f64,
    fy: f64,
    phase: f64,
    drift: f64,
    amp: [f64; 3],
}

/// One clip of `frames` RGB frames, values in [0, 1].
pub fn generate_clip<T: Scalar>(seed: u64, frames: usize, h: usize, w: usize) -> Tensor4<T> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let gratings: Vec<Grating> = (0..7)
        .map(|_| {
            let wavelength = (rng.random_range(3f64.ln()..32f64.ln())).exp();
            let theta = rng.random_range(0.0..std::f64::consts::PI);
            Grating {
                fx: theta.cos() / wavelength,
                fy: theta.sin() / wavelength,
                phase: rng.random_range(0.0..1.0),
                drift: rng.random_range(-0.12..0.12),
                amp: [
                    rng.random_range(0.25..1.0),
                    rng.random_range(0.25..1.0),
                    rng.random_range(0.25..1.0),
                ],
            }
        })
        .collect();
    let max_sum = (0..3)
        .map(|c| gratings.iter().map(|g| g.amp[c]).sum::<f64>())
        .fold(0.0, f64::max);
    let norm = 0.48 / max_sum;

    let tau = std::f64::consts::TAU;
    Tensor4::from_fn([1, 3 * frames, h, w], |_, ch, y, x| {
        let (t, c) = (ch / 3, ch % 3);
        let mut v = 0.5;
        for g in &gratings {
            let angle = tau * (g.fx * x as f64 + g.fy * y as f64 + g.phase + g.drift * t as f64);
            v += norm * g.amp[c] * angle.sin();
        }
        T::from_f64_lossy(v.clamp(0.0, 1.0))
    })
}

/// (lr, hr) clip pairs: procedural HR clips with bicubic x4 LR inputs.
pub fn synth_dataset<T: Scalar>(
    n_clips: usize,
    frames: usize,
    hr_h: usize,
    hr_w: usize,
    seed: u64,
) -> Result<Vec<(Tensor4<T>, Tensor4<T>)>> {
    if hr_h % 4 != 0 || hr_w % 4 != 0 {
        return Err(Error::InvalidArg(format!(
            "HR dims {}x{} must be divisible by 4",
            hr_h, hr_w
        )));
    }
    (0..n_clips)
        .map(|i| {
            let hr = generate_clip::<T>(seed.wrapping_add(i as u64), frames, hr_h, hr_w);
            let lr = bicubic_resize(&hr, hr_h / 4, hr_w / 4)?;
            Ok((lr, hr))
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn clips_are_deterministic_and_in_range() {
        let a = generate_clip::<f32>(5, 3, 16, 16);
        let b = generate_clip::<f32>(5, 3, 16, 16);
        assert_eq!(a, b);
        assert_eq!(a.dims(), [1, 9, 16, 16]);
        assert!(a.data().iter().all(|&v| (0.0..=1.0).contains(&v)));
        let c = generate_clip::<f32>(6, 3, 16, 16);
        assert_ne!(a, c);
    }

    #[test]
    fn frames_move_but_stay_correlated() {
        let clip = generate_clip::<f32>(7, 2, 24, 24);
        let plane = 24 * 24;
        let f0 = &clip.data()[..3 * plane];
        let f1 = &clip.data()[3 * plane..6 * plane];
        assert_ne!(f0, f1);
        let mean_abs_diff: f32 =
            f0.iter().zip(f1).map(|(a, b)| (a - b).abs()).sum::<f32>() / f0.len() as f32;
        assert!(mean_abs_diff < 0.2, "frames decohered: {mean_abs_diff}");
    }

    #[test]
    fn dataset_pairs_have_4x_geometry() {
        let data = synth_dataset::<f32>(2, 3, 24, 32, 11).unwrap();
        assert_eq!(data.len(), 2);
        let (lr, hr) = &data[0];
        assert_eq!(lr.dims(), [1, 9, 6, 8]);
        assert_eq!(hr.dims(), [1, 9, 24, 32]);
        assert!(synth_dataset::<f32>(1, 1, 10, 8, 0).is_err());
    }
}
