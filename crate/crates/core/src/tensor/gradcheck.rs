//! Central-finite-difference gradient checking (f64 only).
//!
//! The analytic backward under test is compared against
//! `(s(x+h) - s(x-h)) / 2h` of the scalar projection `s = sum(out * R)` for
//! a fixed random `R`, elementwise over every input.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use super::{ops, ConvParams, Tensor4};

pub const FD_STEP: f64 = 1e-5;

#[derive(Debug, Clone)]
pub struct GradCheckEntry {
    /// Which differentiated input this row covers (e.g. "weight").
    pub param: String,
    pub max_rel_err: f64,
    pub checked: usize,
    pub skipped: usize,
}

#[derive(Debug, Clone)]
pub struct GradCheckReport {
    pub op: String,
    pub tolerance: f64,
    pub entries: Vec<GradCheckEntry>,
}

impl GradCheckReport {
    pub fn passed(&self) -> bool {
        self.entries.iter().all(|e| e.max_rel_err <= self.tolerance)
    }

    pub fn worst(&self) -> f64 {
        self.entries
            .iter()
            .map(|e| e.max_rel_err)
            .fold(0.0, f64::max)
    }
}

fn rel_err(a: f64, n: f64) -> f64 {
    (a - n).abs() / a.abs().max(n.abs()).max(1e-6)
}

/// Check `backward` against central differences of `forward`.
///
/// `exclude(input_idx, value)` skips elements where the op is not
/// differentiable (the relu kink); pass `None` otherwise.
pub fn check(
    op: &str,
    inputs: &[(String, Tensor4<f64>)],
    forward: impl Fn(&[Tensor4<f64>]) -> Tensor4<f64>,
    backward: impl Fn(&[Tensor4<f64>], &Tensor4<f64>) -> Vec<Tensor4<f64>>,
    tolerance: f64,
    seed: u64,
    exclude: Option<&dyn Fn(usize, f64) -> bool>,
) -> GradCheckReport {
    let mut vals: Vec<Tensor4<f64>> = inputs.iter().map(|(_, t)| t.clone()).collect();
    let out = forward(&vals);
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let projection = Tensor4::<f64>::random_uniform(&mut rng, out.dims(), -1.0, 1.0);

    let analytic = backward(&vals, &projection);
    assert_eq!(analytic.len(), inputs.len(), "backward arity mismatch");

    let scalar = |vals: &[Tensor4<f64>]| -> f64 {
        forward(vals)
            .data()
            .iter()
            .zip(projection.data())
            .map(|(&o, &r)| o * r)
            .sum()
    };

    let mut entries = Vec::new();
    for i in 0..inputs.len() {
        let mut max_err = 0.0f64;
        let mut checked = 0usize;
        let mut skipped = 0usize;
        for j in 0..vals[i].len() {
            let orig = vals[i].data()[j];
            if exclude.is_some_and(|f| f(i, orig)) {
                skipped += 1;
                continue;
            }
            vals[i].data_mut()[j] = orig + FD_STEP;
            let plus = scalar(&vals);
            vals[i].data_mut()[j] = orig - FD_STEP;
            let minus = scalar(&vals);
            vals[i].data_mut()[j] = orig;
            let numeric = (plus - minus) / (2.0 * FD_STEP);
            max_err = max_err.max(rel_err(analytic[i].data()[j], numeric));
            checked += 1;
        }
        entries.push(GradCheckEntry {
            param: inputs[i].0.clone(),
            max_rel_err: max_err,
            checked,
            skipped,
        });
    }

    GradCheckReport {
        op: op.to_string(),
        tolerance,
        entries,
    }
}

/// conv2d 3x3 (pad 1, bias) gradcheck against input, weight and bias.
pub fn check_conv2d(seed: u64, tolerance: f64) -> GradCheckReport {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let x = Tensor4::<f64>::random_uniform(&mut rng, [2, 3, 5, 4], -1.0, 1.0);
    let w = Tensor4::<f64>::random_uniform(&mut rng, [4, 3, 3, 3], -1.0, 1.0);
    let b = Tensor4::<f64>::random_uniform(&mut rng, [4, 1, 1, 1], -1.0, 1.0);
    check(
        "conv2d",
        &[
            ("input".into(), x),
            ("weight".into(), w),
            ("bias".into(), b),
        ],
        |vals| ops::conv2d_raw(&vals[0], &vals[1], Some(vals[2].data()), 1).unwrap(),
        |vals, g| {
            let (gi, gw, gb) =
                ops::conv2d_backward_raw(&vals[0], &vals[1], true, 1, g).unwrap();
            let c = vals[1].dims()[0];
            vec![gi, gw, Tensor4::new([c, 1, 1, 1], gb.unwrap()).unwrap()]
        },
        tolerance,
        seed ^ 0x5eed,
        None,
    )
}

/// relu gradcheck; elements inside the |x| < 1e-6 kink band are excluded.
pub fn check_relu(seed: u64, tolerance: f64) -> GradCheckReport {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    // sample away from the kink so the finite-difference stencil never straddles it
    let mut x = Tensor4::<f64>::random_uniform(&mut rng, [2, 3, 6, 6], 0.01, 1.0);
    for (i, v) in x.data_mut().iter_mut().enumerate() {
        if i % 2 == 0 {
            *v = -*v;
        }
    }
    check(
        "relu",
        &[("input".into(), x)],
        |vals| ops::relu(&vals[0]),
        |vals, g| vec![ops::relu_backward(&vals[0], g).unwrap()],
        tolerance,
        seed ^ 0x5eed,
        Some(&|_, v: f64| v.abs() < 1e-6),
    )
}

/// concat gradcheck — linear op, the error should sit at machine epsilon.
pub fn check_concat(seed: u64, tolerance: f64) -> GradCheckReport {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let a = Tensor4::<f64>::random_uniform(&mut rng, [1, 2, 3, 4], -1.0, 1.0);
    let b = Tensor4::<f64>::random_uniform(&mut rng, [1, 3, 3, 4], -1.0, 1.0);
    check(
        "concat_channels",
        &[("a".into(), a), ("b".into(), b)],
        |vals| ops::concat_channels(&vals[0], &vals[1]).unwrap(),
        |_, g| {
            let (ga, gb) = ops::concat_channels_backward(g, 2).unwrap();
            vec![ga, gb]
        },
        tolerance,
        seed ^ 0x5eed,
        None,
    )
}

pub fn check_depth_to_space(seed: u64, tolerance: f64) -> GradCheckReport {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let x = Tensor4::<f64>::random_uniform(&mut rng, [1, 8, 3, 2], -1.0, 1.0);
    check(
        "depth_to_space",
        &[("input".into(), x)],
        |vals| ops::depth_to_space(&vals[0], 2).unwrap(),
        |vals, g| vec![ops::depth_to_space_backward(vals[0].dims(), 2, g).unwrap()],
        tolerance,
        seed ^ 0x5eed,
        None,
    )
}

pub fn check_nearest_upsample(seed: u64, tolerance: f64) -> GradCheckReport {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let x = Tensor4::<f64>::random_uniform(&mut rng, [1, 2, 3, 3], -1.0, 1.0);
    check(
        "nearest_upsample",
        &[("input".into(), x)],
        |vals| ops::nearest_upsample(&vals[0], 2).unwrap(),
        |vals, g| vec![ops::nearest_upsample_backward(vals[0].dims(), 2, g).unwrap()],
        tolerance,
        seed ^ 0x5eed,
        None,
    )
}

/// 1x1 conv variant, exercised separately because the fusion algebra leans
/// on it.
pub fn check_conv2d_1x1(seed: u64, tolerance: f64) -> GradCheckReport {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let x = Tensor4::<f64>::random_uniform(&mut rng, [1, 4, 4, 5], -1.0, 1.0);
    let p = ConvParams::<f64>::init_he(&mut rng, 3, 4, 1, 0, true).unwrap();
    let w = p.weight().clone();
    let b = Tensor4::new([3, 1, 1, 1], p.bias().unwrap().to_vec()).unwrap();
    check(
        "conv2d_1x1",
        &[
            ("input".into(), x),
            ("weight".into(), w),
            ("bias".into(), b),
        ],
        |vals| ops::conv2d_raw(&vals[0], &vals[1], Some(vals[2].data()), 0).unwrap(),
        |vals, g| {
            let (gi, gw, gb) =
                ops::conv2d_backward_raw(&vals[0], &vals[1], true, 0, g).unwrap();
            vec![gi, gw, Tensor4::new([3, 1, 1, 1], gb.unwrap()).unwrap()]
        },
        tolerance,
        seed ^ 0x5eed,
        None,
    )
}
