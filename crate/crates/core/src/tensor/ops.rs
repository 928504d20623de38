//! Forward and backward passes for the elementary operations.
//!
//! All ops are pure functions over immutable tensors. Accumulation order is
//! fixed per output element regardless of thread count, so results are
//! bit-identical across runs within one precision mode.

use rayon::prelude::*;

use super::{ConvParams, Scalar, Tensor4};
use crate::error::{Error, Result};

/// Resolve the output extents of a stride-1 zero-padded convolution.
fn conv_out_dims<T: Scalar>(
    input: &Tensor4<T>,
    weight: &Tensor4<T>,
    pad: usize,
) -> Result<[usize; 4]> {
    let [n, c_in, h_in, w_in] = input.dims();
    let [c_out, w_c_in, k, _] = weight.dims();
    if c_in != w_c_in {
        return Err(Error::Shape(format!(
            "conv2d channel mismatch: input has {}, weight expects {}",
            c_in, w_c_in
        )));
    }
    let h_out = h_in as isize + 2 * pad as isize - k as isize + 1;
    let w_out = w_in as isize + 2 * pad as isize - k as isize + 1;
    if h_out < 0 || w_out < 0 {
        return Err(Error::Shape(format!(
            "conv2d output extent negative for input {}x{} kernel {} pad {}",
            h_in, w_in, k, pad
        )));
    }
    Ok([n, c_out, h_out as usize, w_out as usize])
}

/// 2-D convolution, stride 1, zero padding.
///
/// `out[n,o,y,x] = bias[o] + sum_{i,u,v} w[o,i,u,v] * in[n,i,y+u-pad,x+v-pad]`
/// with out-of-range input reads contributing zero.
pub fn conv2d_raw<T: Scalar>(
    input: &Tensor4<T>,
    weight: &Tensor4<T>,
    bias: Option<&[T]>,
    pad: usize,
) -> Result<Tensor4<T>> {
    let out_dims = conv_out_dims(input, weight, pad)?;
    let [n, c_out, h_out, w_out] = out_dims;
    let [_, c_in, h_in, w_in] = input.dims();
    let k = weight.dims()[2];
    if let Some(b) = bias {
        if b.len() != c_out {
            return Err(Error::Shape(format!(
                "bias length {} != c_out {}",
                b.len(),
                c_out
            )));
        }
    }

    let plane = h_out * w_out;
    if n * c_out * plane == 0 {
        return Tensor4::new(out_dims, vec![T::zero(); n * c_out * plane]);
    }

    let in_data = input.data();
    let w_data = weight.data();
    let in_plane = h_in * w_in;
    let mut out = vec![T::zero(); n * c_out * plane];

    out.par_chunks_mut(plane)
        .enumerate()
        .for_each(|(pi, out_plane)| {
            let ni = pi / c_out;
            let o = pi % c_out;
            if let Some(b) = bias {
                out_plane.fill(b[o]);
            }
            for i in 0..c_in {
                let in_base = (ni * c_in + i) * in_plane;
                for u in 0..k {
                    let y_lo = pad.saturating_sub(u);
                    let y_hi = (h_in + pad).saturating_sub(u).min(h_out);
                    for v in 0..k {
                        let wgt = w_data[((o * c_in + i) * k + u) * k + v];
                        let x_lo = pad.saturating_sub(v);
                        let x_hi = (w_in + pad).saturating_sub(v).min(w_out);
                        if x_lo >= x_hi {
                            continue;
                        }
                        let shift = v + x_lo - pad; // input x of output x_lo
                        for y in y_lo..y_hi {
                            let iy = y + u - pad;
                            let src = &in_data[in_base + iy * w_in + shift..][..x_hi - x_lo];
                            let dst = &mut out_plane[y * w_out + x_lo..][..x_hi - x_lo];
                            for (d, &s) in dst.iter_mut().zip(src) {
                                *d = *d + wgt * s;
                            }
                        }
                    }
                }
            }
        });

    Tensor4::new(out_dims, out)
}

pub fn conv2d<T: Scalar>(input: &Tensor4<T>, params: &ConvParams<T>) -> Result<Tensor4<T>> {
    conv2d_raw(input, params.weight(), params.bias(), params.pad())
}

/// Fixed-order eight-lane dot product. Lane split is part of the op
/// definition, so results stay deterministic under any thread count.
#[inline]
fn dot<T: Scalar>(a: &[T], b: &[T]) -> T {
    debug_assert_eq!(a.len(), b.len());
    let mut acc = [T::zero(); 8];
    let mut ai = a.chunks_exact(8);
    let mut bi = b.chunks_exact(8);
    for (ca, cb) in (&mut ai).zip(&mut bi) {
        for l in 0..8 {
            acc[l] = acc[l] + ca[l] * cb[l];
        }
    }
    let mut s = ((acc[0] + acc[1]) + (acc[2] + acc[3])) + ((acc[4] + acc[5]) + (acc[6] + acc[7]));
    for (&x, &y) in ai.remainder().iter().zip(bi.remainder()) {
        s = s + x * y;
    }
    s
}

/// Analytic gradients of [`conv2d_raw`] with respect to input, weight and
/// (when present) bias. `grad_out` must match the recorded forward output.
pub fn conv2d_backward_raw<T: Scalar>(
    input: &Tensor4<T>,
    weight: &Tensor4<T>,
    has_bias: bool,
    pad: usize,
    grad_out: &Tensor4<T>,
) -> Result<(Tensor4<T>, Tensor4<T>, Option<Vec<T>>)> {
    let out_dims = conv_out_dims(input, weight, pad)?;
    if grad_out.dims() != out_dims {
        return Err(Error::Shape(format!(
            "conv2d_backward grad dims {:?} do not match forward output {:?}",
            grad_out.dims(),
            out_dims
        )));
    }
    let [n, c_out, h_out, w_out] = out_dims;
    let [_, c_in, h_in, w_in] = input.dims();
    let k = weight.dims()[2];
    let in_plane = h_in * w_in;
    let out_plane = h_out * w_out;
    let g = grad_out.data();
    let in_data = input.data();
    let w_data = weight.data();

    let grad_bias = has_bias.then(|| {
        (0..c_out)
            .map(|o| {
                let mut s = T::zero();
                for ni in 0..n {
                    let base = (ni * c_out + o) * out_plane;
                    s = s + g[base..base + out_plane].iter().copied().sum();
                }
                s
            })
            .collect::<Vec<T>>()
    });

    // d/dw[o,i,u,v] = sum_{n,y,x} g[n,o,y,x] * in[n,i,y+u-pad,x+v-pad]
    let mut grad_weight = vec![T::zero(); weight.len()];
    let per_o = c_in * k * k;
    grad_weight
        .par_chunks_mut(per_o)
        .enumerate()
        .for_each(|(o, gw)| {
            for ni in 0..n {
                let g_base = (ni * c_out + o) * out_plane;
                for i in 0..c_in {
                    let in_base = (ni * c_in + i) * in_plane;
                    for u in 0..k {
                        let y_lo = pad.saturating_sub(u);
                        let y_hi = (h_in + pad).saturating_sub(u).min(h_out);
                        for v in 0..k {
                            let x_lo = pad.saturating_sub(v);
                            let x_hi = (w_in + pad).saturating_sub(v).min(w_out);
                            if x_lo >= x_hi {
                                continue;
                            }
                            let shift = v + x_lo - pad;
                            let mut s = T::zero();
                            for y in y_lo..y_hi {
                                let iy = y + u - pad;
                                let g_row = &g[g_base + y * w_out + x_lo..][..x_hi - x_lo];
                                let in_row =
                                    &in_data[in_base + iy * w_in + shift..][..x_hi - x_lo];
                                s = s + dot(g_row, in_row);
                            }
                            gw[(i * k + u) * k + v] = gw[(i * k + u) * k + v] + s;
                        }
                    }
                }
            }
        });

    // d/din[n,i,a,b] = sum_{o,u,v} w[o,i,u,v] * g[n,o,a-u+pad,b-v+pad]
    let mut grad_input = vec![T::zero(); input.len()];
    if !grad_input.is_empty() && out_plane > 0 {
        grad_input
            .par_chunks_mut(in_plane)
            .enumerate()
            .for_each(|(pi, gi_plane)| {
                let ni = pi / c_in;
                let i = pi % c_in;
                for o in 0..c_out {
                    let g_base = (ni * c_out + o) * out_plane;
                    for u in 0..k {
                        let y_lo = pad.saturating_sub(u);
                        let y_hi = (h_in + pad).saturating_sub(u).min(h_out);
                        for v in 0..k {
                            let wgt = w_data[((o * c_in + i) * k + u) * k + v];
                            let x_lo = pad.saturating_sub(v);
                            let x_hi = (w_in + pad).saturating_sub(v).min(w_out);
                            if x_lo >= x_hi {
                                continue;
                            }
                            let shift = v + x_lo - pad;
                            for y in y_lo..y_hi {
                                let iy = y + u - pad;
                                let g_row = &g[g_base + y * w_out + x_lo..][..x_hi - x_lo];
                                let gi_row = &mut gi_plane[iy * w_in + shift..][..x_hi - x_lo];
                                for (d, &s) in gi_row.iter_mut().zip(g_row) {
                                    *d = *d + wgt * s;
                                }
                            }
                        }
                    }
                }
            });
    }

    Ok((
        Tensor4::new(input.dims(), grad_input)?,
        Tensor4::new(weight.dims(), grad_weight)?,
        grad_bias,
    ))
}

pub fn conv2d_backward<T: Scalar>(
    input: &Tensor4<T>,
    params: &ConvParams<T>,
    grad_out: &Tensor4<T>,
) -> Result<(Tensor4<T>, Tensor4<T>, Option<Vec<T>>)> {
    conv2d_backward_raw(
        input,
        params.weight(),
        params.bias().is_some(),
        params.pad(),
        grad_out,
    )
}

/// Elementwise `max(x, 0)`.
pub fn relu<T: Scalar>(input: &Tensor4<T>) -> Tensor4<T> {
    input.map(|v| v.max(T::zero()))
}

/// Passes gradient where the forward input was strictly positive.
pub fn relu_backward<T: Scalar>(input: &Tensor4<T>, grad_out: &Tensor4<T>) -> Result<Tensor4<T>> {
    if input.dims() != grad_out.dims() {
        return Err(Error::Shape(format!(
            "relu_backward dims {:?} vs {:?}",
            input.dims(),
            grad_out.dims()
        )));
    }
    let data = input
        .data()
        .iter()
        .zip(grad_out.data())
        .map(|(&x, &g)| if x > T::zero() { g } else { T::zero() })
        .collect();
    Tensor4::new(input.dims(), data)
}

/// Concatenate along the channel axis, `a`'s channels first.
pub fn concat_channels<T: Scalar>(a: &Tensor4<T>, b: &Tensor4<T>) -> Result<Tensor4<T>> {
    let [an, ac, ah, aw] = a.dims();
    let [bn, bc, bh, bw] = b.dims();
    if an != bn || ah != bh || aw != bw {
        return Err(Error::Shape(format!(
            "concat_channels batch/spatial mismatch: {:?} vs {:?}",
            a.dims(),
            b.dims()
        )));
    }
    let plane = ah * aw;
    let mut data = Vec::with_capacity((ac + bc) * an * plane);
    for n in 0..an {
        data.extend_from_slice(&a.data()[n * ac * plane..(n + 1) * ac * plane]);
        data.extend_from_slice(&b.data()[n * bc * plane..(n + 1) * bc * plane]);
    }
    Tensor4::new([an, ac + bc, ah, aw], data)
}

/// Split a gradient at the recorded channel boundary (inverse of concat).
pub fn concat_channels_backward<T: Scalar>(
    grad_out: &Tensor4<T>,
    c_a: usize,
) -> Result<(Tensor4<T>, Tensor4<T>)> {
    let [n, c, h, w] = grad_out.dims();
    if c_a > c {
        return Err(Error::Shape(format!(
            "split boundary {} exceeds {} channels",
            c_a, c
        )));
    }
    let c_b = c - c_a;
    let plane = h * w;
    let mut ga = Vec::with_capacity(n * c_a * plane);
    let mut gb = Vec::with_capacity(n * c_b * plane);
    for ni in 0..n {
        let base = ni * c * plane;
        ga.extend_from_slice(&grad_out.data()[base..base + c_a * plane]);
        gb.extend_from_slice(&grad_out.data()[base + c_a * plane..base + c * plane]);
    }
    Ok((
        Tensor4::new([n, c_a, h, w], ga)?,
        Tensor4::new([n, c_b, h, w], gb)?,
    ))
}

/// Rearrange `r*r` channel groups into an `r`-times larger spatial plane.
///
/// Channel-major block order: `out[n,o,y*r+dy,x*r+dx] = in[n,o*r*r+dy*r+dx,y,x]`.
pub fn depth_to_space<T: Scalar>(input: &Tensor4<T>, r: usize) -> Result<Tensor4<T>> {
    if r == 0 {
        return Err(Error::InvalidArg("depth_to_space factor must be >= 1".into()));
    }
    let [n, c, h, w] = input.dims();
    if c % (r * r) != 0 {
        return Err(Error::Shape(format!(
            "depth_to_space: {} channels not divisible by {}",
            c,
            r * r
        )));
    }
    let c_out = c / (r * r);
    let mut out = Tensor4::zeros([n, c_out, h * r, w * r]);
    for ni in 0..n {
        for o in 0..c_out {
            for dy in 0..r {
                for dx in 0..r {
                    let ci = o * r * r + dy * r + dx;
                    for y in 0..h {
                        let in_base = input.index_of(ni, ci, y, 0);
                        let out_base = out.index_of(ni, o, y * r + dy, dx);
                        for x in 0..w {
                            out.data_mut()[out_base + x * r] = input.data()[in_base + x];
                        }
                    }
                }
            }
        }
    }
    Ok(out)
}

/// Gradient of [`depth_to_space`]: the inverse index permutation.
pub fn depth_to_space_backward<T: Scalar>(
    in_dims: [usize; 4],
    r: usize,
    grad_out: &Tensor4<T>,
) -> Result<Tensor4<T>> {
    let [n, c, h, w] = in_dims;
    let expected = [n, c / (r * r), h * r, w * r];
    if r == 0 || c % (r * r) != 0 || grad_out.dims() != expected {
        return Err(Error::Shape(format!(
            "depth_to_space_backward grad dims {:?}, expected {:?}",
            grad_out.dims(),
            expected
        )));
    }
    let mut grad_in = Tensor4::zeros(in_dims);
    for ni in 0..n {
        for ci in 0..c {
            let o = ci / (r * r);
            let dy = (ci % (r * r)) / r;
            let dx = ci % r;
            for y in 0..h {
                let out_base = grad_out.index_of(ni, o, y * r + dy, dx);
                let in_base = grad_in.index_of(ni, ci, y, 0);
                for x in 0..w {
                    grad_in.data_mut()[in_base + x] = grad_out.data()[out_base + x * r];
                }
            }
        }
    }
    Ok(grad_in)
}

/// Replicate each pixel into an `r x r` block.
pub fn nearest_upsample<T: Scalar>(input: &Tensor4<T>, r: usize) -> Result<Tensor4<T>> {
    if r == 0 {
        return Err(Error::InvalidArg(
            "nearest_upsample factor must be >= 1".into(),
        ));
    }
    let [n, c, h, w] = input.dims();
    let mut out = Tensor4::zeros([n, c, h * r, w * r]);
    for ni in 0..n {
        for ci in 0..c {
            for y in 0..h {
                let in_base = input.index_of(ni, ci, y, 0);
                for dy in 0..r {
                    let out_base = out.index_of(ni, ci, y * r + dy, 0);
                    for x in 0..w {
                        let v = input.data()[in_base + x];
                        for dx in 0..r {
                            out.data_mut()[out_base + x * r + dx] = v;
                        }
                    }
                }
            }
        }
    }
    Ok(out)
}

/// Gradient of [`nearest_upsample`]: sums over each replicated block.
pub fn nearest_upsample_backward<T: Scalar>(
    in_dims: [usize; 4],
    r: usize,
    grad_out: &Tensor4<T>,
) -> Result<Tensor4<T>> {
    let [n, c, h, w] = in_dims;
    if r == 0 || grad_out.dims() != [n, c, h * r, w * r] {
        return Err(Error::Shape(format!(
            "nearest_upsample_backward grad dims {:?}, expected {:?}",
            grad_out.dims(),
            [n, c, h * r, w * r]
        )));
    }
    let mut grad_in = Tensor4::zeros(in_dims);
    for ni in 0..n {
        for ci in 0..c {
            for y in 0..h {
                let in_base = grad_in.index_of(ni, ci, y, 0);
                for dy in 0..r {
                    let out_base = grad_out.index_of(ni, ci, y * r + dy, 0);
                    for x in 0..w {
                        let mut s = grad_in.data()[in_base + x];
                        for dx in 0..r {
                            s = s + grad_out.data()[out_base + x * r + dx];
                        }
                        grad_in.data_mut()[in_base + x] = s;
                    }
                }
            }
        }
    }
    Ok(grad_in)
}

/// Elementwise sum; dims must agree.
pub fn add<T: Scalar>(a: &Tensor4<T>, b: &Tensor4<T>) -> Result<Tensor4<T>> {
    if a.dims() != b.dims() {
        return Err(Error::Shape(format!(
            "add dims {:?} vs {:?}",
            a.dims(),
            b.dims()
        )));
    }
    let data = a
        .data()
        .iter()
        .zip(b.data())
        .map(|(&x, &y)| x + y)
        .collect();
    Tensor4::new(a.dims(), data)
}

/// Clamp every element into `[0, 1]` (deploy-mode output range).
pub fn clamp_unit<T: Scalar>(input: &Tensor4<T>) -> Tensor4<T> {
    input.map(|v| v.max(T::zero()).min(T::one()))
}
