//! Full network graph: head conv, a stack of reparameterizable blocks,
//! shallow/deep feature fusion, 1x1 channel compression to 48 = 3*scale^2
//! channels and depth-to-space upscaling, with an optional global
//! nearest-neighbor residual.
//!
//! A clip packs `frames` RGB frames into `3*frames` channels; every frame
//! runs through the identical single-frame network with shared weights
//! (implemented as a batch reshape, which is the same computation).

use rand::Rng;
use rand_chacha::ChaCha8Rng;
use rand::SeedableRng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::repconv::{self, FusedConv, RepConvParams, RepConvVars};
use crate::tensor::{self, ConvParams, GradTape, Scalar, Tensor4, VarId};

pub const RGB_CHANNELS: usize = 3;
pub const UPSCALE: usize = 4;
/// Channels entering depth-to-space: 3 * 4^2.
pub const TAIL_CHANNELS: usize = RGB_CHANNELS * UPSCALE * UPSCALE;

/// Architecture hyperparameters.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct NetConfig {
    /// Trunk channel count.
    pub nc: usize,
    /// Number of reparameterizable blocks.
    pub nb: usize,
    /// Spatial upscale factor (fixed at 4).
    pub scale: usize,
    /// Frames per clip.
    pub frames: usize,
    /// Add a nearest-neighbor x4 skip from input to output.
    pub global_residual: bool,
}

impl NetConfig {
    pub fn new(nc: usize, nb: usize) -> Result<Self> {
        let cfg = Self {
            nc,
            nb,
            scale: UPSCALE,
            frames: 10,
            global_residual: true,
        };
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn validate(&self) -> Result<()> {
        if self.nc < 1 {
            return Err(Error::Config("nc must be >= 1".into()));
        }
        if self.scale != UPSCALE {
            return Err(Error::Config(format!(
                "scale is fixed at {}, got {}",
                UPSCALE, self.scale
            )));
        }
        if self.frames < 1 {
            return Err(Error::Config("frames must be >= 1".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Mode {
    Branched,
    Fused,
}

#[derive(Debug, Clone, PartialEq)]
pub enum BlockParams<T> {
    Branched(RepConvParams<T>),
    Fused(FusedConv<T>),
}

/// Ordered parameter set of one network.
#[derive(Debug, Clone, PartialEq)]
pub struct NetParams<T> {
    pub config: NetConfig,
    pub head: ConvParams<T>,
    pub blocks: Vec<BlockParams<T>>,
    pub fusion_reduce: ConvParams<T>,
    pub tail_compress: ConvParams<T>,
    pub mode: Mode,
}

impl<T: Scalar> NetParams<T> {
    /// Random branched initialization (He-uniform weights, zero biases).
    pub fn init(config: NetConfig, seed: u64) -> Result<Self> {
        config.validate()?;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        Self::init_with(config, &mut rng)
    }

    pub fn init_with<R: Rng>(config: NetConfig, rng: &mut R) -> Result<Self> {
        config.validate()?;
        let nc = config.nc;
        let head = ConvParams::init_he(rng, nc, RGB_CHANNELS, 3, 1, true)?;
        let blocks = (0..config.nb)
            .map(|_| Ok(BlockParams::Branched(RepConvParams::init(rng, nc)?)))
            .collect::<Result<Vec<_>>>()?;
        let fusion_reduce = ConvParams::init_he(rng, nc, 2 * nc, 1, 0, true)?;
        let tail_compress = ConvParams::init_he(rng, TAIL_CHANNELS, nc, 1, 0, true)?;
        Ok(Self {
            config,
            head,
            blocks,
            fusion_reduce,
            tail_compress,
            mode: Mode::Branched,
        })
    }

    /// All-zero branched network (useful for the pass-through tests).
    pub fn zeros(config: NetConfig) -> Result<Self> {
        config.validate()?;
        let nc = config.nc;
        let zero_block = || -> Result<BlockParams<T>> {
            Ok(BlockParams::Branched(RepConvParams::new(
                ConvParams::zeros(4 * nc, nc, 1, 0, false)?,
                ConvParams::zeros(4 * nc, 4 * nc, 3, 1, true)?,
                ConvParams::zeros(nc, 4 * nc, 1, 0, true)?,
                ConvParams::zeros(nc, nc, 1, 0, true)?,
            )?))
        };
        Ok(Self {
            config,
            head: ConvParams::zeros(nc, RGB_CHANNELS, 3, 1, true)?,
            blocks: (0..config.nb).map(|_| zero_block()).collect::<Result<_>>()?,
            fusion_reduce: ConvParams::zeros(nc, 2 * nc, 1, 0, true)?,
            tail_compress: ConvParams::zeros(TAIL_CHANNELS, nc, 1, 0, true)?,
            mode: Mode::Branched,
        })
    }

    pub fn cast<U: Scalar>(&self) -> NetParams<U> {
        NetParams {
            config: self.config,
            head: self.head.cast(),
            blocks: self
                .blocks
                .iter()
                .map(|b| match b {
                    BlockParams::Branched(p) => BlockParams::Branched(p.cast()),
                    BlockParams::Fused(p) => BlockParams::Fused(p.cast()),
                })
                .collect(),
            fusion_reduce: self.fusion_reduce.cast(),
            tail_compress: self.tail_compress.cast(),
            mode: self.mode,
        }
    }

    /// Named tensors in the canonical serialization order: head,
    /// blocks[0..nb] (expand, spatial, reduce, residual — or the fused
    /// conv), fusion_reduce, tail_compress; weight before bias.
    pub fn tensor_views(&self) -> Vec<(String, Vec<u32>, &[T])> {
        fn push_conv<'a, T: Scalar>(
            out: &mut Vec<(String, Vec<u32>, &'a [T])>,
            name: &str,
            p: &'a ConvParams<T>,
        ) {
            let w = p.weight();
            let dims = w.dims().iter().map(|&d| d as u32).collect();
            out.push((format!("{name}.weight"), dims, w.data()));
            if let Some(b) = p.bias() {
                out.push((format!("{name}.bias"), vec![b.len() as u32], b));
            }
        }
        let mut out = Vec::new();
        push_conv(&mut out, "head", &self.head);
        for (i, b) in self.blocks.iter().enumerate() {
            match b {
                BlockParams::Branched(p) => {
                    push_conv(&mut out, &format!("block{i}.expand"), p.expand());
                    push_conv(&mut out, &format!("block{i}.spatial"), p.spatial());
                    push_conv(&mut out, &format!("block{i}.reduce"), p.reduce());
                    push_conv(&mut out, &format!("block{i}.residual"), p.residual());
                }
                BlockParams::Fused(p) => push_conv(&mut out, &format!("block{i}.fused"), p),
            }
        }
        push_conv(&mut out, "fusion_reduce", &self.fusion_reduce);
        push_conv(&mut out, "tail_compress", &self.tail_compress);
        out
    }

    /// Mutable flat slices over every parameter tensor, in the same
    /// canonical order as [`tensor_views`](Self::tensor_views).
    pub fn param_slices_mut(&mut self) -> Vec<&mut [T]> {
        let mut out: Vec<&mut [T]> = Vec::new();
        fn push_conv<'a, T: Scalar>(out: &mut Vec<&'a mut [T]>, p: &'a mut ConvParams<T>) {
            let (w, b) = p.weight_bias_mut();
            out.push(w.data_mut());
            if let Some(b) = b {
                out.push(b.as_mut_slice());
            }
        }
        push_conv(&mut out, &mut self.head);
        for b in &mut self.blocks {
            match b {
                BlockParams::Branched(p) => {
                    let (expand, spatial, reduce, residual) = p.branches_mut();
                    push_conv(&mut out, expand);
                    push_conv(&mut out, spatial);
                    push_conv(&mut out, reduce);
                    push_conv(&mut out, residual);
                }
                BlockParams::Fused(p) => push_conv(&mut out, p),
            }
        }
        push_conv(&mut out, &mut self.fusion_reduce);
        push_conv(&mut out, &mut self.tail_compress);
        out
    }
}

/// Whether a forward pass keeps raw values (training) or clamps the output
/// into [0, 1] (deployment).
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Pass {
    Train,
    Deploy,
}

fn block_forward<T: Scalar>(x: &Tensor4<T>, block: &BlockParams<T>) -> Result<Tensor4<T>> {
    match block {
        BlockParams::Branched(p) => repconv::forward_branched(x, p),
        BlockParams::Fused(p) => tensor::conv2d(x, p),
    }
}

/// Single-frame forward: `(n, 3, h, w) -> (n, 3, 4h, 4w)`.
pub fn forward_frame<T: Scalar>(
    x: &Tensor4<T>,
    params: &NetParams<T>,
    pass: Pass,
) -> Result<Tensor4<T>> {
    if x.c() != RGB_CHANNELS {
        return Err(Error::Shape(format!(
            "forward_frame expects {} channels, got {}",
            RGB_CHANNELS,
            x.c()
        )));
    }
    let f0 = tensor::relu(&tensor::conv2d(x, &params.head)?);
    let mut f = f0.clone();
    for block in &params.blocks {
        f = tensor::relu(&block_forward(&f, block)?);
    }
    let g = tensor::relu(&tensor::conv2d(
        &tensor::concat_channels(&f0, &f)?,
        &params.fusion_reduce,
    )?);
    let mut y = tensor::depth_to_space(
        &tensor::conv2d(&g, &params.tail_compress)?,
        params.config.scale,
    )?;
    if params.config.global_residual {
        y = tensor::add(&y, &tensor::nearest_upsample(x, params.config.scale)?)?;
    }
    Ok(match pass {
        Pass::Train => y,
        Pass::Deploy => tensor::clamp_unit(&y),
    })
}

/// Clip forward: `(n, 3T, h, w) -> (n, 3T, 4h, 4w)` by running every frame
/// through the shared-weight single-frame network.
pub fn forward_clip<T: Scalar>(
    clip: &Tensor4<T>,
    params: &NetParams<T>,
    pass: Pass,
) -> Result<Tensor4<T>> {
    let [n, c, h, w] = clip.dims();
    if c % RGB_CHANNELS != 0 {
        return Err(Error::Shape(format!(
            "clip channels {} not divisible by {}",
            c, RGB_CHANNELS
        )));
    }
    let frames = c / RGB_CHANNELS;
    // (n, 3T, h, w) and (nT, 3, h, w) share the exact row-major layout
    let framed = clip.clone().reshape([n * frames, RGB_CHANNELS, h, w])?;
    let out = forward_frame(&framed, params, pass)?;
    let s = params.config.scale;
    out.reshape([n, c, h * s, w * s])
}

/// Tape vars of every trainable tensor, mirroring the canonical order.
#[derive(Debug, Clone)]
pub struct NetParamVars {
    pub head_w: VarId,
    pub head_b: VarId,
    pub blocks: Vec<RepConvVars>,
    pub fusion_reduce_w: VarId,
    pub fusion_reduce_b: VarId,
    pub tail_w: VarId,
    pub tail_b: VarId,
}

impl NetParamVars {
    /// Var ids in canonical parameter order.
    pub fn ordered(&self) -> Vec<VarId> {
        let mut ids = vec![self.head_w, self.head_b];
        for b in &self.blocks {
            ids.extend([
                b.expand_w, b.spatial_w, b.spatial_b, b.reduce_w, b.reduce_b, b.residual_w,
                b.residual_b,
            ]);
        }
        ids.extend([
            self.fusion_reduce_w,
            self.fusion_reduce_b,
            self.tail_w,
            self.tail_b,
        ]);
        ids
    }
}

/// Register all parameters as tape leaves. Training runs on the branched
/// form only.
pub fn register_params<T: Scalar>(
    tape: &mut GradTape<T>,
    params: &NetParams<T>,
) -> Result<NetParamVars> {
    if params.mode != Mode::Branched {
        return Err(Error::Contract(
            "training requires branched-mode parameters".into(),
        ));
    }
    let bias_tensor = |b: &[T]| Tensor4::new([b.len(), 1, 1, 1], b.to_vec()).unwrap();
    let head_w = tape.leaf(params.head.weight().clone());
    let head_b = tape.leaf(bias_tensor(params.head.bias().unwrap()));
    let blocks = params
        .blocks
        .iter()
        .map(|b| match b {
            BlockParams::Branched(p) => repconv::register_block(tape, p),
            BlockParams::Fused(_) => unreachable!("mode checked above"),
        })
        .collect();
    let fusion_reduce_w = tape.leaf(params.fusion_reduce.weight().clone());
    let fusion_reduce_b = tape.leaf(bias_tensor(params.fusion_reduce.bias().unwrap()));
    let tail_w = tape.leaf(params.tail_compress.weight().clone());
    let tail_b = tape.leaf(bias_tensor(params.tail_compress.bias().unwrap()));
    Ok(NetParamVars {
        head_w,
        head_b,
        blocks,
        fusion_reduce_w,
        fusion_reduce_b,
        tail_w,
        tail_b,
    })
}

/// Traced single-frame forward (training pass, no clamp).
pub fn forward_frame_traced<T: Scalar>(
    tape: &mut GradTape<T>,
    x: VarId,
    vars: &NetParamVars,
    config: &NetConfig,
) -> Result<VarId> {
    let h = tape.conv2d(x, vars.head_w, Some(vars.head_b), 1)?;
    let f0 = tape.relu(h);
    let mut f = f0;
    for block in &vars.blocks {
        let b = repconv::forward_branched_traced(tape, f, block)?;
        f = tape.relu(b);
    }
    let cat = tape.concat_channels(f0, f)?;
    let fr = tape.conv2d(cat, vars.fusion_reduce_w, Some(vars.fusion_reduce_b), 0)?;
    let g = tape.relu(fr);
    let t = tape.conv2d(g, vars.tail_w, Some(vars.tail_b), 0)?;
    let mut y = tape.depth_to_space(t, config.scale)?;
    if config.global_residual {
        let up = tape.nearest_upsample(x, config.scale)?;
        y = tape.add(y, up)?;
    }
    Ok(y)
}

/// Traced clip forward via the batch reshape.
pub fn forward_clip_traced<T: Scalar>(
    tape: &mut GradTape<T>,
    clip: VarId,
    vars: &NetParamVars,
    config: &NetConfig,
) -> Result<VarId> {
    let [n, c, h, w] = tape.value(clip).dims();
    if c % RGB_CHANNELS != 0 {
        return Err(Error::Shape(format!(
            "clip channels {} not divisible by {}",
            c, RGB_CHANNELS
        )));
    }
    let frames = c / RGB_CHANNELS;
    let framed = tape.reshape(clip, [n * frames, RGB_CHANNELS, h, w])?;
    let out = forward_frame_traced(tape, framed, vars, config)?;
    let s = config.scale;
    tape.reshape(out, [n, c, h * s, w * s])
}

/// Replace every branched block by its fused conv. Everything else is
/// untouched; the result is forward-equivalent.
pub fn fuse_network<T: Scalar>(params: &NetParams<T>) -> Result<NetParams<T>> {
    if params.mode == Mode::Fused {
        return Err(Error::Contract("network is already fused".into()));
    }
    let blocks = params
        .blocks
        .iter()
        .map(|b| match b {
            BlockParams::Branched(p) => Ok(BlockParams::Fused(repconv::fuse_repconv(p)?)),
            BlockParams::Fused(_) => Err(Error::Contract(
                "branched-mode network contains a fused block".into(),
            )),
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(NetParams {
        config: params.config,
        head: params.head.clone(),
        blocks,
        fusion_reduce: params.fusion_reduce.clone(),
        tail_compress: params.tail_compress.clone(),
        mode: Mode::Fused,
    })
}

/// Per-layer FLOPs (2 * MACs) of one clip of `frames` frames at the given
/// input size. Spatial extents are preserved by every conv in the graph.
pub fn flops_breakdown(
    nc: usize,
    nb: usize,
    mode: Mode,
    h: usize,
    w: usize,
    frames: usize,
) -> Vec<(String, u64)> {
    let px = (h * w) as u64;
    let f = frames as u64;
    let nc = nc as u64;
    let conv = |c_out: u64, c_in: u64, k: u64| 2 * c_out * c_in * k * k * px * f;
    let mut layers = vec![("head".to_string(), conv(nc, RGB_CHANNELS as u64, 3))];
    for i in 0..nb {
        let block = match mode {
            Mode::Fused => conv(nc, nc, 3),
            Mode::Branched => {
                conv(4 * nc, nc, 1) + conv(4 * nc, 4 * nc, 3) + conv(nc, 4 * nc, 1) + conv(nc, nc, 1)
            }
        };
        layers.push((format!("block{i}"), block));
    }
    layers.push(("fusion_reduce".to_string(), conv(nc, 2 * nc, 1)));
    layers.push(("tail_compress".to_string(), conv(TAIL_CHANNELS as u64, nc, 1)));
    layers
}

/// Total FLOPs for one clip (see [`flops_breakdown`]).
pub fn count_flops(nc: usize, nb: usize, mode: Mode, h: usize, w: usize, frames: usize) -> u64 {
    flops_breakdown(nc, nb, mode, h, w, frames)
        .iter()
        .map(|(_, f)| f)
        .sum()
}

/// FLOPs of the block stack alone.
pub fn count_flops_block_stack(
    nc: usize,
    nb: usize,
    mode: Mode,
    h: usize,
    w: usize,
    frames: usize,
) -> u64 {
    flops_breakdown(nc, nb, mode, h, w, frames)
        .iter()
        .filter(|(name, _)| name.starts_with("block"))
        .map(|(_, f)| f)
        .sum()
}

/// Expected (name, dims) sequence of the canonical tensor layout for a
/// given architecture and mode. Biases are rank-1.
pub fn expected_tensor_layout(config: &NetConfig, mode: Mode) -> Vec<(String, Vec<usize>)> {
    let nc = config.nc;
    let conv = |name: &str, c_out: usize, c_in: usize, k: usize, bias: bool| {
        let mut v = vec![(format!("{name}.weight"), vec![c_out, c_in, k, k])];
        if bias {
            v.push((format!("{name}.bias"), vec![c_out]));
        }
        v
    };
    let mut out = conv("head", nc, RGB_CHANNELS, 3, true);
    for i in 0..config.nb {
        match mode {
            Mode::Branched => {
                out.extend(conv(&format!("block{i}.expand"), 4 * nc, nc, 1, false));
                out.extend(conv(&format!("block{i}.spatial"), 4 * nc, 4 * nc, 3, true));
                out.extend(conv(&format!("block{i}.reduce"), nc, 4 * nc, 1, true));
                out.extend(conv(&format!("block{i}.residual"), nc, nc, 1, true));
            }
            Mode::Fused => out.extend(conv(&format!("block{i}.fused"), nc, nc, 3, true)),
        }
    }
    out.extend(conv("fusion_reduce", nc, 2 * nc, 1, true));
    out.extend(conv("tail_compress", TAIL_CHANNELS, nc, 1, true));
    out
}

/// Rebuild a parameter set from flat data vectors in canonical order (the
/// inverse of serializing [`NetParams::tensor_views`]).
pub fn params_from_flat<T: Scalar>(
    config: NetConfig,
    mode: Mode,
    flats: Vec<Vec<T>>,
) -> Result<NetParams<T>> {
    config.validate()?;
    let layout = expected_tensor_layout(&config, mode);
    if flats.len() != layout.len() {
        return Err(Error::Shape(format!(
            "expected {} tensors, got {}",
            layout.len(),
            flats.len()
        )));
    }
    for ((name, dims), data) in layout.iter().zip(&flats) {
        let want: usize = dims.iter().product();
        if data.len() != want {
            return Err(Error::Shape(format!(
                "tensor {} has {} elements, expected {}",
                name,
                data.len(),
                want
            )));
        }
    }
    let nc = config.nc;
    let mut it = flats.into_iter();
    let mut conv = |c_out: usize, c_in: usize, k: usize, bias: bool, pad: usize| -> Result<ConvParams<T>> {
        let w = Tensor4::new([c_out, c_in, k, k], it.next().unwrap())?;
        let b = if bias { Some(it.next().unwrap()) } else { None };
        ConvParams::new(w, b, pad)
    };
    let head = conv(nc, RGB_CHANNELS, 3, true, 1)?;
    let mut blocks = Vec::with_capacity(config.nb);
    for _ in 0..config.nb {
        blocks.push(match mode {
            Mode::Branched => BlockParams::Branched(RepConvParams::new(
                conv(4 * nc, nc, 1, false, 0)?,
                conv(4 * nc, 4 * nc, 3, true, 1)?,
                conv(nc, 4 * nc, 1, true, 0)?,
                conv(nc, nc, 1, true, 0)?,
            )?),
            Mode::Fused => BlockParams::Fused(conv(nc, nc, 3, true, 1)?),
        });
    }
    let fusion_reduce = conv(nc, 2 * nc, 1, true, 0)?;
    let tail_compress = conv(TAIL_CHANNELS, nc, 1, true, 0)?;
    Ok(NetParams {
        config,
        head,
        blocks,
        fusion_reduce,
        tail_compress,
        mode,
    })
}

/// Exact element count of all weights and biases.
pub fn count_params<T: Scalar>(params: &NetParams<T>) -> u64 {
    params
        .tensor_views()
        .iter()
        .map(|(_, _, data)| data.len() as u64)
        .sum()
}
