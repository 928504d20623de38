//! The reparameterizable block: a 1x1 channel expansion (x4), a 3x3
//! spatial conv in the widened space, a 1x1 reduction back, and a learnable
//! 1x1 residual — linear end to end, so the whole block collapses exactly
//! into one 3x3 convolution for deployment.
//!
//! Exactness holds unconditionally because the expand conv carries no bias:
//! with zero padding on the interior 3x3, a nonzero first bias would be
//! absorbed into padded positions by the fused kernel but not by the
//! branched form.

use rand::Rng;

use crate::error::{Error, Result};
use crate::tensor::{self, ConvParams, GradTape, Scalar, Tensor4, VarId};

/// Deployment form of a block: one 3x3 conv, c -> c, pad 1, with bias.
pub type FusedConv<T> = ConvParams<T>;

/// Training-time parameters of one block over `c` trunk channels.
#[derive(Debug, Clone, PartialEq)]
pub struct RepConvParams<T> {
    expand: ConvParams<T>,
    spatial: ConvParams<T>,
    reduce: ConvParams<T>,
    residual: ConvParams<T>,
    c: usize,
}

impl<T: Scalar> RepConvParams<T> {
    pub fn new(
        expand: ConvParams<T>,
        spatial: ConvParams<T>,
        reduce: ConvParams<T>,
        residual: ConvParams<T>,
    ) -> Result<Self> {
        let c = expand.c_in();
        if expand.bias().is_some() {
            return Err(Error::Contract(
                "expand conv must be bias-free for exact fusion".into(),
            ));
        }
        if expand.kernel() != 1 || reduce.kernel() != 1 || residual.kernel() != 1 {
            return Err(Error::Contract(
                "expand/reduce/residual must be 1x1 convolutions".into(),
            ));
        }
        if spatial.kernel() != 3 || spatial.pad() != 1 {
            return Err(Error::Contract("spatial conv must be 3x3 with pad 1".into()));
        }
        if expand.pad() != 0 || reduce.pad() != 0 || residual.pad() != 0 {
            return Err(Error::Contract("1x1 convolutions must use pad 0".into()));
        }
        let wide = 4 * c;
        if expand.c_out() != wide
            || spatial.c_in() != wide
            || spatial.c_out() != wide
            || reduce.c_in() != wide
            || reduce.c_out() != c
            || residual.c_in() != c
            || residual.c_out() != c
        {
            return Err(Error::Shape(format!(
                "block channel arithmetic broken for c={}: expand {}->{}, spatial {}->{}, reduce {}->{}, residual {}->{}",
                c,
                expand.c_in(), expand.c_out(),
                spatial.c_in(), spatial.c_out(),
                reduce.c_in(), reduce.c_out(),
                residual.c_in(), residual.c_out(),
            )));
        }
        Ok(Self {
            expand,
            spatial,
            reduce,
            residual,
            c,
        })
    }

    pub fn init<R: Rng>(rng: &mut R, c: usize) -> Result<Self> {
        let wide = 4 * c;
        Self::new(
            ConvParams::init_he(rng, wide, c, 1, 0, false)?,
            ConvParams::init_he(rng, wide, wide, 3, 1, true)?,
            ConvParams::init_he(rng, c, wide, 1, 0, true)?,
            ConvParams::init_he(rng, c, c, 1, 0, true)?,
        )
    }

    pub fn channels(&self) -> usize {
        self.c
    }

    pub fn expand(&self) -> &ConvParams<T> {
        &self.expand
    }

    pub fn spatial(&self) -> &ConvParams<T> {
        &self.spatial
    }

    pub fn reduce(&self) -> &ConvParams<T> {
        &self.reduce
    }

    pub fn residual(&self) -> &ConvParams<T> {
        &self.residual
    }

    pub fn expand_mut(&mut self) -> &mut ConvParams<T> {
        &mut self.expand
    }

    pub fn spatial_mut(&mut self) -> &mut ConvParams<T> {
        &mut self.spatial
    }

    pub fn reduce_mut(&mut self) -> &mut ConvParams<T> {
        &mut self.reduce
    }

    pub fn residual_mut(&mut self) -> &mut ConvParams<T> {
        &mut self.residual
    }

    /// Split mutable borrow of all four branches, in canonical order.
    pub fn branches_mut(
        &mut self,
    ) -> (
        &mut ConvParams<T>,
        &mut ConvParams<T>,
        &mut ConvParams<T>,
        &mut ConvParams<T>,
    ) {
        (
            &mut self.expand,
            &mut self.spatial,
            &mut self.reduce,
            &mut self.residual,
        )
    }

    pub fn cast<U: Scalar>(&self) -> RepConvParams<U> {
        RepConvParams {
            expand: self.expand.cast(),
            spatial: self.spatial.cast(),
            reduce: self.reduce.cast(),
            residual: self.residual.cast(),
            c: self.c,
        }
    }
}

/// Branched forward: `reduce(spatial(expand(x))) + residual(x)`.
/// No nonlinearity inside the block; the network applies ReLU after it.
pub fn forward_branched<T: Scalar>(x: &Tensor4<T>, p: &RepConvParams<T>) -> Result<Tensor4<T>> {
    if x.c() != p.c {
        return Err(Error::Shape(format!(
            "repconv expects {} channels, input has {}",
            p.c,
            x.c()
        )));
    }
    let main = tensor::conv2d(
        &tensor::conv2d(&tensor::conv2d(x, &p.expand)?, &p.spatial)?,
        &p.reduce,
    )?;
    tensor::add(&main, &tensor::conv2d(x, &p.residual)?)
}

/// Tape vars for one branched block (expand is bias-free by construction).
#[derive(Debug, Clone)]
pub struct RepConvVars {
    pub expand_w: VarId,
    pub spatial_w: VarId,
    pub spatial_b: VarId,
    pub reduce_w: VarId,
    pub reduce_b: VarId,
    pub residual_w: VarId,
    pub residual_b: VarId,
}

pub fn register_block<T: Scalar>(tape: &mut GradTape<T>, p: &RepConvParams<T>) -> RepConvVars {
    let bias_tensor = |b: &[T]| Tensor4::new([b.len(), 1, 1, 1], b.to_vec()).unwrap();
    RepConvVars {
        expand_w: tape.leaf(p.expand.weight().clone()),
        spatial_w: tape.leaf(p.spatial.weight().clone()),
        spatial_b: tape.leaf(bias_tensor(p.spatial.bias().unwrap())),
        reduce_w: tape.leaf(p.reduce.weight().clone()),
        reduce_b: tape.leaf(bias_tensor(p.reduce.bias().unwrap())),
        residual_w: tape.leaf(p.residual.weight().clone()),
        residual_b: tape.leaf(bias_tensor(p.residual.bias().unwrap())),
    }
}

pub fn forward_branched_traced<T: Scalar>(
    tape: &mut GradTape<T>,
    x: VarId,
    vars: &RepConvVars,
) -> Result<VarId> {
    let e = tape.conv2d(x, vars.expand_w, None, 0)?;
    let s = tape.conv2d(e, vars.spatial_w, Some(vars.spatial_b), 1)?;
    let m = tape.conv2d(s, vars.reduce_w, Some(vars.reduce_b), 0)?;
    let r = tape.conv2d(x, vars.residual_w, Some(vars.residual_b), 0)?;
    tape.add(m, r)
}

/// Fold a bias-free 1x1 conv into the 3x3 that follows it.
///
/// `W'[o,i,u,v] = sum_m W2[o,m,u,v] * W1[m,i]`, bias stays `b2`. Exact for
/// all inputs, borders included, because the 1x1 maps padded zeros to zero.
pub fn fuse_1x1_into_3x3<T: Scalar>(
    first: &ConvParams<T>,
    second: &ConvParams<T>,
) -> Result<ConvParams<T>> {
    if first.kernel() != 1 {
        return Err(Error::Contract("first conv must be 1x1".into()));
    }
    if first.bias().is_some() {
        return Err(Error::Contract(
            "first conv must be bias-free for exact fusion".into(),
        ));
    }
    if first.c_out() != second.c_in() {
        return Err(Error::Shape(format!(
            "channel mismatch: first outputs {}, second expects {}",
            first.c_out(),
            second.c_in()
        )));
    }
    let k = second.kernel();
    let (c_out, mid, c_in) = (second.c_out(), second.c_in(), first.c_in());
    let mut weight = Tensor4::zeros([c_out, c_in, k, k]);
    for o in 0..c_out {
        for i in 0..c_in {
            for u in 0..k {
                for v in 0..k {
                    let mut s = T::zero();
                    for m in 0..mid {
                        s = s + second.weight().at(o, m, u, v) * first.weight().at(m, i, 0, 0);
                    }
                    weight.set(o, i, u, v, s);
                }
            }
        }
    }
    let bias = second
        .bias()
        .map(|b| b.to_vec())
        .unwrap_or_else(|| vec![T::zero(); c_out]);
    ConvParams::new(weight, Some(bias), second.pad())
}

/// Fold a 1x1 conv onto the output of the 3x3 that precedes it.
///
/// `W'[o,i,u,v] = sum_m W3[o,m] * W2[m,i,u,v]`,
/// `b'[o] = sum_m W3[o,m] * b2[m] + b3[o]`. Exact everywhere: a 1x1 second
/// conv has no spatial extent, hence no padding interaction.
pub fn fuse_3x3_into_1x1<T: Scalar>(
    first: &ConvParams<T>,
    second: &ConvParams<T>,
) -> Result<ConvParams<T>> {
    if second.kernel() != 1 {
        return Err(Error::Contract("second conv must be 1x1".into()));
    }
    if first.c_out() != second.c_in() {
        return Err(Error::Shape(format!(
            "channel mismatch: first outputs {}, second expects {}",
            first.c_out(),
            second.c_in()
        )));
    }
    let k = first.kernel();
    let (c_out, mid, c_in) = (second.c_out(), second.c_in(), first.c_in());
    let mut weight = Tensor4::zeros([c_out, c_in, k, k]);
    for o in 0..c_out {
        for i in 0..c_in {
            for u in 0..k {
                for v in 0..k {
                    let mut s = T::zero();
                    for m in 0..mid {
                        s = s + second.weight().at(o, m, 0, 0) * first.weight().at(m, i, u, v);
                    }
                    weight.set(o, i, u, v, s);
                }
            }
        }
    }
    let mut bias = vec![T::zero(); c_out];
    for (o, slot) in bias.iter_mut().enumerate() {
        let mut s = T::zero();
        if let Some(b2) = first.bias() {
            for m in 0..mid {
                s = s + second.weight().at(o, m, 0, 0) * b2[m];
            }
        }
        if let Some(b3) = second.bias() {
            s = s + b3[o];
        }
        *slot = s;
    }
    ConvParams::new(weight, Some(bias), first.pad())
}

/// Embed a 1x1 conv as a 3x3 Dirac-style kernel (the only nonzero tap is
/// the center), pad 1. Equivalent output for every input.
pub fn embed_1x1_as_3x3<T: Scalar>(p: &ConvParams<T>) -> Result<ConvParams<T>> {
    if p.kernel() != 1 {
        return Err(Error::Contract("embed_1x1_as_3x3 expects a 1x1 conv".into()));
    }
    let (c_out, c_in) = (p.c_out(), p.c_in());
    let mut weight = Tensor4::zeros([c_out, c_in, 3, 3]);
    for o in 0..c_out {
        for i in 0..c_in {
            weight.set(o, i, 1, 1, p.weight().at(o, i, 0, 0));
        }
    }
    ConvParams::new(weight, p.bias().map(|b| b.to_vec()), 1)
}

/// Elementwise sum of two conv parameter sets of identical geometry; a
/// missing bias on either side counts as zero.
pub fn add_kernels<T: Scalar>(a: &ConvParams<T>, b: &ConvParams<T>) -> Result<ConvParams<T>> {
    if a.weight().dims() != b.weight().dims() || a.pad() != b.pad() {
        return Err(Error::Shape(format!(
            "add_kernels geometry mismatch: {:?}/pad{} vs {:?}/pad{}",
            a.weight().dims(),
            a.pad(),
            b.weight().dims(),
            b.pad()
        )));
    }
    let weight = tensor::add(a.weight(), b.weight())?;
    let bias = match (a.bias(), b.bias()) {
        (None, None) => None,
        (x, y) => {
            let c = a.c_out();
            let mut s = vec![T::zero(); c];
            for (i, v) in s.iter_mut().enumerate() {
                *v = x.map_or(T::zero(), |b| b[i]) + y.map_or(T::zero(), |b| b[i]);
            }
            Some(s)
        }
    };
    ConvParams::new(weight, bias, a.pad())
}

/// Collapse a whole block into its deployment conv:
/// `(expand ∘ spatial ∘ reduce) ⊕ residual` as one 3x3 kernel.
pub fn fuse_repconv<T: Scalar>(p: &RepConvParams<T>) -> Result<FusedConv<T>> {
    let main = fuse_3x3_into_1x1(&fuse_1x1_into_3x3(&p.expand, &p.spatial)?, &p.reduce)?;
    add_kernels(&main, &embed_1x1_as_3x3(&p.residual)?)
}
