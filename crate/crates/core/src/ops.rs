//! The bivariate primitive operations a cell step chooses from.
//!
//! Every operation maps two `(N, C, L)` tensors to one of the same shape.
//! Graph-level kernels (`*_var`) are used by the search and evaluation
//! networks; the tensor-level functions evaluate a single op eagerly.

use std::fmt;
use std::str::FromStr;

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::autograd::{Graph, Var};
use crate::error::{FusionError, Result};
use crate::params::fan_in_uniform;
use crate::scalar::Scalar;
use crate::tensor::Tensor;

/// The operation pool. Declaration order is the index order used for the
/// op-selection logits and for argmax tie-breaking.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PrimitiveOpKind {
    Zero,
    Sum,
    Attention,
    LinearGlu,
    ConcatFc,
}

impl PrimitiveOpKind {
    pub const ALL: [PrimitiveOpKind; 5] = [
        PrimitiveOpKind::Zero,
        PrimitiveOpKind::Sum,
        PrimitiveOpKind::Attention,
        PrimitiveOpKind::LinearGlu,
        PrimitiveOpKind::ConcatFc,
    ];

    pub const COUNT: usize = Self::ALL.len();

    pub fn index(self) -> usize {
        self as usize
    }

    pub fn from_index(i: usize) -> Option<Self> {
        Self::ALL.get(i).copied()
    }

    pub fn name(self) -> &'static str {
        match self {
            PrimitiveOpKind::Zero => "Zero",
            PrimitiveOpKind::Sum => "Sum",
            PrimitiveOpKind::Attention => "Attention",
            PrimitiveOpKind::LinearGlu => "LinearGLU",
            PrimitiveOpKind::ConcatFc => "ConcatFC",
        }
    }

    /// Trainable scalars the op owns at channel width `c`.
    pub fn param_count(self, c: usize) -> usize {
        match self {
            PrimitiveOpKind::LinearGlu => 2 * c * c,
            PrimitiveOpKind::ConcatFc => 2 * c * c + c,
            _ => 0,
        }
    }
}

impl fmt::Display for PrimitiveOpKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for PrimitiveOpKind {
    type Err = FusionError;

    fn from_str(s: &str) -> Result<Self> {
        let key = s.to_ascii_lowercase().replace(['_', '-'], "");
        Self::ALL
            .into_iter()
            .find(|k| k.name().to_ascii_lowercase() == key)
            .ok_or_else(|| FusionError::InvalidArgument(format!("unknown primitive op `{s}`")))
    }
}

/// `W1, W2: (C, C)`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(bound = "T: Scalar")]
pub struct GluParams<T> {
    pub w1: Tensor<T>,
    pub w2: Tensor<T>,
}

/// `W: (2C, C)`, `b: (C)`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(bound = "T: Scalar")]
pub struct ConcatFcParams<T> {
    pub w: Tensor<T>,
    pub b: Tensor<T>,
}

impl<T: Scalar> GluParams<T> {
    pub fn init<R: Rng + ?Sized>(c: usize, rng: &mut R) -> Self {
        Self {
            w1: fan_in_uniform(&[c, c], c, rng),
            w2: fan_in_uniform(&[c, c], c, rng),
        }
    }

    fn check(&self, c: usize) -> Result<()> {
        if self.w1.shape() != [c, c] || self.w2.shape() != [c, c] {
            return Err(FusionError::shape(
                "linear_glu params",
                format!("W1 {:?}, W2 {:?} for C = {c}", self.w1.shape(), self.w2.shape()),
            ));
        }
        Ok(())
    }
}

impl<T: Scalar> ConcatFcParams<T> {
    pub fn init<R: Rng + ?Sized>(c: usize, rng: &mut R) -> Self {
        Self {
            w: fan_in_uniform(&[2 * c, c], 2 * c, rng),
            b: fan_in_uniform(&[c], 2 * c, rng),
        }
    }

    fn check(&self, c: usize) -> Result<()> {
        if self.w.shape() != [2 * c, c] || self.b.shape() != [c] {
            return Err(FusionError::shape(
                "concat_fc params",
                format!("W {:?}, b {:?} for C = {c}", self.w.shape(), self.b.shape()),
            ));
        }
        Ok(())
    }
}

/// Parameters of every parameterized candidate op of one step.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(bound = "T: Scalar")]
pub struct StepOpParams<T> {
    pub glu: GluParams<T>,
    pub concat_fc: ConcatFcParams<T>,
}

impl<T: Scalar> StepOpParams<T> {
    pub fn init<R: Rng + ?Sized>(c: usize, rng: &mut R) -> Self {
        Self {
            glu: GluParams::init(c, rng),
            concat_fc: ConcatFcParams::init(c, rng),
        }
    }
}

/// Graph handles for the parameters an op needs.
#[derive(Clone, Copy, Debug, Default)]
pub struct OpVars {
    pub glu: Option<(Var, Var)>,
    pub concat_fc: Option<(Var, Var)>,
}

impl OpVars {
    pub fn bind<T: Scalar>(g: &mut Graph<T>, params: &StepOpParams<T>) -> Self {
        Self {
            glu: Some((g.constant(params.glu.w1.clone()), g.constant(params.glu.w2.clone()))),
            concat_fc: Some((
                g.constant(params.concat_fc.w.clone()),
                g.constant(params.concat_fc.b.clone()),
            )),
        }
    }
}

fn same_shape<T: Scalar>(g: &Graph<T>, x: Var, y: Var, op: &str) -> Result<()> {
    g.value(x).expect_same_shape(g.value(y), op)?;
    g.value(x).ncl().map(|_| ())
}

pub fn zero_var<T: Scalar>(g: &mut Graph<T>, x: Var, y: Var) -> Result<Var> {
    same_shape(g, x, y, "zero")?;
    Ok(g.zeros_like(x))
}

pub fn sum_var<T: Scalar>(g: &mut Graph<T>, x: Var, y: Var) -> Result<Var> {
    same_shape(g, x, y, "sum")?;
    g.add(x, y)
}

pub fn attention_var<T: Scalar>(g: &mut Graph<T>, x: Var, y: Var) -> Result<Var> {
    same_shape(g, x, y, "attention")?;
    g.attention(x, y)
}

/// `x W1 ⊙ sigmoid(y W2)` with the maps acting on channels.
pub fn linear_glu_var<T: Scalar>(g: &mut Graph<T>, x: Var, y: Var, w1: Var, w2: Var) -> Result<Var> {
    same_shape(g, x, y, "linear_glu")?;
    let (_, c, _) = g.value(x).ncl()?;
    if g.shape(w1) != [c, c] || g.shape(w2) != [c, c] {
        return Err(FusionError::shape(
            "linear_glu params",
            format!("W1 {:?}, W2 {:?} for C = {c}", g.shape(w1), g.shape(w2)),
        ));
    }
    let a = g.channel_linear(x, w1)?;
    let b = g.channel_linear(y, w2)?;
    let gate = g.sigmoid(b);
    g.mul(a, gate)
}

/// `ReLU(concat(x, y) W + b)` with concatenation along channels.
pub fn concat_fc_var<T: Scalar>(g: &mut Graph<T>, x: Var, y: Var, w: Var, b: Var) -> Result<Var> {
    same_shape(g, x, y, "concat_fc")?;
    let (_, c, _) = g.value(x).ncl()?;
    if g.shape(w) != [2 * c, c] || g.shape(b) != [c] {
        return Err(FusionError::shape(
            "concat_fc params",
            format!("W {:?}, b {:?} for C = {c}", g.shape(w), g.shape(b)),
        ));
    }
    let cat = g.concat_channels(x, y)?;
    let z = g.channel_linear(cat, w)?;
    let z = g.channel_bias(z, b)?;
    Ok(g.relu(z))
}

/// Dispatches on `kind`. Parameterized ops fail if their handles are absent.
pub fn apply_op<T: Scalar>(g: &mut Graph<T>, kind: PrimitiveOpKind, x: Var, y: Var, vars: &OpVars) -> Result<Var> {
    let missing = || FusionError::InvalidArgument(format!("{kind} requires parameters that were not provided"));
    match kind {
        PrimitiveOpKind::Zero => zero_var(g, x, y),
        PrimitiveOpKind::Sum => sum_var(g, x, y),
        PrimitiveOpKind::Attention => attention_var(g, x, y),
        PrimitiveOpKind::LinearGlu => {
            let (w1, w2) = vars.glu.ok_or_else(missing)?;
            linear_glu_var(g, x, y, w1, w2)
        }
        PrimitiveOpKind::ConcatFc => {
            let (w, b) = vars.concat_fc.ok_or_else(missing)?;
            concat_fc_var(g, x, y, w, b)
        }
    }
}

fn eager<T: Scalar>(x: &Tensor<T>, y: &Tensor<T>, f: impl FnOnce(&mut Graph<T>, Var, Var) -> Result<Var>) -> Result<Tensor<T>> {
    let mut g = Graph::new();
    let xv = g.constant(x.clone());
    let yv = g.constant(y.clone());
    let out = f(&mut g, xv, yv)?;
    Ok(g.value(out).clone())
}

pub fn zero_op<T: Scalar>(x: &Tensor<T>, y: &Tensor<T>) -> Result<Tensor<T>> {
    eager(x, y, zero_var)
}

pub fn sum_op<T: Scalar>(x: &Tensor<T>, y: &Tensor<T>) -> Result<Tensor<T>> {
    eager(x, y, sum_var)
}

pub fn attention_op<T: Scalar>(x: &Tensor<T>, y: &Tensor<T>) -> Result<Tensor<T>> {
    eager(x, y, attention_var)
}

pub fn linear_glu_op<T: Scalar>(x: &Tensor<T>, y: &Tensor<T>, params: &GluParams<T>) -> Result<Tensor<T>> {
    params.check(x.ncl()?.1)?;
    eager(x, y, |g, xv, yv| {
        let w1 = g.constant(params.w1.clone());
        let w2 = g.constant(params.w2.clone());
        linear_glu_var(g, xv, yv, w1, w2)
    })
}

pub fn concat_fc_op<T: Scalar>(x: &Tensor<T>, y: &Tensor<T>, params: &ConcatFcParams<T>) -> Result<Tensor<T>> {
    params.check(x.ncl()?.1)?;
    eager(x, y, |g, xv, yv| {
        let w = g.constant(params.w.clone());
        let b = g.constant(params.b.clone());
        concat_fc_var(g, xv, yv, w, b)
    })
}
