//! Reshaping raw unimodal features into the common `(N, C, L)` layout.
//!
//! The pipeline runs in a fixed order: mean-pool every spatial axis, then
//! linearly interpolate the temporal axis to the target length (a feature
//! with no temporal axis is a length-1 sequence), then apply a learned
//! affine map on the channel axis. The first two stages have no parameters,
//! so [`prepare_feature`] can run them once per dataset; only the channel
//! map is part of the trainable network.

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::autograd::{Graph, Var};
use crate::error::{FusionError, Result};
use crate::params::fan_in_uniform;
use crate::scalar::Scalar;
use crate::tensor::Tensor;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum AxisRole {
    Batch,
    Channel,
    Temporal,
    Spatial,
}

/// One backbone output for a batch of samples.
#[derive(Clone, Debug, PartialEq)]
pub struct RawFeature<T> {
    pub modality: String,
    pub index: usize,
    pub tensor: Tensor<T>,
    pub axis_roles: Vec<AxisRole>,
}

/// Shape and axis layout of one feature, per sample (the batch axis is
/// implicit and leads).
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct FeatureSpec {
    pub modality: String,
    pub index: usize,
    pub shape: Vec<usize>,
    pub axes: Vec<AxisRole>,
}

impl FeatureSpec {
    pub fn new(modality: impl Into<String>, index: usize, shape: Vec<usize>, axes: Vec<AxisRole>) -> Self {
        Self {
            modality: modality.into(),
            index,
            shape,
            axes,
        }
    }

    /// Conventional layout: `[C]` for vectors, `[C, T]` for sequences.
    pub fn sequence(modality: impl Into<String>, index: usize, channels: usize, length: Option<usize>) -> Self {
        match length {
            Some(t) => Self::new(modality, index, vec![channels, t], vec![AxisRole::Channel, AxisRole::Temporal]),
            None => Self::new(modality, index, vec![channels], vec![AxisRole::Channel]),
        }
    }

    /// Display name, 1-based: `Video_3`.
    pub fn label(&self) -> String {
        format!("{}_{}", self.modality, self.index + 1)
    }

    pub fn channels(&self) -> Result<usize> {
        let layout = Layout::from_roles(&self.full_shape(1), &self.full_roles())?;
        Ok(layout.channels)
    }

    pub fn full_shape(&self, batch: usize) -> Vec<usize> {
        std::iter::once(batch).chain(self.shape.iter().copied()).collect()
    }

    pub fn full_roles(&self) -> Vec<AxisRole> {
        std::iter::once(AxisRole::Batch).chain(self.axes.iter().copied()).collect()
    }

    pub fn validate(&self) -> Result<()> {
        Layout::from_roles(&self.full_shape(1), &self.full_roles()).map(|_| ())
    }
}

/// Resolved axis positions of a raw tensor.
#[derive(Clone, Debug)]
struct Layout {
    batch_axis: usize,
    channel_axis: usize,
    temporal_axis: Option<usize>,
    batch: usize,
    channels: usize,
    length: usize,
    spatial_size: usize,
}

impl Layout {
    fn from_roles(shape: &[usize], roles: &[AxisRole]) -> Result<Self> {
        let bad = |msg: String| Err(FusionError::shape("raw feature", msg));
        if shape.len() != roles.len() {
            return bad(format!("{} axes but {} roles", shape.len(), roles.len()));
        }
        if !(2..=5).contains(&shape.len()) {
            return bad(format!("rank {} outside 2..=5", shape.len()));
        }
        if let Some(pos) = shape.iter().position(|&d| d == 0) {
            return bad(format!("axis {pos} has zero length"));
        }
        let find = |role: AxisRole| -> Vec<usize> {
            roles.iter().enumerate().filter(|(_, &r)| r == role).map(|(i, _)| i).collect()
        };
        let batch = find(AxisRole::Batch);
        let channel = find(AxisRole::Channel);
        let temporal = find(AxisRole::Temporal);
        if batch.len() != 1 {
            return bad(format!("expected exactly one batch axis, found {}", batch.len()));
        }
        if channel.len() != 1 {
            return bad(format!("expected exactly one channel axis, found {}", channel.len()));
        }
        if temporal.len() > 1 {
            return bad(format!("at most one temporal axis is supported, found {}", temporal.len()));
        }
        let spatial_size = find(AxisRole::Spatial).iter().map(|&i| shape[i]).product();
        Ok(Self {
            batch_axis: batch[0],
            channel_axis: channel[0],
            temporal_axis: temporal.first().copied(),
            batch: shape[batch[0]],
            channels: shape[channel[0]],
            length: temporal.first().map_or(1, |&i| shape[i]),
            spatial_size,
        })
    }
}

/// Spatial mean-pool: returns `(N, C, T)` where `T` is the raw temporal
/// length (1 when there is no temporal axis).
fn pool_spatial<T: Scalar>(raw: &RawFeature<T>, layout: &Layout) -> Tensor<T> {
    let (n, c, t) = (layout.batch, layout.channels, layout.length);
    let mut out = vec![T::zero(); n * c * t];
    let shape = raw.tensor.shape();
    let mut index = vec![0usize; shape.len()];
    for &v in raw.tensor.data() {
        let b = index[layout.batch_axis];
        let ch = index[layout.channel_axis];
        let tt = layout.temporal_axis.map_or(0, |a| index[a]);
        let o = (b * c + ch) * t + tt;
        out[o] = out[o] + v;
        for axis in (0..shape.len()).rev() {
            index[axis] += 1;
            if index[axis] < shape[axis] {
                break;
            }
            index[axis] = 0;
        }
    }
    let inv = T::one() / T::of(layout.spatial_size as f64);
    out.iter_mut().for_each(|v| *v = *v * inv);
    Tensor::new(vec![n, c, t], out).expect("pooled shape")
}

/// Endpoint-aligned linear interpolation of the last axis of `(N, C, T)`
/// to `target_l` positions. Output position `i` samples the input at
/// `i * (T - 1) / (target_l - 1)`; a single output position samples 0.
pub fn interpolate_length<T: Scalar>(x: &Tensor<T>, target_l: usize) -> Result<Tensor<T>> {
    let (n, c, t) = x.ncl()?;
    if target_l == 0 {
        return Err(FusionError::InvalidArgument("target length must be positive".into()));
    }
    if t == target_l {
        return Ok(x.clone());
    }
    let weights: Vec<(usize, usize, T)> = (0..target_l)
        .map(|i| {
            if t == 1 || target_l == 1 {
                return (0, 0, T::zero());
            }
            let pos = i as f64 * (t - 1) as f64 / (target_l - 1) as f64;
            let lo = (pos.floor() as usize).min(t - 1);
            let hi = (lo + 1).min(t - 1);
            (lo, hi, T::of(pos - lo as f64))
        })
        .collect();
    let mut out = Vec::with_capacity(n * c * target_l);
    for row in x.data().chunks(t) {
        for &(lo, hi, frac) in &weights {
            out.push(row[lo] * (T::one() - frac) + row[hi] * frac);
        }
    }
    Tensor::new(vec![n, c, target_l], out)
}

/// Parameter-free stages of the adapter: spatial pooling followed by
/// temporal interpolation. Output is `(N, C_raw, target_l)`.
pub fn prepare_feature<T: Scalar>(raw: &RawFeature<T>, target_l: usize) -> Result<Tensor<T>> {
    let layout = Layout::from_roles(raw.tensor.shape(), &raw.axis_roles)?;
    if !raw.tensor.all_finite() {
        return Err(FusionError::NonFinite(format!(
            "raw feature {}_{}",
            raw.modality,
            raw.index + 1
        )));
    }
    let pooled = pool_spatial(raw, &layout);
    interpolate_length(&pooled, target_l)
}

/// Learned channel map of one feature: `out = x W + b` on the channel axis.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(bound = "T: Scalar")]
pub struct AdapterParams<T> {
    /// `(C_raw, C)`.
    pub weight: Tensor<T>,
    /// `(C)`.
    pub bias: Tensor<T>,
}

impl<T: Scalar> AdapterParams<T> {
    pub fn identity(c: usize) -> Self {
        Self {
            weight: Tensor::identity(c),
            bias: Tensor::zeros(&[c]),
        }
    }

    pub fn init<R: Rng + ?Sized>(raw_channels: usize, target_c: usize, rng: &mut R) -> Self {
        Self {
            weight: fan_in_uniform(&[raw_channels, target_c], raw_channels, rng),
            bias: fan_in_uniform(&[target_c], raw_channels, rng),
        }
    }

    pub fn num_params(&self) -> usize {
        self.weight.len() + self.bias.len()
    }
}

/// Applies the channel map inside a graph.
pub fn adapter_forward<T: Scalar>(g: &mut Graph<T>, prepared: Var, weight: Var, bias: Var) -> Result<Var> {
    let mapped = g.channel_linear(prepared, weight)?;
    g.channel_bias(mapped, bias)
}

/// Full pipeline for one feature.
pub fn reshape_feature<T: Scalar>(
    raw: &RawFeature<T>,
    target_c: usize,
    target_l: usize,
    params: &AdapterParams<T>,
) -> Result<Tensor<T>> {
    if target_c == 0 || target_l == 0 {
        return Err(FusionError::InvalidArgument("target C and L must be positive".into()));
    }
    let prepared = prepare_feature(raw, target_l)?;
    let (_, c_raw, _) = prepared.ncl()?;
    if params.weight.shape() != [c_raw, target_c] || params.bias.shape() != [target_c] {
        return Err(FusionError::shape(
            "reshape_feature",
            format!(
                "adapter weight {:?} / bias {:?} do not map {c_raw} -> {target_c}",
                params.weight.shape(),
                params.bias.shape()
            ),
        ));
    }
    let mut g = Graph::new();
    let x = g.constant(prepared);
    let w = g.constant(params.weight.clone());
    let b = g.constant(params.bias.clone());
    let out = adapter_forward(&mut g, x, w, b)?;
    Ok(g.value(out).clone())
}

#[cfg(test)]
mod tests {
    use super::*;
    use AxisRole::*;

    fn raw(shape: &[usize], roles: &[AxisRole], f: impl FnMut(&[usize]) -> f64) -> RawFeature<f64> {
        RawFeature {
            modality: "A".into(),
            index: 0,
            tensor: Tensor::from_fn(shape, f),
            axis_roles: roles.to_vec(),
        }
    }

    #[test]
    fn video_block_is_spatially_averaged() {
        let r = raw(&[2, 4, 8, 3, 3], &[Batch, Channel, Temporal, Spatial, Spatial], |ix| {
            (ix[0] * 1000 + ix[1] * 100 + ix[2] * 10 + ix[3] * 3 + ix[4]) as f64
        });
        let out = reshape_feature(&r, 4, 8, &AdapterParams::identity(4)).unwrap();
        assert_eq!(out.shape(), &[2, 4, 8]);
        // mean of ix[3]*3 + ix[4] over a 3x3 grid is 4.
        for n in 0..2 {
            for c in 0..4 {
                for t in 0..8 {
                    let expected = (n * 1000 + c * 100 + t * 10) as f64 + 4.0;
                    assert!((out.get(&[n, c, t]) - expected).abs() < 1e-12);
                }
            }
        }
    }

    #[test]
    fn vector_feature_is_replicated_along_length() {
        let r = raw(&[1, 3], &[Batch, Channel], |ix| ix[1] as f64 + 0.5);
        let out = reshape_feature(&r, 3, 4, &AdapterParams::identity(3)).unwrap();
        assert_eq!(out.shape(), &[1, 3, 4]);
        for c in 0..3 {
            for l in 0..4 {
                assert_eq!(out.get(&[0, c, l]), c as f64 + 0.5);
            }
        }
    }

    #[test]
    fn interpolation_and_channel_scaling_match_hand_values() {
        // channels: [1, 2, 3, 4] and [10, 20, 30, 40]; L 4 -> 2 samples positions 0 and 3.
        let r = raw(&[1, 2, 4], &[Batch, Channel, Temporal], |ix| {
            (ix[2] + 1) as f64 * if ix[1] == 0 { 1.0 } else { 10.0 }
        });
        let params = AdapterParams {
            weight: Tensor::from_f64(&[2, 2], &[1.0, 0.0, 0.0, 2.0]).unwrap(),
            bias: Tensor::zeros(&[2]),
        };
        let out = reshape_feature(&r, 2, 2, &params).unwrap();
        assert_eq!(out.data(), &[1.0, 4.0, 20.0, 80.0]);

        // L 4 -> 3 samples positions 0, 1.5, 3.
        let out3 = reshape_feature(&r, 2, 3, &params).unwrap();
        assert_eq!(out3.data(), &[1.0, 2.5, 4.0, 20.0, 50.0, 80.0]);

        // L 4 -> 6 samples positions 0, 0.6, 1.2, 1.8, 2.4, 3 of channel 0.
        let up = interpolate_length(&prepare_feature(&r, 4).unwrap(), 6).unwrap();
        let expected = [1.0, 1.6, 2.2, 2.8, 3.4, 4.0];
        for (l, e) in expected.iter().enumerate() {
            assert!((up.get(&[0, 0, l]) - e).abs() < 1e-12);
        }
    }

    #[test]
    fn channel_axis_may_come_last() {
        let r = raw(&[2, 5, 3], &[Batch, Temporal, Channel], |ix| (ix[1] * 3 + ix[2]) as f64);
        let p = prepare_feature(&r, 5).unwrap();
        assert_eq!(p.shape(), &[2, 3, 5]);
        assert_eq!(p.get(&[1, 2, 4]), 14.0);
    }

    #[test]
    fn rejects_missing_channel_axis() {
        let r = raw(&[2, 3], &[Batch, Temporal], |_| 0.0);
        assert!(prepare_feature(&r, 3).is_err());
    }

    #[test]
    fn rejects_non_finite_values() {
        let r = raw(&[1, 2], &[Batch, Channel], |ix| if ix[1] == 1 { f64::NAN } else { 0.0 });
        assert!(matches!(prepare_feature(&r, 1), Err(FusionError::NonFinite(_))));
    }

    #[test]
    fn rejects_two_batch_axes() {
        let r = raw(&[2, 3, 2], &[Batch, Channel, Batch], |_| 0.0);
        assert!(prepare_feature(&r, 1).is_err());
    }
}
