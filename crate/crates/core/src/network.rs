//! Task head, losses, and the discrete fusion network built from a genotype.

use std::collections::BTreeMap;

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::autograd::{Graph, Var};
use crate::cell::cell_discrete_var;
use crate::error::{FusionError, Result};
use crate::feature_adapter::{adapter_forward, AdapterParams};
use crate::genotype::Genotype;
use crate::ops::{ConcatFcParams, GluParams, OpVars, PrimitiveOpKind};
use crate::params::{fan_in_uniform, Binding, ParamGroup, ParamId, ParamStore};
use crate::scalar::Scalar;
use crate::tensor::Tensor;

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TaskMode {
    #[default]
    Multiclass,
    Multilabel,
}

/// Targets of a split.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Labels {
    Multiclass(Vec<usize>),
    Multilabel(Vec<Vec<bool>>),
}

impl Labels {
    pub fn len(&self) -> usize {
        match self {
            Labels::Multiclass(v) => v.len(),
            Labels::Multilabel(v) => v.len(),
        }
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn mode(&self) -> TaskMode {
        match self {
            Labels::Multiclass(_) => TaskMode::Multiclass,
            Labels::Multilabel(_) => TaskMode::Multilabel,
        }
    }

    pub fn select(&self, rows: &[usize]) -> Self {
        match self {
            Labels::Multiclass(v) => Labels::Multiclass(rows.iter().map(|&r| v[r]).collect()),
            Labels::Multilabel(v) => Labels::Multilabel(rows.iter().map(|&r| v[r].clone()).collect()),
        }
    }

    pub fn concat(&self, other: &Self) -> Result<Self> {
        match (self, other) {
            (Labels::Multiclass(a), Labels::Multiclass(b)) => {
                Ok(Labels::Multiclass(a.iter().chain(b).copied().collect()))
            }
            (Labels::Multilabel(a), Labels::Multilabel(b)) => {
                Ok(Labels::Multilabel(a.iter().chain(b).cloned().collect()))
            }
            _ => Err(FusionError::Dataset("cannot concatenate labels of different task modes".into())),
        }
    }
}

/// Mean-pool over `L`, dropout, then an affine map to class logits.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct HeadConfig {
    pub n_classes: usize,
    pub mode: TaskMode,
    pub dropout: f64,
}

#[derive(Clone, Copy, Debug, Serialize, Deserialize)]
pub struct HeadIds {
    pub weight: ParamId,
    pub bias: ParamId,
}

impl HeadIds {
    pub fn insert<T: Scalar, R: Rng + ?Sized>(store: &mut ParamStore<T>, c: usize, n_classes: usize, rng: &mut R) -> Self {
        Self {
            weight: store.insert("head.weight", ParamGroup::Network, fan_in_uniform(&[c, n_classes], c, rng)),
            bias: store.insert("head.bias", ParamGroup::Network, fan_in_uniform(&[n_classes], c, rng)),
        }
    }
}

/// Inverted-dropout mask for an `(N, C)` activation.
pub fn dropout_mask<T: Scalar, R: Rng + ?Sized>(shape: &[usize], rate: f64, rng: &mut R) -> Tensor<T> {
    let keep = 1.0 - rate;
    let scale = T::of(1.0 / keep);
    Tensor::from_fn(shape, |_| if rng.random::<f64>() < keep { scale } else { T::zero() })
}

/// Applies the task head to a fused `(N, C, L)` node. `mask` is an optional
/// dropout mask for the pooled `(N, C)` representation.
pub fn head_var<T: Scalar>(g: &mut Graph<T>, fused: Var, head: &HeadIds, b: &Binding, mask: Option<Tensor<T>>) -> Result<Var> {
    let mut pooled = g.mean_length(fused)?;
    if let Some(mask) = mask {
        pooled = g.mul_const(pooled, mask)?;
    }
    g.linear(pooled, b.var(head.weight), b.var(head.bias))
}

/// Softmax cross-entropy (multiclass) or mean sigmoid BCE (multilabel).
pub fn loss_var<T: Scalar>(g: &mut Graph<T>, logits: Var, labels: &Labels) -> Result<Var> {
    match labels {
        Labels::Multiclass(y) => g.cross_entropy(logits, y),
        Labels::Multilabel(y) => {
            let k = g.shape(logits)[1];
            let mut data = Vec::with_capacity(y.len() * k);
            for row in y {
                if row.len() != k {
                    return Err(FusionError::shape("multilabel targets", format!("{} labels for {k} classes", row.len())));
                }
                data.extend(row.iter().map(|&on| if on { T::one() } else { T::zero() }));
            }
            let targets = Tensor::new(vec![y.len(), k], data)?;
            g.bce_with_logits(logits, &targets)
        }
    }
}

#[derive(Clone, Copy, Debug, Serialize, Deserialize)]
struct AdapterIds {
    weight: ParamId,
    bias: ParamId,
}

/// The discrete fusion network a genotype describes. Only features some
/// cell reads get an adapter; each step owns parameters for its chosen op
/// only.
#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(bound = "T: Scalar")]
pub struct FusionNet<T> {
    genotype: Genotype,
    head_config: HeadConfig,
    store: ParamStore<T>,
    adapters: BTreeMap<usize, AdapterIds>,
    steps: Vec<Vec<Option<(ParamId, ParamId)>>>,
    head: HeadIds,
}

impl<T: Scalar> FusionNet<T> {
    /// `raw_channels[i]` is the channel count of feature `i` before its adapter.
    pub fn new<R: Rng + ?Sized>(genotype: &Genotype, raw_channels: &[usize], head_config: HeadConfig, rng: &mut R) -> Result<Self> {
        genotype.validate()?;
        if raw_channels.len() != genotype.num_features() {
            return Err(FusionError::InvalidArgument(format!(
                "genotype has {} features but {} raw channel counts were given",
                genotype.num_features(),
                raw_channels.len()
            )));
        }
        let c = genotype.config.channels;
        let mut store = ParamStore::new();
        let mut adapters = BTreeMap::new();
        for i in genotype.used_features() {
            let p = AdapterParams::<T>::init(raw_channels[i], c, rng);
            let name = genotype.node_label(i);
            adapters.insert(
                i,
                AdapterIds {
                    weight: store.insert(format!("adapter.{name}.weight"), ParamGroup::Network, p.weight),
                    bias: store.insert(format!("adapter.{name}.bias"), ParamGroup::Network, p.bias),
                },
            );
        }
        let mut steps = Vec::with_capacity(genotype.cells.len());
        for (k, cell) in genotype.cells.iter().enumerate() {
            let mut ids = Vec::with_capacity(cell.steps.len());
            for (s, gene) in cell.steps.iter().enumerate() {
                let prefix = format!("C{}_S{}", k + 1, s + 1);
                let entry = match gene.op {
                    PrimitiveOpKind::LinearGlu => {
                        let p = GluParams::<T>::init(c, rng);
                        Some((
                            store.insert(format!("{prefix}.glu.w1"), ParamGroup::Network, p.w1),
                            store.insert(format!("{prefix}.glu.w2"), ParamGroup::Network, p.w2),
                        ))
                    }
                    PrimitiveOpKind::ConcatFc => {
                        let p = ConcatFcParams::<T>::init(c, rng);
                        Some((
                            store.insert(format!("{prefix}.concat_fc.w"), ParamGroup::Network, p.w),
                            store.insert(format!("{prefix}.concat_fc.b"), ParamGroup::Network, p.b),
                        ))
                    }
                    _ => None,
                };
                ids.push(entry);
            }
            steps.push(ids);
        }
        let head = HeadIds::insert(&mut store, c, head_config.n_classes, rng);
        Ok(Self {
            genotype: genotype.clone(),
            head_config,
            store,
            adapters,
            steps,
            head,
        })
    }

    pub fn genotype(&self) -> &Genotype {
        &self.genotype
    }

    pub fn head_config(&self) -> &HeadConfig {
        &self.head_config
    }

    pub fn store(&self) -> &ParamStore<T> {
        &self.store
    }

    pub fn store_mut(&mut self) -> &mut ParamStore<T> {
        &mut self.store
    }

    pub fn param_count(&self) -> usize {
        self.store.count(ParamGroup::Network)
    }

    /// Logits for prepared `(N, C_raw, L)` inputs of every feature.
    pub fn forward_var(&self, g: &mut Graph<T>, b: &Binding, prepared: &[Var], mask: Option<Tensor<T>>) -> Result<Var> {
        let f = self.genotype.num_features();
        if prepared.len() != f {
            return Err(FusionError::InvalidArgument(format!("expected {f} feature inputs, got {}", prepared.len())));
        }
        let mut nodes: Vec<Option<Var>> = vec![None; f + self.genotype.cells.len()];
        for (&i, ids) in &self.adapters {
            nodes[i] = Some(adapter_forward(g, prepared[i], b.var(ids.weight), b.var(ids.bias))?);
        }
        let cell_output = self.genotype.config.cell_output;
        let mut last = None;
        for (k, cell) in self.genotype.cells.iter().enumerate() {
            let x = nodes[cell.inputs.0].expect("inputs precede the cell");
            let y = nodes[cell.inputs.1].expect("inputs precede the cell");
            let ops: Vec<OpVars> = cell
                .steps
                .iter()
                .zip(&self.steps[k])
                .map(|(gene, ids)| match (gene.op, ids) {
                    (PrimitiveOpKind::LinearGlu, Some((a, c))) => OpVars {
                        glu: Some((b.var(*a), b.var(*c))),
                        concat_fc: None,
                    },
                    (PrimitiveOpKind::ConcatFc, Some((a, c))) => OpVars {
                        glu: None,
                        concat_fc: Some((b.var(*a), b.var(*c))),
                    },
                    _ => OpVars::default(),
                })
                .collect();
            let out = cell_discrete_var(g, x, y, &cell.steps, &ops, cell_output)?;
            nodes[f + k] = Some(out);
            last = Some(out);
        }
        let fused = last.expect("genotype has at least one cell");
        head_var(g, fused, &self.head, b, mask)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::cell::{CellOutput, StepGene};
    use crate::genotype::{CellGene, FeatureRef, GenotypeConfig};
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn genotype(op: PrimitiveOpKind) -> Genotype {
        Genotype::new(
            GenotypeConfig {
                num_cells: 1,
                num_steps: 1,
                channels: 4,
                length: 2,
                features: vec![
                    FeatureRef { modality: "A".into(), index: 0 },
                    FeatureRef { modality: "B".into(), index: 0 },
                    FeatureRef { modality: "B".into(), index: 1 },
                ],
                cell_output: CellOutput::SumOfSteps,
            },
            vec![CellGene {
                inputs: (0, 2),
                steps: vec![StepGene::new(0, 1, op)],
            }],
        )
        .unwrap()
    }

    #[test]
    fn param_count_matches_formula() {
        let head = HeadConfig { n_classes: 3, mode: TaskMode::Multiclass, dropout: 0.0 };
        let raw = [8, 16, 6];
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        for op in PrimitiveOpKind::ALL {
            let g = genotype(op);
            let net = FusionNet::<f64>::new(&g, &raw, head, &mut rng).unwrap();
            assert_eq!(net.param_count(), g.analytic_param_count(&raw, 3), "{op}");
        }
    }

    #[test]
    fn forward_produces_logits() {
        let head = HeadConfig { n_classes: 3, mode: TaskMode::Multiclass, dropout: 0.0 };
        let raw = [8, 16, 6];
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let net = FusionNet::<f64>::new(&genotype(PrimitiveOpKind::ConcatFc), &raw, head, &mut rng).unwrap();
        let mut g = Graph::new();
        let b = net.store().bind(&mut g, None);
        let inputs: Vec<Var> = raw.iter().map(|&c| g.constant(Tensor::filled(&[5, c, 2], 0.1))).collect();
        let logits = net.forward_var(&mut g, &b, &inputs, None).unwrap();
        assert_eq!(g.shape(logits), &[5, 3]);
    }

    #[test]
    fn multilabel_loss_matches_manual_bce() {
        let mut g = Graph::<f64>::new();
        let z = g.constant(Tensor::from_f64(&[1, 2], &[0.5, -1.0]).unwrap());
        let loss = loss_var(&mut g, z, &Labels::Multilabel(vec![vec![true, false]])).unwrap();
        let sig = |v: f64| 1.0 / (1.0 + (-v).exp());
        let expected = -(sig(0.5).ln() + (1.0 - sig(-1.0)).ln()) / 2.0;
        assert!((g.value(loss).data()[0] - expected).abs() < 1e-12);
    }
}
