//! Upper-level search DAG and the relaxed search-time network.
//!
//! Upper-level nodes are all features followed by the cells. Every edge
//! `(i, j)` into a cell carries two logits over `{Identity, Zero}`; a cell's
//! relaxed input is the Identity-weighted sum of its predecessors and feeds
//! both input slots of the relaxed cell body. Derivation keeps the pair of
//! predecessors with the largest product of Identity weights.

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::autograd::{Graph, Var};
use crate::cell::{argmax, cell_relaxed_var, CellOutput, StepGene, StepVars};
use crate::error::{FusionError, Result};
use crate::feature_adapter::{adapter_forward, AdapterParams, FeatureSpec};
use crate::genotype::{CellGene, FeatureRef, Genotype, GenotypeConfig};
use crate::network::{head_var, HeadConfig, HeadIds};
use crate::ops::{ConcatFcParams, GluParams, OpVars, PrimitiveOpKind};
use crate::params::{small_noise, Binding, ParamGroup, ParamId, ParamStore};
use crate::scalar::Scalar;
use crate::tensor::Tensor;

/// Feature inventory plus the cell/step layout of the search space.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SearchSpaceConfig {
    pub features: Vec<FeatureSpec>,
    pub num_cells: usize,
    pub num_steps: usize,
    pub channels: usize,
    pub length: usize,
    #[serde(default)]
    pub cell_output: CellOutput,
}

impl SearchSpaceConfig {
    pub fn validate(&self) -> Result<()> {
        if self.features.len() < 2 {
            return Err(FusionError::InvalidArgument("the search space needs at least two features".into()));
        }
        for f in &self.features {
            f.validate()?;
        }
        for (name, v) in [
            ("num_cells", self.num_cells),
            ("num_steps", self.num_steps),
            ("channels", self.channels),
            ("length", self.length),
        ] {
            if v == 0 {
                return Err(FusionError::InvalidArgument(format!("{name} must be positive")));
            }
        }
        Ok(())
    }

    pub fn num_features(&self) -> usize {
        self.features.len()
    }

    pub fn raw_channels(&self) -> Result<Vec<usize>> {
        self.features.iter().map(FeatureSpec::channels).collect()
    }

    /// Predecessor count of cell `k` in the upper-level sequence.
    pub fn cell_predecessors(&self, k: usize) -> usize {
        self.features.len() + k
    }

    pub fn genotype_config(&self) -> GenotypeConfig {
        GenotypeConfig {
            num_cells: self.num_cells,
            num_steps: self.num_steps,
            channels: self.channels,
            length: self.length,
            features: self
                .features
                .iter()
                .map(|f| FeatureRef {
                    modality: f.modality.clone(),
                    index: f.index,
                })
                .collect(),
            cell_output: self.cell_output,
        }
    }
}

/// Logits of one upper-level edge over `{Identity, Zero}`.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(bound = "T: Scalar")]
pub struct EdgeAlpha<T> {
    pub identity: T,
    pub zero: T,
}

impl<T: Scalar> EdgeAlpha<T> {
    pub fn new(identity: T, zero: T) -> Self {
        Self { identity, zero }
    }

    /// Softmax weight of Identity.
    pub fn identity_weight(&self) -> T {
        crate::autograd::softmax(&[self.identity, self.zero])[0]
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(bound = "T: Scalar")]
pub struct StepLogits<T> {
    pub beta_x: Vec<T>,
    pub beta_y: Vec<T>,
    pub gamma: Vec<T>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(bound = "T: Scalar")]
pub struct CellLogits<T> {
    /// One entry per predecessor of the cell.
    pub alpha: Vec<EdgeAlpha<T>>,
    pub steps: Vec<StepLogits<T>>,
}

/// All continuous architecture parameters.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(bound = "T: Scalar")]
pub struct ArchParams<T> {
    pub cells: Vec<CellLogits<T>>,
}

impl<T: Scalar> ArchParams<T> {
    pub fn from_fn(space: &SearchSpaceConfig, mut f: impl FnMut() -> T) -> Self {
        let cells = (0..space.num_cells)
            .map(|k| CellLogits {
                alpha: (0..space.cell_predecessors(k)).map(|_| EdgeAlpha::new(f(), f())).collect(),
                steps: (0..space.num_steps)
                    .map(|s| StepLogits {
                        beta_x: (0..2 + s).map(|_| f()).collect(),
                        beta_y: (0..2 + s).map(|_| f()).collect(),
                        gamma: (0..PrimitiveOpKind::COUNT).map(|_| f()).collect(),
                    })
                    .collect(),
            })
            .collect();
        Self { cells }
    }

    pub fn uniform(space: &SearchSpaceConfig) -> Self {
        Self::from_fn(space, T::zero)
    }

    /// Checks lengths against `space` and finiteness.
    pub fn validate(&self, space: &SearchSpaceConfig) -> Result<()> {
        let bad = |what: String| Err(FusionError::shape("arch params", what));
        if self.cells.len() != space.num_cells {
            return bad(format!("{} cells, expected {}", self.cells.len(), space.num_cells));
        }
        for (k, cell) in self.cells.iter().enumerate() {
            if cell.alpha.len() != space.cell_predecessors(k) {
                return bad(format!(
                    "cell {} has {} edge logits, expected {}",
                    k + 1,
                    cell.alpha.len(),
                    space.cell_predecessors(k)
                ));
            }
            if cell.steps.len() != space.num_steps {
                return bad(format!("cell {} has {} steps, expected {}", k + 1, cell.steps.len(), space.num_steps));
            }
            for (s, step) in cell.steps.iter().enumerate() {
                if step.beta_x.len() != 2 + s || step.beta_y.len() != 2 + s || step.gamma.len() != PrimitiveOpKind::COUNT {
                    return bad(format!("step C{}_S{} has malformed logits", k + 1, s + 1));
                }
            }
            let finite = cell.alpha.iter().all(|a| a.identity.is_finite() && a.zero.is_finite())
                && cell
                    .steps
                    .iter()
                    .all(|s| s.beta_x.iter().chain(&s.beta_y).chain(&s.gamma).all(|v| v.is_finite()));
            if !finite {
                return Err(FusionError::NonFinite(format!("arch logits of cell {}", k + 1)));
            }
        }
        Ok(())
    }
}

/// How upper-level choices are counted.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PairMode {
    /// Each cell picks two inputs among the features one by one.
    CellByCell,
    /// All unordered feature pairs.
    Pairwise,
}

pub fn count_candidate_pairs(n_features: usize, mode: PairMode) -> Result<usize> {
    if n_features < 2 {
        return Err(FusionError::InvalidArgument(format!(
            "need at least two features, got {n_features}"
        )));
    }
    Ok(match mode {
        PairMode::CellByCell => 2 * n_features,
        PairMode::Pairwise => n_features * (n_features - 1) / 2,
    })
}

/// `softmax(alpha)_Identity * s`.
pub fn mixed_edge<T: Scalar>(alpha: &EdgeAlpha<T>, s: &Tensor<T>) -> Tensor<T> {
    s.scale(alpha.identity_weight())
}

/// Sum of mixed edges from every predecessor into one cell.
pub fn cell_input_relaxed<T: Scalar>(node_values: &[Tensor<T>], alphas: &[EdgeAlpha<T>]) -> Result<Tensor<T>> {
    if node_values.len() != alphas.len() || node_values.is_empty() {
        return Err(FusionError::shape(
            "cell input",
            format!("{} predecessors but {} edge logits", node_values.len(), alphas.len()),
        ));
    }
    let mut acc = Tensor::zeros(node_values[0].shape());
    for (s, a) in node_values.iter().zip(alphas) {
        acc.expect_same_shape(s, "cell predecessors")?;
        acc = acc.add(&mixed_edge(a, s))?;
    }
    Ok(acc)
}

/// Predecessor pair `(i, j)`, `i < j`, maximizing the product of Identity
/// weights. The lexicographically first pair wins ties.
pub fn derive_cell_inputs<T: Scalar>(alphas: &[EdgeAlpha<T>]) -> Result<(usize, usize)> {
    if alphas.len() < 2 {
        return Err(FusionError::InvalidArgument(format!(
            "a cell needs two predecessors, found {}",
            alphas.len()
        )));
    }
    let w: Vec<T> = alphas.iter().map(EdgeAlpha::identity_weight).collect();
    let mut best = (0, 1);
    let mut best_score = w[0] * w[1];
    for i in 0..w.len() {
        for j in i + 1..w.len() {
            let score = w[i] * w[j];
            if score > best_score {
                best = (i, j);
                best_score = score;
            }
        }
    }
    Ok(best)
}

fn derive_step_logits<T: Scalar>(step: &StepLogits<T>) -> StepGene {
    StepGene {
        src_x: argmax(&step.beta_x).expect("nonempty beta"),
        src_y: argmax(&step.beta_y).expect("nonempty beta"),
        op: PrimitiveOpKind::from_index(argmax(&step.gamma).expect("nonempty gamma")).expect("gamma in pool"),
    }
}

/// Argmax genotype of `arch`.
pub fn discretize<T: Scalar>(arch: &ArchParams<T>, space: &SearchSpaceConfig) -> Result<Genotype> {
    space.validate()?;
    arch.validate(space)?;
    let cells = arch
        .cells
        .iter()
        .map(|cell| {
            Ok(CellGene {
                inputs: derive_cell_inputs(&cell.alpha)?,
                steps: cell.steps.iter().map(derive_step_logits).collect(),
            })
        })
        .collect::<Result<Vec<_>>>()?;
    Genotype::new(space.genotype_config(), cells)
}

/// During search both slots of a cell see the same tensor, so the slot
/// logits cannot tell `x` from `y`. A step whose two sources are both cell
/// inputs is rewritten to read `(x, y)`, the only choice that uses both
/// selected predecessors.
pub fn fold_shared_cell_inputs(genotype: &Genotype) -> Genotype {
    let mut out = genotype.clone();
    for cell in &mut out.cells {
        for step in &mut cell.steps {
            if step.src_x < 2 && step.src_y < 2 {
                step.src_x = 0;
                step.src_y = 1;
            }
        }
    }
    out
}

#[derive(Clone, Debug, Serialize, Deserialize)]
struct StepIds {
    beta_x: ParamId,
    beta_y: ParamId,
    gamma: ParamId,
    glu: (ParamId, ParamId),
    concat_fc: (ParamId, ParamId),
}

#[derive(Clone, Debug, Serialize, Deserialize)]
struct CellIds {
    /// `(n_pred, 2)`: column 0 is Identity, column 1 is Zero.
    alpha: ParamId,
    steps: Vec<StepIds>,
}

/// The relaxed search-time network: adapters for every feature, all
/// candidate-op weights of every step, architecture logits and the head.
#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(bound = "T: Scalar")]
pub struct Hypernet<T> {
    space: SearchSpaceConfig,
    head_config: HeadConfig,
    store: ParamStore<T>,
    adapters: Vec<(ParamId, ParamId)>,
    cells: Vec<CellIds>,
    head: HeadIds,
}

/// Scale of the noise added to zero-initialized architecture logits.
pub const ARCH_INIT_NOISE: f64 = 1e-3;

impl<T: Scalar> Hypernet<T> {
    pub fn new<R: Rng + ?Sized>(space: &SearchSpaceConfig, head_config: HeadConfig, rng: &mut R) -> Result<Self> {
        space.validate()?;
        if head_config.n_classes == 0 {
            return Err(FusionError::InvalidArgument("the head needs at least one class".into()));
        }
        let c = space.channels;
        let mut store = ParamStore::new();
        let mut adapters = Vec::with_capacity(space.num_features());
        for (f, raw_c) in space.features.iter().zip(space.raw_channels()?) {
            let p = AdapterParams::<T>::init(raw_c, c, rng);
            let name = f.label();
            adapters.push((
                store.insert(format!("adapter.{name}.weight"), ParamGroup::Network, p.weight),
                store.insert(format!("adapter.{name}.bias"), ParamGroup::Network, p.bias),
            ));
        }
        let mut cells = Vec::with_capacity(space.num_cells);
        for k in 0..space.num_cells {
            let n_pred = space.cell_predecessors(k);
            let alpha = store.insert(
                format!("C{}.alpha", k + 1),
                ParamGroup::Arch,
                small_noise(&[n_pred, 2], ARCH_INIT_NOISE, rng),
            );
            let mut steps = Vec::with_capacity(space.num_steps);
            for s in 0..space.num_steps {
                let prefix = format!("C{}_S{}", k + 1, s + 1);
                let beta_x = store.insert(format!("{prefix}.beta_x"), ParamGroup::Arch, small_noise(&[2 + s], ARCH_INIT_NOISE, rng));
                let beta_y = store.insert(format!("{prefix}.beta_y"), ParamGroup::Arch, small_noise(&[2 + s], ARCH_INIT_NOISE, rng));
                let gamma = store.insert(
                    format!("{prefix}.gamma"),
                    ParamGroup::Arch,
                    small_noise(&[PrimitiveOpKind::COUNT], ARCH_INIT_NOISE, rng),
                );
                let glu = GluParams::<T>::init(c, rng);
                let fc = ConcatFcParams::<T>::init(c, rng);
                steps.push(StepIds {
                    beta_x,
                    beta_y,
                    gamma,
                    glu: (
                        store.insert(format!("{prefix}.glu.w1"), ParamGroup::Network, glu.w1),
                        store.insert(format!("{prefix}.glu.w2"), ParamGroup::Network, glu.w2),
                    ),
                    concat_fc: (
                        store.insert(format!("{prefix}.concat_fc.w"), ParamGroup::Network, fc.w),
                        store.insert(format!("{prefix}.concat_fc.b"), ParamGroup::Network, fc.b),
                    ),
                });
            }
            cells.push(CellIds { alpha, steps });
        }
        let head = HeadIds::insert(&mut store, c, head_config.n_classes, rng);
        Ok(Self {
            space: space.clone(),
            head_config,
            store,
            adapters,
            cells,
            head,
        })
    }

    pub fn space(&self) -> &SearchSpaceConfig {
        &self.space
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

    /// Output of the last cell for prepared `(N, C_raw, L)` feature inputs.
    pub fn fused_var(&self, g: &mut Graph<T>, b: &Binding, prepared: &[Var]) -> Result<Var> {
        let f = self.space.num_features();
        if prepared.len() != f {
            return Err(FusionError::InvalidArgument(format!("expected {f} feature inputs, got {}", prepared.len())));
        }
        let mut nodes = Vec::with_capacity(f + self.cells.len());
        for (&x, &(w, bias)) in prepared.iter().zip(&self.adapters) {
            nodes.push(adapter_forward(g, x, b.var(w), b.var(bias))?);
        }
        for cell in &self.cells {
            let weights = g.softmax(b.var(cell.alpha))?;
            let mut terms = Vec::with_capacity(nodes.len());
            for (i, &node) in nodes.iter().enumerate() {
                let w = g.index(weights, 2 * i)?;
                terms.push(g.scale(node, w)?);
            }
            let input = g.sum(&terms)?;
            let steps: Vec<StepVars> = cell
                .steps
                .iter()
                .map(|s| StepVars {
                    beta_x: b.var(s.beta_x),
                    beta_y: b.var(s.beta_y),
                    gamma: b.var(s.gamma),
                    ops: OpVars {
                        glu: Some((b.var(s.glu.0), b.var(s.glu.1))),
                        concat_fc: Some((b.var(s.concat_fc.0), b.var(s.concat_fc.1))),
                    },
                })
                .collect();
            let out = cell_relaxed_var(g, input, input, &steps, self.space.cell_output)?;
            nodes.push(out);
        }
        Ok(*nodes.last().expect("at least one cell"))
    }

    /// Class logits; `mask` is an optional dropout mask on the pooled features.
    pub fn forward_var(&self, g: &mut Graph<T>, b: &Binding, prepared: &[Var], mask: Option<Tensor<T>>) -> Result<Var> {
        let fused = self.fused_var(g, b, prepared)?;
        head_var(g, fused, &self.head, b, mask)
    }

    /// Eager inference over prepared feature tensors, without dropout.
    pub fn forward(&self, prepared: &[Tensor<T>]) -> Result<Tensor<T>> {
        let mut g = Graph::new();
        let b = self.store.bind(&mut g, None);
        let inputs: Vec<Var> = prepared.iter().map(|t| g.constant(t.clone())).collect();
        let out = self.forward_var(&mut g, &b, &inputs, None)?;
        Ok(g.value(out).clone())
    }

    pub fn arch_params(&self) -> ArchParams<T> {
        let vec = |id: ParamId| self.store.get(id).data().to_vec();
        ArchParams {
            cells: self
                .cells
                .iter()
                .map(|cell| {
                    let a = self.store.get(cell.alpha).data();
                    CellLogits {
                        alpha: a.chunks(2).map(|p| EdgeAlpha::new(p[0], p[1])).collect(),
                        steps: cell
                            .steps
                            .iter()
                            .map(|s| StepLogits {
                                beta_x: vec(s.beta_x),
                                beta_y: vec(s.beta_y),
                                gamma: vec(s.gamma),
                            })
                            .collect(),
                    }
                })
                .collect(),
        }
    }

    pub fn set_arch_params(&mut self, arch: &ArchParams<T>) -> Result<()> {
        arch.validate(&self.space)?;
        for (ids, cell) in self.cells.iter().zip(&arch.cells) {
            let a: Vec<T> = cell.alpha.iter().flat_map(|e| [e.identity, e.zero]).collect();
            self.store.get_mut(ids.alpha).data_mut().copy_from_slice(&a);
            for (sid, step) in ids.steps.iter().zip(&cell.steps) {
                self.store.get_mut(sid.beta_x).data_mut().copy_from_slice(&step.beta_x);
                self.store.get_mut(sid.beta_y).data_mut().copy_from_slice(&step.beta_y);
                self.store.get_mut(sid.gamma).data_mut().copy_from_slice(&step.gamma);
            }
        }
        Ok(())
    }

    /// Parameters of step `s` of cell `k` for every candidate op.
    pub fn step_op_params(&self, k: usize, s: usize) -> crate::ops::StepOpParams<T> {
        let ids = &self.cells[k].steps[s];
        crate::ops::StepOpParams {
            glu: GluParams {
                w1: self.store.get(ids.glu.0).clone(),
                w2: self.store.get(ids.glu.1).clone(),
            },
            concat_fc: ConcatFcParams {
                w: self.store.get(ids.concat_fc.0).clone(),
                b: self.store.get(ids.concat_fc.1).clone(),
            },
        }
    }

    /// Adapter weights of feature `i`.
    pub fn adapter_params(&self, i: usize) -> AdapterParams<T> {
        let (w, b) = self.adapters[i];
        AdapterParams {
            weight: self.store.get(w).clone(),
            bias: self.store.get(b).clone(),
        }
    }

    pub fn discretize(&self) -> Result<Genotype> {
        discretize(&self.arch_params(), &self.space)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::network::TaskMode;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn space(cells: usize, steps: usize) -> SearchSpaceConfig {
        SearchSpaceConfig {
            features: vec![
                FeatureSpec::sequence("A", 0, 3, Some(2)),
                FeatureSpec::sequence("A", 1, 2, None),
                FeatureSpec::sequence("B", 0, 4, Some(2)),
            ],
            num_cells: cells,
            num_steps: steps,
            channels: 2,
            length: 2,
            cell_output: CellOutput::SumOfSteps,
        }
    }

    fn head() -> HeadConfig {
        HeadConfig {
            n_classes: 3,
            mode: TaskMode::Multiclass,
            dropout: 0.0,
        }
    }

    #[test]
    fn mixed_edge_examples() {
        let s = Tensor::from_f64(&[1, 1, 2], &[2.0, -4.0]).unwrap();
        let half = mixed_edge(&EdgeAlpha::new(0.3, 0.3), &s);
        assert_eq!(half.data(), &[1.0, -2.0]);
        let full = mixed_edge(&EdgeAlpha::new(20.0, 0.0), &s);
        assert!(full.max_abs_diff(&s) / 4.0 < 1e-8);
        let a = EdgeAlpha::<f64>::new(0.7, -1.2);
        let expected = 1.0 / (1.0 + (a.zero - a.identity).exp());
        assert!((a.identity_weight() - expected).abs() < 1e-15);
    }

    #[test]
    fn cell_input_examples() {
        let nodes: Vec<Tensor<f64>> = (0..3)
            .map(|i| Tensor::from_fn(&[1, 2, 2], |ix| (i * 4 + ix[1] * 2 + ix[2]) as f64 - 3.0))
            .collect();
        let zeros = vec![EdgeAlpha::new(0.0, 20.0); 3];
        assert!(cell_input_relaxed(&nodes, &zeros).unwrap().max_abs() < 1e-6 * 10.0);
        let mut one = zeros.clone();
        one[1] = EdgeAlpha::new(20.0, 0.0);
        assert!(cell_input_relaxed(&nodes, &one).unwrap().max_abs_diff(&nodes[1]) < 1e-6 * 10.0);
        let alphas = vec![EdgeAlpha::new(0.4, -0.1), EdgeAlpha::new(-0.7, 0.2), EdgeAlpha::new(1.3, 0.5)];
        let got = cell_input_relaxed(&nodes, &alphas).unwrap();
        for e in 0..4 {
            let want: f64 = (0..3)
                .map(|i| {
                    let a = alphas[i];
                    a.identity.exp() / (a.identity.exp() + a.zero.exp()) * nodes[i].data()[e]
                })
                .sum();
            assert!((got.data()[e] - want).abs() < 1e-12);
        }
    }

    fn alphas_with_weights(w: &[f64]) -> Vec<EdgeAlpha<f64>> {
        // identity_weight = w when identity = logit(w), zero = 0
        w.iter().map(|&p| EdgeAlpha::new((p / (1.0 - p)).ln(), 0.0)).collect()
    }

    #[test]
    fn derive_pair_examples() {
        assert_eq!(derive_cell_inputs(&alphas_with_weights(&[0.9, 0.5, 0.1])).unwrap(), (0, 1));
        assert_eq!(derive_cell_inputs(&alphas_with_weights(&[0.9, 0.9, 0.9])).unwrap(), (0, 1));
        assert_eq!(derive_cell_inputs(&alphas_with_weights(&[0.2, 0.9, 0.2, 0.9])).unwrap(), (1, 3));
        assert!(derive_cell_inputs(&alphas_with_weights(&[0.5])).is_err());
    }

    #[test]
    fn counting_examples() {
        for (n, a, b) in [(8, 16, 28), (2, 4, 1), (10, 20, 45)] {
            assert_eq!(count_candidate_pairs(n, PairMode::CellByCell).unwrap(), a);
            assert_eq!(count_candidate_pairs(n, PairMode::Pairwise).unwrap(), b);
        }
        assert!(count_candidate_pairs(1, PairMode::Pairwise).is_err());
    }

    #[test]
    fn uniform_logits_derive_lowest_choices() {
        let sp = space(2, 2);
        let g = discretize(&ArchParams::<f64>::uniform(&sp), &sp).unwrap();
        for cell in &g.cells {
            assert_eq!(cell.inputs, (0, 1));
            for s in &cell.steps {
                assert_eq!((s.src_x, s.src_y, s.op), (0, 0, PrimitiveOpKind::Zero));
            }
        }
    }

    #[test]
    fn arch_params_round_trip_through_store() {
        let sp = space(2, 2);
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let mut net = Hypernet::<f64>::new(&sp, head(), &mut rng).unwrap();
        let mut v = 0.0;
        let arch = ArchParams::from_fn(&sp, || {
            v += 0.37;
            (v * 7.0f64).sin()
        });
        net.set_arch_params(&arch).unwrap();
        assert_eq!(net.arch_params(), arch);
        assert_eq!(net.discretize().unwrap(), discretize(&arch, &sp).unwrap());
        let n_arch = net.store().count(ParamGroup::Arch);
        // alpha: 3*2 + 4*2, steps: 2 cells * ((2+2+5) + (3+3+5))
        assert_eq!(n_arch, 14 + 2 * 20);
    }

    #[test]
    fn fold_rewrites_only_cell_input_pairs() {
        let sp = space(1, 2);
        let mut g = discretize(&ArchParams::<f64>::uniform(&sp), &sp).unwrap();
        g.cells[0].steps[1] = StepGene::new(2, 1, PrimitiveOpKind::Sum);
        let folded = fold_shared_cell_inputs(&g);
        assert_eq!((folded.cells[0].steps[0].src_x, folded.cells[0].steps[0].src_y), (0, 1));
        assert_eq!(folded.cells[0].steps[1], g.cells[0].steps[1]);
    }

    #[test]
    fn zero_edges_give_bias_only_logits() {
        let sp = space(2, 1);
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let mut net = Hypernet::<f64>::new(&sp, head(), &mut rng).unwrap();
        let mut arch = ArchParams::uniform(&sp);
        for cell in &mut arch.cells {
            for a in &mut cell.alpha {
                *a = EdgeAlpha::new(-800.0, 800.0);
            }
        }
        net.set_arch_params(&arch).unwrap();
        let inputs: Vec<Tensor<f64>> = [3, 2, 4].iter().map(|&c| Tensor::filled(&[2, c, 2], 0.7)).collect();
        let logits = net.forward(&inputs).unwrap();
        let bias = net.store().get(net.head.bias).clone();
        for row in logits.data().chunks(3) {
            for (a, b) in row.iter().zip(bias.data()) {
                assert!((a - b).abs() < 1e-12);
            }
        }
    }
}
