//! Lower-level search unit: a cell of ordered inner steps.
//!
//! Inside a cell the node sequence is `[x, y, step_1, ..., step_M]`; step `i`
//! (0-based) may read any of the `2 + i` nodes before it. During search each
//! step mixes its two input slots over all predecessors with softmax weights
//! (`beta_x`, `beta_y`) and mixes the operation pool with softmax weights
//! (`gamma`). After derivation every mixture collapses to its argmax.
//! The cell output is the sum of all step outputs, so a step that derives to
//! `Zero` simply drops out.

use serde::{Deserialize, Serialize};

use crate::autograd::{Graph, Var};
use crate::error::{FusionError, Result};
use crate::ops::{apply_op, OpVars, PrimitiveOpKind, StepOpParams};
use crate::scalar::Scalar;
use crate::tensor::Tensor;

/// How a cell combines its step outputs.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum CellOutput {
    #[default]
    SumOfSteps,
    LastStep,
}

/// Discrete choice of one inner step. Sources index the cell's node
/// sequence: 0 is `x`, 1 is `y`, `2 + k` is step `k`.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct StepGene {
    pub src_x: usize,
    pub src_y: usize,
    pub op: PrimitiveOpKind,
}

impl StepGene {
    pub fn new(src_x: usize, src_y: usize, op: PrimitiveOpKind) -> Self {
        Self { src_x, src_y, op }
    }

    /// Sources of step `step_index` must precede it.
    pub fn is_valid_at(&self, step_index: usize) -> bool {
        self.src_x < 2 + step_index && self.src_y < 2 + step_index
    }
}

/// Continuous architecture of one step plus its candidate-op weights.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(bound = "T: Scalar")]
pub struct StepArch<T> {
    pub beta_x: Vec<T>,
    pub beta_y: Vec<T>,
    pub gamma: Vec<T>,
    pub params: StepOpParams<T>,
}

impl<T: Scalar> StepArch<T> {
    pub fn predecessors(&self) -> usize {
        self.beta_x.len()
    }

    fn check(&self, step_index: usize) -> Result<()> {
        let preds = 2 + step_index;
        if self.beta_x.len() != preds || self.beta_y.len() != preds {
            return Err(FusionError::shape(
                "step arch",
                format!(
                    "step {step_index} has {preds} predecessors but beta lengths are {} and {}",
                    self.beta_x.len(),
                    self.beta_y.len()
                ),
            ));
        }
        if self.gamma.len() != PrimitiveOpKind::COUNT {
            return Err(FusionError::shape(
                "step arch",
                format!("gamma has {} entries, expected {}", self.gamma.len(), PrimitiveOpKind::COUNT),
            ));
        }
        let finite = self.beta_x.iter().chain(&self.beta_y).chain(&self.gamma).all(|v| v.is_finite());
        if !finite {
            return Err(FusionError::NonFinite(format!("logits of step {step_index}")));
        }
        Ok(())
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(bound = "T: Scalar")]
pub struct CellArch<T> {
    pub steps: Vec<StepArch<T>>,
}

impl<T: Scalar> CellArch<T> {
    pub fn num_steps(&self) -> usize {
        self.steps.len()
    }
}

/// Index of the largest entry; the lowest index wins ties.
pub fn argmax<T: Scalar>(values: &[T]) -> Option<usize> {
    let mut best: Option<(usize, T)> = None;
    for (i, &v) in values.iter().enumerate() {
        if best.is_none_or(|(_, b)| v > b) {
            best = Some((i, v));
        }
    }
    best.map(|(i, _)| i)
}

/// Graph handles of one relaxed step.
#[derive(Clone, Copy, Debug)]
pub struct StepVars {
    pub beta_x: Var,
    pub beta_y: Var,
    pub gamma: Var,
    pub ops: OpVars,
}

fn mix<T: Scalar>(g: &mut Graph<T>, nodes: &[Var], logits: Var) -> Result<Var> {
    let weights = g.softmax(logits)?;
    let terms = nodes
        .iter()
        .enumerate()
        .map(|(j, &node)| {
            let w = g.index(weights, j)?;
            g.scale(node, w)
        })
        .collect::<Result<Vec<_>>>()?;
    g.sum(&terms)
}

/// Relaxed step: softmax-weighted slot inputs fed through the
/// softmax-weighted op mixture.
pub fn step_relaxed_var<T: Scalar>(g: &mut Graph<T>, preds: &[Var], step: &StepVars) -> Result<Var> {
    let first = *preds
        .first()
        .ok_or_else(|| FusionError::InvalidArgument("a step needs at least one predecessor".into()))?;
    for &p in &preds[1..] {
        g.value(first).expect_same_shape(g.value(p), "step predecessors")?;
    }
    for (name, v, len) in [
        ("beta_x", step.beta_x, preds.len()),
        ("beta_y", step.beta_y, preds.len()),
        ("gamma", step.gamma, PrimitiveOpKind::COUNT),
    ] {
        if g.shape(v) != [len] {
            return Err(FusionError::shape(
                "relaxed step",
                format!("{name} has shape {:?}, expected [{len}]", g.shape(v)),
            ));
        }
    }
    let x = mix(g, preds, step.beta_x)?;
    let y = mix(g, preds, step.beta_y)?;
    let op_weights = g.softmax(step.gamma)?;
    let mut terms = Vec::with_capacity(PrimitiveOpKind::COUNT);
    for kind in PrimitiveOpKind::ALL {
        // Zero contributes nothing; its weight still enters through the softmax.
        if kind == PrimitiveOpKind::Zero {
            continue;
        }
        let out = apply_op(g, kind, x, y, &step.ops)?;
        let w = g.index(op_weights, kind.index())?;
        terms.push(g.scale(out, w)?);
    }
    g.sum(&terms)
}

/// Relaxed cell over the node sequence `[x, y, steps...]`.
pub fn cell_relaxed_var<T: Scalar>(g: &mut Graph<T>, x: Var, y: Var, steps: &[StepVars], output: CellOutput) -> Result<Var> {
    g.value(x).expect_same_shape(g.value(y), "cell inputs")?;
    if steps.is_empty() {
        return Err(FusionError::InvalidArgument("a cell needs at least one step".into()));
    }
    let mut nodes = vec![x, y];
    for step in steps {
        let out = step_relaxed_var(g, &nodes, step)?;
        nodes.push(out);
    }
    match output {
        CellOutput::SumOfSteps => g.sum(&nodes[2..]),
        CellOutput::LastStep => Ok(*nodes.last().expect("at least one step")),
    }
}

/// Checks a gene list against the ordering constraint.
pub fn validate_genes(genes: &[StepGene]) -> Result<()> {
    if genes.is_empty() {
        return Err(FusionError::InvalidArgument("a cell needs at least one step".into()));
    }
    for (i, gene) in genes.iter().enumerate() {
        if !gene.is_valid_at(i) {
            return Err(FusionError::InvalidArgument(format!(
                "step {} reads node {} but only nodes 0..{} precede it",
                i + 1,
                gene.src_x.max(gene.src_y),
                2 + i
            )));
        }
    }
    Ok(())
}

/// Discrete cell: hard sources and ops. `ops[i]` holds the parameters of
/// step `i`'s chosen op.
pub fn cell_discrete_var<T: Scalar>(
    g: &mut Graph<T>,
    x: Var,
    y: Var,
    genes: &[StepGene],
    ops: &[OpVars],
    output: CellOutput,
) -> Result<Var> {
    g.value(x).expect_same_shape(g.value(y), "cell inputs")?;
    validate_genes(genes)?;
    if ops.len() != genes.len() {
        return Err(FusionError::InvalidArgument(format!(
            "{} steps but {} parameter sets",
            genes.len(),
            ops.len()
        )));
    }
    let mut nodes = vec![x, y];
    for (gene, vars) in genes.iter().zip(ops) {
        let out = apply_op(g, gene.op, nodes[gene.src_x], nodes[gene.src_y], vars)?;
        nodes.push(out);
    }
    match output {
        CellOutput::SumOfSteps => g.sum(&nodes[2..]),
        CellOutput::LastStep => Ok(*nodes.last().expect("at least one step")),
    }
}

fn bind_step<T: Scalar>(g: &mut Graph<T>, step: &StepArch<T>) -> StepVars {
    StepVars {
        beta_x: g.constant(Tensor::vector(step.beta_x.clone())),
        beta_y: g.constant(Tensor::vector(step.beta_y.clone())),
        gamma: g.constant(Tensor::vector(step.gamma.clone())),
        ops: OpVars::bind(g, &step.params),
    }
}

/// Eager relaxed step over explicit predecessor tensors.
pub fn step_forward_relaxed<T: Scalar>(predecessors: &[Tensor<T>], arch: &StepArch<T>) -> Result<Tensor<T>> {
    if predecessors.is_empty() {
        return Err(FusionError::InvalidArgument("a step needs at least one predecessor".into()));
    }
    let mut g = Graph::new();
    let preds: Vec<Var> = predecessors.iter().map(|p| g.constant(p.clone())).collect();
    let vars = bind_step(&mut g, arch);
    let out = step_relaxed_var(&mut g, &preds, &vars)?;
    Ok(g.value(out).clone())
}

/// Argmax derivation of one step.
pub fn derive_step<T: Scalar>(arch: &StepArch<T>, step_index: usize) -> Result<StepGene> {
    arch.check(step_index)?;
    let op = PrimitiveOpKind::from_index(argmax(&arch.gamma).expect("nonempty gamma")).expect("gamma index in pool");
    Ok(StepGene {
        src_x: argmax(&arch.beta_x).expect("nonempty beta"),
        src_y: argmax(&arch.beta_y).expect("nonempty beta"),
        op,
    })
}

pub fn cell_forward_relaxed<T: Scalar>(x: &Tensor<T>, y: &Tensor<T>, arch: &CellArch<T>) -> Result<Tensor<T>> {
    for (i, s) in arch.steps.iter().enumerate() {
        s.check(i)?;
    }
    let mut g = Graph::new();
    let xv = g.constant(x.clone());
    let yv = g.constant(y.clone());
    let steps: Vec<StepVars> = arch.steps.iter().map(|s| bind_step(&mut g, s)).collect();
    let out = cell_relaxed_var(&mut g, xv, yv, &steps, CellOutput::SumOfSteps)?;
    Ok(g.value(out).clone())
}

pub fn derive_cell<T: Scalar>(arch: &CellArch<T>) -> Result<Vec<StepGene>> {
    arch.steps.iter().enumerate().map(|(i, s)| derive_step(s, i)).collect()
}

/// Eager discrete cell; `params[i]` supplies step `i`'s op weights.
pub fn cell_forward_discrete<T: Scalar>(
    x: &Tensor<T>,
    y: &Tensor<T>,
    genes: &[StepGene],
    params: &[StepOpParams<T>],
    output: CellOutput,
) -> Result<Tensor<T>> {
    let mut g = Graph::new();
    let xv = g.constant(x.clone());
    let yv = g.constant(y.clone());
    let ops: Vec<OpVars> = params.iter().map(|p| OpVars::bind(&mut g, p)).collect();
    let out = cell_discrete_var(&mut g, xv, yv, genes, &ops, output)?;
    Ok(g.value(out).clone())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::ops::{attention_op, concat_fc_op, linear_glu_op, sum_op};
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;
    use PrimitiveOpKind::*;

    fn rand_t(shape: [usize; 3], rng: &mut ChaCha8Rng) -> Tensor<f64> {
        Tensor::from_fn(&shape, |_| rng.random_range(-1.0..1.0))
    }

    fn rand_step(preds: usize, c: usize, rng: &mut ChaCha8Rng) -> StepArch<f64> {
        StepArch {
            beta_x: (0..preds).map(|_| rng.random_range(-1.0..1.0)).collect(),
            beta_y: (0..preds).map(|_| rng.random_range(-1.0..1.0)).collect(),
            gamma: (0..5).map(|_| rng.random_range(-1.0..1.0)).collect(),
            params: StepOpParams::init(c, rng),
        }
    }

    fn one_hot(len: usize, at: usize, big: f64) -> Vec<f64> {
        (0..len).map(|i| if i == at { big } else { 0.0 }).collect()
    }

    fn softmax(v: &[f64]) -> Vec<f64> {
        let m = v.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        let e: Vec<f64> = v.iter().map(|a| (a - m).exp()).collect();
        let s: f64 = e.iter().sum();
        e.iter().map(|a| a / s).collect()
    }

    #[test]
    fn concentrated_sum_step_adds_predecessors() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let p0 = rand_t([2, 3, 2], &mut rng);
        let p1 = rand_t([2, 3, 2], &mut rng);
        let mut step = rand_step(2, 3, &mut rng);
        step.gamma = one_hot(5, Sum.index(), 1e6);
        step.beta_x = one_hot(2, 0, 1e6);
        step.beta_y = one_hot(2, 1, 1e6);
        let out = step_forward_relaxed(&[p0.clone(), p1.clone()], &step).unwrap();
        assert!(out.max_abs_diff(&p0.add(&p1).unwrap()) < 1e-5);
    }

    #[test]
    fn half_zero_half_sum_mixture() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let p = rand_t([1, 2, 3], &mut rng);
        let mut step = rand_step(1, 2, &mut rng);
        // Zero and Sum tie; all other ops are suppressed.
        step.gamma = vec![0.0, 0.0, -1e6, -1e6, -1e6];
        let out = step_forward_relaxed(std::slice::from_ref(&p), &step).unwrap();
        assert!(out.max_abs_diff(&p) < 1e-12);
    }

    #[test]
    fn relaxed_step_matches_literal_mixture() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let preds: Vec<_> = (0..3).map(|_| rand_t([1, 2, 2], &mut rng)).collect();
        let step = rand_step(3, 2, &mut rng);
        let out = step_forward_relaxed(&preds, &step).unwrap();

        let wx = softmax(&step.beta_x);
        let wy = softmax(&step.beta_y);
        let mut x = Tensor::zeros(&[1, 2, 2]);
        let mut y = Tensor::zeros(&[1, 2, 2]);
        for j in 0..3 {
            x = x.add(&preds[j].scale(wx[j])).unwrap();
            y = y.add(&preds[j].scale(wy[j])).unwrap();
        }
        let wg = softmax(&step.gamma);
        let outs = [
            Tensor::zeros(&[1, 2, 2]),
            sum_op(&x, &y).unwrap(),
            attention_op(&x, &y).unwrap(),
            linear_glu_op(&x, &y, &step.params.glu).unwrap(),
            concat_fc_op(&x, &y, &step.params.concat_fc).unwrap(),
        ];
        let mut expected = Tensor::zeros(&[1, 2, 2]);
        for (w, o) in wg.iter().zip(&outs) {
            expected = expected.add(&o.scale(*w)).unwrap();
        }
        assert!(out.max_abs_diff(&expected) < 1e-12);
    }

    #[test]
    fn derive_step_argmax_and_ties() {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let mut step = rand_step(2, 2, &mut rng);
        step.gamma = vec![0.1, 0.9, 0.2, 0.3, 0.1];
        step.beta_x = vec![2.0, 1.0];
        step.beta_y = vec![2.0, 1.0];
        assert_eq!(derive_step(&step, 0).unwrap(), StepGene::new(0, 0, Sum));
        step.gamma = vec![0.5, 0.5, 0.5, 0.5, 0.5];
        assert_eq!(derive_step(&step, 0).unwrap().op, Zero);
        step.gamma = vec![0.0, 0.3, 0.3, 0.3, 0.1];
        assert_eq!(derive_step(&step, 0).unwrap().op, Sum);
        assert!(derive_step(&step, 1).is_err());
    }

    #[test]
    fn single_sum_step_cell() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let x = rand_t([2, 2, 2], &mut rng);
        let y = rand_t([2, 2, 2], &mut rng);
        let mut step = rand_step(2, 2, &mut rng);
        step.gamma = one_hot(5, Sum.index(), 1e6);
        step.beta_x = one_hot(2, 0, 1e6);
        step.beta_y = one_hot(2, 1, 1e6);
        let out = cell_forward_relaxed(&x, &y, &CellArch { steps: vec![step] }).unwrap();
        assert!(out.max_abs_diff(&x.add(&y).unwrap()) < 1e-9);
    }

    #[test]
    fn zeroed_second_step_drops_out() {
        let mut rng = ChaCha8Rng::seed_from_u64(6);
        let x = rand_t([2, 2, 3], &mut rng);
        let y = rand_t([2, 2, 3], &mut rng);
        let s1 = rand_step(2, 2, &mut rng);
        let mut s2 = rand_step(3, 2, &mut rng);
        s2.gamma = one_hot(5, Zero.index(), 1e6);
        let two = cell_forward_relaxed(&x, &y, &CellArch { steps: vec![s1.clone(), s2] }).unwrap();
        let one = cell_forward_relaxed(&x, &y, &CellArch { steps: vec![s1] }).unwrap();
        assert!(two.max_abs_diff(&one) < 1e-12);
    }

    #[test]
    fn relaxed_cell_is_unrolled_composition() {
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        let x = rand_t([2, 3, 2], &mut rng);
        let y = rand_t([2, 3, 2], &mut rng);
        let s1 = rand_step(2, 3, &mut rng);
        let s2 = rand_step(3, 3, &mut rng);
        let out = cell_forward_relaxed(&x, &y, &CellArch { steps: vec![s1.clone(), s2.clone()] }).unwrap();
        let o1 = step_forward_relaxed(&[x.clone(), y.clone()], &s1).unwrap();
        let o2 = step_forward_relaxed(&[x, y, o1.clone()], &s2).unwrap();
        assert!(out.max_abs_diff(&o1.add(&o2).unwrap()) < 1e-12);
    }

    #[test]
    fn discrete_single_steps_reduce_to_ops() {
        let mut rng = ChaCha8Rng::seed_from_u64(8);
        let x = rand_t([2, 3, 2], &mut rng);
        let y = rand_t([2, 3, 2], &mut rng);
        let p = StepOpParams::init(3, &mut rng);
        let sum = cell_forward_discrete(&x, &y, &[StepGene::new(0, 1, Sum)], std::slice::from_ref(&p), CellOutput::SumOfSteps).unwrap();
        assert_eq!(sum, x.add(&y).unwrap());
        let cfc = cell_forward_discrete(&x, &y, &[StepGene::new(0, 1, ConcatFc)], std::slice::from_ref(&p), CellOutput::SumOfSteps).unwrap();
        assert!(cfc.max_abs_diff(&concat_fc_op(&x, &y, &p.concat_fc).unwrap()) < 1e-15);
    }

    #[test]
    fn discrete_rejects_forward_reference() {
        let x = Tensor::<f64>::zeros(&[1, 2, 2]);
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        let p = StepOpParams::init(2, &mut rng);
        let err = cell_forward_discrete(&x, &x, &[StepGene::new(2, 0, Sum)], &[p], CellOutput::SumOfSteps);
        assert!(err.is_err());
    }

    #[test]
    fn last_step_output_mode() {
        let mut rng = ChaCha8Rng::seed_from_u64(10);
        let x = rand_t([1, 2, 2], &mut rng);
        let y = rand_t([1, 2, 2], &mut rng);
        let p = StepOpParams::init(2, &mut rng);
        let genes = [StepGene::new(0, 1, Sum), StepGene::new(2, 0, Sum)];
        let last = cell_forward_discrete(&x, &y, &genes, &[p.clone(), p.clone()], CellOutput::LastStep).unwrap();
        let expected = x.add(&y).unwrap().add(&x).unwrap();
        assert!(last.max_abs_diff(&expected) < 1e-15);
        let summed = cell_forward_discrete(&x, &y, &genes, &[p.clone(), p], CellOutput::SumOfSteps).unwrap();
        assert!(summed.max_abs_diff(&expected.add(&x.add(&y).unwrap()).unwrap()) < 1e-15);
    }

    #[test]
    fn concentrated_relaxed_matches_discrete() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let x = rand_t([2, 3, 4], &mut rng);
        let y = rand_t([2, 3, 4], &mut rng);
        let mut arch = CellArch {
            steps: vec![rand_step(2, 3, &mut rng), rand_step(3, 3, &mut rng)],
        };
        let genes = derive_cell(&arch).unwrap();
        for (step, gene) in arch.steps.iter_mut().zip(&genes) {
            step.beta_x[gene.src_x] += 20.0;
            step.beta_y[gene.src_y] += 20.0;
            step.gamma[gene.op.index()] += 20.0;
        }
        let params: Vec<_> = arch.steps.iter().map(|s| s.params.clone()).collect();
        let relaxed = cell_forward_relaxed(&x, &y, &arch).unwrap();
        let discrete = cell_forward_discrete(&x, &y, &genes, &params, CellOutput::SumOfSteps).unwrap();
        assert!(relaxed.max_abs_diff(&discrete) < 1e-5);
    }

    #[test]
    fn argmax_prefers_lowest_index_on_ties() {
        assert_eq!(argmax(&[1.0, 3.0, 3.0]), Some(1));
        assert_eq!(argmax::<f64>(&[]), None);
    }
}
