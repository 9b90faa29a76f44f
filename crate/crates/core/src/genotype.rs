//! Discrete architecture description and its file formats.
//!
//! The upper-level node sequence is all modality features (in inventory
//! order) followed by the cells. A cell at position `p` in that sequence
//! takes two distinct inputs `i < j < p`. Inside a cell, step genes index
//! `[x, y, step_1, ...]`.

use std::fmt::Write as _;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::cell::{CellOutput, StepGene};
use crate::error::{FusionError, Result};
use crate::ops::PrimitiveOpKind;

pub const SCHEMA_VERSION: u32 = 1;

#[derive(Clone, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct FeatureRef {
    pub modality: String,
    pub index: usize,
}

impl FeatureRef {
    pub fn label(&self) -> String {
        format!("{}_{}", self.modality, self.index + 1)
    }
}

/// Search-space dimensions the genotype was derived under.
#[derive(Clone, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct GenotypeConfig {
    pub num_cells: usize,
    pub num_steps: usize,
    pub channels: usize,
    pub length: usize,
    pub features: Vec<FeatureRef>,
    #[serde(default)]
    pub cell_output: CellOutput,
}

#[derive(Clone, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct CellGene {
    /// Positions `(i, j)` in the upper-level node sequence, `i < j`.
    pub inputs: (usize, usize),
    pub steps: Vec<StepGene>,
}

#[derive(Clone, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct Genotype {
    pub schema_version: u32,
    pub config: GenotypeConfig,
    pub cells: Vec<CellGene>,
}

fn invalid(path: impl Into<String>, message: impl Into<String>) -> FusionError {
    FusionError::Genotype {
        path: path.into(),
        message: message.into(),
    }
}

impl Genotype {
    pub fn new(config: GenotypeConfig, cells: Vec<CellGene>) -> Result<Self> {
        let g = Self {
            schema_version: SCHEMA_VERSION,
            config,
            cells,
        };
        g.validate()?;
        Ok(g)
    }

    pub fn num_features(&self) -> usize {
        self.config.features.len()
    }

    /// Upper-level position of cell `k`.
    pub fn cell_position(&self, k: usize) -> usize {
        self.num_features() + k
    }

    pub fn validate(&self) -> Result<()> {
        if self.schema_version != SCHEMA_VERSION {
            return Err(invalid(
                "schema_version",
                format!("unsupported version {} (expected {SCHEMA_VERSION})", self.schema_version),
            ));
        }
        let cfg = &self.config;
        if cfg.features.len() < 2 {
            return Err(invalid("config.features", "at least two features are required"));
        }
        for (name, v) in [
            ("num_cells", cfg.num_cells),
            ("num_steps", cfg.num_steps),
            ("channels", cfg.channels),
            ("length", cfg.length),
        ] {
            if v == 0 {
                return Err(invalid(format!("config.{name}"), "must be positive"));
            }
        }
        if self.cells.len() != cfg.num_cells {
            return Err(invalid(
                "cells",
                format!("{} cells listed but config.num_cells = {}", self.cells.len(), cfg.num_cells),
            ));
        }
        for (k, cell) in self.cells.iter().enumerate() {
            let pos = self.cell_position(k);
            let (i, j) = cell.inputs;
            if !(i < j && j < pos) {
                return Err(invalid(
                    format!("cells[{k}].inputs"),
                    format!("({i}, {j}) must satisfy i < j < {pos} (distinct predecessors of cell {})", k + 1),
                ));
            }
            if cell.steps.len() != cfg.num_steps {
                return Err(invalid(
                    format!("cells[{k}].steps"),
                    format!("{} steps listed but config.num_steps = {}", cell.steps.len(), cfg.num_steps),
                ));
            }
            for (s, gene) in cell.steps.iter().enumerate() {
                for (field, src) in [("src_x", gene.src_x), ("src_y", gene.src_y)] {
                    if src >= 2 + s {
                        return Err(invalid(
                            format!("cells[{k}].steps[{s}].{field}"),
                            format!(
                                "step C{}_S{} reads node {src}, but only nodes 0..{} precede it",
                                k + 1,
                                s + 1,
                                2 + s
                            ),
                        ));
                    }
                }
            }
        }
        Ok(())
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("genotype serializes")
    }

    /// Parses and validates a genotype document. Structural errors carry the
    /// JSON path of the offending field.
    pub fn from_json(text: &str) -> Result<Self> {
        let de = &mut serde_json::Deserializer::from_str(text);
        let g: Genotype = serde_path_to_error::deserialize(de).map_err(|e| {
            let path = e.path().to_string();
            invalid(path, e.into_inner().to_string())
        })?;
        g.validate()?;
        Ok(g)
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        self.to_json().into_bytes()
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        let text = std::str::from_utf8(bytes).map_err(|e| invalid("$", format!("not UTF-8: {e}")))?;
        Self::from_json(text)
    }

    /// Short content hash of the canonical compact encoding.
    pub fn digest(&self) -> String {
        let bytes = serde_json::to_vec(self).expect("genotype serializes");
        let hash = Sha256::digest(&bytes);
        hex::encode(&hash[..8])
    }

    /// Label of upper-level node `i`: a feature name or `C{k}`.
    pub fn node_label(&self, i: usize) -> String {
        match self.config.features.get(i) {
            Some(f) => f.label(),
            None => format!("C{}", i - self.num_features() + 1),
        }
    }

    /// Indices of features read directly by some cell, ascending.
    pub fn used_features(&self) -> Vec<usize> {
        let f = self.num_features();
        let mut used: Vec<usize> = self
            .cells
            .iter()
            .flat_map(|c| [c.inputs.0, c.inputs.1])
            .filter(|&i| i < f)
            .collect();
        used.sort_unstable();
        used.dedup();
        used
    }

    /// Closed-form trainable-parameter count of the network this genotype
    /// instantiates: adapters of used features, chosen ops, and the head.
    pub fn analytic_param_count(&self, raw_channels: &[usize], n_classes: usize) -> usize {
        let c = self.config.channels;
        let adapters: usize = self.used_features().iter().map(|&i| raw_channels[i] * c + c).sum();
        let ops: usize = self
            .cells
            .iter()
            .flat_map(|cell| &cell.steps)
            .map(|s| match s.op {
                PrimitiveOpKind::LinearGlu => 2 * c * c,
                PrimitiveOpKind::ConcatFc => 2 * c * c + c,
                _ => 0,
            })
            .sum();
        adapters + ops + c * n_classes + n_classes
    }

    /// Graphviz rendering. Step nodes are named `C{cell}_S{step}`.
    pub fn to_dot(&self) -> String {
        let mut out = String::new();
        let _ = writeln!(out, "digraph genotype {{");
        let _ = writeln!(out, "  rankdir=LR;");
        let _ = writeln!(out, "  node [shape=box, fontname=\"Helvetica\"];");
        let used = self.used_features();
        for (i, f) in self.config.features.iter().enumerate() {
            let style = if used.contains(&i) { "solid" } else { "dashed" };
            let _ = writeln!(out, "  \"{}\" [style={style}];", f.label());
        }
        for (k, cell) in self.cells.iter().enumerate() {
            let cname = format!("C{}", k + 1);
            let _ = writeln!(out, "  subgraph \"cluster_{cname}\" {{");
            let _ = writeln!(out, "    label=\"Cell {}\";", k + 1);
            for (s, gene) in cell.steps.iter().enumerate() {
                let _ = writeln!(out, "    \"{cname}_S{}\" [label=\"{cname}_S{}\\n{}\"];", s + 1, s + 1, gene.op);
            }
            let _ = writeln!(out, "    \"{cname}\" [shape=ellipse];");
            let _ = writeln!(out, "  }}");
            let inputs = [self.node_label(cell.inputs.0), self.node_label(cell.inputs.1)];
            for (s, gene) in cell.steps.iter().enumerate() {
                for (slot, src) in [("x", gene.src_x), ("y", gene.src_y)] {
                    let from = if src < 2 {
                        inputs[src].clone()
                    } else {
                        format!("{cname}_S{}", src - 1)
                    };
                    let _ = writeln!(out, "  \"{from}\" -> \"{cname}_S{}\" [label=\"{slot}\", color=black];", s + 1);
                }
            }
            let contributing: Vec<usize> = match self.config.cell_output {
                CellOutput::SumOfSteps => (0..cell.steps.len()).collect(),
                CellOutput::LastStep => vec![cell.steps.len() - 1],
            };
            for s in contributing {
                let _ = writeln!(out, "  \"{cname}_S{}\" -> \"{cname}\";", s + 1);
            }
            let _ = writeln!(out, "  \"{}\" -> \"{cname}\" [color=blue, style=dotted];", inputs[0]);
            let _ = writeln!(out, "  \"{}\" -> \"{cname}\" [color=blue, style=dotted];", inputs[1]);
        }
        let _ = writeln!(out, "  \"output\" [shape=doubleoctagon];");
        let _ = writeln!(out, "  \"C{}\" -> \"output\";", self.cells.len());
        let _ = writeln!(out, "}}");
        out
    }
}

/// Which input of an AoA cell gates the attention output.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum AoaGate {
    /// The gate reads the query input `x`.
    Query,
    /// The gate reads the key/value input `y`.
    KeyValue,
}

/// Hand-designed fusion strategies expressible as step lists.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PatternKind {
    Sum,
    ConcatFc,
    /// Two attention heads merged by the cell-output sum.
    Mha2,
    /// Attention followed by a gated linear unit on its output.
    Aoa(AoaGate),
}

impl PatternKind {
    pub const ALL: [PatternKind; 4] = [
        PatternKind::Sum,
        PatternKind::ConcatFc,
        PatternKind::Mha2,
        PatternKind::Aoa(AoaGate::Query),
    ];

    pub fn name(self) -> &'static str {
        match self {
            PatternKind::Sum => "sum",
            PatternKind::ConcatFc => "concat_fc",
            PatternKind::Mha2 => "mha2",
            PatternKind::Aoa(AoaGate::Query) => "aoa",
            PatternKind::Aoa(AoaGate::KeyValue) => "aoa_kv",
        }
    }

    pub fn steps(self) -> Vec<StepGene> {
        use PrimitiveOpKind::*;
        match self {
            PatternKind::Sum => vec![StepGene::new(0, 1, Sum)],
            PatternKind::ConcatFc => vec![StepGene::new(0, 1, ConcatFc)],
            PatternKind::Mha2 => vec![StepGene::new(0, 1, Attention), StepGene::new(0, 1, Attention)],
            PatternKind::Aoa(gate) => {
                let gate_src = match gate {
                    AoaGate::Query => 0,
                    AoaGate::KeyValue => 1,
                };
                vec![StepGene::new(0, 1, Attention), StepGene::new(2, gate_src, LinearGlu)]
            }
        }
    }

    /// The primitive op this pattern reduces to when it is a single step.
    pub fn single_op(self) -> Option<PrimitiveOpKind> {
        match self {
            PatternKind::Sum => Some(PrimitiveOpKind::Sum),
            PatternKind::ConcatFc => Some(PrimitiveOpKind::ConcatFc),
            _ => None,
        }
    }
}

impl std::str::FromStr for PatternKind {
    type Err = FusionError;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().replace('-', "_").as_str() {
            "sum" => Ok(PatternKind::Sum),
            "concat_fc" | "concatfc" => Ok(PatternKind::ConcatFc),
            "mha2" | "mha" => Ok(PatternKind::Mha2),
            "aoa" | "aoa_query" => Ok(PatternKind::Aoa(AoaGate::Query)),
            "aoa_kv" | "aoa_key_value" => Ok(PatternKind::Aoa(AoaGate::KeyValue)),
            other => Err(FusionError::InvalidArgument(format!("unknown fusion pattern `{other}`"))),
        }
    }
}

/// One cell realizing `kind` on the upper-level inputs `(i, j)`.
pub fn make_pattern(kind: PatternKind, inputs: (usize, usize)) -> CellGene {
    CellGene {
        inputs,
        steps: kind.steps(),
    }
}

/// A full genotype that applies `kind` in every cell, keeping the given
/// upper-level input pairs.
pub fn pattern_genotype(config: &GenotypeConfig, kind: PatternKind, pairs: &[(usize, usize)]) -> Result<Genotype> {
    let steps = kind.steps();
    let mut config = config.clone();
    config.num_steps = steps.len();
    config.num_cells = pairs.len();
    let cells = pairs.iter().map(|&p| make_pattern(kind, p)).collect();
    Genotype::new(config, cells)
}
