//! Exhaustive enumeration and brute-force ranking of tiny search spaces.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::cell::StepGene;
use crate::error::{FusionError, Result};
use crate::genotype::{CellGene, Genotype};
use crate::hypernet::SearchSpaceConfig;
use crate::ops::PrimitiveOpKind;
use crate::scalar::Scalar;
use crate::search::{fit_genotype, score, TrainConfig};
use crate::tasks::PreparedDatasets;

pub const DEFAULT_CAP: u128 = 10_000;

/// Choice cardinalities in enumeration order: for each cell its pair count,
/// then for each step `src_x`, `src_y` and op.
fn radices(space: &SearchSpaceConfig) -> Vec<u128> {
    let mut out = Vec::new();
    for k in 0..space.num_cells {
        let n = space.cell_predecessors(k) as u128;
        out.push(n * (n - 1) / 2);
        for s in 0..space.num_steps {
            let preds = 2 + s as u128;
            out.extend([preds, preds, PrimitiveOpKind::COUNT as u128]);
        }
    }
    out
}

/// Closed-form size of the discrete space.
pub fn count_genotypes(space: &SearchSpaceConfig) -> Result<u128> {
    space.validate()?;
    radices(space)
        .into_iter()
        .try_fold(1u128, |acc, r| acc.checked_mul(r))
        .ok_or(FusionError::SpaceTooLarge { count: u128::MAX, cap: u128::MAX })
}

fn pair_at(n: usize, mut index: usize) -> (usize, usize) {
    for i in 0..n {
        let row = n - 1 - i;
        if index < row {
            return (i, i + 1 + index);
        }
        index -= row;
    }
    unreachable!("pair index in range")
}

/// The `index`-th genotype in enumeration order (last choice varies fastest).
pub fn genotype_at(space: &SearchSpaceConfig, index: u128) -> Result<Genotype> {
    let radices = radices(space);
    let mut digits = vec![0usize; radices.len()];
    let mut rest = index;
    for (d, r) in digits.iter_mut().zip(&radices).rev() {
        *d = (rest % r) as usize;
        rest /= r;
    }
    if rest != 0 {
        return Err(FusionError::InvalidArgument(format!("genotype index {index} is out of range")));
    }
    let mut it = digits.into_iter();
    let mut cells = Vec::with_capacity(space.num_cells);
    for k in 0..space.num_cells {
        let inputs = pair_at(space.cell_predecessors(k), it.next().expect("digit"));
        let steps = (0..space.num_steps)
            .map(|_| {
                let x = it.next().expect("digit");
                let y = it.next().expect("digit");
                let op = PrimitiveOpKind::from_index(it.next().expect("digit")).expect("op digit");
                StepGene::new(x, y, op)
            })
            .collect();
        cells.push(CellGene { inputs, steps });
    }
    Genotype::new(space.genotype_config(), cells)
}

/// Every valid genotype of `space` exactly once. Fails when the space holds
/// more than `cap` genotypes.
pub fn enumerate_genotypes(space: &SearchSpaceConfig, cap: u128) -> Result<impl Iterator<Item = Genotype> + '_> {
    let count = count_genotypes(space)?;
    if count > cap {
        return Err(FusionError::SpaceTooLarge { count, cap });
    }
    Ok((0..count).map(move |i| genotype_at(space, i).expect("index below count")))
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RankEntry {
    pub digest: String,
    pub val_metric: f64,
    pub test_metric: f64,
    pub genotype: Genotype,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct GenotypeRanking {
    /// Sorted by validation metric, best first; enumeration order breaks ties.
    pub entries: Vec<RankEntry>,
    pub space_size: u128,
    pub train_config: TrainConfig,
}

impl GenotypeRanking {
    /// 0-based position of `digest`.
    pub fn position(&self, digest: &str) -> Option<usize> {
        self.entries.iter().position(|e| e.digest == digest)
    }

    /// Position of the best-ranked entry whose validation metric equals that
    /// of `digest`; genotypes with equal scores share a rank.
    pub fn rank(&self, digest: &str) -> Option<usize> {
        let p = self.position(digest)?;
        let v = self.entries[p].val_metric;
        self.entries.iter().position(|e| e.val_metric == v)
    }

    /// Whether `digest` ranks within the best `fraction` of the space.
    pub fn in_top_fraction(&self, digest: &str, fraction: f64) -> bool {
        let limit = (fraction * self.entries.len() as f64).ceil() as usize;
        self.rank(digest).is_some_and(|r| r < limit)
    }

    pub fn to_csv(&self) -> String {
        let mut out = String::from("rank,digest,val_metric,test_metric,genotype\n");
        for (i, e) in self.entries.iter().enumerate() {
            let compact = serde_json::to_string(&e.genotype).expect("genotype serializes").replace('"', "\"\"");
            out.push_str(&format!("{},{},{},{},\"{}\"\n", i + 1, e.digest, e.val_metric, e.test_metric, compact));
        }
        out
    }
}

/// Trains every genotype of `space` on the train split for
/// `cfg.rank_epochs` with identical seeds and ranks them by validation
/// metric. Trainings run in parallel.
pub fn brute_force_rank<T: Scalar>(space: &SearchSpaceConfig, data: &PreparedDatasets<T>, cfg: &TrainConfig, cap: u128) -> Result<GenotypeRanking> {
    cfg.validate()?;
    let genotypes: Vec<Genotype> = enumerate_genotypes(space, cap)?.collect();
    let mut entries = genotypes
        .into_par_iter()
        .map(|g| {
            let net = fit_genotype(&g, data, &data.train, cfg.rank_epochs, cfg)?;
            Ok(RankEntry {
                digest: g.digest(),
                val_metric: score(&net, &data.val)?,
                test_metric: score(&net, &data.test)?,
                genotype: g,
            })
        })
        .collect::<Result<Vec<_>>>()?;
    entries.sort_by(|a, b| b.val_metric.total_cmp(&a.val_metric));
    Ok(GenotypeRanking {
        space_size: entries.len() as u128,
        entries,
        train_config: cfg.clone(),
    })
}
