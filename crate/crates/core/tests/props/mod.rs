//! Property checks shared by the invariant tests and the acceptance report.
#![allow(dead_code)]

use std::sync::OnceLock;

use fusionnas::feature_adapter::FeatureSpec;
use fusionnas::genotype::Genotype;
use fusionnas::hypernet::{derive_cell_inputs, discretize, mixed_edge, ArchParams, EdgeAlpha, SearchSpaceConfig};
use fusionnas::ops::attention_op;
use fusionnas::oracle::{count_genotypes, genotype_at};
use fusionnas::search::{run_search, TrainConfig};
use fusionnas::tasks::{generate, PlantedTaskSpec, PreparedDatasets};
use fusionnas::Tensor64;
use proptest::prelude::*;
use proptest::test_runner::{Config, TestRunner};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

pub const CASES: u32 = 128;

pub type Outcome = Result<(), String>;

pub type Check = fn() -> Outcome;

fn runner() -> TestRunner {
    TestRunner::new(Config { cases: CASES, failure_persistence: None, ..Config::default() })
}

fn run<S: Strategy>(strategy: S, test: impl Fn(S::Value) -> Result<(), TestCaseError>) -> Outcome
where
    S::Value: std::fmt::Debug,
{
    runner().run(&strategy, test).map_err(|e| e.to_string())
}

fn space(features: usize, cells: usize, steps: usize) -> SearchSpaceConfig {
    SearchSpaceConfig {
        features: (0..features)
            .map(|i| FeatureSpec::sequence(if i % 2 == 0 { "A" } else { "B" }, i / 2, 3, Some(2)))
            .collect(),
        num_cells: cells,
        num_steps: steps,
        channels: 3,
        length: 2,
        cell_output: Default::default(),
    }
}

fn tensor(shape: &[usize], data: Vec<f64>) -> Tensor64 {
    Tensor64::new(shape.to_vec(), data).unwrap()
}

/// Logits on a 1/8 grid, so shifting them stays exact in f64.
fn grid_logit() -> impl Strategy<Value = f64> {
    (-64i32..=64).prop_map(|v| v as f64 / 8.0)
}

pub fn zero_edge_monotonicity() -> Outcome {
    let strategy = (-10.0f64..10.0, -10.0f64..10.0, 0.0f64..20.0, prop::collection::vec(-3.0f64..3.0, 6));
    run(strategy, |(identity, zero, bump, s)| {
        let before = EdgeAlpha::new(identity, zero);
        let after = EdgeAlpha::new(identity, zero + bump);
        prop_assert!(after.identity_weight() <= before.identity_weight());
        let s = tensor(&[1, 3, 2], s);
        prop_assert!(mixed_edge(&after, &s).max_abs() <= mixed_edge(&before, &s).max_abs());
        Ok(())
    })
}

pub fn cell_input_shift_invariance() -> Outcome {
    let strategy = (prop::collection::vec((grid_logit(), grid_logit()), 2..8), grid_logit());
    run(strategy, |(logits, shift)| {
        let alphas: Vec<EdgeAlpha<f64>> = logits.iter().map(|&(a, z)| EdgeAlpha::new(a, z)).collect();
        let shifted: Vec<EdgeAlpha<f64>> = logits.iter().map(|&(a, z)| EdgeAlpha::new(a + shift, z + shift)).collect();
        let pair = derive_cell_inputs(&alphas).unwrap();
        prop_assert_eq!(pair, derive_cell_inputs(&shifted).unwrap());
        prop_assert!(pair.0 < pair.1 && pair.1 < alphas.len());
        Ok(())
    })
}

pub fn genotype_round_trip() -> Outcome {
    run((2usize..6, 1usize..4, 1usize..4, any::<u128>()), |(features, cells, steps, pick)| {
        let sp = space(features, cells, steps);
        let g = genotype_at(&sp, pick % count_genotypes(&sp).unwrap()).unwrap();
        prop_assert_eq!(&Genotype::from_json(&g.to_json()).unwrap(), &g);
        prop_assert_eq!(&Genotype::from_bytes(&g.to_bytes()).unwrap(), &g);
        prop_assert_eq!(Genotype::from_json(&g.to_json()).unwrap().digest(), g.digest());
        Ok(())
    })
}

pub fn discretize_validity() -> Outcome {
    run((2usize..5, 1usize..3, 1usize..3, any::<u64>()), |(features, cells, steps, seed)| {
        let sp = space(features, cells, steps);
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        // coarse values make ties common
        let arch = ArchParams::from_fn(&sp, || (rng.random_range(-2i32..=2)) as f64);
        let g = discretize(&arch, &sp).unwrap();
        prop_assert!(g.validate().is_ok());
        Ok(())
    })
}

pub fn attention_convex_hull() -> Outcome {
    run((1usize..3, 1usize..5, 1usize..6, any::<u64>()), |(n, c, l, seed)| {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut draw = |len: usize| (0..len).map(|_| rng.random_range(-4.0..4.0)).collect::<Vec<f64>>();
        let x = tensor(&[n, c, l], draw(n * c * l));
        let y = tensor(&[n, c, l], draw(n * c * l));
        let directions: Vec<Vec<f64>> = (0..4).map(|_| draw(c)).collect();
        let out = attention_op(&x, &y).unwrap();
        for b in 0..n {
            for i in 0..l {
                let o: Vec<f64> = (0..c).map(|ch| out.get(&[b, ch, i])).collect();
                for v in &directions {
                    let proj = |p: &[f64]| p.iter().zip(v).map(|(a, b)| a * b).sum::<f64>();
                    let hull_max = (0..l)
                        .map(|j| proj(&(0..c).map(|ch| y.get(&[b, ch, j])).collect::<Vec<_>>()))
                        .fold(f64::NEG_INFINITY, f64::max);
                    prop_assert!(proj(&o) <= hull_max + 1e-9);
                }
                for (ch, &oc) in o.iter().enumerate() {
                    let col: Vec<f64> = (0..l).map(|j| y.get(&[b, ch, j])).collect();
                    let lo = col.iter().cloned().fold(f64::INFINITY, f64::min);
                    let hi = col.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
                    prop_assert!(oc >= lo - 1e-9 && oc <= hi + 1e-9);
                }
            }
        }
        Ok(())
    })
}

fn tiny_task() -> &'static (PreparedDatasets<f64>, SearchSpaceConfig) {
    static TASK: OnceLock<(PreparedDatasets<f64>, SearchSpaceConfig)> = OnceLock::new();
    TASK.get_or_init(|| {
        let features = vec![
            FeatureSpec::sequence("A", 0, 3, Some(2)),
            FeatureSpec::sequence("A", 1, 4, None),
            FeatureSpec::sequence("B", 0, 3, Some(2)),
        ];
        let spec = PlantedTaskSpec {
            features: features.clone(),
            planted_pair: (1, 2),
            n_classes: 3,
            n_train: 24,
            n_val: 12,
            n_test: 12,
            teacher_channels: 3,
            teacher_length: 2,
            ..PlantedTaskSpec::default()
        };
        let data = generate::<f64>(&spec).unwrap().datasets.prepare(2).unwrap();
        let space = SearchSpaceConfig {
            features,
            num_cells: 2,
            num_steps: 2,
            channels: 3,
            length: 2,
            cell_output: Default::default(),
        };
        (data, space)
    })
}

pub fn search_seed_determinism() -> Outcome {
    run(any::<u64>(), |seed| {
        let (data, space) = tiny_task();
        let cfg = TrainConfig { seed, epochs: 2, batch_size: 8, ..TrainConfig::default() };
        let a = run_search(data, space, &cfg).unwrap();
        let b = run_search(data, space, &cfg).unwrap();
        prop_assert_eq!(a.genotype.digest(), b.genotype.digest());
        prop_assert_eq!(&a.state.log, &b.state.log);
        Ok(())
    })
}

/// Every invariant with its name.
pub fn all() -> Vec<(&'static str, Check)> {
    vec![
        ("zero-edge monotonicity", zero_edge_monotonicity),
        ("cell-input shift invariance", cell_input_shift_invariance),
        ("genotype round trip", genotype_round_trip),
        ("discretize validity", discretize_validity),
        ("attention convex hull", attention_convex_hull),
        ("search seed determinism", search_seed_determinism),
    ]
}
