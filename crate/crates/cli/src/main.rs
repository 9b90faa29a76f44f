use std::fs::{self, File};
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{bail, Context};
use clap::{Args, Parser, Subcommand};
use fusionnas::config::RunConfig;
use fusionnas::genotype::Genotype;
use fusionnas::oracle::{brute_force_rank, DEFAULT_CAP};
use fusionnas::search::{
    ablation_csv, evaluate_genotype, resume_search, run_baseline, searched_row, BaselineKind, EpochRecord, SearchOptions,
    SearchState,
};
use fusionnas::tasks::{export_manifest, PreparedDatasets};
use fusionnas::FusionError;

mod plot;

#[derive(Parser)]
#[command(name = "fusionnas", version, about = "Search, evaluate and inspect multimodal fusion architectures")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run the bilevel search and write the derived genotype.
    Search {
        #[command(flatten)]
        run: RunArgs,
        /// Continue from the checkpoint in the output directory.
        #[arg(long)]
        resume: bool,
    },
    /// Retrain a genotype on train+val and report its test metric.
    Eval {
        #[command(flatten)]
        run: RunArgs,
        #[arg(long)]
        genotype: PathBuf,
    },
    /// Compare the searched genotype with baselines over 5 seeds.
    Ablate {
        #[command(flatten)]
        run: RunArgs,
        /// Searched genotype; searched from scratch when omitted.
        #[arg(long)]
        genotype: Option<PathBuf>,
        /// Baseline kinds, e.g. random_selection,late_fusion,fixed_sum.
        #[arg(
            long,
            value_delimiter = ',',
            default_value = "random_selection,late_fusion,fixed_sum,fixed_concat_fc,fixed_mha2,fixed_aoa"
        )]
        kinds: Vec<String>,
    },
    /// Rank every genotype of a small space by brute force.
    Rank {
        #[command(flatten)]
        run: RunArgs,
    },
    /// Write the configured task as an external manifest with per-sample files.
    ExportTask {
        #[command(flatten)]
        run: RunArgs,
    },
    /// Render a genotype as a DOT graph.
    Viz {
        #[arg(long)]
        genotype: PathBuf,
        /// Output file; stdout when omitted.
        #[arg(long)]
        out: Option<PathBuf>,
    },
}

#[derive(Args)]
struct RunArgs {
    #[arg(long)]
    config: PathBuf,
    /// Output directory, overriding the config and the environment.
    #[arg(long)]
    out: Option<PathBuf>,
    /// Seed, overriding the config.
    #[arg(long)]
    seed: Option<u64>,
}

struct Run {
    cfg: RunConfig,
    config_dir: PathBuf,
    out: PathBuf,
}

impl RunArgs {
    fn load(&self) -> anyhow::Result<Run> {
        let mut cfg = RunConfig::load(&self.config)?;
        if let Some(seed) = self.seed {
            cfg.seed = seed;
        }
        let out = self.out.clone().unwrap_or_else(|| cfg.resolved_output_dir());
        fs::create_dir_all(&out).with_context(|| format!("creating {}", out.display()))?;
        fs::write(out.join("run_config.toml"), cfg.to_toml())?;
        let config_dir = self.config.parent().map(Path::to_path_buf).unwrap_or_default();
        Ok(Run { cfg, config_dir, out })
    }
}

impl Run {
    fn data(&self) -> anyhow::Result<PreparedDatasets<f64>> {
        let data = self.cfg.load_datasets::<f64>(&self.config_dir)?;
        Ok(data.prepare(self.cfg.space.length)?)
    }
}

fn read_genotype(path: &Path) -> anyhow::Result<Genotype> {
    let text = fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
    Ok(Genotype::from_json(&text)?)
}

/// The genotype must come from the configured search space.
fn check_inventory(g: &Genotype, cfg: &RunConfig) -> anyhow::Result<()> {
    let want: Vec<String> = cfg.space.features.iter().map(|f| f.label()).collect();
    let have: Vec<String> = g.config.features.iter().map(|f| f.label()).collect();
    if want != have {
        bail!("genotype features {have:?} do not match the configured features {want:?}");
    }
    if g.config.channels != cfg.space.channels || g.config.length != cfg.space.length {
        bail!(
            "genotype was derived with C={}, L={} but the config has C={}, L={}",
            g.config.channels,
            g.config.length,
            cfg.space.channels,
            cfg.space.length
        );
    }
    Ok(())
}

fn search(run: &Run, resume: bool) -> anyhow::Result<Genotype> {
    let data = run.data()?;
    let space = run.cfg.search_space();
    let train = run.cfg.train_config();
    let checkpoint = run.out.join("checkpoint.json");
    let log_path = run.out.join("search_log.ndjson");
    let state = if resume && checkpoint.exists() {
        SearchState::<f64>::load(&checkpoint)?
    } else {
        SearchState::new(&space, &data, &train)?
    };
    let mut log = BufWriter::new(if state.epoch > 0 {
        File::options().append(true).create(true).open(&log_path)?
    } else {
        File::create(&log_path)?
    });
    let mut log_err = None;
    let mut on_epoch = |r: &EpochRecord| {
        eprintln!(
            "epoch {:>3}  train_loss {:.4}  val_metric {:.4}  best {:.4}  {}",
            r.epoch,
            r.train_loss,
            r.val_metric,
            r.best_val_metric,
            &r.genotype_digest[..12]
        );
        let line = serde_json::to_string(r).expect("record serializes");
        if let Err(e) = writeln!(log, "{line}").and_then(|_| log.flush()) {
            log_err.get_or_insert(e);
        }
    };
    let outcome = resume_search(
        state,
        &data,
        &train,
        SearchOptions {
            checkpoint: Some(checkpoint),
            on_epoch: Some(&mut on_epoch),
            max_epochs_this_call: None,
        },
    )?;
    if let Some(e) = log_err {
        return Err(e).context("writing the search log");
    }
    let g = outcome.genotype;
    fs::write(run.out.join("genotype.json"), g.to_json())?;
    fs::write(run.out.join("genotype.dot"), g.to_dot())?;
    fs::write(run.out.join("search_curve.csv"), plot::curve_csv(&outcome.state.log))?;
    if let Err(e) = plot::write_svg(&outcome.state.log, &run.out.join("search_curve.svg")) {
        eprintln!("warning: search curve image not written: {e}");
    }
    println!("{}", g.digest());
    Ok(g)
}

fn real_main(cli: Cli) -> anyhow::Result<()> {
    match cli.command {
        Command::Search { run, resume } => {
            search(&run.load()?, resume)?;
        }
        Command::Eval { run, genotype } => {
            let run = run.load()?;
            let g = read_genotype(&genotype)?;
            check_inventory(&g, &run.cfg)?;
            let report = evaluate_genotype(&g, &run.data()?, &run.cfg.train_config())?;
            fs::write(run.out.join("eval.json"), serde_json::to_string_pretty(&report)? + "\n")?;
            println!("{}", serde_json::to_string(&report)?);
        }
        Command::Ablate { run, genotype, kinds } => {
            let kinds = kinds.iter().map(|k| k.parse::<BaselineKind>()).collect::<Result<Vec<_>, _>>()?;
            let run = run.load()?;
            let g = match genotype {
                Some(path) => read_genotype(&path)?,
                None => search(&run, false)?,
            };
            check_inventory(&g, &run.cfg)?;
            let data = run.data()?;
            let train = run.cfg.train_config();
            let mut rows = vec![searched_row(&g, &data, &train)?];
            for kind in kinds {
                eprintln!("baseline {}", kind.name());
                rows.push(run_baseline(kind, &data, &g, &train)?);
            }
            let table = ablation_csv(&rows);
            fs::write(run.out.join("ablation.csv"), &table)?;
            for r in &rows {
                println!("{:<18} {:.4} ± {:.4}", r.kind, r.mean, r.std);
            }
        }
        Command::Rank { run } => {
            let run = run.load()?;
            let ranking = brute_force_rank(&run.cfg.search_space(), &run.data()?, &run.cfg.train_config(), DEFAULT_CAP)?;
            fs::write(run.out.join("ranking.csv"), ranking.to_csv())?;
            println!("{} genotypes ranked", ranking.entries.len());
        }
        Command::ExportTask { run } => {
            let run = run.load()?;
            let data = run.cfg.load_datasets::<f64>(&run.config_dir)?;
            let manifest = export_manifest(&data, &run.out)?;
            println!("{}", manifest.display());
        }
        Command::Viz { genotype, out } => {
            let dot = read_genotype(&genotype)?.to_dot();
            match out {
                Some(path) => fs::write(&path, dot).with_context(|| format!("writing {}", path.display()))?,
                None => print!("{dot}"),
            }
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    match real_main(Cli::parse()) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            match e.downcast_ref::<FusionError>() {
                Some(FusionError::Config { .. }) => ExitCode::from(2),
                _ => ExitCode::FAILURE,
            }
        }
    }
}
