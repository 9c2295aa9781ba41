use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{bail, Context};
use cbcl_core::harness::{
    fit_slope, generate_synthetic, run_budget_sweep, run_experiment, run_pseudo_demo,
    run_timing_bench, write_sweep_jsonl, DatasetSource, ExperimentConfig, Shots, SyntheticConfig,
    TimingConfig,
};
use cbcl_core::{read_dataset, write_dataset, Budget, FeatureDataset, FileFormat, MemoryStore};
use clap::{Args, Parser, Subcommand};
use serde_json::json;

#[derive(Parser)]
#[command(
    name = "cbcl",
    version,
    about = "Cluster-based class-incremental learning on feature vectors"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run one incremental experiment and write a JSON-lines report.
    Run {
        #[command(flatten)]
        exp: ExperimentArgs,
        #[arg(long)]
        out: PathBuf,
        /// Optional JSON-lines file for per-phase wall-clock timings.
        #[arg(long)]
        timings: Option<PathBuf>,
        /// Directory to save each seed's final cluster memory into.
        #[arg(long)]
        store_dir: Option<PathBuf>,
    },
    /// Compare merge-based reduction with removal across memory budgets.
    SweepBudget {
        #[command(flatten)]
        exp: ExperimentArgs,
        /// Comma-separated budgets, ascending; `unlimited` may come last.
        #[arg(long, value_delimiter = ',', required = true)]
        budgets: Vec<String>,
        #[arg(long)]
        out: PathBuf,
    },
    /// Measure per-query latency of voting and the linear classifier.
    BenchPredict {
        #[arg(long, value_delimiter = ',', default_values_t = [100usize, 500, 1000, 2000, 5000])]
        sizes: Vec<usize>,
        #[arg(long, default_value_t = 512)]
        dim: usize,
        #[arg(long, default_value_t = 100)]
        classes: usize,
        #[arg(long, default_value_t = 200)]
        queries: usize,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long)]
        out: PathBuf,
    },
    /// Cluster a 2-D dataset and write original and regenerated point clouds.
    DemoPseudo {
        #[arg(long)]
        input: PathBuf,
        #[arg(long, default_value_t = 20.0)]
        distance_threshold: f64,
        #[arg(long, default_value = "all")]
        shots: String,
        /// Vectors drawn per class; by default one per original vector.
        #[arg(long)]
        samples_per_class: Option<usize>,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        /// Output directory.
        #[arg(long)]
        out: PathBuf,
    },
    /// Write a mixture-of-Gaussians train/test pair.
    GenSynthetic {
        #[arg(long, default_value_t = 20)]
        classes: usize,
        #[arg(long, default_value_t = 32)]
        dim: usize,
        #[arg(long, default_value_t = 1)]
        min_modes: usize,
        #[arg(long, default_value_t = 3)]
        max_modes: usize,
        #[arg(long)]
        class_separation: Option<f64>,
        #[arg(long)]
        mode_offset: Option<f64>,
        #[arg(long)]
        spread: Option<f64>,
        #[arg(long)]
        anisotropy: Option<f64>,
        #[arg(long)]
        shift: Option<f64>,
        #[arg(long, default_value_t = 100)]
        train_per_class: usize,
        #[arg(long, default_value_t = 50)]
        test_per_class: usize,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long)]
        train_out: PathBuf,
        #[arg(long)]
        test_out: PathBuf,
    },
    /// Print a saved cluster memory as JSON.
    Inspect {
        store: PathBuf,
        /// Include every centroid and count.
        #[arg(long)]
        clusters: bool,
    },
}

#[derive(Args)]
struct ExperimentArgs {
    /// key=value file; flags override it.
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long)]
    method: Option<String>,
    #[arg(long)]
    classes_per_increment: Option<String>,
    #[arg(long)]
    shots: Option<String>,
    #[arg(long)]
    distance_threshold: Option<String>,
    #[arg(long)]
    budget: Option<String>,
    #[arg(long)]
    cov: Option<String>,
    #[arg(long)]
    fsil_per_class: Option<String>,
    /// `0..10`, `3`, or `1,2,5`.
    #[arg(long)]
    seeds: Option<String>,
    #[arg(long)]
    train: Option<String>,
    #[arg(long)]
    test: Option<String>,
    /// Any other config key, e.g. `--set lr=0.05`.
    #[arg(long = "set", value_name = "KEY=VALUE")]
    set: Vec<String>,
}

impl ExperimentArgs {
    fn config(&self) -> anyhow::Result<ExperimentConfig> {
        let mut cfg = ExperimentConfig::default();
        if let Some(path) = &self.config {
            let text = std::fs::read_to_string(path)
                .with_context(|| format!("reading {}", path.display()))?;
            cfg.apply_kv(&text)?;
        }
        let flags = [
            ("method", &self.method),
            ("classes-per-increment", &self.classes_per_increment),
            ("shots", &self.shots),
            ("distance-threshold", &self.distance_threshold),
            ("budget", &self.budget),
            ("cov", &self.cov),
            ("fsil-per-class", &self.fsil_per_class),
            ("seeds", &self.seeds),
            ("train", &self.train),
            ("test", &self.test),
        ];
        for (key, value) in flags {
            if let Some(v) = value {
                cfg.set(key, v)?;
            }
        }
        for kv in &self.set {
            let (k, v) = kv
                .split_once('=')
                .with_context(|| format!("--set expects KEY=VALUE, got '{kv}'"))?;
            cfg.set(k, v)?;
        }
        cfg.validate()?;
        Ok(cfg)
    }
}

fn load(path: &Path) -> anyhow::Result<FeatureDataset> {
    read_dataset(path, FileFormat::from_path(path))
        .with_context(|| format!("reading {}", path.display()))
}

fn datasets(cfg: &ExperimentConfig) -> anyhow::Result<(FeatureDataset, FeatureDataset)> {
    let (Some(train), Some(test)) = (&cfg.train, &cfg.test) else {
        bail!("both train and test datasets are required");
    };
    Ok((load(train)?, load(test)?))
}

fn create(path: &Path) -> anyhow::Result<BufWriter<File>> {
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        std::fs::create_dir_all(dir)?;
    }
    Ok(BufWriter::new(
        File::create(path).with_context(|| format!("creating {}", path.display()))?,
    ))
}

fn run(cli: Cli) -> anyhow::Result<()> {
    match cli.command {
        Command::Run {
            exp,
            out,
            timings,
            store_dir,
        } => {
            let cfg = exp.config()?;
            let (train, test) = datasets(&cfg)?;
            let report = run_experiment(&cfg, &DatasetSource::new(&train), &test)?;
            let mut w = create(&out)?;
            report.write_jsonl(&mut w)?;
            w.flush()?;
            if let Some(path) = timings {
                let mut w = create(&path)?;
                report.write_timings_jsonl(&mut w)?;
                w.flush()?;
            }
            if let Some(dir) = store_dir {
                std::fs::create_dir_all(&dir)?;
                for r in &report.runs {
                    if let Some(store) = &r.final_store {
                        store.save(dir.join(format!("store-seed{}.cbms", r.seed)))?;
                    }
                }
            }
            let s = &report.summary;
            println!(
                "{}",
                json!({
                    "method": s.method,
                    "seeds": s.seeds.len(),
                    "mean_average_incremental_accuracy": s.mean_average_incremental_accuracy,
                    "std_average_incremental_accuracy": s.std_average_incremental_accuracy,
                    "mean_final_accuracy": s.mean_final_accuracy,
                })
            );
        }
        Command::SweepBudget { exp, budgets, out } => {
            let cfg = exp.config()?;
            let budgets = budgets
                .iter()
                .map(|b| b.trim().parse::<Budget>())
                .collect::<Result<Vec<_>, _>>()?;
            let (train, test) = datasets(&cfg)?;
            let points = run_budget_sweep(&cfg, &DatasetSource::new(&train), &test, &budgets)?;
            let mut w = create(&out)?;
            write_sweep_jsonl(&points, &mut w)?;
            w.flush()?;
            for p in &points {
                println!(
                    "{}",
                    json!({
                        "budget": p.budget.to_string(),
                        "reduce": p.reduce.summary.mean_average_incremental_accuracy,
                        "remove": p.remove.summary.mean_average_incremental_accuracy,
                    })
                );
            }
        }
        Command::BenchPredict {
            sizes,
            dim,
            classes,
            queries,
            seed,
            out,
        } => {
            let points = run_timing_bench(&TimingConfig {
                sizes,
                dim,
                classes,
                queries,
                seed,
            })?;
            let mut w = create(&out)?;
            for p in &points {
                let mut line = serde_json::to_value(p)?;
                line["record"] = json!("timing");
                writeln!(w, "{line}")?;
            }
            if points.len() >= 3 {
                let xs: Vec<f64> = points.iter().map(|p| p.centroids as f64).collect();
                let voting = fit_slope(
                    &xs,
                    &points
                        .iter()
                        .map(|p| p.voting_median_us)
                        .collect::<Vec<_>>(),
                )?;
                let linear = fit_slope(
                    &xs,
                    &points
                        .iter()
                        .map(|p| p.linear_median_us)
                        .collect::<Vec<_>>(),
                )?;
                let fit = json!({ "record": "fit", "voting": voting, "linear": linear });
                writeln!(w, "{fit}")?;
                println!("{fit}");
            }
            w.flush()?;
        }
        Command::DemoPseudo {
            input,
            distance_threshold,
            shots,
            samples_per_class,
            seed,
            out,
        } => {
            let data = load(&input)?;
            let shots: Shots = shots.parse()?;
            let demo = run_pseudo_demo(&data, distance_threshold, shots, samples_per_class, seed)?;
            demo.write_files(&out)?;
            println!("{}", serde_json::to_string(&demo.metrics)?);
        }
        Command::GenSynthetic {
            classes,
            dim,
            min_modes,
            max_modes,
            class_separation,
            mode_offset,
            spread,
            anisotropy,
            shift,
            train_per_class,
            test_per_class,
            seed,
            train_out,
            test_out,
        } => {
            let d = SyntheticConfig::default();
            let cfg = SyntheticConfig {
                classes,
                dim,
                min_modes,
                max_modes,
                class_separation: class_separation.unwrap_or(d.class_separation),
                mode_offset: mode_offset.unwrap_or(d.mode_offset),
                spread: spread.unwrap_or(d.spread),
                anisotropy: anisotropy.unwrap_or(d.anisotropy),
                shift: shift.unwrap_or(d.shift),
                train_per_class,
                test_per_class,
                seed,
            };
            let (train, test) = generate_synthetic(&cfg)?;
            write_dataset(&train, &train_out, FileFormat::from_path(&train_out))?;
            write_dataset(&test, &test_out, FileFormat::from_path(&test_out))?;
        }
        Command::Inspect { store, clusters } => {
            let s = MemoryStore::load(&store)
                .with_context(|| format!("reading {}", store.display()))?;
            let classes: Vec<_> = s
                .classes()
                .map(|c| {
                    let mut v = json!({
                        "class_id": c.class_id,
                        "clusters": c.clusters.len(),
                        "stored_count": c.stored_count(),
                        "original_count": c.original_count,
                    });
                    if clusters {
                        v["centroids"] = json!(c
                            .clusters
                            .iter()
                            .map(|k| json!({ "count": k.count, "centroid": k.centroid }))
                            .collect::<Vec<_>>());
                    }
                    v
                })
                .collect();
            let summary = json!({
                "dim": s.dim(),
                "mode": s.mode(),
                "budget": s.budget().to_string(),
                "policy": s.policy(),
                "classes": s.num_classes(),
                "total_clusters": s.total_clusters(),
                "memory_bytes": s.memory_bytes(),
                "per_class": classes,
            });
            println!("{}", serde_json::to_string_pretty(&summary)?);
        }
    }
    Ok(())
}

fn error_kind(err: &anyhow::Error) -> &'static str {
    err.chain()
        .find_map(|e| e.downcast_ref::<cbcl_core::Error>())
        .map_or("cli", cbcl_core::Error::kind)
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(err) => {
            let record = json!({
                "record": "error",
                "kind": error_kind(&err),
                "message": format!("{err:#}"),
            });
            eprintln!("{record}");
            ExitCode::FAILURE
        }
    }
}
