//! Command-line front end. Exit codes: 0 success, 1 configuration error,
//! 2 data error, 3 runtime failure.

use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

use cec_core::driver::{compare_strategies_with, run_experiment_with, zero_shot_accuracy, AlConfig, ExperimentData};
use cec_core::store::{generate_synthetic, load_class_head, load_pool, save_class_head, save_pool, PoolFormat};
use cec_core::Error;

#[derive(Parser)]
#[command(name = "cec", version, about = "Pool-based active learning over embedding pools")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run one strategy for every seed and write rounds.csv / summary.json.
    Run(Overrides),
    /// Run several strategies (see --strategies) on identical data and seeds.
    Compare(Overrides),
    /// Print the zero-shot test accuracy of the class head.
    Zeroshot(Overrides),
    /// Write synthetic train/test pools and the class head to --out.
    Synth {
        #[command(flatten)]
        overrides: Overrides,
        /// binary or csv
        #[arg(long, default_value = "binary")]
        format: String,
    },
    /// Check data files and report their shapes.
    Validate {
        #[command(flatten)]
        overrides: Overrides,
        /// Extra pool files to check.
        files: Vec<PathBuf>,
    },
}

/// Every configuration key, settable as a flag of the same name.
#[derive(Args, Default)]
struct Overrides {
    /// `key = value` configuration file; flags override it.
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long)]
    strategy: Option<String>,
    /// Comma-separated strategy names for compare.
    #[arg(long)]
    strategies: Option<String>,
    #[arg(long)]
    rounds: Option<String>,
    #[arg(long)]
    budget_fraction: Option<String>,
    #[arg(long)]
    top_n: Option<String>,
    #[arg(long)]
    knn_k: Option<String>,
    #[arg(long)]
    alpha: Option<String>,
    #[arg(long)]
    temperature: Option<String>,
    /// Comma-separated seeds.
    #[arg(long)]
    seeds: Option<String>,
    #[arg(long)]
    epochs: Option<String>,
    #[arg(long)]
    lr: Option<String>,
    #[arg(long)]
    momentum: Option<String>,
    #[arg(long)]
    weight_decay: Option<String>,
    #[arg(long)]
    batch_size: Option<String>,
    #[arg(long)]
    cosine: Option<String>,
    #[arg(long)]
    train_embeddings: Option<String>,
    #[arg(long)]
    test_embeddings: Option<String>,
    #[arg(long)]
    class_head: Option<String>,
    #[arg(long)]
    out: Option<String>,
    #[arg(long)]
    synth_classes: Option<String>,
    #[arg(long)]
    synth_dim: Option<String>,
    #[arg(long)]
    synth_train: Option<String>,
    #[arg(long)]
    synth_test: Option<String>,
    #[arg(long)]
    synth_weights: Option<String>,
    #[arg(long)]
    synth_spread: Option<String>,
    #[arg(long)]
    synth_outliers: Option<String>,
    #[arg(long)]
    synth_head_noise: Option<String>,
    #[arg(long)]
    synth_seed: Option<String>,
}

impl Overrides {
    fn pairs(&self) -> Vec<(&'static str, &Option<String>)> {
        vec![
            ("strategy", &self.strategy),
            ("strategies", &self.strategies),
            ("rounds", &self.rounds),
            ("budget_fraction", &self.budget_fraction),
            ("top_n", &self.top_n),
            ("knn_k", &self.knn_k),
            ("alpha", &self.alpha),
            ("temperature", &self.temperature),
            ("seeds", &self.seeds),
            ("epochs", &self.epochs),
            ("lr", &self.lr),
            ("momentum", &self.momentum),
            ("weight_decay", &self.weight_decay),
            ("batch_size", &self.batch_size),
            ("cosine", &self.cosine),
            ("train_embeddings", &self.train_embeddings),
            ("test_embeddings", &self.test_embeddings),
            ("class_head", &self.class_head),
            ("out", &self.out),
            ("synth_classes", &self.synth_classes),
            ("synth_dim", &self.synth_dim),
            ("synth_train", &self.synth_train),
            ("synth_test", &self.synth_test),
            ("synth_weights", &self.synth_weights),
            ("synth_spread", &self.synth_spread),
            ("synth_outliers", &self.synth_outliers),
            ("synth_head_noise", &self.synth_head_noise),
            ("synth_seed", &self.synth_seed),
        ]
    }

    fn config(&self) -> Result<AlConfig, Error> {
        let mut cfg = match &self.config {
            Some(path) => AlConfig::from_file(path)?,
            None => AlConfig::default(),
        };
        for (key, value) in self.pairs() {
            if let Some(v) = value {
                cfg.set(key, v)?;
            }
        }
        Ok(cfg)
    }
}

/// Which stage an error came from decides its exit code.
enum Failure {
    Config(Error),
    Data(Error),
    Runtime(Error),
}

impl Failure {
    fn at_load(e: Error) -> Self {
        match e {
            Error::Config(_) => Failure::Config(e),
            _ => Failure::Data(e),
        }
    }

    fn at_run(e: Error) -> Self {
        match e {
            Error::Config(_) => Failure::Config(e),
            Error::Data(_) => Failure::Data(e),
            _ => Failure::Runtime(e),
        }
    }
}

fn load(cfg: &AlConfig) -> Result<ExperimentData<f64>, Failure> {
    cfg.validate().map_err(Failure::Config)?;
    ExperimentData::load(cfg).map_err(Failure::at_load)
}

fn write_report(report: &cec_core::driver::ExperimentReport, out: &Path) -> Result<(), Failure> {
    for path in report.write(out).map_err(Failure::Runtime)? {
        println!("wrote {}", path.display());
    }
    Ok(())
}

fn print_rounds(report: &cec_core::driver::ExperimentReport) {
    println!("zero-shot accuracy: {:.4}", report.zero_shot_accuracy);
    for s in &report.strategies {
        for r in &s.rounds {
            println!(
                "{:<15} round {} labeled {:>6}  accuracy {:.4} ± {:.4}  coverage {:.2}",
                s.strategy.name(),
                r.round,
                r.labeled,
                r.mean_accuracy,
                r.std_accuracy,
                r.mean_coverage
            );
        }
        if s.truncated {
            println!("{:<15} note: pool exhausted before the full budget was spent", s.strategy.name());
        }
    }
}

fn execute(command: Command) -> Result<(), Failure> {
    match command {
        Command::Run(o) => {
            let cfg = o.config().map_err(Failure::Config)?;
            let data = load(&cfg)?;
            let report = run_experiment_with(&cfg, &data).map_err(Failure::at_run)?;
            print_rounds(&report);
            write_report(&report, &cfg.out)
        }
        Command::Compare(o) => {
            let cfg = o.config().map_err(Failure::Config)?;
            let data = load(&cfg)?;
            let report = compare_strategies_with(&cfg, &data, &cfg.strategies).map_err(Failure::at_run)?;
            print_rounds(&report);
            write_report(&report, &cfg.out)
        }
        Command::Zeroshot(o) => {
            let cfg = o.config().map_err(Failure::Config)?;
            let data = load(&cfg)?;
            let acc = zero_shot_accuracy(&data).map_err(Failure::at_run)?;
            println!("{acc:.6}");
            Ok(())
        }
        Command::Synth { overrides, format } => {
            let cfg = overrides.config().map_err(Failure::Config)?;
            let format: PoolFormat = format.parse().map_err(Failure::Config)?;
            let spec = cfg.synthetic.spec().map_err(Failure::Config)?;
            spec.validate().map_err(Failure::Config)?;
            let (pool, head) = generate_synthetic::<f64>(&spec).map_err(Failure::Runtime)?;
            let n_train = cfg.synthetic.n_train;
            let train = pool.subset(&(0..n_train).collect::<Vec<_>>()).map_err(Failure::Runtime)?;
            let test = pool.subset(&(n_train..pool.len()).collect::<Vec<_>>()).map_err(Failure::Runtime)?;
            std::fs::create_dir_all(&cfg.out).map_err(|source| Failure::Runtime(Error::Io { path: cfg.out.clone(), source }))?;
            let ext = match format {
                PoolFormat::Binary => "emb",
                PoolFormat::Csv => "csv",
            };
            let train_path = cfg.out.join(format!("train.{ext}"));
            let test_path = cfg.out.join(format!("test.{ext}"));
            let head_path = cfg.out.join("head.emb");
            save_pool(&train, &train_path, format).map_err(Failure::Runtime)?;
            save_pool(&test, &test_path, format).map_err(Failure::Runtime)?;
            save_class_head(&head, &head_path).map_err(Failure::Runtime)?;
            for p in [train_path, test_path, head_path] {
                println!("wrote {}", p.display());
            }
            Ok(())
        }
        Command::Validate { overrides, files } => {
            let cfg = overrides.config().map_err(Failure::Config)?;
            let mut pools: Vec<PathBuf> = files;
            pools.extend(cfg.train_embeddings.iter().cloned());
            pools.extend(cfg.test_embeddings.iter().cloned());
            if pools.is_empty() && cfg.class_head.is_none() {
                return Err(Failure::Config(Error::Config("nothing to validate".into())));
            }
            for path in &pools {
                let pool = load_pool::<f64>(path, PoolFormat::from_path(path)).map_err(Failure::Data)?;
                match pool.labels() {
                    Some(l) => println!("{}: n={} d={} labels K={}", path.display(), pool.len(), pool.dim(), l.num_classes()),
                    None => println!("{}: n={} d={} unlabeled", path.display(), pool.len(), pool.dim()),
                }
            }
            if let Some(path) = &cfg.class_head {
                let head = load_class_head::<f64>(path, cfg.temperature).map_err(Failure::Data)?;
                println!("{}: K={} d={}", path.display(), head.num_classes(), head.dim());
            }
            if cfg.train_embeddings.is_some() || cfg.test_embeddings.is_some() || cfg.class_head.is_some() {
                if cfg.data_source().is_ok() {
                    ExperimentData::<f64>::load(&cfg).map_err(Failure::Data)?;
                    println!("train/test/head are consistent");
                }
            }
            Ok(())
        }
    }
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let code = if e.use_stderr() { 1 } else { 0 };
            let _ = e.print();
            return ExitCode::from(code);
        }
    };
    match execute(cli.command) {
        Ok(()) => ExitCode::SUCCESS,
        Err(Failure::Config(e)) => {
            eprintln!("error: {e}");
            ExitCode::from(1)
        }
        Err(Failure::Data(e)) => {
            eprintln!("error: {e}");
            ExitCode::from(2)
        }
        Err(Failure::Runtime(e)) => {
            eprintln!("error: {e}");
            ExitCode::from(3)
        }
    }
}
