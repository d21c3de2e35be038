use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};

use ros_osda::dataset::export_folder;
use ros_osda::harness::{
    evaluate_stage1_only, load_run_checkpoint, read_scores, read_separation, run_ablations, run_metrics,
    run_openness_sweep, run_pipeline, run_separation, run_stage2, score_files, DatasetKind, ExperimentConfig,
    ExperimentData, OpennessSweepSpec, RunPaths,
};
use ros_osda::metrics::{auc_roc, format_table};
use ros_osda::{Result, RosError};

#[derive(Parser)]
#[command(name = "ros", version, about = "Rotation-based open-set domain adaptation")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Clone, Copy, ValueEnum)]
enum Preset {
    /// Full training recipe: 80 + 80 epochs.
    Full,
    /// Three epochs per stage, sized for the synthetic benchmark.
    Synthetic,
}

#[derive(Args)]
struct ConfigArgs {
    /// TOML experiment file; unset keys fall back to the preset.
    #[arg(short, long)]
    config: Option<PathBuf>,
    #[arg(long, value_enum, default_value = "synthetic")]
    preset: Preset,
    /// Override a config key, e.g. `--set epochs_stage1=5`. Repeatable.
    #[arg(long = "set", value_name = "KEY=VALUE")]
    overrides: Vec<String>,
    /// Output directory (same as `--set output_dir=...`).
    #[arg(short, long)]
    out: Option<PathBuf>,
    /// Comma-separated seeds (same as `--set seeds=[...]`).
    #[arg(long, value_delimiter = ',')]
    seeds: Vec<u64>,
}

impl ConfigArgs {
    fn load(&self) -> Result<ExperimentConfig> {
        let preset = match self.preset {
            Preset::Full => ExperimentConfig::default(),
            Preset::Synthetic => ExperimentConfig::synthetic_preset(),
        };
        let base = match &self.config {
            Some(path) => {
                let text = std::fs::read_to_string(path).map_err(|e| RosError::io(path, e))?;
                preset.layered(&text, path)?
            }
            None => preset,
        };
        let mut overrides = self.overrides.clone();
        if let Some(out) = &self.out {
            overrides.push(format!("output_dir={:?}", out.display().to_string()));
        }
        if !self.seeds.is_empty() {
            let list: Vec<String> = self.seeds.iter().map(u64::to_string).collect();
            overrides.push(format!("seeds=[{}]", list.join(",")));
        }
        let config = base.with_overrides(&overrides)?;
        config.validate()?;
        Ok(config)
    }
}

#[derive(Subcommand)]
enum Command {
    /// Generate the synthetic benchmark as an image-folder dataset.
    Synth {
        #[command(flatten)]
        cfg: ConfigArgs,
        /// Destination root; receives `<source>/`, `<target>/` and `classes.txt`.
        #[arg(long)]
        dest: PathBuf,
    },
    /// Train Stage I for every seed and report AUC-ROC of the normality scores.
    Stage1 {
        #[command(flatten)]
        cfg: ConfigArgs,
    },
    /// Rescore the target with saved Stage I checkpoints and split it.
    Separate {
        #[command(flatten)]
        cfg: ConfigArgs,
    },
    /// Train Stage II from saved Stage I checkpoints and separations.
    Stage2 {
        #[command(flatten)]
        cfg: ConfigArgs,
    },
    /// Full pipeline for every seed.
    Run {
        #[command(flatten)]
        cfg: ConfigArgs,
    },
    /// Openness sweep over known-class windows.
    Sweep {
        #[command(flatten)]
        cfg: ConfigArgs,
        /// Use the 65-class windows (25, 10 and 5 known).
        #[arg(long)]
        office_home: bool,
        /// Known-class counts for consecutive windows.
        #[arg(long, value_delimiter = ',', default_values_t = [6usize, 4, 2])]
        sizes: Vec<usize>,
        #[arg(long, default_value_t = 3)]
        windows: usize,
    },
    /// Recompute metrics from exported prediction and score files.
    Score {
        #[arg(long)]
        predictions: PathBuf,
        #[arg(long)]
        scores: Option<PathBuf>,
        #[arg(long)]
        n_known: usize,
        #[arg(long, default_value = "")]
        config_hash: String,
    },
    /// Run the base configuration and every ablation switch.
    Ablate {
        #[command(flatten)]
        cfg: ConfigArgs,
    },
}

fn print_json<T: serde::Serialize>(value: &T) {
    println!("{}", serde_json::to_string_pretty(value).expect("serializable"));
}

fn for_each_seed(config: &ExperimentConfig, mut f: impl FnMut(u64, &RunPaths) -> Result<()>) -> Result<()> {
    let hash = config.config_hash();
    for &seed in &config.seeds {
        f(seed, &RunPaths::new(&config.output_dir, &hash, seed))?;
    }
    Ok(())
}

fn execute(command: Command) -> Result<()> {
    match command {
        Command::Synth { cfg, dest } => {
            let config = cfg.load()?;
            if config.dataset != DatasetKind::Synthetic {
                return Err(RosError::validation("synth needs dataset = \"synthetic\""));
            }
            let (source, target) = config.load_pools()?;
            export_folder(&dest, &source, &target, "source", "target")?;
            println!("wrote {} classes to {}", target.classes.len(), dest.display());
        }
        Command::Stage1 { cfg } => print_json(&evaluate_stage1_only(&cfg.load()?)?),
        Command::Separate { cfg } => {
            let config = cfg.load()?;
            let data = config.load_data()?;
            let hash = config.config_hash();
            for_each_seed(&config, |seed, paths| {
                let mut bundle = load_run_checkpoint(&paths.stage1_checkpoint(), &hash)?;
                let (sep, auc) = run_separation(&config, &mut bundle, &data, paths)?;
                println!(
                    "seed {seed}: threshold {:.6}, {} known, {} unknown, auc {}",
                    sep.threshold,
                    sep.known_ids.len(),
                    sep.unknown_ids.len(),
                    auc.map_or("n/a".into(), |a| format!("{a:.4}"))
                );
                Ok(())
            })?;
        }
        Command::Stage2 { cfg } => {
            let config = cfg.load()?;
            let data = config.load_data()?;
            let hash = config.config_hash();
            for_each_seed(&config, |seed, paths| {
                let stage1 = load_run_checkpoint(&paths.stage1_checkpoint(), &hash)?;
                let sep = read_separation(&paths.separation())?;
                let auc = score_auc(paths, &data)?;
                let (_, predictions, _) = run_stage2(&config, &stage1, &data, &sep, seed, paths)?;
                let report = run_metrics(&config, &data, &predictions, auc, paths)?;
                println!(
                    "seed {seed}: {}",
                    format_table(&[(config.ablation_label(), report)]).trim_end()
                );
                Ok(())
            })?;
        }
        Command::Run { cfg } => {
            let report = run_pipeline(&cfg.load()?)?;
            print!("{}", format_table(&[(report.label.clone(), report.aggregate.clone())]));
            print_json(&report.aggregate);
        }
        Command::Sweep {
            cfg,
            office_home,
            sizes,
            windows,
        } => {
            let config = cfg.load()?;
            let spec = if office_home {
                OpennessSweepSpec::office_home()
            } else {
                let (_, target) = config.load_pools()?;
                OpennessSweepSpec::consecutive(target.classes.len(), &sizes, windows)?
            };
            let report = run_openness_sweep(&config, &spec)?;
            println!(
                "{:>8} {:>9} {:>6} {:>6} {:>6}",
                "n_known", "openness", "OS*", "UNK", "HOS"
            );
            for p in &report.points {
                println!(
                    "{:>8} {:>9.2} {:>6.1} {:>6.1} {:>6.1}",
                    p.n_known, p.openness, p.os_star, p.unk, p.hos
                );
            }
            println!(
                "series: {}\nplot: {}",
                report.series_path.display(),
                report.plot_path.display()
            );
        }
        Command::Score {
            predictions,
            scores,
            n_known,
            config_hash,
        } => print_json(&score_files(&predictions, scores.as_deref(), n_known, &config_hash)?),
        Command::Ablate { cfg } => {
            let rows = run_ablations(&cfg.load()?)?;
            let table: Vec<_> = rows.iter().map(|r| (r.label.clone(), r.report.clone())).collect();
            print!("{}", format_table(&table));
            for r in &rows {
                println!(
                    "{:<24} auc {}",
                    r.label,
                    r.auc_roc.map_or("n/a".into(), |a| format!("{a:.4}"))
                );
            }
        }
    }
    Ok(())
}

fn score_auc(paths: &RunPaths, data: &ExperimentData) -> Result<Option<f64>> {
    if !paths.scores().exists() {
        return Ok(None);
    }
    let truth = data.target.by_id();
    let mut scores = Vec::new();
    let mut known = Vec::new();
    for (id, s) in read_scores(&paths.scores())? {
        let sample = truth
            .get(&id)
            .ok_or_else(|| RosError::validation(format!("scores.csv names unknown sample {id}")))?;
        scores.push(s);
        known.push(sample.class_label < data.split.n_known());
    }
    match auc_roc(&scores, &known) {
        Ok(a) => Ok(Some(a)),
        Err(RosError::UndefinedMetric(_)) => Ok(None),
        Err(e) => Err(e),
    }
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    let cli = Cli::parse();
    match execute(cli.command) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
