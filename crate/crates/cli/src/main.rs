use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};
use interpoll::data::{gen_planted_shortcut, gen_prefix_shortcut, load_dataset, save_dataset, PlantedConfig, PrefixConfig};
use interpoll::grouping::save_assignment;
use interpoll::harness::{recompute_report, run_experiment, train_method, write_tables, ExperimentConfig, Report};
use interpoll::model::{load_checkpoint, save_checkpoint};
use interpoll::probing::{mdl_probe, save_probe_result, shortcut_probe_task};
use interpoll::training::{write_metrics_csv, Method};
use interpoll::{Error, Result};

#[derive(Parser)]
#[command(name = "interpoll", version, about = "Shortcut mitigation by representation interpolation")]
struct Cli {
    /// Log progress to stderr.
    #[arg(short, long, global = true)]
    verbose: bool,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Generate a synthetic shortcut dataset as JSON-lines files.
    GenData(GenData),
    /// Train one method on one seed of an experiment config.
    Train(Train),
    /// MDL-probe a checkpoint's representations for the shortcut class.
    Probe(Probe),
    /// Rebuild tables from the raw files of a finished run.
    Report {
        /// Directory holding `raw/` from a previous `run`.
        results: PathBuf,
    },
    /// Run every method and analysis of an experiment config.
    Run {
        config: PathBuf,
        /// Overrides `output_dir` from the config.
        #[arg(long)]
        output_dir: Option<PathBuf>,
    },
}

#[derive(Clone, Copy, ValueEnum)]
enum Kind {
    Planted,
    Prefix,
}

#[derive(Args)]
struct GenData {
    #[arg(long, value_enum, default_value = "planted")]
    kind: Kind,
    #[arg(long)]
    n: Option<usize>,
    #[arg(long)]
    n_test: Option<usize>,
    #[arg(long)]
    num_classes: Option<usize>,
    /// Planted only: per-class share of shortcut-aligned training examples.
    #[arg(long)]
    majority_fraction: Option<f64>,
    /// Prefix only: probability that the prefix names the true label.
    #[arg(long)]
    p: Option<f64>,
    #[arg(long)]
    shortcut_tokens_per_class: Option<usize>,
    #[arg(long)]
    core_tokens_per_class: Option<usize>,
    #[arg(long)]
    noise_tokens: Option<usize>,
    #[arg(long)]
    sequence_length: Option<usize>,
    #[arg(long)]
    core_signal: Option<f64>,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Output directory; receives one `<split>.jsonl` per split.
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args)]
struct Train {
    #[arg(long)]
    config: PathBuf,
    #[arg(long, value_parser = parse_method)]
    method: Method,
    /// Run label, as listed under `seeds`.
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long)]
    master_seed: Option<u64>,
    /// Receives `model.ckpt`, `metrics.csv` and, for InterpoLL, `groups.jsonl`.
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args)]
struct Probe {
    #[arg(long)]
    checkpoint: PathBuf,
    #[arg(long)]
    data: PathBuf,
    /// Encoder layer; defaults to the final one.
    #[arg(long)]
    layer: Option<usize>,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Also write the result as JSON here.
    #[arg(long)]
    out: Option<PathBuf>,
}

fn parse_method(s: &str) -> std::result::Result<Method, String> {
    [Method::Erm, Method::Interpoll, Method::Mixup, Method::Lisa]
        .into_iter()
        .find(|m| m.as_str() == s)
        .ok_or_else(|| format!("unknown method {s:?} (expected erm, interpoll, mixup or lisa)"))
}

fn set<T>(field: &mut T, v: Option<T>) {
    if let Some(v) = v {
        *field = v;
    }
}

fn gen_data(a: GenData) -> Result<()> {
    let splits = match a.kind {
        Kind::Planted => {
            if a.p.is_some() {
                return Err(Error::Config("--p applies to the prefix generator".into()));
            }
            let mut c = PlantedConfig {
                seed: a.seed,
                ..PlantedConfig::default()
            };
            set(&mut c.n, a.n);
            set(&mut c.n_test, a.n_test);
            set(&mut c.num_classes, a.num_classes);
            set(&mut c.majority_fraction, a.majority_fraction);
            set(&mut c.shortcut_tokens_per_class, a.shortcut_tokens_per_class);
            set(&mut c.core_tokens_per_class, a.core_tokens_per_class);
            set(&mut c.noise_tokens, a.noise_tokens);
            set(&mut c.sequence_length, a.sequence_length);
            set(&mut c.core_signal, a.core_signal);
            let s = gen_planted_shortcut(&c)?;
            vec![("train", s.train), ("id_test", s.id_test), ("ood_test", s.ood_test)]
        }
        Kind::Prefix => {
            if a.majority_fraction.is_some() || a.shortcut_tokens_per_class.is_some() {
                return Err(Error::Config(
                    "--majority-fraction and --shortcut-tokens-per-class apply to the planted generator".into(),
                ));
            }
            let mut c = PrefixConfig {
                seed: a.seed,
                ..PrefixConfig::default()
            };
            set(&mut c.n, a.n);
            set(&mut c.n_test, a.n_test);
            set(&mut c.num_classes, a.num_classes);
            set(&mut c.p, a.p);
            set(&mut c.core_tokens_per_class, a.core_tokens_per_class);
            set(&mut c.noise_tokens, a.noise_tokens);
            set(&mut c.sequence_length, a.sequence_length);
            set(&mut c.core_signal, a.core_signal);
            let s = gen_prefix_shortcut(&c)?;
            vec![("train", s.train), ("test", s.test)]
        }
    };
    create_dir(&a.out)?;
    for (name, d) in splits {
        let path = a.out.join(format!("{name}.jsonl"));
        save_dataset(&d, &path)?;
        println!("{}\t{} examples", path.display(), d.len());
    }
    Ok(())
}

fn create_dir(dir: &Path) -> Result<()> {
    std::fs::create_dir_all(dir).map_err(|e| Error::Io {
        path: dir.into(),
        source: e,
    })
}

fn train(a: Train) -> Result<()> {
    let mut cfg = ExperimentConfig::load(&a.config)?;
    set(&mut cfg.master_seed, a.master_seed);
    let run = train_method(&cfg, a.method, a.seed)?;
    create_dir(&a.out)?;
    save_checkpoint(&run.model, &a.out.join("model.ckpt"))?;
    let path = a.out.join("metrics.csv");
    let file = std::fs::File::create(&path).map_err(|e| Error::Io { path, source: e })?;
    write_metrics_csv(&run.metrics, std::io::BufWriter::new(file))?;
    if let Some(groups) = &run.assignment {
        save_assignment(groups, &a.out.join("groups.jsonl"))?;
    }
    if let Some(f) = run.metrics.final_metrics {
        let show = |v: Option<f64>| v.map_or("-".to_string(), |x| format!("{x:.4}"));
        println!(
            "id_acc {}  ood_acc {}  minority_acc {}  majority_acc {}",
            show(f.id_acc),
            show(f.ood_acc),
            show(f.minority_acc),
            show(f.majority_acc)
        );
    }
    Ok(())
}

fn probe(a: Probe) -> Result<()> {
    let model = load_checkpoint(&a.checkpoint)?;
    let data = load_dataset(&a.data)?;
    let task = shortcut_probe_task(&model, &data, a.layer)?;
    let res = mdl_probe(&task, a.seed)?;
    if let Some(out) = &a.out {
        save_probe_result(&res, out)?;
    }
    println!(
        "compression {:.4}  online_bits {:.1}  uniform_bits {:.1}  probe_accuracy {:.4}",
        res.compression, res.online_bits, res.uniform_bits, res.probe_accuracy
    );
    Ok(())
}

fn print_report(rep: &Report) {
    for (table, t) in &rep.tables {
        println!("{table}");
        for (arm, s) in &t.arms {
            let cells: Vec<String> = s
                .metrics
                .iter()
                .filter(|(m, _)| !m.contains("_e0"))
                .map(|(m, st)| format!("{m} {:.4}±{:.4}", st.mean, st.std))
                .collect();
            println!("  {arm}: {}", cells.join("  "));
        }
    }
}

fn report(results: &Path) -> Result<()> {
    let rep = recompute_report(results)?;
    write_tables(&rep, results)?;
    let path = results.join("report.json");
    let text = serde_json::to_string_pretty(&rep).map_err(|e| Error::Report(e.to_string()))?;
    std::fs::write(&path, text).map_err(|e| Error::Io { path, source: e })?;
    print_report(&rep);
    Ok(())
}

fn run(config: &Path, output_dir: Option<PathBuf>) -> Result<()> {
    let mut cfg = ExperimentConfig::load(config)?;
    set(&mut cfg.output_dir, output_dir);
    let rep = run_experiment(&cfg)?;
    print_report(&rep);
    println!("results in {}", cfg.output_dir.display());
    Ok(())
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            let usage = e.use_stderr();
            let _ = e.print();
            return ExitCode::from(if usage { 1 } else { 0 });
        }
    };
    let level = if cli.verbose { log::LevelFilter::Info } else { log::LevelFilter::Warn };
    env_logger::Builder::new().filter_level(level).init();
    let result = match cli.command {
        Command::GenData(a) => gen_data(a),
        Command::Train(a) => train(a),
        Command::Probe(a) => probe(a),
        Command::Report { results } => report(&results),
        Command::Run { config, output_dir } => run(&config, output_dir),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(if e.is_config() { 1 } else { 2 })
        }
    }
}
