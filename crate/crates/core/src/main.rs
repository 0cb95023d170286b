use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::sync::Arc;

use anyhow::Context;
use clap::{Parser, Subcommand, ValueEnum};

use ngram_lab::classic::{ClassicLm, CountTable, Smoothing};
use ngram_lab::corpus::{sample_strings, Corpus, Split, DEFAULT_MAX_LENGTH};
use ngram_lab::eval::{empirical_kl, exact_entropy, exact_kl, ScoreFile};
use ngram_lab::gen::{generate_general, generate_representation, GeneralLmSpec, RepLmSpec};
use ngram_lab::lm::Alphabet;
use ngram_lab::neural::{train, LogLinearModel, NeuralModel, NeuralNGramModel, TrainConfig};
use ngram_lab::pipeline::{self, AnyModel, ExperimentConfig, NeuralSettings, RunOptions};
use ngram_lab::seeding;
use ngram_lab::stats::{regress, Table};

#[derive(Parser)]
#[command(name = "ngram-lab", version, about = "Random n-gram LMs and how well estimators learn them")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Clone, Copy, ValueEnum)]
enum FamilyArg {
    General,
    Sparse,
    Dense,
}

#[derive(Clone, Copy, ValueEnum)]
enum SplitArg {
    Train,
    Dev,
    Test,
}

#[derive(Clone, Copy, ValueEnum)]
enum Method {
    Mle,
    AddLambda,
    AbsoluteDiscounting,
    WittenBell,
    Loglinear,
    Neural,
}

#[derive(Subcommand)]
enum Command {
    /// Generate a ground-truth LM.
    GenLm {
        #[arg(long, value_enum)]
        family: FamilyArg,
        #[arg(long)]
        order: usize,
        #[arg(long)]
        alphabet_size: usize,
        /// Output rank (dense only).
        #[arg(long)]
        rank: Option<usize>,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long)]
        out: PathBuf,
    },
    /// Draw i.i.d. strings from an LM.
    Sample {
        #[arg(long)]
        lm: PathBuf,
        #[arg(long)]
        count: usize,
        #[arg(long, value_enum, default_value = "train")]
        split: SplitArg,
        #[arg(long, default_value_t = DEFAULT_MAX_LENGTH)]
        max_len: usize,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long)]
        out: PathBuf,
    },
    /// Fit an estimator to a training corpus.
    Fit {
        #[arg(long)]
        train: PathBuf,
        #[arg(long)]
        alphabet_size: usize,
        #[arg(long)]
        order: usize,
        #[arg(long, value_enum)]
        method: Method,
        /// λ for add-λ, δ for absolute discounting.
        #[arg(long)]
        hyper: Option<f64>,
        /// Neural settings sized for a CPU rather than the full-size defaults.
        #[arg(long)]
        desk: bool,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long)]
        out: PathBuf,
    },
    /// Score every string of a corpus under a model.
    Score {
        #[arg(long)]
        model: PathBuf,
        #[arg(long)]
        corpus: PathBuf,
        #[arg(long)]
        model_id: Option<String>,
        #[arg(long)]
        out: PathBuf,
    },
    /// Empirical KL from ground-truth and model score files.
    Eval {
        #[arg(long)]
        truth: PathBuf,
        #[arg(long)]
        model: PathBuf,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Exact entropy of an LM, or exact KL to a second model.
    Exact {
        #[arg(long)]
        p: PathBuf,
        #[arg(long)]
        q: Option<PathBuf>,
    },
    /// Least-squares regression over a results CSV.
    Regress {
        #[arg(long)]
        results: PathBuf,
        #[arg(long, default_value = "KL_hat")]
        response: String,
        #[arg(long, value_delimiter = ',', default_values_t = pipeline::DEFAULT_PREDICTORS.map(String::from))]
        predictors: Vec<String>,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Aggregate results over replicates.
    Report {
        /// A run directory or its `results.csv`.
        #[arg(long)]
        results: PathBuf,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Run (or resume) an experiment grid.
    Run {
        #[arg(long)]
        config: PathBuf,
        #[arg(long)]
        out: PathBuf,
        #[arg(long, default_value_t = 1)]
        jobs: usize,
        /// Override the config's root seed.
        #[arg(long)]
        seed: Option<u64>,
    },
    /// Recompute one cell from a manifest.
    Replay {
        #[arg(long)]
        manifest: PathBuf,
        #[arg(long)]
        cell: String,
        #[arg(long)]
        out: PathBuf,
    },
}

fn split_of(s: SplitArg) -> Split {
    match s {
        SplitArg::Train => Split::Train,
        SplitArg::Dev => Split::Dev,
        SplitArg::Test => Split::Test,
    }
}

fn write_or_print(out: Option<&Path>, text: &str) -> anyhow::Result<()> {
    match out {
        Some(p) => std::fs::write(p, text).with_context(|| format!("writing {}", p.display()))?,
        None => println!("{text}"),
    }
    Ok(())
}

fn smoothing(method: Method, hyper: Option<f64>) -> anyhow::Result<Option<Smoothing>> {
    let need = |name| hyper.with_context(|| format!("{name} needs --hyper"));
    Ok(Some(match method {
        Method::Mle => Smoothing::Mle,
        Method::WittenBell => Smoothing::WittenBell,
        Method::AddLambda => Smoothing::AddLambda { lambda: need("add-lambda")? },
        Method::AbsoluteDiscounting => Smoothing::AbsoluteDiscounting { delta: need("absolute-discounting")? },
        Method::Loglinear | Method::Neural => return Ok(None),
    }))
}

fn run(cli: Cli) -> anyhow::Result<ExitCode> {
    match cli.command {
        Command::GenLm { family, order, alphabet_size, rank, seed, out } => {
            let lm = match family {
                FamilyArg::General => generate_general(&GeneralLmSpec::new(order, alphabet_size, seed))?,
                FamilyArg::Sparse => generate_representation(&RepLmSpec::sparse(order, alphabet_size, seed))?,
                FamilyArg::Dense => {
                    let rank = rank.context("dense LMs need --rank")?;
                    generate_representation(&RepLmSpec::dense(order, alphabet_size, rank, seed))?
                }
            };
            lm.save(&out)?;
        }
        Command::Sample { lm, count, split, max_len, seed, out } => {
            let model = AnyModel::load(&lm)?;
            let strings = sample_strings(model.as_lm(), count, seed, max_len)?;
            let lm_id = lm.file_stem().map(|s| s.to_string_lossy().into_owned()).unwrap_or_default();
            Corpus { strings, split: split_of(split), lm_id, seed }.save(&out)?;
        }
        Command::Fit { train: train_path, alphabet_size, order, method, hyper, desk, seed, out } => {
            let alphabet = Alphabet::new(alphabet_size)?;
            let corpus = Corpus::load(&train_path, Some(alphabet))?;
            if let Some(m) = smoothing(method, hyper)? {
                let table = Arc::new(CountTable::count(alphabet, &corpus, order)?);
                AnyModel::Classic(ClassicLm::new(table, m, order)?).save(&out)?;
            } else if matches!(method, Method::Loglinear) {
                let mut m = LogLinearModel::zeros(alphabet, order)?;
                train(&mut m, &corpus.strings, &TrainConfig::loglinear(seed))?;
                NeuralModel::LogLinear(m).save(&out)?;
            } else {
                let settings = if desk { NeuralSettings::desk() } else { NeuralSettings::default() };
                let mut m = NeuralNGramModel::init(alphabet, order, settings.shape(), seeding::derive(seed, "init"))?;
                train(&mut m, &corpus.strings, &settings.train_config(seed))?;
                NeuralModel::Neural(m).save(&out)?;
            }
        }
        Command::Score { model, corpus, model_id, out } => {
            let m = AnyModel::load(&model)?;
            let c = Corpus::load(&corpus, Some(m.as_lm().alphabet()))?;
            let id = model_id.unwrap_or_else(|| model.file_stem().map(|s| s.to_string_lossy().into_owned()).unwrap_or_default());
            m.score(&c, &id)?.save(&out)?;
        }
        Command::Eval { truth, model, out } => {
            let report = empirical_kl(&ScoreFile::load(&truth)?, &ScoreFile::load(&model)?)?;
            write_or_print(out.as_deref(), &serde_json::to_string_pretty(&report)?)?;
        }
        Command::Exact { p, q } => {
            let p = AnyModel::load(&p)?;
            match q {
                None => println!("{{\"H\": {}}}", exact_entropy(p.as_lm())?),
                Some(q) => {
                    let q = AnyModel::load(&q)?;
                    let kl = exact_kl(p.as_lm(), q.as_lm())?;
                    let text = if kl.is_finite() { kl.to_string() } else { "\"inf\"".into() };
                    println!("{{\"KL\": {text}}}");
                }
            }
        }
        Command::Regress { results, response, predictors, out } => {
            let report = regress(&Table::read_csv(&results)?, &response, &predictors, true)?;
            write_or_print(out.as_deref(), &serde_json::to_string_pretty(&report)?)?;
        }
        Command::Report { results, out } => {
            let csv = if results.is_dir() { results.join("results.csv") } else { results };
            let rows = pipeline::read_rows(&csv)?;
            let report = pipeline::render_report(&rows);
            match out {
                Some(dir) => {
                    std::fs::create_dir_all(&dir)?;
                    std::fs::write(dir.join("report.csv"), &report.csv)?;
                    std::fs::write(dir.join("report.txt"), &report.text)?;
                }
                None => print!("{}", report.text),
            }
        }
        Command::Run { config, out, jobs, seed } => {
            let mut cfg = ExperimentConfig::load(&config)?;
            if let Some(s) = seed {
                cfg.seed = s;
            }
            let summary = pipeline::run(&cfg, &out, &RunOptions { jobs, only_cells: None, quiet: false })?;
            eprintln!(
                "{} computed, {} cached, {} re-queued, {} failed, {} rows",
                summary.computed,
                summary.cached,
                summary.requeued,
                summary.failed.len(),
                summary.rows
            );
            if !summary.all_complete() {
                for (key, e) in &summary.failed {
                    eprintln!("failed: {key}: {e}");
                }
                return Ok(ExitCode::from(2));
            }
        }
        Command::Replay { manifest, cell, out } => {
            let dir = pipeline::replay_cell(&manifest, &cell, &out)?;
            println!("{}", dir.display());
        }
    }
    Ok(ExitCode::SUCCESS)
}

fn main() -> ExitCode {
    match run(Cli::parse()) {
        Ok(code) => code,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::FAILURE
        }
    }
}
