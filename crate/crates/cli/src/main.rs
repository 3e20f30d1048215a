use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{bail, Context};
use clap::{Args, Parser, Subcommand};
use miavlm::bench::{
    build_benchmark, read_jsonl, score, split_instructions, write_jsonl, AntonymLexicon, Question, Response, Templates,
};
use miavlm::eval::evaluate;
use miavlm::experiment::order_experiment;
use miavlm::model::{benchmark_vocab, Model};
use miavlm::report::{write_json, write_plot_csv, Envelope};
use miavlm::synth::{gen_synthetic, Dataset};
use miavlm::train::{train, InstructionMix, RunConfig};

/// Environment variable selecting the number of worker threads.
const WORKERS_ENV: &str = "MAP_WORKERS";

const QUESTIONS_FILE: &str = "questions.jsonl";
const TRAIN_FILE: &str = "train.jsonl";
const TEST_FILE: &str = "test.jsonl";
const CHECKPOINT_FILE: &str = "checkpoint.bin";

#[derive(Parser)]
#[command(name = "miavlm", version, about = "Multiview attribute perceiver toolkit")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Args)]
struct Common {
    /// Run configuration (TOML). Defaults apply to missing fields.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    #[arg(long, global = true)]
    seed: Option<u64>,
}

#[derive(Subcommand)]
enum Command {
    /// Generate synthetic multiview scenes and their attribute captions.
    GenData {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        count: Option<usize>,
        #[arg(long)]
        views: Option<usize>,
        #[arg(long)]
        out: PathBuf,
    },
    /// Build positive and negative questions and the train/test split.
    GenBenchmark {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        data: PathBuf,
        #[arg(long)]
        lexicon: Option<PathBuf>,
        /// Defaults to the data directory.
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Train a model on the training split.
    Train {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        data: PathBuf,
        #[arg(long)]
        epochs: Option<usize>,
        #[arg(long)]
        lr: Option<f64>,
        /// Leave negative instructions out of training.
        #[arg(long)]
        positives_only: bool,
        #[arg(long)]
        lexicon: Option<PathBuf>,
        #[arg(long)]
        out: PathBuf,
    },
    /// Answer questions with a checkpoint and score the answers.
    Evaluate {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        data: PathBuf,
        #[arg(long)]
        checkpoint: PathBuf,
        /// Defaults to the test split in the data directory.
        #[arg(long)]
        questions: Option<PathBuf>,
        #[arg(long)]
        out: PathBuf,
    },
    /// Compare answers under shuffled view orders.
    OrderExp {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        data: PathBuf,
        #[arg(long)]
        checkpoint: PathBuf,
        #[arg(long)]
        questions: Option<PathBuf>,
        #[arg(long)]
        shuffles: Option<usize>,
        #[arg(long)]
        out: PathBuf,
    },
    /// Score a file of free-text responses against a question file.
    Report {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        questions: PathBuf,
        #[arg(long)]
        responses: PathBuf,
        #[arg(long)]
        out: PathBuf,
    },
}

fn load_run(common: &Common) -> anyhow::Result<RunConfig> {
    let mut run = match &common.config {
        Some(path) => {
            let text = std::fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
            RunConfig::from_toml(&text)?
        }
        None => RunConfig::default(),
    };
    if let Some(seed) = common.seed {
        run.seed = seed;
    }
    Ok(run)
}

fn lexicon(flag: Option<&Path>, run: &RunConfig) -> anyhow::Result<AntonymLexicon> {
    Ok(match flag.or(run.lexicon.as_deref()) {
        Some(path) => AntonymLexicon::load(path)?,
        None => AntonymLexicon::shipped(),
    })
}

fn create_dir(dir: &Path) -> anyhow::Result<()> {
    std::fs::create_dir_all(dir).with_context(|| format!("creating {}", dir.display()))
}

fn run(cli: Cli) -> anyhow::Result<()> {
    match cli.command {
        Command::GenData {
            common,
            count,
            views,
            out,
        } => {
            let mut run = load_run(&common)?;
            if let Some(c) = count {
                run.scenes = c;
            }
            if let Some(v) = views {
                run.data.views = v;
            }
            run.validate()?;
            let data = gen_synthetic(run.scenes, &run.data, run.seed)?;
            data.save(&out)?;
            log::info!("wrote {} scenes to {}", data.scenes.len(), out.display());
        }
        Command::GenBenchmark {
            common,
            data,
            lexicon: lex,
            out,
        } => {
            let run = load_run(&common)?;
            let lexicon = lexicon(lex.as_deref(), &run)?;
            let dataset = Dataset::load(&data)?;
            let questions = build_benchmark(&dataset.records(), &Templates::default(), &lexicon, run.seed)?;
            let (train_set, test_set) = split_instructions(&questions, run.split_ratio, run.seed)?;
            let out = out.unwrap_or(data);
            create_dir(&out)?;
            write_jsonl(&out.join(QUESTIONS_FILE), &questions)?;
            write_jsonl(&out.join(TRAIN_FILE), &train_set)?;
            write_jsonl(&out.join(TEST_FILE), &test_set)?;
            log::info!(
                "{} questions, {} train, {} test",
                questions.len(),
                train_set.len(),
                test_set.len()
            );
        }
        Command::Train {
            common,
            data,
            epochs,
            lr,
            positives_only,
            lexicon: lex,
            out,
        } => {
            let mut run = load_run(&common)?;
            if let Some(e) = epochs {
                run.epochs = e;
            }
            if let Some(lr) = lr {
                run.lr = lr;
            }
            if positives_only {
                run.instruction_mix = InstructionMix::PositivesOnly;
            }
            run.data_dir = Some(data.clone());
            run.validate()?;
            let lexicon = lexicon(lex.as_deref(), &run)?;
            let dataset = Dataset::load(&data)?;
            let all: Vec<Question> = read_jsonl(&data.join(QUESTIONS_FILE))?;
            let train_set: Vec<Question> = read_jsonl(&data.join(TRAIN_FILE))?;
            let vocab = benchmark_vocab(&Templates::default(), &lexicon, &all);
            let (model, log) = train(&run, &dataset, &train_set, vocab)?;
            create_dir(&out)?;
            model.save(&out.join(CHECKPOINT_FILE))?;
            write_json(&out.join("train_log.json"), &Envelope::new(&run, log))?;
        }
        Command::Evaluate {
            common,
            data,
            checkpoint,
            questions,
            out,
        } => {
            let mut run = load_run(&common)?;
            run.data_dir = Some(data.clone());
            let model = Model::load(&checkpoint)?;
            run.model = model.config.clone();
            let dataset = Dataset::load(&data)?;
            let questions: Vec<Question> = read_jsonl(&questions.unwrap_or_else(|| data.join(TEST_FILE)))?;
            let (responses, report) = evaluate(&model, &questions, &dataset)?;
            create_dir(&out)?;
            write_jsonl(&out.join("responses.jsonl"), &responses)?;
            println!(
                "positive {:.3} negative {:.3} hooa {}",
                report.positive_accuracy,
                report.negative_accuracy,
                miavlm::bench::format_metric(report.hooa, 3)
            );
            write_json(&out.join("eval_report.json"), &Envelope::new(&run, report))?;
        }
        Command::OrderExp {
            common,
            data,
            checkpoint,
            questions,
            shuffles,
            out,
        } => {
            let mut run = load_run(&common)?;
            if let Some(s) = shuffles {
                run.shuffles = s;
            }
            run.data_dir = Some(data.clone());
            let model = Model::load(&checkpoint)?;
            run.model = model.config.clone();
            let dataset = Dataset::load(&data)?;
            let questions: Vec<Question> = read_jsonl(&questions.unwrap_or_else(|| data.join(QUESTIONS_FILE)))?;
            let report = order_experiment(&model, &dataset, &questions, run.shuffles, run.seed)?;
            create_dir(&out)?;
            for m in &report.models {
                println!("{} variance {:e} metrics {:?}", m.label, m.variance, m.metrics);
            }
            write_plot_csv(&out.join("order_plot.csv"), &report.plot_rows())?;
            write_json(&out.join("order_report.json"), &Envelope::new(&run, report))?;
        }
        Command::Report {
            common,
            questions,
            responses,
            out,
        } => {
            let run = load_run(&common)?;
            let questions: Vec<Question> = read_jsonl(&questions)?;
            let responses: Vec<Response> = read_jsonl(&responses)?;
            let report = score(&questions, &responses)?;
            create_dir(&out)?;
            println!(
                "positive {:.3} negative {:.3} hooa {}",
                report.positive_accuracy,
                report.negative_accuracy,
                miavlm::bench::format_metric(report.hooa, 3)
            );
            write_json(&out.join("eval_report.json"), &Envelope::new(&run, report))?;
        }
    }
    Ok(())
}

fn configure_workers() -> anyhow::Result<()> {
    let Ok(value) = std::env::var(WORKERS_ENV) else {
        return Ok(());
    };
    let n: usize = match value.parse() {
        Ok(n) if n > 0 => n,
        _ => bail!("{WORKERS_ENV} must be a positive integer, got `{value}`"),
    };
    rayon::ThreadPoolBuilder::new().num_threads(n).build_global()?;
    Ok(())
}

fn error_line(err: &anyhow::Error) -> String {
    let kind = err
        .chain()
        .find_map(|e| e.downcast_ref::<miavlm::Error>())
        .map_or("runtime", miavlm::Error::kind);
    let message = format!("{err:#}")
        .replace('\\', "\\\\")
        .replace('"', "\\\"")
        .replace('\n', " ");
    format!("error kind={kind} message=\"{message}\"")
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) if !e.use_stderr() => {
            print!("{e}");
            return ExitCode::SUCCESS;
        }
        Err(e) => {
            let first = e.to_string().lines().next().unwrap_or_default().to_string();
            eprintln!("error kind=usage message=\"{}\"", first.replace('"', "\\\""));
            return ExitCode::from(2);
        }
    };
    match configure_workers().and_then(|()| run(cli)) {
        Ok(()) => ExitCode::SUCCESS,
        Err(err) => {
            eprintln!("{}", error_line(&err));
            ExitCode::FAILURE
        }
    }
}
