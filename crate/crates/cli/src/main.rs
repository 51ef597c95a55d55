use std::collections::{BTreeMap, BTreeSet};
use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use chainrec::corpus::{extract_chains, generate_synthetic, load_corpus, load_gold, save_corpus, save_gold, write_jsonl, CandidateChain, SynthConfig};
use chainrec::eval::{evaluate, predict, run_benchmark, write_json, BenchmarkSuite, EvalMode};
use chainrec::gradsuite::run_gradient_suite;
use chainrec::ranker::{load_predictions, save_predictions};
use chainrec::training::{save_log, train_cooperative, train_ranker, RankerTrainer, TrainConfig, TrainMode, TrainOptions};
use chainrec::{Error, Result};
use clap::{Parser, Subcommand, ValueEnum};
use serde::de::DeserializeOwned;
use serde::Serialize;

#[derive(Parser)]
#[command(name = "chainrec", version, about = "Recover multi-hop reasoning chains from answer-only supervision")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Generate a synthetic corpus with planted gold chains.
    GenSynth {
        #[arg(long)]
        config: Option<PathBuf>,
        #[arg(long)]
        out: PathBuf,
        #[arg(long)]
        seed: u64,
    },
    /// Write the candidate chain set of every question.
    ExtractChains {
        #[arg(long)]
        corpus: PathBuf,
        #[arg(long, value_parser = clap::value_parser!(u8).range(2..=3))]
        hops: u8,
        #[arg(long)]
        out: PathBuf,
    },
    /// Train a ranker, an independent scorer or the cooperative game.
    Train {
        #[arg(long)]
        corpus: PathBuf,
        #[arg(long, value_enum)]
        mode: ModeArg,
        #[arg(long)]
        config: Option<PathBuf>,
        #[arg(long)]
        out: PathBuf,
        /// Overrides the seed in the config file.
        #[arg(long)]
        seed: u64,
        /// Corpus to write predictions for; defaults to the training corpus.
        #[arg(long)]
        predict: Option<PathBuf>,
    },
    /// Decode chains for a corpus with a trained ranker checkpoint.
    Predict {
        #[arg(long)]
        checkpoint: PathBuf,
        #[arg(long)]
        corpus: PathBuf,
        #[arg(long)]
        out: PathBuf,
    },
    /// Score predictions against gold chains.
    Eval {
        #[arg(long)]
        corpus: PathBuf,
        #[arg(long)]
        gold: PathBuf,
        #[arg(long)]
        preds: PathBuf,
        #[arg(long, value_enum, default_value = "passage_em")]
        mode: EvalArg,
        #[arg(long)]
        report: PathBuf,
        /// Keep ambiguous questions in the order-sensitive metric.
        #[arg(long)]
        include_ambiguous: bool,
    },
    /// Run every method on the synthetic suites and write the tables.
    Benchmark {
        #[arg(long)]
        suite: Option<PathBuf>,
        #[arg(long)]
        out: PathBuf,
        /// Overrides the master seed in the suite file.
        #[arg(long)]
        seed: u64,
    },
    /// Finite-difference check of every differentiable component.
    Gradcheck {
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long, default_value_t = 10)]
        configs: usize,
    },
}

#[derive(Clone, Copy, ValueEnum)]
enum ModeArg {
    Ranker,
    Independent,
    Cooperative,
}

impl From<ModeArg> for TrainMode {
    fn from(m: ModeArg) -> Self {
        match m {
            ModeArg::Ranker => TrainMode::Ranker,
            ModeArg::Independent => TrainMode::Independent,
            ModeArg::Cooperative => TrainMode::Cooperative,
        }
    }
}

#[derive(Clone, Copy, ValueEnum)]
#[value(rename_all = "snake_case")]
enum EvalArg {
    PassageEm,
    FullChain,
}

impl From<EvalArg> for EvalMode {
    fn from(m: EvalArg) -> Self {
        match m {
            EvalArg::PassageEm => EvalMode::PassageEm,
            EvalArg::FullChain => EvalMode::FullChain,
        }
    }
}

fn read_config<T: DeserializeOwned + Default>(path: Option<&Path>) -> Result<T> {
    match path {
        None => Ok(T::default()),
        Some(p) => {
            let text = fs::read_to_string(p)?;
            serde_json::from_str(&text).map_err(|e| Error::Config(format!("{}: {e}", p.display())))
        }
    }
}

#[derive(Serialize)]
struct ChainSet<'a> {
    id: &'a str,
    chains: Vec<CandidateChain>,
}

fn gen_synth(config: Option<&Path>, out: &Path, seed: u64) -> Result<()> {
    let cfg: SynthConfig = read_config(config)?;
    let (corpus, gold) = generate_synthetic(&cfg, seed)?;
    fs::create_dir_all(out)?;
    save_corpus(&out.join("corpus.jsonl"), &corpus)?;
    save_gold(&out.join("gold.jsonl"), &gold)?;
    write_json(&out.join("config.json"), &serde_json::json!({ "seed": seed, "synth": cfg }))?;
    println!("wrote {} questions to {}", corpus.len(), out.display());
    Ok(())
}

fn extract(corpus: &Path, hops: usize, out: &Path) -> Result<()> {
    let corpus = load_corpus(corpus)?;
    let sets: Vec<ChainSet<'_>> = corpus
        .iter()
        .map(|inst| ChainSet {
            id: &inst.id,
            chains: extract_chains(inst, hops),
        })
        .collect();
    let empty = sets.iter().filter(|s| s.chains.is_empty()).count();
    write_jsonl(out, &sets)?;
    println!("{} questions, {} with no candidate chain", sets.len(), empty);
    Ok(())
}

fn train(corpus: &Path, mode: TrainMode, config: Option<&Path>, out: &Path, seed: u64, predict_on: Option<&Path>) -> Result<()> {
    let mut cfg: TrainConfig = read_config(config)?;
    cfg.seed = seed;
    cfg.validate()?;
    let data = load_corpus(corpus)?;
    fs::create_dir_all(out)?;
    let opts = TrainOptions {
        evaluator: None,
        checkpoint_dir: Some(out.to_path_buf()),
    };
    let trainer = match mode {
        TrainMode::Ranker => train_ranker(&data, &cfg, true, &opts)?,
        TrainMode::Independent => train_ranker(&data, &cfg, false, &opts)?,
        TrainMode::Cooperative => {
            let warm = train_ranker(&data, &cfg, true, &opts)?;
            train_cooperative(&data, warm, &opts)?.trainer
        }
    };
    trainer.save(&out.join("ranker.ckpt"))?;
    save_log(&out.join("log.jsonl"), &trainer.log)?;
    write_json(&out.join("config.json"), &serde_json::json!({ "mode": mode, "train": cfg }))?;
    let target = match predict_on {
        Some(p) => load_corpus(p)?,
        None => data,
    };
    let preds = predict(&trainer.ranker, &trainer.params, &target, cfg.hops, cfg.direction)?;
    save_predictions(&out.join("preds.jsonl"), &preds)?;
    for r in &trainer.log {
        println!("epoch {:>3} {:?} reward {:.4} loss {:.4}", r.epoch, r.phase, r.mean_reward, r.loss);
    }
    Ok(())
}

fn predict_cmd(checkpoint: &Path, corpus: &Path, out: &Path) -> Result<()> {
    let trainer = RankerTrainer::load(checkpoint)?;
    let data = load_corpus(corpus)?;
    let preds = predict(&trainer.ranker, &trainer.params, &data, trainer.cfg.hops, trainer.cfg.direction)?;
    save_predictions(out, &preds)?;
    println!("{} of {} questions decoded", preds.len(), data.len());
    Ok(())
}

fn eval(corpus: &Path, gold: &Path, preds: &Path, mode: EvalMode, report: &Path, include_ambiguous: bool) -> Result<()> {
    let corpus = load_corpus(corpus)?;
    let gold = load_gold(gold)?;
    let preds = load_predictions(preds)?;
    let pools: BTreeMap<&str, BTreeSet<&str>> = corpus
        .iter()
        .map(|q| (q.id.as_str(), q.passages.iter().map(|p| p.id.as_str()).collect()))
        .collect();
    for p in &preds {
        let pool = pools.get(p.id.as_str()).ok_or_else(|| Error::IdMismatch(p.id.clone()))?;
        if let Some(bad) = p.chain.passages.iter().find(|id| !pool.contains(id.as_str())) {
            return Err(Error::Format(format!("question {:?}: passage {bad:?} is not in its pool", p.id)));
        }
    }
    let config = serde_json::json!({ "corpus": corpus.len(), "exclude_ambiguous": !include_ambiguous });
    let r = evaluate(&preds, &gold, mode, !include_ambiguous, config)?;
    write_json(report, &r)?;
    println!("chain accuracy {} ({}/{})", fmt_rate(r.chain_accuracy.rate), r.chain_accuracy.correct, r.chain_accuracy.total);
    println!("passage_em {}  full_chain {}", fmt_rate(r.passage_em.rate), fmt_rate(r.full_chain.rate));
    println!("head recall {}  tail recall {}", fmt_rate(r.head_recall.rate), fmt_rate(r.tail_recall.rate));
    Ok(())
}

fn fmt_rate(r: Option<f64>) -> String {
    r.map_or_else(|| "undefined".into(), |v| format!("{:.4}", v))
}

fn benchmark(suite: Option<&Path>, out: &Path, seed: u64) -> Result<()> {
    let mut suite: BenchmarkSuite = read_config(suite)?;
    suite.seed = seed;
    let report = run_benchmark(&suite, Some(out))?;
    print!("{}", chainrec::eval::render_tables(&report));
    Ok(())
}

fn gradcheck(seed: u64, configs: usize) -> Result<bool> {
    let entries = run_gradient_suite(seed, configs)?;
    for e in &entries {
        let status = if e.passed() { "ok" } else { "FAIL" };
        println!("{status:<4} {:<26} {} configs, max rel error {:.2e}", e.name, e.configs, e.max_rel_error);
    }
    Ok(entries.iter().all(|e| e.passed()))
}

fn run(cli: Cli) -> Result<bool> {
    match cli.command {
        Command::GenSynth { config, out, seed } => gen_synth(config.as_deref(), &out, seed)?,
        Command::ExtractChains { corpus, hops, out } => extract(&corpus, hops as usize, &out)?,
        Command::Train {
            corpus,
            mode,
            config,
            out,
            seed,
            predict,
        } => train(&corpus, mode.into(), config.as_deref(), &out, seed, predict.as_deref())?,
        Command::Predict { checkpoint, corpus, out } => predict_cmd(&checkpoint, &corpus, &out)?,
        Command::Eval {
            corpus,
            gold,
            preds,
            mode,
            report,
            include_ambiguous,
        } => eval(&corpus, &gold, &preds, mode.into(), &report, include_ambiguous)?,
        Command::Benchmark { suite, out, seed } => benchmark(suite.as_deref(), &out, seed)?,
        Command::Gradcheck { seed, configs } => return gradcheck(seed, configs),
    }
    Ok(true)
}

fn main() -> ExitCode {
    match run(Cli::parse()) {
        Ok(true) => ExitCode::SUCCESS,
        Ok(false) => ExitCode::FAILURE,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::FAILURE
        }
    }
}
