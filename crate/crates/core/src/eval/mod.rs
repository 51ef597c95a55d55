//! Chain-recovery metrics, the random and independent baselines, and the
//! benchmark harness that compares all methods on generated suites.

use std::collections::{BTreeMap, BTreeSet};
use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::corpus::{
    extract_chains, generate_synthetic, write_jsonl, CandidateChain, GoldAnnotation, QuestionInstance, SynthConfig,
    SynthVariant,
};
use crate::nn::ParameterSet;
use crate::ranker::{decode_from_candidates, Direction, PredictedChain, PredictedPath, Ranker};
use crate::training::{
    save_log, stream_rng, train_cooperative, train_ranker, BonusPlacement, LogRecord, RankerTrainer, TrainConfig, TrainOptions,
};
use crate::{Error, Result};

#[cfg(test)]
mod tests;

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum EvalMode {
    /// Predicted passage set equals a gold chain's passage set.
    #[default]
    PassageEm,
    /// Predicted passages, order and links form one of the gold chains.
    FullChain,
}

/// A rate with its denominator. `rate` is `None` when nothing was counted.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Rate {
    pub correct: usize,
    pub total: usize,
    pub rate: Option<f64>,
}

impl Rate {
    pub fn new(correct: usize, total: usize) -> Self {
        let rate = (total > 0).then(|| correct as f64 / total as f64);
        Rate { correct, total, rate }
    }

    /// The rate, with an empty denominator read as 0.
    pub fn value(&self) -> f64 {
        self.rate.unwrap_or(0.0)
    }
}

fn passage_set(passages: &[String]) -> BTreeSet<&str> {
    passages.iter().map(String::as_str).collect()
}

/// Whether `pred` is correct for `gold` under `mode`.
pub fn is_correct(pred: &PredictedPath, gold: &GoldAnnotation, mode: EvalMode) -> bool {
    match mode {
        EvalMode::PassageEm => {
            let p = passage_set(&pred.passages);
            gold.gold_chains.iter().any(|c| passage_set(&c.passages) == p)
        }
        EvalMode::FullChain => match &pred.links {
            Some(links) => gold.gold_chains.iter().any(|c| c.passages == pred.passages && &c.links == links),
            None => false,
        },
    }
}

fn candidate_correct(c: &CandidateChain, gold: &GoldAnnotation, mode: EvalMode) -> bool {
    let path = PredictedPath {
        passages: c.passages.clone(),
        links: Some(c.links.clone()),
    };
    is_correct(&path, gold, mode)
}

/// Indexes predictions by question id, rejecting duplicates and ids absent
/// from the gold file.
fn index_predictions<'a>(preds: &'a [PredictedChain], gold: &[GoldAnnotation]) -> Result<BTreeMap<&'a str, &'a PredictedPath>> {
    let gold_ids: BTreeSet<&str> = gold.iter().map(|g| g.id.as_str()).collect();
    if gold_ids.len() != gold.len() {
        return Err(Error::IdMismatch("duplicate question id in gold annotations".into()));
    }
    let mut out = BTreeMap::new();
    for p in preds {
        if !gold_ids.contains(p.id.as_str()) {
            return Err(Error::IdMismatch(format!("prediction for unknown question {:?}", p.id)));
        }
        if out.insert(p.id.as_str(), &p.chain).is_some() {
            return Err(Error::IdMismatch(format!("duplicate prediction for {:?}", p.id)));
        }
    }
    Ok(out)
}

/// Fraction of evaluated questions predicted correctly. Questions without a
/// prediction count as incorrect. With `exclude_ambiguous`, ambiguous
/// questions are dropped in full-chain mode, which is order sensitive.
pub fn chain_accuracy(preds: &[PredictedChain], gold: &[GoldAnnotation], mode: EvalMode, exclude_ambiguous: bool) -> Result<Rate> {
    let by_id = index_predictions(preds, gold)?;
    let (mut correct, mut total) = (0, 0);
    for g in gold {
        if exclude_ambiguous && mode == EvalMode::FullChain && g.ambiguous {
            continue;
        }
        total += 1;
        if by_id.get(g.id.as_str()).is_some_and(|p| is_correct(p, g, mode)) {
            correct += 1;
        }
    }
    Ok(Rate::new(correct, total))
}

/// Head and tail recall over the unambiguous questions.
pub fn head_tail_recall(preds: &[PredictedChain], gold: &[GoldAnnotation]) -> Result<(Rate, Rate)> {
    let by_id = index_predictions(preds, gold)?;
    let (mut heads, mut tails, mut total) = (0, 0, 0);
    for g in gold.iter().filter(|g| !g.ambiguous) {
        total += 1;
        let Some(p) = by_id.get(g.id.as_str()) else {
            continue;
        };
        let (Some(ph), Some(pt)) = (p.passages.first(), p.passages.last()) else {
            continue;
        };
        heads += usize::from(g.gold_chains.iter().any(|c| c.head() == ph));
        tails += usize::from(g.gold_chains.iter().any(|c| c.tail() == pt));
    }
    Ok((Rate::new(heads, total), Rate::new(tails, total)))
}

/// Per-question outcome kept in reports.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct QuestionRecord {
    pub id: String,
    pub ambiguous: bool,
    pub predicted: Option<Vec<String>>,
    pub passage_em: bool,
    pub full_chain: bool,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub mode: EvalMode,
    pub exclude_ambiguous: bool,
    /// Accuracy under `mode`.
    pub chain_accuracy: Rate,
    pub passage_em: Rate,
    pub full_chain: Rate,
    pub head_recall: Rate,
    pub tail_recall: Rate,
    /// Questions that received a prediction.
    pub coverage: Rate,
    pub records: Vec<QuestionRecord>,
    pub config: serde_json::Value,
}

/// Scores `preds` against `gold` under every metric.
pub fn evaluate(
    preds: &[PredictedChain],
    gold: &[GoldAnnotation],
    mode: EvalMode,
    exclude_ambiguous: bool,
    config: serde_json::Value,
) -> Result<EvalReport> {
    let by_id = index_predictions(preds, gold)?;
    let passage_em = chain_accuracy(preds, gold, EvalMode::PassageEm, exclude_ambiguous)?;
    let full_chain = chain_accuracy(preds, gold, EvalMode::FullChain, exclude_ambiguous)?;
    let (head_recall, tail_recall) = head_tail_recall(preds, gold)?;
    let records = gold
        .iter()
        .map(|g| {
            let p = by_id.get(g.id.as_str());
            QuestionRecord {
                id: g.id.clone(),
                ambiguous: g.ambiguous,
                predicted: p.map(|p| p.passages.clone()),
                passage_em: p.is_some_and(|p| is_correct(p, g, EvalMode::PassageEm)),
                full_chain: p.is_some_and(|p| is_correct(p, g, EvalMode::FullChain)),
            }
        })
        .collect();
    Ok(EvalReport {
        mode,
        exclude_ambiguous,
        chain_accuracy: match mode {
            EvalMode::PassageEm => passage_em,
            EvalMode::FullChain => full_chain,
        },
        passage_em,
        full_chain,
        head_recall,
        tail_recall,
        coverage: Rate::new(by_id.len(), gold.len()),
        records,
        config,
    })
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RandomBaseline {
    /// Mean over questions of the fraction of C judged correct.
    pub exact: f64,
    pub estimate: f64,
    /// Binomial normal approximation over all draws.
    pub stderr: f64,
    pub questions: usize,
    pub trials: usize,
}

/// Accuracy of picking a chain uniformly from each question's C. Questions
/// with empty (or missing) C count as incorrect.
pub fn random_baseline(
    candidates: &BTreeMap<String, Vec<CandidateChain>>,
    gold: &[GoldAnnotation],
    mode: EvalMode,
    trials: usize,
    seed: u64,
) -> RandomBaseline {
    let hits: Vec<Vec<bool>> = gold
        .iter()
        .map(|g| {
            let mut c = candidates.get(&g.id).cloned().unwrap_or_default();
            c.sort();
            c.dedup();
            c.iter().map(|c| candidate_correct(c, g, mode)).collect()
        })
        .collect();
    let q = hits.len();
    let exact = if q == 0 {
        0.0
    } else {
        hits.iter()
            .filter(|h| !h.is_empty())
            .map(|h| h.iter().filter(|&&x| x).count() as f64 / h.len() as f64)
            .sum::<f64>()
            / q as f64
    };
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut correct = 0usize;
    for _ in 0..trials {
        for h in &hits {
            if !h.is_empty() && h[rng.gen_range(0..h.len())] {
                correct += 1;
            }
        }
    }
    let draws = trials * q;
    let (estimate, stderr) = if draws == 0 {
        (0.0, 0.0)
    } else {
        let p = correct as f64 / draws as f64;
        (p, (p * (1.0 - p) / draws as f64).sqrt())
    };
    RandomBaseline {
        exact,
        estimate,
        stderr,
        questions: q,
        trials,
    }
}

/// Candidate sets keyed by question id.
pub fn candidate_sets(corpus: &[QuestionInstance], hops: usize) -> BTreeMap<String, Vec<CandidateChain>> {
    corpus.iter().map(|i| (i.id.clone(), extract_chains(i, hops))).collect()
}

/// Decodes the best chain from each question's C; questions with empty C
/// get no prediction.
pub fn predict(ranker: &Ranker, params: &ParameterSet, corpus: &[QuestionInstance], hops: usize, direction: Direction) -> Result<Vec<PredictedChain>> {
    let mut out = Vec::with_capacity(corpus.len());
    for inst in corpus {
        let c = extract_chains(inst, hops);
        if c.is_empty() {
            continue;
        }
        let (best, lp) = decode_from_candidates(ranker, params, inst, &c, hops, direction)?;
        out.push(PredictedChain::from_candidate(&inst.id, &best, lp));
    }
    Ok(out)
}

/// Dev-set scorer for the trainer: chain accuracy under `mode`.
pub struct DevSet<'a> {
    pub corpus: &'a [QuestionInstance],
    pub gold: &'a [GoldAnnotation],
    pub hops: usize,
    pub direction: Direction,
    pub mode: EvalMode,
}

impl DevSet<'_> {
    pub fn accuracy(&self, ranker: &Ranker, params: &ParameterSet) -> Result<f64> {
        let preds = predict(ranker, params, self.corpus, self.hops, self.direction)?;
        Ok(chain_accuracy(&preds, self.gold, self.mode, true)?.value())
    }

    pub fn report(&self, ranker: &Ranker, params: &ParameterSet, config: serde_json::Value) -> Result<EvalReport> {
        let preds = predict(ranker, params, self.corpus, self.hops, self.direction)?;
        evaluate(&preds, self.gold, self.mode, true, config)
    }
}

/// Trains the per-passage scorer (no query update) and reports on `dev`.
pub fn independent_baseline(train: &[QuestionInstance], dev: &DevSet<'_>, cfg: &TrainConfig) -> Result<(RankerTrainer, EvalReport)> {
    let eval = |r: &Ranker, p: &ParameterSet| dev.accuracy(r, p);
    let opts = TrainOptions {
        evaluator: Some(&eval),
        checkpoint_dir: None,
    };
    let trainer = train_ranker(train, cfg, false, &opts)?;
    let config = serde_json::to_value(cfg).map_err(|e| Error::Format(e.to_string()))?;
    let report = dev.report(&trainer.ranker, &trainer.params, config)?;
    Ok((trainer, report))
}

// ---------------------------------------------------------------------------
// Benchmark harness

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DatasetSpec {
    pub name: String,
    pub synth: SynthConfig,
}

/// The direction ablation: conditional selection in both directions, and
/// optionally the two reasoner placements on top of tail-first selection.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct AblationSpec {
    pub dataset: DatasetSpec,
    #[serde(default)]
    pub cooperative_rows: bool,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct BenchmarkSuite {
    /// Every data and training seed derives from this.
    pub seed: u64,
    pub seeds: usize,
    pub train_questions: usize,
    pub dev_questions: usize,
    pub datasets: Vec<DatasetSpec>,
    pub ablation: Option<AblationSpec>,
    pub train: TrainConfig,
    pub mode: EvalMode,
    pub random_trials: usize,
    /// Write checkpoints and per-run logs under the output directory.
    pub save_runs: bool,
}

/// Standard and entity-ambiguous 2-hop suites at pool size 6.
pub fn default_datasets() -> Vec<DatasetSpec> {
    let base = SynthConfig::default();
    vec![
        DatasetSpec {
            name: "standard".into(),
            synth: base.clone(),
        },
        DatasetSpec {
            name: "entity_ambiguous".into(),
            synth: SynthConfig {
                variant: SynthVariant::EntityAmbiguous,
                ..base
            },
        },
    ]
}

/// A suite whose instances have more head candidates than tail candidates.
pub fn tail_rare_dataset() -> DatasetSpec {
    DatasetSpec {
        name: "tail_rare".into(),
        synth: SynthConfig {
            pool_size: 8,
            distractor_rate: 1.0,
            variant: SynthVariant::TailRare,
            ..SynthConfig::default()
        },
    }
}

/// Training settings used by the benchmark unless the suite overrides them.
pub fn benchmark_train_config() -> TrainConfig {
    let mut cfg = TrainConfig {
        epochs: 30,
        learning_rate: 0.3,
        cooperative_epochs: 20,
        ..TrainConfig::default()
    };
    cfg.model.encoder_layers = 0;
    cfg.model.embed_dim = 32;
    cfg
}

impl Default for BenchmarkSuite {
    fn default() -> Self {
        BenchmarkSuite {
            seed: 0,
            seeds: 3,
            train_questions: 1000,
            dev_questions: 200,
            datasets: default_datasets(),
            ablation: Some(AblationSpec {
                dataset: tail_rare_dataset(),
                cooperative_rows: true,
            }),
            train: benchmark_train_config(),
            mode: EvalMode::PassageEm,
            random_trials: 1000,
            save_runs: true,
        }
    }
}

impl BenchmarkSuite {
    pub fn validate(&self) -> Result<()> {
        if self.seeds == 0 || self.train_questions == 0 || self.dev_questions == 0 {
            return Err(Error::Config("seeds and question counts must be positive".into()));
        }
        let mut names = BTreeSet::new();
        for d in self.datasets.iter().chain(self.ablation.as_ref().map(|a| &a.dataset)) {
            d.synth.validate()?;
            if !names.insert(d.name.as_str()) {
                return Err(Error::Config(format!("dataset name {:?} used twice", d.name)));
            }
        }
        self.train.validate()
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Method {
    Random,
    Independent,
    Conditional,
    Cooperative,
}

impl Method {
    pub const ALL: [Method; 4] = [Method::Random, Method::Independent, Method::Conditional, Method::Cooperative];

    pub fn label(self) -> &'static str {
        match self {
            Method::Random => "Random",
            Method::Independent => "Distant Supervised MatchLSTM",
            Method::Conditional => "Conditional Selection",
            Method::Cooperative => "Cooperative Game",
        }
    }
}

/// One method's outcome on one dataset and seed.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RunResult {
    pub dataset: String,
    pub seed_index: usize,
    pub method: Method,
    /// Dev chain accuracy; for the random baseline, the exact expectation.
    pub accuracy: f64,
    pub evaluated: usize,
    /// Absent for the random baseline.
    pub head_recall: Option<Rate>,
    pub tail_recall: Option<Rate>,
    pub coverage: Option<Rate>,
    pub log: Vec<LogRecord>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RandomCheck {
    pub dataset: String,
    pub seed_index: usize,
    #[serde(flatten)]
    pub baseline: RandomBaseline,
    pub within_3_stderr: bool,
}

/// Mean over seeds with the per-seed values.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Cell {
    pub mean: f64,
    pub per_seed: Vec<f64>,
}

impl Cell {
    fn from_values(per_seed: Vec<f64>) -> Self {
        let mean = per_seed.iter().sum::<f64>() / per_seed.len().max(1) as f64;
        Cell { mean, per_seed }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MethodRow {
    pub method: Method,
    /// Dev chain accuracy per dataset name.
    pub cells: BTreeMap<String, Cell>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct AblationRow {
    pub label: String,
    pub direction: Direction,
    /// Which passage the reasoner reads, for cooperative rows.
    pub reasoner_reads: Option<String>,
    pub head_recall: Cell,
    pub tail_recall: Cell,
    pub accuracy: Cell,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct BenchmarkReport {
    pub suite: BenchmarkSuite,
    pub methods: Vec<MethodRow>,
    pub ablation: Vec<AblationRow>,
    pub random_checks: Vec<RandomCheck>,
    /// Mean |C|, mean head and tail candidate counts per dataset.
    pub candidate_stats: BTreeMap<String, CandidateStats>,
    pub runs: Vec<RunResult>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CandidateStats {
    pub mean_chains: f64,
    pub mean_heads: f64,
    pub mean_tails: f64,
}

fn candidate_stats(sets: &BTreeMap<String, Vec<CandidateChain>>) -> CandidateStats {
    let n = sets.len().max(1) as f64;
    let (mut c, mut h, mut t) = (0.0, 0.0, 0.0);
    for chains in sets.values() {
        let (heads, tails) = crate::corpus::head_tail_sets(chains);
        c += chains.len() as f64;
        h += heads.len() as f64;
        t += tails.len() as f64;
    }
    CandidateStats {
        mean_chains: c / n,
        mean_heads: h / n,
        mean_tails: t / n,
    }
}

// Stream tags for seeds derived from the suite's master seed.
const TAG_DATA: u64 = 101;
const TAG_TRAIN: u64 = 102;
const TAG_RANDOM: u64 = 103;

fn derived_seed(master: u64, tag: u64, dataset: usize, seed_index: usize) -> u64 {
    stream_rng(master, tag, dataset as u64, seed_index as u64).gen()
}

/// Training settings for one dataset and seed. The vocabulary comes from
/// the generator so dev tokens never fall outside it.
fn run_config(suite: &BenchmarkSuite, spec: &DatasetSpec, dataset: usize, seed_index: usize) -> TrainConfig {
    let mut cfg = TrainConfig {
        hops: spec.synth.hops,
        seed: derived_seed(suite.seed, TAG_TRAIN, dataset, seed_index),
        ..suite.train.clone()
    };
    cfg.model.vocab_size = Some(spec.synth.vocab_size());
    cfg
}

/// Train and dev splits for one dataset and seed.
pub fn generate_split(spec: &DatasetSpec, train_questions: usize, dev_questions: usize, seed: u64) -> Result<Split> {
    let mk = |questions: usize, prefix: &str, salt: u64| -> Result<(Vec<QuestionInstance>, Vec<GoldAnnotation>)> {
        let cfg = SynthConfig {
            questions,
            id_prefix: format!("{}-{prefix}-", spec.name),
            ..spec.synth.clone()
        };
        Ok(generate_synthetic(&cfg, seed ^ salt)?)
    };
    let (train, _) = mk(train_questions, "train", 0)?;
    let (dev, dev_gold) = mk(dev_questions, "dev", 0x9e37_79b9_7f4a_7c15)?;
    Ok(Split { train, dev, dev_gold })
}

pub struct Split {
    pub train: Vec<QuestionInstance>,
    pub dev: Vec<QuestionInstance>,
    pub dev_gold: Vec<GoldAnnotation>,
}

struct RunContext<'a> {
    suite: &'a BenchmarkSuite,
    out: Option<&'a Path>,
}

impl RunContext<'_> {
    fn run_dir(&self, dataset: &str, seed_index: usize, label: &str) -> Option<PathBuf> {
        match (self.out, self.suite.save_runs) {
            (Some(out), true) => Some(out.join("runs").join(format!("{dataset}-seed{seed_index}-{label}"))),
            _ => None,
        }
    }

    fn persist(&self, dir: &Option<PathBuf>, trainer: &RankerTrainer, report: &EvalReport) -> Result<()> {
        if let Some(dir) = dir {
            std::fs::create_dir_all(dir)?;
            trainer.save(&dir.join("ranker.ckpt"))?;
            save_log(&dir.join("log.jsonl"), &trainer.log)?;
            write_json(&dir.join("report.json"), report)?;
        }
        Ok(())
    }
}

fn run_result(dataset: &str, seed_index: usize, method: Method, report: &EvalReport, log: Vec<LogRecord>) -> RunResult {
    RunResult {
        dataset: dataset.to_string(),
        seed_index,
        method,
        accuracy: report.chain_accuracy.value(),
        evaluated: report.chain_accuracy.total,
        head_recall: Some(report.head_recall),
        tail_recall: Some(report.tail_recall),
        coverage: Some(report.coverage),
        log,
    }
}

/// Trains and evaluates one ranker configuration; optionally continues it
/// cooperatively. Returns the plain and cooperative (trainer, report).
fn train_and_report(
    ctx: &RunContext<'_>,
    split: &Split,
    cfg: &TrainConfig,
    conditional: bool,
    dirs: (Option<PathBuf>, Option<PathBuf>),
    cooperative: bool,
) -> Result<((RankerTrainer, EvalReport), Option<(RankerTrainer, EvalReport)>)> {
    let dev = DevSet {
        corpus: &split.dev,
        gold: &split.dev_gold,
        hops: cfg.hops,
        direction: cfg.direction,
        mode: ctx.suite.mode,
    };
    let eval = |r: &Ranker, p: &ParameterSet| dev.accuracy(r, p);
    let opts = TrainOptions {
        evaluator: Some(&eval),
        checkpoint_dir: None,
    };
    let config = serde_json::to_value(cfg).map_err(|e| Error::Format(e.to_string()))?;
    let trainer = train_ranker(&split.train, cfg, conditional, &opts)?;
    let report = dev.report(&trainer.ranker, &trainer.params, config.clone())?;
    ctx.persist(&dirs.0, &trainer, &report)?;
    let coop = if cooperative {
        let coop_opts = TrainOptions {
            evaluator: Some(&eval),
            checkpoint_dir: dirs.1.clone(),
        };
        let out = train_cooperative(&split.train, trainer.clone(), &coop_opts)?;
        let r = dev.report(&out.trainer.ranker, &out.trainer.params, config)?;
        ctx.persist(&dirs.1, &out.trainer, &r)?;
        Some((out.trainer, r))
    } else {
        None
    };
    Ok(((trainer, report), coop))
}

/// Runs every method on every dataset and seed, plus the direction
/// ablation. With `out`, writes `benchmark.json`, `tables.txt` and (when
/// `save_runs`) per-run checkpoints, logs and reports.
pub fn run_benchmark(suite: &BenchmarkSuite, out: Option<&Path>) -> Result<BenchmarkReport> {
    suite.validate()?;
    let ctx = RunContext { suite, out };
    let mut runs = Vec::new();
    let mut random_checks = Vec::new();
    let mut candidate_stats_by = BTreeMap::new();

    for (di, spec) in suite.datasets.iter().enumerate() {
        let mut all_sets = BTreeMap::new();
        for s in 0..suite.seeds {
            let split = generate_split(spec, suite.train_questions, suite.dev_questions, derived_seed(suite.seed, TAG_DATA, di, s))?;
            let cfg = run_config(suite, spec, di, s);
            let sets = candidate_sets(&split.dev, cfg.hops);
            let rb = random_baseline(&sets, &split.dev_gold, suite.mode, suite.random_trials, derived_seed(suite.seed, TAG_RANDOM, di, s));
            all_sets.extend(sets);
            runs.push(RunResult {
                dataset: spec.name.clone(),
                seed_index: s,
                method: Method::Random,
                accuracy: rb.exact,
                evaluated: rb.questions,
                head_recall: None,
                tail_recall: None,
                coverage: None,
                log: Vec::new(),
            });
            random_checks.push(RandomCheck {
                dataset: spec.name.clone(),
                seed_index: s,
                within_3_stderr: (rb.estimate - rb.exact).abs() <= 3.0 * rb.stderr,
                baseline: rb,
            });

            let ((ind, ind_report), _) = train_and_report(
                &ctx,
                &split,
                &cfg,
                false,
                (ctx.run_dir(&spec.name, s, "independent"), None),
                false,
            )?;
            runs.push(run_result(&spec.name, s, Method::Independent, &ind_report, ind.log));

            let ((cond, cond_report), coop) = train_and_report(
                &ctx,
                &split,
                &cfg,
                true,
                (ctx.run_dir(&spec.name, s, "conditional"), ctx.run_dir(&spec.name, s, "cooperative")),
                true,
            )?;
            runs.push(run_result(&spec.name, s, Method::Conditional, &cond_report, cond.log));
            if let Some((coop, coop_report)) = coop {
                runs.push(run_result(&spec.name, s, Method::Cooperative, &coop_report, coop.log));
            }
        }
        candidate_stats_by.insert(spec.name.clone(), candidate_stats(&all_sets));
    }

    let methods = Method::ALL
        .iter()
        .map(|&m| MethodRow {
            method: m,
            cells: suite
                .datasets
                .iter()
                .map(|d| {
                    let vals = runs
                        .iter()
                        .filter(|r| r.method == m && r.dataset == d.name)
                        .map(|r| r.accuracy)
                        .collect();
                    (d.name.clone(), Cell::from_values(vals))
                })
                .collect(),
        })
        .collect();

    let mut ablation = Vec::new();
    if let Some(ab) = &suite.ablation {
        let di = suite.datasets.len();
        let spec = &ab.dataset;
        // (label, direction, placement, cooperative)
        let mut variants = vec![
            ("Conditional Selection (Head to Tail)", Direction::HeadFirst, None),
            ("Conditional Selection (Tail to Head)", Direction::TailFirst, None),
        ];
        if ab.cooperative_rows {
            variants.push(("+ Cooperative Reasoner on Head", Direction::TailFirst, Some(BonusPlacement::FirstStep)));
            variants.push(("+ Cooperative Reasoner on Tail", Direction::TailFirst, Some(BonusPlacement::SecondStep)));
        }
        let mut per_variant: Vec<Vec<EvalReport>> = vec![Vec::new(); variants.len()];
        let mut all_sets = BTreeMap::new();
        for s in 0..suite.seeds {
            let split = generate_split(spec, suite.train_questions, suite.dev_questions, derived_seed(suite.seed, TAG_DATA, di, s))?;
            let sets = candidate_sets(&split.dev, spec.synth.hops);
            let rb = random_baseline(&sets, &split.dev_gold, suite.mode, suite.random_trials, derived_seed(suite.seed, TAG_RANDOM, di, s));
            random_checks.push(RandomCheck {
                dataset: spec.name.clone(),
                seed_index: s,
                within_3_stderr: (rb.estimate - rb.exact).abs() <= 3.0 * rb.stderr,
                baseline: rb,
            });
            all_sets.extend(sets);
            let base = run_config(suite, spec, di, s);
            // Tail-first conditional training is shared by the cooperative rows.
            let mut tail_first: Option<RankerTrainer> = None;
            for (vi, (label, direction, placement)) in variants.iter().enumerate() {
                let slug = label_slug(label);
                let dir = ctx.run_dir(&spec.name, s, &slug);
                let cfg = TrainConfig {
                    direction: *direction,
                    bonus_placement: placement.unwrap_or(base.bonus_placement),
                    ..base.clone()
                };
                let dev = DevSet {
                    corpus: &split.dev,
                    gold: &split.dev_gold,
                    hops: cfg.hops,
                    direction: cfg.direction,
                    mode: suite.mode,
                };
                let config = serde_json::to_value(&cfg).map_err(|e| Error::Format(e.to_string()))?;
                let report = match placement {
                    None => {
                        let ((t, r), _) = train_and_report(&ctx, &split, &cfg, true, (dir, None), false)?;
                        if *direction == Direction::TailFirst {
                            tail_first = Some(t);
                        }
                        r
                    }
                    Some(_) => {
                        let mut warm = tail_first.clone().ok_or_else(|| Error::Config("missing tail-first warm start".into()))?;
                        warm.cfg = cfg.clone();
                        let eval = |r: &Ranker, p: &ParameterSet| dev.accuracy(r, p);
                        let opts = TrainOptions {
                            evaluator: Some(&eval),
                            checkpoint_dir: dir.clone(),
                        };
                        let outcome = train_cooperative(&split.train, warm, &opts)?;
                        let r = dev.report(&outcome.trainer.ranker, &outcome.trainer.params, config)?;
                        ctx.persist(&dir, &outcome.trainer, &r)?;
                        r
                    }
                };
                per_variant[vi].push(report);
            }
        }
        candidate_stats_by.insert(spec.name.clone(), candidate_stats(&all_sets));
        for ((label, direction, placement), reports) in variants.iter().zip(per_variant) {
            let cell = |f: &dyn Fn(&EvalReport) -> f64| Cell::from_values(reports.iter().map(f).collect());
            ablation.push(AblationRow {
                label: label.to_string(),
                direction: *direction,
                reasoner_reads: placement.map(|p| match p {
                    BonusPlacement::SecondStep => "tail".to_string(),
                    BonusPlacement::FirstStep => "head".to_string(),
                }),
                head_recall: cell(&|r| r.head_recall.value()),
                tail_recall: cell(&|r| r.tail_recall.value()),
                accuracy: cell(&|r| r.chain_accuracy.value()),
            });
        }
    }

    let report = BenchmarkReport {
        suite: suite.clone(),
        methods,
        ablation,
        random_checks,
        candidate_stats: candidate_stats_by,
        runs,
    };
    if let Some(out) = out {
        std::fs::create_dir_all(out)?;
        write_json(&out.join("benchmark.json"), &report)?;
        std::fs::write(out.join("tables.txt"), render_tables(&report))?;
        let rows: Vec<&RunResult> = report.runs.iter().collect();
        write_jsonl(&out.join("runs.jsonl"), &rows)?;
    }
    Ok(report)
}

fn label_slug(label: &str) -> String {
    let mut s: String = label
        .to_lowercase()
        .chars()
        .map(|c| if c.is_ascii_alphanumeric() { c } else { '-' })
        .collect();
    while s.contains("--") {
        s = s.replace("--", "-");
    }
    s.trim_matches('-').to_string()
}

pub fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    let text = serde_json::to_string_pretty(value).map_err(|e| Error::Format(e.to_string()))?;
    std::fs::write(path, text + "\n")?;
    Ok(())
}

fn pct(x: f64) -> String {
    format!("{:.1}%", 100.0 * x)
}

/// Plain-text method table and ablation table.
pub fn render_tables(report: &BenchmarkReport) -> String {
    let mut s = String::new();
    let names: Vec<&str> = report.suite.datasets.iter().map(|d| d.name.as_str()).collect();
    let width = Method::ALL.iter().map(|m| m.label().len()).max().unwrap_or(0).max(5);
    let _ = writeln!(s, "Reasoning path selection results (dev chain accuracy, mean over {} seeds)", report.suite.seeds);
    let mut header = format!("{:<width$}", "Model");
    for n in &names {
        let _ = write!(header, "  {n:>18}");
    }
    let _ = writeln!(s, "{header}");
    for row in &report.methods {
        let mut line = format!("{:<width$}", row.method.label());
        for n in &names {
            let v = row.cells.get(*n).map_or("-".to_string(), |c| pct(c.mean));
            let _ = write!(line, "  {v:>18}");
        }
        let _ = writeln!(s, "{line}");
    }
    if !report.ablation.is_empty() {
        let name = report.suite.ablation.as_ref().map_or("", |a| a.dataset.name.as_str());
        let w = report.ablation.iter().map(|r| r.label.len()).max().unwrap_or(0);
        let _ = writeln!(s);
        let _ = writeln!(s, "Ablation test on {name}");
        let _ = writeln!(s, "{:<w$}  {:>15}  {:>7}", "Model", "Head/Tail", "EM");
        for r in &report.ablation {
            let ht = format!("{:.1}/{:.1}%", 100.0 * r.head_recall.mean, 100.0 * r.tail_recall.mean);
            let _ = writeln!(s, "{:<w$}  {ht:>15}  {:>7}", r.label, pct(r.accuracy.mean));
        }
    }
    if !report.random_checks.is_empty() {
        let _ = writeln!(s);
        let _ = writeln!(s, "Random baseline: Monte-Carlo estimate vs exact expectation");
        for c in &report.random_checks {
            let b = &c.baseline;
            let _ = writeln!(
                s,
                "{} seed {}: exact {:.4}  estimate {:.4} +/- {:.4}  ({})",
                c.dataset,
                c.seed_index,
                b.exact,
                b.estimate,
                b.stderr,
                if c.within_3_stderr { "within 3 stderr" } else { "OUTSIDE 3 stderr" }
            );
        }
    }
    if !report.candidate_stats.is_empty() {
        let _ = writeln!(s);
        let _ = writeln!(s, "Dev candidate statistics (mean per question)");
        for (name, c) in &report.candidate_stats {
            let _ = writeln!(s, "{name}: |C| {:.2}  heads {:.2}  tails {:.2}", c.mean_chains, c.mean_heads, c.mean_tails);
        }
    }
    s
}
