//! `qaproxy`: staged command-line pipeline.
//!
//! Every stage reads files and writes files, each output accompanied by a
//! `<output>.manifest.json` run manifest. Exit codes: 0 success, 1 invalid
//! input or flags, 2 I/O or QA-service failure.

mod manifest;

use std::collections::{BTreeMap, BTreeSet};
use std::fmt;
use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::time::Duration;

use clap::{Args, Parser, Subcommand, ValueEnum};
use serde::Serialize;

use qaproxy_core::embed::{BundleArchive, EmbeddingProvider, EmbeddingStore, HashEmbedder, StoreProvider};
use qaproxy_core::eval::{
    emit_results_table, evaluate_split, explain_claim, macro_accuracy_with_abstentions, make_synthetic,
    run_experiment, ExperimentResult, SeedScore, TableFormat,
};
use qaproxy_core::ingest::{answer_dataset, load_claims, load_qa_sets, Containment, Dataset, QAServiceEndpoint, QaClient};
use qaproxy_core::metrics::{
    apply_threshold, calibrate_threshold, cosine_sim, extended_f64, ingest_external_scores, score_claim, token_f1,
    Calibration, ScoredClaim,
};
use qaproxy_core::model::{train, Checkpoint};
use qaproxy_core::{eval, Exec, ExperimentConfig, Label, Split, Variant};

use manifest::{unix_now, write_outputs};

#[derive(Debug)]
pub enum Fail {
    Validation(String),
    Io(String),
}

impl Fail {
    pub fn io(path: &Path, e: std::io::Error) -> Fail {
        Fail::Io(format!("{}: {e}", path.display()))
    }

    fn code(&self) -> u8 {
        match self {
            Fail::Validation(_) => 1,
            Fail::Io(_) => 2,
        }
    }
}

impl fmt::Display for Fail {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Fail::Validation(m) | Fail::Io(m) => f.write_str(m),
        }
    }
}

impl From<qaproxy_core::Error> for Fail {
    fn from(e: qaproxy_core::Error) -> Fail {
        if e.is_io_or_service() {
            Fail::Io(e.to_string())
        } else {
            Fail::Validation(e.to_string())
        }
    }
}

fn invalid(msg: impl Into<String>) -> Fail {
    Fail::Validation(msg.into())
}

#[derive(Parser, Debug)]
#[command(name = "qaproxy", version, about = "Fact checking with question answering as a proxy")]
struct Cli {
    /// Run every stage on the calling thread.
    #[arg(long, global = true)]
    sequential: bool,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Validate claims and QA files; filter answers and select questions.
    Ingest(IngestArgs),
    /// Fill evidence answers from an extractive QA service.
    Answer(AnswerArgs),
    /// Turn a dataset into feature bundles.
    Embed(EmbedArgs),
    /// Metric baseline with a threshold calibrated on dev.
    Baseline(BaselineArgs),
    /// Train one model and write a checkpoint.
    Train(TrainArgs),
    /// Multi-seed experiments or checkpoint scoring; emits a results table.
    Eval(EvalArgs),
    /// Attention-weight explanation for one claim.
    Explain(ExplainArgs),
    /// Generate a synthetic claims/QA corpus.
    Synth(SynthArgs),
}

#[derive(Args, Debug, Serialize)]
struct IngestArgs {
    #[arg(long)]
    claims: PathBuf,
    #[arg(long)]
    qa: PathBuf,
    #[arg(long)]
    out: PathBuf,
    #[arg(long, default_value_t = 10)]
    n_fixed: usize,
    /// Only drop answers found in the claim at token boundaries.
    #[arg(long)]
    token_boundary: bool,
}

#[derive(Args, Debug, Serialize)]
struct AnswerArgs {
    #[arg(long)]
    dataset: PathBuf,
    #[arg(long)]
    out: PathBuf,
    #[arg(long, env = "QAPROXY_QA_ENDPOINT")]
    endpoint: String,
    #[arg(long, default_value_t = 30_000)]
    timeout_ms: u64,
    #[arg(long, default_value_t = 3)]
    max_retries: u32,
    #[arg(long, default_value_t = 4)]
    in_flight: usize,
}

#[derive(Clone, Copy, Debug, ValueEnum, Serialize)]
#[serde(rename_all = "lowercase")]
enum ProviderKind {
    Hash,
    Store,
}

#[derive(Args, Debug, Serialize)]
struct EmbedArgs {
    #[arg(long)]
    dataset: PathBuf,
    #[arg(long)]
    out: PathBuf,
    #[arg(long, value_enum, default_value_t = ProviderKind::Hash)]
    provider: ProviderKind,
    /// Embedding store (JSON Lines); required with `--provider store`.
    #[arg(long)]
    store: Option<PathBuf>,
    #[arg(long, default_value_t = 256)]
    dim: usize,
    #[arg(long, default_value_t = 0)]
    seed: u64,
}

#[derive(Clone, Copy, Debug, PartialEq, ValueEnum, Serialize)]
#[serde(rename_all = "lowercase")]
enum MetricKind {
    F1,
    Cosine,
    External,
}

#[derive(Args, Debug, Serialize)]
struct BaselineArgs {
    #[arg(long)]
    dataset: PathBuf,
    #[arg(long)]
    out: PathBuf,
    #[arg(long, value_enum)]
    metric: MetricKind,
    /// Per-claim pair scores (JSON Lines); required with `--metric external`.
    #[arg(long)]
    scores: Option<PathBuf>,
    /// Hash embedder width for `--metric cosine`.
    #[arg(long, default_value_t = 256)]
    dim: usize,
}

#[derive(Args, Debug, Serialize)]
struct TrainOpts {
    #[arg(long, default_value_t = 5)]
    epochs: usize,
    #[arg(long, default_value_t = 32)]
    batch_size: usize,
    #[arg(long, default_value_t = 1e-3)]
    lr: f64,
    #[arg(long)]
    d_att: Option<usize>,
    /// Mask padded duplicate questions out of the attention softmax.
    #[arg(long)]
    dedup: bool,
    /// No-attention variants read sequence-level store vectors.
    #[arg(long)]
    sequence_inputs: bool,
}

impl TrainOpts {
    fn config(&self, variant: Variant, seeds: Vec<u64>, n_fixed: usize) -> Result<ExperimentConfig, Fail> {
        let config = ExperimentConfig {
            epochs: self.epochs,
            batch_size: self.batch_size,
            learning_rate: self.lr,
            n_fixed,
            seeds,
            variant,
            d_att: self.d_att,
            dedup_padded: self.dedup,
            sequence_inputs: self.sequence_inputs,
        };
        config.validate()?;
        Ok(config)
    }
}

#[derive(Args, Debug, Serialize)]
struct TrainArgs {
    #[arg(long)]
    bundles: PathBuf,
    #[arg(long)]
    out: PathBuf,
    #[arg(long, default_value = "ATTENTION_C_Q_AA", value_parser = parse_variant)]
    variant: Variant,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[command(flatten)]
    opts: TrainOpts,
}

#[derive(Clone, Copy, Debug, ValueEnum, Serialize)]
#[serde(rename_all = "lowercase")]
enum FormatKind {
    Tsv,
    Markdown,
    Json,
}

impl From<FormatKind> for TableFormat {
    fn from(f: FormatKind) -> TableFormat {
        match f {
            FormatKind::Tsv => TableFormat::Tsv,
            FormatKind::Markdown => TableFormat::Markdown,
            FormatKind::Json => TableFormat::Json,
        }
    }
}

#[derive(Args, Debug, Serialize)]
struct EvalArgs {
    #[arg(long)]
    bundles: PathBuf,
    #[arg(long)]
    out: PathBuf,
    /// Score these checkpoints instead of training (one row per variant).
    #[arg(long = "checkpoint", conflicts_with_all = ["variants", "seeds"])]
    checkpoints: Vec<PathBuf>,
    /// Comma-separated variants, or `all`.
    #[arg(long, default_value = "ATTENTION_C_Q_AA")]
    variants: String,
    /// `a..b` (inclusive) or a comma-separated list.
    #[arg(long, default_value = "0..4")]
    seeds: String,
    #[arg(long, value_enum, default_value_t = FormatKind::Tsv)]
    format: FormatKind,
    #[command(flatten)]
    opts: TrainOpts,
}

#[derive(Args, Debug, Serialize)]
struct ExplainArgs {
    #[arg(long)]
    bundles: PathBuf,
    #[arg(long)]
    checkpoint: PathBuf,
    #[arg(long)]
    claim_id: String,
    /// Receives `<claim-id>.md` and `<claim-id>.json`.
    #[arg(long)]
    out_dir: PathBuf,
}

#[derive(Args, Debug, Serialize)]
struct SynthArgs {
    #[arg(long, default_value_t = 2000)]
    n_claims: usize,
    #[arg(long, default_value_t = 10)]
    n_fixed: usize,
    #[arg(long, default_value_t = 0.1)]
    noise: f64,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long)]
    claims_out: PathBuf,
    #[arg(long)]
    qa_out: PathBuf,
}

fn parse_variant(s: &str) -> Result<Variant, String> {
    s.parse().map_err(|e: qaproxy_core::Error| e.to_string())
}

fn parse_variants(s: &str) -> Result<Vec<Variant>, Fail> {
    if s.trim().eq_ignore_ascii_case("all") {
        return Ok(Variant::ALL.to_vec());
    }
    let mut out = Vec::new();
    for part in s.split(',').map(str::trim).filter(|p| !p.is_empty()) {
        let v: Variant = part.parse()?;
        if !out.contains(&v) {
            out.push(v);
        }
    }
    if out.is_empty() {
        return Err(invalid("--variants: no variant given"));
    }
    Ok(out)
}

fn parse_seeds(s: &str) -> Result<Vec<u64>, Fail> {
    let bad = || invalid(format!("--seeds: cannot parse `{s}`"));
    let seeds: Vec<u64> = if let Some((a, b)) = s.split_once("..") {
        let (a, b): (u64, u64) = (a.trim().parse().map_err(|_| bad())?, b.trim().parse().map_err(|_| bad())?);
        if a > b {
            return Err(bad());
        }
        (a..=b).collect()
    } else {
        s.split(',')
            .map(|p| p.trim().parse().map_err(|_| bad()))
            .collect::<Result<_, _>>()?
    };
    let unique: BTreeSet<u64> = seeds.iter().copied().collect();
    if unique.len() != seeds.len() {
        return Err(invalid("--seeds: duplicate seed"));
    }
    Ok(seeds)
}

fn read_bytes(path: &Path) -> Result<Vec<u8>, Fail> {
    fs::read(path).map_err(|e| Fail::io(path, e))
}

fn json_bytes(value: &impl Serialize) -> Result<Vec<u8>, Fail> {
    let mut bytes = serde_json::to_vec_pretty(value).map_err(|e| invalid(e.to_string()))?;
    bytes.push(b'\n');
    Ok(bytes)
}

fn read_checkpoint(path: &Path, archive: &BundleArchive) -> Result<Checkpoint, Fail> {
    let ckpt = Checkpoint::from_json(&read_bytes(path)?).map_err(|e| invalid(format!("{}: {e}", path.display())))?;
    ckpt.check_dims(archive.dims)
        .map_err(|e| invalid(format!("{}: {e}", path.display())))?;
    Ok(ckpt)
}

// ---------------------------------------------------------------------------

fn cmd_ingest(a: &IngestArgs) -> Result<(), Fail> {
    let started = unix_now();
    let claims = load_claims(&a.claims)?;
    let raw = load_qa_sets(&a.qa, &claims)?;
    let containment = if a.token_boundary {
        Containment::TokenBoundary
    } else {
        Containment::Substring
    };
    let (dataset, report) = Dataset::build(claims, &raw, a.n_fixed, containment)?;
    if !report.violations.is_empty() {
        return Err(invalid(format!(
            "{}: {} invalid record(s): {}",
            a.claims.display(),
            report.violations.len(),
            report.violations.join("; ")
        )));
    }
    let report_path = a.out.with_extension("report.json");
    eprintln!(
        "ingested {} claims: {} of {} pairs kept, {} padded, {} truncated, {} abstained",
        report.claims,
        report.pairs_kept,
        report.pairs_in,
        report.padded,
        report.truncated,
        report.abstained.len()
    );
    write_outputs(
        "ingest",
        a,
        &[&a.claims, &a.qa],
        vec![],
        started,
        &[(a.out.clone(), dataset.to_json()?), (report_path, json_bytes(&report)?)],
    )
}

fn cmd_answer(a: &AnswerArgs, exec: Exec) -> Result<(), Fail> {
    let started = unix_now();
    if a.in_flight == 0 {
        return Err(invalid("--in-flight must be positive"));
    }
    let endpoint = QAServiceEndpoint {
        base_url: a.endpoint.clone(),
        timeout: Duration::from_millis(a.timeout_ms),
        max_retries: a.max_retries,
    };
    endpoint.validate()?;
    let dataset = Dataset::read(&a.dataset)?;
    let client = QaClient::new(endpoint)?;
    let answered = answer_dataset(&client, &dataset, exec, a.in_flight)?;
    write_outputs("answer", a, &[&a.dataset], vec![], started, &[(a.out.clone(), answered.to_json()?)])
}

fn cmd_embed(a: &EmbedArgs, exec: Exec) -> Result<(), Fail> {
    let started = unix_now();
    let provider: Box<dyn EmbeddingProvider> = match (a.provider, &a.store) {
        (ProviderKind::Hash, None) => Box::new(HashEmbedder::new(a.dim, a.seed)?),
        (ProviderKind::Hash, Some(_)) => return Err(invalid("--store is only valid with --provider store")),
        (ProviderKind::Store, None) => return Err(invalid("--provider store requires --store")),
        (ProviderKind::Store, Some(path)) => Box::new(StoreProvider::new(EmbeddingStore::read(path)?)),
    };
    let dataset = Dataset::read(&a.dataset)?;
    let archive = BundleArchive::build(provider.as_ref(), &dataset, exec)?;
    let mut inputs: Vec<&Path> = vec![&a.dataset];
    if let Some(s) = &a.store {
        inputs.push(s);
    }
    eprintln!(
        "embedded {} claims with {} ({} abstained)",
        archive.entries.len(),
        archive.provider,
        archive.abstained.len()
    );
    write_outputs("embed", a, &inputs, vec![], started, &[(a.out.clone(), archive.to_bytes()?)])
}

#[derive(Serialize)]
struct BaselineReport {
    metric: MetricKind,
    #[serde(with = "extended_f64")]
    threshold: f64,
    /// Accuracy of the calibrated threshold on scored dev claims only.
    calibration_accuracy: f64,
    /// Macro accuracy (0..1); abstained claims count as wrong.
    dev_accuracy: f64,
    test_accuracy: f64,
    dev_claims: usize,
    test_claims: usize,
    abstained: Vec<String>,
    single_run: bool,
}

fn cmd_baseline(a: &BaselineArgs) -> Result<(), Fail> {
    let started = unix_now();
    match (a.metric, &a.scores) {
        (MetricKind::External, None) => return Err(invalid("--metric external requires --scores")),
        (MetricKind::F1 | MetricKind::Cosine, Some(_)) => {
            return Err(invalid("--scores is only valid with --metric external"))
        }
        _ => {}
    }
    let dataset = Dataset::read(&a.dataset)?;
    let mut pair_scores: BTreeMap<String, Vec<f64>> = BTreeMap::new();
    match a.metric {
        MetricKind::External => {
            let path = a.scores.as_ref().expect("checked above");
            let ext = ingest_external_scores(path, dataset.claims.iter().map(|c| c.id.as_str()))?;
            pair_scores = ext.scores.into_iter().filter(|(_, s)| !s.is_empty()).collect();
        }
        MetricKind::F1 | MetricKind::Cosine => {
            let embedder = HashEmbedder::new(a.dim, 0)?;
            for (id, set) in &dataset.qa_sets {
                let mut scores = Vec::with_capacity(set.pairs.len());
                for p in &set.pairs {
                    let s = match a.metric {
                        MetricKind::F1 => token_f1(&p.claim_answer, p.evidence_text()),
                        _ => cosine_sim(
                            &embedder.hash_embed(&p.claim_answer),
                            &embedder.hash_embed(p.evidence_text()),
                        )?,
                    };
                    scores.push(s);
                }
                pair_scores.insert(id.clone(), scores);
            }
        }
    }

    let mut scored: BTreeMap<Split, Vec<ScoredClaim>> = BTreeMap::new();
    let mut abstained = Vec::new();
    for claim in &dataset.claims {
        match pair_scores.remove(&claim.id) {
            Some(s) => scored
                .entry(claim.split)
                .or_default()
                .push(score_claim(&claim.id, s, claim.label)?),
            None => abstained.push(claim.id.clone()),
        }
    }
    let dev = scored.get(&Split::Dev).map(Vec::as_slice).unwrap_or(&[]);
    let Calibration {
        threshold,
        dev_accuracy: calibration_accuracy,
    } = calibrate_threshold(dev)?;

    let accuracy = |split: Split| -> Result<(f64, usize), Fail> {
        let mut preds = Vec::new();
        let mut golds = Vec::new();
        for claim in dataset.claims.iter().filter(|c| c.split == split) {
            let s = scored
                .get(&split)
                .and_then(|v| v.iter().find(|s| s.claim_id == claim.id));
            preds.push(s.map(|s| apply_threshold(s.claim_score, threshold)));
            golds.push(claim.label);
        }
        Ok((macro_accuracy_with_abstentions(&preds, &golds)?, golds.len()))
    };
    let (dev_accuracy, dev_claims) = accuracy(Split::Dev)?;
    let (test_accuracy, test_claims) = accuracy(Split::Test)?;
    let report = BaselineReport {
        metric: a.metric,
        threshold,
        calibration_accuracy,
        dev_accuracy,
        test_accuracy,
        dev_claims,
        test_claims,
        abstained,
        single_run: true,
    };
    println!(
        "threshold {threshold}\tdev {:.2}\ttest {:.2}",
        100.0 * dev_accuracy,
        100.0 * test_accuracy
    );
    let mut inputs: Vec<&Path> = vec![&a.dataset];
    if let Some(s) = &a.scores {
        inputs.push(s);
    }
    write_outputs("baseline", a, &inputs, vec![], started, &[(a.out.clone(), json_bytes(&report)?)])
}

fn cmd_train(a: &TrainArgs, exec: Exec) -> Result<(), Fail> {
    let started = unix_now();
    let archive = BundleArchive::read(&a.bundles)?;
    let config = a.opts.config(a.variant, vec![a.seed], archive.n_fixed)?;
    let examples = eval::split_examples(&archive, Split::Train);
    if examples.is_empty() {
        return Err(qaproxy_core::Error::EmptyTrainSplit.into());
    }
    let outcome = train(&examples, &config, a.seed, exec)?;
    let ckpt = Checkpoint::from_model(&outcome.model, archive.dims, a.seed, outcome.loss_history);
    if let Some(last) = ckpt.loss_history.last() {
        eprintln!("trained {} for {} epochs, final loss {last:.6}", a.variant, config.epochs);
    }
    write_outputs("train", a, &[&a.bundles], vec![a.seed], started, &[(a.out.clone(), ckpt.to_json()?)])
}

fn cmd_eval(a: &EvalArgs, exec: Exec) -> Result<(), Fail> {
    let started = unix_now();
    let archive = BundleArchive::read(&a.bundles)?;
    let mut results: Vec<ExperimentResult> = Vec::new();
    let mut seeds_used = BTreeSet::new();
    if a.checkpoints.is_empty() {
        let variants = parse_variants(&a.variants)?;
        let seeds = parse_seeds(&a.seeds)?;
        let configs = variants
            .iter()
            .map(|&v| a.opts.config(v, seeds.clone(), archive.n_fixed))
            .collect::<Result<Vec<_>, _>>()?;
        for config in &configs {
            results.push(run_experiment(config, &archive, exec)?);
        }
        seeds_used.extend(seeds);
    } else {
        let mut by_variant: BTreeMap<Variant, Vec<SeedScore>> = BTreeMap::new();
        for path in &a.checkpoints {
            let ckpt = read_checkpoint(path, &archive)?;
            let model = ckpt.to_model()?;
            let score = SeedScore {
                seed: ckpt.seed,
                dev_acc: 100.0 * evaluate_split(&model, &archive, Split::Dev, exec)?,
                test_acc: 100.0 * evaluate_split(&model, &archive, Split::Test, exec)?,
            };
            let scores = by_variant.entry(ckpt.variant).or_default();
            if scores.iter().any(|s| s.seed == score.seed) {
                return Err(invalid(format!(
                    "{}: second {} checkpoint for seed {}",
                    path.display(),
                    ckpt.variant,
                    ckpt.seed
                )));
            }
            scores.push(score);
            seeds_used.insert(ckpt.seed);
        }
        for (variant, scores) in by_variant {
            results.push(ExperimentResult::aggregate(variant, scores)?);
        }
    }
    let table = emit_results_table(&results, a.format.into())?;
    print!("{table}");
    std::io::stdout().flush().ok();
    let mut inputs: Vec<&Path> = vec![&a.bundles];
    inputs.extend(a.checkpoints.iter().map(PathBuf::as_path));
    write_outputs(
        "eval",
        a,
        &inputs,
        seeds_used.into_iter().collect(),
        started,
        &[(a.out.clone(), table.into_bytes())],
    )
}

fn cmd_explain(a: &ExplainArgs) -> Result<(), Fail> {
    let started = unix_now();
    let archive = BundleArchive::read(&a.bundles)?;
    let ckpt = read_checkpoint(&a.checkpoint, &archive)?;
    let model = ckpt.to_model()?;
    let entry = match archive.entry(&a.claim_id) {
        Some(e) => e,
        None if archive.abstained.iter().any(|c| c.claim_id == a.claim_id) => {
            return Err(invalid(format!("claim `{}` abstained: no QA pairs survived filtering", a.claim_id)))
        }
        None => return Err(invalid(format!("claim `{}` is not in {}", a.claim_id, a.bundles.display()))),
    };
    let report = model.predict(&entry.bundle)?;
    let explanation = explain_claim(&report, &entry.qa_set, &entry.claim_record())?;
    let stem = a.claim_id.replace(['/', '\\'], "_");
    write_outputs(
        "explain",
        a,
        &[&a.bundles, &a.checkpoint],
        vec![ckpt.seed],
        started,
        &[
            (a.out_dir.join(format!("{stem}.md")), explanation.to_markdown().into_bytes()),
            (a.out_dir.join(format!("{stem}.json")), json_bytes(&explanation)?),
        ],
    )
}

fn jsonl<T: Serialize>(items: impl IntoIterator<Item = T>) -> Result<Vec<u8>, Fail> {
    let mut out = Vec::new();
    for item in items {
        serde_json::to_writer(&mut out, &item).map_err(|e| invalid(e.to_string()))?;
        out.push(b'\n');
    }
    Ok(out)
}

fn cmd_synth(a: &SynthArgs) -> Result<(), Fail> {
    let started = unix_now();
    if !(0.0..=1.0).contains(&a.noise) {
        return Err(invalid("--noise must lie in [0, 1]"));
    }
    let data = make_synthetic(a.n_claims, a.n_fixed, a.noise, a.seed)?;
    let supports = data.claims.iter().filter(|c| c.label == Label::Supports).count();
    eprintln!(
        "{} claims ({} SUPPORTS, {} REFUTES)",
        data.claims.len(),
        supports,
        data.claims.len() - supports
    );
    write_outputs(
        "synth",
        a,
        &[],
        vec![a.seed],
        started,
        &[
            (a.claims_out.clone(), jsonl(&data.claims)?),
            (a.qa_out.clone(), jsonl(data.qa_sets.values())?),
        ],
    )
}

fn run(cli: Cli) -> Result<(), Fail> {
    let exec = if cli.sequential {
        Exec::Sequential
    } else {
        Exec::Parallel
    };
    match &cli.command {
        Command::Ingest(a) => cmd_ingest(a),
        Command::Answer(a) => cmd_answer(a, exec),
        Command::Embed(a) => cmd_embed(a, exec),
        Command::Baseline(a) => cmd_baseline(a),
        Command::Train(a) => cmd_train(a, exec),
        Command::Eval(a) => cmd_eval(a, exec),
        Command::Explain(a) => cmd_explain(a),
        Command::Synth(a) => cmd_synth(a),
    }
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return ExitCode::from(if e.use_stderr() { 1 } else { 0 });
        }
    };
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.code())
        }
    }
}
