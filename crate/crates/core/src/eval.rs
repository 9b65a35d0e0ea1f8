//! Scoring, the multi-seed experiment protocol, synthetic data, and report
//! rendering (result tables and per-claim explanations).

use std::collections::BTreeMap;
use std::fmt::Write as _;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::embed::BundleArchive;
use crate::error::{Error, Result};
use crate::exec::Exec;
use crate::model::{train, Model, TrainOutcome, VerdictReport};
use crate::types::{ClaimRecord, ExperimentConfig, FeatureBundle, Label, QAPair, QASet, Split, Variant};

/// Mean per-class recall over the classes with at least one gold example.
/// `correct` and `totals` are indexed by [`Label::index`].
pub fn macro_accuracy_from_counts(correct: [usize; 2], totals: [usize; 2]) -> f64 {
    let mut sum = 0.0;
    let mut classes = 0;
    for k in 0..2 {
        if totals[k] > 0 {
            sum += correct[k] as f64 / totals[k] as f64;
            classes += 1;
        }
    }
    if classes == 0 {
        0.0
    } else {
        sum / classes as f64
    }
}

/// Macro accuracy where `None` is an abstention, always counted wrong.
pub fn macro_accuracy_with_abstentions(preds: &[Option<Label>], golds: &[Label]) -> Result<f64> {
    if preds.len() != golds.len() {
        return Err(Error::LengthMismatch(preds.len(), golds.len()));
    }
    if golds.is_empty() {
        return Err(Error::EmptyInput("no labels to score".into()));
    }
    let mut correct = [0usize; 2];
    let mut totals = [0usize; 2];
    for (p, g) in preds.iter().zip(golds) {
        totals[g.index()] += 1;
        if *p == Some(*g) {
            correct[g.index()] += 1;
        }
    }
    Ok(macro_accuracy_from_counts(correct, totals))
}

pub fn macro_accuracy(preds: &[Label], golds: &[Label]) -> Result<f64> {
    let preds: Vec<Option<Label>> = preds.iter().copied().map(Some).collect();
    macro_accuracy_with_abstentions(&preds, golds)
}

// ---------------------------------------------------------------------------
// Experiments

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SeedScore {
    pub seed: u64,
    /// Percent.
    pub dev_acc: f64,
    /// Percent.
    pub test_acc: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExperimentResult {
    pub variant: Variant,
    pub dev_mean: f64,
    pub dev_std: f64,
    pub test_mean: f64,
    pub test_std: f64,
    /// Always `"sample"` (n - 1 denominator).
    pub std_kind: String,
    /// Only one run; stds are reported as 0.
    pub single_run: bool,
    pub per_seed: Vec<SeedScore>,
}

fn mean_std(xs: &[f64]) -> (f64, f64) {
    let n = xs.len() as f64;
    let mean = xs.iter().sum::<f64>() / n;
    if xs.len() < 2 {
        return (mean, 0.0);
    }
    let var = xs.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (n - 1.0);
    (mean, var.sqrt())
}

impl ExperimentResult {
    /// Aggregates per-seed scores; order-independent (sorted by seed first).
    pub fn aggregate(variant: Variant, mut per_seed: Vec<SeedScore>) -> Result<Self> {
        if per_seed.is_empty() {
            return Err(Error::EmptyInput("no seed results".into()));
        }
        per_seed.sort_by_key(|s| s.seed);
        let dev: Vec<f64> = per_seed.iter().map(|s| s.dev_acc).collect();
        let test: Vec<f64> = per_seed.iter().map(|s| s.test_acc).collect();
        let (dev_mean, dev_std) = mean_std(&dev);
        let (test_mean, test_std) = mean_std(&test);
        Ok(ExperimentResult {
            variant,
            dev_mean,
            dev_std,
            test_mean,
            test_std,
            std_kind: "sample".into(),
            single_run: per_seed.len() == 1,
            per_seed,
        })
    }
}

/// Training examples of one split, excluding abstentions.
pub fn split_examples(archive: &BundleArchive, split: Split) -> Vec<(&FeatureBundle, Label)> {
    archive
        .entries
        .iter()
        .filter(|e| e.split == split)
        .map(|e| (&e.bundle, e.label))
        .collect()
}

/// Macro accuracy (0..1) of `model` on a split; abstained claims count wrong.
pub fn evaluate_split(model: &Model, archive: &BundleArchive, split: Split, exec: Exec) -> Result<f64> {
    let entries: Vec<_> = archive.entries.iter().filter(|e| e.split == split).collect();
    let preds = exec.try_map(&entries, |e| model.predict(&e.bundle).map(|r| Some(r.predicted)))?;
    let mut preds = preds;
    let mut golds: Vec<Label> = entries.iter().map(|e| e.label).collect();
    for a in archive.abstained.iter().filter(|a| a.split == split) {
        preds.push(None);
        golds.push(a.label);
    }
    macro_accuracy_with_abstentions(&preds, &golds)
}

#[derive(Debug, Clone, PartialEq)]
pub struct SeedRun {
    pub score: SeedScore,
    pub outcome: TrainOutcome,
}

/// Trains one seed on the train split and scores dev and test.
pub fn run_seed(config: &ExperimentConfig, archive: &BundleArchive, seed: u64, exec: Exec) -> Result<SeedRun> {
    let train_set = split_examples(archive, Split::Train);
    if train_set.is_empty() {
        return Err(Error::EmptyTrainSplit);
    }
    let outcome = train(&train_set, config, seed, exec)?;
    let dev_acc = 100.0 * evaluate_split(&outcome.model, archive, Split::Dev, exec)?;
    let test_acc = 100.0 * evaluate_split(&outcome.model, archive, Split::Test, exec)?;
    Ok(SeedRun {
        score: SeedScore {
            seed,
            dev_acc,
            test_acc,
        },
        outcome,
    })
}

fn require_splits(archive: &BundleArchive) -> Result<()> {
    for split in [Split::Train, Split::Dev, Split::Test] {
        let present = archive.entries.iter().any(|e| e.split == split)
            || (split != Split::Train && archive.abstained.iter().any(|a| a.split == split));
        if !present {
            return Err(match split {
                Split::Train => Error::EmptyTrainSplit,
                s => Error::EmptyInput(format!("{} split is empty", s.as_str())),
            });
        }
    }
    Ok(())
}

/// Runs every seed in `config.seeds` (concurrently under [`Exec::Parallel`])
/// and aggregates mean and sample standard deviation.
pub fn run_experiment_with_runs(
    config: &ExperimentConfig,
    archive: &BundleArchive,
    exec: Exec,
) -> Result<(ExperimentResult, Vec<SeedRun>)> {
    config.validate()?;
    require_splits(archive)?;
    let runs = exec.try_map(&config.seeds, |&seed| run_seed(config, archive, seed, exec))?;
    let result = ExperimentResult::aggregate(config.variant, runs.iter().map(|r| r.score).collect())?;
    Ok((result, runs))
}

pub fn run_experiment(config: &ExperimentConfig, archive: &BundleArchive, exec: Exec) -> Result<ExperimentResult> {
    Ok(run_experiment_with_runs(config, archive, exec)?.0)
}

// ---------------------------------------------------------------------------
// Synthetic data

/// Claims and raw (unfiltered, unselected) QA sets with evidence answers.
#[derive(Debug, Clone, PartialEq)]
pub struct SyntheticData {
    pub claims: Vec<ClaimRecord>,
    pub qa_sets: BTreeMap<String, QASet>,
}

const ONSETS: [&str; 14] = ["b", "d", "f", "g", "k", "l", "m", "n", "p", "r", "s", "t", "v", "z"];
const NUCLEI: [&str; 5] = ["a", "e", "i", "o", "u"];
const CODAS: [&str; 5] = ["", "n", "r", "l", "s"];

fn make_name(rng: &mut ChaCha8Rng) -> String {
    let syllables = rng.gen_range(2..=3);
    let mut s = String::new();
    for _ in 0..syllables {
        s.push_str(ONSETS[rng.gen_range(0..ONSETS.len())]);
        s.push_str(NUCLEI[rng.gen_range(0..NUCLEI.len())]);
        s.push_str(CODAS[rng.gen_range(0..CODAS.len())]);
    }
    let mut c = s.chars();
    let first = c.next().map(|f| f.to_ascii_uppercase()).unwrap_or('X');
    std::iter::once(first).chain(c).collect()
}

/// Disjoint pools: `(claim-side entities, swap-in entities)`.
fn name_pools(rng: &mut ChaCha8Rng, per_pool: usize, taken: &mut Vec<String>) -> (Vec<String>, Vec<String>) {
    let mut names = Vec::with_capacity(2 * per_pool);
    while names.len() < 2 * per_pool {
        let n = make_name(rng);
        if !taken.contains(&n) {
            taken.push(n.clone());
            names.push(n);
        }
    }
    let swap = names.split_off(per_pool);
    (names, swap)
}

#[derive(Clone, Copy)]
enum Slot {
    Person,
    Org,
    City,
    Year,
}

const QUESTION_TEMPLATES: [(Slot, &str); 9] = [
    (Slot::Person, "Who founded {org}?"),
    (Slot::Person, "Who established {org} in {city}?"),
    (Slot::Person, "Which person founded {org} in {year}?"),
    (Slot::Org, "What did {person} found?"),
    (Slot::Org, "Which organization did {person} found in {city}?"),
    (Slot::City, "Where did {person} found {org}?"),
    (Slot::City, "In which city was {org} founded?"),
    (Slot::Year, "When did {person} found {org}?"),
    (Slot::Year, "In what year was {org} founded?"),
];

struct Facts {
    person: String,
    org: String,
    city: String,
    year: String,
}

impl Facts {
    fn get(&self, slot: Slot) -> &str {
        match slot {
            Slot::Person => &self.person,
            Slot::Org => &self.org,
            Slot::City => &self.city,
            Slot::Year => &self.year,
        }
    }

    fn fill(&self, template: &str) -> String {
        template
            .replace("{person}", &self.person)
            .replace("{org}", &self.org)
            .replace("{city}", &self.city)
            .replace("{year}", &self.year)
    }
}

/// Generates a balanced claim-verification dataset with a known signal.
///
/// Claim text and questions are label-independent. Evidence answers equal
/// the claim answers for SUPPORTS claims and are swapped for entities from
/// disjoint pools for REFUTES claims, except on `floor(noise * m)` of each
/// claim's `m` pairs where the roles are reversed. Some pairs carry answers
/// absent from the claim so that filtering has work to do.
pub fn make_synthetic(n_claims: usize, n_fixed: usize, noise: f64, seed: u64) -> Result<SyntheticData> {
    if n_claims < 10 {
        return Err(Error::InvalidConfig("make_synthetic needs at least 10 claims".into()));
    }
    if n_fixed == 0 || !(0.0..=1.0).contains(&noise) {
        return Err(Error::InvalidConfig("n_fixed must be positive and noise in [0,1]".into()));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut taken = Vec::new();
    let (people, people_swap) = name_pools(&mut rng, 40, &mut taken);
    let (orgs, orgs_swap) = name_pools(&mut rng, 40, &mut taken);
    let (cities, cities_swap) = name_pools(&mut rng, 40, &mut taken);
    let years: Vec<String> = (1800..1900).map(|y| y.to_string()).collect();
    let years_swap: Vec<String> = (1900..2000).map(|y| y.to_string()).collect();
    let pick = |rng: &mut ChaCha8Rng, pool: &[String]| pool[rng.gen_range(0..pool.len())].clone();

    let mut order: Vec<usize> = (0..n_claims).collect();
    order.shuffle(&mut rng);
    let n_train = n_claims * 70 / 100;
    let n_dev = n_claims * 15 / 100;
    let mut split_of = vec![Split::Test; n_claims];
    for (rank, &i) in order.iter().enumerate() {
        split_of[i] = if rank < n_train {
            Split::Train
        } else if rank < n_train + n_dev {
            Split::Dev
        } else {
            Split::Test
        };
    }

    let min_pairs = (n_fixed / 3).max(1);
    let max_pairs = n_fixed + n_fixed / 2 + 1;
    let mut claims = Vec::with_capacity(n_claims);
    let mut qa_sets = BTreeMap::new();
    for (i, &split) in split_of.iter().enumerate() {
        let label = if i % 2 == 0 { Label::Supports } else { Label::Refutes };
        let facts = Facts {
            person: pick(&mut rng, &people),
            org: pick(&mut rng, &orgs),
            city: pick(&mut rng, &cities),
            year: pick(&mut rng, &years),
        };
        let swapped = Facts {
            person: pick(&mut rng, &people_swap),
            org: pick(&mut rng, &orgs_swap),
            city: pick(&mut rng, &cities_swap),
            year: pick(&mut rng, &years_swap),
        };
        let world = if label == Label::Supports { &facts } else { &swapped };
        let id = format!("syn-{i:05}");
        claims.push(ClaimRecord {
            id: id.clone(),
            claim: facts.fill("{person} founded {org} in {city} in {year}."),
            evidence: vec![
                world.fill("{org} was founded in {year}."),
                world.fill("Its founder, {person}, started it in {city}."),
            ],
            label,
            split,
        });

        let m = rng.gen_range(min_pairs..=max_pairs);
        let n_noisy = (noise * m as f64).floor() as usize;
        let mut noisy = vec![false; m];
        noisy[..n_noisy].iter_mut().for_each(|x| *x = true);
        noisy.shuffle(&mut rng);
        let mut pairs = Vec::with_capacity(m);
        for flip in noisy {
            if rng.gen_bool(0.15) {
                // Answer not contained in the claim; removed by filtering.
                pairs.push(
                    QAPair::new(facts.fill("Who funded {org}?"), format!("{} Trust", pick(&mut rng, &people_swap)))
                        .with_evidence(pick(&mut rng, &people_swap), 0.5),
                );
            }
            let (slot, template) = QUESTION_TEMPLATES[rng.gen_range(0..QUESTION_TEMPLATES.len())];
            let matches = (label == Label::Supports) != flip;
            let evidence = if matches { &facts } else { &swapped };
            let score = rng.gen_range(0.5..1.0);
            pairs.push(
                QAPair::new(facts.fill(template), facts.get(slot)).with_evidence(evidence.get(slot), score),
            );
        }
        qa_sets.insert(
            id.clone(),
            QASet {
                claim_id: id,
                pairs,
                padded: false,
            },
        );
    }
    Ok(SyntheticData { claims, qa_sets })
}

// ---------------------------------------------------------------------------
// Tables

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum TableFormat {
    Tsv,
    Markdown,
    Json,
}

impl std::str::FromStr for TableFormat {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "tsv" => Ok(TableFormat::Tsv),
            "markdown" | "md" => Ok(TableFormat::Markdown),
            "json" => Ok(TableFormat::Json),
            other => Err(Error::InvalidConfig(format!("unknown table format `{other}`"))),
        }
    }
}

/// `mean±std` with two decimals; single runs show the mean only.
pub fn format_cell(mean: f64, std: f64, single_run: bool) -> String {
    if single_run {
        format!("{mean:.2}")
    } else {
        format!("{mean:.2}±{std:.2}")
    }
}

/// Renders results in ablation-table row order.
pub fn emit_results_table(results: &[ExperimentResult], format: TableFormat) -> Result<String> {
    let mut rows: Vec<&ExperimentResult> = results.iter().collect();
    rows.sort_by_key(|r| r.variant);
    let cells = |r: &ExperimentResult| {
        (
            r.variant.display_name(),
            format_cell(r.dev_mean, r.dev_std, r.single_run),
            format_cell(r.test_mean, r.test_std, r.single_run),
        )
    };
    let mut out = String::new();
    match format {
        TableFormat::Json => {
            let owned: Vec<ExperimentResult> = rows.into_iter().cloned().collect();
            out = serde_json::to_string_pretty(&owned)?;
            out.push('\n');
        }
        TableFormat::Tsv => {
            out.push_str("Inputs\tDev Acc\tTest Acc\n");
            for r in rows {
                let (name, dev, test) = cells(r);
                let _ = writeln!(out, "{name}\t{dev}\t{test}");
            }
        }
        TableFormat::Markdown => {
            out.push_str("| Inputs | Dev Acc | Test Acc |\n|---|---:|---:|\n");
            for r in rows {
                let (name, dev, test) = cells(r);
                let _ = writeln!(out, "| {name} | {dev} | {test} |");
            }
        }
    }
    Ok(out)
}

pub fn parse_results_json(text: &str) -> Result<Vec<ExperimentResult>> {
    Ok(serde_json::from_str(text)?)
}

// ---------------------------------------------------------------------------
// Explanations

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Emphasis {
    Strongest,
    Second,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExplanationRow {
    /// Position in the selected QA set.
    pub index: usize,
    pub question: String,
    pub claim_answer: String,
    pub evidence_answer: Option<String>,
    /// Weight rounded to three decimals; rounded weights sum to exactly 1.
    pub weight: f64,
    pub emphasis: Option<Emphasis>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Explanation {
    pub claim_id: String,
    pub claim: String,
    pub predicted: Label,
    pub rows: Vec<ExplanationRow>,
}

/// Rounds non-negative weights summing to 1 to thousandths so that the
/// rounded values still sum to 1 (largest-remainder method).
pub fn round_weights_to_thousandths(weights: &[f64]) -> Vec<f64> {
    let scaled: Vec<f64> = weights.iter().map(|w| w * 1000.0).collect();
    let mut units: Vec<i64> = scaled.iter().map(|s| s.floor() as i64).collect();
    let deficit = 1000 - units.iter().sum::<i64>();
    let mut by_remainder: Vec<usize> = (0..weights.len()).collect();
    by_remainder.sort_by(|&a, &b| {
        let (ra, rb) = (scaled[a] - scaled[a].floor(), scaled[b] - scaled[b].floor());
        rb.total_cmp(&ra).then(a.cmp(&b))
    });
    for &i in by_remainder.iter().take(deficit.max(0) as usize) {
        units[i] += 1;
    }
    units.into_iter().map(|u| u as f64 / 1000.0).collect()
}

/// Lists the questions by descending attention weight (ties keep QA-set
/// order) and marks the top two.
pub fn explain_claim(report: &VerdictReport, qaset: &QASet, claim: &ClaimRecord) -> Result<Explanation> {
    let weights = report
        .weights
        .as_ref()
        .ok_or_else(|| Error::VariantWithoutWeights("no-attention".into()))?;
    if weights.len() != qaset.pairs.len() {
        return Err(Error::dims("explanation weights", qaset.pairs.len(), weights.len()));
    }
    let rounded = round_weights_to_thousandths(weights);
    let mut order: Vec<usize> = (0..weights.len()).collect();
    order.sort_by(|&a, &b| weights[b].total_cmp(&weights[a]).then(a.cmp(&b)));
    let rows = order
        .iter()
        .enumerate()
        .map(|(rank, &i)| {
            let p = &qaset.pairs[i];
            ExplanationRow {
                index: i,
                question: p.question.clone(),
                claim_answer: p.claim_answer.clone(),
                evidence_answer: p.evidence_answer.clone(),
                weight: rounded[i],
                emphasis: match rank {
                    0 => Some(Emphasis::Strongest),
                    1 => Some(Emphasis::Second),
                    _ => None,
                },
            }
        })
        .collect();
    Ok(Explanation {
        claim_id: claim.id.clone(),
        claim: claim.claim.clone(),
        predicted: report.predicted,
        rows,
    })
}

fn md_escape(s: &str) -> String {
    s.replace('|', "\\|")
}

impl Explanation {
    /// Markdown with the strongest question in bold and the second underlined.
    pub fn to_markdown(&self) -> String {
        let mut out = String::new();
        let _ = writeln!(out, "# {}: {}\n", self.claim_id, self.predicted);
        let _ = writeln!(out, "> {}\n", self.claim);
        out.push_str("| Question | Claim answer | Evidence answer | Weight |\n|---|---|---|---:|\n");
        for r in &self.rows {
            let q = md_escape(&r.question);
            let q = match r.emphasis {
                Some(Emphasis::Strongest) => format!("**{q}**"),
                Some(Emphasis::Second) => format!("<u>{q}</u>"),
                None => q,
            };
            let ev = r.evidence_answer.as_deref().unwrap_or(crate::types::NO_ANSWER);
            let _ = writeln!(
                out,
                "| {q} | {} | {} | {:.3} |",
                md_escape(&r.claim_answer),
                md_escape(ev),
                r.weight
            );
        }
        out
    }
}
