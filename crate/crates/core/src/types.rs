//! Domain model shared across the pipeline.
//!
//! A [`ClaimRecord`] is the unit of verification. Questions generated from the
//! claim arrive as [`QAPair`]s grouped in a [`QASet`]; the numeric view of one
//! claim handed to the comparison models is a [`FeatureBundle`].

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Evidence-side text used when the QA service produced no answer.
pub const NO_ANSWER: &str = "NO_ANSWER";

/// Two-way verdict. `Supports > Refutes` in the derived order.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum Label {
    #[serde(rename = "REFUTES")]
    Refutes,
    #[serde(rename = "SUPPORTS")]
    Supports,
}

impl Label {
    /// Both labels in classifier-output order.
    pub const ALL: [Label; 2] = [Label::Supports, Label::Refutes];

    /// Row of this label in the classifier's two-way output.
    pub fn index(self) -> usize {
        match self {
            Label::Supports => 0,
            Label::Refutes => 1,
        }
    }

    pub fn from_index(i: usize) -> Label {
        if i == 0 {
            Label::Supports
        } else {
            Label::Refutes
        }
    }

    pub fn as_str(self) -> &'static str {
        match self {
            Label::Supports => "SUPPORTS",
            Label::Refutes => "REFUTES",
        }
    }

    pub fn flip(self) -> Label {
        match self {
            Label::Supports => Label::Refutes,
            Label::Refutes => Label::Supports,
        }
    }
}

impl fmt::Display for Label {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Label {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "SUPPORTS" => Ok(Label::Supports),
            "REFUTES" => Ok(Label::Refutes),
            other => Err(Error::InvalidConfig(format!("unknown label `{other}`"))),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Split {
    Train,
    Dev,
    Test,
}

impl Split {
    pub fn as_str(self) -> &'static str {
        match self {
            Split::Train => "train",
            Split::Dev => "dev",
            Split::Test => "test",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ClaimRecord {
    pub id: String,
    pub claim: String,
    pub evidence: Vec<String>,
    pub label: Label,
    pub split: Split,
}

impl ClaimRecord {
    /// Gold evidence as a single QA context: sentences joined by one space.
    pub fn evidence_text(&self) -> String {
        self.evidence.join(" ")
    }
}

/// Lists every invariant violated by `record`. Empty means valid.
pub fn validate_record(record: &ClaimRecord) -> Vec<String> {
    let mut violations = Vec::new();
    if record.id.trim().is_empty() {
        violations.push("id: empty".to_string());
    }
    if record.claim.split_whitespace().next().is_none() {
        violations.push("claim: empty".to_string());
    }
    if record.evidence.is_empty() {
        violations.push("evidence: empty list".to_string());
    }
    for (i, e) in record.evidence.iter().enumerate() {
        if e.split_whitespace().next().is_none() {
            violations.push(format!("evidence[{i}]: empty text"));
        }
    }
    violations
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct QAPair {
    pub question: String,
    pub claim_answer: String,
    #[serde(default)]
    pub evidence_answer: Option<String>,
    #[serde(default)]
    pub evidence_score: Option<f64>,
}

impl QAPair {
    pub fn new(question: impl Into<String>, claim_answer: impl Into<String>) -> Self {
        QAPair {
            question: question.into(),
            claim_answer: claim_answer.into(),
            evidence_answer: None,
            evidence_score: None,
        }
    }

    pub fn with_evidence(mut self, answer: impl Into<String>, score: f64) -> Self {
        self.evidence_answer = Some(answer.into());
        self.evidence_score = Some(score);
        self
    }

    /// Evidence answer, or the [`NO_ANSWER`] sentinel.
    pub fn evidence_text(&self) -> &str {
        self.evidence_answer.as_deref().unwrap_or(NO_ANSWER)
    }

    pub fn validate(&self) -> Vec<String> {
        let mut violations = Vec::new();
        if self.question.trim().is_empty() {
            violations.push("question: empty".to_string());
        }
        if self.claim_answer.trim().is_empty() {
            violations.push("claim_answer: empty".to_string());
        }
        if self.evidence_answer.is_some() != self.evidence_score.is_some() {
            violations.push("evidence_answer/evidence_score: present without the other".to_string());
        }
        if let Some(s) = self.evidence_score {
            if !(0.0..=1.0).contains(&s) {
                violations.push(format!("evidence_score: {s} outside [0,1]"));
            }
        }
        violations
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct QASet {
    pub claim_id: String,
    pub pairs: Vec<QAPair>,
    #[serde(default)]
    pub padded: bool,
}

/// Frozen per-sentence vectors for one claim.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FeatureBundle {
    pub claim_vec: Vec<f64>,
    pub question_vecs: Vec<Vec<f64>>,
    pub answer_vecs: Vec<Vec<f64>>,
    /// Encoder outputs for whole concatenated sequences, when supplied.
    #[serde(default)]
    pub sequence: Option<SequenceVecs>,
}

/// Vectors of the concatenated inputs used by the no-attention ablation:
/// `C <SEP> Q1..Qn`, `Q1..Qn` and `AC1..ACn <SEP> AE1..AEn`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SequenceVecs {
    pub claim_questions: Vec<f64>,
    pub questions: Vec<f64>,
    pub answer_pairs: Vec<f64>,
}

impl FeatureBundle {
    pub fn n(&self) -> usize {
        self.question_vecs.len()
    }

    pub fn dim_claim(&self) -> usize {
        self.claim_vec.len()
    }

    pub fn dim_question(&self) -> usize {
        self.question_vecs.first().map_or(0, Vec::len)
    }

    pub fn dim_answer(&self) -> usize {
        self.answer_vecs.first().map_or(0, Vec::len)
    }

    /// Checks shape consistency and finiteness.
    pub fn validate(&self) -> Result<()> {
        if self.question_vecs.is_empty() {
            return Err(Error::EmptyInput("bundle has no questions".into()));
        }
        if self.answer_vecs.len() != self.question_vecs.len() {
            return Err(Error::dims(
                "bundle answer count",
                self.question_vecs.len(),
                self.answer_vecs.len(),
            ));
        }
        let (dq, da) = (self.dim_question(), self.dim_answer());
        for v in &self.question_vecs {
            if v.len() != dq {
                return Err(Error::dims("bundle question vector", dq, v.len()));
            }
        }
        for v in &self.answer_vecs {
            if v.len() != da {
                return Err(Error::dims("bundle answer vector", da, v.len()));
            }
        }
        let all = std::iter::once(&self.claim_vec)
            .chain(&self.question_vecs)
            .chain(&self.answer_vecs);
        for v in all {
            if v.iter().any(|x| !x.is_finite()) {
                return Err(Error::NonFinite("feature bundle".into()));
            }
        }
        if let Some(seq) = &self.sequence {
            let finite = [&seq.claim_questions, &seq.questions, &seq.answer_pairs]
                .iter()
                .all(|v| v.iter().all(|x| x.is_finite()));
            if !finite {
                return Err(Error::NonFinite("sequence vectors".into()));
            }
        }
        Ok(())
    }
}

/// Model input variants: the attention model and the no-attention ablations.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum Variant {
    C,
    Q,
    AA,
    #[serde(rename = "Q_AA")]
    QAa,
    #[serde(rename = "CQ_AA")]
    CqAa,
    #[serde(rename = "ATTENTION_C_Q_AA")]
    AttentionCQAa,
}

impl Variant {
    /// All variants in reporting order.
    pub const ALL: [Variant; 6] = [
        Variant::C,
        Variant::Q,
        Variant::AA,
        Variant::QAa,
        Variant::CqAa,
        Variant::AttentionCQAa,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            Variant::C => "C",
            Variant::Q => "Q",
            Variant::AA => "AA",
            Variant::QAa => "Q_AA",
            Variant::CqAa => "CQ_AA",
            Variant::AttentionCQAa => "ATTENTION_C_Q_AA",
        }
    }

    /// Human-facing row name used in result tables.
    pub fn display_name(self) -> &'static str {
        match self {
            Variant::C => "C",
            Variant::Q => "Q",
            Variant::AA => "AA",
            Variant::QAa => "Q-AA",
            Variant::CqAa => "CQ-AA",
            Variant::AttentionCQAa => "Attention C-Q-AA",
        }
    }

    pub fn is_attention(self) -> bool {
        self == Variant::AttentionCQAa
    }
}

impl fmt::Display for Variant {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Variant {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Variant::ALL
            .into_iter()
            .find(|v| v.as_str().eq_ignore_ascii_case(s))
            .ok_or_else(|| Error::InvalidConfig(format!("unknown variant `{s}`")))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExperimentConfig {
    pub epochs: usize,
    pub batch_size: usize,
    pub learning_rate: f64,
    pub n_fixed: usize,
    pub seeds: Vec<u64>,
    pub variant: Variant,
    /// Attention hidden size; `None` means `min(d_C, d_Q)`.
    pub d_att: Option<usize>,
    /// Drop exact-duplicate (padded) questions from the attention softmax.
    #[serde(default)]
    pub dedup_padded: bool,
    /// No-attention variants read sequence-level vectors instead of
    /// mean-pooled per-question vectors.
    #[serde(default)]
    pub sequence_inputs: bool,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        ExperimentConfig {
            epochs: 5,
            batch_size: 32,
            learning_rate: 1e-3,
            n_fixed: 10,
            seeds: vec![0, 1, 2, 3, 4],
            variant: Variant::AttentionCQAa,
            d_att: None,
            dedup_padded: false,
            sequence_inputs: false,
        }
    }
}

impl ExperimentConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: &str| Err(Error::InvalidConfig(m.to_string()));
        if self.epochs == 0 {
            return bad("epochs must be positive");
        }
        if self.batch_size == 0 {
            return bad("batch_size must be positive");
        }
        if !(self.learning_rate.is_finite() && self.learning_rate > 0.0) {
            return bad("learning_rate must be a positive finite number");
        }
        if self.n_fixed == 0 {
            return bad("n_fixed must be positive");
        }
        if self.seeds.is_empty() {
            return bad("seeds must be non-empty");
        }
        if self.d_att == Some(0) {
            return bad("d_att must be positive");
        }
        Ok(())
    }
}
