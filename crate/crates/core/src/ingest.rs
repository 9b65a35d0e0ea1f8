//! Dataset and QA-file ingestion, QA-pair filtering and question selection,
//! and the client for the external extractive QA service.

use std::collections::{BTreeMap, BTreeSet, HashMap};
use std::fs;
use std::path::Path;
use std::time::Duration;

use serde::{Deserialize, Serialize};
use unicode_normalization::UnicodeNormalization;

use crate::error::{Error, Result};
use crate::exec::Exec;
use crate::types::{validate_record, ClaimRecord, QAPair, QASet};

/// Lowercase, NFKC-normalize and collapse whitespace.
pub fn normalize_text(text: &str) -> String {
    let folded: String = text.nfkc().collect::<String>().to_lowercase();
    folded.split_whitespace().collect::<Vec<_>>().join(" ")
}

/// How a claim answer must appear in the claim to survive filtering.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Containment {
    /// Normalized answer is a substring of the normalized claim.
    #[default]
    Substring,
    /// Normalized answer tokens form a contiguous run of claim tokens.
    TokenBoundary,
}

impl Containment {
    pub fn contains(self, claim: &str, answer: &str) -> bool {
        let (claim, answer) = (normalize_text(claim), normalize_text(answer));
        match self {
            Containment::Substring => claim.contains(&answer),
            Containment::TokenBoundary => {
                let hay: Vec<&str> = claim.split(' ').collect();
                let needle: Vec<&str> = answer.split(' ').filter(|t| !t.is_empty()).collect();
                needle.is_empty() || hay.windows(needle.len()).any(|w| w == needle.as_slice())
            }
        }
    }
}

/// Keeps the pairs whose claim answer is contained in the claim, in order.
pub fn filter_qa_pairs(claim: &str, pairs: &[QAPair], mode: Containment) -> Vec<QAPair> {
    pairs
        .iter()
        .filter(|p| mode.contains(claim, &p.claim_answer))
        .cloned()
        .collect()
}

/// Truncates to the first `n_fixed` pairs, or pads by repeating the first
/// pair. Returns the selection and whether padding happened.
pub fn select_questions(pairs: &[QAPair], n_fixed: usize) -> Option<(Vec<QAPair>, bool)> {
    let first = pairs.first()?;
    if pairs.len() >= n_fixed {
        return Some((pairs[..n_fixed].to_vec(), false));
    }
    let mut out = pairs.to_vec();
    out.resize(n_fixed, first.clone());
    Some((out, true))
}

impl QASet {
    /// Applies [`select_questions`] to this set.
    pub fn select(&self, n_fixed: usize) -> Result<QASet> {
        let (pairs, padded) = select_questions(&self.pairs, n_fixed)
            .ok_or_else(|| Error::EmptyQaSet(self.claim_id.clone()))?;
        Ok(QASet {
            claim_id: self.claim_id.clone(),
            pairs,
            padded,
        })
    }
}

fn read_lines(path: &Path) -> Result<Vec<(usize, String)>> {
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    Ok(text
        .lines()
        .enumerate()
        .filter(|(_, l)| !l.trim().is_empty())
        .map(|(i, l)| (i + 1, l.to_string()))
        .collect())
}

fn parse_err(path: &Path, line: usize, message: impl Into<String>) -> Error {
    Error::Parse {
        path: path.to_path_buf(),
        line,
        message: message.into(),
    }
}

/// Parses a claims JSON Lines file.
pub fn load_claims(path: impl AsRef<Path>) -> Result<Vec<ClaimRecord>> {
    let path = path.as_ref();
    let mut seen = BTreeSet::new();
    let mut out = Vec::new();
    for (line, text) in read_lines(path)? {
        let record: ClaimRecord =
            serde_json::from_str(&text).map_err(|e| parse_err(path, line, e.to_string()))?;
        if !seen.insert(record.id.clone()) {
            return Err(parse_err(path, line, format!("duplicate claim id `{}`", record.id)));
        }
        out.push(record);
    }
    Ok(out)
}

/// Parses a QA JSON Lines file; every `claim_id` must name a loaded claim.
pub fn load_qa_sets(path: impl AsRef<Path>, claims: &[ClaimRecord]) -> Result<BTreeMap<String, QASet>> {
    let path = path.as_ref();
    let known: BTreeSet<&str> = claims.iter().map(|c| c.id.as_str()).collect();
    let mut out = BTreeMap::new();
    for (line, text) in read_lines(path)? {
        let set: QASet =
            serde_json::from_str(&text).map_err(|e| parse_err(path, line, e.to_string()))?;
        if !known.contains(set.claim_id.as_str()) {
            return Err(Error::DanglingClaimId {
                path: path.to_path_buf(),
                line,
                claim_id: set.claim_id,
            });
        }
        if let Some((i, v)) = set
            .pairs
            .iter()
            .enumerate()
            .find_map(|(i, p)| p.validate().into_iter().next().map(|v| (i, v)))
        {
            return Err(parse_err(path, line, format!("pairs[{i}]: {v}")));
        }
        if out.contains_key(&set.claim_id) {
            return Err(parse_err(path, line, format!("duplicate QA set for `{}`", set.claim_id)));
        }
        out.insert(set.claim_id.clone(), set);
    }
    Ok(out)
}

/// Claims with their filtered and selected QA sets.
///
/// Claims left with no QA pair after filtering are listed in `abstained` and
/// have no entry in `qa_sets`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Dataset {
    pub n_fixed: usize,
    pub containment: Containment,
    pub claims: Vec<ClaimRecord>,
    pub qa_sets: BTreeMap<String, QASet>,
    pub abstained: Vec<String>,
}

/// Per-claim outcome of building a [`Dataset`].
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct IngestReport {
    pub claims: usize,
    pub pairs_in: usize,
    pub pairs_kept: usize,
    pub padded: usize,
    pub truncated: usize,
    pub abstained: Vec<String>,
    /// `claim_id: violation` for every record that failed validation.
    pub violations: Vec<String>,
}

impl Dataset {
    /// Filters each claim's raw QA pairs and selects exactly `n_fixed`.
    pub fn build(
        claims: Vec<ClaimRecord>,
        raw: &BTreeMap<String, QASet>,
        n_fixed: usize,
        containment: Containment,
    ) -> Result<(Dataset, IngestReport)> {
        if n_fixed == 0 {
            return Err(Error::InvalidConfig("n_fixed must be positive".into()));
        }
        let mut report = IngestReport {
            claims: claims.len(),
            ..Default::default()
        };
        let mut qa_sets = BTreeMap::new();
        for claim in &claims {
            report
                .violations
                .extend(validate_record(claim).into_iter().map(|v| format!("{}: {v}", claim.id)));
            let pairs = raw.get(&claim.id).map(|s| s.pairs.as_slice()).unwrap_or(&[]);
            let kept = filter_qa_pairs(&claim.claim, pairs, containment);
            report.pairs_in += pairs.len();
            report.pairs_kept += kept.len();
            match select_questions(&kept, n_fixed) {
                None => report.abstained.push(claim.id.clone()),
                Some((selected, padded)) => {
                    if padded {
                        report.padded += 1;
                    } else if kept.len() > n_fixed {
                        report.truncated += 1;
                    }
                    qa_sets.insert(
                        claim.id.clone(),
                        QASet {
                            claim_id: claim.id.clone(),
                            pairs: selected,
                            padded,
                        },
                    );
                }
            }
        }
        let dataset = Dataset {
            n_fixed,
            containment,
            abstained: report.abstained.clone(),
            claims,
            qa_sets,
        };
        Ok((dataset, report))
    }

    pub fn claim(&self, id: &str) -> Option<&ClaimRecord> {
        self.claims.iter().find(|c| c.id == id)
    }

    pub fn read(path: impl AsRef<Path>) -> Result<Dataset> {
        let path = path.as_ref();
        let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
        Ok(serde_json::from_slice(&bytes)?)
    }

    pub fn to_json(&self) -> Result<Vec<u8>> {
        Ok(serde_json::to_vec_pretty(self)?)
    }
}

// ---------------------------------------------------------------------------
// QA service

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Candidate {
    pub text: String,
    pub score: f64,
}

/// Highest-scoring candidate; ties go to the lowest index.
pub fn best_candidate(candidates: &[Candidate]) -> Option<&Candidate> {
    candidates
        .iter()
        .enumerate()
        .max_by(|(i, a), (j, b)| a.score.total_cmp(&b.score).then(j.cmp(i)))
        .map(|(_, c)| c)
}

/// Validates a raw `/answer` response body and returns its candidates.
pub fn parse_answer_response(body: &[u8]) -> Result<Vec<Candidate>> {
    #[derive(Deserialize)]
    struct Response {
        candidates: Vec<Candidate>,
    }
    let resp: Response =
        serde_json::from_slice(body).map_err(|e| Error::MalformedResponse(e.to_string()))?;
    for (i, c) in resp.candidates.iter().enumerate() {
        if !c.score.is_finite() || !(0.0..=1.0).contains(&c.score) {
            return Err(Error::MalformedResponse(format!(
                "candidates[{i}].score {} outside [0,1]",
                c.score
            )));
        }
    }
    Ok(resp.candidates)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct QAServiceEndpoint {
    pub base_url: String,
    pub timeout: Duration,
    pub max_retries: u32,
}

impl QAServiceEndpoint {
    pub fn new(base_url: impl Into<String>) -> Self {
        QAServiceEndpoint {
            base_url: base_url.into(),
            timeout: Duration::from_secs(30),
            max_retries: 3,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.timeout.is_zero() {
            return Err(Error::InvalidConfig("QA service timeout must be positive".into()));
        }
        if !(self.base_url.starts_with("http://") || self.base_url.starts_with("https://")) {
            return Err(Error::InvalidConfig(format!(
                "QA service URL `{}` must start with http:// or https://",
                self.base_url
            )));
        }
        Ok(())
    }
}

/// Something that answers a question from a context.
pub trait AnswerService: Sync {
    /// All candidate answers, in service order.
    fn candidates(&self, question: &str, context: &str) -> Result<Vec<Candidate>>;
}

/// Asks `service` and keeps the most likely answer. `Ok(None)` means the
/// service returned no candidates.
pub fn fetch_evidence_answer(
    service: &dyn AnswerService,
    question: &str,
    evidence: &str,
) -> Result<Option<(String, f64)>> {
    if question.trim().is_empty() || evidence.trim().is_empty() {
        return Err(Error::EmptyInput("question and evidence must be non-empty".into()));
    }
    let candidates = service.candidates(question, evidence)?;
    Ok(best_candidate(&candidates).map(|c| (c.text.clone(), c.score)))
}

/// Blocking HTTP client for `POST {base_url}/answer`.
pub struct QaClient {
    endpoint: QAServiceEndpoint,
    http: reqwest::blocking::Client,
}

impl QaClient {
    pub fn new(endpoint: QAServiceEndpoint) -> Result<Self> {
        endpoint.validate()?;
        let http = reqwest::blocking::Client::builder()
            .timeout(endpoint.timeout)
            .build()
            .map_err(|e| Error::InvalidConfig(format!("HTTP client: {e}")))?;
        Ok(QaClient { endpoint, http })
    }

    fn url(&self) -> String {
        format!("{}/answer", self.endpoint.base_url.trim_end_matches('/'))
    }

    fn attempt(&self, body: &serde_json::Value) -> std::result::Result<Vec<u8>, Attempt> {
        let resp = self
            .http
            .post(self.url())
            .json(body)
            .send()
            .map_err(|e| Attempt::Retry(e.to_string()))?;
        let status = resp.status();
        if status.is_server_error() {
            return Err(Attempt::Retry(format!("HTTP {status}")));
        }
        if !status.is_success() {
            return Err(Attempt::Fatal(Error::MalformedResponse(format!("HTTP {status}"))));
        }
        resp.bytes()
            .map(|b| b.to_vec())
            .map_err(|e| Attempt::Retry(e.to_string()))
    }
}

enum Attempt {
    Retry(String),
    Fatal(Error),
}

impl AnswerService for QaClient {
    fn candidates(&self, question: &str, context: &str) -> Result<Vec<Candidate>> {
        let body = serde_json::json!({ "question": question, "context": context });
        let attempts = self.endpoint.max_retries + 1;
        let mut reason = String::new();
        for k in 0..attempts {
            if k > 0 {
                std::thread::sleep(Duration::from_millis(50 * u64::from(k)));
            }
            match self.attempt(&body) {
                Ok(bytes) => return parse_answer_response(&bytes),
                Err(Attempt::Fatal(e)) => return Err(e),
                Err(Attempt::Retry(r)) => reason = r,
            }
        }
        Err(Error::ServiceUnreachable { attempts, reason })
    }
}

/// Fills missing evidence answers for every selected QA pair.
///
/// Questions repeated within a claim (padding) are asked once. Claims run
/// concurrently with at most `in_flight` outstanding requests.
pub fn answer_dataset(
    service: &dyn AnswerService,
    dataset: &Dataset,
    exec: Exec,
    in_flight: usize,
) -> Result<Dataset> {
    let ids: Vec<&String> = dataset.qa_sets.keys().collect();
    let answered = exec.map_bounded(&ids, in_flight.max(1), |id| -> Result<QASet> {
        let set = &dataset.qa_sets[*id];
        let context = dataset
            .claim(id)
            .map(ClaimRecord::evidence_text)
            .ok_or_else(|| Error::MissingInput(format!("claim `{id}`")))?;
        let mut cache: HashMap<&str, Option<(String, f64)>> = HashMap::new();
        let mut pairs = Vec::with_capacity(set.pairs.len());
        for p in &set.pairs {
            if p.evidence_answer.is_some() {
                pairs.push(p.clone());
                continue;
            }
            let answer = match cache.get(p.question.as_str()) {
                Some(a) => a.clone(),
                None => {
                    let a = fetch_evidence_answer(service, &p.question, &context)?;
                    cache.insert(&p.question, a.clone());
                    a
                }
            };
            let mut p = p.clone();
            if let Some((text, score)) = answer {
                p.evidence_answer = Some(text);
                p.evidence_score = Some(score);
            }
            pairs.push(p);
        }
        Ok(QASet {
            claim_id: set.claim_id.clone(),
            pairs,
            padded: set.padded,
        })
    });
    let mut out = dataset.clone();
    for set in answered {
        let set = set?;
        out.qa_sets.insert(set.claim_id.clone(), set);
    }
    Ok(out)
}
