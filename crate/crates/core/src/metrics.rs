//! Metric-based answer comparison and dev-set threshold calibration.

use std::collections::{BTreeMap, BTreeSet, HashMap};
use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::eval::macro_accuracy_from_counts;
use crate::ingest::normalize_text;
use crate::types::Label;

/// SQuAD-style token F1 over whitespace tokens of the normalized texts.
pub fn token_f1(a: &str, b: &str) -> f64 {
    let (a, b) = (normalize_text(a), normalize_text(b));
    let ta: Vec<&str> = a.split_whitespace().collect();
    let tb: Vec<&str> = b.split_whitespace().collect();
    if ta.is_empty() || tb.is_empty() {
        return 0.0;
    }
    let mut counts: HashMap<&str, usize> = HashMap::new();
    for t in &tb {
        *counts.entry(t).or_default() += 1;
    }
    let mut overlap = 0usize;
    for t in &ta {
        if let Some(c) = counts.get_mut(t) {
            if *c > 0 {
                *c -= 1;
                overlap += 1;
            }
        }
    }
    if overlap == 0 {
        return 0.0;
    }
    let p = overlap as f64 / ta.len() as f64;
    let r = overlap as f64 / tb.len() as f64;
    2.0 * p * r / (p + r)
}

pub fn cosine_sim(u: &[f64], v: &[f64]) -> Result<f64> {
    if u.len() != v.len() {
        return Err(Error::dims("cosine_sim", u.len(), v.len()));
    }
    let dot: f64 = u.iter().zip(v).map(|(a, b)| a * b).sum();
    let nu = u.iter().map(|x| x * x).sum::<f64>().sqrt();
    let nv = v.iter().map(|x| x * x).sum::<f64>().sqrt();
    if nu == 0.0 || nv == 0.0 {
        return Ok(0.0);
    }
    Ok((dot / (nu * nv)).clamp(-1.0, 1.0))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScoredClaim {
    pub claim_id: String,
    pub pair_scores: Vec<f64>,
    pub claim_score: f64,
    pub label: Label,
}

/// Averages per-pair scores into one claim score.
pub fn score_claim(claim_id: impl Into<String>, pair_scores: Vec<f64>, label: Label) -> Result<ScoredClaim> {
    if pair_scores.is_empty() {
        return Err(Error::EmptyScores);
    }
    let claim_score = pair_scores.iter().sum::<f64>() / pair_scores.len() as f64;
    Ok(ScoredClaim {
        claim_id: claim_id.into(),
        pair_scores,
        claim_score,
        label,
    })
}

/// `SUPPORTS` iff `score >= threshold`.
pub fn apply_threshold(score: f64, threshold: f64) -> Label {
    if score >= threshold {
        Label::Supports
    } else {
        Label::Refutes
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Calibration {
    #[serde(with = "extended_f64")]
    pub threshold: f64,
    pub dev_accuracy: f64,
}

/// Candidate thresholds: `-inf`, a cut between each pair of adjacent
/// distinct scores, and `+inf`, ascending.
pub fn threshold_candidates(scores: &[f64]) -> Vec<f64> {
    let mut sorted: Vec<f64> = scores.to_vec();
    sorted.sort_by(f64::total_cmp);
    sorted.dedup();
    let mut out = Vec::with_capacity(sorted.len() + 1);
    out.push(f64::NEG_INFINITY);
    for w in sorted.windows(2) {
        let (lo, hi) = (w[0], w[1]);
        let mid = lo + (hi - lo) / 2.0;
        // Adjacent floats can round the midpoint down onto `lo`.
        out.push(if mid > lo { mid } else { hi });
    }
    out.push(f64::INFINITY);
    out
}

/// Picks the threshold that maximizes dev macro accuracy.
///
/// Accuracy is not monotone in the threshold, so instead of bisecting this
/// sweeps every candidate from [`threshold_candidates`] in one pass over the
/// sorted scores. Ties go to the smallest candidate.
pub fn calibrate_threshold(dev: &[ScoredClaim]) -> Result<Calibration> {
    if dev.is_empty() {
        return Err(Error::EmptyDevSet);
    }
    if let Some(c) = dev.iter().find(|c| !c.claim_score.is_finite()) {
        return Err(Error::NonFinite(format!("score of claim `{}`", c.claim_id)));
    }
    let mut sorted: Vec<(f64, Label)> = dev.iter().map(|c| (c.claim_score, c.label)).collect();
    sorted.sort_by(|a, b| a.0.total_cmp(&b.0));
    let totals = [
        sorted.iter().filter(|s| s.1 == Label::Supports).count(),
        sorted.iter().filter(|s| s.1 == Label::Refutes).count(),
    ];
    let scores: Vec<f64> = sorted.iter().map(|s| s.0).collect();
    let candidates = threshold_candidates(&scores);

    // At candidate k, claims below the cut are REFUTES, the rest SUPPORTS.
    let mut correct = [totals[0], 0usize];
    let mut best = Calibration {
        threshold: candidates[0],
        dev_accuracy: macro_accuracy_from_counts(correct, totals),
    };
    let mut i = 0;
    for &t in &candidates[1..] {
        while i < sorted.len() && sorted[i].0 < t {
            match sorted[i].1 {
                Label::Supports => correct[0] -= 1,
                Label::Refutes => correct[1] += 1,
            }
            i += 1;
        }
        let acc = macro_accuracy_from_counts(correct, totals);
        if acc > best.dev_accuracy {
            best = Calibration {
                threshold: t,
                dev_accuracy: acc,
            };
        }
    }
    Ok(best)
}

/// Per-claim pair scores from an external scorer.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct ExternalScores {
    pub scores: BTreeMap<String, Vec<f64>>,
    /// Known claims with no line in the file.
    pub missing: Vec<String>,
}

/// Reads `{"claim_id": str, "pair_scores": [number,...]}` lines.
pub fn ingest_external_scores<'a>(
    path: impl AsRef<Path>,
    known_ids: impl IntoIterator<Item = &'a str>,
) -> Result<ExternalScores> {
    #[derive(Deserialize)]
    #[serde(deny_unknown_fields)]
    struct Line {
        claim_id: String,
        pair_scores: Vec<f64>,
    }
    let path = path.as_ref();
    let known: BTreeSet<&str> = known_ids.into_iter().collect();
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    let mut scores = BTreeMap::new();
    for (i, raw) in text.lines().enumerate() {
        let line = i + 1;
        if raw.trim().is_empty() {
            continue;
        }
        let parse = |message: String| Error::Parse {
            path: path.to_path_buf(),
            line,
            message,
        };
        let l: Line = serde_json::from_str(raw).map_err(|e| parse(e.to_string()))?;
        if !known.contains(l.claim_id.as_str()) {
            return Err(Error::DanglingClaimId {
                path: path.to_path_buf(),
                line,
                claim_id: l.claim_id,
            });
        }
        if l.pair_scores.iter().any(|s| !s.is_finite()) {
            return Err(parse("non-finite pair score".into()));
        }
        if scores.insert(l.claim_id.clone(), l.pair_scores).is_some() {
            return Err(parse(format!("duplicate claim id `{}`", l.claim_id)));
        }
    }
    let missing = known
        .iter()
        .filter(|id| !scores.contains_key(**id))
        .map(|id| id.to_string())
        .collect();
    Ok(ExternalScores { scores, missing })
}

/// Serializes infinities as the strings `"inf"` / `"-inf"`.
pub mod extended_f64 {
    use serde::{Deserialize, Deserializer, Serializer};

    pub fn serialize<S: Serializer>(x: &f64, s: S) -> Result<S::Ok, S::Error> {
        if x.is_finite() {
            s.serialize_f64(*x)
        } else if *x > 0.0 {
            s.serialize_str("inf")
        } else if *x < 0.0 {
            s.serialize_str("-inf")
        } else {
            s.serialize_str("nan")
        }
    }

    pub fn deserialize<'de, D: Deserializer<'de>>(d: D) -> Result<f64, D::Error> {
        #[derive(Deserialize)]
        #[serde(untagged)]
        enum Repr {
            Num(f64),
            Str(String),
        }
        match Repr::deserialize(d)? {
            Repr::Num(x) => Ok(x),
            Repr::Str(s) => match s.as_str() {
                "inf" => Ok(f64::INFINITY),
                "-inf" => Ok(f64::NEG_INFINITY),
                "nan" => Ok(f64::NAN),
                other => Err(serde::de::Error::custom(format!("bad float `{other}`"))),
            },
        }
    }
}
