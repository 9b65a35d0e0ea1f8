//! Acceptance suite. Prints one PASS/FAIL line per criterion and exits
//! non-zero if any fails.

use std::path::{Path, PathBuf};
use std::process::Command;
use std::time::{Duration, Instant};

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use qaproxy_core::embed::{BundleArchive, Dims, HashEmbedder};
use qaproxy_core::eval::{
    macro_accuracy, macro_accuracy_with_abstentions, make_synthetic, run_experiment,
    ExperimentResult, SyntheticData,
};
use qaproxy_core::ingest::{Containment, Dataset};
use qaproxy_core::metrics::{
    apply_threshold, calibrate_threshold, cosine_sim, score_claim, threshold_candidates, token_f1, ScoredClaim,
};
use qaproxy_core::model::{cross_entropy, masked_softmax, train, AttentionModel, Checkpoint, Model};
use qaproxy_core::{Exec, ExperimentConfig, FeatureBundle, Label, Split, Variant};

type Outcome = Result<String, String>;

fn check(ok: bool, detail: String) -> Outcome {
    if ok {
        Ok(detail)
    } else {
        Err(detail)
    }
}

fn random_vec(rng: &mut ChaCha8Rng, d: usize) -> Vec<f64> {
    (0..d).map(|_| rng.gen_range(-1.0..1.0)).collect()
}

fn random_bundle(rng: &mut ChaCha8Rng, n: usize, dims: Dims) -> FeatureBundle {
    FeatureBundle {
        claim_vec: random_vec(rng, dims.dim_claim),
        question_vecs: (0..n).map(|_| random_vec(rng, dims.dim_question)).collect(),
        answer_vecs: (0..n).map(|_| random_vec(rng, dims.dim_answer_pair)).collect(),
        sequence: None,
    }
}

fn random_label(rng: &mut ChaCha8Rng) -> Label {
    if rng.gen_bool(0.5) {
        Label::Supports
    } else {
        Label::Refutes
    }
}

fn loss(model: &Model, b: &FeatureBundle, label: Label) -> f64 {
    cross_entropy(&model.class_logits(b).unwrap(), label)
}

fn gradient_oracle() -> Outcome {
    let start = Instant::now();
    let mut rng = ChaCha8Rng::seed_from_u64(11);
    let h = 1e-5;
    let mut worst: f64 = 0.0;
    let mut checked = 0usize;
    for _ in 0..50 {
        let n = *[1usize, 2, 10].choose(&mut rng).unwrap();
        let mut pick = || *[2usize, 8].choose(&mut rng).unwrap();
        let dims = Dims {
            dim_claim: pick(),
            dim_question: pick(),
            dim_answer_pair: pick(),
        };
        let d_att = pick();
        let mut model = Model::Attention(AttentionModel::init(dims, d_att, &mut rng));
        // Scale up so tanh and softmax are away from their linear regimes.
        for t in model.tensors_mut() {
            t.iter_mut().for_each(|x| *x *= 2.0);
        }
        let b = random_bundle(&mut rng, n, dims);
        let label = random_label(&mut rng);
        let mut grad = model.zeros_like();
        model.backward(&b, label, &mut grad).map_err(|e| e.to_string())?;
        let analytic: Vec<f64> = grad.tensors().iter().flat_map(|(_, t)| t.to_vec()).collect();
        let mut k = 0;
        for ti in 0..model.tensors().len() {
            let len = model.tensors()[ti].1.len();
            for j in 0..len {
                let orig = model.tensors()[ti].1[j];
                model.tensors_mut()[ti][j] = orig + h;
                let up = loss(&model, &b, label);
                model.tensors_mut()[ti][j] = orig - h;
                let down = loss(&model, &b, label);
                model.tensors_mut()[ti][j] = orig;
                let numeric = (up - down) / (2.0 * h);
                let a = analytic[k];
                let rel = (a - numeric).abs() / a.abs().max(numeric.abs()).max(1e-6);
                worst = worst.max(rel);
                k += 1;
                checked += 1;
            }
        }
    }
    let elapsed = start.elapsed();
    check(
        worst < 1e-4 && elapsed < Duration::from_secs(10),
        format!("{checked} parameters, max relative error {worst:.2e}, {elapsed:.2?}"),
    )
}

fn attention_invariants() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(12);
    let mut worst_sum: f64 = 0.0;
    let mut worst_shift: f64 = 0.0;
    let mut worst_perm: f64 = 0.0;
    let mut min_weight = f64::INFINITY;
    for _ in 0..100 {
        let n = rng.gen_range(1..=12);
        let dims = Dims {
            dim_claim: rng.gen_range(2..=10),
            dim_question: rng.gen_range(2..=10),
            dim_answer_pair: rng.gen_range(2..=10),
        };
        let d_att = rng.gen_range(1..=8);
        let model = AttentionModel::init(dims, d_att, &mut rng);
        let b = random_bundle(&mut rng, n, dims);
        let t = model.forward(&b).map_err(|e| e.to_string())?;
        min_weight = t.weights.iter().copied().fold(min_weight, f64::min);
        worst_sum = worst_sum.max((t.weights.iter().sum::<f64>() - 1.0).abs());

        let c = rng.gen_range(-50.0..50.0);
        let shifted: Vec<f64> = t.logits_att.iter().map(|l| l + c).collect();
        let mask = vec![true; n];
        let base = masked_softmax(&t.logits_att, &mask);
        for (x, y) in masked_softmax(&shifted, &mask).iter().zip(&base) {
            worst_shift = worst_shift.max((x - y).abs());
        }

        let mut perm: Vec<usize> = (0..n).collect();
        perm.shuffle(&mut rng);
        let pb = FeatureBundle {
            claim_vec: b.claim_vec.clone(),
            question_vecs: perm.iter().map(|&i| b.question_vecs[i].clone()).collect(),
            answer_vecs: perm.iter().map(|&i| b.answer_vecs[i].clone()).collect(),
            sequence: None,
        };
        let pt = model.forward(&pb).map_err(|e| e.to_string())?;
        for (k, &i) in perm.iter().enumerate() {
            worst_perm = worst_perm.max((pt.weights[k] - t.weights[i]).abs());
        }
        for (x, y) in pt.class_logits.iter().zip(&t.class_logits) {
            worst_perm = worst_perm.max((x - y).abs());
        }
        if pt.predicted != t.predicted {
            worst_perm = f64::INFINITY;
        }
    }
    check(
        min_weight > 0.0 && worst_sum <= 1e-9 && worst_shift <= 1e-9 && worst_perm <= 1e-9,
        format!(
            "min weight {min_weight:.2e}, |sum-1| {worst_sum:.1e}, shift {worst_shift:.1e}, permutation {worst_perm:.1e}"
        ),
    )
}

fn brute_force(dev: &[ScoredClaim]) -> (f64, f64) {
    let golds: Vec<Label> = dev.iter().map(|s| s.label).collect();
    let scores: Vec<f64> = dev.iter().map(|s| s.claim_score).collect();
    let mut best = (f64::NAN, -1.0);
    for t in threshold_candidates(&scores) {
        let preds: Vec<Label> = scores.iter().map(|&s| apply_threshold(s, t)).collect();
        let acc = macro_accuracy(&preds, &golds).unwrap();
        if acc > best.1 {
            best = (t, acc);
        }
    }
    best
}

fn calibration_oracle() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(13);
    let mut mismatches = 0;
    for i in 0..200 {
        let n = rng.gen_range(1..=50);
        let coarse = i % 3 == 0;
        let dev: Vec<ScoredClaim> = (0..n)
            .map(|k| {
                let scores = if coarse {
                    vec![rng.gen_range(0..5) as f64 / 4.0]
                } else {
                    (0..rng.gen_range(1..=4)).map(|_| rng.gen_range(0.0..1.0)).collect()
                };
                score_claim(format!("c{k}"), scores, random_label(&mut rng)).unwrap()
            })
            .collect();
        let cal = calibrate_threshold(&dev).map_err(|e| e.to_string())?;
        let (t, acc) = brute_force(&dev);
        if cal.dev_accuracy != acc || cal.threshold != t {
            mismatches += 1;
        }
    }
    check(mismatches == 0, format!("200 score sets, {mismatches} mismatches"))
}

fn metric_exactness() -> Outcome {
    let worked = token_f1("three", "three") == 1.0
        && token_f1("two", "three") == 0.0
        && token_f1("the eldest of three", "three children") == 1.0 / 3.0;
    let c = cosine_sim(&[1.0, 0.0], &[1.0, 1.0]).map_err(|e| e.to_string())?;
    let cos_ok = (c - std::f64::consts::FRAC_1_SQRT_2).abs() <= 1e-8;
    let mut rng = ChaCha8Rng::seed_from_u64(14);
    let words = ["the", "a", "three", "river", "1867", "paris", "of", "born"];
    let mut violations = 0;
    for _ in 0..1000 {
        let phrase = |rng: &mut ChaCha8Rng| {
            let n = rng.gen_range(0..6);
            (0..n).map(|_| *words.choose(rng).unwrap()).collect::<Vec<_>>().join(" ")
        };
        let (a, b) = (phrase(&mut rng), phrase(&mut rng));
        if token_f1(&a, &b) != token_f1(&b, &a) {
            violations += 1;
        }
        let d = rng.gen_range(1..16);
        let u = random_vec(&mut rng, d);
        let v = random_vec(&mut rng, d);
        let s = rng.gen_range(0.01..100.0);
        let us: Vec<f64> = u.iter().map(|x| x * s).collect();
        let uv = cosine_sim(&u, &v).unwrap();
        if (uv - cosine_sim(&v, &u).unwrap()).abs() > 1e-12 || (uv - cosine_sim(&us, &v).unwrap()).abs() > 1e-9 {
            violations += 1;
        }
    }
    check(
        worked && cos_ok && violations == 0,
        format!("worked examples {worked}, cosine {c:.10}, {violations} property violations in 1000 pairs"),
    )
}

fn synthetic_archive(data: SyntheticData, exec: Exec) -> BundleArchive {
    let (dataset, _) = Dataset::build(data.claims, &data.qa_sets, 10, Containment::Substring).unwrap();
    BundleArchive::build(&HashEmbedder::new(256, 0).unwrap(), &dataset, exec).unwrap()
}

fn synthetic_config(variant: Variant) -> ExperimentConfig {
    ExperimentConfig {
        variant,
        learning_rate: 1e-2,
        ..Default::default()
    }
}

fn f1_dev_accuracy(data: &SyntheticData) -> f64 {
    let (dataset, _) = Dataset::build(data.claims.clone(), &data.qa_sets, 10, Containment::Substring).unwrap();
    let mut dev = Vec::new();
    let mut preds_ids = Vec::new();
    for c in dataset.claims.iter().filter(|c| c.split == Split::Dev) {
        preds_ids.push((c.id.clone(), c.label));
        if let Some(set) = dataset.qa_sets.get(&c.id) {
            let s = set.pairs.iter().map(|p| token_f1(&p.claim_answer, p.evidence_text())).collect();
            dev.push(score_claim(&c.id, s, c.label).unwrap());
        }
    }
    let cal = calibrate_threshold(&dev).unwrap();
    let preds: Vec<Option<Label>> = preds_ids
        .iter()
        .map(|(id, _)| {
            dev.iter()
                .find(|s| &s.claim_id == id)
                .map(|s| apply_threshold(s.claim_score, cal.threshold))
        })
        .collect();
    let golds: Vec<Label> = preds_ids.iter().map(|(_, l)| *l).collect();
    macro_accuracy_with_abstentions(&preds, &golds).unwrap()
}

fn synthetic_end_to_end(archive: &BundleArchive) -> (Outcome, Option<ExperimentResult>) {
    let start = Instant::now();
    let result = run_experiment(&synthetic_config(Variant::AttentionCQAa), archive, Exec::Sequential).unwrap();
    let elapsed = start.elapsed();
    let clean = make_synthetic(2000, 10, 0.0, 0).unwrap();
    let f1_dev = f1_dev_accuracy(&clean);
    let outcome = check(
        result.test_mean >= 90.0 && f1_dev == 1.0 && elapsed < Duration::from_secs(300),
        format!(
            "attention test {:.2}±{:.2}, token-F1 dev at noise 0 {f1_dev:.4}, training {elapsed:.1?} on one thread",
            result.test_mean, result.test_std
        ),
    );
    (outcome, Some(result))
}

fn ablation_ordering(archive: &BundleArchive, attention: Option<ExperimentResult>) -> Outcome {
    let mut rows = Vec::new();
    for v in Variant::ALL {
        let r = match (&attention, v) {
            (Some(r), Variant::AttentionCQAa) => r.clone(),
            _ => run_experiment(&synthetic_config(v), archive, Exec::default()).map_err(|e| e.to_string())?,
        };
        rows.push(r);
    }
    let test = |v: Variant| rows.iter().find(|r| r.variant == v).unwrap().test_mean;
    let weak = test(Variant::C).max(test(Variant::Q));
    let margin = [Variant::AA, Variant::QAa, Variant::CqAa, Variant::AttentionCQAa]
        .iter()
        .map(|&v| test(v) - weak)
        .fold(f64::INFINITY, f64::min);
    let summary = rows
        .iter()
        .map(|r| format!("{} {:.1}", r.variant.display_name(), r.test_mean))
        .collect::<Vec<_>>()
        .join(", ");
    check(margin >= 20.0, format!("{summary}; smallest margin {margin:.1} points"))
}

fn qaproxy(args: &[&str]) -> std::process::Output {
    Command::new(env!("CARGO_BIN_EXE_qaproxy"))
        .args(args)
        .output()
        .expect("spawn qaproxy")
}

fn run_ok(args: &[&str]) -> Result<String, String> {
    let out = qaproxy(args);
    if out.status.success() {
        Ok(String::from_utf8_lossy(&out.stdout).into_owned())
    } else {
        Err(format!("`qaproxy {}` failed: {}", args.join(" "), String::from_utf8_lossy(&out.stderr)))
    }
}

fn p(path: &Path) -> &str {
    path.to_str().unwrap()
}

fn determinism(dir: &Path) -> Outcome {
    let claims = dir.join("claims.jsonl");
    let qa = dir.join("qa.jsonl");
    let dataset = dir.join("dataset.json");
    let bundles = dir.join("bundles.bin");
    run_ok(&["synth", "--n-claims", "200", "--noise", "0.1", "--claims-out", p(&claims), "--qa-out", p(&qa)])?;
    run_ok(&["ingest", "--claims", p(&claims), "--qa", p(&qa), "--out", p(&dataset)])?;
    run_ok(&["embed", "--dataset", p(&dataset), "--out", p(&bundles), "--dim", "64"])?;
    let mut ckpts = Vec::new();
    let mut results = Vec::new();
    for run in 0..2 {
        let ckpt = dir.join(format!("ckpt{run}.json"));
        let res = dir.join(format!("results{run}.json"));
        run_ok(&["train", "--bundles", p(&bundles), "--out", p(&ckpt), "--seed", "3", "--epochs", "2"])?;
        run_ok(&[
            "eval", "--bundles", p(&bundles), "--out", p(&res), "--variants", "all", "--seeds", "0..2",
            "--epochs", "2", "--format", "json",
        ])?;
        ckpts.push(std::fs::read(&ckpt).map_err(|e| e.to_string())?);
        results.push(std::fs::read(&res).map_err(|e| e.to_string())?);
    }
    // Library level, sequential against data-parallel.
    let data = make_synthetic(200, 10, 0.1, 5).unwrap();
    let archive = synthetic_archive(data, Exec::Sequential);
    let examples = qaproxy_core::eval::split_examples(&archive, Split::Train);
    let config = ExperimentConfig {
        epochs: 2,
        ..Default::default()
    };
    let json = |exec| {
        let o = train(&examples, &config, 9, exec).unwrap();
        Checkpoint::from_model(&o.model, archive.dims, 9, o.loss_history).to_json().unwrap()
    };
    let lib_same = json(Exec::Sequential) == json(Exec::Parallel);
    check(
        ckpts[0] == ckpts[1] && results[0] == results[1] && lib_same,
        format!(
            "checkpoints identical {}, results identical {}, sequential = parallel {lib_same}",
            ckpts[0] == ckpts[1],
            results[0] == results[1]
        ),
    )
}

fn faithful_format(dir: &Path) -> Outcome {
    let fixtures = PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("tests/fixtures");
    let dataset = dir.join("fixture_dataset.json");
    let bundles = dir.join("fixture_bundles.bin");
    let table = dir.join("table.md");
    run_ok(&[
        "ingest", "--claims", p(&fixtures.join("claims.jsonl")), "--qa", p(&fixtures.join("qa.jsonl")),
        "--out", p(&dataset), "--n-fixed", "3",
    ])?;
    run_ok(&[
        "embed", "--dataset", p(&dataset), "--out", p(&bundles), "--provider", "store", "--store",
        p(&fixtures.join("store.jsonl")),
    ])?;
    let stdout = run_ok(&[
        "eval", "--bundles", p(&bundles), "--out", p(&table), "--variants", "all", "--seeds", "0..4",
        "--format", "markdown",
    ])?;
    let written = std::fs::read_to_string(&table).map_err(|e| e.to_string())?;
    let rows: Vec<&str> = written.lines().skip(2).collect();
    let cell_ok = |c: &str| {
        let c = c.trim();
        c.split_once('±').is_some_and(|(m, s)| {
            [m, s].iter().all(|x| x.split_once('.').is_some_and(|(_, d)| d.len() == 2) && x.parse::<f64>().is_ok())
        })
    };
    let names_ok = rows
        .iter()
        .zip(Variant::ALL)
        .all(|(r, v)| r.trim_start_matches('|').trim().starts_with(v.display_name()));
    let cells_ok = rows.iter().all(|r| {
        let cells: Vec<&str> = r.trim_matches('|').split('|').collect();
        cells.len() == 3 && cell_ok(cells[1]) && cell_ok(cells[2])
    });
    let manifest = std::fs::read_to_string(dir.join("table.md.manifest.json")).map_err(|e| e.to_string())?;
    let seeds_ok = manifest.contains("\"seeds\": [\n    0,\n    1,\n    2,\n    3,\n    4\n  ]");
    check(
        stdout == written && rows.len() == 6 && names_ok && cells_ok && seeds_ok,
        format!("{} rows, names {names_ok}, mean±std cells {cells_ok}, 5 seeds in manifest {seeds_ok}", rows.len()),
    )
}

fn main() {
    if std::env::args().any(|a| a == "--list") {
        return;
    }
    let tmp = tempfile::tempdir().expect("temp dir");
    let dir = tmp.path().to_path_buf();
    let mut lines: Vec<(&str, Outcome)> = vec![
        ("gradient oracle", gradient_oracle()),
        ("attention invariants", attention_invariants()),
        ("calibration oracle", calibration_oracle()),
        ("metric exactness", metric_exactness()),
    ];
    let archive = synthetic_archive(make_synthetic(2000, 10, 0.1, 0).unwrap(), Exec::default());
    let (e2e, attention) = synthetic_end_to_end(&archive);
    lines.push(("synthetic end-to-end", e2e));
    lines.push(("ablation ordering", ablation_ordering(&archive, attention)));
    lines.push(("determinism", determinism(&dir)));
    lines.push(("faithful-format harness", faithful_format(&dir)));

    let mut failed = 0;
    for (name, outcome) in &lines {
        match outcome {
            Ok(d) => println!("PASS  {name:<24} {d}"),
            Err(d) => {
                failed += 1;
                println!("FAIL  {name:<24} {d}");
            }
        }
    }
    println!("acceptance: {} passed, {failed} failed", lines.len() - failed);
    if failed > 0 {
        std::process::exit(1);
    }
}
