//! End-to-end acceptance checks. Prints one PASS/FAIL line per criterion.
//! Failures are reported but only change the exit code when
//! `CODEBACK_ACCEPTANCE_STRICT` is set. Set `CODEBACK_ACCEPTANCE_DIR` to keep
//! the run artifacts.

mod common;

use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::time::Instant;

use codeback::backdoor::{
    poison_dataset, sample_grammatical_trigger, verify_dead, BackdoorSpec, TriggerGrammar,
    TriggerKind,
};
use codeback::corpus::{build_vocab, encode, generate_synthetic, EncodedSample};
use codeback::detector::{
    detect, rank, score_alg1, score_topk, top_k_singular, CenteredMatrix, DetectOptions,
    OutlierReport, SvdOptions,
};
use codeback::metrics::EvalReport;
use codeback::model::{gradient_check, ModelConfig, ParamGroup, RepresentationKind, Seq2Seq};
use codeback::pipeline::{
    cmd_eval, cmd_extract, cmd_gen_corpus, cmd_k_sweep, cmd_poison, cmd_run_all, cmd_train,
    ExperimentConfig,
};
use rand::Rng;

struct Outcome {
    id: u32,
    pass: bool,
    detail: String,
}

fn outcome(id: u32, pass: bool, detail: impl Into<String>) -> Outcome {
    let o = Outcome {
        id,
        pass,
        detail: detail.into(),
    };
    println!(
        "criterion {:>2} {}: {}",
        o.id,
        if o.pass { "PASS" } else { "FAIL" },
        o.detail
    );
    o
}

fn failed(id: u32, what: &str, err: impl std::fmt::Display) -> Outcome {
    outcome(id, false, format!("{what} failed: {err}"))
}

fn config(root: &Path, name: &str) -> ExperimentConfig {
    ExperimentConfig {
        out_dir: root.join(name),
        ..ExperimentConfig::default()
    }
}

fn baseline(root: &Path) -> codeback::Result<EvalReport> {
    let mut cfg = config(root, "baseline");
    cfg.backdoor.epsilon = 0.0;
    cmd_gen_corpus(&cfg)?;
    cmd_poison(&cfg)?;
    cmd_train(&cfg)?;
    cmd_eval(&cfg)
}

/// Nearest-rank percentile of unsorted values.
fn percentile(values: &[f64], p: f64) -> f64 {
    let mut v = values.to_vec();
    v.sort_by(f64::total_cmp);
    let idx = ((p / 100.0) * v.len() as f64).ceil().max(1.0) as usize - 1;
    v[idx.min(v.len() - 1)]
}

fn median(values: &[f64]) -> f64 {
    let mut v = values.to_vec();
    v.sort_by(f64::total_cmp);
    let n = v.len();
    if n % 2 == 1 {
        v[n / 2]
    } else {
        (v[n / 2 - 1] + v[n / 2]) / 2.0
    }
}

fn attack_and_detection(root: &Path, out: &mut Vec<Outcome>) {
    let base = match baseline(root) {
        Ok(r) => r,
        Err(e) => {
            out.push(failed(1, "baseline run", &e));
            out.push(failed(3, "baseline run", &e));
            out.push(failed(4, "baseline run", &e));
            out.push(failed(11, "baseline run", &e));
            return;
        }
    };

    let cfg = config(root, "fixed-static");
    let started = Instant::now();
    match cmd_run_all(&cfg) {
        Ok(r) => {
            let minutes = started.elapsed().as_secs_f64() / 60.0;
            let drop = base.test_f1 - r.test_f1;
            out.push(outcome(
                1,
                r.bd_rate >= 0.90 && drop < 0.05 && minutes < 30.0,
                format!(
                    "bd_rate {:.3} (>= 0.90), clean F1 {:.3} vs baseline {:.3}, drop {:.3} (< 0.05), {:.1} min",
                    r.bd_rate, r.test_f1, base.test_f1, drop, minutes
                ),
            ));
            let recall = r.detector_recall.unwrap_or(0.0);
            out.push(outcome(
                3,
                recall >= 0.90 && r.post_bd_rate <= 0.10,
                format!(
                    "encoder_output k=10 recall {recall:.3} (>= 0.90), post_bd_rate {:.3} (<= 0.10)",
                    r.post_bd_rate
                ),
            ));
            out.push(match OutlierReport::read_jsonl(&cfg.path("detect.jsonl")) {
                Ok(report) => {
                    let (mut poisoned, mut clean) = (Vec::new(), Vec::new());
                    for s in &report.samples {
                        if s.is_poisoned == Some(true) {
                            poisoned.push(s.score);
                        } else {
                            clean.push(s.score);
                        }
                    }
                    let (m, p90) = (median(&poisoned), percentile(&clean, 90.0));
                    outcome(
                        4,
                        m > p90,
                        format!("median poisoned score {m:.3} vs clean 90th percentile {p90:.3}"),
                    )
                }
                Err(e) => failed(4, "reading detect.jsonl", e),
            });
            out.push(k_sweep_check(&cfg));
        }
        Err(e) => {
            out.push(failed(1, "fixed/static run", &e));
            out.push(failed(3, "fixed/static run", &e));
            out.push(failed(4, "fixed/static run", &e));
            out.push(failed(11, "fixed/static run", &e));
        }
    }

    let mut cfg = config(root, "grammatical-static");
    cfg.backdoor.trigger_kind = TriggerKind::Grammatical;
    let grammatical = cmd_gen_corpus(&cfg)
        .and_then(|_| cmd_poison(&cfg))
        .and_then(|_| cmd_train(&cfg))
        .and_then(|_| cmd_run_all(&cfg));
    out.push(match grammatical {
        Ok(r) => outcome(2, r.bd_rate >= 0.80, format!("grammatical bd_rate {:.3} (>= 0.80)", r.bd_rate)),
        Err(e) => failed(2, "grammatical run", e),
    });
}

fn k_sweep_check(cfg: &ExperimentConfig) -> Outcome {
    let rows = cmd_extract(cfg, RepresentationKind::ContextVectors)
        .and_then(|_| cmd_k_sweep(cfg, RepresentationKind::ContextVectors));
    match rows {
        Ok(rows) => {
            let at = |k: usize| rows.iter().find(|r| r.0 == k).and_then(|r| r.1);
            let one = at(1).unwrap_or(0.0);
            let best = (2..=20).filter_map(at).fold(f64::NEG_INFINITY, f64::max);
            outcome(
                11,
                best >= one,
                format!("context vectors: recall at k=1 {one:.3}, best over k=2..20 {best:.3}"),
            )
        }
        Err(e) => failed(11, "context-vector sweep", e),
    }
}

fn oracle_equivalence() -> Outcome {
    let mut r = common::rng(2024);
    let (mut worst_sigma, mut worst_angle) = (0.0f64, 0.0f64);
    for _ in 0..100 {
        let n = r.random_range(2..=50);
        let d = r.random_range(1..=20);
        let k = r.random_range(1..=n.min(d));
        let m = common::gaussian(&mut r, n, d);
        let basis = match top_k_singular(&m, k, &SvdOptions::default()) {
            Ok(b) => b,
            Err(e) => return failed(5, "top_k_singular", e),
        };
        let (values, vectors) = common::brute_force_svd(&m);
        for i in 0..k {
            worst_sigma = worst_sigma.max((basis.singular_values[i] - values[i]).abs() / values[i]);
        }
        let ours: Vec<Vec<f64>> = (0..k).map(|i| basis.vector(i).to_vec()).collect();
        worst_angle = worst_angle.max(common::largest_angle(&vectors[..k], &ours));
    }
    outcome(
        5,
        worst_sigma < 1e-8 && worst_angle <= 1e-6,
        format!("100 matrices: max sigma rel error {worst_sigma:.2e}, max principal angle {worst_angle:.2e} rad"),
    )
}

fn planted_outliers() -> Outcome {
    let started = Instant::now();
    let (set, poisoned) = common::planted_mixture(10_000, 64, 0.05, 6.0, 77);
    let mut recalls = Vec::new();
    for k in [1, 10] {
        let opts = DetectOptions {
            k,
            ..DetectOptions::default()
        };
        match detect(&set, &opts, Some(&poisoned)) {
            Ok(r) => recalls.push(r.summary.recall.unwrap_or(0.0)),
            Err(e) => return failed(6, "detect", e),
        }
    }
    let secs = started.elapsed().as_secs_f64();
    outcome(
        6,
        recalls.iter().all(|&r| r >= 0.99) && secs < 10.0,
        format!(
            "shift 6 sd: recall k=1 {:.3}, k=10 {:.3} (>= 0.99), {secs:.1} s",
            recalls[0], recalls[1]
        ),
    )
}

fn gradients() -> Outcome {
    let data = generate_synthetic(40, 7);
    let (iv, ov) = build_vocab(&data, 2000, 500);
    let batch: Vec<EncodedSample> = data.samples.iter().take(4).map(|s| encode(s, &iv, &ov, 24)).collect();
    let config = ModelConfig {
        input_vocab: iv.len(),
        output_vocab: ov.len(),
        seed: 3,
        ..ModelConfig::default()
    };
    let report = match Seq2Seq::new(config).and_then(|m| gradient_check(&m, &batch, 1e-4, 240, 11)) {
        Ok(r) => r,
        Err(e) => return failed(7, "gradient check", e),
    };
    let groups = [
        ParamGroup::Embedding,
        ParamGroup::Encoder,
        ParamGroup::Attention,
        ParamGroup::Decoder,
        ParamGroup::Projection,
    ];
    let covered = groups.iter().all(|g| report.per_group.contains_key(g));
    outcome(
        7,
        report.checked >= 200 && covered && report.max_relative_error < 1e-4,
        format!(
            "{} parameters over {} groups, max relative error {:.2e}",
            report.checked,
            report.per_group.len(),
            report.max_relative_error
        ),
    )
}

fn ranking_consistency() -> Outcome {
    let mut r = common::rng(99);
    let mut cases = 0;
    for _ in 0..100 {
        let n = r.random_range(3..=60);
        let d = r.random_range(1..=12);
        let mut m = common::gaussian(&mut r, n, d);
        let dup = m.row(0).to_vec();
        m.row_mut(n - 1).copy_from_slice(&dup);
        let owners = (0..n as u64).collect();
        let m = match CenteredMatrix::new(m, owners) {
            Ok(m) => m,
            Err(e) => return failed(8, "centering", e),
        };
        let basis = match top_k_singular(&m.rows, 1, &SvdOptions::default()) {
            Ok(b) => b,
            Err(e) => return failed(8, "top_k_singular", e),
        };
        let order = |s: Vec<f64>| -> Vec<u64> {
            let pairs: Vec<(u64, f64)> = s.into_iter().enumerate().map(|(i, x)| (i as u64, x)).collect();
            rank(&pairs).into_iter().map(|p| p.0).collect()
        };
        if order(score_alg1(&m, basis.vector(0))) != order(score_topk(&m, &basis)) {
            return outcome(8, false, format!("rankings differ on a {n}x{d} matrix"));
        }
        cases += 1;
    }
    outcome(8, true, format!("identical rankings on {cases} matrices with duplicated rows"))
}

fn poison_rate() -> Outcome {
    let clean = generate_synthetic(20_000, 123);
    let spec = BackdoorSpec::default();
    let mut rates = Vec::new();
    for seed in 0..10 {
        match poison_dataset(&clean, &spec, seed) {
            Ok(o) => rates.push(o.realized_epsilon),
            Err(e) => return failed(9, "poisoning", e),
        }
    }
    let inside = rates.iter().filter(|r| (0.045..=0.055).contains(*r)).count();
    let shown: Vec<String> = rates.iter().map(|r| format!("{r:.4}")).collect();
    outcome(9, inside >= 9, format!("{inside}/10 seeds in [0.045, 0.055]: {}", shown.join(" ")))
}

fn dead_code() -> Outcome {
    let grammar = TriggerGrammar::default();
    for i in 0..100u64 {
        let snippet = match sample_grammatical_trigger(&grammar, 50_000 + i) {
            Ok(s) => s,
            Err(e) => return failed(10, "sampling", e),
        };
        match verify_dead(&snippet) {
            Ok(true) => {}
            Ok(false) => return outcome(10, false, format!("not provably dead: {}", snippet.source_text)),
            Err(e) => return failed(10, "verify_dead", e),
        }
        let hits = common::draws_where_guard_holds(&snippet.source_text, 100_000, i);
        if hits > 0 {
            return outcome(10, false, format!("{} held on {hits} draws", snippet.source_text));
        }
    }
    outcome(10, true, "100 grammatical triggers dead, none held over 10^5 draws each")
}

fn main() -> ExitCode {
    let keep = std::env::var_os("CODEBACK_ACCEPTANCE_DIR").map(PathBuf::from);
    let temp = tempfile::tempdir().expect("temporary directory");
    let root = keep.unwrap_or_else(|| temp.path().to_path_buf());

    let mut results = vec![
        oracle_equivalence(),
        planted_outliers(),
        gradients(),
        ranking_consistency(),
        poison_rate(),
        dead_code(),
    ];
    attack_and_detection(&root, &mut results);
    results.sort_by_key(|o| o.id);

    let failed: Vec<String> = results.iter().filter(|o| !o.pass).map(|o| o.id.to_string()).collect();
    println!();
    for o in &results {
        println!("{:>2} {} {}", o.id, if o.pass { "PASS" } else { "FAIL" }, o.detail);
    }
    if failed.is_empty() {
        println!("acceptance: all {} criteria passed", results.len());
        ExitCode::SUCCESS
    } else {
        println!("acceptance: failed criteria {}", failed.join(", "));
        if std::env::var_os("CODEBACK_ACCEPTANCE_STRICT").is_some() {
            ExitCode::FAILURE
        } else {
            ExitCode::SUCCESS
        }
    }
}
