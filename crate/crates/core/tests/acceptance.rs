//! End-to-end acceptance run: prints one PASS/FAIL line per criterion.
//!
//! `ACCEPTANCE_ONLY=1,4,9` runs a subset. Failures are reported but the
//! process exits 0 unless `ACCEPTANCE_STRICT=1` is set.

use std::path::{Path, PathBuf};
use std::time::Instant;

use dispatcher::bench::{self, BenchOptions, BenchRecord};
use dispatcher::checks::{self, CheckOutcome};
use dispatcher::corpus::{unigram_perplexity, Corpus, TokenizerMode};
use dispatcher::model::perplexity;
use dispatcher::trainer::{train, TokenBatch, TrainConfig, Trainer};
use dispatcher::{LayerKind, LmModel, ModelConfig, Result};

const SWEEP: [usize; 6] = [128, 256, 512, 1024, 2048, 4096];
const KINDS: [LayerKind; 2] = [LayerKind::Dispatcher, LayerKind::Msa];

struct Verdict {
    passed: bool,
    detail: String,
}

fn verdict(passed: bool, detail: impl Into<String>) -> Verdict {
    Verdict {
        passed,
        detail: detail.into(),
    }
}

fn from_checks(outcomes: &[CheckOutcome], budget: f64) -> Verdict {
    let seconds: f64 = outcomes.iter().map(|o| o.seconds).sum();
    let details: Vec<String> = outcomes.iter().map(|o| format!("{}: {}", o.name, o.detail)).collect();
    verdict(
        outcomes.iter().all(|o| o.passed) && seconds < budget,
        format!("{} (budget {budget:.0}s)", details.join("; ")),
    )
}

fn corpus_prefix() -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("data/classics")
}

fn scratch(name: &str) -> PathBuf {
    let dir = Path::new(env!("CARGO_TARGET_TMPDIR")).join("acceptance").join(name);
    std::fs::create_dir_all(&dir).expect("scratch directory");
    dir
}

fn sweep_config(kind: LayerKind) -> ModelConfig {
    ModelConfig {
        layer_kind: kind,
        d_model: 128,
        d_inner: 128,
        n_layers: 2,
        n_heads: 1,
        max_seq: 4096,
        vocab_size: 64,
        dropout_p: 0.0,
        row_dropout_p: None,
        seed: 0,
    }
}

fn causality() -> Result<Verdict> {
    let outcomes = KINDS
        .iter()
        .map(|&k| checks::causality_probe(k, &checks::CAUSALITY_LENGTHS, 20, 1))
        .collect::<Result<Vec<_>>>()?;
    Ok(from_checks(&outcomes, 60.0))
}

fn oracle() -> Result<Verdict> {
    Ok(from_checks(&[checks::oracle_equivalence(&checks::ORACLE_LENGTHS, 2)?], 60.0))
}

fn gradients() -> Result<Verdict> {
    Ok(from_checks(&[checks::gradient_suite(3)?], 300.0))
}

fn within(actual: u64, expected: u64, tol: f64) -> bool {
    (actual as f64 - expected as f64).abs() <= tol * expected as f64
}

fn scaling() -> Result<Verdict> {
    let start = Instant::now();
    let opts = BenchOptions::default();
    let mut notes = Vec::new();
    let mut passed = true;
    for kind in KINDS {
        let records: Vec<BenchRecord> = bench::bench_step_time(&sweep_config(kind), &SWEEP, &opts)?;
        let slope = bench::fit_scaling_exponent(&records)?;
        let times: Vec<String> = records.iter().map(|r| format!("{}:{:.3}", r.n, r.mean_step_seconds)).collect();
        let (macs_ok, slope_ok) = match kind {
            LayerKind::Dispatcher => (
                records.iter().all(|r| within(r.counted_macs, bench::dispatcher_mixing_macs(r.n, 128, 2, 4), 0.05)),
                slope < 1.4,
            ),
            LayerKind::Msa => (
                records.iter().all(|r| within(r.counted_macs, bench::msa_mixing_macs(r.n, 128, 2, 4), 0.05))
                    && records.windows(2).all(|w| within(w[1].counted_macs, 4 * w[0].counted_macs, 0.05)),
                slope > 1.7,
            ),
        };
        passed &= macs_ok && slope_ok;
        notes.push(format!(
            "{kind} exponent {slope:.3} (need {}) {}, MACs match closed form: {macs_ok}, step seconds [{}]",
            if kind == LayerKind::Dispatcher { "< 1.4" } else { "> 1.7" },
            if slope_ok { "ok" } else { "MISSED" },
            times.join(" ")
        ));
    }
    let seconds = start.elapsed().as_secs_f64();
    Ok(verdict(passed && seconds < 1800.0, format!("{}; {seconds:.0}s of 1800s", notes.join("; "))))
}

fn memory() -> Result<Verdict> {
    let mut notes = Vec::new();
    let mut passed = true;
    for kind in KINDS {
        let records = bench::memory_report(&sweep_config(kind), &SWEEP, 4, 0)?;
        let points: Vec<(f64, f64)> = records.iter().map(|r| (r.n as f64, r.peak_tensor_bytes as f64)).collect();
        let exponent = bench::fit_log_log(&points)?;
        let mb: Vec<String> = records.iter().map(|r| format!("{}:{:.1}", r.n, r.peak_tensor_bytes as f64 / 1e6)).collect();
        match kind {
            LayerKind::Dispatcher => {
                let fit = bench::linear_fit(&points)?;
                let ok = fit.max_rel_residual < 0.10 && exponent < 1.15;
                passed &= ok;
                notes.push(format!(
                    "dispatcher linear fit max residual {:.2}% (need < 10%), exponent {exponent:.3} (need < 1.15) {}",
                    100.0 * fit.max_rel_residual,
                    if ok { "ok" } else { "MISSED" }
                ));
            }
            LayerKind::Msa => {
                let ratios: Vec<f64> = records
                    .windows(2)
                    .filter(|w| w[0].n >= 1024)
                    .map(|w| w[1].peak_tensor_bytes as f64 / w[0].peak_tensor_bytes as f64)
                    .collect();
                let ok = exponent > 1.6;
                passed &= ok;
                notes.push(format!(
                    "msa exponent {exponent:.3} (need > 1.6) {}, doubling ratios from N=1024 {:?}",
                    if ok { "ok" } else { "MISSED" },
                    ratios.iter().map(|r| format!("{r:.2}")).collect::<Vec<_>>()
                ));
            }
        }
        notes.push(format!("{kind} peak MB [{}]", mb.join(" ")));
    }
    Ok(verdict(passed, notes.join("; ")))
}

fn dropout() -> Result<Verdict> {
    let limits = checks::row_dropout_limits(4)?;
    let config = |p: f64| ModelConfig {
        row_dropout_p: Some(p),
        ..sweep_config(LayerKind::Dispatcher)
    };
    let opts = BenchOptions {
        // Step times jitter by about 15%, several times the expected saving.
        repeats: 150,
        warmup: 2,
        ..BenchOptions::default()
    };
    let times = bench::interleaved_step_times(&[config(0.0), config(0.5)], 2048, &opts)?;
    let (full, dropped) = (&times[0], &times[1]);
    let mean = |xs: &[f64]| xs.iter().sum::<f64>() / xs.len() as f64;
    let median = |xs: &[f64]| {
        let mut s = xs.to_vec();
        s.sort_by(f64::total_cmp);
        s[s.len() / 2]
    };
    let (t0, t5) = (mean(full), mean(dropped));
    Ok(verdict(
        limits.passed && t5 < t0,
        format!(
            "{}; {} interleaved steps at N=2048: mean p=0 {t0:.3}s, p=0.5 {t5:.3}s (medians {:.3}s, {:.3}s)",
            limits.detail,
            full.len(),
            median(full),
            median(dropped)
        ),
    ))
}

fn parity() -> Result<Verdict> {
    let start = Instant::now();
    let corpus = Corpus::load(&corpus_prefix(), TokenizerMode::Char, 1, None, None)?;
    let test = corpus.test.as_ref().expect("bundled test split");
    let valid = corpus.valid.as_ref().map(|v| v.ids.as_slice());
    let unigram = unigram_perplexity(&corpus.train.ids, &test.ids, corpus.vocab.len());
    let mut ppls = Vec::new();
    for kind in KINDS {
        let dir = scratch(&format!("parity-{kind}"));
        let model = LmModel::new(ModelConfig {
            layer_kind: kind,
            vocab_size: corpus.vocab.len(),
            ..ModelConfig::default()
        })?;
        let cfg = TrainConfig {
            checkpoint_path: Some(dir.join("model.ckpt")),
            loss_log: Some(dir.join("loss.csv")),
            ..TrainConfig::default()
        };
        let report = train(&model, &corpus.train.ids, valid, &cfg)?;
        let ppl = perplexity(&model, &test.ids)?;
        eprintln!(
            "  {kind}: {} parameters, {} steps in {:.0}s, valid {:?}, test perplexity {ppl:.3}",
            model.parameter_count(),
            report.losses.len(),
            report.seconds,
            report.evals
        );
        ppls.push(ppl);
    }
    let (d, m) = (ppls[0], ppls[1]);
    let gap = (d - m).abs() / d.min(m);
    let seconds = start.elapsed().as_secs_f64();
    Ok(verdict(
        d < unigram && m < unigram && gap < 0.25 && seconds < 7200.0,
        format!(
            "{} train chars, test perplexity dispatcher {d:.3}, msa {m:.3}, unigram {unigram:.3}, gap {:.1}% (need < 25%); {seconds:.0}s of 7200s",
            corpus.train.ids.len(),
            100.0 * gap
        ),
    ))
}

fn overfit() -> Result<Verdict> {
    let mut notes = Vec::new();
    let mut passed = true;
    for kind in KINDS {
        let model = LmModel::new(ModelConfig {
            layer_kind: kind,
            d_model: 32,
            d_inner: 64,
            n_layers: 2,
            n_heads: 2,
            max_seq: 32,
            vocab_size: 20,
            dropout_p: 0.0,
            row_dropout_p: None,
            seed: 3,
        })?;
        let ids: Vec<usize> = (0..34).map(|i| (i * 7 + i / 5) % 20).collect();
        let batch = TokenBatch::from_windows(&[&ids[..17], &ids[17..]])?;
        let mut trainer = Trainer::new(
            &model,
            TrainConfig {
                steps: 500,
                warmup_steps: 20,
                learning_rate: 3e-3,
                ..TrainConfig::default()
            },
        )?;
        let mut reached = None;
        let mut last = f64::NAN;
        for step in 1..=500 {
            last = trainer.step(&model, &batch)?.loss;
            if last < 0.1 {
                reached = Some(step);
                break;
            }
        }
        passed &= reached.is_some();
        notes.push(match reached {
            Some(step) => format!("{kind} below 0.1 at step {step}"),
            None => format!("{kind} still at {last:.4} after 500 steps"),
        });
    }
    Ok(verdict(passed, notes.join("; ")))
}

fn determinism() -> Result<Verdict> {
    let corpus = Corpus::load(&corpus_prefix(), TokenizerMode::Char, 1, None, None)?;
    let valid = &corpus.valid.as_ref().expect("bundled valid split").ids;
    let test = &corpus.test.as_ref().expect("bundled test split").ids;
    let mut notes = Vec::new();
    let mut passed = true;
    for kind in KINDS {
        let run = |tag: &str| -> Result<(Vec<u64>, Vec<u8>, Vec<u64>)> {
            let dir = scratch(&format!("determinism-{kind}-{tag}"));
            let model = LmModel::new(ModelConfig {
                layer_kind: kind,
                d_model: 32,
                d_inner: 64,
                n_layers: 2,
                n_heads: 2,
                max_seq: 64,
                vocab_size: corpus.vocab.len(),
                seed: 17,
                ..ModelConfig::default()
            })?;
            let cfg = TrainConfig {
                batch_size: 4,
                seq_len: 64,
                steps: 150,
                warmup_steps: 20,
                eval_every: 50,
                seed: 17,
                checkpoint_path: Some(dir.join("model.ckpt")),
                ..TrainConfig::default()
            };
            let report = train(&model, &corpus.train.ids, Some(valid), &cfg)?;
            let mut ppls: Vec<u64> = report.evals.iter().map(|e| e.1.to_bits()).collect();
            ppls.push(perplexity(&model, test)?.to_bits());
            Ok((
                report.losses.iter().map(|l| l.to_bits()).collect(),
                std::fs::read(dir.join("model.ckpt")).expect("checkpoint written"),
                ppls,
            ))
        };
        let (a, b) = (run("a")?, run("b")?);
        let same = (a.0 == b.0, a.1 == b.1, a.2 == b.2);
        passed &= same.0 && same.1 && same.2;
        notes.push(format!(
            "{kind}: losses {}, checkpoints {}, perplexities {}",
            if same.0 { "identical" } else { "DIFFER" },
            if same.1 { "identical" } else { "DIFFER" },
            if same.2 { "identical" } else { "DIFFER" }
        ));
    }
    Ok(verdict(passed, notes.join("; ")))
}

type Criterion = (u32, &'static str, fn() -> Result<Verdict>);

fn main() {
    let criteria: [Criterion; 9] = [
        (1, "causality", causality),
        (2, "oracle equivalence", oracle),
        (3, "gradient checks", gradients),
        (4, "scaling", scaling),
        (5, "memory", memory),
        (6, "dropout", dropout),
        (7, "training parity", parity),
        (8, "overfit one batch", overfit),
        (9, "determinism", determinism),
    ];
    let only: Option<Vec<u32>> = std::env::var("ACCEPTANCE_ONLY")
        .ok()
        .map(|s| s.split(',').filter_map(|t| t.trim().parse().ok()).collect());
    let strict = std::env::var("ACCEPTANCE_STRICT").is_ok_and(|v| v == "1");
    let (mut ran, mut failed) = (0, 0);
    for (id, name, run) in criteria {
        if only.as_ref().is_some_and(|o| !o.contains(&id)) {
            continue;
        }
        let start = Instant::now();
        let v = run().unwrap_or_else(|e| verdict(false, format!("error: {e}")));
        ran += 1;
        failed += usize::from(!v.passed);
        println!(
            "criterion {id} {}: {name}: {} [{:.1}s]",
            if v.passed { "PASS" } else { "FAIL" },
            v.detail,
            start.elapsed().as_secs_f64()
        );
    }
    println!("acceptance: {} of {ran} criteria passed", ran - failed);
    if strict && failed > 0 {
        std::process::exit(1);
    }
}
