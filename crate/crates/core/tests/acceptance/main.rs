//! Acceptance suite: one PASS/FAIL line per criterion. Runs without the
//! libtest harness so the lines are always printed, and exits non-zero if
//! any criterion fails.

mod gradients;
mod oracles;

use std::panic::{catch_unwind, AssertUnwindSafe};
use std::time::{Duration, Instant};

use pointrefine::cloudbuild::{threshold_to_cloud, Mask};
use pointrefine::evalsynth::{
    experiment_false_positive, experiment_probability_sweep, generate_corpus, render_ascii_heatmap, write_heatmap_csv,
    write_sweep_csv, CorpusCase, CorpusRanges, ExperimentConfig, FalsePositiveResult, SweepRow,
};
use pointrefine::network::{BatchInput, Network, NetworkSpec};
use pointrefine::pipeline::{infer, train, InferenceConfig, TrainConfig, TrainingCase};
use pointrefine::seed;
use rand::Rng;
use sha2::{Digest, Sha256};

const CORPUS_CASES: usize = 20;
const CORPUS_SEED: u64 = 7;
const TRAIN_SEED: u64 = 1;
const EPOCHS: usize = 10;
/// Cover-mode repetitions per experiment case.
const REPETITIONS: usize = 3;
const IMBALANCE_FACTOR: f64 = 50.0;
const MEAN_DICE: f64 = 0.90;
const MIN_DICE: f64 = 0.5;
const SHORT_SPAN: usize = 9;
const REMOVED_FRACTION: f64 = 0.90;
const SOFTMAX_CALLS: u64 = 1000;

type Outcome = Result<String, String>;

fn within(limit: Duration, started: Instant) -> Result<String, String> {
    let t = started.elapsed();
    if t <= limit {
        Ok(format!("{:.1}s", t.as_secs_f64()))
    } else {
        Err(format!("took {:.1}s, limit {}s", t.as_secs_f64(), limit.as_secs()))
    }
}

fn panic_text(e: Box<dyn std::any::Any + Send>) -> String {
    e.downcast_ref::<String>()
        .cloned()
        .or_else(|| e.downcast_ref::<&str>().map(|s| s.to_string()))
        .unwrap_or_else(|| "panic".into())
}

fn gradient_checks() -> Outcome {
    let t = Instant::now();
    gradients::dense_matmul_and_elementwise();
    gradients::activations();
    gradients::shape_ops();
    gradients::convolution_and_pooling();
    gradients::batch_norm_train_and_eval();
    gradients::single_xconv_layer();
    gradients::reduced_network_end_to_end();
    within(Duration::from_secs(120), t)
}

fn geometry_oracles() -> Outcome {
    let t = Instant::now();
    oracles::fps_matches_greedy_oracle();
    oracles::knn_matches_exhaustive_sort();
    oracles::hd95_matches_all_pairs_oracle();
    within(Duration::from_secs(60), t)
}

fn imbalance_reduction() -> Outcome {
    let t = Instant::now();
    let corpus = generate_corpus(CORPUS_CASES, CORPUS_SEED, &CorpusRanges::default()).map_err(|e| e.to_string())?;
    let mut worst = f64::INFINITY;
    for (i, c) in corpus.iter().enumerate() {
        let truth = &c.case.truth;
        let cloud = threshold_to_cloud(&c.case.probability, 0.1).map_err(|e| format!("case {i}: {e}"))?;
        let fg = cloud.points.iter().filter(|p| truth.get(p[0] as usize, p[1] as usize, p[2] as usize)).count();
        let factor = (fg as f64 / cloud.len() as f64) / (truth.count() as f64 / truth.values.len() as f64);
        if factor < IMBALANCE_FACTOR {
            return Err(format!("case {i}: foreground enrichment {factor:.1} < {IMBALANCE_FACTOR}"));
        }
        worst = worst.min(factor);
    }
    Ok(format!("minimum enrichment {worst:.1}x over {} cases, {}", corpus.len(), within(Duration::from_secs(30), t)?))
}

/// Everything criteria 4-6 compare between two runs.
struct Run {
    network: Network,
    corpus: Vec<CorpusCase>,
    train_seconds: f64,
    checkpoint: Vec<u8>,
    log: String,
    sweep: Vec<SweepRow>,
    sweep_csv: Vec<u8>,
    heatmap: FalsePositiveResult,
    heatmap_csv: Vec<u8>,
    volumes: Vec<(String, Vec<u8>)>,
}

fn experiment_config() -> ExperimentConfig {
    let mut ec = ExperimentConfig::default();
    ec.inference.repetitions = REPETITIONS;
    ec
}

fn run_experiments() -> pointrefine::Result<Run> {
    let corpus = generate_corpus(CORPUS_CASES, CORPUS_SEED, &CorpusRanges::default())?;
    let cases: Vec<TrainingCase> = corpus
        .iter()
        .map(|c| TrainingCase {
            probability: c.case.probability.clone(),
            truth: c.case.truth.clone(),
        })
        .collect();
    let config = TrainConfig {
        epochs: EPOCHS,
        seed: TRAIN_SEED,
        ..TrainConfig::for_spec(NetworkSpec::reduced())
    };
    let t = Instant::now();
    let outcome = train(&cases, &config)?;
    let train_seconds = t.elapsed().as_secs_f64();
    let mut log = String::new();
    for r in &outcome.log {
        log += &format!("{},{:e},{:e}\n", r.epoch, r.mean_loss, r.point_accuracy);
    }
    let dir = tempfile::tempdir()?;
    let path = dir.path().join("checkpoint.bin");
    outcome.network.save(&path)?;
    let checkpoint = std::fs::read(&path)?;

    let ec = experiment_config();
    let mut volumes = Vec::new();
    let mut sink = |name: &str, m: &Mask| -> pointrefine::Result<()> {
        let bits: Vec<u8> = m.values.iter().map(|&v| u8::from(v)).collect();
        volumes.push((name.to_string(), Sha256::digest(&bits).to_vec()));
        Ok(())
    };
    let sweep = experiment_probability_sweep(&outcome.network, &ec, &mut sink)?;
    let heatmap = experiment_false_positive(&outcome.network, &ec, &mut sink)?;
    let mut sweep_csv = Vec::new();
    write_sweep_csv(&sweep, &mut sweep_csv)?;
    let mut heatmap_csv = Vec::new();
    write_heatmap_csv(&heatmap, &mut heatmap_csv)?;
    Ok(Run {
        network: outcome.network,
        corpus,
        train_seconds,
        checkpoint,
        log,
        sweep,
        sweep_csv,
        heatmap,
        heatmap_csv,
        volumes,
    })
}

fn probability_sweep(run: &Run) -> Outcome {
    print!("{}", String::from_utf8_lossy(&run.sweep_csv));
    if run.train_seconds > 1800.0 {
        return Err(format!("training took {:.0}s, limit 1800s", run.train_seconds));
    }
    let dice: Vec<f64> = run.sweep.iter().map(|r| r.refined.dice).collect();
    let mean = dice.iter().sum::<f64>() / dice.len() as f64;
    let (min_at, min) = dice.iter().enumerate().fold((0, f64::INFINITY), |b, (i, &d)| if d < b.1 { (i, d) } else { b });
    let summary = format!(
        "mean Dice {mean:.4}, minimum {min:.4} over {} cases, training {:.0}s",
        dice.len(),
        run.train_seconds
    );
    if mean < MEAN_DICE || min <= MIN_DICE {
        let r = &run.sweep[min_at];
        return Err(format!("{summary} (worst {:?} q {})", r.kind, r.q));
    }
    Ok(summary)
}

fn false_positive_heatmap(run: &Run) -> Outcome {
    let h = &run.heatmap;
    print!("{}", render_ascii_heatmap(h));
    let base = h.baseline.hd_mm.ok_or("baseline refinement is empty")?;
    let tol = experiment_config().base.spacing.iter().copied().fold(0.0, f64::max);
    let removed = |long: bool| {
        let cells: Vec<_> = h.cells.iter().filter(|c| (c.span > SHORT_SPAN) == long).collect();
        let ok = cells.iter().filter(|c| c.report.hd_mm.is_some_and(|hd| (hd - base).abs() <= tol)).count();
        let mean_hd = cells.iter().map(|c| c.report.hd_mm.unwrap_or(f64::INFINITY)).sum::<f64>() / cells.len() as f64;
        (ok as f64 / cells.len() as f64, mean_hd)
    };
    let (short, short_hd) = removed(false);
    let (long, long_hd) = removed(true);
    let summary = format!(
        "span <= {SHORT_SPAN}: {:.0}% of cells at baseline HD {base:.2} mm (+-{tol} mm), mean HD {short_hd:.2} mm; \
         longer spans: {:.0}%, mean HD {long_hd:.2} mm",
        100.0 * short,
        100.0 * long
    );
    if short < REMOVED_FRACTION {
        return Err(summary);
    }
    if !(long_hd > short_hd && long <= short) {
        return Err(format!("{summary}: difficulty does not grow with span"));
    }
    Ok(summary)
}

fn determinism(first: &Run) -> Outcome {
    let second = run_experiments().map_err(|e| e.to_string())?;
    let mut diffs = Vec::new();
    if first.checkpoint != second.checkpoint {
        diffs.push("checkpoint".to_string());
    }
    if first.log != second.log {
        diffs.push("training log".into());
    }
    if first.sweep_csv != second.sweep_csv {
        diffs.push("sweep table".into());
    }
    if first.heatmap_csv != second.heatmap_csv {
        diffs.push("heat-map table".into());
    }
    if first.volumes.len() != second.volumes.len() {
        diffs.push("volume count".into());
    }
    for (a, b) in first.volumes.iter().zip(&second.volumes) {
        if a != b {
            diffs.push(format!("volume {}", a.0));
        }
    }
    if diffs.is_empty() {
        Ok(format!(
            "checkpoint ({} bytes), tables and {} refined volumes identical",
            first.checkpoint.len(),
            first.volumes.len()
        ))
    } else {
        Err(format!("differs: {}", diffs.join(", ")))
    }
}

fn pipeline_invariants(run: &Run) -> Outcome {
    let config = InferenceConfig {
        repetitions: REPETITIONS,
        seed: 11,
        ..InferenceConfig::default()
    };
    let mut points = 0;
    for (i, c) in run.corpus.iter().take(3).enumerate() {
        let res = infer(&c.case.probability, &run.network, &config).map_err(|e| e.to_string())?;
        let labels = res.cloud.labels.as_ref().ok_or("no labels")?;
        if labels.len() != res.cloud.len() {
            return Err(format!("case {i}: {} of {} points labeled", labels.len(), res.cloud.len()));
        }
        let mut in_cloud = Mask::empty(res.refined.shape);
        for p in &res.cloud.points {
            let at = in_cloud.index(p[0] as usize, p[1] as usize, p[2] as usize);
            in_cloud.values[at] = true;
        }
        if res.refined.values.iter().zip(&in_cloud.values).any(|(&r, &c)| r && !c) {
            return Err(format!("case {i}: refined voxel outside the cloud"));
        }
        points += labels.len();
    }

    let spec = run.network.spec();
    let (n, cube) = (spec.input_size(), spec.patch_size.pow(3));
    let mut worst: f64 = 0.0;
    for call in 0..SOFTMAX_CALLS {
        let mut rng = seed::rng_at(12, &[call]);
        let input = BatchInput {
            points: vec![(0..n).map(|_| [0, 1, 2].map(|_| rng.random_range(-1.0..1.0))).collect()],
            patches: (0..n * cube).map(|_| rng.random_range(-3.0..3.0)).collect(),
        };
        let probs = run.network.predict(&input, call).map_err(|e| e.to_string())?;
        for row in probs.chunks(spec.num_classes) {
            worst = worst.max((row.iter().sum::<f64>() - 1.0).abs());
        }
    }
    if worst > 1e-12 {
        return Err(format!("softmax row sum off by {worst:e}"));
    }
    Ok(format!(
        "{points} cloud points labeled, refined within cloud; {SOFTMAX_CALLS} forwards, max row-sum error {worst:.1e}"
    ))
}

fn main() {
    let mut failed = 0;
    let mut report = |n: usize, name: &str, outcome: std::thread::Result<Outcome>| {
        let outcome = outcome.unwrap_or_else(|e| Err(panic_text(e)));
        match outcome {
            Ok(detail) => println!("PASS [{n}] {name}: {detail}"),
            Err(detail) => {
                failed += 1;
                println!("FAIL [{n}] {name}: {detail}");
            }
        }
    };
    report(1, "gradient correctness", catch_unwind(gradient_checks));
    report(2, "geometry oracle equivalence", catch_unwind(geometry_oracles));
    report(3, "imbalance reduction", catch_unwind(imbalance_reduction));

    let t = Instant::now();
    let first = catch_unwind(run_experiments);
    println!("experiments run in {:.0}s", t.elapsed().as_secs_f64());
    match first {
        Ok(Ok(run)) => {
            report(4, "probability sweep", catch_unwind(AssertUnwindSafe(|| probability_sweep(&run))));
            report(5, "false-positive heat map", catch_unwind(AssertUnwindSafe(|| false_positive_heatmap(&run))));
            report(6, "determinism", catch_unwind(AssertUnwindSafe(|| determinism(&run))));
            report(7, "pipeline invariants", catch_unwind(AssertUnwindSafe(|| pipeline_invariants(&run))));
        }
        other => {
            let why = match other {
                Ok(Err(e)) => e.to_string(),
                Err(e) => panic_text(e),
                Ok(Ok(_)) => unreachable!(),
            };
            for (n, name) in [(4, "probability sweep"), (5, "false-positive heat map"), (6, "determinism"), (7, "pipeline invariants")] {
                report(n, name, Ok(Err(format!("experiments failed: {why}"))));
            }
        }
    }
    if failed > 0 {
        println!("{failed} acceptance criteria failed");
        std::process::exit(1);
    }
    println!("all acceptance criteria passed");
}
