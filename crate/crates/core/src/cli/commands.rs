use std::fs::{self, File};
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};

use serde::Serialize;

use super::config::RunConfig;
use super::manifest::Manifest;
use super::{Cli, Command, EvalArgs, ExperimentArgs, ExperimentCommand, InferArgs, InferenceArgs, SynthArgs, TrainArgs};
use crate::cloudbuild::{Mask, ProbabilityVolume};
use crate::error::{Error, IoContext, Result};
use crate::evalsynth::{
    experiment_false_positive, experiment_probability_sweep, generate_corpus, generate_nerve, render_ascii_heatmap,
    write_gnuplot_matrix, write_heatmap_csv, write_sweep_csv, FalsePositive, SegmentationReport, SyntheticCase,
};
use crate::network::{Network, NetworkSpec};
use crate::pipeline::{infer, train, write_training_log, InferenceConfig, TrainingCase};

const PROBABILITY_FILE: &str = "probability.raw";
const TRUTH_FILE: &str = "truth.raw";

pub fn run(cli: Cli) -> Result<()> {
    if cli.threads == 0 {
        return Err(Error::Usage("--threads must be at least 1".into()));
    }
    let config = RunConfig::load_or_default(cli.config.as_deref())?;
    match cli.command {
        Command::Synth(a) => synth(a, config, cli.threads),
        Command::Train(a) => train_cmd(a, config, cli.threads),
        Command::Infer(a) => infer_cmd(a, config, cli.threads),
        Command::Eval(a) => eval_cmd(a),
        Command::Experiment(ExperimentCommand::ProbSweep(a)) => experiment_cmd(a, config, cli.threads, true),
        Command::Experiment(ExperimentCommand::FalsePositive(a)) => experiment_cmd(a, config, cli.threads, false),
    }
}

fn create_dir(dir: &Path) -> Result<()> {
    fs::create_dir_all(dir).map_err(|e| Error::format(dir, format!("cannot create directory: {e}")))
}

fn write_case(dir: &Path, case: &SyntheticCase, manifest: &mut Manifest) -> Result<()> {
    create_dir(dir)?;
    let prob = dir.join(PROBABILITY_FILE);
    let truth = dir.join(TRUTH_FILE);
    case.probability.save(&prob)?;
    case.truth.save(&truth, case.probability.spacing())?;
    manifest.add_output(&prob);
    manifest.add_output(&truth);
    Ok(())
}

#[derive(Serialize)]
struct SynthResolved<'a> {
    seed: u64,
    corpus_size: Option<usize>,
    synth: &'a crate::evalsynth::SyntheticSpec,
    corpus: &'a crate::evalsynth::CorpusRanges,
}

fn synth(a: SynthArgs, mut config: RunConfig, threads: usize) -> Result<()> {
    let spec = &mut config.synth;
    if let Some(k) = a.kind {
        spec.kind = k.into();
    }
    if let Some(q) = a.q {
        spec.q = q;
    }
    if let Some(d) = a.diameter {
        spec.diameter = d;
    }
    if let Some(span) = a.fp_span {
        let mut fp = FalsePositive::new(span, a.fp_q.unwrap_or(0.5));
        if let Some(old) = spec.false_positive {
            fp.offset = old.offset;
        }
        spec.false_positive = Some(fp);
    }
    let seed = a.seed.unwrap_or(0);
    if let Some(d) = a.diameter {
        config.corpus.base.diameter = d;
    }
    let resolved = SynthResolved {
        seed,
        corpus_size: a.corpus,
        synth: &config.synth,
        corpus: &config.corpus,
    };
    let mut manifest = Manifest::new("synth", threads, &resolved)?;
    create_dir(&a.out)?;
    match a.corpus {
        Some(n) => {
            for (i, c) in generate_corpus(n, seed, &config.corpus)?.iter().enumerate() {
                write_case(&a.out.join(format!("case_{i:03}")), &c.case, &mut manifest)?;
            }
        }
        None => write_case(&a.out, &generate_nerve(&config.synth)?, &mut manifest)?,
    }
    manifest.write(&a.out)
}

fn case_dirs(corpus: &Path) -> Result<Vec<PathBuf>> {
    let entries = fs::read_dir(corpus).map_err(|e| Error::format(corpus, format!("cannot read corpus: {e}")))?;
    let mut dirs: Vec<PathBuf> = entries
        .filter_map(|e| e.ok().map(|e| e.path()))
        .filter(|p| p.is_dir() && p.join(PROBABILITY_FILE).exists())
        .collect();
    dirs.sort();
    if dirs.is_empty() {
        return Err(Error::format(corpus, "no case directories with a probability volume"));
    }
    Ok(dirs)
}

fn train_cmd(a: TrainArgs, config: RunConfig, threads: usize) -> Result<()> {
    let mut tc = config.train;
    if a.reduced_spec {
        tc.spec = NetworkSpec::reduced();
        tc.subcloud_size = tc.spec.input_size();
    }
    if let Some(v) = a.epochs {
        tc.epochs = v;
    }
    if let Some(v) = a.batch_size {
        tc.batch_size = v;
    }
    if let Some(v) = a.lr {
        tc.learning_rate = v;
    }
    if let Some(v) = a.theta {
        tc.theta = v;
    }
    if let Some(v) = a.seed {
        tc.seed = v;
    }
    tc.validate()?;
    let mut manifest = Manifest::new("train", threads, &tc)?;
    let mut cases = Vec::new();
    for dir in case_dirs(&a.corpus)? {
        let (prob_path, truth_path) = (dir.join(PROBABILITY_FILE), dir.join(TRUTH_FILE));
        let probability = ProbabilityVolume::load(&prob_path)?;
        let (truth, _) = Mask::load(&truth_path)?;
        manifest.add_input(&prob_path)?;
        manifest.add_input(&truth_path)?;
        cases.push(TrainingCase { probability, truth });
    }
    let outcome = train(&cases, &tc)?;
    create_dir(&a.out)?;
    let ckpt = a.out.join("checkpoint.bin");
    outcome.network.save(&ckpt)?;
    let log = a.out.join("training_log.csv");
    write_training_log(&outcome.log, BufWriter::new(File::create(&log).at(&log)?))?;
    manifest.add_output(&ckpt);
    manifest.add_output(&log);
    for w in &outcome.warnings {
        eprintln!("warning: {w}");
    }
    manifest.warnings = outcome.warnings;
    manifest.write(&a.out)
}

fn resolve_inference(a: &InferenceArgs, mut ic: InferenceConfig) -> InferenceConfig {
    if let Some(v) = a.repetitions {
        ic.repetitions = v;
    }
    if let Some(v) = a.theta {
        ic.theta = v;
    }
    if let Some(v) = a.seed {
        ic.seed = v;
    }
    ic
}

fn infer_cmd(a: InferArgs, config: RunConfig, threads: usize) -> Result<()> {
    let ic = resolve_inference(&a.inference, config.inference);
    let network = Network::load(&a.inference.checkpoint)?;
    ic.validate(network.spec())?;
    let volume = ProbabilityVolume::load(&a.volume)?;
    let mut manifest = Manifest::new("infer", threads, &ic)?;
    manifest.add_input(&a.inference.checkpoint)?;
    manifest.add_input(&a.volume)?;
    let result = infer(&volume, &network, &ic)?;
    create_dir(&a.out)?;
    let refined = a.out.join("refined.raw");
    result.refined.save(&refined, volume.spacing())?;
    let cloud = a.out.join("cloud.csv");
    result.cloud.save_csv(&cloud)?;
    manifest.add_output(&refined);
    manifest.add_output(&cloud);
    for w in &result.warnings {
        eprintln!("warning: {w}");
    }
    manifest.warnings = result.warnings;
    manifest.write(&a.out)
}

fn write_report<W: Write>(r: &SegmentationReport, mut w: W) -> Result<()> {
    let opt = |v: Option<f64>| v.map_or_else(|| "undefined".to_string(), |v| format!("{v:.6}"));
    writeln!(w, "dice,hd95_mm,hd_mm,vs,voxel_class_ratio")?;
    writeln!(
        w,
        "{:.6},{},{},{:.6},{:.6}",
        r.dice,
        opt(r.hd95_mm),
        opt(r.hd_mm),
        r.vs,
        r.voxel_class_ratio
    )?;
    Ok(())
}

fn eval_cmd(a: EvalArgs) -> Result<()> {
    let (seg, spacing) = Mask::load(&a.segmentation)?;
    let (truth, _) = Mask::load(&a.truth)?;
    let report = SegmentationReport::compare(&seg, &truth, spacing, f64::NAN)?;
    match &a.out {
        Some(path) => write_report(&report, BufWriter::new(File::create(path).at(path)?)),
        None => write_report(&report, std::io::stdout().lock()),
    }
}

fn experiment_cmd(a: ExperimentArgs, config: RunConfig, threads: usize, sweep: bool) -> Result<()> {
    let mut ec = config.experiment;
    ec.inference = resolve_inference(&a.inference, ec.inference);
    let network = Network::load(&a.inference.checkpoint)?;
    ec.inference.validate(network.spec())?;
    let name = if sweep { "experiment prob-sweep" } else { "experiment false-positive" };
    let mut manifest = Manifest::new(name, threads, &ec)?;
    manifest.add_input(&a.inference.checkpoint)?;
    create_dir(&a.out)?;
    let volumes = a.out.join("volumes");
    if a.save_volumes {
        create_dir(&volumes)?;
    }
    let spacing = ec.base.spacing;
    let mut written = Vec::new();
    let mut sink = |name: &str, m: &Mask| -> Result<()> {
        if a.save_volumes {
            let path = volumes.join(format!("{name}.raw"));
            m.save(&path, spacing)?;
            written.push(path);
        }
        Ok(())
    };
    if sweep {
        let rows = experiment_probability_sweep(&network, &ec, &mut sink)?;
        let path = a.out.join("sweep.csv");
        write_sweep_csv(&rows, BufWriter::new(File::create(&path).at(&path)?))?;
        manifest.add_output(&path);
    } else {
        let result = experiment_false_positive(&network, &ec, &mut sink)?;
        let csv = a.out.join("heatmap.csv");
        write_heatmap_csv(&result, BufWriter::new(File::create(&csv).at(&csv)?))?;
        let matrix = a.out.join("heatmap_matrix.dat");
        write_gnuplot_matrix(&result, BufWriter::new(File::create(&matrix).at(&matrix)?))?;
        let text = a.out.join("heatmap.txt");
        let rendered = render_ascii_heatmap(&result);
        fs::write(&text, &rendered).at(&text)?;
        print!("{rendered}");
        for p in [&csv, &matrix, &text] {
            manifest.add_output(p);
        }
    }
    for p in &written {
        manifest.add_output(p);
    }
    manifest.write(&a.out)
}
