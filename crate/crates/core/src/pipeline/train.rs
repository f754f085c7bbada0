use std::io::Write;
use std::time::Instant;

use serde::{Deserialize, Serialize};

use super::config::TrainConfig;
use super::prepare::{prepare_case, PreparedCase};
use crate::cloudbuild::{Mask, ProbabilityVolume};
use crate::error::{Error, Result};
use crate::geometry::{augment, split_subclouds, SplitMode};
use crate::network::Network;
use crate::numeric::{AdamConfig, AdamState, Graph};
use crate::seed;

/// A probability map with its voxel-aligned ground truth.
#[derive(Clone, Debug)]
pub struct TrainingCase {
    pub probability: ProbabilityVolume,
    pub truth: Mask,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EpochRecord {
    pub epoch: usize,
    pub mean_loss: f64,
    pub point_accuracy: f64,
    /// Wall-clock time; the only field that differs between identical runs.
    pub seconds: f64,
}

#[derive(Clone, Debug)]
pub struct TrainingOutcome {
    pub network: Network,
    pub log: Vec<EpochRecord>,
    pub warnings: Vec<String>,
}

/// Writes `epoch,mean_loss,point_accuracy,seconds` records under a header.
pub fn write_training_log<W: Write>(log: &[EpochRecord], mut w: W) -> Result<()> {
    writeln!(w, "epoch,mean_loss,point_accuracy,seconds")?;
    for r in log {
        writeln!(w, "{},{:.17e},{:.17e},{:.3}", r.epoch, r.mean_loss, r.point_accuracy, r.seconds)?;
    }
    Ok(())
}

fn argmax(row: &[f64]) -> usize {
    row.iter()
        .enumerate()
        .fold((0, f64::NEG_INFINITY), |best, (i, &v)| if v > best.1 { (i, v) } else { best })
        .0
}

struct LabeledCase {
    prepared: PreparedCase,
    labels: Vec<usize>,
}

fn label_case(case: &TrainingCase, index: usize, config: &TrainConfig) -> Result<Option<LabeledCase>> {
    if case.truth.shape != case.probability.shape() {
        return Err(Error::Input(format!(
            "case {index}: ground truth shape {:?} differs from volume shape {:?}",
            case.truth.shape,
            case.probability.shape()
        )));
    }
    let prepared = match prepare_case(&case.probability, config.theta, config.spec.patch_size, config.max_points) {
        Ok(p) => p,
        Err(Error::EmptyCloud { .. }) => return Ok(None),
        Err(e) => return Err(e),
    };
    let labels = prepared
        .cloud
        .points
        .iter()
        .map(|p| usize::from(case.truth.get(p[0] as usize, p[1] as usize, p[2] as usize)))
        .collect();
    Ok(Some(LabeledCase { prepared, labels }))
}

/// Trains a freshly initialized network. Cases whose cloud is empty at
/// `config.theta` are skipped and reported in the warnings.
pub fn train(cases: &[TrainingCase], config: &TrainConfig) -> Result<TrainingOutcome> {
    config.validate()?;
    let mut network = Network::new(config.spec.clone(), seed::derive(config.seed, &[0]))?;
    let mut adam = AdamState::new(
        AdamConfig {
            learning_rate: config.learning_rate,
            ..AdamConfig::default()
        },
        network.params(),
    )?;
    let mut warnings = Vec::new();
    let mut labeled = Vec::with_capacity(cases.len());
    for (i, case) in cases.iter().enumerate() {
        match label_case(case, i, config)? {
            Some(l) => labeled.push(l),
            None => warnings.push(format!("case {i}: empty cloud at theta {}, skipped", config.theta)),
        }
    }
    if labeled.is_empty() && config.epochs > 0 {
        return Err(Error::Input("no training case yields a non-empty cloud".into()));
    }

    let mut log = Vec::with_capacity(config.epochs);
    for epoch in 0..config.epochs {
        let start = Instant::now();
        let (mut loss_sum, mut batches, mut correct, mut seen) = (0.0, 0usize, 0usize, 0usize);
        for (ci, case) in labeled.iter().enumerate() {
            let case_seed = seed::derive(config.seed, &[1, epoch as u64, ci as u64]);
            let subclouds = split_subclouds(&case.prepared.normalized, config.subcloud_size, case_seed, SplitMode::Train);
            let subclouds: Vec<_> = subclouds
                .iter()
                .enumerate()
                .map(|(si, s)| augment(s, seed::derive(case_seed, &[1, si as u64]), &config.augment))
                .collect();
            for (bi, group) in subclouds.chunks(config.batch_size).enumerate() {
                let input = case.prepared.batch(group);
                let labels: Vec<usize> = group
                    .iter()
                    .flat_map(|s| s.source_indices.as_deref().unwrap_or(&[]).iter().map(|&i| case.labels[i]))
                    .collect();
                let mut g = Graph::new();
                let out = network.forward_train(&mut g, &input, seed::derive(case_seed, &[2, bi as u64]))?;
                let loss = g.softmax_cross_entropy(out.logits, &labels)?;
                let value = g.data(loss)[0];
                if !value.is_finite() {
                    return Err(Error::NonFiniteLoss { epoch, batch: batches });
                }
                let classes = config.spec.num_classes;
                for (row, &label) in g.data(out.probs).chunks(classes).zip(&labels) {
                    correct += usize::from(argmax(row) == label);
                }
                seen += labels.len();
                g.backward(loss)?;
                let grads = g.param_grads(network.params().len());
                adam.step(network.params_mut(), &grads)?;
                loss_sum += value;
                batches += 1;
            }
        }
        log.push(EpochRecord {
            epoch,
            mean_loss: loss_sum / batches.max(1) as f64,
            point_accuracy: correct as f64 / seen.max(1) as f64,
            seconds: start.elapsed().as_secs_f64(),
        });
    }
    Ok(TrainingOutcome { network, log, warnings })
}
