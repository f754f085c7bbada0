use serde::{Deserialize, Serialize};

use super::config::InferenceConfig;
use super::prepare::prepare_case;
use crate::cloudbuild::{cloud_to_volume, Mask, ProbabilityVolume};
use crate::error::{Error, Result};
use crate::evalsynth::SegmentationReport;
use crate::geometry::{split_subclouds, PointCloud, SplitMode};
use crate::network::Network;
use crate::seed;

#[derive(Clone, Debug)]
pub struct InferenceResult {
    /// Thresholded cloud in voxel coordinates with final labels and mean
    /// per-repetition foreground probabilities in `probs`.
    pub cloud: PointCloud,
    /// Foreground votes per point out of `repetitions`.
    pub votes: Vec<u32>,
    pub repetitions: usize,
    pub refined: Mask,
    pub warnings: Vec<String>,
}

/// Final label from `votes` foreground votes out of `repetitions`; an even
/// split goes to foreground when the mean probability is at least 0.5.
pub fn majority_vote(votes: u32, repetitions: usize, mean_probability: f64) -> bool {
    let (fg, bg) = (votes as usize, repetitions - votes as usize);
    match fg.cmp(&bg) {
        std::cmp::Ordering::Greater => true,
        std::cmp::Ordering::Less => false,
        std::cmp::Ordering::Equal => mean_probability >= 0.5,
    }
}

/// Labels every point of the thresholded cloud by majority over
/// `config.repetitions` independent cover-mode passes.
pub fn infer(volume: &ProbabilityVolume, network: &Network, config: &InferenceConfig) -> Result<InferenceResult> {
    let spec = network.spec();
    config.validate(spec)?;
    let shape = volume.shape();
    let prepared = match prepare_case(volume, config.theta, spec.patch_size, config.max_points) {
        Ok(p) => p,
        Err(Error::EmptyCloud { theta, max_prob }) => {
            return Ok(InferenceResult {
                cloud: PointCloud::new(Vec::new(), crate::geometry::Space::Voxel),
                votes: Vec::new(),
                repetitions: config.repetitions,
                refined: Mask::empty(shape),
                warnings: vec![format!(
                    "no voxel above theta {theta} (maximum probability {max_prob}); nothing to refine"
                )],
            })
        }
        Err(e) => return Err(e),
    };
    let n = prepared.cloud.len();
    let classes = spec.num_classes;
    let subsize = spec.input_size();
    let mut votes = vec![0u32; n];
    let mut prob_sum = vec![0.0; n];
    let mut rep_sum = vec![0.0; n];
    let mut rep_count = vec![0u32; n];
    for r in 0..config.repetitions {
        let rep_seed = seed::derive(config.seed, &[r as u64]);
        rep_sum.fill(0.0);
        rep_count.fill(0);
        let subclouds = split_subclouds(&prepared.normalized, subsize, rep_seed, SplitMode::Cover);
        for (bi, group) in subclouds.chunks(config.batch_size).enumerate() {
            let probs = network.predict(&prepared.batch(group), seed::derive(rep_seed, &[bi as u64]))?;
            let sources = group.iter().flat_map(|s| s.source_indices.as_deref().unwrap_or(&[]).iter());
            for (row, &i) in probs.chunks(classes).zip(sources) {
                rep_sum[i] += row[1];
                rep_count[i] += 1;
            }
        }
        for i in 0..n {
            if rep_count[i] == 0 {
                return Err(Error::State(format!("repetition {r} left point {i} unclassified")));
            }
            let p = rep_sum[i] / f64::from(rep_count[i]);
            prob_sum[i] += p;
            votes[i] += u32::from(p > 0.5);
        }
    }
    let reps = config.repetitions as f64;
    let mean: Vec<f64> = prob_sum.iter().map(|s| s / reps).collect();
    let labels: Vec<u8> = (0..n)
        .map(|i| u8::from(majority_vote(votes[i], config.repetitions, mean[i])))
        .collect();
    let cloud = prepared.cloud.with_probs(mean)?.with_labels(labels)?;
    let refined = cloud_to_volume(&cloud, shape)?;
    Ok(InferenceResult {
        cloud,
        votes,
        repetitions: config.repetitions,
        refined,
        warnings: Vec::new(),
    })
}

/// Refined and unrefined (thresholded input) segmentations scored against
/// the same ground truth.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct RefinementReport {
    pub refined: SegmentationReport,
    pub thresholded: SegmentationReport,
}

pub fn refine_case(
    volume: &ProbabilityVolume,
    truth: &Mask,
    network: &Network,
    config: &InferenceConfig,
) -> Result<(RefinementReport, InferenceResult)> {
    if truth.shape != volume.shape() {
        return Err(Error::Input(format!(
            "ground truth shape {:?} differs from volume shape {:?}",
            truth.shape,
            volume.shape()
        )));
    }
    let result = infer(volume, network, config)?;
    let spacing = volume.spacing();
    let mut thresholded = Mask::empty(volume.shape());
    let mut fg_points = 0usize;
    for p in &result.cloud.points {
        let (x, y, z) = (p[0] as usize, p[1] as usize, p[2] as usize);
        thresholded.set(x, y, z, true);
        fg_points += usize::from(truth.get(x, y, z));
    }
    let ratio = fg_points as f64 / result.cloud.len().max(1) as f64;
    let report = RefinementReport {
        refined: SegmentationReport::compare(&result.refined, truth, spacing, ratio)?,
        thresholded: SegmentationReport::compare(&thresholded, truth, spacing, ratio)?,
    };
    Ok((report, result))
}
