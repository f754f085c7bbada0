//! The two sensitivity experiments: a probability sweep over clean nerves
//! and a false-positive span/probability grid.

use std::fmt::Write as _;
use std::io::Write;

use serde::{Deserialize, Serialize};

use super::report::SegmentationReport;
use super::synth::{generate_nerve, FalsePositive, NerveKind, SyntheticSpec};
use crate::cloudbuild::Mask;
use crate::error::Result;
use crate::network::Network;
use crate::pipeline::{refine_case, InferenceConfig};
use crate::seed;

/// Threshold used by both experiments. The smoothed interior of a q = 0.1
/// nerve never strictly exceeds 0.1, so the default 0.1 would leave the
/// lowest probability level without a cloud.
pub const EXPERIMENT_THETA: f64 = 0.05;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ExperimentConfig {
    pub inference: InferenceConfig,
    pub base: SyntheticSpec,
    pub q_levels: Vec<f64>,
    pub spans: Vec<usize>,
    pub fp_q_levels: Vec<f64>,
    pub fp_nerve_q: f64,
    pub fp_kind: NerveKind,
    pub fp_offset: [f64; 2],
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        let levels = vec![0.1, 0.3, 0.5, 0.7, 0.9];
        Self {
            inference: InferenceConfig {
                theta: EXPERIMENT_THETA,
                ..InferenceConfig::default()
            },
            base: SyntheticSpec::default(),
            q_levels: levels.clone(),
            spans: (1..=21).step_by(2).collect(),
            fp_q_levels: levels,
            fp_nerve_q: 0.5,
            fp_kind: NerveKind::Branching,
            fp_offset: [0.0, 30.0],
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SweepRow {
    pub kind: NerveKind,
    pub q: f64,
    pub refined: SegmentationReport,
    pub thresholded: SegmentationReport,
}

/// Receives every refined volume under a stable name.
pub type VolumeSink<'a> = dyn FnMut(&str, &Mask) -> Result<()> + 'a;

fn kind_name(kind: NerveKind) -> &'static str {
    match kind {
        NerveKind::Straight => "straight",
        NerveKind::Branching => "branching",
    }
}

fn cell_inference(config: &ExperimentConfig, path: &[u64]) -> InferenceConfig {
    InferenceConfig {
        seed: seed::derive(config.inference.seed, path),
        ..config.inference.clone()
    }
}

/// Both nerve kinds at every level in `config.q_levels`.
pub fn experiment_probability_sweep(
    network: &Network,
    config: &ExperimentConfig,
    sink: &mut VolumeSink,
) -> Result<Vec<SweepRow>> {
    let mut rows = Vec::new();
    for (ki, kind) in [NerveKind::Straight, NerveKind::Branching].into_iter().enumerate() {
        for (qi, &q) in config.q_levels.iter().enumerate() {
            let spec = SyntheticSpec {
                kind,
                q,
                false_positive: None,
                ..config.base.clone()
            };
            let case = generate_nerve(&spec)?;
            let inf = cell_inference(config, &[0, ki as u64, qi as u64]);
            let (report, result) = refine_case(&case.probability, &case.truth, network, &inf)?;
            sink(&format!("sweep_{}_q{q:.1}", kind_name(kind)), &result.refined)?;
            rows.push(SweepRow {
                kind,
                q,
                refined: report.refined,
                thresholded: report.thresholded,
            });
        }
    }
    Ok(rows)
}

fn opt(v: Option<f64>) -> String {
    v.map_or_else(|| "undefined".to_string(), |v| format!("{v:.6}"))
}

pub fn write_sweep_csv<W: Write>(rows: &[SweepRow], mut w: W) -> Result<()> {
    writeln!(w, "kind,q,dice,hd95_mm,vs,input_dice,input_hd95_mm,input_vs,cloud_class_ratio")?;
    for r in rows {
        writeln!(
            w,
            "{},{:.1},{:.6},{},{:.6},{:.6},{},{:.6},{:.6}",
            kind_name(r.kind),
            r.q,
            r.refined.dice,
            opt(r.refined.hd95_mm),
            r.refined.vs,
            r.thresholded.dice,
            opt(r.thresholded.hd95_mm),
            r.thresholded.vs,
            r.refined.cloud_class_ratio
        )?;
    }
    Ok(())
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct HeatCell {
    pub span: usize,
    pub q_fp: f64,
    pub report: SegmentationReport,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct FalsePositiveResult {
    /// The same nerve without a false positive.
    pub baseline: SegmentationReport,
    /// Row-major over `fp_q_levels`, then `spans`.
    pub cells: Vec<HeatCell>,
    pub spans: Vec<usize>,
    pub q_levels: Vec<f64>,
}

impl FalsePositiveResult {
    pub fn cell(&self, span: usize, q_fp: f64) -> Option<&HeatCell> {
        self.cells.iter().find(|c| c.span == span && (c.q_fp - q_fp).abs() < 1e-12)
    }
}

/// Nerve at `fp_nerve_q` with a false-positive tube of every span and level.
pub fn experiment_false_positive(
    network: &Network,
    config: &ExperimentConfig,
    sink: &mut VolumeSink,
) -> Result<FalsePositiveResult> {
    let nerve = SyntheticSpec {
        kind: config.fp_kind,
        q: config.fp_nerve_q,
        false_positive: None,
        ..config.base.clone()
    };
    let clean = generate_nerve(&nerve)?;
    let (base_report, base_result) =
        refine_case(&clean.probability, &clean.truth, network, &cell_inference(config, &[1, u64::MAX]))?;
    sink("fp_baseline", &base_result.refined)?;
    let mut cells = Vec::new();
    for (qi, &q_fp) in config.fp_q_levels.iter().enumerate() {
        for (si, &span) in config.spans.iter().enumerate() {
            let spec = SyntheticSpec {
                false_positive: Some(FalsePositive {
                    span,
                    q: q_fp,
                    offset: config.fp_offset,
                }),
                ..nerve.clone()
            };
            let case = generate_nerve(&spec)?;
            let inf = cell_inference(config, &[1, qi as u64, si as u64]);
            let (report, result) = refine_case(&case.probability, &case.truth, network, &inf)?;
            sink(&format!("fp_s{span:02}_q{q_fp:.1}"), &result.refined)?;
            cells.push(HeatCell {
                span,
                q_fp,
                report: report.refined,
            });
        }
    }
    Ok(FalsePositiveResult {
        baseline: base_report.refined,
        cells,
        spans: config.spans.clone(),
        q_levels: config.fp_q_levels.clone(),
    })
}

pub fn write_heatmap_csv<W: Write>(result: &FalsePositiveResult, mut w: W) -> Result<()> {
    writeln!(w, "span,q_fp,hd_mm,hd95_mm,dice")?;
    writeln!(
        w,
        "0,0.0,{},{},{:.6}",
        opt(result.baseline.hd_mm),
        opt(result.baseline.hd95_mm),
        result.baseline.dice
    )?;
    for c in &result.cells {
        writeln!(
            w,
            "{},{:.1},{},{},{:.6}",
            c.span,
            c.q_fp,
            opt(c.report.hd_mm),
            opt(c.report.hd95_mm),
            c.report.dice
        )?;
    }
    Ok(())
}

/// gnuplot `matrix nonuniform` layout: first row holds the spans, first
/// column the probability levels, entries the Hausdorff distance.
pub fn write_gnuplot_matrix<W: Write>(result: &FalsePositiveResult, mut w: W) -> Result<()> {
    write!(w, "{}", result.spans.len())?;
    for s in &result.spans {
        write!(w, " {s}")?;
    }
    writeln!(w)?;
    for &q in &result.q_levels {
        write!(w, "{q:.1}")?;
        for &s in &result.spans {
            let v = result.cell(s, q).and_then(|c| c.report.hd_mm).unwrap_or(f64::NAN);
            write!(w, " {v:.4}")?;
        }
        writeln!(w)?;
    }
    Ok(())
}

/// Terminal rendering: one row per probability level (highest on top),
/// Hausdorff distance with the 95th percentile in parentheses.
pub fn render_ascii_heatmap(result: &FalsePositiveResult) -> String {
    const SHADES: [char; 5] = [' ', '.', ':', '*', '#'];
    let max = result
        .cells
        .iter()
        .filter_map(|c| c.report.hd_mm)
        .fold(0.0_f64, f64::max)
        .max(1e-9);
    let mut out = String::new();
    let _ = write!(out, "q_fp\\span");
    for s in &result.spans {
        let _ = write!(out, "{s:>14}");
    }
    out.push('\n');
    for &q in result.q_levels.iter().rev() {
        let _ = write!(out, "{q:>9.1}");
        for &s in &result.spans {
            let cell = result.cell(s, q).map(|c| (c.report.hd_mm, c.report.hd95_mm));
            let text = match cell {
                Some((Some(hd), Some(hd95))) => {
                    let shade = SHADES[((hd / max) * (SHADES.len() - 1) as f64).round() as usize];
                    format!("{shade}{hd:.1}({hd95:.1})")
                }
                _ => "n/a".to_string(),
            };
            let _ = write!(out, "{text:>14}");
        }
        out.push('\n');
    }
    let _ = writeln!(
        out,
        "baseline without false positive: HD {} mm, HD95 {} mm",
        opt(result.baseline.hd_mm),
        opt(result.baseline.hd95_mm)
    );
    out
}
