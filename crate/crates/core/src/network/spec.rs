use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Output channels of the two patch convolutions.
pub const FEATURE_CHANNELS: [usize; 2] = [4, 8];

/// One X-Conv stage: `n_out` representative points, each aggregating `k`
/// neighbors sampled from its `k * dilation` nearest.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct XConvLayerSpec {
    pub n_out: usize,
    pub k: usize,
    pub dilation: usize,
    pub c_out: usize,
    pub c_delta: usize,
}

impl XConvLayerSpec {
    pub const fn new(n_out: usize, k: usize, dilation: usize, c_out: usize, c_delta: usize) -> Self {
        Self {
            n_out,
            k,
            dilation,
            c_out,
            c_delta,
        }
    }

    pub(crate) fn validate(&self, what: &str) -> Result<()> {
        if self.n_out == 0 || self.k == 0 || self.dilation == 0 || self.c_out == 0 || self.c_delta == 0 {
            return Err(Error::Config(format!("{what}: all sizes must be positive, got {self:?}")));
        }
        Ok(())
    }
}

/// Full architecture description.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct NetworkSpec {
    pub encoder: Vec<XConvLayerSpec>,
    /// Stages from coarse to fine; stage `j` outputs at the point set of
    /// encoder stage `encoder.len() - 2 - j` and concatenates its features.
    pub decoder: Vec<XConvLayerSpec>,
    pub fc_widths: Vec<usize>,
    pub patch_size: usize,
    pub dropout_rate: f64,
    pub num_classes: usize,
}

impl Default for NetworkSpec {
    fn default() -> Self {
        Self::standard()
    }
}

impl NetworkSpec {
    /// Four encoder stages down to 128 points, mirrored decoder back to 2048.
    pub fn standard() -> Self {
        let enc = vec![
            XConvLayerSpec::new(2048, 8, 1, 64, 16),
            XConvLayerSpec::new(768, 12, 2, 96, 24),
            XConvLayerSpec::new(384, 16, 2, 128, 32),
            XConvLayerSpec::new(128, 16, 3, 160, 40),
        ];
        let dec = vec![
            XConvLayerSpec::new(384, 16, 2, 128, 32),
            XConvLayerSpec::new(768, 12, 2, 96, 24),
            XConvLayerSpec::new(2048, 8, 1, 64, 16),
        ];
        Self {
            encoder: enc,
            decoder: dec,
            fc_widths: vec![128, 2],
            patch_size: 5,
            dropout_rate: 0.5,
            num_classes: 2,
        }
    }

    /// Desk-scale variant: 512 input points, two encoder stages.
    pub fn reduced() -> Self {
        Self {
            encoder: vec![
                XConvLayerSpec::new(512, 8, 1, 32, 8),
                XConvLayerSpec::new(128, 12, 2, 64, 16),
            ],
            decoder: vec![XConvLayerSpec::new(512, 8, 1, 32, 8)],
            fc_widths: vec![64, 2],
            patch_size: 5,
            dropout_rate: 0.5,
            num_classes: 2,
        }
    }

    /// Number of points per input subcloud.
    pub fn input_size(&self) -> usize {
        self.encoder.first().map_or(0, |s| s.n_out)
    }

    /// Length of the patch feature vector: 8 channels over the pooled grid.
    pub fn patch_feature_len(&self) -> usize {
        let pooled = self.patch_size / 2;
        FEATURE_CHANNELS[1] * pooled * pooled * pooled
    }

    /// Point count at every level: the input, then each encoder stage.
    pub fn level_sizes(&self) -> Vec<usize> {
        let mut sizes = vec![self.input_size()];
        sizes.extend(self.encoder.iter().map(|s| s.n_out));
        sizes
    }

    pub fn validate(&self) -> Result<()> {
        let e = self.encoder.len();
        if e == 0 {
            return Err(Error::Config("network needs at least one encoder stage".into()));
        }
        if self.decoder.len() + 1 != e {
            return Err(Error::Config(format!(
                "{} decoder stages for {e} encoder stages (expected {})",
                self.decoder.len(),
                e - 1
            )));
        }
        if self.patch_size < 3 || self.patch_size % 2 == 0 {
            return Err(Error::Config(format!("patch size {} must be odd and >= 3", self.patch_size)));
        }
        if self.fc_widths.len() != 2 || self.fc_widths.contains(&0) {
            return Err(Error::Config(format!("expected two positive FC widths, got {:?}", self.fc_widths)));
        }
        if self.fc_widths[1] != self.num_classes {
            return Err(Error::Config(format!(
                "final FC width {} differs from class count {}",
                self.fc_widths[1], self.num_classes
            )));
        }
        if !(0.0..1.0).contains(&self.dropout_rate) {
            return Err(Error::Config(format!("dropout rate {} outside [0, 1)", self.dropout_rate)));
        }
        let levels = self.level_sizes();
        for (i, s) in self.encoder.iter().enumerate() {
            s.validate(&format!("encoder stage {i}"))?;
            let source = levels[i];
            if s.n_out > source {
                return Err(Error::Config(format!(
                    "encoder stage {i} asks for {} points from {source}",
                    s.n_out
                )));
            }
            if s.k * s.dilation > source {
                return Err(Error::Config(format!(
                    "encoder stage {i} needs {} neighbors but its input has {source} points",
                    s.k * s.dilation
                )));
            }
        }
        for (j, s) in self.decoder.iter().enumerate() {
            s.validate(&format!("decoder stage {j}"))?;
            let target = levels[e - 1 - j];
            if s.n_out != target {
                return Err(Error::Config(format!(
                    "decoder stage {j} outputs {} points but the matching encoder level has {target}",
                    s.n_out
                )));
            }
            let source = levels[e - j];
            if s.k * s.dilation > source {
                return Err(Error::Config(format!(
                    "decoder stage {j} needs {} neighbors but its input has {source} points",
                    s.k * s.dilation
                )));
            }
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn built_in_specs_are_valid() {
        NetworkSpec::standard().validate().unwrap();
        NetworkSpec::reduced().validate().unwrap();
        assert_eq!(NetworkSpec::standard().input_size(), 2048);
        assert_eq!(NetworkSpec::reduced().input_size(), 512);
    }

    #[test]
    fn five_cube_patch_flattens_to_64() {
        assert_eq!(NetworkSpec::standard().patch_feature_len(), 64);
    }

    #[test]
    fn decoder_must_match_encoder_levels() {
        let mut s = NetworkSpec::reduced();
        s.decoder[0].n_out = 256;
        assert!(matches!(s.validate(), Err(Error::Config(_))));
    }

    #[test]
    fn final_width_must_equal_classes() {
        let mut s = NetworkSpec::reduced();
        s.fc_widths = vec![64, 3];
        assert!(s.validate().is_err());
    }

    #[test]
    fn neighborhood_must_fit() {
        let mut s = NetworkSpec::reduced();
        s.encoder[1].k = 300;
        assert!(s.validate().is_err());
    }
}
