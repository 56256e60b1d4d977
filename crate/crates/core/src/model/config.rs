use serde::{Deserialize, Serialize};

use super::{ModelError, Result};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum BlockKind {
    /// Res2Net bottleneck with a plain 3×3 conv per channel group.
    Conv,
    /// Bottleneck whose per-group transform is the MPIF module.
    Mpif,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum HeadKind {
    AngleLinear,
    /// Plain linear layer + softmax cross-entropy, for debugging.
    Linear,
}

/// Classification head. With `AngleLinear`, logits are cosines between the
/// L2-normalised embedding and class weights; training replaces the true
/// class cosine by the margin cosine annealed with
/// `λ = max(lambda_min, lambda_base·(1 + lambda_gamma·step)^(−lambda_power))`
/// and multiplies all logits by `scale` before the cross-entropy.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct HeadConfig {
    pub kind: HeadKind,
    pub margin: u32,
    pub scale: f64,
    pub lambda_base: f64,
    pub lambda_gamma: f64,
    pub lambda_power: f64,
    pub lambda_min: f64,
}

impl Default for HeadConfig {
    fn default() -> Self {
        Self {
            kind: HeadKind::AngleLinear,
            margin: 4,
            scale: 16.0,
            lambda_base: 1000.0,
            lambda_gamma: 0.12,
            lambda_power: 1.0,
            lambda_min: 5.0,
        }
    }
}

impl HeadConfig {
    pub fn lambda_at(&self, step: u64) -> f64 {
        let l = self.lambda_base * (1.0 + self.lambda_gamma * step as f64).powf(-self.lambda_power);
        l.max(self.lambda_min)
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct NetworkConfig {
    /// Channel groups per bottleneck.
    pub n_groups: usize,
    pub stem_channels: usize,
    pub widths: Vec<usize>,
    pub strides: Vec<usize>,
    pub blocks: Vec<Vec<BlockKind>>,
    pub se_reduction: usize,
    /// Dilation of the plain-conv group transform (1 → 3×3, 2 → 5×5 field).
    pub conv_dilation: usize,
    pub input_rows: usize,
    pub input_cols: usize,
    pub num_classes: usize,
    pub bn_eps: f64,
    pub bn_momentum: f64,
    pub head: HeadConfig,
    pub init_seed: u64,
}

impl Default for NetworkConfig {
    fn default() -> Self {
        use BlockKind::{Conv, Mpif};
        Self {
            n_groups: 8,
            stem_channels: 16,
            widths: vec![32, 64, 128, 256],
            strides: vec![1, 2, 2, 2],
            blocks: vec![
                vec![Conv, Mpif],
                vec![Conv, Mpif, Mpif],
                vec![Conv, Mpif],
                vec![Conv, Mpif, Mpif],
            ],
            se_reduction: 8,
            conv_dilation: 1,
            input_rows: crate::dsp::F0_BINS,
            input_cols: crate::dsp::FIXED_FRAMES,
            num_classes: 2,
            bn_eps: 1e-5,
            bn_momentum: 0.1,
            head: HeadConfig::default(),
            init_seed: 0,
        }
    }
}

impl NetworkConfig {
    /// Same block layout with narrower layers, for desk-scale runs.
    pub fn tiny(widths: [usize; 4], n_groups: usize) -> Self {
        Self {
            n_groups,
            stem_channels: widths[0],
            widths: widths.to_vec(),
            ..Self::default()
        }
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(ModelError::Config(m));
        if self.n_groups < 2 {
            return bad(format!("n_groups must be at least 2, got {}", self.n_groups));
        }
        if self.widths.is_empty()
            || self.widths.len() != self.strides.len()
            || self.widths.len() != self.blocks.len()
        {
            return bad("widths, strides and blocks must have the same non-zero length".into());
        }
        for (i, (&w, blocks)) in self.widths.iter().zip(&self.blocks).enumerate() {
            if w == 0 || w % self.n_groups != 0 {
                return bad(format!("layer{} width {w} is not divisible by n_groups {}", i + 1, self.n_groups));
            }
            if self.se_reduction == 0 || w % self.se_reduction != 0 {
                return bad(format!("layer{} width {w} is not divisible by se_reduction {}", i + 1, self.se_reduction));
            }
            if blocks.is_empty() {
                return bad(format!("layer{} has no blocks", i + 1));
            }
        }
        if self.strides.contains(&0) || self.conv_dilation == 0 {
            return bad("strides and conv_dilation must be positive".into());
        }
        if self.stem_channels == 0 || self.input_rows == 0 || self.input_cols == 0 {
            return bad("stem channels and input size must be positive".into());
        }
        if self.num_classes < 2 {
            return bad("need at least two classes".into());
        }
        if !(self.bn_eps > 0.0) || !(0.0..=1.0).contains(&self.bn_momentum) {
            return bad("bn_eps must be positive and bn_momentum in [0, 1]".into());
        }
        if self.head.margin == 0 || !(self.head.scale > 0.0) || self.head.lambda_min < 0.0 {
            return bad("head margin must be >= 1, scale > 0 and lambda_min >= 0".into());
        }
        Ok(())
    }

    /// Expected `(channels, rows, cols)` after the stem and after each layer.
    pub fn shape_chain(&self) -> Vec<(usize, usize, usize)> {
        let mut chain = vec![(self.stem_channels, self.input_rows, self.input_cols)];
        let (mut h, mut w) = (self.input_rows, self.input_cols);
        for (&c, &s) in self.widths.iter().zip(&self.strides) {
            h = (h - 1) / s + 1;
            w = (w - 1) / s + 1;
            chain.push((c, h, w));
        }
        chain
    }

    /// Canonical JSON (keys sorted).
    pub fn to_canonical_json(&self) -> String {
        let v = serde_json::to_value(self).expect("config serialises");
        serde_json::to_string(&v).expect("value serialises")
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn default_widths_split_evenly() {
        let cfg = NetworkConfig::default();
        cfg.validate().unwrap();
        let p: Vec<usize> = cfg.widths.iter().map(|w| w / cfg.n_groups).collect();
        assert_eq!(p, vec![4, 8, 16, 32]);
    }

    #[test]
    fn shape_chain_matches_layer_table() {
        let chain = NetworkConfig::default().shape_chain();
        assert_eq!(
            chain,
            vec![(16, 45, 600), (32, 45, 600), (64, 23, 300), (128, 12, 150), (256, 6, 75)]
        );
    }

    #[test]
    fn rejects_indivisible_widths() {
        let mut cfg = NetworkConfig::default();
        cfg.widths[1] = 60;
        assert!(cfg.validate().is_err());
        let cfg = NetworkConfig {
            n_groups: 1,
            ..Default::default()
        };
        assert!(cfg.validate().is_err());
    }

    #[test]
    fn canonical_json_is_sorted_and_round_trips() {
        let cfg = NetworkConfig::tiny([8, 16, 32, 64], 4);
        let s = cfg.to_canonical_json();
        assert!(s.find("\"blocks\"").unwrap() < s.find("\"widths\"").unwrap());
        let back: NetworkConfig = serde_json::from_str(&s).unwrap();
        assert_eq!(back, cfg);
    }

    #[test]
    fn lambda_anneals_to_floor() {
        let h = HeadConfig::default();
        assert_eq!(h.lambda_at(0), 1000.0);
        assert!(h.lambda_at(10) < 1000.0);
        assert_eq!(h.lambda_at(1_000_000), 5.0);
    }
}
