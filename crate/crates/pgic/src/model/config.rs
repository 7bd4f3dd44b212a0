//! Architecture and training hyperparameters.

use super::{ModelError, ModelResult};

/// Everything needed to rebuild the transforms and the training loop.
///
/// The desk-scale default shrinks the published sizes to something a single
/// CPU core trains in minutes while keeping every structural ratio; larger
/// configurations are plain field values away.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct ModelConfig {
    /// Channel width of the transform trunk.
    pub c1: u32,
    /// Latent channel dim; also the codebook dimension D.
    pub c2: u32,
    /// Depthwise-block/FFN pairs in the analysis transform.
    pub m_enc: u32,
    /// Pairs in the synthesis transform.
    pub m_dec: u32,
    /// Number of quantization stages N.
    pub n_stages: u32,
    /// Bits per index L; each codebook holds 2^L codewords.
    pub l_bits: u32,
    /// FFN expansion ratio r.
    pub ffn_expansion: u32,
    /// First-stage space-to-depth factor.
    pub unshuffle_factor: u32,
    /// Total latent stride f in pixels.
    pub total_downsample: u32,
    /// Progressive weighting ratio p.
    pub p_weight: f32,
    pub lr: f32,
    pub beta1: f32,
    pub beta2: f32,
    pub batch: u32,
    pub crop: u32,
}

impl ModelConfig {
    /// CPU-trainable default preserving the published structural ratios.
    pub fn desk_scale() -> Self {
        ModelConfig {
            c1: 64,
            c2: 32,
            m_enc: 2,
            m_dec: 3,
            n_stages: 5,
            l_bits: 8,
            ffn_expansion: 4,
            unshuffle_factor: 8,
            total_downsample: 16,
            p_weight: 0.5,
            lr: 1e-4,
            beta1: 0.5,
            beta2: 0.9,
            batch: 8,
            crop: 64,
        }
    }

    /// Codebook size K = 2^L.
    pub fn codebook_size(&self) -> usize {
        1usize << self.l_bits
    }

    pub fn validate(&self) -> ModelResult<()> {
        if self.total_downsample != self.unshuffle_factor * 2 {
            return Err(ModelError::BadConfig(format!(
                "total_downsample {} must equal unshuffle_factor {} * 2",
                self.total_downsample, self.unshuffle_factor
            )));
        }
        if self.n_stages == 0 {
            return Err(ModelError::BadConfig("n_stages must be >= 1".into()));
        }
        if !(1..=16).contains(&self.l_bits) {
            return Err(ModelError::BadConfig("l_bits must be in 1..=16".into()));
        }
        if self.c2 % 2 != 0 {
            return Err(ModelError::BadConfig("c2 must be even".into()));
        }
        if !(0.0..=1.0).contains(&self.p_weight) {
            return Err(ModelError::BadWeightRatio { p: self.p_weight });
        }
        if self.c1 == 0 || self.c2 == 0 || self.ffn_expansion == 0 || self.unshuffle_factor == 0 {
            return Err(ModelError::BadConfig("channel widths must be >= 1".into()));
        }
        if self.crop % self.total_downsample != 0 {
            return Err(ModelError::BadConfig(format!(
                "crop {} must be a multiple of the downsample factor {}",
                self.crop, self.total_downsample
            )));
        }
        if self.batch == 0 {
            return Err(ModelError::BadConfig("batch must be >= 1".into()));
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn desk_scale_is_valid() {
        ModelConfig::desk_scale().validate().unwrap();
        assert_eq!(ModelConfig::desk_scale().codebook_size(), 256);
    }

    #[test]
    fn downsample_relation_is_enforced() {
        let mut cfg = ModelConfig::desk_scale();
        cfg.total_downsample = 8;
        assert!(matches!(cfg.validate(), Err(ModelError::BadConfig(_))));
    }

    #[test]
    fn odd_latent_width_rejected() {
        let mut cfg = ModelConfig::desk_scale();
        cfg.c2 = 31;
        assert!(cfg.validate().is_err());
    }

    #[test]
    fn weight_ratio_bounds() {
        let mut cfg = ModelConfig::desk_scale();
        cfg.p_weight = 1.25;
        assert!(matches!(
            cfg.validate(),
            Err(ModelError::BadWeightRatio { .. })
        ));
    }
}
