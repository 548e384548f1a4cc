use crate::error::{Error, Result};
use crate::kvconfig::{join_list, parse_list, KvConfig};

/// Shape and initialization of a [`super::VitEncoder`].
#[derive(Debug, Clone, PartialEq)]
pub struct EncoderConfig {
    pub image_height: usize,
    pub image_width: usize,
    pub channels: usize,
    pub patch_size: usize,
    pub num_blocks: usize,
    pub embed_dim: usize,
    pub heads: usize,
    /// Hidden width of each block's MLP as a multiple of `embed_dim`.
    pub mlp_ratio: usize,
    pub seed: u64,
    /// Per-channel input normalization, applied as `(x - mean) / std`.
    pub mean: Vec<f32>,
    pub std: Vec<f32>,
    /// When false the final projection is frozen and excluded from every
    /// learning-rate group.
    pub finetune_projection: bool,
}

impl Default for EncoderConfig {
    fn default() -> Self {
        Self {
            image_height: 16,
            image_width: 16,
            channels: 3,
            patch_size: 4,
            num_blocks: 4,
            embed_dim: 64,
            heads: 4,
            mlp_ratio: 2,
            seed: 0,
            mean: vec![0.5; 3],
            std: vec![0.25; 3],
            finetune_projection: true,
        }
    }
}

pub const ENCODER_KEYS: &[&str] = &[
    "image_height",
    "image_width",
    "channels",
    "patch_size",
    "num_blocks",
    "embed_dim",
    "heads",
    "mlp_ratio",
    "seed",
    "mean",
    "std",
    "finetune_projection",
];

impl EncoderConfig {
    pub fn validate(&self) -> Result<()> {
        let positive = [
            ("image_height", self.image_height),
            ("image_width", self.image_width),
            ("channels", self.channels),
            ("patch_size", self.patch_size),
            ("num_blocks", self.num_blocks),
            ("embed_dim", self.embed_dim),
            ("heads", self.heads),
            ("mlp_ratio", self.mlp_ratio),
        ];
        for (name, v) in positive {
            if v == 0 {
                return Err(Error::Config(format!("{name} must be positive")));
            }
        }
        if !self.embed_dim.is_multiple_of(self.heads) {
            return Err(Error::Config(format!(
                "embed_dim {} is not divisible by heads {}",
                self.embed_dim, self.heads
            )));
        }
        if !self.image_height.is_multiple_of(self.patch_size) || !self.image_width.is_multiple_of(self.patch_size) {
            return Err(Error::Config(format!(
                "input {}x{} is not divisible by patch_size {}",
                self.image_height, self.image_width, self.patch_size
            )));
        }
        if self.mean.len() != self.channels || self.std.len() != self.channels {
            return Err(Error::Config(format!(
                "mean/std need {} entries, got {}/{}",
                self.channels,
                self.mean.len(),
                self.std.len()
            )));
        }
        if self.std.iter().any(|s| !s.is_finite() || *s <= 0.0) || self.mean.iter().any(|m| !m.is_finite()) {
            return Err(Error::Config("std must be positive and mean finite".into()));
        }
        Ok(())
    }

    pub fn num_tokens(&self) -> usize {
        (self.image_height / self.patch_size) * (self.image_width / self.patch_size)
    }

    pub fn patch_dim(&self) -> usize {
        self.patch_size * self.patch_size * self.channels
    }

    pub fn mlp_dim(&self) -> usize {
        self.embed_dim * self.mlp_ratio
    }

    /// Writes every field into `kv`, overwriting existing values.
    pub fn write_kv(&self, kv: &mut KvConfig) {
        kv.set("image_height", self.image_height);
        kv.set("image_width", self.image_width);
        kv.set("channels", self.channels);
        kv.set("patch_size", self.patch_size);
        kv.set("num_blocks", self.num_blocks);
        kv.set("embed_dim", self.embed_dim);
        kv.set("heads", self.heads);
        kv.set("mlp_ratio", self.mlp_ratio);
        kv.set("seed", self.seed);
        kv.set("mean", join_list(&self.mean));
        kv.set("std", join_list(&self.std));
        kv.set("finetune_projection", self.finetune_projection);
    }

    pub fn to_kv(&self) -> KvConfig {
        let mut kv = KvConfig::new();
        self.write_kv(&mut kv);
        kv
    }

    /// Overrides defaults with whichever encoder keys `kv` contains; other
    /// keys are ignored. The result is validated.
    pub fn from_kv(kv: &KvConfig) -> Result<Self> {
        let mut c = Self::default();
        macro_rules! take {
            ($field:ident) => {
                if let Some(v) = kv.parse_value(stringify!($field))? {
                    c.$field = v;
                }
            };
        }
        take!(image_height);
        take!(image_width);
        take!(channels);
        take!(patch_size);
        take!(num_blocks);
        take!(embed_dim);
        take!(heads);
        take!(mlp_ratio);
        take!(seed);
        take!(finetune_projection);
        if let Some(v) = kv.get("mean") {
            c.mean = parse_list("mean", v)?;
        } else if c.mean.len() != c.channels {
            c.mean = vec![0.5; c.channels];
        }
        if let Some(v) = kv.get("std") {
            c.std = parse_list("std", v)?;
        } else if c.std.len() != c.channels {
            c.std = vec![0.25; c.channels];
        }
        c.validate()?;
        Ok(c)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn kv_round_trip() {
        let c = EncoderConfig {
            seed: 99,
            mean: vec![0.1, 0.2, 0.3000001],
            finetune_projection: false,
            ..Default::default()
        };
        assert_eq!(EncoderConfig::from_kv(&c.to_kv()).unwrap(), c);
    }

    #[test]
    fn divisibility_checked() {
        let c = EncoderConfig { embed_dim: 65, heads: 4, ..Default::default() };
        assert!(matches!(c.validate(), Err(Error::Config(_))));
        let c = EncoderConfig { image_height: 18, ..Default::default() };
        assert!(matches!(c.validate(), Err(Error::Config(_))));
    }
}
