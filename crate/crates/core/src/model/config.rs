use std::fmt::Write as _;

use super::ModelError;
use crate::kv::parse_key_values;

/// Channel widths of the three backbone stages (output strides 8, 16, 32).
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct BackboneConfig {
    pub widths: [usize; 3],
    /// Concatenate block inputs with their 1x1 features instead of
    /// replacing them.
    pub dense: bool,
}

impl BackboneConfig {
    pub fn desk() -> Self {
        Self {
            widths: [16, 32, 64],
            dense: false,
        }
    }

    /// Stage widths of the original DenseNet-based network.
    pub fn paper_scale() -> Self {
        Self {
            widths: [128, 256, 896],
            dense: true,
        }
    }
}

impl Default for BackboneConfig {
    fn default() -> Self {
        Self::desk()
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ModelConfig {
    pub backbone: BackboneConfig,
    /// Input and predicted-map side length.
    pub patch: usize,
    /// Channels of the stride-2 convolutions in each map module.
    pub map_stack: Vec<usize>,
    /// Leaky ReLU negative slope.
    pub slope: f64,
    /// Initialization seed.
    pub seed: u64,
}

impl Default for ModelConfig {
    fn default() -> Self {
        Self {
            backbone: BackboneConfig::default(),
            patch: 224,
            map_stack: vec![8, 16, 32],
            slope: 0.01,
            seed: 0,
        }
    }
}

fn list(values: &[usize]) -> String {
    values.iter().map(usize::to_string).collect::<Vec<_>>().join(",")
}

impl ModelConfig {
    pub fn validate(&self) -> Result<(), ModelError> {
        let bad = |msg: String| Err(ModelError::Config(msg));
        if self.patch == 0 || self.patch % 32 != 0 {
            return bad(format!("patch size {} must be a positive multiple of 32", self.patch));
        }
        if self.backbone.widths.iter().any(|&w| w < 2) {
            return bad(format!("backbone widths {:?} must be at least 2", self.backbone.widths));
        }
        if self.map_stack.contains(&0) || self.patch % (1 << self.map_stack.len()) != 0 {
            return bad(format!("map stack {:?} does not fit patch {}", self.map_stack, self.patch));
        }
        if !(self.slope.is_finite() && self.slope >= 0.0) {
            return bad(format!("invalid leaky slope {}", self.slope));
        }
        Ok(())
    }

    /// `key = value` lines.
    pub fn to_text(&self) -> String {
        let mut s = String::new();
        let _ = writeln!(s, "patch = {}", self.patch);
        let _ = writeln!(s, "backbone_widths = {}", list(&self.backbone.widths));
        let _ = writeln!(s, "backbone_dense = {}", self.backbone.dense);
        let _ = writeln!(s, "map_stack = {}", list(&self.map_stack));
        let _ = writeln!(s, "slope = {}", self.slope);
        let _ = writeln!(s, "seed = {}", self.seed);
        s
    }

    pub fn from_text(text: &str) -> Result<Self, ModelError> {
        let kv = parse_key_values(text).map_err(ModelError::Config)?;
        let get = |k: &str| kv.get(k).ok_or_else(|| ModelError::Config(format!("missing key `{k}`")));
        let num = |k: &str| -> Result<usize, ModelError> {
            get(k)?.parse().map_err(|_| ModelError::Config(format!("bad value for `{k}`")))
        };
        let nums = |k: &str| -> Result<Vec<usize>, ModelError> {
            get(k)?
                .split(',')
                .map(|v| v.trim().parse().map_err(|_| ModelError::Config(format!("bad value for `{k}`"))))
                .collect()
        };
        let widths = nums("backbone_widths")?;
        let widths: [usize; 3] = widths
            .try_into()
            .map_err(|_| ModelError::Config("backbone_widths needs three values".into()))?;
        let cfg = Self {
            backbone: BackboneConfig {
                widths,
                dense: get("backbone_dense")?
                    .parse()
                    .map_err(|_| ModelError::Config("bad value for `backbone_dense`".into()))?,
            },
            patch: num("patch")?,
            map_stack: nums("map_stack")?,
            slope: get("slope")?
                .parse()
                .map_err(|_| ModelError::Config("bad value for `slope`".into()))?,
            seed: get("seed")?
                .parse()
                .map_err(|_| ModelError::Config("bad value for `seed`".into()))?,
        };
        cfg.validate()?;
        Ok(cfg)
    }
}
