//! Optional TOML run configuration. Command-line flags take precedence.

use std::path::{Path, PathBuf};

use serde::Deserialize;
use taylor_mlp::{ActivationKind, Error, Result};

#[derive(Debug, Default, Clone, Deserialize, PartialEq)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    pub seed: Option<u64>,
    pub order: Option<usize>,
    pub protect_k: Option<usize>,
    pub activation: Option<String>,
    #[serde(default)]
    pub dims: Dims,
    #[serde(default)]
    pub train: Train,
    #[serde(default)]
    pub paths: Paths,
}

#[derive(Debug, Default, Clone, Deserialize, PartialEq)]
#[serde(deny_unknown_fields)]
pub struct Dims {
    pub d_model: Option<usize>,
    pub d_intermediate: Option<usize>,
    pub d_out: Option<usize>,
}

#[derive(Debug, Default, Clone, Deserialize, PartialEq)]
#[serde(deny_unknown_fields)]
pub struct Train {
    pub lr: Option<f64>,
    pub epochs: Option<usize>,
    pub batch: Option<usize>,
}

#[derive(Debug, Default, Clone, Deserialize, PartialEq)]
#[serde(deny_unknown_fields)]
pub struct Paths {
    pub weights: Option<PathBuf>,
    pub stats: Option<PathBuf>,
    pub calib: Option<PathBuf>,
    pub package: Option<PathBuf>,
    pub out: Option<PathBuf>,
}

impl RunConfig {
    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)?;
        toml::from_str(&text).map_err(|e| Error::Config(format!("{}: {e}", path.display())))
    }

    pub fn activation(&self) -> Result<Option<ActivationKind>> {
        self.activation.as_deref().map(str::parse).transpose()
    }
}

/// First of `flag`, `config` that is set.
pub fn pick<T>(flag: Option<T>, config: Option<T>) -> Option<T> {
    flag.or(config)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn parses_nested_sections() {
        let cfg: RunConfig = toml::from_str(
            r#"
            seed = 7
            order = 4
            activation = "silu"
            [dims]
            d_model = 8
            [train]
            lr = 0.001
            [paths]
            out = "pkg.tmlp"
            "#,
        )
        .unwrap();
        assert_eq!(cfg.seed, Some(7));
        assert_eq!(cfg.dims.d_model, Some(8));
        assert_eq!(cfg.train.lr, Some(0.001));
        assert_eq!(cfg.activation().unwrap(), Some(ActivationKind::Silu));
        assert_eq!(cfg.paths.out.as_deref(), Some(Path::new("pkg.tmlp")));
    }

    #[test]
    fn unknown_keys_are_rejected() {
        assert!(toml::from_str::<RunConfig>("sede = 1").is_err());
    }

    #[test]
    fn flags_win() {
        assert_eq!(pick(Some(1), Some(2)), Some(1));
        assert_eq!(pick(None, Some(2)), Some(2));
        assert_eq!(pick::<u8>(None, None), None);
    }
}
