use std::path::PathBuf;

use serde::{Deserialize, Serialize};

use super::{IoError, Result};
use crate::dsp::FrontendConfig;
use crate::metrics::TdcfCosts;
use crate::model::NetworkConfig;
use crate::train::TrainConfig;

/// Input and output locations. Relative paths are taken relative to the
/// config file.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DataConfig {
    pub train_manifest: Option<PathBuf>,
    pub dev_manifest: Option<PathBuf>,
    pub feature_dir: Option<PathBuf>,
    pub out_dir: Option<PathBuf>,
}

/// Everything a training run depends on. Serialised as canonical JSON
/// (sorted keys, every field present).
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    pub data: DataConfig,
    pub network: NetworkConfig,
    pub frontend: FrontendConfig,
    pub train: TrainConfig,
    pub costs: TdcfCosts,
}

impl RunConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |e: String| IoError::Config(e);
        self.network.validate().map_err(|e| bad(e.to_string()))?;
        self.frontend.validate().map_err(|e| bad(e.to_string()))?;
        self.train.validate().map_err(|e| bad(e.to_string()))?;
        self.costs.coefficients().map_err(|e| bad(e.to_string()))?;
        if (self.network.input_rows, self.network.input_cols) != (self.frontend.rows, self.frontend.frames) {
            return Err(bad(format!(
                "network input {}x{} does not match frontend output {}x{}",
                self.network.input_rows, self.network.input_cols, self.frontend.rows, self.frontend.frames
            )));
        }
        Ok(())
    }

    pub fn to_canonical_json(&self) -> String {
        let v = serde_json::to_value(self).expect("config serialises");
        serde_json::to_string_pretty(&v).expect("value serialises") + "\n"
    }
}

/// Parse and validate a run config. Missing fields take their defaults;
/// unknown fields are errors.
pub fn parse_run_config(text: &str) -> Result<RunConfig> {
    let cfg: RunConfig = serde_json::from_str(text).map_err(|e| IoError::Parse {
        what: "run config".into(),
        line: e.line(),
        detail: e.to_string(),
    })?;
    cfg.validate()?;
    Ok(cfg)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn empty_object_is_the_default() {
        assert_eq!(parse_run_config("{}").unwrap(), RunConfig::default());
    }

    #[test]
    fn canonical_form_is_a_fixed_point() {
        let mut cfg = RunConfig::default();
        cfg.train.learning_rate = 3e-4;
        cfg.train.specmix.p_hyper = 0.7;
        cfg.data.out_dir = Some("runs/a".into());
        let text = cfg.to_canonical_json();
        let back = parse_run_config(&text).unwrap();
        assert_eq!(back, cfg);
        assert_eq!(back.to_canonical_json(), text);
        let keys: Vec<&str> = ["\"costs\"", "\"data\"", "\"frontend\"", "\"network\"", "\"train\""]
            .into_iter()
            .collect();
        let pos: Vec<usize> = keys.iter().map(|k| text.find(k).unwrap()).collect();
        assert!(pos.windows(2).all(|w| w[0] < w[1]));
    }

    #[test]
    fn rejects_unknown_and_inconsistent() {
        assert!(matches!(parse_run_config(r#"{"trian": {}}"#), Err(IoError::Parse { .. })));
        assert!(matches!(parse_run_config("[1, 2"), Err(IoError::Parse { .. })));
        assert!(matches!(
            parse_run_config(r#"{"frontend": {"frames": 300}}"#),
            Err(IoError::Config(_))
        ));
        assert!(matches!(
            parse_run_config(r#"{"train": {"specmix": {"p_hyper": 1.5}}}"#),
            Err(IoError::Config(_))
        ));
    }
}
