//! Text configuration: `[sbm]`, `[model]`, `[train]` and `[ablate]` tables.

use std::path::Path;

use ffgt::sbm::SbmPatternParams;
use ffgt::trainer::{FlSetting, ModelConfig, TrainConfig};
use serde::{Deserialize, Serialize};

use crate::error::CliError;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SbmSection {
    pub p: f64,
    pub q: f64,
    /// Defaults to `p` when omitted.
    pub p_p: Option<f64>,
    pub q_p: f64,
    pub n_communities: usize,
    pub community_size_range: [usize; 2],
    pub pattern_size: usize,
    pub n_patterns: usize,
    pub feature_vocab: u32,
    pub connected_only: bool,
    pub seed: u64,
    pub n_train: usize,
    pub n_val: usize,
    pub n_test: usize,
}

impl Default for SbmSection {
    fn default() -> Self {
        let d = SbmPatternParams::default();
        Self {
            p: d.p,
            q: d.q,
            p_p: None,
            q_p: d.q_p,
            n_communities: d.n_communities,
            community_size_range: d.community_size_range,
            pattern_size: d.pattern_size,
            n_patterns: d.n_patterns,
            feature_vocab: d.feature_vocab,
            connected_only: d.connected_only,
            seed: d.seed,
            n_train: 2000,
            n_val: 400,
            n_test: 400,
        }
    }
}

impl SbmSection {
    pub fn params(&self) -> SbmPatternParams {
        SbmPatternParams {
            p: self.p,
            q: self.q,
            p_p: self.p_p.unwrap_or(self.p),
            q_p: self.q_p,
            n_communities: self.n_communities,
            community_size_range: self.community_size_range,
            pattern_size: self.pattern_size,
            n_patterns: self.n_patterns,
            feature_vocab: self.feature_vocab,
            seed: self.seed,
            connected_only: self.connected_only,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct AblateSection {
    pub fl_list: Vec<FlSetting>,
    pub seeds: Vec<u64>,
}

impl Default for AblateSection {
    fn default() -> Self {
        Self {
            fl_list: vec![FlSetting::Vanilla, FlSetting::Focal(1), FlSetting::Focal(2), FlSetting::Focal(3)],
            seeds: vec![0, 1, 2],
        }
    }
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct Config {
    pub sbm: SbmSection,
    pub model: ModelConfig,
    pub train: TrainConfig,
    pub ablate: AblateSection,
}

impl Config {
    pub fn parse(text: &str) -> Result<Self, CliError> {
        let cfg: Config = toml::from_str(text).map_err(|e| CliError::usage(format!("config: {e}")))?;
        Ok(cfg.resolved())
    }

    pub fn load(path: Option<&Path>) -> Result<Self, CliError> {
        match path {
            None => Ok(Config::default().resolved()),
            Some(p) => {
                let text = std::fs::read_to_string(p)
                    .map_err(|e| CliError::io(format!("cannot read config {}: {e}", p.display())))?;
                Config::parse(&text)
            }
        }
    }

    /// Fills derived defaults so the echoed config is fully explicit.
    fn resolved(mut self) -> Self {
        self.sbm.p_p.get_or_insert(self.sbm.p);
        self
    }

    pub fn validate(&self) -> Result<(), CliError> {
        self.sbm.params().validate()?;
        self.model.validate()?;
        self.train.validate()?;
        if self.ablate.fl_list.is_empty() || self.ablate.seeds.is_empty() {
            return Err(CliError::usage("config: ablate.fl_list and ablate.seeds must be non-empty"));
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn empty_text_gives_defaults() {
        let c = Config::parse("").unwrap();
        assert_eq!(c.sbm.p_p, Some(0.16));
        assert_eq!(c.model, ModelConfig::default());
        assert_eq!(c.ablate.fl_list.len(), 4);
    }

    #[test]
    fn unknown_key_names_the_key() {
        let err = Config::parse("[model]\ndepth = 3\n").unwrap_err();
        assert_eq!(err.code, 2);
        assert!(err.message.contains("depth"), "{}", err.message);
        let err = Config::parse("[optim]\nlr = 1.0\n").unwrap_err();
        assert!(err.message.contains("optim"), "{}", err.message);
    }

    #[test]
    fn mixed_fl_list_parses() {
        let c = Config::parse("[ablate]\nfl_list = [\"vanilla\", 2]\nseeds = [4]\n").unwrap();
        assert_eq!(c.ablate.fl_list, vec![FlSetting::Vanilla, FlSetting::Focal(2)]);
        assert_eq!(c.ablate.seeds, vec![4]);
    }

    #[test]
    fn sections_round_trip_through_toml() {
        let c = Config::parse("[sbm]\np = 0.1\nn_train = 5\n[train]\nepochs = 3\n").unwrap();
        let text = toml::to_string(&c).unwrap();
        assert_eq!(Config::parse(&text).unwrap(), c);
    }
}
