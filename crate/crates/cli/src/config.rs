//! Training settings merged from flags and an optional TOML file.

use blockscramble::adaptnet::{FrontEnd, Lambdas, ModelConfig, SubnetInput};
use blockscramble::trainer::{LrSchedule, TrainConfig, DESK_BASE_LR};
use serde::Deserialize;

#[derive(Debug, Clone, Default, Deserialize, PartialEq)]
#[serde(deny_unknown_fields)]
pub struct TrainSettings {
    #[serde(default, deserialize_with = "parse_opt")]
    pub front: Option<FrontEnd>,
    pub epochs: Option<usize>,
    pub batch_size: Option<usize>,
    pub lr_schedule: Option<String>,
    pub momentum: Option<f64>,
    pub lambda_u: Option<f64>,
    pub lambda_s: Option<f64>,
    pub seed: Option<u64>,
    pub block_size: Option<usize>,
    pub feature_channels: Option<usize>,
    #[serde(default, deserialize_with = "parse_opt")]
    pub subnet_input: Option<SubnetInput>,
    pub threads: Option<usize>,
}

fn parse_opt<'de, D, T>(d: D) -> Result<Option<T>, D::Error>
where
    D: serde::Deserializer<'de>,
    T: std::str::FromStr,
    T::Err: std::fmt::Display,
{
    Option::<String>::deserialize(d)?
        .map(|s| s.parse().map_err(serde::de::Error::custom))
        .transpose()
}

impl TrainSettings {
    pub fn from_toml(text: &str) -> Result<Self, String> {
        toml::from_str(text).map_err(|e| format!("config: {e}"))
    }

    /// Fields set in `self` win over `base`.
    pub fn over(self, base: TrainSettings) -> TrainSettings {
        TrainSettings {
            front: self.front.or(base.front),
            epochs: self.epochs.or(base.epochs),
            batch_size: self.batch_size.or(base.batch_size),
            lr_schedule: self.lr_schedule.or(base.lr_schedule),
            momentum: self.momentum.or(base.momentum),
            lambda_u: self.lambda_u.or(base.lambda_u),
            lambda_s: self.lambda_s.or(base.lambda_s),
            seed: self.seed.or(base.seed),
            block_size: self.block_size.or(base.block_size),
            feature_channels: self.feature_channels.or(base.feature_channels),
            subnet_input: self.subnet_input.or(base.subnet_input),
            threads: self.threads.or(base.threads),
        }
    }

    /// Fills gaps with the desk defaults for 32x32 RGB input.
    pub fn resolve(&self, classes: usize) -> Result<(ModelConfig, TrainConfig), String> {
        let epochs = self.epochs.unwrap_or(30);
        let schedule = match &self.lr_schedule {
            Some(s) => LrSchedule::parse(s, epochs).map_err(|e| e.to_string())?,
            None => LrSchedule::scaled(epochs, DESK_BASE_LR),
        };
        let defaults = Lambdas::default();
        let train = TrainConfig {
            batch_size: self.batch_size.unwrap_or(128),
            epochs,
            schedule,
            momentum: self.momentum.unwrap_or(0.9),
            lambdas: Lambdas {
                u: self.lambda_u.unwrap_or(defaults.u),
                s: self.lambda_s.unwrap_or(defaults.s),
            },
            seed: self.seed.unwrap_or(0),
        };
        train.validate().map_err(|e| e.to_string())?;
        let base = ModelConfig::new(self.front.unwrap_or(FrontEnd::EleAdapt), 32, 32, classes);
        let model = ModelConfig {
            block_size: self.block_size.unwrap_or(base.block_size),
            feature_channels: self.feature_channels.unwrap_or(base.feature_channels),
            subnet_input: self.subnet_input.unwrap_or(base.subnet_input),
            ..base
        };
        model.validate().map_err(|e| e.to_string())?;
        Ok((model, train))
    }
}
