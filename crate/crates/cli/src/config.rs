use std::fmt;
use std::path::PathBuf;

use clap::Args;
use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Kind {
    Gd,
    Sgd,
    Ensemble,
    Moments,
    FokkerPlanck,
    Game,
}

impl fmt::Display for Kind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let s = match self {
            Kind::Gd => "gd",
            Kind::Sgd => "sgd",
            Kind::Ensemble => "ensemble",
            Kind::Moments => "moments",
            Kind::FokkerPlanck => "fokker-planck",
            Kind::Game => "game",
        };
        f.write_str(s)
    }
}

/// Flags of every experiment subcommand. A JSON config file uses the same
/// keys plus `kind`.
#[derive(Debug, Clone, Default, Args, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case", deny_unknown_fields)]
pub struct ExperimentConfig {
    #[arg(skip)]
    #[serde(default)]
    pub kind: Option<Kind>,

    /// convex1d, nonconvex1d:SIGMA or quadratic:PATH
    #[arg(long)]
    #[serde(default)]
    pub objective: Option<String>,

    /// Catalog game name (see list-catalog)
    #[arg(long)]
    #[serde(default)]
    pub name: Option<String>,

    /// Game JSON file, instead of --name
    #[arg(long)]
    #[serde(default)]
    pub game_file: Option<PathBuf>,

    /// Smoothing exponent
    #[arg(long)]
    #[serde(default)]
    pub p: Option<u32>,

    /// Divide payoffs by this factor (default: largest entry when p >= 10)
    #[arg(long)]
    #[serde(default)]
    pub rescale: Option<f64>,

    /// gd, sgd, coordinate, combined or minibatch:B
    #[arg(long)]
    #[serde(default)]
    pub estimator: Option<String>,

    /// e.g. const:0.1, power:c:p, log:c, delayed:c:m0:q
    #[arg(long)]
    #[serde(default)]
    pub schedule: Option<String>,

    #[arg(long)]
    #[serde(default)]
    pub iters: Option<usize>,

    #[arg(long)]
    #[serde(default)]
    pub trials: Option<usize>,

    #[arg(long)]
    #[serde(default)]
    pub seed: Option<u64>,

    /// Comma-separated starting point
    #[arg(long, value_delimiter = ',', allow_hyphen_values = true)]
    #[serde(default)]
    pub start: Option<Vec<f64>>,

    /// LO,HI: draw each start coordinate uniformly from [LO, HI]
    #[arg(long, value_delimiter = ',', allow_hyphen_values = true)]
    #[serde(default)]
    pub start_box: Option<Vec<f64>>,

    /// K:D (or K:D:scaled) penalty keeping game iterates feasible
    #[arg(long)]
    #[serde(default)]
    pub penalty: Option<String>,

    #[arg(long)]
    #[serde(default)]
    pub record_every: Option<usize>,

    /// Histogram bins per axis (default Freedman-Diaconis)
    #[arg(long)]
    #[serde(default)]
    pub bins: Option<usize>,

    #[arg(long, allow_hyphen_values = true)]
    #[serde(default)]
    pub x_min: Option<f64>,

    #[arg(long, allow_hyphen_values = true)]
    #[serde(default)]
    pub x_max: Option<f64>,

    #[arg(long)]
    #[serde(default)]
    pub cells: Option<usize>,

    #[arg(long)]
    #[serde(default)]
    pub dt: Option<f64>,

    /// Fokker-Planck end time (default: iters)
    #[arg(long)]
    #[serde(default)]
    pub time: Option<f64>,

    #[arg(long, allow_hyphen_values = true)]
    #[serde(default)]
    pub init_mean: Option<f64>,

    #[arg(long)]
    #[serde(default)]
    pub init_var: Option<f64>,

    /// Comma-separated snapshot times
    #[arg(long, value_delimiter = ',')]
    #[serde(default)]
    pub snapshots: Option<Vec<f64>>,

    /// upwind or exponential_fitting
    #[arg(long)]
    #[serde(default)]
    pub flux: Option<String>,

    #[arg(long)]
    #[serde(default)]
    pub output: Option<PathBuf>,

    /// Replace an existing output directory
    #[arg(long)]
    #[serde(default, skip_serializing)]
    pub force: bool,
}

impl ExperimentConfig {
    pub fn from_json(text: &str) -> serde_json::Result<Self> {
        serde_json::from_str(text)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn json_keys_match_flags() {
        let c = ExperimentConfig::from_json(
            r#"{"kind": "fokker-planck", "schedule": "log:0.5", "x-min": -4, "init-var": 0.1, "start-box": [0, 1]}"#,
        )
        .unwrap();
        assert_eq!(c.kind, Some(Kind::FokkerPlanck));
        assert_eq!(c.x_min, Some(-4.0));
        assert_eq!(c.start_box, Some(vec![0.0, 1.0]));
    }

    #[test]
    fn unknown_keys_rejected() {
        assert!(ExperimentConfig::from_json(r#"{"kind": "gd", "iterations": 5}"#).is_err());
    }

    #[test]
    fn echo_round_trips() {
        let c = ExperimentConfig {
            kind: Some(Kind::Game),
            name: Some("ex62".into()),
            p: Some(10),
            force: true,
            ..Default::default()
        };
        let text = serde_json::to_string(&c).unwrap();
        assert!(!text.contains("force"));
        let back = ExperimentConfig::from_json(&text).unwrap();
        assert_eq!(serde_json::to_string(&back).unwrap(), text);
    }
}
