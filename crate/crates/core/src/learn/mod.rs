//! The four classifier families and train-fold standardisation.

mod forest;
mod linear;
mod logistic;
mod matrix;
mod standardize;
mod svm;

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub use forest::{fit_forest, splitmix64, stream_seed, ForestModel, ForestParams, Node, Tree};
pub use linear::{augmented_gram, fit_linear, solve_normal_equations, LinearModel};
pub use logistic::{fit_logistic, lbfgs, loss_and_gradient, LogisticModel, LogisticParams};
pub use matrix::Matrix;
pub use standardize::Standardizer;
pub use svm::{class_penalties, fit_svm, primal_objective, solve_svm, SvmModel, SvmParams, SvmSolution};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ClassifierKind {
    Lin,
    Log,
    Svm,
    Rf,
}

impl ClassifierKind {
    pub const ALL: [ClassifierKind; 4] = [ClassifierKind::Lin, ClassifierKind::Log, ClassifierKind::Svm, ClassifierKind::Rf];

    pub fn as_str(self) -> &'static str {
        match self {
            ClassifierKind::Lin => "lin",
            ClassifierKind::Log => "log",
            ClassifierKind::Svm => "svm",
            ClassifierKind::Rf => "rf",
        }
    }
}

impl fmt::Display for ClassifierKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for ClassifierKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        ClassifierKind::ALL
            .into_iter()
            .find(|k| k.as_str() == s)
            .ok_or_else(|| Error::Config(format!("unknown classifier '{s}' (expected lin, log, svm or rf)")))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ClassifierConfig {
    pub kind: ClassifierKind,
    pub seed: u64,
    /// Standardise features for lin/log/svm. rf always sees raw values.
    pub standardize: bool,
    pub lin_threshold: f64,
    pub log: LogisticParams,
    pub svm: SvmParams,
    pub rf: ForestParams,
}

impl Default for ClassifierConfig {
    fn default() -> Self {
        ClassifierConfig {
            kind: ClassifierKind::Lin,
            seed: 0,
            standardize: true,
            lin_threshold: 0.5,
            log: LogisticParams::default(),
            svm: SvmParams::default(),
            rf: ForestParams::default(),
        }
    }
}

impl ClassifierConfig {
    pub fn new(kind: ClassifierKind, seed: u64) -> Self {
        ClassifierConfig {
            kind,
            seed,
            ..Default::default()
        }
    }

    pub fn validate(&self) -> Result<()> {
        let rf = &self.rf;
        if rf.trees == 0 || rf.max_depth == 0 || rf.min_leaf == 0 {
            return Err(Error::Config("rf trees, max_depth and min_leaf must be positive".into()));
        }
        if !(rf.feature_fraction > 0.0 && rf.feature_fraction <= 1.0) {
            return Err(Error::Config(format!(
                "rf feature_fraction must lie in (0, 1], got {}",
                rf.feature_fraction
            )));
        }
        if !(self.svm.c > 0.0 && self.svm.c.is_finite()) {
            return Err(Error::Config(format!("svm c must be positive, got {}", self.svm.c)));
        }
        if !(self.svm.tolerance > 0.0) || !(self.log.gradient_tolerance > 0.0) {
            return Err(Error::Config("solver tolerances must be positive".into()));
        }
        if !(self.log.l2 >= 0.0) {
            return Err(Error::Config(format!("log l2 must be non-negative, got {}", self.log.l2)));
        }
        if self.log.history == 0 {
            return Err(Error::Config("log history must be positive".into()));
        }
        if !self.lin_threshold.is_finite() {
            return Err(Error::Config("lin_threshold must be finite".into()));
        }
        Ok(())
    }

    fn standardizes(&self) -> bool {
        self.standardize && self.kind != ClassifierKind::Rf
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "lowercase")]
pub enum ModelParams {
    Lin(LinearModel),
    Log(LogisticModel),
    Svm(SvmModel),
    Rf(ForestModel),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainedModel {
    pub standardizer: Option<Standardizer>,
    pub params: ModelParams,
    pub seed: u64,
    pub config: ClassifierConfig,
}

impl TrainedModel {
    /// `y` holds 0/1 targets. lin accepts a single class; the others refuse.
    pub fn fit(cfg: &ClassifierConfig, x: &Matrix, y: &[f64]) -> Result<TrainedModel> {
        if x.rows() == 0 {
            return Err(Error::Training("no training rows".into()));
        }
        if x.rows() != y.len() {
            return Err(Error::Training(format!("{} rows but {} targets", x.rows(), y.len())));
        }
        if x.cols() == 0 {
            return Err(Error::Training("no features selected".into()));
        }
        if y.iter().any(|&v| v != 0.0 && v != 1.0) {
            return Err(Error::Training("targets must be 0 or 1".into()));
        }
        let positives = y.iter().filter(|&&v| v == 1.0).count();
        if cfg.kind != ClassifierKind::Lin && (positives == 0 || positives == y.len()) {
            return Err(Error::Training(format!("{} needs both classes in the training data", cfg.kind)));
        }
        let standardizer = cfg.standardizes().then(|| Standardizer::fit(x));
        let z;
        let xs = match &standardizer {
            Some(s) => {
                z = s.apply(x);
                &z
            }
            None => x,
        };
        let params = match cfg.kind {
            ClassifierKind::Lin => ModelParams::Lin(fit_linear(xs, y)),
            ClassifierKind::Log => ModelParams::Log(fit_logistic(xs, y, &cfg.log)),
            ClassifierKind::Svm => ModelParams::Svm(fit_svm(xs, y, &cfg.svm)),
            ClassifierKind::Rf => ModelParams::Rf(fit_forest(xs, y, &cfg.rf, cfg.seed)),
        };
        Ok(TrainedModel {
            standardizer,
            params,
            seed: cfg.seed,
            config: cfg.clone(),
        })
    }

    pub fn kind(&self) -> ClassifierKind {
        match self.params {
            ModelParams::Lin(_) => ClassifierKind::Lin,
            ModelParams::Log(_) => ClassifierKind::Log,
            ModelParams::Svm(_) => ClassifierKind::Svm,
            ModelParams::Rf(_) => ClassifierKind::Rf,
        }
    }

    /// Coefficients on the (standardised) features, if the model is linear.
    pub fn coefficients(&self) -> Option<&[f64]> {
        match &self.params {
            ModelParams::Lin(m) => Some(&m.coefficients),
            ModelParams::Log(m) => Some(&m.coefficients),
            ModelParams::Svm(m) => Some(&m.coefficients),
            ModelParams::Rf(_) => None,
        }
    }

    pub fn predict_row(&self, row: &[f64]) -> bool {
        let mut buf;
        let row = match &self.standardizer {
            Some(s) => {
                buf = row.to_vec();
                s.apply_row_in_place(&mut buf);
                &buf[..]
            }
            None => row,
        };
        match &self.params {
            ModelParams::Lin(m) => m.decision(row) >= self.config.lin_threshold,
            ModelParams::Log(m) => m.probability(row) >= 0.5,
            ModelParams::Svm(m) => m.decision(row) > 0.0,
            ModelParams::Rf(m) => m.predict(row),
        }
    }

    pub fn predict(&self, x: &Matrix) -> Vec<bool> {
        x.iter_rows().map(|r| self.predict_row(r)).collect()
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string(self).expect("model serialises")
    }

    pub fn from_json(text: &str) -> Result<TrainedModel> {
        serde_json::from_str(text).map_err(|e| Error::Validation(format!("bad model dump: {e}")))
    }
}
