//! Label binarisation, participant-independent stratified folds, F1
//! aggregation, exhaustive feature-subset search and polarity notation.

use std::cmp::Ordering;
use std::collections::{BTreeMap, HashMap};

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::features::{FeatureMask, FeatureMatrix};
use crate::ingest::{LabelSchema, SampleRecord};
use crate::learn::{
    augmented_gram, solve_normal_equations, ClassifierConfig, ClassifierKind, LinearModel, Matrix, Standardizer,
    TrainedModel,
};

pub const DEFAULT_FOLDS: usize = 3;
/// Masks beyond `2^MAX_SEARCH_FEATURES` need an explicit override.
pub const MAX_SEARCH_FEATURES: usize = 25;
/// Absolute floor of the per-fold near-zero coefficient band.
pub const POLARITY_FLOOR: f64 = 1e-8;
pub const POLARITY_RELATIVE: f64 = 1e-3;

/// Class 1 iff the score is strictly above the threshold. Missing scores stay
/// `None`.
pub fn binarize(scores: &[Option<f64>], threshold: f64) -> Vec<Option<bool>> {
    let classes: Vec<Option<bool>> = scores.iter().map(|s| s.map(|v| v > threshold)).collect();
    let missing = classes.iter().filter(|c| c.is_none()).count();
    if missing > 0 {
        log::warn!("{missing} sample(s) without a score are excluded");
    }
    let positive = classes.iter().flatten().filter(|&&c| c).count();
    let present = classes.len() - missing;
    if present > 0 && (positive == 0 || positive == present) {
        log::warn!("threshold {threshold} leaves a single class");
    }
    classes
}

/// Threshold among the observed scores that splits them most evenly.
/// Ties go to the smallest threshold.
pub fn balanced_threshold(scores: &[f64]) -> Option<f64> {
    let mut distinct: Vec<f64> = scores.iter().copied().filter(|v| v.is_finite()).collect();
    distinct.sort_by(f64::total_cmp);
    distinct.dedup();
    let n = scores.len() as i64;
    distinct
        .into_iter()
        .map(|t| {
            let above = scores.iter().filter(|&&v| v > t).count() as i64;
            ((2 * above - n).abs(), t)
        })
        .min_by(|a, b| a.0.cmp(&b.0).then(a.1.total_cmp(&b.1)))
        .map(|(_, t)| t)
}

/// Feature rows joined to binary classes; samples without a score dropped.
#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    pub names: Vec<String>,
    pub sample_ids: Vec<String>,
    pub participant_ids: Vec<String>,
    pub x: Matrix,
    /// 0/1 targets.
    pub y: Vec<f64>,
}

impl Dataset {
    pub fn new(
        names: Vec<String>,
        sample_ids: Vec<String>,
        participant_ids: Vec<String>,
        x: Matrix,
        y: Vec<f64>,
    ) -> Result<Self> {
        if x.cols() != names.len() || x.rows() != y.len() || x.rows() != sample_ids.len() || x.rows() != participant_ids.len() {
            return Err(Error::Validation("dataset dimensions disagree".into()));
        }
        Ok(Dataset {
            names,
            sample_ids,
            participant_ids,
            x,
            y,
        })
    }

    pub fn from_features(matrix: &FeatureMatrix, records: &[SampleRecord], schema: &LabelSchema, threshold: f64) -> Result<Self> {
        if !(schema.min <= threshold && threshold < schema.max) {
            return Err(Error::Validation(format!(
                "threshold {threshold} outside the `{}` range [{}, {})",
                schema.name, schema.min, schema.max
            )));
        }
        let by_id: HashMap<&str, &SampleRecord> = records.iter().map(|r| (r.sample_id.as_str(), r)).collect();
        let mut scores = Vec::with_capacity(matrix.n_samples());
        for id in &matrix.sample_ids {
            let record = by_id
                .get(id.as_str())
                .ok_or_else(|| Error::Validation(format!("sample `{id}` is not in the manifest")))?;
            let score = record.labels.get(&schema.name).copied();
            if let Some(s) = score {
                if s < schema.min || s > schema.max {
                    return Err(Error::Validation(format!(
                        "sample `{id}`: {} score {s} outside [{}, {}]",
                        schema.name, schema.min, schema.max
                    )));
                }
            }
            scores.push(score);
        }
        let classes = binarize(&scores, threshold);
        let mut sample_ids = Vec::new();
        let mut participant_ids = Vec::new();
        let mut rows = Vec::new();
        let mut y = Vec::new();
        for (i, class) in classes.into_iter().enumerate() {
            if let Some(c) = class {
                sample_ids.push(matrix.sample_ids[i].clone());
                participant_ids.push(matrix.participant_ids[i].clone());
                rows.push(matrix.rows[i].clone());
                y.push(if c { 1.0 } else { 0.0 });
            }
        }
        if rows.is_empty() {
            return Err(Error::Validation(format!("no sample has a `{}` score", schema.name)));
        }
        Dataset::new(matrix.names.clone(), sample_ids, participant_ids, Matrix::from_rows(&rows), y)
    }

    pub fn n_features(&self) -> usize {
        self.x.cols()
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct FoldPlan {
    pub k: usize,
    pub assignments: BTreeMap<String, usize>,
    pub seed: u64,
}

impl FoldPlan {
    pub fn fold_of(&self, participant: &str) -> Option<usize> {
        self.assignments.get(participant).copied()
    }

    /// `(train, test)` row indices for one fold.
    pub fn split(&self, participants: &[String], fold: usize) -> (Vec<usize>, Vec<usize>) {
        (0..participants.len()).partition(|&i| self.assignments[&participants[i]] != fold)
    }
}

/// Participants are sorted, shuffled by `seed` and dealt round-robin within
/// each class (positives first; negatives continue where positives stopped).
/// A participant's class is the majority of its samples, ties positive.
pub fn make_folds(participants: &[String], classes: &[bool], k: usize, seed: u64) -> Result<FoldPlan> {
    if k < 2 {
        return Err(Error::Config(format!("need at least 2 folds, got {k}")));
    }
    if participants.len() != classes.len() {
        return Err(Error::Validation("participants and classes differ in length".into()));
    }
    let mut votes: BTreeMap<&str, (usize, usize)> = BTreeMap::new();
    for (p, &c) in participants.iter().zip(classes) {
        let v = votes.entry(p.as_str()).or_default();
        if c {
            v.0 += 1;
        } else {
            v.1 += 1;
        }
    }
    let mut ids: Vec<(&str, bool)> = votes.into_iter().map(|(p, (pos, neg))| (p, pos >= neg)).collect();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    ids.shuffle(&mut rng);
    let positives: Vec<&str> = ids.iter().filter(|(_, c)| *c).map(|(p, _)| *p).collect();
    let negatives: Vec<&str> = ids.iter().filter(|(_, c)| !*c).map(|(p, _)| *p).collect();
    if positives.is_empty() || negatives.is_empty() {
        return Err(Error::Validation(format!(
            "folds need participants of both classes ({} positive, {} negative)",
            positives.len(),
            negatives.len()
        )));
    }
    if positives.len() < k || negatives.len() < k {
        log::warn!(
            "fewer than {k} participants in a class ({} positive, {} negative); some folds lack it",
            positives.len(),
            negatives.len()
        );
    }
    let mut assignments = BTreeMap::new();
    for (i, p) in positives.iter().chain(&negatives).enumerate() {
        assignments.insert(p.to_string(), i % k);
    }
    Ok(FoldPlan { k, assignments, seed })
}

/// F1 of the positive class; 0 when undefined.
pub fn f1_score(predicted: &[bool], truth: &[bool]) -> f64 {
    let (mut tp, mut fp, mut fneg) = (0usize, 0usize, 0usize);
    for (&p, &t) in predicted.iter().zip(truth) {
        match (p, t) {
            (true, true) => tp += 1,
            (true, false) => fp += 1,
            (false, true) => fneg += 1,
            (false, false) => {}
        }
    }
    let denom = 2 * tp + fp + fneg;
    if denom == 0 {
        0.0
    } else {
        (2 * tp) as f64 / denom as f64
    }
}

/// Mean and population standard deviation.
pub fn mean_std(values: &[f64]) -> (f64, f64) {
    if values.is_empty() {
        return (0.0, 0.0);
    }
    let n = values.len() as f64;
    let mean = values.iter().sum::<f64>() / n;
    let var = values.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / n;
    (mean, var.sqrt())
}

/// One polarity symbol per feature from per-fold coefficients.
pub fn polarity(fold_coefficients: &[Vec<f64>]) -> Vec<&'static str> {
    let Some(first) = fold_coefficients.first() else {
        return Vec::new();
    };
    let eps: Vec<f64> = fold_coefficients
        .iter()
        .map(|c| (POLARITY_RELATIVE * c.iter().fold(0.0f64, |m, v| m.max(v.abs()))).max(POLARITY_FLOOR))
        .collect();
    (0..first.len())
        .map(|j| {
            let folds = || fold_coefficients.iter().zip(&eps).map(move |(c, &e)| (c[j], e));
            if folds().all(|(c, e)| c > e) {
                "+"
            } else if folds().all(|(c, e)| c < -e) {
                "¬"
            } else if folds().all(|(c, e)| c.abs() <= e) {
                "/"
            } else {
                "?"
            }
        })
        .collect()
}

/// `[localisation]-[feature][polarity]` for every selected feature.
pub fn notation_tokens(names: &[String], mask: &FeatureMask, fold_coefficients: &[Vec<f64>]) -> Vec<String> {
    mask.indices()
        .into_iter()
        .zip(polarity(fold_coefficients))
        .map(|(i, p)| format!("{}{p}", names[i]))
        .collect()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub classifier: ClassifierKind,
    pub per_fold_f1: Vec<f64>,
    pub f1_mean: f64,
    pub f1_std: f64,
    pub mask: FeatureMask,
    pub notation: Vec<String>,
    /// Folds whose training split held a single class (scored 0).
    pub flagged_folds: Vec<usize>,
}

fn check_mask(mask: &FeatureMask, n_features: usize) -> Result<()> {
    if mask.len != n_features {
        return Err(Error::Validation(format!(
            "mask has {} bits but the data has {n_features} features",
            mask.len
        )));
    }
    if mask.is_empty() {
        return Err(Error::Validation("mask selects no features".into()));
    }
    Ok(())
}

/// Model trained on every fold but `fold`, over the masked columns. `None`
/// when the training split holds one class.
pub fn fit_fold(cfg: &ClassifierConfig, data: &Dataset, plan: &FoldPlan, fold: usize, mask: &FeatureMask) -> Result<Option<TrainedModel>> {
    check_mask(mask, data.n_features())?;
    let (train, _) = plan.split(&data.participant_ids, fold);
    fit_rows(cfg, data, &train, &mask.indices())
}

fn fit_rows(cfg: &ClassifierConfig, data: &Dataset, train: &[usize], columns: &[usize]) -> Result<Option<TrainedModel>> {
    let y: Vec<f64> = train.iter().map(|&i| data.y[i]).collect();
    let positives = y.iter().filter(|&&v| v == 1.0).count();
    if positives == 0 || positives == y.len() {
        return Ok(None);
    }
    let x = data.x.select_rows(train).select_columns(columns);
    TrainedModel::fit(cfg, &x, &y).map(Some)
}

/// Per-fold F1 of `cfg` on the masked features. Notation comes from per-fold
/// lin fits whatever the classifier.
pub fn cross_validate(cfg: &ClassifierConfig, data: &Dataset, plan: &FoldPlan, mask: &FeatureMask) -> Result<EvalReport> {
    check_mask(mask, data.n_features())?;
    let columns = mask.indices();
    let lin_cfg = ClassifierConfig {
        kind: ClassifierKind::Lin,
        ..cfg.clone()
    };
    let mut per_fold_f1 = Vec::with_capacity(plan.k);
    let mut flagged_folds = Vec::new();
    let mut fold_coefficients = Vec::new();
    for fold in 0..plan.k {
        let (train, test) = plan.split(&data.participant_ids, fold);
        let Some(model) = fit_rows(cfg, data, &train, &columns)? else {
            log::warn!("fold {fold}: training split has a single class; F1 set to 0");
            per_fold_f1.push(0.0);
            flagged_folds.push(fold);
            continue;
        };
        let x_test = data.x.select_rows(&test).select_columns(&columns);
        let predicted = model.predict(&x_test);
        let truth: Vec<bool> = test.iter().map(|&i| data.y[i] == 1.0).collect();
        per_fold_f1.push(f1_score(&predicted, &truth));
        let lin = if cfg.kind == ClassifierKind::Lin {
            model
        } else {
            fit_rows(&lin_cfg, data, &train, &columns)?.expect("both classes present")
        };
        fold_coefficients.push(lin.coefficients().expect("lin is linear").to_vec());
    }
    let (f1_mean, f1_std) = mean_std(&per_fold_f1);
    Ok(EvalReport {
        classifier: cfg.kind,
        per_fold_f1,
        f1_mean,
        f1_std,
        mask: *mask,
        notation: notation_tokens(&data.names, mask, &fold_coefficients),
        flagged_folds,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SearchConfig {
    pub classifier: ClassifierConfig,
    /// Allow more than `MAX_SEARCH_FEATURES` features.
    pub allow_large: bool,
    /// Re-score the winning mask with every classifier kind.
    pub reevaluate: bool,
}

impl Default for SearchConfig {
    fn default() -> Self {
        SearchConfig {
            classifier: ClassifierConfig::default(),
            allow_large: false,
            reevaluate: true,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SearchOutcome {
    pub best: EvalReport,
    pub masks_evaluated: u64,
    pub reevaluations: Vec<EvalReport>,
}

/// Score of one mask, ordered so that the better candidate compares less.
#[derive(Debug, Clone, Copy)]
pub struct Candidate {
    pub mask: u64,
    pub f1_mean: f64,
    pub f1_std: f64,
}

impl Candidate {
    /// Higher mean, then fewer features, lower std, lower mask value.
    pub fn rank(&self, other: &Candidate) -> Ordering {
        other
            .f1_mean
            .total_cmp(&self.f1_mean)
            .then(self.mask.count_ones().cmp(&other.mask.count_ones()))
            .then(self.f1_std.total_cmp(&other.f1_std))
            .then(self.mask.cmp(&other.mask))
    }

    fn better(self, other: Candidate) -> Candidate {
        if self.rank(&other) == Ordering::Greater {
            other
        } else {
            self
        }
    }
}

struct FoldSystem {
    gram: Vec<f64>,
    rhs: Vec<f64>,
    k: usize,
    test_rows: Matrix,
    truth: Vec<bool>,
    single_class: bool,
}

impl FoldSystem {
    fn new(cfg: &ClassifierConfig, data: &Dataset, plan: &FoldPlan, fold: usize) -> Self {
        let (train, test) = plan.split(&data.participant_ids, fold);
        let y: Vec<f64> = train.iter().map(|&i| data.y[i]).collect();
        let positives = y.iter().filter(|&&v| v == 1.0).count();
        let mut x_train = data.x.select_rows(&train);
        let mut x_test = data.x.select_rows(&test);
        if cfg.standardize && !train.is_empty() {
            let s = Standardizer::fit(&x_train);
            x_train = s.apply(&x_train);
            x_test = s.apply(&x_test);
        }
        let (gram, rhs) = augmented_gram(&x_train, &y);
        FoldSystem {
            gram,
            rhs,
            k: data.n_features() + 1,
            test_rows: x_test,
            truth: test.iter().map(|&i| data.y[i] == 1.0).collect(),
            single_class: positives == 0 || positives == y.len(),
        }
    }

    fn score(&self, columns: &[usize], threshold: f64, sub_gram: &mut Vec<f64>, sub_rhs: &mut Vec<f64>, row: &mut Vec<f64>) -> f64 {
        if self.single_class {
            return 0.0;
        }
        let m = columns.len() + 1;
        let index = |a: usize| if a == 0 { 0 } else { columns[a - 1] + 1 };
        sub_gram.clear();
        sub_gram.resize(m * m, 0.0);
        sub_rhs.clear();
        for a in 0..m {
            let ia = index(a);
            sub_rhs.push(self.rhs[ia]);
            for b in a..m {
                sub_gram[a * m + b] = self.gram[ia * self.k + index(b)];
            }
        }
        let beta = solve_normal_equations(sub_gram, sub_rhs, m);
        let model = LinearModel {
            intercept: beta[0],
            coefficients: beta[1..].to_vec(),
        };
        let predicted: Vec<bool> = self
            .test_rows
            .iter_rows()
            .map(|r| {
                row.clear();
                row.extend(columns.iter().map(|&c| r[c]));
                model.decision(row) >= threshold
            })
            .collect();
        f1_score(&predicted, &self.truth)
    }
}

/// Every non-empty mask ranked by [`Candidate::rank`]; the winner is re-run
/// through [`cross_validate`] for its report.
pub fn feature_search(data: &Dataset, plan: &FoldPlan, cfg: &SearchConfig) -> Result<SearchOutcome> {
    let n = data.n_features();
    if n == 0 {
        return Err(Error::Validation("no features to search".into()));
    }
    if n > MAX_SEARCH_FEATURES && !cfg.allow_large {
        return Err(Error::Validation(format!(
            "refusing to search 2^{n} masks; at most {MAX_SEARCH_FEATURES} features without an explicit override"
        )));
    }
    if n > FeatureMask::MAX_LEN {
        return Err(Error::Validation(format!("at most {} features can be searched", FeatureMask::MAX_LEN)));
    }
    let total: u64 = (1u64 << n) - 1;
    let classifier = &cfg.classifier;
    let best = if classifier.kind == ClassifierKind::Lin {
        let systems: Vec<FoldSystem> = (0..plan.k).map(|f| FoldSystem::new(classifier, data, plan, f)).collect();
        (1..=total)
            .into_par_iter()
            .map_init(
                || (Vec::new(), Vec::new(), Vec::new(), Vec::new(), Vec::new()),
                |(columns, g, r, row, f1s), bits| {
                    columns.clear();
                    columns.extend((0..n).filter(|j| bits >> j & 1 == 1));
                    f1s.clear();
                    for s in &systems {
                        f1s.push(s.score(columns, classifier.lin_threshold, g, r, row));
                    }
                    let (f1_mean, f1_std) = mean_std(f1s);
                    Candidate {
                        mask: bits,
                        f1_mean,
                        f1_std,
                    }
                },
            )
            .reduce_with(Candidate::better)
    } else {
        (1..=total)
            .into_par_iter()
            .map(|bits| {
                let report = cross_validate(classifier, data, plan, &FeatureMask::new(bits, n))?;
                Ok(Candidate {
                    mask: bits,
                    f1_mean: report.f1_mean,
                    f1_std: report.f1_std,
                })
            })
            .try_reduce_with(|a: Candidate, b| Ok(a.better(b)))
            .transpose()?
    }
    .expect("at least one mask");
    let mask = FeatureMask::new(best.mask, n);
    let report = cross_validate(classifier, data, plan, &mask)?;
    let reevaluations = if cfg.reevaluate {
        ClassifierKind::ALL
            .into_iter()
            .map(|kind| cross_validate(&ClassifierConfig { kind, ..classifier.clone() }, data, plan, &mask))
            .collect::<Result<Vec<_>>>()?
    } else {
        Vec::new()
    };
    Ok(SearchOutcome {
        best: report,
        masks_evaluated: total,
        reevaluations,
    })
}

/// Binarisation range and threshold echoed in reports.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Thresholds {
    pub min: f64,
    pub max: f64,
    pub binarization: f64,
    pub lin_decision: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReevaluationEntry {
    pub classifier: ClassifierKind,
    pub per_fold_f1: Vec<f64>,
    pub f1_mean: f64,
    pub f1_std: f64,
}

/// The evaluation report written to disk.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReportFile {
    pub label: String,
    pub thresholds: Thresholds,
    pub classifier: ClassifierKind,
    pub per_fold_f1: Vec<f64>,
    pub f1_mean: f64,
    pub f1_std: f64,
    pub mask_bits: String,
    pub notation_tokens: Vec<String>,
    pub seed: u64,
    pub config_hash: String,
    pub feature_names: Vec<String>,
    pub flagged_folds: Vec<usize>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub masks_evaluated: Option<u64>,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub reevaluations: Vec<ReevaluationEntry>,
}

impl ReportFile {
    pub fn new(
        schema: &LabelSchema,
        threshold: f64,
        cfg: &ClassifierConfig,
        report: &EvalReport,
        data: &Dataset,
        config_hash: &str,
    ) -> Self {
        ReportFile {
            label: schema.name.clone(),
            thresholds: Thresholds {
                min: schema.min,
                max: schema.max,
                binarization: threshold,
                lin_decision: cfg.lin_threshold,
            },
            classifier: report.classifier,
            per_fold_f1: report.per_fold_f1.clone(),
            f1_mean: report.f1_mean,
            f1_std: report.f1_std,
            mask_bits: report.mask.bit_string(),
            notation_tokens: report.notation.clone(),
            seed: cfg.seed,
            config_hash: config_hash.to_string(),
            feature_names: data.names.clone(),
            flagged_folds: report.flagged_folds.clone(),
            masks_evaluated: None,
            reevaluations: Vec::new(),
        }
    }

    pub fn with_search(mut self, outcome: &SearchOutcome) -> Self {
        self.masks_evaluated = Some(outcome.masks_evaluated);
        self.reevaluations = outcome
            .reevaluations
            .iter()
            .map(|r| ReevaluationEntry {
                classifier: r.classifier,
                per_fold_f1: r.per_fold_f1.clone(),
                f1_mean: r.f1_mean,
                f1_std: r.f1_std,
            })
            .collect();
        self
    }
}
