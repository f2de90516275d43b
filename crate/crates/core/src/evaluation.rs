//! Stratified cross-validation, binary metrics, and the per-configuration
//! experiment runner.

use std::cmp::Ordering;
use std::collections::{BTreeMap, BTreeSet};
use std::fmt;

use ndarray::Array2;
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use tracing::info;

use crate::classifier::{init_model, predict_label, predict_proba_batch, train, TrainConfig};
use crate::cohort::{one_hot_encode_cohort, CohortManifest, Idh1Status};
use crate::embedding::{apply_normalizer, fit_normalizer, fuse_concat, Embedding, STD_EPSILON};
use crate::{Error, Result};

pub const DEFAULT_FOLDS: usize = 5;

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct FoldSplit {
    pub n_folds: usize,
    pub assignments: BTreeMap<String, usize>,
    pub seed: u64,
}

impl FoldSplit {
    pub fn held_out(&self, fold: usize) -> BTreeSet<String> {
        self.assignments
            .iter()
            .filter(|(_, f)| **f == fold)
            .map(|(id, _)| id.clone())
            .collect()
    }

    pub fn training(&self, fold: usize) -> BTreeSet<String> {
        self.assignments
            .iter()
            .filter(|(_, f)| **f != fold)
            .map(|(id, _)| id.clone())
            .collect()
    }

    /// `counts[fold][class index]`.
    pub fn class_counts(&self, labels: &BTreeMap<String, Idh1Status>) -> Vec<[usize; 2]> {
        let mut counts = vec![[0usize; 2]; self.n_folds];
        for (id, fold) in &self.assignments {
            if let Some(l) = labels.get(id) {
                counts[*fold][l.index()] += 1;
            }
        }
        counts
    }
}

/// Per-class seeded shuffle, then one round-robin pass over all classes.
/// The round-robin position carries over from one class to the next, so both
/// per-class counts and total fold sizes differ by at most one across folds.
pub fn stratified_folds(
    labels: &BTreeMap<String, Idh1Status>,
    n_folds: usize,
    seed: u64,
) -> Result<FoldSplit> {
    if n_folds < 2 {
        return Err(Error::InvalidArgument("n_folds must be >= 2".into()));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut assignments = BTreeMap::new();
    let mut next = 0usize;
    for class in Idh1Status::ALL {
        let mut ids: Vec<&String> = labels
            .iter()
            .filter(|(_, l)| **l == class)
            .map(|(id, _)| id)
            .collect();
        if ids.len() < n_folds {
            return Err(Error::InvalidArgument(format!(
                "class {class} has {} members, fewer than {n_folds} folds",
                ids.len()
            )));
        }
        ids.shuffle(&mut rng);
        for id in ids {
            assignments.insert(id.clone(), next % n_folds);
            next += 1;
        }
    }
    Ok(FoldSplit {
        n_folds,
        assignments,
        seed,
    })
}

fn check_pairs(a: usize, b: usize) -> Result<()> {
    if a == 0 {
        return Err(Error::InvalidArgument("metrics need at least one sample".into()));
    }
    if a != b {
        return Err(Error::Dimension {
            expected: a,
            got: b,
        });
    }
    Ok(())
}

pub fn accuracy(preds: &[Idh1Status], labels: &[Idh1Status]) -> Result<f64> {
    check_pairs(preds.len(), labels.len())?;
    let correct = preds.iter().zip(labels).filter(|(p, l)| p == l).count();
    Ok(correct as f64 / preds.len() as f64)
}

/// Binary F1 for `positive`. Zero true positives with some errors gives 0;
/// no positives predicted and none present gives 1.
pub fn f1_score(preds: &[Idh1Status], labels: &[Idh1Status], positive: Idh1Status) -> Result<f64> {
    check_pairs(preds.len(), labels.len())?;
    let (mut tp, mut fp, mut fn_) = (0usize, 0usize, 0usize);
    for (p, l) in preds.iter().zip(labels) {
        match (*p == positive, *l == positive) {
            (true, true) => tp += 1,
            (true, false) => fp += 1,
            (false, true) => fn_ += 1,
            (false, false) => {}
        }
    }
    Ok(f1_from_counts(tp, fp, fn_))
}

pub fn f1_from_counts(tp: usize, fp: usize, fn_: usize) -> f64 {
    if tp == 0 {
        return if fp + fn_ == 0 { 1.0 } else { 0.0 };
    }
    let precision = tp as f64 / (tp + fp) as f64;
    let recall = tp as f64 / (tp + fn_) as f64;
    2.0 * precision * recall / (precision + recall)
}

/// Rank-sum (Mann-Whitney) AUROC with average ranks over exact ties.
pub fn auroc(scores: &[f64], positive: &[bool]) -> Result<f64> {
    check_pairs(scores.len(), positive.len())?;
    if scores.iter().any(|s| s.is_nan()) {
        return Err(Error::InvalidArgument("NaN score".into()));
    }
    let n_pos = positive.iter().filter(|p| **p).count();
    let n_neg = positive.len() - n_pos;
    if n_pos == 0 || n_neg == 0 {
        return Err(Error::InvalidArgument("AUROC needs both classes".into()));
    }
    let mut order: Vec<usize> = (0..scores.len()).collect();
    order.sort_by(|&a, &b| scores[a].partial_cmp(&scores[b]).unwrap_or(Ordering::Equal));
    let mut rank_sum_pos = 0.0;
    let mut i = 0;
    while i < order.len() {
        let mut j = i;
        while j < order.len() && scores[order[j]] == scores[order[i]] {
            j += 1;
        }
        // Ranks i+1..=j share their average.
        let avg = (i + 1 + j) as f64 / 2.0;
        rank_sum_pos += avg * order[i..j].iter().filter(|&&k| positive[k]).count() as f64;
        i = j;
    }
    let (p, n) = (n_pos as f64, n_neg as f64);
    Ok((rank_sum_pos - p * (p + 1.0) / 2.0) / (p * n))
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Metrics {
    pub accuracy: f64,
    pub f1: f64,
    pub auroc: f64,
}

impl Metrics {
    fn as_array(&self) -> [f64; 3] {
        [self.accuracy, self.f1, self.auroc]
    }

    fn from_array(a: [f64; 3]) -> Self {
        Metrics {
            accuracy: a[0],
            f1: a[1],
            auroc: a[2],
        }
    }

    /// Mean and population std across folds.
    pub fn aggregate(per_fold: &[Metrics]) -> (Metrics, Metrics) {
        let n = per_fold.len() as f64;
        let mut mean = [0.0; 3];
        for m in per_fold {
            for (acc, v) in mean.iter_mut().zip(m.as_array()) {
                *acc += v;
            }
        }
        mean.iter_mut().for_each(|v| *v /= n);
        let mut var = [0.0; 3];
        for m in per_fold {
            for ((acc, v), mu) in var.iter_mut().zip(m.as_array()).zip(mean) {
                *acc += (v - mu) * (v - mu);
            }
        }
        let std = var.map(|v| (v / n).sqrt());
        (Metrics::from_array(mean), Metrics::from_array(std))
    }
}

/// The six evaluated feature configurations.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ConfigName {
    ClinicalText,
    ClinicalOnehot,
    MoaNoHistology,
    Histology,
    HistologyPlusClinical,
    MoaWithHistology,
}

/// Where one block of a configuration's input vector comes from.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SourceKind {
    ClinicalText,
    OneHot,
    Report,
    Slide,
}

impl ConfigName {
    pub const ALL: [ConfigName; 6] = [
        ConfigName::ClinicalText,
        ConfigName::ClinicalOnehot,
        ConfigName::MoaNoHistology,
        ConfigName::Histology,
        ConfigName::HistologyPlusClinical,
        ConfigName::MoaWithHistology,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            ConfigName::ClinicalText => "clinical_text",
            ConfigName::ClinicalOnehot => "clinical_onehot",
            ConfigName::MoaNoHistology => "moa_no_histology",
            ConfigName::Histology => "histology",
            ConfigName::HistologyPlusClinical => "histology_plus_clinical",
            ConfigName::MoaWithHistology => "moa_with_histology",
        }
    }

    /// Feature blocks, concatenated in this order.
    pub fn sources(self) -> &'static [SourceKind] {
        match self {
            ConfigName::ClinicalText => &[SourceKind::ClinicalText],
            ConfigName::ClinicalOnehot => &[SourceKind::OneHot],
            ConfigName::MoaNoHistology => &[SourceKind::Report],
            ConfigName::Histology => &[SourceKind::Slide],
            ConfigName::HistologyPlusClinical => &[SourceKind::OneHot, SourceKind::Slide],
            ConfigName::MoaWithHistology => &[SourceKind::Report, SourceKind::Slide],
        }
    }

    pub fn display_name(self) -> &'static str {
        match self {
            ConfigName::ClinicalText => "Clinical Text",
            ConfigName::ClinicalOnehot => "Clinical Variables",
            ConfigName::MoaNoHistology => "MOA (without Histology)",
            ConfigName::Histology => "Histology Tool",
            ConfigName::HistologyPlusClinical => "Histology Tool + Clinical Variables",
            ConfigName::MoaWithHistology => "MOA (with Histology)",
        }
    }

    pub fn encoder_label(self, text_encoder: &str) -> String {
        match self {
            ConfigName::ClinicalText | ConfigName::MoaNoHistology => text_encoder.to_string(),
            ConfigName::ClinicalOnehot => "One-hot".to_string(),
            ConfigName::Histology => "Slide features".to_string(),
            ConfigName::HistologyPlusClinical => "One-hot + slide".to_string(),
            ConfigName::MoaWithHistology => format!("{text_encoder} + slide"),
        }
    }
}

impl fmt::Display for ConfigName {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl std::str::FromStr for ConfigName {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        ConfigName::ALL
            .into_iter()
            .find(|c| c.as_str() == s)
            .ok_or_else(|| Error::InvalidArgument(format!("unknown configuration {s:?}")))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExperimentResult {
    pub config_name: ConfigName,
    pub n_folds: usize,
    pub input_dim: usize,
    pub per_fold: Vec<Metrics>,
    pub mean: Metrics,
    pub std: Metrics,
}

impl ExperimentResult {
    pub fn from_folds(config_name: ConfigName, input_dim: usize, per_fold: Vec<Metrics>) -> Self {
        let (mean, std) = Metrics::aggregate(&per_fold);
        ExperimentResult {
            config_name,
            n_folds: per_fold.len(),
            input_dim,
            per_fold,
            mean,
            std,
        }
    }

    /// Checks that the stored aggregates agree with the per-fold values.
    pub fn is_consistent(&self) -> bool {
        let (mean, std) = Metrics::aggregate(&self.per_fold);
        let close = |a: Metrics, b: Metrics| {
            a.as_array()
                .iter()
                .zip(b.as_array())
                .all(|(x, y)| (x - y).abs() <= 1e-12)
        };
        self.per_fold.len() == self.n_folds && close(mean, self.mean) && close(std, self.std)
    }

    pub fn to_json_line(&self) -> String {
        serde_json::to_string(self).expect("result serializes")
    }

    fn table_cells(&self, text_encoder: &str) -> [String; 6] {
        let cell = |m: f64, s: f64| format!("{m:.3}±{s:.3}");
        [
            self.config_name.display_name().to_string(),
            self.config_name.encoder_label(text_encoder),
            "MLP".to_string(),
            cell(self.mean.accuracy, self.std.accuracy),
            cell(self.mean.f1, self.std.f1),
            cell(self.mean.auroc, self.std.auroc),
        ]
    }
}

const TABLE_HEADER: [&str; 6] = ["Component Evaluated", "Encoder", "Model", "Accuracy", "F1", "AUROC"];

/// Markdown table with one row per result, columns padded to fit.
pub fn format_table(results: &[ExperimentResult], text_encoder: &str) -> String {
    let rows: Vec<[String; 6]> = results.iter().map(|r| r.table_cells(text_encoder)).collect();
    let mut widths = TABLE_HEADER.map(|h| h.chars().count());
    for row in &rows {
        for (w, c) in widths.iter_mut().zip(row) {
            *w = (*w).max(c.chars().count());
        }
    }
    let line = |cells: &[String]| {
        let padded: Vec<String> = cells
            .iter()
            .zip(&widths)
            .map(|(c, w)| format!(" {c}{} ", " ".repeat(w - c.chars().count())))
            .collect();
        format!("|{}|", padded.join("|"))
    };
    let header: Vec<String> = TABLE_HEADER.iter().map(|h| h.to_string()).collect();
    let rule: Vec<String> = widths.iter().map(|w| "-".repeat(w + 2)).collect();
    let mut out = vec![line(&header), format!("|{}|", rule.join("|"))];
    out.extend(rows.iter().map(|r| line(r)));
    out.join("\n")
}

/// Leakage and normalization audit for one fold.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FoldAudit {
    pub fold: usize,
    pub n_train: usize,
    pub n_held_out: usize,
    /// Ids the normalizer was fitted on that are also held out. Must be empty.
    pub fitted_on_held_out: Vec<String>,
    /// Largest |mean| of a normalized training dimension.
    pub max_abs_train_mean: f64,
    /// Largest |std − 1| over non-degenerate normalized training dimensions.
    pub max_train_std_error: f64,
    pub degenerate_dims: usize,
}

#[derive(Debug, Clone)]
pub struct ExperimentOutcome {
    pub result: ExperimentResult,
    pub audits: Vec<FoldAudit>,
}

/// Precomputed per-patient vectors for the fold-independent sources.
#[derive(Debug, Clone, Default)]
pub struct FeatureSet {
    pub sources: BTreeMap<SourceKind, BTreeMap<String, Embedding>>,
}

impl FeatureSet {
    pub fn insert(&mut self, kind: SourceKind, embeddings: impl IntoIterator<Item = Embedding>) {
        self.sources
            .insert(kind, embeddings.into_iter().map(|e| (e.id.clone(), e)).collect());
    }
}

#[derive(Debug, Clone)]
pub struct ExperimentSettings {
    pub train: TrainConfig,
    pub positive_class: Idh1Status,
    /// Fold `k` trains with seed `seed + k`.
    pub seed: u64,
}

fn feature_vectors(
    config: ConfigName,
    features: &FeatureSet,
    manifest: &CohortManifest,
    ids: &[String],
    train_ids: &BTreeSet<String>,
) -> Result<Vec<Embedding>> {
    let mut blocks: Vec<BTreeMap<String, Embedding>> = Vec::new();
    for kind in config.sources() {
        match kind {
            SourceKind::OneHot => blocks.push(one_hot_encode_cohort(manifest, train_ids)?),
            other => blocks.push(
                features
                    .sources
                    .get(other)
                    .cloned()
                    .ok_or_else(|| Error::MissingFeatures(ids.to_vec()))?,
            ),
        }
    }
    ids.iter()
        .map(|id| {
            let mut parts = blocks.iter().map(|b| {
                b.get(id)
                    .cloned()
                    .ok_or_else(|| Error::MissingFeatures(vec![id.clone()]))
            });
            let first = parts.next().expect("at least one source")?;
            parts.try_fold(first, |acc, next| fuse_concat(&acc, &next?))
        })
        .collect()
}

fn missing_ids(config: ConfigName, features: &FeatureSet, ids: &[String]) -> Vec<String> {
    let mut missing = BTreeSet::new();
    for kind in config.sources() {
        if *kind == SourceKind::OneHot {
            continue;
        }
        let map = features.sources.get(kind);
        for id in ids {
            if map.is_none_or(|m| !m.contains_key(id)) {
                missing.insert(id.clone());
            }
        }
    }
    missing.into_iter().collect()
}

fn to_matrix(rows: &[Embedding]) -> Array2<f64> {
    let dim = rows[0].dim();
    Array2::from_shape_fn((rows.len(), dim), |(i, j)| rows[i].vector[j])
}

fn audit_fold(fold: usize, train: &[Embedding], held_out: &BTreeSet<String>, fitted_on: &BTreeSet<String>, raw_std: &[f64]) -> FoldAudit {
    let post = fit_normalizer(train).expect("non-empty training fold");
    let mut max_mean: f64 = 0.0;
    let mut max_std_err: f64 = 0.0;
    let mut degenerate = 0;
    for (d, (m, s)) in post.mean.iter().zip(&post.std).enumerate() {
        max_mean = max_mean.max(m.abs());
        if raw_std[d] > STD_EPSILON {
            max_std_err = max_std_err.max((s - 1.0).abs());
        } else {
            degenerate += 1;
        }
    }
    FoldAudit {
        fold,
        n_train: train.len(),
        n_held_out: held_out.len(),
        fitted_on_held_out: fitted_on.intersection(held_out).cloned().collect(),
        max_abs_train_mean: max_mean,
        max_train_std_error: max_std_err,
        degenerate_dims: degenerate,
    }
}

fn run_fold(
    fold: usize,
    config: ConfigName,
    features: &FeatureSet,
    manifest: &CohortManifest,
    folds: &FoldSplit,
    labels: &BTreeMap<String, Idh1Status>,
    settings: &ExperimentSettings,
) -> Result<(Metrics, FoldAudit, usize)> {
    let train_ids = folds.training(fold);
    let held_ids = folds.held_out(fold);
    let train_list: Vec<String> = train_ids.iter().cloned().collect();
    let held_list: Vec<String> = held_ids.iter().cloned().collect();

    let train_raw = feature_vectors(config, features, manifest, &train_list, &train_ids)?;
    let held_raw = feature_vectors(config, features, manifest, &held_list, &train_ids)?;

    let stats = fit_normalizer(&train_raw)?;
    let train_norm: Vec<Embedding> = train_raw
        .iter()
        .map(|e| apply_normalizer(&stats, e))
        .collect::<Result<_>>()?;
    let held_norm: Vec<Embedding> = held_raw
        .iter()
        .map(|e| apply_normalizer(&stats, e))
        .collect::<Result<_>>()?;
    let audit = audit_fold(fold, &train_norm, &held_ids, &stats.fitted_on, &stats.std);

    let y_train: Vec<usize> = train_list.iter().map(|id| labels[id].index()).collect();
    let y_held: Vec<Idh1Status> = held_list.iter().map(|id| labels[id]).collect();

    let dim = stats.dim();
    let fold_seed = settings.seed + fold as u64;
    let mut train_cfg = settings.train.clone();
    train_cfg.seed = fold_seed;
    let model = init_model(dim, &train_cfg.hidden_dims, fold_seed)?;
    let x_train = to_matrix(&train_norm);
    let outcome = train(model, x_train.view(), &y_train, &train_cfg)?;

    let x_held = to_matrix(&held_norm);
    let probs = predict_proba_batch(&outcome.model, x_held.view())?;
    let preds: Vec<Idh1Status> = probs
        .iter()
        .map(|p| Idh1Status::from_index(predict_label(*p)).expect("binary"))
        .collect();
    let positive: Vec<bool> = y_held.iter().map(|l| *l == Idh1Status::Mutant).collect();
    let metrics = Metrics {
        accuracy: accuracy(&preds, &y_held)?,
        f1: f1_score(&preds, &y_held, settings.positive_class)?,
        auroc: auroc(&probs, &positive)?,
    };
    info!(config = %config, fold, auroc = metrics.auroc, f1 = metrics.f1, "fold done");
    Ok((metrics, audit, dim))
}

/// Cross-validates one configuration. Per fold: fit the normalizer on the
/// training portion, normalize both portions, train, score the held-out part.
/// Folds run in parallel; each uses seed `settings.seed + fold`.
pub fn run_experiment(
    config: ConfigName,
    features: &FeatureSet,
    manifest: &CohortManifest,
    folds: &FoldSplit,
    settings: &ExperimentSettings,
) -> Result<ExperimentOutcome> {
    settings.train.validate()?;
    let labels = manifest.labels();
    let ids: Vec<String> = folds.assignments.keys().cloned().collect();
    if let Some(id) = ids.iter().find(|id| !labels.contains_key(*id)) {
        return Err(Error::Validation(format!(
            "fold split contains {id}, which has no label"
        )));
    }
    let missing = missing_ids(config, features, &ids);
    if !missing.is_empty() {
        return Err(Error::MissingFeatures(missing));
    }
    let fold_results: Vec<Result<(Metrics, FoldAudit, usize)>> = (0..folds.n_folds)
        .into_par_iter()
        .map(|k| run_fold(k, config, features, manifest, folds, &labels, settings))
        .collect();
    let mut per_fold = Vec::with_capacity(folds.n_folds);
    let mut audits = Vec::with_capacity(folds.n_folds);
    let mut dim = 0;
    for r in fold_results {
        let (m, a, d) = r?;
        per_fold.push(m);
        audits.push(a);
        dim = d;
    }
    Ok(ExperimentOutcome {
        result: ExperimentResult::from_folds(config, dim, per_fold),
        audits,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use Idh1Status::{Mutant as M, Wildtype as W};

    fn labels(n_mut: usize, n_wt: usize) -> BTreeMap<String, Idh1Status> {
        (0..n_mut)
            .map(|i| (format!("m{i:04}"), M))
            .chain((0..n_wt).map(|i| (format!("w{i:04}"), W)))
            .collect()
    }

    #[test]
    fn cohort_profile_fold_counts() {
        let l = labels(374, 114);
        let split = stratified_folds(&l, 5, 0).unwrap();
        let counts = split.class_counts(&l);
        let mut mutant: Vec<usize> = counts.iter().map(|c| c[1]).collect();
        let mut wild: Vec<usize> = counts.iter().map(|c| c[0]).collect();
        mutant.sort_unstable();
        wild.sort_unstable();
        assert_eq!(mutant, vec![74, 75, 75, 75, 75]);
        assert_eq!(wild, vec![22, 23, 23, 23, 23]);
        let sizes: Vec<usize> = counts.iter().map(|c| c[0] + c[1]).collect();
        assert!(sizes.iter().max().unwrap() - sizes.iter().min().unwrap() <= 1);
        assert_eq!(sizes.iter().sum::<usize>(), 488);
    }

    #[test]
    fn exact_divisibility() {
        let l = labels(5, 5);
        let split = stratified_folds(&l, 5, 3).unwrap();
        assert!(split.class_counts(&l).iter().all(|c| *c == [1, 1]));
    }

    #[test]
    fn folds_are_deterministic() {
        let l = labels(40, 13);
        assert_eq!(
            stratified_folds(&l, 5, 9).unwrap(),
            stratified_folds(&l, 5, 9).unwrap()
        );
        assert_ne!(
            stratified_folds(&l, 5, 9).unwrap(),
            stratified_folds(&l, 5, 10).unwrap()
        );
    }

    #[test]
    fn small_class_rejected() {
        assert!(stratified_folds(&labels(10, 4), 5, 0).is_err());
        assert!(stratified_folds(&labels(10, 10), 1, 0).is_err());
    }

    #[test]
    fn accuracy_values() {
        assert_eq!(accuracy(&[M, W], &[M, W]).unwrap(), 1.0);
        assert_eq!(accuracy(&[M, W, M, M], &[M, W, W, M]).unwrap(), 0.75);
        assert!(accuracy(&[], &[]).is_err());
    }

    #[test]
    fn f1_values() {
        assert!((f1_from_counts(3, 1, 2) - 2.0 / 3.0).abs() < 1e-12);
        // TP 3, FP 1, FN 2 laid out as predictions.
        let preds = [M, M, M, M, W, W, W];
        let truth = [M, M, M, W, M, M, W];
        assert!((f1_score(&preds, &truth, M).unwrap() - 0.6667).abs() < 1e-4);
        assert_eq!(f1_score(&[M, W], &[M, W], M).unwrap(), 1.0);
        assert_eq!(f1_score(&[W, W], &[W, W], M).unwrap(), 1.0);
        assert_eq!(f1_score(&[W, W], &[M, W], M).unwrap(), 0.0);
        assert!(f1_score(&[], &[], M).is_err());
    }

    #[test]
    fn auroc_values() {
        let a = auroc(&[0.1, 0.4, 0.35, 0.8], &[false, false, true, true]).unwrap();
        assert_eq!(a, 0.75);
        assert_eq!(auroc(&[0.3; 6], &[true, false, true, false, true, false]).unwrap(), 0.5);
        assert_eq!(auroc(&[0.9, 0.8, 0.1, 0.2], &[true, true, false, false]).unwrap(), 1.0);
        assert!(auroc(&[0.1, 0.2], &[true, true]).is_err());
    }

    #[test]
    fn aggregate_uses_population_std() {
        let f = |v: f64| Metrics {
            accuracy: v,
            f1: v,
            auroc: v,
        };
        let r = ExperimentResult::from_folds(ConfigName::Histology, 3, vec![f(0.0), f(1.0)]);
        assert_eq!(r.mean.f1, 0.5);
        assert_eq!(r.std.f1, 0.5);
        assert!(r.is_consistent());
    }

    #[test]
    fn config_names_round_trip() {
        for c in ConfigName::ALL {
            assert_eq!(c.as_str().parse::<ConfigName>().unwrap(), c);
            let json = serde_json::to_string(&c).unwrap();
            assert_eq!(json, format!("\"{}\"", c.as_str()));
        }
        assert!("bogus".parse::<ConfigName>().is_err());
    }

    proptest::proptest! {
        #[test]
        fn stratification_balanced(n_mut in 5usize..200, n_wt in 5usize..200, seed in 0u64..1000) {
            let l = labels(n_mut, n_wt);
            let split = stratified_folds(&l, 5, seed).unwrap();
            let counts = split.class_counts(&l);
            for c in 0..2 {
                let per: Vec<usize> = counts.iter().map(|f| f[c]).collect();
                proptest::prop_assert!(per.iter().max().unwrap() - per.iter().min().unwrap() <= 1);
            }
            let sizes: Vec<usize> = counts.iter().map(|f| f[0] + f[1]).collect();
            proptest::prop_assert!(sizes.iter().max().unwrap() - sizes.iter().min().unwrap() <= 1);
            proptest::prop_assert_eq!(split.assignments.len(), n_mut + n_wt);
        }
    }
}
