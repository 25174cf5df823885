//! Reader-state classification: per-subject ranks → PCA → Fisher LDA, evaluated
//! leave-one-subject-out.

pub mod lda;
pub mod pca;
pub mod rank;

use std::collections::BTreeMap;
use std::io;

use nalgebra::DMatrix;
use rand::Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::features::{FeatureRegistry, FeatureTable, FeatureVector};
pub use lda::Lda;
pub use pca::{Pca, VARIANCE_RETAINED};

pub const MODEL_FORMAT: &str = "pif-model";
pub const MODEL_VERSION: u32 = 1;

#[derive(Debug, Error)]
pub enum ClassifyError {
    #[error("need at least {need} subjects, got {got}")]
    TooFewSubjects { need: usize, got: usize },
    #[error("subject `{subject}` has no observation of class {class}")]
    MissingClass { subject: String, class: Class },
    #[error("subject `{0}` has a single observation; ranks are undefined")]
    SingleObservation(String),
    #[error("feature registry mismatch: model has {expected} features, input has {got}")]
    RegistryMismatch { expected: usize, got: usize },
    #[error("training features have no variance")]
    NoVariance,
    #[error("unknown construct `{0}` (expected arousal, difficulty, valence or a:b)")]
    UnknownConstruct(String),
    #[error("fold holding out `{subject}`: {source}")]
    Fold {
        subject: String,
        #[source]
        source: Box<ClassifyError>,
    },
    #[error("unsupported model file (format `{format}`, version {version})")]
    ModelFormat { format: String, version: u32 },
    #[error(transparent)]
    Json(#[from] serde_json::Error),
    #[error(transparent)]
    Io(#[from] io::Error),
    #[error(transparent)]
    Csv(#[from] csv::Error),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub enum Class {
    A,
    B,
}

impl Class {
    pub fn other(self) -> Class {
        match self {
            Class::A => Class::B,
            Class::B => Class::A,
        }
    }
}

impl std::fmt::Display for Class {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            Class::A => "A",
            Class::B => "B",
        })
    }
}

/// A binary contrast between two story labels. Positive weights point to `class_a`.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Construct {
    pub name: String,
    pub class_a: String,
    pub class_b: String,
}

impl Construct {
    pub fn new(name: &str, class_a: &str, class_b: &str) -> Self {
        Construct {
            name: name.to_string(),
            class_a: class_a.to_string(),
            class_b: class_b.to_string(),
        }
    }

    pub fn arousal() -> Self {
        Construct::new("arousal", "boring", "exciting")
    }

    pub fn difficulty() -> Self {
        Construct::new("difficulty", "complicated", "simple")
    }

    pub fn valence() -> Self {
        Construct::new("valence", "happy", "sad")
    }

    pub fn builtin() -> [Construct; 3] {
        [Construct::arousal(), Construct::difficulty(), Construct::valence()]
    }

    /// A built-in name, or a custom `labelA:labelB` pair.
    pub fn parse(s: &str) -> Result<Self, ClassifyError> {
        if let Some(c) = Construct::builtin().into_iter().find(|c| c.name == s) {
            return Ok(c);
        }
        match s.split_once(':') {
            Some((a, b)) if !a.is_empty() && !b.is_empty() && a != b => Ok(Construct::new(s, a, b)),
            _ => Err(ClassifyError::UnknownConstruct(s.to_string())),
        }
    }

    pub fn class_of(&self, label: &str) -> Option<Class> {
        if label == self.class_a {
            Some(Class::A)
        } else if label == self.class_b {
            Some(Class::B)
        } else {
            None
        }
    }

    pub fn label_of(&self, class: Class) -> &str {
        match class {
            Class::A => &self.class_a,
            Class::B => &self.class_b,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Observation {
    pub subject: String,
    pub values: Vec<Option<f64>>,
    pub class: Class,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Dataset {
    pub registry: FeatureRegistry,
    pub construct: Construct,
    pub observations: Vec<Observation>,
}

impl Dataset {
    /// Rows of `table` whose label belongs to the construct.
    pub fn from_table(table: &FeatureTable, construct: Construct) -> Self {
        let observations = table
            .rows
            .iter()
            .filter_map(|r| {
                let class = construct.class_of(r.label.as_deref()?)?;
                Some(Observation {
                    subject: r.subject.clone(),
                    values: r.values.clone(),
                    class,
                })
            })
            .collect();
        Dataset {
            registry: table.registry.clone(),
            construct,
            observations,
        }
    }

    /// Subjects in first-appearance order.
    pub fn subjects(&self) -> Vec<String> {
        let mut out: Vec<String> = Vec::new();
        for o in &self.observations {
            if !out.contains(&o.subject) {
                out.push(o.subject.clone());
            }
        }
        out
    }

    pub fn validate(&self, min_subjects: usize) -> Result<(), ClassifyError> {
        let subjects = self.subjects();
        if subjects.len() < min_subjects {
            return Err(ClassifyError::TooFewSubjects {
                need: min_subjects,
                got: subjects.len(),
            });
        }
        let d = self.registry.len();
        for o in &self.observations {
            if o.values.len() != d {
                return Err(ClassifyError::RegistryMismatch {
                    expected: d,
                    got: o.values.len(),
                });
            }
        }
        for s in &subjects {
            for class in [Class::A, Class::B] {
                if !self.observations.iter().any(|o| &o.subject == s && o.class == class) {
                    return Err(ClassifyError::MissingClass {
                        subject: s.clone(),
                        class,
                    });
                }
            }
        }
        Ok(())
    }

    pub fn without_subject(&self, subject: &str) -> Dataset {
        Dataset {
            registry: self.registry.clone(),
            construct: self.construct.clone(),
            observations: self.observations.iter().filter(|o| o.subject != subject).cloned().collect(),
        }
    }

    /// Swap the two classes for each subject independently with probability ½,
    /// keeping every subject's class balance.
    pub fn permute_labels<R: Rng>(&self, rng: &mut R) -> Dataset {
        let mut out = self.clone();
        for s in self.subjects() {
            if rng.random_bool(0.5) {
                for o in out.observations.iter_mut().filter(|o| o.subject == s) {
                    o.class = o.class.other();
                }
            }
        }
        out
    }

    /// The same data with the class names exchanged.
    pub fn swapped(&self) -> Dataset {
        let mut out = self.clone();
        out.construct = Construct::new(&self.construct.name, &self.construct.class_b, &self.construct.class_a);
        for o in &mut out.observations {
            o.class = o.class.other();
        }
        out
    }
}

/// Per-subject rank normalization of a whole dataset, in observation order.
pub fn rank_normalize(dataset: &Dataset) -> Result<Vec<Vec<f64>>, ClassifyError> {
    let mut out = vec![Vec::new(); dataset.observations.len()];
    for s in dataset.subjects() {
        let idx: Vec<usize> = (0..dataset.observations.len())
            .filter(|&i| dataset.observations[i].subject == s)
            .collect();
        if idx.len() < 2 {
            return Err(ClassifyError::SingleObservation(s));
        }
        let rows: Vec<&[Option<f64>]> = idx.iter().map(|&i| dataset.observations[i].values.as_slice()).collect();
        for (i, r) in idx.into_iter().zip(rank::rank_rows(&rows)) {
            out[i] = r;
        }
    }
    Ok(out)
}

/// How a new observation is placed on the rank scale at prediction time.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
pub enum RankStrategy {
    /// Rank jointly with the same subject's other observations.
    #[default]
    SubjectContext,
    /// Mid-rank quantile within the training population, rescaled to the rank range.
    PopulationQuantile,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PipelineModel {
    pub format: String,
    pub version: u32,
    pub construct: Construct,
    pub registry: FeatureRegistry,
    /// Training-population median per feature (raw units).
    pub medians: Vec<f64>,
    /// Sorted training values per feature, for population-quantile ranking.
    pub reference: Vec<Vec<f64>>,
    /// Typical number of observations per training subject (top of the rank scale).
    pub rank_scale: f64,
    pub pca: Pca,
    pub lda: Lda,
    pub n_components: usize,
    pub subjects: Vec<String>,
    pub warnings: Vec<String>,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Prediction {
    pub class: Class,
    pub score: f64,
    pub posterior_a: f64,
}

/// PCA + LDA on an already-normalized matrix (rows = observations).
pub fn fit_matrix(x: &[Vec<f64>], classes: &[Class]) -> Result<(Pca, Lda), ClassifyError> {
    let d = x.first().map_or(0, |r| r.len());
    let flat: Vec<f64> = x.iter().flatten().copied().collect();
    let m = DMatrix::from_row_slice(x.len(), d, &flat);
    let pca = Pca::fit(&m, VARIANCE_RETAINED).ok_or(ClassifyError::NoVariance)?;
    let projected: Vec<Vec<f64>> = x.iter().map(|r| pca.project(r)).collect();
    let lda = Lda::fit(&projected, classes).ok_or(ClassifyError::NoVariance)?;
    Ok((pca, lda))
}

pub fn fit(dataset: &Dataset) -> Result<PipelineModel, ClassifyError> {
    dataset.validate(2)?;
    let ranked = rank_normalize(dataset)?;
    let classes: Vec<Class> = dataset.observations.iter().map(|o| o.class).collect();
    let (pca, lda) = fit_matrix(&ranked, &classes)?;
    for w in &lda.warnings {
        log::warn!("{}: {w}", dataset.construct.name);
    }

    let d = dataset.registry.len();
    let mut medians = Vec::with_capacity(d);
    let mut reference = Vec::with_capacity(d);
    for j in 0..d {
        // per-subject imputation first, as in training
        let mut col = Vec::new();
        for s in dataset.subjects() {
            let c: Vec<Option<f64>> = dataset
                .observations
                .iter()
                .filter(|o| o.subject == s)
                .map(|o| o.values[j])
                .collect();
            col.extend(rank::impute_column(&c));
        }
        col.sort_by(f64::total_cmp);
        medians.push(rank::median(col.iter().copied()).unwrap_or(0.0));
        reference.push(col);
    }
    let subjects = dataset.subjects();
    let mut counts: Vec<f64> = subjects
        .iter()
        .map(|s| dataset.observations.iter().filter(|o| &o.subject == s).count() as f64)
        .collect();
    counts.sort_by(f64::total_cmp);
    let rank_scale = rank::median(counts).unwrap_or(2.0);

    Ok(PipelineModel {
        format: MODEL_FORMAT.to_string(),
        version: MODEL_VERSION,
        construct: dataset.construct.clone(),
        registry: dataset.registry.clone(),
        medians,
        reference,
        rank_scale,
        n_components: pca.n_components(),
        warnings: lda.warnings.clone(),
        pca,
        lda,
        subjects,
    })
}

impl PipelineModel {
    fn check(&self, values: &[Option<f64>]) -> Result<(), ClassifyError> {
        if values.len() != self.registry.len() {
            return Err(ClassifyError::RegistryMismatch {
                expected: self.registry.len(),
                got: values.len(),
            });
        }
        Ok(())
    }

    pub fn predict_ranked(&self, ranked: &[f64]) -> Prediction {
        let score = self.lda.score(&self.pca.project(ranked));
        Prediction {
            class: Lda::classify(score),
            score,
            posterior_a: self.lda.posterior(score),
        }
    }

    /// Classify every observation of one subject, ranked jointly.
    pub fn predict_subject(&self, rows: &[&[Option<f64>]]) -> Result<Vec<Prediction>, ClassifyError> {
        for r in rows {
            self.check(r)?;
        }
        if rows.len() < 2 {
            return Err(ClassifyError::SingleObservation("<context>".to_string()));
        }
        Ok(rank::rank_rows(rows).iter().map(|r| self.predict_ranked(r)).collect())
    }

    /// Rank-scale value of a raw feature against the training population.
    fn population_rank(&self, j: usize, v: f64) -> f64 {
        let r = &self.reference[j];
        let below = r.partition_point(|x| *x < v);
        let equal = r[below..].partition_point(|x| *x <= v);
        let q = (below as f64 + 0.5 * equal as f64) / r.len() as f64;
        1.0 + q * (self.rank_scale - 1.0)
    }

    pub fn predict(
        &self,
        x: &FeatureVector,
        context: &[FeatureVector],
        strategy: RankStrategy,
    ) -> Result<Prediction, ClassifyError> {
        self.check(&x.values)?;
        match strategy {
            RankStrategy::SubjectContext => {
                let mut rows: Vec<&[Option<f64>]> = vec![x.values.as_slice()];
                rows.extend(context.iter().map(|c| c.values.as_slice()));
                Ok(self.predict_subject(&rows)?[0])
            }
            RankStrategy::PopulationQuantile => {
                let ranked: Vec<f64> = x
                    .values
                    .iter()
                    .enumerate()
                    .map(|(j, v)| self.population_rank(j, v.unwrap_or(self.medians[j])))
                    .collect();
                Ok(self.predict_ranked(&ranked))
            }
        }
    }

    /// Discriminant direction in feature space (positive ⇒ class A).
    pub fn feature_direction(&self) -> Vec<f64> {
        self.pca.back_project(&self.lda.w)
    }

    pub fn to_json(&self) -> Result<String, ClassifyError> {
        Ok(serde_json::to_string_pretty(self)?)
    }

    pub fn from_json(text: &str) -> Result<Self, ClassifyError> {
        let m: PipelineModel = serde_json::from_str(text)?;
        if m.format != MODEL_FORMAT || m.version != MODEL_VERSION {
            return Err(ClassifyError::ModelFormat {
                format: m.format,
                version: m.version,
            });
        }
        Ok(m)
    }
}

/// Feature weights normalized so that the largest magnitude is 1.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FeatureWeightReport {
    pub construct: String,
    pub names: Vec<String>,
    pub weights: Vec<f64>,
}

impl FeatureWeightReport {
    pub fn from_directions(construct: &str, names: &[String], directions: &[Vec<f64>]) -> Self {
        let d = names.len();
        let mut avg = vec![0.0; d];
        for dir in directions {
            for (a, v) in avg.iter_mut().zip(dir) {
                *a += v / directions.len() as f64;
            }
        }
        let max = avg.iter().fold(0.0f64, |m, v| m.max(v.abs()));
        if max > 0.0 {
            for a in &mut avg {
                *a /= max;
            }
        }
        FeatureWeightReport {
            construct: construct.to_string(),
            names: names.to_vec(),
            weights: avg,
        }
    }

    /// Feature indices by decreasing absolute weight.
    pub fn ranked(&self) -> Vec<usize> {
        let mut idx: Vec<usize> = (0..self.weights.len()).collect();
        idx.sort_by(|&a, &b| self.weights[b].abs().total_cmp(&self.weights[a].abs()).then(a.cmp(&b)));
        idx
    }

    pub fn weight(&self, name: &str) -> Option<f64> {
        self.names.iter().position(|n| n == name).map(|i| self.weights[i])
    }

    /// One row per feature, one column per construct.
    pub fn write_csv<W: io::Write>(reports: &[FeatureWeightReport], w: W) -> Result<(), ClassifyError> {
        let mut out = csv::Writer::from_writer(w);
        let mut header = vec!["feature".to_string()];
        header.extend(reports.iter().map(|r| r.construct.clone()));
        out.write_record(&header)?;
        if let Some(first) = reports.first() {
            for (i, name) in first.names.iter().enumerate() {
                let mut row = vec![name.clone()];
                row.extend(reports.iter().map(|r| format!("{:.6}", r.weights[i])));
                out.write_record(&row)?;
            }
        }
        out.flush()?;
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct HeldOut {
    pub subject: String,
    /// Index into the dataset's observations.
    pub index: usize,
    pub truth: Class,
    pub prediction: Prediction,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SubjectResult {
    pub subject: String,
    pub n: usize,
    pub correct: usize,
}

impl SubjectResult {
    pub fn accuracy(&self) -> f64 {
        self.correct as f64 / self.n as f64
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LosoReport {
    pub construct: String,
    pub accuracy: f64,
    pub per_subject: Vec<SubjectResult>,
    pub predictions: Vec<HeldOut>,
    pub weights: FeatureWeightReport,
    pub n_components: Vec<usize>,
}

impl LosoReport {
    pub fn write_subjects_csv<W: io::Write>(&self, w: W) -> Result<(), ClassifyError> {
        let mut out = csv::Writer::from_writer(w);
        out.write_record(["subject", "n", "correct", "accuracy"])?;
        for s in &self.per_subject {
            out.write_record([
                s.subject.clone(),
                s.n.to_string(),
                s.correct.to_string(),
                format!("{:.4}", s.accuracy()),
            ])?;
        }
        out.flush()?;
        Ok(())
    }
}

/// The model a LOSO fold trains when `subject` is held out.
pub fn fit_fold(dataset: &Dataset, subject: &str) -> Result<PipelineModel, ClassifyError> {
    fit(&dataset.without_subject(subject)).map_err(|e| ClassifyError::Fold {
        subject: subject.to_string(),
        source: Box::new(e),
    })
}

pub fn loso_cv(dataset: &Dataset) -> Result<LosoReport, ClassifyError> {
    dataset.validate(3)?;
    let subjects = dataset.subjects();
    let folds: Vec<(PipelineModel, Vec<HeldOut>)> = subjects
        .par_iter()
        .map(|s| {
            let model = fit_fold(dataset, s)?;
            let idx: Vec<usize> = (0..dataset.observations.len())
                .filter(|&i| &dataset.observations[i].subject == s)
                .collect();
            let rows: Vec<&[Option<f64>]> = idx.iter().map(|&i| dataset.observations[i].values.as_slice()).collect();
            let preds = model.predict_subject(&rows).map_err(|e| ClassifyError::Fold {
                subject: s.clone(),
                source: Box::new(e),
            })?;
            let held = idx
                .into_iter()
                .zip(preds)
                .map(|(i, p)| HeldOut {
                    subject: s.clone(),
                    index: i,
                    truth: dataset.observations[i].class,
                    prediction: p,
                })
                .collect();
            Ok((model, held))
        })
        .collect::<Result<_, ClassifyError>>()?;

    let mut per_subject = Vec::new();
    let mut predictions = Vec::new();
    let mut directions = Vec::new();
    let mut n_components = Vec::new();
    for (s, (model, held)) in subjects.iter().zip(folds) {
        per_subject.push(SubjectResult {
            subject: s.clone(),
            n: held.len(),
            correct: held.iter().filter(|h| h.prediction.class == h.truth).count(),
        });
        directions.push(model.feature_direction());
        n_components.push(model.n_components);
        predictions.extend(held);
    }
    let correct: usize = per_subject.iter().map(|s| s.correct).sum();
    let total: usize = per_subject.iter().map(|s| s.n).sum();
    Ok(LosoReport {
        construct: dataset.construct.name.clone(),
        accuracy: correct as f64 / total as f64,
        per_subject,
        predictions,
        weights: FeatureWeightReport::from_directions(&dataset.construct.name, &dataset.registry.names, &directions),
        n_components,
    })
}

/// Observations grouped by subject, for callers that classify whole subjects.
pub fn group_by_subject(vectors: &[FeatureVector]) -> BTreeMap<String, Vec<usize>> {
    let mut out: BTreeMap<String, Vec<usize>> = BTreeMap::new();
    for (i, v) in vectors.iter().enumerate() {
        out.entry(v.subject.clone()).or_default().push(i);
    }
    out
}
