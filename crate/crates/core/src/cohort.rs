//! Patient cases, cohort ingestion, and the clinical representations derived
//! from them (clinical text, molecular summaries, one-hot vectors).

use std::collections::{BTreeMap, BTreeSet, HashSet};
use std::fmt;
use std::path::Path;

use serde::{Deserialize, Serialize};
use tracing::warn;

use crate::embedding::{Embedding, Modality};
use crate::{Error, Result};

/// Binary IDH1 status. The class index (wildtype 0, mutant 1) is also the
/// logit index used by the classifier.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Idh1Status {
    Wildtype,
    Mutant,
}

impl Idh1Status {
    pub const ALL: [Idh1Status; 2] = [Idh1Status::Wildtype, Idh1Status::Mutant];

    pub fn index(self) -> usize {
        match self {
            Idh1Status::Wildtype => 0,
            Idh1Status::Mutant => 1,
        }
    }

    pub fn from_index(idx: usize) -> Option<Self> {
        match idx {
            0 => Some(Idh1Status::Wildtype),
            1 => Some(Idh1Status::Mutant),
            _ => None,
        }
    }

    pub fn as_str(self) -> &'static str {
        match self {
            Idh1Status::Wildtype => "wildtype",
            Idh1Status::Mutant => "mutant",
        }
    }
}

impl fmt::Display for Idh1Status {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl std::str::FromStr for Idh1Status {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.trim().to_ascii_lowercase().as_str() {
            "mutant" => Ok(Idh1Status::Mutant),
            "wildtype" => Ok(Idh1Status::Wildtype),
            other => Err(Error::InvalidArgument(format!("unknown IDH1 label {other:?}"))),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Oncogenicity {
    #[serde(rename = "oncogenic")]
    Oncogenic,
    #[serde(rename = "likely-oncogenic")]
    LikelyOncogenic,
    #[serde(rename = "unknown")]
    Unknown,
}

impl Oncogenicity {
    pub fn as_str(self) -> &'static str {
        match self {
            Oncogenicity::Oncogenic => "oncogenic",
            Oncogenicity::LikelyOncogenic => "likely-oncogenic",
            Oncogenicity::Unknown => "unknown",
        }
    }

    /// Maps OncoKB's free-text oncogenic field onto the closed set.
    pub fn from_oncokb(value: &str) -> Self {
        match value.trim().to_ascii_lowercase().as_str() {
            "oncogenic" => Oncogenicity::Oncogenic,
            "likely oncogenic" | "likely-oncogenic" => Oncogenicity::LikelyOncogenic,
            _ => Oncogenicity::Unknown,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GeneAnnotation {
    pub gene_symbol: String,
    pub alteration: String,
    pub oncogenicity: Oncogenicity,
    pub source: String,
}

/// One patient record as stored in the line-delimited cases file.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PatientCase {
    pub patient_id: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub age_years: Option<u32>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub sex: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub tumor_class: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub histologic_morphology: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub treatment_type: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub therapeutic_procedure: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub molecular_summary: Option<Vec<GeneAnnotation>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub slide_feature_path: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub idh1_label: Option<Idh1Status>,
}

/// Field names a tool may list in its `requires` set.
pub const CASE_FIELDS: [&str; 10] = [
    "patient_id",
    "age_years",
    "sex",
    "tumor_class",
    "histologic_morphology",
    "treatment_type",
    "therapeutic_procedure",
    "molecular_summary",
    "slide_feature_path",
    "idh1_label",
];

impl PatientCase {
    pub fn new(patient_id: impl Into<String>) -> Self {
        PatientCase {
            patient_id: patient_id.into(),
            ..Default::default()
        }
    }

    /// Whether a named field carries a value. Empty molecular summaries and
    /// blank strings count as absent.
    pub fn has_field(&self, field: &str) -> bool {
        fn present(v: &Option<String>) -> bool {
            v.as_deref().is_some_and(|s| !s.trim().is_empty())
        }
        match field {
            "patient_id" => !self.patient_id.is_empty(),
            "age_years" => self.age_years.is_some(),
            "sex" => present(&self.sex),
            "tumor_class" => present(&self.tumor_class),
            "histologic_morphology" => present(&self.histologic_morphology),
            "treatment_type" => present(&self.treatment_type),
            "therapeutic_procedure" => present(&self.therapeutic_procedure),
            "molecular_summary" => self.molecular_summary.as_ref().is_some_and(|m| !m.is_empty()),
            "slide_feature_path" => present(&self.slide_feature_path),
            "idh1_label" => self.idh1_label.is_some(),
            _ => false,
        }
    }

    pub fn has_clinical_fields(&self) -> bool {
        CLINICAL_FIELDS.iter().any(|(f, _)| self.has_field(f))
    }

    pub fn is_eligible(&self) -> bool {
        self.idh1_label.is_some()
    }

    fn categorical(&self, field: &str) -> Option<&str> {
        let v = match field {
            "sex" => &self.sex,
            "tumor_class" => &self.tumor_class,
            "histologic_morphology" => &self.histologic_morphology,
            "treatment_type" => &self.treatment_type,
            "therapeutic_procedure" => &self.therapeutic_procedure,
            _ => return None,
        };
        v.as_deref().map(str::trim).filter(|s| !s.is_empty())
    }
}

/// Clinical fields in canonical order with their clinical-text keys.
pub const CLINICAL_FIELDS: [(&str, &str); 6] = [
    ("age_years", "Age"),
    ("sex", "Sex"),
    ("tumor_class", "Tumor class"),
    ("histologic_morphology", "Histologic morphology"),
    ("treatment_type", "Treatment type"),
    ("therapeutic_procedure", "Therapeutic procedure"),
];

/// Sentence template used for every clinical-text field.
pub const CLINICAL_TEXT_TEMPLATE: &str = "{key}: {value}.";

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct CohortManifest {
    pub cases: Vec<PatientCase>,
    pub class_counts: BTreeMap<Idh1Status, usize>,
    /// Ids of cases without a label; kept but excluded from training/evaluation.
    #[serde(default)]
    pub ineligible: Vec<String>,
    #[serde(default)]
    pub warnings: Vec<String>,
}

impl CohortManifest {
    pub fn from_cases(cases: Vec<PatientCase>) -> Result<Self> {
        let mut seen = HashSet::new();
        let mut dups = BTreeSet::new();
        for case in &cases {
            if case.patient_id.trim().is_empty() {
                return Err(Error::Validation("empty patient_id".into()));
            }
            if !seen.insert(case.patient_id.as_str()) {
                dups.insert(case.patient_id.clone());
            }
        }
        if !dups.is_empty() {
            return Err(Error::DuplicateIds(dups.into_iter().collect()));
        }

        let mut warnings = Vec::new();
        if cases.is_empty() {
            warnings.push("cohort is empty".to_string());
        }
        let ineligible: Vec<String> = cases
            .iter()
            .filter(|c| !c.is_eligible())
            .map(|c| c.patient_id.clone())
            .collect();
        if !ineligible.is_empty() {
            warnings.push(format!(
                "{} case(s) without idh1_label are evaluation-ineligible",
                ineligible.len()
            ));
        }
        for case in cases.iter().filter(|c| !c.has_clinical_fields()) {
            warnings.push(format!(
                "case {} has no demographic, diagnostic or treatment fields",
                case.patient_id
            ));
        }
        for w in &warnings {
            warn!(warning = %w, "cohort");
        }

        let class_counts = count_classes(&cases);
        Ok(CohortManifest {
            cases,
            class_counts,
            ineligible,
            warnings,
        })
    }

    /// Checks that stored counts match the cases and that both classes are present.
    pub fn validate_for_training(&self) -> Result<()> {
        if self.class_counts != count_classes(&self.cases) {
            return Err(Error::Validation("class_counts do not match cases".into()));
        }
        for class in Idh1Status::ALL {
            if self.class_counts.get(&class).copied().unwrap_or(0) == 0 {
                return Err(Error::Validation(format!("no {class} cases in cohort")));
            }
        }
        Ok(())
    }

    pub fn eligible(&self) -> impl Iterator<Item = &PatientCase> {
        self.cases.iter().filter(|c| c.is_eligible())
    }

    pub fn labels(&self) -> BTreeMap<String, Idh1Status> {
        self.eligible()
            .filter_map(|c| c.idh1_label.map(|l| (c.patient_id.clone(), l)))
            .collect()
    }

    pub fn get(&self, patient_id: &str) -> Option<&PatientCase> {
        self.cases.iter().find(|c| c.patient_id == patient_id)
    }

    pub fn count(&self, class: Idh1Status) -> usize {
        self.class_counts.get(&class).copied().unwrap_or(0)
    }
}

fn count_classes(cases: &[PatientCase]) -> BTreeMap<Idh1Status, usize> {
    let mut counts: BTreeMap<Idh1Status, usize> =
        Idh1Status::ALL.iter().map(|c| (*c, 0)).collect();
    for label in cases.iter().filter_map(|c| c.idh1_label) {
        *counts.entry(label).or_default() += 1;
    }
    counts
}

/// Parses cases from line-delimited JSON. Blank lines are skipped; `source`
/// names the input in error messages.
pub fn parse_cases(text: &str, source: &str) -> Result<Vec<PatientCase>> {
    let mut cases = Vec::new();
    for (idx, line) in text.lines().enumerate() {
        if line.trim().is_empty() {
            continue;
        }
        let case: PatientCase = serde_json::from_str(line).map_err(|e| Error::Parse {
            file: source.to_string(),
            line: idx + 1,
            message: e.to_string(),
        })?;
        cases.push(case);
    }
    Ok(cases)
}

pub fn load_cohort(path: &Path) -> Result<CohortManifest> {
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    let cases = parse_cases(&text, &path.display().to_string())?;
    CohortManifest::from_cases(cases)
}

pub fn write_cases(path: &Path, cases: &[PatientCase]) -> Result<()> {
    let mut out = String::new();
    for case in cases {
        out.push_str(&serde_json::to_string(case).expect("case serializes"));
        out.push('\n');
    }
    std::fs::write(path, out).map_err(|e| Error::io(path, e))
}

/// Serializes the present clinical fields as "Key: value." sentences in
/// canonical order. Molecular annotations are never included. Returns an
/// empty string when the case has no clinical fields.
pub fn build_clinical_text(case: &PatientCase) -> String {
    let mut parts = Vec::new();
    for (field, key) in CLINICAL_FIELDS {
        let value = if field == "age_years" {
            case.age_years.map(|a| a.to_string())
        } else {
            case.categorical(field).map(str::to_string)
        };
        if let Some(value) = value {
            parts.push(
                CLINICAL_TEXT_TEMPLATE
                    .replace("{key}", key)
                    .replace("{value}", &value),
            );
        }
    }
    parts.join(" ")
}

pub const DEFAULT_GENE_FILTER: [&str; 2] = ["TP53", "CIC"];

pub fn default_gene_filter() -> BTreeSet<String> {
    DEFAULT_GENE_FILTER.iter().map(|g| g.to_string()).collect()
}

/// One "GENE ALTERATION: oncogenicity." sentence per retained annotation, or
/// `None` when nothing survives the gene and oncogenicity filters.
pub fn build_molecular_summary(
    case: &PatientCase,
    allowed_genes: &BTreeSet<String>,
) -> Option<String> {
    let annotations = case.molecular_summary.as_ref()?;
    let sentences: Vec<String> = annotations
        .iter()
        .filter(|a| allowed_genes.contains(&a.gene_symbol))
        .filter(|a| a.oncogenicity != Oncogenicity::Unknown)
        .map(|a| {
            format!(
                "{} {}: {}.",
                a.gene_symbol,
                a.alteration,
                a.oncogenicity.as_str()
            )
        })
        .collect();
    if sentences.is_empty() {
        None
    } else {
        Some(sentences.join(" "))
    }
}

/// Number of decade bins for age: [0-9], [10-19], ..., [90+].
pub const AGE_BINS: usize = 10;

pub fn age_bin(age: u32) -> usize {
    ((age / 10) as usize).min(AGE_BINS - 1)
}

const CATEGORICAL_FIELDS: [&str; 5] = [
    "sex",
    "tumor_class",
    "histologic_morphology",
    "treatment_type",
    "therapeutic_procedure",
];

/// One-hot vocabulary fitted on training cases.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct OneHotEncoder {
    /// Per categorical variable, the sorted set of training values.
    pub vocabulary: Vec<(String, Vec<String>)>,
}

impl OneHotEncoder {
    pub fn fit<'a>(training: impl IntoIterator<Item = &'a PatientCase>) -> Result<Self> {
        let mut sets: Vec<BTreeSet<String>> = vec![BTreeSet::new(); CATEGORICAL_FIELDS.len()];
        let mut n = 0usize;
        for case in training {
            n += 1;
            for (set, field) in sets.iter_mut().zip(CATEGORICAL_FIELDS) {
                if let Some(v) = case.categorical(field) {
                    set.insert(v.to_string());
                }
            }
        }
        if n == 0 {
            return Err(Error::InvalidArgument(
                "one-hot vocabulary needs at least one training case".into(),
            ));
        }
        Ok(OneHotEncoder {
            vocabulary: CATEGORICAL_FIELDS
                .iter()
                .zip(sets)
                .map(|(f, s)| (f.to_string(), s.into_iter().collect()))
                .collect(),
        })
    }

    pub fn dimension(&self) -> usize {
        AGE_BINS + self.vocabulary.iter().map(|(_, v)| v.len()).sum::<usize>()
    }

    /// Age block first, then one block per categorical variable. Missing or
    /// unseen values give an all-zero block.
    pub fn encode(&self, case: &PatientCase) -> Vec<f64> {
        let mut out = vec![0.0; self.dimension()];
        if let Some(age) = case.age_years {
            out[age_bin(age)] = 1.0;
        }
        let mut offset = AGE_BINS;
        for (field, values) in &self.vocabulary {
            if let Some(v) = case.categorical(field) {
                if let Ok(pos) = values.binary_search_by(|x| x.as_str().cmp(v)) {
                    out[offset + pos] = 1.0;
                }
            }
            offset += values.len();
        }
        out
    }

    /// Block widths in encoding order, age block first.
    pub fn block_sizes(&self) -> Vec<usize> {
        std::iter::once(AGE_BINS)
            .chain(self.vocabulary.iter().map(|(_, v)| v.len()))
            .collect()
    }
}

/// Encodes every case in the cohort with a vocabulary fitted on `training_ids` only.
pub fn one_hot_encode_cohort(
    manifest: &CohortManifest,
    training_ids: &BTreeSet<String>,
) -> Result<BTreeMap<String, Embedding>> {
    if training_ids.is_empty() {
        return Err(Error::InvalidArgument("empty training set".into()));
    }
    let unknown: Vec<&String> = training_ids
        .iter()
        .filter(|id| manifest.get(id).is_none())
        .collect();
    if !unknown.is_empty() {
        return Err(Error::InvalidArgument(format!(
            "training ids not in cohort: {unknown:?}"
        )));
    }
    let encoder = OneHotEncoder::fit(
        manifest
            .cases
            .iter()
            .filter(|c| training_ids.contains(&c.patient_id)),
    )?;
    manifest
        .cases
        .iter()
        .map(|c| {
            let vector = encoder.encode(c);
            Ok((
                c.patient_id.clone(),
                Embedding::new(c.patient_id.clone(), vector, Modality::OneHot)?,
            ))
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    fn case(id: &str) -> PatientCase {
        PatientCase::new(id)
    }

    #[test]
    fn clinical_text_follows_template() {
        let mut c = case("P1");
        c.age_years = Some(45);
        c.sex = Some("female".into());
        c.tumor_class = Some("oligodendroglioma".into());
        assert_eq!(
            build_clinical_text(&c),
            "Age: 45. Sex: female. Tumor class: oligodendroglioma."
        );
    }

    #[test]
    fn clinical_text_empty_for_bare_case() {
        let c = case("P1");
        assert_eq!(build_clinical_text(&c), "");
        assert!(!c.has_clinical_fields());
    }

    #[test]
    fn clinical_text_is_deterministic_and_complete() {
        let mut a = case("A");
        a.age_years = Some(61);
        a.sex = Some("male".into());
        a.tumor_class = Some("astrocytoma".into());
        a.histologic_morphology = Some("Astrocytoma, anaplastic".into());
        a.treatment_type = Some("Radiation Therapy".into());
        a.therapeutic_procedure = Some("External beam".into());
        a.molecular_summary = Some(vec![GeneAnnotation {
            gene_symbol: "TP53".into(),
            alteration: "R273H".into(),
            oncogenicity: Oncogenicity::Oncogenic,
            source: "OncoKB".into(),
        }]);
        let mut b = a.clone();
        b.patient_id = "B".into();
        let text = build_clinical_text(&a);
        assert_eq!(text, build_clinical_text(&b));
        for v in [
            "61",
            "male",
            "astrocytoma",
            "Astrocytoma, anaplastic",
            "Radiation Therapy",
            "External beam",
        ] {
            assert!(text.contains(v), "{v} missing from {text}");
        }
        assert!(!text.contains("TP53"));
    }

    fn annotated(gene: &str, alt: &str, onc: Oncogenicity) -> PatientCase {
        let mut c = case("M");
        c.molecular_summary = Some(vec![GeneAnnotation {
            gene_symbol: gene.into(),
            alteration: alt.into(),
            oncogenicity: onc,
            source: "OncoKB".into(),
        }]);
        c
    }

    #[test]
    fn molecular_summary_filters_genes() {
        let filter = default_gene_filter();
        assert_eq!(
            build_molecular_summary(&annotated("TP53", "R273H", Oncogenicity::Oncogenic), &filter)
                .as_deref(),
            Some("TP53 R273H: oncogenic.")
        );
        assert_eq!(
            build_molecular_summary(&annotated("EGFR", "amp", Oncogenicity::Oncogenic), &filter),
            None
        );
        assert_eq!(
            build_molecular_summary(&annotated("CIC", "R215W", Oncogenicity::Unknown), &filter),
            None
        );
        let mut empty = case("E");
        empty.molecular_summary = Some(vec![]);
        assert_eq!(build_molecular_summary(&empty, &filter), None);
    }

    fn sexed(id: &str, sex: Option<&str>) -> PatientCase {
        let mut c = case(id);
        c.sex = sex.map(str::to_string);
        c.idh1_label = Some(Idh1Status::Mutant);
        c
    }

    fn sex_block(encoder: &OneHotEncoder, c: &PatientCase) -> Vec<f64> {
        let v = encoder.encode(c);
        let width = encoder.vocabulary[0].1.len();
        v[AGE_BINS..AGE_BINS + width].to_vec()
    }

    #[test]
    fn one_hot_sex_blocks() {
        let training = [sexed("a", Some("female")), sexed("b", Some("male"))];
        let enc = OneHotEncoder::fit(&training).unwrap();
        assert_eq!(sex_block(&enc, &sexed("t", Some("female"))), vec![1.0, 0.0]);
        assert_eq!(sex_block(&enc, &sexed("t", None)), vec![0.0, 0.0]);
    }

    #[test]
    fn one_hot_unseen_category_is_zero_block() {
        let training = [
            sexed("a", Some("female")),
            sexed("b", Some("male")),
            sexed("c", Some("female")),
        ];
        let enc = OneHotEncoder::fit(&training).unwrap();
        assert_eq!(enc.vocabulary[0].1, vec!["female", "male"]);
        assert_eq!(sex_block(&enc, &sexed("t", Some("other"))), vec![0.0, 0.0]);
    }

    #[test]
    fn age_decade_bins() {
        assert_eq!(age_bin(0), 0);
        assert_eq!(age_bin(9), 0);
        assert_eq!(age_bin(45), 4);
        assert_eq!(age_bin(90), 9);
        assert_eq!(age_bin(104), 9);
    }

    #[test]
    fn one_hot_requires_training_cases() {
        let m = CohortManifest::from_cases(vec![sexed("a", Some("f"))]).unwrap();
        assert!(one_hot_encode_cohort(&m, &BTreeSet::new()).is_err());
        let bad: BTreeSet<String> = ["zz".to_string()].into();
        assert!(one_hot_encode_cohort(&m, &bad).is_err());
    }

    #[test]
    fn duplicate_ids_rejected() {
        let err = CohortManifest::from_cases(vec![
            sexed("TCGA-XX-0001", None),
            sexed("TCGA-XX-0001", None),
        ])
        .unwrap_err();
        match err {
            Error::DuplicateIds(ids) => assert_eq!(ids, vec!["TCGA-XX-0001".to_string()]),
            other => panic!("unexpected {other:?}"),
        }
    }

    #[test]
    fn empty_cohort_warns() {
        let m = CohortManifest::from_cases(vec![]).unwrap();
        assert_eq!(m.count(Idh1Status::Mutant), 0);
        assert_eq!(m.count(Idh1Status::Wildtype), 0);
        assert!(!m.warnings.is_empty());
        assert!(m.validate_for_training().is_err());
    }

    #[test]
    fn parse_errors_name_the_line() {
        let text = "{\"patient_id\":\"a\",\"sex\":\"f\"}\n\n{\"patient_id\":\"b\",\"colour\":\"x\"}\n";
        match parse_cases(text, "cases.jsonl").unwrap_err() {
            Error::Parse { line, .. } => assert_eq!(line, 3),
            other => panic!("unexpected {other:?}"),
        }
    }

    #[test]
    fn unlabeled_cases_are_flagged() {
        let mut c = sexed("u", Some("f"));
        c.idh1_label = None;
        let m = CohortManifest::from_cases(vec![c, sexed("l", Some("m"))]).unwrap();
        assert_eq!(m.ineligible, vec!["u".to_string()]);
        assert_eq!(m.labels().len(), 1);
    }
}
