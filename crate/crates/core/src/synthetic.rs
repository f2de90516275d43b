//! Deterministic synthetic cohort used by the demo and the end-to-end tests.
//!
//! Label signal is split across two independent channels. Clinical fields and
//! molecular annotations (which end up in the generated reports) carry one
//! part; the slide features carry the other, as a mean shift along a fixed
//! set of dimensions. Neither channel is derived from the other.

use std::path::Path;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::cohort::{write_cases, GeneAnnotation, Idh1Status, Oncogenicity, PatientCase};
use crate::embedding::{save_embeddings, Embedding, Modality};
use crate::tools::SLIDE_FEATURE_DIM;
use crate::{Error, Result};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SyntheticSpec {
    pub n_mutant: usize,
    pub n_wildtype: usize,
    pub seed: u64,
    pub id_prefix: String,
    /// Fraction of cases with molecular annotations.
    pub molecular_rate: f64,
    /// Number of slide dimensions that carry the label shift.
    pub slide_signal_dims: usize,
    /// Distance between class means along each signal dimension.
    pub slide_shift: f64,
}

impl Default for SyntheticSpec {
    fn default() -> Self {
        SyntheticSpec {
            n_mutant: 374,
            n_wildtype: 114,
            seed: 20240601,
            id_prefix: "TCGA-SYN".into(),
            molecular_rate: 0.9,
            slide_signal_dims: 48,
            slide_shift: 0.5,
        }
    }
}

/// Alterations used for molecular annotations, with their OncoKB-style calls.
pub const SYNTHETIC_ALTERATIONS: [(&str, &str, Oncogenicity); 6] = [
    ("TP53", "R273H", Oncogenicity::Oncogenic),
    ("TP53", "R248Q", Oncogenicity::Oncogenic),
    ("TP53", "R175H", Oncogenicity::Oncogenic),
    ("CIC", "R215W", Oncogenicity::LikelyOncogenic),
    ("CIC", "R1515H", Oncogenicity::LikelyOncogenic),
    ("TP53", "P72R", Oncogenicity::Unknown),
];

pub const TUMOR_CLASSES: [&str; 3] = ["Astrocytoma", "Oligodendroglioma", "Oligoastrocytoma"];

#[derive(Debug, Clone)]
pub struct SyntheticCohort {
    pub cases: Vec<PatientCase>,
    pub slides: Vec<Embedding>,
    /// Slide dimensions that carry the label shift.
    pub signal_dims: Vec<usize>,
}

fn pick<'a, R: Rng>(rng: &mut R, items: &[(&'a str, f64)]) -> &'a str {
    let total: f64 = items.iter().map(|(_, w)| w).sum();
    let mut u = rng.random::<f64>() * total;
    for (item, w) in items {
        if u < *w {
            return item;
        }
        u -= w;
    }
    items.last().expect("non-empty").0
}

fn sample_case<R: Rng>(rng: &mut R, id: String, label: Idh1Status, molecular_rate: f64) -> PatientCase {
    let mutant = label == Idh1Status::Mutant;
    let age_dist = if mutant {
        Normal::new(39.0, 11.0)
    } else {
        Normal::new(49.0, 13.0)
    }
    .expect("valid normal");
    let age: f64 = age_dist.sample(rng);
    let age = age.round().clamp(18.0, 85.0) as u32;
    let sex = pick(rng, &[("male", 0.55), ("female", 0.45)]);
    let tumor_class = if mutant {
        pick(rng, &[(TUMOR_CLASSES[0], 0.38), (TUMOR_CLASSES[1], 0.37), (TUMOR_CLASSES[2], 0.25)])
    } else {
        pick(rng, &[(TUMOR_CLASSES[0], 0.55), (TUMOR_CLASSES[1], 0.17), (TUMOR_CLASSES[2], 0.28)])
    };
    let anaplastic = rng.random::<f64>() < if mutant { 0.40 } else { 0.60 };
    let morphology = match (tumor_class, anaplastic) {
        ("Astrocytoma", false) => "9400/3 Astrocytoma, NOS",
        ("Astrocytoma", true) => "9401/3 Astrocytoma, anaplastic",
        ("Oligodendroglioma", false) => "9450/3 Oligodendroglioma, NOS",
        ("Oligodendroglioma", true) => "9451/3 Oligodendroglioma, anaplastic",
        _ => "9382/3 Mixed glioma",
    };
    let treatment = pick(
        rng,
        &[("Radiation Therapy, NOS", 0.5), ("Pharmaceutical Therapy, NOS", 0.5)],
    );
    let procedure = pick(
        rng,
        &[("Gross total resection", 0.45), ("Subtotal resection", 0.4), ("Biopsy", 0.15)],
    );

    let molecular = if rng.random::<f64>() < molecular_rate {
        let mut annotations = Vec::new();
        let (p_tp53, p_cic) = match (mutant, tumor_class) {
            (true, "Oligodendroglioma") => (0.15, 0.80),
            (true, _) => (0.85, 0.10),
            (false, _) => (0.12, 0.03),
        };
        if rng.random::<f64>() < p_tp53 {
            let (g, a, o) = SYNTHETIC_ALTERATIONS[rng.random_range(0..3)];
            annotations.push(annotation(g, a, o));
        }
        if rng.random::<f64>() < p_cic {
            let (g, a, o) = SYNTHETIC_ALTERATIONS[rng.random_range(3..5)];
            annotations.push(annotation(g, a, o));
        }
        if rng.random::<f64>() < 0.1 {
            let (g, a, o) = SYNTHETIC_ALTERATIONS[5];
            annotations.push(annotation(g, a, o));
        }
        Some(annotations).filter(|a| !a.is_empty())
    } else {
        None
    };

    let missing_treatment = rng.random::<f64>() < 0.08;
    PatientCase {
        patient_id: id,
        age_years: Some(age),
        sex: Some(sex.into()),
        tumor_class: Some(tumor_class.into()),
        histologic_morphology: Some(morphology.into()),
        treatment_type: (!missing_treatment).then(|| treatment.into()),
        therapeutic_procedure: (!missing_treatment).then(|| procedure.into()),
        molecular_summary: molecular,
        slide_feature_path: None,
        idh1_label: Some(label),
    }
}

fn annotation(gene: &str, alteration: &str, oncogenicity: Oncogenicity) -> GeneAnnotation {
    GeneAnnotation {
        gene_symbol: gene.into(),
        alteration: alteration.into(),
        oncogenicity,
        source: "OncoKB".into(),
    }
}

fn round4(x: f64) -> f64 {
    (x * 1e4).round() / 1e4
}

pub fn generate(spec: &SyntheticSpec) -> Result<SyntheticCohort> {
    if spec.slide_signal_dims > SLIDE_FEATURE_DIM {
        return Err(Error::InvalidArgument("more signal dims than slide dims".into()));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    let mut labels: Vec<Idh1Status> = std::iter::repeat_n(Idh1Status::Mutant, spec.n_mutant)
        .chain(std::iter::repeat_n(Idh1Status::Wildtype, spec.n_wildtype))
        .collect();
    labels.shuffle(&mut rng);

    let mut dims: Vec<usize> = (0..SLIDE_FEATURE_DIM).collect();
    dims.shuffle(&mut rng);
    let mut signal_dims = dims[..spec.slide_signal_dims].to_vec();
    signal_dims.sort_unstable();

    // Separate streams keep the slide features independent of the clinical draw.
    let mut clinical_rng = ChaCha8Rng::seed_from_u64(spec.seed.wrapping_add(1));
    let mut slide_rng = ChaCha8Rng::seed_from_u64(spec.seed.wrapping_add(2));
    let noise = Normal::new(0.0, 1.0).expect("valid normal");

    let mut cases = Vec::with_capacity(labels.len());
    let mut slides = Vec::with_capacity(labels.len());
    for (i, label) in labels.iter().enumerate() {
        let id = format!("{}-{:04}", spec.id_prefix, i + 1);
        let mut case = sample_case(&mut clinical_rng, id.clone(), *label, spec.molecular_rate);
        case.slide_feature_path = Some(format!("slides/{id}.jsonl"));
        cases.push(case);

        let sign = if *label == Idh1Status::Mutant { 0.5 } else { -0.5 };
        let mut v: Vec<f64> = (0..SLIDE_FEATURE_DIM).map(|_| noise.sample(&mut slide_rng)).collect();
        for d in &signal_dims {
            v[*d] += sign * spec.slide_shift;
        }
        slides.push(Embedding::new(id, v.into_iter().map(round4).collect(), Modality::Slide)?);
    }
    Ok(SyntheticCohort {
        cases,
        slides,
        signal_dims,
    })
}

/// Writes `cases.jsonl` and `slides/<id>.jsonl` under `dir`.
pub fn write_cohort(dir: &Path, cohort: &SyntheticCohort) -> Result<()> {
    let slides_dir = dir.join("slides");
    std::fs::create_dir_all(&slides_dir).map_err(|e| Error::io(&slides_dir, e))?;
    write_cases(&dir.join("cases.jsonl"), &cohort.cases)?;
    for s in &cohort.slides {
        save_embeddings(&slides_dir.join(format!("{}.jsonl", s.id)), std::slice::from_ref(s))?;
    }
    Ok(())
}
