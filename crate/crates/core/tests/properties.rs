use std::collections::{BTreeMap, BTreeSet};

use ndarray::Array2;
use proptest::prelude::*;

use moa_core::classifier::{init_model, softmax_row, train, TrainConfig};
use moa_core::cohort::{Idh1Status, OneHotEncoder, PatientCase};
use moa_core::evaluation::{accuracy, auroc, f1_score};
use moa_core::knowledge::{cosine_similarity, filter_corpus, Chunk, Document, KnowledgeIndex};
use moa_core::text_embed::{truncate_tokens, HashedEmbedder, TextEmbedder};

fn case_strategy() -> impl Strategy<Value = PatientCase> {
    let opt = |vals: &'static [&'static str]| proptest::option::of(proptest::sample::select(vals));
    (
        "[A-Z]{3}[0-9]{3}",
        proptest::option::of(0u32..100),
        opt(&["male", "female"]),
        opt(&["Astrocytoma", "Oligodendroglioma", "Oligoastrocytoma"]),
        opt(&["9400/3", "9450/3", "9382/3"]),
        opt(&["Radiation", "Chemo"]),
    )
        .prop_map(|(id, age, sex, class, morph, treat)| {
            let mut c = PatientCase::new(id);
            c.age_years = age;
            c.sex = sex.map(Into::into);
            c.tumor_class = class.map(Into::into);
            c.histologic_morphology = morph.map(Into::into);
            c.treatment_type = treat.map(Into::into);
            c
        })
}

fn field_value<'a>(c: &'a PatientCase, field: &str) -> Option<&'a str> {
    match field {
        "sex" => c.sex.as_deref(),
        "tumor_class" => c.tumor_class.as_deref(),
        "histologic_morphology" => c.histologic_morphology.as_deref(),
        "treatment_type" => c.treatment_type.as_deref(),
        "therapeutic_procedure" => c.therapeutic_procedure.as_deref(),
        _ => None,
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn one_hot_blocks_hold_at_most_one(train in proptest::collection::vec(case_strategy(), 1..20),
                                       test in proptest::collection::vec(case_strategy(), 0..10)) {
        let enc = OneHotEncoder::fit(&train).unwrap();
        // Every vocabulary entry was seen in a training case.
        for (field, values) in &enc.vocabulary {
            for v in values {
                prop_assert!(train.iter().any(|c| field_value(c, field) == Some(v.as_str())));
            }
        }
        let sizes = enc.block_sizes();
        for case in train.iter().chain(&test) {
            let v = enc.encode(case);
            prop_assert_eq!(v.len(), enc.dimension());
            prop_assert_eq!(&v, &enc.encode(case));
            let mut offset = 0;
            for s in &sizes {
                let sum: f64 = v[offset..offset + s].iter().sum();
                prop_assert!(sum == 0.0 || sum == 1.0);
                offset += s;
            }
        }
    }

    #[test]
    fn softmax_sums_to_one(z0 in -700.0f64..700.0, z1 in -700.0f64..700.0) {
        let p = softmax_row(z0, z1);
        prop_assert!((p[0] + p[1] - 1.0).abs() <= 1e-12);
        prop_assert!(p.iter().all(|x| (0.0..=1.0).contains(x)));
    }

    #[test]
    fn metrics_are_probabilities(pairs in proptest::collection::vec((0.0f64..1.0, any::<bool>(), any::<bool>()), 2..80)) {
        let preds: Vec<Idh1Status> = pairs.iter().map(|p| if p.1 { Idh1Status::Mutant } else { Idh1Status::Wildtype }).collect();
        let labels: Vec<Idh1Status> = pairs.iter().map(|p| if p.2 { Idh1Status::Mutant } else { Idh1Status::Wildtype }).collect();
        let acc = accuracy(&preds, &labels).unwrap();
        let f1 = f1_score(&preds, &labels, Idh1Status::Mutant).unwrap();
        prop_assert!((0.0..=1.0).contains(&acc) && (0.0..=1.0).contains(&f1));
        let scores: Vec<f64> = pairs.iter().map(|p| p.0).collect();
        let positive: Vec<bool> = pairs.iter().map(|p| p.2).collect();
        if positive.iter().any(|p| *p) && positive.iter().any(|p| !*p) {
            let a = auroc(&scores, &positive).unwrap();
            prop_assert!((0.0..=1.0).contains(&a));
            // Rank based: a strictly increasing transform leaves it unchanged.
            let squashed: Vec<f64> = scores.iter().map(|s| (3.0 * s).exp()).collect();
            prop_assert_eq!(a, auroc(&squashed, &positive).unwrap());
        }
    }

    #[test]
    fn hashed_vectors_have_configured_dimension(text in "\\PC{0,200}", dim in 8usize..64) {
        let e = HashedEmbedder::new(dim, 16);
        match e.embed_texts(&[&text]) {
            Ok(v) => {
                prop_assert_eq!(v[0].len(), dim);
                prop_assert!(v[0].iter().all(|x| x.is_finite()));
                prop_assert_eq!(&v[0], &e.embed_texts(&[&text]).unwrap()[0]);
            }
            // Only text without any token may be refused.
            Err(_) => prop_assert!(HashedEmbedder::tokens(&text).is_empty()),
        }
    }

    #[test]
    fn truncation_keeps_nonempty_text(text in "[a-z ]{1,80}", max in 1usize..10) {
        prop_assume!(!text.trim().is_empty());
        prop_assert!(!truncate_tokens(&text, max).trim().is_empty());
    }

    #[test]
    fn corpus_filter_is_idempotent(bodies in proptest::collection::vec("(glioma|IDH|heart|lung| )+", 0..8)) {
        let docs: Vec<Document> = bodies
            .iter()
            .enumerate()
            .map(|(i, b)| Document { doc_id: format!("d{i}"), title: format!("t{i}"), body: b.clone() })
            .collect();
        let kw = vec!["glioma".to_string(), "IDH".to_string()];
        let once = filter_corpus(&docs, &kw);
        prop_assert_eq!(filter_corpus(&once, &kw), once);
    }

    #[test]
    fn retrieval_matches_brute_force_cosine(texts in proptest::collection::vec("[a-f]{1,3}( [a-f]{1,3}){0,6}", 1..12),
                                            query in "[a-f]{1,3}( [a-f]{1,3}){0,4}") {
        let chunks: Vec<Chunk> = texts
            .iter()
            .enumerate()
            .map(|(i, t)| Chunk {
                chunk_id: format!("c{i:02}"),
                doc_id: "d".into(),
                title: "t".into(),
                text: t.clone(),
                vector: None,
            })
            .collect();
        let embedder = HashedEmbedder::new(16, 64);
        let index = KnowledgeIndex::build(&chunks, &embedder).unwrap();
        let q = embedder.embed_texts(&[query.as_str()]).unwrap().remove(0);
        let hits = index.search_vector(&q, chunks.len()).unwrap();
        prop_assert_eq!(hits.len(), chunks.len());
        prop_assert!(hits.windows(2).all(|w| w[0].score >= w[1].score));
        let brute: BTreeMap<String, f64> = chunks
            .iter()
            .map(|c| {
                let v = embedder.embed_texts(&[c.text.as_str()]).unwrap().remove(0);
                (c.chunk_id.clone(), cosine_similarity(&q, &v))
            })
            .collect();
        for h in &hits {
            prop_assert_eq!(h.score, brute[&h.chunk_id]);
        }
    }
}

#[test]
fn small_learning_rate_loss_does_not_increase_early() {
    let x = Array2::from_shape_vec((6, 2), vec![1.0, 0.5, 0.8, 1.2, 1.5, 0.9, -1.0, -0.4, -0.7, -1.3, -1.2, -0.8]).unwrap();
    let y = [1, 1, 1, 0, 0, 0];
    let cfg = TrainConfig {
        learning_rate: 1e-4,
        weight_decay: 0.0,
        batch_size: 6,
        epochs: 10,
        hidden_dims: vec![8, 8, 4],
        seed: 3,
        ..TrainConfig::default()
    };
    let model = init_model(2, &cfg.hidden_dims, 3).unwrap();
    let out = train(model, x.view(), &y, &cfg).unwrap();
    assert_eq!(out.loss_curve.len(), 10);
    assert!(out.loss_curve.windows(2).all(|w| w[1] <= w[0]), "{:?}", out.loss_curve);
}

#[test]
fn ids_in_vocabulary_come_only_from_training() {
    let mut a = PatientCase::new("A");
    a.sex = Some("male".into());
    let mut b = PatientCase::new("B");
    b.sex = Some("female".into());
    let enc = OneHotEncoder::fit([&a]).unwrap();
    let sexes: BTreeSet<&str> = enc
        .vocabulary
        .iter()
        .filter(|(f, _)| f == "sex")
        .flat_map(|(_, v)| v.iter().map(String::as_str))
        .collect();
    assert_eq!(sexes, BTreeSet::from(["male"]));
    assert!(enc.encode(&b).iter().all(|x| *x == 0.0));
}
