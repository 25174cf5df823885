mod common;

use common::{cohort, gaussians, monotone_transform, normal, phi};
use nalgebra::DMatrix;
use pif::classify::{
    fit, fit_fold, fit_matrix, loso_cv, rank_normalize, Class, ClassifyError, Construct, Dataset, Lda,
    Pca, PipelineModel, RankStrategy,
};
use pif::features::FeatureVector;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

#[test]
fn lda_reaches_bayes_rate() {
    let bayes = phi(2.0);
    assert!((bayes - 0.97725).abs() < 1e-5);
    let mut rng = ChaCha8Rng::seed_from_u64(7);
    let (train, tc) = gaussians(&mut rng, 10_000, 5);
    let (test, sc) = gaussians(&mut rng, 10_000, 5);
    let (pca, lda) = fit_matrix(&train, &tc).unwrap();
    let correct = test
        .iter()
        .zip(&sc)
        .filter(|(x, c)| Lda::classify(lda.score(&pca.project(x))) == **c)
        .count();
    let acc = correct as f64 / test.len() as f64;
    assert!((acc - bayes).abs() <= 0.02, "accuracy {acc} vs Bayes {bayes}");

    // analytic Fisher direction is the first axis
    let w = pca.back_project(&lda.w);
    let cos = w[0] / w.iter().map(|v| v * v).sum::<f64>().sqrt();
    assert!(cos.acos().to_degrees() < 5.0, "direction off by {:.2}°", cos.acos().to_degrees());
}

#[test]
fn pca_counts_intrinsic_dimension() {
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    for rank in 1..=4usize {
        let d = 9;
        let basis: Vec<Vec<f64>> = (0..rank).map(|_| (0..d).map(|_| normal(&mut rng)).collect()).collect();
        let rows: Vec<f64> = (0..200)
            .flat_map(|_| {
                let coef: Vec<f64> = (0..rank).map(|_| normal(&mut rng)).collect();
                (0..d)
                    .map(|j| basis.iter().zip(&coef).map(|(b, c)| b[j] * c).sum::<f64>() + 3.0)
                    .collect::<Vec<_>>()
            })
            .collect();
        let x = DMatrix::from_row_slice(200, d, &rows);
        let pca = Pca::fit(&x, 1.0 - 1e-9).unwrap();
        assert_eq!(pca.n_components(), rank);
    }
}

#[test]
fn pca_orthonormal_and_reconstructs() {
    let mut rng = ChaCha8Rng::seed_from_u64(11);
    let (n, d) = (60, 12);
    let rows: Vec<f64> = (0..n * d).map(|i| normal(&mut rng) * (1.0 + (i % d) as f64)).collect();
    let x = DMatrix::from_row_slice(n, d, &rows);
    let pca = Pca::fit(&x, 0.95).unwrap();
    for (i, a) in pca.components.iter().enumerate() {
        for (j, b) in pca.components.iter().enumerate() {
            let dot: f64 = a.iter().zip(b).map(|(p, q)| p * q).sum();
            let expected = if i == j { 1.0 } else { 0.0 };
            assert!((dot - expected).abs() < 1e-9);
        }
    }
    // minimal count: one fewer component would fall below 95 %
    let k = pca.n_components();
    assert!(pca.explained() >= 0.95);
    assert!(pca.variances[..k - 1].iter().sum::<f64>() / pca.total_variance < 0.95);
    let mut lost = 0.0;
    for r in 0..n {
        let row: Vec<f64> = x.row(r).iter().copied().collect();
        let back = pca.reconstruct(&pca.project(&row));
        lost += row.iter().zip(&back).map(|(a, b)| (a - b).powi(2)).sum::<f64>() / n as f64;
    }
    assert!(lost <= 0.05 * pca.total_variance + 1e-9);
}

#[test]
fn rank_pipeline_is_invariant_to_monotone_transforms() {
    let mut rng = ChaCha8Rng::seed_from_u64(21);
    let data = cohort(&mut rng, 10, 2, 6, 1.0);
    let labels = |d: &Dataset| -> Vec<Class> {
        loso_cv(d).unwrap().predictions.iter().map(|h| h.prediction.class).collect()
    };
    let reference = labels(&data);
    let mut changes = 0;
    for _ in 0..100 {
        let t = monotone_transform(&data, &mut rng);
        let got = labels(&t);
        changes += got.iter().zip(&reference).filter(|(a, b)| a != b).count();
    }
    assert_eq!(changes, 0);
}

#[test]
fn folds_never_see_held_out_data() {
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    let data = cohort(&mut rng, 6, 1, 5, 1.5);
    for s in data.subjects() {
        let before = fit_fold(&data, &s).unwrap();
        let mut mutated = data.clone();
        for o in mutated.observations.iter_mut().filter(|o| o.subject == s) {
            for v in &mut o.values {
                *v = Some(rng.random_range(-1e6..1e6));
            }
        }
        assert_eq!(fit_fold(&mutated, &s).unwrap(), before, "fold {s} changed");
    }
}

#[test]
fn separable_cohort_and_sign_swap() {
    let mut rng = ChaCha8Rng::seed_from_u64(9);
    let data = cohort(&mut rng, 14, 1, 8, 3.0);
    let report = loso_cv(&data).unwrap();
    assert!(report.accuracy >= 0.9, "accuracy {}", report.accuracy);
    let max = report.weights.weights.iter().fold(0.0f64, |m, w| m.max(w.abs()));
    assert!((max - 1.0).abs() < 1e-12);
    // the planted features lead, pointing at class A
    for &i in &report.weights.ranked()[..3] {
        assert!(i < 3 && report.weights.weights[i] > 0.0, "{:?}", report.weights);
    }
    let swapped = loso_cv(&data.swapped()).unwrap();
    for (a, b) in report.weights.weights.iter().zip(&swapped.weights.weights) {
        assert!((a + b).abs() < 1e-9);
    }
}

#[test]
fn predictions_and_posterior() {
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    let data = cohort(&mut rng, 8, 2, 5, 4.0);
    let model = fit(&data).unwrap();
    let ranked = rank_normalize(&data).unwrap();
    let correct = ranked
        .iter()
        .zip(&data.observations)
        .filter(|(r, o)| model.predict_ranked(r).class == o.class)
        .count();
    assert!(correct as f64 / ranked.len() as f64 > 0.9);

    // subject-context path agrees with whole-subject ranking
    let vectors: Vec<FeatureVector> = data
        .observations
        .iter()
        .map(|o| FeatureVector {
            values: o.values.clone(),
            subject: o.subject.clone(),
            label: None,
            span: (0.0, 1.0),
        })
        .collect();
    let (x, ctx) = vectors[..4].split_first().unwrap();
    let p = model.predict(x, ctx, RankStrategy::SubjectContext).unwrap();
    assert_eq!(p.class, model.predict_ranked(&ranked[0]).class);
    assert!((0.0..=1.0).contains(&p.posterior_a));
    assert_eq!(p.posterior_a >= 0.5, p.class == Class::A);

    let q = model.predict(x, &[], RankStrategy::PopulationQuantile).unwrap();
    assert!(q.score.is_finite());

    let mut short = x.clone();
    short.values.pop();
    assert!(matches!(
        model.predict(&short, ctx, RankStrategy::SubjectContext),
        Err(ClassifyError::RegistryMismatch { .. })
    ));
}

#[test]
fn model_file_round_trip() {
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    let model = fit(&cohort(&mut rng, 5, 1, 4, 2.0)).unwrap();
    let text = model.to_json().unwrap();
    assert_eq!(PipelineModel::from_json(&text).unwrap(), model);
    let bumped = text.replacen("\"version\": 1", "\"version\": 99", 1);
    assert!(matches!(PipelineModel::from_json(&bumped), Err(ClassifyError::ModelFormat { .. })));
}

#[test]
fn dataset_validation() {
    let mut rng = ChaCha8Rng::seed_from_u64(4);
    let mut data = cohort(&mut rng, 4, 1, 3, 1.0);
    data.observations.retain(|o| !(o.subject == "s02" && o.class == Class::B));
    match fit(&data) {
        Err(ClassifyError::MissingClass { subject, class }) => assert_eq!((subject.as_str(), class), ("s02", Class::B)),
        other => panic!("{other:?}"),
    }
    let lone = Dataset {
        observations: data.observations.iter().filter(|o| o.subject == "s02").cloned().collect(),
        ..data.clone()
    };
    match rank_normalize(&lone) {
        Err(ClassifyError::SingleObservation(s)) => assert_eq!(s, "s02"),
        other => panic!("{other:?}"),
    }
    assert!(Construct::parse("valence").unwrap().class_a == "happy");
    assert!(Construct::parse("calm:tense").is_ok());
    assert!(Construct::parse("nonsense").is_err());
}
