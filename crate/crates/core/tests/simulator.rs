use std::collections::BTreeMap;

use pif::classify::{loso_cv, Class, Construct, Dataset};
use pif::features::{eda::eda_features, extract, FeatureRegistry};
use pif::sensors::SensorData;
use pif::simulator::{
    expected_scr_count, generate, make_cohort, make_cohort_with, planted_associations, CohortOptions, Generator,
    GroundTruth, Scenario, Segment, SubjectProfile,
};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

fn flat(duration: f64, truth: GroundTruth) -> Scenario {
    Scenario {
        name: "flat".into(),
        segments: vec![Segment {
            duration,
            truth,
            story: None,
            tag: Some("W".into()),
            labels: BTreeMap::new(),
            pages: 0,
        }],
    }
}

fn with_arousal(a: f64) -> GroundTruth {
    GroundTruth {
        arousal: a,
        ..Default::default()
    }
}

#[test]
fn arousal_extremes_differ_in_scr_count() {
    let p = SubjectProfile::typical("s", 0);
    // analytic: refractory-thinned Poisson means
    let (lo, hi) = (expected_scr_count(&p, 0.0, 70.0), expected_scr_count(&p, 1.0, 70.0));
    assert!(hi - lo >= 3.0, "expected counts {lo} vs {hi}");

    // realized: generator onsets and counts recovered by peak detection, averaged over seeds
    let (mut onsets, mut peaks) = ([0.0; 2], [0.0; 2]);
    let seeds = 10;
    for seed in 0..seeds {
        for (k, a) in [0.0, 1.0].into_iter().enumerate() {
            let p = SubjectProfile::typical("s", seed);
            let mut g = Generator::new(&p);
            let chunk = g.advance(70.0, &with_arousal(a));
            onsets[k] += chunk.scr_onsets.len() as f64 / seeds as f64;
            peaks[k] += eda_features(&chunk.eda, 512.0).unwrap().n_peaks as f64 / seeds as f64;
        }
    }
    println!("onsets {onsets:?} peaks {peaks:?} expected {lo:.2} {hi:.2}");
    assert!(onsets[1] - onsets[0] >= 3.0);
    assert!(peaks[1] - peaks[0] >= 3.0);
    assert!((onsets[0] - lo).abs() < 1.5 && (onsets[1] - hi).abs() < 2.0);
}

#[test]
fn expected_scr_count_is_monotone_in_arousal() {
    for seed in 0..20 {
        let p = SubjectProfile::random("s", seed);
        let mut prev = f64::NEG_INFINITY;
        for i in 0..=100 {
            let c = expected_scr_count(&p, i as f64 / 100.0, 70.0);
            assert!(c >= prev);
            prev = c;
        }
    }
}

#[test]
fn neutral_valence_breathes_at_baseline() {
    let registry = FeatureRegistry::new(vec!["breath_rate".into()]);
    for seed in 0..8 {
        let p = SubjectProfile::random("s", seed);
        let data = generate(&p, &flat(70.0, GroundTruth::default())).unwrap();
        let w = data.tag_windows();
        let rate = extract(&data.window(w[0].span), &registry, "s", None).values[0].unwrap();
        assert!(
            (rate - p.baseline.breath_rate_bpm).abs() <= 0.5,
            "seed {seed}: {rate} vs {}",
            p.baseline.breath_rate_bpm
        );
    }
}

#[test]
fn same_seed_gives_identical_recordings() {
    let s = Scenario::story_pairs();
    let bytes = |seed| {
        let data = generate(&SubjectProfile::random("S01", seed), &s).unwrap();
        let mut out = Vec::new();
        data.to_recording("sim", 0.0).write_to(&mut out).unwrap();
        out
    };
    let a = bytes(7);
    assert_eq!(a, bytes(7));
    assert_ne!(a, bytes(8));
}

#[test]
fn recording_round_trip_keeps_labels_and_windows() {
    let data = generate(&SubjectProfile::typical("S03", 3), &Scenario::story_pairs()).unwrap();
    let rec = data.to_recording("sim", 0.0);
    let back = SensorData::from_recording(&rec);
    assert_eq!(back.subject.as_deref(), Some("S03"));
    let windows = back.tag_windows();
    assert_eq!(windows.len(), 6);
    assert_eq!(windows[1].tag, "POLICE");
    assert_eq!(windows[1].labels["arousal"], "exciting");
    assert!((windows[1].span.0 - 70.0).abs() < 1e-12 && (windows[1].span.1 - 140.0).abs() < 1e-12);
    let rows = back.feature_rows(&FeatureRegistry::default(), "S03");
    for (_, fv) in &rows {
        assert_eq!(fv.n_missing(), 0, "{fv:?}");
    }
}

#[test]
fn cohort_classifies_arousal_and_permutation_is_chance() {
    let cohort = make_cohort(14, &Scenario::story_pairs(), 1.0).unwrap();
    let ds = Dataset::from_table(&cohort.table, Construct::arousal());
    let report = loso_cv(&ds).unwrap();
    println!("arousal accuracy {}", report.accuracy);
    assert!(report.accuracy >= 0.9);

    let mut rng = ChaCha8Rng::seed_from_u64(5);
    let runs = 20;
    let mean = (0..runs)
        .map(|_| loso_cv(&ds.permute_labels(&mut rng)).unwrap().accuracy)
        .sum::<f64>()
        / runs as f64;
    println!("permuted mean {mean}");
    assert!((mean - 0.5).abs() <= 0.15);

    let planted = planted_associations(&Construct::arousal());
    // positive weights point to class A
    for &i in report.weights.ranked().iter().take(3) {
        let (name, w) = (&report.weights.names[i], report.weights.weights[i]);
        let class = planted.iter().find(|(f, _)| f == name).map(|p| p.1);
        assert_eq!(class, Some(if w > 0.0 { Class::A } else { Class::B }), "{name} {w}");
    }
}

#[test]
fn null_cohort_is_chance() {
    let runs = 10;
    let mut total = 0.0;
    for seed in 0..runs {
        let cohort = make_cohort_with(
            &Scenario::story_pairs(),
            &CohortOptions {
                separability: 0.0,
                seed: 100 + seed,
                ..Default::default()
            },
        )
        .unwrap();
        total += loso_cv(&Dataset::from_table(&cohort.table, Construct::arousal())).unwrap().accuracy;
    }
    let mean = total / runs as f64;
    println!("separability 0 mean accuracy {mean}");
    assert!((mean - 0.5).abs() <= 0.15);
}

#[test]
fn level_shift_leaves_accuracy_unchanged() {
    let acc = |shift| {
        let cohort = make_cohort_with(
            &Scenario::story_pairs(),
            &CohortOptions {
                baseline_shift: shift,
                ..Default::default()
            },
        )
        .unwrap();
        Construct::builtin()
            .into_iter()
            .map(|c| loso_cv(&Dataset::from_table(&cohort.table, c)).unwrap().accuracy)
            .collect::<Vec<_>>()
    };
    let (a, b) = (acc(0.0), acc(0.5));
    println!("unshifted {a:?} shifted {b:?}");
    for (x, y) in a.iter().zip(&b) {
        assert!((x - y).abs() <= 0.03 + 1e-12);
    }
}

#[test]
fn planted_associations_hold_in_generated_features() {
    let registry = FeatureRegistry::default();
    let segments = Scenario::story_pairs().segments;
    let seeds = 6;
    for construct in Construct::builtin() {
        // class → summed feature vectors
        let mut sums: BTreeMap<Class, (Vec<f64>, usize)> = BTreeMap::new();
        for seg in segments.iter().filter(|s| s.labels.contains_key(&construct.name)) {
            let class = construct.class_of(&seg.labels[&construct.name]).unwrap();
            for seed in 0..seeds {
                let p = SubjectProfile::typical("s", seed);
                let data = generate(&p, &flat(70.0, seg.truth)).unwrap();
                let w = data.tag_windows();
                let fv = extract(&data.window(w[0].span), &registry, "s", None);
                let e = sums.entry(class).or_insert((vec![0.0; registry.len()], 0));
                for (s, v) in e.0.iter_mut().zip(&fv.values) {
                    *s += v.unwrap_or(0.0);
                }
                e.1 += 1;
            }
        }
        let mean = |c: Class, j: usize| sums[&c].0[j] / sums[&c].1 as f64;
        for (name, higher) in planted_associations(&construct) {
            let j = registry.index(name).unwrap();
            let (hi, lo) = (mean(higher, j), mean(higher.other(), j));
            assert!(hi > lo, "{}: {name} {hi} in {higher:?} vs {lo}", construct.name);
        }
    }
}
