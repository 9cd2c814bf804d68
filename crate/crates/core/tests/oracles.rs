//! Properties checked against small, independently written reference
//! computations.

use std::collections::{BTreeMap, HashSet};

use proptest::prelude::*;

use thema_core::coding::{aggregate_codebook, saturation, InitialCode, Normalization};
use thema_core::evaluation::{
    cosine, cosine_slices, diagonal_report, ingest_human_scores_str, similarity_matrix, AlignmentSource, LabeledText,
    LabeledTextSet, PairAlignment, SimilarityMatrix,
};
use thema_core::gateway::{EmbeddingVector, MockEmbeddingProvider};
use thema_core::reporting::{matrix_csv_string, render_heatmap_svg_string, ColorScale};
use thema_core::theming::{Theme, ThemeSet};

fn brute_cosine(a: &[f64], b: &[f64]) -> f64 {
    let mut dot = 0.0;
    for i in 0..a.len() {
        dot += a[i] * b[i];
    }
    let na: f64 = a.iter().map(|x| x * x).sum::<f64>().sqrt();
    let nb: f64 = b.iter().map(|x| x * x).sum::<f64>().sqrt();
    dot / (na * nb)
}

fn nonzero_pair() -> impl Strategy<Value = (Vec<f64>, Vec<f64>)> {
    (8usize..=512).prop_flat_map(|d| {
        (
            prop::collection::vec(-100.0f64..100.0, d),
            prop::collection::vec(-100.0f64..100.0, d),
        )
            .prop_filter("nonzero", |(a, b)| a.iter().any(|x| x.abs() > 1e-6) && b.iter().any(|x| x.abs() > 1e-6))
    })
}

fn code(name: &str) -> InitialCode {
    InitialCode {
        index: 0,
        name: name.into(),
        description: "d".into(),
        quote: "q".into(),
        transcript_id: String::new(),
        run_id: "r".into(),
    }
}

fn ratio(names: &[String]) -> f64 {
    let cb = aggregate_codebook(BTreeMap::from([("t".to_string(), names.iter().map(|n| code(n)).collect())])).unwrap();
    saturation(&cb, Normalization::CasefoldTrim).unwrap().ratio_total_to_unique
}

#[test]
fn cosine_reference_value() {
    let v = cosine_slices(&[1.0, 2.0, 3.0], &[4.0, 5.0, 6.0]).unwrap();
    assert!((v - 0.974631846).abs() < 1e-6, "{v}");
}

#[test]
fn saturation_reference_values() {
    let names = |xs: &[&str]| xs.iter().map(|s| s.to_string()).collect::<Vec<_>>();
    assert_eq!(ratio(&names(&["A", "A", "B", "B", "B"])), 2.5);
    assert_eq!(ratio(&names(&["A", "B", "C"])), 1.0);
    assert_eq!(ratio(&names(&["Open data", " open DATA "])), 2.0);
}

#[test]
fn heatmap_is_byte_stable_and_anchored() {
    let m = SimilarityMatrix {
        row_labels: vec!["r".into()],
        col_labels: vec!["c".into()],
        values: vec![vec![1.0]],
        embedder_id: "t".into(),
    };
    let scale = ColorScale::new("#b2182b", "#ffffff", "#2166ac").unwrap();
    let a = render_heatmap_svg_string(&m, &scale).unwrap();
    assert_eq!(a, render_heatmap_svg_string(&m, &scale).unwrap());
    assert!(a.contains("#2166ac") && a.contains(">1.00<"));
    let zero = SimilarityMatrix {
        values: vec![vec![0.0]],
        ..m
    };
    let z = render_heatmap_svg_string(&zero, &scale).unwrap();
    assert!(z.contains("#ffffff") && z.contains(">0.00<"));
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(200))]

    #[test]
    fn cosine_matches_brute_force((a, b) in nonzero_pair()) {
        let got = cosine(&EmbeddingVector::new(a.clone()), &EmbeddingVector::new(b.clone())).unwrap();
        prop_assert!((got - brute_cosine(&a, &b)).abs() < 1e-9);
        prop_assert!((-1.0..=1.0).contains(&got));
        let swapped = cosine_slices(&b, &a).unwrap();
        prop_assert!((got - swapped).abs() < 1e-12);
    }

    #[test]
    fn cosine_ignores_positive_scaling((a, b) in nonzero_pair(), k in 0.01f64..100.0) {
        let scaled: Vec<f64> = a.iter().map(|x| x * k).collect();
        let base = cosine_slices(&a, &b).unwrap();
        prop_assert!((cosine_slices(&scaled, &b).unwrap() - base).abs() < 1e-9);
    }

    #[test]
    fn self_similarity_is_symmetric_with_unit_diagonal(
        words in prop::collection::btree_set("[a-z]{2,8}( [a-z]{2,8}){0,4}", 1..12),
    ) {
        let items: Vec<LabeledText> = words.iter().map(|w| LabeledText { label: w.clone(), text: w.clone() }).collect();
        let set = LabeledTextSet::new("x", items).unwrap();
        let embedder = MockEmbeddingProvider::new(64).unwrap();
        let m = similarity_matrix(&set, &set, &embedder).unwrap();
        for i in 0..m.values.len() {
            prop_assert!((m.values[i][i] - 1.0).abs() < 1e-6);
            for j in 0..m.values.len() {
                prop_assert!((m.values[i][j] - m.values[j][i]).abs() < 1e-9);
            }
        }
    }

    #[test]
    fn saturation_matches_set_count(names in prop::collection::vec(" ?[a-cA-C]{1,2} ?", 1..60)) {
        let unique: HashSet<String> = names.iter().map(|n| n.trim().to_lowercase()).collect();
        let expected = names.len() as f64 / unique.len() as f64;
        prop_assert!((ratio(&names) - expected).abs() < 1e-12);
        prop_assert!(ratio(&names) >= 1.0);
    }

    #[test]
    fn duplicate_raises_saturation(names in prop::collection::vec("[a-z]{1,4}", 1..40), pick in any::<prop::sample::Index>()) {
        let before = ratio(&names);
        let mut more = names.clone();
        more.push(names[pick.index(names.len())].clone());
        prop_assert!(ratio(&more) > before);
    }

    #[test]
    fn diagonal_count_matches_brute_force(
        scores in prop::collection::vec(-1.0f64..=1.0, 1..15),
        threshold in 0.05f64..=1.0,
    ) {
        let n = scores.len();
        let labels: Vec<String> = (0..n).map(|i| format!("l{i}")).collect();
        let values: Vec<Vec<f64>> = (0..n)
            .map(|i| (0..n).map(|j| if i == j { scores[i] } else { 0.0 }).collect())
            .collect();
        let m = SimilarityMatrix { row_labels: labels.clone(), col_labels: labels.clone(), values, embedder_id: "t".into() };
        let pairs = labels.iter().map(|l| (l.clone(), l.clone())).collect();
        let alignment = PairAlignment::new(pairs, AlignmentSource::ManualFile).unwrap();
        let report = diagonal_report(&m, &alignment, threshold).unwrap();
        let expected = scores.iter().filter(|&&s| s >= threshold - 1e-9).count();
        prop_assert_eq!(report.at_or_above, expected);
        prop_assert_eq!(report.flagged().count(), n - expected);
        prop_assert_eq!(report.total, n);
    }

    #[test]
    fn human_scores_normalize_by_ten(scores in prop::collection::vec(0u8..=10, 1..8)) {
        let pairs: Vec<(String, String)> = (0..scores.len()).map(|i| (format!("r{i}"), format!("c{i}"))).collect();
        let alignment = PairAlignment::new(pairs, AlignmentSource::ManualFile).unwrap();
        let mut csv = String::from("row_label,col_label,score\n");
        for (i, s) in scores.iter().enumerate() {
            csv.push_str(&format!("r{i},c{i},{s}\n"));
        }
        let set = ingest_human_scores_str(&csv, "mem", &alignment, "me").unwrap();
        for (h, s) in set.scores.iter().zip(&scores) {
            prop_assert!((h.normalized - f64::from(*s) / 10.0).abs() < 1e-12);
        }
        prop_assert_eq!(set.summary().at_maximum, scores.iter().filter(|&&s| s == 10).count());
    }

    #[test]
    fn matrix_csv_reads_back_within_rounding(
        values in prop::collection::vec(prop::collection::vec(-1.0f64..=1.0, 3), 1..6),
    ) {
        let rows: Vec<String> = (0..values.len()).map(|i| format!("row, {i}")).collect();
        let cols: Vec<String> = (0..3).map(|j| format!("\"c{j}\"")).collect();
        let m = SimilarityMatrix { row_labels: rows.clone(), col_labels: cols.clone(), values: values.clone(), embedder_id: "t".into() };
        let text = matrix_csv_string(&m);
        prop_assert_eq!(text.matches("\r\n").count(), values.len() + 1);
        let mut reader = csv::ReaderBuilder::new().has_headers(false).from_reader(text.as_bytes());
        let records: Vec<csv::StringRecord> = reader.records().map(Result::unwrap).collect();
        prop_assert_eq!(&records[0].iter().skip(1).map(str::to_string).collect::<Vec<_>>(), &cols);
        for (i, rec) in records.iter().skip(1).enumerate() {
            prop_assert_eq!(&rec[0], rows[i].as_str());
            for j in 0..3 {
                let v: f64 = rec[j + 1].parse().unwrap();
                prop_assert!((v - values[i][j]).abs() <= 5e-5);
            }
        }
    }

    #[test]
    fn theme_set_json_round_trips(
        names in prop::collection::vec("[A-Za-zà-ù ,:]{1,30}", 1..12),
        t in 0.0f64..=2.0,
        min in 1usize..20,
    ) {
        let themes = names
            .iter()
            .enumerate()
            .map(|(i, n)| Theme { name: n.clone(), description: format!("desc {i}"), code_indices: vec![i, i + 3] })
            .collect();
        let set = ThemeSet {
            run_id: "r".into(),
            temperature: t,
            min_themes: min,
            model: "m".into(),
            themes,
            raw_response_path: Some("raw/x.txt".into()),
            warnings: vec!["w".into()],
        };
        let back: ThemeSet = serde_json::from_str(&set.to_json_string()).unwrap();
        prop_assert_eq!(back, set);
    }
}
