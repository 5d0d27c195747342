mod common;

use std::collections::{BTreeMap, BTreeSet};

use rand::Rng;

use common::*;
use fractex::ingest::{parse_ratings, prepare, read_index_map, RatingFormat};
use fractex::reducer::{build_reduced, RescaleMode};
use fractex::spectral::{inv_sqrt_sym, truncated_svd, SvdParams};
use fractex::{DenseSmallMatrix, SparseBinaryMatrix};

/// Rows fall into `groups` communities, each dense on its own column band.
fn planted(seed: u64, m: usize, n: usize, groups: usize) -> SparseBinaryMatrix {
    let mut rng = rng(seed);
    let mut pairs = Vec::new();
    for r in 0..m {
        for c in 0..n {
            let (g, h) = (r * groups / m, c * groups / n);
            let p = if g == h { 0.9 - 0.1 * g as f64 } else { 0.03 };
            if rng.random_bool(p) {
                pairs.push((r, c));
            }
        }
    }
    SparseBinaryMatrix::from_pairs(pairs, m, n).unwrap()
}

#[test]
fn truncated_svd_matches_jacobi_oracle() {
    let r = planted(1, 90, 70, 5);
    let oracle = jacobi_singular_values(&binary_to_dense(&r));
    assert!(oracle[4] / oracle[5] >= 1.05, "no spectral gap: {oracle:?}");
    let svd = truncated_svd(&r, 5, &SvdParams::with_seed(3)).unwrap();
    for (t, (got, want)) in svd.sigma.iter().zip(&oracle).enumerate() {
        assert!((got - want).abs() <= 1e-6 * want, "sigma_{t}: {got} vs {want}");
    }
    // Singular vectors satisfy M v = sigma u.
    let d = r.to_dense();
    for t in 0..5 {
        let v: Vec<f64> = svd.v.row(t).to_vec();
        let mv = r.matvec(&v).unwrap();
        for (i, x) in mv.iter().enumerate() {
            assert!(
                (x - svd.sigma[t] * svd.u.get(i, t)).abs() <= 1e-6 * svd.sigma[0],
                "vector {t}"
            );
        }
        assert_eq!(d.n_rows(), mv.len());
    }
}

#[test]
fn reduced_matrix_keeps_the_leading_spectrum() {
    let r = planted(2, 120, 150, 6);
    let oracle = jacobi_singular_values(&binary_to_dense(&r));
    let red = build_reduced(&r, 4, 6, 9, RescaleMode::UnitInterval).unwrap();
    let got = red.unscaled().unwrap().singular_values();
    assert_eq!(got.len(), 4);
    for t in 0..4 {
        assert!(
            (got[t] - oracle[t]).abs() <= 1e-6 * oracle[t],
            "{t}: {} vs {}",
            got[t],
            oracle[t]
        );
    }
    let (u, v) = red.factors().unwrap();
    let utu = u.gram_columns();
    let vvt = v.gram_rows();
    for i in 0..4 {
        for j in 0..4 {
            let id = if i == j { 1.0 } else { 0.0 };
            assert!((utu.get(i, j) - id).abs() <= 1e-8);
            assert!((vvt.get(i, j) - id).abs() <= 1e-8);
        }
    }
    assert!(red.data().data().iter().all(|x| (0.0..=1.0).contains(x)));
}

#[test]
fn reduction_rejects_non_shrinking_shapes() {
    let r = planted(3, 20, 30, 2);
    assert!(build_reduced(&r, 20, 4, 0, RescaleMode::UnitInterval).is_err());
    assert!(build_reduced(&r, 4, 31, 0, RescaleMode::UnitInterval).is_err());
    assert!(build_reduced(&r, 0, 4, 0, RescaleMode::UnitInterval).is_err());
}

#[test]
fn inverse_square_root_of_a_gram_matrix() {
    let mut rng = rng(4);
    let w = DenseSmallMatrix::from_fn(9, 5, |_, _| rng.random_range(-1.0..1.0));
    let s = w.gram_columns();
    let x = inv_sqrt_sym(&s).unwrap();
    // X S X = I
    let xsx = x.matmul(&s).unwrap().matmul(&x).unwrap();
    assert!(xsx.max_abs_diff(&DenseSmallMatrix::identity(5)).unwrap() <= 1e-8);
}

/// Ratings with a known outcome: user `u<k>` rates items at increasing times.
fn synthetic_ratings(seed: u64, users: usize) -> (String, BTreeMap<String, Vec<(String, u64)>>) {
    let mut rng = rng(seed);
    let mut text = String::new();
    let mut truth: BTreeMap<String, Vec<(String, u64)>> = BTreeMap::new();
    let mut lines = Vec::new();
    for u in 0..users {
        let count = rng.random_range(1..8);
        let mut items = BTreeSet::new();
        while items.len() < count {
            items.insert(rng.random_range(0..40));
        }
        for item in items {
            let ts = rng.random_range(1_000..1_020);
            lines.push(format!("u{u}\ti{item}\t{}\t{ts}", rng.random_range(1..=5)));
            truth.entry(format!("u{u}")).or_default().push((format!("i{item}"), ts));
        }
    }
    // Interleave users so first-appearance order differs from id order.
    let mut order: Vec<usize> = (0..lines.len()).collect();
    for i in (1..order.len()).rev() {
        order.swap(i, rng.random_range(0..=i));
    }
    for i in order {
        text.push_str(&lines[i]);
        text.push('\n');
    }
    (text, truth)
}

#[test]
fn split_matches_recount_oracle() {
    let (text, truth) = synthetic_ratings(7, 60);
    let events = parse_ratings(text.as_bytes(), RatingFormat::Tsv).unwrap();
    let data = prepare(events).unwrap();

    let eligible: Vec<_> = truth
        .iter()
        .filter(|(_, items)| items.iter().map(|x| x.1).collect::<BTreeSet<_>>().len() >= 2)
        .collect();
    assert_eq!(data.user_index.len(), eligible.len());
    assert_eq!(data.test.nnz(), eligible.len());
    let total: usize = eligible.iter().map(|(_, items)| items.len()).sum();
    assert_eq!(data.train.nnz() + data.test.nnz(), total);

    for (user, items) in eligible {
        let row = data.user_index.get_index_of(user).unwrap();
        let latest = items.iter().map(|x| x.1).max().unwrap();
        let held: Vec<usize> = data.test.row(row).to_vec();
        assert_eq!(held.len(), 1);
        let held_item = &data.item_index[held[0]];
        let ts = items.iter().find(|x| &x.0 == held_item).unwrap().1;
        assert_eq!(ts, latest, "{user} held out a non-latest item");
        // Tie rule: the largest column index among the latest items.
        let tied_max = items
            .iter()
            .filter(|x| x.1 == latest)
            .map(|x| data.item_index.get_index_of(&x.0).unwrap())
            .max()
            .unwrap();
        assert_eq!(held[0], tied_max);
        assert!(!data.train.contains(row, held[0]));
    }
}

#[test]
fn single_rating_user_is_dropped_everywhere() {
    let text = "a\tx\t5\t10\na\ty\t3\t20\nlonely\tx\t4\t15\nb\tz\t1\t30\nb\tx\t2\t31\n";
    let data = prepare(parse_ratings(text.as_bytes(), RatingFormat::Tsv).unwrap()).unwrap();
    assert!(!data.user_index.contains("lonely"));
    assert_eq!(data.user_index.len(), 2);
    assert_eq!(data.train.nnz() + data.test.nnz(), 4);
}

#[test]
fn repeated_pair_does_not_count_as_two_timestamps() {
    let text = "a\tx\t5\t10\na\tx\t3\t20\nb\tx\t2\t1\nb\ty\t2\t2\n";
    let data = prepare(parse_ratings(text.as_bytes(), RatingFormat::Tsv).unwrap()).unwrap();
    assert_eq!(data.user_index.iter().collect::<Vec<_>>(), ["b"]);
}

#[test]
fn csv_with_header_parses_and_reports_bad_lines() {
    let text = "userId,movieId,rating,timestamp\n1,10,4.0,100\n1,11,3.5,200\n";
    assert_eq!(
        parse_ratings(text.as_bytes(), RatingFormat::CsvHeader).unwrap().len(),
        2
    );
    let bad = "userId,movieId,rating,timestamp\n1,10,4.0,100\n1,11,oops,200\n";
    let err = parse_ratings(bad.as_bytes(), RatingFormat::CsvHeader)
        .unwrap_err()
        .to_string();
    assert!(err.contains('3'), "{err}");
}

#[test]
fn split_files_round_trip() {
    let (text, _) = synthetic_ratings(8, 30);
    let data = prepare(parse_ratings(text.as_bytes(), RatingFormat::Tsv).unwrap()).unwrap();
    let dir = tempfile::tempdir().unwrap();
    data.write_to_dir(dir.path()).unwrap();
    let read = |name: &str| {
        SparseBinaryMatrix::read_triplets(std::io::BufReader::new(
            std::fs::File::open(dir.path().join(name)).unwrap(),
        ))
        .unwrap()
    };
    assert_eq!(read("train.tsv"), data.train);
    assert_eq!(read("test.tsv"), data.test);
    let map = std::fs::read(dir.path().join("index_map.tsv")).unwrap();
    let (users, items) = read_index_map(map.as_slice()).unwrap();
    assert_eq!(users, data.user_index);
    assert_eq!(items, data.item_index);
}
