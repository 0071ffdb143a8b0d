use proptest::prelude::*;

use super::*;

fn close(a: f64, b: f64, tol: f64) -> bool {
    (a - b).abs() <= tol
}

/// Textbook single-pass Pearson, kept independent of the two-pass version.
fn oracle_pearson(x: &[f64], y: &[f64]) -> f64 {
    let n = x.len() as f64;
    let (sx, sy) = (x.iter().sum::<f64>(), y.iter().sum::<f64>());
    let sxy: f64 = x.iter().zip(y).map(|(a, b)| a * b).sum();
    let sxx: f64 = x.iter().map(|a| a * a).sum();
    let syy: f64 = y.iter().map(|b| b * b).sum();
    (n * sxy - sx * sy) / ((n * sxx - sx * sx).sqrt() * (n * syy - sy * sy).sqrt())
}

fn numeric_table(cols: &[&[f64]]) -> ResultTable {
    ResultTable::new(
        "t",
        cols.iter()
            .enumerate()
            .map(|(i, c)| Column::numeric(format!("v{i}"), c.iter().copied()))
            .collect(),
    )
    .unwrap()
}

#[test]
fn fixed_vector_statistics() {
    let t = numeric_table(&[&[2.0, 4.0, 4.0, 4.0, 5.0, 5.0, 7.0, 9.0]]);
    let p = &profile(&t).unwrap()[0];
    let s = p.numeric().unwrap();
    assert_eq!((s.min, s.max, s.mean, s.std), (2.0, 9.0, 5.0, 2.0));
    assert_eq!(p.missing_count, 0);
}

#[test]
fn constant_and_categorical_profiles() {
    let t = ResultTable::new(
        "t",
        vec![
            Column::numeric("c", [3.25; 7]),
            Column::text("state", ["on", "off", "on"].iter().copied().chain(["", "", "", ""]).map(String::from)),
        ],
    )
    .unwrap();
    let mut t = t;
    t.column_mut("state").unwrap().values[3..].fill(Cell::Missing);
    let ps = profile(&t).unwrap();
    let c = ps[0].numeric().unwrap();
    assert_eq!((c.min, c.max, c.mean, c.std), (3.25, 3.25, 3.25, 0.0));
    let cat = ps[1].categorical().unwrap();
    assert_eq!(cat.distinct_count, 2);
    assert_eq!(cat.frequencies["on"], 2);
    assert_eq!(cat.frequencies["off"], 1);
    assert_eq!(ps[1].missing_count, 4);
    assert!(matches!(
        profile(&ResultTable::new("e", vec![Column::numeric("x", [])]).unwrap()),
        Err(AnalyticsError::EmptyTable)
    ));
}

#[test]
fn correlation_examples() {
    let m = correlations(&numeric_table(&[&[1.0, 2.0, 3.0], &[2.0, 4.0, 6.0], &[3.0, 2.0, 1.0]])).unwrap();
    assert!(close(m.get(0, 1).unwrap(), 1.0, 1e-12));
    assert!(close(m.get(0, 2).unwrap(), -1.0, 1e-12));
    let m = correlations(&numeric_table(&[&[1.0, 2.0, 3.0, 4.0], &[1.0, 3.0, 2.0, 4.0]])).unwrap();
    assert!(close(m.get(1, 0).unwrap(), 0.8, 1e-12));
    let m = correlations(&numeric_table(&[&[1.0, 2.0, 3.0], &[5.0, 5.0, 5.0]])).unwrap();
    assert_eq!(m.get(0, 1), None);
    assert!(matches!(
        correlations(&numeric_table(&[&[1.0, 2.0]])),
        Err(AnalyticsError::NotEnoughNumericColumns(1))
    ));
}

#[test]
fn correlation_uses_pairwise_complete_rows() {
    let mut t = numeric_table(&[&[1.0, 2.0, 3.0, 4.0, 100.0], &[1.0, 3.0, 2.0, 4.0, 0.0]]);
    t.column_mut("v1").unwrap().values[4] = Cell::Missing;
    let m = correlations(&t).unwrap();
    assert!(close(m.get(0, 1).unwrap(), 0.8, 1e-12));
    assert_eq!(m.entries[0].pairs, 4);
}

#[test]
fn color_anchors_and_midpoint() {
    assert_eq!(color_for(1.0).unwrap(), GREEN);
    assert_eq!(color_for(0.0).unwrap(), YELLOW);
    assert_eq!(color_for(-1.0).unwrap(), RED);
    let mid = color_for(-0.5).unwrap();
    assert_eq!(
        (mid.r, mid.g, mid.b),
        ((RED.r + YELLOW.r) / 2.0, (RED.g + YELLOW.g) / 2.0, (RED.b + YELLOW.b) / 2.0)
    );
    assert_eq!(GREEN.to_hex(), "#1a9850");
    assert!(matches!(color_for(1.01), Err(AnalyticsError::OutOfRange(_))));
    assert!(color_for(f64::NAN).is_err());
}

#[test]
fn classification_examples() {
    let t = Thresholds::new(0.7, 0.4).unwrap();
    assert_eq!(classify_correlation(0.9, &t), CorrelationClass::Good);
    assert_eq!(classify_correlation(-0.5, &t), CorrelationClass::Moderate);
    assert_eq!(classify_correlation(0.1, &t), CorrelationClass::Poor);
    assert_eq!(classify_correlation(0.7, &t), CorrelationClass::Good);
    for (g, m) in [(0.4, 0.7), (0.5, 0.5), (1.1, 0.3), (0.5, 0.0)] {
        assert!(Thresholds::new(g, m).is_err(), "{g} {m}");
    }
    assert!(Thresholds::new(1.0, 0.999).is_ok());
}

fn run(table: &ResultTable, actions: Vec<Action>) -> Result<TransformOutcome, AnalyticsError> {
    apply_transforms(
        table,
        &TransformationProfile {
            name: "p".into(),
            actions,
            thresholds: Thresholds::default(),
            bounds: VariableBounds::default(),
        },
    )
}

#[test]
fn transform_examples() {
    let t = numeric_table(&[&[2.0, 4.0, 4.0, 4.0, 5.0, 5.0, 7.0, 9.0]]);
    let out = run(&t, vec![Action::Scale { var: "v0".into(), by: Scaling::Standardize }]).unwrap();
    let col: Vec<f64> = out.table.column("v0").unwrap().numbers().collect();
    let expected: Vec<f64> = [2.0, 4.0, 4.0, 4.0, 5.0, 5.0, 7.0, 9.0].iter().map(|x| (x - 5.0) / 2.0).collect();
    assert_eq!(col, expected);
    let s = numeric_stats(&col).unwrap();
    assert!(close(s.mean, 0.0, 1e-15) && close(s.std, 1.0, 1e-15));

    let t = numeric_table(&[&[1.0, 2.0]]);
    let out = run(&t, vec![Action::Scale { var: "v0".into(), by: Scaling::Factor(3.0) }]).unwrap();
    assert_eq!(out.table.column("v0").unwrap().numbers().collect::<Vec<_>>(), vec![3.0, 6.0]);

    let t = ResultTable::new("t", vec![Column::numeric("x", [1.0]), Column::numeric("y", [2.0])]).unwrap();
    let out = run(&t, vec![Action::Formula { name: "z".into(), expression: "x + y".into() }]).unwrap();
    assert_eq!(out.table.column("z").unwrap().values, vec![Cell::Num(3.0)]);
    assert_eq!(out.table.columns().len(), 3);
}

#[test]
fn transform_errors_and_flags() {
    let t = ResultTable::new(
        "t",
        vec![Column::numeric("x", [1.0, 2.0, 3.0]), Column::numeric("y", [1.0, 0.0, 2.0]), Column::text("s", ["a", "b", "c"])],
    )
    .unwrap();
    let out = run(&t, vec![Action::Formula { name: "q".into(), expression: "x / y".into() }]).unwrap();
    assert_eq!(out.table.column("q").unwrap().values, vec![Cell::Num(1.0), Cell::Missing, Cell::Num(1.5)]);
    assert_eq!(out.division_by_zero_rows.into_iter().collect::<Vec<_>>(), vec![1]);
    assert!(matches!(
        run(&t, vec![Action::Formula { name: "q".into(), expression: "x + w".into() }]),
        Err(AnalyticsError::UnknownVariable(v)) if v == "w"
    ));
    assert!(matches!(
        run(&t, vec![Action::Formula { name: "q".into(), expression: "x +".into() }]),
        Err(AnalyticsError::FormulaParse { .. })
    ));
    assert!(matches!(
        run(&t, vec![Action::Scale { var: "s".into(), by: Scaling::Factor(2.0) }]),
        Err(AnalyticsError::NotNumeric(_))
    ));
    let out = run(&t, vec![Action::Summarize { var: "x".into(), stat: SummaryStat::Mean }]).unwrap();
    assert_eq!(out.table.column("x_mean").unwrap().values, vec![Cell::Num(2.0); 3]);
}

#[test]
fn transformation_profile_json_round_trip() {
    let p = TransformationProfile {
        name: "norm".into(),
        actions: vec![
            Action::Scale { var: "pr".into(), by: Scaling::Standardize },
            Action::Scale { var: "tas".into(), by: Scaling::Factor(0.5) },
            Action::Summarize { var: "tas".into(), stat: SummaryStat::Max },
            Action::Formula { name: "ratio".into(), expression: "pr ÷ tas".into() },
        ],
        thresholds: Thresholds::new(0.8, 0.3).unwrap(),
        bounds: VariableBounds { max_std: Some(4.0), ..Default::default() },
    };
    let json = serde_json::to_string(&p).unwrap();
    assert_eq!(serde_json::from_str::<TransformationProfile>(&json).unwrap(), p);
}

#[test]
fn inference_rules() {
    let csv = "when,lat,lon,temp,label,mostly\n\
               2040-01-01,10.5,-20,1.5,a,1\n\
               2040-02-01,11,-21,2,b,2\n\
               2040-03-01T00:00:00Z,,-22,,a,3\n";
    let t = ResultTable::from_csv("x", csv.as_bytes()).unwrap();
    let kinds: Vec<ColumnType> = t.columns().iter().map(|c| c.kind).collect();
    assert_eq!(
        kinds,
        vec![
            ColumnType::Temporal,
            ColumnType::Geospatial,
            ColumnType::Geospatial,
            ColumnType::Numeric,
            ColumnType::Categorical,
            ColumnType::Numeric
        ]
    );
    assert_eq!(t.column("temp").unwrap().missing_count(), 1);
    // 19 of 20 numeric is exactly the inference share.
    let mut rows = vec!["v".to_string()];
    rows.extend((0..19).map(|i| i.to_string()));
    rows.push("n/a".into());
    let t = ResultTable::from_csv("x", rows.join("\n").as_bytes()).unwrap();
    assert_eq!(t.columns()[0].kind, ColumnType::Numeric);
    rows[1] = "junk".into();
    let t = ResultTable::from_csv("x", rows.join("\n").as_bytes()).unwrap();
    assert_eq!(t.columns()[0].kind, ColumnType::Categorical);
    // Out-of-range latitude means the pair is not geospatial.
    let t = ResultTable::from_csv("x", b"lat,lon\n95,0\n1,2\n").unwrap();
    assert_eq!(t.columns()[0].kind, ColumnType::Numeric);
}

#[test]
fn csv_and_manifest_round_trip() {
    let csv = "region,year,pr\nn1,2040,1.25\n\"s,2\",2041,\n";
    let t = ResultTable::from_csv("summary", csv.as_bytes()).unwrap();
    let bytes = t.to_csv();
    assert_eq!(String::from_utf8(bytes.clone()).unwrap(), csv);
    let manifest: TableManifest = serde_json::from_slice(&t.to_manifest_json()).unwrap();
    assert_eq!(manifest.row_count, 2);
    assert_eq!(manifest.missing, "");
    assert_eq!(ResultTable::from_csv_with_manifest(&bytes, &manifest).unwrap(), t);
    let mut wrong = manifest.clone();
    wrong.row_count = 3;
    assert!(ResultTable::from_csv_with_manifest(&bytes, &wrong).is_err());
    assert!(ResultTable::from_csv("d", b"a,a\n1,2\n").is_err());
}

#[test]
fn recommendations_follow_mapping() {
    let t = ResultTable::from_csv(
        "r",
        b"a,b,c,d,cat,when\n1,2,3,4,x,2040-01-01\n2,3,1,4,y,2040-02-01\n3,1,2,5,x,2040-03-01\n",
    )
    .unwrap();
    let ps = profile(&t).unwrap();
    let sel = |v: &[&str]| v.iter().map(|s| s.to_string()).collect::<Vec<_>>();
    let first = |s: Option<&[String]>| recommend(&ps, s)[0].kind;
    assert_eq!(first(Some(&sel(&["a", "b"]))), Visualization::ScatterPlot);
    assert_eq!(first(Some(&sel(&["cat"]))), Visualization::BarChart);
    assert_eq!(first(Some(&sel(&["cat", "a"]))), Visualization::BoxPlot);
    assert_eq!(first(Some(&sel(&["when", "a"]))), Visualization::LineChart);
    let all = recommend(&ps, None);
    let idx = all.iter().position(|r| r.kind == Visualization::ParallelCoordinates).unwrap();
    assert!(idx < 3);
    assert_eq!(all.last().unwrap().kind, Visualization::Tabular);

    let geo = ResultTable::from_csv("g", b"lat,lon,pr\n1,2,3\n4,5,6\n").unwrap();
    let rec = recommend(&profile(&geo).unwrap(), None);
    assert_eq!(rec[0].kind, Visualization::GeospatialMap);
}

#[test]
fn sampling_caps_rows_deterministically() {
    let t = numeric_table(&[&(0..1000).map(f64::from).collect::<Vec<_>>()]);
    let (s, n) = sample_table(&t, 100, 7);
    assert_eq!(n, 100);
    assert_eq!(s.row_count(), 100);
    assert_eq!(sample_table(&t, 100, 7).0, s);
    let rows = sample_indices(1000, 100, 7);
    assert!(rows.windows(2).all(|w| w[0] < w[1]));
    assert_eq!(sample_table(&t, 5000, 7).1, 1000);
}

#[test]
fn variable_flags() {
    let t = ResultTable::new(
        "t",
        vec![Column::numeric("wide", [0.0, 100.0]), Column::text("id", ["a", "b"])],
    )
    .unwrap();
    let flags = flag_variables(
        &profile(&t).unwrap(),
        &VariableBounds {
            max_std: Some(10.0),
            min_unique_factor: None,
            max_unique_factor: Some(0.5),
        },
    );
    assert_eq!(flags.len(), 2);
}

fn table_strategy() -> impl Strategy<Value = Vec<Vec<f64>>> {
    (2usize..=50, 2usize..=8).prop_flat_map(|(rows, cols)| {
        proptest::collection::vec(proptest::collection::vec(-1e3f64..1e3, rows), cols)
    })
}

proptest! {
    #[test]
    fn pearson_matches_oracle(cols in table_strategy()) {
        let refs: Vec<&[f64]> = cols.iter().map(|c| c.as_slice()).collect();
        let m = correlations(&numeric_table(&refs)).unwrap();
        let n = cols.len();
        prop_assert_eq!(m.entries.len(), n * (n - 1) / 2);
        for i in 0..n {
            for j in 0..n {
                if i == j { continue; }
                let r = m.get(i, j).unwrap();
                prop_assert!(r.abs() <= 1.0 + 1e-12);
                prop_assert!(close(r, oracle_pearson(&cols[i], &cols[j]), 1e-9));
                prop_assert_eq!(m.get(i, j), m.get(j, i));
            }
        }
    }

    #[test]
    fn pearson_is_scale_invariant(cols in table_strategy(), a in 1e-3f64..1e3, b in -1e3f64..1e3, which in 0usize..8) {
        let refs: Vec<&[f64]> = cols.iter().map(|c| c.as_slice()).collect();
        let before = correlations(&numeric_table(&refs)).unwrap();
        let mut scaled = cols.clone();
        let k = which % scaled.len();
        for v in &mut scaled[k] { *v = a * *v + b; }
        let refs: Vec<&[f64]> = scaled.iter().map(|c| c.as_slice()).collect();
        let after = correlations(&numeric_table(&refs)).unwrap();
        let t = Thresholds::default();
        for (x, y) in before.entries.iter().zip(&after.entries) {
            let (x, y) = (x.r.unwrap(), y.r.unwrap());
            prop_assert!(close(x, y, 1e-9));
            // Class may flip only when r sits within 1e-9 of a threshold.
            let near = [t.good, t.moderate].iter().any(|th| (x.abs() - th).abs() < 1e-9);
            prop_assert!(near || classify_correlation(x, &t) == classify_correlation(y, &t));
        }
    }

    #[test]
    fn profile_invariants(values in proptest::collection::vec(proptest::option::of(-1e6f64..1e6), 1..60),
                          labels in proptest::collection::vec(proptest::option::of("[abc]"), 1..60)) {
        let n = values.len().min(labels.len());
        let num = Column {
            name: "x".into(),
            kind: ColumnType::Numeric,
            values: values[..n].iter().map(|v| v.map_or(Cell::Missing, Cell::Num)).collect(),
        };
        let cat = Column {
            name: "s".into(),
            kind: ColumnType::Categorical,
            values: labels[..n].iter().map(|v| v.clone().map_or(Cell::Missing, Cell::Text)).collect(),
        };
        let t = ResultTable::new("t", vec![num, cat]).unwrap();
        let ps = profile(&t).unwrap();
        if let Some(s) = ps[0].numeric() {
            prop_assert!(s.min <= s.mean && s.mean <= s.max);
            prop_assert!(s.std >= 0.0);
        }
        let c = ps[1].categorical().unwrap();
        prop_assert_eq!(c.frequencies.values().sum::<usize>(), n - ps[1].missing_count);
    }

    #[test]
    fn inference_is_permutation_invariant(
        cells in proptest::collection::vec(prop_oneof![
            (-100i32..100).prop_map(|v| v.to_string()),
            Just(String::new()),
            Just("x".to_string()),
            Just("2041-03-04".to_string()),
        ], 1..40),
        seed in any::<u64>(),
    ) {
        use rand::seq::SliceRandom;
        use rand::SeedableRng;
        let headers = vec!["c".to_string()];
        let before = infer_types(&headers, &[cells.clone()]);
        let mut shuffled = cells;
        shuffled.shuffle(&mut rand_chacha::ChaCha8Rng::seed_from_u64(seed));
        prop_assert_eq!(before, infer_types(&headers, &[shuffled]));
    }

    #[test]
    fn replay_is_byte_identical(cols in table_strategy(), f in 0.1f64..10.0) {
        let refs: Vec<&[f64]> = cols.iter().map(|c| c.as_slice()).collect();
        let t = numeric_table(&refs);
        let actions = vec![
            Action::Scale { var: "v0".into(), by: Scaling::Factor(f) },
            Action::Scale { var: "v1".into(), by: Scaling::Standardize },
            Action::Summarize { var: "v0".into(), stat: SummaryStat::Std },
            Action::Formula { name: "z".into(), expression: "(v0 - v1) / v1 * -2".into() },
        ];
        let a = run(&t, actions.clone()).unwrap();
        let b = run(&t, actions).unwrap();
        prop_assert_eq!(a.table.to_csv(), b.table.to_csv());
        prop_assert_eq!(a.table.to_manifest_json(), b.table.to_manifest_json());
    }
}
