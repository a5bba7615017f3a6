use fird::data::{Column, ColumnData, RawTable};
use fird::synth::{generate, write_dataset, GenConfig};
use fird::{encode, load_csv, FeatureSchema, FeatureSpec};
use proptest::prelude::*;

fn table(cols: &[Vec<String>]) -> (RawTable, FeatureSchema) {
    let columns = cols
        .iter()
        .enumerate()
        .map(|(j, c)| Column {
            name: format!("c{j}"),
            data: ColumnData::Categorical(c.clone()),
        })
        .collect();
    let schema = FeatureSchema::new(
        (0..cols.len())
            .map(|j| FeatureSpec::categorical(format!("c{j}")))
            .collect(),
        None,
    )
    .unwrap();
    (RawTable::new(columns).unwrap(), schema)
}

fn columns() -> impl Strategy<Value = Vec<Vec<String>>> {
    (1usize..20, 1usize..5).prop_flat_map(|(n, m)| {
        prop::collection::vec(prop::collection::vec("[a-e]{1,2}|x y|\"q\"", n), m)
    })
}

proptest! {
    #![proptest_config(ProptestConfig { cases: 64, failure_persistence: None, ..ProptestConfig::default() })]

    #[test]
    fn decode_inverts_encode(cols in columns()) {
        let (t, schema) = table(&cols);
        let data = encode(&t, &schema).unwrap();
        for (m, col) in cols.iter().enumerate() {
            for (n, cell) in col.iter().enumerate() {
                prop_assert_eq!(data.decode(n, m), Some(cell.as_str()));
            }
        }
        prop_assert_eq!(encode(&t, &schema).unwrap(), data);
    }

    #[test]
    fn csv_round_trip_preserves_cells(cols in columns()) {
        let (t, schema) = table(&cols);
        let data = encode(&t, &schema).unwrap();
        let dir = tempfile::tempdir().unwrap();
        let (csv, sch) = (dir.path().join("d.csv"), dir.path().join("s.json"));
        write_dataset(&data, &csv, &sch).unwrap();
        let schema2 = FeatureSchema::from_json_file(&sch).unwrap();
        let back = encode(&load_csv(&csv, &schema2).unwrap(), &schema2).unwrap();
        prop_assert_eq!(back, data);
    }
}

#[test]
fn generated_dataset_survives_csv() {
    let (data, _) = generate(&GenConfig::recovery(300, 6, 9, 3, 2, 1)).unwrap();
    let dir = tempfile::tempdir().unwrap();
    let (csv, sch) = (dir.path().join("d.csv"), dir.path().join("s.json"));
    write_dataset(&data, &csv, &sch).unwrap();
    let schema = FeatureSchema::from_json_file(&sch).unwrap();
    let back = encode(&load_csv(&csv, &schema).unwrap(), &schema).unwrap();
    for n in 0..data.n_rows() {
        for m in 0..data.n_features() {
            assert_eq!(back.decode(n, m), data.decode(n, m));
        }
    }
}
