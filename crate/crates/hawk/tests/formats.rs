use hawk::csvio::{load_dataset, read_csv, save_dataset, write_csv, CsvOptions};
use hawk_core::storage::{create_table, gen_star_schema, ColumnKind, ColumnTable, Value};
use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn schema() -> Vec<(String, ColumnKind)> {
    vec![
        ("id".to_string(), ColumnKind::Int64),
        ("price".to_string(), ColumnKind::Float64),
        ("label".to_string(), ColumnKind::String),
    ]
}

fn round_trip(t: &ColumnTable) -> ColumnTable {
    let mut buf = Vec::new();
    write_csv(t, &mut buf).unwrap();
    let text = String::from_utf8(buf).unwrap();
    let body = text.split_once('\n').unwrap().1;
    read_csv(
        body.as_bytes(),
        t.name(),
        &t.schema(),
        CsvOptions {
            header: false,
            ..CsvOptions::default()
        },
    )
    .unwrap()
}

#[test]
fn thousand_rows_survive_a_round_trip() {
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let words = ["plain", "with,comma", "with \"quotes\"", "", "ÄSIA"];
    let rows: Vec<Vec<Value>> = (0..1000)
        .map(|i| {
            vec![
                Value::Int(rng.gen_range(i64::MIN..i64::MAX)),
                Value::Float(rng.gen::<f64>() * 1e6 - 5e5),
                Value::Str(format!("{}{}", words[i % words.len()], i % 7)),
            ]
        })
        .collect();
    let t = create_table("items", &schema(), rows.clone()).unwrap();
    let back = round_trip(&t);
    assert_eq!(back.rows().collect::<Vec<_>>(), rows);
    assert_eq!(back, t);
}

#[test]
fn generated_dataset_round_trips_through_a_directory() {
    let dir = tempfile::tempdir().unwrap();
    let tables = gen_star_schema(500, 5, 40);
    save_dataset(dir.path(), &tables).unwrap();
    let mut back = load_dataset(dir.path()).unwrap();
    back.sort_by(|a, b| a.name().cmp(b.name()));
    let mut want = tables;
    want.sort_by(|a, b| a.name().cmp(b.name()));
    assert_eq!(back.len(), want.len());
    for (a, b) in back.iter().zip(&want) {
        assert_eq!(a.name(), b.name());
        assert_eq!(a.schema(), b.schema());
        assert_eq!(a.rows().collect::<Vec<_>>(), b.rows().collect::<Vec<_>>());
    }
}

proptest! {
    #[test]
    fn arbitrary_rows_round_trip(
        rows in proptest::collection::vec((any::<i64>(), any::<f64>().prop_filter("finite", |f| f.is_finite()), "[ -~]{0,12}"), 0..40)
    ) {
        let rows: Vec<Vec<Value>> = rows
            .into_iter()
            .map(|(i, f, s)| vec![Value::Int(i), Value::Float(f), Value::Str(s)])
            .collect();
        let t = create_table("t", &schema(), rows.clone()).unwrap();
        prop_assert_eq!(round_trip(&t).rows().collect::<Vec<_>>(), rows);
    }
}
