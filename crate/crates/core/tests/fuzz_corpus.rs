//! Replays the fuzz corpus seeds through the parsers the fuzz targets drive.

use std::path::PathBuf;

use robustcf::data::{read_queries, LoadOptions, RangeMode};
use robustcf::ensemble::{deserialize_forest, serialize_forest};
use robustcf::harness::ExperimentConfig;
use robustcf::plausibility::{deserialize_isolation_forest, serialize_isolation_forest};
use robustcf::{Dataset, DatasetSchema};

fn seeds(target: &str) -> Vec<(String, String)> {
    let dir = PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("../../fuzz/corpus").join(target);
    let mut out: Vec<(String, String)> = std::fs::read_dir(&dir)
        .unwrap_or_else(|e| panic!("{}: {e}", dir.display()))
        .map(|e| {
            let path = e.unwrap().path();
            let name = path.file_name().unwrap().to_string_lossy().into_owned();
            (name, std::fs::read_to_string(&path).unwrap())
        })
        .collect();
    out.sort();
    assert!(!out.is_empty(), "no seeds for {target}");
    out
}

#[test]
fn schema_seeds_parse() {
    for (name, text) in seeds("schema") {
        let partial = DatasetSchema::from_toml_str(&text).unwrap_or_else(|e| panic!("{name}: {e}"));
        if let Ok(schema) = partial.into_complete() {
            let back = DatasetSchema::from_toml_str(&schema.to_toml_string())
                .unwrap()
                .into_complete()
                .unwrap();
            assert_eq!(back, schema, "{name}");
        }
    }
}

#[test]
fn dataset_seeds_load_or_fail_cleanly() {
    let schema = DatasetSchema::from_toml_str(
        r#"
target = "y"
[[feature]]
name = "age"
kind = "discrete"
[[feature]]
name = "income"
kind = "continuous"
range = [0.0, 100.0]
[[feature]]
name = "owner"
kind = "binary"
[[feature]]
name = "red"
kind = "categorical"
group = "colour"
[[feature]]
name = "blue"
kind = "categorical"
group = "colour"
"#,
    )
    .unwrap();
    for (name, text) in seeds("dataset_csv") {
        let loaded = Dataset::from_reader(text.as_bytes(), schema.clone(), &LoadOptions::default());
        assert_eq!(loaded.is_ok(), name == "valid.csv", "{name}");
    }
}

#[test]
fn query_seeds_read() {
    let schema = DatasetSchema::synthetic(2, 1);
    for (name, text) in seeds("query_csv") {
        let rows = read_queries(text.as_bytes(), &schema, RangeMode::Lenient)
            .unwrap_or_else(|e| panic!("{name}: {e}"));
        assert!(rows.iter().flatten().all(|v| (0.0..=1.0).contains(v)));
    }
}

#[test]
fn model_file_seeds_round_trip() {
    for (name, text) in seeds("forest_file") {
        let forest = deserialize_forest(&text).unwrap_or_else(|e| panic!("{name}: {e}"));
        assert_eq!(deserialize_forest(&serialize_forest(&forest)).unwrap(), forest);
    }
    for (name, text) in seeds("isolation_file") {
        let iso = deserialize_isolation_forest(&text).unwrap_or_else(|e| panic!("{name}: {e}"));
        assert_eq!(deserialize_isolation_forest(&serialize_isolation_forest(&iso)).unwrap(), iso);
    }
}

#[test]
fn experiment_config_seeds_validate() {
    for (name, text) in seeds("experiment_config") {
        let config = ExperimentConfig::from_toml_str(&text).unwrap_or_else(|e| panic!("{name}: {e}"));
        assert!(!config.settings().is_empty());
    }
}
