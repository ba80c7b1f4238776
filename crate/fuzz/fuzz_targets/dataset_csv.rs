#![no_main]
use libfuzzer_sys::fuzz_target;
use robustcf::data::{LoadOptions, RangeMode};
use robustcf::{Dataset, DatasetSchema};

const SCHEMA: &str = r#"
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
"#;

fuzz_target!(|data: &[u8]| {
    let schema = DatasetSchema::from_toml_str(SCHEMA).unwrap();
    for range_mode in [RangeMode::Strict, RangeMode::Lenient] {
        let options = LoadOptions { range_mode, positive_label: None };
        if let Ok(d) = Dataset::from_reader(data, schema.clone(), &options) {
            assert!(d.x.iter().all(|v| (0.0..=1.0).contains(v)));
            assert_eq!(d.x.len(), d.n() * d.d());
        }
    }
});
