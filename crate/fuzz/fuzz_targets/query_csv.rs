#![no_main]
use libfuzzer_sys::fuzz_target;
use robustcf::data::{read_queries, RangeMode};
use robustcf::DatasetSchema;

fuzz_target!(|data: &[u8]| {
    let schema = DatasetSchema::synthetic(2, 1);
    if let Ok(rows) = read_queries(data, &schema, RangeMode::Lenient) {
        for r in rows {
            assert_eq!(r.len(), schema.d());
            assert!(r.iter().all(|v| (0.0..=1.0).contains(v)));
        }
    }
});
