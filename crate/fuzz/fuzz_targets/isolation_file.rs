#![no_main]
use libfuzzer_sys::fuzz_target;
use robustcf::plausibility::{deserialize_isolation_forest, serialize_isolation_forest};

fuzz_target!(|data: &[u8]| {
    let Ok(text) = std::str::from_utf8(data) else { return };
    let Ok(iso) = deserialize_isolation_forest(text) else { return };
    let x = vec![0.5; iso.n_features];
    iso.anomaly_score(&x).expect("dimension matches");
    assert_eq!(deserialize_isolation_forest(&serialize_isolation_forest(&iso)).unwrap(), iso);
});
