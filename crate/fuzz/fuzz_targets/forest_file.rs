#![no_main]
use libfuzzer_sys::fuzz_target;
use robustcf::ensemble::{deserialize_forest, serialize_forest};

fuzz_target!(|data: &[u8]| {
    let Ok(text) = std::str::from_utf8(data) else { return };
    let Ok(forest) = deserialize_forest(text) else { return };
    // Accepted forests are well formed enough to predict and round-trip.
    let x = vec![0.5; forest.n_features];
    forest.predict_votes(&x).expect("dimension matches");
    assert_eq!(deserialize_forest(&serialize_forest(&forest)).unwrap(), forest);
});
