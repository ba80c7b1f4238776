#![no_main]
use libfuzzer_sys::fuzz_target;
use robustcf::DatasetSchema;

fuzz_target!(|data: &[u8]| {
    let Ok(text) = std::str::from_utf8(data) else { return };
    let Ok(partial) = DatasetSchema::from_toml_str(text) else { return };
    let Ok(schema) = partial.into_complete() else { return };
    // A complete schema survives a write and re-read unchanged.
    let back = DatasetSchema::from_toml_str(&schema.to_toml_string())
        .and_then(|p| p.into_complete())
        .expect("written schema parses");
    assert_eq!(back, schema);
});
