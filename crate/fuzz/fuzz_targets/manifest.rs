#![no_main]
use fractex::expander::ExpansionManifest;
use libfuzzer_sys::fuzz_target;

fuzz_target!(|data: &[u8]| {
    let Ok(text) = std::str::from_utf8(data) else {
        return;
    };
    if let Ok(m) = ExpansionManifest::from_json(text) {
        assert_eq!(ExpansionManifest::from_json(&m.to_json()).unwrap(), m);
    }
});
