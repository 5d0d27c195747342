#![no_main]
use fractex::reducer::ReducedMatrix;
use libfuzzer_sys::fuzz_target;

fuzz_target!(|data: &[u8]| {
    let Ok(r) = ReducedMatrix::read_table(data) else {
        return;
    };
    let mut text = Vec::new();
    r.write_table(&mut text).unwrap();
    let back = ReducedMatrix::read_table(text.as_slice()).unwrap();
    assert_eq!(back.data(), r.data());
    assert_eq!(back.rescale_mode(), r.rescale_mode());
    let _ = r.keep_probabilities();
});
