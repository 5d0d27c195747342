#![no_main]
use fractex::spectral::read_spectrum;
use fractex::stats::{read_rank_table, write_rank_table};
use libfuzzer_sys::fuzz_target;

fuzz_target!(|data: &[u8]| {
    if let Ok(values) = read_rank_table(data) {
        let mut text = Vec::new();
        write_rank_table("value", &values, &mut text).unwrap();
        assert_eq!(read_rank_table(text.as_slice()).unwrap(), values);
    }
    let _ = read_spectrum(data);
});
