#![no_main]
use fractex::ingest::read_index_map;
use libfuzzer_sys::fuzz_target;

fuzz_target!(|data: &[u8]| {
    let _ = read_index_map(data);
});
