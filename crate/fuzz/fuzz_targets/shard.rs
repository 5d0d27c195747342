#![no_main]
use fractex::expander::parse_shard;
use libfuzzer_sys::fuzz_target;

fuzz_target!(|data: &[u8]| {
    if let Ok(entries) = parse_shard(data) {
        for w in entries.windows(2) {
            assert!((w[0].row, w[0].col) < (w[1].row, w[1].col));
        }
    }
});
