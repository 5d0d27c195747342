#![no_main]
use fractex::SparseBinaryMatrix;
use libfuzzer_sys::fuzz_target;

/// Header shapes above this allocate more row offsets than the fuzzer's RSS limit allows.
const MAX_ROWS: usize = 1 << 24;

fn header_rows(data: &[u8]) -> Option<usize> {
    let text = std::str::from_utf8(data).ok()?;
    let line = text.lines().find(|l| !l.trim().is_empty())?;
    line.split('\t').next()?.parse().ok()
}

fuzz_target!(|data: &[u8]| {
    if header_rows(data).is_some_and(|r| r > MAX_ROWS) {
        return;
    }
    let Ok(m) = SparseBinaryMatrix::read_triplets(data) else {
        return;
    };
    let mut text = Vec::new();
    m.write_triplets(&mut text).unwrap();
    assert_eq!(SparseBinaryMatrix::read_triplets(text.as_slice()).unwrap(), m);
});
