#![no_main]
use fractex::ingest::{parse_ratings, prepare, RatingFormat};
use libfuzzer_sys::fuzz_target;

fuzz_target!(|data: &[u8]| {
    for format in [RatingFormat::Tsv, RatingFormat::CsvHeader] {
        if let Ok(events) = parse_ratings(data, format) {
            if let Ok(split) = prepare(events) {
                assert_eq!(split.test.nnz(), split.user_index.len());
                assert_eq!(split.train.shape(), split.test.shape());
            }
        }
    }
});
