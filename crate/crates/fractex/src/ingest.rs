//! Ratings ingestion: parse, binarize, filter, and leave-last-out split.

use std::collections::HashSet;
use std::fs::File;
use std::io::{BufRead, BufWriter, Read, Write};
use std::path::Path;

use indexmap::IndexSet;

use crate::error::{Error, Result};
use crate::sparse::SparseBinaryMatrix;

/// One `(user, item, rating, timestamp)` record.
#[derive(Debug, Clone, PartialEq)]
pub struct RatingEvent {
    pub user_id: String,
    pub item_id: String,
    pub rating: f64,
    /// Seconds since the epoch.
    pub timestamp: u64,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum RatingFormat {
    /// Comma-separated `userId,movieId,rating,timestamp` with a header row.
    CsvHeader,
    /// Tab-separated, no header (the MovieLens-100K `u.data` layout).
    Tsv,
}

impl RatingFormat {
    /// Guesses the format from a file name: `.csv` means [`Self::CsvHeader`].
    pub fn from_path(path: &Path) -> Self {
        match path.extension().and_then(|e| e.to_str()) {
            Some(ext) if ext.eq_ignore_ascii_case("csv") => RatingFormat::CsvHeader,
            _ => RatingFormat::Tsv,
        }
    }
}

/// Parses ratings in file order. Fails on the first malformed row, naming
/// its line number, and on inputs with no data rows.
pub fn parse_ratings<R: Read>(source: R, format: RatingFormat) -> Result<Vec<RatingEvent>> {
    let (delimiter, has_headers) = match format {
        RatingFormat::CsvHeader => (b',', true),
        RatingFormat::Tsv => (b'\t', false),
    };
    let mut reader = csv::ReaderBuilder::new()
        .delimiter(delimiter)
        .has_headers(has_headers)
        .flexible(true)
        .trim(csv::Trim::All)
        .from_reader(source);

    let mut events = Vec::new();
    let mut record = csv::StringRecord::new();
    loop {
        let more = reader.read_record(&mut record).map_err(|e| {
            let line = e.position().map_or(0, |p| p.line());
            Error::parse(line, e.to_string())
        })?;
        if !more {
            break;
        }
        let line = record.position().map_or(0, |p| p.line());
        if record.len() == 1 && record[0].is_empty() {
            continue;
        }
        if record.len() != 4 {
            return Err(Error::parse(
                line,
                format!(
                    "expected 4 fields (user, item, rating, timestamp), found {}",
                    record.len()
                ),
            ));
        }
        let rating: f64 = record[2]
            .parse()
            .map_err(|e| Error::parse(line, format!("bad rating {:?}: {e}", &record[2])))?;
        if !rating.is_finite() {
            return Err(Error::parse(line, format!("non-finite rating {:?}", &record[2])));
        }
        let timestamp: u64 = record[3]
            .parse()
            .map_err(|e| Error::parse(line, format!("bad timestamp {:?}: {e}", &record[3])))?;
        if record[0].is_empty() || record[1].is_empty() {
            return Err(Error::parse(line, "empty user or item id"));
        }
        events.push(RatingEvent {
            user_id: record[0].to_owned(),
            item_id: record[1].to_owned(),
            rating,
            timestamp,
        });
    }
    if events.is_empty() {
        return Err(Error::EmptyInput);
    }
    Ok(events)
}

/// Sets every rating to `1.0`.
pub fn binarize(mut events: Vec<RatingEvent>) -> Vec<RatingEvent> {
    for e in &mut events {
        e.rating = 1.0;
    }
    events
}

/// Drops every event of users with fewer than `min_distinct` distinct
/// timestamps. Surviving events keep their order.
pub fn filter_min_distinct_timestamps(events: Vec<RatingEvent>, min_distinct: usize) -> Vec<RatingEvent> {
    let mut seen: HashSet<(&str, u64)> = HashSet::new();
    let mut distinct: std::collections::HashMap<&str, usize> = std::collections::HashMap::new();
    for e in &events {
        if seen.insert((e.user_id.as_str(), e.timestamp)) {
            *distinct.entry(e.user_id.as_str()).or_default() += 1;
        }
    }
    let keep: HashSet<String> = distinct
        .into_iter()
        .filter(|&(_, n)| n >= min_distinct)
        .map(|(u, _)| u.to_owned())
        .collect();
    events.into_iter().filter(|e| keep.contains(&e.user_id)).collect()
}

/// Train/test matrices over a shared user × item index space.
#[derive(Debug, Clone, PartialEq)]
pub struct SplitDataset {
    pub train: SparseBinaryMatrix,
    pub test: SparseBinaryMatrix,
    /// Original user ids; position is the row index.
    pub user_index: IndexSet<String>,
    /// Original item ids; position is the column index.
    pub item_index: IndexSet<String>,
}

/// Moves each user's latest interaction into the test matrix.
///
/// Rows and columns are numbered by first appearance of the ids in `events`.
/// Repeated `(user, item)` pairs collapse to one interaction stamped with its
/// latest timestamp. Among interactions tied at a user's latest timestamp,
/// the one with the largest item index is held out.
pub fn leave_last_out_split(events: &[RatingEvent]) -> Result<SplitDataset> {
    let mut user_index = IndexSet::new();
    let mut item_index = IndexSet::new();
    let mut per_user: Vec<Vec<(usize, u64)>> = Vec::new();
    for e in events {
        let (u, new_user) = user_index.insert_full(e.user_id.clone());
        if new_user {
            per_user.push(Vec::new());
        }
        let (i, _) = item_index.insert_full(e.item_id.clone());
        per_user[u].push((i, e.timestamp));
    }

    let mut train_pairs = Vec::new();
    let mut test_pairs = Vec::with_capacity(per_user.len());
    for (u, items) in per_user.iter_mut().enumerate() {
        // Latest timestamp first within each item, then keep that one.
        items.sort_unstable_by(|a, b| a.0.cmp(&b.0).then(b.1.cmp(&a.1)));
        items.dedup_by_key(|x| x.0);

        let distinct: HashSet<u64> = items.iter().map(|x| x.1).collect();
        if distinct.len() < 2 {
            return Err(Error::SplitPrecondition {
                user: user_index[u].clone(),
            });
        }
        let &(held_out, _) = items
            .iter()
            .max_by_key(|&&(item, ts)| (ts, item))
            .expect("user has events");
        test_pairs.push((u, held_out));
        train_pairs.extend(items.iter().filter(|x| x.0 != held_out).map(|x| (u, x.0)));
    }

    let (m, n) = (user_index.len(), item_index.len());
    Ok(SplitDataset {
        train: SparseBinaryMatrix::from_pairs(train_pairs, m, n)?,
        test: SparseBinaryMatrix::from_pairs(test_pairs, m, n)?,
        user_index,
        item_index,
    })
}

/// Keeps one event per `(user, item)` pair, at the position of its first
/// occurrence and carrying its latest timestamp.
pub fn collapse_duplicates(events: Vec<RatingEvent>) -> Vec<RatingEvent> {
    let mut position: std::collections::HashMap<(String, String), usize> = std::collections::HashMap::new();
    let mut out: Vec<RatingEvent> = Vec::with_capacity(events.len());
    for e in events {
        match position.get(&(e.user_id.clone(), e.item_id.clone())) {
            Some(&k) => {
                if e.timestamp > out[k].timestamp {
                    out[k].timestamp = e.timestamp;
                    out[k].rating = e.rating;
                }
            }
            None => {
                position.insert((e.user_id.clone(), e.item_id.clone()), out.len());
                out.push(e);
            }
        }
    }
    out
}

/// Binarize, collapse repeated pairs, filter (≥ 2 distinct timestamps),
/// split.
pub fn prepare(events: Vec<RatingEvent>) -> Result<SplitDataset> {
    let events = filter_min_distinct_timestamps(collapse_duplicates(binarize(events)), 2);
    if events.is_empty() {
        return Err(Error::EmptyInput);
    }
    leave_last_out_split(&events)
}

impl SplitDataset {
    /// Writes `kind<TAB>original_id<TAB>index` lines, users first.
    pub fn write_index_map<W: Write>(&self, mut out: W) -> Result<()> {
        for (idx, id) in self.user_index.iter().enumerate() {
            writeln!(out, "user\t{id}\t{idx}")?;
        }
        for (idx, id) in self.item_index.iter().enumerate() {
            writeln!(out, "item\t{id}\t{idx}")?;
        }
        out.flush()?;
        Ok(())
    }

    /// Writes `train.tsv`, `test.tsv` and `index_map.tsv` into `dir`.
    pub fn write_to_dir(&self, dir: &Path) -> Result<()> {
        std::fs::create_dir_all(dir)?;
        self.train
            .write_triplets(BufWriter::new(File::create(dir.join("train.tsv"))?))?;
        self.test
            .write_triplets(BufWriter::new(File::create(dir.join("test.tsv"))?))?;
        self.write_index_map(BufWriter::new(File::create(dir.join("index_map.tsv"))?))?;
        Ok(())
    }
}

/// Reads an index map back into `(users, items)`, checking that indices are
/// contiguous and in order.
pub fn read_index_map<R: BufRead>(reader: R) -> Result<(IndexSet<String>, IndexSet<String>)> {
    let mut users = IndexSet::new();
    let mut items = IndexSet::new();
    for (idx, line) in reader.lines().enumerate() {
        let line = line?;
        let lineno = idx as u64 + 1;
        if line.trim().is_empty() {
            continue;
        }
        let fields: Vec<&str> = line.trim_end_matches('\r').split('\t').collect();
        let [kind, id, index] = fields[..] else {
            return Err(Error::parse(lineno, "expected kind<TAB>original_id<TAB>index"));
        };
        let index: usize = index
            .parse()
            .map_err(|e| Error::parse(lineno, format!("bad index {index:?}: {e}")))?;
        let set = match kind {
            "user" => &mut users,
            "item" => &mut items,
            other => return Err(Error::parse(lineno, format!("unknown kind {other:?}"))),
        };
        if index != set.len() || !set.insert(id.to_owned()) {
            return Err(Error::parse(
                lineno,
                format!("{kind} {id:?} has non-contiguous or duplicate index {index}"),
            ));
        }
    }
    Ok((users, items))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn ev(user: &str, item: &str, ts: u64) -> RatingEvent {
        RatingEvent {
            user_id: user.into(),
            item_id: item.into(),
            rating: 4.0,
            timestamp: ts,
        }
    }

    #[test]
    fn parses_csv_with_header() {
        let text = "userId,movieId,rating,timestamp\n1,31,2.5,1260759144\n";
        let events = parse_ratings(text.as_bytes(), RatingFormat::CsvHeader).unwrap();
        assert_eq!(
            events,
            vec![RatingEvent {
                user_id: "1".into(),
                item_id: "31".into(),
                rating: 2.5,
                timestamp: 1260759144
            }]
        );
    }

    #[test]
    fn parses_headerless_tsv() {
        let text = "196\t242\t3\t881250949\n186\t302\t3\t891717742\n";
        let events = parse_ratings(text.as_bytes(), RatingFormat::Tsv).unwrap();
        assert_eq!(events.len(), 2);
        assert_eq!(events[1].item_id, "302");
    }

    #[test]
    fn short_row_reports_its_line() {
        let text = "userId,movieId,rating,timestamp\n1,31,2.5,1260759144\n1,32,3.0\n";
        let err = parse_ratings(text.as_bytes(), RatingFormat::CsvHeader).unwrap_err();
        assert!(matches!(err, Error::Parse { line: 3, .. }), "{err}");
    }

    #[test]
    fn bad_values_and_empty_input() {
        assert!(matches!(
            parse_ratings("".as_bytes(), RatingFormat::Tsv),
            Err(Error::EmptyInput)
        ));
        assert!(matches!(
            parse_ratings("u,i,r,t\n".as_bytes(), RatingFormat::CsvHeader),
            Err(Error::EmptyInput)
        ));
        assert!(parse_ratings("1\t2\tx\t3\n".as_bytes(), RatingFormat::Tsv).is_err());
        assert!(parse_ratings("1\t2\t3\t-4\n".as_bytes(), RatingFormat::Tsv).is_err());
        assert!(parse_ratings("1\t2\tNaN\t4\n".as_bytes(), RatingFormat::Tsv).is_err());
    }

    #[test]
    fn binarize_sets_ones() {
        let mut events = vec![ev("a", "x", 1), ev("a", "y", 2), ev("a", "z", 3)];
        for (e, r) in events.iter_mut().zip([0.5, 3.0, 5.0]) {
            e.rating = r;
        }
        let out = binarize(events.clone());
        assert!(out.iter().all(|e| e.rating == 1.0));
        assert_eq!(out.len(), 3);
        assert_eq!(out[2].item_id, "z");
        assert!(binarize(Vec::new()).is_empty());
    }

    #[test]
    fn filter_uses_distinct_timestamps() {
        let events = vec![
            ev("single", "x", 5),
            ev("same_ts", "x", 7),
            ev("same_ts", "y", 7),
            ev("kept", "x", 1),
            ev("kept", "y", 2),
        ];
        let out = filter_min_distinct_timestamps(events, 2);
        assert_eq!(out, vec![ev("kept", "x", 1), ev("kept", "y", 2)]);
    }

    #[test]
    fn latest_goes_to_test() {
        let events = vec![ev("u", "a", 10), ev("u", "b", 30), ev("u", "c", 20)];
        let split = leave_last_out_split(&events).unwrap();
        assert_eq!(split.test.iter().collect::<Vec<_>>(), vec![(0, 1)]);
        assert_eq!(split.train.iter().collect::<Vec<_>>(), vec![(0, 0), (0, 2)]);
    }

    #[test]
    fn test_nnz_equals_user_count() {
        let events = vec![ev("u1", "a", 1), ev("u1", "b", 2), ev("u2", "c", 1), ev("u2", "d", 2)];
        let split = leave_last_out_split(&events).unwrap();
        assert_eq!(split.test.nnz(), 2);
        assert_eq!(split.train.nnz(), 2);
        assert_eq!(split.test.row_sums(), vec![1, 1]);
    }

    /// Exhaustive oracle over every input order of three events with a tie at
    /// the maximum timestamp.
    #[test]
    fn timestamp_tie_takes_largest_item_index() {
        let base = [ev("u", "a", 10), ev("u", "b", 30), ev("u", "c", 30)];
        let orders = [[0, 1, 2], [0, 2, 1], [1, 0, 2], [1, 2, 0], [2, 0, 1], [2, 1, 0]];
        for order in orders {
            let events: Vec<_> = order.iter().map(|&k| base[k].clone()).collect();
            let split = leave_last_out_split(&events).unwrap();
            let col = |id: &str| split.item_index.get_index_of(id).unwrap();
            let expected = if col("b") > col("c") { col("b") } else { col("c") };
            assert_eq!(split.test.iter().collect::<Vec<_>>(), vec![(0, expected)]);
            let train: Vec<_> = split.train.iter().collect();
            assert_eq!(train.len(), 2);
            assert!(!train.contains(&(0, expected)));
            let mut union: Vec<_> = train.iter().map(|x| x.1).chain([expected]).collect();
            union.sort();
            assert_eq!(union, vec![0, 1, 2]);
        }
    }

    #[test]
    fn duplicates_collapse_to_latest() {
        let events = vec![ev("u", "a", 50), ev("u", "b", 20), ev("u", "a", 10)];
        let split = leave_last_out_split(&events).unwrap();
        assert_eq!(split.test.iter().collect::<Vec<_>>(), vec![(0, 0)]);
        assert_eq!(split.train.iter().collect::<Vec<_>>(), vec![(0, 1)]);
    }

    #[test]
    fn unfiltered_user_is_rejected_by_name() {
        let events = vec![ev("u1", "a", 1), ev("u1", "b", 2), ev("lonely", "a", 3)];
        match leave_last_out_split(&events) {
            Err(Error::SplitPrecondition { user }) => assert_eq!(user, "lonely"),
            other => panic!("unexpected {other:?}"),
        }
    }

    #[test]
    fn index_map_round_trip() {
        let events = vec![
            ev("u9", "i3", 1),
            ev("u9", "i1", 2),
            ev("u2", "i3", 4),
            ev("u2", "i7", 5),
        ];
        let split = leave_last_out_split(&events).unwrap();
        let mut buf = Vec::new();
        split.write_index_map(&mut buf).unwrap();
        let text = String::from_utf8(buf.clone()).unwrap();
        assert!(text.starts_with("user\tu9\t0\nuser\tu2\t1\nitem\ti3\t0\n"));
        let (users, items) = read_index_map(buf.as_slice()).unwrap();
        assert_eq!(users, split.user_index);
        assert_eq!(items, split.item_index);
        assert!(read_index_map("user\tx\t1\n".as_bytes()).is_err());
    }
}
