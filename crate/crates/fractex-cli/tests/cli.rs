use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

fn fractex(args: &[&str]) -> Output {
    fractex_env(args, &[])
}

fn fractex_env(args: &[&str], env: &[(&str, &str)]) -> Output {
    let mut cmd = Command::new(env!("CARGO_BIN_EXE_fractex"));
    cmd.args(args).env_remove("FRACTEX_SEED");
    for (k, v) in env {
        cmd.env(k, v);
    }
    cmd.output().expect("binary runs")
}

fn code(out: &Output) -> i32 {
    out.status.code().expect("exit code")
}

fn stdout(out: &Output) -> String {
    String::from_utf8_lossy(&out.stdout).into_owned()
}

fn stderr(out: &Output) -> String {
    String::from_utf8_lossy(&out.stderr).into_owned()
}

fn s(p: &Path) -> &str {
    p.to_str().unwrap()
}

/// Writes a matrix in triplet format and returns its dense form.
fn write_matrix(path: &Path, m: usize, n: usize, on: impl Fn(usize, usize) -> bool) -> Vec<Vec<f64>> {
    let mut text = format!("{m}\t{n}\n");
    let mut dense = vec![vec![0.0; n]; m];
    for (r, row) in dense.iter_mut().enumerate() {
        for (c, cell) in row.iter_mut().enumerate() {
            if on(r, c) {
                text.push_str(&format!("{r}\t{c}\n"));
                *cell = 1.0;
            }
        }
    }
    fs::write(path, text).unwrap();
    dense
}

fn patterned(dir: &Path) -> PathBuf {
    let p = dir.join("base.tsv");
    // Hashed cells plus a dense corner: full rank with a clear leading direction.
    write_matrix(&p, 30, 40, |r, c| {
        ((r as u64 * 2_654_435_761) ^ (c as u64 * 40_503)).wrapping_mul(0x9e37_79b9) >> 29 & 3 == 0
            || (r < 10 && c < 12)
    });
    p
}

fn read_shards(dir: &Path) -> BTreeMap<(usize, usize), f64> {
    let mut out = BTreeMap::new();
    for e in fs::read_dir(dir).unwrap() {
        let path = e.unwrap().path();
        let name = path.file_name().unwrap().to_str().unwrap().to_owned();
        if !name.starts_with("part-") {
            continue;
        }
        for line in fs::read_to_string(&path).unwrap().lines() {
            let f: Vec<&str> = line.split('\t').collect();
            let value = f.get(2).map_or(1.0, |v| v.parse().unwrap());
            out.insert((f[0].parse().unwrap(), f[1].parse().unwrap()), value);
        }
    }
    out
}

#[test]
fn missing_input_file_is_a_data_error() {
    let dir = tempfile::tempdir().unwrap();
    let out = fractex(&[
        "split",
        "--input",
        s(&dir.path().join("nope.tsv")),
        "--out",
        s(dir.path()),
    ]);
    assert_eq!(code(&out), 2, "{}", stderr(&out));
}

#[test]
fn usage_errors_exit_one() {
    let dir = tempfile::tempdir().unwrap();
    assert_eq!(code(&fractex(&["split", "--out", s(dir.path())])), 1);
    assert_eq!(code(&fractex(&["expand", "--no-such-flag"])), 1);
    assert_eq!(code(&fractex(&[])), 1);
    let out = fractex(&[
        "expand",
        "--input",
        s(&patterned(dir.path())),
        "--out",
        s(dir.path()),
        "--mode",
        "sideways",
    ]);
    assert_eq!(code(&out), 1, "{}", stderr(&out));
    assert_eq!(code(&fractex(&["--help"])), 0);
}

#[test]
fn deterministic_expansion_matches_kronecker_oracle_and_verifies() {
    let dir = tempfile::tempdir().unwrap();
    let base = dir.path().join("b.tsv");
    let b = write_matrix(&base, 3, 4, |r, c| (r + c) % 2 == 0 || c == 3);
    let a = [[0.5, 0.0, 1.0], [0.25, 0.75, 0.125]];
    let table = dir.path().join("r.txt");
    fs::write(&table, "2 3 unit 0\n0.5 0 1\n0.25 0.75 0.125\n").unwrap();
    let out_dir = dir.path().join("exp");
    let out = fractex(&[
        "expand",
        "--input",
        s(&base),
        "--reduced",
        s(&table),
        "--out",
        s(&out_dir),
        "--mode",
        "deterministic",
        "--shuffle",
        "false",
    ]);
    assert_eq!(code(&out), 0, "{}", stderr(&out));

    let mut want = BTreeMap::new();
    for i in 0..2 {
        for j in 0..3 {
            for (r, row) in b.iter().enumerate() {
                for (c, &x) in row.iter().enumerate() {
                    if a[i][j] * x != 0.0 {
                        want.insert((i * 3 + r, j * 4 + c), a[i][j] * x);
                    }
                }
            }
        }
    }
    assert_eq!(read_shards(&out_dir), want);

    let out = fractex(&["verify", "--expanded", s(&out_dir), "--input", s(&base)]);
    assert_eq!(code(&out), 0, "{}{}", stdout(&out), stderr(&out));
    assert!(!stdout(&out).contains("FAIL"));
}

#[test]
fn tampered_shard_fails_verification_naming_the_block() {
    let dir = tempfile::tempdir().unwrap();
    let base = patterned(dir.path());
    let out_dir = dir.path().join("exp");
    let out = fractex(&[
        "expand",
        "--input",
        s(&base),
        "--rows",
        "2",
        "--cols",
        "3",
        "--seed",
        "5",
        "--out",
        s(&out_dir),
    ]);
    assert_eq!(code(&out), 0, "{}", stderr(&out));
    assert_eq!(
        code(&fractex(&["verify", "--expanded", s(&out_dir), "--input", s(&base)])),
        0
    );

    let shard = out_dir.join("part-00001-00002.tsv");
    let text = fs::read_to_string(&shard).unwrap();
    assert!(!text.is_empty());
    let trimmed: String = text.lines().skip(1).map(|l| format!("{l}\n")).collect();
    fs::write(&shard, trimmed).unwrap();

    let out = fractex(&["verify", "--expanded", s(&out_dir)]);
    assert_eq!(code(&out), 3, "{}", stdout(&out));
    let report = format!("{}{}", stdout(&out), stderr(&out));
    assert!(report.contains("block (1, 2)"), "{report}");
}

#[test]
fn worker_count_does_not_change_output() {
    let dir = tempfile::tempdir().unwrap();
    let base = patterned(dir.path());
    let mut runs = Vec::new();
    for workers in ["1", "8"] {
        let out_dir = dir.path().join(format!("w{workers}"));
        let out = fractex(&[
            "expand",
            "--input",
            s(&base),
            "--rows",
            "3",
            "--cols",
            "4",
            "--seed",
            "9",
            "--workers",
            workers,
            "--out",
            s(&out_dir),
        ]);
        assert_eq!(code(&out), 0, "{}", stderr(&out));
        let files: BTreeMap<String, Vec<u8>> = fs::read_dir(&out_dir)
            .unwrap()
            .map(|e| {
                let e = e.unwrap();
                (e.file_name().into_string().unwrap(), fs::read(e.path()).unwrap())
            })
            .collect();
        runs.push(files);
    }
    assert!(runs[0].contains_key("manifest.json"));
    assert_eq!(runs[0], runs[1]);
}

fn manifest_seed(dir: &Path) -> u64 {
    let v: serde_json::Value = serde_json::from_str(&fs::read_to_string(dir.join("manifest.json")).unwrap()).unwrap();
    v["seed"].as_u64().unwrap()
}

#[test]
fn flags_beat_config_file_which_beats_environment() {
    let dir = tempfile::tempdir().unwrap();
    let base = patterned(dir.path());
    let config = dir.path().join("run.toml");
    fs::write(
        &config,
        "input = \"base.tsv\"\nrows = 2\ncols = 2\nseed = 11\nout = \"from_config\"\n",
    )
    .unwrap();

    let out = fractex_env(&["--config", s(&config), "expand"], &[("FRACTEX_SEED", "13")]);
    assert_eq!(code(&out), 0, "{}", stderr(&out));
    assert_eq!(manifest_seed(&dir.path().join("from_config")), 11);

    let flagged = dir.path().join("flagged");
    let out = fractex_env(
        &["--config", s(&config), "expand", "--seed", "12", "--out", s(&flagged)],
        &[("FRACTEX_SEED", "13")],
    );
    assert_eq!(code(&out), 0, "{}", stderr(&out));
    assert_eq!(manifest_seed(&flagged), 12);

    let envd = dir.path().join("env");
    let out = fractex_env(
        &[
            "expand",
            "--input",
            s(&base),
            "--rows",
            "2",
            "--cols",
            "2",
            "--out",
            s(&envd),
        ],
        &[("FRACTEX_SEED", "13")],
    );
    assert_eq!(code(&out), 0, "{}", stderr(&out));
    assert_eq!(manifest_seed(&envd), 13);

    let bad = dir.path().join("bad.toml");
    fs::write(&bad, "sede = 1\n").unwrap();
    assert_ne!(code(&fractex(&["--config", s(&bad), "expand"])), 0);
}

#[test]
fn split_drops_single_rating_users() {
    let dir = tempfile::tempdir().unwrap();
    let ratings = dir.path().join("ratings.tsv");
    fs::write(
        &ratings,
        "a\tx\t5\t10\na\ty\t3\t20\nlonely\tx\t4\t15\nb\tz\t1\t30\nb\tx\t2\t31\nb\ty\t2\t29\n",
    )
    .unwrap();
    let out_dir = dir.path().join("split");
    let out = fractex(&["split", "--input", s(&ratings), "--out", s(&out_dir)]);
    assert_eq!(code(&out), 0, "{}", stderr(&out));
    let map = fs::read_to_string(out_dir.join("index_map.tsv")).unwrap();
    assert!(!map.contains("lonely"));
    let test = fs::read_to_string(out_dir.join("test.tsv")).unwrap();
    assert_eq!(test.lines().next(), Some("2\t3"));
    assert_eq!(test.lines().count(), 3);
    let train = fs::read_to_string(out_dir.join("train.tsv")).unwrap();
    assert_eq!(train.lines().count(), 4);
}

#[test]
fn reduce_rejects_a_grid_that_does_not_shrink() {
    let dir = tempfile::tempdir().unwrap();
    let base = patterned(dir.path());
    let out = fractex(&[
        "reduce",
        "--input",
        s(&base),
        "--rows",
        "30",
        "--cols",
        "4",
        "--out",
        s(&dir.path().join("r.txt")),
    ]);
    assert_eq!(code(&out), 2, "{}", stderr(&out));
    let out = fractex(&[
        "reduce",
        "--input",
        s(&base),
        "--rows",
        "3",
        "--cols",
        "4",
        "--out",
        s(&dir.path().join("r.txt")),
    ]);
    assert_eq!(code(&out), 0, "{}", stderr(&out));
    assert!(dir.path().join("r.txt.spectrum.tsv").exists());
}

#[test]
fn stats_writes_a_summary() {
    let dir = tempfile::tempdir().unwrap();
    let base = patterned(dir.path());
    let table = dir.path().join("r.txt");
    assert_eq!(
        code(&fractex(&[
            "reduce",
            "--input",
            s(&base),
            "--rows",
            "2",
            "--cols",
            "3",
            "--out",
            s(&table)
        ])),
        0
    );
    let exp = dir.path().join("exp");
    let out = fractex(&[
        "expand",
        "--input",
        s(&base),
        "--reduced",
        s(&table),
        "--seed",
        "1",
        "--out",
        s(&exp),
    ]);
    assert_eq!(code(&out), 0, "{}", stderr(&out));
    let report = dir.path().join("report");
    let out = fractex(&[
        "stats",
        "--input",
        s(&base),
        "--expanded",
        s(&exp),
        "--reduced",
        s(&table),
        "--out",
        s(&report),
        "--top-k",
        "5",
    ]);
    assert_eq!(code(&out), 0, "{}", stderr(&out));
    let summary = fs::read_to_string(report.join("summary.tsv")).unwrap();
    assert!(summary.lines().next().unwrap().contains("pearson"), "{summary}");
    assert!(summary.lines().count() > 3, "{summary}");
}
