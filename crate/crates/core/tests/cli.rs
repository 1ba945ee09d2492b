use std::path::Path;
use std::process::{Command, Output};

const SMALL: &str = r#"
[nms]
distances = [2.0, 2.5, 3.0]

[codes]
params = { layout = "shifts" }

[sweep]
Q = [5000.0, 20000.0]

[run]
seed = 9
bits = 2000
max_bits = 20000
min_errors = 20

[study]
schemes = ["mrc", "zf"]
"#;

fn mocdma(dir: &Path, args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_mocdma"))
        .current_dir(dir)
        .env("RUST_LOG", "warn")
        .args(args)
        .output()
        .expect("binary runs")
}

fn write_config(dir: &Path, name: &str, body: &str) -> String {
    let path = dir.join(name);
    std::fs::write(&path, body).unwrap();
    path.to_str().unwrap().to_owned()
}

#[test]
fn run_is_byte_identical_across_worker_counts() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(dir.path(), "small.toml", SMALL);
    let mut outputs = Vec::new();
    for workers in ["1", "3"] {
        let out_dir = dir.path().join(format!("w{workers}"));
        let o = mocdma(
            dir.path(),
            &[
                "--workers",
                workers,
                "--out-dir",
                out_dir.to_str().unwrap(),
                "run",
                &cfg,
            ],
        );
        assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
        let listed: Vec<String> = String::from_utf8(o.stdout)
            .unwrap()
            .lines()
            .map(str::to_owned)
            .collect();
        assert_eq!(listed.len(), 2);
        let mut files: Vec<(String, Vec<u8>)> = std::fs::read_dir(&out_dir)
            .unwrap()
            .map(|e| {
                let e = e.unwrap();
                (
                    e.file_name().into_string().unwrap(),
                    std::fs::read(e.path()).unwrap(),
                )
            })
            .collect();
        files.sort();
        outputs.push(files);
    }
    let names: Vec<&str> = outputs[0].iter().map(|(n, _)| n.as_str()).collect();
    assert_eq!(
        names,
        [
            "small-mrc.csv",
            "small-mrc.json",
            "small-zf.csv",
            "small-zf.json"
        ]
    );
    assert_eq!(outputs[0], outputs[1]);

    let text = String::from_utf8(outputs[0][0].1.clone()).unwrap();
    let mut lines = text.lines();
    assert!(lines.next().unwrap().starts_with("# schema=1 digest="));
    assert_eq!(
        lines.next().unwrap(),
        "Q,nm_index,ber,ci_low,ci_high,bits,errors"
    );
    assert_eq!(lines.count(), 6);
}

#[test]
fn seed_override_changes_results() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(dir.path(), "small.toml", SMALL);
    let read = |seed: &str| {
        let out = dir.path().join(seed);
        let o = mocdma(
            dir.path(),
            &[
                "--seed",
                seed,
                "--out-dir",
                out.to_str().unwrap(),
                "run",
                &cfg,
            ],
        );
        assert!(o.status.success());
        std::fs::read_to_string(out.join("small-mrc.csv")).unwrap()
    };
    let a = read("1");
    let b = read("2");
    assert!(a.contains("seed=1") && b.contains("seed=2"));
    assert_ne!(a.lines().nth(2), b.lines().nth(2));
}

#[test]
fn invalid_config_yields_json_error_record() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(
        dir.path(),
        "bad.toml",
        "[nms]\ndistances = [0.2, 3.0]\n[timing]\nN = 1\n",
    );
    let o = mocdma(dir.path(), &["run", &cfg]);
    assert_eq!(o.status.code(), Some(2));
    let stderr = String::from_utf8(o.stderr).unwrap();
    let line = stderr
        .lines()
        .rev()
        .find(|l| l.starts_with('{'))
        .expect("json line");
    let v: serde_json::Value = serde_json::from_str(line).unwrap();
    assert_eq!(v["error"], "validation");
    let paths: Vec<&str> = v["issues"]
        .as_array()
        .unwrap()
        .iter()
        .map(|i| i["path"].as_str().unwrap())
        .collect();
    assert!(
        paths.iter().any(|p| p.starts_with("nms.distances")),
        "{paths:?}"
    );
    assert!(paths.contains(&"timing.N"), "{paths:?}");
    assert!(!dir.path().join("results").exists());
}

#[test]
fn unknown_key_is_rejected() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(dir.path(), "typo.toml", "[run]\nsede = 3\n");
    let o = mocdma(dir.path(), &["run", &cfg]);
    assert_eq!(o.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&o.stderr).contains("sede"));
}

#[test]
fn selftest_passes() {
    let dir = tempfile::tempdir().unwrap();
    let o = mocdma(dir.path(), &["selftest"]);
    assert!(o.status.success());
    let out = String::from_utf8(o.stdout).unwrap();
    assert!(out.lines().count() >= 5);
    assert!(out.lines().all(|l| l.starts_with("PASS")), "{out}");
}

#[test]
fn emission_summary_reports_budgets() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(
        dir.path(),
        "ci.toml",
        "[emission]\nstrategy = \"channel_inverse\"\n[sweep]\nQ = [1000.0]\n",
    );
    let o = mocdma(dir.path(), &["emission-summary", &cfg]);
    assert!(o.status.success());
    let out = String::from_utf8(o.stdout).unwrap();
    let mut rdr = csv::Reader::from_reader(out.as_bytes());
    let rows: Vec<csv::StringRecord> = rdr.records().map(|r| r.unwrap()).collect();
    assert_eq!(rows.len(), 6);
    let per_bit: Vec<f64> = rows.iter().map(|r| r[5].parse().unwrap()).collect();
    // the farthest NM spends the full budget, closer ones less
    assert!((per_bit[5] - 1000.0).abs() < 1e-9);
    assert!(per_bit.windows(2).all(|w| w[0] < w[1]));
}

#[test]
fn codes_dump_lists_each_nm() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(
        dir.path(),
        "w.toml",
        "[timing]\nN = 32\n[codes]\nfamily = \"walsh\"\n",
    );
    let o = mocdma(dir.path(), &["codes", "dump", &cfg]);
    assert!(o.status.success());
    let out = String::from_utf8(o.stdout).unwrap();
    let lines: Vec<&str> = out.lines().collect();
    assert_eq!(lines.len(), 6, "{out}");
    for (i, l) in lines.iter().enumerate() {
        assert!(l.starts_with(&format!("NM{} ", i + 1)), "{l}");
        assert_eq!(l.split(' ').next_back().unwrap().len(), 32, "{l}");
    }
}
