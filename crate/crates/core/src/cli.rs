//! Experiment orchestration and result files.
//!
//! A run writes one CSV per expanded study combination plus a JSON sidecar
//! with the config, digest and code assignment. Nothing time-dependent is
//! written, so reruns with the same config and seed reproduce the files byte
//! for byte.

use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::config::{ScenarioConfig, SCHEMA_VERSION};
use crate::error::{Error, FieldIssue, Result};
use crate::harness::{run_ber, BerReport, Scenario};

pub const CSV_HEADER: [&str; 7] = [
    "Q", "nm_index", "ber", "ci_low", "ci_high", "bits", "errors",
];

/// One CSV row; `nm_index` is 1-based, NM 1 closest to the receiver.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ResultRow {
    #[serde(rename = "Q")]
    pub q: f64,
    pub nm_index: usize,
    pub ber: f64,
    pub ci_low: f64,
    pub ci_high: f64,
    pub bits: u64,
    pub errors: u64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ResultFile {
    pub schema: u32,
    pub digest: String,
    pub seed: u64,
    pub rows: Vec<ResultRow>,
}

impl ResultFile {
    pub fn from_report(report: &BerReport) -> Self {
        let mut rows: Vec<ResultRow> = report
            .points
            .iter()
            .flat_map(|p| {
                (0..p.nms()).map(move |k| ResultRow {
                    q: p.q,
                    nm_index: k + 1,
                    ber: p.ber[k],
                    ci_low: p.ci_low[k],
                    ci_high: p.ci_high[k],
                    bits: p.bits,
                    errors: p.errors[k],
                })
            })
            .collect();
        rows.sort_by(|a, b| a.q.total_cmp(&b.q).then(a.nm_index.cmp(&b.nm_index)));
        Self {
            schema: SCHEMA_VERSION,
            digest: report.digest.clone(),
            seed: report.seed,
            rows,
        }
    }

    /// `# schema=.. digest=.. seed=..` comment line, then the header and rows.
    pub fn to_csv_string(&self) -> String {
        let mut out = format!(
            "# schema={} digest={} seed={}\n",
            self.schema, self.digest, self.seed
        );
        let mut w = csv::Writer::from_writer(Vec::new());
        if self.rows.is_empty() {
            w.write_record(CSV_HEADER).expect("in-memory write");
        }
        for r in &self.rows {
            w.serialize(r).expect("in-memory write");
        }
        out.push_str(std::str::from_utf8(&w.into_inner().expect("flush")).expect("utf8"));
        out
    }

    pub fn parse(text: &str) -> Result<Self> {
        let (meta, body) = text
            .split_once('\n')
            .ok_or_else(|| Error::Parse("result file is empty".into()))?;
        let meta = meta
            .strip_prefix("# ")
            .ok_or_else(|| Error::Parse("missing metadata line".into()))?;
        let field = |key: &str| -> Result<&str> {
            meta.split_whitespace()
                .find_map(|kv| kv.strip_prefix(key).and_then(|v| v.strip_prefix('=')))
                .ok_or_else(|| Error::Parse(format!("metadata lacks `{key}`")))
        };
        let schema = field("schema")?
            .parse()
            .map_err(|e| Error::Parse(format!("schema: {e}")))?;
        let digest = field("digest")?.to_string();
        let seed = field("seed")?
            .parse()
            .map_err(|e| Error::Parse(format!("seed: {e}")))?;
        let mut reader = csv::Reader::from_reader(body.as_bytes());
        let rows = reader
            .deserialize()
            .collect::<std::result::Result<Vec<ResultRow>, _>>()
            .map_err(|e| Error::Parse(e.to_string()))?;
        Ok(Self {
            schema,
            digest,
            seed,
            rows,
        })
    }

    pub fn read(path: &Path) -> Result<Self> {
        Self::parse(&std::fs::read_to_string(path)?)
    }

    /// Rows of NM `nm` (1-based) in ascending Q.
    pub fn series(&self, nm: usize) -> Vec<&ResultRow> {
        self.rows.iter().filter(|r| r.nm_index == nm).collect()
    }
}

#[derive(Debug, Clone, Serialize)]
pub struct CodeRecord {
    pub nm_index: usize,
    pub distance_um: f64,
    pub label: String,
    pub chips: String,
}

#[derive(Debug, Clone, Serialize)]
pub struct Sidecar {
    pub schema: u32,
    pub digest: String,
    pub seed: u64,
    pub label: String,
    pub csv: String,
    pub q: Vec<f64>,
    pub codes: Vec<CodeRecord>,
    pub config: ScenarioConfig,
}

/// Run-time overrides from the command line.
#[derive(Debug, Clone, Default)]
pub struct RunOptions {
    pub seed: Option<u64>,
    pub noise_off: bool,
}

impl RunOptions {
    pub fn apply(&self, cfg: &mut ScenarioConfig) {
        if let Some(s) = self.seed {
            cfg.run.seed = s;
        }
        if self.noise_off {
            cfg.run.noise_scale = 0.0;
        }
    }
}

pub fn code_records(cfg: &ScenarioConfig) -> Result<Vec<CodeRecord>> {
    let scenario = Scenario::from_config(cfg)?;
    Ok(scenario
        .codes
        .iter()
        .zip(&cfg.nms.distances)
        .enumerate()
        .map(|(k, (c, &d))| CodeRecord {
            nm_index: k + 1,
            distance_um: d,
            label: c.label.to_string(),
            chips: c
                .chips
                .iter()
                .map(|&x| if x > 0.0 { '+' } else { '-' })
                .collect(),
        })
        .collect())
}

fn file_stem(stem: &str, label: &str) -> String {
    if label.is_empty() {
        stem.to_string()
    } else {
        format!("{stem}-{label}")
    }
}

/// Output of one expanded scenario.
#[derive(Debug, Clone)]
pub struct RunOutput {
    pub label: String,
    pub csv: PathBuf,
    pub sidecar: PathBuf,
    pub report: BerReport,
}

/// Runs every study combination of `cfg` and writes `<stem>[-label].csv`
/// and `.json` into `out_dir`.
pub fn run_experiment(
    cfg: &ScenarioConfig,
    stem: &str,
    out_dir: &Path,
    opts: &RunOptions,
) -> Result<Vec<RunOutput>> {
    let mut cfg = cfg.clone();
    opts.apply(&mut cfg);
    cfg.validate()?;
    std::fs::create_dir_all(out_dir)?;
    let mut outputs = Vec::new();
    for (label, sub) in cfg.expand() {
        let report = run_ber(&sub, sub.run.seed)?;
        log::info!(
            "{} finished in {:.2} s",
            if label.is_empty() { stem } else { &label },
            report.wall_time.as_secs_f64()
        );
        let name = file_stem(stem, &label);
        let csv = out_dir.join(format!("{name}.csv"));
        let sidecar = out_dir.join(format!("{name}.json"));
        std::fs::write(&csv, ResultFile::from_report(&report).to_csv_string())?;
        let meta = Sidecar {
            schema: SCHEMA_VERSION,
            digest: report.digest.clone(),
            seed: report.seed,
            label: label.clone(),
            csv: format!("{name}.csv"),
            q: sub.sweep.values(),
            codes: code_records(&sub)?,
            config: sub.clone(),
        };
        let mut json =
            serde_json::to_string_pretty(&meta).map_err(|e| Error::Numerical(e.to_string()))?;
        json.push('\n');
        std::fs::write(&sidecar, json)?;
        outputs.push(RunOutput {
            label,
            csv,
            sidecar,
            report,
        });
    }
    Ok(outputs)
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct EmissionRow {
    pub strategy: String,
    #[serde(rename = "Q")]
    pub q: f64,
    pub nm_index: usize,
    pub distance_um: f64,
    pub qc: f64,
    pub molecules_per_bit: f64,
}

/// Per-NM molecules emitted per bit at each sweep value, for the configured
/// strategy or every strategy of the study.
pub fn emission_summary(cfg: &ScenarioConfig) -> Result<Vec<EmissionRow>> {
    cfg.validate()?;
    let mut strategies = cfg.study.strategies.clone();
    if strategies.is_empty() {
        strategies.push(cfg.emission.strategy);
    }
    let mut rows = Vec::new();
    for s in strategies {
        let mut c = cfg.clone();
        c.emission.strategy = s;
        c.study = Default::default();
        let scenario = Scenario::from_config(&c)?;
        for q in c.sweep.values() {
            let plan = scenario.emission_plan(q)?;
            for (k, (qc, mpb)) in plan.qc.iter().zip(plan.molecules_per_bit()).enumerate() {
                rows.push(EmissionRow {
                    strategy: s.name().to_string(),
                    q,
                    nm_index: k + 1,
                    distance_um: c.nms.distances[k],
                    qc: *qc,
                    molecules_per_bit: mpb,
                });
            }
        }
    }
    Ok(rows)
}

pub fn emission_summary_csv(rows: &[EmissionRow]) -> String {
    let mut w = csv::Writer::from_writer(Vec::new());
    for r in rows {
        w.serialize(r).expect("in-memory write");
    }
    String::from_utf8(w.into_inner().expect("flush")).expect("utf8")
}

/// Code assignment of every study combination, one line per NM.
pub fn codes_dump(cfg: &ScenarioConfig) -> Result<String> {
    cfg.validate()?;
    let mut out = String::new();
    let mut seen = Vec::new();
    for (label, sub) in cfg.expand() {
        let records = code_records(&sub)?;
        let key: Vec<String> = records.iter().map(|r| r.chips.clone()).collect();
        if seen.contains(&key) {
            continue;
        }
        seen.push(key);
        if !label.is_empty() {
            let _ = writeln!(out, "[{label}]");
        }
        for r in records {
            let _ = writeln!(
                out,
                "NM{} d={}um {} {}",
                r.nm_index, r.distance_um, r.label, r.chips
            );
        }
    }
    Ok(out)
}

/// Machine-readable failure description printed by the binary.
#[derive(Debug, Clone, Serialize)]
pub struct ErrorRecord {
    pub error: &'static str,
    pub message: String,
    #[serde(skip_serializing_if = "Vec::is_empty")]
    pub issues: Vec<FieldIssue>,
}

impl ErrorRecord {
    pub fn from_error(e: &Error) -> Self {
        let kind = match e {
            Error::InvalidParameter { .. } => "invalid_parameter",
            Error::Ordering { .. } => "ordering",
            Error::Generation(_) => "generation",
            Error::Range { .. } => "range",
            Error::Capacity { .. } => "capacity",
            Error::Unsupported(_) => "unsupported",
            Error::Shape(_) => "shape",
            Error::RankDeficient { .. } => "rank_deficient",
            Error::Numerical(_) => "numerical",
            Error::Parse(_) => "parse",
            Error::Validation(_) => "validation",
            Error::Io(_) => "io",
        };
        let issues = match e {
            Error::Validation(i) => i.clone(),
            _ => Vec::new(),
        };
        Self {
            error: kind,
            message: e.to_string(),
            issues,
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::harness::SweepPoint;

    fn report() -> BerReport {
        BerReport {
            digest: "abc".into(),
            seed: 7,
            points: vec![
                SweepPoint::from_counts(
                    10.0,
                    &crate::harness::ErrorCounts {
                        bits: 100,
                        errors: vec![3, 40],
                    },
                ),
                SweepPoint::from_counts(
                    1.0,
                    &crate::harness::ErrorCounts {
                        bits: 100,
                        errors: vec![9, 50],
                    },
                ),
            ],
            wall_time: Default::default(),
        }
    }

    #[test]
    fn csv_layout_and_round_trip() {
        let f = ResultFile::from_report(&report());
        let text = f.to_csv_string();
        let mut lines = text.lines();
        assert_eq!(lines.next().unwrap(), "# schema=1 digest=abc seed=7");
        assert_eq!(
            lines.next().unwrap(),
            "Q,nm_index,ber,ci_low,ci_high,bits,errors"
        );
        let qs: Vec<(f64, usize)> = f.rows.iter().map(|r| (r.q, r.nm_index)).collect();
        assert_eq!(qs, vec![(1.0, 1), (1.0, 2), (10.0, 1), (10.0, 2)]);
        assert_eq!(ResultFile::parse(&text).unwrap(), f);
    }

    #[test]
    fn emission_summary_values() {
        let mut cfg = ScenarioConfig::default();
        cfg.sweep.q = Some(vec![31000.0]);
        let uni = emission_summary(&cfg).unwrap();
        assert!(uni
            .iter()
            .all(|r| (r.molecules_per_bit - 31000.0).abs() < 1e-9));
        cfg.emission.strategy = crate::emission::EmissionStrategy::ChannelInverse;
        let ci = emission_summary(&cfg).unwrap();
        let cube = (2.2f64 / 3.5).powi(3);
        assert!((ci[0].molecules_per_bit - 31000.0 * cube).abs() < 1e-6);
        assert!((ci[5].molecules_per_bit - 31000.0).abs() < 1e-9);
    }

    #[test]
    fn error_record_lists_issues() {
        let err = ScenarioConfig::from_toml_str("[detector]\nL_Rx = 12\n").unwrap_err();
        let rec = ErrorRecord::from_error(&err);
        assert_eq!(rec.error, "validation");
        assert_eq!(rec.issues[0].path, "detector.L_Rx");
        let json = serde_json::to_string(&rec).unwrap();
        assert!(json.contains("detector.L_Rx"));
    }

    #[test]
    fn codes_dump_lists_every_nm() {
        let text = codes_dump(&ScenarioConfig::default()).unwrap();
        assert_eq!(text.lines().count(), 6);
        assert!(text
            .lines()
            .all(|l| l.split_whitespace().last().unwrap().len() == 31));
    }
}
