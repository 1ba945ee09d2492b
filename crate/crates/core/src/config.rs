//! Scenario configuration: TOML schema, defaults, validation and study
//! expansion.
//!
//! Lengths are written in micrometres and kept that way in memory so a config
//! survives a write/load round trip unchanged; [`ScenarioConfig::rho_m`] and
//! [`ScenarioConfig::distances_m`] give SI values.

use std::path::Path;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::codes::{
    default_gold_pair, AssignmentStrategy, CodeFamily, CodePlan, Gf2Poly, MlsLayout,
};
use crate::detectors::DetectorScheme;
use crate::emission::EmissionStrategy;
use crate::error::{Error, FieldIssue, Result};

pub const SCHEMA_VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct MediumConfig {
    /// Diffusion coefficient, m^2/s.
    #[serde(rename = "D")]
    pub diffusion: f64,
}

impl Default for MediumConfig {
    fn default() -> Self {
        Self { diffusion: 4.5e-9 }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ReceiverConfig {
    /// Detection-sphere radius, µm.
    pub rho: f64,
}

impl Default for ReceiverConfig {
    fn default() -> Self {
        Self { rho: 0.4 }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct NmsConfig {
    /// NM-to-receiver distances, µm.
    pub distances: Vec<f64>,
}

impl Default for NmsConfig {
    fn default() -> Self {
        Self {
            distances: vec![2.2, 2.4, 2.6, 2.8, 3.3, 3.5],
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct TimingConfig {
    /// Bit duration, s.
    #[serde(rename = "Tb")]
    pub tb: f64,
    /// Chips per bit.
    #[serde(rename = "N")]
    pub n: usize,
}

impl Default for TimingConfig {
    fn default() -> Self {
        Self { tb: 0.06, n: 31 }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ChannelConfig {
    /// ISI depth of the simulated truth, chips.
    #[serde(rename = "L")]
    pub l: usize,
}

impl Default for ChannelConfig {
    fn default() -> Self {
        Self { l: 10 }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct DetectorConfig {
    pub scheme: DetectorScheme,
    /// ISI depth the detector models; equals `L` when absent.
    #[serde(rename = "L_Rx", skip_serializing_if = "Option::is_none")]
    pub l_rx: Option<usize>,
}

impl Default for DetectorConfig {
    fn default() -> Self {
        Self {
            scheme: DetectorScheme::MmseJoint,
            l_rx: None,
        }
    }
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct CodeParams {
    pub layout: MlsLayout,
    /// Exponents of the m-sequence polynomial for the shift layout.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub poly: Option<Vec<u32>>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub gold_pair: Option<[Vec<u32>; 2]>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub gold_indices: Option<Vec<usize>>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct CodesConfig {
    pub family: CodeFamily,
    /// `by_index` for m-sequences and Gold codes, `btc` for Walsh codes when absent.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub assignment: Option<AssignmentStrategy>,
    pub params: CodeParams,
}

impl Default for CodesConfig {
    fn default() -> Self {
        Self {
            family: CodeFamily::Mls,
            assignment: None,
            params: CodeParams::default(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct EmissionConfig {
    pub strategy: EmissionStrategy,
}

impl Default for EmissionConfig {
    fn default() -> Self {
        Self {
            strategy: EmissionStrategy::Uniform,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum SweepScale {
    #[default]
    Log,
    Linear,
}

/// Molecules-per-bit sweep: an explicit list or a `min..max` grid.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SweepConfig {
    #[serde(rename = "Q", skip_serializing_if = "Option::is_none")]
    pub q: Option<Vec<f64>>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub min: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub max: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub steps: Option<usize>,
    pub scale: SweepScale,
}

impl Default for SweepConfig {
    fn default() -> Self {
        Self {
            q: None,
            min: None,
            max: None,
            steps: None,
            scale: SweepScale::Log,
        }
    }
}

const DEFAULT_SWEEP: (f64, f64, usize) = (1e4, 1e6, 8);

/// Rounds to 12 significant digits so grid values print compactly.
fn tidy(x: f64) -> f64 {
    format!("{x:.11e}").parse().unwrap_or(x)
}

impl SweepConfig {
    /// The Q grid, ascending.
    pub fn values(&self) -> Vec<f64> {
        if let Some(q) = &self.q {
            let mut q = q.clone();
            q.sort_by(f64::total_cmp);
            return q;
        }
        let (min, max, steps) = match (self.min, self.max, self.steps) {
            (Some(a), Some(b), Some(s)) => (a, b, s),
            _ => DEFAULT_SWEEP,
        };
        if steps == 1 {
            return vec![min];
        }
        (0..steps)
            .map(|i| {
                let f = i as f64 / (steps - 1) as f64;
                tidy(match self.scale {
                    SweepScale::Log => (min.ln() + f * (max.ln() - min.ln())).exp(),
                    SweepScale::Linear => min + f * (max - min),
                })
            })
            .collect()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct RunConfig {
    pub seed: u64,
    /// Minimum counted bits per NM and sweep point.
    pub bits: u64,
    /// Bit cap per NM and sweep point.
    pub max_bits: u64,
    /// Errors wanted per NM before stopping early.
    pub min_errors: u64,
    /// Bit slots per simulated frame, including the uncounted first one.
    pub frame_bits: usize,
    /// Multiplier on the synthesized noise variance; 0 disables noise.
    pub noise_scale: f64,
}

impl Default for RunConfig {
    fn default() -> Self {
        Self {
            seed: 1,
            bits: 10_000,
            max_bits: 1_000_000,
            min_errors: 100,
            frame_bits: 101,
            noise_scale: 1.0,
        }
    }
}

/// Axes expanded into one result file per combination.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct StudyConfig {
    #[serde(skip_serializing_if = "Vec::is_empty")]
    pub schemes: Vec<DetectorScheme>,
    #[serde(skip_serializing_if = "Vec::is_empty")]
    pub strategies: Vec<EmissionStrategy>,
    #[serde(rename = "L_Rx", skip_serializing_if = "Vec::is_empty")]
    pub l_rx: Vec<usize>,
    #[serde(rename = "N", skip_serializing_if = "Vec::is_empty")]
    pub n: Vec<usize>,
    #[serde(skip_serializing_if = "Vec::is_empty")]
    pub assignments: Vec<AssignmentStrategy>,
}

impl StudyConfig {
    pub fn is_empty(&self) -> bool {
        self.schemes.is_empty()
            && self.strategies.is_empty()
            && self.l_rx.is_empty()
            && self.n.is_empty()
            && self.assignments.is_empty()
    }
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ScenarioConfig {
    pub medium: MediumConfig,
    pub receiver: ReceiverConfig,
    pub nms: NmsConfig,
    pub timing: TimingConfig,
    pub channel: ChannelConfig,
    pub detector: DetectorConfig,
    pub codes: CodesConfig,
    pub emission: EmissionConfig,
    pub sweep: SweepConfig,
    pub run: RunConfig,
    #[serde(skip_serializing_if = "StudyConfig::is_empty")]
    pub study: StudyConfig,
}

const UM: f64 = 1e-6;

fn poly_at(path: &str, exps: &[u32], issues: &mut Vec<FieldIssue>) -> Option<Gf2Poly> {
    match Gf2Poly::from_exponents(exps) {
        Ok(p) => Some(p),
        Err(e) => {
            issues.push(issue(path, e.to_string()));
            None
        }
    }
}

fn issue(path: &str, reason: impl Into<String>) -> FieldIssue {
    FieldIssue {
        path: path.to_string(),
        reason: reason.into(),
    }
}

impl ScenarioConfig {
    pub fn from_toml_str(text: &str) -> Result<Self> {
        let mut cfg: ScenarioConfig =
            toml::from_str(text).map_err(|e| Error::Parse(e.to_string()))?;
        cfg.normalise();
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)?;
        Self::from_toml_str(&text).map_err(|e| match e {
            Error::Parse(msg) => Error::Parse(format!("{}: {msg}", path.display())),
            other => other,
        })
    }

    pub fn to_toml_string(&self) -> String {
        toml::to_string(self).expect("config serialises")
    }

    pub fn write(&self, path: &Path) -> Result<()> {
        std::fs::write(path, self.to_toml_string())?;
        Ok(())
    }

    /// Sorts NMs ascending by distance so NM 1 is the closest.
    pub fn normalise(&mut self) {
        self.nms.distances.sort_by(f64::total_cmp);
    }

    pub fn rho_m(&self) -> f64 {
        self.receiver.rho * UM
    }

    pub fn distances_m(&self) -> Vec<f64> {
        self.nms.distances.iter().map(|d| d * UM).collect()
    }

    pub fn chip_duration(&self) -> f64 {
        self.timing.tb / self.timing.n as f64
    }

    pub fn l_rx(&self) -> usize {
        self.detector.l_rx.unwrap_or(self.channel.l)
    }

    pub fn assignment(&self) -> AssignmentStrategy {
        self.codes.assignment.unwrap_or(match self.codes.family {
            CodeFamily::Walsh => AssignmentStrategy::Btc,
            _ => AssignmentStrategy::ByIndex,
        })
    }

    /// Code plan derived from the `codes` section; assumes a validated config.
    pub fn code_plan(&self) -> CodePlan {
        let p = &self.codes.params;
        let mut plan = CodePlan::new(self.codes.family, self.assignment());
        plan.mls_layout = p.layout;
        plan.mls_poly = p
            .poly
            .as_ref()
            .and_then(|e| Gf2Poly::from_exponents(e).ok());
        plan.gold_pair = p.gold_pair.as_ref().and_then(|[a, b]| {
            Some((
                Gf2Poly::from_exponents(a).ok()?,
                Gf2Poly::from_exponents(b).ok()?,
            ))
        });
        plan.gold_indices = p.gold_indices.clone();
        plan
    }

    /// SHA-256 over the canonical JSON form.
    pub fn digest(&self) -> String {
        let json = serde_json::to_string(self).expect("config serialises");
        hex::encode(Sha256::digest(json.as_bytes()))
    }

    /// Checks every invariant and reports all failures together.
    pub fn validate(&self) -> Result<()> {
        let mut issues = Vec::new();
        let positive = |path: &str, v: f64, issues: &mut Vec<FieldIssue>| {
            if !(v.is_finite() && v > 0.0) {
                issues.push(issue(path, format!("must be finite and > 0, got {v}")));
            }
        };
        positive("medium.D", self.medium.diffusion, &mut issues);
        positive("receiver.rho", self.receiver.rho, &mut issues);
        positive("timing.Tb", self.timing.tb, &mut issues);

        let d = &self.nms.distances;
        if d.is_empty() {
            issues.push(issue("nms.distances", "at least one NM required"));
        }
        for (i, &x) in d.iter().enumerate() {
            let path = format!("nms.distances[{i}]");
            if !(x.is_finite() && x > 0.0) {
                issues.push(issue(&path, format!("must be finite and > 0, got {x}")));
            } else if x <= self.receiver.rho {
                issues.push(issue(
                    &path,
                    format!("{x} µm lies inside the detection sphere"),
                ));
            }
        }

        let n = self.timing.n;
        if n < 2 {
            issues.push(issue("timing.N", "must be at least 2"));
        }
        if n >= 2 && self.channel.l > n - 1 {
            issues.push(issue(
                "channel.L",
                format!("{} exceeds N - 1 = {}", self.channel.l, n - 1),
            ));
        }
        if let Some(l_rx) = self.detector.l_rx {
            if l_rx > self.channel.l {
                issues.push(issue(
                    "detector.L_Rx",
                    format!("{l_rx} exceeds L = {}", self.channel.l),
                ));
            }
        }

        self.validate_codes(&mut issues);
        self.validate_sweep(&mut issues);

        let r = &self.run;
        if r.bits == 0 {
            issues.push(issue("run.bits", "must be at least 1"));
        }
        if r.max_bits < r.bits {
            issues.push(issue(
                "run.max_bits",
                format!("{} is below run.bits = {}", r.max_bits, r.bits),
            ));
        }
        if r.frame_bits < 2 {
            issues.push(issue(
                "run.frame_bits",
                "must be at least 2 (the first slot is not counted)",
            ));
        }
        if !(r.noise_scale.is_finite() && r.noise_scale >= 0.0) {
            issues.push(issue(
                "run.noise_scale",
                format!("must be finite and >= 0, got {}", r.noise_scale),
            ));
        }
        for (i, &l) in self.study.l_rx.iter().enumerate() {
            if l > self.channel.l {
                issues.push(issue(
                    &format!("study.L_Rx[{i}]"),
                    format!("{l} exceeds L = {}", self.channel.l),
                ));
            }
        }
        for (i, &sf) in self.study.n.iter().enumerate() {
            let mut probe = self.clone();
            probe.timing.n = sf;
            probe.study = StudyConfig::default();
            if let Err(Error::Validation(inner)) = probe.validate() {
                for iss in inner {
                    issues.push(issue(
                        &format!("study.N[{i}]"),
                        format!("{}: {}", iss.path, iss.reason),
                    ));
                }
            }
        }

        if issues.is_empty() {
            Ok(())
        } else {
            Err(Error::Validation(issues))
        }
    }

    fn validate_codes(&self, issues: &mut Vec<FieldIssue>) {
        let n = self.timing.n;
        let k = self.nms.distances.len();
        let p = &self.codes.params;
        let lfsr_ok = n >= 3 && (n + 1).is_power_of_two();
        match self.codes.family {
            CodeFamily::Mls | CodeFamily::Gold if !lfsr_ok => {
                issues.push(issue("timing.N", format!("{n} is not of the form 2^m - 1")));
                return;
            }
            CodeFamily::Walsh if !n.is_power_of_two() => {
                issues.push(issue("timing.N", format!("{n} is not a power of two")));
                return;
            }
            _ => {}
        }
        let m = (n + 1).trailing_zeros();
        if let Some(e) = &p.poly {
            if let Some(poly) = poly_at("codes.params.poly", e, issues) {
                if poly.degree() != m {
                    issues.push(issue(
                        "codes.params.poly",
                        format!("degree {} does not match N = {n}", poly.degree()),
                    ));
                } else if !crate::codes::is_primitive(poly) {
                    issues.push(issue(
                        "codes.params.poly",
                        format!("{poly} is not primitive"),
                    ));
                }
            }
        }
        if let Some([a, b]) = &p.gold_pair {
            for (j, e) in [a, b].into_iter().enumerate() {
                let path = format!("codes.params.gold_pair[{j}]");
                if let Some(poly) = poly_at(&path, e, issues) {
                    if poly.degree() != m {
                        issues.push(issue(
                            &path,
                            format!("degree {} does not match N = {n}", poly.degree()),
                        ));
                    }
                }
            }
        }
        if let Some(idx) = &p.gold_indices {
            if idx.len() < k {
                issues.push(issue(
                    "codes.params.gold_indices",
                    format!("{} indices for {k} NMs", idx.len()),
                ));
            }
            for (j, &i) in idx.iter().enumerate() {
                if i >= n + 2 {
                    issues.push(issue(
                        &format!("codes.params.gold_indices[{j}]"),
                        format!("{i} outside family of {}", n + 2),
                    ));
                }
            }
        }
        if self.codes.family != CodeFamily::Gold {
            if p.gold_pair.is_some() {
                issues.push(issue(
                    "codes.params.gold_pair",
                    "only valid for the gold family",
                ));
            }
            if p.gold_indices.is_some() {
                issues.push(issue(
                    "codes.params.gold_indices",
                    "only valid for the gold family",
                ));
            }
        }
        if self.codes.family != CodeFamily::Mls && p.poly.is_some() {
            issues.push(issue("codes.params.poly", "only valid for the mls family"));
        }
        if self.codes.family == CodeFamily::Gold
            && p.gold_pair.is_none()
            && m != default_gold_pair().0.degree()
        {
            issues.push(issue(
                "codes.params.gold_pair",
                format!("required for N = {n}"),
            ));
        }
        let available = match self.codes.family {
            CodeFamily::Mls => match p.layout {
                MlsLayout::Shifts => n,
                MlsLayout::Polynomials => {
                    crate::codes::primitive_polynomials(m).map_or(0, |v| v.len())
                }
            },
            CodeFamily::Gold => p.gold_indices.as_ref().map_or(n + 2, Vec::len),
            CodeFamily::Walsh => n - 1,
        };
        if k > available {
            issues.push(issue(
                "nms.distances",
                format!("{k} NMs but only {available} codes available"),
            ));
        }
    }

    fn validate_sweep(&self, issues: &mut Vec<FieldIssue>) {
        let s = &self.sweep;
        let grid = s.min.is_some() || s.max.is_some() || s.steps.is_some();
        match (&s.q, grid) {
            (Some(_), true) => {
                issues.push(issue("sweep", "give either Q or min/max/steps, not both"))
            }
            (Some(q), false) => {
                if q.is_empty() {
                    issues.push(issue("sweep.Q", "empty list"));
                }
                for (i, &v) in q.iter().enumerate() {
                    if !(v.is_finite() && v >= 0.0) {
                        issues.push(issue(
                            &format!("sweep.Q[{i}]"),
                            format!("must be finite and >= 0, got {v}"),
                        ));
                    }
                }
            }
            (None, false) => {}
            (None, true) => {
                let (Some(min), Some(max), Some(steps)) = (s.min, s.max, s.steps) else {
                    issues.push(issue("sweep", "min, max and steps must all be given"));
                    return;
                };
                if steps == 0 {
                    issues.push(issue("sweep.steps", "must be at least 1"));
                }
                let floor = if s.scale == SweepScale::Log {
                    f64::MIN_POSITIVE
                } else {
                    0.0
                };
                if !(min.is_finite() && min >= floor) {
                    issues.push(issue("sweep.min", format!("invalid lower bound {min}")));
                }
                if !(max.is_finite() && max >= min) {
                    issues.push(issue(
                        "sweep.max",
                        format!("must be finite and >= min, got {max}"),
                    ));
                }
            }
        }
    }

    /// One config per study combination, each tagged with a file-name label.
    /// Without a study the config itself is returned with an empty label.
    pub fn expand(&self) -> Vec<(String, ScenarioConfig)> {
        let st = &self.study;
        let mut base = self.clone();
        base.study = StudyConfig::default();
        if st.is_empty() {
            return vec![(String::new(), base)];
        }
        let mut out = vec![(Vec::<String>::new(), base)];
        fn axis<T: Clone>(
            out: Vec<(Vec<String>, ScenarioConfig)>,
            values: &[T],
            apply: impl Fn(&mut ScenarioConfig, &T) -> String,
        ) -> Vec<(Vec<String>, ScenarioConfig)> {
            if values.is_empty() {
                return out;
            }
            out.into_iter()
                .flat_map(|(tags, cfg)| {
                    values
                        .iter()
                        .map(|v| {
                            let mut c = cfg.clone();
                            let mut t = tags.clone();
                            t.push(apply(&mut c, v));
                            (t, c)
                        })
                        .collect::<Vec<_>>()
                })
                .collect()
        }
        out = axis(out, &st.n, |c, &n| {
            c.timing.n = n;
            format!("N{n}")
        });
        out = axis(out, &st.assignments, |c, &a| {
            c.codes.assignment = Some(a);
            serde_name(&a)
        });
        out = axis(out, &st.strategies, |c, &s| {
            c.emission.strategy = s;
            s.name().to_string()
        });
        out = axis(out, &st.schemes, |c, &s| {
            c.detector.scheme = s;
            s.name().to_string()
        });
        out = axis(out, &st.l_rx, |c, &l| {
            c.detector.l_rx = Some(l);
            format!("Lrx{l}")
        });
        out.into_iter().map(|(t, c)| (t.join("-"), c)).collect()
    }
}

fn serde_name<T: Serialize>(v: &T) -> String {
    serde_json::to_value(v)
        .ok()
        .and_then(|j| j.as_str().map(str::to_string))
        .unwrap_or_default()
}
