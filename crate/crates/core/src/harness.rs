//! Monte Carlo BER engine.
//!
//! Each sweep point builds the truth model (ISI depth `L`) and the detector
//! weights (depth `L_Rx`) once, then simulates frames of `M` bit slots. The
//! first slot of every frame only seeds `b_-1` and is not counted.
//!
//! Frames are grouped into fixed batches; batch `j` of point `p` always uses
//! the rng streams derived from `(seed, p, frame)`, and batches are folded in
//! index order, so the counts do not depend on the number of workers.

use std::time::{Duration, Instant};

use nalgebra::{DMatrix, DVector};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::Serialize;

use crate::channel::{discrete_taps, LinkGeometry, Medium, TapVector};
use crate::codes::{plan_codes, SpreadingCode};
use crate::config::ScenarioConfig;
use crate::detectors::{
    compute_weights, correlation_joint, correlation_per_nm, mmse_weight_matrix,
    mmse_weight_matrix_lemma, zf_weights, DetectorScheme, ReceiverModel, WeightMatrix,
};
use crate::emission::{EmissionPlan, EmissionStrategy};
use crate::error::Result;
use crate::linalg::relative_deviation;
use crate::signal::{
    build_ck2, build_s0, build_sm1, build_stacked_c, concat_columns, observe_per_nm,
    observe_stacked, observe_two_bit_window, oracle_observation, CompactModel, OracleLink,
};

/// Frames per batch; the unit of work and of the stopping check.
pub const BATCH_FRAMES: u64 = 10;
/// Batches dispatched together to the worker pool.
const ROUND_BATCHES: u64 = 16;
/// Two-sided 95% normal quantile.
const Z95: f64 = 1.959_963_984_540_054;

/// Physical scenario resolved from a config, independent of `Q`.
#[derive(Debug, Clone)]
pub struct Scenario {
    pub medium: Medium,
    /// Detection radius, m.
    pub rho: f64,
    pub geometries: Vec<LinkGeometry>,
    /// Sorted ascending, m.
    pub distances: Vec<f64>,
    pub n: usize,
    pub chip_duration: f64,
    pub depth: usize,
    pub l_rx: usize,
    pub codes: Vec<SpreadingCode>,
    pub strategy: EmissionStrategy,
    pub scheme: DetectorScheme,
}

/// Everything needed to simulate one sweep point.
#[derive(Debug, Clone)]
pub struct PointModel {
    pub q: f64,
    pub plan: EmissionPlan,
    /// Truth taps, depth `L`.
    pub taps: Vec<TapVector>,
    pub truth: CompactModel,
    pub receiver: ReceiverModel,
    pub weights: WeightMatrix,
}

impl Scenario {
    pub fn from_config(cfg: &ScenarioConfig) -> Result<Self> {
        cfg.validate()?;
        let medium = Medium::new(cfg.medium.diffusion)?;
        let rho = cfg.rho_m();
        let mut distances = cfg.distances_m();
        distances.sort_by(f64::total_cmp);
        let geometries = distances
            .iter()
            .map(|&d| LinkGeometry::new(d, rho))
            .collect::<Result<Vec<_>>>()?;
        let codes = plan_codes(&cfg.code_plan(), cfg.timing.n, &distances)?.codes;
        Ok(Self {
            medium,
            rho,
            geometries,
            distances,
            n: cfg.timing.n,
            chip_duration: cfg.chip_duration(),
            depth: cfg.channel.l,
            l_rx: cfg.l_rx(),
            codes,
            strategy: cfg.emission.strategy,
            scheme: cfg.detector.scheme,
        })
    }

    pub fn nms(&self) -> usize {
        self.codes.len()
    }

    pub fn emission_plan(&self, q: f64) -> Result<EmissionPlan> {
        EmissionPlan::new(
            self.strategy,
            q,
            self.n,
            &self.distances,
            self.medium.diffusion,
        )
    }

    pub fn taps(&self, plan: &EmissionPlan) -> Result<Vec<TapVector>> {
        self.geometries
            .iter()
            .zip(&plan.qc)
            .map(|(g, &qc)| discrete_taps(g, &self.medium, self.chip_duration, self.depth, qc))
            .collect()
    }

    pub fn point(&self, q: f64) -> Result<PointModel> {
        let plan = self.emission_plan(q)?;
        let taps = self.taps(&plan)?;
        let truth = CompactModel::new(&self.codes, &taps, self.rho)?;
        let rx_taps: Vec<TapVector> = taps.iter().map(|t| t.truncated(self.l_rx)).collect();
        let receiver = ReceiverModel::new(&self.codes, &rx_taps, self.rho)?;
        let weights = compute_weights(self.scheme, &receiver)?;
        Ok(PointModel {
            q,
            plan,
            taps,
            truth,
            receiver,
            weights,
        })
    }

    pub fn oracle_link(&self, plan: &EmissionPlan) -> OracleLink {
        OracleLink {
            distances: self.distances.clone(),
            diffusion: self.medium.diffusion,
            chip_duration: self.chip_duration,
            qc: plan.qc.clone(),
            offsets: plan.offsets.clone(),
            depth: self.depth,
            rho: self.rho,
        }
    }
}

/// Stopping rule and frame layout of a run.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RunSettings {
    pub min_bits: u64,
    pub max_bits: u64,
    pub min_errors: u64,
    pub frame_bits: usize,
    pub noise_scale: f64,
}

impl RunSettings {
    pub fn from_config(cfg: &ScenarioConfig) -> Self {
        Self {
            min_bits: cfg.run.bits,
            max_bits: cfg.run.max_bits,
            min_errors: cfg.run.min_errors,
            frame_bits: cfg.run.frame_bits,
            noise_scale: cfg.run.noise_scale,
        }
    }

    fn done(&self, c: &ErrorCounts) -> bool {
        c.bits >= self.min_bits
            && (c.bits >= self.max_bits || c.errors.iter().all(|&e| e >= self.min_errors))
    }
}

/// Bits counted (per NM) and errors per NM.
#[derive(Debug, Clone, PartialEq, Eq, Default)]
pub struct ErrorCounts {
    pub bits: u64,
    pub errors: Vec<u64>,
}

impl ErrorCounts {
    fn new(k: usize) -> Self {
        Self {
            bits: 0,
            errors: vec![0; k],
        }
    }

    fn merge(&mut self, other: &ErrorCounts) {
        self.bits += other.bits;
        for (a, b) in self.errors.iter_mut().zip(&other.errors) {
            *a += b;
        }
    }
}

/// Wilson score interval at 95%.
pub fn wilson_interval(errors: u64, bits: u64) -> (f64, f64) {
    if bits == 0 {
        return (0.0, 1.0);
    }
    let n = bits as f64;
    let p = errors as f64 / n;
    let z2 = Z95 * Z95;
    let denom = 1.0 + z2 / n;
    let centre = (p + z2 / (2.0 * n)) / denom;
    let half = Z95 * (p * (1.0 - p) / n + z2 / (4.0 * n * n)).sqrt() / denom;
    (
        (centre - half).max(0.0).min(p),
        (centre + half).min(1.0).max(p),
    )
}

/// BER of every NM at one `Q`.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SweepPoint {
    pub q: f64,
    pub bits: u64,
    pub errors: Vec<u64>,
    pub ber: Vec<f64>,
    pub ci_low: Vec<f64>,
    pub ci_high: Vec<f64>,
}

impl SweepPoint {
    pub fn from_counts(q: f64, counts: &ErrorCounts) -> Self {
        let bits = counts.bits;
        let ber = counts
            .errors
            .iter()
            .map(|&e| {
                if bits == 0 {
                    0.0
                } else {
                    e as f64 / bits as f64
                }
            })
            .collect();
        let (ci_low, ci_high) = counts
            .errors
            .iter()
            .map(|&e| wilson_interval(e, bits))
            .unzip();
        Self {
            q,
            bits,
            errors: counts.errors.clone(),
            ber,
            ci_low,
            ci_high,
        }
    }

    pub fn nms(&self) -> usize {
        self.errors.len()
    }

    /// Binomial standard error of NM `k`'s estimate.
    pub fn std_error(&self, k: usize) -> f64 {
        let p = self.ber[k];
        (p * (1.0 - p) / self.bits.max(1) as f64).sqrt()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct BerReport {
    pub digest: String,
    pub seed: u64,
    pub points: Vec<SweepPoint>,
    #[serde(skip)]
    pub wall_time: Duration,
}

fn splitmix(mut x: u64) -> u64 {
    x = x.wrapping_add(0x9e37_79b9_7f4a_7c15);
    x = (x ^ (x >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    x = (x ^ (x >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    x ^ (x >> 31)
}

/// Independent rng for frame `frame` of sweep point `point`.
pub fn frame_rng(seed: u64, point: u64, frame: u64) -> ChaCha8Rng {
    let s = splitmix(splitmix(splitmix(seed) ^ point) ^ frame);
    ChaCha8Rng::seed_from_u64(s)
}

/// Simulates frames `first..first + count` of a point.
pub fn simulate_frames(
    point: &PointModel,
    settings: &RunSettings,
    seed: u64,
    point_index: u64,
    first: u64,
    count: u64,
) -> ErrorCounts {
    let k = point.truth.k;
    let n = point.truth.n;
    let w = point.weights.row_major();
    let slots = settings.frame_bits;
    let mut counts = ErrorCounts::new(k);
    let mut bits = vec![0.0; k * (slots + 1)];
    let mut z = vec![0.0; n];
    let mut eps = vec![0.0; k];
    for frame in first..first + count {
        let mut rng = frame_rng(seed, point_index, frame);
        // bits[(u + 1) * k + j] is b_j,u for u = -1..M-1
        for b in bits.iter_mut() {
            *b = if rng.random::<bool>() { 1.0 } else { -1.0 };
        }
        // slot u = 0 is the excluded warm-up bit; z_u only depends on b_u and b_u-1
        for u in 1..slots {
            let prev = &bits[u * k..(u + 1) * k];
            let cur = &bits[(u + 1) * k..(u + 2) * k];
            point
                .truth
                .observe_into(cur, prev, settings.noise_scale, &mut rng, &mut z);
            eps.iter_mut().for_each(|e| *e = 0.0);
            for (row, &zr) in z.iter().enumerate() {
                let wr = &w[row * k..(row + 1) * k];
                for (e, &wv) in eps.iter_mut().zip(wr) {
                    *e += wv * zr;
                }
            }
            for j in 0..k {
                let decided = if eps[j] > 0.0 { 1.0 } else { -1.0 };
                if decided != cur[j] {
                    counts.errors[j] += 1;
                }
            }
        }
        counts.bits += (slots - 1) as u64;
    }
    counts
}

/// Runs one sweep point until the stopping rule holds.
pub fn run_point(
    point: &PointModel,
    settings: &RunSettings,
    seed: u64,
    point_index: u64,
) -> ErrorCounts {
    let mut total = ErrorCounts::new(point.truth.k);
    let mut next_batch = 0u64;
    loop {
        let batches: Vec<ErrorCounts> = (next_batch..next_batch + ROUND_BATCHES)
            .into_par_iter()
            .map(|b| {
                simulate_frames(
                    point,
                    settings,
                    seed,
                    point_index,
                    b * BATCH_FRAMES,
                    BATCH_FRAMES,
                )
            })
            .collect();
        next_batch += ROUND_BATCHES;
        for b in &batches {
            total.merge(b);
            if settings.done(&total) {
                return total;
            }
        }
    }
}

/// BER sweep of a single (already expanded) scenario config.
pub fn run_ber(config: &ScenarioConfig, seed: u64) -> Result<BerReport> {
    let start = Instant::now();
    let mut cfg = config.clone();
    cfg.run.seed = seed;
    let scenario = Scenario::from_config(&cfg)?;
    let settings = RunSettings::from_config(&cfg);
    let mut points = Vec::new();
    for (i, q) in cfg.sweep.values().into_iter().enumerate() {
        let model = scenario.point(q)?;
        let counts = run_point(&model, &settings, seed, i as u64);
        log::debug!(
            "Q = {q:e}: {} bits, errors {:?}",
            counts.bits,
            counts.errors
        );
        points.push(SweepPoint::from_counts(q, &counts));
    }
    Ok(BerReport {
        digest: cfg.digest(),
        seed,
        points,
        wall_time: start.elapsed(),
    })
}

/// Deliberate model corruption for checking that the self-test can fail.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SelftestFault {
    None,
    /// Negates every previous-bit block `S_k,-1`.
    NegatePreviousBlock,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SelfCheck {
    pub name: &'static str,
    pub max_deviation: f64,
    pub tolerance: f64,
    pub passed: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SelftestReport {
    pub checks: Vec<SelfCheck>,
}

impl SelftestReport {
    pub fn passed(&self) -> bool {
        self.checks.iter().all(|c| c.passed)
    }

    pub fn check(&self, name: &str) -> Option<&SelfCheck> {
        self.checks.iter().find(|c| c.name == name)
    }
}

pub const SELFTEST_TOLERANCE: f64 = 1e-8;

fn check(name: &'static str, max_deviation: f64) -> SelfCheck {
    SelfCheck {
        name,
        max_deviation,
        tolerance: SELFTEST_TOLERANCE,
        passed: max_deviation.is_finite() && max_deviation < SELFTEST_TOLERANCE,
    }
}

fn vec_deviation(a: &DVector<f64>, b: &DVector<f64>) -> f64 {
    relative_deviation(
        &DMatrix::from_column_slice(a.len(), 1, a.as_slice()),
        &DMatrix::from_column_slice(b.len(), 1, b.as_slice()),
    )
}

/// Representation and identity checks on the default scenario.
pub fn run_matrix_selftest() -> SelftestReport {
    let cfg = ScenarioConfig::default();
    run_matrix_selftest_on(&cfg, 1e6, SelftestFault::None)
}

/// Representation and identity checks on `cfg` at budget `q`.
///
/// Failures (including setup errors) are reported as failed checks.
pub fn run_matrix_selftest_on(
    cfg: &ScenarioConfig,
    q: f64,
    fault: SelftestFault,
) -> SelftestReport {
    match selftest_inner(cfg, q, fault) {
        Ok(checks) => SelftestReport { checks },
        Err(e) => {
            log::error!("selftest setup failed: {e}");
            SelftestReport {
                checks: vec![check("setup", f64::INFINITY)],
            }
        }
    }
}

fn selftest_inner(cfg: &ScenarioConfig, q: f64, fault: SelftestFault) -> Result<Vec<SelfCheck>> {
    let scenario = Scenario::from_config(cfg)?;
    let plan = scenario.emission_plan(q)?;
    let taps = scenario.taps(&plan)?;
    let codes = &scenario.codes;
    let k = codes.len();
    let depth = scenario.depth;
    let s0: Vec<_> = codes
        .iter()
        .map(|c| build_s0(c, depth))
        .collect::<Result<_>>()?;
    let mut sm1: Vec<_> = codes
        .iter()
        .map(|c| build_sm1(c, depth))
        .collect::<Result<_>>()?;
    if fault == SelftestFault::NegatePreviousBlock {
        sm1.iter_mut().for_each(|m| *m *= -1.0);
    }
    let s0_all = concat_columns(&s0)?;
    let sm1_all = concat_columns(&sm1)?;
    let stacked = build_stacked_c(&taps)?;
    let ck2: Vec<_> = taps
        .iter()
        .map(|t| build_ck2(t, scenario.n))
        .collect::<Result<_>>()?;

    let mut rng = ChaCha8Rng::seed_from_u64(0x5e1f);
    let bits = 8;
    let history: Vec<Vec<f64>> = (0..k)
        .map(|_| {
            (0..bits)
                .map(|_| if rng.random::<bool>() { 1.0 } else { -1.0 })
                .collect()
        })
        .collect();
    let link = scenario.oracle_link(&plan);
    let oracle = oracle_observation(&history, codes, &link, false, &mut rng)?;

    let mut oracle_dev = 0.0f64;
    let mut forms_dev = 0.0f64;
    for u in 1..bits {
        let cur: Vec<f64> = history.iter().map(|h| h[u]).collect();
        let prev: Vec<f64> = history.iter().map(|h| h[u - 1]).collect();
        let stacked_z = observe_stacked(
            &s0_all,
            &sm1_all,
            &stacked,
            &DVector::from_column_slice(&prev),
            &DVector::from_column_slice(&cur),
        );
        let per_nm = observe_per_nm(&s0, &sm1, &taps, &prev, &cur);
        let window = observe_two_bit_window(&ck2, codes, &prev, &cur);
        let oz = DVector::from_column_slice(&oracle[u].z);
        oracle_dev = oracle_dev.max(vec_deviation(&stacked_z, &oz));
        forms_dev = forms_dev
            .max(vec_deviation(&per_nm, &window))
            .max(vec_deviation(&stacked_z, &window));
    }

    let rx_taps: Vec<TapVector> = taps.iter().map(|t| t.truncated(scenario.l_rx)).collect();
    let mut receiver = ReceiverModel::new(codes, &rx_taps, scenario.rho)?;
    if fault == SelftestFault::NegatePreviousBlock {
        receiver.sm1.iter_mut().for_each(|m| *m *= -1.0);
    }
    let direct = mmse_weight_matrix(&receiver)?;
    let lemma = mmse_weight_matrix_lemma(&receiver)?;
    let corr = relative_deviation(
        &correlation_per_nm(&receiver),
        &correlation_joint(&receiver),
    );
    let zf = zf_weights(&receiver.s0_all(), &receiver.stacked_c())?;
    let identity = zf.w.transpose() * receiver.signal_matrix() - DMatrix::identity(k, k);
    let zf_dev = identity.iter().fold(0.0f64, |m, x| m.max(x.abs()));

    Ok(vec![
        check("oracle_vs_compact", oracle_dev),
        check("representation_forms", forms_dev),
        check(
            "joint_mmse_direct_vs_lemma",
            relative_deviation(&direct.w, &lemma.w),
        ),
        check("correlation_per_nm_vs_joint", corr),
        check("zf_identity", zf_dev),
    ])
}

#[cfg(test)]
mod tests {
    use super::*;

    fn small_config() -> ScenarioConfig {
        let mut c = ScenarioConfig::default();
        c.sweep.min = Some(1e4);
        c.sweep.max = Some(3e4);
        c.sweep.steps = Some(2);
        c.run.bits = 2_000;
        c.run.max_bits = 4_000;
        c.detector.scheme = DetectorScheme::Zf;
        c
    }

    #[test]
    fn wilson_contains_estimate() {
        for (e, n) in [(0, 100), (5, 100), (100, 100), (37, 1000)] {
            let (lo, hi) = wilson_interval(e, n);
            let p = e as f64 / n as f64;
            assert!(lo <= p && p <= hi && lo >= 0.0 && hi <= 1.0);
        }
        let (lo, hi) = wilson_interval(0, 10_000);
        assert_eq!(lo, 0.0);
        assert!(hi > 0.0 && hi < 5e-4);
        // textbook value for 10 successes out of 100
        let (lo, hi) = wilson_interval(10, 100);
        assert!((lo - 0.05523).abs() < 1e-4 && (hi - 0.17437).abs() < 1e-4);
    }

    #[test]
    fn stopping_rule() {
        let s = RunSettings {
            min_bits: 100,
            max_bits: 1000,
            min_errors: 10,
            frame_bits: 11,
            noise_scale: 1.0,
        };
        let c = |bits, errors: Vec<u64>| ErrorCounts { bits, errors };
        assert!(!s.done(&c(50, vec![20, 20])));
        assert!(s.done(&c(100, vec![10, 11])));
        assert!(!s.done(&c(500, vec![10, 9])));
        assert!(s.done(&c(1000, vec![0, 0])));
    }

    #[test]
    fn deterministic_and_worker_independent() {
        let cfg = small_config();
        let a = run_ber(&cfg, 42).unwrap();
        let b = rayon::ThreadPoolBuilder::new()
            .num_threads(3)
            .build()
            .unwrap()
            .install(|| run_ber(&cfg, 42).unwrap());
        assert_eq!(a.points, b.points);
        assert_eq!(a.digest, b.digest);
        let c = run_ber(&cfg, 43).unwrap();
        assert_ne!(a.points, c.points);
    }

    #[test]
    fn zero_budget_gives_coin_flips() {
        let mut cfg = small_config();
        cfg.sweep.q = Some(vec![0.0]);
        cfg.sweep.min = None;
        cfg.sweep.max = None;
        cfg.sweep.steps = None;
        cfg.run.bits = 20_000;
        cfg.run.max_bits = 20_000;
        let r = run_ber(&cfg, 1).unwrap();
        for k in 0..6 {
            let p = &r.points[0];
            assert!(
                (p.ber[k] - 0.5).abs() < 4.0 * p.std_error(k) + 1e-3,
                "{}",
                p.ber[k]
            );
        }
    }

    #[test]
    fn near_noiseless_zf_is_error_free() {
        let mut cfg = small_config();
        cfg.run.noise_scale = 1e-6;
        cfg.run.bits = 5_000;
        cfg.run.max_bits = 5_000;
        let r = run_ber(&cfg, 9).unwrap();
        for p in &r.points {
            assert!(p.ber.iter().all(|&b| b < 1e-3), "{:?}", p.ber);
        }
    }

    #[test]
    fn first_slot_excluded() {
        let cfg = small_config();
        let scenario = Scenario::from_config(&cfg).unwrap();
        let point = scenario.point(1e6).unwrap();
        let settings = RunSettings::from_config(&cfg);
        let c = simulate_frames(&point, &settings, 1, 0, 0, 3);
        assert_eq!(c.bits, 3 * (cfg.run.frame_bits as u64 - 1));
    }

    #[test]
    fn selftest_default_and_minimal() {
        let r = run_matrix_selftest();
        assert!(r.passed(), "{r:?}");
        let mut c = ScenarioConfig::default();
        c.nms.distances = vec![3.0];
        c.channel.l = 0;
        assert!(run_matrix_selftest_on(&c, 1e5, SelftestFault::None).passed());
    }

    #[test]
    fn selftest_detects_corrupted_isi_block() {
        let r = run_matrix_selftest_on(
            &ScenarioConfig::default(),
            1e6,
            SelftestFault::NegatePreviousBlock,
        );
        assert!(r.check("zf_identity").unwrap().passed);
        assert!(!r.check("oracle_vs_compact").unwrap().passed);
    }
}
