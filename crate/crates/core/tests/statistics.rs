//! Monte Carlo checks of the observation model against its closed forms.

use mocdma::config::ScenarioConfig;
use mocdma::detectors::{
    correlation_joint, correlation_per_nm, decision_variables, mmse_weights_per_nm,
    sample_correlation, CorrelationSource, DetectorScheme,
};
use mocdma::harness::Scenario;
use mocdma::linalg::relative_deviation;
use mocdma::signal::{oracle_observation, synthesize_frame, BitFrame};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

fn scenario(scheme: DetectorScheme) -> Scenario {
    let mut cfg = ScenarioConfig::default();
    cfg.detector.scheme = scheme;
    Scenario::from_config(&cfg).unwrap()
}

#[test]
fn sample_correlation_converges_to_model() {
    let s = scenario(DetectorScheme::MmseJoint);
    let p = s.point(3e4).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(11);
    let frame = BitFrame::random(s.nms(), 40_000, &mut rng);
    let obs = synthesize_frame(&frame, &p.truth, 1.0, &mut rng).unwrap();
    let sample = sample_correlation(&obs[1..]).unwrap();
    let model = correlation_joint(&p.receiver);
    let dev = relative_deviation(&sample, &model);
    assert!(dev < 0.03, "sample R_z deviates by {dev}");
    // per-NM sums without cross terms describe the same matrix
    assert!(relative_deviation(&correlation_per_nm(&p.receiver), &model) < 1e-10);
}

#[test]
fn sample_driven_mmse_approaches_model_weights() {
    let s = scenario(DetectorScheme::MmsePerNm);
    let p = s.point(3e4).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    let frame = BitFrame::random(s.nms(), 40_000, &mut rng);
    let obs = synthesize_frame(&frame, &p.truth, 1.0, &mut rng).unwrap();
    let sample = sample_correlation(&obs[1..]).unwrap();
    for k in 0..s.nms() {
        let wm = mmse_weights_per_nm(&p.receiver, k, &CorrelationSource::Model).unwrap();
        let ws = mmse_weights_per_nm(&p.receiver, k, &CorrelationSource::Sample(sample.clone()))
            .unwrap();
        let cos = wm.w.dot(&ws.w) / (wm.w.norm() * ws.w.norm());
        assert!(cos > 0.95, "NM {k}: cosine {cos}");
    }
}

#[test]
fn zero_forcing_is_unbiased() {
    let s = scenario(DetectorScheme::Zf);
    let p = s.point(1e4).unwrap();
    let trials = 100_000;
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let frame = BitFrame::random(s.nms(), trials + 1, &mut rng);
    let obs = synthesize_frame(&frame, &p.truth, 1.0, &mut rng).unwrap();
    let k = s.nms();
    let mut sum = vec![0.0; k];
    let mut sum2 = vec![0.0; k];
    for o in &obs[1..] {
        let eps = decision_variables(&o.z, &p.weights);
        for j in 0..k {
            let x = eps[j] * frame.bit(j, o.u as isize);
            sum[j] += x;
            sum2[j] += x * x;
        }
    }
    let m = trials as f64;
    for j in 0..k {
        let mean = sum[j] / m;
        let se = ((sum2[j] / m - mean * mean) / m).sqrt();
        assert!(
            (mean - 1.0).abs() <= 3.0 * se,
            "NM {j}: mean {mean}, se {se}"
        );
    }
}

#[test]
fn physical_oracle_matches_compact_model_noise_free() {
    for strategy in [
        mocdma::emission::EmissionStrategy::Uniform,
        mocdma::emission::EmissionStrategy::ChannelInverse,
    ] {
        let mut cfg = ScenarioConfig::default();
        cfg.emission.strategy = strategy;
        let s = Scenario::from_config(&cfg).unwrap();
        let p = s.point(1e5).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(8);
        let frame = BitFrame::random(s.nms(), 12, &mut rng);
        // the oracle's history starts at b_-1
        let history: Vec<Vec<f64>> = (0..s.nms())
            .map(|k| (-1..12).map(|u| frame.bit(k, u)).collect())
            .collect();
        let oracle =
            oracle_observation(&history, &s.codes, &s.oracle_link(&p.plan), false, &mut rng)
                .unwrap();
        let compact = synthesize_frame(&frame, &p.truth, 0.0, &mut rng).unwrap();
        for u in 0..12 {
            let a = nalgebra::DVector::from_column_slice(&oracle[u + 1].z);
            let b = nalgebra::DVector::from_column_slice(&compact[u].z);
            let dev = (&a - &b).amax() / b.amax();
            assert!(dev < 1e-10, "{strategy:?} slot {u}: {dev}");
        }
    }
}
