//! Molecule budgets and emission offsets.
//!
//! Offsets delay every NM so that all CIR peaks reach the receiver at the
//! peak time of the farthest NM. Under channel-inverse emission the nearer
//! NMs also scale their chip budget by `(d_k / d_K)^3` so the peaks are equal.

use serde::{Deserialize, Serialize};

use crate::channel::{peak_time, TapVector};
use crate::error::{invalid, Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum EmissionStrategy {
    Uniform,
    ChannelInverse,
}

impl EmissionStrategy {
    pub fn name(&self) -> &'static str {
        match self {
            EmissionStrategy::Uniform => "uniform",
            EmissionStrategy::ChannelInverse => "channel_inverse",
        }
    }
}

fn check_order(d_k: f64, d_far: f64) -> Result<()> {
    if d_k.is_nan() || d_k <= 0.0 || !d_far.is_finite() {
        return Err(invalid(
            "d",
            format!("distances must be positive, got {d_k}, {d_far}"),
        ));
    }
    if d_k > d_far {
        return Err(Error::Ordering { d_k, d_far });
    }
    Ok(())
}

/// Molecules per chip for NM `k` given the per-bit budget `q`.
pub fn chip_budget(
    strategy: EmissionStrategy,
    q: f64,
    n: usize,
    d_k: f64,
    d_far: f64,
) -> Result<f64> {
    if !q.is_finite() || q < 0.0 {
        return Err(invalid("Q", format!("must be finite and >= 0, got {q}")));
    }
    if n == 0 {
        return Err(invalid("N", "must be at least 1"));
    }
    check_order(d_k, d_far)?;
    let base = q / n as f64;
    Ok(match strategy {
        EmissionStrategy::Uniform => base,
        EmissionStrategy::ChannelInverse => base * (d_k / d_far).powi(3),
    })
}

/// Emission delay `t_d(K) - t_d(k)` relative to the farthest NM.
pub fn time_offset(d_k: f64, d_far: f64, diffusion: f64) -> Result<f64> {
    check_order(d_k, d_far)?;
    Ok(peak_time(d_far, diffusion)? - peak_time(d_k, diffusion)?)
}

/// Per-NM chip budgets and offsets for one sweep value of `Q`.
#[derive(Debug, Clone, PartialEq)]
pub struct EmissionPlan {
    pub strategy: EmissionStrategy,
    pub q: f64,
    pub n: usize,
    pub qc: Vec<f64>,
    pub offsets: Vec<f64>,
}

impl EmissionPlan {
    /// `distances` must be sorted ascending (farthest NM last).
    pub fn new(
        strategy: EmissionStrategy,
        q: f64,
        n: usize,
        distances: &[f64],
        diffusion: f64,
    ) -> Result<Self> {
        let d_far = *distances
            .last()
            .ok_or_else(|| invalid("nms", "at least one NM required"))?;
        if distances.windows(2).any(|w| w[0] > w[1]) {
            return Err(invalid("nms", "distances must be sorted ascending"));
        }
        let qc = distances
            .iter()
            .map(|&d| chip_budget(strategy, q, n, d, d_far))
            .collect::<Result<_>>()?;
        let offsets = distances
            .iter()
            .map(|&d| time_offset(d, d_far, diffusion))
            .collect::<Result<_>>()?;
        Ok(Self {
            strategy,
            q,
            n,
            qc,
            offsets,
        })
    }

    /// Molecules actually emitted per bit by each NM, `N * Qc_k`.
    pub fn molecules_per_bit(&self) -> Vec<f64> {
        self.qc.iter().map(|&c| c * self.n as f64).collect()
    }

    /// Fraction of the `K * Q` uniform budget saved by this plan.
    pub fn savings_fraction(&self) -> f64 {
        if self.q == 0.0 {
            return 0.0;
        }
        let used: f64 = self.molecules_per_bit().iter().sum();
        1.0 - used / (self.qc.len() as f64 * self.q)
    }
}

/// Expected peak concentration of each NM at the receiver.
pub fn peak_concentration(plan: &EmissionPlan, taps: &[TapVector]) -> Result<Vec<f64>> {
    if taps.len() != plan.qc.len() {
        return Err(Error::Shape(format!(
            "{} tap vectors for {} NMs",
            taps.len(),
            plan.qc.len()
        )));
    }
    Ok(taps.iter().map(TapVector::peak).collect())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::channel::{discrete_taps, LinkGeometry, Medium};

    const D: f64 = 4.5e-9;
    const TABLE: [f64; 6] = [2.2e-6, 2.4e-6, 2.6e-6, 2.8e-6, 3.3e-6, 3.5e-6];

    fn taps_for(plan: &EmissionPlan, d: &[f64]) -> Vec<TapVector> {
        let m = Medium::new(D).unwrap();
        d.iter()
            .zip(&plan.qc)
            .map(|(&d, &qc)| {
                discrete_taps(
                    &LinkGeometry::new(d, 0.4e-6).unwrap(),
                    &m,
                    0.06 / 31.0,
                    10,
                    qc,
                )
                .unwrap()
            })
            .collect()
    }

    #[test]
    fn budgets() {
        let u = chip_budget(EmissionStrategy::Uniform, 31000.0, 31, 2.2e-6, 3.5e-6).unwrap();
        assert_eq!(u, 1000.0);
        let ci = chip_budget(
            EmissionStrategy::ChannelInverse,
            31000.0,
            31,
            2.2e-6,
            3.5e-6,
        )
        .unwrap();
        let cube = (2.2f64 / 3.5).powi(3);
        assert!((ci - 1000.0 * cube).abs() < 1e-9, "{ci}");
        assert!((ci - 248.35).abs() < 0.01, "{ci}");
        let anchor = chip_budget(
            EmissionStrategy::ChannelInverse,
            31000.0,
            31,
            3.5e-6,
            3.5e-6,
        )
        .unwrap();
        assert_eq!(anchor, 1000.0);
        assert!(matches!(
            chip_budget(EmissionStrategy::Uniform, 1.0, 31, 4e-6, 3.5e-6),
            Err(Error::Ordering { .. })
        ));
    }

    #[test]
    fn offsets() {
        let t = time_offset(2.2e-6, 3.5e-6, D).unwrap();
        assert!((t - 2.7444e-4).abs() < 1e-8, "{t}");
        assert_eq!(time_offset(3.5e-6, 3.5e-6, D).unwrap(), 0.0);
        let plan = EmissionPlan::new(EmissionStrategy::Uniform, 1.0, 31, &TABLE, D).unwrap();
        assert!(plan.offsets.windows(2).all(|w| w[0] > w[1]));
        assert_eq!(*plan.offsets.last().unwrap(), 0.0);
    }

    #[test]
    fn channel_inverse_equalises_peaks() {
        let plan =
            EmissionPlan::new(EmissionStrategy::ChannelInverse, 31000.0, 31, &TABLE, D).unwrap();
        let peaks = peak_concentration(&plan, &taps_for(&plan, &TABLE)).unwrap();
        let max = peaks.iter().cloned().fold(f64::MIN, f64::max);
        let min = peaks.iter().cloned().fold(f64::MAX, f64::min);
        assert!(max / min - 1.0 < 1e-9);
    }

    #[test]
    fn uniform_near_far_ratio() {
        let d = [2.2e-6, 3.5e-6];
        let plan = EmissionPlan::new(EmissionStrategy::Uniform, 31000.0, 31, &d, D).unwrap();
        let peaks = peak_concentration(&plan, &taps_for(&plan, &d)).unwrap();
        assert!((peaks[0] / peaks[1] - 4.026).abs() < 1e-3);
    }

    #[test]
    fn single_nm_and_savings() {
        let plan =
            EmissionPlan::new(EmissionStrategy::ChannelInverse, 500.0, 31, &[3e-6], D).unwrap();
        assert_eq!(plan.qc.len(), 1);
        assert_eq!(plan.savings_fraction(), 0.0);
        let plan =
            EmissionPlan::new(EmissionStrategy::ChannelInverse, 31000.0, 31, &TABLE, D).unwrap();
        let expect = 1.0 - TABLE.iter().map(|d| (d / 3.5e-6f64).powi(3)).sum::<f64>() / 6.0;
        assert!((plan.savings_fraction() - expect).abs() < 1e-12);
        let per_bit = plan.molecules_per_bit();
        assert!((per_bit[0] - 7698.85).abs() < 0.01, "{}", per_bit[0]);
        assert!((per_bit[5] - 31000.0).abs() < 1e-9);
    }
}
