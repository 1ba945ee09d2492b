//! Diffusive channel impulse response and discrete channel taps.
//!
//! A point source releasing a unit pulse in an unbounded 3-D medium produces
//! the concentration `(4 pi D t)^(-3/2) exp(-d^2 / (4 D t))` at distance `d`.
//! The receiver samples that concentration once per chip, starting at the
//! pulse peak, so tap `i` is the response at `i * Tc + d^2 / (6 D)`.
//!
//! All quantities are SI: metres, seconds, m^-3.

use std::f64::consts::{E, PI};

use crate::error::{invalid, Result};

/// Diffusion medium.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Medium {
    /// Diffusion coefficient, m^2/s.
    pub diffusion: f64,
}

impl Medium {
    pub fn new(diffusion: f64) -> Result<Self> {
        check_positive("D", diffusion)?;
        Ok(Self { diffusion })
    }
}

/// Transmitter to receiver geometry for one NM.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LinkGeometry {
    /// Centre-to-transmitter distance, m.
    pub distance: f64,
    /// Radius of the passive receiver sphere, m.
    pub rho: f64,
}

impl LinkGeometry {
    pub fn new(distance: f64, rho: f64) -> Result<Self> {
        check_positive("d", distance)?;
        check_positive("rho", rho)?;
        if distance <= rho {
            return Err(invalid(
                "d",
                format!("transmitter at {distance:e} m lies inside the receiver (rho = {rho:e} m)"),
            ));
        }
        Ok(Self { distance, rho })
    }
}

/// Expected concentration samples per emitted chip pulse, `taps[0]` at the peak.
#[derive(Debug, Clone, PartialEq)]
pub struct TapVector {
    pub taps: Vec<f64>,
    /// Molecules per chip used to scale the taps.
    pub qc: f64,
    /// Distance the taps were evaluated at, m.
    pub distance: f64,
}

impl TapVector {
    /// ISI depth `L` (number of taps minus one).
    pub fn depth(&self) -> usize {
        self.taps.len() - 1
    }

    pub fn peak(&self) -> f64 {
        self.taps[0]
    }

    pub fn sum(&self) -> f64 {
        self.taps.iter().sum()
    }

    /// Keeps only the first `depth + 1` taps (receiver-side ISI model).
    pub fn truncated(&self, depth: usize) -> TapVector {
        let keep = (depth + 1).min(self.taps.len());
        TapVector {
            taps: self.taps[..keep].to_vec(),
            qc: self.qc,
            distance: self.distance,
        }
    }
}

fn check_positive(name: &'static str, value: f64) -> Result<()> {
    if !value.is_finite() || value <= 0.0 {
        return Err(invalid(
            name,
            format!("must be finite and > 0, got {value}"),
        ));
    }
    Ok(())
}

/// Per-molecule concentration at distance `d` a time `t` after a unit release.
///
/// Causal: zero for `t <= 0`.
pub fn cir_value(d: f64, diffusion: f64, t: f64) -> Result<f64> {
    check_positive("d", d)?;
    check_positive("D", diffusion)?;
    Ok(cir_unchecked(d, diffusion, t))
}

#[inline]
pub(crate) fn cir_unchecked(d: f64, diffusion: f64, t: f64) -> f64 {
    if t <= 0.0 {
        return 0.0;
    }
    let spread = 4.0 * diffusion * t;
    (PI * spread).powf(-1.5) * (-d * d / spread).exp()
}

/// Time of the CIR maximum, `d^2 / (6 D)`.
pub fn peak_time(d: f64, diffusion: f64) -> Result<f64> {
    check_positive("d", d)?;
    check_positive("D", diffusion)?;
    Ok(d * d / (6.0 * diffusion))
}

/// Closed-form CIR maximum, `(3 / (2 pi e))^(3/2) / d^3`.
pub fn peak_value(d: f64) -> Result<f64> {
    check_positive("d", d)?;
    Ok((3.0 / (2.0 * PI * E)).powf(1.5) / (d * d * d))
}

/// Chip-spaced taps sampled from the CIR peak onwards.
pub fn discrete_taps(
    geom: &LinkGeometry,
    medium: &Medium,
    chip_duration: f64,
    depth: usize,
    qc: f64,
) -> Result<TapVector> {
    check_positive("Tc", chip_duration)?;
    if !qc.is_finite() || qc < 0.0 {
        return Err(invalid("Qc", format!("must be finite and >= 0, got {qc}")));
    }
    let d = geom.distance;
    let t_peak = peak_time(d, medium.diffusion)?;
    let taps = (0..=depth)
        .map(|i| {
            if i == 0 {
                // exact closed form at the peak keeps tap 0 free of rounding in t
                qc * (3.0 / (2.0 * PI * E)).powf(1.5) / (d * d * d)
            } else {
                qc * cir_unchecked(d, medium.diffusion, i as f64 * chip_duration + t_peak)
            }
        })
        .collect();
    Ok(TapVector {
        taps,
        qc,
        distance: d,
    })
}

/// Volume of the spherical detection space.
pub fn detection_volume(rho: f64) -> f64 {
    4.0 / 3.0 * PI * rho.powi(3)
}
