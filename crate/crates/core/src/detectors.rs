//! Linear detectors: matched filters (MRC, EGC), max-SINR, zero-forcing and
//! MMSE, both per NM and jointly.
//!
//! Every detector reduces to an `N x K` weight matrix `W`; bit `k` of slot
//! `u` is decided as `+1` when `w_k^T z_u > 0` and `-1` otherwise.

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::channel::TapVector;
use crate::codes::SpreadingCode;
use crate::error::{Error, Result};
use crate::linalg::solve_spd;
use crate::signal::{
    build_s0, build_sm1, build_stacked_c, concat_columns, noise_sigma2, Observation,
};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum DetectorScheme {
    Mrc,
    Egc,
    MaxSinr,
    Zf,
    MmsePerNm,
    MmseJoint,
}

impl DetectorScheme {
    pub fn name(&self) -> &'static str {
        match self {
            DetectorScheme::Mrc => "mrc",
            DetectorScheme::Egc => "egc",
            DetectorScheme::MaxSinr => "max_sinr",
            DetectorScheme::Zf => "zf",
            DetectorScheme::MmsePerNm => "mmse_per_nm",
            DetectorScheme::MmseJoint => "mmse_joint",
        }
    }
}

/// Weight vector of one NM.
#[derive(Debug, Clone, PartialEq)]
pub struct WeightVector {
    pub w: DVector<f64>,
    pub nm: usize,
    pub scheme: DetectorScheme,
}

/// Column `k` is the weight vector of NM `k`.
#[derive(Debug, Clone, PartialEq)]
pub struct WeightMatrix {
    pub w: DMatrix<f64>,
    pub scheme: DetectorScheme,
}

impl WeightMatrix {
    pub fn from_columns(cols: &[WeightVector], scheme: DetectorScheme) -> Self {
        let cols: Vec<DVector<f64>> = cols.iter().map(|c| c.w.clone()).collect();
        Self {
            w: DMatrix::from_columns(&cols),
            scheme,
        }
    }

    pub fn column(&self, k: usize) -> WeightVector {
        WeightVector {
            w: self.w.column(k).into_owned(),
            nm: k,
            scheme: self.scheme,
        }
    }

    /// Weights in row-major `[n * K + k]` order.
    pub fn row_major(&self) -> Vec<f64> {
        let (n, k) = self.w.shape();
        (0..n)
            .flat_map(|r| (0..k).map(move |c| (r, c)))
            .map(|idx| self.w[idx])
            .collect()
    }
}

/// Receiver-side knowledge: each NM's code structure and (possibly truncated) taps.
#[derive(Debug, Clone)]
pub struct ReceiverModel {
    pub s0: Vec<DMatrix<f64>>,
    pub sm1: Vec<DMatrix<f64>>,
    pub taps: Vec<TapVector>,
    pub sigma2: f64,
}

impl ReceiverModel {
    /// Builds the model with depth taken from the taps; the noise variance is
    /// computed from the same taps.
    pub fn new(codes: &[SpreadingCode], taps: &[TapVector], rho: f64) -> Result<Self> {
        let sigma2 = noise_sigma2(taps, rho);
        Self::with_sigma2(codes, taps, sigma2)
    }

    pub fn with_sigma2(codes: &[SpreadingCode], taps: &[TapVector], sigma2: f64) -> Result<Self> {
        if codes.len() != taps.len() || codes.is_empty() {
            return Err(Error::Shape(format!(
                "{} codes for {} tap vectors",
                codes.len(),
                taps.len()
            )));
        }
        let depth = taps[0].depth();
        if taps.iter().any(|t| t.depth() != depth) {
            return Err(Error::Shape("tap vectors have different lengths".into()));
        }
        Ok(Self {
            s0: codes
                .iter()
                .map(|c| build_s0(c, depth))
                .collect::<Result<_>>()?,
            sm1: codes
                .iter()
                .map(|c| build_sm1(c, depth))
                .collect::<Result<_>>()?,
            taps: taps.to_vec(),
            sigma2,
        })
    }

    pub fn nms(&self) -> usize {
        self.s0.len()
    }

    pub fn n(&self) -> usize {
        self.s0[0].nrows()
    }

    pub fn depth(&self) -> usize {
        self.s0[0].ncols() - 1
    }

    pub fn tap_column(&self, k: usize) -> DVector<f64> {
        DVector::from_column_slice(&self.taps[k].taps)
    }

    /// `S_k0 c_k`, the current-bit signature of NM `k`.
    pub fn signature(&self, k: usize) -> DVector<f64> {
        &self.s0[k] * self.tap_column(k)
    }

    /// `S_k,-1 c_k`, the previous-bit signature of NM `k`.
    pub fn isi_signature(&self, k: usize) -> DVector<f64> {
        &self.sm1[k] * self.tap_column(k)
    }

    pub fn s0_all(&self) -> DMatrix<f64> {
        concat_columns(&self.s0).expect("uniform block heights")
    }

    pub fn sm1_all(&self) -> DMatrix<f64> {
        concat_columns(&self.sm1).expect("uniform block heights")
    }

    pub fn stacked_c(&self) -> DMatrix<f64> {
        build_stacked_c(&self.taps).expect("uniform tap lengths")
    }

    /// `S0 C`, one signature per column.
    pub fn signal_matrix(&self) -> DMatrix<f64> {
        let cols: Vec<_> = (0..self.nms()).map(|k| self.signature(k)).collect();
        DMatrix::from_columns(&cols)
    }

    fn has_signal(&self) -> bool {
        self.taps.iter().any(|t| t.taps.iter().any(|&c| c != 0.0))
    }
}

fn check_shapes(s0_k: &DMatrix<f64>, len: usize) -> Result<()> {
    if s0_k.ncols() != len {
        return Err(Error::Shape(format!(
            "S_k0 has {} columns but the tap vector has {} entries",
            s0_k.ncols(),
            len
        )));
    }
    Ok(())
}

/// Maximal-ratio combining, `w = S_k0 c_k`.
pub fn mrc_weights(s0_k: &DMatrix<f64>, c_k: &DVector<f64>, nm: usize) -> Result<WeightVector> {
    check_shapes(s0_k, c_k.len())?;
    Ok(WeightVector {
        w: s0_k * c_k,
        nm,
        scheme: DetectorScheme::Mrc,
    })
}

/// Equal-gain combining, `w = S_k0 1`; needs no channel knowledge.
pub fn egc_weights(s0_k: &DMatrix<f64>, nm: usize) -> WeightVector {
    WeightVector {
        w: s0_k * DVector::from_element(s0_k.ncols(), 1.0),
        nm,
        scheme: DetectorScheme::Egc,
    }
}

/// Interference-plus-noise autocorrelation seen by a detector.
#[derive(Debug, Clone, PartialEq)]
pub struct InterferenceModel {
    pub r_i: DMatrix<f64>,
    pub sigma2: f64,
}

impl InterferenceModel {
    /// Validates symmetry and positive definiteness.
    pub fn new(r_i: DMatrix<f64>, sigma2: f64) -> Result<Self> {
        if !r_i.is_square() {
            return Err(Error::Shape("R_I must be square".into()));
        }
        let scale = r_i.iter().fold(0.0f64, |m, x| m.max(x.abs()));
        let asym = (&r_i - r_i.transpose())
            .iter()
            .fold(0.0f64, |m, x| m.max(x.abs()));
        if asym > 1e-12 * scale.max(f64::MIN_POSITIVE) {
            return Err(Error::Numerical(format!(
                "R_I not symmetric (deviation {asym:e})"
            )));
        }
        if r_i.clone().cholesky().is_none() {
            return Err(Error::Numerical("R_I not positive definite".into()));
        }
        Ok(Self { r_i, sigma2 })
    }

    /// Scaled identity `sigma2 I_N`.
    pub fn white(n: usize, sigma2: f64) -> Result<Self> {
        Self::new(DMatrix::identity(n, n) * sigma2, sigma2)
    }

    /// Interference of NM `k`: MAI from the other NMs' current bits, ISI from
    /// every NM's previous bit, plus noise.
    pub fn for_nm(model: &ReceiverModel, k: usize) -> Result<Self> {
        let n = model.n();
        let mut r = DMatrix::identity(n, n) * model.sigma2;
        for l in 0..model.nms() {
            if l != k {
                let s = model.signature(l);
                r += &s * s.transpose();
            }
            let p = model.isi_signature(l);
            r += &p * p.transpose();
        }
        Self::new(r, model.sigma2)
    }

    /// ISI-plus-noise `S-1 C C^T S-1^T + sigma2 I` of the joint detector.
    pub fn isi_plus_noise(model: &ReceiverModel) -> Result<Self> {
        let n = model.n();
        let isi = model.sm1_all() * model.stacked_c();
        let r = &isi * isi.transpose() + DMatrix::identity(n, n) * model.sigma2;
        Self::new(r, model.sigma2)
    }
}

/// SINR of the decision variable `w^T z` for signature `h` under `R_I`.
pub fn sinr(w: &DVector<f64>, signature: &DVector<f64>, r_i: &DMatrix<f64>) -> f64 {
    let gain = w.dot(signature);
    gain * gain / (w.transpose() * r_i * w)[(0, 0)]
}

/// SINR-maximising weights `R_I^-1 S_k0 c_k`.
pub fn max_sinr_weights(
    s0_k: &DMatrix<f64>,
    c_k: &DVector<f64>,
    interference: &InterferenceModel,
    nm: usize,
) -> Result<WeightVector> {
    check_shapes(s0_k, c_k.len())?;
    let h = DMatrix::from_column_slice(s0_k.nrows(), 1, (s0_k * c_k).as_slice());
    let w = solve_spd(&interference.r_i, &h, "max-SINR R_I")?;
    Ok(WeightVector {
        w: w.column(0).into_owned(),
        nm,
        scheme: DetectorScheme::MaxSinr,
    })
}

/// Zero-forcing weights `S0 C (C^T S0^T S0 C)^-1`.
pub fn zf_weights(s0_all: &DMatrix<f64>, stacked_c: &DMatrix<f64>) -> Result<WeightMatrix> {
    if s0_all.ncols() != stacked_c.nrows() {
        return Err(Error::Shape(format!(
            "S0 has {} columns, C has {} rows",
            s0_all.ncols(),
            stacked_c.nrows()
        )));
    }
    let h = s0_all * stacked_c;
    let k = h.ncols();
    if k > h.nrows() {
        return Err(Error::RankDeficient {
            rank: h.nrows(),
            expected: k,
            context: "more NMs than chips".into(),
        });
    }
    let gram = h.transpose() * &h;
    let inv = solve_spd(
        &gram,
        &DMatrix::identity(k, k),
        "ZF Gram matrix (duplicate or dependent codes?)",
    )?;
    Ok(WeightMatrix {
        w: h * inv,
        scheme: DetectorScheme::Zf,
    })
}

/// Autocorrelation of `z_u` accumulated NM by NM.
///
/// The current and previous bits of an NM are independent, so their
/// signatures contribute separate outer products with no cross terms.
pub fn correlation_per_nm(model: &ReceiverModel) -> DMatrix<f64> {
    let n = model.n();
    let mut r = DMatrix::identity(n, n) * model.sigma2;
    for l in 0..model.nms() {
        let cur = model.signature(l);
        let prev = model.isi_signature(l);
        r += &cur * cur.transpose() + &prev * prev.transpose();
    }
    r
}

/// Autocorrelation of `z_u` from the stacked matrices.
pub fn correlation_joint(model: &ReceiverModel) -> DMatrix<f64> {
    let n = model.n();
    let c = model.stacked_c();
    let sig = model.s0_all() * &c;
    let isi = model.sm1_all() * &c;
    &sig * sig.transpose() + &isi * isi.transpose() + DMatrix::identity(n, n) * model.sigma2
}

/// Sample estimate `(1/M) sum_u z_u z_u^T`.
pub fn sample_correlation(observations: &[Observation]) -> Result<DMatrix<f64>> {
    let first = observations
        .first()
        .ok_or_else(|| Error::Shape("no observations".into()))?;
    let n = first.z.len();
    let mut r = DMatrix::zeros(n, n);
    for o in observations {
        let z = DVector::from_column_slice(&o.z);
        r += &z * z.transpose();
    }
    Ok(r / observations.len() as f64)
}

/// Where the MMSE detector gets `R_z` from.
#[derive(Debug, Clone)]
pub enum CorrelationSource {
    /// Closed form from the receiver model.
    Model,
    /// Estimated from received observations.
    Sample(DMatrix<f64>),
}

/// MSE `1 - 2 r^T w + w^T R w` of the decision variable `w^T z` for bit `k`.
pub fn mmse_cost(w: &DVector<f64>, signature: &DVector<f64>, r_z: &DMatrix<f64>) -> f64 {
    1.0 - 2.0 * signature.dot(w) + (w.transpose() * r_z * w)[(0, 0)]
}

/// Per-NM MMSE weights `R_z^-1 S_k0 c_k`.
pub fn mmse_weights_per_nm(
    model: &ReceiverModel,
    k: usize,
    source: &CorrelationSource,
) -> Result<WeightVector> {
    if k >= model.nms() {
        return Err(Error::Range {
            index: k,
            size: model.nms(),
        });
    }
    let owned;
    let r_z = match source {
        CorrelationSource::Model => {
            owned = correlation_per_nm(model);
            &owned
        }
        CorrelationSource::Sample(r) => r,
    };
    let h = model.signature(k);
    let w = solve_spd(
        r_z,
        &DMatrix::from_column_slice(h.len(), 1, h.as_slice()),
        "MMSE R_z",
    )?;
    Ok(WeightVector {
        w: w.column(0).into_owned(),
        nm: k,
        scheme: DetectorScheme::MmsePerNm,
    })
}

/// Joint MMSE weights `(S0 C C^T S0^T + R_I)^-1 S0 C`.
///
/// Falls back to the ISI-free closed form when the model has no ISI taps.
pub fn mmse_weight_matrix(model: &ReceiverModel) -> Result<WeightMatrix> {
    if model.depth() == 0 {
        return mmse_weight_matrix_no_isi(model);
    }
    let h = model.signal_matrix();
    let r_i = InterferenceModel::isi_plus_noise(model)?;
    let r_z = &h * h.transpose() + r_i.r_i;
    Ok(WeightMatrix {
        w: solve_spd(&r_z, &h, "joint MMSE R_z")?,
        scheme: DetectorScheme::MmseJoint,
    })
}

/// Joint MMSE weights via the matrix inversion lemma,
/// `R_I^-1 S0 C (C^T S0^T R_I^-1 S0 C + I_K)^-1`.
pub fn mmse_weight_matrix_lemma(model: &ReceiverModel) -> Result<WeightMatrix> {
    let h = model.signal_matrix();
    let k = h.ncols();
    let r_i = InterferenceModel::isi_plus_noise(model)?;
    let ri_h = solve_spd(&r_i.r_i, &h, "joint MMSE R_I")?;
    let inner = h.transpose() * &ri_h + DMatrix::identity(k, k);
    // inner is a K x K SPD matrix; solve from the right via its transpose
    let inv = solve_spd(&inner, &DMatrix::identity(k, k), "joint MMSE K x K")?;
    Ok(WeightMatrix {
        w: ri_h * inv,
        scheme: DetectorScheme::MmseJoint,
    })
}

/// ISI-free joint MMSE, `S0 C (C^T S0^T S0 C + sigma2 I_K)^-1`.
pub fn mmse_weight_matrix_no_isi(model: &ReceiverModel) -> Result<WeightMatrix> {
    let h = model.signal_matrix();
    let k = h.ncols();
    let inner = h.transpose() * &h + DMatrix::identity(k, k) * model.sigma2;
    let inv = solve_spd(&inner, &DMatrix::identity(k, k), "ISI-free MMSE")?;
    Ok(WeightMatrix {
        w: h * inv,
        scheme: DetectorScheme::MmseJoint,
    })
}

/// Weight matrix for any scheme.
///
/// A model with all-zero taps carries no signal; every scheme then returns
/// zero weights so all decisions fall to `-1`.
pub fn compute_weights(scheme: DetectorScheme, model: &ReceiverModel) -> Result<WeightMatrix> {
    let k = model.nms();
    if !model.has_signal() {
        return Ok(WeightMatrix {
            w: DMatrix::zeros(model.n(), k),
            scheme,
        });
    }
    let per_nm = |f: &dyn Fn(usize) -> Result<WeightVector>| -> Result<WeightMatrix> {
        let cols = (0..k).map(f).collect::<Result<Vec<_>>>()?;
        Ok(WeightMatrix::from_columns(&cols, scheme))
    };
    match scheme {
        DetectorScheme::Mrc => per_nm(&|n| mrc_weights(&model.s0[n], &model.tap_column(n), n)),
        DetectorScheme::Egc => per_nm(&|n| Ok(egc_weights(&model.s0[n], n))),
        DetectorScheme::MaxSinr => per_nm(&|n| {
            let ri = InterferenceModel::for_nm(model, n)?;
            max_sinr_weights(&model.s0[n], &model.tap_column(n), &ri, n)
        }),
        DetectorScheme::Zf => zf_weights(&model.s0_all(), &model.stacked_c()),
        DetectorScheme::MmsePerNm => {
            let r_z = correlation_per_nm(model);
            per_nm(&|n| mmse_weights_per_nm(model, n, &CorrelationSource::Sample(r_z.clone())))
        }
        DetectorScheme::MmseJoint => mmse_weight_matrix(model),
    }
}

/// Decision variables `W^T z`.
pub fn decision_variables(z: &[f64], weights: &WeightMatrix) -> Vec<f64> {
    let (n, k) = weights.w.shape();
    (0..k)
        .map(|c| (0..n).map(|r| weights.w[(r, c)] * z[r]).sum())
        .collect()
}

/// Hard decisions: `+1` when the decision variable is positive, else `-1`.
pub fn decide(z: &[f64], weights: &WeightMatrix) -> Vec<f64> {
    decision_variables(z, weights)
        .into_iter()
        .map(|e| if e > 0.0 { 1.0 } else { -1.0 })
        .collect()
}

/// Smallest relative singular value of `S0 C`; values near
/// [`crate::linalg::RANK_CUTOFF`] mean ZF is ill-posed.
pub fn signal_conditioning(model: &ReceiverModel) -> f64 {
    let sv = model.signal_matrix().singular_values();
    let max = sv.max();
    if max == 0.0 {
        0.0
    } else {
        sv.min() / max
    }
}
