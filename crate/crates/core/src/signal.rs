//! Received-signal representations and observation synthesis.
//!
//! One bit interval yields an `N`-sample observation `z_u` of Type-A minus
//! Type-B concentration differences. Three algebraically equivalent builders
//! are provided:
//!
//! * the two-bit window form `sum_k C_k0 s_k b_ku + C_k,-1 s_k b_k,u-1`,
//! * the per-NM banded form `sum_k S_k0 c_k b_ku + S_k,-1 c_k b_k,u-1`,
//! * the stacked form `S0 C b_u + S-1 C b_u-1`.
//!
//! [`oracle_observation`] evaluates the same samples directly from the chip
//! emission schedule and the CIR, without any of the matrices, and is used to
//! cross-check the matrix forms.

use nalgebra::{DMatrix, DVector};
use rand::Rng;
use rand_distr::{Distribution, Normal, StandardNormal};

use crate::channel::{cir_unchecked, detection_volume, peak_time, TapVector};
use crate::codes::SpreadingCode;
use crate::error::{Error, Result};

fn check_depth(n: usize, depth: usize) -> Result<()> {
    if depth >= n {
        return Err(Error::Unsupported(format!(
            "ISI depth L = {depth} must be below the spreading factor N = {n}"
        )));
    }
    Ok(())
}

/// `N x (L+1)` banded matrix with entry `(i, j) = s[i - j]` for `j <= i`.
pub fn build_s0(code: &SpreadingCode, depth: usize) -> Result<DMatrix<f64>> {
    let n = code.len();
    check_depth(n, depth)?;
    Ok(DMatrix::from_fn(n, depth + 1, |i, j| {
        if j <= i {
            code.chips[i - j]
        } else {
            0.0
        }
    }))
}

/// `N x (L+1)` matrix of previous-bit chips: entry `(i, j) = s[N + i - j]` for `j > i`.
pub fn build_sm1(code: &SpreadingCode, depth: usize) -> Result<DMatrix<f64>> {
    let n = code.len();
    check_depth(n, depth)?;
    Ok(DMatrix::from_fn(n, depth + 1, |i, j| {
        if j > i {
            code.chips[n + i - j]
        } else {
            0.0
        }
    }))
}

/// Horizontal concatenation `[M_1, ..., M_K]`.
pub fn concat_columns(blocks: &[DMatrix<f64>]) -> Result<DMatrix<f64>> {
    let rows = blocks.first().map_or(0, |b| b.nrows());
    if blocks.iter().any(|b| b.nrows() != rows) {
        return Err(Error::Shape("blocks have different row counts".into()));
    }
    let cols: usize = blocks.iter().map(|b| b.ncols()).sum();
    let mut out = DMatrix::zeros(rows, cols);
    let mut at = 0;
    for b in blocks {
        out.view_mut((0, at), (rows, b.ncols())).copy_from(b);
        at += b.ncols();
    }
    Ok(out)
}

/// `K(L+1) x K` matrix whose column `k` carries `c_k` in rows `k(L+1)..k(L+1)+L`.
pub fn build_stacked_c(taps: &[TapVector]) -> Result<DMatrix<f64>> {
    let len = taps.first().map_or(0, |t| t.taps.len());
    if taps.iter().any(|t| t.taps.len() != len) {
        return Err(Error::Shape("tap vectors have different lengths".into()));
    }
    let k = taps.len();
    let mut c = DMatrix::zeros(k * len, k);
    for (col, t) in taps.iter().enumerate() {
        for (i, &v) in t.taps.iter().enumerate() {
            c[(col * len + i, col)] = v;
        }
    }
    Ok(c)
}

/// Two-bit window matrices `(C_k,-1, C_k0)`, each `N x N`.
///
/// In the joint `N x 2N` matrix row `n` holds `c(i)` at column `N + n - i`,
/// so `c(0)` sits at `(N-1, 2N-1)` and each row is the reversed taps shifted.
pub fn build_ck2(taps: &TapVector, n: usize) -> Result<(DMatrix<f64>, DMatrix<f64>)> {
    check_depth(n, taps.depth())?;
    let mut joint = DMatrix::zeros(n, 2 * n);
    for row in 0..n {
        for (i, &c) in taps.taps.iter().enumerate() {
            joint[(row, n + row - i)] = c;
        }
    }
    let prev = joint.columns(0, n).into_owned();
    let cur = joint.columns(n, n).into_owned();
    Ok((prev, cur))
}

/// Steady-state variance of one observation sample: `sum_k sum_i c_k(i) / V`.
pub fn noise_sigma2(taps: &[TapVector], rho: f64) -> f64 {
    let total: f64 = taps.iter().map(TapVector::sum).sum();
    total / detection_volume(rho)
}

/// Observation for bit `u` of a frame.
#[derive(Debug, Clone, PartialEq)]
pub struct Observation {
    pub u: usize,
    pub z: Vec<f64>,
}

/// Transmitted bits of one frame, `bits[k][u + 1]` for `u = -1..M-1`.
#[derive(Debug, Clone, PartialEq)]
pub struct BitFrame {
    pub bits: Vec<Vec<f64>>,
}

impl BitFrame {
    /// Uniform random `+-1` bits for `k` NMs and `m` detected bit slots, plus
    /// the leading `b_-1`.
    pub fn random<R: Rng + ?Sized>(k: usize, m: usize, rng: &mut R) -> Self {
        let bits = (0..k)
            .map(|_| {
                (0..=m)
                    .map(|_| if rng.random::<bool>() { 1.0 } else { -1.0 })
                    .collect()
            })
            .collect();
        Self { bits }
    }

    pub fn nms(&self) -> usize {
        self.bits.len()
    }

    /// Number of bit slots `M` (excluding `b_-1`).
    pub fn slots(&self) -> usize {
        self.bits.first().map_or(0, |b| b.len().saturating_sub(1))
    }

    /// `b_k,u` with `u = -1` allowed.
    pub fn bit(&self, k: usize, u: isize) -> f64 {
        self.bits[k][(u + 1) as usize]
    }

    pub fn current(&self, u: usize) -> DVector<f64> {
        DVector::from_iterator(self.nms(), (0..self.nms()).map(|k| self.bit(k, u as isize)))
    }

    pub fn previous(&self, u: usize) -> DVector<f64> {
        DVector::from_iterator(
            self.nms(),
            (0..self.nms()).map(|k| self.bit(k, u as isize - 1)),
        )
    }
}

/// Noise-free observation from the two-bit window form.
pub fn observe_two_bit_window(
    ck2: &[(DMatrix<f64>, DMatrix<f64>)],
    codes: &[SpreadingCode],
    b_prev: &[f64],
    b_cur: &[f64],
) -> DVector<f64> {
    let n = codes[0].len();
    let mut z = DVector::zeros(n);
    for (k, (prev, cur)) in ck2.iter().enumerate() {
        let s = DVector::from_column_slice(&codes[k].chips);
        z += cur * &s * b_cur[k] + prev * &s * b_prev[k];
    }
    z
}

/// Noise-free observation from the per-NM banded form.
pub fn observe_per_nm(
    s0: &[DMatrix<f64>],
    sm1: &[DMatrix<f64>],
    taps: &[TapVector],
    b_prev: &[f64],
    b_cur: &[f64],
) -> DVector<f64> {
    let n = s0[0].nrows();
    let mut z = DVector::zeros(n);
    for k in 0..s0.len() {
        let c = DVector::from_column_slice(&taps[k].taps);
        z += &s0[k] * &c * b_cur[k] + &sm1[k] * &c * b_prev[k];
    }
    z
}

/// Noise-free observation from the stacked form.
pub fn observe_stacked(
    s0_all: &DMatrix<f64>,
    sm1_all: &DMatrix<f64>,
    stacked_c: &DMatrix<f64>,
    b_prev: &DVector<f64>,
    b_cur: &DVector<f64>,
) -> DVector<f64> {
    s0_all * (stacked_c * b_cur) + sm1_all * (stacked_c * b_prev)
}

/// Precomputed stacked model `z_u = A b_u + B b_u-1 + n_u` with
/// `A = S0 C` and `B = S-1 C`, stored row-major for the simulation loop.
#[derive(Debug, Clone)]
pub struct CompactModel {
    pub n: usize,
    pub k: usize,
    current: Vec<f64>,
    previous: Vec<f64>,
    pub sigma2: f64,
}

impl CompactModel {
    pub fn new(codes: &[SpreadingCode], taps: &[TapVector], rho: f64) -> Result<Self> {
        if codes.len() != taps.len() || codes.is_empty() {
            return Err(Error::Shape(format!(
                "{} codes for {} tap vectors",
                codes.len(),
                taps.len()
            )));
        }
        let n = codes[0].len();
        if codes.iter().any(|c| c.len() != n) {
            return Err(Error::Shape("codes have different lengths".into()));
        }
        let depth = taps[0].depth();
        let s0: Vec<_> = codes
            .iter()
            .map(|c| build_s0(c, depth))
            .collect::<Result<_>>()?;
        let sm1: Vec<_> = codes
            .iter()
            .map(|c| build_sm1(c, depth))
            .collect::<Result<_>>()?;
        let c = build_stacked_c(taps)?;
        let a = concat_columns(&s0)? * &c;
        let b = concat_columns(&sm1)? * &c;
        Ok(Self {
            n,
            k: codes.len(),
            current: row_major(&a),
            previous: row_major(&b),
            sigma2: noise_sigma2(taps, rho),
        })
    }

    pub fn signal_matrix(&self) -> DMatrix<f64> {
        DMatrix::from_row_slice(self.n, self.k, &self.current)
    }

    pub fn isi_matrix(&self) -> DMatrix<f64> {
        DMatrix::from_row_slice(self.n, self.k, &self.previous)
    }

    /// Writes `A b_cur + B b_prev + sqrt(scale * sigma2) * w` into `out`.
    #[inline]
    pub fn observe_into<R: Rng + ?Sized>(
        &self,
        b_cur: &[f64],
        b_prev: &[f64],
        noise_scale: f64,
        rng: &mut R,
        out: &mut [f64],
    ) {
        let std = (noise_scale * self.sigma2).sqrt();
        for (row, z) in out.iter_mut().enumerate().take(self.n) {
            let a = &self.current[row * self.k..(row + 1) * self.k];
            let b = &self.previous[row * self.k..(row + 1) * self.k];
            let mut acc = 0.0;
            for k in 0..self.k {
                acc += a[k] * b_cur[k] + b[k] * b_prev[k];
            }
            if std > 0.0 {
                let w: f64 = StandardNormal.sample(rng);
                acc += std * w;
            }
            *z = acc;
        }
    }
}

fn row_major(m: &DMatrix<f64>) -> Vec<f64> {
    let mut v = Vec::with_capacity(m.len());
    for r in 0..m.nrows() {
        for c in 0..m.ncols() {
            v.push(m[(r, c)]);
        }
    }
    v
}

/// Observations `z_0..z_M-1` of a frame under the stacked model.
///
/// `noise_scale` multiplies the modelled variance; 0 disables noise.
pub fn synthesize_frame<R: Rng + ?Sized>(
    frame: &BitFrame,
    model: &CompactModel,
    noise_scale: f64,
    rng: &mut R,
) -> Result<Vec<Observation>> {
    if frame.nms() != model.k {
        return Err(Error::Shape(format!(
            "{} bit streams for {} NMs",
            frame.nms(),
            model.k
        )));
    }
    let mut cur = vec![0.0; model.k];
    let mut prev = vec![0.0; model.k];
    Ok((0..frame.slots())
        .map(|u| {
            for k in 0..model.k {
                cur[k] = frame.bit(k, u as isize);
                prev[k] = frame.bit(k, u as isize - 1);
            }
            let mut z = vec![0.0; model.n];
            model.observe_into(&cur, &prev, noise_scale, rng, &mut z);
            Observation { u, z }
        })
        .collect())
}

/// Physical inputs from which the oracle evaluates concentrations directly.
#[derive(Debug, Clone)]
pub struct OracleLink {
    /// Sorted ascending, m.
    pub distances: Vec<f64>,
    pub diffusion: f64,
    pub chip_duration: f64,
    /// Molecules per chip per NM.
    pub qc: Vec<f64>,
    /// Emission offsets per NM, s.
    pub offsets: Vec<f64>,
    pub depth: usize,
    pub rho: f64,
}

/// Samples `Z_u,n` from the emission schedule, summing each chip pulse that
/// is at most `L` chips old at the sampling instant `(uN + n) Tc + t_d(K)`.
///
/// `history[k][u]` is the `u`-th bit NM `k` ever transmitted (no bit precedes
/// index 0). With `noise` set, each contributing pulse adds its own Gaussian
/// counting term of variance `c_k(i) / V`.
pub fn oracle_observation<R: Rng + ?Sized>(
    history: &[Vec<f64>],
    codes: &[SpreadingCode],
    link: &OracleLink,
    noise: bool,
    rng: &mut R,
) -> Result<Vec<Observation>> {
    let k_count = codes.len();
    if history.len() != k_count || link.qc.len() != k_count || link.offsets.len() != k_count {
        return Err(Error::Shape(
            "oracle inputs disagree on the number of NMs".into(),
        ));
    }
    let n = codes[0].len();
    let bits = history[0].len();
    let volume = detection_volume(link.rho);
    let d_far = *link
        .distances
        .last()
        .ok_or_else(|| Error::Shape("no NMs".into()))?;
    let sample_delay = peak_time(d_far, link.diffusion)?;
    let mut out = Vec::with_capacity(bits);
    for u in 0..bits {
        let mut z = vec![0.0; n];
        for (nn, zn) in z.iter_mut().enumerate() {
            let idx = u * n + nn;
            let t_sample = idx as f64 * link.chip_duration + sample_delay;
            let first = idx.saturating_sub(link.depth);
            for k in 0..k_count {
                for j in first..=idx {
                    let t_emit = j as f64 * link.chip_duration + link.offsets[k];
                    let conc = link.qc[k]
                        * cir_unchecked(link.distances[k], link.diffusion, t_sample - t_emit);
                    let sign = history[k][j / n] * codes[k].chips[j % n];
                    let mut term = conc;
                    if noise && conc > 0.0 {
                        let normal = Normal::new(0.0, (conc / volume).sqrt())
                            .map_err(|e| Error::Numerical(e.to_string()))?;
                        term += normal.sample(rng);
                    }
                    *zn += sign * term;
                }
            }
        }
        out.push(Observation { u, z });
    }
    Ok(out)
}
