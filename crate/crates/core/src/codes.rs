//! Spreading sequences: m-sequences, Gold sequences and Walsh codes, plus
//! distance-aware assignment of codes to NMs.
//!
//! Binary sequences are mapped to antipodal chips with `0 -> +1`, `1 -> -1`.
//! m-sequences come from a Fibonacci LFSR seeded with all ones.

use std::fmt;

use serde::{Deserialize, Serialize};

use crate::error::{invalid, Error, Result};

/// Polynomial over GF(2) of the form `x^m + ... + 1`, stored as a bit mask
/// (bit `j` set when `x^j` is present).
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct Gf2Poly(u32);

impl Gf2Poly {
    /// Builds a polynomial from its exponents, e.g. `[5, 2, 0]` for `x^5 + x^2 + 1`.
    pub fn from_exponents(exps: &[u32]) -> Result<Self> {
        let mut mask = 0u32;
        for &e in exps {
            if e > 30 {
                return Err(invalid("poly", format!("exponent {e} too large")));
            }
            mask ^= 1 << e;
        }
        if mask & 1 == 0 {
            return Err(invalid("poly", "constant term must be present"));
        }
        if mask.count_ones() < 2 {
            return Err(invalid("poly", "degree must be at least 1"));
        }
        Ok(Self(mask))
    }

    pub fn degree(&self) -> u32 {
        31 - self.0.leading_zeros()
    }

    pub fn exponents(&self) -> Vec<u32> {
        (0..=self.degree())
            .rev()
            .filter(|&e| self.0 >> e & 1 == 1)
            .collect()
    }

    pub fn mask(&self) -> u32 {
        self.0
    }
}

impl fmt::Display for Gf2Poly {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let terms: Vec<String> = self
            .exponents()
            .into_iter()
            .map(|e| match e {
                0 => "1".to_string(),
                1 => "x".to_string(),
                e => format!("x^{e}"),
            })
            .collect();
        f.write_str(&terms.join("+"))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum CodeFamily {
    Mls,
    Gold,
    Walsh,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum CodeLabel {
    Mls {
        poly: Gf2Poly,
        shift: usize,
    },
    Gold {
        pair: (Gf2Poly, Gf2Poly),
        index: usize,
    },
    Walsh {
        row: usize,
    },
}

impl fmt::Display for CodeLabel {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            CodeLabel::Mls { poly, shift } => write!(f, "mls[{poly}] shift={shift}"),
            CodeLabel::Gold { pair, index } => {
                write!(f, "gold[{};{}] index={index}", pair.0, pair.1)
            }
            CodeLabel::Walsh { row } => write!(f, "walsh row={row}"),
        }
    }
}

/// Antipodal spreading sequence.
#[derive(Debug, Clone, PartialEq)]
pub struct SpreadingCode {
    pub chips: Vec<f64>,
    pub family: CodeFamily,
    pub label: CodeLabel,
}

impl SpreadingCode {
    pub fn len(&self) -> usize {
        self.chips.len()
    }

    pub fn is_empty(&self) -> bool {
        self.chips.is_empty()
    }

    /// Number of adjacent sign changes.
    pub fn transitions(&self) -> usize {
        self.chips.windows(2).filter(|w| w[0] != w[1]).count()
    }

    fn walsh_row(&self) -> Option<usize> {
        match self.label {
            CodeLabel::Walsh { row } => Some(row),
            _ => None,
        }
    }
}

fn antipodal(bits: &[u8]) -> Vec<f64> {
    bits.iter()
        .map(|&b| if b == 0 { 1.0 } else { -1.0 })
        .collect()
}

/// Runs the Fibonacci LFSR `a[n+m] = sum_{j in poly, j<m} a[n+j]` from the
/// all-ones seed. Returns the period together with one period of output bits.
fn lfsr_bits(poly: Gf2Poly) -> (usize, Vec<u8>) {
    let m = poly.degree();
    let feedback = poly.mask() & !(1 << m);
    let seed: u32 = (1u32 << m) - 1;
    let full = (1usize << m) - 1;
    // bit j of `state` holds a[n+j]
    let mut state = seed;
    let mut bits = Vec::with_capacity(full);
    loop {
        bits.push((state & 1) as u8);
        let next = (state & feedback).count_ones() & 1;
        state = (state >> 1) | (next << (m - 1));
        if state == seed || bits.len() > full {
            break;
        }
    }
    (bits.len(), bits)
}

/// True when the polynomial generates a sequence of period `2^m - 1`.
pub fn is_primitive(poly: Gf2Poly) -> bool {
    let (period, _) = lfsr_bits(poly);
    period == (1usize << poly.degree()) - 1
}

/// All primitive polynomials of the given degree, ascending by bit mask.
pub fn primitive_polynomials(degree: u32) -> Result<Vec<Gf2Poly>> {
    if !(2..=16).contains(&degree) {
        return Err(invalid("degree", format!("{degree} outside 2..=16")));
    }
    let lead = 1u32 << degree;
    Ok((0..lead / 2)
        .map(|mid| Gf2Poly(lead | (mid << 1) | 1))
        .filter(|&p| is_primitive(p))
        .collect())
}

fn rotate_left<T: Copy>(v: &[T], shift: usize) -> Vec<T> {
    let n = v.len();
    (0..n).map(|i| v[(i + shift) % n]).collect()
}

fn mls_bits(poly: Gf2Poly) -> Result<Vec<u8>> {
    let m = poly.degree();
    let (period, bits) = lfsr_bits(poly);
    let full = (1usize << m) - 1;
    if period != full {
        return Err(Error::Generation(format!(
            "{poly} is not primitive: period {period} != {full}"
        )));
    }
    Ok(bits)
}

/// Maximum-length sequence of the given primitive polynomial, cyclically
/// shifted left by `shift` chips.
pub fn gen_mls(poly: Gf2Poly, shift: usize) -> Result<SpreadingCode> {
    let bits = mls_bits(poly)?;
    if shift >= bits.len() {
        return Err(Error::Range {
            index: shift,
            size: bits.len(),
        });
    }
    Ok(SpreadingCode {
        chips: antipodal(&rotate_left(&bits, shift)),
        family: CodeFamily::Mls,
        label: CodeLabel::Mls { poly, shift },
    })
}

/// Preferred pair used by default for the length-31 Gold family.
pub fn default_gold_pair() -> (Gf2Poly, Gf2Poly) {
    (Gf2Poly(0b100101), Gf2Poly(0b111101))
}

/// Member `index` of the Gold family built from a preferred pair.
///
/// Index 0 and 1 are the two base m-sequences; index `2 + j` is the first
/// sequence XOR the second rotated left by `j`.
pub fn gen_gold(pair: (Gf2Poly, Gf2Poly), index: usize) -> Result<SpreadingCode> {
    if pair.0.degree() != pair.1.degree() {
        return Err(invalid("preferred_pair", "polynomials must share a degree"));
    }
    let a = mls_bits(pair.0)?;
    let b = mls_bits(pair.1)?;
    let size = a.len() + 2;
    let bits = match index {
        0 => a,
        1 => b,
        i if i < size => {
            let rb = rotate_left(&b, i - 2);
            a.iter().zip(&rb).map(|(x, y)| x ^ y).collect()
        }
        _ => return Err(Error::Range { index, size }),
    };
    Ok(SpreadingCode {
        chips: antipodal(&bits),
        family: CodeFamily::Gold,
        label: CodeLabel::Gold { pair, index },
    })
}

/// Row `row` of the Sylvester-Hadamard matrix of order `order`.
pub fn gen_walsh(order: usize, row: usize) -> Result<SpreadingCode> {
    if order == 0 || !order.is_power_of_two() {
        return Err(invalid(
            "N",
            format!("Walsh order {order} is not a power of two"),
        ));
    }
    if row >= order {
        return Err(Error::Range {
            index: row,
            size: order,
        });
    }
    let chips = (0..order)
        .map(|j| {
            if (row & j).count_ones().is_multiple_of(2) {
                1.0
            } else {
                -1.0
            }
        })
        .collect();
    Ok(SpreadingCode {
        chips,
        family: CodeFamily::Walsh,
        label: CodeLabel::Walsh { row },
    })
}

/// Orders codes best-first by number of sign transitions, dropping constant
/// sequences. Ties go to the lower Walsh row.
pub fn rank_walsh_quality(codes: &[SpreadingCode]) -> Vec<SpreadingCode> {
    let mut ranked: Vec<SpreadingCode> = codes
        .iter()
        .filter(|c| c.transitions() > 0)
        .cloned()
        .collect();
    ranked.sort_by(|a, b| {
        a.transitions()
            .cmp(&b.transitions())
            .then(
                a.walsh_row()
                    .unwrap_or(usize::MAX)
                    .cmp(&b.walsh_row().unwrap_or(usize::MAX)),
            )
            .then_with(|| {
                a.chips
                    .partial_cmp(&b.chips)
                    .unwrap_or(std::cmp::Ordering::Equal)
            })
    });
    ranked
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum AssignmentStrategy {
    /// Best code to the closest NM.
    Btc,
    /// Best code to the farthest NM.
    Btf,
    /// Code `i` to NM `i`.
    ByIndex,
}

/// Codes for NMs `1..=K`, in NM order.
#[derive(Debug, Clone, PartialEq)]
pub struct CodeAssignment {
    pub codes: Vec<SpreadingCode>,
    pub strategy: AssignmentStrategy,
}

/// Pairs ranked codes with NMs according to the strategy.
pub fn assign_codes(
    ranked: &[SpreadingCode],
    distances: &[f64],
    strategy: AssignmentStrategy,
) -> Result<CodeAssignment> {
    let k = distances.len();
    if k > ranked.len() {
        return Err(Error::Capacity {
            requested: k,
            available: ranked.len(),
        });
    }
    // NM indices sorted closest first; stable so equal distances keep NM order
    let mut by_distance: Vec<usize> = (0..k).collect();
    by_distance.sort_by(|&a, &b| distances[a].total_cmp(&distances[b]));

    let mut slots: Vec<Option<SpreadingCode>> = vec![None; k];
    for (rank, code) in ranked.iter().take(k).enumerate() {
        let nm = match strategy {
            AssignmentStrategy::Btc => by_distance[rank],
            AssignmentStrategy::Btf => by_distance[k - 1 - rank],
            AssignmentStrategy::ByIndex => rank,
        };
        slots[nm] = Some(code.clone());
    }
    let codes: Vec<SpreadingCode> = slots
        .into_iter()
        .map(|c| c.expect("every NM assigned"))
        .collect();
    for i in 0..k {
        for j in i + 1..k {
            if codes[i].chips == codes[j].chips {
                return Err(invalid(
                    "codes",
                    format!("NM {} and NM {} would share the same chips", i + 1, j + 1),
                ));
            }
        }
    }
    Ok(CodeAssignment { codes, strategy })
}

/// Periodic (cyclic) cross-correlation at `lag`: `sum_n a[n] b[(n + lag) % N]`.
pub fn periodic_correlation(a: &[f64], b: &[f64], lag: usize) -> f64 {
    let n = a.len();
    (0..n).map(|i| a[i] * b[(i + lag) % n]).sum()
}

/// How m-sequences are spread across several NMs.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum MlsLayout {
    /// One polynomial, cyclic shifts spaced `floor(N / K)` chips apart.
    Shifts,
    /// A different primitive polynomial per NM, zero shift.
    #[default]
    Polynomials,
}

/// Everything needed to build the per-NM code set of a scenario.
#[derive(Debug, Clone, PartialEq)]
pub struct CodePlan {
    pub family: CodeFamily,
    pub assignment: AssignmentStrategy,
    pub mls_layout: MlsLayout,
    /// Polynomial for the `Shifts` layout; first primitive one when absent.
    pub mls_poly: Option<Gf2Poly>,
    pub gold_pair: Option<(Gf2Poly, Gf2Poly)>,
    /// Gold family indices per NM; `0..K` when absent.
    pub gold_indices: Option<Vec<usize>>,
}

impl CodePlan {
    pub fn new(family: CodeFamily, assignment: AssignmentStrategy) -> Self {
        Self {
            family,
            assignment,
            mls_layout: MlsLayout::default(),
            mls_poly: None,
            gold_pair: None,
            gold_indices: None,
        }
    }
}

fn lfsr_degree(n: usize) -> Result<u32> {
    let m = (n + 1).trailing_zeros();
    if n < 3 || (n + 1) != 1 << m {
        return Err(invalid("N", format!("{n} is not of the form 2^m - 1")));
    }
    Ok(m)
}

/// Candidate codes for a scenario, in rank order (best first).
pub fn candidate_codes(plan: &CodePlan, n: usize, k: usize) -> Result<Vec<SpreadingCode>> {
    match plan.family {
        CodeFamily::Mls => {
            let m = lfsr_degree(n)?;
            match plan.mls_layout {
                MlsLayout::Shifts => {
                    let poly = match plan.mls_poly {
                        Some(p) => p,
                        None => primitive_polynomials(m)?[0],
                    };
                    if poly.degree() != m {
                        return Err(invalid("codes.params.poly", "degree does not match N"));
                    }
                    if k > n {
                        return Err(Error::Capacity {
                            requested: k,
                            available: n,
                        });
                    }
                    let spacing = n / k.max(1);
                    (0..k).map(|i| gen_mls(poly, i * spacing)).collect()
                }
                MlsLayout::Polynomials => primitive_polynomials(m)?
                    .into_iter()
                    .map(|p| gen_mls(p, 0))
                    .collect(),
            }
        }
        CodeFamily::Gold => {
            let m = lfsr_degree(n)?;
            let pair = plan.gold_pair.unwrap_or_else(default_gold_pair);
            if pair.0.degree() != m {
                return Err(invalid("codes.params.gold_pair", "degree does not match N"));
            }
            match &plan.gold_indices {
                Some(idx) => idx.iter().map(|&i| gen_gold(pair, i)).collect(),
                None => (0..n + 2).map(|i| gen_gold(pair, i)).collect(),
            }
        }
        CodeFamily::Walsh => {
            let all = (0..n)
                .map(|r| gen_walsh(n, r))
                .collect::<Result<Vec<_>>>()?;
            Ok(rank_walsh_quality(&all))
        }
    }
}

/// Builds and assigns the codes of a scenario.
pub fn plan_codes(plan: &CodePlan, n: usize, distances: &[f64]) -> Result<CodeAssignment> {
    let candidates = candidate_codes(plan, n, distances.len())?;
    assign_codes(&candidates, distances, plan.assignment)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn p(e: &[u32]) -> Gf2Poly {
        Gf2Poly::from_exponents(e).unwrap()
    }

    #[test]
    fn mls_balance_and_autocorrelation() {
        let c = gen_mls(p(&[5, 2, 0]), 0).unwrap();
        assert_eq!(c.len(), 31);
        // an m-sequence has one more 1 bit than 0 bits, and 1 maps to -1
        let ones = lfsr_bits(p(&[5, 2, 0]))
            .1
            .iter()
            .filter(|&&b| b == 1)
            .count();
        assert_eq!(ones, 16);
        let sum: f64 = c.chips.iter().sum();
        assert_eq!(sum, -1.0);
        for lag in 1..31 {
            assert_eq!(periodic_correlation(&c.chips, &c.chips, lag), -1.0);
        }
    }

    #[test]
    fn mls_shift_is_rotation() {
        let a = gen_mls(p(&[5, 2, 0]), 0).unwrap();
        let b = gen_mls(p(&[5, 2, 0]), 7).unwrap();
        assert_eq!(b.chips, rotate_left(&a.chips, 7));
        assert!(gen_mls(p(&[5, 2, 0]), 31).is_err());
    }

    #[test]
    fn rejects_non_primitive() {
        // x^5 + x^4 + x^2 + 1 = (x + 1)(x^4 + x + 1)
        let err = gen_mls(p(&[5, 4, 2, 0]), 0).unwrap_err();
        assert!(matches!(err, Error::Generation(_)));
        // x^4 + x^3 + x^2 + x + 1 is irreducible but has period 5
        assert!(!is_primitive(p(&[4, 3, 2, 1, 0])));
    }

    #[test]
    fn six_primitive_quintics() {
        let ps = primitive_polynomials(5).unwrap();
        assert_eq!(ps.len(), 6);
        assert!(ps.contains(&p(&[5, 2, 0])));
        assert!(ps.contains(&p(&[5, 4, 3, 2, 0])));
        assert_eq!(primitive_polynomials(4).unwrap().len(), 2);
    }

    #[test]
    fn gold_cross_correlation_is_three_valued() {
        let pair = default_gold_pair();
        let fam: Vec<_> = (0..33).map(|i| gen_gold(pair, i).unwrap()).collect();
        for (i, a) in fam.iter().enumerate() {
            for b in fam.iter().skip(i + 1) {
                for lag in 0..31 {
                    let r = periodic_correlation(&a.chips, &b.chips, lag);
                    assert!([-1.0, -9.0, 7.0].contains(&r), "r={r}");
                }
            }
        }
        assert_eq!(fam[0].chips, gen_mls(pair.0, 0).unwrap().chips);
        let mut distinct: Vec<Vec<i8>> = fam
            .iter()
            .map(|c| c.chips.iter().map(|&x| x as i8).collect())
            .collect();
        distinct.sort();
        distinct.dedup();
        assert_eq!(distinct.len(), 33);
        assert!(matches!(gen_gold(pair, 33), Err(Error::Range { .. })));
    }

    #[test]
    fn walsh_rows() {
        assert!(gen_walsh(32, 0).unwrap().chips.iter().all(|&x| x == 1.0));
        let r16 = gen_walsh(32, 16).unwrap();
        assert!(r16.chips[..16].iter().all(|&x| x == 1.0));
        assert!(r16.chips[16..].iter().all(|&x| x == -1.0));
        assert_eq!(r16.transitions(), 1);
        for a in 0..32 {
            for b in 0..32 {
                let ip: f64 = gen_walsh(32, a)
                    .unwrap()
                    .chips
                    .iter()
                    .zip(&gen_walsh(32, b).unwrap().chips)
                    .map(|(x, y)| x * y)
                    .sum();
                assert_eq!(ip, if a == b { 32.0 } else { 0.0 });
            }
        }
        assert!(gen_walsh(31, 0).is_err());
        assert!(gen_walsh(32, 32).is_err());
    }

    #[test]
    fn ranking_excludes_all_ones_and_orders_by_transitions() {
        let ones = gen_walsh(32, 0).unwrap();
        let single = gen_walsh(32, 16).unwrap();
        let alternating = gen_walsh(32, 1).unwrap();
        assert_eq!(alternating.transitions(), 31);
        let ranked = rank_walsh_quality(&[alternating.clone(), ones.clone(), single.clone()]);
        assert_eq!(ranked.len(), 2);
        assert_eq!(ranked[0], single);
        assert_eq!(ranked[1], alternating);
        let again = rank_walsh_quality(&[single.clone(), ones, alternating]);
        assert_eq!(ranked, again);
    }

    #[test]
    fn btc_and_btf() {
        let best = gen_walsh(32, 16).unwrap();
        let worst = gen_walsh(32, 1).unwrap();
        let ranked = vec![best.clone(), worst.clone()];
        let d = [2.2e-6, 3.5e-6];
        let btc = assign_codes(&ranked, &d, AssignmentStrategy::Btc).unwrap();
        assert_eq!(btc.codes, vec![best.clone(), worst.clone()]);
        let btf = assign_codes(&ranked, &d, AssignmentStrategy::Btf).unwrap();
        assert_eq!(btf.codes, vec![worst, best.clone()]);
        for s in [AssignmentStrategy::Btc, AssignmentStrategy::Btf] {
            let one = assign_codes(&ranked, &[3e-6], s).unwrap();
            assert_eq!(one.codes, vec![best.clone()]);
        }
    }

    #[test]
    fn capacity_error() {
        let ranked = vec![gen_walsh(4, 1).unwrap()];
        let err = assign_codes(&ranked, &[1e-6, 2e-6], AssignmentStrategy::Btc).unwrap_err();
        assert!(matches!(
            err,
            Error::Capacity {
                requested: 2,
                available: 1
            }
        ));
    }

    #[test]
    fn shift_layout_spacing() {
        let mut plan = CodePlan::new(CodeFamily::Mls, AssignmentStrategy::ByIndex);
        plan.mls_layout = MlsLayout::Shifts;
        let codes = plan_codes(&plan, 31, &[1.0; 6]).unwrap();
        let shifts: Vec<usize> = codes
            .codes
            .iter()
            .map(|c| match c.label {
                CodeLabel::Mls { shift, .. } => shift,
                _ => unreachable!(),
            })
            .collect();
        assert_eq!(shifts, vec![0, 5, 10, 15, 20, 25]);
    }

    #[test]
    fn poly_display() {
        assert_eq!(p(&[5, 2, 0]).to_string(), "x^5+x^2+1");
    }
}
