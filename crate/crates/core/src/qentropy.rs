//! Von Neumann and Shannon entropies, mutual information and conditional
//! mutual information, all in bits.

use serde::Serialize;

use crate::error::{QcmiError, Result};
use crate::qmat::DensityMatrix;

/// CMI values in `[-CMI_CLAMP_TOL, 0)` are floored to 0 and flagged.
pub const CMI_CLAMP_TOL: f64 = 1e-8;
const PROB_TOL: f64 = 1e-12;
const SUM_TOL: f64 = 1e-9;

#[derive(Clone, Copy, Debug, PartialEq, Serialize)]
pub struct EntropyReport {
    pub value: f64,
    /// Set when a small negative value was floored to 0.
    pub clamped: bool,
}

impl EntropyReport {
    fn floor(raw: f64, tol: f64, what: &str) -> Result<Self> {
        if raw >= 0.0 {
            Ok(Self { value: raw, clamped: false })
        } else if raw >= -tol {
            Ok(Self { value: 0.0, clamped: true })
        } else {
            Err(QcmiError::Entropy(format!(
                "{what} = {raw:e} is negative beyond tolerance"
            )))
        }
    }
}

/// `-Σ η log2 η` over a spectrum, with `0 log 0 = 0`.
pub fn entropy_of_spectrum(eigenvalues: &[f64]) -> f64 {
    eigenvalues
        .iter()
        .filter(|&&x| x > 0.0)
        .map(|&x| -x * x.log2())
        .sum::<f64>()
        .max(0.0)
}

pub fn von_neumann_entropy(rho: &DensityMatrix, subset: &[&str]) -> Result<EntropyReport> {
    if subset.is_empty() {
        return Ok(EntropyReport { value: 0.0, clamped: false });
    }
    let reduced = rho.partial_trace(subset)?;
    let s = entropy_of_spectrum(&reduced.spectrum()?);
    Ok(EntropyReport { value: s, clamped: false })
}

fn entropy_value(rho: &DensityMatrix, subset: &[&str]) -> Result<f64> {
    Ok(von_neumann_entropy(rho, subset)?.value)
}

pub fn binary_entropy(p: f64) -> f64 {
    debug_assert!((-PROB_TOL..=1.0 + PROB_TOL).contains(&p), "binary entropy of {p}");
    let p = p.clamp(0.0, 1.0);
    let term = |x: f64| if x > 0.0 { -x * x.log2() } else { 0.0 };
    term(p) + term(1.0 - p)
}

pub fn shannon_entropy(p: &[f64]) -> Result<f64> {
    if p.iter().any(|&x| x < -PROB_TOL || !x.is_finite()) {
        return Err(QcmiError::Validation("distribution has a negative entry".into()));
    }
    let sum: f64 = p.iter().sum();
    if (sum - 1.0).abs() > SUM_TOL {
        return Err(QcmiError::Validation(format!("distribution sums to {sum}")));
    }
    Ok(entropy_of_spectrum(p))
}

/// `S(A|B) = S(AB) - S(B)`; may be negative for entangled states.
pub fn conditional_entropy(rho: &DensityMatrix, a: &[&str], b: &[&str]) -> Result<f64> {
    disjoint(&[a, b])?;
    let ab: Vec<&str> = a.iter().chain(b).copied().collect();
    Ok(entropy_value(rho, &ab)? - entropy_value(rho, b)?)
}

/// `I(A:B|C) = S(AC) + S(BC) - S(ABC) - S(C)`; `c` may be empty.
pub fn conditional_mutual_information(
    rho: &DensityMatrix,
    a: &[&str],
    b: &[&str],
    c: &[&str],
) -> Result<EntropyReport> {
    disjoint(&[a, b, c])?;
    let raw = cmi_from_entropies(|set| entropy_value(rho, set), a, b, c)?;
    EntropyReport::floor(raw, CMI_CLAMP_TOL, "conditional mutual information")
}

pub fn mutual_information(rho: &DensityMatrix, a: &[&str], b: &[&str]) -> Result<EntropyReport> {
    conditional_mutual_information(rho, a, b, &[])
}

/// The four-entropy combination over any entropy oracle; shared with the
/// ensemble engine so both routes use one formula.
pub fn cmi_from_entropies<F>(mut entropy: F, a: &[&str], b: &[&str], c: &[&str]) -> Result<f64>
where
    F: FnMut(&[&str]) -> Result<f64>,
{
    let ac: Vec<&str> = a.iter().chain(c).copied().collect();
    let bc: Vec<&str> = b.iter().chain(c).copied().collect();
    let abc: Vec<&str> = a.iter().chain(b).chain(c).copied().collect();
    Ok(entropy(&ac)? + entropy(&bc)? - entropy(&abc)? - entropy(c)?)
}

pub(crate) fn floor_cmi(raw: f64) -> Result<EntropyReport> {
    EntropyReport::floor(raw, CMI_CLAMP_TOL, "conditional mutual information")
}

fn disjoint(sets: &[&[&str]]) -> Result<()> {
    for (i, s) in sets.iter().enumerate() {
        for (j, l) in s.iter().enumerate() {
            if s[..j].contains(l) {
                return Err(QcmiError::Layout(format!("label {l} repeated")));
            }
            if sets[..i].iter().any(|t| t.contains(l)) {
                return Err(QcmiError::Layout(format!("label {l} appears in two subsets")));
            }
        }
    }
    Ok(())
}
