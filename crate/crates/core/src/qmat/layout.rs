use std::fmt;

use serde::{Deserialize, Serialize};

use crate::error::{QcmiError, Result};

/// Default cap on the total Hilbert-space dimension of a layout.
pub const DEFAULT_DIM_CAP: usize = 1 << 14;

/// Dimension cap, overridable through the `QML_DIM_CAP` environment variable.
pub fn dim_cap() -> usize {
    std::env::var("QML_DIM_CAP")
        .ok()
        .and_then(|v| v.trim().parse::<usize>().ok())
        .filter(|&v| v > 0)
        .unwrap_or(DEFAULT_DIM_CAP)
}

/// Ordered list of named tensor factors. The factor order is the tensor order
/// used by every matrix and vector built on this layout (first factor is the
/// most significant digit of a basis index).
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct SystemLayout {
    factors: Vec<(String, usize)>,
}

impl SystemLayout {
    pub fn new<S: Into<String>>(factors: impl IntoIterator<Item = (S, usize)>) -> Result<Self> {
        Self::with_cap(factors, dim_cap())
    }

    pub fn with_cap<S: Into<String>>(
        factors: impl IntoIterator<Item = (S, usize)>,
        cap: usize,
    ) -> Result<Self> {
        let factors: Vec<(String, usize)> =
            factors.into_iter().map(|(l, d)| (l.into(), d)).collect();
        let mut total: usize = 1;
        for (i, (label, dim)) in factors.iter().enumerate() {
            if *dim == 0 {
                return Err(QcmiError::Layout(format!("factor {label} has dimension 0")));
            }
            if factors[..i].iter().any(|(l, _)| l == label) {
                return Err(QcmiError::Layout(format!("duplicate label {label}")));
            }
            total = total
                .checked_mul(*dim)
                .ok_or_else(|| QcmiError::Cap("dimension overflow".into()))?;
            if total > cap {
                return Err(QcmiError::Cap(format!(
                    "total dimension exceeds cap {cap} at factor {label}"
                )));
            }
        }
        Ok(Self { factors })
    }

    pub fn empty() -> Self {
        Self { factors: Vec::new() }
    }

    /// A single-qubit layout with the given label.
    pub fn qubit(label: &str) -> Self {
        Self { factors: vec![(label.to_string(), 2)] }
    }

    pub fn factors(&self) -> &[(String, usize)] {
        &self.factors
    }

    pub fn len(&self) -> usize {
        self.factors.len()
    }

    pub fn is_empty(&self) -> bool {
        self.factors.is_empty()
    }

    pub fn labels(&self) -> impl Iterator<Item = &str> {
        self.factors.iter().map(|(l, _)| l.as_str())
    }

    pub fn dims(&self) -> Vec<usize> {
        self.factors.iter().map(|(_, d)| *d).collect()
    }

    pub fn total_dim(&self) -> usize {
        self.factors.iter().map(|(_, d)| *d).product()
    }

    pub fn contains(&self, label: &str) -> bool {
        self.position(label).is_some()
    }

    pub fn position(&self, label: &str) -> Option<usize> {
        self.factors.iter().position(|(l, _)| l == label)
    }

    pub fn dim_of(&self, label: &str) -> Result<usize> {
        self.position(label)
            .map(|p| self.factors[p].1)
            .ok_or_else(|| QcmiError::Layout(format!("unknown label {label}")))
    }

    /// Row-major strides: index = sum(digit_k * stride_k).
    pub fn strides(&self) -> Vec<usize> {
        let mut strides = vec![1; self.factors.len()];
        for k in (0..self.factors.len().saturating_sub(1)).rev() {
            strides[k] = strides[k + 1] * self.factors[k + 1].1;
        }
        strides
    }

    pub fn digits(&self, mut index: usize) -> Vec<usize> {
        let mut out = vec![0; self.factors.len()];
        for k in (0..self.factors.len()).rev() {
            let d = self.factors[k].1;
            out[k] = index % d;
            index /= d;
        }
        out
    }

    pub fn index_of(&self, digits: &[usize]) -> usize {
        digits
            .iter()
            .zip(self.factors.iter())
            .fold(0, |acc, (&g, (_, d))| acc * d + g)
    }

    /// Concatenation `self ⊗ other`; labels must be disjoint.
    pub fn concat(&self, other: &SystemLayout) -> Result<SystemLayout> {
        for (l, _) in &other.factors {
            if self.contains(l) {
                return Err(QcmiError::Layout(format!("label collision on {l}")));
            }
        }
        Self::new(self.factors.iter().cloned().chain(other.factors.iter().cloned()))
    }

    /// Sub-layout holding `labels`, in this layout's order.
    pub fn select(&self, labels: &[&str]) -> Result<SystemLayout> {
        for l in labels {
            if !self.contains(l) {
                return Err(QcmiError::Layout(format!("unknown label {l}")));
            }
        }
        Ok(SystemLayout {
            factors: self
                .factors
                .iter()
                .filter(|(l, _)| labels.contains(&l.as_str()))
                .cloned()
                .collect(),
        })
    }

    /// Labels of this layout that are not in `labels`.
    pub fn complement(&self, labels: &[&str]) -> Vec<String> {
        self.factors
            .iter()
            .filter(|(l, _)| !labels.contains(&l.as_str()))
            .map(|(l, _)| l.clone())
            .collect()
    }

    /// Offsets for the composite index of `targets` (in the given order) and
    /// base indices enumerating every assignment of the remaining factors.
    ///
    /// Every basis index decomposes uniquely as `base + offset`.
    pub fn split_offsets(&self, targets: &[&str]) -> Result<(Vec<usize>, Vec<usize>)> {
        let strides = self.strides();
        let mut positions = Vec::with_capacity(targets.len());
        for t in targets {
            let p = self
                .position(t)
                .ok_or_else(|| QcmiError::Layout(format!("unknown label {t}")))?;
            if positions.contains(&p) {
                return Err(QcmiError::Layout(format!("label {t} listed twice")));
            }
            positions.push(p);
        }
        let target_dims: Vec<usize> = positions.iter().map(|&p| self.factors[p].1).collect();
        let target_strides: Vec<usize> = positions.iter().map(|&p| strides[p]).collect();
        let rest: Vec<usize> = (0..self.factors.len()).filter(|p| !positions.contains(p)).collect();
        let rest_dims: Vec<usize> = rest.iter().map(|&p| self.factors[p].1).collect();
        let rest_strides: Vec<usize> = rest.iter().map(|&p| strides[p]).collect();
        Ok((
            mixed_radix_offsets(&target_dims, &target_strides),
            mixed_radix_offsets(&rest_dims, &rest_strides),
        ))
    }
}

fn mixed_radix_offsets(dims: &[usize], strides: &[usize]) -> Vec<usize> {
    let total: usize = dims.iter().product();
    let mut out = Vec::with_capacity(total);
    let mut digits = vec![0usize; dims.len()];
    for _ in 0..total {
        out.push(digits.iter().zip(strides).map(|(g, s)| g * s).sum());
        for k in (0..dims.len()).rev() {
            digits[k] += 1;
            if digits[k] < dims[k] {
                break;
            }
            digits[k] = 0;
        }
    }
    out
}

impl fmt::Display for SystemLayout {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let parts: Vec<String> = self.factors.iter().map(|(l, d)| format!("{l}:{d}")).collect();
        write!(f, "[{}]", parts.join(", "))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn duplicate_labels_rejected() {
        assert!(SystemLayout::new([("A", 2), ("A", 3)]).is_err());
    }

    #[test]
    fn cap_enforced() {
        assert!(SystemLayout::with_cap([("A", 64), ("B", 64)], 1024).is_err());
        assert!(SystemLayout::with_cap([("A", 32), ("B", 32)], 1024).is_ok());
    }

    #[test]
    fn digits_round_trip() {
        let l = SystemLayout::new([("A", 2), ("B", 3), ("C", 4)]).unwrap();
        for i in 0..24 {
            assert_eq!(l.index_of(&l.digits(i)), i);
        }
        assert_eq!(l.strides(), vec![12, 4, 1]);
    }

    #[test]
    fn split_offsets_cover_every_index() {
        let l = SystemLayout::new([("A", 2), ("B", 3), ("C", 2)]).unwrap();
        let (offs, bases) = l.split_offsets(&["C", "A"]).unwrap();
        let mut seen: Vec<usize> = bases
            .iter()
            .flat_map(|b| offs.iter().map(move |o| b + o))
            .collect();
        seen.sort();
        assert_eq!(seen, (0..12).collect::<Vec<_>>());
        // first listed target is the most significant digit
        assert_eq!(offs, vec![0, 6, 1, 7]);
    }
}
