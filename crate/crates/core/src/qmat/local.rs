use crate::error::{QcmiError, Result};

use super::{c64, CMatrix, CVector, SystemLayout};

/// Applies `op` to the registers `labels` (composite index in the given
/// order) of a state vector on `layout`.
pub fn apply_to_vector(
    layout: &SystemLayout,
    labels: &[&str],
    op: &CMatrix,
    v: &CVector,
) -> Result<CVector> {
    let (offs, bases) = layout.split_offsets(labels)?;
    check_op(op, offs.len(), v.len(), layout.total_dim())?;
    let k = offs.len();
    let mut out = CVector::zeros(v.len());
    let mut buf = vec![c64(0.0, 0.0); k];
    for &b in &bases {
        for (i, &o) in offs.iter().enumerate() {
            buf[i] = v[b + o];
        }
        for (i, &o) in offs.iter().enumerate() {
            let mut acc = c64(0.0, 0.0);
            for (j, x) in buf.iter().enumerate() {
                acc += op[(i, j)] * x;
            }
            out[b + o] = acc;
        }
    }
    Ok(out)
}

/// `(op ⊗ I) * m` with `op` acting on `labels`.
pub fn apply_left(layout: &SystemLayout, labels: &[&str], op: &CMatrix, m: &CMatrix) -> Result<CMatrix> {
    let (offs, bases) = layout.split_offsets(labels)?;
    check_op(op, offs.len(), m.nrows(), layout.total_dim())?;
    let k = offs.len();
    let mut out = CMatrix::zeros(m.nrows(), m.ncols());
    let mut buf = vec![c64(0.0, 0.0); k];
    for col in 0..m.ncols() {
        for &b in &bases {
            for (i, &o) in offs.iter().enumerate() {
                buf[i] = m[(b + o, col)];
            }
            for (i, &o) in offs.iter().enumerate() {
                let mut acc = c64(0.0, 0.0);
                for (j, x) in buf.iter().enumerate() {
                    acc += op[(i, j)] * x;
                }
                out[(b + o, col)] = acc;
            }
        }
    }
    Ok(out)
}

/// Full-space matrix of `op` acting on `labels`.
pub fn embed_operator(layout: &SystemLayout, labels: &[&str], op: &CMatrix) -> Result<CMatrix> {
    let n = layout.total_dim();
    apply_left(layout, labels, op, &CMatrix::identity(n, n))
}

/// Reduced density matrix of a pure vector on the kept registers
/// (in layout order).
pub fn reduce_vector(layout: &SystemLayout, v: &CVector, keep: &[&str]) -> Result<(SystemLayout, CMatrix)> {
    let kept = layout.select(keep)?;
    let ordered: Vec<&str> = kept.labels().collect();
    let (offs, bases) = layout.split_offsets(&ordered)?;
    let k = offs.len();
    let mut rho = CMatrix::zeros(k, k);
    for &b in &bases {
        for i in 0..k {
            let vi = v[b + offs[i]];
            if vi.norm_sqr() == 0.0 {
                continue;
            }
            for j in 0..k {
                rho[(i, j)] += vi * v[b + offs[j]].conj();
            }
        }
    }
    Ok((kept, rho))
}

fn check_op(op: &CMatrix, k: usize, n: usize, total: usize) -> Result<()> {
    if op.nrows() != k || op.ncols() != k {
        return Err(QcmiError::Layout(format!(
            "operator is {}x{}, target registers have dimension {k}",
            op.nrows(),
            op.ncols()
        )));
    }
    if n != total {
        return Err(QcmiError::Layout(format!(
            "state has dimension {n}, layout has {total}"
        )));
    }
    Ok(())
}
