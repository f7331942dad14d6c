//! Purified random-oracle simulation over boolean functions `H: [2^n] -> {0,1}`.
//!
//! A table is indexed by `Σ_x H(x) 2^x`, so bit `x` of the index is `H(x)`.
//! The function register of a purified state uses the same indexing.

use std::collections::BTreeMap;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha20Rng;
use serde::de::Error as _;
use serde::{Deserialize, Deserializer, Serialize, Serializer};

use crate::error::{QcmiError, Result};
use crate::qmat::{c64, CMatrix, CVector, DensityMatrix, SystemLayout};

/// Largest domain exponent for enumeration and mixed purified states.
pub const ORACLE_N_CAP: usize = 3;
/// Pure purified states may go one step further.
pub const ORACLE_N_CAP_PURE: usize = 4;
/// Cap on state-vector length for pure purified states.
pub const VECTOR_DIM_CAP: usize = 1 << 22;
pub const FUNCTION_REGISTER: &str = "H";

#[derive(Clone, Debug, PartialEq, Eq, Hash)]
pub struct OracleFunction {
    n: usize,
    table: Vec<bool>,
}

impl OracleFunction {
    pub fn new(n: usize, table: Vec<bool>) -> Result<Self> {
        if n > 20 {
            return Err(QcmiError::Cap(format!("oracle exponent {n} too large")));
        }
        if table.len() != 1 << n {
            return Err(QcmiError::Validation(format!(
                "table has {} entries, expected {}",
                table.len(),
                1usize << n
            )));
        }
        Ok(Self { n, table })
    }

    /// Table with bit `x` of `index` as `H(x)`; requires `2^n <= 64`.
    pub fn from_index(n: usize, index: u64) -> Result<Self> {
        if n > 6 {
            return Err(QcmiError::Cap(format!("index form needs n <= 6, got {n}")));
        }
        let size = 1usize << n;
        if size < 64 && index >> size != 0 {
            return Err(QcmiError::Validation(format!("index {index} out of range for n={n}")));
        }
        Ok(Self { n, table: (0..size).map(|x| (index >> x) & 1 == 1).collect() })
    }

    pub fn constant(n: usize, value: bool) -> Self {
        Self { n, table: vec![value; 1 << n] }
    }

    pub fn n(&self) -> usize {
        self.n
    }

    pub fn domain_size(&self) -> usize {
        self.table.len()
    }

    pub fn eval(&self, x: usize) -> bool {
        self.table[x]
    }

    pub fn bit(&self, x: usize) -> usize {
        self.table[x] as usize
    }

    pub fn table(&self) -> &[bool] {
        &self.table
    }

    pub fn index(&self) -> u64 {
        self.table
            .iter()
            .enumerate()
            .fold(0u64, |acc, (x, &b)| acc | ((b as u64) << x))
    }

    /// Points where the two tables differ.
    pub fn diff(&self, other: &OracleFunction) -> Vec<usize> {
        (0..self.table.len()).filter(|&x| self.table[x] != other.table[x]).collect()
    }

    /// Little-endian packed hex: bit `j` of byte `k` is `H(8k + j)`.
    pub fn to_hex(&self) -> String {
        let mut bytes = vec![0u8; self.table.len().div_ceil(8)];
        for (x, &b) in self.table.iter().enumerate() {
            if b {
                bytes[x / 8] |= 1 << (x % 8);
            }
        }
        bytes.iter().map(|b| format!("{b:02x}")).collect()
    }

    pub fn from_hex(n: usize, hex: &str) -> Result<Self> {
        let size = 1usize << n;
        if hex.len() != 2 * size.div_ceil(8) {
            return Err(QcmiError::Validation(format!("hex table has wrong length for n={n}")));
        }
        let bytes: Vec<u8> = (0..hex.len() / 2)
            .map(|i| u8::from_str_radix(&hex[2 * i..2 * i + 2], 16))
            .collect::<std::result::Result<_, _>>()
            .map_err(|e| QcmiError::Validation(format!("bad hex table: {e}")))?;
        Self::new(n, (0..size).map(|x| bytes[x / 8] >> (x % 8) & 1 == 1).collect())
    }

    /// Unitary of one query on an (input, output) register pair of
    /// dimension `2^n * 2`, composite index `x * 2 + y`.
    pub fn query_operator(&self, mode: QueryMode) -> CMatrix {
        let size = self.table.len();
        let mut m = CMatrix::zeros(2 * size, 2 * size);
        for x in 0..size {
            let h = self.bit(x);
            for y in 0..2 {
                let col = 2 * x + y;
                match mode {
                    QueryMode::Phase => {
                        let sign = if y * h == 1 { -1.0 } else { 1.0 };
                        m[(col, col)] = c64(sign, 0.0);
                    }
                    QueryMode::Xor | QueryMode::Classical => {
                        m[(2 * x + (y ^ h), col)] = c64(1.0, 0.0);
                    }
                }
            }
        }
        m
    }
}

#[derive(Serialize, Deserialize)]
struct OracleWire {
    n: usize,
    table: String,
}

impl Serialize for OracleFunction {
    fn serialize<S: Serializer>(&self, s: S) -> std::result::Result<S::Ok, S::Error> {
        OracleWire { n: self.n, table: self.to_hex() }.serialize(s)
    }
}

impl<'de> Deserialize<'de> for OracleFunction {
    fn deserialize<D: Deserializer<'de>>(d: D) -> std::result::Result<Self, D::Error> {
        let w = OracleWire::deserialize(d)?;
        OracleFunction::from_hex(w.n, &w.table).map_err(D::Error::custom)
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum QueryMode {
    /// `|x,y> -> (-1)^{y H(x)} |x,y>`
    Phase,
    /// `|x,y> -> |x, y ⊕ H(x)>`
    Xor,
    /// Measure the input register, then query in xor form.
    Classical,
}

pub fn sample_oracle(n: usize, seed: u64) -> Result<OracleFunction> {
    let mut rng = ChaCha20Rng::seed_from_u64(seed);
    sample_oracle_with(n, &mut rng)
}

pub fn sample_oracle_with<R: Rng + ?Sized>(n: usize, rng: &mut R) -> Result<OracleFunction> {
    OracleFunction::new(n, (0..1usize << n).map(|_| rng.gen::<bool>()).collect())
}

/// All `2^(2^n)` tables in index order.
pub fn enumerate_oracles(n: usize) -> Result<impl Iterator<Item = OracleFunction>> {
    if n > ORACLE_N_CAP {
        return Err(QcmiError::Cap(format!(
            "enumeration needs n <= {ORACLE_N_CAP}, got {n}"
        )));
    }
    let count = 1u64 << (1u64 << n);
    Ok((0..count).map(move |i| OracleFunction::from_index(n, i).expect("index in range")))
}

pub fn oracle_count(n: usize) -> usize {
    1usize << (1usize << n)
}

/// Consistent list of query input/output pairs, sorted by input.
#[derive(Clone, Debug, Default, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct QueryRecord {
    pairs: Vec<(usize, bool)>,
}

impl QueryRecord {
    pub fn new(pairs: impl IntoIterator<Item = (usize, bool)>) -> Result<Self> {
        let mut rec = Self::default();
        for (x, y) in pairs {
            rec.insert(x, y)?;
        }
        Ok(rec)
    }

    pub fn insert(&mut self, x: usize, y: bool) -> Result<()> {
        match self.pairs.binary_search_by_key(&x, |p| p.0) {
            Ok(i) if self.pairs[i].1 != y => Err(QcmiError::Validation(format!(
                "conflicting record entries at x={x}"
            ))),
            Ok(_) => Ok(()),
            Err(i) => {
                self.pairs.insert(i, (x, y));
                Ok(())
            }
        }
    }

    pub fn pairs(&self) -> &[(usize, bool)] {
        &self.pairs
    }

    pub fn inputs(&self) -> impl Iterator<Item = usize> + '_ {
        self.pairs.iter().map(|p| p.0)
    }

    pub fn get(&self, x: usize) -> Option<bool> {
        self.pairs
            .binary_search_by_key(&x, |p| p.0)
            .ok()
            .map(|i| self.pairs[i].1)
    }

    pub fn len(&self) -> usize {
        self.pairs.len()
    }

    pub fn is_empty(&self) -> bool {
        self.pairs.is_empty()
    }

    pub fn consistent_with(&self, h: &OracleFunction) -> bool {
        self.pairs.iter().all(|&(x, y)| x < h.domain_size() && h.eval(x) == y)
    }

    /// Whether the two records agree wherever both are defined.
    pub fn compatible(&self, other: &QueryRecord) -> bool {
        other.pairs.iter().all(|&(x, y)| self.get(x).is_none_or(|v| v == y))
    }

    /// Record of `h` restricted to the inputs in `mask` (bit `x` set).
    pub fn from_mask(h: &OracleFunction, mask: u64) -> Self {
        Self {
            pairs: (0..h.domain_size())
                .filter(|x| mask >> x & 1 == 1)
                .map(|x| (x, h.eval(x)))
                .collect(),
        }
    }
}

/// Oracle equal to the record on its inputs and to `h` elsewhere.
pub fn reprogram_oracle(h: &OracleFunction, r: &QueryRecord) -> Result<OracleFunction> {
    let mut table = h.table.clone();
    for &(x, y) in &r.pairs {
        if x >= table.len() {
            return Err(QcmiError::Validation(format!("record input {x} outside domain")));
        }
        table[x] = y;
    }
    OracleFunction::new(h.n, table)
}

#[derive(Clone, Debug)]
pub enum OracleStateData {
    Pure(CVector),
    Mixed(DensityMatrix),
}

/// Joint state of work registers and the function register `H`
/// (always the last factor).
#[derive(Clone, Debug)]
pub struct PurifiedOracleState {
    n: usize,
    layout: SystemLayout,
    data: OracleStateData,
}

pub fn init_purified_oracle(n: usize, extra: SystemLayout) -> Result<PurifiedOracleState> {
    init_purified_oracle_capped(n, extra, ORACLE_N_CAP)
}

pub fn init_purified_oracle_capped(n: usize, extra: SystemLayout, n_cap: usize) -> Result<PurifiedOracleState> {
    if n > n_cap.min(ORACLE_N_CAP_PURE) {
        return Err(QcmiError::Cap(format!("oracle exponent {n} exceeds cap {n_cap}")));
    }
    let fdim = oracle_count(n);
    let layout = SystemLayout::with_cap(
        extra.factors().iter().cloned().chain([(FUNCTION_REGISTER.to_string(), fdim)]),
        VECTOR_DIM_CAP,
    )?;
    let mut v = CVector::zeros(layout.total_dim());
    let amp = c64(1.0 / (fdim as f64).sqrt(), 0.0);
    for h in 0..fdim {
        v[h] = amp;
    }
    Ok(PurifiedOracleState { n, layout, data: OracleStateData::Pure(v) })
}

impl PurifiedOracleState {
    pub fn from_pure(n: usize, layout: SystemLayout, v: CVector) -> Result<Self> {
        check_function_register(n, &layout)?;
        if v.len() != layout.total_dim() {
            return Err(QcmiError::Layout("vector length does not match layout".into()));
        }
        Ok(Self { n, layout, data: OracleStateData::Pure(v) })
    }

    pub fn n(&self) -> usize {
        self.n
    }

    pub fn layout(&self) -> &SystemLayout {
        &self.layout
    }

    pub fn data(&self) -> &OracleStateData {
        &self.data
    }

    pub fn vector(&self) -> Option<&CVector> {
        match &self.data {
            OracleStateData::Pure(v) => Some(v),
            OracleStateData::Mixed(_) => None,
        }
    }

    pub fn norm(&self) -> f64 {
        match &self.data {
            OracleStateData::Pure(v) => v.norm(),
            OracleStateData::Mixed(r) => r.trace(),
        }
    }

    /// Density matrix of the whole state (respects the dense cap).
    pub fn to_density(&self) -> Result<DensityMatrix> {
        match &self.data {
            OracleStateData::Pure(v) => {
                let layout = SystemLayout::new(self.layout.factors().iter().cloned())?;
                Ok(DensityMatrix::from_matrix_unchecked(layout, v * v.adjoint()))
            }
            OracleStateData::Mixed(r) => Ok(r.clone()),
        }
    }

    /// Reduced state on `keep`.
    pub fn reduced(&self, keep: &[&str]) -> Result<DensityMatrix> {
        match &self.data {
            OracleStateData::Pure(v) => crate::qmat::reduce_pure(&self.layout, v, keep),
            OracleStateData::Mixed(r) => r.partial_trace(keep),
        }
    }

    /// Local operator on work registers.
    pub fn apply_unitary(&self, labels: &[&str], u: &CMatrix) -> Result<Self> {
        if labels.contains(&FUNCTION_REGISTER) {
            return Err(QcmiError::Layout("local operations may not touch the function register".into()));
        }
        let data = match &self.data {
            OracleStateData::Pure(v) => {
                OracleStateData::Pure(crate::qmat::apply_to_vector(&self.layout, labels, u, v)?)
            }
            OracleStateData::Mixed(r) => OracleStateData::Mixed(r.apply_unitary(labels, u)?),
        };
        Ok(Self { n: self.n, layout: self.layout.clone(), data })
    }
}

fn check_function_register(n: usize, layout: &SystemLayout) -> Result<()> {
    let last = layout
        .factors()
        .last()
        .ok_or_else(|| QcmiError::Layout("missing function register".into()))?;
    if last.0 != FUNCTION_REGISTER || last.1 != oracle_count(n) {
        return Err(QcmiError::Layout(format!(
            "last factor must be {FUNCTION_REGISTER} of dimension {}",
            oracle_count(n)
        )));
    }
    Ok(())
}

/// Classical-mode queries require the input register to carry no coherence
/// beyond this.
pub const CLASSICAL_INPUT_TOL: f64 = 1e-9;

pub fn apply_query(
    state: &PurifiedOracleState,
    mode: QueryMode,
    in_label: &str,
    out_label: &str,
) -> Result<PurifiedOracleState> {
    let size = 1usize << state.n;
    let layout = &state.layout;
    if layout.dim_of(in_label)? != size {
        return Err(QcmiError::Layout(format!("input register {in_label} must have dimension {size}")));
    }
    if layout.dim_of(out_label)? != 2 {
        return Err(QcmiError::Layout(format!("output register {out_label} must be a qubit")));
    }
    if mode == QueryMode::Classical {
        let red = state.reduced(&[in_label])?;
        let coh = red.coherence_on(in_label)?;
        if coh > CLASSICAL_INPUT_TOL {
            return Err(QcmiError::Mode(format!(
                "classical query on superposed input (coherence {coh:e})"
            )));
        }
    }
    // the operator acts on (in, out, H); build it once as a permutation/phase map
    let fdim = oracle_count(state.n);
    let labels = [in_label, out_label, FUNCTION_REGISTER];
    let (offs, bases) = layout.split_offsets(&labels)?;
    let k = offs.len();
    // map composite (x, y, h) -> (target composite, sign)
    let map: Vec<(usize, f64)> = (0..k)
        .map(|idx| {
            let h = idx % fdim;
            let y = (idx / fdim) % 2;
            let x = idx / (2 * fdim);
            let hx = (h >> x) & 1;
            match mode {
                QueryMode::Phase => (idx, if y & hx == 1 { -1.0 } else { 1.0 }),
                QueryMode::Xor | QueryMode::Classical => ((x * 2 + (y ^ hx)) * fdim + h, 1.0),
            }
        })
        .collect();
    let data = match &state.data {
        OracleStateData::Pure(v) => {
            let mut out = CVector::zeros(v.len());
            for &b in &bases {
                for (src, &(dst, sign)) in map.iter().enumerate() {
                    out[b + offs[dst]] = v[b + offs[src]] * sign;
                }
            }
            // a classical input is already decohered, so the xor action suffices
            OracleStateData::Pure(out)
        }
        OracleStateData::Mixed(r) => {
            let r = if mode == QueryMode::Classical { r.dephase(in_label)? } else { r.clone() };
            let n = r.dim();
            let mut perm = vec![(0usize, 1.0f64); n];
            for &b in &bases {
                for (src, &(dst, sign)) in map.iter().enumerate() {
                    perm[b + offs[src]] = (b + offs[dst], sign);
                }
            }
            let m = r.matrix();
            let mut out = CMatrix::zeros(n, n);
            for i in 0..n {
                let (pi, si) = perm[i];
                for j in 0..n {
                    let (pj, sj) = perm[j];
                    out[(pi, pj)] = m[(i, j)] * (si * sj);
                }
            }
            OracleStateData::Mixed(DensityMatrix::from_matrix_unchecked(r.layout().clone(), out))
        }
    };
    Ok(PurifiedOracleState { n: state.n, layout: state.layout.clone(), data })
}

/// In-place normalized Walsh-Hadamard transform on the function register.
fn fourier_on_function_register(layout: &SystemLayout, v: &CVector) -> Result<CVector> {
    let (offs, bases) = layout.split_offsets(&[FUNCTION_REGISTER])?;
    let k = offs.len();
    let scale = 1.0 / (k as f64).sqrt();
    let mut out = v.clone();
    let mut buf = vec![c64(0.0, 0.0); k];
    for &b in &bases {
        for (i, &o) in offs.iter().enumerate() {
            buf[i] = v[b + o];
        }
        let mut h = 1;
        while h < k {
            for i in (0..k).step_by(2 * h) {
                for j in i..i + h {
                    let (a, c) = (buf[j], buf[j + h]);
                    buf[j] = a + c;
                    buf[j + h] = a - c;
                }
            }
            h *= 2;
        }
        for (i, &o) in offs.iter().enumerate() {
            out[b + o] = buf[i] * scale;
        }
    }
    Ok(out)
}

/// Amplitudes of a pure state in the Fourier (database) basis of `H`.
pub fn fourier_view(state: &PurifiedOracleState) -> Result<CVector> {
    match &state.data {
        OracleStateData::Pure(v) => fourier_on_function_register(&state.layout, v),
        OracleStateData::Mixed(_) => Err(QcmiError::Precondition("Fourier view needs a pure state".into())),
    }
}

/// Work-register vectors `α_D|ψ_D⟩` of `Σ_D α_D|ψ_D⟩|D̂⟩`, keyed by the
/// database bit mask; components with zero norm are dropped.
pub fn database_components(state: &PurifiedOracleState) -> Result<BTreeMap<usize, CVector>> {
    let (offs, bases) = state.layout.split_offsets(&[FUNCTION_REGISTER])?;
    let f = fourier_view(state)?;
    let mut out = BTreeMap::new();
    for (d, &o) in offs.iter().enumerate() {
        let v = CVector::from_iterator(bases.len(), bases.iter().map(|&b| f[b + o]));
        if v.norm() > 0.0 {
            out.insert(d, v);
        }
    }
    Ok(out)
}

/// Largest `|⟨ψ_D|ψ_D′⟩|` over distinct databases, with each `ψ_D`
/// normalized; components below `min_norm` are skipped.
pub fn max_database_overlap(state: &PurifiedOracleState, min_norm: f64) -> Result<f64> {
    let comps: Vec<CVector> = database_components(state)?
        .into_values()
        .filter(|v| v.norm() >= min_norm)
        .map(|v| {
            let n = v.norm();
            v.unscale(n)
        })
        .collect();
    let mut worst = 0.0f64;
    for i in 0..comps.len() {
        for j in i + 1..comps.len() {
            worst = worst.max(comps[i].dotc(&comps[j]).norm());
        }
    }
    Ok(worst)
}

/// Probability mass on Fourier databases of each Hamming weight.
pub fn fourier_support_weights(state: &PurifiedOracleState) -> Result<BTreeMap<usize, f64>> {
    let (offs, bases) = state.layout.split_offsets(&[FUNCTION_REGISTER])?;
    let mut out = BTreeMap::new();
    match &state.data {
        OracleStateData::Pure(_) => {
            let f = fourier_view(state)?;
            for (d, &o) in offs.iter().enumerate() {
                let mass: f64 = bases.iter().map(|&b| f[b + o].norm_sqr()).sum();
                *out.entry(d.count_ones() as usize).or_insert(0.0) += mass;
            }
        }
        OracleStateData::Mixed(r) => {
            let k = offs.len();
            let w = crate::qmat::walsh_hadamard(k.trailing_zeros() as usize);
            let conj = r.apply_unitary(&[FUNCTION_REGISTER], &w)?;
            for (d, &o) in offs.iter().enumerate() {
                let mass: f64 = bases.iter().map(|&b| conj.matrix()[(b + o, b + o)].re).sum();
                *out.entry(d.count_ones() as usize).or_insert(0.0) += mass;
            }
        }
    }
    out.retain(|_, m| *m > 1e-15);
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::qmat::{hadamard, max_abs};

    fn work(n: usize) -> SystemLayout {
        SystemLayout::new([("x", 1usize << n), ("y", 2)]).unwrap()
    }

    #[test]
    fn initial_state_n1() {
        let s = init_purified_oracle(1, SystemLayout::empty()).unwrap();
        let v = s.vector().unwrap();
        assert_eq!(v.len(), 4);
        for i in 0..4 {
            assert!((v[i].re - 0.5).abs() < 1e-15);
        }
    }

    #[test]
    fn initial_fourier_view_is_zero_database() {
        let s = init_purified_oracle(2, work(2)).unwrap();
        let w = fourier_support_weights(&s).unwrap();
        assert_eq!(w.len(), 1);
        assert!((w[&0] - 1.0).abs() < 1e-12);
        let f = fourier_view(&s).unwrap();
        assert!((f[0].norm() - 1.0).abs() < 1e-12);
    }

    #[test]
    fn n3_dimension_and_norm() {
        let s = init_purified_oracle(3, SystemLayout::empty()).unwrap();
        assert_eq!(s.layout().total_dim(), 256);
        assert!((s.norm() - 1.0).abs() < 1e-12);
        assert!(init_purified_oracle(4, SystemLayout::empty()).is_err());
        assert!(init_purified_oracle_capped(4, SystemLayout::empty(), 4).is_ok());
    }

    #[test]
    fn phase_query_with_y_zero_is_identity() {
        let s = init_purified_oracle(1, work(1)).unwrap();
        let s = s.apply_unitary(&["x"], &hadamard()).unwrap();
        let q = apply_query(&s, QueryMode::Phase, "x", "y").unwrap();
        assert!((q.vector().unwrap() - s.vector().unwrap()).norm() < 1e-15);
    }

    #[test]
    fn xor_query_output_is_uniform() {
        let s = init_purified_oracle(2, work(2)).unwrap();
        let q = apply_query(&s, QueryMode::Xor, "x", "y").unwrap();
        let r = q.reduced(&["y"]).unwrap();
        assert!((r.matrix()[(0, 0)].re - 0.5).abs() < 1e-12);
        assert!((r.matrix()[(1, 1)].re - 0.5).abs() < 1e-12);
    }

    #[test]
    fn superposed_phase_query_has_weight_at_most_one() {
        let s = init_purified_oracle(1, work(1)).unwrap();
        let s = s
            .apply_unitary(&["x"], &hadamard())
            .unwrap()
            .apply_unitary(&["y"], &crate::qmat::pauli_x())
            .unwrap();
        let q = apply_query(&s, QueryMode::Phase, "x", "y").unwrap();
        let w = fourier_support_weights(&q).unwrap();
        let total: f64 = w.values().sum();
        assert!((total - 1.0).abs() < 1e-12);
        assert!(w.iter().filter(|(k, _)| **k > 1).all(|(_, m)| *m <= 1e-12));
        assert!((w[&1] - 1.0).abs() < 1e-12);
    }

    #[test]
    fn parallel_queries_give_orthogonal_databases() {
        let layout = SystemLayout::new([("x1", 2usize), ("y1", 2), ("x2", 2), ("y2", 2)]).unwrap();
        let mut s = init_purified_oracle(1, layout).unwrap();
        let mut rng = ChaCha20Rng::seed_from_u64(4);
        s = s.apply_unitary(&["x1", "y1", "x2", "y2"], &crate::qmat::random::random_unitary(16, &mut rng)).unwrap();
        for (x, y) in [("x1", "y1"), ("x2", "y2")] {
            s = apply_query(&s, QueryMode::Phase, x, y).unwrap();
        }
        let comps = database_components(&s).unwrap();
        let mass: f64 = comps.values().map(|v| v.norm_squared()).sum();
        assert!((mass - 1.0).abs() < 1e-12);
        assert!(comps.len() > 1);
        assert!(max_database_overlap(&s, 1e-9).unwrap() < 1e-12);
    }

    #[test]
    fn classical_query_rejects_superposed_input() {
        let s = init_purified_oracle(1, work(1)).unwrap();
        let s = s.apply_unitary(&["x"], &hadamard()).unwrap();
        assert!(matches!(apply_query(&s, QueryMode::Classical, "x", "y"), Err(QcmiError::Mode(_))));
    }

    #[test]
    fn phase_and_xor_equivalent_under_hadamard() {
        let s = init_purified_oracle(1, work(1)).unwrap();
        let s = s.apply_unitary(&["x"], &hadamard()).unwrap();
        let s = s.apply_unitary(&["y"], &crate::qmat::pauli_x()).unwrap();
        let xor = apply_query(&s, QueryMode::Xor, "x", "y").unwrap();
        let h = hadamard();
        let ph = apply_query(&s.apply_unitary(&["y"], &h).unwrap(), QueryMode::Phase, "x", "y")
            .unwrap()
            .apply_unitary(&["y"], &h)
            .unwrap();
        assert!((xor.vector().unwrap() - ph.vector().unwrap()).norm() < 1e-12);
    }

    #[test]
    fn mixed_and_pure_queries_agree() {
        let s = init_purified_oracle(1, work(1)).unwrap();
        let s = s.apply_unitary(&["x"], &hadamard()).unwrap();
        let mixed = PurifiedOracleState {
            n: 1,
            layout: s.layout.clone(),
            data: OracleStateData::Mixed(s.to_density().unwrap()),
        };
        let a = apply_query(&s, QueryMode::Xor, "x", "y").unwrap().to_density().unwrap();
        let b = apply_query(&mixed, QueryMode::Xor, "x", "y").unwrap().to_density().unwrap();
        assert!(max_abs(&(a.matrix() - b.matrix())) < 1e-14);
    }

    #[test]
    fn enumeration_and_sampling() {
        assert_eq!(enumerate_oracles(1).unwrap().count(), 4);
        assert!(enumerate_oracles(4).is_err());
        let a = sample_oracle(3, 42).unwrap();
        let b = sample_oracle(3, 42).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn hex_round_trip() {
        for h in enumerate_oracles(3).unwrap().step_by(37) {
            let json = serde_json::to_string(&h).unwrap();
            let back: OracleFunction = serde_json::from_str(&json).unwrap();
            assert_eq!(back, h);
        }
        let h = OracleFunction::from_index(1, 2).unwrap();
        assert_eq!(serde_json::to_string(&h).unwrap(), r#"{"n":1,"table":"02"}"#);
    }

    #[test]
    fn reprogram_cases() {
        let h = OracleFunction::from_index(2, 0b1010).unwrap();
        assert_eq!(reprogram_oracle(&h, &QueryRecord::default()).unwrap(), h);
        let full = QueryRecord::new((0..4).map(|x| (x, x == 0))).unwrap();
        assert_eq!(reprogram_oracle(&h, &full).unwrap().index(), 0b0001);
        let flip = QueryRecord::new([(0, !h.eval(0))]).unwrap();
        assert_eq!(h.diff(&reprogram_oracle(&h, &flip).unwrap()), vec![0]);
        assert!(QueryRecord::new([(1, true), (1, false)]).is_err());
    }
}
