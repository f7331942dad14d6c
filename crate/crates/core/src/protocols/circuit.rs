//! Query circuits and their two simulators: branching runs against a fixed
//! oracle, and deferred-measurement runs against the purified oracle.

use std::fmt;
use std::sync::Arc;

use crate::error::{QcmiError, Result};
use crate::oraclesim::{oracle_count, OracleFunction, QueryMode, FUNCTION_REGISTER};
use crate::qmat::{apply_to_vector, c64, reduce_vector, CMatrix, CVector, SystemLayout};

/// Coherence above this on a classical-mode query input is an error.
pub const CLASSICAL_COHERENCE_TOL: f64 = 1e-9;
/// Branches lighter than this are dropped.
pub const BRANCH_FLOOR: f64 = 1e-15;

type ClassicalMap = dyn Fn(&[usize]) -> usize + Send + Sync;

#[derive(Clone)]
pub struct ClassicalFn(pub Arc<ClassicalMap>);

impl ClassicalFn {
    pub fn new(f: impl Fn(&[usize]) -> usize + Send + Sync + 'static) -> Self {
        Self(Arc::new(f))
    }

    pub fn call(&self, args: &[usize]) -> usize {
        (self.0)(args)
    }
}

impl fmt::Debug for ClassicalFn {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str("ClassicalFn")
    }
}

#[derive(Clone, Debug)]
pub enum QueryInput {
    Register(String),
    /// Input computed from classical registers, without a register of its own.
    Computed { inputs: Vec<String>, f: ClassicalFn },
}

#[derive(Clone, Debug)]
pub enum Step {
    Unitary { labels: Vec<String>, op: CMatrix },
    /// `out <- (out + f(inputs)) mod dim(out)`.
    Classical { inputs: Vec<String>, output: String, f: ClassicalFn },
    Query { mode: QueryMode, input: QueryInput, output: String },
    /// Uniform value in `[0, values)` written into a register holding `|0>`;
    /// `env` purifies it in deferred-measurement runs.
    Coin { label: String, values: usize, env: String },
    /// Computational-basis measurement; `env` records it in deferred runs.
    Measure { label: String, env: String },
}

impl Step {
    pub fn unitary(labels: &[&str], op: CMatrix) -> Self {
        Step::Unitary { labels: labels.iter().map(|s| s.to_string()).collect(), op }
    }

    pub fn classical(inputs: &[&str], output: &str, f: impl Fn(&[usize]) -> usize + Send + Sync + 'static) -> Self {
        Step::Classical {
            inputs: inputs.iter().map(|s| s.to_string()).collect(),
            output: output.to_string(),
            f: ClassicalFn::new(f),
        }
    }

    pub fn query(mode: QueryMode, input: &str, output: &str) -> Self {
        Step::Query { mode, input: QueryInput::Register(input.to_string()), output: output.to_string() }
    }

    pub fn query_at(
        mode: QueryMode,
        inputs: &[&str],
        output: &str,
        f: impl Fn(&[usize]) -> usize + Send + Sync + 'static,
    ) -> Self {
        Step::Query {
            mode,
            input: QueryInput::Computed {
                inputs: inputs.iter().map(|s| s.to_string()).collect(),
                f: ClassicalFn::new(f),
            },
            output: output.to_string(),
        }
    }

    pub fn coin(label: &str, values: usize) -> Self {
        Step::Coin { label: label.to_string(), values, env: env_label(label) }
    }

    pub fn measure(label: &str) -> Self {
        Step::Measure { label: label.to_string(), env: env_label(label) }
    }

    pub fn is_query(&self) -> bool {
        matches!(self, Step::Query { .. })
    }

    /// `(register, env register)` for steps that need purification.
    pub fn env(&self) -> Option<(&str, &str)> {
        match self {
            Step::Coin { label, env, .. } | Step::Measure { label, env } => Some((label, env)),
            _ => None,
        }
    }
}

pub fn env_label(label: &str) -> String {
    format!("{label}~env")
}

#[derive(Clone, Debug)]
pub struct QueryCircuit {
    pub n: usize,
    pub steps: Vec<Step>,
}

impl QueryCircuit {
    pub fn new(n: usize, steps: Vec<Step>) -> Self {
        Self { n, steps }
    }

    /// Number of query steps.
    pub fn d(&self) -> usize {
        self.steps.iter().filter(|s| s.is_query()).count()
    }

    /// Qubits a query acts on.
    pub fn e(&self) -> usize {
        self.n + 1
    }

    /// Index just past the last query step.
    pub fn post_queries(&self) -> usize {
        self.steps.iter().rposition(Step::is_query).map_or(0, |i| i + 1)
    }

    pub fn prefix(&self, end: usize) -> QueryCircuit {
        QueryCircuit { n: self.n, steps: self.steps[..end].to_vec() }
    }

    pub fn suffix(&self, start: usize) -> QueryCircuit {
        QueryCircuit { n: self.n, steps: self.steps[start..].to_vec() }
    }

    /// Same circuit with every register label passed through `f`.
    pub fn renamed(&self, f: impl Fn(&str) -> String) -> QueryCircuit {
        let names = |v: &[String]| v.iter().map(|l| f(l)).collect::<Vec<_>>();
        let steps = self
            .steps
            .iter()
            .map(|s| match s {
                Step::Unitary { labels, op } => Step::Unitary { labels: names(labels), op: op.clone() },
                Step::Classical { inputs, output, f: g } => {
                    Step::Classical { inputs: names(inputs), output: f(output), f: g.clone() }
                }
                Step::Query { mode, input, output } => Step::Query {
                    mode: *mode,
                    input: match input {
                        QueryInput::Register(l) => QueryInput::Register(f(l)),
                        QueryInput::Computed { inputs, f: g } => {
                            QueryInput::Computed { inputs: names(inputs), f: g.clone() }
                        }
                    },
                    output: f(output),
                },
                Step::Coin { label, values, env } => Step::Coin { label: f(label), values: *values, env: f(env) },
                Step::Measure { label, env } => Step::Measure { label: f(label), env: f(env) },
            })
            .collect();
        QueryCircuit { n: self.n, steps }
    }

    /// Env registers of coin and measurement steps, paired with their source.
    pub fn env_registers(&self) -> Vec<(String, String)> {
        self.steps
            .iter()
            .filter_map(|s| s.env().map(|(l, e)| (l.to_string(), e.to_string())))
            .collect()
    }

    pub fn labels(&self) -> Vec<String> {
        let mut out: Vec<String> = Vec::new();
        let mut push = |l: &String| {
            if !out.contains(l) {
                out.push(l.clone());
            }
        };
        for s in &self.steps {
            match s {
                Step::Unitary { labels, .. } => labels.iter().for_each(&mut push),
                Step::Classical { inputs, output, .. } => {
                    inputs.iter().for_each(&mut push);
                    push(output);
                }
                Step::Query { input, output, .. } => {
                    match input {
                        QueryInput::Register(l) => push(l),
                        QueryInput::Computed { inputs, .. } => inputs.iter().for_each(&mut push),
                    }
                    push(output);
                }
                Step::Coin { label, .. } | Step::Measure { label, .. } => push(label),
            }
        }
        out
    }
}

/// A classical query made inside a branch.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct QueryEvent {
    pub tag: usize,
    pub x: usize,
    pub y: bool,
}

/// One outcome path of a run against a fixed oracle.
#[derive(Clone, Debug)]
pub struct Branch {
    pub prob: f64,
    pub vec: CVector,
    pub record: Vec<QueryEvent>,
}

impl Branch {
    pub fn new(layout: &SystemLayout) -> Self {
        let mut vec = CVector::zeros(layout.total_dim());
        vec[0] = c64(1.0, 0.0);
        Self { prob: 1.0, vec, record: Vec::new() }
    }

    /// Value of a register that is in a basis state, else `None`.
    pub fn value(&self, layout: &SystemLayout, label: &str) -> Result<Option<usize>> {
        let (_, red) = reduce_vector(layout, &self.vec, &[label])?;
        let mut found = None;
        for i in 0..red.nrows() {
            let p = red[(i, i)].re;
            if p > 1.0 - 1e-9 {
                found = Some(i);
            } else if p > 1e-9 {
                return Ok(None);
            }
        }
        Ok(found)
    }

    pub fn expect_value(&self, layout: &SystemLayout, label: &str) -> Result<usize> {
        self.value(layout, label)?
            .ok_or_else(|| QcmiError::Precondition(format!("register {label} is not classical in this branch")))
    }
}

fn stride_dim(layout: &SystemLayout, label: &str) -> Result<(usize, usize)> {
    let pos = layout
        .position(label)
        .ok_or_else(|| QcmiError::Layout(format!("unknown register {label}")))?;
    Ok((layout.strides()[pos], layout.dims()[pos]))
}

fn digit(i: usize, sd: (usize, usize)) -> usize {
    (i / sd.0) % sd.1
}

/// Maps each basis index through `f(index) -> (new index, phase sign)`.
fn permute(v: &CVector, f: impl Fn(usize) -> Result<(usize, f64)>) -> Result<CVector> {
    let mut out = CVector::zeros(v.len());
    for i in 0..v.len() {
        if v[i].norm_sqr() == 0.0 {
            continue;
        }
        let (j, s) = f(i)?;
        out[j] += v[i] * s;
    }
    Ok(out)
}

fn coherence(layout: &SystemLayout, v: &CVector, label: &str) -> Result<f64> {
    let (_, red) = reduce_vector(layout, v, &[label])?;
    let mut m: f64 = 0.0;
    for i in 0..red.nrows() {
        for j in 0..red.ncols() {
            if i != j {
                m = m.max(red[(i, j)].norm());
            }
        }
    }
    Ok(m)
}

fn classical_inputs(input: &QueryInput) -> Vec<&str> {
    match input {
        QueryInput::Register(l) => vec![l.as_str()],
        QueryInput::Computed { inputs, .. } => inputs.iter().map(String::as_str).collect(),
    }
}

/// Basis index to query input `x`.
fn input_fn(layout: &SystemLayout, input: &QueryInput) -> Result<Box<dyn Fn(usize) -> usize>> {
    Ok(match input {
        QueryInput::Register(l) => {
            let sd = stride_dim(layout, l)?;
            Box::new(move |i| digit(i, sd))
        }
        QueryInput::Computed { inputs, f } => {
            let ins: Vec<(usize, usize)> = inputs.iter().map(|l| stride_dim(layout, l)).collect::<Result<_>>()?;
            let f = f.clone();
            Box::new(move |i| f.call(&ins.iter().map(|&sd| digit(i, sd)).collect::<Vec<_>>()))
        }
    })
}

/// Born distribution of a query's input over `size` points; inputs outside
/// the domain are an error.
pub fn query_input_distribution(layout: &SystemLayout, input: &QueryInput, v: &CVector, size: usize) -> Result<Vec<f64>> {
    let x_of = input_fn(layout, input)?;
    let mut out = vec![0.0; size];
    for i in 0..v.len() {
        let w = v[i].norm_sqr();
        if w > 0.0 {
            let x = x_of(i);
            if x >= size {
                return Err(QcmiError::Validation(format!("query input {x} outside the domain")));
            }
            out[x] += w;
        }
    }
    Ok(out)
}

/// Where the oracle bit comes from.
#[derive(Clone, Copy)]
enum OracleSource<'a> {
    Fixed(&'a OracleFunction),
    Register { sd: (usize, usize) },
    None,
}

fn apply_step_vector(
    layout: &SystemLayout,
    n: usize,
    step: &Step,
    v: &CVector,
    oracle: OracleSource<'_>,
) -> Result<CVector> {
    match step {
        Step::Unitary { labels, op } => {
            let l: Vec<&str> = labels.iter().map(String::as_str).collect();
            apply_to_vector(layout, &l, op, v)
        }
        Step::Classical { inputs, output, f } => {
            let ins: Vec<(usize, usize)> = inputs.iter().map(|l| stride_dim(layout, l)).collect::<Result<_>>()?;
            let out = stride_dim(layout, output)?;
            permute(v, |i| {
                let args: Vec<usize> = ins.iter().map(|&sd| digit(i, sd)).collect();
                let old = digit(i, out);
                let new = (old + f.call(&args)) % out.1;
                Ok((i + new * out.0 - old * out.0, 1.0))
            })
        }
        Step::Query { mode, input, output } => {
            if *mode == QueryMode::Classical {
                for l in classical_inputs(input) {
                    let c = coherence(layout, v, l)?;
                    if c > CLASSICAL_COHERENCE_TOL {
                        return Err(QcmiError::Mode(format!("classical query on superposed register {l} ({c:e})")));
                    }
                }
            }
            let size = 1usize << n;
            let x_of = input_fn(layout, input)?;
            let y = stride_dim(layout, output)?;
            if y.1 != 2 {
                return Err(QcmiError::Layout(format!("query output {output} must be a qubit")));
            }
            permute(v, |i| {
                let x = x_of(i);
                if x >= size {
                    return Err(QcmiError::Validation(format!("query input {x} outside the domain")));
                }
                let hx = match oracle {
                    OracleSource::Fixed(h) => h.bit(x),
                    OracleSource::Register { sd } => (digit(i, sd) >> x) & 1,
                    OracleSource::None => {
                        return Err(QcmiError::Precondition("query issued with no oracle attached".into()))
                    }
                };
                let yv = digit(i, y);
                Ok(match mode {
                    QueryMode::Phase => (i, if yv & hx == 1 { -1.0 } else { 1.0 }),
                    QueryMode::Xor | QueryMode::Classical => (i + (yv ^ hx) * y.0 - yv * y.0, 1.0),
                })
            })
        }
        Step::Coin { .. } | Step::Measure { .. } => {
            Err(QcmiError::Precondition("branching step handled by the caller".into()))
        }
    }
}

fn check_fresh(layout: &SystemLayout, v: &CVector, label: &str) -> Result<()> {
    let sd = stride_dim(layout, label)?;
    let stray: f64 = (0..v.len()).filter(|&i| digit(i, sd) != 0).map(|i| v[i].norm_sqr()).sum();
    if stray > 1e-12 {
        return Err(QcmiError::Precondition(format!("coin register {label} is not |0>")));
    }
    Ok(())
}

/// Projects `label` onto each basis value; returns `(value, prob, normalized vector)`.
fn split_on(layout: &SystemLayout, v: &CVector, label: &str) -> Result<Vec<(usize, f64, CVector)>> {
    let sd = stride_dim(layout, label)?;
    let mut parts: Vec<CVector> = vec![CVector::zeros(v.len()); sd.1];
    for i in 0..v.len() {
        if v[i].norm_sqr() > 0.0 {
            parts[digit(i, sd)][i] = v[i];
        }
    }
    let total = v.norm_squared();
    Ok(parts
        .into_iter()
        .enumerate()
        .filter_map(|(o, p)| {
            let w = p.norm_squared();
            (w / total > BRANCH_FLOOR).then(|| (o, w / total, p.unscale(w.sqrt())))
        })
        .collect())
}

/// Runs `circuit` on each branch against a fixed oracle (or none).
/// Classical-mode queries measure their inputs first and are logged with `tag`.
pub fn run_branches(
    layout: &SystemLayout,
    circuit: &QueryCircuit,
    oracle: Option<&OracleFunction>,
    tag: usize,
    branches: Vec<Branch>,
) -> Result<Vec<Branch>> {
    let source = oracle.map_or(OracleSource::None, OracleSource::Fixed);
    let mut current = branches;
    for step in &circuit.steps {
        let mut next = Vec::with_capacity(current.len());
        for br in current {
            match step {
                Step::Coin { label, values, .. } => {
                    check_fresh(layout, &br.vec, label)?;
                    let sd = stride_dim(layout, label)?;
                    if *values == 0 || *values > sd.1 {
                        return Err(QcmiError::Validation(format!("coin over {values} values on {label}")));
                    }
                    for c in 0..*values {
                        let v = permute(&br.vec, |i| Ok((i + c * sd.0, 1.0)))?;
                        next.push(Branch { prob: br.prob / *values as f64, vec: v, record: br.record.clone() });
                    }
                }
                Step::Measure { label, .. } => {
                    for (_, p, v) in split_on(layout, &br.vec, label)? {
                        next.push(Branch { prob: br.prob * p, vec: v, record: br.record.clone() });
                    }
                }
                Step::Query { mode: QueryMode::Classical, input, .. } => {
                    let mut parts = vec![(1.0, br.vec.clone())];
                    for l in classical_inputs(input) {
                        if coherence(layout, &br.vec, l)? > CLASSICAL_COHERENCE_TOL {
                            return Err(QcmiError::Mode(format!("classical query on superposed register {l}")));
                        }
                        parts = parts
                            .into_iter()
                            .map(|(p, v)| split_on(layout, &v, l).map(|s| s.into_iter().map(move |(_, q, w)| (p * q, w))))
                            .collect::<Result<Vec<_>>>()?
                            .into_iter()
                            .flatten()
                            .collect();
                    }
                    for (p, v) in parts {
                        let mut record = br.record.clone();
                        if let Some(h) = oracle {
                            let first = (0..v.len()).find(|&i| v[i].norm_sqr() > 1e-20).unwrap_or(0);
                            let x = match input {
                                QueryInput::Register(l) => digit(first, stride_dim(layout, l)?),
                                QueryInput::Computed { inputs, f } => {
                                    let args: Vec<usize> = inputs
                                        .iter()
                                        .map(|l| stride_dim(layout, l).map(|sd| digit(first, sd)))
                                        .collect::<Result<_>>()?;
                                    f.call(&args)
                                }
                            };
                            if x < h.domain_size() {
                                record.push(QueryEvent { tag, x, y: h.eval(x) });
                            }
                        }
                        let v = apply_step_vector(layout, circuit.n, step, &v, source)?;
                        next.push(Branch { prob: br.prob * p, vec: v, record });
                    }
                }
                _ => {
                    let v = apply_step_vector(layout, circuit.n, step, &br.vec, source)?;
                    next.push(Branch { vec: v, ..br });
                }
            }
        }
        current = next;
    }
    Ok(current)
}

/// Runs `circuit` on a pure vector whose last factor is the function register.
/// Coins and measurements are deferred into their `env` registers.
pub fn run_purified(layout: &SystemLayout, circuit: &QueryCircuit, v: CVector) -> Result<CVector> {
    let fsd = stride_dim(layout, FUNCTION_REGISTER)?;
    if fsd.1 != oracle_count(circuit.n) {
        return Err(QcmiError::Layout("function register dimension does not match n".into()));
    }
    let mut v = v;
    for step in &circuit.steps {
        v = match step {
            Step::Coin { label, values, env } => {
                check_fresh(layout, &v, label)?;
                let (l, e) = (stride_dim(layout, label)?, stride_dim(layout, env)?);
                if *values > l.1 || *values > e.1 {
                    return Err(QcmiError::Validation(format!("coin over {values} values on {label}")));
                }
                let amp = 1.0 / (*values as f64).sqrt();
                let mut out = CVector::zeros(v.len());
                for i in 0..v.len() {
                    if v[i].norm_sqr() == 0.0 {
                        continue;
                    }
                    if digit(i, e) != 0 {
                        return Err(QcmiError::Precondition(format!("env register {env} reused")));
                    }
                    for c in 0..*values {
                        out[i + c * l.0 + c * e.0] += v[i] * amp;
                    }
                }
                out
            }
            Step::Measure { label, env } => {
                let (l, e) = (stride_dim(layout, label)?, stride_dim(layout, env)?);
                permute(&v, |i| {
                    let (a, b) = (digit(i, l), digit(i, e));
                    Ok((i + ((a + b) % e.1) * e.0 - b * e.0, 1.0))
                })?
            }
            _ => apply_step_vector(layout, circuit.n, step, &v, OracleSource::Register { sd: fsd })?,
        };
    }
    Ok(v)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::qmat::hadamard;

    fn layout() -> SystemLayout {
        SystemLayout::new([("x", 2usize), ("y", 2), ("c", 2)]).unwrap()
    }

    #[test]
    fn classical_query_logs_pair() {
        let h = OracleFunction::from_index(1, 0b10).unwrap();
        let c = QueryCircuit::new(1, vec![Step::coin("x", 2), Step::query(QueryMode::Classical, "x", "y")]);
        let out = run_branches(&layout(), &c, Some(&h), 7, vec![Branch::new(&layout())]).unwrap();
        assert_eq!(out.len(), 2);
        for b in &out {
            let x = b.expect_value(&layout(), "x").unwrap();
            assert_eq!(b.expect_value(&layout(), "y").unwrap(), h.bit(x));
            assert_eq!(b.record, vec![QueryEvent { tag: 7, x, y: h.eval(x) }]);
            assert!((b.prob - 0.5).abs() < 1e-15);
        }
    }

    #[test]
    fn classical_query_rejects_superposition() {
        let h = OracleFunction::from_index(1, 0).unwrap();
        let c = QueryCircuit::new(
            1,
            vec![Step::unitary(&["x"], hadamard()), Step::query(QueryMode::Classical, "x", "y")],
        );
        let r = run_branches(&layout(), &c, Some(&h), 0, vec![Branch::new(&layout())]);
        assert!(matches!(r, Err(QcmiError::Mode(_))));
    }

    #[test]
    fn measure_splits_by_born_rule() {
        let c = QueryCircuit::new(1, vec![Step::unitary(&["x"], hadamard()), Step::measure("x")]);
        let out = run_branches(&layout(), &c, None, 0, vec![Branch::new(&layout())]).unwrap();
        assert_eq!(out.len(), 2);
        assert!(out.iter().all(|b| (b.prob - 0.5).abs() < 1e-12));
    }

    #[test]
    fn query_without_oracle_fails() {
        let c = QueryCircuit::new(1, vec![Step::query(QueryMode::Xor, "x", "y")]);
        assert!(run_branches(&layout(), &c, None, 0, vec![Branch::new(&layout())]).is_err());
    }

    #[test]
    fn counts_and_prefixes() {
        let c = QueryCircuit::new(
            2,
            vec![
                Step::coin("c", 2),
                Step::query(QueryMode::Xor, "x", "y"),
                Step::unitary(&["x"], hadamard()),
            ],
        );
        assert_eq!((c.d(), c.e(), c.post_queries()), (1, 3, 2));
        assert_eq!(c.prefix(2).steps.len(), 2);
        assert_eq!(c.labels(), vec!["c", "x", "y"]);
    }

    #[test]
    fn purified_coin_decoheres_register() {
        let l = SystemLayout::new([("c", 2usize), ("c~env", 2), ("H", 4)]).unwrap();
        let c = QueryCircuit::new(1, vec![Step::coin("c", 2)]);
        let mut v = CVector::zeros(l.total_dim());
        for h in 0..4 {
            v[h] = c64(0.5, 0.0);
        }
        let out = run_purified(&l, &c, v).unwrap();
        assert!(coherence(&l, &out, "c").unwrap() < 1e-15);
        assert!((out.norm() - 1.0).abs() < 1e-12);
    }
}
