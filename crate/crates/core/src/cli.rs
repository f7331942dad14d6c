//! Experiment runner behind the `qcmi` binary. A JSON config file supplies
//! defaults and flags override it; the resolved config is echoed in the report.

use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand, ValueEnum};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use serde_json::{json, Value};

use crate::attacks::{
    eve_classical_keygen, eve_repeat_and_recover, eve_short_sk, reference_reps, AttackReport, KeygenOptions,
    CMI_BOUND_TOL,
};
use crate::error::{QcmiError, Result};
use crate::lemmas::{self, CheckResult};
use crate::protocols::{make_protocol, Builtin, ProtocolKind, ProtocolSpec};
use crate::qmat::DEFAULT_DIM_CAP;
use crate::recovery::default_grid;
use crate::report::{emit_report, write_text, Assertion, Cell, ErrorObject, Format, Report, Table};
use crate::xorwalk::{self, BoundRow, XorStepDistribution, F_BOUND_CONSTANT};

/// Largest dimension cap a config may request: the statevector cap.
pub const MAX_DIM_CAP: usize = crate::oraclesim::VECTOR_DIM_CAP;

#[derive(Debug, Parser)]
#[command(name = "qcmi", version, about = "CMI-based eavesdropping experiments on oracle key agreement")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Randomized checks of the four helper lemmas.
    Lemmas(LemmasArgs),
    /// One attack on one built-in protocol.
    Attack(AttackArgs),
    /// The attack over a grid of C, with `t = ⌈C·d·e⌉`.
    Sweep(SweepArgs),
    /// XOR-walk entropies, CMI and the analytic bound sweeps.
    Walk(WalkArgs),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum OutputFormat {
    Json,
    Csv,
}

#[derive(Debug, Clone, Args)]
pub struct CommonArgs {
    /// JSON config file; flags override its fields.
    #[arg(long)]
    pub config: Option<PathBuf>,
    /// Root seed. Required here or in the config.
    #[arg(long)]
    pub seed: Option<u64>,
    /// Output path; stdout when absent.
    #[arg(long)]
    pub out: Option<PathBuf>,
    #[arg(long, value_enum)]
    pub format: Option<OutputFormat>,
    /// Also write the JSON report here when `--format csv`.
    #[arg(long)]
    pub report: Option<PathBuf>,
    /// Dimension cap for density matrices; `QML_DIM_CAP` sets the same.
    #[arg(long)]
    pub dim_cap: Option<usize>,
}

#[derive(Debug, Clone, Args)]
pub struct LemmasArgs {
    #[command(flatten)]
    pub common: CommonArgs,
    #[arg(long)]
    pub trials: Option<usize>,
}

#[derive(Debug, Clone, Args)]
pub struct ProtocolArgs {
    /// deutsch, product, merkle, example1, example2, query-free, toy-qpke,
    /// quantum-pk, short-sk, non-adaptive.
    #[arg(long)]
    pub protocol: Option<String>,
    #[arg(long)]
    pub n: Option<usize>,
    /// Merkle query count.
    #[arg(long)]
    pub d: Option<usize>,
    #[arg(long)]
    pub noise: Option<bool>,
    #[arg(long)]
    pub clonable: Option<bool>,
    /// Comma-separated step probabilities for non-adaptive protocols and walks.
    #[arg(long)]
    pub probs: Option<String>,
}

#[derive(Debug, Clone, Args)]
pub struct AttackArgs {
    #[command(flatten)]
    pub common: CommonArgs,
    #[command(flatten)]
    pub protocol: ProtocolArgs,
    /// auto, repeat, keygen or short-sk.
    #[arg(long)]
    pub attack: Option<String>,
    #[arg(long)]
    pub t: Option<usize>,
    #[arg(long)]
    pub reps: Option<usize>,
    #[arg(long)]
    pub eps: Option<f64>,
    /// Rotation grid `start:step:end` or a comma list.
    #[arg(long)]
    pub grid: Option<String>,
    /// Derive `t = ⌈C·d·e⌉` when `--t` is absent.
    #[arg(long)]
    pub c: Option<f64>,
}

#[derive(Debug, Clone, Args)]
pub struct SweepArgs {
    #[command(flatten)]
    pub attack: AttackArgs,
    /// Values of C, `start:step:end` or a comma list.
    #[arg(long)]
    pub c_grid: Option<String>,
}

#[derive(Debug, Clone, Args)]
pub struct WalkArgs {
    #[command(flatten)]
    pub common: CommonArgs,
    #[command(flatten)]
    pub protocol: ProtocolArgs,
    /// Sweep `f(p)` against `8p/t` and `8e^{−t}`.
    #[arg(long)]
    pub f_bound: bool,
    /// Sweep the tanh term against `1/(t−1) + 1/(t+1)`.
    #[arg(long)]
    pub tanh: bool,
    /// Walk lengths, `a..b` (inclusive) or a comma list.
    #[arg(long = "t")]
    pub t_range: Option<String>,
    #[arg(long)]
    pub p_grid: Option<String>,
    #[arg(long)]
    pub q_grid: Option<String>,
    /// Poissonization parameter μ ≥ 2.
    #[arg(long)]
    pub mu: Option<f64>,
}

/// Every field a run may take; unset fields fall back to command defaults.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    pub seed: Option<u64>,
    pub out: Option<PathBuf>,
    pub format: Option<OutputFormat>,
    pub report: Option<PathBuf>,
    pub dim_cap: Option<usize>,
    pub trials: Option<usize>,
    pub protocol: Option<String>,
    pub n: Option<usize>,
    pub d: Option<usize>,
    pub noise: Option<bool>,
    pub clonable: Option<bool>,
    pub probs: Option<String>,
    pub attack: Option<String>,
    pub t: Option<usize>,
    pub reps: Option<usize>,
    pub eps: Option<f64>,
    pub grid: Option<String>,
    pub c: Option<f64>,
    pub c_grid: Option<String>,
    pub f_bound: Option<bool>,
    pub tanh: Option<bool>,
    pub t_range: Option<String>,
    pub p_grid: Option<String>,
    pub q_grid: Option<String>,
    pub mu: Option<f64>,
}

macro_rules! overlay {
    ($cfg:ident, $src:expr, $($f:ident),*) => {
        $( if $src.$f.is_some() { $cfg.$f = $src.$f.clone(); } )*
    };
}

impl ExperimentConfig {
    pub fn from_file(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|source| QcmiError::Io { path: path.into(), source })?;
        serde_json::from_str(&text).map_err(|e| QcmiError::Config(format!("{}: {e}", path.display())))
    }

    fn common(&mut self, a: &CommonArgs) {
        overlay!(self, a, seed, out, format, report, dim_cap);
    }

    fn protocol(&mut self, a: &ProtocolArgs) {
        overlay!(self, a, protocol, n, d, noise, clonable, probs);
    }

    fn attack(&mut self, a: &AttackArgs) {
        self.common(&a.common);
        self.protocol(&a.protocol);
        overlay!(self, a, attack, t, reps, eps, grid, c);
    }

    /// Config file (if any) overlaid by the command-line flags.
    pub fn resolve(cmd: &Command) -> Result<Self> {
        let common = match cmd {
            Command::Lemmas(a) => &a.common,
            Command::Attack(a) => &a.common,
            Command::Sweep(a) => &a.attack.common,
            Command::Walk(a) => &a.common,
        };
        let mut cfg = match &common.config {
            Some(p) => Self::from_file(p)?,
            None => Self::default(),
        };
        match cmd {
            Command::Lemmas(a) => {
                cfg.common(&a.common);
                overlay!(cfg, a, trials);
            }
            Command::Attack(a) => cfg.attack(a),
            Command::Sweep(a) => {
                cfg.attack(&a.attack);
                overlay!(cfg, a, c_grid);
            }
            Command::Walk(a) => {
                cfg.common(&a.common);
                cfg.protocol(&a.protocol);
                overlay!(cfg, a, t_range, p_grid, q_grid, mu);
                if a.f_bound {
                    cfg.f_bound = Some(true);
                }
                if a.tanh {
                    cfg.tanh = Some(true);
                }
            }
        }
        Ok(cfg)
    }

    pub fn seed(&self) -> Result<u64> {
        self.seed.ok_or_else(|| QcmiError::Validation("a seed is required (--seed or \"seed\" in the config)".into()))
    }

    /// Caps may only be lowered below the module maxima.
    pub fn validate_caps(&self) -> Result<()> {
        if let Some(c) = self.dim_cap {
            if c == 0 || c > MAX_DIM_CAP {
                return Err(QcmiError::Validation(format!("dim_cap {c} outside 1..={MAX_DIM_CAP}")));
            }
        }
        if let Ok(v) = std::env::var("QML_DIM_CAP") {
            match v.trim().parse::<usize>() {
                Ok(c) if c > 0 && c <= MAX_DIM_CAP => {}
                _ => return Err(QcmiError::Validation(format!("QML_DIM_CAP={v} is not in 1..={MAX_DIM_CAP}"))),
            }
        }
        Ok(())
    }

    fn format(&self) -> Format {
        match self.format {
            Some(OutputFormat::Csv) => Format::Csv,
            _ => Format::Json,
        }
    }
}

/// `start:step:end` (inclusive, to within 1e-9 of a step) or `a,b,c`.
pub fn parse_grid(s: &str) -> Result<Vec<f64>> {
    let bad = |m: &str| QcmiError::Validation(format!("grid '{s}': {m}"));
    let parts: Vec<&str> = s.split(':').collect();
    if parts.len() == 3 {
        let num = |x: &str| x.trim().parse::<f64>().map_err(|_| bad("not a number"));
        let (a, h, b) = (num(parts[0])?, num(parts[1])?, num(parts[2])?);
        if h.is_nan() || h <= 0.0 || b < a {
            return Err(bad("needs step > 0 and end >= start"));
        }
        let k = ((b - a) / h + 1e-9).floor() as usize;
        // index times step avoids accumulated drift
        return Ok((0..=k).map(|i| a + i as f64 * h).collect());
    }
    s.split(',').filter(|x| !x.trim().is_empty()).map(|x| x.trim().parse::<f64>().map_err(|_| bad("not a number"))).collect()
}

/// `a..b` (inclusive) or `a,b,c`.
pub fn parse_int_range(s: &str) -> Result<Vec<usize>> {
    let bad = || QcmiError::Validation(format!("range '{s}' is not `a..b` or a comma list"));
    if let Some((a, b)) = s.split_once("..") {
        let a: usize = a.trim().parse().map_err(|_| bad())?;
        let b: usize = b.trim().parse().map_err(|_| bad())?;
        if b < a {
            return Err(bad());
        }
        return Ok((a..=b).collect());
    }
    s.split(',').map(|x| x.trim().parse::<usize>().map_err(|_| bad())).collect()
}

fn parse_probs(cfg: &ExperimentConfig) -> Result<Option<Vec<f64>>> {
    cfg.probs.as_deref().map(parse_grid).transpose()
}

/// The built-in named by the config, with its parameters.
pub fn builtin_from(cfg: &ExperimentConfig) -> Result<Builtin> {
    let name = cfg.protocol.as_deref().ok_or_else(|| QcmiError::Validation("--protocol is required".into()))?;
    let n = cfg.n.unwrap_or(2);
    Ok(match name {
        "deutsch" => Builtin::Deutsch,
        "product" => Builtin::Product,
        "merkle" => Builtin::Merkle { n, d: cfg.d.unwrap_or(2) },
        "example1" => Builtin::Example1 { n },
        "example2" => Builtin::Example2 { n },
        "query-free" => Builtin::QueryFree { n },
        "toy-qpke" => Builtin::ToyQpke { n },
        "quantum-pk" => Builtin::QuantumPk { clonable: cfg.clonable.unwrap_or(false) },
        "short-sk" => Builtin::ShortSk { noise: cfg.noise.unwrap_or(false) },
        "non-adaptive" => Builtin::NonAdaptive {
            n: cfg.n.unwrap_or(1),
            probs: parse_probs(cfg)?.unwrap_or_else(|| vec![0.5, 0.25, 0.25]),
        },
        other => return Err(QcmiError::Validation(format!("unknown protocol '{other}'"))),
    })
}

/// `d·e` with `d` the largest per-stage query count and `e = n + 1` the
/// qubits the query unitary acts on.
pub fn query_scale(spec: &ProtocolSpec) -> usize {
    let (a1, b, a2) = spec.query_counts();
    a1.max(b).max(a2).max(1) * (spec.n + 1)
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
enum AttackKind {
    Repeat,
    Keygen,
    ShortSk,
}

fn attack_kind(cfg: &ExperimentConfig, spec: &ProtocolSpec) -> Result<AttackKind> {
    Ok(match cfg.attack.as_deref().unwrap_or("auto") {
        "repeat" => AttackKind::Repeat,
        "keygen" => AttackKind::Keygen,
        "short-sk" => AttackKind::ShortSk,
        "auto" => match spec.kind {
            ProtocolKind::NonInteractiveKa | ProtocolKind::TwoRoundKa => AttackKind::Repeat,
            ProtocolKind::QpkeClassicalKeygen | ProtocolKind::QpkeQuantumPk => AttackKind::Keygen,
            ProtocolKind::QpkeShortSk => AttackKind::ShortSk,
        },
        other => return Err(QcmiError::Validation(format!("unknown attack '{other}'"))),
    })
}

const DEFAULT_T: usize = 4;
const DEFAULT_EPS: f64 = 0.05;

/// Runs the configured attack with `t` fixed by the caller.
fn run_attack(cfg: &ExperimentConfig, spec: &ProtocolSpec, t: usize, c: Option<f64>) -> Result<AttackReport> {
    let grid = match &cfg.grid {
        Some(g) => parse_grid(g)?,
        None => default_grid(),
    };
    let mut report = match attack_kind(cfg, spec)? {
        AttackKind::Repeat => eve_repeat_and_recover(spec, t, &grid)?,
        AttackKind::ShortSk => eve_short_sk(spec, t, &grid)?,
        AttackKind::Keygen => {
            let eps = cfg.eps.unwrap_or(DEFAULT_EPS);
            if !(eps > 0.0 && eps < 1.0) {
                return Err(QcmiError::Validation(format!("eps = {eps} outside (0, 1)")));
            }
            let reps = cfg.reps.unwrap_or_else(|| reference_reps(spec.bob.d(), eps));
            eve_classical_keygen(spec, &KeygenOptions { t, reps, eps, grid })?
        }
    };
    report.params.c = c;
    Ok(report)
}

fn attack_t(cfg: &ExperimentConfig, spec: &ProtocolSpec) -> (usize, Option<f64>) {
    match (cfg.t, cfg.c) {
        (Some(t), c) => (t, c),
        (None, Some(c)) => (t_from_c(c, spec), Some(c)),
        (None, None) => (DEFAULT_T, None),
    }
}

/// `t = max(1, ⌈C·d·e⌉)`.
pub fn t_from_c(c: f64, spec: &ProtocolSpec) -> usize {
    ((c * query_scale(spec) as f64).ceil() as usize).max(1)
}

/// Anchor of the CMI bound each attack asserts.
fn cmi_anchor(name: &str) -> &'static str {
    match name {
        "short_sk" | "eve_short_sk" => "Lemma C.2",
        _ => "Lemma 4.1",
    }
}

fn attack_assertions(r: &AttackReport, label: &str) -> Vec<Assertion> {
    let mut out = Vec::new();
    let keygen = r.attack_name.contains("keygen");
    if !keygen {
        out.push(Assertion::at_most(
            cmi_anchor(&r.attack_name),
            format!("{label}cmi_achieved <= cmi_bound"),
            r.cmi_achieved,
            r.cmi_bound,
            CMI_BOUND_TOL,
        ));
    }
    if let Some(rate) = r.flags.support_violation_rate {
        out.push(Assertion::at_most(
            "Lemma 4.6",
            format!("{label}support_violation_rate <= 2*recovery_td"),
            rate,
            2.0 * r.recovery_td,
            1e-9,
        ));
    }
    out
}

const ATTACK_COLUMNS: &[&str] = &[
    "c",
    "t",
    "attack",
    "queries_used",
    "cmi_achieved",
    "cmi_bound",
    "recovery_td",
    "rotation_param",
    "fr_bound",
    "key_match_prob",
    "bound_satisfied",
    "error",
];

fn attack_row(c: Option<f64>, t: usize, r: &Result<AttackReport>) -> Vec<Cell> {
    let c = c.map_or(Cell::Text(String::new()), Cell::Float);
    match r {
        Ok(r) => vec![
            c,
            t.into(),
            r.attack_name.as_str().into(),
            r.queries_used.into(),
            r.cmi_achieved.into(),
            r.cmi_bound.into(),
            r.recovery_td.into(),
            r.rotation_param.into(),
            r.fr_bound.into(),
            r.key_match_prob.into(),
            r.flags.bound_satisfied.into(),
            "".into(),
        ],
        Err(e) => {
            let mut row = vec![c, t.into()];
            row.extend((0..9).map(|_| Cell::Text(String::new())));
            row.push(e.to_string().into());
            row
        }
    }
}

fn to_value<T: Serialize>(v: &T) -> Result<Value> {
    serde_json::to_value(v).map_err(|e| QcmiError::Serialization(e.to_string()))
}

/// A command's outcome before serialization.
pub struct Outcome {
    pub assertions: Vec<Assertion>,
    pub results: Value,
    pub table: Table,
    pub errors: Vec<ErrorObject>,
}

impl Outcome {
    fn failed(e: &QcmiError) -> Self {
        Self { assertions: vec![], results: Value::Null, table: Table::default(), errors: vec![ErrorObject::from_error(e)] }
    }
}

fn lemmas_outcome(cfg: &ExperimentConfig) -> Result<Outcome> {
    let trials = cfg.trials.unwrap_or(lemmas::DEFAULT_TRIALS);
    if trials == 0 {
        return Err(QcmiError::Validation("trials must be positive".into()));
    }
    let checks: Vec<CheckResult> = lemmas::run_all(trials, cfg.seed()?)?;
    let mut table = Table::new(&["lemma_id", "trials", "max_violation", "tolerance", "pass"]);
    let mut assertions = Vec::new();
    for c in &checks {
        table.push(vec![c.lemma_id.as_str().into(), c.trials.into(), c.max_violation.into(), c.tolerance.into(), c.pass.into()]);
        assertions.push(Assertion::at_most(&c.lemma_id, "max_violation <= tolerance", c.max_violation, c.tolerance, 0.0));
    }
    Ok(Outcome { assertions, results: to_value(&checks)?, table, errors: vec![] })
}

fn attack_outcome(cfg: &ExperimentConfig) -> Result<Outcome> {
    cfg.seed()?;
    let spec = make_protocol(&builtin_from(cfg)?)?;
    let (t, c) = attack_t(cfg, &spec);
    let r = run_attack(cfg, &spec, t, c);
    let mut table = Table::new(ATTACK_COLUMNS);
    table.push(attack_row(c, t, &r));
    let r = r?;
    Ok(Outcome { assertions: attack_assertions(&r, ""), results: to_value(&r)?, table, errors: vec![] })
}

fn sweep_outcome(cfg: &ExperimentConfig) -> Result<Outcome> {
    let seed = cfg.seed()?;
    let spec = make_protocol(&builtin_from(cfg)?)?;
    let cs = parse_grid(cfg.c_grid.as_deref().unwrap_or("0.25:0.25:1"))?;
    if cs.iter().any(|&c| c.is_nan() || c <= 0.0) {
        return Err(QcmiError::Validation("C values must be positive".into()));
    }
    // cells run in any order; assembly below follows the grid index
    let cells: Vec<(usize, Result<AttackReport>)> = cs
        .par_iter()
        .map(|&c| {
            let t = t_from_c(c, &spec);
            (t, run_attack(cfg, &spec, t, Some(c)))
        })
        .collect();
    let mut table = Table::new(ATTACK_COLUMNS);
    let mut assertions = Vec::new();
    let mut rows = Vec::new();
    let mut errors = Vec::new();
    for (i, (&c, (t, r))) in cs.iter().zip(&cells).enumerate() {
        table.push(attack_row(Some(c), *t, r));
        match r {
            Ok(r) => {
                assertions.extend(attack_assertions(r, &format!("[C={}] ", crate::report::format_float(c))));
                rows.push(json!({"index": i, "c": c, "t": t, "child_seed": child_seed(seed, i as u64), "report": to_value(r)?}));
            }
            Err(e) => {
                errors.push(ErrorObject { kind: e.kind().into(), message: format!("C = {c}: {e}") });
                rows.push(json!({"index": i, "c": c, "t": t, "child_seed": child_seed(seed, i as u64), "error": e.to_string()}));
            }
        }
    }
    Ok(Outcome { assertions, results: Value::Array(rows), table, errors })
}

/// Per-cell seed: SplitMix64 of the root seed and the cell index, so cells do
/// not depend on evaluation order.
pub fn child_seed(seed: u64, index: u64) -> u64 {
    let mut z = seed ^ index.wrapping_add(1).wrapping_mul(0x9e37_79b9_7f4a_7c15);
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}

fn bound_table(rows: &[BoundRow], x_name: &str) -> Table {
    let mut table = Table::new(&["t", x_name, "value", "bound", "ratio", "max_ratio", "holds"]);
    for r in rows {
        let max_ratio = rows.iter().filter(|s| s.t == r.t).map(|s| s.ratio).fold(0.0, f64::max);
        table.push(vec![r.t.into(), r.x.into(), r.value.into(), r.bound.into(), r.ratio.into(), max_ratio.into(), r.holds.into()]);
    }
    table
}

fn bound_summary(rows: &[BoundRow], anchor: &str, name: &str) -> (Vec<Assertion>, Value) {
    let worst = rows.iter().map(|r| r.ratio).fold(0.0, f64::max);
    let mut per_t = serde_json::Map::new();
    for r in rows {
        let e = per_t.entry(r.t.to_string()).or_insert(json!(0.0));
        if r.ratio > e.as_f64().unwrap_or(0.0) {
            *e = json!(r.ratio);
        }
    }
    let a = Assertion::at_most(anchor, name, worst, 1.0, 0.0);
    let a = Assertion { holds: a.holds && rows.iter().all(|r| r.holds), ..a };
    (vec![a], json!({"rows": rows.len(), "max_ratio": worst, "max_ratio_by_t": per_t}))
}

fn walk_outcome(cfg: &ExperimentConfig) -> Result<Outcome> {
    cfg.seed()?;
    let ts = parse_int_range(cfg.t_range.as_deref().unwrap_or("2..64"))?;
    if cfg.f_bound == Some(true) {
        let grid = parse_grid(cfg.p_grid.as_deref().unwrap_or("0:0.05:1"))?;
        let rows = xorwalk::f_bound_sweep(&ts, &grid)?;
        let (assertions, summary) =
            bound_summary(&rows, "Lemma B.8", &format!("max f(p) / bound with constant {F_BOUND_CONSTANT}"));
        return Ok(Outcome { assertions, results: json!({"f_bound": summary}), table: bound_table(&rows, "p"), errors: vec![] });
    }
    if cfg.tanh == Some(true) {
        let grid = parse_grid(cfg.q_grid.as_deref().unwrap_or("0:0.01:0.99"))?;
        let rows = xorwalk::tanh_bound_sweep(&ts, &grid)?;
        let (assertions, summary) = bound_summary(&rows, "Lemma B.9", "max tanh term / (1/(t-1) + 1/(t+1))");
        return Ok(Outcome { assertions, results: json!({"tanh_bound": summary}), table: bound_table(&rows, "q"), errors: vec![] });
    }
    let n = cfg.n.unwrap_or(1);
    let probs = parse_probs(cfg)?.unwrap_or_else(|| vec![0.5, 0.25, 0.25]);
    let steps = XorStepDistribution::single(n, probs)?;
    let mu = cfg.mu;
    let mut table = Table::new(&["t", "entropy", "walk_cmi", "poissonized_cmi"]);
    let mut rows = Vec::new();
    let mut assertions = Vec::new();
    for &t in &ts {
        let s = xorwalk::walk_entropy(&steps, t);
        let cmi = xorwalk::walk_cmi(&steps, t);
        let pc = mu.map(|m| xorwalk::poissonized_walk_cmi(&steps, t, m)).transpose()?;
        table.push(vec![t.into(), s.into(), cmi.into(), pc.map_or(Cell::Text(String::new()), Cell::Float)]);
        assertions.push(Assertion::at_most("Lemma B.4", format!("-walk_cmi(t={t}) <= 0"), -cmi, 0.0, 1e-8));
        rows.push(json!({"t": t, "entropy": s, "walk_cmi": cmi, "poissonized_cmi": pc}));
    }
    Ok(Outcome { assertions, results: json!({"n": n, "mu": mu, "series": rows}), table, errors: vec![] })
}

fn command_name(cmd: &Command) -> &'static str {
    match cmd {
        Command::Lemmas(_) => "lemmas",
        Command::Attack(_) => "attack",
        Command::Sweep(_) => "sweep",
        Command::Walk(_) => "walk",
    }
}

/// Builds the report for a parsed command line without writing it.
pub fn execute(cmd: &Command) -> (ExperimentConfig, Report, Table) {
    let name = command_name(cmd);
    let cfg = match ExperimentConfig::resolve(cmd) {
        Ok(c) => c,
        Err(e) => {
            let o = Outcome::failed(&e);
            return (ExperimentConfig::default(), Report::new(name, Value::Null, o.assertions, o.results, o.errors), o.table);
        }
    };
    let outcome = cfg.validate_caps().and_then(|_| {
        if let Some(c) = cfg.dim_cap {
            std::env::set_var("QML_DIM_CAP", c.to_string());
        }
        match cmd {
            Command::Lemmas(_) => lemmas_outcome(&cfg),
            Command::Attack(_) => attack_outcome(&cfg),
            Command::Sweep(_) => sweep_outcome(&cfg),
            Command::Walk(_) => walk_outcome(&cfg),
        }
    });
    let o = outcome.unwrap_or_else(|e| Outcome::failed(&e));
    let mut echoed = to_value(&cfg).unwrap_or(Value::Null);
    if let Value::Object(m) = &mut echoed {
        m.retain(|_, v| !v.is_null());
        m.insert("dim_cap_effective".into(), json!(crate::qmat::dim_cap().clamp(1, MAX_DIM_CAP)));
        m.insert("default_dim_cap".into(), json!(DEFAULT_DIM_CAP));
    }
    (cfg, Report::new(name, echoed, o.assertions, o.results, o.errors), o.table)
}

/// Parses `args`, runs, writes the outputs and returns the exit code.
pub fn run<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<std::ffi::OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(c) => c,
        Err(e) => {
            let code = if e.use_stderr() { 2 } else { 0 };
            let _ = e.print();
            return code;
        }
    };
    let (cfg, report, table) = execute(&cli.command);
    let format = cfg.format();
    if format == Format::Csv {
        // the table cannot carry error objects
        for e in &report.errors {
            eprintln!("{}", serde_json::to_string(e).unwrap_or_default());
        }
    }
    let mut written = emit_report(&report, &table, format, cfg.out.as_deref());
    if written.is_ok() && format == Format::Csv {
        if let Some(p) = &cfg.report {
            written = report.to_json().and_then(|s| write_text(&s, Some(p)));
        }
    }
    match written {
        Ok(()) => report.exit_code,
        Err(e) => {
            eprintln!("{}", serde_json::to_string(&ErrorObject::from_error(&e)).unwrap_or_default());
            2
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn grids_parse() {
        assert_eq!(parse_grid("0:0.25:1").unwrap(), vec![0.0, 0.25, 0.5, 0.75, 1.0]);
        assert_eq!(parse_grid("0:0.05:1").unwrap().len(), 21);
        assert_eq!(parse_grid("1,2.5").unwrap(), vec![1.0, 2.5]);
        assert!(parse_grid("1:0:2").is_err());
        assert_eq!(parse_int_range("2..5").unwrap(), vec![2, 3, 4, 5]);
        assert_eq!(parse_int_range("2,4,8").unwrap(), vec![2, 4, 8]);
        assert!(parse_int_range("5..2").is_err());
    }

    #[test]
    fn child_seeds_are_distinct() {
        let s: std::collections::BTreeSet<u64> = (0..1000).map(|i| child_seed(7, i)).collect();
        assert_eq!(s.len(), 1000);
        assert_eq!(child_seed(7, 3), child_seed(7, 3));
    }

    #[test]
    fn flags_override_config() {
        let dir = std::env::temp_dir().join(format!("qcmi-cfg-{}", std::process::id()));
        std::fs::create_dir_all(&dir).unwrap();
        let path = dir.join("c.json");
        std::fs::write(&path, r#"{"seed": 3, "trials": 10, "protocol": "deutsch"}"#).unwrap();
        let cli = Cli::try_parse_from(["qcmi", "lemmas", "--config", path.to_str().unwrap(), "--trials", "5"]).unwrap();
        let cfg = ExperimentConfig::resolve(&cli.command).unwrap();
        assert_eq!((cfg.seed, cfg.trials), (Some(3), Some(5)));
        std::fs::remove_dir_all(dir).unwrap();
    }

    #[test]
    fn missing_seed_is_a_validation_error() {
        let cli = Cli::try_parse_from(["qcmi", "walk", "--f-bound", "--t", "2,4"]).unwrap();
        let (_, report, _) = execute(&cli.command);
        assert_eq!(report.exit_code, 2);
        assert_eq!(report.errors[0].kind, "validation");
    }

    #[test]
    fn c_sets_t_from_query_scale() {
        let spec = make_protocol(&Builtin::Deutsch).unwrap();
        // Bob's two classical queries on n = 1
        assert_eq!(query_scale(&spec), 4);
        assert_eq!(t_from_c(1.0, &spec), query_scale(&spec));
        assert_eq!(t_from_c(1e-9, &spec), 1);
    }
}
