use super::circuit::{QueryCircuit, Step};
use super::spec::{Builtin, Message, Party, ProtocolKind, ProtocolSpec, Register};
use crate::error::{QcmiError, Result};
use crate::oraclesim::{QueryMode, ORACLE_N_CAP};
use crate::qmat::{c64, hadamard, pauli_x, CMatrix, CVector};

fn reg(label: &str, dim: usize, owner: Party, classical: bool) -> Register {
    Register { label: label.to_string(), dim, owner, classical }
}

fn classical_msg(labels: &[&str]) -> Option<Message> {
    Some(Message { registers: labels.iter().map(|s| s.to_string()).collect(), quantum: false })
}

/// All `d`-subsets of `[size]` in lexicographic order.
pub fn subsets(size: usize, d: usize) -> Vec<Vec<usize>> {
    fn rec(start: usize, size: usize, d: usize, cur: &mut Vec<usize>, out: &mut Vec<Vec<usize>>) {
        if cur.len() == d {
            out.push(cur.clone());
            return;
        }
        for x in start..size {
            cur.push(x);
            rec(x + 1, size, d, cur, out);
            cur.pop();
        }
    }
    let mut out = Vec::new();
    rec(0, size, d, &mut Vec::new(), &mut out);
    out
}

/// Unitary whose first column is the unit vector `v`.
pub fn unitary_with_first_column(v: &CVector) -> Result<CMatrix> {
    let m = v.len();
    if (v.norm() - 1.0).abs() > 1e-10 {
        return Err(QcmiError::Validation("state vector is not normalized".into()));
    }
    let mut cols: Vec<CVector> = vec![v.clone()];
    for k in 0..m {
        if cols.len() == m {
            break;
        }
        let mut w = crate::qmat::basis_vector(m, k);
        for c in &cols {
            let proj = c.dotc(&w);
            w -= c * proj;
        }
        let nrm = w.norm();
        if nrm > 1e-8 {
            cols.push(w.unscale(nrm));
        }
    }
    Ok(CMatrix::from_columns(&cols))
}

fn diag(values: impl IntoIterator<Item = f64>) -> CMatrix {
    let v: Vec<_> = values.into_iter().map(|x| c64(x, 0.0)).collect();
    CMatrix::from_diagonal(&CVector::from_vec(v))
}

fn parity(x: usize) -> usize {
    x.count_ones() as usize & 1
}

fn check_n(n: usize, min: usize) -> Result<()> {
    if n < min || n > ORACLE_N_CAP {
        return Err(QcmiError::Cap(format!("n = {n} outside [{min}, {ORACLE_N_CAP}]")));
    }
    Ok(())
}

/// Builds the protocol without the completeness check.
pub(crate) fn build(builtin: &Builtin) -> Result<ProtocolSpec> {
    use Party::{Alice as A, Bob as B};
    use QueryMode::{Classical, Phase, Xor};
    let spec = |kind, n, registers, alice, bob, m1, m2, key_a: &str, key_b: &str, perfect_complete| ProtocolSpec {
        builtin: builtin.clone(),
        kind,
        n,
        registers,
        alice,
        bob,
        m1,
        m2,
        key_a: key_a.to_string(),
        key_b: key_b.to_string(),
        perfect_complete,
    };
    Ok(match builtin {
        Builtin::Deutsch => spec(
            ProtocolKind::NonInteractiveKa,
            1,
            vec![
                reg("ax", 2, A, false),
                reg("ay", 2, A, false),
                reg("bh0", 2, B, true),
                reg("bh1", 2, B, true),
                reg("bk", 2, B, true),
            ],
            vec![QueryCircuit::new(
                1,
                vec![
                    Step::unitary(&["ax"], hadamard()),
                    Step::unitary(&["ay"], pauli_x()),
                    Step::query(Phase, "ax", "ay"),
                    Step::unitary(&["ax"], hadamard()),
                    Step::measure("ax"),
                ],
            )],
            QueryCircuit::new(
                1,
                vec![
                    Step::query_at(Classical, &[], "bh0", |_| 0),
                    Step::query_at(Classical, &[], "bh1", |_| 1),
                    Step::classical(&["bh0", "bh1"], "bk", |a| a[0] ^ a[1]),
                ],
            ),
            None,
            None,
            "ax",
            "bk",
            true,
        ),
        Builtin::Product => spec(
            ProtocolKind::NonInteractiveKa,
            1,
            vec![reg("ah", 2, A, true), reg("bh", 2, B, true)],
            vec![QueryCircuit::new(1, vec![Step::query_at(Classical, &[], "ah", |_| 0)])],
            QueryCircuit::new(1, vec![Step::query_at(Classical, &[], "bh", |_| 1)]),
            None,
            None,
            "ah",
            "bh",
            false,
        ),
        Builtin::Merkle { n, d } => {
            let (n, d) = (*n, *d);
            check_n(n, 1)?;
            let size = 1usize << n;
            if d == 0 || d > size {
                return Err(QcmiError::Validation(format!("merkle needs 1 <= d <= {size}")));
            }
            let sets = std::sync::Arc::new(subsets(size, d));
            let count = sets.len();
            let ay: Vec<String> = (0..d).map(|i| format!("ay{i}")).collect();
            let by: Vec<String> = (0..d).map(|i| format!("by{i}")).collect();
            let mut registers = vec![reg("sa", count, A, true)];
            registers.extend(ay.iter().map(|l| reg(l, 2, A, true)));
            registers.push(reg("ak", 2, A, true));
            registers.push(reg("sb", count, B, true));
            registers.extend(by.iter().map(|l| reg(l, 2, B, true)));
            registers.push(reg("bk", 2, B, true));

            let queries = |sub: &str, outs: &[String]| -> Vec<Step> {
                outs.iter()
                    .enumerate()
                    .map(|(i, o)| {
                        let sets = sets.clone();
                        Step::query_at(Classical, &[sub], o, move |a| sets[a[0]][i])
                    })
                    .collect()
            };
            // key from the holder's own answers at min(S_A ∩ S_B); `own` selects the holder's set
            let key = |own: usize, miss: usize| {
                let sets = sets.clone();
                move |a: &[usize]| {
                    let (sa, sb) = (&sets[a[0]], &sets[a[1]]);
                    match sa.iter().find(|x| sb.contains(x)) {
                        Some(m) => {
                            let mine = if own == 0 { sa } else { sb };
                            a[2 + mine.iter().position(|x| x == m).expect("member")]
                        }
                        None => miss,
                    }
                }
            };
            let mut a1 = vec![Step::coin("sa", count)];
            a1.extend(queries("sa", &ay));
            let mut b = vec![Step::coin("sb", count)];
            b.extend(queries("sb", &by));
            let mut b_in = vec!["sa", "sb"];
            b_in.extend(by.iter().map(String::as_str));
            b.push(Step::classical(&b_in, "bk", key(1, 1)));
            let mut a_in = vec!["sa", "sb"];
            a_in.extend(ay.iter().map(String::as_str));
            let a2 = vec![Step::classical(&a_in, "ak", key(0, 0))];
            spec(
                ProtocolKind::TwoRoundKa,
                n,
                registers,
                vec![QueryCircuit::new(n, a1), QueryCircuit::new(n, a2)],
                QueryCircuit::new(n, b),
                classical_msg(&["sa"]),
                classical_msg(&["sb"]),
                "ak",
                "bk",
                d == size,
            )
        }
        Builtin::Example1 { n } => {
            check_n(*n, 1)?;
            let size = 1usize << n;
            spec(
                ProtocolKind::TwoRoundKa,
                *n,
                vec![reg("ak", 2, A, true), reg("bx", size, B, true), reg("bk", 2, B, true)],
                vec![
                    QueryCircuit::new(*n, vec![]),
                    QueryCircuit::new(*n, vec![Step::query(Classical, "bx", "ak")]),
                ],
                QueryCircuit::new(*n, vec![Step::coin("bx", size), Step::query(Classical, "bx", "bk")]),
                None,
                classical_msg(&["bx"]),
                "ak",
                "bk",
                true,
            )
        }
        Builtin::Example2 { n } => {
            check_n(*n, 1)?;
            let size = 1usize << n;
            spec(
                ProtocolKind::TwoRoundKa,
                *n,
                vec![
                    reg("ay", 2, A, true),
                    reg("az", 2, A, true),
                    reg("ah", 2, A, true),
                    reg("ak", 3, A, true),
                    reg("bj", size - 1, B, true),
                    reg("bx", size, B, true),
                    reg("bk", 2, B, true),
                ],
                vec![
                    QueryCircuit::new(*n, vec![Step::query_at(Classical, &[], "ay", |_| 0)]),
                    QueryCircuit::new(
                        *n,
                        vec![
                            Step::query_at(Classical, &[], "az", |_| 0),
                            Step::query(Classical, "bx", "ah"),
                            // 2 marks an abort
                            Step::classical(&["ay", "az", "ah"], "ak", |a| if a[0] != a[1] { 2 } else { a[2] }),
                        ],
                    ),
                ],
                QueryCircuit::new(
                    *n,
                    vec![
                        Step::coin("bj", size - 1),
                        Step::classical(&["bj"], "bx", |a| a[0] + 1),
                        Step::query(Classical, "bx", "bk"),
                    ],
                ),
                None,
                classical_msg(&["bx"]),
                "ak",
                "bk",
                true,
            )
        }
        Builtin::QueryFree { n } => {
            check_n(*n, 1)?;
            let size = 1usize << n;
            spec(
                ProtocolKind::TwoRoundKa,
                *n,
                vec![
                    reg("ar", size, A, true),
                    reg("ay", 2, A, true),
                    reg("ak", 2, A, true),
                    reg("bb", 2, B, true),
                    reg("bh", 2, B, true),
                    reg("bc", 2, B, true),
                ],
                vec![
                    QueryCircuit::new(*n, vec![Step::coin("ar", size), Step::query(Classical, "ar", "ay")]),
                    QueryCircuit::new(*n, vec![Step::classical(&["bc", "ay"], "ak", |a| a[0] ^ a[1])]),
                ],
                QueryCircuit::new(
                    *n,
                    vec![
                        Step::coin("bb", 2),
                        Step::query(Classical, "ar", "bh"),
                        Step::classical(&["bb", "bh"], "bc", |a| a[0] ^ a[1]),
                    ],
                ),
                classical_msg(&["ar"]),
                classical_msg(&["bc"]),
                "ak",
                "bb",
                true,
            )
        }
        Builtin::ToyQpke { n } => {
            check_n(*n, 1)?;
            let size = 1usize << n;
            spec(
                ProtocolKind::QpkeClassicalKeygen,
                *n,
                vec![
                    reg("ar", size, A, true),
                    reg("ay", 2, A, true),
                    reg("ah", 2, A, true),
                    reg("ak", 2, A, true),
                    reg("bb", 2, B, true),
                    reg("bj", size - 1, B, true),
                    reg("bx", size, B, true),
                    reg("bh", 2, B, true),
                    reg("bc", 2, B, true),
                ],
                vec![
                    QueryCircuit::new(*n, vec![Step::coin("ar", size), Step::query(Classical, "ar", "ay")]),
                    QueryCircuit::new(
                        *n,
                        vec![
                            Step::query(Xor, "bx", "ah"),
                            Step::classical(&["bc", "ah"], "ak", |a| a[0] ^ a[1]),
                        ],
                    ),
                ],
                QueryCircuit::new(
                    *n,
                    vec![
                        Step::coin("bb", 2),
                        Step::coin("bj", size - 1),
                        Step::classical(&["ar", "bj"], "bx", move |a| (a[0] + 1 + a[1]) % size),
                        Step::query(Xor, "bx", "bh"),
                        Step::classical(&["bb", "bh"], "bc", |a| a[0] ^ a[1]),
                    ],
                ),
                classical_msg(&["ar"]),
                classical_msg(&["bx", "bc"]),
                "ak",
                "bb",
                true,
            )
        }
        Builtin::QuantumPk { clonable } => quantum_pk(builtin, *clonable)?,
        Builtin::ShortSk { noise } => {
            let mut registers = vec![
                reg("as", 2, A, true),
                reg("ah", 2, A, true),
                reg("ak", 2, A, true),
                reg("bb", 2, B, true),
                reg("bh", 2, B, true),
                reg("bc", 2, B, true),
            ];
            let mut b = vec![Step::coin("bb", 2), Step::query(Xor, "as", "bh")];
            if *noise {
                // one value in ten flips the ciphertext
                registers.push(reg("bn", 10, B, true));
                b.push(Step::coin("bn", 10));
                b.push(Step::classical(&["bb", "bh", "bn"], "bc", |a| a[0] ^ a[1] ^ usize::from(a[2] == 0)));
            } else {
                b.push(Step::classical(&["bb", "bh"], "bc", |a| a[0] ^ a[1]));
            }
            spec(
                ProtocolKind::QpkeShortSk,
                1,
                registers,
                vec![
                    QueryCircuit::new(1, vec![Step::coin("as", 2)]),
                    QueryCircuit::new(
                        1,
                        vec![
                            Step::query(Xor, "as", "ah"),
                            Step::classical(&["bc", "ah"], "ak", |a| a[0] ^ a[1]),
                        ],
                    ),
                ],
                QueryCircuit::new(1, b),
                classical_msg(&["as"]),
                classical_msg(&["bc"]),
                "ak",
                "bb",
                !noise,
            )
        }
        Builtin::NonAdaptive { n, probs } => {
            check_n(*n, 1)?;
            let size = 1usize << n;
            if probs.len() != size + 1 || probs.iter().any(|&p| p < 0.0) {
                return Err(QcmiError::Validation(format!("non-adaptive step needs {} probabilities", size + 1)));
            }
            if (probs.iter().sum::<f64>() - 1.0).abs() > 1e-12 {
                return Err(QcmiError::Validation("step probabilities must sum to 1".into()));
            }
            let mut beta = CVector::zeros(2 * size);
            for x in 0..size {
                beta[2 * x] = c64((probs[0] / size as f64).sqrt(), 0.0);
                beta[2 * x + 1] = c64(probs[1 + x].sqrt(), 0.0);
            }
            let prep = unitary_with_first_column(&beta)?;
            let party = |x: &str, y: &str| {
                QueryCircuit::new(*n, vec![Step::unitary(&[x, y], prep.clone()), Step::query(Phase, x, y)])
            };
            spec(
                ProtocolKind::NonInteractiveKa,
                *n,
                vec![reg("ax", size, A, false), reg("ay", 2, A, false), reg("bx", size, B, false), reg("by", 2, B, false)],
                vec![party("ax", "ay")],
                party("bx", "by"),
                None,
                None,
                "ay",
                "by",
                false,
            )
        }
    })
}

/// pk = (|s0> + (-1)^r |s1>)/√2 with `s1 = s0 ⊕ (1 + H(s0))`.
fn quantum_pk(builtin: &Builtin, clonable: bool) -> Result<ProtocolSpec> {
    use Party::{Alice as A, Bob as B};
    use QueryMode::{Classical, Phase};
    let n = 2;
    let mut registers = vec![
        reg("as0", 4, A, true),
        reg("ay0", 2, A, true),
        reg("as1", 4, A, true),
        reg("aq", 2, A, false),
        reg("ap", 4, A, false),
        reg("az", 2, A, false),
        reg("bb", 2, B, true),
        reg("by", 2, B, false),
    ];
    let sign = diag([1.0, 1.0, 1.0, -1.0]);
    let mut a1 = vec![
        Step::coin("as0", 4),
        Step::query(Classical, "as0", "ay0"),
        Step::classical(&["as0", "ay0"], "as1", |a| a[0] ^ (1 + a[1])),
        Step::unitary(&["aq"], hadamard()),
    ];
    if clonable {
        registers.push(reg("ar", 2, A, true));
        a1.push(Step::coin("ar", 2));
        a1.push(Step::unitary(&["ar", "aq"], sign.clone()));
    }
    a1.push(Step::classical(&["as0", "as1", "aq"], "ap", |a| if a[2] == 0 { a[0] } else { a[1] }));
    a1.push(Step::classical(&["ap", "as1"], "aq", |a| usize::from(a[0] == a[1])));

    let mut a2 = vec![
        Step::unitary(&["az"], pauli_x()),
        Step::query(Phase, "ap", "az"),
        Step::classical(&["ap", "as1"], "aq", |a| usize::from(a[0] == a[1])),
        Step::classical(&["aq", "as0", "as1"], "ap", |a| if a[0] == 1 { (a[1] + 4 - a[2]) % 4 } else { 0 }),
    ];
    if clonable {
        a2.push(Step::unitary(&["ar", "aq"], sign));
    }
    a2.push(Step::unitary(&["aq"], hadamard()));
    a2.push(Step::measure("aq"));

    let bob_phase = diag((0..8).map(|i| if (i / 4) * parity(i % 4) == 1 { -1.0 } else { 1.0 }));
    let b = vec![
        Step::coin("bb", 2),
        Step::unitary(&["by"], pauli_x()),
        Step::query(Phase, "ap", "by"),
        Step::unitary(&["bb", "ap"], bob_phase),
    ];
    let mut m1 = vec!["ap".to_string()];
    if clonable {
        m1.push("ar".to_string());
    }
    Ok(ProtocolSpec {
        builtin: builtin.clone(),
        kind: ProtocolKind::QpkeQuantumPk,
        n,
        registers,
        alice: vec![QueryCircuit::new(n, a1), QueryCircuit::new(n, a2)],
        bob: QueryCircuit::new(n, b),
        m1: Some(Message { registers: m1, quantum: true }),
        m2: Some(Message { registers: vec!["ap".into()], quantum: true }),
        key_a: "aq".into(),
        key_b: "bb".into(),
        perfect_complete: true,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn subsets_count() {
        assert_eq!(subsets(4, 2).len(), 6);
        assert_eq!(subsets(4, 4), vec![vec![0, 1, 2, 3]]);
        assert_eq!(subsets(4, 2)[0], vec![0, 1]);
    }

    #[test]
    fn first_column_unitary() {
        let v = CVector::from_vec(vec![c64(0.6, 0.0), c64(0.0, 0.8), c64(0.0, 0.0)]);
        let u = unitary_with_first_column(&v).unwrap();
        assert!((u.column(0) - &v).norm() < 1e-12);
        assert!(crate::qmat::max_abs(&(u.adjoint() * &u - CMatrix::identity(3, 3))) < 1e-12);
    }
}
