//! Min-plus (tropical) scalars and square matrices.
//!
//! The semiring is `(R ∪ {ε}, ⊕ = min, ⊗ = +)` with `ε = +∞` as the zero and
//! `e = 0` as the unit. `ε` is a dedicated variant rather than `f64::INFINITY`
//! so that no `∞ - ∞` can ever be formed.
//!
//! A matrix `A` has an associated graph `G(A)` with an arc `j -> i` whenever
//! `A[i][j] != ε`. Its eigenvalue is the minimum cycle mean of that graph,
//! computed here with Karp's dynamic program.

use std::cmp::Ordering;
use std::collections::VecDeque;
use std::fmt;

use serde::de::{self, Deserializer, Visitor};
use serde::ser::Serializer;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::models::RingConfig;

/// Absolute tolerance used for equality of real weights.
pub const WEIGHT_TOL: f64 = 1e-9;

#[derive(Clone, Copy, Debug, PartialEq)]
pub enum MinPlusScalar {
    Finite(f64),
    Epsilon,
}

pub use MinPlusScalar::{Epsilon, Finite};

impl MinPlusScalar {
    /// The `⊗` unit `e = 0`.
    pub const UNIT: MinPlusScalar = Finite(0.0);
    /// The `⊕` unit `ε = +∞`.
    pub const ZERO: MinPlusScalar = Epsilon;

    pub fn oplus(self, other: MinPlusScalar) -> MinPlusScalar {
        match (self, other) {
            (Epsilon, b) => b,
            (a, Epsilon) => a,
            (Finite(a), Finite(b)) => Finite(if b < a { b } else { a }),
        }
    }

    pub fn otimes(self, other: MinPlusScalar) -> MinPlusScalar {
        match (self, other) {
            (Finite(a), Finite(b)) => Finite(a + b),
            _ => Epsilon,
        }
    }

    pub fn is_epsilon(self) -> bool {
        matches!(self, Epsilon)
    }

    pub fn finite(self) -> Option<f64> {
        match self {
            Finite(a) => Some(a),
            Epsilon => None,
        }
    }

    /// Value as an extended real, `ε` mapped to `+∞`.
    pub fn value(self) -> f64 {
        self.finite().unwrap_or(f64::INFINITY)
    }
}

impl From<f64> for MinPlusScalar {
    fn from(x: f64) -> Self {
        if x == f64::INFINITY {
            Epsilon
        } else {
            Finite(x)
        }
    }
}

impl PartialOrd for MinPlusScalar {
    fn partial_cmp(&self, other: &Self) -> Option<Ordering> {
        match (self, other) {
            (Epsilon, Epsilon) => Some(Ordering::Equal),
            (Epsilon, Finite(_)) => Some(Ordering::Greater),
            (Finite(_), Epsilon) => Some(Ordering::Less),
            (Finite(a), Finite(b)) => a.partial_cmp(b),
        }
    }
}

impl fmt::Display for MinPlusScalar {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Finite(a) => write!(f, "{a}"),
            Epsilon => f.write_str("inf"),
        }
    }
}

impl Serialize for MinPlusScalar {
    fn serialize<S: Serializer>(&self, serializer: S) -> std::result::Result<S::Ok, S::Error> {
        match self {
            Finite(a) => serializer.serialize_f64(*a),
            Epsilon => serializer.serialize_str("inf"),
        }
    }
}

impl<'de> Deserialize<'de> for MinPlusScalar {
    fn deserialize<D: Deserializer<'de>>(deserializer: D) -> std::result::Result<Self, D::Error> {
        struct ScalarVisitor;

        impl Visitor<'_> for ScalarVisitor {
            type Value = MinPlusScalar;

            fn expecting(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
                f.write_str("a number or the string \"inf\"")
            }

            fn visit_f64<E: de::Error>(self, v: f64) -> std::result::Result<Self::Value, E> {
                Ok(Finite(v))
            }

            fn visit_i64<E: de::Error>(self, v: i64) -> std::result::Result<Self::Value, E> {
                Ok(Finite(v as f64))
            }

            fn visit_u64<E: de::Error>(self, v: u64) -> std::result::Result<Self::Value, E> {
                Ok(Finite(v as f64))
            }

            fn visit_str<E: de::Error>(self, v: &str) -> std::result::Result<Self::Value, E> {
                if v == "inf" {
                    Ok(Epsilon)
                } else {
                    Err(E::invalid_value(de::Unexpected::Str(v), &self))
                }
            }
        }

        deserializer.deserialize_any(ScalarVisitor)
    }
}

/// Dense square min-plus matrix, row-major.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "Vec<Vec<MinPlusScalar>>", into = "Vec<Vec<MinPlusScalar>>")]
pub struct MinPlusMatrix {
    n: usize,
    entries: Vec<MinPlusScalar>,
}

impl TryFrom<Vec<Vec<MinPlusScalar>>> for MinPlusMatrix {
    type Error = Error;

    fn try_from(rows: Vec<Vec<MinPlusScalar>>) -> Result<Self> {
        MinPlusMatrix::from_rows(rows)
    }
}

impl From<MinPlusMatrix> for Vec<Vec<MinPlusScalar>> {
    fn from(a: MinPlusMatrix) -> Self {
        a.rows().map(<[MinPlusScalar]>::to_vec).collect()
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct PowerIterationResult {
    /// Growth rate per step.
    pub mu: f64,
    /// First step of the periodic regime (`K`).
    pub transient: usize,
    /// Period of the regime (`T`).
    pub period: usize,
    pub final_state: Vec<f64>,
}

impl MinPlusMatrix {
    /// The all-`ε` matrix.
    pub fn epsilon(n: usize) -> Self {
        MinPlusMatrix {
            n,
            entries: vec![Epsilon; n * n],
        }
    }

    pub fn from_rows(rows: Vec<Vec<MinPlusScalar>>) -> Result<Self> {
        let n = rows.len();
        let mut entries = Vec::with_capacity(n * n);
        for row in rows {
            if row.len() != n {
                return Err(Error::DimensionMismatch {
                    expected: n,
                    got: row.len(),
                });
            }
            entries.extend(row);
        }
        Ok(MinPlusMatrix { n, entries })
    }

    /// Builds from real rows where `f64::INFINITY` stands for `ε`.
    pub fn from_real_rows(rows: &[Vec<f64>]) -> Result<Self> {
        Self::from_rows(
            rows.iter()
                .map(|r| r.iter().copied().map(MinPlusScalar::from).collect())
                .collect(),
        )
    }

    pub fn dim(&self) -> usize {
        self.n
    }

    pub fn get(&self, i: usize, j: usize) -> MinPlusScalar {
        self.entries[i * self.n + j]
    }

    pub fn set(&mut self, i: usize, j: usize, value: MinPlusScalar) {
        self.entries[i * self.n + j] = value;
    }

    pub fn rows(&self) -> impl Iterator<Item = &[MinPlusScalar]> {
        self.entries.chunks(self.n.max(1)).take(self.n)
    }

    /// `(A ⊗ x)_i = min_j (A_ij + x_j)`.
    pub fn matvec(&self, x: &[MinPlusScalar]) -> Result<Vec<MinPlusScalar>> {
        if x.len() != self.n {
            return Err(Error::DimensionMismatch {
                expected: self.n,
                got: x.len(),
            });
        }
        Ok(self
            .rows()
            .map(|row| {
                row.iter()
                    .zip(x)
                    .fold(Epsilon, |acc, (&a, &xj)| acc.oplus(a.otimes(xj)))
            })
            .collect())
    }

    /// `A ⊗ B`.
    pub fn matmul(&self, other: &MinPlusMatrix) -> Result<MinPlusMatrix> {
        if other.n != self.n {
            return Err(Error::DimensionMismatch {
                expected: self.n,
                got: other.n,
            });
        }
        let n = self.n;
        let mut out = MinPlusMatrix::epsilon(n);
        for i in 0..n {
            for j in 0..n {
                let mut acc = Epsilon;
                for k in 0..n {
                    acc = acc.oplus(self.get(i, k).otimes(other.get(k, j)));
                }
                out.set(i, j, acc);
            }
        }
        Ok(out)
    }

    /// Arcs `(from, to, weight)` of `G(A)`: one arc `j -> i` per finite `A_ij`.
    pub fn arcs(&self) -> impl Iterator<Item = (usize, usize, f64)> + '_ {
        (0..self.n).flat_map(move |i| {
            (0..self.n).filter_map(move |j| self.get(i, j).finite().map(|w| (j, i, w)))
        })
    }

    pub fn is_strongly_connected(&self) -> bool {
        if self.n == 0 {
            return false;
        }
        // forward sweep follows j -> i, backward sweep follows i -> j
        let forward = self.reach_all(|a, node, next| !a.get(next, node).is_epsilon());
        let backward = self.reach_all(|a, node, next| !a.get(node, next).is_epsilon());
        forward && backward
    }

    fn reach_all(&self, arc: impl Fn(&Self, usize, usize) -> bool) -> bool {
        let mut seen = vec![false; self.n];
        let mut queue = VecDeque::from([0usize]);
        seen[0] = true;
        while let Some(node) = queue.pop_front() {
            for next in 0..self.n {
                if !seen[next] && arc(self, node, next) {
                    seen[next] = true;
                    queue.push_back(next);
                }
            }
        }
        seen.into_iter().all(|s| s)
    }

    /// Minimum cycle mean of `G(A)` (Karp), which is the unique eigenvalue
    /// of a matrix with strongly connected graph.
    pub fn karp_eigenvalue(&self) -> Result<f64> {
        if !self.is_strongly_connected() {
            return Err(Error::NoUniqueEigenvalue);
        }
        let n = self.n;
        // walks[k][v]: least weight of a walk with k arcs from node 0 to v
        let mut walks = Vec::with_capacity(n + 1);
        let mut start = vec![Epsilon; n];
        start[0] = Finite(0.0);
        walks.push(start);
        for k in 1..=n {
            let next = self.matvec(&walks[k - 1])?;
            walks.push(next);
        }

        let mut best: Option<f64> = None;
        for v in 0..n {
            let Finite(full) = walks[n][v] else { continue };
            let worst = (0..n)
                .filter_map(|k| walks[k][v].finite().map(|w| (full - w) / (n - k) as f64))
                .fold(f64::NEG_INFINITY, f64::max);
            if best.is_none_or(|b| worst < b) {
                best = Some(worst);
            }
        }
        best.ok_or(Error::NoUniqueEigenvalue)
    }

    /// Iterates `x <- A ⊗ x` until the state repeats up to an additive
    /// constant, `x^{K+T} = x^K + T·mu`.
    ///
    /// States are compared after subtracting their first component, so a
    /// repeat is detected as soon as the regime is periodic.
    pub fn power_iteration(
        &self,
        x0: &[f64],
        max_steps: usize,
        tol: f64,
    ) -> Result<PowerIterationResult> {
        if x0.len() != self.n {
            return Err(Error::DimensionMismatch {
                expected: self.n,
                got: x0.len(),
            });
        }
        if !self.is_strongly_connected() || self.rows().any(|r| r.iter().all(|a| a.is_epsilon())) {
            return Err(Error::NoUniqueEigenvalue);
        }
        if x0.iter().any(|x| !x.is_finite()) {
            return Err(Error::NonFinite { step: 0 });
        }

        let normalize = |x: &[f64]| x.iter().map(|v| v - x[0]).collect::<Vec<_>>();
        let mut anchors = vec![x0[0]];
        let mut history = vec![normalize(x0)];
        let mut state: Vec<MinPlusScalar> = x0.iter().copied().map(Finite).collect();

        for k in 1..=max_steps {
            state = self.matvec(&state)?;
            let real: Vec<f64> = state.iter().map(|s| s.value()).collect();
            if real.iter().any(|x| !x.is_finite()) {
                return Err(Error::NonFinite { step: k });
            }
            let z = normalize(&real);
            let hit = history
                .iter()
                .rposition(|past| past.iter().zip(&z).all(|(a, b)| (a - b).abs() <= tol));
            if let Some(j) = hit {
                let period = k - j;
                return Ok(PowerIterationResult {
                    mu: (real[0] - anchors[j]) / period as f64,
                    transient: j,
                    period,
                    final_state: real,
                });
            }
            anchors.push(real[0]);
            history.push(z);
        }

        let last = *anchors.last().unwrap_or(&x0[0]);
        Err(Error::NoPeriodicity {
            steps: max_steps,
            mu_estimate: (last - x0[0]) / max_steps.max(1) as f64,
        })
    }
}

/// Traffic matrix of the min-plus ring model: each car either advances by
/// `v` or stops `sigma` behind the car ahead.
pub fn build_traffic_matrix(v: f64, sigma: f64, ring: &RingConfig) -> MinPlusMatrix {
    let n = ring.n();
    let m = ring.m() as f64;
    let mut a = MinPlusMatrix::epsilon(n);
    if n == 1 {
        a.set(0, 0, Finite(v).oplus(Finite(m - sigma)));
        return a;
    }
    for i in 0..n {
        a.set(i, i, Finite(v));
    }
    for i in 0..n - 1 {
        a.set(i, i + 1, Finite(-sigma));
    }
    a.set(n - 1, 0, Finite(m - sigma));
    a
}

#[cfg(test)]
mod tests {
    use super::*;

    fn two_cycle() -> MinPlusMatrix {
        MinPlusMatrix::from_rows(vec![vec![Epsilon, Finite(0.0)], vec![Finite(1.0), Epsilon]])
            .unwrap()
    }

    #[test]
    fn scalar_rules() {
        assert_eq!(Epsilon.oplus(Finite(3.0)), Finite(3.0));
        assert_eq!(Epsilon.otimes(Finite(3.0)), Epsilon);
        assert_eq!(Finite(2.0).oplus(Finite(2.0)), Finite(2.0));
        assert_eq!(MinPlusScalar::UNIT.otimes(Finite(-4.5)), Finite(-4.5));
        assert!(Epsilon > Finite(1e300));
    }

    #[test]
    fn matvec_examples() {
        let a = two_cycle();
        assert_eq!(
            a.matvec(&[Finite(0.0), Finite(0.0)]).unwrap(),
            vec![Finite(0.0), Finite(1.0)]
        );
        assert_eq!(
            a.matvec(&[Finite(5.0), Epsilon]).unwrap(),
            vec![Epsilon, Finite(6.0)]
        );
        let empty = MinPlusMatrix::epsilon(2);
        assert_eq!(
            empty.matvec(&[Finite(0.0), Finite(0.0)]).unwrap(),
            vec![Epsilon, Epsilon]
        );
        assert!(matches!(
            a.matvec(&[Finite(0.0)]),
            Err(Error::DimensionMismatch {
                expected: 2,
                got: 1
            })
        ));
    }

    #[test]
    fn connectivity() {
        assert!(two_cycle().is_strongly_connected());
        let loops =
            MinPlusMatrix::from_rows(vec![vec![Finite(0.0), Epsilon], vec![Epsilon, Finite(0.0)]])
                .unwrap();
        assert!(!loops.is_strongly_connected());
        for n in 1..=7 {
            let ring = RingConfig::new(n, n + 3).unwrap();
            assert!(build_traffic_matrix(1.0, 1.0, &ring).is_strongly_connected());
        }
    }

    #[test]
    fn karp_examples() {
        assert_eq!(two_cycle().karp_eigenvalue().unwrap(), 0.5);
        let ring = RingConfig::new(2, 5).unwrap();
        assert_eq!(
            build_traffic_matrix(2.0, 1.0, &ring)
                .karp_eigenvalue()
                .unwrap(),
            1.5
        );
        let single = MinPlusMatrix::from_rows(vec![vec![Finite(3.0)]]).unwrap();
        assert_eq!(single.karp_eigenvalue().unwrap(), 3.0);
    }

    #[test]
    fn karp_rejects_disconnected() {
        let loops =
            MinPlusMatrix::from_rows(vec![vec![Finite(0.0), Epsilon], vec![Epsilon, Finite(0.0)]])
                .unwrap();
        assert!(matches!(
            loops.karp_eigenvalue(),
            Err(Error::NoUniqueEigenvalue)
        ));
        assert!(matches!(
            MinPlusMatrix::epsilon(1).karp_eigenvalue(),
            Err(Error::NoUniqueEigenvalue)
        ));
    }

    #[test]
    fn power_iteration_examples() {
        let r = two_cycle()
            .power_iteration(&[0.0, 0.0], 100, WEIGHT_TOL)
            .unwrap();
        assert_eq!((r.mu, r.period), (0.5, 2));

        let ring = RingConfig::new(2, 5).unwrap();
        let r = build_traffic_matrix(2.0, 1.0, &ring)
            .power_iteration(&[0.0, 2.5], 100, WEIGHT_TOL)
            .unwrap();
        assert!((r.mu - 1.5).abs() <= WEIGHT_TOL);

        let single = MinPlusMatrix::from_rows(vec![vec![Finite(3.0)]]).unwrap();
        let r = single.power_iteration(&[7.0], 10, WEIGHT_TOL).unwrap();
        assert_eq!((r.mu, r.transient, r.period), (3.0, 0, 1));
        assert_eq!(r.final_state, vec![10.0]);
    }

    #[test]
    fn power_iteration_step_cap() {
        // eigenvalue 1/3 with a three-cycle cannot settle in two steps
        let a = MinPlusMatrix::from_real_rows(&[
            vec![f64::INFINITY, 0.0, f64::INFINITY],
            vec![f64::INFINITY, f64::INFINITY, 0.0],
            vec![1.0, f64::INFINITY, f64::INFINITY],
        ])
        .unwrap();
        match a.power_iteration(&[0.0, 5.0, 9.0], 2, WEIGHT_TOL) {
            Err(Error::NoPeriodicity { steps: 2, .. }) => {}
            other => panic!("unexpected {other:?}"),
        }
    }

    #[test]
    fn traffic_matrix_examples() {
        let a = build_traffic_matrix(2.0, 1.0, &RingConfig::new(2, 5).unwrap());
        assert_eq!(
            a,
            MinPlusMatrix::from_real_rows(&[vec![2.0, -1.0], vec![4.0, 2.0]]).unwrap()
        );
        let a = build_traffic_matrix(0.0, 0.0, &RingConfig::new(2, 2).unwrap());
        assert_eq!(
            a,
            MinPlusMatrix::from_real_rows(&[vec![0.0, 0.0], vec![2.0, 0.0]]).unwrap()
        );
        let a = build_traffic_matrix(1.0, 1.0, &RingConfig::new(1, 3).unwrap());
        assert_eq!(a, MinPlusMatrix::from_real_rows(&[vec![1.0]]).unwrap());
    }

    #[test]
    fn json_uses_inf_for_epsilon() {
        let json = serde_json::to_string(&two_cycle()).unwrap();
        assert_eq!(json, r#"[["inf",0.0],[1.0,"inf"]]"#);
        let back: MinPlusMatrix = serde_json::from_str(&json).unwrap();
        assert_eq!(back, two_cycle());
        assert!(serde_json::from_str::<MinPlusMatrix>(r#"[[1,2],[3]]"#).is_err());
    }
}
