//! Differentiable Real Logic semantics over truth tensors.
//!
//! Connectives follow the product configuration (product t-norm,
//! probabilistic sum) except implication, which uses the Goguen residuum.
//! Universal quantification and formula aggregation use the p-mean error.

use diffcore::{Tape, Tensor, Var};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Truth values are clamped into `[EPS, 1 - EPS]` on construction.
pub const EPS: f64 = 1e-7;

/// A tape value whose elements are truth degrees in `[EPS, 1 - EPS]`.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct TruthTensor(Var);

impl TruthTensor {
    /// Clamps `var` into the truth range.
    pub fn new(tape: &mut Tape, var: Var) -> Result<Self> {
        Ok(Self(tape.clamp(var, EPS, 1.0 - EPS)?))
    }

    pub fn constant(tape: &mut Tape, tensor: Tensor) -> Result<Self> {
        let v = tape.constant(tensor);
        Self::new(tape, v)
    }

    pub fn var(self) -> Var {
        self.0
    }

    pub fn values(self, tape: &Tape) -> &[f64] {
        tape.value(self.0).data()
    }

    /// Value of a scalar truth.
    pub fn item(self, tape: &Tape) -> f64 {
        tape.value(self.0).item()
    }
}

fn same_shape(tape: &Tape, a: TruthTensor, b: TruthTensor, op: &str) -> Result<()> {
    let (sa, sb) = (tape.value(a.0).shape(), tape.value(b.0).shape());
    if sa != sb {
        return Err(Error::Dimension(format!("{op}: {sa:?} vs {sb:?}")));
    }
    Ok(())
}

pub fn not_std(tape: &mut Tape, a: TruthTensor) -> Result<TruthTensor> {
    let v = tape.rsub_scalar(1.0, a.0)?;
    TruthTensor::new(tape, v)
}

/// Product t-norm `a * b`.
pub fn and_prod(tape: &mut Tape, a: TruthTensor, b: TruthTensor) -> Result<TruthTensor> {
    same_shape(tape, a, b, "and_prod")?;
    let v = tape.mul(a.0, b.0)?;
    TruthTensor::new(tape, v)
}

/// Probabilistic sum `a + b - a * b`.
pub fn or_probsum(tape: &mut Tape, a: TruthTensor, b: TruthTensor) -> Result<TruthTensor> {
    same_shape(tape, a, b, "or_probsum")?;
    let s = tape.add(a.0, b.0)?;
    let p = tape.mul(a.0, b.0)?;
    let v = tape.sub(s, p)?;
    TruthTensor::new(tape, v)
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum LukasiewiczKind {
    And,
    Or,
}

/// Łukasiewicz conjunction `max(0, a + b - 1)` or disjunction `min(1, a + b)`.
pub fn lukasiewicz(tape: &mut Tape, a: TruthTensor, b: TruthTensor, kind: LukasiewiczKind) -> Result<TruthTensor> {
    same_shape(tape, a, b, "lukasiewicz")?;
    let s = tape.add(a.0, b.0)?;
    let v = match kind {
        LukasiewiczKind::And => {
            let one = tape.scalar(1.0);
            let shifted = tape.sub(s, one)?;
            tape.max_const(shifted, 0.0)?
        }
        LukasiewiczKind::Or => tape.clamp(s, f64::NEG_INFINITY, 1.0)?,
    };
    TruthTensor::new(tape, v)
}

/// Goguen implication: `1` where `a <= b`, otherwise `b / a`.
///
/// At `a == b` the constant branch is taken, so the gradient there is zero.
pub fn implies_goguen(tape: &mut Tape, a: TruthTensor, b: TruthTensor) -> Result<TruthTensor> {
    same_shape(tape, a, b, "implies_goguen")?;
    let mask: Vec<bool> = tape
        .value(a.0)
        .data()
        .iter()
        .zip(tape.value(b.0).data())
        .map(|(x, y)| x <= y)
        .collect();
    let shape = tape.value(a.0).shape().to_vec();
    let ones = tape.constant(Tensor::full(shape, 1.0));
    let denom = tape.max_const(a.0, EPS)?;
    let ratio = tape.div(b.0, denom)?;
    let v = tape.select(mask, ones, ratio)?;
    TruthTensor::new(tape, v)
}

/// Reichenbach implication `1 - a + a * b`, kept for comparison runs.
pub fn implies_reichenbach(tape: &mut Tape, a: TruthTensor, b: TruthTensor) -> Result<TruthTensor> {
    same_shape(tape, a, b, "implies_reichenbach")?;
    let ab = tape.mul(a.0, b.0)?;
    let na = tape.rsub_scalar(1.0, a.0)?;
    let v = tape.add(na, ab)?;
    TruthTensor::new(tape, v)
}

fn check_p(p: f64) -> Result<()> {
    if p >= 1.0 && p.is_finite() {
        Ok(())
    } else {
        Err(Error::Config(format!("aggregator p must be >= 1, got {p}")))
    }
}

/// Universal quantifier as the p-mean error:
/// `1 - (mean((1 - a_i)^p))^(1/p)`.
pub fn forall_pme(tape: &mut Tape, a: TruthTensor, p: f64) -> Result<TruthTensor> {
    check_p(p)?;
    if tape.value(a.0).is_empty() {
        return Err(Error::Dimension("forall over an empty domain".into()));
    }
    let err = tape.rsub_scalar(1.0, a.0)?;
    let powed = tape.pow_const(err, p)?;
    let mean = tape.mean(powed)?;
    let root = tape.pow_const(mean, 1.0 / p)?;
    let v = tape.rsub_scalar(1.0, root)?;
    TruthTensor::new(tape, v)
}

/// Aggregates the truths of several closed formulas with the p-mean error.
pub fn sat_agg(tape: &mut Tape, formulas: &[TruthTensor], p: f64) -> Result<TruthTensor> {
    check_p(p)?;
    if formulas.is_empty() {
        return Err(Error::NoActiveAxioms("sat_agg over zero formulas".into()));
    }
    let mut acc: Option<Var> = None;
    for f in formulas {
        if !tape.value(f.0).is_scalar() {
            return Err(Error::Dimension(format!(
                "sat_agg expects scalar formula truths, got {:?}",
                tape.value(f.0).shape()
            )));
        }
        let err = tape.rsub_scalar(1.0, f.0)?;
        let powed = tape.pow_const(err, p)?;
        acc = Some(match acc {
            Some(s) => tape.add(s, powed)?,
            None => powed,
        });
    }
    let total = acc.expect("non-empty formulas");
    let n = tape.scalar(formulas.len() as f64);
    let mean = tape.div(total, n)?;
    let root = tape.pow_const(mean, 1.0 / p)?;
    let v = tape.rsub_scalar(1.0, root)?;
    TruthTensor::new(tape, v)
}

/// Exponents of the p-mean error aggregators.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct AggregatorConfig {
    pub p_forall_equiv: f64,
    pub p_forall_incl: f64,
    pub p_satagg: f64,
}

impl Default for AggregatorConfig {
    fn default() -> Self {
        Self {
            p_forall_equiv: 2.0,
            p_forall_incl: 4.0,
            p_satagg: 2.0,
        }
    }
}

impl AggregatorConfig {
    pub fn validate(&self) -> Result<()> {
        check_p(self.p_forall_equiv)?;
        check_p(self.p_forall_incl)?;
        check_p(self.p_satagg)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn truths(tape: &mut Tape, v: &[f64]) -> TruthTensor {
        TruthTensor::constant(tape, Tensor::vector(v.to_vec())).unwrap()
    }

    fn scalar(tape: &mut Tape, v: f64) -> TruthTensor {
        TruthTensor::constant(tape, Tensor::scalar(v)).unwrap()
    }

    fn close(a: &[f64], b: &[f64], tol: f64) -> bool {
        a.len() == b.len() && a.iter().zip(b).all(|(x, y)| (x - y).abs() <= tol)
    }

    #[test]
    fn negation() {
        let mut t = Tape::new();
        let a = truths(&mut t, &[0.0, 0.3]);
        let n = not_std(&mut t, a).unwrap();
        assert!(close(n.values(&t), &[1.0, 0.7], 1e-6));
        let nn = not_std(&mut t, n).unwrap();
        assert!(close(nn.values(&t), a.values(&t), 2.0 * EPS));
    }

    #[test]
    fn product_connectives() {
        let mut t = Tape::new();
        let a = scalar(&mut t, 0.5);
        let c = and_prod(&mut t, a, a).unwrap();
        assert!((c.item(&t) - 0.25).abs() < 1e-12);

        let x = truths(&mut t, &[0.2, 0.9]);
        let z = truths(&mut t, &[0.0, 0.0]);
        let o = or_probsum(&mut t, x, z).unwrap();
        assert!(close(o.values(&t), &[0.2, 0.9], 1e-6));

        let y = truths(&mut t, &[0.2]);
        assert!(and_prod(&mut t, x, y).is_err());
    }

    #[test]
    fn lukasiewicz_examples() {
        let mut t = Tape::new();
        let a = scalar(&mut t, 0.7);
        let b = scalar(&mut t, 0.6);
        let and = lukasiewicz(&mut t, a, b, LukasiewiczKind::And).unwrap();
        assert!((and.item(&t) - 0.3).abs() < 1e-9);
        let or = lukasiewicz(&mut t, a, b, LukasiewiczKind::Or).unwrap();
        assert!((or.item(&t) - 1.0).abs() < 1e-6);
        let one = scalar(&mut t, 1.0);
        let id = lukasiewicz(&mut t, a, one, LukasiewiczKind::And).unwrap();
        assert!((id.item(&t) - 0.7).abs() < 1e-6);
    }

    #[test]
    fn goguen_examples() {
        let mut t = Tape::new();
        let a = truths(&mut t, &[0.0, 0.8, 0.35]);
        let b = truths(&mut t, &[0.6, 0.4, 0.35]);
        let r = implies_goguen(&mut t, a, b).unwrap();
        assert!(close(r.values(&t), &[1.0, 0.5, 1.0], 1e-6));
    }

    #[test]
    fn reichenbach_boundaries() {
        let mut t = Tape::new();
        let a = truths(&mut t, &[0.0, 1.0]);
        let b = truths(&mut t, &[0.3, 0.3]);
        let r = implies_reichenbach(&mut t, a, b).unwrap();
        assert!(close(r.values(&t), &[1.0, 0.3], 1e-6));
    }

    #[test]
    fn pme_examples() {
        let mut t = Tape::new();
        let ones = truths(&mut t, &[1.0, 1.0, 1.0]);
        let f = forall_pme(&mut t, ones, 2.0).unwrap();
        assert!((f.item(&t) - 1.0).abs() < 1e-6);

        let mixed = truths(&mut t, &[1.0, 0.0]);
        let f = forall_pme(&mut t, mixed, 2.0).unwrap();
        assert!((f.item(&t) - (1.0 - 0.5f64.sqrt())).abs() < 1e-6);
        assert!((f.item(&t) - 0.29289).abs() < 1e-5);

        let v = truths(&mut t, &[0.2, 0.5, 0.9]);
        let f = forall_pme(&mut t, v, 1.0).unwrap();
        assert!((f.item(&t) - (0.2 + 0.5 + 0.9) / 3.0).abs() < 1e-9);

        let empty = t.constant(Tensor::vector(vec![]));
        let empty = TruthTensor::new(&mut t, empty).unwrap();
        assert!(forall_pme(&mut t, empty, 2.0).is_err());
        assert!(forall_pme(&mut t, v, 0.5).is_err());
    }

    #[test]
    fn sat_agg_examples() {
        let mut t = Tape::new();
        let a = scalar(&mut t, 0.9);
        let b = scalar(&mut t, 0.5);
        let single = sat_agg(&mut t, &[a], 2.0).unwrap();
        assert!((single.item(&t) - 0.9).abs() < 1e-9);

        let one = scalar(&mut t, 1.0);
        let both_one = sat_agg(&mut t, &[one, one], 2.0).unwrap();
        assert!((both_one.item(&t) - 1.0).abs() < 1e-6);

        let s = sat_agg(&mut t, &[a, b], 2.0).unwrap();
        let expected = 1.0 - ((0.01 + 0.25) / 2.0f64).sqrt();
        assert!((s.item(&t) - expected).abs() < 1e-12);
        assert!((s.item(&t) - 0.6394).abs() < 1e-4);

        assert!(matches!(sat_agg(&mut t, &[], 2.0), Err(Error::NoActiveAxioms(_))));
    }

    #[test]
    fn aggregator_defaults() {
        let c = AggregatorConfig::default();
        assert_eq!((c.p_forall_equiv, c.p_forall_incl, c.p_satagg), (2.0, 4.0, 2.0));
        assert!(c.validate().is_ok());
        let bad = AggregatorConfig { p_satagg: 0.9, ..c };
        assert!(bad.validate().is_err());
    }
}
