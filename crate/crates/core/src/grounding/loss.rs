//! Axioms and training losses recorded on the tape.

use std::sync::Arc;

use diffcore::{Tape, Tensor, Var};
use serde::{Deserialize, Serialize};

use super::predicates::OntologyTargets;
use crate::error::{Error, Result};
use crate::fuzzy::{forall_pme, implies_goguen, sat_agg, AggregatorConfig, TruthTensor, EPS};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum LossKind {
    CrossEntropy,
    SatEquiv,
    SatIncl,
    SatBoth,
}

impl LossKind {
    pub const ALL: [LossKind; 4] = [
        LossKind::CrossEntropy,
        LossKind::SatEquiv,
        LossKind::SatIncl,
        LossKind::SatBoth,
    ];

    pub fn name(self) -> &'static str {
        match self {
            LossKind::CrossEntropy => "cross_entropy",
            LossKind::SatEquiv => "sat_equiv",
            LossKind::SatIncl => "sat_incl",
            LossKind::SatBoth => "sat_both",
        }
    }

    pub fn uses_equiv(self) -> bool {
        matches!(self, LossKind::SatEquiv | LossKind::SatBoth)
    }

    pub fn uses_incl(self) -> bool {
        matches!(self, LossKind::SatIncl | LossKind::SatBoth)
    }
}

impl std::fmt::Display for LossKind {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.name())
    }
}

impl std::str::FromStr for LossKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        LossKind::ALL
            .into_iter()
            .find(|k| k.name() == s)
            .ok_or_else(|| Error::Config(format!("unknown loss kind {s:?}")))
    }
}

/// What one graph contributes to the loss: its labeled nodes and the nodes
/// quantified by the inclusion axiom with their ontology targets.
#[derive(Clone, Debug)]
pub struct Supervision {
    labeled: Arc<[usize]>,
    onehot: Tensor,
    inclusion: Arc<[usize]>,
    validity: Tensor,
    targets: Tensor,
}

impl Supervision {
    pub fn new(
        labeled: &[(usize, usize)],
        num_classes: usize,
        inclusion_nodes: &[usize],
        targets: &OntologyTargets,
    ) -> Result<Self> {
        if targets.num_classes != num_classes {
            return Err(Error::Dimension(format!(
                "ontology targets have {} classes, expected {num_classes}",
                targets.num_classes
            )));
        }
        let mut onehot = vec![0.0; labeled.len() * num_classes];
        for (r, &(_, c)) in labeled.iter().enumerate() {
            if c >= num_classes {
                return Err(Error::Dimension(format!("label {c} out of range")));
            }
            onehot[r * num_classes + c] = 1.0;
        }
        let num_nodes = targets.validity.len();
        if let Some(&v) = inclusion_nodes
            .iter()
            .chain(labeled.iter().map(|(v, _)| v))
            .find(|&&v| v >= num_nodes)
        {
            return Err(Error::Dimension(format!("node {v} outside 0..{num_nodes}")));
        }
        let mut rows = Vec::with_capacity(inclusion_nodes.len() * num_classes);
        for &v in inclusion_nodes {
            rows.extend_from_slice(targets.row(v));
        }
        Ok(Self {
            labeled: labeled.iter().map(|&(v, _)| v).collect(),
            onehot: Tensor::new(vec![labeled.len(), num_classes], onehot)?,
            inclusion: inclusion_nodes.into(),
            validity: Tensor::vector(inclusion_nodes.iter().map(|&v| targets.validity[v]).collect()),
            targets: Tensor::new(vec![inclusion_nodes.len(), num_classes], rows)?,
        })
    }

    pub fn num_labeled(&self) -> usize {
        self.labeled.len()
    }

    pub fn num_inclusion(&self) -> usize {
        self.inclusion.len()
    }
}

/// `IsClassOf` truths of the labeled rows of `probs`, one per labeled node.
pub fn class_of_truths(tape: &mut Tape, probs: Var, sup: &Supervision) -> Result<TruthTensor> {
    let rows = tape.gather_rows(probs, sup.labeled.clone())?;
    let y = tape.constant(sup.onehot.clone());
    let prod = tape.mul(rows, y)?;
    let t = tape.sum_rows(prod)?;
    TruthTensor::new(tape, t)
}

/// Forall over labeled nodes of `IsClassOf(x_v, y_v)`, diagonally paired.
pub fn equivalence_axiom(tape: &mut Tape, probs: Var, sup: &Supervision, p: f64) -> Result<TruthTensor> {
    if sup.labeled.is_empty() {
        return Err(Error::NoActiveAxioms("equivalence axiom has no labeled nodes".into()));
    }
    let t = class_of_truths(tape, probs, sup)?;
    forall_pme(tape, t, p)
}

/// Forall over the inclusion nodes of `IsValid -> IsSimilar` (Goguen).
pub fn inclusion_axiom(tape: &mut Tape, probs: Var, sup: &Supervision, p: f64) -> Result<TruthTensor> {
    if sup.inclusion.is_empty() {
        return Err(Error::NoActiveAxioms("inclusion axiom has no nodes".into()));
    }
    let rows = tape.gather_rows(probs, sup.inclusion.clone())?;
    let targets = tape.constant(sup.targets.clone());
    let prod = tape.mul(rows, targets)?;
    let similar = tape.sum_rows(prod)?;
    let similar = TruthTensor::new(tape, similar)?;
    let valid = TruthTensor::constant(tape, sup.validity.clone())?;
    let implied = implies_goguen(tape, valid, similar)?;
    forall_pme(tape, implied, p)
}

/// A loss value on the tape with the satisfaction of each active axiom.
#[derive(Clone, Copy, Debug)]
pub struct LossOutput {
    pub loss: Var,
    pub equiv: Option<f64>,
    pub incl: Option<f64>,
}

/// Cross-entropy is the mean of `-log p_true` over labeled nodes; the SAT
/// losses are `1 - SatAgg` of the active axioms. For `sat_both` an axiom with
/// an empty domain is left out; a loss with no active axiom is an error.
pub fn compute_loss(
    tape: &mut Tape,
    kind: LossKind,
    probs: Var,
    sup: &Supervision,
    aggregator: &AggregatorConfig,
) -> Result<LossOutput> {
    if kind == LossKind::CrossEntropy {
        if sup.labeled.is_empty() {
            return Err(Error::NoActiveAxioms("cross-entropy needs labeled nodes".into()));
        }
        let t = class_of_truths(tape, probs, sup)?;
        let clamped = tape.clamp(t.var(), EPS, 1.0)?;
        let logp = tape.log(clamped)?;
        let mean = tape.mean(logp)?;
        let loss = tape.mul_scalar(mean, -1.0)?;
        return Ok(LossOutput {
            loss,
            equiv: None,
            incl: None,
        });
    }
    let mut axioms = Vec::with_capacity(2);
    let mut out = LossOutput {
        loss: probs,
        equiv: None,
        incl: None,
    };
    if kind.uses_equiv() && !sup.labeled.is_empty() {
        let a = equivalence_axiom(tape, probs, sup, aggregator.p_forall_equiv)?;
        out.equiv = Some(a.item(tape));
        axioms.push(a);
    }
    if kind.uses_incl() && !sup.inclusion.is_empty() {
        let a = inclusion_axiom(tape, probs, sup, aggregator.p_forall_incl)?;
        out.incl = Some(a.item(tape));
        axioms.push(a);
    }
    if axioms.is_empty() {
        return Err(Error::NoActiveAxioms(format!(
            "{kind} has no active axiom (labeled nodes: {}, inclusion nodes: {})",
            sup.labeled.len(),
            sup.inclusion.len()
        )));
    }
    let sat = sat_agg(tape, &axioms, aggregator.p_satagg)?;
    out.loss = tape.rsub_scalar(1.0, sat.var())?;
    Ok(out)
}
