//! Conditional non-ground-truth probabilities and the pairwise relationship
//! functions used to couple ensemble members.

use alloc::format;
use alloc::vec::Vec;
use core::fmt;
use core::str::FromStr;

use crate::error::{Error, Result};
use crate::tape::{self, Tape, Var, COND_MASS_FLOOR};

/// Tolerance on the unit sum of probability vectors.
pub const SUM_TOLERANCE: f64 = 1e-9;

/// A probability vector over `d` classes.
#[derive(Clone, Debug, PartialEq)]
pub struct ProbVector(Vec<f64>);

impl ProbVector {
    pub fn new(values: Vec<f64>) -> Result<Self> {
        if values.is_empty() {
            return Err(Error::param("probabilities", "empty vector"));
        }
        if values.iter().any(|v| !v.is_finite() || *v < 0.0) {
            return Err(Error::param("probabilities", "entries must be finite and >= 0"));
        }
        let s: f64 = values.iter().sum();
        if (s - 1.0).abs() > SUM_TOLERANCE {
            return Err(Error::param("probabilities", format!("sum {s} differs from 1")));
        }
        Ok(ProbVector(values))
    }

    pub fn values(&self) -> &[f64] {
        &self.0
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }
}

/// Probabilities renormalized over the non-ground-truth classes.
#[derive(Clone, Debug, PartialEq)]
pub struct CondProbVector {
    values: Vec<f64>,
    gt_index: usize,
}

impl CondProbVector {
    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn gt_index(&self) -> usize {
        self.gt_index
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }
}

/// `p` with entry `y` zeroed and the remainder divided by `max(1 - p_y, 1e-9)`,
/// where `1 - p_y` is taken as the sum of the other entries.
pub fn condition_non_gt(p: &ProbVector, y: usize) -> Result<CondProbVector> {
    let d = p.len();
    if y >= d {
        return Err(Error::param("label", format!("{y} out of range for {d} classes")));
    }
    let mass: f64 = p
        .values()
        .iter()
        .enumerate()
        .filter(|&(j, _)| j != y)
        .map(|(_, v)| v)
        .sum();
    let mass = mass.max(COND_MASS_FLOOR);
    let values = p
        .values()
        .iter()
        .enumerate()
        .map(|(j, v)| if j == y { 0.0 } else { v / mass })
        .collect();
    Ok(CondProbVector { values, gt_index: y })
}

fn check_pair(op: &'static str, a: &CondProbVector, b: &CondProbVector) -> Result<()> {
    if a.len() != b.len() {
        return Err(Error::dim(op, &[a.len()], &[b.len()]));
    }
    if a.gt_index != b.gt_index {
        return Err(Error::param("gt_index", format!("{} vs {}", a.gt_index, b.gt_index)));
    }
    Ok(())
}

/// Cosine similarity between two conditional vectors.
pub fn phi_cosine(a: &CondProbVector, b: &CondProbVector) -> Result<f64> {
    check_pair("phi_cosine", a, b)?;
    Ok(tape::cosine(&a.values, &b.values))
}

/// Symmetrized KL divergence `(KL(a||b) + KL(b||a)) / 2` in nats.
pub fn phi_symkl(a: &CondProbVector, b: &CondProbVector) -> Result<f64> {
    check_pair("phi_symkl", a, b)?;
    Ok(Relation::SymKl.eval(&a.values, &b.values))
}

/// Squared Euclidean distance.
pub fn phi_l2(a: &CondProbVector, b: &CondProbVector) -> Result<f64> {
    check_pair("phi_l2", a, b)?;
    Ok(Relation::L2.eval(&a.values, &b.values))
}

/// The relationship function underlying a [`PenaltyKind`].
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Relation {
    Cosine,
    SymKl,
    L2,
}

impl Relation {
    /// Value-level evaluation on two equal-length rows.
    pub fn eval(self, a: &[f64], b: &[f64]) -> f64 {
        match self {
            Relation::Cosine => tape::cosine(a, b),
            Relation::SymKl => 0.5 * (tape::kl_row(a, b) + tape::kl_row(b, a)),
            Relation::L2 => a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum(),
        }
    }

    /// Row-wise relation on the tape; output has one entry per row.
    pub fn on_tape(self, t: &mut Tape, a: Var, b: Var) -> Result<Var> {
        match self {
            Relation::Cosine => t.cosine_similarity(a, b),
            Relation::SymKl => {
                let ab = t.kl_divergence(a, b)?;
                let ba = t.kl_divergence(b, a)?;
                let s = t.add(ab, ba)?;
                Ok(t.scale(s, 0.5))
            }
            Relation::L2 => {
                let diff = t.sub(a, b)?;
                let sq = t.mul(diff, diff)?;
                Ok(t.sum_last(sq))
            }
        }
    }
}

/// How members are coupled in the joint loss. Diversity kinds penalize a
/// similarity (or reward a distance); cooperation kinds penalize a
/// divergence or distance (or reward a similarity).
#[derive(Clone, Copy, Debug, PartialEq, Eq, Default)]
pub enum PenaltyKind {
    #[default]
    None,
    CosineDiversity,
    SymKlCooperation,
    L2Diversity,
    L2Cooperation,
    /// Known to have little effect in practice; kept for ablations.
    NegCosineCooperation,
}

impl PenaltyKind {
    pub const ALL: [PenaltyKind; 6] = [
        PenaltyKind::None,
        PenaltyKind::CosineDiversity,
        PenaltyKind::SymKlCooperation,
        PenaltyKind::L2Diversity,
        PenaltyKind::L2Cooperation,
        PenaltyKind::NegCosineCooperation,
    ];

    pub fn token(self) -> &'static str {
        match self {
            PenaltyKind::None => "none",
            PenaltyKind::CosineDiversity => "cosine-diversity",
            PenaltyKind::SymKlCooperation => "symkl-cooperation",
            PenaltyKind::L2Diversity => "l2-diversity",
            PenaltyKind::L2Cooperation => "l2-cooperation",
            PenaltyKind::NegCosineCooperation => "negcos-cooperation",
        }
    }

    /// `(relation, sign)`; `None` for the uncoupled kind.
    pub fn relation(self) -> Option<(Relation, f64)> {
        match self {
            PenaltyKind::None => None,
            PenaltyKind::CosineDiversity => Some((Relation::Cosine, 1.0)),
            PenaltyKind::SymKlCooperation => Some((Relation::SymKl, 1.0)),
            PenaltyKind::L2Diversity => Some((Relation::L2, -1.0)),
            PenaltyKind::L2Cooperation => Some((Relation::L2, 1.0)),
            PenaltyKind::NegCosineCooperation => Some((Relation::Cosine, -1.0)),
        }
    }
}

impl fmt::Display for PenaltyKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.token())
    }
}

impl FromStr for PenaltyKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        PenaltyKind::ALL
            .into_iter()
            .find(|k| k.token() == s)
            .ok_or_else(|| Error::param("penalty", format!("unknown penalty `{s}`")))
    }
}

/// `sign / (b (K - 1)) * sum_i sum_{j != l} phi(q_j(x_i), q_l(x_i))` where
/// `q_j` is member `j`'s conditional non-ground-truth distribution, or its
/// full temperature-`T` softmax when `temperature_probe` is set. The penalty
/// weight is left to the caller.
pub fn pairwise_penalty(
    tape: &mut Tape,
    logits: &[Var],
    labels: &[usize],
    kind: PenaltyKind,
    temperature_probe: Option<f64>,
) -> Result<Var> {
    let k = logits.len();
    if k < 2 {
        return Err(Error::param(
            "members",
            format!("pairwise penalty needs K >= 2, got {k}"),
        ));
    }
    let shape = tape.shape(logits[0]).to_vec();
    for &z in &logits[1..] {
        if tape.shape(z) != shape.as_slice() {
            return Err(Error::dim("pairwise_penalty", tape.shape(z), &shape));
        }
    }
    if shape.len() != 2 || shape[0] != labels.len() {
        return Err(Error::dim("pairwise_penalty labels", &shape, &[labels.len()]));
    }
    let Some((relation, sign)) = kind.relation() else {
        return Ok(tape.constant(crate::Tensor::scalar(0.0)));
    };

    let mut dists = Vec::with_capacity(k);
    for &z in logits {
        let q = match temperature_probe {
            Some(t) => tape.softmax_temp(z, t)?,
            None => {
                let p = tape.softmax_temp(z, 1.0)?;
                tape.condition_non_gt(p, labels)?
            }
        };
        dists.push(q);
    }
    // every relation is symmetric, so each unordered pair stands for two ordered ones
    let mut total: Option<Var> = None;
    for j in 0..k {
        for l in j + 1..k {
            let rows = relation.on_tape(tape, dists[j], dists[l])?;
            let s = tape.sum(rows);
            total = Some(match total {
                Some(acc) => tape.add(acc, s)?,
                None => s,
            });
        }
    }
    let norm = (labels.len() * (k - 1)) as f64;
    Ok(tape.scale(total.expect("K >= 2"), 2.0 * sign / norm))
}

/// Mean over samples and unordered member pairs of `relation` applied to
/// conditional distributions. `member_probs[j][i]` is member `j`'s softmax on
/// sample `i`.
pub fn mean_pairwise_relation(member_probs: &[Vec<Vec<f64>>], labels: &[usize], relation: Relation) -> Result<f64> {
    let k = member_probs.len();
    if k < 2 {
        return Err(Error::param("members", format!("need K >= 2, got {k}")));
    }
    if member_probs.iter().any(|m| m.len() != labels.len()) {
        return Err(Error::dim("member_probs", &[member_probs[0].len()], &[labels.len()]));
    }
    let mut total = 0.0;
    let mut count = 0usize;
    for (i, &y) in labels.iter().enumerate() {
        let cond: Vec<CondProbVector> = member_probs
            .iter()
            .map(|m| condition_non_gt(&ProbVector(m[i].clone()), y))
            .collect::<Result<_>>()?;
        for j in 0..k {
            for l in j + 1..k {
                total += relation.eval(&cond[j].values, &cond[l].values);
                count += 1;
            }
        }
    }
    Ok(total / count.max(1) as f64)
}
