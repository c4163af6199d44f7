//! The bi-CNOT label algebra: Z-basis and X-basis parity rounds with
//! exact backward-action tracking, plus candidate-set bookkeeping for
//! the error strings consistent with the announcements.
//!
//! A bi-CNOT (the same CNOT applied by both parties to their halves of
//! two pairs) maps labels as
//! `(a, b), (a', b')  →  (a, b⊕b'), (a'⊕a, b')`
//! with the second pair the target. Collecting a subset's parity into a
//! destination pair and measuring it reveals the subset parity of the
//! bit string (Z rounds) or phase string (X rounds); the price is a
//! deterministic backward action on the conjugate string of the
//! surviving controls.

use std::collections::BTreeSet;

use rand::Rng;
use thiserror::Error;

use crate::gf2::BitString;
use crate::pairstate::{Ensemble, PairState};

#[derive(Debug, Error, PartialEq)]
pub enum RoundError {
    #[error("subset must contain at least 2 live pairs, got {0}")]
    SubsetTooSmall(usize),
    #[error("destination {0} is not a live member of the subset")]
    BadDestination(usize),
    #[error("subset references dead pair {0}")]
    DeadIndex(usize),
    #[error("subset mask length {mask} does not match ensemble size {ensemble}")]
    LengthMismatch { mask: usize, ensemble: usize },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum RoundBasis {
    Z,
    X,
}

/// One hashing step: the announced subset, the destination pair that
/// absorbed the parity and was discarded, and both parties' announced
/// measurement outcomes. `parity_alice ⊕ parity_bob` equals `r·s_b`
/// (Z basis) or `r·s_p` (X basis) on the pre-round ensemble.
#[derive(Debug, Clone, PartialEq)]
pub struct ParityRound {
    pub basis: RoundBasis,
    /// Subset mask over the full (stable) index range.
    pub subset: BitString,
    pub dest: usize,
    pub parity_alice: bool,
    pub parity_bob: bool,
}

impl ParityRound {
    /// The subset parity revealed by the announcements.
    pub fn parity(&self) -> bool {
        self.parity_alice ^ self.parity_bob
    }
}

/// Label transformation of a bi-CNOT with `control` the control pair
/// and `target` the target pair. Tags are unchanged.
pub fn bicnot(control: PairState, target: PairState) -> (PairState, PairState) {
    let control_out = PairState { a: control.a, b: control.b ^ target.b, tag: control.tag };
    let target_out = PairState { a: target.a ^ control.a, b: target.b, tag: target.tag };
    (control_out, target_out)
}

fn validate_round(e: &Ensemble, subset: &BitString, dest: usize) -> Result<(), RoundError> {
    if subset.len() != e.len() {
        return Err(RoundError::LengthMismatch { mask: subset.len(), ensemble: e.len() });
    }
    for i in subset.iter_ones() {
        if !e.is_live(i) {
            return Err(RoundError::DeadIndex(i));
        }
    }
    let size = subset.weight();
    if size < 2 {
        return Err(RoundError::SubsetTooSmall(size));
    }
    if !subset.get(dest) {
        return Err(RoundError::BadDestination(dest));
    }
    Ok(())
}

/// Z-basis parity round with a caller-supplied Alice outcome.
///
/// Applies a bi-CNOT from every pair in `subset ∖ {dest}` onto `dest`,
/// then measures and discards `dest`. Survivors in the subset keep
/// their bit indicators and have their phase indicators XORed with the
/// destination's pre-round phase bit (the backward action).
pub fn z_parity_round_with_outcome(
    e: &Ensemble,
    subset: &BitString,
    dest: usize,
    parity_alice: bool,
) -> Result<(ParityRound, Ensemble), RoundError> {
    validate_round(e, subset, dest)?;
    let mut out = e.clone();
    for i in subset.iter_ones() {
        if i == dest {
            continue;
        }
        let (c, t) = bicnot(*out.pair(i), *out.pair(dest));
        *out.pair_mut(i) = c;
        *out.pair_mut(dest) = t;
    }
    let parity = out.pair(dest).a;
    out.discard(dest);
    let round = ParityRound {
        basis: RoundBasis::Z,
        subset: subset.clone(),
        dest,
        parity_alice,
        parity_bob: parity_alice ^ parity,
    };
    Ok((round, out))
}

/// Z-basis parity round; Alice's raw measurement outcome is drawn from
/// `rng` (individually uniform, only the XOR carries information).
pub fn z_parity_round<R: Rng>(
    e: &Ensemble,
    subset: &BitString,
    dest: usize,
    rng: &mut R,
) -> Result<(ParityRound, Ensemble), RoundError> {
    z_parity_round_with_outcome(e, subset, dest, rng.random())
}

/// X-basis parity round with a caller-supplied Alice outcome: the dual
/// of [`z_parity_round_with_outcome`] under bit ↔ phase exchange.
///
/// Reveals `r·s_p`; survivors in the subset have their bit indicators
/// XORed with the destination's pre-round bit indicator. Equivalent to
/// Z-basis bi-CNOTs with control and target pairs reversed.
pub fn x_parity_round_with_outcome(
    e: &Ensemble,
    subset: &BitString,
    dest: usize,
    parity_alice: bool,
) -> Result<(ParityRound, Ensemble), RoundError> {
    validate_round(e, subset, dest)?;
    let mut out = e.clone();
    for i in subset.iter_ones() {
        if i == dest {
            continue;
        }
        // reversed roles: dest is the control in the Z picture
        let (c, t) = bicnot(*out.pair(dest), *out.pair(i));
        *out.pair_mut(dest) = c;
        *out.pair_mut(i) = t;
    }
    let parity = out.pair(dest).b;
    out.discard(dest);
    let round = ParityRound {
        basis: RoundBasis::X,
        subset: subset.clone(),
        dest,
        parity_alice,
        parity_bob: parity_alice ^ parity,
    };
    Ok((round, out))
}

pub fn x_parity_round<R: Rng>(
    e: &Ensemble,
    subset: &BitString,
    dest: usize,
    rng: &mut R,
) -> Result<(ParityRound, Ensemble), RoundError> {
    x_parity_round_with_outcome(e, subset, dest, rng.random())
}

/// Draw a random round: a uniform subset of the live pairs (each
/// included with probability 1/2, resampled until it has at least two
/// members) and a uniform destination inside it.
pub fn draw_round<R: Rng>(len: usize, live: &[usize], rng: &mut R) -> (BitString, usize) {
    assert!(live.len() >= 2, "need at least two live pairs for a round");
    loop {
        let chosen: Vec<usize> = live.iter().copied().filter(|_| rng.random::<bool>()).collect();
        if chosen.len() < 2 {
            continue;
        }
        let dest = chosen[rng.random_range(0..chosen.len())];
        let mut mask = BitString::zeros(len);
        for &i in &chosen {
            mask.set(i, true);
        }
        return (mask, dest);
    }
}

// ---------------------------------------------------------------------------
// Candidate sets
// ---------------------------------------------------------------------------

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum CandidateBasis {
    Bit,
    Phase,
}

/// Destination-pair knowledge available to the candidate update.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum DestKind {
    Untagged,
    /// Tagged destination; `conjugate` is its conjugate-basis value when
    /// disclosed, `None` when unknown (each candidate then branches over
    /// both values, at most doubling the set).
    Tagged { conjugate: Option<bool> },
}

/// The set of error strings still consistent with everything announced,
/// tracked either explicitly (small ensembles) or as an analytic
/// log2-cardinality bound.
#[derive(Debug, Clone)]
pub struct CandidateSet {
    pub basis: CandidateBasis,
    /// Original indices covered by the member strings, ascending.
    live: Vec<usize>,
    members: Option<BTreeSet<BitString>>,
    /// `log2 |members|` when enumerated, an analytic bound otherwise.
    pub log2_count: f64,
}

impl CandidateSet {
    /// All strings of Hamming weight ≤ `radius` over `live` positions.
    /// Only sensible for small sets (the count is the full ball volume).
    pub fn hamming_ball(basis: CandidateBasis, live: Vec<usize>, radius: usize) -> Self {
        let n = live.len();
        let mut members = BTreeSet::new();
        let mut stack = vec![(BitString::zeros(n), 0usize, 0usize)];
        while let Some((s, start, weight)) = stack.pop() {
            members.insert(s.clone());
            if weight == radius {
                continue;
            }
            for i in start..n {
                let mut next = s.clone();
                next.set(i, true);
                stack.push((next, i + 1, weight + 1));
            }
        }
        let log2_count = (members.len() as f64).log2();
        Self { basis, live, members: Some(members), log2_count }
    }

    pub fn singleton(basis: CandidateBasis, live: Vec<usize>, truth: BitString) -> Self {
        assert_eq!(truth.len(), live.len());
        let members = BTreeSet::from([truth]);
        Self { basis, live, members: Some(members), log2_count: 0.0 }
    }

    /// Analytic-only tracking, seeded with a log2 count bound.
    pub fn analytic(basis: CandidateBasis, live: Vec<usize>, log2_count: f64) -> Self {
        Self { basis, live, members: None, log2_count }
    }

    pub fn live(&self) -> &[usize] {
        &self.live
    }

    pub fn members(&self) -> Option<&BTreeSet<BitString>> {
        self.members.as_ref()
    }

    pub fn cardinality(&self) -> Option<usize> {
        self.members.as_ref().map(|m| m.len())
    }

    pub fn contains(&self, s: &BitString) -> Option<bool> {
        self.members.as_ref().map(|m| m.contains(s))
    }

    fn position_of(&self, index: usize) -> usize {
        self.live.binary_search(&index).expect("round index not tracked by candidate set")
    }

    /// Conjugate-basis update: apply a round's deterministic backward
    /// action to every candidate and project out the destination
    /// coordinate. Phase candidates are updated by Z rounds and bit
    /// candidates by X rounds; the round reveals nothing about the
    /// conjugate string, so with an untagged destination the cardinality
    /// never grows (deduplication can shrink it). With a tagged
    /// destination of unknown conjugate value every candidate branches,
    /// at most doubling the set.
    pub fn update(&self, round: &ParityRound, dest: DestKind) -> CandidateSet {
        match (self.basis, round.basis) {
            (CandidateBasis::Phase, RoundBasis::Z) | (CandidateBasis::Bit, RoundBasis::X) => {}
            _ => panic!("conjugate update requires opposite bases"),
        }
        let dest_pos = self.position_of(round.dest);
        let subset_positions: Vec<usize> = round
            .subset
            .iter_ones()
            .filter(|&i| i != round.dest)
            .map(|i| self.position_of(i))
            .collect();
        let keep: Vec<usize> =
            (0..self.live.len()).filter(|&p| p != dest_pos).collect();
        let next_live: Vec<usize> =
            self.live.iter().copied().filter(|&i| i != round.dest).collect();

        let members = self.members.as_ref().map(|members| {
            let mut out = BTreeSet::new();
            for m in members {
                let branch_values: &[bool] = match dest {
                    DestKind::Untagged => {
                        if m.get(dest_pos) {
                            &[true]
                        } else {
                            &[false]
                        }
                    }
                    DestKind::Tagged { conjugate: Some(v) } => {
                        if v {
                            &[true]
                        } else {
                            &[false]
                        }
                    }
                    DestKind::Tagged { conjugate: None } => &[false, true],
                };
                for &flip in branch_values {
                    let mut next = m.clone();
                    if flip {
                        for &p in &subset_positions {
                            next.flip(p);
                        }
                    }
                    out.insert(next.project(&keep));
                }
            }
            out
        });
        let log2_count = match &members {
            Some(m) => (m.len() as f64).log2(),
            None => match dest {
                DestKind::Tagged { conjugate: None } => self.log2_count + 1.0,
                _ => self.log2_count,
            },
        };
        CandidateSet { basis: self.basis, live: next_live, members, log2_count }
    }

    /// Same-basis update: keep only candidates whose subset parity
    /// matches the announcement, then project out the destination
    /// coordinate. This is how X rounds whittle down the phase
    /// candidates (and Z rounds the bit candidates).
    pub fn constrain(&self, round: &ParityRound) -> CandidateSet {
        match (self.basis, round.basis) {
            (CandidateBasis::Phase, RoundBasis::X) | (CandidateBasis::Bit, RoundBasis::Z) => {}
            _ => panic!("parity constraint requires matching bases"),
        }
        let dest_pos = self.position_of(round.dest);
        let subset_positions: Vec<usize> =
            round.subset.iter_ones().map(|i| self.position_of(i)).collect();
        let keep: Vec<usize> =
            (0..self.live.len()).filter(|&p| p != dest_pos).collect();
        let next_live: Vec<usize> =
            self.live.iter().copied().filter(|&i| i != round.dest).collect();
        let announced = round.parity();

        let members = self.members.as_ref().map(|members| {
            members
                .iter()
                .filter(|m| {
                    subset_positions.iter().fold(false, |acc, &p| acc ^ m.get(p)) == announced
                })
                .map(|m| m.project(&keep))
                .collect::<BTreeSet<_>>()
        });
        let log2_count = match &members {
            Some(m) => (m.len() as f64).log2(),
            // one announced parity halves the consistent set
            None => (self.log2_count - 1.0).max(0.0),
        };
        CandidateSet { basis: self.basis, live: next_live, members, log2_count }
    }
}
