//! Privacy amplification in the measured (classical) picture: iterated
//! parity compression of the sifted key, the round schedules for plain
//! and tagged sources, and the lineage bookkeeping that makes the
//! "separate amplification of the untagged bits" claim testable as a
//! GF(2) rank condition.
//!
//! Phase errors are never corrected; compression plus the phase
//! candidate-set accounting in [`crate::hashing`] carry the security
//! argument.

use rand::Rng;
use thiserror::Error;

use crate::gf2::{self, BitString};
use crate::hashing::draw_round;
use crate::rates::{binary_entropy, RateError};

#[derive(Debug, Error)]
pub enum PaError {
    #[error("index {0} is dead or out of range")]
    DeadIndex(usize),
    #[error("destination {0} not in subset")]
    DestNotInSubset(usize),
    #[error("subset has {0} live members; need at least 2")]
    SubsetTooSmall(usize),
    #[error("schedule of {rounds} rounds exhausts a {bits}-bit key")]
    KeyExhausted { rounds: usize, bits: usize },
    #[error(transparent)]
    Rate(#[from] RateError),
}

/// A key under compression, kept in the stable index space of the
/// session so announced subset masks apply without re-indexing.
///
/// `lineage[i]` records bit `i` as a GF(2) combination of the original
/// bits: `bits[i] = lineage[i] · original_bits` holds at every stage.
/// `origin_tags` marks positions whose original pair was tagged; the
/// flags never move — mixing shows up in the lineage rows instead.
#[derive(Debug, Clone, PartialEq)]
pub struct KeyString {
    pub bits: BitString,
    pub origin_tags: BitString,
    pub alive: BitString,
    pub lineage: Vec<BitString>,
}

impl KeyString {
    /// Fresh key over `bits`, all positions alive, identity lineage.
    pub fn new(bits: BitString, origin_tags: BitString) -> Self {
        let n = bits.len();
        let alive = BitString::from_bits(std::iter::repeat(true).take(n));
        Self::from_parts(bits, origin_tags, alive)
    }

    /// Fresh key where only the positions in `alive` participate.
    pub fn from_parts(bits: BitString, origin_tags: BitString, alive: BitString) -> Self {
        let n = bits.len();
        assert_eq!(origin_tags.len(), n);
        assert_eq!(alive.len(), n);
        let lineage = (0..n).map(|i| BitString::unit(n, i)).collect();
        Self { bits, origin_tags, alive, lineage }
    }

    pub fn live_indices(&self) -> Vec<usize> {
        self.alive.iter_ones().collect()
    }

    pub fn live_count(&self) -> usize {
        self.alive.weight()
    }

    /// Final key bits, compacted over live positions in index order.
    pub fn final_bits(&self) -> BitString {
        self.bits.project(&self.live_indices())
    }

    /// Exact GF(2) identity `bits = lineage · original` on live positions.
    pub fn lineage_consistent(&self, original_bits: &BitString) -> bool {
        self.live_indices()
            .iter()
            .all(|&i| self.bits.get(i) == original_bits.dot(&self.lineage[i]))
    }
}

/// One compression round: every live bit in `subset` other than `d` is
/// replaced by its parity with bit `d`, and bit `d` is discarded.
pub fn pa_round_bits(k: &KeyString, subset: &BitString, d: usize) -> Result<KeyString, PaError> {
    let mut next = k.clone();
    pa_round_bits_in_place(&mut next, subset, d)?;
    Ok(next)
}

/// [`pa_round_bits`] without the copy; the key is left untouched on error.
pub fn pa_round_bits_in_place(
    k: &mut KeyString,
    subset: &BitString,
    d: usize,
) -> Result<(), PaError> {
    if d >= k.bits.len() || !k.alive.get(d) {
        return Err(PaError::DeadIndex(d));
    }
    if !subset.get(d) {
        return Err(PaError::DestNotInSubset(d));
    }
    let members: Vec<usize> = subset.iter_ones().collect();
    if let Some(&dead) = members.iter().find(|&&i| !k.alive.get(i)) {
        return Err(PaError::DeadIndex(dead));
    }
    if members.len() < 2 {
        return Err(PaError::SubsetTooSmall(members.len()));
    }

    let v_d = k.bits.get(d);
    let row_d = std::mem::replace(&mut k.lineage[d], BitString::zeros(0));
    for &i in members.iter().filter(|&&i| i != d) {
        if v_d {
            k.bits.flip(i);
        }
        k.lineage[i].xor_assign(&row_d);
    }
    k.lineage[d] = row_d;
    k.alive.set(d, false);
    Ok(())
}

/// Round count for plain-source privacy amplification:
/// `⌈n·H(δ_p)⌉ + slack`.
pub fn pa_rounds_untagged(n: usize, delta_p: f64, slack: usize) -> Result<usize, PaError> {
    if delta_p >= 0.5 {
        return Err(RateError::RateDomain(delta_p).into());
    }
    Ok((n as f64 * binary_entropy(delta_p)?).ceil() as usize + slack)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct PaSchedule {
    /// Rounds in phase 1 (the `l` budget, plus any slack).
    pub rounds_phase1: usize,
    /// Extra rounds in phase 2 for a tagged source; 0 when Δ = 0.
    pub rounds_phase2: usize,
    /// Plain-source reference count `⌈n·H(δ_p)⌉`.
    pub n_p: usize,
}

/// Two-phase schedule for a tagged source: phase 1 runs
/// `⌈(1+Δ)·n·H(δ_p/(1−Δ))⌉ + slack` rounds, leaving
/// `q = n·[1 − H(δ_b) − (1+Δ)·H(δ_p/(1−Δ))]` bits, and phase 2 adds
/// `⌈Δ·q⌉` more.
pub fn pa_schedule_tagged(
    n: usize,
    delta_p: f64,
    delta: f64,
    delta_b: f64,
    slack: usize,
) -> Result<PaSchedule, PaError> {
    let inputs = crate::rates::RateInputs::new(delta_b, delta_p, delta, n)?;
    let hp_inflated = binary_entropy(inputs.inflated_phase_rate()?)?;
    let nf = n as f64;
    let rounds_phase1 = ((1.0 + delta) * nf * hp_inflated).ceil() as usize + slack;
    let q = nf * (1.0 - binary_entropy(delta_b)? - (1.0 + delta) * hp_inflated);
    let rounds_phase2 = (delta * q.max(0.0)).ceil() as usize;
    let n_p = (nf * binary_entropy(delta_p)?).ceil() as usize;
    Ok(PaSchedule { rounds_phase1, rounds_phase2, n_p })
}

/// Untagged-discard target for strict phase-1 accounting: the number of
/// discarded bits that must originate from untagged pairs,
/// `⌈(1−Δ²)·n·H(δ_p/(1−Δ))⌉`. The phase-1 round count divides this by
/// `(1−Δ)` only in expectation; strict mode extends phase 1 until the
/// target is actually met.
pub fn strict_untagged_target(n: usize, delta_p: f64, delta: f64) -> Result<usize, PaError> {
    let inputs = crate::rates::RateInputs::new(0.0, delta_p, delta, n)?;
    let hp_inflated = binary_entropy(inputs.inflated_phase_rate()?)?;
    Ok(((1.0 - delta * delta) * n as f64 * hp_inflated).ceil() as usize)
}

pub struct PaOutcome {
    pub key: KeyString,
    /// Executed rounds as (subset mask, destination), in order; public
    /// randomness both parties replay identically.
    pub rounds: Vec<(BitString, usize)>,
    /// How many discarded destinations originated from untagged pairs.
    pub untagged_discards: usize,
    /// Rounds actually run in phase 1 (exceeds the schedule in strict mode).
    pub phase1_rounds_used: usize,
}

/// Execute the schedule with subsets and destinations drawn from `rng`
/// (a seeded stream shared by both parties, standing in for the
/// authenticated channel).
pub fn run_pa<R: Rng>(
    k: &KeyString,
    schedule: &PaSchedule,
    rng: &mut R,
) -> Result<PaOutcome, PaError> {
    run_pa_with_strict(k, schedule, None, rng)
}

/// As [`run_pa`], but phase 1 continues past its scheduled count until
/// at least `untagged_target` discarded bits came from untagged pairs.
pub fn run_pa_strict<R: Rng>(
    k: &KeyString,
    schedule: &PaSchedule,
    untagged_target: usize,
    rng: &mut R,
) -> Result<PaOutcome, PaError> {
    run_pa_with_strict(k, schedule, Some(untagged_target), rng)
}

fn run_pa_with_strict<R: Rng>(
    k: &KeyString,
    schedule: &PaSchedule,
    untagged_target: Option<usize>,
    rng: &mut R,
) -> Result<PaOutcome, PaError> {
    let total = schedule.rounds_phase1 + schedule.rounds_phase2;
    if total >= k.live_count() {
        return Err(PaError::KeyExhausted { rounds: total, bits: k.live_count() });
    }

    let mut key = k.clone();
    let mut rounds = Vec::new();
    let mut untagged_discards = 0usize;

    let one_round = |key: &mut KeyString,
                         rounds: &mut Vec<(BitString, usize)>,
                         untagged_discards: &mut usize,
                         rng: &mut R|
     -> Result<(), PaError> {
        let live = key.live_indices();
        let (subset, d) = draw_round(key.bits.len(), &live, rng);
        if !key.origin_tags.get(d) {
            *untagged_discards += 1;
        }
        pa_round_bits_in_place(key, &subset, d)?;
        rounds.push((subset, d));
        Ok(())
    };

    let mut phase1_rounds_used = 0usize;
    while phase1_rounds_used < schedule.rounds_phase1
        || untagged_target.is_some_and(|t| untagged_discards < t)
    {
        if key.live_count() <= schedule.rounds_phase2 + 1 {
            return Err(PaError::KeyExhausted {
                rounds: phase1_rounds_used + schedule.rounds_phase2 + 1,
                bits: k.live_count(),
            });
        }
        one_round(&mut key, &mut rounds, &mut untagged_discards, rng)?;
        phase1_rounds_used += 1;
    }
    for _ in 0..schedule.rounds_phase2 {
        one_round(&mut key, &mut rounds, &mut untagged_discards, rng)?;
    }

    Ok(PaOutcome { key, rounds, untagged_discards, phase1_rounds_used })
}

/// True iff the lineage rows of the live key bits, restricted to the
/// untagged original columns, are linearly independent over GF(2) — the
/// checkable form of "the untagged bits received a separate privacy
/// amplification of their own".
pub fn lineage_rank_check(k: &KeyString, untagged_columns: &[usize]) -> bool {
    let rows: Vec<BitString> = k
        .live_indices()
        .iter()
        .map(|&i| k.lineage[i].project(untagged_columns))
        .collect();
    gf2::rank(&rows) == rows.len()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::hashing::{x_parity_round_with_outcome, CandidateBasis, CandidateSet};
    use crate::pairstate::{sample_ensemble, ChannelParams, Ensemble, PairState};
    use rand::SeedableRng;
    use rand_chacha::ChaCha12Rng;

    fn rng(seed: u64) -> ChaCha12Rng {
        ChaCha12Rng::seed_from_u64(seed)
    }

    fn key(bits: &[bool]) -> KeyString {
        let n = bits.len();
        KeyString::new(BitString::from_bits(bits.iter().copied()), BitString::zeros(n))
    }

    #[test]
    fn round_example() {
        // bits = 101, subset {0, 2}, d = 2: v0 -> 1 xor 1 = 0, slot 2 dies
        let k = key(&[true, false, true]);
        let out =
            pa_round_bits(&k, &BitString::from_bits([true, false, true]), 2).unwrap();
        assert_eq!(out.final_bits(), BitString::from_bits([false, false]));
        assert_eq!(out.live_indices(), vec![0, 1]);
    }

    #[test]
    fn zero_key_stays_zero() {
        let k = key(&[false; 6]);
        let out =
            pa_round_bits(&k, &BitString::from_bits([true, true, true, false, false, false]), 1)
                .unwrap();
        assert!(out.final_bits().is_zero());
    }

    #[test]
    fn full_subset_xors_everyone_with_last() {
        let k = key(&[true, false, true, true]);
        let subset = BitString::from_bits([true; 4]);
        let out = pa_round_bits(&k, &subset, 3).unwrap();
        // every survivor picked up v3 = 1
        assert_eq!(out.final_bits(), BitString::from_bits([false, true, false]));
    }

    #[test]
    fn round_preconditions() {
        let k = key(&[true, false, true]);
        let s = BitString::from_bits([true, false, true]);
        assert!(matches!(pa_round_bits(&k, &s, 1), Err(PaError::DestNotInSubset(1))));
        assert!(matches!(
            pa_round_bits(&k, &BitString::from_bits([false, false, true]), 2),
            Err(PaError::SubsetTooSmall(1))
        ));
        let mut dead = k.clone();
        dead.alive.set(0, false);
        assert!(matches!(pa_round_bits(&dead, &s, 2), Err(PaError::DeadIndex(0))));
    }

    #[test]
    fn lineage_tracks_bits_exactly() {
        let mut r = rng(7);
        for _ in 0..50 {
            let n = 10;
            let original = BitString::from_bits((0..n).map(|_| r.random::<bool>()));
            let mut k = KeyString::new(original.clone(), BitString::zeros(n));
            for _ in 0..6 {
                let live = k.live_indices();
                let (subset, d) = draw_round(n, &live, &mut r);
                k = pa_round_bits(&k, &subset, d).unwrap();
                assert!(k.lineage_consistent(&original));
            }
        }
    }

    #[test]
    fn schedule_counts() {
        assert_eq!(pa_rounds_untagged(100, 0.0, 0).unwrap(), 0);
        assert_eq!(pa_rounds_untagged(100, 0.499999, 0).unwrap(), 100);
        assert_eq!(pa_rounds_untagged(1000, 0.05, 0).unwrap(), 287);
        assert!(pa_rounds_untagged(100, 0.5, 0).is_err());

        let s = pa_schedule_tagged(1000, 0.05, 0.1, 0.05, 0).unwrap();
        assert_eq!(s.rounds_phase1, 341);
        assert_eq!(s.rounds_phase2, 38); // ceil(0.1 * 373.105)
        assert_eq!(s.n_p, 287);

        // delta = 0 reduces to the untagged schedule
        let s0 = pa_schedule_tagged(1000, 0.05, 0.0, 0.05, 3).unwrap();
        assert_eq!(s0.rounds_phase1, pa_rounds_untagged(1000, 0.05, 3).unwrap());
        assert_eq!(s0.rounds_phase2, 0);

        assert!(pa_schedule_tagged(1000, 0.3, 0.5, 0.05, 0).is_err());
    }

    #[test]
    fn empty_schedule_is_identity() {
        let k = key(&[true, false, true, true]);
        let s = PaSchedule { rounds_phase1: 0, rounds_phase2: 0, n_p: 0 };
        let out = run_pa(&k, &s, &mut rng(1)).unwrap();
        assert_eq!(out.key, k);
        assert!(out.rounds.is_empty());
    }

    #[test]
    fn run_length_and_exhaustion() {
        let mut r = rng(3);
        let n = 40;
        let bits = BitString::from_bits((0..n).map(|_| r.random::<bool>()));
        let k = KeyString::new(bits.clone(), BitString::zeros(n));
        let s = PaSchedule { rounds_phase1: 10, rounds_phase2: 5, n_p: 10 };
        let out = run_pa(&k, &s, &mut r).unwrap();
        assert_eq!(out.key.live_count(), n - 15);
        assert!(out.key.lineage_consistent(&bits));

        let s = PaSchedule { rounds_phase1: 40, rounds_phase2: 0, n_p: 40 };
        assert!(matches!(run_pa(&k, &s, &mut r), Err(PaError::KeyExhausted { .. })));
    }

    #[test]
    fn strict_mode_meets_untagged_target() {
        let mut r = rng(9);
        let n = 60;
        let bits = BitString::from_bits((0..n).map(|_| r.random::<bool>()));
        // half the positions tagged
        let tags = BitString::from_bits((0..n).map(|i| i % 2 == 0));
        let k = KeyString::new(bits, tags);
        let s = PaSchedule { rounds_phase1: 8, rounds_phase2: 4, n_p: 8 };
        for seed in 0..20 {
            let out = run_pa_strict(&k, &s, 10, &mut rng(seed)).unwrap();
            assert!(out.untagged_discards >= 10);
            assert!(out.phase1_rounds_used >= s.rounds_phase1);
            assert_eq!(out.rounds.len(), out.phase1_rounds_used + s.rounds_phase2);
        }
        let _ = r;
    }

    #[test]
    fn rank_check_examples() {
        let k = key(&[true, false, true]);
        assert!(lineage_rank_check(&k, &[0, 1, 2]));

        // force two identical final bits: lineage rows equal
        let mut dup = k.clone();
        dup.lineage[1] = dup.lineage[0].clone();
        assert!(!lineage_rank_check(&dup, &[0, 1, 2]));

        // restricting to no columns kills independence unless one row
        assert!(!lineage_rank_check(&k, &[]));
    }

    #[test]
    fn pictures_agree() {
        // compressing Alice's and Bob's measured bits with pa_round_bits
        // tracks the X-basis pair round exactly: the survivors' bit
        // indicators equal the XOR of the two compressed keys
        let mut r = rng(17);
        let params = ChannelParams::new(0.2, 0.2, 0.0).unwrap();
        for _ in 0..40 {
            let n = 9;
            let mut e = sample_ensemble(&params, n, &mut r).unwrap();
            let alice = BitString::from_bits((0..n).map(|_| r.random::<bool>()));
            let mut bob = alice.clone();
            bob.xor_assign(&e.bit_string_full());
            let mut ka = KeyString::new(alice, BitString::zeros(n));
            let mut kb = KeyString::new(bob, BitString::zeros(n));

            for _ in 0..4 {
                let live = e.live_indices();
                let (subset, d) = draw_round(n, &live, &mut r);
                let (_, next) =
                    x_parity_round_with_outcome(&e, &subset, d, r.random()).unwrap();
                e = next;
                ka = pa_round_bits(&ka, &subset, d).unwrap();
                kb = pa_round_bits(&kb, &subset, d).unwrap();
            }
            let mut diff = ka.final_bits();
            diff.xor_assign(&kb.final_bits());
            let (s_b, _) = e.strings();
            assert_eq!(diff, s_b);
        }
    }

    #[test]
    fn phase_candidates_collapse_to_singleton() {
        // after ceil(log2 |members|) + s X rounds the announced parities
        // pin the phase string with probability >= 1 - 2^(1-s)
        let mut r = rng(23);
        let n = 12;
        let s = 5;
        let mut singletons = 0;
        let trials = 100;
        for _ in 0..trials {
            let mut pairs = vec![PairState::new(false, false); n];
            pairs[r.random_range(0..n)].b = true;
            let mut e = Ensemble::from_pairs(pairs);
            let mut cand =
                CandidateSet::hamming_ball(CandidateBasis::Phase, e.live_indices(), 1);
            let rounds = (cand.cardinality().unwrap() as f64).log2().ceil() as usize + s;
            let mut ok = true;
            for _ in 0..rounds {
                if e.live_count() < 2 {
                    ok = false;
                    break;
                }
                let live = e.live_indices();
                let (subset, d) = draw_round(n, &live, &mut r);
                let (round, next) =
                    x_parity_round_with_outcome(&e, &subset, d, r.random()).unwrap();
                e = next;
                cand = cand.constrain(&round);
            }
            if ok && cand.cardinality() == Some(1) {
                singletons += 1;
            }
        }
        let bound = 1.0 - 2f64.powi(1 - s as i32);
        // generous statistical floor below the guarantee
        assert!(
            singletons as f64 >= trials as f64 * (bound - 0.08),
            "singletons {singletons}/{trials}"
        );
    }
}
