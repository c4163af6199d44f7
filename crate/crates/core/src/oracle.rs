//! Brute-force verifiers: a dense statevector simulator (≤ 12 qubits)
//! and exhaustive enumerations that check the label algebra used
//! everywhere else against actual quantum mechanics.
//!
//! Wire layout: pair `i` owns Alice's qubit `2i` and Bob's qubit
//! `2i + 1`; basis index bit `q` is qubit `q`'s value.

use num_complex::Complex64;
use rand::Rng;
use thiserror::Error;

use crate::hashing::{x_parity_round_with_outcome, z_parity_round_with_outcome, RoundBasis};
use crate::gf2::BitString;
use crate::pairstate::{Ensemble, PairState};

pub const MAX_QUBITS: usize = 12;
const NORM_TOL: f64 = 1e-12;

#[derive(Debug, Error)]
pub enum OracleError {
    #[error("{0} qubits exceeds the {MAX_QUBITS}-qubit oracle cap")]
    TooManyQubits(usize),
    #[error("invalid channel: {0}")]
    BadChannel(String),
    #[error("invalid script: {0}")]
    BadScript(String),
    #[error(transparent)]
    Round(#[from] crate::hashing::RoundError),
}

type Matrix2 = [[Complex64; 2]; 2];

fn c(re: f64, im: f64) -> Complex64 {
    Complex64::new(re, im)
}

pub fn pauli_matrix(p: crate::pairstate::Pauli) -> Matrix2 {
    use crate::pairstate::Pauli::*;
    match p {
        I => [[c(1.0, 0.0), c(0.0, 0.0)], [c(0.0, 0.0), c(1.0, 0.0)]],
        X => [[c(0.0, 0.0), c(1.0, 0.0)], [c(1.0, 0.0), c(0.0, 0.0)]],
        Y => [[c(0.0, 0.0), c(0.0, -1.0)], [c(0.0, 1.0), c(0.0, 0.0)]],
        Z => [[c(1.0, 0.0), c(0.0, 0.0)], [c(0.0, 0.0), c(-1.0, 0.0)]],
    }
}

fn hadamard() -> Matrix2 {
    let s = std::f64::consts::FRAC_1_SQRT_2;
    [[c(s, 0.0), c(s, 0.0)], [c(s, 0.0), c(-s, 0.0)]]
}

/// Dense state of `n_qubits` qubits, unit norm within 1e-12.
#[derive(Debug, Clone)]
pub struct StateVector {
    pub amplitudes: Vec<Complex64>,
    pub n_qubits: usize,
}

impl StateVector {
    /// |0...0⟩ on `n_qubits` qubits.
    pub fn zero_state(n_qubits: usize) -> Result<Self, OracleError> {
        if n_qubits > MAX_QUBITS {
            return Err(OracleError::TooManyQubits(n_qubits));
        }
        let mut amplitudes = vec![c(0.0, 0.0); 1 << n_qubits];
        amplitudes[0] = c(1.0, 0.0);
        Ok(Self { amplitudes, n_qubits })
    }

    pub fn norm(&self) -> f64 {
        self.amplitudes.iter().map(|a| a.norm_sqr()).sum::<f64>().sqrt()
    }

    pub fn assert_normalized(&self) {
        assert!((self.norm() - 1.0).abs() < NORM_TOL, "norm drifted: {}", self.norm());
    }

    pub fn apply_single(&mut self, q: usize, m: &Matrix2) {
        let bit = 1usize << q;
        for i in 0..self.amplitudes.len() {
            if i & bit == 0 {
                let a0 = self.amplitudes[i];
                let a1 = self.amplitudes[i | bit];
                self.amplitudes[i] = m[0][0] * a0 + m[0][1] * a1;
                self.amplitudes[i | bit] = m[1][0] * a0 + m[1][1] * a1;
            }
        }
    }

    pub fn apply_cnot(&mut self, control: usize, target: usize) {
        let cb = 1usize << control;
        let tb = 1usize << target;
        for i in 0..self.amplitudes.len() {
            if i & cb != 0 && i & tb == 0 {
                self.amplitudes.swap(i, i | tb);
            }
        }
    }

    /// Measure qubit `q` in the computational basis, collapsing the state.
    pub fn measure_qubit<R: Rng>(&mut self, q: usize, rng: &mut R) -> bool {
        let bit = 1usize << q;
        let p1: f64 = self
            .amplitudes
            .iter()
            .enumerate()
            .filter(|(i, _)| i & bit != 0)
            .map(|(_, a)| a.norm_sqr())
            .sum();
        let outcome = rng.random::<f64>() < p1;
        let keep = if outcome { bit } else { 0 };
        let p = if outcome { p1 } else { 1.0 - p1 };
        let scale = 1.0 / p.sqrt();
        for (i, a) in self.amplitudes.iter_mut().enumerate() {
            if i & bit == keep {
                *a *= scale;
            } else {
                *a = c(0.0, 0.0);
            }
        }
        outcome
    }

    /// The basis index carrying (almost) all the weight, if the state
    /// is a computational basis state up to global phase.
    pub fn basis_index(&self) -> Option<usize> {
        let (idx, amp) = self
            .amplitudes
            .iter()
            .enumerate()
            .max_by(|a, b| a.1.norm_sqr().total_cmp(&b.1.norm_sqr()))?;
        ((amp.norm_sqr() - 1.0).abs() < 1e-9).then_some(idx)
    }
}

/// Prepare pair `i` of `sv` in the Bell state labeled `(a, b)`:
/// H on Alice, CNOT Alice→Bob, then Bob applies X^a and Z^b.
pub fn prepare_bell(sv: &mut StateVector, pair: usize, a: bool, b: bool) {
    let alice = 2 * pair;
    let bob = 2 * pair + 1;
    sv.apply_single(alice, &hadamard());
    sv.apply_cnot(alice, bob);
    if a {
        sv.apply_single(bob, &pauli_matrix(crate::pairstate::Pauli::X));
    }
    if b {
        sv.apply_single(bob, &pauli_matrix(crate::pairstate::Pauli::Z));
    }
}

/// Disentangle pair `i` (CNOT Alice→Bob, H on Alice) so that, for an
/// exact Bell state, Bob's wire reads the bit label `a` and Alice's
/// wire reads the phase label `b`.
pub fn disentangle_pair(sv: &mut StateVector, pair: usize) {
    let alice = 2 * pair;
    let bob = 2 * pair + 1;
    sv.apply_cnot(alice, bob);
    sv.apply_single(alice, &hadamard());
}

/// The bilateral CNOT on two pairs: both parties CNOT their control
/// wire into their target wire.
pub fn apply_bicnot(sv: &mut StateVector, control_pair: usize, target_pair: usize) {
    sv.apply_cnot(2 * control_pair, 2 * target_pair);
    sv.apply_cnot(2 * control_pair + 1, 2 * target_pair + 1);
}

/// All 16 label pairs mapped through the 4-qubit statevector: entries
/// are ((control in, target in), (control out, target out)).
pub type LabelPair = ((bool, bool), (bool, bool));

pub fn bicnot_truth_table() -> Vec<(LabelPair, LabelPair)> {
    let mut table = Vec::with_capacity(16);
    for case in 0..16u32 {
        let (a, b) = (case & 1 != 0, case & 2 != 0);
        let (ap, bp) = (case & 4 != 0, case & 8 != 0);
        let mut sv = StateVector::zero_state(4).unwrap();
        prepare_bell(&mut sv, 0, a, b);
        prepare_bell(&mut sv, 1, ap, bp);
        apply_bicnot(&mut sv, 0, 1);
        disentangle_pair(&mut sv, 0);
        disentangle_pair(&mut sv, 1);
        sv.assert_normalized();
        let idx = sv.basis_index().expect("Clifford action must yield a basis state");
        let read = |pair: usize| {
            let a_out = idx >> (2 * pair + 1) & 1 == 1; // Bob's wire
            let b_out = idx >> (2 * pair) & 1 == 1; // Alice's wire
            (a_out, b_out)
        };
        table.push((((a, b), (ap, bp)), (read(0), read(1))));
    }
    table
}

/// A probabilistic mixture of single-qubit unitaries.
pub struct StochasticChannel {
    ops: Vec<(f64, Matrix2)>,
}

impl StochasticChannel {
    pub fn new(ops: Vec<(f64, Matrix2)>) -> Result<Self, OracleError> {
        let total: f64 = ops.iter().map(|(w, _)| w).sum();
        if ops.iter().any(|(w, _)| *w < 0.0) {
            return Err(OracleError::BadChannel("negative weight".into()));
        }
        if (total - 1.0).abs() > 1e-9 {
            return Err(OracleError::BadChannel(format!("weights sum to {total}")));
        }
        for (_, m) in &ops {
            // unitarity: columns orthonormal
            let col = |j: usize| (m[0][j], m[1][j]);
            let (c00, c10) = col(0);
            let (c01, c11) = col(1);
            let n0 = c00.norm_sqr() + c10.norm_sqr();
            let n1 = c01.norm_sqr() + c11.norm_sqr();
            let cross = c00.conj() * c01 + c10.conj() * c11;
            if (n0 - 1.0).abs() > 1e-9 || (n1 - 1.0).abs() > 1e-9 || cross.norm() > 1e-9 {
                return Err(OracleError::BadChannel("non-unitary operation".into()));
            }
        }
        Ok(Self { ops })
    }

    pub fn pauli_mixture(weights: [f64; 4]) -> Result<Self, OracleError> {
        use crate::pairstate::Pauli::*;
        Ok(Self::new(
            [I, X, Y, Z]
                .into_iter()
                .zip(weights)
                .map(|(p, w)| (w, pauli_matrix(p)))
                .collect(),
        )?)
    }

    pub fn sample<R: Rng>(&self, rng: &mut R) -> &Matrix2 {
        let mut u = rng.random::<f64>();
        for (w, m) in &self.ops {
            if u < *w {
                return m;
            }
            u -= w;
        }
        &self.ops.last().expect("channel has at least one op").1
    }
}

/// Empirical X-basis disagreement fraction for a Z-collapsed pair sent
/// through `channel` on Bob's wire. Exactly 1/2 for every channel: no
/// operation on one qubit of a product Z-state can correlate it with
/// the other's X outcome.
pub fn tagged_phase_independence<R: Rng>(
    channel: &StochasticChannel,
    trials: usize,
    rng: &mut R,
) -> f64 {
    let mut disagreements = 0usize;
    for _ in 0..trials {
        let z = rng.random::<bool>();
        let mut sv = StateVector::zero_state(2).unwrap();
        if z {
            // |11⟩
            sv.apply_single(0, &pauli_matrix(crate::pairstate::Pauli::X));
            sv.apply_single(1, &pauli_matrix(crate::pairstate::Pauli::X));
        }
        sv.apply_single(1, channel.sample(rng));
        sv.apply_single(0, &hadamard());
        sv.apply_single(1, &hadamard());
        let x_alice = sv.measure_qubit(0, rng);
        let x_bob = sv.measure_qubit(1, rng);
        if x_alice != x_bob {
            disagreements += 1;
        }
    }
    disagreements as f64 / trials as f64
}

/// One scripted parity round over pair indices.
#[derive(Debug, Clone)]
pub struct ScriptedRound {
    pub basis: RoundBasis,
    pub subset: BitString,
    pub dest: usize,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct CheckReport {
    pub cases: usize,
    pub agreements: usize,
}

/// Run `script` over every one of the 4^n Bell-label assignments, in
/// both the label algebra and the 2n-qubit statevector, asserting equal
/// announced parities and equal survivor labels.
pub fn exhaustive_protocol_check<R: Rng>(
    n: usize,
    script: &[ScriptedRound],
    rng: &mut R,
) -> Result<CheckReport, OracleError> {
    if 2 * n > MAX_QUBITS {
        return Err(OracleError::TooManyQubits(2 * n));
    }
    for round in script {
        if round.subset.len() != n || round.dest >= n {
            return Err(OracleError::BadScript(format!(
                "round indices out of range for n = {n}"
            )));
        }
    }

    let mut agreements = 0usize;
    let cases = 1usize << (2 * n);
    for case in 0..cases {
        let pairs: Vec<PairState> = (0..n)
            .map(|i| PairState::new(case >> (2 * i) & 1 == 1, case >> (2 * i + 1) & 1 == 1))
            .collect();
        let mut e = Ensemble::from_pairs(pairs.clone());
        let mut sv = StateVector::zero_state(2 * n)?;
        for (i, p) in pairs.iter().enumerate() {
            prepare_bell(&mut sv, i, p.a, p.b);
        }

        let mut ok = true;
        for round in script {
            let sources: Vec<usize> =
                round.subset.iter_ones().filter(|&k| k != round.dest).collect();
            // label algebra; the announced raw outcome is irrelevant to labels
            let (pr, next) = match round.basis {
                RoundBasis::Z => {
                    z_parity_round_with_outcome(&e, &round.subset, round.dest, false)?
                }
                RoundBasis::X => {
                    x_parity_round_with_outcome(&e, &round.subset, round.dest, false)?
                }
            };
            e = next;

            // statevector: bi-CNOTs, then measure the destination pair
            let (alice_w, bob_w) = (2 * round.dest, 2 * round.dest + 1);
            match round.basis {
                RoundBasis::Z => {
                    for &k in &sources {
                        apply_bicnot(&mut sv, k, round.dest);
                    }
                }
                RoundBasis::X => {
                    for &k in &sources {
                        apply_bicnot(&mut sv, round.dest, k);
                    }
                    sv.apply_single(alice_w, &hadamard());
                    sv.apply_single(bob_w, &hadamard());
                }
            }
            sv.assert_normalized();
            let m_alice = sv.measure_qubit(alice_w, rng);
            let m_bob = sv.measure_qubit(bob_w, rng);
            if (m_alice != m_bob) != pr.parity() {
                ok = false;
                break;
            }
        }

        if ok {
            // read out survivor labels and compare
            let live = e.live_indices();
            for &i in &live {
                disentangle_pair(&mut sv, i);
            }
            sv.assert_normalized();
            match sv.basis_index() {
                Some(idx) => {
                    for &i in &live {
                        let a_out = idx >> (2 * i + 1) & 1 == 1;
                        let b_out = idx >> (2 * i) & 1 == 1;
                        if (a_out, b_out) != e.pair(i).label() {
                            ok = false;
                        }
                    }
                }
                None => ok = false,
            }
        }
        if ok {
            agreements += 1;
        }
    }
    Ok(CheckReport { cases, agreements })
}
