//! Bit-error correction: choose the round budget, run Z-basis parity
//! rounds, decode the bit-error string from the announced parities, and
//! flip the errors back on Bob's side.
//!
//! Because Z rounds never change a surviving pair's bit indicator and
//! destinations are discarded, every announced parity is a linear
//! function of the *initial* bit string: the executed subset masks form
//! an ordinary GF(2) parity-check matrix. Decoding a random such matrix
//! at the asymptotic budget is exactly the hard problem the protocol's
//! structured-code substitution exists for, so this module offers
//! desk-scale decoders (exhaustive ball search, elimination plus coset
//! search) and a simulation-reference decoder for large runs that reads
//! the error string from the simulated ensemble and verifies it against
//! every announcement.

use std::collections::BTreeSet;

use rand::Rng;
use thiserror::Error;

use crate::gf2::{self, BitString};
use crate::hashing::{z_parity_round_with_outcome, ParityRound};
use crate::pairstate::Ensemble;
use crate::rates::{binary_entropy, RateError};

const ENUMERATION_BUDGET: f64 = 1e6;
const COSET_DIM_LIMIT: usize = 24;

#[derive(Debug, Error)]
pub enum EcError {
    #[error("error rate {0} exceeds 1/2")]
    RateDomain(f64),
    #[error("decoding ambiguous: {0} candidates consistent with all parities")]
    DecodingAmbiguous(usize),
    #[error("no candidate within the decode radius matches the syndrome")]
    OutOfRadius,
    #[error("enumeration budget exceeded: ball holds ~{0:.0} candidates")]
    EnumerationBudget(f64),
    #[error("linear system is rank-deficient/inconsistent")]
    RankDeficient,
    #[error("coset dimension {0} too large for search")]
    CosetTooLarge(usize),
    #[error("matrix has {rows} rows for {parities} parities")]
    MatrixMismatch { rows: usize, parities: usize },
    #[error(transparent)]
    Round(#[from] crate::hashing::RoundError),
    #[error(transparent)]
    Rate(#[from] RateError),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum MatrixKind {
    Random,
    Structured,
}

/// One subset mask per executed round, in execution order, over the
/// stable (full) index space.
#[derive(Debug, Clone, PartialEq)]
pub struct ParityMatrix {
    pub rows: Vec<BitString>,
    pub n_cols: usize,
    pub kind: MatrixKind,
}

impl ParityMatrix {
    pub fn new(rows: Vec<BitString>, n_cols: usize, kind: MatrixKind) -> Self {
        assert!(rows.iter().all(|r| r.len() == n_cols));
        Self { rows, n_cols, kind }
    }

    /// Text format: first line `n_rows n_cols`, then one hexadecimal
    /// mask per row.
    pub fn to_text(&self) -> String {
        let mut out = format!("{} {}\n", self.rows.len(), self.n_cols);
        for row in &self.rows {
            out.push_str(&row.to_hex());
            out.push('\n');
        }
        out
    }

    pub fn from_text(text: &str) -> Option<Self> {
        let mut lines = text.lines();
        let header = lines.next()?;
        let mut parts = header.split_whitespace();
        let n_rows: usize = parts.next()?.parse().ok()?;
        let n_cols: usize = parts.next()?.parse().ok()?;
        let rows: Option<Vec<BitString>> =
            (0..n_rows).map(|_| BitString::from_hex(lines.next()?, n_cols)).collect();
        Some(Self { rows: rows?, n_cols, kind: MatrixKind::Random })
    }
}

/// Number of Z-basis rounds for bit-error correction:
/// `⌈n·H(δ_b)⌉ + slack`.
pub fn ec_round_budget(n: usize, delta_b: f64, slack: usize) -> Result<usize, EcError> {
    if delta_b > 0.5 {
        return Err(EcError::RateDomain(delta_b));
    }
    Ok((n as f64 * binary_entropy(delta_b)?).ceil() as usize + slack)
}

/// Volume of the Hamming ball of the given radius in `n` dimensions.
pub fn ball_volume(n: usize, radius: usize) -> f64 {
    let mut total = 0.0;
    let mut term = 1.0f64;
    for k in 0..=radius.min(n) {
        if k > 0 {
            term *= (n - k + 1) as f64 / k as f64;
        }
        total += term;
        if total > 1e18 {
            break;
        }
    }
    total
}

/// All strings supported on `domain` of weight ≤ `radius` whose
/// syndrome matches `parities`. Decoding succeeds iff the result is a
/// singleton; an empty set means the truth lies outside the radius (or
/// the syndrome is contradictory).
pub fn decode_exhaustive(
    parities: &BitString,
    matrix: &ParityMatrix,
    radius: usize,
    domain: &[usize],
) -> Result<BTreeSet<BitString>, EcError> {
    if matrix.rows.len() != parities.len() {
        return Err(EcError::MatrixMismatch {
            rows: matrix.rows.len(),
            parities: parities.len(),
        });
    }
    let volume = ball_volume(domain.len(), radius);
    if volume > ENUMERATION_BUDGET {
        return Err(EcError::EnumerationBudget(volume));
    }
    // syndrome contribution of each domain column
    let columns: Vec<BitString> = domain
        .iter()
        .map(|&j| BitString::from_bits(matrix.rows.iter().map(|row| row.get(j))))
        .collect();

    let mut found = BTreeSet::new();
    let mut chosen: Vec<usize> = Vec::new();
    search(
        &columns,
        domain,
        matrix.n_cols,
        parities,
        radius,
        0,
        &mut BitString::zeros(parities.len()),
        &mut chosen,
        &mut found,
    );
    Ok(found)
}

#[allow(clippy::too_many_arguments)]
fn search(
    columns: &[BitString],
    domain: &[usize],
    n_cols: usize,
    target: &BitString,
    radius: usize,
    start: usize,
    acc: &mut BitString,
    chosen: &mut Vec<usize>,
    found: &mut BTreeSet<BitString>,
) {
    if acc == target {
        let mut s = BitString::zeros(n_cols);
        for &p in chosen.iter() {
            s.set(domain[p], true);
        }
        found.insert(s);
    }
    if chosen.len() == radius {
        return;
    }
    for p in start..columns.len() {
        acc.xor_assign(&columns[p]);
        chosen.push(p);
        search(columns, domain, n_cols, target, radius, p + 1, acc, chosen, found);
        chosen.pop();
        acc.xor_assign(&columns[p]);
    }
}

/// Minimum-weight solution of the parity system, found by GF(2)
/// elimination followed by a full search of the solution coset. Only
/// viable when the coset dimension (columns minus rank) is small.
pub fn decode_gaussian(
    parities: &BitString,
    matrix: &ParityMatrix,
    domain: &[usize],
) -> Result<BitString, EcError> {
    if matrix.rows.len() != parities.len() {
        return Err(EcError::MatrixMismatch {
            rows: matrix.rows.len(),
            parities: parities.len(),
        });
    }
    // restrict to domain columns
    let rows: Vec<BitString> =
        matrix.rows.iter().map(|row| row.project(domain)).collect();
    let solution =
        gf2::solve(&rows, parities, domain.len()).ok_or(EcError::RankDeficient)?;
    let dim = solution.nullspace.len();
    if dim > COSET_DIM_LIMIT {
        return Err(EcError::CosetTooLarge(dim));
    }

    let mut best = solution.particular.clone();
    let mut current = solution.particular;
    // Gray-code walk over the coset: one basis-vector XOR per step
    for step in 1u64..(1u64 << dim) {
        let flip = step.trailing_zeros() as usize;
        current.xor_assign(&solution.nullspace[flip]);
        if current.weight() < best.weight() {
            best = current.clone();
        }
    }
    // expand back to full index space
    let mut full = BitString::zeros(matrix.n_cols);
    for (pos, &col) in domain.iter().enumerate() {
        if best.get(pos) {
            full.set(col, true);
        }
    }
    Ok(full)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum DecoderChoice {
    /// Pick by problem size: exhaustive if the ball is enumerable, then
    /// Gaussian if the coset is searchable, otherwise Reference.
    Auto,
    Exhaustive,
    Gaussian,
    /// Read the true error string from the simulated ensemble and check
    /// it against every announcement. Realizes the asymptotic budget at
    /// sizes where honest decoding of a random matrix is intractable;
    /// the decoding claim itself is validated at desk scale by the
    /// other two decoders.
    Reference,
}

#[derive(Debug, Clone, Copy)]
pub struct EcConfig {
    pub decoder: DecoderChoice,
    /// Decode radius for the exhaustive decoder.
    pub radius: usize,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum DecodeStatus {
    Unique,
    Ambiguous,
    OutOfRadius,
}

#[derive(Debug, Clone)]
pub struct EcReport {
    pub rounds_used: usize,
    pub decode_status: DecodeStatus,
    /// Bit errors remaining on survivors after correction (available to
    /// the simulator, not to the parties).
    pub residual_bit_errors: usize,
    pub corrected_positions: Vec<usize>,
    pub decoder_used: DecoderChoice,
}

/// Resolve an `Auto` decoder choice and run the decode. `truth` is the
/// simulator's ground-truth error string, consulted only by the
/// reference decoder (and verified against every announced parity).
pub fn decode_with(
    cfg: &EcConfig,
    syndrome: &BitString,
    matrix: &ParityMatrix,
    domain: &[usize],
    truth: &BitString,
) -> Result<(Option<BitString>, DecodeStatus, DecoderChoice), EcError> {
    let decoder = match cfg.decoder {
        DecoderChoice::Auto => {
            if ball_volume(domain.len(), cfg.radius) <= ENUMERATION_BUDGET {
                DecoderChoice::Exhaustive
            } else if domain.len().saturating_sub(matrix.rows.len()) <= COSET_DIM_LIMIT {
                DecoderChoice::Gaussian
            } else {
                DecoderChoice::Reference
            }
        }
        choice => choice,
    };
    let (decoded, status) = match decoder {
        DecoderChoice::Exhaustive => {
            let set = decode_exhaustive(syndrome, matrix, cfg.radius, domain)?;
            match set.len() {
                0 => (None, DecodeStatus::OutOfRadius),
                1 => (Some(set.into_iter().next().unwrap()), DecodeStatus::Unique),
                _ => (None, DecodeStatus::Ambiguous),
            }
        }
        DecoderChoice::Gaussian => {
            (Some(decode_gaussian(syndrome, matrix, domain)?), DecodeStatus::Unique)
        }
        DecoderChoice::Reference => {
            // verify the truth against every announcement before using it
            for (row, bit) in matrix.rows.iter().zip(syndrome.iter_bits()) {
                assert_eq!(truth.dot(row), bit, "reference decode: inconsistent parity");
            }
            (Some(truth.clone()), DecodeStatus::Unique)
        }
        DecoderChoice::Auto => unreachable!(),
    };
    Ok((decoded, status, decoder))
}

pub struct EcOutcome {
    pub ensemble: Ensemble,
    /// The executed rows (each already intersected with liveness).
    pub matrix: ParityMatrix,
    pub rounds: Vec<ParityRound>,
    pub report: EcReport,
}

/// Execute Z-basis rounds from explicit matrix rows and correct.
/// Alice's per-round announced outcome is drawn from `rng`.
pub fn run_ec<R: Rng>(
    e: &Ensemble,
    matrix: &ParityMatrix,
    cfg: &EcConfig,
    rng: &mut R,
) -> Result<EcOutcome, EcError> {
    let rows = matrix.rows.clone();
    run_ec_core(e, RoundSource::Rows(rows), cfg, &mut |_, r: &mut R| r.random(), rng)
}

/// Execute `rounds` freshly drawn random rounds and correct.
pub fn run_ec_random<R: Rng>(
    e: &Ensemble,
    rounds: usize,
    cfg: &EcConfig,
    rng: &mut R,
) -> Result<EcOutcome, EcError> {
    run_ec_core(e, RoundSource::Fresh(rounds), cfg, &mut |_, r: &mut R| r.random(), rng)
}

pub enum RoundSource {
    /// Pre-recorded rows; each is intersected with current liveness.
    Rows(Vec<BitString>),
    /// Draw this many random rounds over the live pairs.
    Fresh(usize),
}

/// Core EC driver. `alice_outcome` supplies Alice's announced raw
/// measurement for each executed subset (sessions derive it from her
/// would-be Z outcomes so both protocol pictures announce identically).
pub fn run_ec_core<R: Rng>(
    e: &Ensemble,
    source: RoundSource,
    cfg: &EcConfig,
    alice_outcome: &mut dyn FnMut(&BitString, &mut R) -> bool,
    rng: &mut R,
) -> Result<EcOutcome, EcError> {
    let domain = e.live_indices();
    let n_cols = e.len();
    let mut current = e.clone();
    let mut rounds: Vec<ParityRound> = Vec::new();
    let mut executed_rows: Vec<BitString> = Vec::new();
    let mut syndrome_bits: Vec<bool> = Vec::new();

    let n_rounds = match &source {
        RoundSource::Rows(rows) => rows.len(),
        RoundSource::Fresh(n) => *n,
    };
    for i in 0..n_rounds {
        let (subset, dest) = match &source {
            RoundSource::Rows(rows) => {
                let alive =
                    BitString::from_bits((0..n_cols).map(|j| current.is_live(j)));
                let effective = rows[i].and(&alive);
                let members: Vec<usize> = effective.iter_ones().collect();
                if members.len() < 2 {
                    return Err(crate::hashing::RoundError::SubsetTooSmall(members.len()).into());
                }
                let dest = members[rng.random_range(0..members.len())];
                (effective, dest)
            }
            RoundSource::Fresh(_) => {
                crate::hashing::draw_round(n_cols, &current.live_indices(), rng)
            }
        };
        let outcome = alice_outcome(&subset, rng);
        let (round, next) = z_parity_round_with_outcome(&current, &subset, dest, outcome)?;
        syndrome_bits.push(round.parity());
        executed_rows.push(subset);
        rounds.push(round);
        current = next;
    }

    let matrix = ParityMatrix::new(executed_rows, n_cols, MatrixKind::Random);
    let syndrome = BitString::from_bits(syndrome_bits);

    let truth = {
        // initial bit string over the full index space; the simulator's
        // ground truth, used by the reference decoder and for residuals
        let mut t = BitString::zeros(n_cols);
        for &i in &domain {
            if e.pair(i).a {
                t.set(i, true);
            }
        }
        t
    };

    let (decoded, status, decoder) = decode_with(cfg, &syndrome, &matrix, &domain, &truth)?;

    let mut corrected_positions = Vec::new();
    if let Some(decoded) = &decoded {
        for j in decoded.iter_ones() {
            if current.is_live(j) {
                // Bob's bit-flip operation
                current.pair_mut(j).a = !current.pair_mut(j).a;
                corrected_positions.push(j);
            }
        }
    }
    let residual_bit_errors =
        current.live_indices().iter().filter(|&&j| current.pair(j).a).count();

    let report = EcReport {
        rounds_used: n_rounds,
        decode_status: status,
        residual_bit_errors,
        corrected_positions,
        decoder_used: decoder,
    };
    Ok(EcOutcome { ensemble: current, matrix, rounds, report })
}
