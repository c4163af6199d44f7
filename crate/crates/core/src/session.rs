//! Full two-party runs: channel, error test, error correction, privacy
//! amplification, key comparison — in the entanglement picture and the
//! prepare-and-measure picture, with an auditable transcript of every
//! public announcement.
//!
//! Both pictures consume the same seeded randomness streams, so a
//! paired pair of configs produces bit-for-bit identical keys; that is
//! the mechanical check of the measurement-commutation reduction.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha12Rng;
use thiserror::Error;

use crate::gf2::BitString;
use crate::hashing::draw_round;
use crate::pairstate::{sample_ensemble, ChannelParams, Ensemble, PairError};
use crate::privacy::{
    lineage_rank_check, pa_rounds_untagged, pa_schedule_tagged,
    strict_untagged_target, KeyString, PaSchedule,
};
use crate::rates::{key_rate, tagged_key_rate, RateInputs};
use crate::reconcile::{
    decode_with, ec_round_budget, DecodeStatus, DecoderChoice, EcConfig, MatrixKind,
    ParityMatrix,
};

#[derive(Debug, Error)]
pub enum SessionError {
    #[error("test_fraction {0} must lie in (0, 1)")]
    TestFraction(f64),
    #[error("n_raw = {0} leaves fewer than 2 pairs after the error test")]
    TooFewPairs(usize),
    #[error(transparent)]
    Pair(#[from] PairError),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Mode {
    Entanglement,
    PrepareMeasure,
}

#[derive(Debug, Clone)]
pub struct SessionConfig {
    pub n_raw: usize,
    pub channel: ChannelParams,
    pub mode: Mode,
    pub test_fraction: f64,
    pub ec_slack: usize,
    pub pa_slack: usize,
    pub seed: u64,
    /// Extend PA phase 1 until enough discarded bits actually came from
    /// untagged pairs, instead of trusting the expectation argument.
    pub strict_untagged_discard: bool,
    pub decoder: DecoderChoice,
    /// Extra attempts (with additional rounds) after an ambiguous or
    /// out-of-radius decode before giving up.
    pub retry_cap: usize,
    /// Budget EC/PA from the nominal channel rates instead of the
    /// error-test estimates.
    pub use_nominal_rates: bool,
    /// Prepare-and-measure only: cap on transmissions during sifting.
    /// Defaults to 8 × n_raw when unset.
    pub pm_max_sift_attempts: Option<usize>,
}

impl SessionConfig {
    pub fn new(n_raw: usize, channel: ChannelParams, mode: Mode, seed: u64) -> Self {
        Self {
            n_raw,
            channel,
            mode,
            test_fraction: 0.5,
            ec_slack: 10,
            pa_slack: 10,
            seed,
            strict_untagged_discard: false,
            decoder: DecoderChoice::Auto,
            retry_cap: 3,
            use_nominal_rates: false,
            pm_max_sift_attempts: None,
        }
    }

    pub fn validate(&self) -> Result<(), SessionError> {
        self.channel.validate()?;
        if !(self.test_fraction > 0.0 && self.test_fraction < 1.0) {
            return Err(SessionError::TestFraction(self.test_fraction));
        }
        let tested = (self.test_fraction * self.n_raw as f64).floor() as usize;
        if tested < 2 || self.n_raw.saturating_sub(tested) < 2 {
            return Err(SessionError::TooFewPairs(self.n_raw));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Sender {
    Alice,
    Bob,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Kind {
    Basis,
    TestOutcome,
    Parity,
    SubsetAnnounce,
    Decision,
}

/// One public announcement on the authenticated channel.
#[derive(Debug, Clone, PartialEq)]
pub struct Message {
    pub sender: Sender,
    pub kind: Kind,
    pub payload: BitString,
}

/// Append-only list of everything Eve sees.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct Transcript {
    pub messages: Vec<Message>,
}

impl Transcript {
    pub fn push(&mut self, sender: Sender, kind: Kind, payload: BitString) {
        self.messages.push(Message { sender, kind, payload });
    }

    /// Line-oriented serialization: `seq sender kind hex-payload`.
    pub fn to_text(&self) -> String {
        let mut out = String::new();
        for (seq, m) in self.messages.iter().enumerate() {
            let sender = match m.sender {
                Sender::Alice => "alice",
                Sender::Bob => "bob",
            };
            let kind = match m.kind {
                Kind::Basis => "basis",
                Kind::TestOutcome => "test-outcome",
                Kind::Parity => "parity",
                Kind::SubsetAnnounce => "subset-announce",
                Kind::Decision => "decision",
            };
            out.push_str(&format!("{seq} {sender} {kind} {}\n", m.payload.to_hex()));
        }
        out
    }

    /// Parse the [`Self::to_text`] format. Payload lengths are not
    /// recoverable from hex alone, so they round to whole bytes.
    pub fn from_text(text: &str) -> Option<Self> {
        let mut messages = Vec::new();
        for line in text.lines().filter(|l| !l.trim().is_empty()) {
            let mut parts = line.split_whitespace();
            let seq: usize = parts.next()?.parse().ok()?;
            if seq != messages.len() {
                return None;
            }
            let sender = match parts.next()? {
                "alice" => Sender::Alice,
                "bob" => Sender::Bob,
                _ => return None,
            };
            let kind = match parts.next()? {
                "basis" => Kind::Basis,
                "test-outcome" => Kind::TestOutcome,
                "parity" => Kind::Parity,
                "subset-announce" => Kind::SubsetAnnounce,
                "decision" => Kind::Decision,
                _ => return None,
            };
            let hex = parts.next()?;
            let len = if hex == "-" { 0 } else { hex.len() / 2 * 8 };
            let payload = BitString::from_hex(hex, len)?;
            messages.push(Message { sender, kind, payload });
        }
        Some(Self { messages })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum AbortReason {
    /// Rates leave nothing, or the pipeline ran out of pairs.
    NoKey,
    /// Decoding stayed ambiguous or out of radius through all retries.
    DecodingFailed,
    /// Keys disagreed at the end (guarded failure; never silent).
    KeyMismatch,
}

#[derive(Debug, Clone)]
pub struct SessionResult {
    pub key_alice: BitString,
    pub key_bob: BitString,
    pub agreed: bool,
    pub transcript: Transcript,
    /// |key| / N, with N the post-test pair count.
    pub realized_rate: f64,
    /// (δ̂_b over all Z-test pairs, δ̂_p over untagged X-test pairs).
    pub estimates: (f64, f64),
    pub abort_reason: Option<AbortReason>,
    pub n_post_test: usize,
    pub ec_rounds_used: usize,
    pub pa_rounds_used: usize,
    pub decoder_used: Option<DecoderChoice>,
    /// Lineage independence over untagged columns; `None` when Δ = 0.
    pub lineage_rank_ok: Option<bool>,
}

pub fn verify_agreement(r: &mut SessionResult) -> bool {
    r.agreed = r.key_alice == r.key_bob && r.abort_reason.is_none();
    r.agreed
}

/// Per-test-pair detail from the error test.
#[derive(Debug, Clone)]
pub struct TestReport {
    pub delta_b_hat: f64,
    /// Estimated over untagged X-test pairs only.
    pub delta_p_hat: f64,
    /// The naive estimate over *all* X-test pairs; with adversarial
    /// tagged values it understates the untagged phase rate.
    pub delta_p_hat_pooled: f64,
    pub z_test: Vec<usize>,
    pub x_test: Vec<usize>,
}

/// Sacrifice a uniform fraction of live pairs: half measured in Z to
/// estimate δ̂_b, half in X to estimate δ̂_p. The test subset is chosen
/// after tags are fixed, the X estimate uses untagged pairs only, and
/// all test pairs are discarded.
pub fn error_test<R: Rng>(
    e: &Ensemble,
    fraction: f64,
    rng: &mut R,
) -> Result<(TestReport, Ensemble, Transcript), SessionError> {
    let live = e.live_indices();
    let t = (fraction * live.len() as f64).floor() as usize;
    if t < 2 {
        return Err(SessionError::TooFewPairs(live.len()));
    }
    let picks = rand::seq::index::sample(rng, live.len(), t);
    let mut test: Vec<usize> = picks.iter().map(|k| live[k]).collect();
    test.sort_unstable();

    // alternate bases along the sorted test positions
    let z_test: Vec<usize> = test.iter().copied().step_by(2).collect();
    let x_test: Vec<usize> = test.iter().copied().skip(1).step_by(2).collect();

    let mut transcript = Transcript::default();
    let test_mask = {
        let mut m = BitString::zeros(e.len());
        for &i in &test {
            m.set(i, true);
        }
        m
    };
    transcript.push(Sender::Alice, Kind::SubsetAnnounce, test_mask);
    transcript.push(
        Sender::Alice,
        Kind::Basis,
        BitString::from_bits(test.iter().map(|i| x_test.contains(i))),
    );

    // Alice's raw outcomes are fresh coin flips; Bob's differ by the
    // relevant flip indicator
    let alice_outcomes: Vec<bool> = test.iter().map(|_| rng.random()).collect();
    let bob_outcomes: Vec<bool> = test
        .iter()
        .zip(&alice_outcomes)
        .map(|(&i, &a)| {
            let p = e.pair(i);
            if z_test.contains(&i) {
                a ^ p.a
            } else {
                a ^ p.b
            }
        })
        .collect();
    transcript.push(
        Sender::Alice,
        Kind::TestOutcome,
        BitString::from_bits(alice_outcomes.iter().copied()),
    );
    transcript.push(
        Sender::Bob,
        Kind::TestOutcome,
        BitString::from_bits(bob_outcomes.iter().copied()),
    );

    let disagree = |set: &[usize], untagged_only: bool| -> f64 {
        let idx: Vec<usize> = set
            .iter()
            .filter(|&&i| !untagged_only || !e.pair(i).tagged())
            .map(|&i| test.binary_search(&i).unwrap())
            .collect();
        if idx.is_empty() {
            return 0.0;
        }
        idx.iter().filter(|&&k| alice_outcomes[k] != bob_outcomes[k]).count() as f64
            / idx.len() as f64
    };

    let report = TestReport {
        delta_b_hat: disagree(&z_test, false),
        delta_p_hat: disagree(&x_test, true),
        delta_p_hat_pooled: disagree(&x_test, false),
        z_test,
        x_test,
    };

    let mut next = e.clone();
    for &i in &test {
        next.discard(i);
    }
    Ok((report, next, transcript))
}

/// Prepare-and-measure sifting: both parties pick a uniform basis per
/// transmission and keep matches. Returns the match mask over attempts
/// and stops once `n_target` positions are kept or `max_attempts` is
/// reached.
pub fn sift_prologue<R: Rng>(
    n_target: usize,
    max_attempts: usize,
    rng: &mut R,
) -> (BitString, usize) {
    let mut matches = Vec::new();
    let mut kept = 0usize;
    while kept < n_target && matches.len() < max_attempts {
        let alice_basis = rng.random::<bool>();
        let bob_basis = rng.random::<bool>();
        let hit = alice_basis == bob_basis;
        matches.push(hit);
        if hit {
            kept += 1;
        }
    }
    (BitString::from_bits(matches), kept)
}

// seeded sub-streams; both parties (and both pictures) share them
const STREAM_CHANNEL: u64 = 1;
const STREAM_TEST: u64 = 2;
const STREAM_BITS: u64 = 3;
const STREAM_ROUNDS: u64 = 4;
const STREAM_SIFT: u64 = 6;

fn stream(seed: u64, id: u64) -> ChaCha12Rng {
    let mut rng = ChaCha12Rng::seed_from_u64(seed);
    rng.set_stream(id);
    rng
}

pub fn run_session(cfg: &SessionConfig) -> Result<SessionResult, SessionError> {
    match cfg.mode {
        Mode::Entanglement => pipeline(cfg),
        Mode::PrepareMeasure => run_prepare_measure(cfg),
    }
}

pub fn run_prepare_measure(cfg: &SessionConfig) -> Result<SessionResult, SessionError> {
    let cfg = SessionConfig { mode: Mode::PrepareMeasure, ..cfg.clone() };
    pipeline(&cfg)
}

fn abort(
    reason: AbortReason,
    transcript: Transcript,
    estimates: (f64, f64),
    n_post_test: usize,
    ec_rounds_used: usize,
) -> SessionResult {
    let mut transcript = transcript;
    transcript.push(Sender::Alice, Kind::Decision, BitString::from_bits([false]));
    SessionResult {
        key_alice: BitString::zeros(0),
        key_bob: BitString::zeros(0),
        agreed: false,
        transcript,
        realized_rate: 0.0,
        estimates,
        abort_reason: Some(reason),
        n_post_test,
        ec_rounds_used,
        pa_rounds_used: 0,
        decoder_used: None,
        lineage_rank_ok: None,
    }
}

fn pipeline(cfg: &SessionConfig) -> Result<SessionResult, SessionError> {
    cfg.validate()?;
    let pm = cfg.mode == Mode::PrepareMeasure;
    let delta = cfg.channel.tag_fraction;
    let mut transcript = Transcript::default();

    // prepare-and-measure prologue: sift down to n_raw kept positions.
    // Matched transmissions correspond one-to-one with the pairs the
    // entanglement picture would share, so everything downstream is
    // common to both pictures.
    if pm {
        let cap = cfg.pm_max_sift_attempts.unwrap_or(8 * cfg.n_raw);
        let (mask, kept) = sift_prologue(cfg.n_raw, cap, &mut stream(cfg.seed, STREAM_SIFT));
        transcript.push(Sender::Bob, Kind::Basis, mask);
        if kept < cfg.n_raw {
            return Ok(abort(AbortReason::NoKey, transcript, (0.0, 0.0), 0, 0));
        }
    }

    // channel: the ensemble holds the ground-truth flip indicators; the
    // prepare-and-measure picture reads them as classical flips on the
    // sifted transmissions
    let e = sample_ensemble(&cfg.channel, cfg.n_raw, &mut stream(cfg.seed, STREAM_CHANNEL))?;
    if delta > 0.0 {
        // the source disclosure of which positions are tagged
        transcript.push(
            Sender::Alice,
            Kind::Basis,
            BitString::from_bits((0..e.len()).map(|i| e.pair(i).tagged())),
        );
    }

    // error test
    let (report, e, test_part) = error_test(&e, cfg.test_fraction, &mut stream(cfg.seed, STREAM_TEST))?;
    transcript.messages.extend(test_part.messages);
    let estimates = (report.delta_b_hat, report.delta_p_hat);
    let n_post = e.live_count();
    if n_post < 2 {
        return Ok(abort(AbortReason::NoKey, transcript, estimates, n_post, 0));
    }

    // budget rates: estimates by default, nominal on request
    let (delta_b_budget, delta_p_budget) = if cfg.use_nominal_rates {
        (cfg.channel.delta_b, cfg.channel.delta_p)
    } else {
        estimates
    };
    let rate_check = RateInputs::new(
        delta_b_budget.min(0.4999),
        delta_p_budget.min(0.4999),
        delta,
        n_post,
    );
    let positive = match rate_check {
        Ok(inputs) => {
            if delta > 0.0 {
                tagged_key_rate(&inputs).map(|t| t.rf > 0.0).unwrap_or(false)
            } else {
                key_rate(&inputs).map(|r| r > 0.0).unwrap_or(false)
            }
        }
        Err(_) => false,
    };
    if !positive {
        return Ok(abort(AbortReason::NoKey, transcript, estimates, n_post, 0));
    }

    // Alice's raw Z-basis values for every position (a single stream in
    // both pictures; unused dead positions still consume no draws here
    // because we draw the full vector at once)
    let alice_bits = {
        let mut r = stream(cfg.seed, STREAM_BITS);
        BitString::from_bits((0..cfg.n_raw).map(|_| r.random::<bool>()))
    };
    let bob_bits = {
        let mut b = alice_bits.clone();
        b.xor_assign(&e.bit_string_full());
        b
    };

    // error correction
    let mut rounds_rng = stream(cfg.seed, STREAM_ROUNDS);
    let ec_budget = if delta_b_budget == 0.0 {
        0
    } else {
        match ec_round_budget(n_post, delta_b_budget, cfg.ec_slack) {
            Ok(r) => r,
            Err(_) => return Ok(abort(AbortReason::NoKey, transcript, estimates, n_post, 0)),
        }
    };
    if ec_budget + 2 > n_post {
        return Ok(abort(AbortReason::NoKey, transcript, estimates, n_post, 0));
    }

    let domain = e.live_indices();
    let truth = e.bit_string_full();
    let radius = (1.5 * delta_b_budget * n_post as f64).ceil() as usize + 2;
    let ec_cfg = EcConfig { decoder: cfg.decoder, radius };

    let mut ent = e.clone();
    let mut rows: Vec<BitString> = Vec::new();
    let mut syndrome_bits: Vec<bool> = Vec::new();
    let run_rounds = |ent: &mut Ensemble,
                          rows: &mut Vec<BitString>,
                          syndrome_bits: &mut Vec<bool>,
                          transcript: &mut Transcript,
                          count: usize,
                          rng: &mut ChaCha12Rng| {
        for _ in 0..count {
            let live = ent.live_indices();
            let (subset, dest) = draw_round(cfg.n_raw, &live, rng);
            let parity_alice = subset.dot(&alice_bits);
            let parity_bob = subset.dot(&bob_bits);
            let mut announce = BitString::zeros(2 * cfg.n_raw);
            for j in subset.iter_ones() {
                announce.set(j, true);
            }
            announce.set(cfg.n_raw + dest, true);
            transcript.push(Sender::Alice, Kind::SubsetAnnounce, announce);
            transcript.push(Sender::Alice, Kind::Parity, BitString::from_bits([parity_alice]));
            transcript.push(Sender::Bob, Kind::Parity, BitString::from_bits([parity_bob]));
            // entanglement picture: actually hash the pairs; the
            // announced outcome matches Alice's commuted measurement
            let (round, next) =
                crate::hashing::z_parity_round_with_outcome(ent, &subset, dest, parity_alice)
                    .expect("drawn round is valid");
            debug_assert_eq!(round.parity(), parity_alice ^ parity_bob);
            *ent = next;
            rows.push(subset);
            syndrome_bits.push(parity_alice ^ parity_bob);
        }
    };

    run_rounds(&mut ent, &mut rows, &mut syndrome_bits, &mut transcript, ec_budget, &mut rounds_rng);
    let mut decoded_and_status = if ec_budget == 0 {
        // nothing announced and a zero error budget: correct nothing
        Some(BitString::zeros(cfg.n_raw))
    } else {
        None
    };
    let mut decoder_used = None;
    for attempt in 0..=cfg.retry_cap {
        if decoded_and_status.is_some() {
            break;
        }
        let matrix = ParityMatrix::new(rows.clone(), cfg.n_raw, MatrixKind::Random);
        let syndrome = BitString::from_bits(syndrome_bits.iter().copied());
        match decode_with(&ec_cfg, &syndrome, &matrix, &domain, &truth) {
            Ok((Some(d), DecodeStatus::Unique, used)) => {
                decoded_and_status = Some(d);
                decoder_used = Some(used);
                break;
            }
            _ => {
                if attempt == cfg.retry_cap {
                    break;
                }
                let extra = cfg.ec_slack.max(1);
                if rows.len() + extra + 2 > n_post {
                    break;
                }
                run_rounds(
                    &mut ent,
                    &mut rows,
                    &mut syndrome_bits,
                    &mut transcript,
                    extra,
                    &mut rounds_rng,
                );
            }
        }
    }
    let ec_rounds_used = rows.len();
    let Some(decoded) = decoded_and_status else {
        return Ok(abort(
            AbortReason::DecodingFailed,
            transcript,
            estimates,
            n_post,
            ec_rounds_used,
        ));
    };

    // Bob corrects the decoded flips on surviving positions
    let mut bob_corrected = bob_bits.clone();
    for j in decoded.iter_ones() {
        if ent.is_live(j) {
            bob_corrected.flip(j);
            if !pm {
                // the entanglement picture applies the bit-flip to the pair
                ent.pair_mut(j).a = !ent.pair(j).a;
            }
        }
    }

    // measure survivors (entanglement) / take corrected bits (PM); the
    // two coincide because surviving control qubits keep their Z values
    let survivor_mask = BitString::from_bits((0..cfg.n_raw).map(|i| ent.is_live(i)));
    let tags = BitString::from_bits((0..cfg.n_raw).map(|i| e.pair(i).tagged()));
    // Alice's deferred Z measurement of her surviving qubits reads the
    // same values she would announce in the prepare-and-measure picture
    let alice_post_ec = alice_bits.clone();
    let bob_post_ec = if pm {
        bob_corrected
    } else {
        let mut b = alice_post_ec.clone();
        b.xor_assign(&ent.bit_string_full());
        b
    };

    let key_alice = KeyString::from_parts(alice_post_ec, tags.clone(), survivor_mask.clone());
    let key_bob = KeyString::from_parts(bob_post_ec, tags, survivor_mask.clone());

    // privacy amplification schedule
    let n_survivors = survivor_mask.weight();
    let schedule = if delta > 0.0 {
        match pa_schedule_tagged(n_post, delta_p_budget, delta, delta_b_budget, cfg.pa_slack) {
            Ok(s) => s,
            Err(_) => {
                return Ok(abort(AbortReason::NoKey, transcript, estimates, n_post, ec_rounds_used))
            }
        }
    } else if delta_p_budget == 0.0 {
        PaSchedule { rounds_phase1: 0, rounds_phase2: 0, n_p: 0 }
    } else {
        match pa_rounds_untagged(n_post, delta_p_budget, cfg.pa_slack) {
            Ok(r) => PaSchedule { rounds_phase1: r, rounds_phase2: 0, n_p: r - cfg.pa_slack },
            Err(_) => {
                return Ok(abort(AbortReason::NoKey, transcript, estimates, n_post, ec_rounds_used))
            }
        }
    };
    if schedule.rounds_phase1 + schedule.rounds_phase2 >= n_survivors {
        return Ok(abort(AbortReason::NoKey, transcript, estimates, n_post, ec_rounds_used));
    }

    let pa_result = if cfg.strict_untagged_discard && delta > 0.0 {
        let target = match strict_untagged_target(n_post, delta_p_budget, delta) {
            Ok(t) => t,
            Err(_) => {
                return Ok(abort(AbortReason::NoKey, transcript, estimates, n_post, ec_rounds_used))
            }
        };
        crate::privacy::run_pa_strict(&key_alice, &schedule, target, &mut rounds_rng)
    } else {
        crate::privacy::run_pa(&key_alice, &schedule, &mut rounds_rng)
    };
    let pa_alice = match pa_result {
        Ok(out) => out,
        Err(_) => {
            return Ok(abort(AbortReason::NoKey, transcript, estimates, n_post, ec_rounds_used))
        }
    };
    // Bob replays the announced rounds
    let mut pa_bob = key_bob;
    for (subset, d) in &pa_alice.rounds {
        let mut announce = BitString::zeros(2 * cfg.n_raw);
        for j in subset.iter_ones() {
            announce.set(j, true);
        }
        announce.set(cfg.n_raw + d, true);
        transcript.push(Sender::Alice, Kind::SubsetAnnounce, announce);
        crate::privacy::pa_round_bits_in_place(&mut pa_bob, subset, *d)
            .expect("announced round is valid");
    }
    let pa_rounds_used = pa_alice.rounds.len();

    let final_alice = pa_alice.key.final_bits();
    let final_bob = pa_bob.final_bits();
    let agreed = final_alice == final_bob;
    transcript.push(Sender::Alice, Kind::Decision, BitString::from_bits([agreed]));

    let lineage_rank_ok = (delta > 0.0).then(|| {
        let untagged_cols: Vec<usize> = survivor_mask
            .iter_ones()
            .filter(|&i| !e.pair(i).tagged())
            .collect();
        lineage_rank_check(&pa_alice.key, &untagged_cols)
    });

    Ok(SessionResult {
        realized_rate: final_alice.len() as f64 / n_post as f64,
        key_alice: final_alice,
        key_bob: final_bob,
        agreed,
        transcript,
        estimates,
        abort_reason: (!agreed).then_some(AbortReason::KeyMismatch),
        n_post_test: n_post,
        ec_rounds_used,
        pa_rounds_used,
        decoder_used,
        lineage_rank_ok,
    })
}
