//! Bell pairs as classical two-bit labels, plus sampling of noisy and
//! tagged ensembles.
//!
//! A pair in state |χ_{a,b}⟩ is represented by its bit-flip indicator
//! `a` and phase-flip indicator `b` relative to |φ+⟩:
//! (0,0) ↔ |φ+⟩, (0,1) ↔ |φ−⟩, (1,0) ↔ |ψ+⟩, (1,1) ↔ |ψ−⟩.

use rand::Rng;
use thiserror::Error;

use crate::gf2::BitString;

#[derive(Debug, Error, PartialEq)]
pub enum PairError {
    #[error("ensemble size must be at least 1")]
    EmptyEnsemble,
    #[error("error rate {0} must lie in [0, 1/2)")]
    RateDomain(f64),
    #[error("tag fraction {0} must lie in [0, 1)")]
    TagDomain(f64),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Pauli {
    I,
    X,
    Y,
    Z,
}

/// Basis Alice disclosed to Eve for a tagged pair.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum TagBasis {
    Z,
    X,
}

/// One Bell pair. `tag` is `Some` when Eve holds the pair's state in the
/// given basis (the imperfect-source model).
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct PairState {
    /// Bit-flip indicator.
    pub a: bool,
    /// Phase-flip indicator.
    pub b: bool,
    pub tag: Option<TagBasis>,
}

impl PairState {
    pub fn new(a: bool, b: bool) -> Self {
        Self { a, b, tag: None }
    }

    pub fn tagged(&self) -> bool {
        self.tag.is_some()
    }

    /// The (a, b) Bell label.
    pub fn label(&self) -> (bool, bool) {
        (self.a, self.b)
    }
}

/// σ_x or σ_y toggles the bit indicator; σ_y or σ_z toggles the phase
/// indicator. Tags are unaffected.
pub fn apply_pauli(p: PairState, op: Pauli) -> PairState {
    let (da, db) = match op {
        Pauli::I => (false, false),
        Pauli::X => (true, false),
        Pauli::Y => (true, true),
        Pauli::Z => (false, true),
    };
    PairState { a: p.a ^ da, b: p.b ^ db, tag: p.tag }
}

/// How flip indicators are placed when sampling an ensemble.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Sampling {
    /// Exactly ⌊δ·n⌋ flips at uniform positions; realized rates equal
    /// nominal rates, so asymptotic round-count formulas are exact.
    ExactCount,
    /// Each indicator i.i.d. Bernoulli(δ).
    Bernoulli,
}

#[derive(Debug, Clone, Copy)]
pub struct ChannelParams {
    pub delta_b: f64,
    pub delta_p: f64,
    /// Tag fraction Δ.
    pub tag_fraction: f64,
    pub sampling: Sampling,
    /// When set, phase flips are co-located with bit flips where
    /// possible (Y-type noise) instead of being placed independently.
    pub correlate: bool,
    /// Forces every tag to a single basis instead of a uniform draw.
    pub tag_basis_override: Option<TagBasis>,
}

impl ChannelParams {
    pub fn new(delta_b: f64, delta_p: f64, tag_fraction: f64) -> Result<Self, PairError> {
        let params = Self {
            delta_b,
            delta_p,
            tag_fraction,
            sampling: Sampling::ExactCount,
            correlate: false,
            tag_basis_override: None,
        };
        params.validate()?;
        Ok(params)
    }

    pub fn validate(&self) -> Result<(), PairError> {
        for rate in [self.delta_b, self.delta_p] {
            if !(0.0..0.5).contains(&rate) {
                return Err(PairError::RateDomain(rate));
            }
        }
        if !(0.0..1.0).contains(&self.tag_fraction) {
            return Err(PairError::TagDomain(self.tag_fraction));
        }
        Ok(())
    }
}

/// An ordered collection of pairs with stable indices. Discarded pairs
/// keep their index behind a liveness flag so transcripts stay
/// interpretable; string projections compact over live indices.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Ensemble {
    pairs: Vec<PairState>,
    alive: Vec<bool>,
}

impl Ensemble {
    pub fn from_pairs(pairs: Vec<PairState>) -> Self {
        let alive = vec![true; pairs.len()];
        Self { pairs, alive }
    }

    pub fn len(&self) -> usize {
        self.pairs.len()
    }

    pub fn is_empty(&self) -> bool {
        self.pairs.is_empty()
    }

    pub fn live_count(&self) -> usize {
        self.alive.iter().filter(|&&a| a).count()
    }

    pub fn is_live(&self, i: usize) -> bool {
        self.alive[i]
    }

    pub fn live_indices(&self) -> Vec<usize> {
        (0..self.len()).filter(|&i| self.alive[i]).collect()
    }

    pub fn pair(&self, i: usize) -> &PairState {
        &self.pairs[i]
    }

    pub fn pair_mut(&mut self, i: usize) -> &mut PairState {
        &mut self.pairs[i]
    }

    /// Liveness only ever transitions live → discarded.
    pub fn discard(&mut self, i: usize) {
        self.alive[i] = false;
    }

    /// Bit and phase strings projected over live pairs in index order.
    pub fn strings(&self) -> (BitString, BitString) {
        let live = self.live_indices();
        let s_b = BitString::from_bits(live.iter().map(|&i| self.pairs[i].a));
        let s_p = BitString::from_bits(live.iter().map(|&i| self.pairs[i].b));
        (s_b, s_p)
    }

    /// Bit string over the full index range (dead positions read as 0).
    pub fn bit_string_full(&self) -> BitString {
        BitString::from_bits((0..self.len()).map(|i| self.alive[i] && self.pairs[i].a))
    }

    /// Phase string over the full index range (dead positions read as 0).
    pub fn phase_string_full(&self) -> BitString {
        BitString::from_bits((0..self.len()).map(|i| self.alive[i] && self.pairs[i].b))
    }
}

/// Choose `k` distinct positions out of `n`, uniformly.
fn choose_positions<R: Rng>(n: usize, k: usize, rng: &mut R) -> Vec<usize> {
    let mut indices: Vec<usize> = (0..n).collect();
    for i in 0..k.min(n) {
        let j = rng.random_range(i..n);
        indices.swap(i, j);
    }
    indices.truncate(k.min(n));
    indices
}

/// Sample a noisy, optionally tagged ensemble of `n` pairs starting
/// from |φ+⟩.
///
/// Tag randomization runs after flip placement: a Z-tagged pair's phase
/// indicator (and an X-tagged pair's bit indicator) is resampled
/// uniformly, because Alice's disclosed measurement leaves the
/// conjugate observable uncorrelated with everything else. With
/// `tag_fraction > 0` this perturbs the exact flip counts on tagged
/// positions.
pub fn sample_ensemble<R: Rng>(
    params: &ChannelParams,
    n: usize,
    rng: &mut R,
) -> Result<Ensemble, PairError> {
    params.validate()?;
    if n == 0 {
        return Err(PairError::EmptyEnsemble);
    }
    let mut pairs = vec![PairState::new(false, false); n];

    match params.sampling {
        Sampling::ExactCount => {
            let n_bit = (params.delta_b * n as f64).floor() as usize;
            let n_phase = (params.delta_p * n as f64).floor() as usize;
            let bit_positions = choose_positions(n, n_bit, rng);
            for &i in &bit_positions {
                pairs[i].a = true;
            }
            if params.correlate {
                let shared = n_bit.min(n_phase);
                for &i in &bit_positions[..shared] {
                    pairs[i].b = true;
                }
                for &i in &choose_positions(n, n_phase - shared, rng) {
                    // may collide with an already-flipped phase; re-draw
                    let mut i = i;
                    while pairs[i].b {
                        i = rng.random_range(0..n);
                    }
                    pairs[i].b = true;
                }
            } else {
                for &i in &choose_positions(n, n_phase, rng) {
                    pairs[i].b = true;
                }
            }
        }
        Sampling::Bernoulli => {
            // maximal co-location under correlate, chosen so the marginal
            // phase rate stays at δ_p
            let p_given_flip = if params.delta_b > 0.0 {
                (params.delta_p / params.delta_b).min(1.0)
            } else {
                params.delta_p
            };
            let p_given_clean = if params.delta_b < 1.0 {
                ((params.delta_p - params.delta_b * p_given_flip) / (1.0 - params.delta_b))
                    .max(0.0)
            } else {
                0.0
            };
            for p in &mut pairs {
                p.a = rng.random_bool(params.delta_b);
                p.b = if params.correlate {
                    rng.random_bool(if p.a { p_given_flip } else { p_given_clean })
                } else {
                    rng.random_bool(params.delta_p)
                };
            }
        }
    }

    let n_tag = (params.tag_fraction * n as f64).floor() as usize;
    for &i in &choose_positions(n, n_tag, rng) {
        let basis = params.tag_basis_override.unwrap_or_else(|| {
            if rng.random::<bool>() {
                TagBasis::Z
            } else {
                TagBasis::X
            }
        });
        pairs[i].tag = Some(basis);
        match basis {
            TagBasis::Z => pairs[i].b = rng.random::<bool>(),
            TagBasis::X => pairs[i].a = rng.random::<bool>(),
        }
    }

    Ok(Ensemble::from_pairs(pairs))
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha12Rng;

    fn rng(seed: u64) -> ChaCha12Rng {
        ChaCha12Rng::seed_from_u64(seed)
    }

    #[test]
    fn pauli_action_on_labels() {
        let p = PairState::new(false, false);
        assert_eq!(apply_pauli(p, Pauli::I).label(), (false, false));
        assert_eq!(apply_pauli(p, Pauli::X).label(), (true, false));
        assert_eq!(apply_pauli(p, Pauli::Y).label(), (true, true));
        assert_eq!(apply_pauli(p, Pauli::Z).label(), (false, true));
    }

    #[test]
    fn pauli_group_composition() {
        // X then Z equals Y, modulo phase, on all 4 labels
        for a in [false, true] {
            for b in [false, true] {
                let p = PairState::new(a, b);
                let xz = apply_pauli(apply_pauli(p, Pauli::X), Pauli::Z);
                assert_eq!(xz, apply_pauli(p, Pauli::Y));
            }
        }
    }

    #[test]
    fn strings_example() {
        // |φ+⟩|φ+⟩|ψ+⟩|φ−⟩|ψ−⟩ → s_b = 00101, s_p = 00011
        let pairs = vec![
            PairState::new(false, false),
            PairState::new(false, false),
            PairState::new(true, false),
            PairState::new(false, true),
            PairState::new(true, true),
        ];
        let e = Ensemble::from_pairs(pairs);
        let (s_b, s_p) = e.strings();
        assert_eq!(format!("{s_b:?}"), "00101");
        assert_eq!(format!("{s_p:?}"), "00011");
    }

    #[test]
    fn strings_edge_cases() {
        let e = Ensemble::from_pairs(vec![]);
        let (s_b, s_p) = e.strings();
        assert!(s_b.is_empty() && s_p.is_empty());

        let e = Ensemble::from_pairs(vec![PairState::new(true, true); 3]);
        let (s_b, s_p) = e.strings();
        assert_eq!(format!("{s_b:?}"), "111");
        assert_eq!(format!("{s_p:?}"), "111");
    }

    #[test]
    fn noiseless_sample() {
        let params = ChannelParams::new(0.0, 0.0, 0.0).unwrap();
        let e = sample_ensemble(&params, 5, &mut rng(1)).unwrap();
        let (s_b, s_p) = e.strings();
        assert!(s_b.is_zero() && s_p.is_zero());
    }

    #[test]
    fn exact_count_weights() {
        let params = ChannelParams::new(0.2, 0.4, 0.0).unwrap();
        for seed in 0..20 {
            let e = sample_ensemble(&params, 5, &mut rng(seed)).unwrap();
            let (s_b, s_p) = e.strings();
            assert_eq!(s_b.weight(), 1);
            assert_eq!(s_p.weight(), 2);
        }
    }

    #[test]
    fn rejects_empty() {
        let params = ChannelParams::new(0.1, 0.1, 0.0).unwrap();
        assert_eq!(sample_ensemble(&params, 0, &mut rng(0)), Err(PairError::EmptyEnsemble));
    }

    #[test]
    fn bernoulli_concentration() {
        // 5σ binomial bound at δ_b = 1/2, n = 10^4: σ = 50
        let mut params = ChannelParams::new(0.49, 0.0, 0.0).unwrap();
        params.delta_b = 0.5 - 1e-12;
        params.sampling = Sampling::Bernoulli;
        let e = sample_ensemble(&params, 10_000, &mut rng(7)).unwrap();
        let (s_b, _) = e.strings();
        let dev = (s_b.weight() as f64 - 5000.0).abs();
        assert!(dev < 5.0 * 50.0, "weight {} too far from 5000", s_b.weight());
    }

    #[test]
    fn tag_assignment_counts_and_basis() {
        let mut params = ChannelParams::new(0.0, 0.0, 0.3).unwrap();
        params.tag_basis_override = Some(TagBasis::X);
        let e = sample_ensemble(&params, 10, &mut rng(3)).unwrap();
        let tagged: Vec<_> = (0..10).filter(|&i| e.pair(i).tagged()).collect();
        assert_eq!(tagged.len(), 3);
        assert!(tagged.iter().all(|&i| e.pair(i).tag == Some(TagBasis::X)));
    }

    #[test]
    fn discard_is_one_way_and_compacts() {
        let params = ChannelParams::new(0.0, 0.0, 0.0).unwrap();
        let mut e = sample_ensemble(&params, 4, &mut rng(0)).unwrap();
        e.pair_mut(2).a = true;
        e.discard(1);
        assert_eq!(e.live_count(), 3);
        let (s_b, _) = e.strings();
        assert_eq!(format!("{s_b:?}"), "010");
    }
}
