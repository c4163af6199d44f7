//! Closed-form quantities: binary entropy, likely-string exponents, and
//! asymptotic key rates for perfect and tagged sources.

use thiserror::Error;

#[derive(Debug, Error, PartialEq)]
pub enum RateError {
    #[error("argument {0} outside [0, 1]")]
    EntropyDomain(f64),
    #[error("error rate {0} must lie in [0, 1/2)")]
    RateDomain(f64),
    #[error("tag fraction {0} must lie in [0, 1)")]
    TagDomain(f64),
    #[error("inflated phase rate {0} reaches 1/2: no key (worst-case bound consumes everything)")]
    AbortNoKey(f64),
}

/// Binary entropy in bits, with the `0 log 0 := 0` convention.
pub fn binary_entropy(x: f64) -> Result<f64, RateError> {
    if !(0.0..=1.0).contains(&x) {
        return Err(RateError::EntropyDomain(x));
    }
    if x == 0.0 || x == 1.0 {
        return Ok(0.0);
    }
    Ok(-x * x.log2() - (1.0 - x) * (1.0 - x).log2())
}

/// Inputs shared by the rate formulas. `n` scales exponents into
/// absolute counts; set it to 1 for per-pair fractions.
#[derive(Debug, Clone, Copy)]
pub struct RateInputs {
    pub delta_b: f64,
    pub delta_p: f64,
    /// Tag fraction Δ.
    pub delta: f64,
    pub n: usize,
}

impl RateInputs {
    pub fn new(delta_b: f64, delta_p: f64, delta: f64, n: usize) -> Result<Self, RateError> {
        if !(0.0..0.5).contains(&delta_b) {
            return Err(RateError::RateDomain(delta_b));
        }
        if !(0.0..0.5).contains(&delta_p) {
            return Err(RateError::RateDomain(delta_p));
        }
        if !(0.0..1.0).contains(&delta) {
            return Err(RateError::TagDomain(delta));
        }
        Ok(Self { delta_b, delta_p, delta, n })
    }

    /// Worst-case phase rate on untagged pairs, `δ_p / (1 - Δ)`.
    pub fn inflated_phase_rate(&self) -> Result<f64, RateError> {
        let inflated = self.delta_p / (1.0 - self.delta);
        if inflated >= 0.5 {
            return Err(RateError::AbortNoKey(inflated));
        }
        Ok(inflated)
    }
}

/// Log2 counts of likely error strings:
/// `N·H(δ_b)`, `N·H(δ_p)` and, for a tagged source,
/// `(1−Δ²)·N·H(δ_p/(1−Δ))` for the untagged phase strings.
pub fn likely_count_exponents(inputs: &RateInputs) -> Result<(f64, f64, f64), RateError> {
    let n = inputs.n as f64;
    let log2_wb = n * binary_entropy(inputs.delta_b)?;
    let log2_wp = n * binary_entropy(inputs.delta_p)?;
    let inflated = inputs.inflated_phase_rate()?;
    let log2_wp_untagged =
        (1.0 - inputs.delta * inputs.delta) * n * binary_entropy(inflated)?;
    Ok((log2_wb, log2_wp, log2_wp_untagged))
}

/// Alternative bookkeeping for the untagged phase-string count, following
/// the per-round doubling rule directly: a fraction Δ of the `N·H(δ_b)`
/// error-correction destinations is tagged and each doubles the count.
/// This differs from the closed-form exponent of
/// [`likely_count_exponents`]; both are reported, neither is resolved here.
pub fn doubling_rule_log2_wp_untagged(inputs: &RateInputs) -> Result<f64, RateError> {
    let n = inputs.n as f64;
    let inflated = inputs.inflated_phase_rate()?;
    Ok((1.0 - inputs.delta) * n * binary_entropy(inflated)?
        + inputs.delta * n * binary_entropy(inputs.delta_b)?)
}

/// Asymptotic key rate for a perfect source, `R = 1 − H(δ_b) − H(δ_p)`.
///
/// May be negative; the caller decides whether to abort.
pub fn key_rate(inputs: &RateInputs) -> Result<f64, RateError> {
    Ok(1.0 - binary_entropy(inputs.delta_b)? - binary_entropy(inputs.delta_p)?)
}

/// Tagged-source key rate together with the intermediate fractions.
#[derive(Debug, Clone, Copy)]
pub struct TaggedRate {
    /// Final key rate `R_f`.
    pub rf: f64,
    /// Bits remaining after phase-1 privacy amplification, as a fraction of N.
    pub q_fraction: f64,
    /// Phase-1 privacy-amplification rounds as a fraction of N.
    pub l_fraction: f64,
}

/// `R_f = 1 − Δ − (1−Δ)H(δ_b) − H(δ_p/(1−Δ)) + Δ²·H(δ_p/(1−Δ))`,
/// plus the phase-1 round fraction `l/N = (1+Δ)H(δ_p/(1−Δ))` and the
/// post-phase-1 length fraction `q/N = 1 − H(δ_b) − (1+Δ)H(δ_p/(1−Δ))`.
pub fn tagged_key_rate(inputs: &RateInputs) -> Result<TaggedRate, RateError> {
    let delta = inputs.delta;
    let hb = binary_entropy(inputs.delta_b)?;
    let hp_inflated = binary_entropy(inputs.inflated_phase_rate()?)?;
    let rf = 1.0 - delta - (1.0 - delta) * hb - hp_inflated + delta * delta * hp_inflated;
    let l_fraction = (1.0 + delta) * hp_inflated;
    let q_fraction = 1.0 - hb - l_fraction;
    Ok(TaggedRate { rf, q_fraction, l_fraction })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn inputs(db: f64, dp: f64, delta: f64) -> RateInputs {
        RateInputs::new(db, dp, delta, 1000).unwrap()
    }

    #[test]
    fn entropy_endpoints_and_maximum() {
        assert_eq!(binary_entropy(0.0).unwrap(), 0.0);
        assert_eq!(binary_entropy(1.0).unwrap(), 0.0);
        assert_eq!(binary_entropy(0.5).unwrap(), 1.0);
        assert!((binary_entropy(0.11).unwrap() - 0.499916).abs() < 1e-6);
        assert!(binary_entropy(-0.1).is_err());
        assert!(binary_entropy(1.1).is_err());
    }

    #[test]
    fn entropy_symmetry_and_monotonicity() {
        for i in 1..50 {
            let x = i as f64 / 100.0;
            let h = binary_entropy(x).unwrap();
            assert!((h - binary_entropy(1.0 - x).unwrap()).abs() < 1e-15);
            assert!(h > binary_entropy(x - 0.01).unwrap());
        }
    }

    #[test]
    fn likely_counts() {
        let (wb, wp, wpu) = likely_count_exponents(&inputs(0.0, 0.0, 0.0)).unwrap();
        assert_eq!((wb, wp, wpu), (0.0, 0.0, 0.0));

        // Δ=0 reduction: untagged exponent equals N·H(δ_p)
        let (_, wp, wpu) = likely_count_exponents(&inputs(0.05, 0.05, 0.0)).unwrap();
        assert!((wp - wpu).abs() < 1e-12);

        let (_, _, wpu) = likely_count_exponents(&inputs(0.05, 0.05, 0.1)).unwrap();
        assert!((wpu - 306.448).abs() < 0.1);
    }

    #[test]
    fn key_rates() {
        assert!((key_rate(&inputs(0.0, 0.0, 0.0)).unwrap() - 1.0).abs() < 1e-15);
        assert!((key_rate(&inputs(0.05, 0.05, 0.0)).unwrap() - 0.42721).abs() < 1e-5);
        // near the hashing threshold
        assert!((key_rate(&inputs(0.11, 0.11, 0.0)).unwrap() - 1.7e-4).abs() < 1e-5);
    }

    #[test]
    fn tagged_rate_values() {
        let r = tagged_key_rate(&inputs(0.05, 0.05, 0.1)).unwrap();
        assert!((r.rf - 0.335795).abs() < 1e-3);
        assert!((r.l_fraction - 0.340498).abs() < 1e-4);
        assert!((r.q_fraction - 0.373105).abs() < 1e-4);

        // only the 1 − Δ term survives at zero error rates
        let r = tagged_key_rate(&inputs(0.0, 0.0, 0.2)).unwrap();
        assert!((r.rf - 0.8).abs() < 1e-15);
    }

    #[test]
    fn tagged_reduces_to_plain_rate_at_zero_tag_fraction() {
        for i in 0..50 {
            let d = i as f64 / 110.0;
            let inp = inputs(d, d, 0.0);
            let rf = tagged_key_rate(&inp).unwrap().rf;
            assert!((rf - key_rate(&inp).unwrap()).abs() < 1e-12);
        }
    }

    #[test]
    fn rates_monotone_on_grid() {
        let grid: Vec<f64> = (0..10).map(|i| i as f64 * 0.02).collect();
        let mut prev = f64::INFINITY;
        for &d in &grid {
            let r = key_rate(&inputs(d, 0.05, 0.0)).unwrap();
            assert!(r <= prev + 1e-12);
            prev = r;
        }
        let mut prev = f64::INFINITY;
        for &t in &grid {
            let r = tagged_key_rate(&inputs(0.05, 0.05, t)).unwrap().rf;
            assert!(r <= prev + 1e-12);
            prev = r;
        }
    }

    #[test]
    fn inflated_rate_domain_violation_aborts() {
        let inp = inputs(0.05, 0.45, 0.2);
        assert!(matches!(inp.inflated_phase_rate(), Err(RateError::AbortNoKey(_))));
        assert!(tagged_key_rate(&inp).is_err());
    }
}
