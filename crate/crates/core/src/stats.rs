//! Watermark-survival statistics: bit accuracy, the binomial-tail rho-value, and
//! attack success rate.
//!
//! The rho-value is the probability that `n` fair coin flips match the embedded message
//! in at least `k = ceil(n * p)` positions. It is evaluated through the regularized
//! incomplete beta identity `P[Bin(n, 1/2) >= k] = I_{1/2}(k, n - k + 1)`, which stays
//! accurate for payloads where direct binomial sums underflow.

use std::fmt;

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::scalar::Real;

/// Default detection threshold on the rho-value.
pub const DEFAULT_RHO_THRESHOLD: f64 = 1e-6;

const CF_MAX_ITER: usize = 500;

/// Payload bits.
#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub struct BitMessage {
    bits: Vec<bool>,
}

impl BitMessage {
    pub fn new(bits: Vec<bool>) -> Result<Self> {
        if bits.is_empty() {
            return Err(Error::Domain("a message needs at least one bit".into()));
        }
        Ok(Self { bits })
    }

    pub fn random<R: Rng + ?Sized>(rng: &mut R, n_bits: usize) -> Result<Self> {
        Self::new((0..n_bits).map(|_| rng.random_bool(0.5)).collect())
    }

    pub fn n_bits(&self) -> usize {
        self.bits.len()
    }

    pub fn bits(&self) -> &[bool] {
        &self.bits
    }

    pub fn complement(&self) -> Self {
        Self {
            bits: self.bits.iter().map(|b| !b).collect(),
        }
    }

    /// Packs bits MSB-first; the last byte is zero-padded.
    pub fn to_hex(&self) -> String {
        let bytes: Vec<u8> = self
            .bits
            .chunks(8)
            .map(|chunk| {
                chunk
                    .iter()
                    .enumerate()
                    .fold(0u8, |acc, (i, &b)| acc | ((b as u8) << (7 - i)))
            })
            .collect();
        hex::encode(bytes)
    }

    pub fn from_hex(s: &str, n_bits: usize) -> Result<Self> {
        let bytes = hex::decode(s).map_err(|e| Error::Domain(format!("bad hex message: {e}")))?;
        if bytes.len() != n_bits.div_ceil(8) {
            return Err(Error::LengthMismatch {
                left: bytes.len() * 8,
                right: n_bits,
            });
        }
        Self::new(
            (0..n_bits)
                .map(|i| (bytes[i / 8] >> (7 - i % 8)) & 1 == 1)
                .collect(),
        )
    }
}

impl fmt::Display for BitMessage {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.to_hex())
    }
}

/// Fraction of positions where the two messages agree.
pub fn bit_accuracy(m: &BitMessage, m_hat: &BitMessage) -> Result<f64> {
    if m.n_bits() != m_hat.n_bits() {
        return Err(Error::LengthMismatch {
            left: m.n_bits(),
            right: m_hat.n_bits(),
        });
    }
    let matches = m
        .bits
        .iter()
        .zip(&m_hat.bits)
        .filter(|(a, b)| a == b)
        .count();
    Ok(matches as f64 / m.n_bits() as f64)
}

/// `ln Gamma(x)` for `x > 0`, Lanczos approximation (g = 7, 9 terms).
pub fn ln_gamma<T: Real>(x: T) -> T {
    const G: f64 = 7.0;
    const COEFFS: [f64; 9] = [
        0.999_999_999_999_809_9,
        676.520_368_121_885_1,
        -1_259.139_216_722_402_8,
        771.323_428_777_653_1,
        -176.615_029_162_140_6,
        12.507_343_278_686_905,
        -0.138_571_095_265_720_12,
        9.984_369_578_019_572e-6,
        1.505_632_735_149_311_6e-7,
    ];
    let half = T::lit(0.5);
    if x < half {
        // Reflection formula.
        let pi = T::PI();
        return (pi / (pi * x).sin()).ln() - ln_gamma(T::one() - x);
    }
    let x = x - T::one();
    let mut acc = T::lit(COEFFS[0]);
    for (i, &c) in COEFFS.iter().enumerate().skip(1) {
        acc = acc + T::lit(c) / (x + T::from_usize_lossy(i));
    }
    let t = x + T::lit(G) + half;
    T::lit(0.5 * (2.0 * std::f64::consts::PI).ln()) + (x + half) * t.ln() - t + acc.ln()
}

pub fn ln_beta<T: Real>(a: T, b: T) -> T {
    ln_gamma(a) + ln_gamma(b) - ln_gamma(a + b)
}

/// Regularized incomplete beta function `I_x(a, b)`.
///
/// Uses the Lentz continued fraction on whichever of `I_x(a, b)` and `1 - I_{1-x}(b, a)`
/// converges faster.
pub fn reg_inc_beta<T: Real>(x: T, a: T, b: T) -> Result<T> {
    if !(a > T::zero()) || !(b > T::zero()) || !a.is_finite() || !b.is_finite() {
        return Err(Error::Domain(format!("I_x(a, b) needs a, b > 0; got a={a}, b={b}")));
    }
    if !(x >= T::zero() && x <= T::one()) {
        return Err(Error::Domain(format!("I_x(a, b) needs x in [0, 1]; got {x}")));
    }
    if x == T::zero() {
        return Ok(T::zero());
    }
    if x == T::one() {
        return Ok(T::one());
    }
    let two = T::lit(2.0);
    if x < (a + T::one()) / (a + b + two) {
        Ok(beta_prefactor(x, a, b) * beta_cf(x, a, b)? / a)
    } else {
        let y = T::one() - x;
        Ok(T::one() - beta_prefactor(y, b, a) * beta_cf(y, b, a)? / b)
    }
}

fn beta_prefactor<T: Real>(x: T, a: T, b: T) -> T {
    (a * x.ln() + b * (T::one() - x).ln() - ln_beta(a, b)).exp()
}

/// Continued fraction for `I_x(a, b)` by the modified Lentz method.
fn beta_cf<T: Real>(x: T, a: T, b: T) -> Result<T> {
    let one = T::one();
    let two = T::lit(2.0);
    let tiny = T::min_positive_value() / T::epsilon();
    let eps = T::epsilon();

    let qab = a + b;
    let qap = a + one;
    let qam = a - one;
    let mut c = one;
    let mut d = one - qab * x / qap;
    if d.abs() < tiny {
        d = tiny;
    }
    d = one / d;
    let mut h = d;
    for m in 1..=CF_MAX_ITER {
        let m = T::from_usize_lossy(m);
        let m2 = two * m;
        let aa = m * (b - m) * x / ((qam + m2) * (a + m2));
        d = one + aa * d;
        if d.abs() < tiny {
            d = tiny;
        }
        c = one + aa / c;
        if c.abs() < tiny {
            c = tiny;
        }
        d = one / d;
        h = h * d * c;

        let aa = -(a + m) * (qab + m) * x / ((a + m2) * (qap + m2));
        d = one + aa * d;
        if d.abs() < tiny {
            d = tiny;
        }
        c = one + aa / c;
        if c.abs() < tiny {
            c = tiny;
        }
        d = one / d;
        let delta = d * c;
        h = h * delta;
        if (delta - one).abs() <= eps {
            return Ok(h);
        }
    }
    Err(Error::Domain(format!(
        "incomplete beta continued fraction did not converge for x={x}, a={a}, b={b}"
    )))
}

/// Probability under fair-coin decoding of a bit accuracy at least as high as observed.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RhoValue<T: Real = f64> {
    pub value: T,
    pub n_bits: usize,
    pub bit_accuracy: T,
}

/// Number of matching bits the tail starts at: `ceil(n * p)`.
///
/// Achievable accuracies are ratios `j / n`; the small slack keeps `n * (j / n)` from
/// rounding up past `j` in floating point.
pub fn tail_start(n_bits: usize, p: f64) -> usize {
    let k = (n_bits as f64 * p - 1e-9).ceil();
    (k.max(0.0) as usize).min(n_bits)
}

/// `P[Bin(n_bits, 1/2) >= ceil(n_bits * p)]`.
pub fn rho_value<T: Real>(n_bits: usize, p: T) -> Result<RhoValue<T>> {
    if n_bits == 0 {
        return Err(Error::Domain("n_bits must be at least 1".into()));
    }
    if !(p >= T::zero() && p <= T::one()) {
        return Err(Error::Domain(format!("bit accuracy {p} outside [0, 1]")));
    }
    let k = tail_start(n_bits, p.as_f64());
    let value = if k == 0 {
        T::one()
    } else {
        reg_inc_beta(
            T::lit(0.5),
            T::from_usize_lossy(k),
            T::from_usize_lossy(n_bits - k + 1),
        )?
    };
    Ok(RhoValue {
        value,
        n_bits,
        bit_accuracy: p,
    })
}

/// True when the watermark is no longer detected: `rho > threshold`.
pub fn attack_success<T: Real>(rho: &RhoValue<T>, threshold: T) -> bool {
    rho.value > threshold
}

/// Fraction of rho-values above the threshold.
pub fn asr<T: Real>(rhos: &[RhoValue<T>], threshold: T) -> Result<f64> {
    if rhos.is_empty() {
        return Err(Error::Empty("ASR over zero images".into()));
    }
    if !(threshold > T::zero() && threshold < T::one()) {
        return Err(Error::Domain(format!("threshold {threshold} outside (0, 1)")));
    }
    let hits = rhos.iter().filter(|r| attack_success(r, threshold)).count();
    Ok(hits as f64 / rhos.len() as f64)
}

#[cfg(test)]
mod tests {
    use super::*;
    use num_bigint::BigUint;
    use num_traits::{One, ToPrimitive, Zero};
    use proptest::prelude::*;

    /// Exact `sum_{j >= k} C(n, j) / 2^n` in big integers, as a float.
    fn binomial_tail_oracle(n: usize, k: usize) -> f64 {
        let mut row = vec![BigUint::one()];
        for _ in 0..n {
            let mut next = vec![BigUint::zero(); row.len() + 1];
            for (j, c) in row.iter().enumerate() {
                next[j] += c;
                next[j + 1] += c;
            }
            row = next;
        }
        let tail: BigUint = row[k..].iter().sum();
        let total = BigUint::one() << n;
        // Both fit easily in f64 range for n <= 64.
        tail.to_f64().unwrap() / total.to_f64().unwrap()
    }

    #[test]
    fn bit_accuracy_cases() {
        let m = BitMessage::new(vec![true, false, true, true, false, false, true, false]).unwrap();
        assert_eq!(bit_accuracy(&m, &m).unwrap(), 1.0);
        assert_eq!(bit_accuracy(&m, &m.complement()).unwrap(), 0.0);
        let mut flipped = m.bits().to_vec();
        flipped[1] = !flipped[1];
        flipped[6] = !flipped[6];
        let m2 = BitMessage::new(flipped).unwrap();
        assert_eq!(bit_accuracy(&m, &m2).unwrap(), 0.75);
        let short = BitMessage::new(vec![true]).unwrap();
        assert!(matches!(
            bit_accuracy(&m, &short),
            Err(Error::LengthMismatch { .. })
        ));
        assert!(BitMessage::new(vec![]).is_err());
    }

    #[test]
    fn hex_roundtrip_with_padding() {
        let m = BitMessage::new(vec![true, false, true, true, false, false, true, false, true])
            .unwrap();
        assert_eq!(m.to_hex(), "b280");
        assert_eq!(BitMessage::from_hex("b280", 9).unwrap(), m);
        assert!(BitMessage::from_hex("b2", 9).is_err());
        assert!(BitMessage::from_hex("zz", 8).is_err());
    }

    #[test]
    fn incomplete_beta_known_values() {
        for x in [0.0f64, 0.25, 1.0] {
            assert!((reg_inc_beta(x, 1.0, 1.0).unwrap() - x).abs() < 1e-12);
        }
        for a in [1.0f64, 2.0, 7.0] {
            assert!((reg_inc_beta(0.5, a, a).unwrap() - 0.5).abs() < 1e-12);
        }
        // integral_0^0.5 t (1 - t)^2 dt / B(2, 3) = (11 / 192) * 12
        assert!((reg_inc_beta(0.5f64, 2.0, 3.0).unwrap() - 0.6875).abs() < 1e-12);
    }

    #[test]
    fn incomplete_beta_domain_errors() {
        assert!(reg_inc_beta(-0.1, 1.0, 1.0).is_err());
        assert!(reg_inc_beta(1.1, 1.0, 1.0).is_err());
        assert!(reg_inc_beta(0.5, 0.0, 1.0).is_err());
        assert!(reg_inc_beta(0.5, 1.0, -2.0).is_err());
        assert!(reg_inc_beta(f64::NAN, 1.0, 1.0).is_err());
    }

    #[test]
    fn incomplete_beta_f32() {
        let v: f32 = reg_inc_beta(0.5f32, 2.0, 3.0).unwrap();
        assert!((v - 0.6875).abs() < 1e-5);
    }

    #[test]
    fn rho_value_examples() {
        assert!((rho_value(1, 1.0f64).unwrap().value - 0.5).abs() < 1e-15);
        let r16 = rho_value(16, 1.0).unwrap().value;
        assert!((r16 / 2f64.powi(-16) - 1.0).abs() < 1e-12);
        let r = rho_value(256, 0.5).unwrap().value;
        assert!((r - binomial_tail_oracle(256, 128)).abs() < 1e-12);
        assert!((r - 0.525).abs() < 0.001, "{r}");
        assert_eq!(rho_value(10, 0.0).unwrap().value, 1.0);
        assert!(rho_value(0, 0.5).is_err());
        assert!(rho_value(8, 1.5).is_err());
    }

    #[test]
    fn rho_matches_big_integer_oracle() {
        for n in 1..=32usize {
            for j in 0..=n {
                let p = j as f64 / n as f64;
                let got = rho_value(n, p).unwrap().value;
                let want = binomial_tail_oracle(n, j);
                assert!(
                    ((got - want) / want).abs() <= 1e-12,
                    "n={n} j={j}: {got} vs {want}"
                );
            }
        }
    }

    #[test]
    fn rho_full_accuracy_is_power_of_two() {
        for n in 1..=52 {
            let got = rho_value(n, 1.0).unwrap().value;
            let want = 2f64.powi(-(n as i32));
            assert!(((got - want) / want).abs() <= 1e-12, "n={n}");
        }
    }

    #[test]
    fn attack_success_boundary() {
        let survive = rho_value(256, 1.0).unwrap();
        assert!(!attack_success(&survive, DEFAULT_RHO_THRESHOLD));
        let removed = rho_value(256, 0.5).unwrap();
        assert!(attack_success(&removed, DEFAULT_RHO_THRESHOLD));
        let edge = RhoValue {
            value: 1e-6,
            n_bits: 64,
            bit_accuracy: 0.8,
        };
        assert!(!attack_success(&edge, 1e-6));
    }

    #[test]
    fn asr_counts() {
        let one = RhoValue {
            value: 1.0,
            n_bits: 8,
            bit_accuracy: 0.5,
        };
        let tiny = rho_value(256, 1.0).unwrap();
        assert_eq!(asr(&[one; 4], 1e-6).unwrap(), 1.0);
        assert_eq!(asr(&[tiny; 4], 1e-6).unwrap(), 0.0);
        assert_eq!(asr(&[one, one, one, tiny], 1e-6).unwrap(), 0.75);
        assert!(asr::<f64>(&[], 1e-6).is_err());
        assert!(asr(&[one], 0.0).is_err());
    }

    proptest! {
        #[test]
        fn rho_non_increasing_in_accuracy(n in 1usize..300, a in 0usize..300, b in 0usize..300) {
            let (lo, hi) = (a.min(b).min(n), a.max(b).min(n));
            let r_lo = rho_value(n, lo as f64 / n as f64).unwrap().value;
            let r_hi = rho_value(n, hi as f64 / n as f64).unwrap().value;
            prop_assert!(r_hi <= r_lo + 1e-15);
        }

        #[test]
        fn rho_at_most_half_accuracy_is_large(n in 1usize..300, frac in 0.0f64..=0.5) {
            let r = rho_value(n, frac).unwrap().value;
            prop_assert!(r >= 0.5 - 1e-12);
        }

        #[test]
        fn incomplete_beta_symmetry(x in 0.0f64..=1.0, a in 0.05f64..60.0, b in 0.05f64..60.0) {
            let lhs = reg_inc_beta(x, a, b).unwrap() + reg_inc_beta(1.0 - x, b, a).unwrap();
            prop_assert!((lhs - 1.0).abs() < 1e-12);
        }

        #[test]
        fn hex_roundtrip(bits in proptest::collection::vec(any::<bool>(), 1..200)) {
            let m = BitMessage::new(bits).unwrap();
            prop_assert_eq!(BitMessage::from_hex(&m.to_hex(), m.n_bits()).unwrap(), m);
        }
    }
}
