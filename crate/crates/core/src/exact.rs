//! Exact summation of finite `f64` values.
//!
//! Every finite double is `m · 2^e` with an integer mantissa `m`. Given a set
//! of values, [`FixedScale::covering`] picks the smallest exponent among them
//! so each value becomes an integer multiple of `2^exp`, held in an `i128`.
//! Sums of those integers are exact and associative, which makes set
//! objectives built from them exactly additive.

use crate::error::{Error, Result};

/// Bits reserved so that sums of up to `2^SUM_HEADROOM` values cannot overflow.
const SUM_HEADROOM: u32 = 24;

/// Mantissa and exponent with `x = m · 2^e`, `m` odd (or zero).
fn decompose(x: f64) -> (i128, i32) {
    if x == 0.0 {
        return (0, 0);
    }
    let bits = x.to_bits();
    let sign = if bits >> 63 == 1 { -1 } else { 1 };
    let biased = ((bits >> 52) & 0x7ff) as i32;
    let frac = bits & ((1u64 << 52) - 1);
    let (mut m, mut e) = if biased == 0 {
        (frac, -1074)
    } else {
        (frac | (1u64 << 52), biased - 1075)
    };
    let tz = m.trailing_zeros();
    m >>= tz;
    e += tz as i32;
    (sign * m as i128, e)
}

/// `2^e` as an `f64`, exact for every `e` in the representable range.
fn pow2(e: i32) -> f64 {
    if (-1022..=1023).contains(&e) {
        f64::from_bits(((e + 1023) as u64) << 52)
    } else if e < -1022 {
        pow2(e + 600) * pow2(-600)
    } else {
        f64::INFINITY
    }
}

/// A common binary scale `2^exp` under which a set of values are integers.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct FixedScale {
    exp: i32,
}

impl FixedScale {
    /// The finest scale that represents every value in `values` exactly,
    /// provided the largest one still leaves [`SUM_HEADROOM`] bits for sums.
    pub fn covering(values: &[f64]) -> Result<FixedScale> {
        let mut exp = i32::MAX;
        let mut top = i32::MIN;
        for &x in values {
            if !x.is_finite() {
                return Err(Error::Domain(format!("cannot represent {x} exactly")));
            }
            let (m, e) = decompose(x);
            if m != 0 {
                exp = exp.min(e);
                top = top.max(e + (128 - m.unsigned_abs().leading_zeros()) as i32);
            }
        }
        if exp == i32::MAX {
            return Ok(FixedScale { exp: 0 });
        }
        let width = (top - exp) as u32;
        if width > 127 - SUM_HEADROOM {
            return Err(Error::Domain(format!(
                "values span {width} binary orders of magnitude, more than {} fit an exact sum",
                127 - SUM_HEADROOM
            )));
        }
        Ok(FixedScale { exp })
    }

    pub fn exponent(&self) -> i32 {
        self.exp
    }

    /// `x / 2^exp` as an integer, or `None` when `x` is not a multiple of the
    /// scale or is too large for it.
    pub fn encode(&self, x: f64) -> Option<i128> {
        if !x.is_finite() {
            return None;
        }
        let (m, e) = decompose(x);
        if m == 0 {
            return Some(0);
        }
        let shift = e.checked_sub(self.exp)?;
        if shift < 0 {
            return None;
        }
        let bits = 128 - m.unsigned_abs().leading_zeros() as i32;
        if bits + shift > 127 - SUM_HEADROOM as i32 {
            return None;
        }
        Some(m << shift)
    }

    /// The `f64` nearest to `n · 2^exp` (one rounding, ties to even).
    pub fn decode(&self, n: i128) -> f64 {
        (n as f64) * pow2(self.exp)
    }
}

/// Exact sum of `values`, rounded once to the nearest `f64`.
pub fn exact_sum(values: &[f64]) -> Result<f64> {
    let scale = FixedScale::covering(values)?;
    let total: i128 = values
        .iter()
        .map(|&x| scale.encode(x).expect("covering scale represents its values"))
        .sum();
    Ok(scale.decode(total))
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;
    use rand::seq::SliceRandom;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn decompose_known_values() {
        assert_eq!(decompose(1.0), (1, 0));
        assert_eq!(decompose(-0.75), (-3, -2));
        assert_eq!(decompose(6.0), (3, 1));
        assert_eq!(decompose(f64::MIN_POSITIVE / 4.0), (1, -1024));
        assert_eq!(decompose(0.0), (0, 0));
    }

    #[test]
    fn pow2_is_exact() {
        assert_eq!(pow2(0), 1.0);
        assert_eq!(pow2(-3), 0.125);
        assert_eq!(pow2(10), 1024.0);
        assert_eq!(pow2(-1074), f64::from_bits(1));
    }

    #[test]
    fn sum_that_floats_get_wrong() {
        // Naive left-to-right summation loses the 1.0 entirely.
        let v = [1e16, 1.0, -1e16];
        assert_eq!(v.iter().sum::<f64>(), 0.0);
        assert_eq!(exact_sum(&v).unwrap(), 1.0);
    }

    #[test]
    fn rejects_unrepresentable_spans() {
        assert!(FixedScale::covering(&[1e300, 1e-300]).is_err());
        assert!(FixedScale::covering(&[f64::NAN]).is_err());
        assert_eq!(exact_sum(&[]).unwrap(), 0.0);
        let s = FixedScale::covering(&[1.0]).unwrap();
        assert_eq!(s.encode(0.5), None);
    }

    proptest! {
        #[test]
        fn encode_decode_round_trip(xs in prop::collection::vec(-1e6f64..1e6, 1..40)) {
            let s = FixedScale::covering(&xs).unwrap();
            for &x in &xs {
                prop_assert_eq!(s.decode(s.encode(x).unwrap()), x);
            }
        }

        /// Dyadic rationals `m · 2^-20` sum exactly in integer arithmetic,
        /// which is an independent route to the same result.
        #[test]
        fn matches_integer_oracle(ms in prop::collection::vec(-(1i64 << 30)..(1i64 << 30), 0..100)) {
            let xs: Vec<f64> = ms.iter().map(|&m| m as f64 / (1u64 << 20) as f64).collect();
            let oracle = ms.iter().sum::<i64>() as f64 / (1u64 << 20) as f64;
            prop_assert_eq!(exact_sum(&xs).unwrap(), oracle);
        }

        #[test]
        fn order_independent(mut xs in prop::collection::vec(0.0f64..1e3, 1..50), seed in any::<u64>()) {
            let a = exact_sum(&xs).unwrap();
            xs.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));
            prop_assert_eq!(exact_sum(&xs).unwrap(), a);
        }
    }
}
