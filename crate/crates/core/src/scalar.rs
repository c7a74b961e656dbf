//! Scalar types used for bandwidth demand and capacity.
//!
//! Every allocator and the exact solver are generic over [`Bandwidth`]. The
//! default instantiation is [`Utilization`], an integer fixed-point value in
//! micro bits per second, which makes capacity comparisons and tie-breaks
//! reproducible. `f64` and [`Rational`] are provided for analysis work.

use std::fmt;
use std::ops::{Add, Sub};

use num_rational::Ratio;
use num_traits::Zero;
use serde::{Deserialize, Serialize};

/// Exact rational used for periods, gaps and simulated time.
pub type Rational = Ratio<i128>;

/// Scaling between bits per second and [`Utilization`] units.
pub const MICRO: u128 = 1_000_000;

/// A value that can express bandwidth demand and network capacity.
///
/// Implementations must be totally ordered on the values the allocators
/// produce; subtraction is only ever applied when the left side is at least
/// the right side.
pub trait Bandwidth:
    Copy + PartialOrd + fmt::Debug + Zero + Add<Output = Self> + Sub<Output = Self>
{
    /// Whether addition and subtraction are exact, so residual capacity can
    /// be checked by equality.
    const EXACT: bool;

    /// Builds the value `num / den` bits per second. `den` is never zero.
    fn from_ratio(num: u128, den: u128) -> Self;

    /// Lossy view in bits per second, for display only.
    fn to_bps_f64(&self) -> f64;

    /// A total order usable for stable sorts. Floating-point NaN never
    /// arises from `from_ratio`, so treating incomparable values as equal is
    /// sufficient.
    fn total_cmp(&self, other: &Self) -> std::cmp::Ordering {
        self.partial_cmp(other).unwrap_or(std::cmp::Ordering::Equal)
    }
}

/// Bandwidth in micro bits per second (10⁻⁶ bit/s resolution).
#[derive(
    Clone, Copy, Debug, Default, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize,
)]
#[serde(transparent)]
pub struct Utilization(u64);

impl Utilization {
    pub const ZERO: Utilization = Utilization(0);

    pub const fn from_micro_bps(micro_bps: u64) -> Self {
        Utilization(micro_bps)
    }

    pub const fn from_bps(bps: u64) -> Self {
        Utilization(bps * MICRO as u64)
    }

    pub const fn micro_bps(self) -> u64 {
        self.0
    }

    pub fn checked_sub(self, rhs: Self) -> Option<Self> {
        self.0.checked_sub(rhs.0).map(Utilization)
    }

    /// Multiplies by an integer factor; `None` on overflow.
    pub fn checked_mul(self, factor: u64) -> Option<Self> {
        self.0.checked_mul(factor).map(Utilization)
    }
}

impl Add for Utilization {
    type Output = Utilization;
    fn add(self, rhs: Self) -> Self {
        Utilization(self.0 + rhs.0)
    }
}

impl Sub for Utilization {
    type Output = Utilization;
    fn sub(self, rhs: Self) -> Self {
        Utilization(self.0 - rhs.0)
    }
}

impl Zero for Utilization {
    fn zero() -> Self {
        Utilization(0)
    }
    fn is_zero(&self) -> bool {
        self.0 == 0
    }
}

impl Bandwidth for Utilization {
    const EXACT: bool = true;

    /// Rounds half up at the final scaling step.
    fn from_ratio(num: u128, den: u128) -> Self {
        let scaled = num * MICRO;
        let rounded = (2 * scaled + den) / (2 * den);
        Utilization(u64::try_from(rounded).expect("utilization exceeds u64 micro-bps"))
    }

    fn to_bps_f64(&self) -> f64 {
        self.0 as f64 / MICRO as f64
    }
}

impl fmt::Display for Utilization {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let whole = self.0 / MICRO as u64;
        let frac = self.0 % MICRO as u64;
        if frac == 0 {
            write!(f, "{whole}")
        } else {
            let digits = format!("{frac:06}");
            write!(f, "{whole}.{}", digits.trim_end_matches('0'))
        }
    }
}

impl Bandwidth for f64 {
    const EXACT: bool = false;

    fn from_ratio(num: u128, den: u128) -> Self {
        num as f64 / den as f64
    }

    fn to_bps_f64(&self) -> f64 {
        *self
    }
}

impl Bandwidth for f32 {
    const EXACT: bool = false;

    fn from_ratio(num: u128, den: u128) -> Self {
        (num as f64 / den as f64) as f32
    }

    fn to_bps_f64(&self) -> f64 {
        *self as f64
    }
}

impl Bandwidth for Rational {
    const EXACT: bool = true;

    fn from_ratio(num: u128, den: u128) -> Self {
        let num = i128::try_from(num).expect("rational numerator overflow");
        let den = i128::try_from(den).expect("rational denominator overflow");
        Ratio::new(num, den)
    }

    fn to_bps_f64(&self) -> f64 {
        *self.numer() as f64 / *self.denom() as f64
    }
}

/// Parses a non-negative decimal (`"10"`, `"0.5"`) or fraction (`"1/3"`)
/// into an exact rational.
pub fn parse_rational(text: &str) -> Option<Rational> {
    let text = text.trim();
    if let Some((n, d)) = text.split_once('/') {
        let n: i128 = n.trim().parse().ok()?;
        let d: i128 = d.trim().parse().ok()?;
        if d == 0 || n < 0 || d < 0 {
            return None;
        }
        return Some(Ratio::new(n, d));
    }
    let (int_part, frac_part) = match text.split_once('.') {
        Some((i, f)) => (i, f),
        None => (text, ""),
    };
    if int_part.is_empty() && frac_part.is_empty() {
        return None;
    }
    let all_digits = |s: &str| s.bytes().all(|b| b.is_ascii_digit());
    if !all_digits(int_part) || !all_digits(frac_part) || frac_part.len() > 18 {
        return None;
    }
    let int: i128 = if int_part.is_empty() { 0 } else { int_part.parse().ok()? };
    let scale = 10i128.pow(frac_part.len() as u32);
    let frac: i128 = if frac_part.is_empty() { 0 } else { frac_part.parse().ok()? };
    Some(Ratio::new(int.checked_mul(scale)?.checked_add(frac)?, scale))
}

/// Renders a rational as an integer, a terminating decimal, or `n/d`.
pub fn format_rational(value: &Rational) -> String {
    if value.is_integer() {
        return value.numer().to_string();
    }
    let mut den = *value.denom();
    let (mut twos, mut fives) = (0u32, 0u32);
    while den % 2 == 0 {
        den /= 2;
        twos += 1;
    }
    while den % 5 == 0 {
        den /= 5;
        fives += 1;
    }
    if den != 1 {
        return format!("{}/{}", value.numer(), value.denom());
    }
    let places = twos.max(fives);
    let scaled = value * Ratio::from_integer(10i128.pow(places));
    let digits = scaled.to_integer();
    let sign = if digits < 0 { "-" } else { "" };
    let digits = digits.abs();
    let pow = 10i128.pow(places);
    format!(
        "{sign}{}.{:0width$}",
        digits / pow,
        digits % pow,
        width = places as usize
    )
}

/// Truncates toward zero to `places` decimals and drops trailing zeros.
pub fn format_truncated(value: &Rational, places: u32) -> String {
    let pow = 10i128.pow(places);
    let scaled = (value * Ratio::from_integer(pow)).trunc().to_integer();
    let whole = scaled / pow;
    let frac = (scaled % pow).abs();
    if frac == 0 {
        return whole.to_string();
    }
    let digits = format!("{frac:0width$}", width = places as usize);
    format!("{whole}.{}", digits.trim_end_matches('0'))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn micro_bps_rounds_half_up() {
        // 1/3 bps = 333_333.33.. -> 333_333; 1/2 micro-bps rounds up.
        assert_eq!(Utilization::from_ratio(1, 3).micro_bps(), 333_333);
        assert_eq!(Utilization::from_ratio(2, 3).micro_bps(), 666_667);
        assert_eq!(Utilization::from_ratio(1, 2_000_000).micro_bps(), 1);
        assert_eq!(Utilization::from_ratio(800, 1), Utilization::from_bps(800));
    }

    #[test]
    fn utilization_display() {
        assert_eq!(Utilization::from_bps(48).to_string(), "48");
        assert_eq!(Utilization::from_micro_bps(2_666_667).to_string(), "2.666667");
        assert_eq!(Utilization::from_micro_bps(500_000).to_string(), "0.5");
    }

    #[test]
    fn rational_parse_and_format() {
        assert_eq!(parse_rational("10"), Some(Ratio::from_integer(10)));
        assert_eq!(parse_rational("10.5"), Some(Ratio::new(21, 2)));
        assert_eq!(parse_rational(".25"), Some(Ratio::new(1, 4)));
        assert_eq!(parse_rational("1/3"), Some(Ratio::new(1, 3)));
        assert_eq!(parse_rational("-1"), None);
        assert_eq!(parse_rational("1/0"), None);
        assert_eq!(parse_rational("abc"), None);
        assert_eq!(format_rational(&Ratio::new(21, 2)), "10.5");
        assert_eq!(format_rational(&Ratio::new(1, 3)), "1/3");
        assert_eq!(format_rational(&Ratio::new(1, 8)), "0.125");
        assert_eq!(format_rational(&Ratio::from_integer(7)), "7");
    }

    #[test]
    fn truncated_rendering() {
        assert_eq!(format_truncated(&Ratio::new(17, 8), 2), "2.12");
        assert_eq!(format_truncated(&Ratio::new(5, 4), 2), "1.25");
        assert_eq!(format_truncated(&Ratio::new(13, 8), 2), "1.62");
        assert_eq!(format_truncated(&Ratio::from_integer(1), 2), "1");
        assert_eq!(format_truncated(&Ratio::new(101, 100), 2), "1.01");
    }
}
