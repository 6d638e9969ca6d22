//! Decimal formatting for exported reals.

/// Rounds `x` to `digits` significant decimal digits.
///
/// Non-finite values and zero are returned unchanged.
pub fn round_significant(x: f64, digits: usize) -> f64 {
    if !x.is_finite() || x == 0.0 || digits == 0 {
        return x;
    }
    format!("{:.*e}", digits - 1, x).parse().unwrap_or(x)
}

/// Formats `x` as a plain decimal with `digits` significant digits.
pub fn format_significant(x: f64, digits: usize) -> String {
    if !x.is_finite() {
        return x.to_string();
    }
    let magnitude = if x == 0.0 { 0 } else { x.abs().log10().floor() as i64 };
    let decimals = (digits as i64 - 1 - magnitude).max(0) as usize;
    format!("{:.*}", decimals, round_significant(x, digits))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn rounding() {
        assert_eq!(round_significant(1.0 / 3.0, 12), 0.333333333333);
        assert_eq!(round_significant(0.2, 12), 0.2);
        assert_eq!(round_significant(123456.7891234567, 12), 123456.789123);
        assert_eq!(round_significant(0.0, 12), 0.0);
    }

    #[test]
    fn formatting() {
        assert_eq!(format_significant(0.2, 12), "0.200000000000");
        assert_eq!(format_significant(1500.0, 6), "1500.00");
        assert_eq!(format_significant(0.0, 3), "0.00");
    }
}
