//! Plain-text number formatting for CSV artifacts.

/// Shortest representation of `x` that parses back to the same bits.
///
/// Positional notation in `[1e-5, 1e16)`, exponent notation elsewhere, so
/// far tails of a density don't print hundreds of zeros.
pub fn num(x: f64) -> String {
    let a = x.abs();
    if a == 0.0 || !a.is_finite() || (1e-5..1e16).contains(&a) {
        format!("{x}")
    } else {
        format!("{x:e}")
    }
}

/// Comma-joined row of numbers.
pub fn row(values: &[f64]) -> String {
    values.iter().map(|&v| num(v)).collect::<Vec<_>>().join(",")
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn round_trips_bitwise() {
        for x in [
            0.0,
            -0.0,
            1.0,
            0.1,
            1.0 / 3.0,
            1e-300,
            -2.5e-7,
            6.02e23,
            123456.789,
            f64::MIN_POSITIVE,
        ] {
            let s = num(x);
            let back: f64 = s.parse().unwrap();
            assert_eq!(back.to_bits(), x.to_bits(), "{s}");
            assert_eq!(num(back), s);
        }
    }

    #[test]
    fn formats() {
        assert_eq!(num(0.5), "0.5");
        assert_eq!(num(2.0), "2");
        assert_eq!(num(1e-7), "1e-7");
        assert_eq!(row(&[1.0, 0.25]), "1,0.25");
    }
}
