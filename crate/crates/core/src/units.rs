//! Canonical latency formatting.
//!
//! Latencies are microseconds everywhere. On the wire and in printed tables
//! they carry exactly three fractional digits, rounded half-to-even on the
//! exact binary value.

/// `x` with three fractional digits. Rust's fixed-precision formatting is
/// exact and breaks ties towards the even digit, which is the wire rule.
pub fn fmt_micros(x: f64) -> String {
    format!("{x:.3}")
}

/// `x` rounded to the value its wire form denotes.
pub fn round_micros(x: f64) -> f64 {
    fmt_micros(x).parse().expect("formatted floats parse")
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn three_digits() {
        assert_eq!(fmt_micros(18_432.0), "18432.000");
        assert_eq!(fmt_micros(0.1), "0.100");
        assert_eq!(fmt_micros(1.0 / 3.0), "0.333");
    }

    #[test]
    fn exact_ties_go_to_even() {
        // These are exactly representable, so they are true ties.
        assert_eq!(fmt_micros(0.0625), "0.062");
        assert_eq!(fmt_micros(0.1875), "0.188");
        assert_eq!(fmt_micros(0.3125), "0.312");
        assert_eq!(fmt_micros(2.0625), "2.062");
        // 1.0005 is stored slightly below the midpoint.
        assert_eq!(fmt_micros(1.0005), "1.000");
    }

    #[test]
    fn round_trip() {
        assert_eq!(round_micros(12.34567), 12.346);
    }
}
