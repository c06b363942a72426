//! Decimal formatting shared by every CSV and report writer.

/// Formats `x` like C's `%.{digits}g`: `digits` significant digits, fixed
/// notation when the decimal exponent lies in `[-4, digits)`, scientific
/// otherwise, trailing zeros removed.
pub fn fmt_g(x: f64, digits: usize) -> String {
    let digits = digits.max(1);
    if x.is_nan() {
        return "nan".to_string();
    }
    if x.is_infinite() {
        return if x > 0.0 { "inf" } else { "-inf" }.to_string();
    }
    if x == 0.0 {
        return if x.is_sign_negative() { "-0" } else { "0" }.to_string();
    }
    // Round first, then read the exponent off the rounded value so that
    // 9.9999999995 becomes 10 rather than 9.99999999e0.
    let sci = format!("{:.*e}", digits - 1, x);
    let (mantissa, exp) = sci.split_once('e').expect("exponent marker");
    let exp: i32 = exp.parse().expect("integer exponent");
    if exp < -4 || exp >= digits as i32 {
        let mantissa = strip_zeros(mantissa);
        let sign = if exp < 0 { '-' } else { '+' };
        format!("{mantissa}e{sign}{:02}", exp.abs())
    } else {
        let decimals = (digits as i32 - 1 - exp).max(0) as usize;
        strip_zeros(&format!("{:.*}", decimals, x)).to_string()
    }
}

/// `%.9g`, the precision used in every CSV this crate writes.
pub fn fmt9(x: f64) -> String {
    fmt_g(x, 9)
}

fn strip_zeros(s: &str) -> &str {
    if s.contains('.') {
        s.trim_end_matches('0').trim_end_matches('.')
    } else {
        s
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn matches_printf_g() {
        let cases: &[(f64, &str)] = &[
            (0.0, "0"),
            (1.0, "1"),
            (-2.5, "-2.5"),
            (0.1, "0.1"),
            (1.0 / 3.0, "0.333333333"),
            (-0.59047134389, "-0.590471344"),
            (123456789.0, "123456789"),
            (1234567890.0, "1.23456789e+09"),
            (0.0001, "0.0001"),
            (0.00001234, "1.234e-05"),
            (9.9999999995, "10"),
            (1e100, "1e+100"),
        ];
        for &(x, want) in cases {
            assert_eq!(fmt9(x), want, "formatting {x:e}");
        }
    }

    #[test]
    fn round_trips_to_nine_digits() {
        for &x in &[
            std::f64::consts::PI,
            -1.0e-7 / 3.0,
            6.02214076e23,
            0.17312349513898206,
        ] {
            let back: f64 = fmt9(x).parse().unwrap();
            assert!(((back - x) / x).abs() < 1e-8);
        }
    }
}
