//! Number serialization with 10 significant digits.

const SIG: usize = 10;

/// Formats `x` with 10 significant digits, in plain notation for exponents
/// in `[-5, 10)` and scientific notation otherwise. Trailing zeros are
/// dropped.
pub fn fmt_num(x: f64) -> String {
    if x.is_nan() {
        return "NaN".to_string();
    }
    if x.is_infinite() {
        return if x > 0.0 { "inf".to_string() } else { "-inf".to_string() };
    }
    if x == 0.0 {
        return "0".to_string();
    }
    let sci = format!("{:.*e}", SIG - 1, x);
    let (mantissa, exp) = sci.split_once('e').expect("scientific format");
    let exp: i32 = exp.parse().expect("integer exponent");
    if (-5..SIG as i32).contains(&exp) {
        let decimals = (SIG as i32 - 1 - exp).max(0) as usize;
        trim(format!("{:.*}", decimals, x))
    } else {
        format!("{}e{}", trim(mantissa.to_string()), exp)
    }
}

fn trim(s: String) -> String {
    if s.contains('.') {
        s.trim_end_matches('0').trim_end_matches('.').to_string()
    } else {
        s
    }
}

/// The value a reader recovers from [`fmt_num`].
pub fn quantize(x: f64) -> f64 {
    fmt_num(x).parse().unwrap_or(x)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn examples() {
        assert_eq!(fmt_num(0.0), "0");
        assert_eq!(fmt_num(1.0), "1");
        assert_eq!(fmt_num(-2.5213912345678), "-2.521391235");
        assert_eq!(fmt_num(1234.5), "1234.5");
        assert_eq!(fmt_num(0.000123456789012), "0.000123456789");
        assert_eq!(fmt_num(1.5e-7), "1.5e-7");
        assert_eq!(fmt_num(12345678901.0), "1.23456789e10");
        assert_eq!(fmt_num(f64::NAN), "NaN");
    }

    #[test]
    fn ten_significant_digits_survive() {
        for x in [std::f64::consts::PI, -1.993e-3, 57.61234567891, 1.0 / 3.0, 9.99999999951] {
            let q = quantize(x);
            assert!(((q - x) / x).abs() < 5e-10, "{x} -> {q}");
            assert_eq!(quantize(q), q);
        }
    }
}
