/// Formats `x` as a plain decimal with `sig` significant digits.
///
/// Falls back to scientific notation for magnitudes outside `1e-20..1e21`.
pub fn decimal(x: f64, sig: usize) -> String {
    assert!(sig >= 1);
    if x == 0.0 {
        return "0".to_string();
    }
    if !x.is_finite() {
        return format!("{x}");
    }
    let sci = format!("{:.*e}", sig - 1, x);
    let (mantissa, exp) = sci.split_once('e').expect("scientific format");
    let exp: i32 = exp.parse().expect("exponent");
    if !(-20..=20).contains(&exp) {
        return sci;
    }
    let digits: String = mantissa.chars().filter(char::is_ascii_digit).collect();
    let mut out = String::with_capacity(digits.len() + 24);
    if x < 0.0 {
        out.push('-');
    }
    if exp >= 0 {
        let int_len = exp as usize + 1;
        if int_len >= digits.len() {
            out.push_str(&digits);
            out.extend(std::iter::repeat_n('0', int_len - digits.len()));
        } else {
            out.push_str(&digits[..int_len]);
            out.push('.');
            out.push_str(&digits[int_len..]);
        }
    } else {
        out.push_str("0.");
        out.extend(std::iter::repeat_n('0', (-exp - 1) as usize));
        out.push_str(&digits);
    }
    out
}

#[cfg(test)]
mod tests {
    use super::decimal;
    use proptest::prelude::*;

    #[test]
    fn fixed_examples() {
        assert_eq!(decimal(0.0, 12), "0");
        assert_eq!(decimal(1.5, 4), "1.500");
        assert_eq!(decimal(-0.00123456, 3), "-0.00123");
        assert_eq!(decimal(123456.0, 3), "123000");
        assert_eq!(decimal(0.9, 12), "0.900000000000");
    }

    proptest! {
        #[test]
        fn seventeen_digits_round_trip(x in -1e6f64..1e6) {
            prop_assert_eq!(decimal(x, 17).parse::<f64>().unwrap(), x);
        }

        #[test]
        fn twelve_digits_are_close(x in 1e-8f64..1e8) {
            let back: f64 = decimal(x, 12).parse().unwrap();
            prop_assert!(((back - x) / x).abs() < 1e-11);
        }
    }
}
