//! Angle formatting shared by prompts and dataset files.

/// Integer text when the value is integral, else at most six fractional
/// digits with trailing zeros trimmed. Negative zero prints as `0`.
pub fn format_angle(v: f64) -> String {
    let r = (v * 1e6).round() / 1e6;
    if r == 0.0 {
        return "0".to_string();
    }
    if r.fract() == 0.0 && r.abs() < 1e15 {
        return format!("{}", r as i64);
    }
    let s = format!("{r:.6}");
    let s = s.trim_end_matches('0').trim_end_matches('.');
    if s == "-0" {
        "0".to_string()
    } else {
        s.to_string()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn examples() {
        assert_eq!(format_angle(60.0), "60");
        assert_eq!(format_angle(-0.0), "0");
        assert_eq!(format_angle(-15.0), "-15");
        assert_eq!(format_angle(109.00341234), "109.003412");
        assert_eq!(format_angle(0.5), "0.5");
        assert_eq!(format_angle(1e-9), "0");
        assert_eq!(format_angle(-2.0000004), "-2");
    }

    #[test]
    fn parses_back_within_half_micro() {
        for v in [12.3456789, -0.0000015, 179.9999996, -89.123] {
            let p: f64 = format_angle(v).parse().unwrap();
            assert!((p - v).abs() <= 5e-7 + 1e-12, "{v} -> {p}");
        }
    }
}
