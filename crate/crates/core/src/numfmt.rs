//! Decimal rounding and plain-decimal rendering of `f64` values.
//!
//! Rounding works on the shortest round-trip decimal representation of the
//! input rather than on `v * 10^p`, so `1.0005` rounds to `1.001` even though
//! its binary value sits just below the midpoint.

/// Rounds `value` half-away-from-zero to `places` decimal places.
///
/// Non-finite values are returned unchanged. The result is the nearest
/// `f64` to the exact decimal result.
pub fn round_half_away(value: f64, places: u32) -> f64 {
    if !value.is_finite() || value == 0.0 {
        return value;
    }
    let sci = format!("{:e}", value.abs());
    let (mantissa, exponent) = sci.split_once('e').expect("`{:e}` always emits an exponent");
    let exponent: i64 = exponent.parse().expect("valid exponent");
    let digits: Vec<u8> = mantissa.bytes().filter(u8::is_ascii_digit).collect();

    // digits[0] sits at 10^exponent; keep everything down to 10^-places.
    let keep = exponent + 1 + i64::from(places);
    if keep >= digits.len() as i64 {
        return value;
    }
    let mut kept: Vec<u8> = if keep > 0 {
        digits[..keep as usize].to_vec()
    } else {
        Vec::new()
    };
    let round_digit = if keep >= 0 { digits[keep as usize] } else { b'0' };
    if round_digit >= b'5' {
        increment_decimal(&mut kept);
    }
    if kept.iter().all(|&d| d == b'0') {
        return 0.0;
    }
    let sign = if value < 0.0 { "-" } else { "" };
    let text = format!("{sign}{}e-{places}", String::from_utf8(kept).expect("ascii digits"));
    text.parse().expect("well-formed decimal literal")
}

fn increment_decimal(digits: &mut Vec<u8>) {
    for d in digits.iter_mut().rev() {
        if *d == b'9' {
            *d = b'0';
        } else {
            *d += 1;
            return;
        }
    }
    digits.insert(0, b'1');
}

/// Renders `value` with at most `places` decimals and never in exponent
/// notation. Trailing zeros are dropped and negative zero prints as `0`.
pub fn format_decimal(value: f64, places: u32) -> String {
    if !value.is_finite() {
        return value.to_string();
    }
    let rounded = round_half_away(value, places);
    if rounded == 0.0 {
        "0".to_string()
    } else {
        // `Display` for f64 is the shortest round-trip form, without exponent.
        rounded.to_string()
    }
}
