//! SI-suffixed number parsing and formatting.
//!
//! Suffixes follow SPICE conventions (`f p n u m k Meg G`, `meg` is
//! case-insensitive, a bare `m` is milli). Decoding rewrites the literal into
//! decimal exponent form before handing it to the float parser, so `10p` and
//! `1e-11` produce the same double.

/// Decode a number with an optional SI suffix.
pub fn parse_si(text: &str) -> Option<f64> {
    let text = text.trim();
    if text.is_empty() {
        return None;
    }
    let split = text
        .char_indices()
        .find(|&(i, c)| {
            c.is_ascii_alphabetic()
                && !(matches!(c, 'e' | 'E')
                    && text[i + 1..]
                        .chars()
                        .next()
                        .is_some_and(|n| n.is_ascii_digit() || n == '-' || n == '+'))
        })
        .map(|(i, _)| i)
        .unwrap_or(text.len());
    let (mantissa, suffix) = text.split_at(split);
    if mantissa.is_empty() {
        return None;
    }
    let exp10: i32 = match suffix {
        "" => 0,
        "f" | "F" => -15,
        "p" | "P" => -12,
        "n" | "N" => -9,
        "u" | "U" => -6,
        "m" => -3,
        "k" | "K" => 3,
        "G" | "g" => 9,
        "T" | "t" => 12,
        s if s.eq_ignore_ascii_case("meg") => 6,
        _ => return None,
    };
    let value = if exp10 == 0 {
        mantissa.parse::<f64>().ok()?
    } else {
        // Fold the suffix into the exponent so the result is correctly rounded.
        let (base, exp) = match mantissa.find(['e', 'E']) {
            Some(pos) => (
                &mantissa[..pos],
                mantissa[pos + 1..].parse::<i32>().ok()? + exp10,
            ),
            None => (mantissa, exp10),
        };
        format!("{base}e{exp}").parse::<f64>().ok()?
    };
    value.is_finite().then_some(value)
}

/// Shortest representation that parses back to the identical double.
pub fn format_si(value: f64) -> String {
    format!("{value:e}")
}
