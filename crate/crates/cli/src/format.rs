//! Printing numbers with a fixed number of significant digits.

use serde_json::Value;

pub const DEFAULT_DIGITS: usize = 6;
pub const MAX_DIGITS: usize = 15;

/// Shortest `%g`-style rendering of `v` with `digits` significant digits.
pub fn sig(v: f64, digits: usize) -> String {
    if v.is_nan() {
        return "nan".into();
    }
    if v.is_infinite() {
        return if v > 0.0 { "inf".into() } else { "-inf".into() };
    }
    if v == 0.0 {
        return "0".into();
    }
    let digits = digits.clamp(1, 17);
    // Exponent after rounding, so 9.9999999 prints as 10.
    let sci = format!("{:.*e}", digits - 1, v);
    let (mantissa, exp) = sci.split_once('e').unwrap();
    let exp: i32 = exp.parse().unwrap();
    if exp < -5 || exp >= digits as i32 {
        format!("{}e{}", trim(mantissa), exp)
    } else {
        let decimals = (digits as i32 - 1 - exp).max(0) as usize;
        trim(&format!("{v:.decimals$}")).to_string()
    }
}

fn trim(s: &str) -> &str {
    if s.contains('.') {
        s.trim_end_matches('0').trim_end_matches('.')
    } else {
        s
    }
}

/// `v` rounded to `digits` significant digits.
pub fn round(v: f64, digits: usize) -> f64 {
    if !v.is_finite() || v == 0.0 {
        return v;
    }
    format!("{:.*e}", digits.clamp(1, 17) - 1, v).parse().unwrap()
}

/// Rounds every float inside a JSON document.
pub fn round_json(v: &mut Value, digits: usize) {
    match v {
        Value::Number(n) if n.is_f64() => {
            let x = round(n.as_f64().unwrap(), digits);
            if let Some(m) = serde_json::Number::from_f64(x) {
                *n = m;
            }
        }
        Value::Array(items) => items.iter_mut().for_each(|x| round_json(x, digits)),
        Value::Object(map) => map.values_mut().for_each(|x| round_json(x, digits)),
        _ => {}
    }
}
