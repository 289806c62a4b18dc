//! Number formatting for CSV and TOML output.

/// Shortest decimal form with at most 12 significant digits.
pub fn num(x: f64) -> String {
    if !x.is_finite() {
        return x.to_string();
    }
    if x == 0.0 {
        return "0".into();
    }
    let s = format!("{:.*e}", 11, x);
    let v: f64 = s.parse().unwrap_or(x);
    let out = v.to_string();
    if out == "-0" {
        "0".into()
    } else {
        out
    }
}
