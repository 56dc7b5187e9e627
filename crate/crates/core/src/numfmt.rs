//! Number formatting shared by the wire format and the delimited outputs.

/// Formats with 17 significant digits in exponent form, which always
/// round-trips an IEEE-754 double.
pub fn sig17(value: f64) -> String {
    format!("{value:.16e}")
}

/// Shortest representation that parses back to the same double. Plain
/// decimal for ordinary magnitudes, exponent form otherwise.
pub fn shortest(value: f64) -> String {
    let mag = value.abs();
    if value == 0.0 || (1e-5..1e16).contains(&mag) || !value.is_finite() {
        format!("{value}")
    } else {
        format!("{value:e}")
    }
}
