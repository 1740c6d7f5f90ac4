//! Number formatting shared by CSV exports.

/// Formats a float with 15 significant digits in scientific notation, which
/// round-trips through any CSV reader.
pub fn num(x: f64) -> String {
    format!("{x:.14e}")
}
