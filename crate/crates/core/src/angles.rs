//! Angle bookkeeping shared by the geometry and scheduling code.

/// Shift each value by a multiple of `period` so that consecutive values
/// differ by at most half a period.
pub fn unwrap(values: &[f64], period: f64) -> Vec<f64> {
    let mut out: Vec<f64> = Vec::with_capacity(values.len());
    let mut offset = 0.0f64;
    for &v in values {
        if let Some(&prev) = out.last() {
            offset += ((prev - (v + offset)) / period).round() * period;
        }
        out.push(v + offset);
    }
    out
}

/// Reduce degrees to `[0, 180)`.
pub fn reduce_half_turn_deg(deg: f64) -> f64 {
    let r = deg.rem_euclid(180.0);
    // rem_euclid can round up to exactly 180 for tiny negative inputs
    if r >= 180.0 {
        0.0
    } else {
        r
    }
}
