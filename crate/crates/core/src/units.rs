//! Insulin unit conversions used at device boundaries.

/// 1 U of insulin in µU.
pub const MICROUNITS_PER_UNIT: f64 = 1.0e6;
/// 1 U of insulin in pmol.
pub const PMOL_PER_UNIT: f64 = 6000.0;

pub fn u_per_hr_to_u_per_min(rate: f64) -> f64 {
    rate / 60.0
}

pub fn u_per_min_to_u_per_hr(rate: f64) -> f64 {
    rate * 60.0
}
