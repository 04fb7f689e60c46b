//! Small numerical helpers shared across modules.

/// `log(sum(exp(v)))` with the maximum factored out.
///
/// Returns `-inf` when every entry is `-inf` (including the empty slice).
pub fn log_sum_exp(values: &[f64]) -> f64 {
    let max = values.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    if max == f64::NEG_INFINITY {
        return f64::NEG_INFINITY;
    }
    if max.is_infinite() {
        return max;
    }
    let sum: f64 = values.iter().map(|v| (v - max).exp()).sum();
    max + sum.ln()
}

pub const LN_2PI: f64 = 1.837_877_066_409_345_5;
