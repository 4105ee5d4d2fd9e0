//! Small statistics helpers shared across modules.

pub fn mean(values: &[f64]) -> f64 {
    if values.is_empty() {
        return 0.0;
    }
    values.iter().sum::<f64>() / values.len() as f64
}

/// Population variance (divides by `n`).
pub fn variance(values: &[f64]) -> f64 {
    if values.is_empty() {
        return 0.0;
    }
    let m = mean(values);
    values.iter().map(|v| (v - m) * (v - m)).sum::<f64>() / values.len() as f64
}

/// Pearson correlation. `None` when either argument has zero variance or the
/// lengths differ or are below two.
pub fn pearson(a: &[f64], b: &[f64]) -> Option<f64> {
    if a.len() != b.len() || a.len() < 2 {
        return None;
    }
    let ma = mean(a);
    let mb = mean(b);
    let mut sab = 0.0;
    let mut saa = 0.0;
    let mut sbb = 0.0;
    for (x, y) in a.iter().zip(b) {
        let dx = x - ma;
        let dy = y - mb;
        sab += dx * dy;
        saa += dx * dx;
        sbb += dy * dy;
    }
    if negligible(saa, a) || negligible(sbb, b) {
        return None;
    }
    let r = sab / (saa.sqrt() * sbb.sqrt());
    Some(r.clamp(-1.0, 1.0))
}

// Sum of squared deviations that is only rounding noise relative to the
// magnitude of the values (e.g. three copies of 0.4 averaging to 0.4000..01).
fn negligible(ss: f64, values: &[f64]) -> bool {
    let scale = values.iter().fold(0.0f64, |m, v| m.max(v.abs()));
    !(ss > (1e-13 * scale).powi(2) * values.len() as f64)
}

/// Z-score with population standard deviation. `None` for constant input.
pub fn zscore(values: &[f64]) -> Option<Vec<f64>> {
    let m = mean(values);
    let var = variance(values);
    if negligible(var * values.len() as f64, values) {
        return None;
    }
    let sd = var.sqrt();
    Some(values.iter().map(|v| (v - m) / sd).collect())
}
