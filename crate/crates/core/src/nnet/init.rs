use super::RngStream;

/// Fills with `uniform(-a, a)`, `a = sqrt(6 / (fan_in + fan_out))`.
pub fn glorot_uniform(values: &mut [f64], fan_in: usize, fan_out: usize, rng: &mut RngStream) {
    let a = (6.0 / (fan_in + fan_out) as f64).sqrt();
    uniform_fill(values, a, rng);
}

pub fn uniform_fill(values: &mut [f64], a: f64, rng: &mut RngStream) {
    values.iter_mut().for_each(|v| *v = rng.uniform(-a, a));
}
