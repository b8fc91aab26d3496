//! 1D-x/1D-z linear-Gaussian toy model and a dense quadrature reference.

use crate::distributions::HALF_LN_2PI;
use crate::model::{ModelConfig, ModelParams};
use crate::tensor::Tensor;

/// Input scale small enough that `tanh(εu) / ε ≈ u` over the test range.
const LINEAR_EPS: f64 = 1e-3;

fn set(m: &mut ModelParams, name: &str, v: f64) {
    let p = m.get_mut(name).unwrap_or_else(|| panic!("no parameter {name}"));
    p.value = Tensor::full(p.value.shape(), v);
}

/// Prior `N(0,1)`, decoder `x | z ~ N(a z, s²)`, encoder `N(c x, t²)`.
pub fn linear_gaussian(a: f64, s: f64, c: f64, t: f64) -> ModelParams {
    let cfg = ModelConfig::new(1, 1, 1);
    let mut m = ModelParams::init(&cfg, 0).unwrap().zeroed();
    set(&mut m, "encoder.layer1.weight", LINEAR_EPS);
    set(&mut m, "encoder.mean.weight", c / LINEAR_EPS);
    set(&mut m, "encoder.log_std.bias", t.ln());
    set(&mut m, "decoder.layer1.weight", LINEAR_EPS);
    set(&mut m, "decoder.mean.weight", a / LINEAR_EPS);
    set(&mut m, "decoder.log_std.bias", s.ln());
    m
}

/// Encoder set to the exact posterior of the linear-Gaussian decoder.
pub fn linear_gaussian_exact(a: f64, s: f64) -> ModelParams {
    let v = a * a + s * s;
    linear_gaussian(a, s, a / v, (s * s / v).sqrt())
}

/// `log ∫ p(x|z) N(z; 0, 1) dz` by the trapezoid rule on `[-12, 12]`,
/// evaluating the network's own decoder at each node.
pub fn quadrature_log_marginal(m: &ModelParams, x: f64) -> f64 {
    let n = 24_001;
    let (lo, hi) = (-12.0, 12.0);
    let h = (hi - lo) / (n - 1) as f64;
    let mut terms = Vec::with_capacity(n);
    for i in 0..n {
        let z = lo + h * i as f64;
        let log_px = m.decode(&[z]).unwrap().log_prob(&[x]).unwrap();
        let log_pz = -HALF_LN_2PI - 0.5 * z * z;
        let w = if i == 0 || i == n - 1 { 0.5 } else { 1.0 };
        terms.push(log_px + log_pz + (w * h).ln());
    }
    crate::distributions::log_sum_exp(&terms)
}
