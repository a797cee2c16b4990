/// Probability clamp applied before taking logs.
pub const BCE_CLAMP: f64 = 1e-7;

/// Binary cross-entropy `(y - 1)·ln(1 - p) - y·ln(p)` with `p` clamped to
/// `[BCE_CLAMP, 1 - BCE_CLAMP]`.
pub fn bce(y: f64, p: f64) -> f64 {
    let p = p.clamp(BCE_CLAMP, 1.0 - BCE_CLAMP);
    (y - 1.0) * (1.0 - p).ln() - y * p.ln()
}

/// Derivative of [`bce`] with respect to `p`, evaluated at the clamped probability.
pub fn bce_grad(y: f64, p: f64) -> f64 {
    let p = p.clamp(BCE_CLAMP, 1.0 - BCE_CLAMP);
    (1.0 - y) / (1.0 - p) - y / p
}

/// [`bce`] of `sigmoid(z)`, computed from the logit.
pub fn bce_logit(y: f64, z: f64) -> f64 {
    let bound = ((1.0 - BCE_CLAMP) / BCE_CLAMP).ln();
    let z = z.clamp(-bound, bound);
    softplus(z) - y * z
}

/// Derivative of the unclamped logit loss, `sigmoid(z) - y`. The clamp in
/// [`bce_logit`] bounds the reported value only.
pub fn bce_logit_grad(y: f64, z: f64) -> f64 {
    super::sigmoid(z) - y
}

fn softplus(z: f64) -> f64 {
    z.max(0.0) + (-z.abs()).exp().ln_1p()
}
