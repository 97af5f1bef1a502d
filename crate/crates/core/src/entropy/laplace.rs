/// Lower bound on the predicted scale.
pub const SIGMA_MIN: f64 = 0.011;
/// Lower bound on any modeled interval probability (2^-16).
pub const P_FLOOR: f64 = 1.0 / 65536.0;

/// Laplace CDF with location 0 and scale `b`.
pub fn laplace_cdf(x: f64, b: f64) -> f64 {
    if x < 0.0 {
        0.5 * (x / b).exp()
    } else {
        1.0 - 0.5 * (-x / b).exp()
    }
}

/// Mass of `[d - 0.5, d + 0.5)` under Laplace(0, b). Computed on `|d|` so the
/// result is exactly symmetric, and without cancellation in the tails.
pub fn laplace_interval_prob(d: f64, b: f64) -> f64 {
    let b = b.max(SIGMA_MIN);
    let d = d.abs();
    let lower = d - 0.5;
    let upper = d + 0.5;
    if lower >= 0.0 {
        0.5 * ((-lower / b).exp() - (-upper / b).exp())
    } else {
        1.0 - 0.5 * (-upper / b).exp() - 0.5 * (lower / b).exp()
    }
}

/// Estimated bits for a quantized value `q` under Laplace(mu, sigma).
pub fn laplace_bits(q: f64, mu: f64, sigma: f64) -> f64 {
    -laplace_interval_prob(q - mu, sigma).max(P_FLOOR).log2()
}

/// Analytic `(∂bits/∂mu, ∂bits/∂sigma)` of [`laplace_bits`]. Zero where the
/// scale clamp or the probability floor is active.
pub fn laplace_bits_grad(q: f64, mu: f64, sigma: f64) -> (f64, f64) {
    let d = q - mu;
    let b = sigma.max(SIGMA_MIN);
    let p = laplace_interval_prob(d, b);
    if p < P_FLOOR {
        return (0.0, 0.0);
    }
    let a = d.abs();
    let (lo, hi) = (a - 0.5, a + 0.5);
    let e_hi = (-hi / b).exp();
    // dP/da and dP/db for P as a function of |d| and b
    let (dp_da, dp_db) = if lo >= 0.0 {
        let e_lo = (-lo / b).exp();
        (-p / b, 0.5 * (lo * e_lo - hi * e_hi) / (b * b))
    } else {
        let e_lo = (lo / b).exp();
        (0.5 * (e_hi - e_lo) / b, 0.5 * (lo * e_lo - hi * e_hi) / (b * b))
    };
    let k = -std::f64::consts::LOG2_E / p;
    let d_mu = -d.signum() * k * dp_da;
    let d_sigma = if sigma < SIGMA_MIN { 0.0 } else { k * dp_db };
    (d_mu, d_sigma)
}

/// Half-width of the symbol alphabet used to code a value with scale `sigma`.
/// Beyond 12 scales the tail mass is below e^-12.
pub fn table_radius(sigma: f64) -> i32 {
    let r = (12.0 * sigma.max(SIGMA_MIN)).ceil() as i32;
    r.clamp(4, 255)
}

/// Probabilities of the symbols `-r..=r` (offsets from the mean) with the
/// out-of-range tails folded into the two boundary symbols.
pub fn laplace_pmf_table(sigma: f64) -> (i32, Vec<f64>) {
    let r = table_radius(sigma);
    let b = sigma.max(SIGMA_MIN);
    let mut pmf: Vec<f64> = (-r..=r).map(|d| laplace_interval_prob(d as f64, b)).collect();
    let tail = laplace_cdf(-(r as f64) + 0.5, b);
    pmf[0] = tail;
    let last = pmf.len() - 1;
    pmf[last] = tail;
    (r, pmf)
}
