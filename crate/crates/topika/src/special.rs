//! Special functions.

/// The digamma function ψ(x) = d/dx ln Γ(x) for x > 0.
///
/// Shifts the argument up to at least 6 with ψ(x) = ψ(x + 1) − 1/x and then
/// evaluates the asymptotic expansion through the x^-16 term; the truncation
/// error at x = 6 is below 3e-14. Returns NaN for x ≤ 0 or NaN input.
pub fn digamma(x: f64) -> f64 {
    if !(x > 0.0) {
        return f64::NAN;
    }
    if x.is_infinite() {
        return f64::INFINITY;
    }
    let mut x = x;
    let mut shift = 0.0;
    while x < 6.0 {
        shift -= 1.0 / x;
        x += 1.0;
    }
    let r = 1.0 / x;
    let r2 = r * r;
    // Bernoulli terms B_2n / (2n), innermost last.
    let series = r2
        * (1.0 / 12.0
            - r2 * (1.0 / 120.0
                - r2 * (1.0 / 252.0
                    - r2 * (1.0 / 240.0
                        - r2 * (1.0 / 132.0
                            - r2 * (691.0 / 32760.0 - r2 * (1.0 / 12.0 - r2 * 3617.0 / 8160.0)))))));
    shift + x.ln() - 0.5 * r - series
}

/// exp(ψ(x)), which behaves like x − 0.5 for x > 1.
pub fn exp_digamma(x: f64) -> f64 {
    digamma(x).exp()
}
