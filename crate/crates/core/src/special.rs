//! Special functions used by the Gamma and Student-t machinery.
//!
//! `ln_gamma` and `digamma` are provided by `statrs`; `trigamma` (needed for
//! gradients of the digamma terms) is computed here by upward recurrence
//! followed by the asymptotic expansion.

pub use statrs::function::gamma::{digamma, ln_gamma};

/// Trigamma function ψ₁(x) = d²/dx² log Γ(x), for x > 0.
pub fn trigamma(x: f64) -> f64 {
    if !(x > 0.0) {
        return f64::NAN;
    }
    let mut acc = 0.0;
    let mut z = x;
    while z < 10.0 {
        acc += 1.0 / (z * z);
        z += 1.0;
    }
    let inv = 1.0 / z;
    let inv2 = inv * inv;
    // 1/z + 1/2z² + Σ B_{2k} / z^{2k+1}
    let series = inv
        * (1.0
            + inv
                * (0.5
                    + inv
                        * (1.0 / 6.0
                            + inv2
                                * (-1.0 / 30.0
                                    + inv2 * (1.0 / 42.0 + inv2 * (-1.0 / 30.0 + inv2 * (5.0 / 66.0)))))));
    acc + series
}

#[cfg(test)]
mod tests {
    use super::*;

    // (x, lnΓ(x), ψ(x), ψ₁(x)) from a 40-digit arbitrary-precision evaluation.
    const REFERENCE: &[(f64, f64, f64, f64)] = &[
        (0.001, 6.9071788853838536825, -1000.5755719318103005, 1000001.642533195869),
        (0.01, 4.5994798780420217225, -100.5608854578686745, 10001.62121352831322),
        (0.5, 0.57236494292470008707, -1.9635100260214234794, 4.9348022005446793094),
        (1.0, 0.0, -0.57721566490153286061, 1.6449340668482264365),
        (2.5, 0.28468287047291915963, 0.70315664064524318723, 0.49035775610023486497),
        (7.0, 6.5792512120101009951, 1.8727843350984671394, 0.15354517795933754758),
        (33.3, 82.603723581654952928, 3.4904672385202428639, 0.030485444095338885149),
        (1000.0, 5905.2204232091812118, 6.9072551956488120521, 0.0010005001666666333334),
        (123456.5, 1323898.6306627370404, 11.72364009626813472, 8.1000518402874905231e-6),
        (1000000.0, 12815504.56914761166, 13.815510057964190771, 1.0000005000001666667e-6),
    ];

    fn rel(a: f64, b: f64) -> f64 {
        if b == 0.0 {
            a.abs()
        } else {
            ((a - b) / b).abs()
        }
    }

    #[test]
    fn matches_high_precision_reference() {
        for &(x, lg, dg, tg) in REFERENCE {
            assert!(rel(ln_gamma(x), lg) < 1e-10 || (ln_gamma(x) - lg).abs() < 1e-13, "lnΓ({x})");
            assert!(rel(digamma(x), dg) < 1e-10, "ψ({x}) = {} vs {dg}", digamma(x));
            assert!(rel(trigamma(x), tg) < 1e-10, "ψ₁({x}) = {} vs {tg}", trigamma(x));
        }
    }

    #[test]
    fn trigamma_is_derivative_of_digamma() {
        for &x in &[0.3, 1.7, 4.0, 19.0, 250.0] {
            let h = 1e-5 * x;
            let fd = (digamma(x + h) - digamma(x - h)) / (2.0 * h);
            assert!(rel(trigamma(x), fd) < 1e-6, "x={x}");
        }
    }

    #[test]
    fn trigamma_rejects_non_positive() {
        assert!(trigamma(0.0).is_nan());
        assert!(trigamma(-1.0).is_nan());
    }
}
