//! Standard normal CDF, survival function, density and quantile.

use libm::erfc;
use statrs::function::erf::erfc_inv;

use crate::error::{Error, Result};

const SQRT_2: f64 = std::f64::consts::SQRT_2;

/// Φ(x).
pub fn normal_cdf(x: f64) -> f64 {
    0.5 * erfc(-x / SQRT_2)
}

/// 1 − Φ(x), without cancellation in the upper tail.
pub fn normal_sf(x: f64) -> f64 {
    0.5 * erfc(x / SQRT_2)
}

/// Density of N(mean, sd²) at x.
pub fn normal_pdf(x: f64, mean: f64, sd: f64) -> f64 {
    let z = (x - mean) / sd;
    (-0.5 * z * z).exp() / (sd * (2.0 * std::f64::consts::PI).sqrt())
}

/// Φ⁻¹(p) for p in (0, 1).
pub fn normal_quantile(p: f64) -> Result<f64> {
    if !(p > 0.0 && p < 1.0) {
        return Err(Error::Config(format!("quantile probability must lie in (0,1), got {p}")));
    }
    let x = -SQRT_2 * erfc_inv(2.0 * p);
    // One Newton step against the more accurate CDF.
    let d = normal_pdf(x, 0.0, 1.0);
    if d > 0.0 {
        let err = if p < 0.5 { normal_cdf(x) - p } else { (1.0 - p) - normal_sf(x) };
        return Ok(x - err / d);
    }
    Ok(x)
}

/// `Z_{1-β/2}` for a two-sided interval at `level = 1 − β`.
pub fn two_sided_z(level: f64) -> Result<f64> {
    if !(level > 0.0 && level < 1.0) {
        return Err(Error::Config(format!("level must lie in (0,1), got {level}")));
    }
    normal_quantile(1.0 - (1.0 - level) / 2.0)
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    // 40-digit reference values, rounded to 17 significant digits.
    const CDF: [(f64, f64); 12] = [
        (-8.0, 6.2209605742717841e-16),
        (-5.0, 2.8665157187919391e-7),
        (-3.5, 0.00023262907903552504),
        (-1.959963984540054, 0.025000000000000011),
        (-1.0, 0.15865525393145705),
        (-0.25, 0.40129367431707628),
        (0.0, 0.5),
        (0.5, 0.6914624612740131),
        (1.2815515655446004, 0.89999999999999998),
        (2.5, 0.99379033467422386),
        (4.0, 0.99996832875816688),
        (7.0, 0.99999999999872019),
    ];

    const QUANTILE: [(f64, f64); 12] = [
        (1e-10, -6.3613409024040562),
        (1e-06, -4.753424308822899),
        (0.001, -3.0902323061678135),
        (0.025, -1.9599639845400542),
        (0.1, -1.2815515655446004),
        (0.3, -0.52440051270804082),
        (0.5, 0.0),
        (0.75, 0.67448975019608174),
        (0.95, 1.6448536269514723),
        (0.975, 1.9599639845400539),
        (0.999, 3.0902323061678133),
        (0.999999, 4.7534243088170878),
    ];

    #[test]
    fn cdf_matches_reference() {
        for (x, want) in CDF {
            assert!((normal_cdf(x) - want).abs() < 1e-12, "x = {x}");
        }
        assert_eq!(normal_cdf(0.0), 0.5);
    }

    #[test]
    fn quantile_matches_reference() {
        for (p, want) in QUANTILE {
            assert!((normal_quantile(p).unwrap() - want).abs() < 1e-12, "p = {p}");
        }
        assert_eq!(normal_quantile(0.5).unwrap(), 0.0);
        assert!((normal_quantile(0.975).unwrap() - 1.959964).abs() < 1e-5);
    }

    #[test]
    fn quantile_domain() {
        for p in [0.0, 1.0, -0.1, 1.5, f64::NAN] {
            assert!(normal_quantile(p).is_err());
        }
    }

    #[test]
    fn pdf_peak() {
        let s = 0.05;
        assert!((normal_pdf(0.3, 0.3, s) - 1.0 / (s * (2.0 * std::f64::consts::PI).sqrt())).abs() < 1e-12);
    }

    #[test]
    fn sf_complements_cdf() {
        for (x, want) in CDF {
            assert!((normal_sf(-x) - want).abs() < 1e-12);
        }
    }

    proptest! {
        #[test]
        fn cdf_inverts_quantile(p in 1e-6f64..(1.0 - 1e-6)) {
            let x = normal_quantile(p).unwrap();
            prop_assert!((normal_cdf(x) - p).abs() < 1e-7);
        }

        #[test]
        fn cdf_monotone(a in -10.0f64..10.0, d in 0.0f64..5.0) {
            prop_assert!(normal_cdf(a) <= normal_cdf(a + d));
        }
    }
}
