//! Distributional utilities: the standard-normal CDF and its inverse, and a
//! one-sample Kolmogorov-Smirnov normality test.

use serde::{Deserialize, Serialize};
use thiserror::Error;

/// Verdict threshold for [`ks_normality`]: a sample is reported as consistent
/// with a normal distribution when its p-value exceeds this.
pub const NORMALITY_ALPHA: f64 = 0.05;

/// Minimum sample size accepted by [`ks_normality`].
pub const KS_MIN_SAMPLE: usize = 8;

pub const LILLIEFORS_NOTE: &str = "mean and standard deviation are estimated from the sample; \
the asymptotic Kolmogorov p-value does not account for this (no Lilliefors correction) and \
is therefore larger than the exact p-value for a fitted normal";

#[derive(Debug, Error, PartialEq)]
pub enum StatsError {
    #[error("sample has {n} values, at least {min} are required")]
    TooSmall { n: usize, min: usize },
    #[error("sample has zero variance")]
    ZeroVariance,
    #[error("sample contains a non-finite value at index {0}")]
    NonFinite(usize),
}

const SQRT_32: f64 = 5.656_854_249_492_380_195_206_754_896_838;
const FRAC_1_SQRT_2PI: f64 = 0.398_942_280_401_432_677_939_946_059_934;

// Rational Chebyshev coefficients from W. J. Cody, "Rational Chebyshev
// approximations for the error function" (Math. Comp. 1969), in the form used
// for the normal CDF. Absolute error is at the level of f64 rounding.
const A: [f64; 5] = [
    2.235_252_035_460_683_7,
    161.028_231_068_555_87,
    1_067.689_485_460_370_9,
    18_154.981_253_343_56,
    0.065_682_337_918_207_45,
];
const B: [f64; 4] = [
    47.202_581_904_688_245,
    976.098_551_737_776_7,
    10_260.932_208_618_979,
    45_507.789_335_026_73,
];
const C: [f64; 9] = [
    0.398_941_512_088_134_66,
    8.883_149_794_388_377,
    93.506_656_132_177_85,
    597.270_276_394_800_2,
    2_494.537_585_290_372_6,
    6_848.190_450_536_283,
    11_602.651_437_647_35,
    9_842.714_838_383_978,
    1.076_557_677_372_019_2e-8,
];
const D: [f64; 8] = [
    22.266_688_044_328_117,
    235.387_901_782_625,
    1_519.377_599_407_554_7,
    6_485.558_298_266_761,
    18_615.571_640_885_097,
    34_900.952_721_145_98,
    38_912.003_286_093_27,
    19_685.429_676_859_992,
];
const P: [f64; 6] = [
    0.215_898_534_057_957,
    0.127_401_161_160_247_36,
    0.022_235_277_870_649_807,
    0.001_421_619_193_227_893_4,
    2.911_287_495_116_879_2e-5,
    0.023_073_441_764_940_174,
];
const Q: [f64; 5] = [
    1.284_260_096_144_911,
    0.468_238_212_480_865_1,
    0.065_988_137_868_928_56,
    0.003_782_396_332_027_582_4,
    7.297_515_550_839_662e-5,
];

/// Standard-normal CDF Φ(x).
///
/// Uses Cody's three-region rational approximation: a central rational
/// function for |x| ≤ 0.674, and `exp(-x²/2)` times a rational tail factor
/// beyond that. The exponent is split as `x = xsq + (x - xsq)` with `xsq` a
/// multiple of 1/16 so `exp(-x²/2)` loses no precision in the tails.
pub fn normal_cdf(x: f64) -> f64 {
    if x.is_nan() {
        return f64::NAN;
    }
    let y = x.abs();
    if y <= 0.674_489_75 {
        let xsq = if y > f64::EPSILON / 2.0 { x * x } else { 0.0 };
        let mut num = A[4] * xsq;
        let mut den = xsq;
        for i in 0..3 {
            num = (num + A[i]) * xsq;
            den = (den + B[i]) * xsq;
        }
        return 0.5 + x * (num + A[3]) / (den + B[3]);
    }

    let tail_factor = if y <= SQRT_32 {
        let mut num = C[8] * y;
        let mut den = y;
        for i in 0..7 {
            num = (num + C[i]) * y;
            den = (den + D[i]) * y;
        }
        (num + C[7]) / (den + D[7])
    } else {
        let inv_sq = 1.0 / (x * x);
        let mut num = P[5] * inv_sq;
        let mut den = inv_sq;
        for i in 0..4 {
            num = (num + P[i]) * inv_sq;
            den = (den + Q[i]) * inv_sq;
        }
        let r = inv_sq * (num + P[4]) / (den + Q[4]);
        (FRAC_1_SQRT_2PI - r) / y
    };

    let xsq = (y * 16.0).trunc() / 16.0;
    let del = (y - xsq) * (y + xsq);
    let tail = (-xsq * xsq * 0.5).exp() * (-del * 0.5).exp() * tail_factor;
    if x > 0.0 {
        1.0 - tail
    } else {
        tail
    }
}

/// Standard-normal density.
pub fn normal_pdf(x: f64) -> f64 {
    FRAC_1_SQRT_2PI * (-0.5 * x * x).exp()
}

/// Inverse of [`normal_cdf`].
///
/// Acklam's rational initial guess followed by two Halley steps against
/// `normal_cdf`, which brings the result to near machine precision.
/// Returns ±∞ at 0 and 1 and NaN outside [0, 1].
pub fn normal_quantile(p: f64) -> f64 {
    if !(0.0..=1.0).contains(&p) || p.is_nan() {
        return f64::NAN;
    }
    if p == 0.0 {
        return f64::NEG_INFINITY;
    }
    if p == 1.0 {
        return f64::INFINITY;
    }

    const A: [f64; 6] = [
        -3.969_683_028_665_376e1,
        2.209_460_984_245_205e2,
        -2.759_285_104_469_687e2,
        1.383_577_518_672_69e2,
        -3.066_479_806_614_716e1,
        2.506_628_277_459_239,
    ];
    const B: [f64; 5] = [
        -5.447_609_879_822_406e1,
        1.615_858_368_580_409e2,
        -1.556_989_798_598_866e2,
        6.680_131_188_771_972e1,
        -1.328_068_155_288_572e1,
    ];
    const C: [f64; 6] = [
        -7.784_894_002_430_293e-3,
        -3.223_964_580_411_365e-1,
        -2.400_758_277_161_838,
        -2.549_732_539_343_734,
        4.374_664_141_464_968,
        2.938_163_982_698_783,
    ];
    const D: [f64; 4] = [
        7.784_695_709_041_462e-3,
        3.224_671_290_700_398e-1,
        2.445_134_137_142_996,
        3.754_408_661_907_416,
    ];
    const LOW: f64 = 0.024_25;

    let mut x = if p < LOW {
        let q = (-2.0 * p.ln()).sqrt();
        (((((C[0] * q + C[1]) * q + C[2]) * q + C[3]) * q + C[4]) * q + C[5])
            / ((((D[0] * q + D[1]) * q + D[2]) * q + D[3]) * q + 1.0)
    } else if p <= 1.0 - LOW {
        let q = p - 0.5;
        let r = q * q;
        (((((A[0] * r + A[1]) * r + A[2]) * r + A[3]) * r + A[4]) * r + A[5]) * q
            / (((((B[0] * r + B[1]) * r + B[2]) * r + B[3]) * r + B[4]) * r + 1.0)
    } else {
        let q = (-2.0 * (1.0 - p).ln()).sqrt();
        -(((((C[0] * q + C[1]) * q + C[2]) * q + C[3]) * q + C[4]) * q + C[5])
            / ((((D[0] * q + D[1]) * q + D[2]) * q + D[3]) * q + 1.0)
    };

    for _ in 0..2 {
        let e = normal_cdf(x) - p;
        let u = e / normal_pdf(x);
        if !u.is_finite() {
            break;
        }
        x -= u / (1.0 + 0.5 * x * u);
    }
    x
}

/// Survival function of the limiting Kolmogorov distribution,
/// `P(K > lambda)` where `K = sup |B(t)|` for a Brownian bridge `B`.
pub fn kolmogorov_sf(lambda: f64) -> f64 {
    if lambda <= 0.0 {
        return 1.0;
    }
    if lambda < 1.18 {
        // Jacobi-theta form of the CDF converges fast for small lambda.
        let scale = (2.0 * std::f64::consts::PI).sqrt() / lambda;
        let w = std::f64::consts::PI * std::f64::consts::PI / (8.0 * lambda * lambda);
        let mut cdf = 0.0;
        for k in 1..=100 {
            let m = (2 * k - 1) as f64;
            let term = (-m * m * w).exp();
            cdf += term;
            if term < 1e-17 {
                break;
            }
        }
        (1.0 - scale * cdf).clamp(0.0, 1.0)
    } else {
        let mut sum = 0.0;
        let mut sign = 1.0;
        for k in 1..=100 {
            let kf = k as f64;
            let term = (-2.0 * kf * kf * lambda * lambda).exp();
            sum += sign * term;
            if term < 1e-17 {
                break;
            }
            sign = -sign;
        }
        (2.0 * sum).clamp(0.0, 1.0)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct KsResult {
    /// Supremum gap between the empirical CDF and the fitted normal CDF.
    pub statistic: f64,
    /// Asymptotic p-value, `kolmogorov_sf(sqrt(n) * statistic)`.
    pub p_value: f64,
    pub n: usize,
    pub fitted_mean: f64,
    pub fitted_std: f64,
    pub consistent_with_normal: bool,
    pub lilliefors_note: String,
}

/// Sample mean and standard deviation with the `n - 1` denominator.
pub fn mean_and_std(sample: &[f64]) -> (f64, f64) {
    let n = sample.len() as f64;
    let mean = sample.iter().sum::<f64>() / n;
    let ss: f64 = sample.iter().map(|x| (x - mean) * (x - mean)).sum();
    (mean, (ss / (n - 1.0)).sqrt())
}

/// One-sample KS test of `sample` against a normal distribution whose mean
/// and standard deviation are fitted from the sample itself.
pub fn ks_normality(sample: &[f64]) -> Result<KsResult, StatsError> {
    let n = sample.len();
    if n < KS_MIN_SAMPLE {
        return Err(StatsError::TooSmall { n, min: KS_MIN_SAMPLE });
    }
    if let Some(i) = sample.iter().position(|x| !x.is_finite()) {
        return Err(StatsError::NonFinite(i));
    }
    let (mean, std) = mean_and_std(sample);
    if std <= 0.0 || !std.is_finite() || sample.iter().all(|&x| x == sample[0]) {
        return Err(StatsError::ZeroVariance);
    }

    let mut sorted = sample.to_vec();
    sorted.sort_by(f64::total_cmp);
    let nf = n as f64;
    let statistic = sorted
        .iter()
        .enumerate()
        .map(|(i, &x)| {
            let f = normal_cdf((x - mean) / std);
            let above = (i + 1) as f64 / nf - f;
            let below = f - i as f64 / nf;
            above.max(below)
        })
        .fold(0.0_f64, f64::max)
        .clamp(0.0, 1.0);

    let p_value = kolmogorov_sf(nf.sqrt() * statistic);
    Ok(KsResult {
        statistic,
        p_value,
        n,
        fitted_mean: mean,
        fitted_std: std,
        consistent_with_normal: p_value > NORMALITY_ALPHA,
        lilliefors_note: LILLIEFORS_NOTE.to_string(),
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;
    use proptest::prelude::*;

    // Reference values from a 30-digit evaluation of 0.5 * erfc(-x / sqrt(2)).
    const PHI_TABLE: [(f64, f64); 9] = [
        (0.0, 0.5),
        (1.0, 0.841_344_746_068_542_9),
        (-1.5, 0.066_807_201_268_858_07),
        (1.96, 0.975_002_104_851_779_5),
        (-2.0, 0.022_750_131_948_179_2),
        (1.5, 0.933_192_798_731_142),
        (2.0, 0.977_249_868_051_820_8),
        (-6.0, 9.865_876_450_376_98e-10),
        (0.3, 0.617_911_422_188_952_7),
    ];

    #[test]
    fn normal_cdf_matches_reference_table() {
        for (x, expected) in PHI_TABLE {
            assert_abs_diff_eq!(normal_cdf(x), expected, epsilon = 1e-12);
        }
    }

    #[test]
    fn normal_cdf_examples() {
        assert_eq!(normal_cdf(0.0), 0.5);
        assert_abs_diff_eq!(normal_cdf(1.96), 0.9750, epsilon = 1e-4);
        assert_abs_diff_eq!(normal_cdf(-2.0), 0.02275, epsilon = 1e-5);
    }

    #[test]
    fn normal_cdf_extreme_tails() {
        assert_eq!(normal_cdf(-40.0), 0.0);
        assert_eq!(normal_cdf(40.0), 1.0);
        assert!(normal_cdf(-10.0) > 0.0);
    }

    #[test]
    fn quantile_inverts_cdf() {
        for p in [1e-10, 1e-4, 0.01, 0.02425, 0.3, 0.5, 0.8, 0.975, 0.9999] {
            assert_abs_diff_eq!(normal_cdf(normal_quantile(p)), p, epsilon = 1e-14);
        }
        assert_abs_diff_eq!(normal_quantile(0.975), 1.959_963_984_540_054, epsilon = 1e-12);
        assert!(normal_quantile(0.0).is_infinite());
        assert!(normal_quantile(1.5).is_nan());
    }

    #[test]
    fn kolmogorov_sf_reference_points() {
        // scipy.special.kolmogorov
        assert_abs_diff_eq!(kolmogorov_sf(0.5), 0.963_945_243_664_875_5, epsilon = 1e-12);
        assert_abs_diff_eq!(kolmogorov_sf(1.0), 0.269_999_671_677_354_56, epsilon = 1e-12);
        assert_abs_diff_eq!(kolmogorov_sf(1.36), 0.049_485_876_755_377_876, epsilon = 1e-12);
        assert_abs_diff_eq!(kolmogorov_sf(2.0), 6.709_252_557_796_953e-4, epsilon = 1e-14);
        assert_eq!(kolmogorov_sf(0.0), 1.0);
        // both branches agree at the switch point
        assert_abs_diff_eq!(kolmogorov_sf(1.18 - 1e-12), kolmogorov_sf(1.18), epsilon = 1e-12);
    }

    #[test]
    fn ks_rejects_small_and_constant_samples() {
        assert_eq!(
            ks_normality(&[1.0; 5]),
            Err(StatsError::TooSmall { n: 5, min: 8 })
        );
        assert_eq!(ks_normality(&[0.4; 20]), Err(StatsError::ZeroVariance));
        let mut s = vec![0.1, 0.2, 0.3, 0.4, 0.5, 0.6, 0.7, 0.8];
        s[3] = f64::NAN;
        assert_eq!(ks_normality(&s), Err(StatsError::NonFinite(3)));
    }

    #[test]
    fn ks_quantile_sample_is_consistent() {
        let n = 100;
        let sample: Vec<f64> = (0..n)
            .map(|i| normal_quantile((i as f64 + 0.5) / n as f64))
            .collect();
        let r = ks_normality(&sample).unwrap();
        assert!(r.statistic < 0.03, "statistic {}", r.statistic);
        assert!(r.p_value > 0.05);
        assert!(r.consistent_with_normal);
        assert!(!r.lilliefors_note.is_empty());
    }

    proptest! {
        #[test]
        fn ks_statistic_affine_invariant(
            sample in prop::collection::vec(-50.0f64..50.0, 8..60),
            scale in 0.1f64..20.0,
            shift in -100.0f64..100.0,
        ) {
            prop_assume!(crate::stats::mean_and_std(&sample).1 > 1e-3);
            let a = ks_normality(&sample).unwrap();
            let moved: Vec<f64> = sample.iter().map(|x| x * scale + shift).collect();
            let b = ks_normality(&moved).unwrap();
            prop_assert!((a.statistic - b.statistic).abs() < 1e-9);
            prop_assert!((0.0..=1.0).contains(&a.statistic));
            prop_assert!((0.0..=1.0).contains(&a.p_value));
        }

        #[test]
        fn kolmogorov_sf_is_monotone(a in 0.0f64..4.0, b in 0.0f64..4.0) {
            let (lo, hi) = if a < b { (a, b) } else { (b, a) };
            prop_assert!(kolmogorov_sf(lo) >= kolmogorov_sf(hi) - 1e-15);
        }

        #[test]
        fn normal_cdf_symmetric(x in -12.0f64..12.0) {
            prop_assert!((normal_cdf(x) + normal_cdf(-x) - 1.0).abs() < 1e-15);
        }
    }
}
