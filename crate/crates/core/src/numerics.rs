//! Normal-distribution special functions and the bivariate Gaussian copula.
//!
//! The bivariate normal CDF follows Genz's `BVND` routine (A. Genz, "Numerical
//! computation of rectangular bivariate and trivariate normal and t
//! probabilities", Statistics and Computing 14, 2004), itself a refinement of
//! Drezner & Wesolowsky (1990). It reduces the probability to a single
//! integral over the correlation and applies 6/12/20-point Gauss-Legendre
//! rules depending on `|rho|`; for `|rho| >= 0.925` it switches to an
//! asymptotic expansion of the integrand. Documented absolute accuracy is
//! about 1e-15.
//!
//! The normal quantile is Wichura's AS241 (`PPND16`), accurate to roughly
//! 1e-16 relative.
//!
//! Boundary arguments (`u` or `v` equal to 0 or 1) are rejected here. Callers
//! that need clamping do it themselves.

use std::f64::consts::{FRAC_1_SQRT_2, PI};

use thiserror::Error;

const LN_SQRT_2PI: f64 = 0.918_938_533_204_672_8;
const INV_SQRT_2PI: f64 = 0.398_942_280_401_432_7;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum NumericsError {
    #[error("correlation {0} is outside the open interval (-1, 1)")]
    Correlation(f64),
    #[error("argument {name} = {value} is outside the open interval (0, 1)")]
    Domain { name: &'static str, value: f64 },
}

/// Copula correlation parameter, strictly inside (-1, 1).
#[derive(Debug, Clone, Copy, PartialEq, PartialOrd)]
pub struct Correlation(f64);

impl Correlation {
    pub fn new(rho: f64) -> Result<Self, NumericsError> {
        if rho.is_finite() && rho.abs() < 1.0 {
            Ok(Self(rho))
        } else {
            Err(NumericsError::Correlation(rho))
        }
    }

    pub const fn zero() -> Self {
        Self(0.0)
    }

    #[inline]
    pub fn value(self) -> f64 {
        self.0
    }
}

impl TryFrom<f64> for Correlation {
    type Error = NumericsError;

    fn try_from(rho: f64) -> Result<Self, Self::Error> {
        Self::new(rho)
    }
}

#[inline]
pub fn normal_pdf(z: f64) -> f64 {
    INV_SQRT_2PI * (-0.5 * z * z).exp()
}

#[inline]
pub fn normal_log_pdf(z: f64) -> f64 {
    -0.5 * z * z - LN_SQRT_2PI
}

/// Standard normal CDF, `0.5 * erfc(-z / sqrt(2))`.
#[inline]
pub fn normal_cdf(z: f64) -> f64 {
    0.5 * libm::erfc(-z * FRAC_1_SQRT_2)
}

/// Standard normal quantile for `p` in the open unit interval.
pub fn normal_quantile(p: f64) -> Result<f64, NumericsError> {
    if !(p > 0.0 && p < 1.0) {
        return Err(NumericsError::Domain { name: "p", value: p });
    }
    Ok(ppnd16(p))
}

/// Quantile of the smaller of two complementary probabilities, signed so the
/// result equals `Phi^{-1}(p)` where `p + q = 1`.
///
/// Lets callers pass an accurately computed upper tail instead of `1 - p`.
pub(crate) fn normal_quantile_pair(p: f64, q: f64) -> f64 {
    if p <= q {
        ppnd16(p)
    } else {
        -ppnd16(q)
    }
}

fn ppnd16(p: f64) -> f64 {
    const A: [f64; 8] = [
        3.387_132_872_796_366_608,
        1.331_416_678_917_843_774_5e2,
        1.971_590_950_306_551_442_7e3,
        1.373_169_376_550_946_112_5e4,
        4.592_195_393_154_987_145_7e4,
        6.726_577_092_700_870_085_3e4,
        3.343_057_558_358_812_810_5e4,
        2.509_080_928_730_122_672_7e3,
    ];
    const B: [f64; 8] = [
        1.0,
        4.231_333_070_160_091_125_2e1,
        6.871_870_074_920_579_083e2,
        5.394_196_021_424_751_107_7e3,
        2.121_379_430_158_659_586_7e4,
        3.930_789_580_009_271_061e4,
        2.872_908_573_572_194_267_4e4,
        5.226_495_278_852_854_561e3,
    ];
    const C: [f64; 8] = [
        1.423_437_110_749_683_577_34,
        4.630_337_846_156_545_295_9,
        5.769_497_221_460_691_405_5,
        3.647_848_324_763_204_605_04,
        1.270_458_252_452_368_382_58,
        2.417_807_251_774_506_117_7e-1,
        2.272_384_498_926_918_458_33e-2,
        7.745_450_142_783_414_076_4e-4,
    ];
    const D: [f64; 8] = [
        1.0,
        2.053_191_626_637_758_821_87,
        1.676_384_830_183_803_849_4,
        6.897_673_349_851_000_045_5e-1,
        1.481_039_764_274_800_745_9e-1,
        1.519_866_656_361_645_719_66e-2,
        5.475_938_084_995_344_946e-4,
        1.050_750_071_644_416_843_24e-9,
    ];
    const E: [f64; 8] = [
        6.657_904_643_501_103_777_2,
        5.463_784_911_164_114_369_9,
        1.784_826_539_917_291_335_8,
        2.965_605_718_285_048_912_3e-1,
        2.653_218_952_657_612_309_3e-2,
        1.242_660_947_388_078_438_6e-3,
        2.711_555_568_743_487_578_15e-5,
        2.010_334_399_292_288_132_65e-7,
    ];
    const F: [f64; 8] = [
        1.0,
        5.998_322_065_558_879_376_9e-1,
        1.369_298_809_227_358_053_1e-1,
        1.487_536_129_085_061_485_25e-2,
        7.868_691_311_456_132_591e-4,
        1.846_318_317_510_054_681_8e-5,
        1.421_511_758_316_445_888_7e-7,
        2.044_263_103_389_939_785_64e-15,
    ];

    fn poly(c: &[f64; 8], x: f64) -> f64 {
        c.iter().rev().fold(0.0, |acc, &ci| acc * x + ci)
    }

    let q = p - 0.5;
    if q.abs() <= 0.425 {
        let r = 0.180_625 - q * q;
        return q * poly(&A, r) / poly(&B, r);
    }
    let tail = if q < 0.0 { p } else { 1.0 - p };
    let mut r = (-tail.ln()).sqrt();
    let x = if r <= 5.0 {
        r -= 1.6;
        poly(&C, r) / poly(&D, r)
    } else {
        r -= 5.0;
        poly(&E, r) / poly(&F, r)
    };
    if q < 0.0 {
        -x
    } else {
        x
    }
}

// Gauss-Legendre abscissae (negative half) and weights for 6, 12 and 20 points.
const GL_X: [&[f64]; 3] = [
    &[-0.932_469_514_203_152_2, -0.661_209_386_466_264_7, -0.238_619_186_083_197],
    &[
        -0.981_560_634_246_719_1,
        -0.904_117_256_370_475,
        -0.769_902_674_194_305,
        -0.587_317_954_286_617_1,
        -0.367_831_498_998_180_2,
        -0.125_233_408_511_469_2,
    ],
    &[
        -0.993_128_599_185_094_9,
        -0.963_971_927_277_913_8,
        -0.912_234_428_251_325_9,
        -0.839_116_971_822_218_8,
        -0.746_331_906_460_150_8,
        -0.636_053_680_726_515,
        -0.510_867_001_950_827_1,
        -0.373_706_088_715_419_6,
        -0.227_785_851_141_645_1,
        -0.076_526_521_133_497_33,
    ],
];
const GL_W: [&[f64]; 3] = [
    &[0.171_324_492_379_170_5, 0.360_761_573_048_138_4, 0.467_913_934_572_690_4],
    &[
        0.047_175_336_386_511_77,
        0.106_939_325_995_318_3,
        0.160_078_328_543_346_4,
        0.203_167_426_723_065_9,
        0.233_492_536_538_354_7,
        0.249_147_045_813_402_9,
    ],
    &[
        0.017_614_007_139_152_12,
        0.040_601_429_800_386_94,
        0.062_672_048_334_109_06,
        0.083_276_741_576_704_75,
        0.101_930_119_817_240_4,
        0.118_194_531_961_518_4,
        0.131_688_638_449_176_6,
        0.142_096_109_318_382_1,
        0.149_172_986_472_603_7,
        0.152_753_387_130_725_9,
    ],
];

/// Upper orthant probability `P(X > dh, Y > dk)` for a standard bivariate
/// normal with correlation `r`; finite arguments only.
fn bvnu(dh: f64, dk: f64, r: f64) -> f64 {
    let two_pi = 2.0 * PI;
    let ng = if r.abs() < 0.3 {
        0
    } else if r.abs() < 0.75 {
        1
    } else {
        2
    };
    let (xs, ws) = (GL_X[ng], GL_W[ng]);
    let h = dh;
    let mut k = dk;
    let mut hk = h * k;
    let mut bvn = 0.0;

    if r.abs() < 0.925 {
        let hs = 0.5 * (h * h + k * k);
        let asr = r.asin();
        for (&x, &w) in xs.iter().zip(ws) {
            for sign in [-1.0, 1.0] {
                let sn = (asr * (sign * x + 1.0) * 0.5).sin();
                bvn += w * ((sn * hk - hs) / (1.0 - sn * sn)).exp();
            }
        }
        return bvn * asr / (2.0 * two_pi) + normal_cdf(-h) * normal_cdf(-k);
    }

    if r < 0.0 {
        k = -k;
        hk = -hk;
    }
    if r.abs() < 1.0 {
        let as_ = (1.0 - r) * (1.0 + r);
        let mut a = as_.sqrt();
        let bs = (h - k) * (h - k);
        let c = (4.0 - hk) / 8.0;
        let d = (12.0 - hk) / 16.0;
        bvn = a
            * (-(bs / as_ + hk) / 2.0).exp()
            * (1.0 - c * (bs - as_) * (1.0 - d * bs / 5.0) / 3.0 + c * d * as_ * as_ / 5.0);
        if hk > -160.0 {
            let b = bs.sqrt();
            bvn -= (-hk / 2.0).exp()
                * two_pi.sqrt()
                * normal_cdf(-b / a)
                * b
                * (1.0 - c * bs * (1.0 - d * bs / 5.0) / 3.0);
        }
        a /= 2.0;
        for (&x, &w) in xs.iter().zip(ws) {
            for sign in [-1.0, 1.0] {
                let mut xs2 = a * (sign * x + 1.0);
                xs2 *= xs2;
                let rs = (1.0 - xs2).sqrt();
                bvn += a
                    * w
                    * ((-bs / (2.0 * xs2) - hk / (1.0 + rs)).exp() / rs
                        - (-(bs / xs2 + hk) / 2.0).exp() * (1.0 + c * xs2 * (1.0 + d * xs2)));
            }
        }
        bvn = -bvn / two_pi;
    }
    if r > 0.0 {
        bvn + normal_cdf(-h.max(k))
    } else {
        -bvn + (normal_cdf(-h) - normal_cdf(-k)).max(0.0)
    }
}

/// `P(Z1 <= a, Z2 <= b)` for a standard bivariate normal with correlation `rho`.
///
/// Infinite limits are handled exactly; finite ones go through [`bvnu`].
pub fn bvn_cdf(a: f64, b: f64, rho: Correlation) -> f64 {
    if a == f64::NEG_INFINITY || b == f64::NEG_INFINITY {
        return 0.0;
    }
    if a == f64::INFINITY {
        return normal_cdf(b);
    }
    if b == f64::INFINITY {
        return normal_cdf(a);
    }
    bvnu(-a, -b, rho.value()).clamp(0.0, 1.0)
}

/// Bivariate standard normal density.
#[inline]
pub fn bvn_pdf(z1: f64, z2: f64, rho: f64) -> f64 {
    let s2 = 1.0 - rho * rho;
    (-(z1 * z1 - 2.0 * rho * z1 * z2 + z2 * z2) / (2.0 * s2)).exp() / (2.0 * PI * s2.sqrt())
}

fn check_unit(name: &'static str, value: f64) -> Result<(), NumericsError> {
    if value > 0.0 && value < 1.0 {
        Ok(())
    } else {
        Err(NumericsError::Domain { name, value })
    }
}

/// Log Gaussian copula density at normal scores `z1 = Phi^{-1}(u)`, `z2 = Phi^{-1}(v)`.
#[inline]
pub fn copula_log_density_z(z1: f64, z2: f64, rho: f64) -> f64 {
    let s2 = 1.0 - rho * rho;
    -0.5 * s2.ln() - (rho * rho * (z1 * z1 + z2 * z2) - 2.0 * rho * z1 * z2) / (2.0 * s2)
}

/// Gaussian copula density `c(u, v)`.
pub fn copula_density(u: f64, v: f64, rho: Correlation) -> Result<f64, NumericsError> {
    check_unit("u", u)?;
    check_unit("v", v)?;
    let z1 = ppnd16(u);
    let z2 = ppnd16(v);
    Ok(copula_log_density_z(z1, z2, rho.value()).exp())
}

/// h-function on the normal-score scale: `Phi((zu - rho * zv) / sqrt(1 - rho^2))`.
#[inline]
pub fn hfunc_z(zu: f64, zv: f64, rho: f64) -> f64 {
    normal_cdf((zu - rho * zv) / (1.0 - rho * rho).sqrt())
}

/// Conditional copula CDF `dC(u, v)/dv`.
pub fn copula_hfunc(u: f64, v: f64, rho: Correlation) -> Result<f64, NumericsError> {
    check_unit("u", u)?;
    check_unit("v", v)?;
    Ok(hfunc_z(ppnd16(u), ppnd16(v), rho.value()))
}

/// `log Phi(z)` without underflow for moderately negative `z`.
pub fn normal_log_cdf(z: f64) -> f64 {
    if z > -30.0 {
        normal_cdf(z).ln()
    } else {
        // Asymptotic Mills-ratio expansion.
        let z2 = z * z;
        -0.5 * z2 - LN_SQRT_2PI - (-z).ln() + (1.0 - 1.0 / z2 + 3.0 / (z2 * z2)).ln()
    }
}
