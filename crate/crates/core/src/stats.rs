//! Two-sample t-tests, one-way ANOVA, and the special functions behind
//! their exact p-values.

use std::fmt;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

const LANCZOS_G: f64 = 7.0;
const LANCZOS: [f64; 9] = [
    0.999_999_999_999_809_9,
    676.520_368_121_885_1,
    -1_259.139_216_722_402_8,
    771.323_428_777_653_1,
    -176.615_029_162_140_6,
    12.507_343_278_686_905,
    -0.138_571_095_265_720_12,
    9.984_369_578_019_572e-6,
    1.505_632_735_149_311_6e-7,
];

/// `ln Γ(x)` for `x > 0` (Lanczos, g = 7).
pub fn ln_gamma(x: f64) -> f64 {
    if x < 0.5 {
        // Reflection: Γ(x) Γ(1 - x) = π / sin(πx).
        let pi = std::f64::consts::PI;
        return (pi / (pi * x).sin()).ln() - ln_gamma(1.0 - x);
    }
    let x = x - 1.0;
    let mut acc = LANCZOS[0];
    for (i, c) in LANCZOS.iter().enumerate().skip(1) {
        acc += c / (x + i as f64);
    }
    let t = x + LANCZOS_G + 0.5;
    0.5 * (2.0 * std::f64::consts::PI).ln() + (x + 0.5) * t.ln() - t + acc.ln()
}

fn ln_beta(a: f64, b: f64) -> f64 {
    ln_gamma(a) + ln_gamma(b) - ln_gamma(a + b)
}

/// Continued fraction for the incomplete beta (modified Lentz).
fn beta_cf(a: f64, b: f64, x: f64) -> f64 {
    const TINY: f64 = 1e-300;
    const EPS: f64 = 1e-16;
    let (qab, qap, qam) = (a + b, a + 1.0, a - 1.0);
    let mut c = 1.0;
    let mut d = 1.0 - qab * x / qap;
    if d.abs() < TINY {
        d = TINY;
    }
    d = 1.0 / d;
    let mut h = d;
    for m in 1..10_000 {
        let m = m as f64;
        let m2 = 2.0 * m;
        let aa = m * (b - m) * x / ((qam + m2) * (a + m2));
        d = 1.0 + aa * d;
        if d.abs() < TINY {
            d = TINY;
        }
        c = 1.0 + aa / c;
        if c.abs() < TINY {
            c = TINY;
        }
        d = 1.0 / d;
        h *= d * c;
        let aa = -(a + m) * (qab + m) * x / ((a + m2) * (qap + m2));
        d = 1.0 + aa * d;
        if d.abs() < TINY {
            d = TINY;
        }
        c = 1.0 + aa / c;
        if c.abs() < TINY {
            c = TINY;
        }
        d = 1.0 / d;
        let del = d * c;
        h *= del;
        if (del - 1.0).abs() < EPS {
            break;
        }
    }
    h
}

/// `I_x(a, b)` given both `x` and `1 - x`, so callers holding an accurate
/// complement do not lose it to cancellation.
fn inc_beta_split(a: f64, b: f64, x: f64, one_minus_x: f64) -> f64 {
    if x <= 0.0 {
        return 0.0;
    }
    if one_minus_x <= 0.0 {
        return 1.0;
    }
    if x > (a + 1.0) / (a + b + 2.0) {
        return 1.0 - inc_beta_split(b, a, one_minus_x, x);
    }
    let front = (a * x.ln() + b * one_minus_x.ln() - ln_beta(a, b)).exp();
    front * beta_cf(a, b, x) / a
}

/// Regularized incomplete beta function `I_x(a, b)`.
pub fn reg_inc_beta(a: f64, b: f64, x: f64) -> Result<f64> {
    if !(a > 0.0 && b > 0.0 && a.is_finite() && b.is_finite()) {
        return Err(Error::config(format!("incomplete beta needs a, b > 0 (got {a}, {b})")));
    }
    if !(0.0..=1.0).contains(&x) {
        return Err(Error::config(format!("incomplete beta needs x in [0, 1] (got {x})")));
    }
    Ok(inc_beta_split(a, b, x, 1.0 - x))
}

/// Two-sided Student-t tail probability `P(|T| >= |t|)`.
pub fn t_sf(t: f64, df: f64) -> f64 {
    if t.is_nan() || !(df > 0.0) {
        return f64::NAN;
    }
    if t.is_infinite() {
        return 0.0;
    }
    let t2 = t * t;
    let denom = df + t2;
    inc_beta_split(df / 2.0, 0.5, df / denom, t2 / denom).clamp(0.0, 1.0)
}

/// Upper tail of the F distribution.
pub fn f_sf(f: f64, df1: f64, df2: f64) -> f64 {
    if f.is_nan() || !(df1 > 0.0 && df2 > 0.0) {
        return f64::NAN;
    }
    if f <= 0.0 {
        return 1.0;
    }
    if f.is_infinite() {
        return 0.0;
    }
    let denom = df2 + df1 * f;
    inc_beta_split(df2 / 2.0, df1 / 2.0, df2 / denom, df1 * f / denom).clamp(0.0, 1.0)
}

/// The `t > 0` with `t_sf(t, df) = alpha`, by bisection on the survival function.
pub fn t_critical_two_sided(alpha: f64, df: f64) -> Result<f64> {
    if !(alpha > 0.0 && alpha < 1.0) || !(df > 0.0) {
        return Err(Error::config("critical value needs alpha in (0, 1) and df > 0"));
    }
    let mut hi = 1.0;
    while t_sf(hi, df) > alpha {
        hi *= 2.0;
        if hi > 1e300 {
            return Err(Error::numeric("critical value search diverged"));
        }
    }
    let mut lo = 0.0;
    for _ in 0..200 {
        let mid = 0.5 * (lo + hi);
        if t_sf(mid, df) > alpha {
            lo = mid;
        } else {
            hi = mid;
        }
        if hi - lo <= 1e-15 * hi {
            break;
        }
    }
    Ok(0.5 * (lo + hi))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TestFlavor {
    StudentPooled,
    Welch,
    Paired,
    Anova,
}

impl fmt::Display for TestFlavor {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            TestFlavor::StudentPooled => "student_pooled",
            TestFlavor::Welch => "welch",
            TestFlavor::Paired => "paired",
            TestFlavor::Anova => "anova",
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TestResult {
    /// `t` for the t-test flavors, `F` for ANOVA. Infinite when variances
    /// vanish but means differ.
    #[serde(with = "extended_float")]
    pub statistic: f64,
    pub df: f64,
    /// Denominator degrees of freedom, ANOVA only.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub df2: Option<f64>,
    pub p_value: f64,
    pub flavor: TestFlavor,
}

/// JSON has no infinities: non-finite values travel as `"inf"`, `"-inf"`, `"nan"`.
pub(crate) mod extended_float {
    use serde::{de, Deserialize, Deserializer, Serializer};

    pub fn serialize<S: Serializer>(x: &f64, s: S) -> Result<S::Ok, S::Error> {
        if x.is_finite() {
            s.serialize_f64(*x)
        } else if x.is_nan() {
            s.serialize_str("nan")
        } else if *x > 0.0 {
            s.serialize_str("inf")
        } else {
            s.serialize_str("-inf")
        }
    }

    #[derive(Deserialize)]
    #[serde(untagged)]
    enum Repr {
        Num(f64),
        Str(String),
    }

    pub fn deserialize<'de, D: Deserializer<'de>>(d: D) -> Result<f64, D::Error> {
        match Repr::deserialize(d)? {
            Repr::Num(x) => Ok(x),
            Repr::Str(s) => match s.as_str() {
                "inf" => Ok(f64::INFINITY),
                "-inf" => Ok(f64::NEG_INFINITY),
                "nan" => Ok(f64::NAN),
                other => Err(de::Error::custom(format!("bad float `{other}`"))),
            },
        }
    }
}

pub fn mean(xs: &[f64]) -> f64 {
    xs.iter().sum::<f64>() / xs.len() as f64
}

/// Unbiased sample variance. Deviations are taken from the first value, so
/// constant samples give exactly 0.
pub fn variance(xs: &[f64]) -> f64 {
    let Some(&first) = xs.first() else {
        return f64::NAN;
    };
    let shifted: Vec<f64> = xs.iter().map(|x| x - first).collect();
    let m = mean(&shifted);
    shifted.iter().map(|x| (x - m) * (x - m)).sum::<f64>() / (xs.len() as f64 - 1.0)
}

fn degenerate(diff: f64, df: f64, df2: Option<f64>, flavor: TestFlavor) -> TestResult {
    if diff == 0.0 {
        TestResult {
            statistic: 0.0,
            df,
            df2,
            p_value: 1.0,
            flavor,
        }
    } else {
        let statistic = if flavor == TestFlavor::Anova {
            f64::INFINITY
        } else {
            f64::INFINITY.copysign(diff)
        };
        TestResult {
            statistic,
            df,
            df2,
            p_value: 0.0,
            flavor,
        }
    }
}

pub fn t_test(a: &[f64], b: &[f64], flavor: TestFlavor) -> Result<TestResult> {
    if a.len() < 2 || b.len() < 2 {
        return Err(Error::config("t-test needs at least 2 values per sample"));
    }
    let (na, nb) = (a.len() as f64, b.len() as f64);
    let (statistic_num, se2, df) = match flavor {
        TestFlavor::StudentPooled => {
            let pooled = ((na - 1.0) * variance(a) + (nb - 1.0) * variance(b)) / (na + nb - 2.0);
            (mean(a) - mean(b), pooled * (1.0 / na + 1.0 / nb), na + nb - 2.0)
        }
        TestFlavor::Welch => {
            let (qa, qb) = (variance(a) / na, variance(b) / nb);
            let se2 = qa + qb;
            let df = if se2 > 0.0 {
                se2 * se2 / (qa * qa / (na - 1.0) + qb * qb / (nb - 1.0))
            } else {
                na + nb - 2.0
            };
            (mean(a) - mean(b), se2, df)
        }
        TestFlavor::Paired => {
            if a.len() != b.len() {
                return Err(Error::config("paired flavor requires equal sample sizes"));
            }
            let diffs: Vec<f64> = a.iter().zip(b).map(|(x, y)| x - y).collect();
            (mean(&diffs), variance(&diffs) / na, na - 1.0)
        }
        TestFlavor::Anova => return Err(Error::config("use one_way_anova for the ANOVA flavor")),
    };
    if !(se2 > 0.0) {
        return Ok(degenerate(statistic_num, df, None, flavor));
    }
    let statistic = statistic_num / se2.sqrt();
    Ok(TestResult {
        statistic,
        df,
        df2: None,
        p_value: t_sf(statistic, df),
        flavor,
    })
}

pub fn one_way_anova(groups: &[&[f64]]) -> Result<TestResult> {
    let k = groups.len();
    if k < 2 {
        return Err(Error::config("ANOVA needs at least 2 groups"));
    }
    if groups.iter().any(|g| g.len() < 2) {
        return Err(Error::config("ANOVA needs at least 2 values per group"));
    }
    let n: usize = groups.iter().map(|g| g.len()).sum();
    let grand = groups.iter().flat_map(|g| g.iter()).sum::<f64>() / n as f64;
    let mut ss_between = 0.0;
    let mut ss_within = 0.0;
    for g in groups {
        let m = mean(g);
        ss_between += g.len() as f64 * (m - grand) * (m - grand);
        ss_within += g.iter().map(|x| (x - m) * (x - m)).sum::<f64>();
    }
    let (df1, df2) = ((k - 1) as f64, (n - k) as f64);
    if !(ss_within > 0.0) {
        let spread = if ss_between > 0.0 { 1.0 } else { 0.0 };
        return Ok(degenerate(spread, df1, Some(df2), TestFlavor::Anova));
    }
    let f = (ss_between / df1) / (ss_within / df2);
    Ok(TestResult {
        statistic: f,
        df: df1,
        df2: Some(df2),
        p_value: f_sf(f, df1, df2),
        flavor: TestFlavor::Anova,
    })
}
