//! Two-sample t-tests. The two-sided p-value uses the identity
//! `P(|T| > t) = I_{df/(df+t^2)}(df/2, 1/2)` with the regularized
//! incomplete beta evaluated by its continued fraction.

use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Error, PartialEq)]
pub enum StatsError {
    #[error("each group needs at least 2 samples (got {td} and {asd})")]
    TooFewSamples { td: usize, asd: usize },
    #[error("samples must be finite")]
    NonFinite,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TTestMode {
    /// Unequal variances, Welch-Satterthwaite degrees of freedom.
    #[default]
    Welch,
    /// Pooled variance, `n1 + n2 - 2` degrees of freedom.
    Pooled,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TTest {
    pub t: f64,
    pub df: f64,
    pub p: f64,
}

fn ln_gamma(x: f64) -> f64 {
    // Lanczos approximation, g = 7, n = 9.
    const G: f64 = 7.0;
    const C: [f64; 9] = [
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
    if x < 0.5 {
        let pi = std::f64::consts::PI;
        return (pi / (pi * x).sin()).ln() - ln_gamma(1.0 - x);
    }
    let x = x - 1.0;
    let mut a = C[0];
    let t = x + G + 0.5;
    for (i, c) in C.iter().enumerate().skip(1) {
        a += c / (x + i as f64);
    }
    0.5 * (2.0 * std::f64::consts::PI).ln() + (x + 0.5) * t.ln() - t + a.ln()
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
    for m in 1..=1000 {
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

/// Regularized incomplete beta `I_x(a, b)`.
pub fn regularized_incomplete_beta(a: f64, b: f64, x: f64) -> f64 {
    if x <= 0.0 {
        return 0.0;
    }
    if x >= 1.0 {
        return 1.0;
    }
    let ln_front =
        ln_gamma(a + b) - ln_gamma(a) - ln_gamma(b) + a * x.ln() + b * (1.0 - x).ln();
    let front = ln_front.exp();
    if x < (a + 1.0) / (a + b + 2.0) {
        front * beta_cf(a, b, x) / a
    } else {
        1.0 - front * beta_cf(b, a, 1.0 - x) / b
    }
}

/// `P(|T| >= |t|)` for Student's t with `df` degrees of freedom.
pub fn t_two_sided_p(t: f64, df: f64) -> f64 {
    if t.is_nan() {
        return f64::NAN;
    }
    if t.is_infinite() {
        return 0.0;
    }
    regularized_incomplete_beta(df / 2.0, 0.5, df / (df + t * t)).clamp(0.0, 1.0)
}

fn mean_var(xs: &[f64]) -> (f64, f64) {
    let n = xs.len() as f64;
    let mean = xs.iter().sum::<f64>() / n;
    let var = xs.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (n - 1.0);
    (mean, var)
}

/// Two-sample t-test of `a` against `b`; positive `t` means `a` has the
/// larger mean.
pub fn t_test(a: &[f64], b: &[f64], mode: TTestMode) -> Result<TTest, StatsError> {
    if a.len() < 2 || b.len() < 2 {
        return Err(StatsError::TooFewSamples {
            td: a.len(),
            asd: b.len(),
        });
    }
    if a.iter().chain(b).any(|x| !x.is_finite()) {
        return Err(StatsError::NonFinite);
    }
    let (n1, n2) = (a.len() as f64, b.len() as f64);
    let (m1, v1) = mean_var(a);
    let (m2, v2) = mean_var(b);
    let (se2, df) = match mode {
        TTestMode::Welch => {
            let (s1, s2) = (v1 / n1, v2 / n2);
            let se2 = s1 + s2;
            let df = if se2 > 0.0 {
                se2 * se2 / (s1 * s1 / (n1 - 1.0) + s2 * s2 / (n2 - 1.0))
            } else {
                n1 + n2 - 2.0
            };
            (se2, df)
        }
        TTestMode::Pooled => {
            let df = n1 + n2 - 2.0;
            let sp2 = ((n1 - 1.0) * v1 + (n2 - 1.0) * v2) / df;
            (sp2 * (1.0 / n1 + 1.0 / n2), df)
        }
    };
    let diff = m1 - m2;
    let t = if se2 > 0.0 {
        diff / se2.sqrt()
    } else if diff == 0.0 {
        0.0
    } else {
        diff.signum() * f64::INFINITY
    };
    Ok(TTest {
        t,
        df,
        p: t_two_sided_p(t, df),
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GroupStats {
    pub variable: String,
    pub td_mean: f64,
    pub asd_mean: f64,
    pub td_n: usize,
    pub asd_n: usize,
    pub t_value: f64,
    pub p_value: f64,
}

/// Compares the TD group against the ASD group.
pub fn group_ttest(
    variable: &str,
    td: &[f64],
    asd: &[f64],
    mode: TTestMode,
) -> Result<GroupStats, StatsError> {
    let r = t_test(td, asd, mode)?;
    let mean = |xs: &[f64]| xs.iter().sum::<f64>() / xs.len() as f64;
    Ok(GroupStats {
        variable: variable.to_string(),
        td_mean: mean(td),
        asd_mean: mean(asd),
        td_n: td.len(),
        asd_n: asd.len(),
        t_value: r.t,
        p_value: r.p,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use statrs::distribution::{ContinuousCDF, StudentsT};

    #[test]
    fn incomplete_beta_edges() {
        assert_eq!(regularized_incomplete_beta(2.0, 3.0, 0.0), 0.0);
        assert_eq!(regularized_incomplete_beta(2.0, 3.0, 1.0), 1.0);
        // I_x(1, 1) = x
        assert!((regularized_incomplete_beta(1.0, 1.0, 0.3) - 0.3).abs() < 1e-14);
        // I_x(a, 1) = x^a
        assert!((regularized_incomplete_beta(2.5, 1.0, 0.6) - 0.6f64.powf(2.5)).abs() < 1e-13);
    }

    #[test]
    fn t_survival_matches_statrs() {
        for df in [1.0, 2.0, 3.5, 10.0, 24.99, 60.0, 300.0] {
            let dist = StudentsT::new(0.0, 1.0, df).unwrap();
            for t in [0.0, 0.1, 0.7, 1.5, 2.4, 3.9, 8.0, 25.0] {
                let want = 2.0 * dist.sf(t);
                let got = t_two_sided_p(t, df);
                assert!((got - want).abs() < 1e-8, "df={df} t={t}: {got} vs {want}");
            }
        }
    }

    #[test]
    fn identical_groups() {
        let xs = [1.0, 2.0, 3.0, 4.0];
        let r = t_test(&xs, &xs, TTestMode::Welch).unwrap();
        assert_eq!(r.t, 0.0);
        assert!((r.p - 1.0).abs() < 1e-12);
        let flat = t_test(&[2.0, 2.0], &[2.0, 2.0, 2.0], TTestMode::Welch).unwrap();
        assert_eq!((flat.t, flat.p), (0.0, 1.0));
    }

    #[test]
    fn pooled_reference() {
        // scipy.stats.ttest_ind(..., equal_var=True)
        let a = [27.5, 21.0, 19.0, 23.6, 17.0, 17.9, 16.9, 20.1, 21.9, 22.6, 23.1, 19.6, 19.0, 21.7, 21.4];
        let b = [27.1, 22.0, 20.8, 23.4, 23.4, 23.5, 25.8, 22.0, 24.8, 20.2, 21.9, 22.1, 22.9, 20.5, 24.4];
        let r = t_test(&a, &b, TTestMode::Pooled).unwrap();
        assert!((r.t - -2.455356398286006).abs() < 1e-9);
        assert!((r.p - 0.020544522734125933).abs() < 1e-9);
        assert_eq!(r.df, 28.0);
    }

    #[test]
    fn too_few_samples() {
        assert_eq!(
            t_test(&[1.0], &[1.0, 2.0], TTestMode::Welch),
            Err(StatsError::TooFewSamples { td: 1, asd: 2 })
        );
    }
}
