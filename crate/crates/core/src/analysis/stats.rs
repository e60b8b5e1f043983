//! Classical tests: t, one-way ANOVA with ω², Tukey HSD, χ² goodness of
//! fit, percentile bootstrap and Pearson correlation.

use rand::Rng;
use serde::{Deserialize, Serialize};

use super::dist;
use super::AnalysisError;
use crate::features::quantile_sorted;
use crate::rng;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum Df {
    One(f64),
    Two(f64, f64),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StatTestResult {
    pub statistic: f64,
    pub df: Df,
    pub p_value: f64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub effect_size: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub ci: Option<(f64, f64)>,
}

pub fn mean(x: &[f64]) -> f64 {
    x.iter().sum::<f64>() / x.len() as f64
}

/// Sample variance (n - 1 denominator).
pub fn variance(x: &[f64]) -> f64 {
    let m = mean(x);
    x.iter().map(|v| (v - m).powi(2)).sum::<f64>() / (x.len() - 1) as f64
}

fn check_finite(x: &[f64]) -> Result<(), AnalysisError> {
    if x.iter().any(|v| !v.is_finite()) {
        return Err(AnalysisError::NonFinite);
    }
    Ok(())
}

/// Two-sided one-sample t test against `mu`, with a `level` CI on the
/// mean. Zero variance: t = ±∞ and p = 0 unless the mean equals `mu`, in
/// which case t = 0 and p = 1.
pub fn one_sample_t(x: &[f64], mu: f64, level: f64) -> Result<StatTestResult, AnalysisError> {
    if x.len() < 2 {
        return Err(AnalysisError::TooFew { need: 2, got: x.len() });
    }
    check_finite(x)?;
    let n = x.len() as f64;
    let m = mean(x);
    let se = (variance(x) / n).sqrt();
    let df = n - 1.0;
    let delta = m - mu;
    let (t, p) = if se > 0.0 {
        let t = delta / se;
        (t, dist::t_two_sided_p(t, df))
    } else if delta != 0.0 {
        (f64::INFINITY.copysign(delta), 0.0)
    } else {
        (0.0, 1.0)
    };
    let crit = dist::t_quantile(0.5 + level / 2.0, df);
    Ok(StatTestResult {
        statistic: t,
        df: Df::One(df),
        p_value: p,
        effect_size: None,
        ci: Some((m - crit * se, m + crit * se)),
    })
}

/// Paired t test of `a - b` against 0; the CI is on the mean difference.
pub fn paired_t(a: &[f64], b: &[f64], level: f64) -> Result<StatTestResult, AnalysisError> {
    if a.len() != b.len() {
        return Err(AnalysisError::LengthMismatch(a.len(), b.len()));
    }
    let d: Vec<f64> = a.iter().zip(b).map(|(x, y)| x - y).collect();
    one_sample_t(&d, 0.0, level)
}

/// Welch two-sample t test; the CI is on mean(a) - mean(b).
pub fn welch_t(a: &[f64], b: &[f64], level: f64) -> Result<StatTestResult, AnalysisError> {
    for g in [a, b] {
        if g.len() < 2 {
            return Err(AnalysisError::TooFew { need: 2, got: g.len() });
        }
        check_finite(g)?;
    }
    let (na, nb) = (a.len() as f64, b.len() as f64);
    let (va, vb) = (variance(a) / na, variance(b) / nb);
    let delta = mean(a) - mean(b);
    let se = (va + vb).sqrt();
    if se == 0.0 {
        let (t, p) = if delta != 0.0 {
            (f64::INFINITY.copysign(delta), 0.0)
        } else {
            (0.0, 1.0)
        };
        return Ok(StatTestResult {
            statistic: t,
            df: Df::One(na + nb - 2.0),
            p_value: p,
            effect_size: None,
            ci: Some((delta, delta)),
        });
    }
    let df = (va + vb).powi(2) / (va * va / (na - 1.0) + vb * vb / (nb - 1.0));
    let t = delta / se;
    let crit = dist::t_quantile(0.5 + level / 2.0, df);
    Ok(StatTestResult {
        statistic: t,
        df: Df::One(df),
        p_value: dist::t_two_sided_p(t, df),
        effect_size: None,
        ci: Some((delta - crit * se, delta + crit * se)),
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AnovaResult {
    pub f: f64,
    pub df_between: f64,
    pub df_within: f64,
    pub p_value: f64,
    pub ss_between: f64,
    pub ss_within: f64,
    pub ms_within: f64,
    /// (SSB - (k-1)·MSW) / (SST + MSW)
    pub omega_squared: f64,
}

impl AnovaResult {
    pub fn as_test(&self) -> StatTestResult {
        StatTestResult {
            statistic: self.f,
            df: Df::Two(self.df_between, self.df_within),
            p_value: self.p_value,
            effect_size: Some(self.omega_squared),
            ci: None,
        }
    }
}

/// Group sizes, means and sample standard deviations.
#[derive(Debug, Clone, PartialEq)]
pub struct GroupSummary {
    pub n: Vec<usize>,
    pub means: Vec<f64>,
    pub sds: Vec<f64>,
}

impl GroupSummary {
    pub fn of(groups: &[Vec<f64>]) -> Self {
        GroupSummary {
            n: groups.iter().map(Vec::len).collect(),
            means: groups.iter().map(|g| mean(g)).collect(),
            sds: groups
                .iter()
                .map(|g| if g.len() > 1 { variance(g).sqrt() } else { 0.0 })
                .collect(),
        }
    }
}

fn check_groups(groups: &[Vec<f64>]) -> Result<(), AnalysisError> {
    if groups.len() < 2 {
        return Err(AnalysisError::TooFew { need: 2, got: groups.len() });
    }
    for g in groups {
        if g.len() < 2 {
            return Err(AnalysisError::TooFew { need: 2, got: g.len() });
        }
        check_finite(g)?;
    }
    Ok(())
}

pub fn one_way_anova(groups: &[Vec<f64>]) -> Result<AnovaResult, AnalysisError> {
    check_groups(groups)?;
    anova_from_summary(&GroupSummary::of(groups))
}

/// ANOVA from per-group n, mean and sd. Zero within-group variance with
/// distinct means gives F = ∞ and p = 0; identical constant groups are an
/// error.
pub fn anova_from_summary(s: &GroupSummary) -> Result<AnovaResult, AnalysisError> {
    let k = s.n.len();
    if k < 2 || s.means.len() != k || s.sds.len() != k {
        return Err(AnalysisError::TooFew { need: 2, got: k });
    }
    if let Some(&n) = s.n.iter().find(|&&n| n < 2) {
        return Err(AnalysisError::TooFew { need: 2, got: n });
    }
    check_finite(&s.means)?;
    check_finite(&s.sds)?;
    let total: f64 = s.n.iter().sum::<usize>() as f64;
    let grand = s.n.iter().zip(&s.means).map(|(&n, m)| n as f64 * m).sum::<f64>() / total;
    let ssb: f64 = s.n.iter().zip(&s.means).map(|(&n, m)| n as f64 * (m - grand).powi(2)).sum();
    let ssw: f64 = s.n.iter().zip(&s.sds).map(|(&n, sd)| (n as f64 - 1.0) * sd * sd).sum();
    let dfb = (k - 1) as f64;
    let dfw = total - k as f64;
    let msw = ssw / dfw;
    let (f, p) = if ssw > 0.0 {
        let f = (ssb / dfb) / msw;
        (f, dist::f_sf(f, dfb, dfw))
    } else if ssb > 0.0 {
        (f64::INFINITY, 0.0)
    } else {
        return Err(AnalysisError::ZeroVariance);
    };
    let omega_squared = (ssb - dfb * msw) / (ssb + ssw + msw);
    Ok(AnovaResult {
        f,
        df_between: dfb,
        df_within: dfw,
        p_value: p,
        ss_between: ssb,
        ss_within: ssw,
        ms_within: msw,
        omega_squared,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TukeyPair {
    pub group_a: usize,
    pub group_b: usize,
    /// mean(b) - mean(a)
    pub mean_diff: f64,
    pub q: f64,
    pub p_value: f64,
    pub ci: (f64, f64),
    pub reject: bool,
}

/// Tukey–Kramer pairwise comparisons for every pair a < b.
pub fn tukey_hsd(groups: &[Vec<f64>], alpha: f64) -> Result<Vec<TukeyPair>, AnalysisError> {
    check_groups(groups)?;
    let s = GroupSummary::of(groups);
    let an = anova_from_summary(&s)?;
    let k = groups.len();
    let q_crit = dist::qtukey(1.0 - alpha, k, an.df_within);
    let mut out = Vec::new();
    for a in 0..k {
        for b in a + 1..k {
            let diff = s.means[b] - s.means[a];
            let se = (an.ms_within / 2.0 * (1.0 / s.n[a] as f64 + 1.0 / s.n[b] as f64)).sqrt();
            let (q, p) = if se > 0.0 {
                let q = diff.abs() / se;
                (q, dist::ptukey_sf(q, k, an.df_within))
            } else if diff != 0.0 {
                (f64::INFINITY, 0.0)
            } else {
                (0.0, 1.0)
            };
            out.push(TukeyPair {
                group_a: a,
                group_b: b,
                mean_diff: diff,
                q,
                p_value: p,
                ci: (diff - q_crit * se, diff + q_crit * se),
                reject: p < alpha,
            });
        }
    }
    Ok(out)
}

/// χ² goodness of fit. `expected` may be counts or proportions; it is
/// rescaled to the observed total. Defaults to uniform.
pub fn chi_square_gof(counts: &[f64], expected: Option<&[f64]>) -> Result<StatTestResult, AnalysisError> {
    if counts.len() < 2 {
        return Err(AnalysisError::TooFew { need: 2, got: counts.len() });
    }
    check_finite(counts)?;
    if counts.iter().any(|&c| c < 0.0) {
        return Err(AnalysisError::Invalid("counts must be >= 0".into()));
    }
    let total: f64 = counts.iter().sum();
    if total <= 0.0 {
        return Err(AnalysisError::Invalid("counts sum to zero".into()));
    }
    let exp: Vec<f64> = match expected {
        None => vec![total / counts.len() as f64; counts.len()],
        Some(e) => {
            if e.len() != counts.len() {
                return Err(AnalysisError::LengthMismatch(counts.len(), e.len()));
            }
            check_finite(e)?;
            if e.iter().any(|&v| v <= 0.0) {
                return Err(AnalysisError::Invalid("expected counts must be > 0".into()));
            }
            let es: f64 = e.iter().sum();
            e.iter().map(|v| v * total / es).collect()
        }
    };
    let chi2: f64 = counts.iter().zip(&exp).map(|(o, e)| (o - e).powi(2) / e).sum();
    let df = (counts.len() - 1) as f64;
    Ok(StatTestResult {
        statistic: chi2,
        df: Df::One(df),
        p_value: dist::chi2_sf(chi2, df),
        effect_size: None,
        ci: None,
    })
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct BootstrapOptions {
    pub level: f64,
    pub resamples: usize,
    pub seed: u64,
}

impl Default for BootstrapOptions {
    fn default() -> Self {
        BootstrapOptions {
            level: 0.95,
            resamples: 10_000,
            seed: 0,
        }
    }
}

pub const MIN_RESAMPLES: usize = 10_000;

/// Percentile bootstrap interval of `statistic`. Level 0 returns the point
/// estimate twice.
pub fn bootstrap_ci(
    data: &[f64],
    statistic: impl Fn(&[f64]) -> f64,
    opts: BootstrapOptions,
) -> Result<(f64, f64), AnalysisError> {
    if data.len() < 2 {
        return Err(AnalysisError::TooFew { need: 2, got: data.len() });
    }
    check_finite(data)?;
    if !(0.0..1.0).contains(&opts.level) {
        return Err(AnalysisError::Invalid(format!("level {} outside [0, 1)", opts.level)));
    }
    if opts.resamples < MIN_RESAMPLES {
        return Err(AnalysisError::Invalid(format!("at least {MIN_RESAMPLES} resamples are required")));
    }
    if opts.level == 0.0 {
        let est = statistic(data);
        return Ok((est, est));
    }
    let mut r = rng::seeded(opts.seed);
    let n = data.len();
    let mut buf = vec![0.0; n];
    let mut stats: Vec<f64> = (0..opts.resamples)
        .map(|_| {
            for b in buf.iter_mut() {
                *b = data[r.random_range(0..n)];
            }
            statistic(&buf)
        })
        .collect();
    stats.sort_by(f64::total_cmp);
    let tail = (1.0 - opts.level) / 2.0;
    Ok((quantile_sorted(&stats, tail), quantile_sorted(&stats, 1.0 - tail)))
}

pub fn pearson_r(x: &[f64], y: &[f64]) -> Result<f64, AnalysisError> {
    if x.len() != y.len() {
        return Err(AnalysisError::LengthMismatch(x.len(), y.len()));
    }
    if x.len() < 2 {
        return Err(AnalysisError::TooFew { need: 2, got: x.len() });
    }
    check_finite(x)?;
    check_finite(y)?;
    let (mx, my) = (mean(x), mean(y));
    let sxy: f64 = x.iter().zip(y).map(|(a, b)| (a - mx) * (b - my)).sum();
    let sxx: f64 = x.iter().map(|a| (a - mx).powi(2)).sum();
    let syy: f64 = y.iter().map(|b| (b - my).powi(2)).sum();
    if sxx == 0.0 || syy == 0.0 {
        return Err(AnalysisError::ZeroVariance);
    }
    Ok((sxy / (sxx * syy).sqrt()).clamp(-1.0, 1.0))
}

/// r with its two-sided p-value (t with n - 2 df).
pub fn pearson_test(x: &[f64], y: &[f64]) -> Result<StatTestResult, AnalysisError> {
    let r = pearson_r(x, y)?;
    let df = x.len() as f64 - 2.0;
    let p = if df < 1.0 || r.abs() == 1.0 {
        if r.abs() == 1.0 { 0.0 } else { 1.0 }
    } else {
        dist::t_two_sided_p(r * (df / (1.0 - r * r)).sqrt(), df)
    };
    Ok(StatTestResult {
        statistic: r,
        df: Df::One(df),
        p_value: p,
        effect_size: None,
        ci: None,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn chi_square_table_rows() {
        let r = chi_square_gof(&[60.0, 33.0, 27.0], None).unwrap();
        assert!((r.statistic - 15.45).abs() < 1e-9);
        assert_eq!(r.df, Df::One(2.0));
        let r = chi_square_gof(&[25.0, 55.0, 38.0], None).unwrap();
        assert!((r.statistic - 11.508474576271187).abs() < 1e-9);
        assert_eq!(chi_square_gof(&[5.0, 5.0, 5.0], None).unwrap().statistic, 0.0);
        assert!(chi_square_gof(&[1.0, 2.0], Some(&[1.0, 0.0])).is_err());
    }

    #[test]
    fn anova_zero_variance() {
        let same = vec![vec![3.0, 3.0], vec![3.0, 3.0]];
        assert!(matches!(one_way_anova(&same), Err(AnalysisError::ZeroVariance)));
        let apart = vec![vec![1.0, 1.0], vec![3.0, 3.0]];
        let r = one_way_anova(&apart).unwrap();
        assert!(r.f.is_infinite());
        assert_eq!(r.p_value, 0.0);
    }

    #[test]
    fn anova_raw_matches_summary() {
        let g = vec![vec![1.0, 2.0, 4.0, 3.5], vec![2.0, 5.0, 6.0], vec![7.0, 8.5, 9.0, 6.0, 7.5]];
        let raw = one_way_anova(&g).unwrap();
        let sum = anova_from_summary(&GroupSummary::of(&g)).unwrap();
        assert!((raw.f - sum.f).abs() < 1e-9);
        assert!((raw.omega_squared - sum.omega_squared).abs() < 1e-9);
    }

    #[test]
    fn t_conventions() {
        let r = paired_t(&[1.0, 2.0, 3.0], &[1.0, 2.0, 3.0], 0.95).unwrap();
        assert_eq!((r.statistic, r.p_value), (0.0, 1.0));
        let r = paired_t(&[2.0, 3.0, 4.0], &[1.0, 2.0, 3.0], 0.95).unwrap();
        assert!(r.statistic.is_infinite());
        assert!(r.p_value < 1e-15);
    }

    #[test]
    fn pearson_lines() {
        let x = [1.0, 2.0, 3.0, 4.0];
        let y: Vec<f64> = x.iter().map(|v| 2.0 * v + 1.0).collect();
        assert!((pearson_r(&x, &y).unwrap() - 1.0).abs() < 1e-12);
        let y: Vec<f64> = x.iter().map(|v| -v).collect();
        assert!((pearson_r(&x, &y).unwrap() + 1.0).abs() < 1e-12);
        assert!(matches!(pearson_r(&x, &[1.0; 4]), Err(AnalysisError::ZeroVariance)));
    }

    #[test]
    fn bootstrap_edges() {
        let c = [2.5; 20];
        assert_eq!(bootstrap_ci(&c, mean, BootstrapOptions::default()).unwrap(), (2.5, 2.5));
        let d = [1.0, 2.0, 3.0, 4.0, 10.0];
        let opts = BootstrapOptions {
            level: 0.0,
            ..Default::default()
        };
        assert_eq!(bootstrap_ci(&d, mean, opts).unwrap(), (4.0, 4.0));
        let a = bootstrap_ci(&d, mean, BootstrapOptions::default()).unwrap();
        let b = bootstrap_ci(&d, mean, BootstrapOptions::default()).unwrap();
        assert_eq!(a, b);
        assert!(a.0 < 4.0 && a.1 > 4.0);
    }

    #[test]
    fn tukey_equal_means() {
        let g = vec![vec![1.0, 2.0, 3.0], vec![3.0, 2.0, 1.0]];
        let r = tukey_hsd(&g, 0.05).unwrap();
        assert!(r[0].p_value > 0.999);
    }
}
