//! Distribution tails used by the tests.
//!
//! Student t, F and χ² come from `statrs`. The studentized range CDF is
//! computed here by Gauss–Legendre quadrature of its integral form:
//! the range of k normals integrated against the density of s = χ_ν/√ν.

use std::sync::OnceLock;

use statrs::distribution::{ChiSquared, ContinuousCDF, FisherSnedecor, StudentsT};
use statrs::function::erf::erfc;
use statrs::function::gamma::ln_gamma;

/// Two-sided p-value of a t statistic.
pub fn t_two_sided_p(t: f64, df: f64) -> f64 {
    if t.is_nan() {
        return f64::NAN;
    }
    if t.is_infinite() {
        return 0.0;
    }
    let d = StudentsT::new(0.0, 1.0, df).expect("df > 0");
    (2.0 * d.sf(t.abs())).clamp(0.0, 1.0)
}

/// Upper `p` quantile of Student t.
pub fn t_quantile(p: f64, df: f64) -> f64 {
    StudentsT::new(0.0, 1.0, df).expect("df > 0").inverse_cdf(p)
}

pub fn f_sf(f: f64, d1: f64, d2: f64) -> f64 {
    if f.is_infinite() {
        return 0.0;
    }
    FisherSnedecor::new(d1, d2).expect("df > 0").sf(f.max(0.0)).clamp(0.0, 1.0)
}

pub fn chi2_sf(x: f64, df: f64) -> f64 {
    ChiSquared::new(df).expect("df > 0").sf(x.max(0.0)).clamp(0.0, 1.0)
}

fn std_normal_cdf(x: f64) -> f64 {
    0.5 * erfc(-x / std::f64::consts::SQRT_2)
}

fn std_normal_pdf(x: f64) -> f64 {
    (-0.5 * x * x).exp() / (2.0 * std::f64::consts::PI).sqrt()
}

const GL_ORDER: usize = 16;

/// Nodes and weights on [-1, 1], found by Newton iteration on P_n.
fn gauss_legendre() -> &'static (Vec<f64>, Vec<f64>) {
    static RULE: OnceLock<(Vec<f64>, Vec<f64>)> = OnceLock::new();
    RULE.get_or_init(|| {
        let n = GL_ORDER;
        let mut nodes = vec![0.0; n];
        let mut weights = vec![0.0; n];
        for i in 0..n.div_ceil(2) {
            let mut x = (std::f64::consts::PI * (i as f64 + 0.75) / (n as f64 + 0.5)).cos();
            let mut dp = 0.0;
            for _ in 0..100 {
                let (mut p0, mut p1) = (1.0, x);
                for k in 2..=n {
                    let p2 = ((2 * k - 1) as f64 * x * p1 - (k - 1) as f64 * p0) / k as f64;
                    p0 = p1;
                    p1 = p2;
                }
                dp = n as f64 * (x * p1 - p0) / (x * x - 1.0);
                let dx = p1 / dp;
                x -= dx;
                if dx.abs() < 1e-15 {
                    break;
                }
            }
            let w = 2.0 / ((1.0 - x * x) * dp * dp);
            nodes[i] = x;
            nodes[n - 1 - i] = -x;
            weights[i] = w;
            weights[n - 1 - i] = w;
        }
        (nodes, weights)
    })
}

fn integrate(f: impl Fn(f64) -> f64, a: f64, b: f64, pieces: usize) -> f64 {
    let (nodes, weights) = gauss_legendre();
    let h = (b - a) / pieces as f64;
    let mut total = 0.0;
    for p in 0..pieces {
        let mid = a + (p as f64 + 0.5) * h;
        let half = 0.5 * h;
        for (x, w) in nodes.iter().zip(weights) {
            total += w * half * f(mid + half * x);
        }
    }
    total
}

/// P(range of k standard normals <= w).
fn normal_range_cdf(w: f64, k: usize) -> f64 {
    if w <= 0.0 {
        return 0.0;
    }
    let kf = k as f64;
    let v = integrate(
        |z| {
            let inner = std_normal_cdf(z) - std_normal_cdf(z - w);
            std_normal_pdf(z) * inner.max(0.0).powf(kf - 1.0)
        },
        -8.5,
        8.5 + w.min(8.5),
        24,
    );
    (kf * v).clamp(0.0, 1.0)
}

/// CDF of the studentized range with `k` means and `df` degrees of freedom.
pub fn ptukey(q: f64, k: usize, df: f64) -> f64 {
    if q <= 0.0 {
        return 0.0;
    }
    if q.is_infinite() {
        return 1.0;
    }
    if k < 2 {
        return 1.0;
    }
    if df > 25_000.0 {
        return normal_range_cdf(q, k);
    }
    let half = df / 2.0;
    let log_c = half * df.ln() - ln_gamma(half) - (half - 1.0) * 2f64.ln();
    let spread = 12.0 / (2.0 * df).sqrt();
    let lo = (1.0 - spread).max(0.0);
    let hi = 1.0 + spread.max(0.5) + if df < 5.0 { 4.0 } else { 0.0 };
    let v = integrate(
        |s| {
            if s <= 0.0 {
                return 0.0;
            }
            let log_f = log_c + (df - 1.0) * s.ln() - 0.5 * df * s * s;
            log_f.exp() * normal_range_cdf(q * s, k)
        },
        lo,
        hi,
        32,
    );
    v.clamp(0.0, 1.0)
}

/// Upper tail of the studentized range.
pub fn ptukey_sf(q: f64, k: usize, df: f64) -> f64 {
    (1.0 - ptukey(q, k, df)).clamp(0.0, 1.0)
}

/// Quantile of the studentized range by bisection.
pub fn qtukey(p: f64, k: usize, df: f64) -> f64 {
    let (mut lo, mut hi) = (0.0f64, 1.0f64);
    while ptukey(hi, k, df) < p {
        hi *= 2.0;
        if hi > 1e4 {
            return f64::INFINITY;
        }
    }
    for _ in 0..60 {
        let mid = 0.5 * (lo + hi);
        if ptukey(mid, k, df) < p {
            lo = mid;
        } else {
            hi = mid;
        }
        if hi - lo < 1e-10 {
            break;
        }
    }
    0.5 * (lo + hi)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn legendre_rule_integrates_polynomials() {
        let v = integrate(|x| x.powi(6), -1.0, 1.0, 1);
        assert!((v - 2.0 / 7.0).abs() < 1e-14);
    }

    #[test]
    fn range_of_two_normals() {
        // range of two standard normals is |N(0, 2)|
        let w = 1.3;
        let exact = 2.0 * std_normal_cdf(w / 2f64.sqrt()) - 1.0;
        assert!((normal_range_cdf(w, 2) - exact).abs() < 1e-9);
    }

    #[test]
    fn student_tails() {
        assert!((t_two_sided_p(0.0, 10.0) - 1.0).abs() < 1e-12);
        assert_eq!(t_two_sided_p(f64::INFINITY, 10.0), 0.0);
        assert!((t_quantile(0.975, 10.0) - 2.2281388519649385).abs() < 1e-7);
    }
}

#[cfg(test)]
mod reference {
    use super::*;

    // scipy.stats.studentized_range
    const CDF: [(f64, usize, f64, f64); 9] = [
        (3.5, 3, 20.0, 0.9441081509182501),
        (1.0, 2, 5.0, 0.48891591956971947),
        (4.2, 5, 12.0, 0.9278321487012018),
        (2.0, 3, 69.0, 0.6607490874281541),
        (8.0, 3, 69.0, 0.9999990371253641),
        (3.0, 4, 2.0, 0.6240216590979846),
        (0.5, 3, 100.0, 0.06653347155777918),
        (5.5, 10, 30.0, 0.9841787707506147),
        (3.31, 3, 1000.0, 0.949152699934008),
    ];

    #[test]
    fn studentized_range_cdf() {
        for (q, k, df, want) in CDF {
            let got = ptukey(q, k, df);
            assert!((got - want).abs() < 1e-6, "q={q} k={k} df={df}: {got} vs {want}");
        }
    }

    #[test]
    fn studentized_range_quantile() {
        assert!((qtukey(0.95, 3, 20.0) - 3.577934725220134).abs() < 1e-5);
        assert!((qtukey(0.95, 4, 60.0) - 3.7370892256353088).abs() < 1e-5);
    }
}
