//! Paired Student t-test, the squared-deviation reproducibility test,
//! balanced two-way ANOVA with interaction, and the t/F distribution
//! functions behind their p-values.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::protocol::{Level, Position};

pub const DEFAULT_ALPHA: f64 = 0.05;

const LANCZOS_G: f64 = 7.0;
#[allow(clippy::excessive_precision)]
const LANCZOS: [f64; 9] = [
    0.999_999_999_999_809_93,
    676.520_368_121_885_1,
    -1_259.139_216_722_402_8,
    771.323_428_777_653_13,
    -176.615_029_162_140_59,
    12.507_343_278_686_905,
    -0.138_571_095_265_720_12,
    9.984_369_578_019_571_6e-6,
    1.505_632_735_149_311_6e-7,
];

/// Natural log of the gamma function for `x > 0` (Lanczos, g = 7).
pub fn ln_gamma(x: f64) -> f64 {
    if x < 0.5 {
        // Reflection.
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
fn beta_continued_fraction(a: f64, b: f64, x: f64) -> f64 {
    const TINY: f64 = 1e-300;
    const EPS: f64 = 1e-16;
    let qab = a + b;
    let qap = a + 1.0;
    let qam = a - 1.0;
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

/// Regularised incomplete beta `I_x(a, b)`, where the caller supplies both
/// `x` and `y = 1 − x` so that neither loses precision near 1.
pub fn beta_reg(a: f64, b: f64, x: f64, y: f64) -> f64 {
    if x <= 0.0 {
        return 0.0;
    }
    if y <= 0.0 {
        return 1.0;
    }
    let ln_front = a * x.ln() + b * y.ln() - ln_beta(a, b);
    if x < (a + 1.0) / (a + b + 2.0) {
        ln_front.exp() * beta_continued_fraction(a, b, x) / a
    } else {
        1.0 - ln_front.exp() * beta_continued_fraction(b, a, y) / b
    }
}

/// Complement `1 − I_x(a, b)` computed without cancellation.
fn beta_reg_complement(a: f64, b: f64, x: f64, y: f64) -> f64 {
    beta_reg(b, a, y, x)
}

fn check_df(name: &str, df: f64) -> Result<()> {
    if !(df >= 1.0 && df.is_finite()) {
        return Err(Error::InvalidDegreesOfFreedom(format!("{name} = {df} (must be >= 1)")));
    }
    Ok(())
}

/// Two-sided tail `P(|T| > |t|)` of Student's t.
fn t_two_sided(t: f64, df: f64) -> f64 {
    if t.is_infinite() {
        return 0.0;
    }
    let t2 = t * t;
    beta_reg(0.5 * df, 0.5, df / (df + t2), t2 / (df + t2))
}

/// Student t cumulative distribution function.
pub fn t_cdf(x: f64, df: f64) -> Result<f64> {
    check_df("df", df)?;
    if x.is_nan() {
        return Err(Error::Config("t_cdf argument is NaN".into()));
    }
    let tail = 0.5 * t_two_sided(x, df);
    Ok(if x > 0.0 { 1.0 - tail } else { tail })
}

/// Fisher–Snedecor F cumulative distribution function.
pub fn f_cdf(x: f64, d1: f64, d2: f64) -> Result<f64> {
    check_df("d1", d1)?;
    check_df("d2", d2)?;
    if x.is_nan() {
        return Err(Error::Config("f_cdf argument is NaN".into()));
    }
    if x <= 0.0 {
        return Ok(0.0);
    }
    if x.is_infinite() {
        return Ok(1.0);
    }
    let den = d1 * x + d2;
    Ok(beta_reg(0.5 * d1, 0.5 * d2, d1 * x / den, d2 / den))
}

/// Upper tail `P(F > x)`.
pub fn f_sf(x: f64, d1: f64, d2: f64) -> Result<f64> {
    check_df("d1", d1)?;
    check_df("d2", d2)?;
    if x.is_nan() {
        return Err(Error::Config("f_sf argument is NaN".into()));
    }
    if x <= 0.0 {
        return Ok(1.0);
    }
    if x.is_infinite() {
        return Ok(0.0);
    }
    let den = d1 * x + d2;
    Ok(beta_reg_complement(0.5 * d1, 0.5 * d2, d1 * x / den, d2 / den))
}

/// Sample mean and (n − 1) standard deviation.
pub fn mean_sd(values: &[f64]) -> (f64, f64) {
    let n = values.len();
    if n == 0 {
        return (f64::NAN, f64::NAN);
    }
    let mean = values.iter().sum::<f64>() / n as f64;
    if n < 2 {
        return (mean, f64::NAN);
    }
    let ss: f64 = values.iter().map(|v| (v - mean).powi(2)).sum();
    (mean, (ss / (n - 1) as f64).sqrt())
}

/// Matched measurements: `first[i]` (2D) pairs with `second[i]` (4D).
#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct PairedSample {
    pub first: Vec<f64>,
    pub second: Vec<f64>,
    /// Optional pair labels (operator/sector); unique when present.
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub labels: Vec<String>,
}

impl PairedSample {
    pub fn new(first: Vec<f64>, second: Vec<f64>) -> Result<Self> {
        Self::labelled(first, second, Vec::new())
    }

    pub fn labelled(first: Vec<f64>, second: Vec<f64>, labels: Vec<String>) -> Result<Self> {
        if first.len() != second.len() {
            return Err(Error::Pairing(format!(
                "paired sample lengths differ ({} vs {})",
                first.len(),
                second.len()
            )));
        }
        if !labels.is_empty() {
            if labels.len() != first.len() {
                return Err(Error::Pairing("one label per pair required".into()));
            }
            let mut sorted = labels.clone();
            sorted.sort();
            if let Some(w) = sorted.windows(2).find(|w| w[0] == w[1]) {
                return Err(Error::Pairing(format!("duplicate pair label '{}'", w[0])));
            }
        }
        if first.iter().chain(&second).any(|v| !v.is_finite()) {
            return Err(Error::DegenerateSample("non-finite value".into()));
        }
        Ok(PairedSample {
            first,
            second,
            labels,
        })
    }

    pub fn len(&self) -> usize {
        self.first.len()
    }

    pub fn is_empty(&self) -> bool {
        self.first.is_empty()
    }

    pub fn swapped(&self) -> PairedSample {
        PairedSample {
            first: self.second.clone(),
            second: self.first.clone(),
            labels: self.labels.clone(),
        }
    }

    fn scale(&self) -> f64 {
        self.first
            .iter()
            .chain(&self.second)
            .fold(0.0f64, |m, v| m.max(v.abs()))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TTestResult {
    pub n: usize,
    /// Mean of `first − second`.
    pub mean_diff: f64,
    pub sd_diff: f64,
    pub t: f64,
    pub df: f64,
    pub p_two_sided: f64,
}

impl TTestResult {
    pub fn significant(&self, alpha: f64) -> bool {
        self.p_two_sided < alpha
    }
}

/// Student's t-test on the within-pair differences `first − second`.
pub fn paired_t_test(s: &PairedSample) -> Result<TTestResult> {
    let n = s.len();
    if n < 2 {
        return Err(Error::DegenerateSample(format!("need at least 2 pairs, got {n}")));
    }
    let diffs: Vec<f64> = s.first.iter().zip(&s.second).map(|(a, b)| a - b).collect();
    let (mean, sd) = mean_sd(&diffs);
    if sd == 0.0 || sd <= 1e-12 * s.scale() {
        return Err(Error::DegenerateSample(
            "differences have zero variance".into(),
        ));
    }
    let t = mean / (sd / (n as f64).sqrt());
    let df = (n - 1) as f64;
    Ok(TTestResult {
        n,
        mean_diff: mean,
        sd_diff: sd,
        t,
        df,
        p_two_sided: t_two_sided(t, df).clamp(0.0, 1.0),
    })
}

/// Squared deviations of `values` from their own mean.
pub fn squared_deviations(values: &[f64]) -> Vec<f64> {
    let (mean, _) = mean_sd(values);
    values.iter().map(|v| (v - mean).powi(2)).collect()
}

/// Reproducibility test: each modality's values become squared deviations
/// from that modality's mean, then the transformed pairs are t-tested.
pub fn variance_reproducibility_test(s: &PairedSample) -> Result<TTestResult> {
    if s.len() < 2 {
        return Err(Error::DegenerateSample(format!(
            "need at least 2 pairs, got {}",
            s.len()
        )));
    }
    let scale = s.scale();
    let (_, sd1) = mean_sd(&s.first);
    let (_, sd2) = mean_sd(&s.second);
    if sd1 <= 1e-12 * scale && sd2 <= 1e-12 * scale {
        return Err(Error::DegenerateSample(
            "both modalities are constant".into(),
        ));
    }
    let t = PairedSample {
        first: squared_deviations(&s.first),
        second: squared_deviations(&s.second),
        labels: Vec::new(),
    };
    paired_t_test(&t)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AnovaRow {
    pub ss: f64,
    pub df: f64,
    pub ms: f64,
    pub f: f64,
    pub p: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ResidualRow {
    pub ss: f64,
    pub df: f64,
    pub ms: f64,
}

/// Fixed-effects two-way ANOVA table with interaction.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AnovaTable {
    pub factor_a: AnovaRow,
    pub factor_b: AnovaRow,
    pub interaction: AnovaRow,
    pub residual: ResidualRow,
    pub total_ss: f64,
    pub total_df: f64,
}

fn effect_row(ss: f64, df: f64, ms_res: f64, df_res: f64, all_zero: bool) -> Result<AnovaRow> {
    let ms = ss / df;
    let (f, p) = if all_zero || ms <= 0.0 {
        (0.0, 1.0)
    } else if ms_res <= 0.0 {
        (f64::INFINITY, 0.0)
    } else {
        let f = ms / ms_res;
        (f, f_sf(f, df, df_res)?)
    };
    Ok(AnovaRow { ss, df, ms, f, p })
}

/// Balanced two-way ANOVA with interaction. `a[i]` and `b[i]` are the factor
/// levels (`0..na`, `0..nb`) of `values[i]`; every cell needs the same count,
/// at least 2.
///
/// When the response is constant, every SS is zero and each F is reported
/// as 0 with p = 1.
pub fn two_way_anova_indexed(
    values: &[f64],
    a: &[usize],
    b: &[usize],
    na: usize,
    nb: usize,
) -> Result<AnovaTable> {
    if values.len() != a.len() || values.len() != b.len() {
        return Err(Error::UnbalancedDesign("factor lists differ in length".into()));
    }
    if na < 2 || nb < 2 {
        return Err(Error::UnbalancedDesign("each factor needs at least 2 levels".into()));
    }
    if values.iter().any(|v| !v.is_finite()) {
        return Err(Error::DegenerateSample("non-finite response".into()));
    }
    let mut counts = vec![0usize; na * nb];
    let mut sums = vec![0.0; na * nb];
    for ((&v, &i), &j) in values.iter().zip(a).zip(b) {
        if i >= na || j >= nb {
            return Err(Error::UnbalancedDesign(format!("level ({i}, {j}) out of range")));
        }
        counts[i * nb + j] += 1;
        sums[i * nb + j] += v;
    }
    let r = counts[0];
    if r < 2 || counts.iter().any(|&c| c != r) {
        return Err(Error::UnbalancedDesign(format!(
            "cell counts must be equal and >= 2 (got {counts:?})"
        )));
    }
    let rf = r as f64;
    let n = values.len() as f64;
    let grand = values.iter().sum::<f64>() / n;
    let cell: Vec<f64> = sums.iter().map(|s| s / rf).collect();
    let row_mean: Vec<f64> = (0..na)
        .map(|i| (0..nb).map(|j| cell[i * nb + j]).sum::<f64>() / nb as f64)
        .collect();
    let col_mean: Vec<f64> = (0..nb)
        .map(|j| (0..na).map(|i| cell[i * nb + j]).sum::<f64>() / na as f64)
        .collect();

    let ss_a = (nb as f64) * rf * row_mean.iter().map(|m| (m - grand).powi(2)).sum::<f64>();
    let ss_b = (na as f64) * rf * col_mean.iter().map(|m| (m - grand).powi(2)).sum::<f64>();
    let mut ss_ab = 0.0;
    for i in 0..na {
        for j in 0..nb {
            ss_ab += (cell[i * nb + j] - row_mean[i] - col_mean[j] + grand).powi(2);
        }
    }
    ss_ab *= rf;
    let ss_res: f64 = values
        .iter()
        .zip(a)
        .zip(b)
        .map(|((v, &i), &j)| (v - cell[i * nb + j]).powi(2))
        .sum();
    let ss_total: f64 = values.iter().map(|v| (v - grand).powi(2)).sum();
    let energy: f64 = values.iter().map(|v| v * v).sum();
    let all_zero = ss_total <= 1e-24 * energy;

    let df_a = (na - 1) as f64;
    let df_b = (nb - 1) as f64;
    let df_ab = df_a * df_b;
    let df_res = (na * nb * (r - 1)) as f64;
    let ms_res = ss_res / df_res;
    let row = |ss: f64, df: f64| effect_row(ss, df, ms_res, df_res, all_zero);
    let (ss_a, ss_b, ss_ab, ss_res, ss_total) = if all_zero {
        (0.0, 0.0, 0.0, 0.0, 0.0)
    } else {
        (ss_a, ss_b, ss_ab, ss_res, ss_total)
    };
    Ok(AnovaTable {
        factor_a: row(ss_a, df_a)?,
        factor_b: row(ss_b, df_b)?,
        interaction: row(ss_ab, df_ab)?,
        residual: ResidualRow {
            ss: ss_res,
            df: df_res,
            ms: if all_zero { 0.0 } else { ms_res },
        },
        total_ss: ss_total,
        total_df: n - 1.0,
    })
}

/// Two-way ANOVA over gland location: level (apex/mid/base) is factor A,
/// position (paramedian/lateral) is factor B.
pub fn two_way_anova(values: &[f64], level: &[Level], position: &[Position]) -> Result<AnovaTable> {
    let a: Vec<usize> = level.iter().map(|l| l.index()).collect();
    let b: Vec<usize> = position.iter().map(|p| p.index()).collect();
    two_way_anova_indexed(values, &a, &b, Level::ALL.len(), Position::ALL.len())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn t_cdf_anchor_values() {
        for df in [1.0, 4.0, 30.0] {
            assert_eq!(t_cdf(0.0, df).unwrap(), 0.5);
        }
        assert!((t_cdf(1e6, 5.0).unwrap() - 1.0).abs() < 1e-12);
        assert!((t_cdf(2.776, 4.0).unwrap() - 0.975).abs() < 1e-4);
        assert!(t_cdf(1.0, 0.5).is_err());
        assert!(f_cdf(1.0, 0.0, 3.0).is_err());
    }

    #[test]
    fn ln_gamma_matches_factorials() {
        let mut fact = 1.0f64;
        for n in 1..20 {
            fact *= n as f64;
            let rel = (ln_gamma(n as f64 + 1.0) - fact.ln()).abs() / fact.ln().max(1.0);
            assert!(rel < 1e-14, "n = {n}");
        }
        assert!((ln_gamma(0.5) - std::f64::consts::PI.sqrt().ln()).abs() < 1e-14);
    }

    #[test]
    fn paired_t_known_differences() {
        let s = PairedSample::new(vec![1.0, 2.0, 3.0, 4.0, 5.0], vec![0.0; 5]).unwrap();
        let r = paired_t_test(&s).unwrap();
        assert!((r.t - 4.242_640_687_119_285).abs() < 1e-12);
        assert_eq!(r.df, 4.0);
        // Frozen from a 50-digit evaluation of the t distribution.
        assert!((r.p_two_sided - 0.013_235_599_563_682_69).abs() < 1e-12);
        let sw = paired_t_test(&s.swapped()).unwrap();
        assert_eq!(sw.t, -r.t);
        assert_eq!(sw.p_two_sided, r.p_two_sided);
    }

    #[test]
    fn zero_variance_differences_are_degenerate() {
        let s = PairedSample::new(vec![1.0, 2.0, 3.0], vec![1.0, 2.0, 3.0]).unwrap();
        assert!(matches!(paired_t_test(&s), Err(Error::DegenerateSample(_))));
        assert!(matches!(
            variance_reproducibility_test(&s),
            Err(Error::DegenerateSample(_))
        ));
        let c = PairedSample::new(vec![0.1; 4], vec![0.3; 4]).unwrap();
        assert!(matches!(
            variance_reproducibility_test(&c),
            Err(Error::DegenerateSample(_))
        ));
        let one = PairedSample::new(vec![1.0], vec![2.0]).unwrap();
        assert!(paired_t_test(&one).is_err());
    }

    #[test]
    fn paired_sample_rejects_mismatch_and_duplicate_labels() {
        assert!(PairedSample::new(vec![1.0], vec![]).is_err());
        assert!(PairedSample::labelled(
            vec![1.0, 2.0],
            vec![1.0, 2.0],
            vec!["a".into(), "a".into()]
        )
        .is_err());
    }

    #[test]
    fn variance_test_transforms_to_squared_deviations() {
        let first = vec![1.0, 5.0, 2.0, 8.0, 4.0];
        let second = vec![3.0, 3.5, 2.5, 4.0, 3.0];
        let s = PairedSample::new(first.clone(), second.clone()).unwrap();
        let direct = variance_reproducibility_test(&s).unwrap();
        let manual = paired_t_test(
            &PairedSample::new(squared_deviations(&first), squared_deviations(&second)).unwrap(),
        )
        .unwrap();
        assert_eq!(direct, manual);
        // Mean squared deviation of [1,5,2,8,4] is 6.0.
        assert!((squared_deviations(&first).iter().sum::<f64>() / 5.0 - 6.0).abs() < 1e-12);
    }

    fn toy() -> (Vec<f64>, Vec<usize>, Vec<usize>) {
        // 3×2 design, cell means all 0 except (2, 1) = 6, three replicates.
        let noise = [-0.02, 0.005, 0.015];
        let (mut y, mut a, mut b) = (vec![], vec![], vec![]);
        for i in 0..3 {
            for j in 0..2 {
                let m = if (i, j) == (2, 1) { 6.0 } else { 0.0 };
                for e in noise {
                    y.push(m + e * (1.0 + 0.3 * i as f64 + 0.1 * j as f64));
                    a.push(i);
                    b.push(j);
                }
            }
        }
        (y, a, b)
    }

    #[test]
    fn anova_toy_matches_reference_table() {
        let (y, a, b) = toy();
        let t = two_way_anova_indexed(&y, &a, &b, 3, 2).unwrap();
        // Reference: statsmodels OLS y ~ C(a)*C(b), type II sums of squares.
        let rel = |x: f64, r: f64| (x - r).abs() / r;
        assert!(rel(t.factor_a.ss, 36.0) < 1e-9);
        assert!(rel(t.factor_b.ss, 18.0) < 1e-9);
        assert!(rel(t.interaction.ss, 36.0) < 1e-9);
        assert!(rel(t.residual.ss, 0.007_351_5) < 1e-9);
        assert!(rel(t.factor_a.f, 29_381.758_824_729_65) < 1e-8);
        assert!(rel(t.factor_b.f, 29_381.758_824_729_75) < 1e-8);
        assert!(rel(t.interaction.f, 29_381.758_824_729_72) < 1e-8);
        assert_eq!(t.residual.df, 12.0);
        for row in [t.factor_a, t.factor_b, t.interaction] {
            assert!(row.p < 1e-20);
        }
        let sum = t.factor_a.ss + t.factor_b.ss + t.interaction.ss + t.residual.ss;
        assert!((sum - t.total_ss).abs() <= 1e-6 * t.total_ss);
    }

    #[test]
    fn anova_constant_response_reports_zero() {
        let (_, a, b) = toy();
        let y = vec![0.37; a.len()];
        let t = two_way_anova_indexed(&y, &a, &b, 3, 2).unwrap();
        for row in [t.factor_a, t.factor_b, t.interaction] {
            assert_eq!((row.ss, row.f, row.p), (0.0, 0.0, 1.0));
        }
        assert_eq!(t.residual.ss, 0.0);
    }

    #[test]
    fn anova_permuting_labels_permutes_attribution() {
        let (y, a, b) = toy();
        let t = two_way_anova_indexed(&y, &a, &b, 3, 2).unwrap();
        // Relabel level i -> (i + 1) % 3 and swap b.
        let a2: Vec<usize> = a.iter().map(|i| (i + 1) % 3).collect();
        let b2: Vec<usize> = b.iter().map(|j| 1 - j).collect();
        let u = two_way_anova_indexed(&y, &a2, &b2, 3, 2).unwrap();
        assert!((t.factor_a.ss - u.factor_a.ss).abs() < 1e-9);
        assert!((t.interaction.ss - u.interaction.ss).abs() < 1e-9);
        assert!((t.total_ss - u.total_ss).abs() < 1e-12);
    }

    #[test]
    fn anova_rejects_unbalanced_design() {
        let (mut y, mut a, mut b) = toy();
        y.pop();
        a.pop();
        b.pop();
        assert!(matches!(
            two_way_anova_indexed(&y, &a, &b, 3, 2),
            Err(Error::UnbalancedDesign(_))
        ));
    }
}
