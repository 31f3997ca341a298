//! Growth-record statistics: summary, one-sample two-tailed t-test, and the
//! visit percentage difference.
//!
//! The Student-t CDF is evaluated through the regularized incomplete beta
//! function (modified Lentz continued fraction); critical values come from
//! bisection on that CDF.

use std::fmt;
use std::path::Path;

use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum StatsError {
    #[error("insufficient data: need at least {needed} samples, got {got}")]
    InsufficientData { needed: usize, got: usize },
    #[error("degenerate sample: zero variance")]
    DegenerateSample,
    #[error("undefined baseline: last value is zero")]
    UndefinedBaseline,
    #[error("invalid argument: {0}")]
    InvalidArgument(String),
}

const LANCZOS_G: f64 = 7.0;
const LANCZOS_COEF: [f64; 9] = [
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

/// Natural log of the gamma function for `x > 0` (Lanczos, g = 7, n = 9).
pub fn ln_gamma(x: f64) -> f64 {
    if x < 0.5 {
        // Reflection keeps the series in its accurate range.
        let pi = std::f64::consts::PI;
        return (pi / (pi * x).sin()).ln() - ln_gamma(1.0 - x);
    }
    let x = x - 1.0;
    let mut sum = LANCZOS_COEF[0];
    for (i, c) in LANCZOS_COEF.iter().enumerate().skip(1) {
        sum += c / (x + i as f64);
    }
    let t = x + LANCZOS_G + 0.5;
    0.5 * (2.0 * std::f64::consts::PI).ln() + (x + 0.5) * t.ln() - t + sum.ln()
}

fn ln_beta(a: f64, b: f64) -> f64 {
    ln_gamma(a) + ln_gamma(b) - ln_gamma(a + b)
}

/// Continued fraction for the incomplete beta function, modified Lentz.
fn beta_continued_fraction(a: f64, b: f64, x: f64) -> f64 {
    const MAX_ITER: usize = 10_000;
    const EPS: f64 = 1e-16;
    const TINY: f64 = 1e-300;

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
    for m in 1..=MAX_ITER {
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

/// Regularized incomplete beta function `I_x(a, b)` for `a, b > 0`,
/// `0 ≤ x ≤ 1`.
pub fn regularized_incomplete_beta(a: f64, b: f64, x: f64) -> f64 {
    assert!(a > 0.0 && b > 0.0, "shape parameters must be positive");
    if x <= 0.0 {
        return 0.0;
    }
    if x >= 1.0 {
        return 1.0;
    }
    let front = (a * x.ln() + b * (1.0 - x).ln() - ln_beta(a, b)).exp();
    // The fraction converges fast for x below the mean; use symmetry above it.
    if x < (a + 1.0) / (a + b + 2.0) {
        front * beta_continued_fraction(a, b, x) / a
    } else {
        1.0 - front * beta_continued_fraction(b, a, 1.0 - x) / b
    }
}

/// Two-tailed tail mass `P(|T| ≥ |t|)` of Student's t with `df` degrees of
/// freedom.
pub fn t_two_tailed(t: f64, df: f64) -> f64 {
    let x = df / (df + t * t);
    regularized_incomplete_beta(df / 2.0, 0.5, x)
}

/// Student-t CDF `F(t; df)`.
pub fn t_cdf(t: f64, df: f64) -> f64 {
    let tail = 0.5 * t_two_tailed(t, df);
    if t >= 0.0 {
        1.0 - tail
    } else {
        tail
    }
}

/// Quantile of Student's t by bisection on [`t_cdf`], to 1e-10 in `t`.
pub fn t_quantile(p: f64, df: f64) -> Result<f64, StatsError> {
    if !(p > 0.0 && p < 1.0) {
        return Err(StatsError::InvalidArgument(format!("probability {p} outside (0, 1)")));
    }
    if !(df > 0.0) {
        return Err(StatsError::InvalidArgument(format!("df {df} must be positive")));
    }
    if p == 0.5 {
        return Ok(0.0);
    }
    let (mut lo, mut hi) = if p > 0.5 { (0.0, 1.0) } else { (-1.0, 0.0) };
    while t_cdf(hi, df) < p {
        lo = hi;
        hi *= 2.0;
    }
    while t_cdf(lo, df) > p {
        hi = lo;
        lo *= 2.0;
    }
    while hi - lo > 1e-10 {
        let mid = 0.5 * (lo + hi);
        if t_cdf(mid, df) < p {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    Ok(0.5 * (lo + hi))
}

/// Count, mean and (for n ≥ 2) sample variance.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Summary {
    pub n: usize,
    pub mean: f64,
    variance: Option<f64>,
}

impl Summary {
    /// Sample standard deviation (n − 1 denominator).
    pub fn sd(&self) -> Result<f64, StatsError> {
        self.variance.map(f64::sqrt).ok_or(StatsError::InsufficientData {
            needed: 2,
            got: self.n,
        })
    }

    /// Standard error of the mean.
    pub fn se(&self) -> Result<f64, StatsError> {
        Ok(self.sd()? / (self.n as f64).sqrt())
    }
}

/// Two-pass summary with a compensated mean.
pub fn summary(samples: &[f64]) -> Result<Summary, StatsError> {
    let n = samples.len();
    if n == 0 {
        return Err(StatsError::InsufficientData { needed: 1, got: 0 });
    }
    let mut sum = 0.0;
    let mut comp = 0.0;
    for &x in samples {
        // Neumaier summation.
        let t = sum + x;
        if sum.abs() >= x.abs() {
            comp += (sum - t) + x;
        } else {
            comp += (x - t) + sum;
        }
        sum = t;
    }
    let mean = (sum + comp) / n as f64;
    let variance = (n >= 2).then(|| {
        let (ss, s) = samples.iter().fold((0.0, 0.0), |(ss, s), &x| {
            let d = x - mean;
            (ss + d * d, s + d)
        });
        (ss - s * s / n as f64) / (n - 1) as f64
    });
    Ok(Summary { n, mean, variance })
}

/// Full one-sample t-test output; the confidence interval is 95 % on the
/// mean difference.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TTestResult {
    pub n: usize,
    pub mean: f64,
    pub sd: f64,
    pub se: f64,
    pub test_value: f64,
    pub mean_diff: f64,
    pub t: f64,
    pub df: usize,
    pub p_two_tailed: f64,
    pub ci_low: f64,
    pub ci_high: f64,
}

/// One-sample two-tailed t-test of `samples` against `test_value`.
pub fn one_sample_ttest(samples: &[f64], test_value: f64) -> Result<TTestResult, StatsError> {
    if samples.len() < 2 {
        return Err(StatsError::InsufficientData {
            needed: 2,
            got: samples.len(),
        });
    }
    if !test_value.is_finite() || samples.iter().any(|x| !x.is_finite()) {
        return Err(StatsError::InvalidArgument("non-finite input".into()));
    }
    let s = summary(samples)?;
    let sd = s.sd()?;
    if sd == 0.0 || !(sd > f64::EPSILON * s.mean.abs()) {
        return Err(StatsError::DegenerateSample);
    }
    let se = s.se()?;
    let df = s.n - 1;
    let mean_diff = s.mean - test_value;
    let t = mean_diff / se;
    let p_two_tailed = t_two_tailed(t, df as f64).clamp(0.0, 1.0);
    let t_crit = t_quantile(0.975, df as f64)?;
    Ok(TTestResult {
        n: s.n,
        mean: s.mean,
        sd,
        se,
        test_value,
        mean_diff,
        t,
        df,
        p_two_tailed,
        ci_low: mean_diff - t_crit * se,
        ci_high: mean_diff + t_crit * se,
    })
}

impl fmt::Display for TTestResult {
    /// Plain report with four decimals, one `key value` pair per line.
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        writeln!(f, "n {}", self.n)?;
        writeln!(f, "mean {:.4}", self.mean)?;
        writeln!(f, "sd {:.4}", self.sd)?;
        writeln!(f, "se {:.4}", self.se)?;
        writeln!(f, "test_value {:.4}", self.test_value)?;
        writeln!(f, "mean_diff {:.4}", self.mean_diff)?;
        writeln!(f, "t {:.4}", self.t)?;
        writeln!(f, "df {}", self.df)?;
        writeln!(f, "p_two_tailed {:.4}", self.p_two_tailed)?;
        writeln!(f, "ci_low {:.4}", self.ci_low)?;
        writeln!(f, "ci_high {:.4}", self.ci_high)
    }
}

/// Percentage change from `last_value` to `current_value`.
pub fn pct_diff(last_value: f64, current_value: f64) -> Result<f64, StatsError> {
    if last_value == 0.0 {
        return Err(StatsError::UndefinedBaseline);
    }
    Ok((current_value - last_value) / last_value * 100.0)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct HeightRecord {
    pub sample_id: u32,
    pub day_label: String,
    pub height_cm: f64,
}

#[derive(Debug, thiserror::Error)]
pub enum HeightCsvError {
    #[error("{0}")]
    Io(#[from] std::io::Error),
    #[error("empty file")]
    Empty,
    #[error("header must start with `sample` and name at least one day")]
    BadHeader,
    #[error("row {row}, column {column}: {message}")]
    Cell { row: usize, column: usize, message: String },
}

/// Sample rows × day columns, as in the growth record sheet.
#[derive(Debug, Clone, PartialEq)]
pub struct HeightTable {
    pub day_labels: Vec<String>,
    /// `(sample_id, heights)`; `heights` is aligned with `day_labels`.
    pub rows: Vec<(u32, Vec<f64>)>,
}

impl HeightTable {
    /// Parses `sample,<day labels…>` CSV. Rows and columns in errors are
    /// 1-based, the header being row 1.
    pub fn parse(text: &str) -> Result<HeightTable, HeightCsvError> {
        if text.trim().is_empty() {
            return Err(HeightCsvError::Empty);
        }
        let mut reader = csv::ReaderBuilder::new()
            .has_headers(false)
            .flexible(true)
            .from_reader(text.as_bytes());
        let mut records = reader.records();
        let header = match records.next() {
            Some(Ok(h)) => h,
            Some(Err(e)) => {
                return Err(HeightCsvError::Cell {
                    row: 1,
                    column: 1,
                    message: e.to_string(),
                })
            }
            None => return Err(HeightCsvError::Empty),
        };
        if header.get(0) != Some("sample") || header.len() < 2 {
            return Err(HeightCsvError::BadHeader);
        }
        let day_labels: Vec<String> = header.iter().skip(1).map(str::to_string).collect();
        let mut rows = Vec::new();
        for (i, rec) in records.enumerate() {
            let row = i + 2;
            let rec = rec.map_err(|e| HeightCsvError::Cell {
                row,
                column: 1,
                message: e.to_string(),
            })?;
            if rec.len() != header.len() {
                return Err(HeightCsvError::Cell {
                    row,
                    column: rec.len().min(header.len()) + 1,
                    message: format!("expected {} cells, found {}", header.len(), rec.len()),
                });
            }
            let id: u32 = rec[0].trim().parse().map_err(|_| HeightCsvError::Cell {
                row,
                column: 1,
                message: format!("sample id {:?} is not an integer", &rec[0]),
            })?;
            let mut heights = Vec::with_capacity(day_labels.len());
            for (j, cell) in rec.iter().enumerate().skip(1) {
                let h: f64 = cell.trim().parse().map_err(|_| HeightCsvError::Cell {
                    row,
                    column: j + 1,
                    message: format!("{cell:?} is not a number"),
                })?;
                if !(h > 0.0 && h.is_finite()) {
                    return Err(HeightCsvError::Cell {
                        row,
                        column: j + 1,
                        message: format!("height {h} must be positive"),
                    });
                }
                heights.push(h);
            }
            rows.push((id, heights));
        }
        if rows.is_empty() {
            return Err(HeightCsvError::Empty);
        }
        Ok(HeightTable { day_labels, rows })
    }

    /// Writes the table back out in the form [`HeightTable::parse`] reads.
    pub fn to_csv(&self) -> String {
        let mut w = csv::WriterBuilder::new()
            .terminator(csv::Terminator::Any(b'\n'))
            .from_writer(Vec::new());
        let mut header = vec!["sample".to_string()];
        header.extend(self.day_labels.iter().cloned());
        w.write_record(&header).expect("in-memory write");
        for (id, heights) in &self.rows {
            let mut rec = vec![id.to_string()];
            rec.extend(heights.iter().map(|h| h.to_string()));
            w.write_record(&rec).expect("in-memory write");
        }
        String::from_utf8(w.into_inner().expect("in-memory flush")).expect("utf-8")
    }

    /// Flattened per-day records.
    pub fn records(&self) -> Vec<HeightRecord> {
        self.day_labels
            .iter()
            .enumerate()
            .flat_map(|(j, label)| {
                self.rows.iter().map(move |(id, h)| HeightRecord {
                    sample_id: *id,
                    day_label: label.clone(),
                    height_cm: h[j],
                })
            })
            .collect()
    }

    /// Finds a day column by its full label or by its leading words, so
    /// `"Day 29"` selects `"Day 29 6-Feb"`.
    pub fn find_day(&self, label: &str) -> Option<usize> {
        let label = label.trim();
        self.day_labels
            .iter()
            .position(|l| l == label)
            .or_else(|| {
                self.day_labels
                    .iter()
                    .position(|l| l.strip_prefix(label).is_some_and(|rest| rest.starts_with(' ')))
            })
    }

    pub fn column(&self, index: usize) -> Vec<f64> {
        self.rows.iter().map(|(_, h)| h[index]).collect()
    }
}

/// Reads a height table from disk.
pub fn load_height_csv(path: &Path) -> Result<HeightTable, HeightCsvError> {
    HeightTable::parse(&std::fs::read_to_string(path)?)
}

/// Sample values from either a height table (choosing `day`, or the last day
/// column when `day` is `None`) or a bare list of numbers separated by commas
/// or newlines.
pub fn samples_from_text(text: &str, day: Option<&str>) -> Result<Vec<f64>, String> {
    if text.trim_start().starts_with("sample") {
        let table = HeightTable::parse(text).map_err(|e| e.to_string())?;
        let index = match day {
            Some(d) => table
                .find_day(d)
                .ok_or_else(|| format!("unknown day {d:?}; available: {}", table.day_labels.join(", ")))?,
            None => table.day_labels.len() - 1,
        };
        return Ok(table.column(index));
    }
    text.split(|c: char| c == ',' || c.is_whitespace())
        .filter(|s| !s.is_empty())
        .map(|s| s.parse::<f64>().map_err(|_| format!("{s:?} is not a number")))
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    const DAY29: [f64; 11] = [25.1, 26.7, 24.9, 24.4, 23.9, 24.5, 25.1, 26.3, 22.8, 24.8, 25.6];

    #[test]
    fn ln_gamma_known_values() {
        assert!((ln_gamma(1.0)).abs() < 1e-13);
        assert!((ln_gamma(0.5) - std::f64::consts::PI.sqrt().ln()).abs() < 1e-13);
        assert!((ln_gamma(10.0) - 362_880f64.ln()).abs() < 1e-12);
        assert!((ln_gamma(0.1) - 2.252_712_651_734_206).abs() < 1e-12);
    }

    #[test]
    fn cdf_is_half_at_zero() {
        for df in 1..=60 {
            assert_eq!(t_cdf(0.0, df as f64), 0.5);
        }
    }

    #[test]
    fn cauchy_closed_form() {
        // df = 1 is the Cauchy distribution.
        for t in [-7.0, -1.0, -0.3, 0.2, 1.0, 3.0, 40.0] {
            let exact = 0.5 + (t as f64).atan() / std::f64::consts::PI;
            assert!((t_cdf(t, 1.0) - exact).abs() < 1e-12, "t={t}");
        }
    }

    #[test]
    fn quantiles_match_tables() {
        // Two-sided 95 % critical values.
        for (df, crit) in [(1.0, 12.706_204_736), (10.0, 2.228_138_852), (30.0, 2.042_272_456)] {
            assert!((t_quantile(0.975, df).unwrap() - crit).abs() < 1e-8, "df={df}");
        }
        assert!((t_quantile(0.025, 10.0).unwrap() + 2.228_138_852).abs() < 1e-8);
        assert!(t_quantile(1.0, 3.0).is_err());
    }

    #[test]
    fn day_29_reproduces_reported_battery() {
        let r = one_sample_ttest(&DAY29, 24.688).unwrap();
        assert_eq!(r.n, 11);
        assert_eq!(r.df, 10);
        assert!((r.mean - 24.9182).abs() < 1e-4);
        assert!((r.sd - 1.07686).abs() < 1e-4);
        assert!((r.se - 0.32469).abs() < 1e-4);
        assert!((r.mean_diff - 0.23018).abs() < 1e-4);
        assert!((r.t - 0.709).abs() < 1e-3);
        assert!((r.p_two_tailed - 0.495).abs() < 1e-3);
        assert!((r.ci_low + 0.4933).abs() < 1e-3);
        assert!((r.ci_high - 0.9536).abs() < 1e-3);
    }

    #[test]
    fn symmetric_sample_at_test_value() {
        let r = one_sample_ttest(&[23.688, 25.688], 24.688).unwrap();
        assert!(r.mean_diff.abs() < 1e-12);
        assert!(r.t.abs() < 1e-10);
        assert!((r.p_two_tailed - 1.0).abs() < 1e-9);
    }

    #[test]
    fn ttest_errors() {
        assert_eq!(
            one_sample_ttest(&[5.0], 1.0),
            Err(StatsError::InsufficientData { needed: 2, got: 1 })
        );
        assert_eq!(one_sample_ttest(&[3.0, 3.0, 3.0], 1.0), Err(StatsError::DegenerateSample));
    }

    #[test]
    fn summary_of_one_has_no_spread() {
        let s = summary(&[5.0]).unwrap();
        assert_eq!((s.n, s.mean), (1, 5.0));
        assert!(s.sd().is_err() && s.se().is_err());
        assert!(summary(&[]).is_err());
        let s = summary(&DAY29).unwrap();
        assert_eq!(s.n, 11);
        assert!((s.mean - 24.9182).abs() < 1e-4);
    }

    #[test]
    fn pct_diff_rules() {
        assert!((pct_diff(25.0, 30.0).unwrap() - 20.0).abs() < 1e-12);
        assert_eq!(pct_diff(7.5, 7.5).unwrap(), 0.0);
        assert_eq!(pct_diff(0.0, 3.0), Err(StatsError::UndefinedBaseline));
    }

    #[test]
    fn height_table_errors_locate_cell() {
        assert!(matches!(HeightTable::parse(""), Err(HeightCsvError::Empty)));
        assert!(matches!(HeightTable::parse("x,Day 1\n1,2\n"), Err(HeightCsvError::BadHeader)));
        match HeightTable::parse("sample,Day 1,Day 2\n1,2.0,3.0\n2,4.0,tall\n") {
            Err(HeightCsvError::Cell { row, column, .. }) => assert_eq!((row, column), (3, 3)),
            other => panic!("{other:?}"),
        }
        match HeightTable::parse("sample,Day 1,Day 2\n1,2.0\n") {
            Err(HeightCsvError::Cell { row, .. }) => assert_eq!(row, 2),
            other => panic!("{other:?}"),
        }
    }

    #[test]
    fn day_lookup_by_prefix() {
        let t = HeightTable::parse("sample,Day 2 3-Jan,Day 29 6-Feb\n1,1.0,2.0\n").unwrap();
        assert_eq!(t.find_day("Day 29"), Some(1));
        assert_eq!(t.find_day("Day 2"), Some(0));
        assert_eq!(t.find_day("Day 29 6-Feb"), Some(1));
        assert_eq!(t.find_day("Day 3"), None);
    }

    #[test]
    fn samples_from_plain_list() {
        assert_eq!(samples_from_text("1.5, 2\n3\n", None).unwrap(), vec![1.5, 2.0, 3.0]);
        assert!(samples_from_text("1.5, x", None).is_err());
    }

    proptest! {
        #[test]
        fn location_scale_invariance(
            xs in proptest::collection::vec(-50.0f64..50.0, 3..30),
            tv in -10.0f64..10.0,
            a in 0.1f64..20.0,
            b in -100.0f64..100.0,
        ) {
            let Ok(base) = one_sample_ttest(&xs, tv) else { return Ok(()) };
            let ys: Vec<f64> = xs.iter().map(|x| a * x + b).collect();
            let moved = one_sample_ttest(&ys, a * tv + b).unwrap();
            prop_assert_eq!(moved.df, base.df);
            prop_assert!((moved.t - base.t).abs() <= 1e-7 * (1.0 + base.t.abs()));
            prop_assert!((moved.p_two_tailed - base.p_two_tailed).abs() <= 1e-7);
        }

        #[test]
        fn reflection_negates_t_and_interval(
            xs in proptest::collection::vec(-50.0f64..50.0, 3..30),
            tv in -10.0f64..10.0,
        ) {
            let Ok(base) = one_sample_ttest(&xs, tv) else { return Ok(()) };
            let ys: Vec<f64> = xs.iter().map(|x| 2.0 * tv - x).collect();
            let r = one_sample_ttest(&ys, tv).unwrap();
            let tol = 1e-8 * (1.0 + base.t.abs() + base.ci_high.abs() + base.ci_low.abs());
            prop_assert!((r.t + base.t).abs() <= tol);
            prop_assert!((r.ci_low + base.ci_high).abs() <= tol);
            prop_assert!((r.ci_high + base.ci_low).abs() <= tol);
            prop_assert!((r.p_two_tailed - base.p_two_tailed).abs() <= 1e-9);
            prop_assert!(base.ci_low <= base.mean_diff && base.mean_diff <= base.ci_high);
        }

        #[test]
        fn p_decreases_in_abs_t(df in 1u32..60, t1 in 0.0f64..20.0, dt in 0.0f64..5.0) {
            let df = f64::from(df);
            prop_assert!(t_two_tailed(t1 + dt, df) <= t_two_tailed(t1, df));
        }
    }
}
