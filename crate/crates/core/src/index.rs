//! Collapse topics to one score per topic, score documents, aggregate by
//! month and standardize to mean 100, unit sample standard deviation.

use std::fmt;
use std::io::{BufRead, Write};
use std::str::FromStr;

use chrono::{Datelike, NaiveDate};
use ndarray::{Array1, Array2, ArrayView1, ArrayView2};

use crate::corpus::Vocabulary;
use crate::error::{Error, Result};
use crate::scalar::Real;

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct YearMonth {
    pub year: i32,
    pub month: u32,
}

impl YearMonth {
    pub fn new(year: i32, month: u32) -> Result<Self> {
        if !(1..=12).contains(&month) {
            return Err(Error::parse("month", format!("month {month} out of range")));
        }
        Ok(Self { year, month })
    }

    pub fn of(date: NaiveDate) -> Self {
        Self { year: date.year(), month: date.month() }
    }
}

impl fmt::Display for YearMonth {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{:04}-{:02}", self.year, self.month)
    }
}

impl FromStr for YearMonth {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        let bad = || Error::parse("month", format!("expected YYYY-MM, got `{s}`"));
        let (y, m) = s.trim().split_once('-').ok_or_else(bad)?;
        if y.len() != 4 || m.len() != 2 {
            return Err(bad());
        }
        Self::new(y.parse().map_err(|_| bad())?, m.parse().map_err(|_| bad())?)
    }
}

/// Monthly series with strictly increasing months.
#[derive(Debug, Clone, PartialEq)]
pub struct IndexSeries {
    months: Vec<YearMonth>,
    values: Vec<f64>,
}

impl IndexSeries {
    pub fn new(months: Vec<YearMonth>, values: Vec<f64>) -> Result<Self> {
        if months.len() != values.len() {
            return Err(Error::ShapeMismatch(format!("{} months, {} values", months.len(), values.len())));
        }
        if months.windows(2).any(|w| w[0] >= w[1]) {
            return Err(Error::InvalidConfig("series months must be strictly increasing".into()));
        }
        Ok(Self { months, values })
    }

    pub fn months(&self) -> &[YearMonth] {
        &self.months
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    pub fn get(&self, month: YearMonth) -> Option<f64> {
        self.months.binary_search(&month).ok().map(|i| self.values[i])
    }

    /// `month,value` CSV with a header line.
    pub fn write_csv(&self, mut w: impl Write) -> Result<()> {
        writeln!(w, "month,value")?;
        for (m, v) in self.months.iter().zip(&self.values) {
            writeln!(w, "{m},{v}")?;
        }
        Ok(())
    }

    /// Reads `month,value` rows. A header line is skipped if its second
    /// field is not numeric. Rows are sorted by month; duplicates are rejected.
    pub fn read_csv(r: impl BufRead) -> Result<Self> {
        let mut rows = Vec::new();
        for (i, line) in r.lines().enumerate() {
            let line = line?;
            let line = line.trim();
            if line.is_empty() {
                continue;
            }
            let (m, v) = line
                .split_once(',')
                .ok_or_else(|| Error::parse("series csv", format!("line {}: expected month,value", i + 1)))?;
            let Ok(v) = v.trim().parse::<f64>() else {
                if i == 0 {
                    continue;
                }
                return Err(Error::parse("series csv", format!("line {}: bad value `{v}`", i + 1)));
            };
            if !v.is_finite() {
                return Err(Error::parse("series csv", format!("line {}: non-finite value", i + 1)));
            }
            rows.push((m.parse::<YearMonth>()?, v));
        }
        rows.sort_by_key(|r| r.0);
        if rows.windows(2).any(|w| w[0].0 == w[1].0) {
            return Err(Error::parse("series csv", "duplicate month"));
        }
        let (months, values) = rows.into_iter().unzip();
        Self::new(months, values)
    }
}

/// Leading singular triplet of the topic matrix.
#[derive(Debug, Clone, PartialEq)]
pub struct SvdProjection {
    /// `u1^T T`, one score per topic.
    pub scores: Array1<f64>,
    pub sigma: f64,
    /// Leading left singular vector, length N.
    pub u: Array1<f64>,
    /// Leading right singular vector, length K.
    pub v: Array1<f64>,
}

/// Eigen-decomposition of a small symmetric matrix by cyclic Jacobi
/// rotations. Returns eigenvalues and eigenvectors as columns.
pub fn symmetric_eigen(a: ArrayView2<'_, f64>) -> (Array1<f64>, Array2<f64>) {
    let n = a.nrows();
    let mut a = a.to_owned();
    let mut v = Array2::eye(n);
    for _sweep in 0..100 {
        let off: f64 = (0..n).flat_map(|i| (0..n).filter(move |&j| j != i).map(move |j| (i, j))).map(|(i, j)| a[[i, j]].powi(2)).sum();
        let diag: f64 = (0..n).map(|i| a[[i, i]].powi(2)).sum();
        if off <= 1e-32 * diag.max(f64::MIN_POSITIVE) {
            break;
        }
        for p in 0..n {
            for q in p + 1..n {
                if a[[p, q]] == 0.0 {
                    continue;
                }
                let theta = (a[[q, q]] - a[[p, p]]) / (2.0 * a[[p, q]]);
                let t = theta.signum() / (theta.abs() + (theta * theta + 1.0).sqrt());
                let t = if theta == 0.0 { 1.0 } else { t };
                let c = 1.0 / (t * t + 1.0).sqrt();
                let s = t * c;
                for k in 0..n {
                    let (akp, akq) = (a[[k, p]], a[[k, q]]);
                    a[[k, p]] = c * akp - s * akq;
                    a[[k, q]] = s * akp + c * akq;
                }
                for k in 0..n {
                    let (apk, aqk) = (a[[p, k]], a[[q, k]]);
                    a[[p, k]] = c * apk - s * aqk;
                    a[[q, k]] = s * apk + c * aqk;
                }
                for k in 0..n {
                    let (vkp, vkq) = (v[[k, p]], v[[k, q]]);
                    v[[k, p]] = c * vkp - s * vkq;
                    v[[k, q]] = s * vkp + c * vkq;
                }
            }
        }
    }
    (a.diag().to_owned(), v)
}

/// One-component SVD of `T` (N x K). The sign is fixed so the scores sum to
/// a nonnegative value; `flip` negates the result afterwards.
pub fn svd_project<F: Real>(t: ArrayView2<'_, F>, flip: bool) -> Result<SvdProjection> {
    let t = t.mapv(F::to_f64_lossy);
    if t.ncols() == 0 || t.nrows() == 0 {
        return Err(Error::EmptyInput);
    }
    if t.iter().any(|x| !x.is_finite()) {
        return Err(Error::NumericalCollapse("topic matrix is not finite".into()));
    }
    let gram = t.t().dot(&t);
    let (vals, vecs) = symmetric_eigen(gram.view());
    let lead = (0..vals.len()).fold(0, |best, i| if vals[i] > vals[best] { i } else { best });
    let sigma = vals[lead].max(0.0).sqrt();
    if !(sigma > 0.0) {
        return Err(Error::DegenerateSvd);
    }
    let mut v = vecs.column(lead).to_owned();
    if v.sum() < 0.0 || flip {
        let negate = (v.sum() < 0.0) != flip;
        if negate {
            v.mapv_inplace(|x| -x);
        }
    }
    let u = t.dot(&v) / sigma;
    let scores = &v * sigma;
    Ok(SvdProjection { scores, sigma, u, v })
}

/// `Ind_m = sum_k scores_k * Lambda_km`.
pub fn document_scores<F: Real>(scores: ArrayView1<'_, f64>, weights: ArrayView2<'_, F>) -> Result<Array1<f64>> {
    if scores.len() != weights.nrows() {
        return Err(Error::ShapeMismatch(format!("{} topic scores, {} weight rows", scores.len(), weights.nrows())));
    }
    Ok(weights.mapv(F::to_f64_lossy).t().dot(&scores))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum MonthlyAggregation {
    #[default]
    Sum,
    Mean,
}

/// Groups scores by calendar month. Months with no documents are absent.
/// Within a month values are summed in ascending order, so the result does
/// not depend on input order.
pub fn aggregate_monthly(scores: &[f64], dates: &[NaiveDate], how: MonthlyAggregation) -> Result<IndexSeries> {
    if scores.len() != dates.len() {
        return Err(Error::ShapeMismatch(format!("{} scores, {} dates", scores.len(), dates.len())));
    }
    if scores.is_empty() {
        return Err(Error::EmptyInput);
    }
    let mut pairs: Vec<(YearMonth, f64)> = dates.iter().map(|&d| YearMonth::of(d)).zip(scores.iter().copied()).collect();
    pairs.sort_by(|a, b| a.0.cmp(&b.0).then(a.1.total_cmp(&b.1)));
    let mut months = Vec::new();
    let mut values = Vec::new();
    let mut i = 0;
    while i < pairs.len() {
        let month = pairs[i].0;
        let mut j = i;
        let mut total = 0.0;
        while j < pairs.len() && pairs[j].0 == month {
            total += pairs[j].1;
            j += 1;
        }
        if how == MonthlyAggregation::Mean {
            total /= (j - i) as f64;
        }
        months.push(month);
        values.push(total);
        i = j;
    }
    IndexSeries::new(months, values)
}

pub fn mean(xs: &[f64]) -> f64 {
    xs.iter().sum::<f64>() / xs.len() as f64
}

/// Sample standard deviation (denominator `n - 1`).
pub fn sample_sd(xs: &[f64]) -> f64 {
    let m = mean(xs);
    (xs.iter().map(|x| (x - m).powi(2)).sum::<f64>() / (xs.len() - 1) as f64).sqrt()
}

/// True when the spread of `xs` is at rounding level relative to its magnitude.
pub fn is_degenerate(xs: &[f64]) -> bool {
    let scale = xs.iter().fold(0.0f64, |a, x| a.max(x.abs()));
    let lo = xs.iter().copied().fold(f64::INFINITY, f64::min);
    let hi = xs.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    hi - lo <= 1e-12 * scale
}

/// `(v - mean) / sd + 100` with the sample standard deviation.
pub fn scale_index(raw: &IndexSeries) -> Result<IndexSeries> {
    let v = raw.values();
    if v.len() < 2 {
        return Err(Error::SeriesTooShort { needed: 2, got: v.len() });
    }
    if is_degenerate(v) {
        return Err(Error::ZeroVariance);
    }
    let m = mean(v);
    let sd = sample_sd(v);
    let mut out: Vec<f64> = v.iter().map(|x| (x - m) / sd).collect();
    // second pass removes the rounding left in the first
    let m2 = mean(&out);
    let sd2 = sample_sd(&out);
    for x in out.iter_mut() {
        *x = (*x - m2) / sd2 + 100.0;
    }
    IndexSeries::new(raw.months().to_vec(), out)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub struct IndexOptions {
    pub flip: bool,
    pub aggregation: MonthlyAggregation,
}

#[derive(Debug, Clone)]
pub struct IndexOutput {
    pub projection: SvdProjection,
    pub document_scores: Array1<f64>,
    pub raw: IndexSeries,
    pub scaled: IndexSeries,
}

/// Topics and weights to a scaled monthly index. Fails with `ZeroVariance`
/// when every document gets the same score (for example identical topics).
pub fn build_index<F: Real>(topics: ArrayView2<'_, F>, weights: ArrayView2<'_, F>, dates: &[NaiveDate], opts: IndexOptions) -> Result<IndexOutput> {
    let projection = svd_project(topics, opts.flip)?;
    let scores = document_scores(projection.scores.view(), weights)?;
    if scores.len() > 1 && is_degenerate(scores.as_slice().expect("contiguous")) {
        return Err(Error::ZeroVariance);
    }
    let raw = aggregate_monthly(scores.as_slice().expect("contiguous"), dates, opts.aggregation)?;
    let scaled = scale_index(&raw)?;
    Ok(IndexOutput { projection, document_scores: scores, raw, scaled })
}

/// Highest-weight tokens per topic.
pub fn top_tokens<F: Real>(topics: ArrayView2<'_, F>, vocab: &Vocabulary, top: usize) -> Result<Vec<Vec<(String, f64)>>> {
    if topics.nrows() != vocab.len() {
        return Err(Error::ShapeMismatch(format!("{} topic rows, {} vocabulary tokens", topics.nrows(), vocab.len())));
    }
    Ok(topics
        .columns()
        .into_iter()
        .map(|col| {
            let mut idx: Vec<usize> = (0..col.len()).collect();
            idx.sort_by(|&a, &b| col[b].partial_cmp(&col[a]).unwrap_or(std::cmp::Ordering::Equal).then(a.cmp(&b)));
            idx.into_iter().take(top).map(|i| (vocab.token(i).to_string(), col[i].to_f64_lossy())).collect()
        })
        .collect())
}

/// `topic,rank,token,weight` CSV.
pub fn write_topic_report(report: &[Vec<(String, f64)>], mut w: impl Write) -> Result<()> {
    writeln!(w, "topic,rank,token,weight")?;
    for (k, rows) in report.iter().enumerate() {
        for (r, (tok, wt)) in rows.iter().enumerate() {
            writeln!(w, "{},{},{},{}", k + 1, r + 1, tok, wt)?;
        }
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::array;

    fn d(y: i32, m: u32, day: u32) -> NaiveDate {
        NaiveDate::from_ymd_opt(y, m, day).unwrap()
    }

    #[test]
    fn year_month_format() {
        let ym = YearMonth::of(d(2007, 3, 14));
        assert_eq!(ym.to_string(), "2007-03");
        assert_eq!("2007-03".parse::<YearMonth>().unwrap(), ym);
        assert!("2007-13".parse::<YearMonth>().is_err());
        assert!("2007/03".parse::<YearMonth>().is_err());
    }

    #[test]
    fn rank_one_projection() {
        let u = array![0.6, 0.8, 0.0];
        let w = array![0.5, 1.5];
        let t = Array2::from_shape_fn((3, 2), |(i, k)| u[i] * w[k]);
        let p = svd_project(t.view(), false).unwrap();
        assert!(p.scores.iter().zip(&w).all(|(a, b)| (a - b).abs() < 1e-9));
        let flipped = svd_project(t.view(), true).unwrap();
        assert!(flipped.scores.iter().zip(&w).all(|(a, b)| (a + b).abs() < 1e-9));
    }

    #[test]
    fn single_topic_projection_is_norm() {
        let t = array![[0.2], [0.3], [0.5]];
        let p = svd_project(t.view(), false).unwrap();
        assert!((p.scores[0] - (0.04f64 + 0.09 + 0.25).sqrt()).abs() < 1e-12);
        assert!(matches!(svd_project(Array2::<f64>::zeros((3, 2)).view(), false), Err(Error::DegenerateSvd)));
    }

    #[test]
    fn document_score_examples() {
        let lam = array![[0.25, 1.0, 0.0], [0.75, 0.0, 1.0]];
        let s = document_scores(array![2.0, 0.0].view(), lam.view()).unwrap();
        assert_eq!(s[0], 0.5);
        assert_eq!(s[1], 2.0);
        assert_eq!(s[2], 0.0);
        let ones = document_scores(array![1.0, 1.0].view(), lam.view()).unwrap();
        assert!(ones.iter().all(|&x| (x - 1.0).abs() < 1e-15));
    }

    #[test]
    fn aggregation_examples() {
        let s = aggregate_monthly(&[0.3, 0.5], &[d(2001, 1, 2), d(2001, 1, 20)], MonthlyAggregation::Sum).unwrap();
        assert_eq!(s.values(), &[0.8]);
        let s = aggregate_monthly(&[1.0, 2.0, 3.0], &[d(2001, 3, 1), d(2001, 1, 1), d(2001, 2, 1)], MonthlyAggregation::Sum).unwrap();
        assert_eq!(s.values(), &[2.0, 3.0, 1.0]);
        assert_eq!(s.months()[0].to_string(), "2001-01");
        let s = aggregate_monthly(&[0.3, 0.5, 1.0], &[d(2001, 1, 2), d(2001, 1, 20), d(2001, 4, 1)], MonthlyAggregation::Mean).unwrap();
        assert_eq!(s.values(), &[0.4, 1.0]);
        assert_eq!(s.len(), 2);
        assert!(matches!(aggregate_monthly(&[], &[], MonthlyAggregation::Sum), Err(Error::EmptyInput)));
    }

    #[test]
    fn scaling_examples() {
        let months: Vec<YearMonth> = (1..=3).map(|m| YearMonth::new(2000, m).unwrap()).collect();
        let s = scale_index(&IndexSeries::new(months.clone(), vec![1.0, 2.0, 3.0]).unwrap()).unwrap();
        assert!(s.values().iter().zip([99.0, 100.0, 101.0]).all(|(a, b)| (a - b).abs() < 1e-12));
        assert!(matches!(scale_index(&IndexSeries::new(months.clone(), vec![5.0; 3]).unwrap()), Err(Error::ZeroVariance)));
        let t = scale_index(&IndexSeries::new(months, vec![-7.0, 3.0, 13.0]).unwrap()).unwrap();
        assert!(s.values().iter().zip(t.values()).all(|(a, b)| (a - b).abs() < 1e-12));
    }

    #[test]
    fn identical_topics_raise() {
        let t = array![[0.2, 0.2], [0.8, 0.8]];
        let lam = array![[0.1, 0.7, 0.4], [0.9, 0.3, 0.6]];
        let dates = [d(2000, 1, 1), d(2000, 2, 1), d(2000, 3, 1)];
        assert!(matches!(build_index(t.view(), lam.view(), &dates, IndexOptions::default()), Err(Error::ZeroVariance)));
    }

    #[test]
    fn csv_roundtrip() {
        let months: Vec<YearMonth> = (1..=3).map(|m| YearMonth::new(2000, m).unwrap()).collect();
        let s = IndexSeries::new(months, vec![99.5, 100.25, 100.25]).unwrap();
        let mut buf = Vec::new();
        s.write_csv(&mut buf).unwrap();
        assert!(String::from_utf8(buf.clone()).unwrap().starts_with("month,value\n2000-01,99.5\n"));
        assert_eq!(IndexSeries::read_csv(buf.as_slice()).unwrap(), s);
    }

    #[test]
    fn top_tokens_sorted() {
        let vocab = Vocabulary::from_tokens(["a", "b", "c"].map(String::from)).unwrap();
        let t = array![[0.1, 0.5], [0.6, 0.25], [0.3, 0.25]];
        let rep = top_tokens(t.view(), &vocab, 2).unwrap();
        assert_eq!(rep[0][0].0, "b");
        assert_eq!(rep[0][1].0, "c");
        assert_eq!(rep[1][0].0, "a");
        assert_eq!(rep[1][1].0, "b");
    }
}
