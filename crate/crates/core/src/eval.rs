//! Comparison of an index against a reference series: HP filter,
//! Pearson/Spearman on raw, trend and cycle, and cumulative differences.

use std::io::Write;

use crate::error::{Error, Result};
use crate::index::{mean, IndexSeries, YearMonth};

/// Monthly smoothing parameter.
pub const HP_LAMBDA_MONTHLY: f64 = 129_600.0;

/// Minimum number of common months for [`evaluate`].
pub const MIN_OVERLAP: usize = 24;

/// Symmetric banded matrix `I + lambda D^T D` (bandwidth 2), stored as its
/// three nonzero diagonals.
fn hp_bands(n: usize, lambda: f64) -> [Vec<f64>; 3] {
    let mut d0 = vec![0.0; n];
    let mut d1 = vec![0.0; n.saturating_sub(1)];
    let mut d2 = vec![0.0; n.saturating_sub(2)];
    // D^T D accumulated from each second-difference row (1, -2, 1) at i..i+2
    for i in 0..n - 2 {
        let c = [1.0, -2.0, 1.0];
        for a in 0..3 {
            d0[i + a] += lambda * c[a] * c[a];
            for b in a + 1..3 {
                let v = lambda * c[a] * c[b];
                if b - a == 1 {
                    d1[i + a] += v;
                } else {
                    d2[i + a] += v;
                }
            }
        }
    }
    for x in d0.iter_mut() {
        *x += 1.0;
    }
    [d0, d1, d2]
}

/// `(I + lambda D^T D) x`, evaluated through the second differences `D x`.
/// Multiplying out the bands instead would form terms near `6 lambda |x|`,
/// whose rounding swamps the result for series far from zero.
pub fn hp_apply(x: &[f64], lambda: f64) -> Vec<f64> {
    let second: Vec<f64> = x.windows(3).map(|w| (w[0] - w[1]) - (w[1] - w[2])).collect();
    let mut out = x.to_vec();
    for (i, &s) in second.iter().enumerate() {
        let v = lambda * s;
        out[i] += v;
        out[i + 1] -= 2.0 * v;
        out[i + 2] += v;
    }
    out
}

/// Banded `L D L^T` factors of `I + lambda D^T D`: unit lower triangle with
/// subdiagonals `l1`, `l2` and diagonal `d`.
struct HpFactor {
    d: Vec<f64>,
    l1: Vec<f64>,
    l2: Vec<f64>,
}

impl HpFactor {
    fn new(n: usize, lambda: f64) -> Self {
        let [a0, a1, a2] = hp_bands(n, lambda);
        let mut d = vec![0.0; n];
        let mut l1 = vec![0.0; n];
        let mut l2 = vec![0.0; n];
        for i in 0..n {
            if i >= 2 {
                l2[i] = a2[i - 2] / d[i - 2];
            }
            if i >= 1 {
                let mut v = a1[i - 1];
                if i >= 2 {
                    v -= l2[i] * l1[i - 1] * d[i - 2];
                }
                l1[i] = v / d[i - 1];
            }
            let mut di = a0[i];
            if i >= 1 {
                di -= l1[i] * l1[i] * d[i - 1];
            }
            if i >= 2 {
                di -= l2[i] * l2[i] * d[i - 2];
            }
            d[i] = di;
        }
        Self { d, l1, l2 }
    }

    fn solve(&self, y: &[f64]) -> Vec<f64> {
        let n = y.len();
        let (l1, l2) = (&self.l1, &self.l2);
        // forward: L z = y
        let mut z = vec![0.0; n];
        for i in 0..n {
            let mut v = y[i];
            if i >= 1 {
                v -= l1[i] * z[i - 1];
            }
            if i >= 2 {
                v -= l2[i] * z[i - 2];
            }
            z[i] = v;
        }
        // diagonal, then backward: L^T x = z / d
        let mut x: Vec<f64> = z.iter().zip(&self.d).map(|(a, b)| a / b).collect();
        for i in (0..n).rev() {
            if i + 1 < n {
                x[i] -= l1[i + 1] * x[i + 1];
            }
            if i + 2 < n {
                x[i] -= l2[i + 2] * x[i + 2];
            }
        }
        x
    }
}

/// Hodrick-Prescott decomposition. Solves `(I + lambda D^T D) trend = y` by a
/// banded LDL^T factorization plus one step of iterative refinement;
/// `cycle = y - trend`. The mean is taken out first: constants pass through
/// the filter unchanged, and a centered right-hand side keeps rounding small.
pub fn hp_filter(y: &[f64], lambda: f64) -> Result<(Vec<f64>, Vec<f64>)> {
    let n = y.len();
    if n < 4 {
        return Err(Error::SeriesTooShort { needed: 4, got: n });
    }
    if !(lambda > 0.0) || !lambda.is_finite() {
        return Err(Error::InvalidConfig(format!("hp lambda must be positive, got {lambda}")));
    }
    let mu = y.iter().sum::<f64>() / n as f64;
    let centered: Vec<f64> = y.iter().map(|v| v - mu).collect();
    let factor = HpFactor::new(n, lambda);
    let mut x = factor.solve(&centered);
    let residual: Vec<f64> = hp_apply(&x, lambda).iter().zip(&centered).map(|(ax, b)| b - ax).collect();
    for (x, dx) in x.iter_mut().zip(factor.solve(&residual)) {
        *x += dx;
    }
    let trend: Vec<f64> = x.iter().map(|v| v + mu).collect();
    let cycle = y.iter().zip(&trend).map(|(a, b)| a - b).collect();
    Ok((trend, cycle))
}

fn check_pair(x: &[f64], y: &[f64]) -> Result<()> {
    if x.len() != y.len() {
        return Err(Error::ShapeMismatch(format!("series lengths {} and {}", x.len(), y.len())));
    }
    if x.len() < 2 {
        return Err(Error::SeriesTooShort { needed: 2, got: x.len() });
    }
    Ok(())
}

/// Sample correlation coefficient, clamped to [-1, 1].
pub fn pearson(x: &[f64], y: &[f64]) -> Result<f64> {
    check_pair(x, y)?;
    let (mx, my) = (mean(x), mean(y));
    let (mut sxy, mut sxx, mut syy) = (0.0, 0.0, 0.0);
    for (a, b) in x.iter().zip(y) {
        let (dx, dy) = (a - mx, b - my);
        sxy += dx * dy;
        sxx += dx * dx;
        syy += dy * dy;
    }
    if sxx == 0.0 || syy == 0.0 {
        return Err(Error::ZeroVariance);
    }
    Ok((sxy / (sxx * syy).sqrt()).clamp(-1.0, 1.0))
}

/// 1-based ranks; tied values share the average of their positions.
pub fn average_ranks(x: &[f64]) -> Vec<f64> {
    let mut idx: Vec<usize> = (0..x.len()).collect();
    idx.sort_by(|&a, &b| x[a].total_cmp(&x[b]));
    let mut ranks = vec![0.0; x.len()];
    let mut i = 0;
    while i < idx.len() {
        let mut j = i;
        while j + 1 < idx.len() && x[idx[j + 1]] == x[idx[i]] {
            j += 1;
        }
        let avg = (i + j) as f64 / 2.0 + 1.0;
        for &k in &idx[i..=j] {
            ranks[k] = avg;
        }
        i = j + 1;
    }
    ranks
}

/// Pearson correlation of average ranks.
pub fn spearman(x: &[f64], y: &[f64]) -> Result<f64> {
    check_pair(x, y)?;
    pearson(&average_ranks(x), &average_ranks(y))
}

/// Values of both series on their common months, in month order.
pub fn align(a: &IndexSeries, b: &IndexSeries) -> (Vec<YearMonth>, Vec<f64>, Vec<f64>) {
    let mut months = Vec::new();
    let mut va = Vec::new();
    let mut vb = Vec::new();
    for (m, &x) in a.months().iter().zip(a.values()) {
        if let Some(y) = b.get(*m) {
            months.push(*m);
            va.push(x);
            vb.push(y);
        }
    }
    (months, va, vb)
}

/// Running sum of `|a - b|` (or of `a - b` when `signed`) over common months.
pub fn cumulative_difference(a: &IndexSeries, b: &IndexSeries, signed: bool) -> Result<IndexSeries> {
    let (months, va, vb) = align(a, b);
    if months.is_empty() {
        return Err(Error::NoOverlap);
    }
    let mut total = 0.0;
    let values = va
        .iter()
        .zip(&vb)
        .map(|(x, y)| {
            total += if signed { x - y } else { (x - y).abs() };
            total
        })
        .collect();
    IndexSeries::new(months, values)
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Correlations {
    pub raw: f64,
    pub trend: f64,
    pub cycle: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct EvalReport {
    pub pearson: Correlations,
    pub spearman: Correlations,
    pub cumdiff: IndexSeries,
    pub hp_lambda: f64,
    pub common_months: usize,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct EvalOptions {
    pub hp_lambda: f64,
    pub signed_cumdiff: bool,
}

impl Default for EvalOptions {
    fn default() -> Self {
        Self { hp_lambda: HP_LAMBDA_MONTHLY, signed_cumdiff: false }
    }
}

/// Aligns both series on common months, HP-filters each, and correlates the
/// raw, trend and cycle components.
pub fn evaluate(index: &IndexSeries, reference: &IndexSeries, opts: &EvalOptions) -> Result<EvalReport> {
    let (months, a, b) = align(index, reference);
    if months.len() < MIN_OVERLAP {
        return Err(Error::InsufficientOverlap { needed: MIN_OVERLAP, got: months.len() });
    }
    let (ta, ca) = hp_filter(&a, opts.hp_lambda)?;
    let (tb, cb) = hp_filter(&b, opts.hp_lambda)?;
    let pearson = Correlations { raw: pearson(&a, &b)?, trend: pearson(&ta, &tb)?, cycle: pearson(&ca, &cb)? };
    let spearman = Correlations { raw: spearman(&a, &b)?, trend: spearman(&ta, &tb)?, cycle: spearman(&ca, &cb)? };
    let cumdiff = cumulative_difference(index, reference, opts.signed_cumdiff)?;
    Ok(EvalReport { pearson, spearman, cumdiff, hp_lambda: opts.hp_lambda, common_months: months.len() })
}

impl EvalReport {
    /// `metric,value` CSV: six correlations, the smoothing parameter and the
    /// number of common months.
    pub fn write_csv(&self, mut w: impl Write) -> Result<()> {
        writeln!(w, "metric,value")?;
        for (name, c) in [("pearson", self.pearson), ("spearman", self.spearman)] {
            writeln!(w, "{name}_raw,{}", c.raw)?;
            writeln!(w, "{name}_trend,{}", c.trend)?;
            writeln!(w, "{name}_cycle,{}", c.cycle)?;
        }
        writeln!(w, "hp_lambda,{}", self.hp_lambda)?;
        writeln!(w, "common_months,{}", self.common_months)?;
        Ok(())
    }
}

fn polyline(xs: &[f64], ys: &[f64], x0: f64, y0: f64, w: f64, h: f64, lo: f64, hi: f64, color: &str) -> String {
    let n = xs.len().max(2) - 1;
    let span = if hi > lo { hi - lo } else { 1.0 };
    let pts: Vec<String> = xs
        .iter()
        .zip(ys)
        .map(|(&i, &v)| format!("{:.2},{:.2}", x0 + w * i / n as f64, y0 + h - h * (v - lo) / span))
        .collect();
    format!("<polyline fill=\"none\" stroke=\"{color}\" stroke-width=\"1.5\" points=\"{}\"/>\n", pts.join(" "))
}

/// Two-panel SVG: index and reference on their common months, and the
/// cumulative difference below.
pub fn write_svg_plot(index: &IndexSeries, reference: &IndexSeries, cumdiff: &IndexSeries, mut w: impl Write) -> Result<()> {
    let (months, a, b) = align(index, reference);
    let (width, height, pad) = (800.0, 520.0, 40.0);
    let panel = (height - 3.0 * pad) / 2.0;
    let xs: Vec<f64> = (0..months.len()).map(|i| i as f64).collect();
    let lo = a.iter().chain(&b).copied().fold(f64::INFINITY, f64::min);
    let hi = a.iter().chain(&b).copied().fold(f64::NEG_INFINITY, f64::max);
    let c = cumdiff.values();
    let chi = c.iter().copied().fold(0.0, f64::max);
    let clo = c.iter().copied().fold(0.0, f64::min);
    let cx: Vec<f64> = (0..c.len()).map(|i| i as f64).collect();
    let inner = width - 2.0 * pad;

    writeln!(w, "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"{width}\" height=\"{height}\" font-family=\"sans-serif\" font-size=\"12\">")?;
    writeln!(w, "<rect width=\"100%\" height=\"100%\" fill=\"white\"/>")?;
    for (y, title) in [(pad, "index (blue) vs reference (red)"), (2.0 * pad + panel, "cumulative difference")] {
        writeln!(w, "<rect x=\"{pad}\" y=\"{y}\" width=\"{inner}\" height=\"{panel}\" fill=\"none\" stroke=\"#888\"/>")?;
        writeln!(w, "<text x=\"{pad}\" y=\"{}\">{title}</text>", y - 6.0)?;
    }
    if let (Some(first), Some(last)) = (months.first(), months.last()) {
        writeln!(w, "<text x=\"{pad}\" y=\"{}\">{first}</text>", pad + panel + 14.0)?;
        writeln!(w, "<text x=\"{}\" y=\"{}\" text-anchor=\"end\">{last}</text>", width - pad, pad + panel + 14.0)?;
    }
    w.write_all(polyline(&xs, &a, pad, pad, inner, panel, lo, hi, "#1f77b4").as_bytes())?;
    w.write_all(polyline(&xs, &b, pad, pad, inner, panel, lo, hi, "#d62728").as_bytes())?;
    w.write_all(polyline(&cx, c, pad, 2.0 * pad + panel, inner, panel, clo, chi, "#2ca02c").as_bytes())?;
    writeln!(w, "</svg>")?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    fn series(values: Vec<f64>) -> IndexSeries {
        let months = (0..values.len()).map(|i| YearMonth::new(2000 + (i / 12) as i32, (i % 12) as u32 + 1).unwrap()).collect();
        IndexSeries::new(months, values).unwrap()
    }

    #[test]
    fn hp_constant_and_linear() {
        let (t, c) = hp_filter(&[3.0; 10], HP_LAMBDA_MONTHLY).unwrap();
        assert!(t.iter().all(|x| (x - 3.0).abs() < 1e-10));
        assert!(c.iter().all(|x| x.abs() < 1e-10));
        let y: Vec<f64> = (0..30).map(|i| 2.0 + 0.5 * i as f64).collect();
        let (_, c) = hp_filter(&y, HP_LAMBDA_MONTHLY).unwrap();
        assert!(c.iter().all(|x| x.abs() < 1e-8), "{c:?}");
        assert!(matches!(hp_filter(&[1.0, 2.0, 3.0], 1.0), Err(Error::SeriesTooShort { needed: 4, got: 3 })));
    }

    #[test]
    fn hp_small_lambda_is_near_identity() {
        let y = [1.0, 4.0, 2.0, 8.0, 5.0];
        let (t, _) = hp_filter(&y, 1e-12).unwrap();
        assert!(t.iter().zip(&y).all(|(a, b)| (a - b).abs() < 1e-9));
    }

    #[test]
    fn correlation_examples() {
        let x = [1.0, 2.0, 3.0, 4.5];
        let y: Vec<f64> = x.iter().map(|v| 2.0 * v + 3.0).collect();
        assert_eq!(pearson(&x, &y).unwrap(), 1.0);
        let neg: Vec<f64> = x.iter().map(|v| -v).collect();
        assert_eq!(pearson(&x, &neg).unwrap(), -1.0);
        assert!((pearson(&[1.0, 2.0, 3.0], &[1.0, 3.0, 2.0]).unwrap() - 0.5).abs() < 1e-12);
        assert_eq!(average_ranks(&[1.0, 2.0, 2.0, 4.0]), vec![1.0, 2.5, 2.5, 4.0]);
        let cubed: Vec<f64> = x.iter().map(|v| v * v * v).collect();
        assert_eq!(spearman(&x, &cubed).unwrap(), 1.0);
        let rev: Vec<f64> = x.iter().rev().copied().collect();
        assert_eq!(spearman(&x, &rev).unwrap(), -1.0);
        assert!(matches!(pearson(&[1.0, 1.0], &[1.0, 2.0]), Err(Error::ZeroVariance)));
    }

    #[test]
    fn cumdiff_examples() {
        let a = series(vec![1.0, 2.0]);
        let b = series(vec![2.0, 5.0]);
        assert_eq!(cumulative_difference(&a, &b, false).unwrap().values(), &[1.0, 4.0]);
        assert_eq!(cumulative_difference(&a, &b, true).unwrap().values(), &[-1.0, -4.0]);
        assert_eq!(cumulative_difference(&a, &a, false).unwrap().values(), &[0.0, 0.0]);
        let single = series(vec![3.0]);
        assert_eq!(cumulative_difference(&single, &series(vec![1.0]), false).unwrap().values(), &[2.0]);
        let later = IndexSeries::new(vec![YearMonth::new(1990, 1).unwrap()], vec![1.0]).unwrap();
        assert!(matches!(cumulative_difference(&a, &later, false), Err(Error::NoOverlap)));
    }

    #[test]
    fn evaluate_needs_overlap() {
        let s = series((0..10).map(|i| i as f64).collect());
        assert!(matches!(evaluate(&s, &s, &EvalOptions::default()), Err(Error::InsufficientOverlap { needed: 24, got: 10 })));
    }

    #[test]
    fn report_csv_has_six_correlations() {
        let s = series((0..30).map(|i| ((i * 7) % 11) as f64).collect());
        let r = evaluate(&s, &s, &EvalOptions::default()).unwrap();
        let mut buf = Vec::new();
        r.write_csv(&mut buf).unwrap();
        let text = String::from_utf8(buf).unwrap();
        for key in ["pearson_raw", "pearson_trend", "pearson_cycle", "spearman_raw", "spearman_trend", "spearman_cycle", "hp_lambda"] {
            assert!(text.contains(key), "{key}");
        }
        let mut svg = Vec::new();
        write_svg_plot(&s, &s, &r.cumdiff, &mut svg).unwrap();
        assert!(String::from_utf8(svg).unwrap().contains("<polyline"));
    }
}
