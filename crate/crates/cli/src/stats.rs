//! Across-seed summaries for the aggregate files.

use serde::Serialize;

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct Summary {
    pub count: usize,
    pub median: f64,
    pub q25: f64,
    pub q75: f64,
    pub mean: f64,
    /// Sample standard deviation (zero for a single value).
    pub std: f64,
}

/// Linear-interpolation quantile of sorted data.
fn quantile(sorted: &[f64], q: f64) -> f64 {
    let pos = q * (sorted.len() - 1) as f64;
    let lo = pos.floor() as usize;
    let hi = pos.ceil() as usize;
    sorted[lo] + (sorted[hi] - sorted[lo]) * (pos - lo as f64)
}

/// Summary of the finite values; `None` when there are none.
pub fn summarize(values: &[f64]) -> Option<Summary> {
    let mut v: Vec<f64> = values.iter().copied().filter(|x| x.is_finite()).collect();
    if v.is_empty() {
        return None;
    }
    v.sort_by(f64::total_cmp);
    let n = v.len();
    let mean = v.iter().sum::<f64>() / n as f64;
    let var = if n > 1 {
        v.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (n - 1) as f64
    } else {
        0.0
    };
    Some(Summary {
        count: n,
        median: quantile(&v, 0.5),
        q25: quantile(&v, 0.25),
        q75: quantile(&v, 0.75),
        mean,
        std: var.sqrt(),
    })
}

/// Appends `series,iteration,value` rows for one summary.
pub fn push_long_rows(out: &mut String, prefix: &str, iteration: usize, s: &Summary) {
    use std::fmt::Write as _;
    for (name, value) in [
        ("median", s.median),
        ("q25", s.q25),
        ("q75", s.q75),
        ("mean", s.mean),
        ("std", s.std),
    ] {
        let _ = writeln!(out, "{prefix}_{name},{iteration},{value}");
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn summary_of_small_sets() {
        let s = summarize(&[4.0, 1.0, 3.0, 2.0]).unwrap();
        assert_eq!(s.median, 2.5);
        assert_eq!(s.q25, 1.75);
        assert_eq!(s.q75, 3.25);
        assert_eq!(s.mean, 2.5);
        assert!((s.std - (5.0f64 / 3.0).sqrt()).abs() < 1e-15);
        let one = summarize(&[7.0, f64::NAN]).unwrap();
        assert_eq!((one.count, one.median, one.std), (1, 7.0, 0.0));
        assert!(summarize(&[f64::INFINITY]).is_none());
    }
}
