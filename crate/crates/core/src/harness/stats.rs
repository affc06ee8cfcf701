use serde::{Deserialize, Serialize};

/// Pooled statistics below this many values carry `low_n`.
pub const LOW_N: usize = 10;

const Z95: f64 = 1.959_963_984_540_054;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Summary {
    pub n: usize,
    pub mean: f64,
    pub median: f64,
    pub q1: f64,
    pub q3: f64,
    pub iqr: f64,
    pub min: f64,
    pub max: f64,
    pub low_n: bool,
}

/// Linear-interpolation quantile of sorted data.
fn quantile(sorted: &[f64], p: f64) -> f64 {
    let h = p * (sorted.len() - 1) as f64;
    let lo = h.floor() as usize;
    let hi = h.ceil() as usize;
    sorted[lo] + (h - lo as f64) * (sorted[hi] - sorted[lo])
}

/// `None` when no finite value is present; non-finite values are dropped.
pub fn summarize_values(values: &[f64]) -> Option<Summary> {
    let mut v: Vec<f64> = values.iter().copied().filter(|x| x.is_finite()).collect();
    if v.is_empty() {
        return None;
    }
    v.sort_by(f64::total_cmp);
    let n = v.len();
    let (q1, median, q3) = (quantile(&v, 0.25), quantile(&v, 0.5), quantile(&v, 0.75));
    Some(Summary {
        n,
        mean: v.iter().sum::<f64>() / n as f64,
        median,
        q1,
        q3,
        iqr: q3 - q1,
        min: v[0],
        max: v[n - 1],
        low_n: n < LOW_N,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Proportion {
    pub n: usize,
    pub successes: usize,
    pub p: f64,
    pub wilson_lo: f64,
    pub wilson_hi: f64,
    pub low_n: bool,
}

/// Wilson score interval at 95%.
pub fn wilson(successes: usize, n: usize) -> (f64, f64) {
    if n == 0 {
        return (0.0, 1.0);
    }
    let nf = n as f64;
    let p = successes as f64 / nf;
    let z2 = Z95 * Z95;
    let denom = 1.0 + z2 / nf;
    let center = (p + z2 / (2.0 * nf)) / denom;
    let half = Z95 * (p * (1.0 - p) / nf + z2 / (4.0 * nf * nf)).sqrt() / denom;
    ((center - half).max(0.0), (center + half).min(1.0))
}

pub fn proportion(outcomes: &[bool]) -> Proportion {
    let n = outcomes.len();
    let successes = outcomes.iter().filter(|&&b| b).count();
    let (wilson_lo, wilson_hi) = wilson(successes, n);
    Proportion {
        n,
        successes,
        p: if n == 0 { f64::NAN } else { successes as f64 / n as f64 },
        wilson_lo,
        wilson_hi,
        low_n: n < LOW_N,
    }
}

/// Non-strictly monotone in either direction.
pub fn is_monotone(xs: &[f64]) -> bool {
    xs.windows(2).all(|w| w[1] >= w[0]) || xs.windows(2).all(|w| w[1] <= w[0])
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn quartiles_of_small_sets() {
        let s = summarize_values(&[4.0, 1.0, 3.0, 2.0, 5.0]).unwrap();
        assert_eq!((s.q1, s.median, s.q3, s.iqr), (2.0, 3.0, 4.0, 2.0));
        assert_eq!(s.mean, 3.0);
        assert!(s.low_n);
        let s = summarize_values(&[1.0, f64::NAN, 2.0]).unwrap();
        assert_eq!((s.n, s.median), (2, 1.5));
        assert!(summarize_values(&[f64::INFINITY]).is_none());
    }

    #[test]
    fn wilson_reference_values() {
        // 8 of 10: (0.4902, 0.9433)
        let (lo, hi) = wilson(8, 10);
        assert!((lo - 0.4902).abs() < 1e-4 && (hi - 0.9433).abs() < 1e-4, "{lo} {hi}");
        let (lo, hi) = wilson(0, 20);
        assert_eq!(lo, 0.0);
        assert!((hi - 0.1611).abs() < 1e-4);
        let p = proportion(&[true; 12]);
        assert_eq!(p.p, 1.0);
        assert!(!p.low_n && p.wilson_hi == 1.0);
    }

    #[test]
    fn monotone_either_way() {
        assert!(is_monotone(&[1.0, 1.0, 2.0]));
        assert!(is_monotone(&[3.0, 2.0, 2.0]));
        assert!(!is_monotone(&[1.0, 3.0, 2.0]));
        assert!(is_monotone(&[]));
    }
}
