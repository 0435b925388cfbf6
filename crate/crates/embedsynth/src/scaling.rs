//! Log-linear scaling fit: ordinary least squares of a benchmark score on
//! log10 of the synthetic-data size, with prediction and marginal-gain
//! helpers. Base-10 is fixed so coefficients read as score-per-decade.

use serde::{Deserialize, Serialize};
use std::collections::BTreeMap;
use thiserror::Error;

#[derive(Debug, Error)]
pub enum ScalingError {
    #[error("need at least 2 distinct data sizes, got {0}")]
    TooFewPoints(usize),
    #[error("data size must be positive, got {0}")]
    BadSize(i64),
    #[error("non-finite score for n={0}")]
    BadScore(u64),
    #[error("csv parse error at line {line}: {msg}")]
    Csv { line: usize, msg: String },
}

/// One observation: synthetic-data size and the benchmark average it produced.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ScalePoint {
    pub n: u64,
    pub score: f64,
}

/// Fitted model `score = intercept + slope * log10(n)`.
#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
pub struct FitResult {
    pub intercept: f64,
    pub slope: f64,
    pub r_squared: f64,
    pub n_points: usize,
}

/// Least-squares fit of score on log10(n). Points sharing the same n are
/// averaged before fitting; r² is defined as 0 when scores have no variance.
pub fn fit(points: &[ScalePoint]) -> Result<FitResult, ScalingError> {
    // Average duplicate sizes first.
    let mut by_n: BTreeMap<u64, (f64, usize)> = BTreeMap::new();
    for p in points {
        if p.n == 0 {
            return Err(ScalingError::BadSize(0));
        }
        if !p.score.is_finite() {
            return Err(ScalingError::BadScore(p.n));
        }
        let e = by_n.entry(p.n).or_insert((0.0, 0));
        e.0 += p.score;
        e.1 += 1;
    }
    if by_n.len() < 2 {
        return Err(ScalingError::TooFewPoints(by_n.len()));
    }
    let xs: Vec<f64> = by_n.keys().map(|&n| (n as f64).log10()).collect();
    let ys: Vec<f64> = by_n.values().map(|&(s, c)| s / c as f64).collect();
    let m = xs.len() as f64;
    let mean_x = xs.iter().sum::<f64>() / m;
    let mean_y = ys.iter().sum::<f64>() / m;
    let sxx: f64 = xs.iter().map(|x| (x - mean_x).powi(2)).sum();
    let sxy: f64 = xs
        .iter()
        .zip(&ys)
        .map(|(x, y)| (x - mean_x) * (y - mean_y))
        .sum();
    let syy: f64 = ys.iter().map(|y| (y - mean_y).powi(2)).sum();

    let slope = sxy / sxx;
    let intercept = mean_y - slope * mean_x;
    let ss_res: f64 = xs
        .iter()
        .zip(&ys)
        .map(|(x, y)| (y - (intercept + slope * x)).powi(2))
        .sum();
    let r_squared = if syy == 0.0 { 0.0 } else { 1.0 - ss_res / syy };

    Ok(FitResult {
        intercept,
        slope,
        r_squared,
        n_points: by_n.len(),
    })
}

/// Predicted score at size `n`.
pub fn predict(fit: &FitResult, n: u64) -> Result<f64, ScalingError> {
    if n == 0 {
        return Err(ScalingError::BadSize(0));
    }
    Ok(fit.intercept + fit.slope * (n as f64).log10())
}

/// Predicted improvement from growing the data from `n` to `n + delta`.
pub fn marginal_gain(fit: &FitResult, n: u64, delta: u64) -> Result<f64, ScalingError> {
    if n == 0 || delta == 0 {
        return Err(ScalingError::BadSize(0));
    }
    Ok(predict(fit, n + delta)? - predict(fit, n)?)
}

/// Parses a `n,score` CSV (header required) into scale points.
pub fn parse_points_csv(text: &str) -> Result<Vec<ScalePoint>, ScalingError> {
    let mut points = Vec::new();
    for (i, line) in text.lines().enumerate() {
        let line = line.trim();
        if line.is_empty() {
            continue;
        }
        if i == 0 {
            let header = line.to_ascii_lowercase();
            if header.replace(' ', "") != "n,score" {
                return Err(ScalingError::Csv {
                    line: 1,
                    msg: format!("expected header 'n,score', got '{line}'"),
                });
            }
            continue;
        }
        let mut parts = line.split(',');
        let (n_str, s_str) = match (parts.next(), parts.next(), parts.next()) {
            (Some(n), Some(s), None) => (n.trim(), s.trim()),
            _ => {
                return Err(ScalingError::Csv {
                    line: i + 1,
                    msg: "expected exactly two comma-separated fields".into(),
                })
            }
        };
        let n: u64 = n_str.parse().map_err(|e| ScalingError::Csv {
            line: i + 1,
            msg: format!("bad n '{n_str}': {e}"),
        })?;
        let score: f64 = s_str.parse().map_err(|e| ScalingError::Csv {
            line: i + 1,
            msg: format!("bad score '{s_str}': {e}"),
        })?;
        points.push(ScalePoint { n, score });
    }
    Ok(points)
}

/// Renders `(n, fitted score)` rows for external plotting.
pub fn fitted_csv(fit: &FitResult, sizes: &[u64]) -> Result<String, ScalingError> {
    let mut out = String::from("n,fitted_score\n");
    for &n in sizes {
        out.push_str(&format!("{},{}\n", n, predict(fit, n)?));
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn exact_points() -> Vec<ScalePoint> {
        [1_000u64, 10_000, 100_000, 1_000_000]
            .iter()
            .map(|&n| ScalePoint {
                n,
                score: 50.0 + 2.0 * (n as f64).log10(),
            })
            .collect()
    }

    #[test]
    fn recovers_noiseless_log_linear_points() {
        let f = fit(&exact_points()).unwrap();
        assert!((f.intercept - 50.0).abs() < 1e-9);
        assert!((f.slope - 2.0).abs() < 1e-9);
        assert!((f.r_squared - 1.0).abs() < 1e-9);
    }

    #[test]
    fn constant_scores_give_zero_slope_and_zero_r2() {
        let pts: Vec<ScalePoint> = [100u64, 1000, 10000]
            .iter()
            .map(|&n| ScalePoint { n, score: 61.0 })
            .collect();
        let f = fit(&pts).unwrap();
        assert!(f.slope.abs() < 1e-12);
        assert_eq!(f.r_squared, 0.0);
    }

    #[test]
    fn degenerate_fit_rejected() {
        let pts = vec![
            ScalePoint { n: 500, score: 1.0 },
            ScalePoint { n: 500, score: 2.0 },
        ];
        assert!(matches!(fit(&pts), Err(ScalingError::TooFewPoints(1))));
    }

    #[test]
    fn predict_and_marginal_gain_arithmetic() {
        let f = FitResult {
            intercept: 50.0,
            slope: 2.0,
            r_squared: 1.0,
            n_points: 4,
        };
        assert!((predict(&f, 100_000).unwrap() - 60.0).abs() < 1e-12);
        // one decade of growth gains exactly the slope
        let g = marginal_gain(&f, 12_345, 12_345 * 9).unwrap();
        assert!((g - 2.0).abs() < 1e-12);
        // diminishing returns
        let early = marginal_gain(&f, 10_000, 10_000).unwrap();
        let late = marginal_gain(&f, 1_000_000, 10_000).unwrap();
        assert!(early > late);
    }

    #[test]
    fn duplicate_sizes_are_averaged() {
        let mut pts = exact_points();
        pts.push(ScalePoint {
            n: 1_000,
            score: 50.0 + 2.0 * 3.0, // same as the exact value
        });
        let f = fit(&pts).unwrap();
        assert!((f.slope - 2.0).abs() < 1e-9);
        assert_eq!(f.n_points, 4);
    }

    #[test]
    fn csv_round_trip() {
        let pts = parse_points_csv("n,score\n1000,56\n10000,58.5\n").unwrap();
        assert_eq!(pts.len(), 2);
        assert_eq!(pts[0].n, 1000);
        assert!(parse_points_csv("size,score\n1,2\n").is_err());
        assert!(parse_points_csv("n,score\nx,2\n").is_err());
    }

    #[test]
    fn residuals_orthogonal_to_design() {
        let pts = vec![
            ScalePoint { n: 100, score: 55.2 },
            ScalePoint { n: 1000, score: 57.9 },
            ScalePoint { n: 10000, score: 58.1 },
            ScalePoint { n: 100000, score: 60.7 },
        ];
        let f = fit(&pts).unwrap();
        let mut sum_r = 0.0;
        let mut sum_rx = 0.0;
        for p in &pts {
            let x = (p.n as f64).log10();
            let r = p.score - (f.intercept + f.slope * x);
            sum_r += r;
            sum_rx += r * x;
        }
        assert!(sum_r.abs() < 1e-8);
        assert!(sum_rx.abs() < 1e-8);
    }

    proptest! {
        #[test]
        fn fit_invariant_to_order_and_duplication(
            seed_scores in proptest::collection::vec(40.0..70.0f64, 4..8)
        ) {
            let pts: Vec<ScalePoint> = seed_scores
                .iter()
                .enumerate()
                .map(|(i, &s)| ScalePoint { n: 10u64.pow(i as u32 + 2), score: s })
                .collect();
            let base = fit(&pts).unwrap();

            let mut rev = pts.clone();
            rev.reverse();
            let rfit = fit(&rev).unwrap();
            prop_assert!((base.slope - rfit.slope).abs() < 1e-12);
            prop_assert!((base.intercept - rfit.intercept).abs() < 1e-12);

            let mut doubled = pts.clone();
            doubled.extend_from_slice(&pts);
            let dfit = fit(&doubled).unwrap();
            prop_assert!((base.slope - dfit.slope).abs() < 1e-12);
        }
    }
}
