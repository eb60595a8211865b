//! Log-log regression of a performance metric against parameter count.
//!
//! Every metric kind is transformed as `y = −ln(value)` so that a positive
//! slope always means "bigger model, better score".

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "SCREAMING_SNAKE_CASE")]
pub enum MetricKind {
    AfdSum,
    OneMinusDice,
    OneMinusIou,
}

impl fmt::Display for MetricKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            MetricKind::AfdSum => "AFD_SUM",
            MetricKind::OneMinusDice => "ONE_MINUS_DICE",
            MetricKind::OneMinusIou => "ONE_MINUS_IOU",
        })
    }
}

impl FromStr for MetricKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "AFD_SUM" => Ok(MetricKind::AfdSum),
            "ONE_MINUS_DICE" => Ok(MetricKind::OneMinusDice),
            "ONE_MINUS_IOU" => Ok(MetricKind::OneMinusIou),
            other => Err(Error::Input(format!("unknown metric kind {other:?}"))),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ScalingPoint {
    pub param_count: u64,
    pub metric_kind: MetricKind,
    pub metric_value: f64,
}

impl ScalingPoint {
    pub fn new(param_count: u64, metric_kind: MetricKind, metric_value: f64) -> Result<Self> {
        let p = Self {
            param_count,
            metric_kind,
            metric_value,
        };
        p.validate()?;
        Ok(p)
    }

    pub fn validate(&self) -> Result<()> {
        if self.param_count == 0 {
            return Err(Error::Input("param_count must be positive".into()));
        }
        let ok = match self.metric_kind {
            MetricKind::AfdSum => self.metric_value > 0.0 && self.metric_value.is_finite(),
            _ => self.metric_value > 0.0 && self.metric_value <= 1.0,
        };
        if !ok {
            return Err(Error::Input(format!(
                "point N={} has invalid {} value {}",
                self.param_count, self.metric_kind, self.metric_value
            )));
        }
        Ok(())
    }

    /// `(ln N, −ln value)`.
    pub fn transformed(&self) -> Result<(f64, f64)> {
        self.validate()?;
        Ok(((self.param_count as f64).ln(), -self.metric_value.ln()))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LogLogFit {
    pub slope: f64,
    pub intercept: f64,
    pub r_squared: f64,
}

fn ols(xy: &[(f64, f64)]) -> LogLogFit {
    let n = xy.len() as f64;
    let mx = xy.iter().map(|p| p.0).sum::<f64>() / n;
    let my = xy.iter().map(|p| p.1).sum::<f64>() / n;
    let (mut sxx, mut sxy, mut syy) = (0.0, 0.0, 0.0);
    for (x, y) in xy {
        let (dx, dy) = (x - mx, y - my);
        sxx += dx * dx;
        sxy += dx * dy;
        syy += dy * dy;
    }
    let slope = sxy / sxx;
    let intercept = my - slope * mx;
    let sse: f64 = xy
        .iter()
        .map(|(x, y)| (y - intercept - slope * x).powi(2))
        .sum();
    // a perfectly flat response is fully explained by the fit
    let r_squared = if syy == 0.0 { 1.0 } else { 1.0 - sse / syy };
    LogLogFit {
        slope,
        intercept,
        r_squared,
    }
}

/// Ordinary least squares of `−ln(value)` on `ln(N)`.
pub fn fit_loglog(points: &[ScalingPoint]) -> Result<LogLogFit> {
    let mut xy = points
        .iter()
        .map(ScalingPoint::transformed)
        .collect::<Result<Vec<_>>>()?;
    // sorting makes the floating-point sums independent of input order
    xy.sort_by(|a, b| a.0.total_cmp(&b.0).then(a.1.total_cmp(&b.1)));
    let mut sizes: Vec<u64> = points.iter().map(|p| p.param_count).collect();
    sizes.sort_unstable();
    sizes.dedup();
    if sizes.len() < 2 {
        return Err(Error::Input(
            "need at least two distinct param counts".into(),
        ));
    }
    Ok(ols(&xy))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SaturationSplit {
    pub knee: u64,
    pub linear_region: Vec<ScalingPoint>,
    pub plateau_region: Vec<ScalingPoint>,
    pub residual: f64,
}

fn line_sse(xy: &[(f64, f64)]) -> f64 {
    let distinct = xy.windows(2).any(|w| w[0].0 != w[1].0);
    if !distinct {
        return constant_sse(xy);
    }
    let fit = ols(xy);
    xy.iter()
        .map(|(x, y)| (y - fit.intercept - fit.slope * x).powi(2))
        .sum()
}

fn constant_sse(xy: &[(f64, f64)]) -> f64 {
    if xy.is_empty() {
        return 0.0;
    }
    let m = xy.iter().map(|p| p.1).sum::<f64>() / xy.len() as f64;
    xy.iter().map(|p| (p.1 - m).powi(2)).sum()
}

/// Chooses the knee `K` minimizing the residual of a line fitted on `N ≤ K`
/// plus a constant fitted on `N ≥ K`. The knee point belongs to both regions.
/// `knee_candidates` defaults to every observed param count when empty.
pub fn saturation_split(
    points: &[ScalingPoint],
    knee_candidates: &[u64],
) -> Result<SaturationSplit> {
    if points.len() < 4 {
        return Err(Error::Input(format!(
            "{} points, need at least 4",
            points.len()
        )));
    }
    let mut sorted = points.to_vec();
    sorted.sort_by(|a, b| {
        a.param_count
            .cmp(&b.param_count)
            .then(a.metric_value.total_cmp(&b.metric_value))
    });
    let xy = sorted
        .iter()
        .map(ScalingPoint::transformed)
        .collect::<Result<Vec<_>>>()?;
    let mut candidates: Vec<u64> = if knee_candidates.is_empty() {
        sorted.iter().map(|p| p.param_count).collect()
    } else {
        knee_candidates.to_vec()
    };
    candidates.sort_unstable();
    candidates.dedup();

    let mut best: Option<(f64, u64)> = None;
    for knee in candidates {
        let left: Vec<_> = sorted
            .iter()
            .zip(&xy)
            .filter(|(p, _)| p.param_count <= knee)
            .map(|(_, v)| *v)
            .collect();
        let right: Vec<_> = sorted
            .iter()
            .zip(&xy)
            .filter(|(p, _)| p.param_count >= knee)
            .map(|(_, v)| *v)
            .collect();
        if left.is_empty() {
            continue;
        }
        let sse = line_sse(&left) + constant_sse(&right);
        // strict comparison keeps the smaller knee on ties
        if best.is_none_or(|(b, _)| sse < b) {
            best = Some((sse, knee));
        }
    }
    let (residual, knee) =
        best.ok_or_else(|| Error::Input("no knee candidate covers the data".into()))?;
    Ok(SaturationSplit {
        knee,
        linear_region: sorted
            .iter()
            .filter(|p| p.param_count <= knee)
            .copied()
            .collect(),
        plateau_region: sorted
            .iter()
            .filter(|p| p.param_count >= knee)
            .copied()
            .collect(),
        residual,
    })
}

/// Reads `param_count,metric_kind,metric_value` rows.
pub fn parse_points_csv(text: &str) -> Result<Vec<ScalingPoint>> {
    #[derive(Deserialize)]
    struct Row {
        param_count: u64,
        metric_kind: String,
        metric_value: f64,
    }
    let mut reader = csv::ReaderBuilder::new()
        .trim(csv::Trim::All)
        .from_reader(text.as_bytes());
    let mut out = Vec::new();
    for (i, row) in reader.deserialize::<Row>().enumerate() {
        let row = row.map_err(|e| Error::Input(format!("points row {}: {e}", i + 2)))?;
        let kind = row.metric_kind.parse()?;
        out.push(ScalingPoint::new(row.param_count, kind, row.metric_value)?);
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn power_law(sizes: &[u64], exponent: f64) -> Vec<ScalingPoint> {
        sizes
            .iter()
            .map(|n| {
                ScalingPoint::new(*n, MetricKind::AfdSum, (*n as f64).powf(-exponent)).unwrap()
            })
            .collect()
    }

    #[test]
    fn exact_power_law() {
        let sizes = [10_000, 30_000, 100_000, 300_000, 1_000_000, 4_000_000];
        let fit = fit_loglog(&power_law(&sizes, 0.15)).unwrap();
        assert!((fit.slope - 0.15).abs() < 1e-9);
        assert!(fit.intercept.abs() < 1e-8);
        assert!((fit.r_squared - 1.0).abs() < 1e-12);
    }

    #[test]
    fn two_points_are_exact() {
        let pts = [
            ScalingPoint::new(100, MetricKind::OneMinusDice, 0.2).unwrap(),
            ScalingPoint::new(1000, MetricKind::OneMinusDice, 0.1).unwrap(),
        ];
        let fit = fit_loglog(&pts).unwrap();
        assert!((fit.r_squared - 1.0).abs() < 1e-12);
        assert!((fit.slope - 2f64.ln() / 10f64.ln()).abs() < 1e-12);
    }

    #[test]
    fn input_errors() {
        let p = ScalingPoint::new(100, MetricKind::AfdSum, 1.0).unwrap();
        assert!(fit_loglog(&[p, p]).is_err());
        assert!(ScalingPoint::new(100, MetricKind::OneMinusIou, 1.5).is_err());
        assert!(ScalingPoint::new(100, MetricKind::AfdSum, 0.0).is_err());
        assert!(ScalingPoint::new(0, MetricKind::AfdSum, 1.0).is_err());
        assert!(saturation_split(&[p, p, p], &[]).is_err());
    }

    #[test]
    fn knee_on_pure_line_is_largest() {
        let pts = power_law(&[1_000, 2_000, 4_000, 8_000, 16_000], 0.2);
        assert_eq!(saturation_split(&pts, &[]).unwrap().knee, 16_000);
    }

    #[test]
    fn knee_on_constant_is_smallest() {
        let pts: Vec<_> = [1_000, 2_000, 4_000, 8_000]
            .iter()
            .map(|n| ScalingPoint::new(*n, MetricKind::AfdSum, 3.0).unwrap())
            .collect();
        assert_eq!(saturation_split(&pts, &[]).unwrap().knee, 1_000);
    }

    #[test]
    fn knee_on_line_then_flat() {
        let sizes: Vec<u64> = (0..10).map(|i| 1_000u64 << i).collect();
        let knee = sizes[5];
        let pts: Vec<_> = sizes
            .iter()
            .map(|n| {
                let v = (*n.min(&knee) as f64).powf(-0.3);
                ScalingPoint::new(*n, MetricKind::AfdSum, v).unwrap()
            })
            .collect();
        let split = saturation_split(&pts, &[]).unwrap();
        assert_eq!(split.knee, knee);
        assert_eq!(split.linear_region.len(), 6);
        assert_eq!(split.plateau_region.len(), 5);
    }

    #[test]
    fn csv_points() {
        let text =
            "param_count,metric_kind,metric_value\n100,AFD_SUM,4.5\n200,ONE_MINUS_DICE,0.12\n";
        let pts = parse_points_csv(text).unwrap();
        assert_eq!(pts.len(), 2);
        assert_eq!(pts[1].metric_kind, MetricKind::OneMinusDice);
        assert!(parse_points_csv("param_count,metric_kind,metric_value\n1,BAD,1\n").is_err());
        assert!(parse_points_csv("param_count,metric_kind,metric_value\nx,AFD_SUM,1\n").is_err());
    }

    proptest! {
        #[test]
        fn order_invariant(values in proptest::collection::vec(0.01f64..10.0, 3..12), rot in 0usize..12) {
            let pts: Vec<_> = values
                .iter()
                .enumerate()
                .map(|(i, v)| ScalingPoint::new(1000 * (i as u64 + 1), MetricKind::AfdSum, *v).unwrap())
                .collect();
            let mut shuffled = pts.clone();
            let k = rot % shuffled.len();
            shuffled.rotate_left(k);
            shuffled.reverse();
            prop_assert_eq!(fit_loglog(&pts).unwrap(), fit_loglog(&shuffled).unwrap());
        }
    }
}
