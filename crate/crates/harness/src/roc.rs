//! Miss / false-alarm curves over a threshold sweep and their equal-error
//! point.

use std::io::{Read, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{HarnessError, Result};

/// z-value of a two-sided 95% normal interval.
pub const Z95: f64 = 1.959_963_984_540_054;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RocPoint {
    /// Users with `score > threshold` are declared active.
    pub threshold: f64,
    pub pmd: f64,
    pub pfa: f64,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct EqualError {
    pub threshold: f64,
    pub rate: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct RocCurve {
    /// Increasing thresholds.
    pub points: Vec<RocPoint>,
    pub equal_error: EqualError,
}

/// Half-width of the normal-approximation 95% interval of a binomial rate
/// estimated from `n` draws.
pub fn binomial_ci95(rate: f64, n: usize) -> f64 {
    if n == 0 {
        return f64::NAN;
    }
    Z95 * (rate * (1.0 - rate) / n as f64).sqrt()
}

/// Empirical ROC from pooled `(score, active)` pairs.
///
/// Thresholds sit on a `threshold_count`-point grid of score quantiles; the
/// first is just below the smallest score (nothing missed, everything a
/// false alarm) and the last is the largest score (everything missed). The
/// two scores that bracket the crossing of the full empirical curve are
/// added to the grid, so the interpolated equal-error point does not depend
/// on the grid resolution.
pub fn roc_curve(scored: impl IntoIterator<Item = (f64, bool)>, threshold_count: usize) -> Result<RocCurve> {
    if threshold_count < 2 {
        return Err(HarnessError::Usage("need at least two thresholds".into()));
    }
    let mut pairs: Vec<(f64, bool)> = scored.into_iter().collect();
    if let Some((s, _)) = pairs.iter().find(|(s, _)| !s.is_finite()) {
        return Err(HarnessError::Usage(format!("score {s} is not finite")));
    }
    pairs.sort_by(|a, b| a.0.total_cmp(&b.0));
    let actives = pairs.iter().filter(|p| p.1).count();
    let inactives = pairs.len() - actives;
    if actives == 0 || inactives == 0 {
        return Err(HarnessError::Usage(format!(
            "an ROC needs both active and inactive users (got {actives} and {inactives})"
        )));
    }

    // Distinct scores with the number of actives / inactives at or below
    // each one.
    let mut levels: Vec<(f64, usize, usize)> = Vec::new();
    let (mut a_le, mut i_le) = (0, 0);
    for &(s, a) in &pairs {
        if a {
            a_le += 1;
        } else {
            i_le += 1;
        }
        match levels.last_mut() {
            Some(last) if last.0 == s => {
                last.1 = a_le;
                last.2 = i_le;
            }
            _ => levels.push((s, a_le, i_le)),
        }
    }
    let point_at = |idx: Option<usize>| -> RocPoint {
        match idx {
            None => RocPoint {
                threshold: levels[0].0.next_down(),
                pmd: 0.0,
                pfa: 1.0,
            },
            Some(j) => {
                let (s, a, i) = levels[j];
                RocPoint {
                    threshold: s,
                    pmd: a as f64 / actives as f64,
                    pfa: (inactives - i) as f64 / inactives as f64,
                }
            }
        }
    };

    let last = levels.len() - 1;
    let mut grid: Vec<Option<usize>> = vec![None];
    for q in 1..threshold_count {
        let pos = (q as f64 / (threshold_count - 1) as f64 * (pairs.len() - 1) as f64).round() as usize;
        let score = pairs[pos].0;
        let j = levels.partition_point(|l| l.0 < score);
        grid.push(Some(j.min(last)));
    }
    grid.push(Some(last));
    let crossing = (0..=last).find(|&j| {
        let p = point_at(Some(j));
        p.pmd >= p.pfa
    });
    if let Some(j) = crossing {
        grid.push(Some(j));
        grid.push(j.checked_sub(1));
    }
    grid.sort();
    grid.dedup();
    RocCurve::from_points(grid.into_iter().map(point_at).collect())
}

impl RocCurve {
    /// Validates the points and computes the equal-error point by linear
    /// interpolation between the two thresholds that bracket `pmd = pfa`.
    pub fn from_points(points: Vec<RocPoint>) -> Result<Self> {
        if points.len() < 2 {
            return Err(HarnessError::Usage("an ROC needs at least two points".into()));
        }
        for p in &points {
            if !(0.0..=1.0).contains(&p.pmd) || !(0.0..=1.0).contains(&p.pfa) || p.threshold.is_nan() {
                return Err(HarnessError::Usage(format!("invalid ROC point {p:?}")));
            }
        }
        for w in points.windows(2) {
            if !(w[0].threshold < w[1].threshold && w[0].pmd <= w[1].pmd && w[0].pfa >= w[1].pfa) {
                return Err(HarnessError::Usage(format!(
                    "ROC is not monotone at {:?} -> {:?}",
                    w[0], w[1]
                )));
            }
        }
        let gap = |p: &RocPoint| p.pmd - p.pfa;
        let equal_error = match points.iter().position(|p| gap(p) >= 0.0) {
            None => {
                return Err(HarnessError::Usage("ROC never reaches pmd >= pfa".into()));
            }
            Some(0) => EqualError {
                threshold: points[0].threshold,
                rate: 0.5 * (points[0].pmd + points[0].pfa),
            },
            Some(i) => {
                let (lo, hi) = (points[i - 1], points[i]);
                let t = -gap(&lo) / (gap(&hi) - gap(&lo));
                EqualError {
                    threshold: lo.threshold + t * (hi.threshold - lo.threshold),
                    rate: lo.pmd + t * (hi.pmd - lo.pmd),
                }
            }
        };
        Ok(Self { points, equal_error })
    }

    pub fn write_csv<W: Write>(&self, out: W) -> csv::Result<()> {
        let mut w = csv::Writer::from_writer(out);
        for p in &self.points {
            w.serialize(p)?;
        }
        w.flush()?;
        Ok(())
    }

    pub fn read_csv<R: Read>(input: R, path: &Path) -> Result<Self> {
        let mut r = csv::Reader::from_reader(input);
        let headers = r.headers().map_err(|e| HarnessError::csv(path, e))?;
        if headers != vec!["threshold", "pmd", "pfa"] {
            return Err(HarnessError::format(path, format!("unexpected header {headers:?}")));
        }
        let points = r
            .deserialize()
            .collect::<std::result::Result<Vec<RocPoint>, _>>()
            .map_err(|e| HarnessError::csv(path, e))?;
        Self::from_points(points).map_err(|e| HarnessError::format(path, e.to_string()))
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        let file = std::fs::File::create(path).map_err(|e| HarnessError::io(path, e))?;
        self.write_csv(std::io::BufWriter::new(file))
            .map_err(|e| HarnessError::csv(path, e))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let file = std::fs::File::open(path).map_err(|e| HarnessError::io(path, e))?;
        Self::read_csv(std::io::BufReader::new(file), path)
    }
}
