//! Overlapping-area evaluation of a generated set against a target set.
//!
//! For each feature: pairwise distances within the target set (intra) and
//! between generated and target items (inter) are smoothed into densities
//! with a Gaussian KDE, and the area under the pointwise minimum of the two
//! densities is reported.

use std::collections::BTreeMap;
use std::f64::consts::PI;
use std::fmt::Write as _;

use thiserror::Error;

use crate::corpus::NotePhrase;
use crate::features::{extract_all, Feature, FeatureOptions, FeatureVector};

pub const DEFAULT_GRID_POINTS: usize = 1000;
pub const MIN_GRID_POINTS: usize = 64;
/// Grid padding beyond the data extremes, in bandwidths.
pub const GRID_PAD_BANDWIDTHS: f64 = 3.0;
/// Tolerance of the point-mass rule for zero-variance distance sets.
pub const POINT_MASS_TOLERANCE: f64 = 1e-9;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum OaError {
    #[error("feature dimension mismatch: {0} vs {1}")]
    DimensionMismatch(usize, usize),
    #[error("set too small: {what} needs at least {min}, got {got}")]
    TooSmall {
        what: &'static str,
        min: usize,
        got: usize,
    },
    #[error("degenerate distance set: all {n} values equal {value}")]
    Degenerate { n: usize, value: f64 },
    #[error("bandwidth must be positive, got {0}")]
    BadBandwidth(f64),
    #[error("grid needs at least {MIN_GRID_POINTS} points, got {0}")]
    BadGrid(usize),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum DistanceKind {
    IntraTarget,
    IntraGenerated,
    Inter,
}

#[derive(Debug, Clone, PartialEq)]
pub struct DistanceSample {
    pub feature_name: String,
    pub kind: DistanceKind,
    pub distances: Vec<f64>,
}

/// |a - b| for scalars, Euclidean norm of the difference otherwise.
pub fn feature_distance(a: &[f64], b: &[f64]) -> Result<f64, OaError> {
    if a.len() != b.len() {
        return Err(OaError::DimensionMismatch(a.len(), b.len()));
    }
    Ok(a.iter()
        .zip(b)
        .map(|(x, y)| (x - y) * (x - y))
        .sum::<f64>()
        .sqrt())
}

/// All unordered pairs within `a` when `b` is `None`, else all `a x b` pairs.
pub fn cross_distances(a: &[Vec<f64>], b: Option<&[Vec<f64>]>) -> Result<Vec<f64>, OaError> {
    if a.len() < 2 && b.is_none() {
        return Err(OaError::TooSmall { what: "intra-set", min: 2, got: a.len() });
    }
    match b {
        None => {
            let mut out = Vec::with_capacity(a.len() * (a.len() - 1) / 2);
            for i in 0..a.len() {
                for j in i + 1..a.len() {
                    out.push(feature_distance(&a[i], &a[j])?);
                }
            }
            Ok(out)
        }
        Some(b) => {
            if a.is_empty() || b.is_empty() {
                return Err(OaError::TooSmall { what: "inter-set", min: 1, got: a.len().min(b.len()) });
            }
            let mut out = Vec::with_capacity(a.len() * b.len());
            for x in a {
                for y in b {
                    out.push(feature_distance(x, y)?);
                }
            }
            Ok(out)
        }
    }
}

fn mean(xs: &[f64]) -> f64 {
    xs.iter().sum::<f64>() / xs.len() as f64
}

/// Sample standard deviation (n - 1 denominator).
fn sample_std(xs: &[f64]) -> f64 {
    let m = mean(xs);
    (xs.iter().map(|x| (x - m) * (x - m)).sum::<f64>() / (xs.len() - 1) as f64).sqrt()
}

/// Linear-interpolation quantile of sorted data.
fn quantile_sorted(sorted: &[f64], q: f64) -> f64 {
    let pos = q * (sorted.len() - 1) as f64;
    let lo = pos.floor() as usize;
    let hi = pos.ceil() as usize;
    sorted[lo] + (sorted[hi] - sorted[lo]) * (pos - lo as f64)
}

/// `0.9 * min(std, iqr / 1.34) * n^(-1/5)`, falling back to `std` when the
/// IQR is zero.
pub fn silverman_rule(std: f64, iqr: f64, n: usize) -> f64 {
    let spread = if iqr > 0.0 { std.min(iqr / 1.34) } else { std };
    0.9 * spread * (n as f64).powf(-0.2)
}

pub fn silverman_bandwidth(distances: &[f64]) -> Result<f64, OaError> {
    if distances.len() < 2 {
        return Err(OaError::TooSmall { what: "bandwidth sample", min: 2, got: distances.len() });
    }
    let std = sample_std(distances);
    if std == 0.0 || !std.is_finite() {
        return Err(OaError::Degenerate { n: distances.len(), value: distances[0] });
    }
    let mut sorted = distances.to_vec();
    sorted.sort_by(f64::total_cmp);
    let iqr = quantile_sorted(&sorted, 0.75) - quantile_sorted(&sorted, 0.25);
    Ok(silverman_rule(std, iqr, distances.len()))
}

/// Density sampled on a uniform grid.
#[derive(Debug, Clone, PartialEq)]
pub struct DistancePdf {
    pub min: f64,
    pub max: f64,
    pub density: Vec<f64>,
    pub bandwidth: f64,
}

impl DistancePdf {
    pub fn points(&self) -> usize {
        self.density.len()
    }

    pub fn step(&self) -> f64 {
        (self.max - self.min) / (self.points() - 1) as f64
    }

    pub fn grid(&self) -> Vec<f64> {
        let step = self.step();
        (0..self.points()).map(|i| self.min + i as f64 * step).collect()
    }

    pub fn integral(&self) -> f64 {
        trapezoid(&self.density, self.step())
    }

    /// Linear interpolation; zero outside the grid.
    pub fn value_at(&self, x: f64) -> f64 {
        if !(x >= self.min && x <= self.max) {
            return 0.0;
        }
        let pos = (x - self.min) / self.step();
        let i = (pos.floor() as usize).min(self.points() - 2);
        let frac = pos - i as f64;
        self.density[i] * (1.0 - frac) + self.density[i + 1] * frac
    }
}

fn trapezoid(ys: &[f64], step: f64) -> f64 {
    if ys.len() < 2 {
        return 0.0;
    }
    let inner: f64 = ys[1..ys.len() - 1].iter().sum();
    step * (inner + 0.5 * (ys[0] + ys[ys.len() - 1]))
}

/// Gaussian KDE on a uniform grid over `[min - 3h, max + 3h]`, rescaled so
/// its trapezoid integral is 1 (the padding alone leaves up to 0.27% of the
/// kernel mass outside the grid).
pub fn kde_pdf(distances: &[f64], bandwidth: f64, grid_points: usize) -> Result<DistancePdf, OaError> {
    if !(bandwidth > 0.0 && bandwidth.is_finite()) {
        return Err(OaError::BadBandwidth(bandwidth));
    }
    if grid_points < MIN_GRID_POINTS {
        return Err(OaError::BadGrid(grid_points));
    }
    if distances.is_empty() {
        return Err(OaError::TooSmall { what: "kde sample", min: 1, got: 0 });
    }
    // Distances repeat heavily (integer-valued features); evaluate each
    // distinct value once with its multiplicity.
    let mut sorted = distances.to_vec();
    sorted.sort_by(f64::total_cmp);
    let mut support: Vec<(f64, f64)> = Vec::new();
    for &d in &sorted {
        match support.last_mut() {
            Some((v, c)) if *v == d => *c += 1.0,
            _ => support.push((d, 1.0)),
        }
    }
    let lo = sorted[0] - GRID_PAD_BANDWIDTHS * bandwidth;
    let hi = sorted[sorted.len() - 1] + GRID_PAD_BANDWIDTHS * bandwidth;
    let step = (hi - lo) / (grid_points - 1) as f64;
    let norm = 1.0 / (distances.len() as f64 * bandwidth * (2.0 * PI).sqrt());
    let mut density: Vec<f64> = (0..grid_points)
        .map(|i| {
            let x = lo + i as f64 * step;
            support
                .iter()
                .map(|&(d, c)| {
                    let u = (x - d) / bandwidth;
                    c * (-0.5 * u * u).exp()
                })
                .sum::<f64>()
                * norm
        })
        .collect();
    let total = trapezoid(&density, step);
    for v in &mut density {
        *v /= total;
    }
    Ok(DistancePdf { min: lo, max: hi, density, bandwidth })
}

/// Area under `min(p, q)`, both re-sampled onto a grid spanning both
/// supports with the larger of the two point counts. Clamped to [0, 1].
pub fn overlap_area(p: &DistancePdf, q: &DistancePdf) -> f64 {
    let lo = p.min.min(q.min);
    let hi = p.max.max(q.max);
    let points = p.points().max(q.points());
    let step = (hi - lo) / (points - 1) as f64;
    let mins: Vec<f64> = (0..points)
        .map(|i| {
            let x = lo + i as f64 * step;
            p.value_at(x).min(q.value_at(x))
        })
        .collect();
    trapezoid(&mins, step).clamp(0.0, 1.0)
}

/// Overlap of two distance sets.
///
/// Both densities share one bandwidth, Silverman's rule on the reference
/// set (the other set's when the reference has zero spread). When both sets
/// have zero spread they are point masses: 1 if their values agree within
/// 1e-9, else 0.
pub fn distance_set_oa(reference: &[f64], other: &[f64], grid_points: usize) -> Result<f64, OaError> {
    let bandwidth = match silverman_bandwidth(reference) {
        Ok(h) => h,
        Err(OaError::Degenerate { .. }) => match silverman_bandwidth(other) {
            Ok(h) => h,
            Err(OaError::Degenerate { .. }) => {
                let same = (mean(reference) - mean(other)).abs() <= POINT_MASS_TOLERANCE;
                return Ok(if same { 1.0 } else { 0.0 });
            }
            Err(e) => return Err(e),
        },
        Err(e) => return Err(e),
    };
    let p = kde_pdf(reference, bandwidth, grid_points)?;
    let q = kde_pdf(other, bandwidth, grid_points)?;
    Ok(overlap_area(&p, &q))
}

/// OA between the intra-target distance density and the generated-to-target
/// distance density of one feature.
pub fn feature_oa(target: &[Vec<f64>], generated: &[Vec<f64>], grid_points: usize) -> Result<f64, OaError> {
    if target.len() < 2 {
        return Err(OaError::TooSmall { what: "target set", min: 2, got: target.len() });
    }
    if generated.len() < 2 {
        return Err(OaError::TooSmall { what: "generated set", min: 2, got: generated.len() });
    }
    let intra = cross_distances(target, None)?;
    let inter = cross_distances(generated, Some(target))?;
    distance_set_oa(&intra, &inter, grid_points)
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct EvalOptions {
    pub features: FeatureOptions,
    pub grid_points: usize,
}

impl Default for EvalOptions {
    fn default() -> Self {
        EvalOptions { features: FeatureOptions::default(), grid_points: DEFAULT_GRID_POINTS }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct OaReport {
    /// One row per feature, in `Feature::ALL` order.
    pub rows: Vec<(Feature, f64)>,
    pub average: f64,
    /// Free-form provenance echoed into the CSV comment block.
    pub config: BTreeMap<String, String>,
}

impl OaReport {
    pub fn get(&self, feature: Feature) -> f64 {
        self.rows.iter().find(|(f, _)| *f == feature).map(|r| r.1).expect("every feature has a row")
    }

    pub fn labels() -> Vec<&'static str> {
        Feature::ALL.iter().map(|f| f.label()).chain(["average"]).collect()
    }

    pub fn to_csv(&self) -> String {
        let mut out = String::from("feature,oa\n");
        for (f, v) in &self.rows {
            let _ = writeln!(out, "{},{v:.6}", f.label());
        }
        let _ = writeln!(out, "average,{:.6}", self.average);
        for (k, v) in &self.config {
            let _ = writeln!(out, "# {k}={v}");
        }
        out
    }
}

pub fn evaluate_features(
    target: &[FeatureVector],
    generated: &[FeatureVector],
    grid_points: usize,
) -> Result<OaReport, OaError> {
    let mut rows = Vec::with_capacity(Feature::ALL.len());
    for f in Feature::ALL {
        let t: Vec<Vec<f64>> = target.iter().map(|v| v.values(f)).collect();
        let g: Vec<Vec<f64>> = generated.iter().map(|v| v.values(f)).collect();
        rows.push((f, feature_oa(&t, &g, grid_points)?));
    }
    let average = rows.iter().map(|r| r.1).sum::<f64>() / rows.len() as f64;
    let mut config = BTreeMap::new();
    config.insert("target_size".into(), target.len().to_string());
    config.insert("generated_size".into(), generated.len().to_string());
    config.insert("grid_points".into(), grid_points.to_string());
    Ok(OaReport { rows, average, config })
}

pub fn evaluate_sets(
    target: &[&NotePhrase],
    generated: &[&NotePhrase],
    opts: &EvalOptions,
) -> Result<OaReport, OaError> {
    let t = extract_all(target.iter().copied(), opts.features);
    let g = extract_all(generated.iter().copied(), opts.features);
    let mut report = evaluate_features(&t, &g, opts.grid_points)?;
    report.config.insert("rests".into(), opts.features.rests.to_string());
    Ok(report)
}
