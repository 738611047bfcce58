//! Piecewise-affine fits of a density/flow point cloud.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::{AffineSegment, DiagramCurve, DiagramStructure};
use crate::error::{Error, Result};

/// Consecutive hull edges whose slopes differ by less than this are one segment.
const SLOPE_MERGE_TOL: f64 = 1e-6;

#[derive(Clone, Debug, PartialEq)]
pub struct ConcaveFit {
    pub segments: Vec<AffineSegment>,
    pub max_residual: f64,
    pub mean_residual: f64,
}

impl ConcaveFit {
    pub fn curve(&self) -> DiagramCurve {
        DiagramCurve::new(DiagramStructure::Min(self.segments.clone()))
    }

    /// Intercepts clamped into `[0, 1]` so the segments are admissible controls.
    pub fn clamped_segments(&self) -> Vec<AffineSegment> {
        self.segments
            .iter()
            .map(|s| AffineSegment::new(s.slope, s.intercept.clamp(0.0, 1.0)))
            .collect()
    }
}

fn residuals(structure: &DiagramStructure, points: &[(f64, f64)]) -> (f64, f64) {
    let (max, sum) = points.iter().fold((0.0f64, 0.0), |(mx, sum), &(d, f)| {
        let r = (structure.value_at(d) - f).abs();
        (mx.max(r), sum + r)
    });
    (max, sum / points.len().max(1) as f64)
}

fn cross(o: (f64, f64), a: (f64, f64), b: (f64, f64)) -> f64 {
    (a.0 - o.0) * (b.1 - o.1) - (a.1 - o.1) * (b.0 - o.0)
}

/// Vertices of the least concave majorant, left to right.
fn upper_hull(points: &[(f64, f64)]) -> Vec<(f64, f64)> {
    let mut sorted = points.to_vec();
    sorted.sort_by(|a, b| a.0.total_cmp(&b.0).then(b.1.total_cmp(&a.1)));
    sorted.dedup_by(|later, kept| later.0 == kept.0);

    let mut hull: Vec<(f64, f64)> = Vec::with_capacity(sorted.len());
    for p in sorted {
        while hull.len() >= 2 && cross(hull[hull.len() - 2], hull[hull.len() - 1], p) >= 0.0 {
            hull.pop();
        }
        hull.push(p);
    }
    hull
}

fn line_through(a: (f64, f64), b: (f64, f64)) -> AffineSegment {
    let slope = (b.1 - a.1) / (b.0 - a.0);
    AffineSegment::new(slope, a.1 - slope * a.0)
}

/// Fits `min` of at most `max_segments` lines to the least concave majorant
/// of `points`.
///
/// Hull edges with nearly equal slopes are merged, then segments are dropped
/// one at a time, each time removing the one whose absence raises the max
/// residual least. Segments that are inactive at every data point are
/// dropped even when the budget allows them.
pub fn fit_concave(points: &[(f64, f64)], max_segments: usize) -> Result<ConcaveFit> {
    if points.len() < 2 {
        return Err(Error::Degenerate("need at least two points".into()));
    }
    if points.iter().any(|(d, f)| !d.is_finite() || !f.is_finite()) {
        return Err(Error::Degenerate("non-finite point".into()));
    }
    let x0 = points[0].0;
    if points.iter().all(|p| p.0 == x0) {
        return Err(Error::Degenerate("all points share one density".into()));
    }
    let max_segments = max_segments.max(1);

    let hull = upper_hull(points);
    let mut segments: Vec<AffineSegment> = Vec::new();
    let mut run_start = 0;
    for i in 1..hull.len() {
        let run_slope = line_through(hull[run_start], hull[run_start + 1]).slope;
        let next_slope = hull.get(i + 1).map(|&p| line_through(hull[i], p).slope);
        match next_slope {
            Some(s) if (s - run_slope).abs() < SLOPE_MERGE_TOL => continue,
            _ => {
                segments.push(line_through(hull[run_start], hull[i]));
                run_start = i;
            }
        }
    }

    let score = |segs: &[AffineSegment]| residuals(&DiagramStructure::Min(segs.to_vec()), points).0;
    let mut current = score(&segments);
    while segments.len() > 1 {
        let (drop, after) = (0..segments.len())
            .map(|i| {
                let mut trial = segments.clone();
                trial.remove(i);
                (i, score(&trial))
            })
            .fold(
                (0, f64::INFINITY),
                |best, cur| if cur.1 < best.1 { cur } else { best },
            );
        let harmless = after <= current + 1e-12;
        if segments.len() > max_segments || harmless {
            segments.remove(drop);
            current = after;
        } else {
            break;
        }
    }

    let (max_residual, mean_residual) = residuals(&DiagramStructure::Min(segments.clone()), points);
    Ok(ConcaveFit {
        segments,
        max_residual,
        mean_residual,
    })
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct MinMaxOptions {
    /// Cap on improvement sweeps.
    pub max_iterations: usize,
    /// Initial step on every coefficient.
    pub initial_step: f64,
    /// Converged once the step falls below this.
    pub min_step: f64,
    /// Seeds the random search directions.
    pub seed: u64,
}

impl Default for MinMaxOptions {
    fn default() -> Self {
        MinMaxOptions {
            max_iterations: 200_000,
            initial_step: 0.02,
            min_step: 1e-12,
            seed: crate::simulate::DEFAULT_SEED,
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct MinMaxFit {
    pub structure: DiagramStructure,
    pub max_residual: f64,
    pub mean_residual: f64,
    pub iterations: usize,
    /// False when the iteration cap was hit; `structure` is then the best found.
    pub converged: bool,
}

/// Best uniform (Chebyshev) line through `points` and its max residual.
///
/// The spread `max(y - s x) - min(y - s x)` is convex in the slope `s`, with
/// its minimum between the extreme slopes of neighbouring points; a golden
/// section search finds it.
fn chebyshev_line(points: &[(f64, f64)]) -> Option<(AffineSegment, f64)> {
    let mut sorted = points.to_vec();
    sorted.sort_by(|a, b| a.0.total_cmp(&b.0));
    let slopes: Vec<f64> = sorted
        .windows(2)
        .filter(|w| w[1].0 > w[0].0)
        .map(|w| (w[1].1 - w[0].1) / (w[1].0 - w[0].0))
        .collect();
    if slopes.is_empty() {
        return None;
    }
    let spread = |s: f64| {
        let (lo, hi) =
            sorted
                .iter()
                .fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), &(x, y)| {
                    let r = y - s * x;
                    (lo.min(r), hi.max(r))
                });
        (hi - lo, lo, hi)
    };
    let mut a = slopes.iter().copied().fold(f64::INFINITY, f64::min);
    let mut b = slopes.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let ratio = (5f64.sqrt() - 1.0) / 2.0;
    for _ in 0..200 {
        if b - a <= 1e-15 * (1.0 + a.abs().max(b.abs())) {
            break;
        }
        let c = b - ratio * (b - a);
        let d = a + ratio * (b - a);
        if spread(c).0 <= spread(d).0 {
            b = d;
        } else {
            a = c;
        }
    }
    let slope = 0.5 * (a + b);
    let (width, lo, hi) = spread(slope);
    Some((AffineSegment::new(slope, 0.5 * (lo + hi)), 0.5 * width))
}

/// Index (in coefficient order) of the segment that sets the curve at `d`.
fn active_segment(structure: &DiagramStructure, d: f64) -> usize {
    let pick = |segs: &[AffineSegment], want_max: bool| {
        let mut best = 0;
        for (i, s) in segs.iter().enumerate() {
            let (v, b) = (s.at(d), segs[best].at(d));
            if (want_max && v > b) || (!want_max && v < b) {
                best = i;
            }
        }
        best
    };
    match structure {
        DiagramStructure::Min(segs) => pick(segs, false),
        DiagramStructure::MinMax(branches) => {
            let mut offset = 0;
            let mut best = (f64::INFINITY, 0);
            for b in branches {
                let segs = b.segments();
                let local = pick(segs, true);
                let value = segs[local].at(d);
                if value < best.0 {
                    best = (value, offset + local);
                }
                offset += segs.len();
            }
            best.1
        }
    }
}

/// Minimizes the max absolute residual of a fixed-shape piecewise-affine
/// curve over `points`, starting from the coefficients in `template`.
///
/// Each sweep is a pattern search: `±step` on every coefficient, then along
/// as many seeded random directions. When no move helps, every segment is
/// refit as the Chebyshev line of the points where it is active. Moves are
/// kept only when the max residual drops; the step halves after a sweep with
/// no improvement.
pub fn fit_minmax(
    points: &[(f64, f64)],
    template: &DiagramStructure,
    options: &MinMaxOptions,
) -> Result<MinMaxFit> {
    if points.is_empty() {
        return Err(Error::Degenerate("no points to fit".into()));
    }
    if template.segment_count() == 0 {
        return Err(Error::Degenerate("template has no segments".into()));
    }
    let mut structure = template.clone();
    let mut coeffs = structure.coefficients();
    let dim = coeffs.len();

    let objective = |c: &[f64], s: &mut DiagramStructure| {
        s.set_coefficients(c);
        residuals(s, points).0
    };
    let mut scratch = structure.clone();
    let mut best = objective(&coeffs, &mut scratch);
    let mut rng = ChaCha8Rng::seed_from_u64(options.seed);
    let mut step = options.initial_step;
    let mut iterations = 0;
    let mut trial = coeffs.clone();

    while step >= options.min_step && iterations < options.max_iterations {
        iterations += 1;
        let mut improved = false;

        for j in 0..dim {
            for sign in [1.0, -1.0] {
                trial.copy_from_slice(&coeffs);
                trial[j] += sign * step;
                let value = objective(&trial, &mut scratch);
                if value < best {
                    best = value;
                    coeffs.copy_from_slice(&trial);
                    improved = true;
                    break;
                }
            }
        }

        for _ in 0..dim {
            let dir: Vec<f64> = (0..dim).map(|_| rng.gen_range(-1.0..1.0)).collect();
            let norm = dir
                .iter()
                .map(|v| v * v)
                .sum::<f64>()
                .sqrt()
                .max(f64::MIN_POSITIVE);
            for sign in [1.0, -1.0] {
                for (t, (c, v)) in trial.iter_mut().zip(coeffs.iter().zip(&dir)) {
                    *t = c + sign * step * v / norm;
                }
                let value = objective(&trial, &mut scratch);
                if value < best {
                    best = value;
                    coeffs.copy_from_slice(&trial);
                    improved = true;
                    break;
                }
            }
        }

        if !improved {
            scratch.set_coefficients(&coeffs);
            let owners: Vec<usize> = points
                .iter()
                .map(|&(d, _)| active_segment(&scratch, d))
                .collect();
            for seg in 0..dim / 2 {
                let mine: Vec<(f64, f64)> = points
                    .iter()
                    .zip(&owners)
                    .filter(|(_, &o)| o == seg)
                    .map(|(&p, _)| p)
                    .collect();
                if let Some((line, _)) = chebyshev_line(&mine) {
                    trial.copy_from_slice(&coeffs);
                    trial[2 * seg] = line.slope;
                    trial[2 * seg + 1] = line.intercept;
                    let value = objective(&trial, &mut scratch);
                    if value < best {
                        best = value;
                        coeffs.copy_from_slice(&trial);
                        improved = true;
                    }
                }
            }
        }

        if !improved {
            step *= 0.5;
        }
    }

    structure.set_coefficients(&coeffs);
    let (max_residual, mean_residual) = residuals(&structure, points);
    Ok(MinMaxFit {
        structure,
        max_residual,
        mean_residual,
        iterations,
        converged: step < options.min_step,
    })
}
