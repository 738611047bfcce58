//! Fundamental diagrams: flow as a function of density.
//!
//! A control set `U` gives the concave curve `f(d) = min_u {alpha_u d + beta_u}`;
//! a game gives `f(d) = min_u max_w {alpha_uw d + beta_uw}`. The same
//! coefficients read as speed rules drive the simulations in
//! [`crate::simulate`], and read as line slopes and intercepts they describe
//! the curve.

mod fit;
mod sweep;

pub use fit::{fit_concave, fit_minmax, ConcaveFit, MinMaxFit, MinMaxOptions};
pub use sweep::{simulated_sweep, SweepPoint};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::models::{Control, ControlSet, GameControlSet, GameRow, Model};

/// Number of grid points used when none is given.
pub const DEFAULT_GRID: usize = 101;

/// `f(d) = slope * d + intercept`.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct AffineSegment {
    pub slope: f64,
    pub intercept: f64,
}

impl AffineSegment {
    pub const fn new(slope: f64, intercept: f64) -> Self {
        AffineSegment { slope, intercept }
    }

    pub fn at(&self, d: f64) -> f64 {
        self.slope * d + self.intercept
    }
}

impl From<Control> for AffineSegment {
    fn from(c: Control) -> Self {
        AffineSegment::new(c.alpha, c.beta)
    }
}

impl From<AffineSegment> for Control {
    fn from(s: AffineSegment) -> Self {
        Control::new(s.slope, s.intercept)
    }
}

#[derive(Clone, Debug, PartialEq)]
pub enum Branch {
    Single(AffineSegment),
    Max(Vec<AffineSegment>),
}

impl Branch {
    pub fn at(&self, d: f64) -> f64 {
        match self {
            Branch::Single(s) => s.at(d),
            Branch::Max(segs) => segs
                .iter()
                .map(|s| s.at(d))
                .fold(f64::NEG_INFINITY, f64::max),
        }
    }

    pub fn segments(&self) -> &[AffineSegment] {
        match self {
            Branch::Single(s) => std::slice::from_ref(s),
            Branch::Max(segs) => segs,
        }
    }

    fn segments_mut(&mut self) -> &mut [AffineSegment] {
        match self {
            Branch::Single(s) => std::slice::from_mut(s),
            Branch::Max(segs) => segs,
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub enum DiagramStructure {
    /// Minimum of lines: concave.
    Min(Vec<AffineSegment>),
    /// Minimum of branches, each a line or a maximum of lines.
    MinMax(Vec<Branch>),
}

impl DiagramStructure {
    /// Raw value of the piecewise-affine expression; defined for every real `d`.
    pub fn value_at(&self, d: f64) -> f64 {
        match self {
            DiagramStructure::Min(segs) => {
                segs.iter().map(|s| s.at(d)).fold(f64::INFINITY, f64::min)
            }
            DiagramStructure::MinMax(branches) => branches
                .iter()
                .map(|b| b.at(d))
                .fold(f64::INFINITY, f64::min),
        }
    }

    pub fn segment_count(&self) -> usize {
        match self {
            DiagramStructure::Min(segs) => segs.len(),
            DiagramStructure::MinMax(branches) => branches.iter().map(|b| b.segments().len()).sum(),
        }
    }

    /// Every coefficient in order, `slope` before `intercept`.
    pub fn coefficients(&self) -> Vec<f64> {
        let mut out = Vec::with_capacity(2 * self.segment_count());
        self.for_each_segment(|s| out.extend([s.slope, s.intercept]));
        out
    }

    /// Inverse of [`coefficients`](Self::coefficients).
    pub fn set_coefficients(&mut self, coeffs: &[f64]) {
        let mut it = coeffs.chunks_exact(2);
        let mut write = |s: &mut AffineSegment| {
            if let Some(c) = it.next() {
                *s = AffineSegment::new(c[0], c[1]);
            }
        };
        match self {
            DiagramStructure::Min(segs) => segs.iter_mut().for_each(&mut write),
            DiagramStructure::MinMax(branches) => branches
                .iter_mut()
                .flat_map(Branch::segments_mut)
                .for_each(&mut write),
        }
    }

    fn for_each_segment(&self, mut f: impl FnMut(&AffineSegment)) {
        match self {
            DiagramStructure::Min(segs) => segs.iter().for_each(f),
            DiagramStructure::MinMax(branches) => {
                branches.iter().flat_map(Branch::segments).for_each(&mut f)
            }
        }
    }

    /// The model whose fundamental diagram is this curve.
    pub fn to_model(&self) -> Model {
        match self {
            DiagramStructure::Min(segs) => {
                Model::Control(ControlSet::new(segs.iter().map(|&s| s.into()).collect()))
            }
            DiagramStructure::MinMax(branches) => Model::Game(GameControlSet::new(
                branches
                    .iter()
                    .enumerate()
                    .map(|(i, b)| GameRow {
                        label: format!("u{}", i + 1),
                        options: b.segments().iter().map(|&s| s.into()).collect(),
                    })
                    .collect(),
            )),
        }
    }

    pub fn from_model(model: &Model) -> DiagramStructure {
        match model {
            Model::MinPlus { v, sigma } => diagram_minplus(*v, *sigma).structure,
            Model::Control(set) => diagram_control(set).structure,
            Model::Game(set) => diagram_game(set).structure,
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct DiagramCurve {
    pub structure: DiagramStructure,
    /// `(d, f(d))` on the default grid.
    pub samples: Vec<(f64, f64)>,
}

impl DiagramCurve {
    pub fn new(structure: DiagramStructure) -> Self {
        let samples = density_grid(DEFAULT_GRID)
            .into_iter()
            .map(|d| (d, structure.value_at(d)))
            .collect();
        DiagramCurve { structure, samples }
    }

    pub fn value_at(&self, d: f64) -> f64 {
        self.structure.value_at(d)
    }
}

/// `k` evenly spaced densities `j/(k-1)` spanning `[0, 1]`.
pub fn density_grid(k: usize) -> Vec<f64> {
    match k {
        0 => Vec::new(),
        1 => vec![1.0],
        _ => (0..k).map(|j| j as f64 / (k - 1) as f64).collect(),
    }
}

/// `f = min{v d, 1 - sigma d}`.
pub fn diagram_minplus(v: f64, sigma: f64) -> DiagramCurve {
    DiagramCurve::new(DiagramStructure::Min(vec![
        AffineSegment::new(v, 0.0),
        AffineSegment::new(-sigma, 1.0),
    ]))
}

pub fn diagram_control(set: &ControlSet) -> DiagramCurve {
    DiagramCurve::new(DiagramStructure::Min(
        set.controls.iter().map(|&c| c.into()).collect(),
    ))
}

/// Rows with one option become plain lines, the rest become maxima.
pub fn diagram_game(set: &GameControlSet) -> DiagramCurve {
    DiagramCurve::new(DiagramStructure::MinMax(
        set.rows
            .iter()
            .map(|row| match row.options.as_slice() {
                [only] => Branch::Single((*only).into()),
                many => Branch::Max(many.iter().map(|&c| c.into()).collect()),
            })
            .collect(),
    ))
}

pub fn diagram_for_model(model: &Model) -> DiagramCurve {
    DiagramCurve::new(DiagramStructure::from_model(model))
}

/// Flow at density `d` in `(0, 1]`. Negative values are returned as computed.
pub fn evaluate(curve: &DiagramCurve, d: f64) -> Result<f64> {
    if !(d > 0.0 && d <= 1.0) {
        return Err(Error::InvalidDensity(d));
    }
    Ok(curve.value_at(d))
}

/// `max(f(d), 0)`.
pub fn evaluate_clamped(curve: &DiagramCurve, d: f64) -> Result<f64> {
    evaluate(curve, d).map(|f| f.max(0.0))
}

/// Largest gap between `f(d) = min_u {alpha_u d + beta_u}` and the concave
/// conjugate `g*(d) = min_v {d v - g(v)}` of `g(alpha_u) = -beta_u` over `grid`.
pub fn fenchel_check(set: &ControlSet, grid: &[f64]) -> f64 {
    // g on V = {alpha_u}; repeated slopes keep the largest -beta
    let mut g: Vec<(f64, f64)> = set.controls.iter().map(|c| (c.alpha, -c.beta)).collect();
    g.sort_by(|a, b| a.0.total_cmp(&b.0).then(b.1.total_cmp(&a.1)));
    g.dedup_by(|later, kept| later.0 == kept.0);

    let curve = diagram_control(set);
    grid.iter()
        .map(|&d| {
            let conj = g
                .iter()
                .map(|&(v, gv)| d * v - gv)
                .fold(f64::INFINITY, f64::min);
            (curve.value_at(d) - conj).abs()
        })
        .fold(0.0, f64::max)
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize)]
pub struct TriangleReport {
    /// `f(d) <= 1 - d` at every grid point (to 1e-12).
    pub holds: bool,
    /// Grid point where `f(d) - (1 - d)` is largest.
    pub worst_density: f64,
    pub worst_excess: f64,
}

pub fn triangle_check(curve: &DiagramCurve, grid: &[f64]) -> TriangleReport {
    let (worst_density, worst_excess) = grid
        .iter()
        .map(|&d| (d, curve.value_at(d) - (1.0 - d)))
        .fold((f64::NAN, f64::NEG_INFINITY), |best, cur| {
            if cur.1 > best.1 {
                cur
            } else {
                best
            }
        });
    TriangleReport {
        holds: worst_excess <= 1e-12,
        worst_density,
        worst_excess,
    }
}

/// Raw measurements: occupancy fractions against flows in vehicles per unit time.
#[derive(Clone, Debug, PartialEq)]
pub struct MeasuredDiagram {
    pub points: Vec<(f64, f64)>,
    /// A low-density point `(d_low, flow)` whose slope gives the free speed.
    pub free_speed_ref: (f64, f64),
}

#[derive(Clone, Debug, PartialEq)]
pub struct NormalizedDiagram {
    pub points: Vec<(f64, f64)>,
    pub free_speed: f64,
    /// Flow at full density moving at the free speed; all flows are divided by it.
    pub scale: f64,
}

pub fn normalize_measurements(raw: &MeasuredDiagram) -> Result<NormalizedDiagram> {
    let (d_low, flow_low) = raw.free_speed_ref;
    if !(d_low > 0.0 && d_low <= 1.0) {
        return Err(Error::InvalidMeasurement(format!(
            "reference density {d_low} must lie in (0, 1]"
        )));
    }
    if !(flow_low > 0.0 && flow_low.is_finite()) {
        return Err(Error::InvalidMeasurement(format!(
            "reference flow {flow_low} must be positive"
        )));
    }
    if let Some(&(d, f)) = raw
        .points
        .iter()
        .find(|(d, f)| !(0.0..=1.0).contains(d) || !(*f >= 0.0 && f.is_finite()))
    {
        return Err(Error::InvalidMeasurement(format!(
            "point ({d}, {f}) outside occupancy [0,1] x flow >= 0"
        )));
    }
    let free_speed = flow_low / d_low;
    let scale = free_speed;
    Ok(NormalizedDiagram {
        points: raw.points.iter().map(|&(d, f)| (d, f / scale)).collect(),
        free_speed,
        scale,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    pub(crate) fn a6() -> GameControlSet {
        GameControlSet::from_rows(&[
            &[(1.0, 0.0)],
            &[(0.27, 0.07)],
            &[(-0.19, 0.18)],
            &[(-0.25, 0.2), (-0.2, 0.17), (0.0, 0.0)],
        ])
    }

    fn three_phase() -> ControlSet {
        ControlSet::from_pairs(&[(1.0, 0.0), (1.0 / 3.0, 1.0 / 8.0), (-1.0, 1.0)])
    }

    #[test]
    fn minplus_diagram() {
        let c = diagram_minplus(2.0, 1.0);
        assert!((evaluate(&c, 0.2).unwrap() - 0.4).abs() < 1e-15);
        assert!((evaluate(&c, 0.8).unwrap() - 0.2).abs() < 1e-15);
        let crit = 1.0 / 3.0;
        assert!((c.value_at(crit) - 2.0 / 3.0).abs() < 1e-15);
        let jam = diagram_minplus(1.0, 1.0);
        assert_eq!(evaluate(&jam, 1.0).unwrap(), 0.0);
    }

    #[test]
    fn control_diagram() {
        let c = diagram_control(&three_phase());
        assert!((evaluate(&c, 0.25).unwrap() - 5.0 / 24.0).abs() < 1e-15);
        let free = diagram_control(&ControlSet::from_pairs(&[(1.5, 0.0)]));
        assert_eq!(evaluate(&free, 0.4).unwrap(), 1.5 * 0.4);
    }

    #[test]
    fn a6_diagram() {
        let c = diagram_game(&a6());
        assert!((evaluate(&c, 0.6).unwrap() - 0.05).abs() < 1e-12);
        assert!((evaluate(&c, 1.0).unwrap() + 0.01).abs() < 1e-12);
        assert_eq!(evaluate_clamped(&c, 1.0).unwrap(), 0.0);
        match &c.structure {
            DiagramStructure::MinMax(b) => {
                assert_eq!(b.len(), 4);
                assert!(matches!(b[3], Branch::Max(ref s) if s.len() == 3));
            }
            _ => panic!("expected min-max"),
        }
        assert_eq!(c.structure.segment_count(), 6);
    }

    #[test]
    fn evaluate_rejects_out_of_range() {
        let c = diagram_minplus(1.0, 1.0);
        assert!(evaluate(&c, 0.0).is_err());
        assert!(evaluate(&c, 1.2).is_err());
        assert!(evaluate(&c, f64::NAN).is_err());
    }

    #[test]
    fn grid() {
        let g = density_grid(101);
        assert_eq!(g.len(), 101);
        assert_eq!(g[25], 0.25);
        assert_eq!((g[0], g[100]), (0.0, 1.0));
    }

    #[test]
    fn fenchel_examples() {
        let grid = density_grid(101);
        assert!(fenchel_check(&three_phase(), &grid) <= 1e-12);
        assert_eq!(
            fenchel_check(&ControlSet::from_pairs(&[(0.7, 0.2)]), &grid),
            0.0
        );
        // repeated slope: only the smaller intercept matters
        let dup = ControlSet::from_pairs(&[(0.5, 0.4), (0.5, 0.1), (-1.0, 1.0)]);
        assert!(fenchel_check(&dup, &grid) <= 1e-12);
    }

    #[test]
    fn triangle_examples() {
        let grid = density_grid(101);
        assert!(triangle_check(&diagram_minplus(2.0, 1.0), &grid).holds);
        assert!(triangle_check(&diagram_control(&three_phase()), &grid).holds);
        let r = triangle_check(
            &diagram_control(&ControlSet::from_pairs(&[(5.0, 0.5)])),
            &grid,
        );
        assert!(!r.holds);
        assert_eq!(r.worst_density, 1.0);
        assert!((r.worst_excess - 5.5).abs() < 1e-12);
    }

    #[test]
    fn normalization() {
        let raw = MeasuredDiagram {
            points: vec![(0.1, 60.0), (0.5, 90.0)],
            free_speed_ref: (0.1, 60.0),
        };
        let n = normalize_measurements(&raw).unwrap();
        assert!((n.scale - 600.0).abs() < 1e-9);
        assert!((n.points[1].1 - 0.15).abs() < 1e-15);
        assert_eq!(n.points[1].0, 0.5);

        let zeros = MeasuredDiagram {
            points: vec![(0.1, 0.0), (0.5, 0.0)],
            free_speed_ref: (0.1, 0.0),
        };
        assert!(matches!(
            normalize_measurements(&zeros),
            Err(Error::InvalidMeasurement(_))
        ));

        let already = MeasuredDiagram {
            points: vec![(0.1, 0.1), (0.4, 0.3)],
            free_speed_ref: (0.1, 0.1),
        };
        let n = normalize_measurements(&already).unwrap();
        assert_eq!(n.scale, 1.0);
        assert_eq!(n.points, already.points);

        let bad = MeasuredDiagram {
            points: vec![(1.4, 1.0)],
            free_speed_ref: (0.1, 0.1),
        };
        assert!(normalize_measurements(&bad).is_err());
    }

    #[test]
    fn model_round_trip() {
        let game = Model::Game(a6());
        assert_eq!(DiagramStructure::from_model(&game).to_model(), game);
        let control = Model::Control(three_phase());
        assert_eq!(DiagramStructure::from_model(&control).to_model(), control);
        assert_eq!(
            DiagramStructure::from_model(&Model::MinPlus { v: 2.0, sigma: 1.0 }),
            diagram_control(&ControlSet::from_pairs(&[(2.0, 0.0), (-1.0, 1.0)])).structure
        );
    }

    #[test]
    fn coefficient_round_trip() {
        let mut s = diagram_game(&a6()).structure;
        let c = s.coefficients();
        assert_eq!(c.len(), 12);
        let shifted: Vec<f64> = c.iter().map(|v| v + 1.0).collect();
        s.set_coefficients(&shifted);
        assert_eq!(s.coefficients(), shifted);
    }
}
