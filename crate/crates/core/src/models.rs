//! The three ring-road operators and their closed-form average speeds.
//!
//! Every model advances car `i` from `x_i` using only `x_i` and the position
//! of the car ahead, `x_{i+1}` (with `x_{n+1} = x_1 + m` around the ring):
//!
//! * min-plus: `min{x_i + v, x_{i+1} - sigma}`
//! * control: `min_u {alpha_u + (1 - beta_u) x_i + beta_u x_{i+1}}`
//! * game: `min_u max_w {alpha_uw + (1 - beta_uw) x_i + beta_uw x_{i+1}}`
//!
//! All three are additively homogeneous and monotone, and the evenly spaced
//! configuration `[0, 1/d, ..., (n-1)/d]` is an additive eigenvector of each.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Largest road length used when a decimal density is turned into `n/m`.
pub const MAX_RING_LENGTH: usize = 10_000;

/// One affine speed rule: `y' = y + alpha + beta (z - y)` for a car at `y`
/// following a car at `z`.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Control {
    pub alpha: f64,
    pub beta: f64,
}

impl Control {
    pub const fn new(alpha: f64, beta: f64) -> Self {
        Control { alpha, beta }
    }

    /// Next position of a car at `own` behind a car at `ahead`.
    pub fn response(&self, own: f64, ahead: f64) -> f64 {
        own + self.alpha + self.beta * (ahead - own)
    }

    /// Speed under this rule when every gap equals `1/d`.
    pub fn speed_at(&self, d: f64) -> f64 {
        self.alpha + self.beta / d
    }

    pub fn flow_at(&self, d: f64) -> f64 {
        self.alpha * d + self.beta
    }

    fn term(&self, own: f64, ahead: f64, wrap: f64) -> f64 {
        self.alpha + self.beta * wrap + (1.0 - self.beta) * own + self.beta * ahead
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ControlSet {
    pub controls: Vec<Control>,
}

impl ControlSet {
    pub fn new(controls: Vec<Control>) -> Self {
        ControlSet { controls }
    }

    pub fn from_pairs(pairs: &[(f64, f64)]) -> Self {
        Self::new(pairs.iter().map(|&(a, b)| Control::new(a, b)).collect())
    }

    pub fn validate(&self) -> std::result::Result<(), Vec<Violation>> {
        validate_control_set(self)
    }
}

/// The maximizer's options once the minimizer has picked row `label`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct GameRow {
    #[serde(rename = "u")]
    pub label: String,
    pub options: Vec<Control>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct GameControlSet {
    pub rows: Vec<GameRow>,
}

impl GameControlSet {
    pub fn new(rows: Vec<GameRow>) -> Self {
        GameControlSet { rows }
    }

    /// Rows labelled `u1, u2, ...`.
    pub fn from_rows(rows: &[&[(f64, f64)]]) -> Self {
        Self::new(
            rows.iter()
                .enumerate()
                .map(|(i, opts)| GameRow {
                    label: format!("u{}", i + 1),
                    options: opts.iter().map(|&(a, b)| Control::new(a, b)).collect(),
                })
                .collect(),
        )
    }

    /// A control set seen as a game where the maximizer has no choice.
    pub fn from_control_set(set: &ControlSet) -> Self {
        Self::new(
            set.controls
                .iter()
                .enumerate()
                .map(|(i, &c)| GameRow {
                    label: format!("u{}", i + 1),
                    options: vec![c],
                })
                .collect(),
        )
    }

    pub fn validate(&self) -> std::result::Result<(), Vec<Violation>> {
        validate_game_set(self)
    }
}

/// `n` unit-length cars on a ring of length `m`; density is the exact ratio `n/m`.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(try_from = "(usize, usize)", into = "(usize, usize)")]
pub struct RingConfig {
    n: usize,
    m: usize,
}

impl TryFrom<(usize, usize)> for RingConfig {
    type Error = Error;

    fn try_from((n, m): (usize, usize)) -> Result<Self> {
        RingConfig::new(n, m)
    }
}

impl From<RingConfig> for (usize, usize) {
    fn from(r: RingConfig) -> Self {
        (r.n, r.m)
    }
}

impl RingConfig {
    pub fn new(n: usize, m: usize) -> Result<Self> {
        if n == 0 || n > m {
            return Err(Error::InvalidRing { n, m });
        }
        Ok(RingConfig { n, m })
    }

    /// Closest ratio `n/m` to `d` with `m <= max_m`; ties go to the smaller `m`.
    pub fn from_density(d: f64, max_m: usize) -> Result<Self> {
        if !(d > 0.0 && d <= 1.0) {
            return Err(Error::InvalidDensity(d));
        }
        let mut best: Option<(f64, usize, usize)> = None;
        for m in 1..=max_m.max(1) {
            let n = ((d * m as f64).round() as usize).clamp(1, m);
            let err = (n as f64 / m as f64 - d).abs();
            if best.is_none_or(|(e, _, _)| err < e) {
                best = Some((err, n, m));
            }
            if err == 0.0 {
                break;
            }
        }
        let (_, n, m) = best.expect("max_m >= 1");
        RingConfig::new(n, m)
    }

    pub fn n(&self) -> usize {
        self.n
    }

    pub fn m(&self) -> usize {
        self.m
    }

    pub fn density(&self) -> f64 {
        self.n as f64 / self.m as f64
    }

    /// Mean inter-car distance `m/n = 1/d`.
    pub fn spacing(&self) -> f64 {
        self.m as f64 / self.n as f64
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ViolationKind {
    EmptySet,
    EmptyRow,
    NonFinite,
    BetaOutOfRange,
    AllBetaZero,
    NegativeSpeed,
    NegativeSafetyDistance,
}

/// One reason a model was rejected, naming the offending control.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Violation {
    pub kind: ViolationKind,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub row: Option<usize>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub control: Option<usize>,
    pub message: String,
}

impl Violation {
    fn new(
        kind: ViolationKind,
        row: Option<usize>,
        control: Option<usize>,
        message: String,
    ) -> Self {
        Violation {
            kind,
            row,
            control,
            message,
        }
    }
}

fn check_control(c: &Control, row: Option<usize>, idx: usize, out: &mut Vec<Violation>) {
    let name = match row {
        Some(r) => format!("control ({r},{idx})"),
        None => format!("control {idx}"),
    };
    if !c.alpha.is_finite() || !c.beta.is_finite() {
        out.push(Violation::new(
            ViolationKind::NonFinite,
            row,
            Some(idx),
            format!("{name}: non-finite parameter"),
        ));
    } else if !(0.0..=1.0).contains(&c.beta) {
        out.push(Violation::new(
            ViolationKind::BetaOutOfRange,
            row,
            Some(idx),
            format!("{name}: β out of [0,1] (β = {})", c.beta),
        ));
    }
}

pub fn validate_control_set(set: &ControlSet) -> std::result::Result<(), Vec<Violation>> {
    let mut out = Vec::new();
    if set.controls.is_empty() {
        out.push(Violation::new(
            ViolationKind::EmptySet,
            None,
            None,
            "empty control set".into(),
        ));
        return Err(out);
    }
    for (i, c) in set.controls.iter().enumerate() {
        check_control(c, None, i, &mut out);
    }
    if set.controls.iter().all(|c| c.beta == 0.0) {
        out.push(Violation::new(
            ViolationKind::AllBetaZero,
            None,
            None,
            "all β = 0: every car ignores the car ahead".into(),
        ));
    }
    if out.is_empty() {
        Ok(())
    } else {
        Err(out)
    }
}

pub fn validate_game_set(set: &GameControlSet) -> std::result::Result<(), Vec<Violation>> {
    let mut out = Vec::new();
    if set.rows.is_empty() {
        out.push(Violation::new(
            ViolationKind::EmptySet,
            None,
            None,
            "empty game".into(),
        ));
        return Err(out);
    }
    for (r, row) in set.rows.iter().enumerate() {
        if row.options.is_empty() {
            out.push(Violation::new(
                ViolationKind::EmptyRow,
                Some(r),
                None,
                format!("row {r} ({}) has no options", row.label),
            ));
        }
        for (i, c) in row.options.iter().enumerate() {
            check_control(c, Some(r), i, &mut out);
        }
    }
    if set
        .rows
        .iter()
        .flat_map(|r| &r.options)
        .all(|c| c.beta == 0.0)
    {
        out.push(Violation::new(
            ViolationKind::AllBetaZero,
            None,
            None,
            "all β = 0: every car ignores the car ahead".into(),
        ));
    }
    if out.is_empty() {
        Ok(())
    } else {
        Err(out)
    }
}

fn check_dim(x: &[f64], ring: &RingConfig) -> Result<()> {
    if x.len() != ring.n() {
        return Err(Error::DimensionMismatch {
            expected: ring.n(),
            got: x.len(),
        });
    }
    Ok(())
}

/// Applies `f(own, ahead, wrap)` to each car, where `wrap` is `m` for the
/// last car (whose leader is car 1, one lap ahead) and 0 otherwise.
fn each_car(x: &[f64], ring: &RingConfig, f: impl Fn(f64, f64, f64) -> f64) -> Vec<f64> {
    let n = x.len();
    let m = ring.m() as f64;
    (0..n)
        .map(|i| {
            if i + 1 < n {
                f(x[i], x[i + 1], 0.0)
            } else {
                f(x[i], x[0], m)
            }
        })
        .collect()
}

fn min_of(values: impl Iterator<Item = f64>) -> f64 {
    values.fold(f64::INFINITY, f64::min)
}

fn max_of(values: impl Iterator<Item = f64>) -> f64 {
    values.fold(f64::NEG_INFINITY, f64::max)
}

pub fn apply_minplus_operator(
    x: &[f64],
    v: f64,
    sigma: f64,
    ring: &RingConfig,
) -> Result<Vec<f64>> {
    check_dim(x, ring)?;
    Ok(each_car(x, ring, |own, ahead, wrap| {
        (own + v).min(ahead + wrap - sigma)
    }))
}

pub fn apply_control_operator(x: &[f64], set: &ControlSet, ring: &RingConfig) -> Result<Vec<f64>> {
    check_dim(x, ring)?;
    Ok(each_car(x, ring, |own, ahead, wrap| {
        min_of(set.controls.iter().map(|c| c.term(own, ahead, wrap)))
    }))
}

pub fn apply_game_operator(x: &[f64], set: &GameControlSet, ring: &RingConfig) -> Result<Vec<f64>> {
    check_dim(x, ring)?;
    Ok(each_car(x, ring, |own, ahead, wrap| {
        min_of(
            set.rows
                .iter()
                .map(|row| max_of(row.options.iter().map(|c| c.term(own, ahead, wrap)))),
        )
    }))
}

fn check_density(d: f64) -> Result<()> {
    if d > 0.0 && d <= 1.0 {
        Ok(())
    } else {
        Err(Error::InvalidDensity(d))
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct ControlOptimum {
    pub mu: f64,
    /// Index of the optimal control (lowest on ties).
    pub control: usize,
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct GameOptimum {
    pub mu: f64,
    pub row: usize,
    pub option: usize,
}

fn argmin(values: impl Iterator<Item = f64>) -> Option<(usize, f64)> {
    values.enumerate().fold(None, |best, (i, v)| match best {
        Some((_, b)) if v >= b => best,
        _ => Some((i, v)),
    })
}

fn argmax(values: impl Iterator<Item = f64>) -> Option<(usize, f64)> {
    values.enumerate().fold(None, |best, (i, v)| match best {
        Some((_, b)) if v <= b => best,
        _ => Some((i, v)),
    })
}

/// Average speed `min_u {alpha_u + beta_u / d}` and the control attaining it.
pub fn closed_form_speed_control(set: &ControlSet, d: f64) -> Result<ControlOptimum> {
    check_density(d)?;
    let (control, mu) = argmin(set.controls.iter().map(|c| c.speed_at(d)))
        .ok_or_else(|| Error::InvalidModel(validate_control_set(set).err().unwrap_or_default()))?;
    Ok(ControlOptimum { mu, control })
}

/// Average speed `min_u max_w {alpha_uw + beta_uw / d}` with the optimal pair.
pub fn closed_form_speed_game(set: &GameControlSet, d: f64) -> Result<GameOptimum> {
    check_density(d)?;
    let per_row: Vec<(usize, f64)> = set
        .rows
        .iter()
        .map(|row| argmax(row.options.iter().map(|c| c.speed_at(d))))
        .collect::<Option<_>>()
        .ok_or_else(|| Error::InvalidModel(validate_game_set(set).err().unwrap_or_default()))?;
    let (row, mu) = argmin(per_row.iter().map(|&(_, v)| v))
        .ok_or_else(|| Error::InvalidModel(validate_game_set(set).err().unwrap_or_default()))?;
    Ok(GameOptimum {
        mu,
        row,
        option: per_row[row].0,
    })
}

/// Evenly spaced positions `[0, 1/d, ..., (n-1)/d]`.
pub fn uniform_eigenvector(ring: &RingConfig) -> Vec<f64> {
    let (n, m) = (ring.n() as f64, ring.m() as f64);
    (0..ring.n()).map(|i| i as f64 * m / n).collect()
}

/// Any of the three ring models.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "lowercase")]
pub enum Model {
    #[serde(rename = "minplus")]
    MinPlus {
        v: f64,
        sigma: f64,
    },
    Control(ControlSet),
    Game(GameControlSet),
}

impl Model {
    /// Parses a model description and rejects it with the full violation
    /// list if it is not admissible.
    pub fn from_json(text: &str) -> Result<Model> {
        let model: Model = serde_json::from_str(text)?;
        model.validate().map_err(Error::InvalidModel)?;
        Ok(model)
    }

    pub fn kind(&self) -> &'static str {
        match self {
            Model::MinPlus { .. } => "minplus",
            Model::Control(_) => "control",
            Model::Game(_) => "game",
        }
    }

    pub fn validate(&self) -> std::result::Result<(), Vec<Violation>> {
        match self {
            Model::MinPlus { v, sigma } => {
                let mut out = Vec::new();
                if !v.is_finite() || !sigma.is_finite() {
                    out.push(Violation::new(
                        ViolationKind::NonFinite,
                        None,
                        None,
                        "non-finite v or sigma".into(),
                    ));
                } else {
                    if *v < 0.0 {
                        out.push(Violation::new(
                            ViolationKind::NegativeSpeed,
                            None,
                            None,
                            format!("desired speed v = {v} is negative"),
                        ));
                    }
                    if *sigma < 0.0 {
                        out.push(Violation::new(
                            ViolationKind::NegativeSafetyDistance,
                            None,
                            None,
                            format!("safety distance sigma = {sigma} is negative"),
                        ));
                    }
                }
                if out.is_empty() {
                    Ok(())
                } else {
                    Err(out)
                }
            }
            Model::Control(set) => validate_control_set(set),
            Model::Game(set) => validate_game_set(set),
        }
    }

    /// Non-fatal remarks about an admissible model.
    pub fn warnings(&self) -> Vec<String> {
        match self {
            Model::MinPlus { sigma, .. } if *sigma < 1.0 => {
                vec![format!(
                    "safety distance sigma = {sigma} is shorter than one car length"
                )]
            }
            _ => Vec::new(),
        }
    }

    /// The equivalent control set, for models that have one.
    pub fn as_control_set(&self) -> Option<ControlSet> {
        match self {
            Model::MinPlus { v, sigma } => {
                Some(ControlSet::from_pairs(&[(*v, 0.0), (-sigma, 1.0)]))
            }
            Model::Control(set) => Some(set.clone()),
            Model::Game(_) => None,
        }
    }

    pub fn apply(&self, x: &[f64], ring: &RingConfig) -> Result<Vec<f64>> {
        match self {
            Model::MinPlus { v, sigma } => apply_minplus_operator(x, *v, *sigma, ring),
            Model::Control(set) => apply_control_operator(x, set, ring),
            Model::Game(set) => apply_game_operator(x, set, ring),
        }
    }

    /// Closed-form average speed at density `d`.
    pub fn closed_form_speed(&self, d: f64) -> Result<f64> {
        match self {
            Model::MinPlus { v, sigma } => {
                check_density(d)?;
                Ok(v.min(1.0 / d - sigma))
            }
            Model::Control(set) => closed_form_speed_control(set, d).map(|o| o.mu),
            Model::Game(set) => closed_form_speed_game(set, d).map(|o| o.mu),
        }
    }

    pub fn closed_form_flow(&self, d: f64) -> Result<f64> {
        Ok(d * self.closed_form_speed(d)?)
    }
}

/// True iff `‖h(x) - (x + mu)‖_∞ <= tol`.
pub fn verify_eigenpair(mu: f64, x: &[f64], model: &Model, ring: &RingConfig, tol: f64) -> bool {
    match model.apply(x, ring) {
        Ok(hx) => hx.iter().zip(x).all(|(h, xi)| (h - (xi + mu)).abs() <= tol),
        Err(_) => false,
    }
}
