//! Trajectories of the ring models, growth-rate estimation and spacing
//! statistics.

use std::collections::VecDeque;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::models::{uniform_eigenvector, Model, RingConfig};

pub const DEFAULT_SEED: u64 = 20_100_115;

/// Two states closer than this (after removing a common shift) are the same.
pub const REGIME_TOL: f64 = 1e-10;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum InitialCondition {
    /// Evenly spaced cars, the closed-form eigenvector.
    Uniform,
    /// Cars bumper to bumper from position 0.
    Platoon,
    /// Seeded uniform draws on `[0, m)`, sorted.
    Random,
}

impl std::str::FromStr for InitialCondition {
    type Err = String;

    fn from_str(s: &str) -> std::result::Result<Self, Self::Err> {
        match s {
            "uniform" => Ok(Self::Uniform),
            "platoon" => Ok(Self::Platoon),
            "random" => Ok(Self::Random),
            other => Err(format!("unknown initial condition {other:?}")),
        }
    }
}

pub fn initial_state(kind: InitialCondition, ring: &RingConfig, seed: u64) -> Vec<f64> {
    match kind {
        InitialCondition::Uniform => uniform_eigenvector(ring),
        InitialCondition::Platoon => (0..ring.n()).map(|i| i as f64).collect(),
        InitialCondition::Random => {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let m = ring.m() as f64;
            let mut x: Vec<f64> = (0..ring.n()).map(|_| rng.gen_range(0.0..m)).collect();
            x.sort_by(f64::total_cmp);
            x
        }
    }
}

/// Snapshot stride: every step for small rings, otherwise about 1000 snapshots.
pub fn default_stride(n: usize, steps: usize) -> usize {
    if n <= 64 {
        1
    } else {
        steps.div_ceil(1000).max(1)
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct Snapshot {
    pub step: usize,
    pub state: Vec<f64>,
}

#[derive(Clone, Debug)]
pub struct Trajectory {
    pub model: Model,
    pub ring: RingConfig,
    /// Always holds step 0 and the final step.
    pub snapshots: Vec<Snapshot>,
    pub step: usize,
}

impl Trajectory {
    pub fn last(&self) -> &Snapshot {
        self.snapshots.last().expect("trajectory holds step 0")
    }

    pub fn first(&self) -> &Snapshot {
        &self.snapshots[0]
    }
}

fn check_finite(x: &[f64], step: usize) -> Result<()> {
    if x.iter().all(|v| v.is_finite()) {
        Ok(())
    } else {
        Err(Error::NonFinite { step })
    }
}

pub fn run_trajectory(
    model: &Model,
    ring: &RingConfig,
    x0: &[f64],
    steps: usize,
    stride: usize,
) -> Result<Trajectory> {
    if x0.len() != ring.n() {
        return Err(Error::DimensionMismatch {
            expected: ring.n(),
            got: x0.len(),
        });
    }
    check_finite(x0, 0)?;
    let stride = stride.max(1);
    let mut snapshots = vec![Snapshot {
        step: 0,
        state: x0.to_vec(),
    }];
    let mut x = x0.to_vec();
    for k in 1..=steps {
        x = model.apply(&x, ring)?;
        check_finite(&x, k)?;
        if k % stride == 0 || k == steps {
            snapshots.push(Snapshot {
                step: k,
                state: x.clone(),
            });
        }
    }
    Ok(Trajectory {
        model: model.clone(),
        ring: *ring,
        snapshots,
        step: steps,
    })
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct GrowthEstimate {
    /// `(x_1^K - x_1^B) / (K - B)`.
    pub mu: f64,
    /// Same ratio averaged over all cars.
    pub mean_mu: f64,
    /// Largest minus smallest per-car ratio.
    pub spread: f64,
    /// Stored step used as the start of the window.
    pub from_step: usize,
}

/// Growth rate over the window from the first stored step at or after
/// `burn_in` to the final step.
pub fn estimate_growth_rate(t: &Trajectory, burn_in: usize) -> Result<GrowthEstimate> {
    let end = t.last();
    let start = t
        .snapshots
        .iter()
        .find(|s| s.step >= burn_in)
        .filter(|s| s.step < end.step)
        .ok_or(Error::InsufficientSteps {
            available: t.step,
            burn_in,
        })?;
    let span = (end.step - start.step) as f64;
    let rates: Vec<f64> = end
        .state
        .iter()
        .zip(&start.state)
        .map(|(b, a)| (b - a) / span)
        .collect();
    let lo = rates.iter().copied().fold(f64::INFINITY, f64::min);
    let hi = rates.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    Ok(GrowthEstimate {
        mu: rates[0],
        mean_mu: rates.iter().sum::<f64>() / rates.len() as f64,
        spread: hi - lo,
        from_step: start.step,
    })
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize)]
#[serde(tag = "method", rename_all = "lowercase")]
pub enum RegimeKind {
    /// The state repeated up to a shift: `x^{K+T} = x^K + T mu`.
    Periodic { transient: usize, period: usize },
    /// No repeat found; mean displacement over the second half of the run.
    Window { from_step: usize },
}

#[derive(Clone, Debug, PartialEq)]
pub struct SpeedMeasurement {
    pub mu: f64,
    pub steps_used: usize,
    pub regime: RegimeKind,
    pub final_state: Vec<f64>,
}

fn car_mean_rate(later: &[f64], earlier: &[f64], span: usize) -> f64 {
    let total: f64 = later.iter().zip(earlier).map(|(b, a)| b - a).sum();
    total / (later.len() as f64 * span as f64)
}

/// Runs the model until its state becomes periodic up to a shift, or for
/// `max_steps`, and returns the average speed.
///
/// A repeat is looked for among the last `max(64, 2n + 2)` states; the rate
/// is averaged over cars, which is exact in any regime where all gaps stay
/// on one affine piece of the speed rule.
pub fn measure_speed(
    model: &Model,
    ring: &RingConfig,
    x0: &[f64],
    max_steps: usize,
) -> Result<SpeedMeasurement> {
    if x0.len() != ring.n() {
        return Err(Error::DimensionMismatch {
            expected: ring.n(),
            got: x0.len(),
        });
    }
    check_finite(x0, 0)?;
    let window = 64.max(2 * ring.n() + 2);
    let half = max_steps / 2;
    let shape = |x: &[f64]| x.iter().map(|v| v - x[0]).collect::<Vec<_>>();

    let mut recent: VecDeque<(usize, Vec<f64>, Vec<f64>)> = VecDeque::with_capacity(window + 1);
    recent.push_back((0, shape(x0), x0.to_vec()));
    let mut midpoint = x0.to_vec();
    let mut x = x0.to_vec();

    for k in 1..=max_steps {
        x = model.apply(&x, ring)?;
        check_finite(&x, k)?;
        let z = shape(&x);
        let hit = recent.iter().rev().find(|(_, past, _)| {
            past.iter()
                .zip(&z)
                .all(|(a, b)| (a - b).abs() <= REGIME_TOL)
        });
        if let Some((j, _, past_state)) = hit {
            let period = k - j;
            return Ok(SpeedMeasurement {
                mu: car_mean_rate(&x, past_state, period),
                steps_used: k,
                regime: RegimeKind::Periodic {
                    transient: *j,
                    period,
                },
                final_state: x,
            });
        }
        if k == half {
            midpoint = x.clone();
        }
        recent.push_back((k, z, x.clone()));
        if recent.len() > window {
            recent.pop_front();
        }
    }

    if max_steps == 0 {
        return Err(Error::InsufficientSteps {
            available: 0,
            burn_in: 0,
        });
    }
    Ok(SpeedMeasurement {
        mu: car_mean_rate(&x, &midpoint, max_steps - half),
        steps_used: max_steps,
        regime: RegimeKind::Window { from_step: half },
        final_state: x,
    })
}

/// Cumulative distances reduced to positions on the ring, `x_i mod m`.
pub fn ring_positions(x: &[f64], m: f64) -> Vec<f64> {
    x.iter()
        .map(|v| {
            let p = v.rem_euclid(m);
            // rem_euclid can round up to m itself for tiny negative inputs
            if p >= m {
                0.0
            } else {
                p
            }
        })
        .collect()
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct GapStats {
    /// Distance from each car to the car ahead, in car order.
    pub gaps: Vec<f64>,
    /// `max |gap - m/n|`.
    pub max_dev: f64,
    pub step: usize,
}

fn stats_from_gaps(gaps: Vec<f64>, m: f64, step: usize) -> GapStats {
    let mean = m / gaps.len() as f64;
    let max_dev = gaps.iter().map(|g| (g - mean).abs()).fold(0.0, f64::max);
    GapStats {
        gaps,
        max_dev,
        step,
    }
}

/// Gaps from positions on `[0, m)`. Coincident cars are read as a zero gap;
/// a single car sees a gap of `m`.
pub fn gap_stats(positions: &[f64], m: f64) -> GapStats {
    let n = positions.len();
    let gaps = if n == 1 {
        vec![m]
    } else {
        (0..n)
            .map(|i| (positions[(i + 1) % n] - positions[i]).rem_euclid(m))
            .collect()
    };
    stats_from_gaps(gaps, m, 0)
}

/// Gaps from cumulative distances, exact even when cars share a ring position.
pub fn gap_stats_cumulative(x: &[f64], m: f64, step: usize) -> GapStats {
    let n = x.len();
    let gaps = (0..n)
        .map(|i| {
            if i + 1 < n {
                x[i + 1] - x[i]
            } else {
                x[0] + m - x[i]
            }
        })
        .collect();
    stats_from_gaps(gaps, m, step)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::models::ControlSet;

    fn ring(n: usize, m: usize) -> RingConfig {
        RingConfig::new(n, m).unwrap()
    }

    fn three_phase() -> Model {
        Model::Control(ControlSet::from_pairs(&[
            (1.0, 0.0),
            (1.0 / 3.0, 1.0 / 8.0),
            (-1.0, 1.0),
        ]))
    }

    #[test]
    fn minplus_growth_rate() {
        let model = Model::MinPlus { v: 1.0, sigma: 1.0 };
        let t = run_trajectory(&model, &ring(2, 4), &[0.0, 2.0], 10, 1).unwrap();
        assert_eq!(estimate_growth_rate(&t, 0).unwrap().mu, 1.0);

        let model = Model::MinPlus { v: 2.0, sigma: 1.0 };
        let t = run_trajectory(&model, &ring(2, 5), &[0.0, 1.0], 200, 1).unwrap();
        assert!((estimate_growth_rate(&t, 100).unwrap().mu - 1.5).abs() < 1e-6);
    }

    #[test]
    fn single_step_matches_operator() {
        let model = Model::Control(ControlSet::from_pairs(&[(0.0, 1.0)]));
        let t = run_trajectory(&model, &ring(3, 6), &[0.0, 2.0, 4.0], 1, 1).unwrap();
        assert_eq!(t.last().state, vec![2.0, 4.0, 6.0]);
        assert_eq!(t.snapshots.len(), 2);
    }

    #[test]
    fn eigenvector_start_grows_linearly() {
        let r = ring(4, 8);
        let model = three_phase();
        let mu = model.closed_form_speed(r.density()).unwrap();
        let x0 = uniform_eigenvector(&r);
        let t = run_trajectory(&model, &r, &x0, 50, 1).unwrap();
        for s in &t.snapshots {
            for (x, a) in s.state.iter().zip(&x0) {
                assert!((x - a - s.step as f64 * mu).abs() < 1e-9);
            }
        }
        for burn in [0, 7, 49] {
            assert!((estimate_growth_rate(&t, burn).unwrap().mu - mu).abs() < 1e-12);
        }
    }

    #[test]
    fn three_phase_rate_from_random_start() {
        let r = ring(8, 16);
        let x0 = initial_state(InitialCondition::Random, &r, DEFAULT_SEED);
        let m = measure_speed(&three_phase(), &r, &x0, 10_000).unwrap();
        assert!((m.mu - 7.0 / 12.0).abs() < 1e-6, "{m:?}");
    }

    #[test]
    fn growth_rate_errors() {
        let model = Model::MinPlus { v: 1.0, sigma: 1.0 };
        let t = run_trajectory(&model, &ring(2, 4), &[0.0, 2.0], 5, 1).unwrap();
        assert!(matches!(
            estimate_growth_rate(&t, 5),
            Err(Error::InsufficientSteps {
                available: 5,
                burn_in: 5
            })
        ));
    }

    #[test]
    fn stride_keeps_endpoints() {
        let model = Model::MinPlus { v: 1.0, sigma: 1.0 };
        let t = run_trajectory(&model, &ring(2, 4), &[0.0, 2.0], 10, 4).unwrap();
        let steps: Vec<usize> = t.snapshots.iter().map(|s| s.step).collect();
        assert_eq!(steps, vec![0, 4, 8, 10]);
        assert_eq!(estimate_growth_rate(&t, 5).unwrap().from_step, 8);
        assert_eq!(default_stride(64, 1_000_000), 1);
        assert_eq!(default_stride(65, 10_500), 11);
    }

    #[test]
    fn non_finite_state_is_reported() {
        let model = Model::Control(ControlSet::from_pairs(&[(f64::MAX, 1.0)]));
        let err = run_trajectory(&model, &ring(1, 1), &[f64::MAX], 3, 1).unwrap_err();
        assert!(matches!(err, Error::NonFinite { step: 1 }), "{err:?}");
        assert!(matches!(
            run_trajectory(&model, &ring(1, 1), &[f64::NAN], 3, 1),
            Err(Error::NonFinite { step: 0 })
        ));
    }

    #[test]
    fn positions() {
        assert_eq!(ring_positions(&[0.0, 2.0, 4.0], 4.0), vec![0.0, 2.0, 0.0]);
        assert_eq!(ring_positions(&[5.5], 3.0), vec![2.5]);
        assert_eq!(
            ring_positions(&uniform_eigenvector(&ring(4, 8)), 8.0),
            vec![0.0, 2.0, 4.0, 6.0]
        );
        assert!(ring_positions(&[-1e-20], 8.0)[0] < 8.0);
    }

    #[test]
    fn gap_examples() {
        let s = gap_stats(&[0.0, 2.0, 4.0, 6.0], 8.0);
        assert_eq!(s.gaps, vec![2.0; 4]);
        assert_eq!(s.max_dev, 0.0);
        let s = gap_stats(&[0.0, 1.0, 2.0, 3.0], 8.0);
        assert_eq!(s.gaps, vec![1.0, 1.0, 1.0, 5.0]);
        assert_eq!(s.max_dev, 3.0);
        assert_eq!(gap_stats(&[1.5], 3.0).gaps, vec![3.0]);
        let s = gap_stats_cumulative(&[0.0, 8.0], 8.0, 3);
        assert_eq!(s.gaps, vec![8.0, 0.0]);
        assert_eq!(s.step, 3);
    }

    #[test]
    fn phase_two_spreads_out() {
        let r = ring(8, 20);
        let x0 = initial_state(InitialCondition::Platoon, &r, 0);
        let t = run_trajectory(&three_phase(), &r, &x0, 500, 1).unwrap();
        let last = &t.last().state;
        let stats = gap_stats(&ring_positions(last, 20.0), 20.0);
        assert!(stats.max_dev <= 1e-3, "{stats:?}");
        assert!((stats.gaps.iter().sum::<f64>() - 20.0).abs() < 1e-9);
    }

    #[test]
    fn initial_conditions() {
        let r = ring(5, 13);
        assert_eq!(
            initial_state(InitialCondition::Platoon, &r, 1),
            vec![0.0, 1.0, 2.0, 3.0, 4.0]
        );
        let a = initial_state(InitialCondition::Random, &r, 9);
        assert_eq!(a, initial_state(InitialCondition::Random, &r, 9));
        assert_ne!(a, initial_state(InitialCondition::Random, &r, 10));
        assert!(a.windows(2).all(|w| w[0] <= w[1]));
        assert!(a.iter().all(|&v| (0.0..13.0).contains(&v)));
        assert_eq!(
            "platoon".parse::<InitialCondition>().unwrap(),
            InitialCondition::Platoon
        );
        assert!("clustered".parse::<InitialCondition>().is_err());
    }
}
