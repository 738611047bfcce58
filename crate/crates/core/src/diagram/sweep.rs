use rayon::prelude::*;
use serde::Serialize;

use crate::error::Result;
use crate::models::{Model, RingConfig};
use crate::simulate::{initial_state, measure_speed, InitialCondition};

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct SweepPoint {
    pub n: usize,
    pub m: usize,
    pub density: f64,
    pub speed_closed_form: f64,
    pub speed_simulated: f64,
    pub flow_closed_form: f64,
    /// `density * speed_simulated`.
    pub flow_simulated: f64,
    pub steps_used: usize,
}

/// Simulates the model at each ring size and reports the measured flow next
/// to the closed form. Rings run in parallel; output keeps input order.
pub fn simulated_sweep(
    model: &Model,
    rings: &[RingConfig],
    max_steps: usize,
    init: InitialCondition,
    seed: u64,
) -> Result<Vec<SweepPoint>> {
    rings
        .par_iter()
        .map(|ring| {
            let d = ring.density();
            let x0 = initial_state(init, ring, seed);
            let measured = measure_speed(model, ring, &x0, max_steps)?;
            let speed = model.closed_form_speed(d)?;
            Ok(SweepPoint {
                n: ring.n(),
                m: ring.m(),
                density: d,
                speed_closed_form: speed,
                speed_simulated: measured.mu,
                flow_closed_form: d * speed,
                flow_simulated: d * measured.mu,
                steps_used: measured.steps_used,
            })
        })
        .collect()
}
