//! Oracles and seeded generators shared by the integration tests.
#![allow(dead_code)]

use rand::Rng;
use rand_chacha::ChaCha8Rng;

use ringflow::minplus::{Epsilon, Finite, MinPlusMatrix, MinPlusScalar};
use ringflow::models::{Control, ControlSet, GameControlSet, GameRow, RingConfig};

/// Minimum mean weight over all elementary circuits, by exhaustive search.
/// Each circuit is enumerated once, from its smallest node.
pub fn min_cycle_mean_brute(a: &MinPlusMatrix) -> Option<f64> {
    let n = a.dim();
    // succ[j] = (i, w) for every arc j -> i
    let mut succ = vec![Vec::new(); n];
    for (i, row) in a.rows().enumerate() {
        for (j, entry) in row.iter().enumerate() {
            if let Some(w) = entry.finite() {
                succ[j].push((i, w));
            }
        }
    }
    let mut best: Option<f64> = None;
    let mut on_path = vec![false; n];
    for start in 0..n {
        on_path[start] = true;
        walk(start, start, 0.0, 1, &succ, &mut on_path, &mut best);
        on_path[start] = false;
    }
    best
}

fn walk(
    start: usize,
    node: usize,
    weight: f64,
    len: usize,
    succ: &[Vec<(usize, f64)>],
    on_path: &mut [bool],
    best: &mut Option<f64>,
) {
    for &(next, w) in &succ[node] {
        if next == start {
            let mean = (weight + w) / len as f64;
            if best.is_none_or(|b| mean < b) {
                *best = Some(mean);
            }
        } else if next > start && !on_path[next] {
            on_path[next] = true;
            walk(start, next, weight + w, len + 1, succ, on_path, best);
            on_path[next] = false;
        }
    }
}

/// Strongly connected `n x n` matrix with integer weights in `[-5, 5]`: a
/// Hamiltonian circuit through a random permutation plus arcs of density `p`.
pub fn random_strongly_connected(rng: &mut ChaCha8Rng, n: usize, p: f64) -> MinPlusMatrix {
    let mut entries = vec![vec![Epsilon; n]; n];
    for row in entries.iter_mut() {
        for e in row.iter_mut() {
            if rng.gen_bool(p) {
                *e = Finite(rng.gen_range(-5i32..=5) as f64);
            }
        }
    }
    let mut order: Vec<usize> = (0..n).collect();
    for k in (1..n).rev() {
        order.swap(k, rng.gen_range(0..=k));
    }
    for k in 0..n {
        let (j, i) = (order[k], order[(k + 1) % n]);
        if entries[i][j].is_epsilon() {
            entries[i][j] = Finite(rng.gen_range(-5i32..=5) as f64);
        }
    }
    MinPlusMatrix::from_rows(entries).unwrap()
}

pub fn scalar(rng: &mut ChaCha8Rng) -> MinPlusScalar {
    if rng.gen_bool(0.2) {
        Epsilon
    } else {
        Finite(rng.gen_range(-10.0..10.0))
    }
}

/// About 20% exactly 0, 20% exactly 1, the rest uniform on (0, 1).
pub fn random_beta(rng: &mut ChaCha8Rng) -> f64 {
    match rng.gen_range(0..5) {
        0 => 0.0,
        1 => 1.0,
        _ => rng.gen_range(0.0..1.0),
    }
}

fn random_controls(rng: &mut ChaCha8Rng, k: usize) -> Vec<Control> {
    (0..k)
        .map(|_| Control::new(rng.gen_range(-2.0..=2.0), random_beta(rng)))
        .collect()
}

fn ensure_coupled(rng: &mut ChaCha8Rng, controls: &mut [&mut Control]) {
    if controls.iter().all(|c| c.beta == 0.0) {
        let k = rng.gen_range(0..controls.len());
        controls[k].beta = rng.gen_range(0.05..=1.0);
    }
}

/// Up to `max_controls` controls with `alpha` in `[-2, 2]` and some `beta > 0`.
pub fn random_control_set(rng: &mut ChaCha8Rng, max_controls: usize) -> ControlSet {
    let k = rng.gen_range(1..=max_controls);
    let mut controls = random_controls(rng, k);
    ensure_coupled(rng, &mut controls.iter_mut().collect::<Vec<_>>());
    ControlSet::new(controls)
}

/// Up to `max_rows` rows of up to `max_options` options each.
pub fn random_game_set(
    rng: &mut ChaCha8Rng,
    max_rows: usize,
    max_options: usize,
) -> GameControlSet {
    let rows = rng.gen_range(1..=max_rows);
    let mut set = GameControlSet::new(
        (0..rows)
            .map(|r| {
                let k = rng.gen_range(1..=max_options);
                GameRow {
                    label: format!("u{}", r + 1),
                    options: random_controls(rng, k),
                }
            })
            .collect(),
    );
    ensure_coupled(
        rng,
        &mut set
            .rows
            .iter_mut()
            .flat_map(|r| r.options.iter_mut())
            .collect::<Vec<_>>(),
    );
    set
}

/// `n <= max_n` cars on a ring of length at most `3n`.
pub fn random_ring(rng: &mut ChaCha8Rng, max_n: usize) -> RingConfig {
    let n = rng.gen_range(1..=max_n);
    let m = rng.gen_range(n..=3 * n);
    RingConfig::new(n, m).unwrap()
}

/// Multiples of 1/8 in `[-lim, lim]`: sums and products of a few of these stay exact.
pub fn dyadic(rng: &mut ChaCha8Rng, lim: i32) -> f64 {
    rng.gen_range(-8 * lim..=8 * lim) as f64 / 8.0
}

/// Multiples of 1/4 in `[0, 1]`.
pub fn dyadic_beta(rng: &mut ChaCha8Rng) -> f64 {
    rng.gen_range(0..=4) as f64 / 4.0
}
