//! Seeded workloads shared by the benchmarks.

use nnc_core::{NncParams, PoreModel, SimulatedRead, Simulator};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

/// A pore model and one simulated block of `m` states after an initial state.
pub struct Workload {
    pub model: PoreModel,
    pub params: NncParams,
    pub initial_state: usize,
    pub read: SimulatedRead,
}

pub fn workload(tau: usize, m: usize, mean_duration: f64, sigma: f64, seed: u64) -> Workload {
    let model = PoreModel::synthetic(tau, seed).expect("valid tau");
    let params = NncParams::new(mean_duration, sigma).expect("valid parameters");
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let space = model.space();
    let initial_state = rng.random_range(0..space.num_states());
    let mut states = Vec::with_capacity(m);
    let mut s = initial_state;
    for _ in 0..m {
        s = space.successors(s)[rng.random_range(0..4)];
        states.push(s);
    }
    let read = Simulator::new(&model, params)
        .states(states, Some(initial_state), &mut rng)
        .expect("valid path");
    Workload {
        model,
        params,
        initial_state,
        read,
    }
}
