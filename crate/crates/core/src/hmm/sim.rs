//! HMM path simulation.

use crate::error::Result;
use crate::rng;

use super::model::Hmm;

fn sample_row(weights: impl Iterator<Item = f64>, u: f64) -> usize {
    let mut acc = 0.0;
    let mut last = 0usize;
    for (i, w) in weights.enumerate() {
        acc += w;
        last = i;
        if u < acc {
            return i;
        }
    }
    last
}

/// Simulate `X_{0:T}` and `Z_{1:T+1}` (both length `T+1`): `z[t]` is the
/// symbol emitted by `x[t]`.
pub fn simulate_hmm(hmm: &Hmm, horizon: usize, seed: u64) -> Result<(Vec<usize>, Vec<usize>)> {
    use rand::RngExt;
    let mut rng_state = rng::stream_rng(seed, rng::STREAM_PROCESS);
    let mut rng_obs = rng::stream_rng(seed, rng::STREAM_OBSERVATION);
    let d = hmm.d();
    let mut x = Vec::with_capacity(horizon + 1);
    let mut z = Vec::with_capacity(horizon + 1);
    let x0 = sample_row(
        (0..d).map(|i| hmm.mu()[i]),
        rng_state.random::<f64>(),
    );
    x.push(x0);
    for t in 0..=horizon {
        let xt = x[t];
        z.push(sample_row(
            (0..=hmm.m()).map(|s| hmm.c_mat()[(xt, s)]),
            rng_obs.random::<f64>(),
        ));
        if t < horizon {
            x.push(sample_row(
                (0..d).map(|j| hmm.a_mat()[(xt, j)]),
                rng_state.random::<f64>(),
            ));
        }
    }
    Ok((x, z))
}
