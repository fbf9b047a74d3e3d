//! Flow-matching training of the velocity field and ODE resampling.
//!
//! Given an optimized trajectory ensemble, the velocity network v_θ(x, t) is
//! fit by least squares onto the empirical increments,
//!
//! ```text
//! loss = (Δt/n) Σ_i Σ_{j=1..m} ‖v_θ(X_{i,t_{j−1}}, t_{j−1}) − (X_{i,t_j} − X_{i,t_{j−1}})/Δt‖²
//! ```
//!
//! with inputs taken at the *left* endpoint of each increment. Note that
//! v_θ(·, t_m) is never trained: the sum stops at inputs t_{m−1}, and the
//! Euler resampler only queries node times t_0..t_{m−1}. (The classical RK4
//! resampler's fourth stage does evaluate the network at t = 1 on the final
//! step; that value is a smooth extrapolation and enters with weight Δt/6.)
//!
//! Minibatches are whole trajectories — a batch of particle indices with all
//! their timesteps — drawn without replacement within a pass, reshuffling
//! between passes.

use ndarray::{s, Array2, Array3, ArrayView2};
use rand::seq::SliceRandom;
use rand_chacha::ChaCha8Rng;

use crate::ensemble::{ParticleEnsemble, TimeGrid};
use crate::nn::{AdamState, Mlp};
use crate::{Error, Result};

/// Time steppers for resampling trajectories from a trained field.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum IntegratorScheme {
    Euler,
    Rk4,
}

/// Regression pairs for flow matching: rows of `inputs` are `[x, t]` at the
/// left endpoint of an increment, rows of `targets` the matching empirical
/// velocity `(X_{t_j} − X_{t_{j−1}})/Δt`.
#[derive(Debug, Clone)]
pub struct FmBatch {
    pub inputs: Array2<f64>,
    pub targets: Array2<f64>,
    /// Number of distinct trajectories the rows came from (normalizes the
    /// batch loss).
    pub particles: usize,
}

impl FmBatch {
    /// Collect the regression pairs of the listed particles, all timesteps.
    pub fn from_ensemble(ens: &ParticleEnsemble, particles: &[usize]) -> Self {
        let (m, d) = (ens.grid().steps(), ens.d());
        let dt = ens.grid().dt();
        let states = ens.states();
        let rows = particles.len() * m;
        let mut inputs = Array2::zeros((rows, d + 1));
        let mut targets = Array2::zeros((rows, d));
        let mut r = 0;
        for &i in particles {
            for j in 1..=m {
                let prev = states.slice(s![i, j - 1, ..]);
                let next = states.slice(s![i, j, ..]);
                inputs.slice_mut(s![r, ..d]).assign(&prev);
                inputs[[r, d]] = ens.grid().node(j - 1);
                for k in 0..d {
                    targets[[r, k]] = (next[k] - prev[k]) / dt;
                }
                r += 1;
            }
        }
        FmBatch {
            inputs,
            targets,
            particles: particles.len(),
        }
    }

    pub fn len(&self) -> usize {
        self.inputs.nrows()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }
}

fn check_velocity_net(net: &Mlp, d: usize) -> Result<()> {
    if !net.time_input() {
        return Err(Error::Config(
            "velocity network must be built with time_input = true".into(),
        ));
    }
    if net.input_dim() != d + 1 || net.output_dim() != d {
        return Err(Error::Config(format!(
            "velocity network maps {} -> {}, expected {} -> {d}",
            net.input_dim(),
            net.output_dim(),
            d + 1
        )));
    }
    Ok(())
}

/// Evaluate the velocity field on a batch of states at one shared time.
pub fn velocity_at(net: &Mlp, x: ArrayView2<'_, f64>, t: f64) -> Result<Array2<f64>> {
    let d = x.ncols();
    check_velocity_net(net, d)?;
    let mut inputs = Array2::zeros((x.nrows(), d + 1));
    inputs.slice_mut(s![.., ..d]).assign(&x);
    inputs.column_mut(d).fill(t);
    net.forward_batch(inputs.view())
}

fn batch_loss(
    net: &Mlp,
    batch: &FmBatch,
    dt: f64,
) -> Result<(f64, Array2<f64>, crate::nn::ParamGrads)> {
    let (v, trace) = net.forward_traced(batch.inputs.view())?;
    let diff = &v - &batch.targets;
    let scale = dt / batch.particles as f64;
    let loss = scale * diff.iter().map(|&e| e * e).sum::<f64>();
    let upstream = diff.mapv(|e| 2.0 * scale * e);
    let (grads, _) = net.backward(&trace, upstream.view());
    Ok((loss, v, grads))
}

/// Full-ensemble flow-matching loss.
pub fn fm_loss(net: &Mlp, ens: &ParticleEnsemble) -> Result<f64> {
    check_velocity_net(net, ens.d())?;
    if ens.n() == 0 {
        return Ok(0.0);
    }
    let all: Vec<usize> = (0..ens.n()).collect();
    let batch = FmBatch::from_ensemble(ens, &all);
    let v = net.forward_batch(batch.inputs.view())?;
    let diff = &v - &batch.targets;
    Ok(ens.grid().dt() / ens.n() as f64 * diff.iter().map(|&e| e * e).sum::<f64>())
}

/// Run `steps` Adam updates of the velocity network on trajectory
/// minibatches of `batch` particles; returns the per-step minibatch losses.
pub fn fm_train(
    net: &mut Mlp,
    opt: &mut AdamState,
    ens: &ParticleEnsemble,
    steps: usize,
    batch: usize,
    rng: &mut ChaCha8Rng,
) -> Result<Vec<f64>> {
    check_velocity_net(net, ens.d())?;
    if ens.n() == 0 {
        return Err(Error::Config("cannot train on an empty ensemble".into()));
    }
    if batch == 0 {
        return Err(Error::Config("flow-matching batch must be positive".into()));
    }
    let n = ens.n();
    let dt = ens.grid().dt();
    let full = batch >= n;
    let mut order: Vec<usize> = (0..n).collect();
    let mut pos = n; // force an initial shuffle
    let mut losses = Vec::with_capacity(steps);
    for step in 1..=steps {
        let fb;
        let idx: &[usize] = if full {
            &order
        } else {
            if pos + batch > n {
                order.shuffle(rng);
                pos = 0;
            }
            fb = &order[pos..pos + batch];
            pos += batch;
            fb
        };
        let mini = FmBatch::from_ensemble(ens, idx);
        let (loss, _, grads) = batch_loss(net, &mini, dt)?;
        if !loss.is_finite() {
            return Err(Error::Training {
                step,
                reason: format!("flow-matching loss became {loss}"),
            });
        }
        opt.adam_step(net, &grads).map_err(|e| match e {
            Error::Training { reason, .. } => Error::Training { step, reason },
            other => other,
        })?;
        losses.push(loss);
    }
    Ok(losses)
}

/// Integrate `x0` through the learned field over the grid, returning the
/// full trajectory ensemble (slice 0 equals `x0`).
pub fn integrate(
    net: &Mlp,
    x0: ArrayView2<'_, f64>,
    grid: TimeGrid,
    scheme: IntegratorScheme,
) -> Result<ParticleEnsemble> {
    let (n, d) = (x0.nrows(), x0.ncols());
    check_velocity_net(net, d)?;
    let m = grid.steps();
    let dt = grid.dt();
    let mut states = Array3::zeros((n, m + 1, d));
    states.slice_mut(s![.., 0, ..]).assign(&x0);
    let mut current = x0.to_owned();
    for j in 0..m {
        let t = grid.node(j);
        let next = match scheme {
            IntegratorScheme::Euler => {
                let v = velocity_at(net, current.view(), t)?;
                &current + &(dt * &v)
            }
            IntegratorScheme::Rk4 => {
                let k1 = velocity_at(net, current.view(), t)?;
                let k2 = velocity_at(net, (&current + &(0.5 * dt * &k1)).view(), t + 0.5 * dt)?;
                let k3 = velocity_at(net, (&current + &(0.5 * dt * &k2)).view(), t + 0.5 * dt)?;
                let k4 = velocity_at(net, (&current + &(dt * &k3)).view(), t + dt)?;
                &current + &(dt / 6.0 * &(&k1 + &(2.0 * &k2) + (2.0 * &k3) + &k4))
            }
        };
        for (i, row) in next.rows().into_iter().enumerate() {
            if row.iter().any(|v| !v.is_finite()) {
                return Err(Error::Integration {
                    particle: i,
                    step: j + 1,
                });
            }
        }
        states.slice_mut(s![.., j + 1, ..]).assign(&next);
        current = next;
    }
    ParticleEnsemble::from_states(grid, states)
}

/// Sorted-sample 1D Wasserstein-2 distance between equal-size sample sets.
pub fn w2_1d(xs: &[f64], ys: &[f64]) -> Result<f64> {
    if xs.len() != ys.len() {
        return Err(Error::Config(format!(
            "w2_1d compares equal-size samples, got {} and {}",
            xs.len(),
            ys.len()
        )));
    }
    if xs.is_empty() {
        return Err(Error::Config("w2_1d needs at least one sample".into()));
    }
    let mut a = xs.to_vec();
    let mut b = ys.to_vec();
    a.sort_by(f64::total_cmp);
    b.sort_by(f64::total_cmp);
    let mean_sq = a
        .iter()
        .zip(&b)
        .map(|(x, y)| (x - y) * (x - y))
        .sum::<f64>()
        / a.len() as f64;
    Ok(mean_sq.sqrt())
}

/// Velocity-field view of an ensemble's node marginal: the `d`-column state
/// slice at node `j` as owned rows (helper for marginal comparisons).
pub fn node_marginal(ens: &ParticleEnsemble, j: usize) -> Array2<f64> {
    ens.slice_at(j).to_owned()
}
