//! Discretized control objective, the Jacobi particle update, and the
//! first-order residual diagnostic.
//!
//! With Δt = 1/m and population snapshots frozen at every node, each
//! trajectory is driven by gradient steps on the discrete objective
//!
//! ```text
//! J(X) = Δt Σ_j ½‖(X_{t_j}−X_{t_{j−1}})/Δt‖² + Δt Σ_j F[ρ_{t_j}](X_{t_j}) + G[ρ_{t_m}](X_{t_m})
//! ```
//!
//! realized by the update (all stencils read the *pre-update* state):
//!
//! ```text
//! interior j = 1..m−1:  X_{t_j} ← X_{t_j} − βΔt(−(D_tt X)_{t_j} + ∇F[ρ_{t_j}](X_{t_j}))
//! terminal:             X_{t_m} ← X_{t_m} − β((D_t X)_{t_m} + ∇G[ρ_{t_m}](X_{t_m}))
//! ```
//!
//! The terminal node carries no interaction-gradient term and trades the
//! interior's βΔt factor for a bare β; both choices are kept exactly as
//! printed in the scheme being implemented, without renormalization. Node 0
//! is pinned to the sampled initial condition. The residual reported by
//! [`residual`] is the root of the squared node-wise optimality defects,
//! (Δt/n)-weighted over interior nodes plus the unweighted terminal defect.

use ndarray::{s, Array2};
use rand::seq::SliceRandom;
use rand_chacha::ChaCha8Rng;

use crate::coupling::{CostEvaluator, CouplingSpec, PopulationSnapshot};
use crate::ensemble::{ParticleEnsemble, TimeGrid};
use crate::nn::Mlp;
use crate::{Error, Result};

/// The three terms of the control objective and their exact sum.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ObjectiveBreakdown {
    pub dynamic: f64,
    pub interaction: f64,
    pub terminal: f64,
    pub total: f64,
}

/// Both couplings frozen against per-node population snapshots: a pure cost
/// field per time node that updates, objectives, and residuals can share.
#[derive(Debug, Clone)]
pub struct FrozenCosts {
    /// Interaction evaluator at node j, stored at index j−1 for j = 1..=m.
    interaction: Vec<CostEvaluator>,
    terminal: CostEvaluator,
    dim: usize,
}

impl FrozenCosts {
    /// Freeze `f` and `g` against explicit snapshots covering nodes t_1..t_m
    /// (`snapshots[j−1]` holds node j). Snapshots may be empty when neither
    /// coupling looks at the population; a population-dependent interaction
    /// with a missing node snapshot is a configuration error.
    pub fn freeze(
        f: &CouplingSpec,
        g: &CouplingSpec,
        grid: TimeGrid,
        dim: usize,
        snapshots: &[PopulationSnapshot],
        classifier: Option<&Mlp>,
    ) -> Result<Self> {
        let m = grid.steps();
        if f.is_population_dependent() {
            if snapshots.len() != m {
                return Err(Error::Config(format!(
                    "interaction coupling needs snapshots for all {m} nodes t_1..t_m, got {}",
                    snapshots.len()
                )));
            }
            for (idx, snap) in snapshots.iter().enumerate() {
                if snap.time_index() != idx + 1 {
                    return Err(Error::Config(format!(
                        "snapshot {idx} is for node {}, expected node {}",
                        snap.time_index(),
                        idx + 1
                    )));
                }
            }
        }
        let mut interaction = Vec::with_capacity(m);
        for j in 1..=m {
            interaction.push(f.frozen(dim, snapshots.get(j - 1), classifier)?);
        }
        let terminal = g.frozen(dim, snapshots.last(), classifier)?;
        Ok(FrozenCosts {
            interaction,
            terminal,
            dim,
        })
    }

    /// Freeze against the ensemble's own current node marginals
    /// (self-consistent snapshots).
    pub fn freeze_self(
        f: &CouplingSpec,
        g: &CouplingSpec,
        ens: &ParticleEnsemble,
        classifier: Option<&Mlp>,
    ) -> Result<Self> {
        let m = ens.grid().steps();
        let needs_pop = f.is_population_dependent();
        let snapshots: Vec<PopulationSnapshot> = if needs_pop {
            (1..=m)
                .map(|j| PopulationSnapshot::new(j, ens.slice_at(j).to_owned()))
                .collect::<Result<_>>()?
        } else {
            Vec::new()
        };
        Self::freeze(f, g, ens.grid(), ens.d(), &snapshots, classifier)
    }

    /// Number of time steps m the freeze covers.
    pub fn steps(&self) -> usize {
        self.interaction.len()
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    /// Interaction cost field at node j (1 ≤ j ≤ m).
    pub fn interaction_at(&self, j: usize) -> &CostEvaluator {
        &self.interaction[j - 1]
    }

    pub fn terminal(&self) -> &CostEvaluator {
        &self.terminal
    }

    fn check_ensemble(&self, ens: &ParticleEnsemble) -> Result<()> {
        if ens.d() != self.dim || ens.grid().steps() != self.steps() {
            return Err(Error::Config(format!(
                "frozen costs cover m={}, d={} but the ensemble has m={}, d={}",
                self.steps(),
                self.dim,
                ens.grid().steps(),
                ens.d()
            )));
        }
        Ok(())
    }
}

/// Evaluate the three objective terms against frozen population snapshots:
/// dynamic energy, (Δt/n)-weighted interaction over nodes t_1..t_m, and the
/// mean terminal cost.
pub fn objective(ens: &ParticleEnsemble, costs: &FrozenCosts) -> Result<ObjectiveBreakdown> {
    costs.check_ensemble(ens)?;
    let (n, m) = (ens.n(), ens.grid().steps());
    if n == 0 {
        return Ok(ObjectiveBreakdown {
            dynamic: 0.0,
            interaction: 0.0,
            terminal: 0.0,
            total: 0.0,
        });
    }
    let dt = ens.grid().dt();
    let dynamic = ens.dynamic_cost();
    let mut interaction_sum = 0.0;
    for j in 1..=m {
        let vals = costs.interaction_at(j).value_batch(ens.slice_at(j))?;
        interaction_sum += vals.sum();
    }
    let interaction = dt / n as f64 * interaction_sum;
    let terminal = costs.terminal.value_batch(ens.slice_at(m))?.sum() / n as f64;
    Ok(ObjectiveBreakdown {
        dynamic,
        interaction,
        terminal,
        total: dynamic + interaction + terminal,
    })
}

fn check_batch(batch: &[usize], n: usize) -> Result<()> {
    if let Some(&bad) = batch.iter().find(|&&i| i >= n) {
        return Err(Error::Config(format!(
            "batch particle index {bad} out of range for ensemble of {n}"
        )));
    }
    Ok(())
}

/// Shared core of [`particle_step`] and the explicit proximal-penalty mode:
/// `penalty = Some((anchor, 1/α))` adds `(X − anchor)/α` inside both
/// gradient brackets.
fn step_impl(
    ens: &ParticleEnsemble,
    costs: &FrozenCosts,
    beta: f64,
    batch: &[usize],
    penalty: Option<(&ParticleEnsemble, f64)>,
) -> Result<ParticleEnsemble> {
    costs.check_ensemble(ens)?;
    if !beta.is_finite() || beta <= 0.0 {
        return Err(Error::Config(format!(
            "particle step size must be finite and positive, got {beta}"
        )));
    }
    let (n, d, m) = (ens.n(), ens.d(), ens.grid().steps());
    if m < 2 {
        return Err(Error::Config(
            "particle updates need at least two time steps (one interior node)".into(),
        ));
    }
    check_batch(batch, n)?;
    if let Some((anchor, _)) = penalty {
        if anchor.n() != n || anchor.d() != d || anchor.grid().steps() != m {
            return Err(Error::Config(
                "proximal anchor must match the ensemble shape".into(),
            ));
        }
    }
    let dt = ens.grid().dt();
    let pre = ens.states();
    let mut out = pre.to_owned();
    let b = batch.len();
    if b == 0 {
        return ParticleEnsemble::from_states(ens.grid(), out);
    }
    let mut xb = Array2::zeros((b, d));
    for j in 1..=m {
        for (r, &i) in batch.iter().enumerate() {
            xb.row_mut(r).assign(&pre.slice(s![i, j, ..]));
        }
        if j < m {
            let gf = costs.interaction_at(j).grad_batch(xb.view())?;
            for (r, &i) in batch.iter().enumerate() {
                for k in 0..d {
                    let x = pre[[i, j, k]];
                    let dtt = (pre[[i, j + 1, k]] - 2.0 * x + pre[[i, j - 1, k]]) / (dt * dt);
                    let mut bracket = -dtt + gf[[r, k]];
                    if let Some((anchor, inv_alpha)) = penalty {
                        bracket += (x - anchor.states()[[i, j, k]]) * inv_alpha;
                    }
                    let val = x - beta * dt * bracket;
                    if !val.is_finite() {
                        return Err(Error::Optimization {
                            particle: i,
                            node: j,
                        });
                    }
                    out[[i, j, k]] = val;
                }
            }
        } else {
            let gg = costs.terminal.grad_batch(xb.view())?;
            for (r, &i) in batch.iter().enumerate() {
                for k in 0..d {
                    let x = pre[[i, m, k]];
                    let d_t = (x - pre[[i, m - 1, k]]) / dt;
                    let mut bracket = d_t + gg[[r, k]];
                    if let Some((anchor, inv_alpha)) = penalty {
                        bracket += (x - anchor.states()[[i, m, k]]) * inv_alpha;
                    }
                    let val = x - beta * bracket;
                    if !val.is_finite() {
                        return Err(Error::Optimization {
                            particle: i,
                            node: m,
                        });
                    }
                    out[[i, m, k]] = val;
                }
            }
        }
    }
    ParticleEnsemble::from_states(ens.grid(), out)
}

/// One Jacobi gradient update of the listed particles against frozen costs.
/// Node 0 is pinned; every stencil reads the pre-update state, so the result
/// is independent of particle and node ordering.
pub fn particle_step(
    ens: &ParticleEnsemble,
    costs: &FrozenCosts,
    beta: f64,
    batch: &[usize],
) -> Result<ParticleEnsemble> {
    step_impl(ens, costs, beta, batch, None)
}

/// First-order optimality residual: the root of
/// `(Δt/n) Σ_i Σ_{j=1..m−1} ‖−(D_tt X_i)_{t_j} + ∇F[ρ_{t_j}]‖²
///  + (1/n) Σ_i ‖(D_t X_i)_{t_m} + ∇G[ρ_{t_m}]‖²`.
pub fn residual(ens: &ParticleEnsemble, costs: &FrozenCosts) -> Result<f64> {
    costs.check_ensemble(ens)?;
    let (n, d, m) = (ens.n(), ens.d(), ens.grid().steps());
    if m < 2 {
        return Err(Error::Config(
            "the residual needs at least two time steps (one interior node)".into(),
        ));
    }
    if n == 0 {
        return Ok(0.0);
    }
    let dt = ens.grid().dt();
    let states = ens.states();
    let mut interior_sum = 0.0;
    for j in 1..m {
        let gf = costs.interaction_at(j).grad_batch(ens.slice_at(j))?;
        for i in 0..n {
            for k in 0..d {
                let dtt = (states[[i, j + 1, k]] - 2.0 * states[[i, j, k]] + states[[i, j - 1, k]])
                    / (dt * dt);
                let defect = -dtt + gf[[i, k]];
                interior_sum += defect * defect;
            }
        }
    }
    let gg = costs.terminal.grad_batch(ens.slice_at(m))?;
    let mut terminal_sum = 0.0;
    for i in 0..n {
        for k in 0..d {
            let d_t = (states[[i, m, k]] - states[[i, m - 1, k]]) / dt;
            let defect = d_t + gg[[i, k]];
            terminal_sum += defect * defect;
        }
    }
    Ok((dt / n as f64 * interior_sum + terminal_sum / n as f64).sqrt())
}

/// Run `steps` particle updates with minibatches of `batch` particles drawn
/// without replacement per pass (full-batch when `batch ≥ n`).
pub fn proximal_solve(
    ens: &ParticleEnsemble,
    costs: &FrozenCosts,
    steps: usize,
    beta: f64,
    batch: usize,
    rng: &mut ChaCha8Rng,
) -> Result<ParticleEnsemble> {
    if steps == 0 {
        return Err(Error::Config(
            "at least one inner particle step is required".into(),
        ));
    }
    if batch == 0 {
        return Err(Error::Config("particle batch size must be positive".into()));
    }
    let n = ens.n();
    let full = batch >= n;
    let all: Vec<usize> = (0..n).collect();
    let mut order = all.clone();
    let mut pos = n; // force an initial shuffle
    let mut current = ens.clone();
    for _ in 0..steps {
        let idx: &[usize] = if full {
            &all
        } else {
            if pos + batch > n {
                order.shuffle(rng);
                pos = 0;
            }
            let chunk = &order[pos..pos + batch];
            pos += batch;
            chunk
        };
        current = particle_step(&current, costs, beta, idx)?;
    }
    Ok(current)
}

/// Explicit proximal-point iteration for convergence diagnostics: `outer`
/// rounds, each anchoring at the current iterate and running `inner`
/// full-batch penalized steps (gradient brackets gain `(X − anchor)/α`).
/// Returns all outer iterates `X^{(0)}..X^{(outer)}`.
pub fn proximal_point_solve(
    ens: &ParticleEnsemble,
    costs: &FrozenCosts,
    alpha: f64,
    outer: usize,
    inner: usize,
    beta: f64,
) -> Result<Vec<ParticleEnsemble>> {
    if !alpha.is_finite() || alpha <= 0.0 {
        return Err(Error::Config(format!(
            "proximal weight must be finite and positive, got {alpha}"
        )));
    }
    if inner == 0 {
        return Err(Error::Config(
            "at least one inner penalized step is required".into(),
        ));
    }
    let batch: Vec<usize> = (0..ens.n()).collect();
    let inv_alpha = 1.0 / alpha;
    let mut iterates = Vec::with_capacity(outer + 1);
    iterates.push(ens.clone());
    let mut current = ens.clone();
    for _ in 0..outer {
        let anchor = current.clone();
        for _ in 0..inner {
            current = step_impl(&current, costs, beta, &batch, Some((&anchor, inv_alpha)))?;
        }
        iterates.push(current.clone());
    }
    Ok(iterates)
}

/// Squared trajectory-space distance `Δt Σ_{j=1..m} ‖U_j − V_j‖² +
/// ‖U_m − V_m‖²`, averaged over particles — the norm the proximal-point
/// contraction ratios are measured in.
pub fn trajectory_error_sq(a: &ParticleEnsemble, b: &ParticleEnsemble) -> Result<f64> {
    if a.n() != b.n() || a.d() != b.d() || a.grid().steps() != b.grid().steps() {
        return Err(Error::Config(
            "trajectory error needs matching ensemble shapes".into(),
        ));
    }
    if a.n() == 0 {
        return Err(Error::Config(
            "trajectory error needs at least one particle".into(),
        ));
    }
    let (n, d, m) = (a.n(), a.d(), a.grid().steps());
    let dt = a.grid().dt();
    let (sa, sb) = (a.states(), b.states());
    let mut total = 0.0;
    for i in 0..n {
        let mut acc = 0.0;
        for j in 1..=m {
            for k in 0..d {
                let diff = sa[[i, j, k]] - sb[[i, j, k]];
                acc += diff * diff;
            }
        }
        let mut tail = 0.0;
        for k in 0..d {
            let diff = sa[[i, m, k]] - sb[[i, m, k]];
            tail += diff * diff;
        }
        total += dt * acc + tail;
    }
    Ok(total / n as f64)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::ensemble::init_trajectories;
    use approx::assert_relative_eq;
    use ndarray::{array, Array3};
    use rand::SeedableRng;

    /// Linear 1D trajectories from `starts` to `ends`.
    fn linear_ensemble(starts: &[f64], ends: &[f64], m: usize) -> ParticleEnsemble {
        let grid = TimeGrid::new(m).unwrap();
        let n = starts.len();
        let mut states = Array3::zeros((n, m + 1, 1));
        for i in 0..n {
            for j in 0..=m {
                states[[i, j, 0]] = starts[i] + grid.node(j) * (ends[i] - starts[i]);
            }
        }
        ParticleEnsemble::from_states(grid, states).unwrap()
    }

    fn zero_costs(grid: TimeGrid, dim: usize) -> FrozenCosts {
        FrozenCosts::freeze(
            &CouplingSpec::Zero,
            &CouplingSpec::Zero,
            grid,
            dim,
            &[],
            None,
        )
        .unwrap()
    }

    /// Closed-form minimizer of ∫ ½ẋ² + ½λx² dt + ½g·x(1)², x(0) = x0.
    fn quadratic_oc_closed_form(lambda: f64, g: f64, x0: f64, grid: TimeGrid) -> Vec<f64> {
        let s = lambda.sqrt();
        let kappa = (s * s.sinh() + g * s.cosh()) / (s * s.cosh() + g * s.sinh());
        (0..=grid.steps())
            .map(|j| {
                let t = grid.node(j);
                x0 * ((s * t).cosh() - kappa * (s * t).sinh())
            })
            .collect()
    }

    /// Quadratic costs ½λx² and ½gx² expressed through the quadratic
    /// coupling family (strength λ/2, center 0).
    fn quadratic_costs(lambda: f64, g: f64, grid: TimeGrid) -> FrozenCosts {
        FrozenCosts::freeze(
            &CouplingSpec::QuadraticTerminal {
                lambda: lambda / 2.0,
                center: 0.0,
                coord: 0,
            },
            &CouplingSpec::QuadraticTerminal {
                lambda: g / 2.0,
                center: 0.0,
                coord: 0,
            },
            grid,
            1,
            &[],
            None,
        )
        .unwrap()
    }

    #[test]
    fn objective_of_constant_trajectories_is_zero() {
        let grid = TimeGrid::new(5).unwrap();
        let ens = init_trajectories(array![[0.4, -0.2], [1.0, 0.0]].view(), grid);
        let costs = zero_costs(grid, 2);
        let obj = objective(&ens, &costs).unwrap();
        assert_eq!(obj.total, 0.0);
        assert_eq!(obj.dynamic, 0.0);
    }

    #[test]
    fn objective_counts_quadratic_terminal_cost() {
        let grid = TimeGrid::new(4).unwrap();
        let ens = init_trajectories(array![[3.0, 0.0], [-1.0, 0.0]].view(), grid);
        let costs = FrozenCosts::freeze(
            &CouplingSpec::Zero,
            &CouplingSpec::QuadraticTerminal {
                lambda: 1.0,
                center: -1.0,
                coord: 1,
            },
            grid,
            2,
            &[],
            None,
        )
        .unwrap();
        let obj = objective(&ens, &costs).unwrap();
        // every particle ends at x₂ = 0, one unit from the center
        assert_eq!(obj.terminal, 1.0);
        assert_eq!(obj.interaction, 0.0);
        assert_eq!(obj.total, 1.0);
    }

    #[test]
    fn objective_of_crossing_pair_is_its_dynamic_energy() {
        let ens = linear_ensemble(&[0.0, 1.0], &[1.0, 0.0], 8);
        let costs = zero_costs(ens.grid(), 1);
        let obj = objective(&ens, &costs).unwrap();
        // two unit-speed trajectories average to ½ kinetic energy
        assert_relative_eq!(obj.dynamic, 0.5, max_relative = 1e-12);
        assert_eq!(obj.total, obj.dynamic);
    }

    #[test]
    fn objective_requires_snapshots_for_kernel_interaction() {
        let ens = linear_ensemble(&[0.0], &[1.0], 4);
        let f = CouplingSpec::KernelInteraction {
            lambda: 1.0,
            a: array![1.0],
        };
        let err =
            FrozenCosts::freeze(&f, &CouplingSpec::Zero, ens.grid(), 1, &[], None).unwrap_err();
        assert!(matches!(err, Error::Config(_)), "{err:?}");
    }

    #[test]
    fn straight_line_moves_only_at_the_terminal_node() {
        // m = 4 keeps node values exact binary fractions, so the interior
        // stencil is exactly zero
        let ens = linear_ensemble(&[0.0], &[1.0], 4);
        let costs = zero_costs(ens.grid(), 1);
        let beta = 0.01;
        let next = particle_step(&ens, &costs, beta, &[0]).unwrap();
        for j in 0..4 {
            assert_eq!(next.states()[[0, j, 0]], ens.states()[[0, j, 0]]);
        }
        // unit slope: terminal drifts by −β·1
        assert_eq!(next.states()[[0, 4, 0]], 1.0 - beta);
    }

    #[test]
    fn constant_trajectory_is_a_fixed_point_without_couplings() {
        let grid = TimeGrid::new(6).unwrap();
        let ens = init_trajectories(array![[0.7]].view(), grid);
        let costs = zero_costs(grid, 1);
        let next = particle_step(&ens, &costs, 0.05, &[0]).unwrap();
        assert_eq!(next.states(), ens.states());
    }

    #[test]
    fn repeated_steps_converge_to_the_quadratic_oracle() {
        let grid = TimeGrid::new(50).unwrap();
        let costs = quadratic_costs(1.0, 1.0, grid);
        let mut ens = init_trajectories(array![[1.0]].view(), grid);
        for _ in 0..10_000 {
            ens = particle_step(&ens, &costs, 0.008, &[0]).unwrap();
        }
        let oracle = quadratic_oc_closed_form(1.0, 1.0, 1.0, grid);
        let max_err = (0..=50)
            .map(|j| (ens.states()[[0, j, 0]] - oracle[j]).abs())
            .fold(0.0f64, f64::max);
        assert!(max_err <= 5e-3, "max node error {max_err}");
    }

    #[test]
    fn residual_vanishes_for_constant_trajectories() {
        let grid = TimeGrid::new(5).unwrap();
        let ens = init_trajectories(array![[0.3, 0.9]].view(), grid);
        let costs = zero_costs(grid, 2);
        assert_eq!(residual(&ens, &costs).unwrap(), 0.0);
    }

    #[test]
    fn residual_of_straight_lines_is_their_slope() {
        for s in [1.0, -2.0, 0.25] {
            let ens = linear_ensemble(&[0.0], &[s], 4);
            let costs = zero_costs(ens.grid(), 1);
            assert_relative_eq!(
                residual(&ens, &costs).unwrap(),
                s.abs(),
                max_relative = 1e-12
            );
        }
    }

    #[test]
    fn residual_of_the_oracle_trajectory_hits_the_discretization_floor() {
        let grid = TimeGrid::new(100).unwrap();
        let oracle = quadratic_oc_closed_form(1.0, 1.0, 1.0, grid);
        let mut states = Array3::zeros((1, 101, 1));
        for j in 0..=100 {
            states[[0, j, 0]] = oracle[j];
        }
        let ens = ParticleEnsemble::from_states(grid, states).unwrap();
        let costs = quadratic_costs(1.0, 1.0, grid);
        let r = residual(&ens, &costs).unwrap();
        assert!(r <= 0.05, "residual on oracle {r}");
    }

    #[test]
    fn objective_descends_under_full_batch_steps() {
        let grid = TimeGrid::new(8).unwrap();
        let mut ens = linear_ensemble(&[0.0, 1.0, -0.5], &[1.0, 0.0, 0.5], 8);
        let costs = FrozenCosts::freeze(
            &CouplingSpec::Zero,
            &CouplingSpec::QuadraticTerminal {
                lambda: 0.5,
                center: 0.0,
                coord: 0,
            },
            grid,
            1,
            &[],
            None,
        )
        .unwrap();
        let mut prev = objective(&ens, &costs).unwrap().total;
        for _ in 0..50 {
            ens = particle_step(&ens, &costs, 0.01, &[0, 1, 2]).unwrap();
            let now = objective(&ens, &costs).unwrap().total;
            assert!(
                now <= prev * (1.0 + 1e-12) + 1e-15,
                "objective rose from {prev} to {now}"
            );
            prev = now;
        }
    }

    #[test]
    fn single_particle_batches_touch_nothing_else() {
        let ens = linear_ensemble(&[0.0, 1.0, 2.0], &[1.0, 0.0, -2.0], 6);
        let costs = zero_costs(ens.grid(), 1);
        let next = particle_step(&ens, &costs, 0.02, &[1]).unwrap();
        for i in [0usize, 2] {
            for j in 0..=6 {
                assert_eq!(next.states()[[i, j, 0]], ens.states()[[i, j, 0]]);
            }
        }
        assert_ne!(next.states()[[1, 6, 0]], ens.states()[[1, 6, 0]]);
        assert_eq!(next.states()[[1, 0, 0]], ens.states()[[1, 0, 0]]);
    }

    #[test]
    fn particle_step_is_permutation_equivariant() {
        let ens = linear_ensemble(&[0.0, 1.0, -2.0], &[1.5, 0.0, 2.0], 5);
        let permuted = linear_ensemble(&[-2.0, 0.0, 1.0], &[2.0, 1.5, 0.0], 5);
        let costs = FrozenCosts::freeze(
            &CouplingSpec::Zero,
            &CouplingSpec::QuadraticTerminal {
                lambda: 1.0,
                center: -1.0,
                coord: 0,
            },
            ens.grid(),
            1,
            &[],
            None,
        )
        .unwrap();
        let stepped = particle_step(&ens, &costs, 0.03, &[0, 1, 2]).unwrap();
        let stepped_perm = particle_step(&permuted, &costs, 0.03, &[0, 1, 2]).unwrap();
        // particle 0 of `ens` is particle 1 of `permuted`, etc.
        for j in 0..=5 {
            assert_eq!(
                stepped.states()[[0, j, 0]],
                stepped_perm.states()[[1, j, 0]]
            );
            assert_eq!(
                stepped.states()[[1, j, 0]],
                stepped_perm.states()[[2, j, 0]]
            );
            assert_eq!(
                stepped.states()[[2, j, 0]],
                stepped_perm.states()[[0, j, 0]]
            );
        }
    }

    #[test]
    fn proximal_solve_rejects_zero_steps_and_zero_batch() {
        let ens = linear_ensemble(&[0.0], &[1.0], 4);
        let costs = zero_costs(ens.grid(), 1);
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        assert!(proximal_solve(&ens, &costs, 0, 0.01, 1, &mut rng).is_err());
        assert!(proximal_solve(&ens, &costs, 1, 0.01, 0, &mut rng).is_err());
    }

    #[test]
    fn proximal_solve_is_deterministic_under_a_fixed_seed() {
        let ens = linear_ensemble(&[0.0, 1.0, -1.0, 0.5], &[1.0, 0.0, 0.5, -0.5], 6);
        let costs = zero_costs(ens.grid(), 1);
        let mut rng_a = ChaCha8Rng::seed_from_u64(9);
        let mut rng_b = ChaCha8Rng::seed_from_u64(9);
        let a = proximal_solve(&ens, &costs, 25, 0.02, 2, &mut rng_a).unwrap();
        let b = proximal_solve(&ens, &costs, 25, 0.02, 2, &mut rng_b).unwrap();
        assert_eq!(a.states(), b.states());
    }

    #[test]
    fn full_batch_descent_shrinks_crossing_cost_every_step() {
        let mut ens = linear_ensemble(&[0.0, 1.0], &[1.0, 0.0], 8);
        let costs = zero_costs(ens.grid(), 1);
        let mut prev = ens.dynamic_cost();
        for _ in 0..10 {
            ens = particle_step(&ens, &costs, 0.01, &[0, 1]).unwrap();
            let now = ens.dynamic_cost();
            assert!(now < prev, "dynamic cost did not fall: {prev} -> {now}");
            prev = now;
        }
    }

    #[test]
    fn proximal_point_iterates_approach_the_stationary_point() {
        let grid = TimeGrid::new(20).unwrap();
        let costs = quadratic_costs(1.0, 1.0, grid);
        let ens = init_trajectories(array![[1.0]].view(), grid);
        let iters = proximal_point_solve(&ens, &costs, 0.1, 3, 2000, 0.008).unwrap();
        assert_eq!(iters.len(), 4);
        let oracle = {
            let vals = quadratic_oc_closed_form(1.0, 1.0, 1.0, grid);
            let mut states = Array3::zeros((1, 21, 1));
            for j in 0..=20 {
                states[[0, j, 0]] = vals[j];
            }
            ParticleEnsemble::from_states(grid, states).unwrap()
        };
        let errs: Vec<f64> = iters
            .iter()
            .map(|x| trajectory_error_sq(x, &oracle).unwrap())
            .collect();
        for w in errs.windows(2) {
            assert!(w[1] < w[0], "error did not contract: {errs:?}");
        }
    }

    #[test]
    fn proximal_point_solve_validates_its_knobs() {
        let ens = linear_ensemble(&[0.0], &[1.0], 4);
        let costs = zero_costs(ens.grid(), 1);
        assert!(proximal_point_solve(&ens, &costs, 0.0, 1, 1, 0.01).is_err());
        assert!(proximal_point_solve(&ens, &costs, 0.1, 1, 0, 0.01).is_err());
    }

    #[test]
    fn trajectory_error_matches_hand_computation() {
        let a = linear_ensemble(&[0.0], &[1.0], 2);
        let b = linear_ensemble(&[0.0], &[0.0], 2);
        // diffs at nodes 1, 2 are 0.5 and 1.0:
        // 0.5·(0.25 + 1.0) + 1.0 = 1.625
        assert_relative_eq!(
            trajectory_error_sq(&a, &b).unwrap(),
            1.625,
            max_relative = 1e-15
        );
    }
}
