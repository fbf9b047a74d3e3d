//! Orchestration of the full alternating scheme and its fictitious-play
//! counterpart.
//!
//! One run repeats, for `epochs` rounds:
//!
//! 1. **Resample** `particles` fresh initial states and push them through the
//!    current velocity network on the time grid, giving a trajectory
//!    ensemble.
//! 2. **Descend**: for each of `refresh_rounds` rounds, freeze the
//!    population-dependent costs against the ensemble's own node marginals
//!    and apply `particle_steps` Jacobi gradient updates of step `beta`.
//!    A KL terminal cost additionally maintains a logistic classifier that
//!    is (re)fitted on the schedule carried by its [`ClassifierConfig`].
//! 3. **Regress**: every `fm_every`-th epoch, fit the velocity network to
//!    the optimized trajectories with `fm_steps` Adam steps of flow-matching
//!    regression.
//!
//! [`fictitious_play_run`] replaces step 2's self-consistent refreshes with a
//! best response against a persistent weighted mixture of all past epoch
//! populations, averaged with weights `alpha_l` (default `1/l`).
//!
//! [`quadratic_oc_oracle`] supplies closed-form optimal trajectories for the
//! isotropic linear-quadratic control problem used to validate both drivers.
//!
//! Reproducibility: all randomness derives from `SolverConfig::seed` through
//! fixed per-epoch stream seeds, so a run is bit-for-bit repeatable on a
//! single thread. Epoch records keep real wall-clock timings in memory, but
//! [`RunReport::write_csv`] zeroes the timing column so repeated runs of the
//! same configuration produce byte-identical artifacts.

use std::io::Write;
use std::time::Instant;

use ndarray::{Array1, Array2, Array3, ArrayView2};
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};

use crate::coupling::{mixture_snapshot, ClassifierConfig, CouplingSpec, PopulationSnapshot};
use crate::ensemble::{
    sample_initial, sample_mean, sample_var_diag, InitialDistribution, ParticleEnsemble, TimeGrid,
};
use crate::flowmatch::{fm_train, integrate, IntegratorScheme};
use crate::nn::{Activation, AdamState, Mlp};
use crate::particleopt::{objective, particle_step, residual, FrozenCosts, ObjectiveBreakdown};
use crate::{Error, Result};

/// Full description of one solver run.
#[derive(Debug, Clone)]
pub struct SolverConfig {
    /// Outer epochs (resample / descend / regress cycles).
    pub epochs: usize,
    /// Cost-refresh rounds per epoch.
    pub refresh_rounds: usize,
    /// Particle gradient steps per refresh round.
    pub particle_steps: usize,
    /// Particles updated per gradient step (clamped to all of them).
    pub particle_batch: usize,
    /// Particle step size; must satisfy `beta < dt/2` for stability.
    pub beta: f64,
    /// Flow-matching Adam steps per regression phase.
    pub fm_steps: usize,
    /// Trajectories per flow-matching step (clamped to all of them).
    pub fm_batch: usize,
    /// Flow-matching learning rate.
    pub lr_v: f64,
    /// Ensemble size drawn each epoch.
    pub particles: usize,
    /// Time steps `m` of the uniform grid on `[0, 1]`.
    pub time_steps: usize,
    /// Resampling integrator for the velocity field.
    pub integrator: IntegratorScheme,
    /// Running interaction cost `F`.
    pub interaction: CouplingSpec,
    /// Terminal cost `G`.
    pub terminal: CouplingSpec,
    /// Initial distribution of the agents.
    pub initial: InitialDistribution,
    /// Hidden widths of the velocity network.
    pub velocity_hidden: Vec<usize>,
    /// Hidden activation of the velocity network.
    pub velocity_activation: Activation,
    /// Master seed; every random stream derives from it.
    pub seed: u64,
    /// Run the regression phase every `fm_every`-th epoch.
    pub fm_every: usize,
}

impl SolverConfig {
    /// Structural validation that does not need the state dimension.
    pub fn validate(&self) -> Result<()> {
        if self.particles == 0 {
            return Err(Error::Config("particle count must be positive".into()));
        }
        if self.time_steps == 0 {
            return Err(Error::Config("time grid needs at least one step".into()));
        }
        if self.fm_every == 0 {
            return Err(Error::Config(
                "fm_every must be at least 1 (regress every fm_every-th epoch)".into(),
            ));
        }
        if !self.beta.is_finite() || self.beta <= 0.0 {
            return Err(Error::Config(format!(
                "particle step size must be positive and finite, got {}",
                self.beta
            )));
        }
        if !self.lr_v.is_finite() || self.lr_v < 0.0 {
            return Err(Error::Config(format!(
                "flow-matching learning rate must be finite and non-negative, got {}",
                self.lr_v
            )));
        }
        let descending = self.refresh_rounds > 0 && self.particle_steps > 0;
        if descending {
            if self.time_steps < 2 {
                return Err(Error::Config(
                    "particle updates need at least two time steps (one interior node)".into(),
                ));
            }
            if self.particle_batch == 0 {
                return Err(Error::Config("particle batch must be positive".into()));
            }
        }
        if self.fm_steps > 0 && self.fm_batch == 0 {
            return Err(Error::Config("flow-matching batch must be positive".into()));
        }
        if matches!(self.interaction, CouplingSpec::KlTerminal { .. }) {
            return Err(Error::Config(
                "the KL coupling estimates a terminal density ratio; use it as the terminal cost"
                    .into(),
            ));
        }
        self.initial.validate()
    }
}

/// Metrics recorded after one epoch. The objective and residual are measured
/// on the updated ensemble against costs refrozen on its own node marginals
/// (or, under fictitious play, the updated mixture).
#[derive(Debug, Clone, Copy)]
pub struct EpochRecord {
    /// 1-based epoch index.
    pub epoch: usize,
    /// Discrete control objective of the updated ensemble.
    pub objective: ObjectiveBreakdown,
    /// First-order optimality residual of the updated ensemble.
    pub residual: f64,
    /// Final flow-matching loss (`None` on epochs that skip regression).
    pub fm_loss: Option<f64>,
    /// Final classifier loss (`None` without a KL terminal cost).
    pub clf_loss: Option<f64>,
    /// Wall-clock duration of the epoch. Kept in memory only; the CSV
    /// serialization zeroes this column for byte-stable artifacts.
    pub wall_ms: u64,
}

/// Per-epoch metric history plus terminal-marginal summary statistics.
#[derive(Debug, Clone, Default)]
pub struct RunReport {
    /// One record per completed epoch.
    pub records: Vec<EpochRecord>,
    /// Coordinate-wise mean of the final ensemble's terminal marginal.
    pub terminal_mean: Vec<f64>,
    /// Coordinate-wise variance of the final ensemble's terminal marginal.
    pub terminal_var: Vec<f64>,
    /// Fictitious play only: masses of the terminal-node mixture after the
    /// last epoch.
    pub mixture_masses: Option<Vec<f64>>,
    /// Set when an epoch failed after at least one epoch completed; the
    /// records up to the failure are kept.
    pub abort: Option<String>,
}

impl RunReport {
    /// Write the record table as CSV with the fixed column order
    /// `epoch,dynamic,interaction,terminal,total,residual,fm_loss,clf_loss,wall_ms`.
    ///
    /// Missing losses serialize as empty fields and `wall_ms` is written as
    /// `0` so identical runs produce identical bytes.
    pub fn write_csv<W: Write>(&self, mut out: W) -> Result<()> {
        writeln!(
            out,
            "epoch,dynamic,interaction,terminal,total,residual,fm_loss,clf_loss,wall_ms"
        )?;
        for r in &self.records {
            write!(
                out,
                "{},{},{},{},{},{}",
                r.epoch,
                r.objective.dynamic,
                r.objective.interaction,
                r.objective.terminal,
                r.objective.total,
                r.residual
            )?;
            match r.fm_loss {
                Some(v) => write!(out, ",{v}")?,
                None => write!(out, ",")?,
            }
            match r.clf_loss {
                Some(v) => write!(out, ",{v}")?,
                None => write!(out, ",")?,
            }
            writeln!(out, ",0")?;
        }
        Ok(())
    }
}

/// Everything a run produces: the trained velocity network, the metric
/// history, and the last optimized trajectory ensemble.
#[derive(Debug, Clone)]
pub struct RunOutput {
    pub velocity: Mlp,
    pub report: RunReport,
    pub ensemble: ParticleEnsemble,
}

/// Deterministic per-epoch stream seeds derived from the master seed via a
/// splitmix64 finalizer. Streams: 0 initial sampling, 1 particle batches,
/// 2 flow matching, 3 classifier; network initializers use epoch 0.
fn sub_seed(seed: u64, epoch: u64, stream: u64) -> u64 {
    let mut z = seed
        ^ epoch.wrapping_mul(0x9E37_79B9_7F4A_7C15)
        ^ stream.wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = z.wrapping_add(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// Without-replacement batch cursor matching `proximal_solve`'s policy: full
/// batch when `batch >= n` (consuming no randomness), otherwise shuffled
/// contiguous chunks, reshuffling whenever a full chunk no longer fits.
struct BatchIter {
    order: Vec<usize>,
    pos: usize,
    batch: usize,
    full: bool,
}

impl BatchIter {
    fn new(n: usize, batch: usize) -> Self {
        BatchIter {
            order: (0..n).collect(),
            pos: n,
            batch,
            full: batch >= n,
        }
    }

    fn next(&mut self, rng: &mut ChaCha8Rng) -> &[usize] {
        if self.full {
            return &self.order;
        }
        if self.pos + self.batch > self.order.len() {
            self.order.shuffle(rng);
            self.pos = 0;
        }
        let chunk = &self.order[self.pos..self.pos + self.batch];
        self.pos += self.batch;
        chunk
    }
}

/// Classifier state for a KL terminal cost, persistent across epochs.
struct KlState {
    net: Mlp,
    opt: AdamState,
    schedule: ClassifierConfig,
    target: Array2<f64>,
    trained: bool,
}

impl KlState {
    fn fit(
        &mut self,
        pop: &PopulationSnapshot,
        steps: usize,
        rng: &mut ChaCha8Rng,
    ) -> Result<Option<f64>> {
        crate::coupling::kl_classifier_steps(
            &mut self.net,
            &mut self.opt,
            self.target.view(),
            pop,
            steps,
            self.schedule.batch,
            rng,
        )
    }
}

fn build_kl_state(terminal: &CouplingSpec, dim: usize, seed: u64) -> Result<Option<KlState>> {
    match terminal {
        CouplingSpec::KlTerminal { target, classifier } => {
            let net = Mlp::new(
                classifier.widths(dim),
                classifier.activation,
                false,
                sub_seed(seed, 0, 11),
            )?;
            let opt = AdamState::new(&net, classifier.lr)?;
            Ok(Some(KlState {
                net,
                opt,
                schedule: classifier.clone(),
                target: target.clone(),
                trained: false,
            }))
        }
        _ => Ok(None),
    }
}

fn node_snapshots(ens: &ParticleEnsemble) -> Result<Vec<PopulationSnapshot>> {
    (1..=ens.grid().steps())
        .map(|j| PopulationSnapshot::new(j, ens.slice_at(j).to_owned()))
        .collect()
}

fn terminal_snapshot(ens: &ParticleEnsemble) -> Result<PopulationSnapshot> {
    let m = ens.grid().steps();
    PopulationSnapshot::new(m, ens.slice_at(m).to_owned())
}

enum PlayMode {
    SelfConsistent,
    Fictitious { alphas: Vec<f64> },
}

/// Run the full alternating scheme.
///
/// Epoch metrics are evaluated after the particle updates, against costs
/// refrozen on the updated ensemble's own marginals. A failure before the
/// first epoch completes is returned as an error; a later failure aborts the
/// run and returns the partial report with [`RunReport::abort`] set.
pub fn run(config: &SolverConfig) -> Result<RunOutput> {
    drive(config, PlayMode::SelfConsistent)
}

/// Run the fictitious-play variant: each epoch best-responds (with
/// `refresh_rounds * particle_steps` gradient steps) to costs frozen against
/// a persistent mixture of all previous epoch populations, then folds its own
/// optimized marginals into the mixture with weight `alphas[epoch-1]`.
///
/// `alphas` defaults to the uniform-averaging schedule `1/epoch`; explicit
/// weights must cover every epoch and lie in `(0, 1]`. With weight 1 the
/// mixture forgets the past, so for population-independent couplings the
/// trajectory of the scheme coincides with [`run`] exactly.
pub fn fictitious_play_run(config: &SolverConfig, alphas: Option<&[f64]>) -> Result<RunOutput> {
    let alphas = match alphas {
        Some(a) => {
            if a.len() != config.epochs {
                return Err(Error::Config(format!(
                    "need one mixture weight per epoch: got {} for {} epochs",
                    a.len(),
                    config.epochs
                )));
            }
            for (i, &alpha) in a.iter().enumerate() {
                if !alpha.is_finite() || !(alpha > 0.0 && alpha <= 1.0) {
                    return Err(Error::Config(format!(
                        "mixture weight {i} must lie in (0, 1], got {alpha}"
                    )));
                }
            }
            a.to_vec()
        }
        None => (1..=config.epochs).map(|l| 1.0 / l as f64).collect(),
    };
    drive(config, PlayMode::Fictitious { alphas })
}

fn drive(config: &SolverConfig, mode: PlayMode) -> Result<RunOutput> {
    config.validate()?;
    let grid = TimeGrid::new(config.time_steps)?;
    let m = grid.steps();
    let seed = config.seed;

    // Probe the state dimension, then finish validating the couplings.
    let probe = sample_initial(&config.initial, 1, sub_seed(seed, 1, 0))?;
    let d = probe.ncols();
    config.interaction.validate(d)?;
    config.terminal.validate(d)?;

    let mut widths = Vec::with_capacity(config.velocity_hidden.len() + 2);
    widths.push(d + 1);
    widths.extend_from_slice(&config.velocity_hidden);
    widths.push(d);
    let mut net = Mlp::new(
        widths,
        config.velocity_activation,
        true,
        sub_seed(seed, 0, 10),
    )?;
    let mut vopt = AdamState::new(&net, config.lr_v)?;
    let mut kl = build_kl_state(&config.terminal, d, seed)?;

    let mut report = RunReport::default();
    let mut last_ens: Option<ParticleEnsemble> = None;
    // Fictitious play: mixture snapshots for nodes t_1..t_m.
    let mut mixtures: Option<Vec<PopulationSnapshot>> = None;

    for epoch in 1..=config.epochs {
        let started = Instant::now();
        let outcome = run_epoch(
            config,
            &mode,
            grid,
            d,
            epoch,
            &mut net,
            &mut vopt,
            &mut kl,
            &mut mixtures,
        );
        match outcome {
            Ok((ens, mut record)) => {
                record.wall_ms = started.elapsed().as_millis() as u64;
                report.records.push(record);
                last_ens = Some(ens);
            }
            Err(err) => {
                if last_ens.is_none() {
                    return Err(err);
                }
                report.abort = Some(format!("epoch {epoch}: {err}"));
                break;
            }
        }
    }

    let ensemble = match last_ens {
        Some(ens) => ens,
        None => {
            // No epochs ran: report the untouched network's own flow.
            let x0 = sample_initial(&config.initial, config.particles, sub_seed(seed, 1, 0))?;
            integrate(&net, x0.view(), grid, config.integrator)?
        }
    };
    report.terminal_mean = sample_mean(ensemble.slice_at(m)).to_vec();
    report.terminal_var = sample_var_diag(ensemble.slice_at(m)).to_vec();
    if let Some(mix) = &mixtures {
        report.mixture_masses = mix.last().map(PopulationSnapshot::masses);
    }

    Ok(RunOutput {
        velocity: net,
        report,
        ensemble,
    })
}

#[allow(clippy::too_many_arguments)]
fn run_epoch(
    config: &SolverConfig,
    mode: &PlayMode,
    grid: TimeGrid,
    d: usize,
    epoch: usize,
    net: &mut Mlp,
    vopt: &mut AdamState,
    kl: &mut Option<KlState>,
    mixtures: &mut Option<Vec<PopulationSnapshot>>,
) -> Result<(ParticleEnsemble, EpochRecord)> {
    let seed = config.seed;
    let f = &config.interaction;
    let g = &config.terminal;
    let f_needs_pop = f.is_population_dependent();
    let descending = config.refresh_rounds > 0 && config.particle_steps > 0;

    let x0 = sample_initial(
        &config.initial,
        config.particles,
        sub_seed(seed, epoch as u64, 0),
    )?;
    let mut ens = integrate(net, x0.view(), grid, config.integrator)?;
    let mut prng = ChaCha8Rng::seed_from_u64(sub_seed(seed, epoch as u64, 1));
    let mut fm_rng = ChaCha8Rng::seed_from_u64(sub_seed(seed, epoch as u64, 2));
    let mut crng = ChaCha8Rng::seed_from_u64(sub_seed(seed, epoch as u64, 3));
    let mut clf_loss = None;

    if descending {
        let mut batches = BatchIter::new(ens.n(), config.particle_batch);
        match mode {
            PlayMode::SelfConsistent => {
                for _round in 0..config.refresh_rounds {
                    let snaps = if f_needs_pop {
                        node_snapshots(&ens)?
                    } else {
                        Vec::new()
                    };
                    if let Some(state) = kl.as_mut() {
                        let steps = if state.trained {
                            state.schedule.refresh_steps
                        } else {
                            state.schedule.init_steps
                        };
                        let pop = terminal_snapshot(&ens)?;
                        if let Some(loss) = state.fit(&pop, steps, &mut crng)? {
                            clf_loss = Some(loss);
                        }
                        state.trained = true;
                    }
                    let mut costs =
                        FrozenCosts::freeze(f, g, grid, d, &snaps, kl.as_ref().map(|s| &s.net))?;
                    for step in 0..config.particle_steps {
                        if step > 0 {
                            if let Some(state) = kl.as_mut() {
                                let every = state.schedule.refresh_every;
                                if every > 0
                                    && step % every == 0
                                    && state.schedule.refresh_steps > 0
                                {
                                    let pop = terminal_snapshot(&ens)?;
                                    if let Some(loss) =
                                        state.fit(&pop, state.schedule.refresh_steps, &mut crng)?
                                    {
                                        clf_loss = Some(loss);
                                    }
                                    costs = FrozenCosts::freeze(
                                        f,
                                        g,
                                        grid,
                                        d,
                                        &snaps,
                                        Some(&state.net),
                                    )?;
                                }
                            }
                        }
                        let idx = batches.next(&mut prng);
                        ens = particle_step(&ens, &costs, config.beta, idx)?;
                    }
                }
            }
            PlayMode::Fictitious { .. } => {
                if mixtures.is_none() {
                    *mixtures = Some(node_snapshots(&ens)?);
                }
                let mix = mixtures.as_ref().expect("mixture initialized above");
                if let Some(state) = kl.as_mut() {
                    let steps = if state.trained {
                        state.schedule.refresh_steps
                    } else {
                        state.schedule.init_steps
                    };
                    let pop = mix.last().expect("time grid has at least one node");
                    if let Some(loss) = state.fit(pop, steps, &mut crng)? {
                        clf_loss = Some(loss);
                    }
                    state.trained = true;
                }
                let mut costs =
                    FrozenCosts::freeze(f, g, grid, d, mix, kl.as_ref().map(|s| &s.net))?;
                let total_steps = config.refresh_rounds * config.particle_steps;
                for step in 0..total_steps {
                    if step > 0 {
                        if let Some(state) = kl.as_mut() {
                            let every = state.schedule.refresh_every;
                            if every > 0 && step % every == 0 && state.schedule.refresh_steps > 0 {
                                let pop = mix.last().expect("time grid has at least one node");
                                if let Some(loss) =
                                    state.fit(pop, state.schedule.refresh_steps, &mut crng)?
                                {
                                    clf_loss = Some(loss);
                                }
                                costs = FrozenCosts::freeze(f, g, grid, d, mix, Some(&state.net))?;
                            }
                        }
                    }
                    let idx = batches.next(&mut prng);
                    ens = particle_step(&ens, &costs, config.beta, idx)?;
                }
            }
        }
    }

    // Fold the optimized marginals into the fictitious-play mixture.
    if let PlayMode::Fictitious { alphas } = mode {
        let alpha = alphas[epoch - 1];
        let fresh = node_snapshots(&ens)?;
        let updated = match mixtures.take() {
            Some(old) => old
                .iter()
                .zip(&fresh)
                .map(|(o, n)| mixture_snapshot(o, n, alpha))
                .collect::<Result<Vec<_>>>()?,
            None => fresh, // no descent phase ran this epoch
        };
        *mixtures = Some(updated);
    }

    // Metrics against the population the updated ensemble actually faces.
    let (obj, res) = match mode {
        PlayMode::SelfConsistent => {
            let snaps = if f_needs_pop {
                node_snapshots(&ens)?
            } else {
                Vec::new()
            };
            let costs = FrozenCosts::freeze(f, g, grid, d, &snaps, kl.as_ref().map(|s| &s.net))?;
            (objective(&ens, &costs)?, residual(&ens, &costs)?)
        }
        PlayMode::Fictitious { .. } => {
            let mix = mixtures.as_ref().expect("mixture initialized above");
            let costs = FrozenCosts::freeze(f, g, grid, d, mix, kl.as_ref().map(|s| &s.net))?;
            (objective(&ens, &costs)?, residual(&ens, &costs)?)
        }
    };

    let mut fm_loss = None;
    if config.fm_steps > 0 && epoch.is_multiple_of(config.fm_every) {
        let losses = fm_train(
            net,
            vopt,
            &ens,
            config.fm_steps,
            config.fm_batch,
            &mut fm_rng,
        )?;
        fm_loss = losses.last().copied();
    }

    Ok((
        ens,
        EpochRecord {
            epoch,
            objective: obj,
            residual: res,
            fm_loss,
            clf_loss,
            wall_ms: 0,
        },
    ))
}

/// Reference experiment: a planar crowd starting near `(0, 1)` under an
/// exponential interaction kernel acting along the second coordinate and a
/// quadratic terminal anchor at `x_2 = -1`. The kernel is non-symmetric in
/// `(x, y)`, so the game has no potential structure.
pub fn nonpotential_kernel_config(seed: u64) -> SolverConfig {
    SolverConfig {
        epochs: 100,
        refresh_rounds: 1,
        particle_steps: 100,
        particle_batch: 2000,
        beta: 0.01,
        fm_steps: 100,
        fm_batch: 2000,
        lr_v: 0.01,
        particles: 2000,
        time_steps: 20,
        integrator: IntegratorScheme::Euler,
        interaction: CouplingSpec::KernelInteraction {
            lambda: 10.0,
            a: Array1::from(vec![0.0, 1.0]),
        },
        terminal: CouplingSpec::QuadraticTerminal {
            lambda: 1.0,
            center: -1.0,
            coord: 1,
        },
        initial: InitialDistribution::Gaussian {
            mean: Array1::from(vec![0.0, 1.0]),
            cov_diag: Array1::from(vec![0.02, 0.1]),
        },
        velocity_hidden: vec![4, 8, 16],
        velocity_activation: Activation::Relu,
        seed,
        fm_every: 1,
    }
}

/// Reference experiment: transport a planar checkerboard distribution onto a
/// standard normal, enforced purely through a KL terminal cost whose density
/// ratio is estimated by a logistic classifier. The classifier target is a
/// fixed set of 8192 standard-normal draws generated from an internal seed,
/// so the experiment definition does not change with the run seed.
pub fn checkerboard_to_gaussian_config(seed: u64) -> SolverConfig {
    let mut rng = ChaCha8Rng::seed_from_u64(424242);
    let mut target = Array2::zeros((8192, 2));
    for v in target.iter_mut() {
        *v = StandardNormal.sample(&mut rng);
    }
    SolverConfig {
        epochs: 20,
        refresh_rounds: 1,
        particle_steps: 1000,
        particle_batch: 2048,
        beta: 0.001,
        fm_steps: 1000,
        fm_batch: 2048,
        lr_v: 0.001,
        particles: 16384,
        time_steps: 10,
        integrator: IntegratorScheme::Rk4,
        interaction: CouplingSpec::Zero,
        terminal: CouplingSpec::KlTerminal {
            target,
            classifier: ClassifierConfig {
                hidden: vec![32, 32],
                activation: Activation::Relu,
                lr: 1e-3,
                batch: 2048,
                init_steps: 1000,
                refresh_steps: 20,
                refresh_every: 10,
            },
        },
        initial: InitialDistribution::Checkerboard {
            cells: 4,
            extent: 4.0,
        },
        velocity_hidden: vec![32, 32],
        velocity_activation: Activation::Relu,
        seed,
        fm_every: 1,
    }
}

/// Reference experiment: the scalar linear-quadratic control problem
/// (`F = G = ½x²`) whose exact solution [`quadratic_oc_oracle`] provides.
/// Both couplings ignore the population, making runs cheap and exactly
/// comparable against the closed form.
pub fn quadratic_oc_config(seed: u64) -> SolverConfig {
    SolverConfig {
        epochs: 5,
        refresh_rounds: 1,
        particle_steps: 200,
        particle_batch: 256,
        beta: 0.008,
        fm_steps: 100,
        fm_batch: 256,
        lr_v: 0.01,
        particles: 256,
        time_steps: 50,
        integrator: IntegratorScheme::Euler,
        interaction: CouplingSpec::QuadraticTerminal {
            lambda: 0.5,
            center: 0.0,
            coord: 0,
        },
        terminal: CouplingSpec::QuadraticTerminal {
            lambda: 0.5,
            center: 0.0,
            coord: 0,
        },
        initial: InitialDistribution::Gaussian {
            mean: Array1::from(vec![1.0]),
            cov_diag: Array1::from(vec![0.01]),
        },
        velocity_hidden: vec![16, 16],
        velocity_activation: Activation::Relu,
        seed,
        fm_every: 1,
    }
}

/// Closed-form optimal trajectories for the isotropic linear-quadratic
/// control problem: minimize `∫ ½‖ẋ‖² + ½λ‖x‖² dt + ½g‖x(1)‖²` from `x(0) =
/// x0`. Each coordinate follows
/// `x(t) = x0 (cosh(√λ t) − κ sinh(√λ t))` with
/// `κ = (√λ sinh √λ + g cosh √λ) / (√λ cosh √λ + g sinh √λ)`,
/// degenerating to `x(t) = x0 (1 − g t / (1 + g))` at `λ = 0`.
pub fn quadratic_oc_oracle(
    lambda: f64,
    g: f64,
    x0: ArrayView2<'_, f64>,
    grid: TimeGrid,
) -> Result<ParticleEnsemble> {
    if !lambda.is_finite() || lambda < 0.0 {
        return Err(Error::Config(format!(
            "state cost weight must be finite and non-negative, got {lambda}"
        )));
    }
    if !g.is_finite() || g < 0.0 {
        return Err(Error::Config(format!(
            "terminal cost weight must be finite and non-negative, got {g}"
        )));
    }
    let (n, d) = (x0.nrows(), x0.ncols());
    let m = grid.steps();
    // Shape factor s(t) with s(0) = 1, shared by every particle and
    // coordinate since the problem is linear.
    let mut shape = Vec::with_capacity(m + 1);
    if lambda == 0.0 {
        let slope = g / (1.0 + g);
        for j in 0..=m {
            shape.push(1.0 - slope * grid.node(j));
        }
    } else {
        let s = lambda.sqrt();
        let kappa = (s * s.sinh() + g * s.cosh()) / (s * s.cosh() + g * s.sinh());
        for j in 0..=m {
            let t = grid.node(j);
            shape.push((s * t).cosh() - kappa * (s * t).sinh());
        }
    }
    let mut states = Array3::zeros((n, m + 1, d));
    for i in 0..n {
        for (j, &sj) in shape.iter().enumerate() {
            for k in 0..d {
                states[[i, j, k]] = x0[[i, k]] * sj;
            }
        }
    }
    ParticleEnsemble::from_states(grid, states)
}
