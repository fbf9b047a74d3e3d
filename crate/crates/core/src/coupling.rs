//! Empirical estimators for the interaction cost F[ρ_t](x), the terminal
//! cost G[ρ_1](x), and their spatial gradients.
//!
//! Population measures enter only through weighted sample sets
//! ([`PopulationSnapshot`]); every coupling evaluates costs as weighted
//! empirical means over those samples. Three families are provided:
//!
//! * an exponential interaction kernel `F[ρ](x) = λ ∫ exp(aᵀ(x−y)) dρ(y)`,
//!   asymmetric in (x, y) and therefore non-potential;
//! * a population-free quadratic terminal cost `λ (x_k − c)²`;
//! * a Kullback–Leibler terminal cost against a fixed target sample set,
//!   estimated by the logit of a binary classifier (the optimal classifier's
//!   logit is the log density ratio `log dρ_1/dν`).
//!
//! Fictitious-play mixtures `(1−α)ρ + α ρ̂` are represented exactly by
//! carrying both sample sets with a mass ledger, so mixture cost evaluation
//! is affine in α to machine precision.

use ndarray::{Array1, Array2, ArrayView1, ArrayView2, Axis};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::nn::{sigmoid, Activation, AdamState, Mlp};
use crate::{Error, Result};

/// Exponents of the interaction kernel above this value abort the run
/// instead of silently saturating: a diverging ensemble must fail loudly.
pub const KERNEL_EXPONENT_GUARD: f64 = 50.0;

/// Architecture and training schedule of the KL terminal-cost classifier.
#[derive(Debug, Clone, PartialEq)]
pub struct ClassifierConfig {
    /// Hidden-layer widths (empty for a purely linear logit).
    pub hidden: Vec<usize>,
    pub activation: Activation,
    pub lr: f64,
    /// Total batch per step, split half population / half target.
    pub batch: usize,
    /// Training steps when the classifier is first fitted each epoch.
    pub init_steps: usize,
    /// Warm-start steps at each intermediate refresh.
    pub refresh_steps: usize,
    /// Particle steps between intermediate refreshes (0 = never refresh).
    pub refresh_every: usize,
}

impl Default for ClassifierConfig {
    fn default() -> Self {
        ClassifierConfig {
            hidden: vec![32, 32],
            activation: Activation::Relu,
            lr: 1e-3,
            batch: 2048,
            init_steps: 1000,
            refresh_steps: 20,
            refresh_every: 10,
        }
    }
}

impl ClassifierConfig {
    fn validate(&self) -> Result<()> {
        if self.batch < 2 {
            return Err(Error::Config(
                "classifier batch must be at least 2 (one sample per class)".into(),
            ));
        }
        if !self.lr.is_finite() || self.lr < 0.0 {
            return Err(Error::Config(format!(
                "classifier learning rate must be finite and >= 0, got {}",
                self.lr
            )));
        }
        if self.hidden.contains(&0) {
            return Err(Error::Config(
                "classifier hidden widths must be positive".into(),
            ));
        }
        Ok(())
    }

    /// Layer widths of the logit network for inputs of dimension `dim`.
    pub fn widths(&self, dim: usize) -> Vec<usize> {
        let mut w = Vec::with_capacity(self.hidden.len() + 2);
        w.push(dim);
        w.extend_from_slice(&self.hidden);
        w.push(1);
        w
    }
}

/// The coupling families a game can use for its interaction or terminal
/// cost.
#[derive(Debug, Clone, PartialEq)]
pub enum CouplingSpec {
    /// F ≡ 0 or G ≡ 0.
    Zero,
    /// `F[ρ](x) = lambda · ∫ exp(aᵀ(x − y)) dρ(y)`.
    KernelInteraction { lambda: f64, a: Array1<f64> },
    /// `G(x) = lambda · (x_coord − center)²`, independent of the population.
    QuadraticTerminal {
        lambda: f64,
        center: f64,
        coord: usize,
    },
    /// `G[ρ](x) ≈ log(dρ/dν)(x)` via a classifier logit against fixed
    /// target samples from ν.
    KlTerminal {
        target: Array2<f64>,
        classifier: ClassifierConfig,
    },
}

impl CouplingSpec {
    /// Check internal consistency against the state dimension `dim`.
    pub fn validate(&self, dim: usize) -> Result<()> {
        match self {
            CouplingSpec::Zero => Ok(()),
            CouplingSpec::KernelInteraction { lambda, a } => {
                if !lambda.is_finite() || *lambda < 0.0 {
                    return Err(Error::Config(format!(
                        "kernel strength must be finite and >= 0, got {lambda}"
                    )));
                }
                if a.len() != dim {
                    return Err(Error::Config(format!(
                        "kernel direction has dimension {}, state has {dim}",
                        a.len()
                    )));
                }
                if a.iter().any(|v| !v.is_finite()) {
                    return Err(Error::Config("kernel direction must be finite".into()));
                }
                if a.iter().all(|&v| v == 0.0) {
                    return Err(Error::Config(
                        "kernel direction must be nonzero (a = 0 degenerates to a constant cost)"
                            .into(),
                    ));
                }
                Ok(())
            }
            CouplingSpec::QuadraticTerminal {
                lambda,
                center,
                coord,
            } => {
                if !lambda.is_finite() || *lambda < 0.0 {
                    return Err(Error::Config(format!(
                        "quadratic strength must be finite and >= 0, got {lambda}"
                    )));
                }
                if !center.is_finite() {
                    return Err(Error::Config("quadratic center must be finite".into()));
                }
                if *coord >= dim {
                    return Err(Error::Config(format!(
                        "quadratic coordinate {coord} out of range for dimension {dim}"
                    )));
                }
                Ok(())
            }
            CouplingSpec::KlTerminal { target, classifier } => {
                if target.nrows() == 0 {
                    return Err(Error::Config("KL target sample set is empty".into()));
                }
                if target.ncols() != dim {
                    return Err(Error::Config(format!(
                        "KL target samples have dimension {}, state has {dim}",
                        target.ncols()
                    )));
                }
                if target.iter().any(|v| !v.is_finite()) {
                    return Err(Error::Config("KL target samples must be finite".into()));
                }
                classifier.validate()
            }
        }
    }

    /// Whether evaluating this coupling requires a population snapshot.
    pub fn is_population_dependent(&self) -> bool {
        matches!(
            self,
            CouplingSpec::KernelInteraction { .. } | CouplingSpec::KlTerminal { .. }
        )
    }

    /// Freeze the coupling against a population, yielding a pure cost field.
    ///
    /// `snapshot` is required for [`CouplingSpec::KernelInteraction`] and
    /// `classifier` for [`CouplingSpec::KlTerminal`]; a missing dependency is
    /// a configuration error.
    pub fn frozen(
        &self,
        dim: usize,
        snapshot: Option<&PopulationSnapshot>,
        classifier: Option<&Mlp>,
    ) -> Result<CostEvaluator> {
        self.validate(dim)?;
        match self {
            CouplingSpec::Zero => Ok(CostEvaluator::Zero { dim }),
            CouplingSpec::KernelInteraction { lambda, a } => {
                let pop = snapshot.ok_or_else(|| {
                    Error::Config("kernel interaction needs a population snapshot".into())
                })?;
                Ok(CostEvaluator::Kernel(KernelEvaluator::new(
                    *lambda,
                    a.view(),
                    pop,
                )?))
            }
            CouplingSpec::QuadraticTerminal {
                lambda,
                center,
                coord,
            } => Ok(CostEvaluator::Quadratic {
                lambda: *lambda,
                center: *center,
                coord: *coord,
            }),
            CouplingSpec::KlTerminal { .. } => {
                let net = classifier.ok_or_else(|| {
                    Error::Config("KL terminal cost needs a trained classifier".into())
                })?;
                if net.input_dim() != dim || net.output_dim() != 1 {
                    return Err(Error::Config(format!(
                        "classifier maps {} -> {}, expected {dim} -> 1",
                        net.input_dim(),
                        net.output_dim()
                    )));
                }
                Ok(CostEvaluator::Classifier(net.clone()))
            }
        }
    }
}

/// One weighted component of an empirical population measure.
#[derive(Debug, Clone)]
pub struct SnapshotGroup {
    mass: f64,
    samples: Array2<f64>,
}

impl SnapshotGroup {
    pub fn mass(&self) -> f64 {
        self.mass
    }

    pub fn samples(&self) -> ArrayView2<'_, f64> {
        self.samples.view()
    }
}

/// Empirical distribution of particle positions at one time node, stored as
/// weighted sample groups so fictitious-play mixtures stay exact.
#[derive(Debug, Clone)]
pub struct PopulationSnapshot {
    time_index: usize,
    groups: Vec<SnapshotGroup>,
}

impl PopulationSnapshot {
    /// A single-group snapshot of mass 1 (the plain empirical measure).
    pub fn new(time_index: usize, samples: Array2<f64>) -> Result<Self> {
        if samples.nrows() == 0 {
            return Err(Error::Config(
                "population snapshot needs at least one sample".into(),
            ));
        }
        if samples.iter().any(|v| !v.is_finite()) {
            return Err(Error::Config(
                "population snapshot samples must be finite".into(),
            ));
        }
        Ok(PopulationSnapshot {
            time_index,
            groups: vec![SnapshotGroup { mass: 1.0, samples }],
        })
    }

    pub fn time_index(&self) -> usize {
        self.time_index
    }

    pub fn dim(&self) -> usize {
        self.groups[0].samples.ncols()
    }

    pub fn groups(&self) -> &[SnapshotGroup] {
        &self.groups
    }

    /// The mixture-weight ledger, one mass per group (sums to 1).
    pub fn masses(&self) -> Vec<f64> {
        self.groups.iter().map(|g| g.mass).collect()
    }

    pub fn sample_count(&self) -> usize {
        self.groups.iter().map(|g| g.samples.nrows()).sum()
    }

    /// Weighted mean of a scalar function: Σ_g mass_g · mean over group g.
    pub fn weighted_mean(&self, mut f: impl FnMut(ArrayView1<'_, f64>) -> f64) -> f64 {
        let mut total = 0.0;
        for g in &self.groups {
            let mut acc = 0.0;
            for row in g.samples.rows() {
                acc += f(row);
            }
            total += g.mass * (acc / g.samples.nrows() as f64);
        }
        total
    }

    /// Draw `count` samples with replacement, groups weighted by mass.
    pub fn draw(&self, count: usize, rng: &mut impl Rng) -> Array2<f64> {
        let mut out = Array2::zeros((count, self.dim()));
        for i in 0..count {
            let mut u: f64 = rng.random();
            let mut chosen = self.groups.len() - 1;
            for (gi, g) in self.groups.iter().enumerate() {
                if u < g.mass {
                    chosen = gi;
                    break;
                }
                u -= g.mass;
            }
            let g = &self.groups[chosen];
            let row = rng.random_range(0..g.samples.nrows());
            out.row_mut(i).assign(&g.samples.row(row));
        }
        out
    }
}

/// Fictitious-play update `(1−α)·old + α·new` as an exact weighted mixture.
///
/// Groups whose mass scales to exactly zero are dropped, so `alpha = 0`
/// returns `old` and `alpha = 1` returns `new` unchanged.
pub fn mixture_snapshot(
    old: &PopulationSnapshot,
    new: &PopulationSnapshot,
    alpha: f64,
) -> Result<PopulationSnapshot> {
    if !alpha.is_finite() || !(0.0..=1.0).contains(&alpha) {
        return Err(Error::Config(format!(
            "mixture weight must lie in [0, 1], got {alpha}"
        )));
    }
    if old.dim() != new.dim() {
        return Err(Error::Config(format!(
            "mixture components have dimensions {} and {}",
            old.dim(),
            new.dim()
        )));
    }
    let mut groups = Vec::new();
    for g in &old.groups {
        let mass = (1.0 - alpha) * g.mass;
        if mass != 0.0 {
            groups.push(SnapshotGroup {
                mass,
                samples: g.samples.clone(),
            });
        }
    }
    for g in &new.groups {
        let mass = alpha * g.mass;
        if mass != 0.0 {
            groups.push(SnapshotGroup {
                mass,
                samples: g.samples.clone(),
            });
        }
    }
    Ok(PopulationSnapshot {
        time_index: new.time_index,
        groups,
    })
}

/// Interaction kernel frozen against one snapshot.
///
/// Per group the factorization `mean_y exp(aᵀ(x−y)) = exp(aᵀx + L_g)` with
/// `L_g = log mean_y exp(−aᵀy)` (computed by a stable log-mean-exp) reduces
/// every query to one exponential per group, and makes the gradient identity
/// `∇F = a · F` hold bitwise.
#[derive(Debug, Clone)]
pub struct KernelEvaluator {
    lambda: f64,
    a: Array1<f64>,
    /// Per group: (mass, log-mean-exp of −aᵀy, max of −aᵀy).
    groups: Vec<(f64, f64, f64)>,
}

impl KernelEvaluator {
    pub fn new(lambda: f64, a: ArrayView1<'_, f64>, pop: &PopulationSnapshot) -> Result<Self> {
        let spec = CouplingSpec::KernelInteraction {
            lambda,
            a: a.to_owned(),
        };
        spec.validate(pop.dim())?;
        let mut groups = Vec::with_capacity(pop.groups().len());
        for g in pop.groups() {
            let scores = g.samples().dot(&a);
            let max_neg = scores.iter().fold(f64::NEG_INFINITY, |m, &s| m.max(-s));
            let mean_shifted =
                scores.iter().map(|&s| (-s - max_neg).exp()).sum::<f64>() / scores.len() as f64;
            groups.push((g.mass(), max_neg + mean_shifted.ln(), max_neg));
        }
        Ok(KernelEvaluator {
            lambda,
            a: a.to_owned(),
            groups,
        })
    }

    /// Largest pairwise exponent aᵀ(x−y) this query would form.
    fn peak_exponent(&self, ax: f64) -> f64 {
        let max_neg = self
            .groups
            .iter()
            .fold(f64::NEG_INFINITY, |m, &(_, _, mn)| m.max(mn));
        ax + max_neg
    }

    fn value_of_score(&self, ax: f64) -> Result<f64> {
        let peak = self.peak_exponent(ax);
        if peak > KERNEL_EXPONENT_GUARD {
            return Err(Error::KernelOverflow {
                exponent: peak,
                limit: KERNEL_EXPONENT_GUARD,
            });
        }
        let mut total = 0.0;
        for &(mass, lme, _) in &self.groups {
            total += mass * (self.lambda * (ax + lme).exp());
        }
        Ok(total)
    }

    pub fn value(&self, x: ArrayView1<'_, f64>) -> Result<f64> {
        self.value_of_score(x.dot(&self.a))
    }

    pub fn gradient(&self, x: ArrayView1<'_, f64>) -> Result<Array1<f64>> {
        let v = self.value(x)?;
        Ok(self.a.mapv(|ak| ak * v))
    }

    pub fn value_batch(&self, xs: ArrayView2<'_, f64>) -> Result<Array1<f64>> {
        let scores = xs.dot(&self.a);
        let mut out = Array1::zeros(xs.nrows());
        for (i, &ax) in scores.iter().enumerate() {
            out[i] = self.value_of_score(ax)?;
        }
        Ok(out)
    }

    pub fn grad_batch(&self, xs: ArrayView2<'_, f64>) -> Result<Array2<f64>> {
        let vals = self.value_batch(xs)?;
        let mut out = Array2::zeros((xs.nrows(), self.a.len()));
        for (i, &v) in vals.iter().enumerate() {
            for (k, &ak) in self.a.iter().enumerate() {
                out[[i, k]] = ak * v;
            }
        }
        Ok(out)
    }
}

/// `F[ρ](x) = lambda · weighted-mean_y exp(aᵀ(x−y))`.
pub fn kernel_f(
    lambda: f64,
    a: ArrayView1<'_, f64>,
    pop: &PopulationSnapshot,
    x: ArrayView1<'_, f64>,
) -> Result<f64> {
    KernelEvaluator::new(lambda, a, pop)?.value(x)
}

/// `∇F[ρ](x) = a · F[ρ](x)` (exponential-kernel structural identity).
pub fn kernel_grad_f(
    lambda: f64,
    a: ArrayView1<'_, f64>,
    pop: &PopulationSnapshot,
    x: ArrayView1<'_, f64>,
) -> Result<Array1<f64>> {
    KernelEvaluator::new(lambda, a, pop)?.gradient(x)
}

/// `G(x) = lambda · (x_coord − center)²`.
pub fn quadratic_g(lambda: f64, center: f64, coord: usize, x: ArrayView1<'_, f64>) -> f64 {
    let d = x[coord] - center;
    lambda * d * d
}

/// Gradient of [`quadratic_g`]: `2·lambda·(x_coord − center)` on `coord`.
pub fn quadratic_grad_g(
    lambda: f64,
    center: f64,
    coord: usize,
    x: ArrayView1<'_, f64>,
) -> Array1<f64> {
    let mut g = Array1::zeros(x.len());
    g[coord] = 2.0 * lambda * (x[coord] - center);
    g
}

/// One binary-logistic training step: labels 1 for population rows, 0 for
/// target rows. Returns the batch loss.
fn bce_step(
    net: &mut Mlp,
    opt: &mut AdamState,
    pop_batch: ArrayView2<'_, f64>,
    target_batch: ArrayView2<'_, f64>,
) -> Result<f64> {
    let total = pop_batch.nrows() + target_batch.nrows();
    let dim = pop_batch.ncols();
    let mut x = Array2::zeros((total, dim));
    x.slice_mut(ndarray::s![..pop_batch.nrows(), ..])
        .assign(&pop_batch);
    x.slice_mut(ndarray::s![pop_batch.nrows().., ..])
        .assign(&target_batch);
    let (logits, trace) = net.forward_traced(x.view())?;
    let mut loss = 0.0;
    let mut upstream = Array2::zeros((total, 1));
    for i in 0..total {
        let label = if i < pop_batch.nrows() { 1.0 } else { 0.0 };
        let p = sigmoid(logits[[i, 0]]);
        loss -= label * (p + 1e-12).ln() + (1.0 - label) * (1.0 - p + 1e-12).ln();
        upstream[[i, 0]] = (p - label) / total as f64;
    }
    loss /= total as f64;
    let (grads, _) = net.backward(&trace, upstream.view());
    opt.adam_step(net, &grads)?;
    Ok(loss)
}

/// Continue training an existing classifier for `steps` batches drawn from
/// the population (label 1) and target samples (label 0). Returns the last
/// batch loss (`NaN`-free by construction; 0 steps returns `None`).
pub fn kl_classifier_steps(
    net: &mut Mlp,
    opt: &mut AdamState,
    target: ArrayView2<'_, f64>,
    pop: &PopulationSnapshot,
    steps: usize,
    batch: usize,
    rng: &mut ChaCha8Rng,
) -> Result<Option<f64>> {
    if batch < 2 {
        return Err(Error::Config("classifier batch must be at least 2".into()));
    }
    if target.nrows() == 0 {
        return Err(Error::Config("KL target sample set is empty".into()));
    }
    let half = batch / 2;
    let mut last = None;
    for step in 1..=steps {
        let pop_batch = pop.draw(half, rng);
        let mut tgt_batch = Array2::zeros((half, target.ncols()));
        for i in 0..half {
            let row = rng.random_range(0..target.nrows());
            tgt_batch.row_mut(i).assign(&target.row(row));
        }
        let loss = bce_step(net, opt, pop_batch.view(), tgt_batch.view())?;
        if !loss.is_finite() {
            return Err(Error::Training {
                step,
                reason: format!("classifier loss became {loss}"),
            });
        }
        last = Some(loss);
    }
    Ok(last)
}

/// Train a fresh classifier distinguishing population samples (label 1)
/// from target samples (label 0); its logit estimates `log(dρ/dν)`.
pub fn kl_train_classifier(
    config: &ClassifierConfig,
    target: ArrayView2<'_, f64>,
    pop: &PopulationSnapshot,
    steps: usize,
    seed: u64,
) -> Result<Mlp> {
    config.validate()?;
    let dim = pop.dim();
    if target.ncols() != dim {
        return Err(Error::Config(format!(
            "KL target samples have dimension {}, population has {dim}",
            target.ncols()
        )));
    }
    let mut net = Mlp::new(config.widths(dim), config.activation, false, seed)?;
    let mut opt = AdamState::new(&net, config.lr)?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0x9e37_79b9_7f4a_7c15);
    kl_classifier_steps(
        &mut net,
        &mut opt,
        target,
        pop,
        steps,
        config.batch,
        &mut rng,
    )?;
    Ok(net)
}

/// Classifier logit at one point (the terminal-cost estimate G(x)).
pub fn kl_logit(net: &Mlp, x: ArrayView1<'_, f64>) -> Result<f64> {
    Ok(net.forward(x)?[0])
}

/// Input gradient of the classifier logit at one point.
pub fn kl_grad_g(net: &Mlp, x: ArrayView1<'_, f64>) -> Result<Array1<f64>> {
    let g = net.input_grad_batch(x.insert_axis(Axis(0)))?;
    Ok(g.index_axis_move(Axis(0), 0))
}

/// Input gradients of the classifier logit for a batch of points.
pub fn kl_grad_g_batch(net: &Mlp, xs: ArrayView2<'_, f64>) -> Result<Array2<f64>> {
    net.input_grad_batch(xs)
}

/// A coupling frozen against its population: a pure field `x ↦ (value,
/// gradient)` that particle updates and residuals can query repeatedly.
#[derive(Debug, Clone)]
pub enum CostEvaluator {
    Zero {
        dim: usize,
    },
    Kernel(KernelEvaluator),
    Quadratic {
        lambda: f64,
        center: f64,
        coord: usize,
    },
    Classifier(Mlp),
}

impl CostEvaluator {
    pub fn value_batch(&self, xs: ArrayView2<'_, f64>) -> Result<Array1<f64>> {
        match self {
            CostEvaluator::Zero { .. } => Ok(Array1::zeros(xs.nrows())),
            CostEvaluator::Kernel(k) => k.value_batch(xs),
            CostEvaluator::Quadratic {
                lambda,
                center,
                coord,
            } => Ok(xs
                .rows()
                .into_iter()
                .map(|row| quadratic_g(*lambda, *center, *coord, row))
                .collect()),
            CostEvaluator::Classifier(net) => {
                Ok(net.forward_batch(xs)?.index_axis_move(Axis(1), 0))
            }
        }
    }

    pub fn grad_batch(&self, xs: ArrayView2<'_, f64>) -> Result<Array2<f64>> {
        match self {
            CostEvaluator::Zero { dim } => {
                debug_assert_eq!(*dim, xs.ncols());
                Ok(Array2::zeros((xs.nrows(), xs.ncols())))
            }
            CostEvaluator::Kernel(k) => k.grad_batch(xs),
            CostEvaluator::Quadratic {
                lambda,
                center,
                coord,
            } => {
                let mut out = Array2::zeros((xs.nrows(), xs.ncols()));
                for (i, row) in xs.rows().into_iter().enumerate() {
                    out[[i, *coord]] = 2.0 * lambda * (row[*coord] - center);
                }
                Ok(out)
            }
            CostEvaluator::Classifier(net) => net.input_grad_batch(xs),
        }
    }

    pub fn value(&self, x: ArrayView1<'_, f64>) -> Result<f64> {
        Ok(self.value_batch(x.insert_axis(Axis(0)))?[0])
    }

    pub fn grad(&self, x: ArrayView1<'_, f64>) -> Result<Array1<f64>> {
        Ok(self
            .grad_batch(x.insert_axis(Axis(0)))?
            .index_axis_move(Axis(0), 0))
    }
}
