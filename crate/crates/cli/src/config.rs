//! Flat `key = value` configuration files: preset bases, overlay parsing
//! with line-anchored errors, and the canonical echo.
//!
//! A configuration file is plain text, one `key = value` pair per line;
//! blank lines and lines starting with `#` are ignored. Keys use dotted
//! namespaces (`solver.epochs`, `initial.mean`, ...). Unknown and duplicate
//! keys are rejected. The three `*.kind` keys are applied before all other
//! keys, so option order inside a file never matters.
//!
//! The canonical echo emitted by [`render`] is itself a complete valid
//! configuration file listing every applicable key, so
//! `parse -> echo -> parse` is idempotent.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use nashflow::{
    checkerboard_to_gaussian_config, ensemble::load_samples, nonpotential_kernel_config,
    quadratic_oc_config, Activation, ClassifierConfig, CouplingSpec, InitialDistribution,
    IntegratorScheme, SolverConfig,
};
use ndarray::{Array1, Array2};

/// Value of `terminal.target` selecting the built-in classifier target
/// (8192 fixed standard-normal draws).
pub const BUILTIN_TARGET: &str = "builtin-normal-8192";

/// Built-in experiment configurations plus user-supplied files.
#[derive(Debug, Clone, PartialEq)]
pub enum ExperimentPreset {
    NonPotentialKernel,
    CheckerboardToGaussian,
    QuadraticOc,
    Custom(PathBuf),
}

impl ExperimentPreset {
    pub fn from_name(name: &str) -> Result<Self, String> {
        match name {
            "nonpotential_kernel" => Ok(Self::NonPotentialKernel),
            "checkerboard_to_gaussian" => Ok(Self::CheckerboardToGaussian),
            "quadratic_oc" => Ok(Self::QuadraticOc),
            other => Err(format!(
                "unknown preset {other:?}; available presets: quadratic_oc, \
                 nonpotential_kernel, checkerboard_to_gaussian"
            )),
        }
    }
}

/// Where the KL terminal target samples come from.
#[derive(Debug, Clone, PartialEq)]
pub enum TargetSpec {
    None,
    Builtin,
    File(PathBuf),
}

#[derive(Debug, Clone, PartialEq)]
pub enum InitialDraft {
    Gaussian { mean: Vec<f64>, cov_diag: Vec<f64> },
    Checkerboard { cells: usize, extent: f64 },
    Empirical { path: PathBuf },
}

#[derive(Debug, Clone, PartialEq)]
pub enum CouplingDraft {
    Zero,
    Kernel {
        lambda: f64,
        a: Vec<f64>,
    },
    Quadratic {
        lambda: f64,
        center: f64,
        coord: usize,
    },
    Kl,
}

/// Editable form of a solver configuration: every scalar knob plus the
/// provenance of file-backed data, prior to materialization.
#[derive(Debug, Clone, PartialEq)]
pub struct Draft {
    pub epochs: usize,
    pub refresh_rounds: usize,
    pub particle_steps: usize,
    pub particle_batch: usize,
    pub beta: f64,
    pub fm_steps: usize,
    pub fm_batch: usize,
    pub lr_v: f64,
    pub particles: usize,
    pub time_steps: usize,
    pub integrator: IntegratorScheme,
    pub seed: u64,
    pub fm_every: usize,
    pub velocity_hidden: Vec<usize>,
    pub velocity_activation: Activation,
    pub initial: InitialDraft,
    pub interaction: CouplingDraft,
    pub terminal: CouplingDraft,
    pub target: TargetSpec,
    pub classifier: ClassifierConfig,
}

fn coupling_draft(spec: &CouplingSpec) -> CouplingDraft {
    match spec {
        CouplingSpec::Zero => CouplingDraft::Zero,
        CouplingSpec::KernelInteraction { lambda, a } => CouplingDraft::Kernel {
            lambda: *lambda,
            a: a.to_vec(),
        },
        CouplingSpec::QuadraticTerminal {
            lambda,
            center,
            coord,
        } => CouplingDraft::Quadratic {
            lambda: *lambda,
            center: *center,
            coord: *coord,
        },
        CouplingSpec::KlTerminal { .. } => CouplingDraft::Kl,
    }
}

fn draft_from_solver(sc: &SolverConfig, target: TargetSpec) -> Draft {
    let initial = match &sc.initial {
        InitialDistribution::Gaussian { mean, cov_diag } => InitialDraft::Gaussian {
            mean: mean.to_vec(),
            cov_diag: cov_diag.to_vec(),
        },
        InitialDistribution::Checkerboard { cells, extent } => InitialDraft::Checkerboard {
            cells: *cells,
            extent: *extent,
        },
        InitialDistribution::EmpiricalFile { path } => {
            InitialDraft::Empirical { path: path.clone() }
        }
    };
    let classifier = match &sc.terminal {
        CouplingSpec::KlTerminal { classifier, .. } => classifier.clone(),
        _ => ClassifierConfig::default(),
    };
    Draft {
        epochs: sc.epochs,
        refresh_rounds: sc.refresh_rounds,
        particle_steps: sc.particle_steps,
        particle_batch: sc.particle_batch,
        beta: sc.beta,
        fm_steps: sc.fm_steps,
        fm_batch: sc.fm_batch,
        lr_v: sc.lr_v,
        particles: sc.particles,
        time_steps: sc.time_steps,
        integrator: sc.integrator,
        seed: sc.seed,
        fm_every: sc.fm_every,
        velocity_hidden: sc.velocity_hidden.clone(),
        velocity_activation: sc.velocity_activation,
        initial,
        interaction: coupling_draft(&sc.interaction),
        terminal: coupling_draft(&sc.terminal),
        target,
        classifier,
    }
}

/// The base draft for a preset. The default configuration (no preset given)
/// is the `quadratic_oc` preset with seed 0.
pub fn preset_draft(preset: &ExperimentPreset) -> Draft {
    match preset {
        ExperimentPreset::QuadraticOc | ExperimentPreset::Custom(_) => {
            draft_from_solver(&quadratic_oc_config(0), TargetSpec::None)
        }
        ExperimentPreset::NonPotentialKernel => {
            draft_from_solver(&nonpotential_kernel_config(0), TargetSpec::None)
        }
        ExperimentPreset::CheckerboardToGaussian => {
            draft_from_solver(&checkerboard_to_gaussian_config(0), TargetSpec::Builtin)
        }
    }
}

fn parse_scalar<T: std::str::FromStr>(value: &str, key: &str, anchor: &str) -> Result<T, String>
where
    T::Err: std::fmt::Display,
{
    value
        .trim()
        .parse()
        .map_err(|e| format!("{anchor}: invalid value for {key}: {e}"))
}

fn parse_list<T: std::str::FromStr>(value: &str, key: &str, anchor: &str) -> Result<Vec<T>, String>
where
    T::Err: std::fmt::Display,
{
    let trimmed = value.trim();
    if trimmed.is_empty() {
        return Ok(Vec::new());
    }
    trimmed
        .split(',')
        .map(|tok| parse_scalar(tok, key, anchor))
        .collect()
}

fn parse_activation(value: &str, key: &str, anchor: &str) -> Result<Activation, String> {
    match value.trim() {
        "relu" => Ok(Activation::Relu),
        "swish" => Ok(Activation::Swish),
        other => Err(format!(
            "{anchor}: invalid value for {key}: expected relu or swish, got {other:?}"
        )),
    }
}

/// Apply one `key = value` pair to the draft. `anchor` prefixes error
/// messages (`<file>:<line>`).
fn apply_key(draft: &mut Draft, key: &str, value: &str, anchor: &str) -> Result<(), String> {
    match key {
        "solver.epochs" => draft.epochs = parse_scalar(value, key, anchor)?,
        "solver.refresh_rounds" => draft.refresh_rounds = parse_scalar(value, key, anchor)?,
        "solver.particle_steps" => draft.particle_steps = parse_scalar(value, key, anchor)?,
        "solver.particle_batch" => draft.particle_batch = parse_scalar(value, key, anchor)?,
        "solver.beta" => draft.beta = parse_scalar(value, key, anchor)?,
        "solver.fm_steps" => draft.fm_steps = parse_scalar(value, key, anchor)?,
        "solver.fm_batch" => draft.fm_batch = parse_scalar(value, key, anchor)?,
        "solver.lr_v" => draft.lr_v = parse_scalar(value, key, anchor)?,
        "solver.particles" => draft.particles = parse_scalar(value, key, anchor)?,
        "solver.time_steps" => draft.time_steps = parse_scalar(value, key, anchor)?,
        "solver.integrator" => {
            draft.integrator = match value.trim() {
                "euler" => IntegratorScheme::Euler,
                "rk4" => IntegratorScheme::Rk4,
                other => {
                    return Err(format!(
                        "{anchor}: invalid value for {key}: expected euler or rk4, got {other:?}"
                    ))
                }
            }
        }
        "solver.seed" => draft.seed = parse_scalar(value, key, anchor)?,
        "solver.fm_every" => draft.fm_every = parse_scalar(value, key, anchor)?,
        "velocity.hidden" => draft.velocity_hidden = parse_list(value, key, anchor)?,
        "velocity.activation" => draft.velocity_activation = parse_activation(value, key, anchor)?,
        "initial.kind" => match value.trim() {
            "gaussian" => {
                if !matches!(draft.initial, InitialDraft::Gaussian { .. }) {
                    draft.initial = InitialDraft::Gaussian {
                        mean: Vec::new(),
                        cov_diag: Vec::new(),
                    };
                }
            }
            "checkerboard" => {
                if !matches!(draft.initial, InitialDraft::Checkerboard { .. }) {
                    draft.initial = InitialDraft::Checkerboard {
                        cells: 4,
                        extent: 4.0,
                    };
                }
            }
            "empirical" => {
                if !matches!(draft.initial, InitialDraft::Empirical { .. }) {
                    draft.initial = InitialDraft::Empirical {
                        path: PathBuf::new(),
                    };
                }
            }
            other => {
                return Err(format!(
                    "{anchor}: invalid value for {key}: expected gaussian, checkerboard or \
                     empirical, got {other:?}"
                ))
            }
        },
        "initial.mean" => match &mut draft.initial {
            InitialDraft::Gaussian { mean, .. } => *mean = parse_list(value, key, anchor)?,
            _ => {
                return Err(format!(
                    "{anchor}: {key} only applies when initial.kind = gaussian"
                ))
            }
        },
        "initial.cov_diag" => match &mut draft.initial {
            InitialDraft::Gaussian { cov_diag, .. } => *cov_diag = parse_list(value, key, anchor)?,
            _ => {
                return Err(format!(
                    "{anchor}: {key} only applies when initial.kind = gaussian"
                ))
            }
        },
        "initial.cells" => match &mut draft.initial {
            InitialDraft::Checkerboard { cells, .. } => *cells = parse_scalar(value, key, anchor)?,
            _ => {
                return Err(format!(
                    "{anchor}: {key} only applies when initial.kind = checkerboard"
                ))
            }
        },
        "initial.extent" => match &mut draft.initial {
            InitialDraft::Checkerboard { extent, .. } => {
                *extent = parse_scalar(value, key, anchor)?
            }
            _ => {
                return Err(format!(
                    "{anchor}: {key} only applies when initial.kind = checkerboard"
                ))
            }
        },
        "initial.path" => match &mut draft.initial {
            InitialDraft::Empirical { path } => *path = PathBuf::from(value.trim()),
            _ => {
                return Err(format!(
                    "{anchor}: {key} only applies when initial.kind = empirical"
                ))
            }
        },
        "interaction.kind" => apply_coupling_kind(&mut draft.interaction, value, key, anchor)?,
        "terminal.kind" => apply_coupling_kind(&mut draft.terminal, value, key, anchor)?,
        "interaction.lambda" | "interaction.a" | "interaction.center" | "interaction.coord" => {
            apply_coupling_option(&mut draft.interaction, key, "interaction", value, anchor)?
        }
        "terminal.lambda" | "terminal.a" | "terminal.center" | "terminal.coord" => {
            apply_coupling_option(&mut draft.terminal, key, "terminal", value, anchor)?
        }
        "terminal.target" => {
            if !matches!(draft.terminal, CouplingDraft::Kl) {
                return Err(format!(
                    "{anchor}: {key} only applies when terminal.kind = kl"
                ));
            }
            let trimmed = value.trim();
            draft.target = if trimmed == BUILTIN_TARGET {
                TargetSpec::Builtin
            } else {
                TargetSpec::File(PathBuf::from(trimmed))
            };
        }
        "classifier.hidden" => draft.classifier.hidden = parse_list(value, key, anchor)?,
        "classifier.activation" => {
            draft.classifier.activation = parse_activation(value, key, anchor)?
        }
        "classifier.lr" => draft.classifier.lr = parse_scalar(value, key, anchor)?,
        "classifier.batch" => draft.classifier.batch = parse_scalar(value, key, anchor)?,
        "classifier.init_steps" => draft.classifier.init_steps = parse_scalar(value, key, anchor)?,
        "classifier.refresh_steps" => {
            draft.classifier.refresh_steps = parse_scalar(value, key, anchor)?
        }
        "classifier.refresh_every" => {
            draft.classifier.refresh_every = parse_scalar(value, key, anchor)?
        }
        other => return Err(format!("{anchor}: unknown key {other:?}")),
    }
    Ok(())
}

fn apply_coupling_kind(
    slot: &mut CouplingDraft,
    value: &str,
    key: &str,
    anchor: &str,
) -> Result<(), String> {
    match value.trim() {
        "zero" => *slot = CouplingDraft::Zero,
        "kernel" => {
            if !matches!(slot, CouplingDraft::Kernel { .. }) {
                *slot = CouplingDraft::Kernel {
                    lambda: 1.0,
                    a: Vec::new(),
                };
            }
        }
        "quadratic" => {
            if !matches!(slot, CouplingDraft::Quadratic { .. }) {
                *slot = CouplingDraft::Quadratic {
                    lambda: 1.0,
                    center: 0.0,
                    coord: 0,
                };
            }
        }
        "kl" => *slot = CouplingDraft::Kl,
        other => {
            return Err(format!(
                "{anchor}: invalid value for {key}: expected zero, kernel, quadratic or kl, \
                 got {other:?}"
            ))
        }
    }
    Ok(())
}

fn apply_coupling_option(
    slot: &mut CouplingDraft,
    key: &str,
    role: &str,
    value: &str,
    anchor: &str,
) -> Result<(), String> {
    let option = key.rsplit('.').next().unwrap_or(key);
    match (option, slot) {
        ("lambda", CouplingDraft::Kernel { lambda, .. })
        | ("lambda", CouplingDraft::Quadratic { lambda, .. }) => {
            *lambda = parse_scalar(value, key, anchor)?
        }
        ("a", CouplingDraft::Kernel { a, .. }) => *a = parse_list(value, key, anchor)?,
        ("center", CouplingDraft::Quadratic { center, .. }) => {
            *center = parse_scalar(value, key, anchor)?
        }
        ("coord", CouplingDraft::Quadratic { coord, .. }) => {
            *coord = parse_scalar(value, key, anchor)?
        }
        ("a", _) => {
            return Err(format!(
                "{anchor}: {key} only applies when {role}.kind = kernel"
            ))
        }
        ("center", _) | ("coord", _) => {
            return Err(format!(
                "{anchor}: {key} only applies when {role}.kind = quadratic"
            ))
        }
        _ => {
            return Err(format!(
                "{anchor}: {key} only applies when {role}.kind is kernel or quadratic"
            ))
        }
    }
    Ok(())
}

/// Overlay a configuration file onto the draft. `.kind` keys apply first so
/// option lines may appear in any order; unknown and duplicate keys are
/// rejected with `<origin>:<line>` anchors.
pub fn apply_file(draft: &mut Draft, text: &str, origin: &str) -> Result<(), String> {
    let mut pairs: Vec<(usize, &str, &str)> = Vec::new();
    let mut seen: BTreeMap<&str, usize> = BTreeMap::new();
    for (idx, raw) in text.lines().enumerate() {
        let line_no = idx + 1;
        let line = raw.trim();
        if line.is_empty() || line.starts_with('#') {
            continue;
        }
        let Some((key, value)) = line.split_once('=') else {
            return Err(format!("{origin}:{line_no}: expected `key = value`"));
        };
        let key = key.trim();
        let value = value.trim();
        if key.is_empty() {
            return Err(format!("{origin}:{line_no}: empty key"));
        }
        if let Some(prev) = seen.insert(key, line_no) {
            return Err(format!(
                "{origin}:{line_no}: duplicate key {key:?} (first set on line {prev})"
            ));
        }
        pairs.push((line_no, key, value));
    }
    for (line_no, key, value) in pairs.iter().filter(|(_, k, _)| k.ends_with(".kind")) {
        apply_key(draft, key, value, &format!("{origin}:{line_no}"))?;
    }
    for (line_no, key, value) in pairs.iter().filter(|(_, k, _)| !k.ends_with(".kind")) {
        apply_key(draft, key, value, &format!("{origin}:{line_no}"))?;
    }
    Ok(())
}

fn join<T: std::fmt::Display>(items: &[T]) -> String {
    items
        .iter()
        .map(|v| v.to_string())
        .collect::<Vec<_>>()
        .join(",")
}

fn render_coupling(out: &mut String, role: &str, coupling: &CouplingDraft) {
    match coupling {
        CouplingDraft::Zero => {
            let _ = writeln!(out, "{role}.kind = zero");
        }
        CouplingDraft::Kernel { lambda, a } => {
            let _ = writeln!(out, "{role}.kind = kernel");
            let _ = writeln!(out, "{role}.lambda = {lambda}");
            let _ = writeln!(out, "{role}.a = {}", join(a));
        }
        CouplingDraft::Quadratic {
            lambda,
            center,
            coord,
        } => {
            let _ = writeln!(out, "{role}.kind = quadratic");
            let _ = writeln!(out, "{role}.lambda = {lambda}");
            let _ = writeln!(out, "{role}.center = {center}");
            let _ = writeln!(out, "{role}.coord = {coord}");
        }
        CouplingDraft::Kl => {
            let _ = writeln!(out, "{role}.kind = kl");
        }
    }
}

/// Canonical echo: a complete configuration file reproducing the draft.
pub fn render(draft: &Draft) -> String {
    let mut out = String::new();
    let _ = writeln!(out, "solver.epochs = {}", draft.epochs);
    let _ = writeln!(out, "solver.refresh_rounds = {}", draft.refresh_rounds);
    let _ = writeln!(out, "solver.particle_steps = {}", draft.particle_steps);
    let _ = writeln!(out, "solver.particle_batch = {}", draft.particle_batch);
    let _ = writeln!(out, "solver.beta = {}", draft.beta);
    let _ = writeln!(out, "solver.fm_steps = {}", draft.fm_steps);
    let _ = writeln!(out, "solver.fm_batch = {}", draft.fm_batch);
    let _ = writeln!(out, "solver.lr_v = {}", draft.lr_v);
    let _ = writeln!(out, "solver.particles = {}", draft.particles);
    let _ = writeln!(out, "solver.time_steps = {}", draft.time_steps);
    let _ = writeln!(
        out,
        "solver.integrator = {}",
        match draft.integrator {
            IntegratorScheme::Euler => "euler",
            IntegratorScheme::Rk4 => "rk4",
        }
    );
    let _ = writeln!(out, "solver.seed = {}", draft.seed);
    let _ = writeln!(out, "solver.fm_every = {}", draft.fm_every);
    let _ = writeln!(out, "velocity.hidden = {}", join(&draft.velocity_hidden));
    let _ = writeln!(
        out,
        "velocity.activation = {}",
        activation_name(draft.velocity_activation)
    );
    match &draft.initial {
        InitialDraft::Gaussian { mean, cov_diag } => {
            let _ = writeln!(out, "initial.kind = gaussian");
            let _ = writeln!(out, "initial.mean = {}", join(mean));
            let _ = writeln!(out, "initial.cov_diag = {}", join(cov_diag));
        }
        InitialDraft::Checkerboard { cells, extent } => {
            let _ = writeln!(out, "initial.kind = checkerboard");
            let _ = writeln!(out, "initial.cells = {cells}");
            let _ = writeln!(out, "initial.extent = {extent}");
        }
        InitialDraft::Empirical { path } => {
            let _ = writeln!(out, "initial.kind = empirical");
            let _ = writeln!(out, "initial.path = {}", path.display());
        }
    }
    render_coupling(&mut out, "interaction", &draft.interaction);
    render_coupling(&mut out, "terminal", &draft.terminal);
    if matches!(draft.terminal, CouplingDraft::Kl) {
        let target = match &draft.target {
            TargetSpec::Builtin => BUILTIN_TARGET.to_string(),
            TargetSpec::File(path) => path.display().to_string(),
            TargetSpec::None => String::new(),
        };
        let _ = writeln!(out, "terminal.target = {target}");
        let c = &draft.classifier;
        let _ = writeln!(out, "classifier.hidden = {}", join(&c.hidden));
        let _ = writeln!(
            out,
            "classifier.activation = {}",
            activation_name(c.activation)
        );
        let _ = writeln!(out, "classifier.lr = {}", c.lr);
        let _ = writeln!(out, "classifier.batch = {}", c.batch);
        let _ = writeln!(out, "classifier.init_steps = {}", c.init_steps);
        let _ = writeln!(out, "classifier.refresh_steps = {}", c.refresh_steps);
        let _ = writeln!(out, "classifier.refresh_every = {}", c.refresh_every);
    }
    out
}

fn activation_name(a: Activation) -> &'static str {
    match a {
        Activation::Relu => "relu",
        Activation::Swish => "swish",
    }
}

fn builtin_normal_target() -> Array2<f64> {
    match checkerboard_to_gaussian_config(0).terminal {
        CouplingSpec::KlTerminal { target, .. } => target,
        _ => unreachable!("the checkerboard experiment carries a KL terminal cost"),
    }
}

fn materialize_coupling(
    coupling: &CouplingDraft,
    role: &str,
    draft: &Draft,
    allow_kl: bool,
) -> Result<CouplingSpec, String> {
    match coupling {
        CouplingDraft::Zero => Ok(CouplingSpec::Zero),
        CouplingDraft::Kernel { lambda, a } => {
            if a.is_empty() {
                return Err(format!("{role}.a is required when {role}.kind = kernel"));
            }
            Ok(CouplingSpec::KernelInteraction {
                lambda: *lambda,
                a: Array1::from(a.clone()),
            })
        }
        CouplingDraft::Quadratic {
            lambda,
            center,
            coord,
        } => Ok(CouplingSpec::QuadraticTerminal {
            lambda: *lambda,
            center: *center,
            coord: *coord,
        }),
        CouplingDraft::Kl => {
            if !allow_kl {
                return Err(format!(
                    "the KL coupling estimates a terminal density ratio and is terminal-only; \
                     {role}.kind = kl is not supported"
                ));
            }
            let target = match &draft.target {
                TargetSpec::None => {
                    return Err("terminal.target is required when terminal.kind = kl".into())
                }
                TargetSpec::Builtin => builtin_normal_target(),
                TargetSpec::File(path) => load_samples(path).map_err(|e| e.to_string())?,
            };
            Ok(CouplingSpec::KlTerminal {
                target,
                classifier: draft.classifier.clone(),
            })
        }
    }
}

/// Build the runnable configuration, loading any file-backed data.
pub fn materialize(draft: &Draft) -> Result<SolverConfig, String> {
    let initial = match &draft.initial {
        InitialDraft::Gaussian { mean, cov_diag } => {
            if mean.is_empty() {
                return Err("initial.mean is required when initial.kind = gaussian".into());
            }
            if cov_diag.len() != mean.len() {
                return Err(format!(
                    "initial.cov_diag has {} entries but initial.mean has {}",
                    cov_diag.len(),
                    mean.len()
                ));
            }
            InitialDistribution::Gaussian {
                mean: Array1::from(mean.clone()),
                cov_diag: Array1::from(cov_diag.clone()),
            }
        }
        InitialDraft::Checkerboard { cells, extent } => InitialDistribution::Checkerboard {
            cells: *cells,
            extent: *extent,
        },
        InitialDraft::Empirical { path } => {
            if path.as_os_str().is_empty() {
                return Err("initial.path is required when initial.kind = empirical".into());
            }
            InitialDistribution::EmpiricalFile { path: path.clone() }
        }
    };
    let interaction = materialize_coupling(&draft.interaction, "interaction", draft, false)?;
    let terminal = materialize_coupling(&draft.terminal, "terminal", draft, true)?;
    let config = SolverConfig {
        epochs: draft.epochs,
        refresh_rounds: draft.refresh_rounds,
        particle_steps: draft.particle_steps,
        particle_batch: draft.particle_batch,
        beta: draft.beta,
        fm_steps: draft.fm_steps,
        fm_batch: draft.fm_batch,
        lr_v: draft.lr_v,
        particles: draft.particles,
        time_steps: draft.time_steps,
        integrator: draft.integrator,
        interaction,
        terminal,
        initial,
        velocity_hidden: draft.velocity_hidden.clone(),
        velocity_activation: draft.velocity_activation,
        seed: draft.seed,
        fm_every: draft.fm_every,
    };
    config.validate().map_err(|e| e.to_string())?;
    Ok(config)
}

/// Resolve the preset/config-file/seed triple into a runnable configuration
/// together with its canonical echo.
pub struct LoadedConfig {
    pub solver: SolverConfig,
    pub echo: String,
}

pub fn load(
    preset: Option<&str>,
    config_path: Option<&Path>,
    seed_override: Option<u64>,
) -> Result<LoadedConfig, String> {
    let preset = match (preset, config_path) {
        (Some(name), _) => ExperimentPreset::from_name(name)?,
        (None, Some(path)) => ExperimentPreset::Custom(path.to_path_buf()),
        (None, None) => return Err("either --preset or --config is required".into()),
    };
    let mut draft = preset_draft(&preset);
    if let Some(path) = config_path {
        let text = std::fs::read_to_string(path)
            .map_err(|e| format!("cannot read config file {}: {e}", path.display()))?;
        apply_file(&mut draft, &text, &path.display().to_string())?;
    }
    if let Some(seed) = seed_override {
        draft.seed = seed;
    }
    let solver = materialize(&draft)?;
    let echo = render(&draft);
    Ok(LoadedConfig { solver, echo })
}
