//! Trajectory ensembles, initial-distribution samplers, and the
//! finite-difference operators used by the particle updates.
//!
//! An ensemble stores `n` particle trajectories on a uniform grid of `m`
//! steps over `[0, 1]`: `states[i][j]` is particle `i` at time `t_j = j/m`.
//! Node `j = 0` carries the initial sample and is never touched by
//! optimization. Time derivatives are approximated by the backward
//! difference `D_t` (which lines up with the flow-matching targets, taken at
//! left endpoints) and the central second difference `D_tt`.

use std::io::{BufRead, Write};
use std::path::{Path, PathBuf};

use ndarray::{s, Array1, Array2, Array3, ArrayView1, ArrayView2, Axis};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};

use crate::{Error, Result};

/// Uniform time grid on `[0, 1]` with `m` steps of width `dt = 1/m`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TimeGrid {
    m: usize,
}

impl TimeGrid {
    pub fn new(m: usize) -> Result<Self> {
        if m == 0 {
            return Err(Error::Config("time grid needs at least one step".into()));
        }
        Ok(TimeGrid { m })
    }

    pub fn steps(&self) -> usize {
        self.m
    }

    pub fn dt(&self) -> f64 {
        1.0 / self.m as f64
    }

    /// Node `t_j = j/m`; computed by division so `node(m) == 1.0` exactly.
    pub fn node(&self, j: usize) -> f64 {
        debug_assert!(j <= self.m);
        j as f64 / self.m as f64
    }

    pub fn nodes(&self) -> Vec<f64> {
        (0..=self.m).map(|j| self.node(j)).collect()
    }
}

/// Where the initial particles come from.
#[derive(Debug, Clone, PartialEq)]
pub enum InitialDistribution {
    /// Axis-aligned Gaussian with the given mean and covariance diagonal.
    Gaussian {
        mean: Array1<f64>,
        cov_diag: Array1<f64>,
    },
    /// Uniform mixture over the "on" cells of an alternating checkerboard
    /// covering `[-extent/2, extent/2]^2`; cell `(ix, iy)` is on iff
    /// `ix + iy` is even.
    Checkerboard { cells: usize, extent: f64 },
    /// Empirical measure of a sample file (headerless text, one particle per
    /// line, comma-separated coordinates); draws resample rows i.i.d.
    EmpiricalFile { path: PathBuf },
}

impl InitialDistribution {
    pub fn validate(&self) -> Result<()> {
        match self {
            InitialDistribution::Gaussian { mean, cov_diag } => {
                if mean.len() != cov_diag.len() {
                    return Err(Error::Config(format!(
                        "gaussian mean has dimension {} but covariance diagonal has {}",
                        mean.len(),
                        cov_diag.len()
                    )));
                }
                if mean.is_empty() {
                    return Err(Error::Config("gaussian dimension must be positive".into()));
                }
                if cov_diag.iter().any(|&v| v <= 0.0 || !v.is_finite()) {
                    return Err(Error::Config(
                        "gaussian covariance diagonal entries must be strictly positive".into(),
                    ));
                }
                if mean.iter().any(|v| !v.is_finite()) {
                    return Err(Error::Config("gaussian mean must be finite".into()));
                }
                Ok(())
            }
            InitialDistribution::Checkerboard { cells, extent } => {
                if *cells == 0 || cells % 2 != 0 {
                    return Err(Error::Config(format!(
                        "checkerboard cells-per-side must be a positive even integer, got {cells}"
                    )));
                }
                if *extent <= 0.0 || !extent.is_finite() {
                    return Err(Error::Config(format!(
                        "checkerboard extent must be positive, got {extent}"
                    )));
                }
                Ok(())
            }
            InitialDistribution::EmpiricalFile { .. } => Ok(()),
        }
    }
}

/// Load a headerless sample file: one particle per line, comma-separated
/// coordinates. Also used for terminal-coupling target samples.
pub fn load_samples(path: &Path) -> Result<Array2<f64>> {
    let file = std::fs::File::open(path)
        .map_err(|e| Error::Config(format!("cannot open sample file {}: {e}", path.display())))?;
    let reader = std::io::BufReader::new(file);
    let mut rows: Vec<Vec<f64>> = Vec::new();
    for (lineno, line) in reader.lines().enumerate() {
        let line = line?;
        let trimmed = line.trim();
        if trimmed.is_empty() {
            continue;
        }
        let row: Vec<f64> = trimmed
            .split(',')
            .map(|tok| {
                tok.trim().parse::<f64>().map_err(|_| {
                    Error::Config(format!(
                        "{}:{}: not a number: {tok:?}",
                        path.display(),
                        lineno + 1
                    ))
                })
            })
            .collect::<Result<_>>()?;
        if row.iter().any(|v| !v.is_finite()) {
            return Err(Error::Config(format!(
                "{}:{}: non-finite sample entry",
                path.display(),
                lineno + 1
            )));
        }
        if let Some(first) = rows.first() {
            if row.len() != first.len() {
                return Err(Error::Config(format!(
                    "{}:{}: expected {} coordinates, found {}",
                    path.display(),
                    lineno + 1,
                    first.len(),
                    row.len()
                )));
            }
        }
        rows.push(row);
    }
    if rows.is_empty() {
        return Err(Error::Config(format!(
            "sample file {} contains no samples",
            path.display()
        )));
    }
    let d = rows[0].len();
    let flat: Vec<f64> = rows.into_iter().flatten().collect();
    let n = flat.len() / d;
    Ok(Array2::from_shape_vec((n, d), flat).expect("row-major sample layout"))
}

/// Draw `n` i.i.d. initial positions. Deterministic for a fixed seed.
pub fn sample_initial(dist: &InitialDistribution, n: usize, seed: u64) -> Result<Array2<f64>> {
    if n == 0 {
        return Err(Error::Config("sample_initial requires n >= 1".into()));
    }
    dist.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    match dist {
        InitialDistribution::Gaussian { mean, cov_diag } => {
            let d = mean.len();
            let normals: Vec<Normal<f64>> = (0..d)
                .map(|k| Normal::new(mean[k], cov_diag[k].sqrt()).expect("validated parameters"))
                .collect();
            let mut out = Array2::zeros((n, d));
            for i in 0..n {
                for k in 0..d {
                    out[[i, k]] = normals[k].sample(&mut rng);
                }
            }
            Ok(out)
        }
        InitialDistribution::Checkerboard { cells, extent } => {
            // Rejection-free: pick an on-cell uniformly, then a uniform point
            // inside it.
            let on_cells: Vec<(usize, usize)> = (0..*cells)
                .flat_map(|ix| (0..*cells).map(move |iy| (ix, iy)))
                .filter(|(ix, iy)| (ix + iy) % 2 == 0)
                .collect();
            let width = extent / *cells as f64;
            let origin = -extent / 2.0;
            let mut out = Array2::zeros((n, 2));
            for i in 0..n {
                let (ix, iy) = on_cells[rng.random_range(0..on_cells.len())];
                out[[i, 0]] = origin + width * (ix as f64 + rng.random::<f64>());
                out[[i, 1]] = origin + width * (iy as f64 + rng.random::<f64>());
            }
            Ok(out)
        }
        InitialDistribution::EmpiricalFile { path } => {
            let table = load_samples(path)?;
            let rows = table.nrows();
            let mut out = Array2::zeros((n, table.ncols()));
            for i in 0..n {
                let r = rng.random_range(0..rows);
                out.row_mut(i).assign(&table.row(r));
            }
            Ok(out)
        }
    }
}

/// `n` particle trajectories on a shared time grid, shape `n × (m+1) × d`.
#[derive(Debug, Clone, PartialEq)]
pub struct ParticleEnsemble {
    grid: TimeGrid,
    states: Array3<f64>,
}

impl ParticleEnsemble {
    /// Wrap raw states, checking shape and finiteness.
    pub fn from_states(grid: TimeGrid, states: Array3<f64>) -> Result<Self> {
        if states.shape()[1] != grid.steps() + 1 {
            return Err(Error::Config(format!(
                "states have {} time slices but the grid has {} nodes",
                states.shape()[1],
                grid.steps() + 1
            )));
        }
        if let Some(bad) = states.iter().position(|v| !v.is_finite()) {
            let d = states.shape()[2].max(1);
            let per_particle = (grid.steps() + 1) * d;
            return Err(Error::Optimization {
                particle: bad / per_particle,
                node: (bad % per_particle) / d,
            });
        }
        Ok(ParticleEnsemble { grid, states })
    }

    pub fn n(&self) -> usize {
        self.states.shape()[0]
    }

    pub fn d(&self) -> usize {
        self.states.shape()[2]
    }

    pub fn grid(&self) -> TimeGrid {
        self.grid
    }

    pub fn states(&self) -> &Array3<f64> {
        &self.states
    }

    pub fn into_states(self) -> Array3<f64> {
        self.states
    }

    /// All particles at time node `j`, shape `n × d`.
    pub fn slice_at(&self, j: usize) -> ArrayView2<'_, f64> {
        self.states.slice(s![.., j, ..])
    }

    /// Backward differences `(D_t X_i)_{t_j} = (X_{i,t_j} - X_{i,t_{j-1}})/dt`
    /// for `j = 1..m`, shape `m × d`.
    pub fn diff_t(&self, i: usize) -> Array2<f64> {
        let x = self.states.slice(s![i, .., ..]);
        let dt = self.grid.dt();
        let m = self.grid.steps();
        let mut out = Array2::zeros((m, self.d()));
        for j in 1..=m {
            for k in 0..self.d() {
                out[[j - 1, k]] = (x[[j, k]] - x[[j - 1, k]]) / dt;
            }
        }
        out
    }

    /// Central second differences
    /// `(D_tt X_i)_{t_j} = (X_{i,t_{j+1}} - 2 X_{i,t_j} + X_{i,t_{j-1}})/dt²`
    /// for the interior nodes `j = 1..m-1`, shape `(m-1) × d`.
    pub fn diff_tt(&self, i: usize) -> Array2<f64> {
        let x = self.states.slice(s![i, .., ..]);
        let dt2 = self.grid.dt() * self.grid.dt();
        let m = self.grid.steps();
        let rows = m.saturating_sub(1);
        let mut out = Array2::zeros((rows, self.d()));
        for j in 1..m {
            for k in 0..self.d() {
                out[[j - 1, k]] = (x[[j + 1, k]] - 2.0 * x[[j, k]] + x[[j - 1, k]]) / dt2;
            }
        }
        out
    }

    /// Discrete kinetic energy `(dt/n) Σ_i Σ_j ½‖(X_{i,t_j} - X_{i,t_{j-1}})/dt‖²`.
    pub fn dynamic_cost(&self) -> f64 {
        let n = self.n();
        if n == 0 {
            return 0.0;
        }
        let dt = self.grid.dt();
        let mut total = 0.0;
        for i in 0..n {
            for j in 1..=self.grid.steps() {
                let mut sq = 0.0;
                for k in 0..self.d() {
                    let v = (self.states[[i, j, k]] - self.states[[i, j - 1, k]]) / dt;
                    sq += v * v;
                }
                total += 0.5 * sq;
            }
        }
        dt * total / n as f64
    }

    /// Serialize as CSV with columns `particle_id,time_index,x_0..x_{d-1}`.
    pub fn write_csv<W: Write>(&self, mut out: W) -> Result<()> {
        write!(out, "particle_id,time_index")?;
        for k in 0..self.d() {
            write!(out, ",x_{k}")?;
        }
        writeln!(out)?;
        for i in 0..self.n() {
            for j in 0..=self.grid.steps() {
                write!(out, "{i},{j}")?;
                for k in 0..self.d() {
                    write!(out, ",{}", self.states[[i, j, k]])?;
                }
                writeln!(out)?;
            }
        }
        Ok(())
    }

    /// Parse the CSV format produced by [`ParticleEnsemble::write_csv`].
    pub fn read_csv<R: BufRead>(reader: R) -> Result<Self> {
        let mut lines = reader.lines();
        let header = lines
            .next()
            .ok_or_else(|| Error::Config("ensemble csv is empty".into()))??;
        let cols: Vec<&str> = header.trim().split(',').collect();
        if cols.len() < 3 || cols[0] != "particle_id" || cols[1] != "time_index" {
            return Err(Error::Config(
                "ensemble csv header must start with particle_id,time_index,x_0".into(),
            ));
        }
        let d = cols.len() - 2;
        let mut rows: Vec<(usize, usize, Vec<f64>)> = Vec::new();
        for (num, line) in lines.enumerate() {
            let line = line?;
            if line.trim().is_empty() {
                continue;
            }
            let mut it = line.trim().split(',');
            let loc = || format!("ensemble csv line {}", num + 2);
            let i: usize = it
                .next()
                .and_then(|t| t.parse().ok())
                .ok_or_else(|| Error::Config(format!("{}: bad particle_id", loc())))?;
            let j: usize = it
                .next()
                .and_then(|t| t.parse().ok())
                .ok_or_else(|| Error::Config(format!("{}: bad time_index", loc())))?;
            let x: Vec<f64> = it
                .map(|t| t.trim().parse::<f64>())
                .collect::<std::result::Result<_, _>>()
                .map_err(|_| Error::Config(format!("{}: bad coordinate", loc())))?;
            if x.len() != d {
                return Err(Error::Config(format!(
                    "{}: expected {d} coordinates, found {}",
                    loc(),
                    x.len()
                )));
            }
            rows.push((i, j, x));
        }
        if rows.is_empty() {
            return Err(Error::Config("ensemble csv has no data rows".into()));
        }
        let n = rows.iter().map(|r| r.0).max().unwrap() + 1;
        let m = rows.iter().map(|r| r.1).max().unwrap();
        if rows.len() != n * (m + 1) {
            return Err(Error::Config(format!(
                "ensemble csv has {} rows, expected {n} particles × {} nodes",
                rows.len(),
                m + 1
            )));
        }
        let grid = TimeGrid::new(m)?;
        let mut states = Array3::from_elem((n, m + 1, d), f64::NAN);
        for (i, j, x) in rows {
            for (k, v) in x.into_iter().enumerate() {
                states[[i, j, k]] = v;
            }
        }
        ParticleEnsemble::from_states(grid, states)
    }
}

/// Constant-in-time trajectories: `states[i][j] = x0[i]` for every node.
pub fn init_trajectories(x0: ArrayView2<'_, f64>, grid: TimeGrid) -> ParticleEnsemble {
    let (n, d) = (x0.nrows(), x0.ncols());
    let mut states = Array3::zeros((n, grid.steps() + 1, d));
    for j in 0..=grid.steps() {
        states.slice_mut(s![.., j, ..]).assign(&x0);
    }
    ParticleEnsemble { grid, states }
}

/// Per-coordinate mean of a sample set, shape `d`.
pub fn sample_mean(xs: ArrayView2<'_, f64>) -> Array1<f64> {
    xs.mean_axis(Axis(0))
        .unwrap_or_else(|| Array1::zeros(xs.ncols()))
}

/// Per-coordinate (population) variance of a sample set, shape `d`.
pub fn sample_var_diag(xs: ArrayView2<'_, f64>) -> Array1<f64> {
    let n = xs.nrows();
    if n == 0 {
        return Array1::zeros(xs.ncols());
    }
    let mean = sample_mean(xs);
    let mut var = Array1::zeros(xs.ncols());
    for row in xs.rows() {
        for k in 0..xs.ncols() {
            let dev = row[k] - mean[k];
            var[k] += dev * dev;
        }
    }
    var / n as f64
}

fn _assert_views_compile(x: ArrayView1<'_, f64>) -> usize {
    x.len()
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;
    use ndarray::array;
    use proptest::prelude::*;

    fn grid(m: usize) -> TimeGrid {
        TimeGrid::new(m).unwrap()
    }

    #[test]
    fn grid_nodes_span_unit_interval_exactly() {
        for m in [1, 2, 3, 7, 20, 50, 1000] {
            let g = grid(m);
            let nodes = g.nodes();
            assert_eq!(nodes[0], 0.0);
            assert_eq!(nodes[m], 1.0);
            assert!(nodes.windows(2).all(|w| w[0] < w[1]), "strictly increasing");
            assert_abs_diff_eq!(g.dt() * m as f64, 1.0, epsilon = f64::EPSILON);
        }
    }

    #[test]
    fn grid_rejects_zero_steps() {
        assert!(matches!(TimeGrid::new(0), Err(Error::Config(_))));
    }

    #[test]
    fn gaussian_sampler_matches_configured_moments() {
        let dist = InitialDistribution::Gaussian {
            mean: array![0.0, 1.0],
            cov_diag: array![0.02, 0.1],
        };
        let xs = sample_initial(&dist, 10_000, 42).unwrap();
        let mean = sample_mean(xs.view());
        assert_abs_diff_eq!(mean[0], 0.0, epsilon = 0.01);
        assert_abs_diff_eq!(mean[1], 1.0, epsilon = 0.01);
        // empirical covariance diagonal within 5 standard errors: the
        // variance of the sample variance of a Gaussian is 2σ⁴/n.
        let var = sample_var_diag(xs.view());
        for (k, sigma2) in [0.02, 0.1].iter().enumerate() {
            let se = (2.0 * sigma2 * sigma2 / 10_000.0_f64).sqrt();
            assert!(
                (var[k] - sigma2).abs() <= 5.0 * se,
                "coordinate {k}: var {} vs configured {sigma2}",
                var[k]
            );
        }
    }

    #[test]
    fn gaussian_sampler_is_deterministic() {
        let dist = InitialDistribution::Gaussian {
            mean: array![0.0, 0.0, 0.0],
            cov_diag: array![1.0, 1.0, 1.0],
        };
        let a = sample_initial(&dist, 64, 7).unwrap();
        let b = sample_initial(&dist, 64, 7).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn gaussian_rejects_nonpositive_variance() {
        let dist = InitialDistribution::Gaussian {
            mean: array![0.0],
            cov_diag: array![0.0],
        };
        assert!(matches!(sample_initial(&dist, 4, 0), Err(Error::Config(_))));
    }

    #[test]
    fn sampler_rejects_empty_draw() {
        let dist = InitialDistribution::Gaussian {
            mean: array![0.0],
            cov_diag: array![1.0],
        };
        assert!(matches!(sample_initial(&dist, 0, 0), Err(Error::Config(_))));
    }

    #[test]
    fn checkerboard_mass_avoids_off_cells() {
        let dist = InitialDistribution::Checkerboard {
            cells: 4,
            extent: 4.0,
        };
        let xs = sample_initial(&dist, 100_000, 3).unwrap();
        let mut per_cell = [[0usize; 4]; 4];
        for row in xs.rows() {
            assert!(row[0] >= -2.0 && row[0] < 2.0);
            assert!(row[1] >= -2.0 && row[1] < 2.0);
            let ix = ((row[0] + 2.0).floor() as usize).min(3);
            let iy = ((row[1] + 2.0).floor() as usize).min(3);
            per_cell[ix][iy] += 1;
        }
        for (ix, column) in per_cell.iter().enumerate() {
            for (iy, &count) in column.iter().enumerate() {
                if (ix + iy) % 2 == 0 {
                    assert!(count > 0, "on-cell ({ix},{iy}) got no mass");
                } else {
                    assert_eq!(count, 0, "off-cell ({ix},{iy}) got mass");
                }
            }
        }
    }

    #[test]
    fn checkerboard_rejects_odd_cells() {
        let dist = InitialDistribution::Checkerboard {
            cells: 3,
            extent: 4.0,
        };
        assert!(matches!(sample_initial(&dist, 4, 0), Err(Error::Config(_))));
    }

    #[test]
    fn empirical_file_resamples_rows() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("init.csv");
        std::fs::write(&path, "0.5,1.5\n-0.25,2.0\n").unwrap();
        let dist = InitialDistribution::EmpiricalFile { path: path.clone() };
        let xs = sample_initial(&dist, 100, 11).unwrap();
        assert_eq!(xs.ncols(), 2);
        for row in xs.rows() {
            let is_first = row[0] == 0.5 && row[1] == 1.5;
            let is_second = row[0] == -0.25 && row[1] == 2.0;
            assert!(is_first || is_second, "draw {row:?} is not a file row");
        }
        let missing = InitialDistribution::EmpiricalFile {
            path: dir.path().join("absent.csv"),
        };
        assert!(matches!(
            sample_initial(&missing, 4, 0),
            Err(Error::Config(_))
        ));
    }

    #[test]
    fn init_trajectories_broadcasts_and_pins_node_zero() {
        let x0 = array![[1.0, 2.0]];
        let ens = init_trajectories(x0.view(), grid(2));
        assert_eq!(ens.n(), 1);
        assert_eq!(ens.d(), 2);
        for j in 0..=2 {
            assert_eq!(ens.states()[[0, j, 0]], 1.0);
            assert_eq!(ens.states()[[0, j, 1]], 2.0);
        }
        // empty ensemble is valid
        let empty = init_trajectories(Array2::zeros((0, 2)).view(), grid(4));
        assert_eq!(empty.n(), 0);
        assert_eq!(empty.dynamic_cost(), 0.0);
    }

    #[test]
    fn diff_t_on_linear_path_is_constant_velocity() {
        let g = grid(2);
        let mut states = Array3::zeros((1, 3, 1));
        states[[0, 0, 0]] = 0.0;
        states[[0, 1, 0]] = 0.5;
        states[[0, 2, 0]] = 1.0;
        let ens = ParticleEnsemble::from_states(g, states).unwrap();
        let dt = ens.diff_t(0);
        assert_eq!(dt, array![[1.0], [1.0]]);
    }

    #[test]
    fn diff_t_of_initialized_trajectories_is_zero() {
        let x0 = array![[0.3, -1.0], [2.0, 0.0]];
        let ens = init_trajectories(x0.view(), grid(5));
        for i in 0..2 {
            assert!(ens.diff_t(i).iter().all(|&v| v == 0.0));
        }
    }

    #[test]
    fn diff_t_tracks_quadratic_derivative_to_first_order() {
        let m = 100;
        let g = grid(m);
        let mut states = Array3::zeros((1, m + 1, 1));
        for j in 0..=m {
            let t = g.node(j);
            states[[0, j, 0]] = t * t;
        }
        let ens = ParticleEnsemble::from_states(g, states).unwrap();
        let dts = ens.diff_t(0);
        let max_err = (1..=m)
            .map(|j| (dts[[j - 1, 0]] - 2.0 * g.node(j)).abs())
            .fold(0.0, f64::max);
        assert!(max_err <= 2.0 * g.dt(), "max error {max_err}");
    }

    #[test]
    fn diff_tt_is_exact_on_quadratics_and_zero_on_lines() {
        let m = 50;
        let g = grid(m);
        let mut states = Array3::zeros((2, m + 1, 1));
        for j in 0..=m {
            let t = g.node(j);
            states[[0, j, 0]] = t * t; // curvature 2
            states[[1, j, 0]] = 3.0 * t - 1.0; // curvature 0
        }
        let ens = ParticleEnsemble::from_states(g, states).unwrap();
        for v in ens.diff_tt(0).iter() {
            assert_abs_diff_eq!(*v, 2.0, epsilon = 1e-9);
        }
        for v in ens.diff_tt(1).iter() {
            assert_abs_diff_eq!(*v, 0.0, epsilon = 1e-9);
        }
    }

    #[test]
    fn diff_tt_truncation_error_is_second_order_on_cosh() {
        let m = 100;
        let g = grid(m);
        let mut states = Array3::zeros((1, m + 1, 1));
        for j in 0..=m {
            states[[0, j, 0]] = g.node(j).cosh();
        }
        let ens = ParticleEnsemble::from_states(g, states).unwrap();
        let dtt = ens.diff_tt(0);
        // |D_tt cosh - cosh| <= dt²·sup|cosh⁗|/12 on [0,1]
        let bound = g.dt().powi(2) * 1.0_f64.cosh() / 12.0;
        for j in 1..m {
            let err = (dtt[[j - 1, 0]] - g.node(j).cosh()).abs();
            assert!(err <= bound * 1.01, "node {j}: err {err} > bound {bound}");
        }
    }

    #[test]
    fn dynamic_cost_of_unit_speed_line_is_half() {
        for m in [1, 4, 9] {
            let g = grid(m);
            let mut states = Array3::zeros((1, m + 1, 1));
            for j in 0..=m {
                states[[0, j, 0]] = g.node(j);
            }
            let ens = ParticleEnsemble::from_states(g, states).unwrap();
            assert_abs_diff_eq!(ens.dynamic_cost(), 0.5, epsilon = 1e-12);
        }
    }

    #[test]
    fn dynamic_cost_of_crossing_pair_averages_energies() {
        // Two unit-speed particles (0→1 and 1→0): each carries energy 1/2 and
        // the cost is an average over particles, so the pair still totals 1/2.
        let m = 4;
        let g = grid(m);
        let mut states = Array3::zeros((2, m + 1, 1));
        for j in 0..=m {
            let t = g.node(j);
            states[[0, j, 0]] = t;
            states[[1, j, 0]] = 1.0 - t;
        }
        let ens = ParticleEnsemble::from_states(g, states).unwrap();
        assert_abs_diff_eq!(ens.dynamic_cost(), 0.5, epsilon = 1e-12);
    }

    #[test]
    fn from_states_rejects_non_finite_and_reports_location() {
        let g = grid(3);
        let mut states = Array3::zeros((2, 4, 2));
        states[[1, 2, 0]] = f64::NAN;
        match ParticleEnsemble::from_states(g, states) {
            Err(Error::Optimization { particle, node }) => {
                assert_eq!((particle, node), (1, 2));
            }
            other => panic!("expected optimization error, got {other:?}"),
        }
    }

    #[test]
    fn csv_round_trip_is_lossless() {
        let x0 = array![[0.1, -2.5], [1e-17, 3.25]];
        let mut ens = init_trajectories(x0.view(), grid(3));
        // perturb to make the payload non-trivial
        let states = ens.states().clone();
        let mut states = states;
        states[[0, 2, 1]] = std::f64::consts::PI;
        ens = ParticleEnsemble::from_states(ens.grid(), states).unwrap();
        let mut buf = Vec::new();
        ens.write_csv(&mut buf).unwrap();
        let back = ParticleEnsemble::read_csv(std::io::Cursor::new(&buf)).unwrap();
        assert_eq!(back.states(), ens.states());
        assert_eq!(back.grid(), ens.grid());
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(32))]

        #[test]
        fn dynamic_cost_is_permutation_invariant(
            raw in proptest::collection::vec(-5.0..5.0f64, 3 * 5 * 2),
            swap in (0usize..3, 0usize..3),
        ) {
            let g = grid(4);
            let states = Array3::from_shape_vec((3, 5, 2), raw).unwrap();
            let ens = ParticleEnsemble::from_states(g, states.clone()).unwrap();
            let mut permuted = states;
            if swap.0 != swap.1 {
                let a = permuted.slice(s![swap.0, .., ..]).to_owned();
                let b = permuted.slice(s![swap.1, .., ..]).to_owned();
                permuted.slice_mut(s![swap.0, .., ..]).assign(&b);
                permuted.slice_mut(s![swap.1, .., ..]).assign(&a);
            }
            let ens2 = ParticleEnsemble::from_states(g, permuted).unwrap();
            prop_assert!((ens.dynamic_cost() - ens2.dynamic_cost()).abs() <= 1e-12);
        }

        #[test]
        fn straight_line_cost_telescopes_for_any_grid(
            x0 in proptest::collection::vec(-3.0..3.0f64, 4),
            x1 in proptest::collection::vec(-3.0..3.0f64, 4),
            m in 1usize..40,
        ) {
            let g = grid(m);
            let mut states = Array3::zeros((2, m + 1, 2));
            for j in 0..=m {
                let t = g.node(j);
                for i in 0..2 {
                    for k in 0..2 {
                        let (a, b) = (x0[i * 2 + k], x1[i * 2 + k]);
                        states[[i, j, k]] = a + t * (b - a);
                    }
                }
            }
            let ens = ParticleEnsemble::from_states(g, states).unwrap();
            let expected: f64 = (0..2)
                .map(|i| {
                    (0..2)
                        .map(|k| (x1[i * 2 + k] - x0[i * 2 + k]).powi(2))
                        .sum::<f64>()
                })
                .sum::<f64>() / (2.0 * 2.0);
            prop_assert!((ens.dynamic_cost() - expected).abs() <= 1e-9 * (1.0 + expected));
        }
    }
}
