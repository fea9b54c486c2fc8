//! Trajectory datasets of `(A, x, b)` tuples and their on-disk layout.

use std::fs;
use std::path::{Path, PathBuf};

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::fem::assemble::{assemble_with, eliminate_dirichlet, FemOperators, PdeKind, PdeProblem, StepState};
use crate::mesh::{generate_disk, generate_unit_square, BoundaryMark, TriangleMesh};
use crate::pcg::{pcg_solve, SolveOptions};
use crate::precond::build_ic0;
use crate::sparse::{mtx, CsrMatrix};

pub const MANIFEST_SCHEMA_VERSION: u32 = 1;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "snake_case")]
pub enum MeshSpec {
    UnitSquare { k: usize },
    Disk { rings: Vec<usize> },
    Obj { path: PathBuf },
}

impl MeshSpec {
    pub fn build(&self) -> Result<TriangleMesh> {
        match self {
            MeshSpec::UnitSquare { k } => generate_unit_square(*k),
            MeshSpec::Disk { rings } => generate_disk(rings),
            MeshSpec::Obj { path } => TriangleMesh::load_obj_file(path),
        }
    }

    pub fn id(&self) -> String {
        match self {
            MeshSpec::UnitSquare { k } => format!("square-{k}"),
            MeshSpec::Disk { rings } => format!("disk-{}", 1 + rings.iter().sum::<usize>()),
            MeshSpec::Obj { path } => path.file_stem().map_or("mesh".into(), |s| s.to_string_lossy().into_owned()),
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "snake_case")]
pub enum ParamDist {
    Fixed { value: f64 },
    Uniform { lo: f64, hi: f64 },
}

impl ParamDist {
    pub fn sample<R: Rng>(&self, rng: &mut R) -> f64 {
        match *self {
            ParamDist::Fixed { value } => value,
            ParamDist::Uniform { lo, hi } if hi > lo => rng.gen_range(lo..hi),
            ParamDist::Uniform { lo, .. } => lo,
        }
    }

    pub fn std_dev(&self) -> f64 {
        match *self {
            ParamDist::Fixed { .. } => 0.0,
            ParamDist::Uniform { lo, hi } => (hi - lo) / 12f64.sqrt(),
        }
    }

    /// Out-of-distribution point `hi + shift σ`; shift 0 leaves the
    /// distribution unchanged.
    pub fn shifted(&self, shift: f64) -> ParamDist {
        if shift == 0.0 {
            return *self;
        }
        match *self {
            ParamDist::Fixed { value } => ParamDist::Fixed { value },
            ParamDist::Uniform { hi, .. } => ParamDist::Fixed { value: hi + shift * self.std_dev() },
        }
    }

    fn validate(&self, what: &str) -> Result<()> {
        let ok = match *self {
            ParamDist::Fixed { value } => value > 0.0,
            ParamDist::Uniform { lo, hi } => lo > 0.0 && hi >= lo,
        };
        if ok {
            Ok(())
        } else {
            Err(Error::Config(format!("{what} must be positive")))
        }
    }
}

fn default_tolerance() -> f64 {
    1e-12
}

fn default_arc() -> [f64; 2] {
    [0.2, 0.6]
}

fn default_bump_width() -> [f64; 2] {
    [0.1, 0.3]
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DatasetConfig {
    pub name: String,
    pub kind: PdeKind,
    pub mesh: MeshSpec,
    pub trajectories: usize,
    pub steps: usize,
    pub seed: u64,
    pub dt: f64,
    /// Diffusion coefficient (heat) or source density scale (poisson).
    pub alpha: ParamDist,
    pub wave_speed: ParamDist,
    /// Dirichlet arc length range as fractions of the outer boundary loop.
    #[serde(default = "default_arc")]
    pub dirichlet_arc: [f64; 2],
    pub dirichlet_amplitude: f64,
    pub source_amplitude: f64,
    pub neumann_amplitude: f64,
    pub initial_bumps: usize,
    /// Bump width range as fractions of the bounding-box diagonal.
    #[serde(default = "default_bump_width")]
    pub bump_width: [f64; 2],
    /// Amplitude of independent uniform noise added to the initial field.
    #[serde(default)]
    pub initial_noise: f64,
    /// Whole trajectories held out for testing.
    pub test_trajectories: usize,
    #[serde(default = "default_tolerance")]
    pub tolerance: f64,
}

impl DatasetConfig {
    pub fn validate(&self) -> Result<()> {
        if self.steps == 0 {
            return Err(Error::Config("a trajectory needs at least one step".into()));
        }
        if self.trajectories == 0 {
            return Err(Error::Config("at least one trajectory is required".into()));
        }
        if self.test_trajectories > self.trajectories {
            return Err(Error::Config("more test trajectories than trajectories".into()));
        }
        if self.kind != PdeKind::Poisson && !(self.dt > 0.0) {
            return Err(Error::Config("dt must be positive".into()));
        }
        if !(self.bump_width[0] > 0.0 && self.bump_width[1] >= self.bump_width[0]) {
            return Err(Error::Config("bump_width must be a positive range".into()));
        }
        if !(self.tolerance > 0.0 && self.tolerance < 1.0) {
            return Err(Error::Config("tolerance must lie in (0, 1)".into()));
        }
        self.alpha.validate("alpha")?;
        self.wave_speed.validate("wave_speed")?;
        if !(20..=100).contains(&self.steps) {
            log::warn!("{} steps per trajectory is outside the usual 20-100", self.steps);
        }
        Ok(())
    }

    /// Copy whose physics parameter is moved `shift` standard deviations past
    /// the training interval.
    pub fn shifted(&self, shift: f64) -> DatasetConfig {
        let mut c = self.clone();
        match self.kind {
            PdeKind::Wave => c.wave_speed = self.wave_speed.shifted(shift),
            _ => c.alpha = self.alpha.shifted(shift),
        }
        if shift != 0.0 {
            c.name = format!("{}-shift{shift}", self.name);
        }
        c
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TupleMeta {
    pub id: usize,
    pub mesh: String,
    pub kind: PdeKind,
    pub trajectory: usize,
    pub step: usize,
    pub alpha: f64,
    pub wave_speed: f64,
    pub dt: f64,
}

/// One solved system; `x` satisfies `‖A x − b‖ / ‖b‖ ≤ 1e-10`.
#[derive(Clone, Debug, PartialEq)]
pub struct DatasetTuple {
    pub a: CsrMatrix,
    pub b: Vec<f64>,
    pub x: Vec<f64>,
    pub meta: TupleMeta,
}

impl DatasetTuple {
    pub fn relative_residual(&self) -> Result<f64> {
        let ax = self.a.spmv(&self.x)?;
        let r: f64 = ax.iter().zip(&self.b).map(|(p, q)| (p - q) * (p - q)).sum::<f64>().sqrt();
        let bn: f64 = self.b.iter().map(|v| v * v).sum::<f64>().sqrt();
        Ok(r / bn)
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct Trajectory {
    pub index: usize,
    pub tuples: Vec<DatasetTuple>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct Dataset {
    pub name: String,
    pub kind: PdeKind,
    pub mesh: TriangleMesh,
    pub mesh_id: String,
    pub seed: u64,
    pub train: Vec<Trajectory>,
    pub test: Vec<Trajectory>,
}

impl Dataset {
    pub fn train_tuples(&self) -> Vec<&DatasetTuple> {
        self.train.iter().flat_map(|t| &t.tuples).collect()
    }

    pub fn test_tuples(&self) -> Vec<&DatasetTuple> {
        self.test.iter().flat_map(|t| &t.tuples).collect()
    }
}

fn bump(p: [f64; 2], center: [f64; 2], width: f64) -> f64 {
    let d2 = (p[0] - center[0]).powi(2) + (p[1] - center[1]).powi(2);
    (-d2 / (2.0 * width * width)).exp()
}

struct RandomField {
    bumps: Vec<([f64; 2], f64, f64)>,
}

impl RandomField {
    fn sample<R: Rng>(rng: &mut R, count: usize, lo: [f64; 2], hi: [f64; 2], width: [f64; 2]) -> Self {
        let diam = ((hi[0] - lo[0]).powi(2) + (hi[1] - lo[1]).powi(2)).sqrt();
        let bumps = (0..count)
            .map(|_| {
                let c = [rng.gen_range(lo[0]..=hi[0]), rng.gen_range(lo[1]..=hi[1])];
                let w = rng.gen_range(width[0]..=width[1]) * diam;
                let amp = rng.gen_range(-1.0..=1.0);
                (c, w, amp)
            })
            .collect();
        Self { bumps }
    }

    fn eval(&self, p: [f64; 2], drift: [f64; 2]) -> f64 {
        self.bumps
            .iter()
            .map(|&(c, w, a)| a * bump(p, [c[0] + drift[0], c[1] + drift[1]], w))
            .sum()
    }
}

/// Simulates one trajectory. Randomness comes only from `rng`.
fn simulate_trajectory(
    config: &DatasetConfig,
    base: &TriangleMesh,
    ops: &FemOperators,
    mesh_id: &str,
    index: usize,
    rng: &mut ChaCha8Rng,
) -> Result<Trajectory> {
    let mesh = base.mark_dirichlet_arc(rng, config.dirichlet_arc[0], config.dirichlet_arc[1])?;
    let n = mesh.n_vertices();
    let alpha = config.alpha.sample(rng);
    let wave_speed = config.wave_speed.sample(rng);
    let g = config.dirichlet_amplitude * rng.gen_range(-1.0..=1.0);
    let flux = config.neumann_amplitude * rng.gen_range(-1.0..=1.0);
    let (lo, hi) = mesh.bounding_box();
    let initial = RandomField::sample(rng, config.initial_bumps, lo, hi, config.bump_width);
    let source_field = RandomField::sample(rng, 1, lo, hi, config.bump_width);
    let drift_dir = [rng.gen_range(-1.0..=1.0), rng.gen_range(-1.0..=1.0)];
    let span = (hi[0] - lo[0]).max(hi[1] - lo[1]);

    let mut problem = PdeProblem {
        kind: config.kind,
        alpha,
        wave_speed,
        dt: config.dt,
        source: vec![0.0; n],
        dirichlet_values: vec![g; n],
        neumann_values: vec![flux; n],
    };
    let source_scale = match config.kind {
        PdeKind::Poisson => config.source_amplitude * alpha,
        _ => config.source_amplitude,
    };
    let fill_source = |problem: &mut PdeProblem, step: usize| {
        let t = step as f64 / config.steps.max(1) as f64;
        let drift = match config.kind {
            PdeKind::Poisson => [0.5 * span * t * drift_dir[0], 0.5 * span * t * drift_dir[1]],
            _ => [0.0, 0.0],
        };
        for (v, p) in mesh.vertices().iter().enumerate() {
            problem.source[v] = source_scale * source_field.eval(*p, drift);
        }
    };
    fill_source(&mut problem, 0);

    let mut u_prev: Vec<f64> = mesh
        .vertices()
        .iter()
        .enumerate()
        .map(|(v, p)| {
            let noise = config.initial_noise * rng.gen_range(-1.0..=1.0);
            if mesh.marks()[v] == BoundaryMark::Dirichlet {
                g
            } else {
                initial.eval(*p, [0.0, 0.0]) + noise
            }
        })
        .collect();
    let mut u_prev2 = u_prev.clone();

    let first = assemble_with(ops, &mesh, &problem, state_for(config.kind, &u_prev, &u_prev2))?;
    let a = first.a;
    let dofs = first.dofs;
    let ic = build_ic0(&a)?;
    let solve_opts = SolveOptions::with_thresholds(&[config.tolerance]);

    let mut tuples = Vec::with_capacity(config.steps);
    for step in 0..config.steps {
        fill_source(&mut problem, step);
        let state = state_for(config.kind, &u_prev, &u_prev2);
        let rhs = ops.rhs(&mesh, &problem, state)?;
        let full = ops.operator(&problem)?;
        let (_, b) = eliminate_dirichlet(&full, &rhs, &dofs, &problem.dirichlet_values)?;
        let (x, report) = pcg_solve(&a, &b, &ic, &solve_opts)?;
        let next = dofs.expand(&x, &problem.dirichlet_values)?;
        let b_norm: f64 = b.iter().map(|v| v * v).sum::<f64>().sqrt();
        if b_norm == 0.0 {
            log::warn!("trajectory {index} step {step}: zero right-hand side, tuple rejected");
        } else if !report.converged || report.true_residual > 1e-10 {
            log::warn!(
                "trajectory {index} step {step}: solve stopped at residual {:e}, tuple rejected",
                report.true_residual
            );
        } else {
            tuples.push(DatasetTuple {
                a: a.clone(),
                b,
                x,
                meta: TupleMeta {
                    id: 0,
                    mesh: mesh_id.to_string(),
                    kind: config.kind,
                    trajectory: index,
                    step,
                    alpha,
                    wave_speed,
                    dt: config.dt,
                },
            });
        }
        u_prev2 = std::mem::replace(&mut u_prev, next);
    }
    Ok(Trajectory { index, tuples })
}

fn state_for<'a>(kind: PdeKind, u_prev: &'a [f64], u_prev2: &'a [f64]) -> StepState<'a> {
    match kind {
        PdeKind::Poisson => StepState::Static,
        PdeKind::Heat => StepState::Heat { u_prev },
        PdeKind::Wave => StepState::Wave { u_prev, u_prev2 },
    }
}

/// Simulates every trajectory of `config` on `mesh` and splits whole
/// trajectories into train and test sets with a seeded shuffle.
pub fn generate_dataset_on(config: &DatasetConfig, mesh: &TriangleMesh, mesh_id: &str) -> Result<Dataset> {
    config.validate()?;
    let ops = FemOperators::new(mesh)?;
    let mut trajectories = Vec::with_capacity(config.trajectories);
    for index in 0..config.trajectories {
        let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
        rng.set_stream(index as u64 + 1);
        trajectories.push(simulate_trajectory(config, mesh, &ops, mesh_id, index, &mut rng)?);
    }
    let mut order: Vec<usize> = (0..trajectories.len()).collect();
    order.shuffle(&mut ChaCha8Rng::seed_from_u64(config.seed));
    let test_set: Vec<usize> = order[..config.test_trajectories].to_vec();

    let mut train = Vec::new();
    let mut test = Vec::new();
    let mut id = 0;
    for mut t in trajectories {
        for tuple in &mut t.tuples {
            tuple.meta.id = id;
            id += 1;
        }
        if test_set.contains(&t.index) {
            test.push(t);
        } else {
            train.push(t);
        }
    }
    Ok(Dataset {
        name: config.name.clone(),
        kind: config.kind,
        mesh: mesh.clone(),
        mesh_id: mesh_id.to_string(),
        seed: config.seed,
        train,
        test,
    })
}

pub fn generate_dataset(config: &DatasetConfig) -> Result<Dataset> {
    let mesh = config.mesh.build()?;
    generate_dataset_on(config, &mesh, &config.mesh.id())
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Split {
    Train,
    Test,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TupleFiles {
    pub a: String,
    pub b: String,
    pub x: String,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TupleRecord {
    pub id: usize,
    pub split: Split,
    pub files: TupleFiles,
    pub meta: TupleMeta,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Manifest {
    pub schema_version: u32,
    pub name: String,
    pub kind: PdeKind,
    pub mesh_file: String,
    pub mesh_id: String,
    pub seed: u64,
    pub tuples: Vec<TupleRecord>,
}

fn write_file(path: &Path, contents: &str) -> Result<()> {
    fs::write(path, contents).map_err(|e| Error::file(path, e))
}

/// Writes `manifest.json`, `mesh.obj`, and `A_<id>.mtx`, `b_<id>.mtx`,
/// `x_<id>.mtx` for every tuple.
pub fn save_dataset(dataset: &Dataset, dir: &Path) -> Result<()> {
    fs::create_dir_all(dir).map_err(|e| Error::file(dir, e))?;
    write_file(&dir.join("mesh.obj"), &dataset.mesh.to_obj())?;
    let mut records = Vec::new();
    for (split, trajs) in [(Split::Train, &dataset.train), (Split::Test, &dataset.test)] {
        for t in trajs {
            for tuple in &t.tuples {
                let id = tuple.meta.id;
                let files = TupleFiles {
                    a: format!("A_{id:06}.mtx"),
                    b: format!("b_{id:06}.mtx"),
                    x: format!("x_{id:06}.mtx"),
                };
                write_file(&dir.join(&files.a), &mtx::write_symmetric(&tuple.a)?)?;
                write_file(&dir.join(&files.b), &mtx::write_vector(&tuple.b))?;
                write_file(&dir.join(&files.x), &mtx::write_vector(&tuple.x))?;
                records.push(TupleRecord { id, split: split.clone(), files, meta: tuple.meta.clone() });
            }
        }
    }
    records.sort_by_key(|r| r.id);
    let manifest = Manifest {
        schema_version: MANIFEST_SCHEMA_VERSION,
        name: dataset.name.clone(),
        kind: dataset.kind,
        mesh_file: "mesh.obj".into(),
        mesh_id: dataset.mesh_id.clone(),
        seed: dataset.seed,
        tuples: records,
    };
    write_file(&dir.join("manifest.json"), &serde_json::to_string_pretty(&manifest)?)
}

pub fn load_dataset(dir: &Path) -> Result<Dataset> {
    let manifest_path = dir.join("manifest.json");
    let text = fs::read_to_string(&manifest_path).map_err(|e| Error::file(&manifest_path, e))?;
    let manifest: Manifest = serde_json::from_str(&text)?;
    if manifest.schema_version != MANIFEST_SCHEMA_VERSION {
        return Err(Error::Config(format!("unsupported manifest schema {}", manifest.schema_version)));
    }
    let mesh = TriangleMesh::load_obj_file(&dir.join(&manifest.mesh_file))?;
    let mut train: Vec<Trajectory> = Vec::new();
    let mut test: Vec<Trajectory> = Vec::new();
    for rec in &manifest.tuples {
        let a = mtx::read_matrix_file(&dir.join(&rec.files.a))?;
        let b = mtx::read_vector_file(&dir.join(&rec.files.b))?;
        let x = mtx::read_vector_file(&dir.join(&rec.files.x))?;
        if b.len() != a.n() || x.len() != a.n() {
            return Err(Error::DimensionMismatch { expected: a.n(), found: b.len().min(x.len()) });
        }
        let tuple = DatasetTuple { a, b, x, meta: rec.meta.clone() };
        let bucket = match rec.split {
            Split::Train => &mut train,
            Split::Test => &mut test,
        };
        match bucket.iter_mut().find(|t| t.index == rec.meta.trajectory) {
            Some(t) => t.tuples.push(tuple),
            None => bucket.push(Trajectory { index: rec.meta.trajectory, tuples: vec![tuple] }),
        }
    }
    Ok(Dataset {
        name: manifest.name,
        kind: manifest.kind,
        mesh,
        mesh_id: manifest.mesh_id,
        seed: manifest.seed,
        train,
        test,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    pub(crate) fn small_config(kind: PdeKind) -> DatasetConfig {
        DatasetConfig {
            name: "small".into(),
            kind,
            mesh: MeshSpec::UnitSquare { k: 6 },
            trajectories: 3,
            steps: 4,
            seed: 11,
            dt: 0.01,
            alpha: ParamDist::Uniform { lo: 0.5, hi: 1.0 },
            wave_speed: ParamDist::Uniform { lo: 0.5, hi: 1.0 },
            dirichlet_arc: [0.2, 0.6],
            dirichlet_amplitude: 0.5,
            source_amplitude: 1.0,
            neumann_amplitude: 0.1,
            initial_bumps: 3,
            bump_width: [0.1, 0.3],
            initial_noise: 0.0,
            test_trajectories: 1,
            tolerance: 1e-12,
        }
    }

    #[test]
    fn every_kind_generates_converged_tuples() {
        for kind in [PdeKind::Poisson, PdeKind::Heat, PdeKind::Wave] {
            let ds = generate_dataset(&small_config(kind)).unwrap();
            assert_eq!(ds.train.len(), 2);
            assert_eq!(ds.test.len(), 1);
            for t in ds.train_tuples().into_iter().chain(ds.test_tuples()) {
                assert!(t.relative_residual().unwrap() <= 1e-10);
                assert!(t.a.is_symmetric());
            }
        }
    }

    #[test]
    fn zero_steps_is_rejected() {
        let mut c = small_config(PdeKind::Heat);
        c.steps = 0;
        assert!(matches!(generate_dataset(&c), Err(Error::Config(_))));
    }

    #[test]
    fn shift_moves_parameter_past_interval() {
        let d = ParamDist::Uniform { lo: 0.001, hi: 0.005 };
        assert_eq!(d.shifted(0.0), d);
        let ParamDist::Fixed { value } = d.shifted(1.0) else { panic!() };
        assert!((value - (0.005 + 0.004 / 12f64.sqrt())).abs() < 1e-15);
    }
}
