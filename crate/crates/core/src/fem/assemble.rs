use serde::{Deserialize, Serialize};

use crate::error::{check_dim, Error, Result};
use crate::fem::element::{element_mass, element_stiffness};
use crate::mesh::{BoundaryMark, TriangleMesh};
use crate::sparse::CsrMatrix;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PdeKind {
    Poisson,
    Heat,
    Wave,
}

impl PdeKind {
    pub fn name(self) -> &'static str {
        match self {
            PdeKind::Poisson => "poisson",
            PdeKind::Heat => "heat",
            PdeKind::Wave => "wave",
        }
    }
}

impl std::str::FromStr for PdeKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "poisson" => Ok(PdeKind::Poisson),
            "heat" => Ok(PdeKind::Heat),
            "wave" => Ok(PdeKind::Wave),
            other => Err(Error::Config(format!("unknown PDE kind {other}"))),
        }
    }
}

/// One PDE instance on a mesh. Per-vertex arrays are indexed by mesh vertex;
/// `dirichlet_values` is read at dirichlet vertices and `neumann_values` at
/// neumann vertices only.
#[derive(Clone, Debug, PartialEq)]
pub struct PdeProblem {
    pub kind: PdeKind,
    pub alpha: f64,
    pub wave_speed: f64,
    pub dt: f64,
    pub source: Vec<f64>,
    pub dirichlet_values: Vec<f64>,
    pub neumann_values: Vec<f64>,
}

impl PdeProblem {
    /// Zero source and boundary data.
    pub fn new(kind: PdeKind, n_vertices: usize) -> Self {
        Self {
            kind,
            alpha: 1.0,
            wave_speed: 1.0,
            dt: 1.0,
            source: vec![0.0; n_vertices],
            dirichlet_values: vec![0.0; n_vertices],
            neumann_values: vec![0.0; n_vertices],
        }
    }

    pub fn validate(&self, n_vertices: usize) -> Result<()> {
        check_dim(n_vertices, self.source.len())?;
        check_dim(n_vertices, self.dirichlet_values.len())?;
        check_dim(n_vertices, self.neumann_values.len())?;
        match self.kind {
            PdeKind::Heat if !(self.alpha > 0.0) => Err(Error::Config("heat needs alpha > 0".into())),
            PdeKind::Wave if !(self.wave_speed > 0.0) => Err(Error::Config("wave needs wave_speed > 0".into())),
            PdeKind::Heat | PdeKind::Wave if !(self.dt > 0.0) => Err(Error::Config("dt must be positive".into())),
            _ => Ok(()),
        }
    }

    /// Coefficient multiplying the stiffness matrix in the system operator.
    fn stiffness_weight(&self) -> f64 {
        match self.kind {
            PdeKind::Poisson => 1.0,
            PdeKind::Heat => self.dt * self.alpha,
            PdeKind::Wave => self.dt * self.dt * self.wave_speed * self.wave_speed,
        }
    }
}

/// Previous time levels, indexed by mesh vertex.
#[derive(Clone, Copy, Debug)]
pub enum StepState<'a> {
    Static,
    Heat { u_prev: &'a [f64] },
    Wave { u_prev: &'a [f64], u_prev2: &'a [f64] },
}

/// Map between mesh vertices and the unknowns left after eliminating
/// dirichlet vertices.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct DofMap {
    free: Vec<usize>,
    dof_of: Vec<Option<usize>>,
}

impl DofMap {
    pub fn new(mesh: &TriangleMesh) -> Self {
        let mut free: Vec<usize> = (0..mesh.n_vertices())
            .filter(|&v| mesh.marks()[v] != BoundaryMark::Dirichlet)
            .collect();
        let p = mesh.vertices();
        free.sort_by(|&u, &v| p[u][1].total_cmp(&p[v][1]).then(p[u][0].total_cmp(&p[v][0])).then(u.cmp(&v)));
        let mut dof_of = vec![None; mesh.n_vertices()];
        for (d, &v) in free.iter().enumerate() {
            dof_of[v] = Some(d);
        }
        Self { free, dof_of }
    }

    pub fn n_dofs(&self) -> usize {
        self.free.len()
    }

    pub fn free_vertices(&self) -> &[usize] {
        &self.free
    }

    pub fn dof(&self, vertex: usize) -> Option<usize> {
        self.dof_of[vertex]
    }

    pub fn restrict(&self, full: &[f64]) -> Vec<f64> {
        self.free.iter().map(|&v| full[v]).collect()
    }

    /// Full vertex field: unknowns from `reduced`, dirichlet vertices from
    /// `dirichlet_values`.
    pub fn expand(&self, reduced: &[f64], dirichlet_values: &[f64]) -> Result<Vec<f64>> {
        check_dim(self.free.len(), reduced.len())?;
        check_dim(self.dof_of.len(), dirichlet_values.len())?;
        Ok((0..self.dof_of.len())
            .map(|v| match self.dof_of[v] {
                Some(d) => reduced[d],
                None => dirichlet_values[v],
            })
            .collect())
    }
}

/// Global stiffness and mass matrices over all mesh vertices, sharing the
/// mesh-edge sparsity pattern.
#[derive(Clone, Debug)]
pub struct FemOperators {
    pub stiffness: CsrMatrix,
    pub mass: CsrMatrix,
    boundary_edges: Vec<(usize, usize, f64)>,
}

impl FemOperators {
    pub fn new(mesh: &TriangleMesh) -> Result<Self> {
        let n = mesh.n_vertices();
        let mut k_trip = Vec::with_capacity(9 * mesh.triangles().len());
        let mut m_trip = Vec::with_capacity(9 * mesh.triangles().len());
        for (t, tri) in mesh.triangles().iter().enumerate() {
            let coords = mesh.triangle_coords(t);
            let ke = element_stiffness(&coords).map_err(|_| Error::DegenerateTriangle { index: t })?;
            let me = element_mass(&coords).map_err(|_| Error::DegenerateTriangle { index: t })?;
            for a in 0..3 {
                for b in 0..3 {
                    k_trip.push((tri[a], tri[b], ke[a][b]));
                    m_trip.push((tri[a], tri[b], me[a][b]));
                }
            }
        }
        let boundary_edges = mesh
            .boundary_edges()
            .into_iter()
            .map(|(a, b)| {
                let (p, q) = (mesh.vertices()[a], mesh.vertices()[b]);
                (a, b, ((p[0] - q[0]).powi(2) + (p[1] - q[1]).powi(2)).sqrt())
            })
            .collect();
        Ok(Self {
            stiffness: CsrMatrix::from_triplets(n, &k_trip)?,
            mass: CsrMatrix::from_triplets(n, &m_trip)?,
            boundary_edges,
        })
    }

    /// Full-vertex system operator for `problem`.
    pub fn operator(&self, problem: &PdeProblem) -> Result<CsrMatrix> {
        match problem.kind {
            PdeKind::Poisson => Ok(self.stiffness.clone()),
            _ => self.mass.add_scaled_same_pattern(problem.stiffness_weight(), &self.stiffness),
        }
    }

    /// Boundary flux load `∫ N φ_i ds`, lumped half to each edge endpoint.
    fn neumann_load(&self, mesh: &TriangleMesh, values: &[f64]) -> Vec<f64> {
        let mut load = vec![0.0; mesh.n_vertices()];
        for &(a, b, len) in &self.boundary_edges {
            for v in [a, b] {
                if mesh.marks()[v] == BoundaryMark::Neumann {
                    load[v] += 0.5 * len * values[v];
                }
            }
        }
        load
    }

    /// Full-vertex right-hand side before dirichlet elimination.
    pub fn rhs(&self, mesh: &TriangleMesh, problem: &PdeProblem, state: StepState<'_>) -> Result<Vec<f64>> {
        let n = mesh.n_vertices();
        let mut rhs = vec![0.0; n];
        let source_load = self.mass.spmv(&problem.source)?;
        let neumann = self.neumann_load(mesh, &problem.neumann_values);
        let (source_weight, flux_weight) = match (problem.kind, state) {
            (PdeKind::Poisson, StepState::Static) => (1.0, 1.0),
            (PdeKind::Heat, StepState::Heat { u_prev }) => {
                check_dim(n, u_prev.len())?;
                rhs = self.mass.spmv(u_prev)?;
                (problem.dt, problem.dt * problem.alpha)
            }
            (PdeKind::Wave, StepState::Wave { u_prev, u_prev2 }) => {
                check_dim(n, u_prev.len())?;
                check_dim(n, u_prev2.len())?;
                let extrap: Vec<f64> = u_prev.iter().zip(u_prev2).map(|(a, b)| 2.0 * a - b).collect();
                rhs = self.mass.spmv(&extrap)?;
                let dt2 = problem.dt * problem.dt;
                (dt2, dt2 * problem.wave_speed * problem.wave_speed)
            }
            (kind, _) => {
                return Err(Error::Config(format!("state does not match PDE kind {}", kind.name())))
            }
        };
        for ((r, s), q) in rhs.iter_mut().zip(&source_load).zip(&neumann) {
            *r += source_weight * s + flux_weight * q;
        }
        Ok(rhs)
    }
}

/// A reduced SPD system `A x = b` over the free unknowns.
#[derive(Clone, Debug)]
pub struct LinearSystem {
    pub a: CsrMatrix,
    pub b: Vec<f64>,
    pub dofs: DofMap,
}

/// Eliminates dirichlet rows and columns symmetrically: known values move to
/// the right-hand side and the free-free block is returned.
pub fn eliminate_dirichlet(
    full: &CsrMatrix,
    rhs: &[f64],
    dofs: &DofMap,
    dirichlet_values: &[f64],
) -> Result<(CsrMatrix, Vec<f64>)> {
    check_dim(full.n(), rhs.len())?;
    let a = full.principal_submatrix(dofs.free_vertices());
    let b = dofs
        .free_vertices()
        .iter()
        .map(|&v| {
            let (cols, vals) = full.row(v);
            let known: f64 = cols
                .iter()
                .zip(vals)
                .filter(|(&j, _)| dofs.dof(j).is_none())
                .map(|(&j, &w)| w * dirichlet_values[j])
                .sum();
            rhs[v] - known
        })
        .collect();
    Ok((a, b))
}

/// Assembles the reduced system for one solve of `problem` on `mesh`.
pub fn assemble(mesh: &TriangleMesh, problem: &PdeProblem, state: StepState<'_>) -> Result<LinearSystem> {
    problem.validate(mesh.n_vertices())?;
    if problem.kind == PdeKind::Poisson && mesh.dirichlet_vertices().is_empty() {
        // pure Neumann Poisson has the constants in its kernel
        return Err(Error::EmptyDirichlet);
    }
    let ops = FemOperators::new(mesh)?;
    assemble_with(&ops, mesh, problem, state)
}

/// As [`assemble`], reusing precomputed operators.
pub fn assemble_with(
    ops: &FemOperators,
    mesh: &TriangleMesh,
    problem: &PdeProblem,
    state: StepState<'_>,
) -> Result<LinearSystem> {
    let dofs = DofMap::new(mesh);
    if dofs.n_dofs() == 0 {
        return Err(Error::Mesh("every vertex is dirichlet".into()));
    }
    let full = ops.operator(problem)?;
    let rhs = ops.rhs(mesh, problem, state)?;
    let (a, b) = eliminate_dirichlet(&full, &rhs, &dofs, &problem.dirichlet_values)?;
    Ok(LinearSystem { a, b, dofs })
}
