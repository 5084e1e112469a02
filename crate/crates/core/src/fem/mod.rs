//! Lowest-order Raviart-Thomas / piecewise-constant mixed finite elements for
//! the flow cell `-div(a ∇u) = 0` on `[-1, 1]²` with `u = (1 - x)/2` on the
//! left and right sides and no flow through the top and bottom.
//!
//! Flux unknowns are the total normal fluxes across the globally oriented
//! edges; Neumann edges carry zero flux and have no unknown.

pub mod mesh;

pub use mesh::{EdgeTag, Mesh, MeshLevel};

use crate::error::{invalid, Error, Result};
use crate::levy::LatticeField;
use crate::linalg::{invert_3x3, norm2, reverse_cuthill_mckee, CsrMatrix, SkylineCholesky};
use crate::scalar::Real;

/// Scalar conductivity `a(x, y) > 0`.
pub trait Conductivity<T>: Sync {
    fn eval(&self, x: T, y: T) -> T;
}

impl<T, F> Conductivity<T> for F
where
    F: Fn(T, T) -> T + Sync,
{
    fn eval(&self, x: T, y: T) -> T {
        self(x, y)
    }
}

/// Dirichlet data of the flow cell.
pub fn flow_cell_dirichlet<T: Real>(x: T, _y: T) -> T {
    (T::one() - x) / T::of(2.0)
}

/// The flow-cell problem on a given mesh.
pub struct FlowCellProblem<'m, T, C> {
    pub mesh: &'m Mesh<T>,
    pub conductivity: C,
}

impl<'m, T: Real, C: Conductivity<T>> FlowCellProblem<'m, T, C> {
    pub fn new(mesh: &'m Mesh<T>, conductivity: C) -> Self {
        Self { mesh, conductivity }
    }
}

/// Assembled saddle-point system `[[A, B], [Bᵀ, 0]] [σ; u] = [g; f]`.
#[derive(Debug, Clone)]
pub struct MixedSystem<'m, T> {
    pub mesh: &'m Mesh<T>,
    /// Flux unknown of each edge; `None` for Neumann edges.
    pub dof_of_edge: Vec<Option<usize>>,
    pub a: CsrMatrix<T>,
    pub b: CsrMatrix<T>,
    pub rhs_g: Vec<T>,
    pub rhs_f: Vec<T>,
    /// Element matrices `∫ a⁻¹ φ_i · φ_j` in the local outward orientation.
    pub local: Vec<[[T; 3]; 3]>,
}

impl<T: Real> MixedSystem<'_, T> {
    pub fn n_dofs(&self) -> usize {
        self.rhs_g.len()
    }

    /// Relative residual `|K x - rhs| / |rhs|` of the saddle-point system.
    pub fn residual(&self, sigma_dofs: &[T], u: &[T]) -> T {
        let mut r1 = self.a.matvec(sigma_dofs);
        for (r, v) in r1.iter_mut().zip(self.b.matvec(u)) {
            *r += v;
        }
        for (r, &g) in r1.iter_mut().zip(&self.rhs_g) {
            *r -= g;
        }
        let mut r2 = self.b.matvec_transpose(sigma_dofs);
        for (r, &f) in r2.iter_mut().zip(&self.rhs_f) {
            *r -= f;
        }
        let num = (norm2(&r1).powi(2) + norm2(&r2).powi(2)).sqrt();
        let den = (norm2(&self.rhs_g).powi(2) + norm2(&self.rhs_f).powi(2)).sqrt();
        if den > T::zero() {
            num / den
        } else {
            num
        }
    }
}

/// Discrete flux and potential.
#[derive(Debug, Clone, PartialEq)]
pub struct FemSolution<T> {
    /// Potential per triangle.
    pub u: Vec<T>,
    /// Flux across each globally oriented edge (zero on Neumann edges).
    pub sigma: Vec<T>,
    pub residual_norm: T,
}

/// Outward fluxes summed per boundary side.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct BoundaryFluxes<T> {
    pub left: T,
    pub right: T,
    pub top: T,
    pub bottom: T,
}

impl<T: Real> BoundaryFluxes<T> {
    pub fn total(&self) -> T {
        self.left + self.right + self.top + self.bottom
    }
}

/// Residual bound for a successful solve.
pub const SOLVER_TOLERANCE: f64 = 1e-10;

/// `φ_i(x) = (x - p_i) / (2|K|)`: unit outward flux through local edge `i`.
fn rt0_basis<T: Real>(corners: &[[T; 2]; 3], area: T, i: usize, x: [T; 2]) -> [T; 2] {
    let s = T::one() / (T::of(2.0) * area);
    [(x[0] - corners[i][0]) * s, (x[1] - corners[i][1]) * s]
}

/// Element matrix with `a⁻¹` sampled at the three edge midpoints.
pub fn element_matrix<T: Real, C: Conductivity<T> + ?Sized>(corners: &[[T; 2]; 3], area: T, a: &C) -> Result<[[T; 3]; 3]> {
    let two = T::of(2.0);
    let mut m = [[T::zero(); 3]; 3];
    let w = area / T::of(3.0);
    for k in 0..3 {
        let p = corners[(k + 1) % 3];
        let q = corners[(k + 2) % 3];
        let mid = [(p[0] + q[0]) / two, (p[1] + q[1]) / two];
        let av = a.eval(mid[0], mid[1]);
        if !(av > T::zero()) || !av.is_finite() {
            return Err(Error::EllipticityViolation {
                x: mid[0].to_f64_lossy(),
                y: mid[1].to_f64_lossy(),
                value: av.to_f64_lossy(),
            });
        }
        let phi: [[T; 2]; 3] = std::array::from_fn(|i| rt0_basis(corners, area, i, mid));
        let c = w / av;
        for i in 0..3 {
            for j in 0..3 {
                m[i][j] += c * (phi[i][0] * phi[j][0] + phi[i][1] * phi[j][1]);
            }
        }
    }
    Ok(m)
}

/// Assemble the mixed system for the flow cell.
pub fn assemble<'m, T: Real, C: Conductivity<T>>(problem: &FlowCellProblem<'m, T, C>) -> Result<MixedSystem<'m, T>> {
    let mesh = problem.mesh;
    let mut dof_of_edge = vec![None; mesh.n_edges()];
    let mut n_dofs = 0;
    for (e, tag) in mesh.tags().iter().enumerate() {
        if !tag.is_neumann() {
            dof_of_edge[e] = Some(n_dofs);
            n_dofs += 1;
        }
    }
    let nt = mesh.n_triangles();
    let mut local = Vec::with_capacity(nt);
    let mut a_trip = Vec::with_capacity(9 * nt);
    let mut b_trip = Vec::with_capacity(3 * nt);
    let mut rhs_g = vec![T::zero(); n_dofs];
    for t in 0..nt {
        let corners = mesh.corners(t);
        let m = element_matrix(&corners, mesh.area(t), &problem.conductivity)?;
        let edges = mesh.triangle_edges(t);
        let signs = mesh.triangle_signs(t);
        for i in 0..3 {
            let Some(di) = dof_of_edge[edges[i]] else { continue };
            let si = T::of(signs[i] as f64);
            b_trip.push((di, t, si));
            for j in 0..3 {
                if let Some(dj) = dof_of_edge[edges[j]] {
                    let sj = T::of(signs[j] as f64);
                    a_trip.push((di, dj, si * sj * m[i][j]));
                }
            }
            if mesh.tags()[edges[i]].is_dirichlet() {
                let mid = mesh.edge_midpoint(edges[i]);
                rhs_g[di] = si * flow_cell_dirichlet(mid[0], mid[1]);
            }
        }
        local.push(m);
    }
    Ok(MixedSystem {
        mesh,
        dof_of_edge,
        a: CsrMatrix::from_triplets(n_dofs, n_dofs, a_trip),
        b: CsrMatrix::from_triplets(n_dofs, nt, b_trip),
        rhs_g,
        rhs_f: vec![T::zero(); nt],
        local,
    })
}

/// Solve by hybridization: eliminate fluxes and potentials element by element,
/// solve the symmetric positive-definite system for the potential traces on
/// interior and Neumann edges, then recover the element unknowns.
pub fn solve<T: Real>(system: &MixedSystem<'_, T>) -> Result<FemSolution<T>> {
    let mesh = system.mesh;
    let nt = mesh.n_triangles();
    // trace unknowns on non-Dirichlet edges
    let mut trace_of_edge = vec![None; mesh.n_edges()];
    let mut n_trace = 0;
    for (e, tag) in mesh.tags().iter().enumerate() {
        if !tag.is_dirichlet() {
            trace_of_edge[e] = Some(n_trace);
            n_trace += 1;
        }
    }
    let mut schur = Vec::with_capacity(nt);
    let mut weights = Vec::with_capacity(nt);
    let mut trip = Vec::with_capacity(9 * nt);
    let mut rhs = vec![T::zero(); n_trace];
    let mut adjacency = vec![Vec::new(); n_trace];
    for t in 0..nt {
        let inv = invert_3x3(&system.local[t])?;
        let w: [T; 3] = std::array::from_fn(|i| inv[i][0] + inv[i][1] + inv[i][2]);
        let c = w[0] + w[1] + w[2];
        let s: [[T; 3]; 3] = std::array::from_fn(|i| std::array::from_fn(|j| inv[i][j] - w[i] * w[j] / c));
        let edges = mesh.triangle_edges(t);
        let dirichlet: [Option<T>; 3] = std::array::from_fn(|j| {
            let e = edges[j];
            mesh.tags()[e].is_dirichlet().then(|| {
                let mid = mesh.edge_midpoint(e);
                flow_cell_dirichlet(mid[0], mid[1])
            })
        });
        for i in 0..3 {
            let Some(ti) = trace_of_edge[edges[i]] else { continue };
            for j in 0..3 {
                match (trace_of_edge[edges[j]], dirichlet[j]) {
                    (Some(tj), _) => {
                        trip.push((ti, tj, s[i][j]));
                        if ti != tj && !adjacency[ti].contains(&tj) {
                            adjacency[ti].push(tj);
                        }
                    }
                    (None, Some(g)) => rhs[ti] -= s[i][j] * g,
                    (None, None) => unreachable!(),
                }
            }
        }
        schur.push(s);
        weights.push((w, c, inv));
    }
    let perm = reverse_cuthill_mckee(&adjacency);
    let chol = SkylineCholesky::factor(n_trace, &trip, perm).map_err(|_| Error::SolverFailure { residual: f64::NAN })?;
    let lambda = chol.solve(&rhs);

    let mut u = vec![T::zero(); nt];
    let mut sigma = vec![T::zero(); mesh.n_edges()];
    let mut seen = vec![false; mesh.n_edges()];
    for t in 0..nt {
        let edges = mesh.triangle_edges(t);
        let signs = mesh.triangle_signs(t);
        let g: [T; 3] = std::array::from_fn(|j| match trace_of_edge[edges[j]] {
            Some(k) => lambda[k],
            None => {
                let mid = mesh.edge_midpoint(edges[j]);
                flow_cell_dirichlet(mid[0], mid[1])
            }
        });
        let (w, c, _) = &weights[t];
        u[t] = (w[0] * g[0] + w[1] * g[1] + w[2] * g[2]) / *c;
        let s = &schur[t];
        for i in 0..3 {
            let e = edges[i];
            if mesh.tags()[e].is_neumann() || seen[e] {
                continue;
            }
            let out = s[i][0] * g[0] + s[i][1] * g[1] + s[i][2] * g[2];
            sigma[e] = T::of(signs[i] as f64) * out;
            seen[e] = true;
        }
    }
    let sigma_dofs: Vec<T> = system.dof_of_edge.iter().enumerate().filter_map(|(e, d)| d.map(|_| sigma[e])).collect();
    let residual = system.residual(&sigma_dofs, &u);
    if !(residual <= T::of(SOLVER_TOLERANCE)) {
        return Err(Error::SolverFailure { residual: residual.to_f64_lossy() });
    }
    Ok(FemSolution { u, sigma, residual_norm: residual })
}

/// Outward flux per boundary side.
pub fn boundary_fluxes<T: Real>(solution: &FemSolution<T>, mesh: &Mesh<T>) -> BoundaryFluxes<T> {
    let mut f = BoundaryFluxes { left: T::zero(), right: T::zero(), top: T::zero(), bottom: T::zero() };
    for t in 0..mesh.n_triangles() {
        let edges = mesh.triangle_edges(t);
        let signs = mesh.triangle_signs(t);
        for i in 0..3 {
            let e = edges[i];
            let out = T::of(signs[i] as f64) * solution.sigma[e];
            match mesh.tags()[e] {
                EdgeTag::Interior => {}
                EdgeTag::DirichletLeft => f.left += out,
                EdgeTag::DirichletRight => f.right += out,
                EdgeTag::NeumannTop => f.top += out,
                EdgeTag::NeumannBottom => f.bottom += out,
            }
        }
    }
    f
}

/// `Q = ∫_right -σ·n ds`.
pub fn qoi_flux<T: Real>(solution: &FemSolution<T>, mesh: &Mesh<T>) -> T {
    -boundary_fluxes(solution, mesh).right
}

/// Assemble, solve and return the outflow flux for conductivity `a`.
pub fn solve_flow_cell<T: Real, C: Conductivity<T>>(mesh: &Mesh<T>, conductivity: C) -> Result<T> {
    let problem = FlowCellProblem::new(mesh, conductivity);
    let system = assemble(&problem)?;
    let solution = solve(&system)?;
    Ok(qoi_flux(&solution, mesh))
}

/// Outflow flux for `a = exp(Z)` with `Z` interpolated from a lattice field.
pub fn solve_realization<T: Real>(field: &LatticeField<T>, mesh: &Mesh<T>) -> Result<T> {
    if field.lattice().dim() != 2 {
        return Err(invalid("flow cell needs a two-dimensional field"));
    }
    solve_flow_cell(mesh, |x: T, y: T| field.interpolate(&[x, y]).exp())
}
