//! The pressure-stabilized projection Lagrange–Galerkin time stepper.
//!
//! Each step from `tⁿ` to `tⁿ⁺¹` runs three decoupled symmetric solves:
//!
//! 1. `(i_h^T u_hⁿ, v) = (ũ_hⁿ − Δt∇(p_hⁿ − p_hⁿ⁻¹), v)` — a mass solve per
//!    component, skipped at `n = 0` where `i_h^T u_h⁰ = ũ_h⁰`.
//! 2. `(1/Δt)(ũ_hⁿ⁺¹, v) + ν(∇ũ_hⁿ⁺¹, ∇v) = (1/Δt)((i_h^T u_hⁿ) ∘ X₁(w_hⁿ), v)
//!    − (∇p_hⁿ, v) + (fⁿ⁺¹, v)` — one SPD solve per component.
//! 3. `(∇p_hⁿ⁺¹, ∇q) + (δ₀/Δt) s₀(p_hⁿ⁺¹, q) = (∇p_hⁿ, ∇q) + (1/Δt)(ũ_hⁿ⁺¹, ∇q)`
//!    — a Neumann problem solved with deflation.
//!
//! The end-of-step velocity `u_hⁿ = ũ_hⁿ − Δt∇(p_hⁿ − p_hⁿ⁻¹)` is never
//! stored; diagnostics rebuild what they need from `ũ_h` and the pressures.

use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::PathBuf;
use std::sync::Arc;

use crate::assembly::{
    assemble_load, assemble_mass, assemble_pressure_gradient, assemble_stabilization, assemble_stiffness,
    solve_stokes_projection,
};
use crate::characteristics::{build_linearized_velocity, integrate_composed_term, ComposedIntegration};
use crate::fe_space::{
    build_space, interpolate_vector, lagrange_interpolate, Constraint, DofMap, ScalarField, ScalarSpace, VectorField,
};
use crate::linalg::{cg_solve_from, norm, CgOptions, CsrMatrix, DeflationVector, SparseSym};
use crate::mesh::TriMesh;
use crate::problems::{ErrorAccumulator, ErrorReport, OseenProblem, Snapshot, StabilizationProbe};
use crate::{Error, Result};

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum InitMode {
    /// Nodal interpolation of `(u⁰, p⁰)`.
    Lagrange,
    /// Stabilized Stokes projection of `(u⁰, p⁰)`.
    StokesProjection,
}

#[derive(Clone, Debug)]
pub struct SchemeParams {
    /// Velocity degree.
    pub k: usize,
    /// Pressure degree.
    pub l: usize,
    pub delta0: f64,
    pub nu: f64,
    pub dt: f64,
    pub t_final: f64,
    pub cg_tol: f64,
    pub init_mode: InitMode,
    pub composed: ComposedIntegration,
}

impl SchemeParams {
    pub fn new(k: usize, l: usize, delta0: f64, nu: f64, dt: f64, t_final: f64) -> Self {
        Self {
            k,
            l,
            delta0,
            nu,
            dt,
            t_final,
            cg_tol: 1e-10,
            init_mode: InitMode::Lagrange,
            composed: ComposedIntegration::Exact,
        }
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |msg: String| Err(Error::InvalidParams(msg));
        if !(1..=2).contains(&self.k) || !(1..=2).contains(&self.l) {
            return bad(format!("degrees (k, l) = ({}, {}) must lie in {{1, 2}}", self.k, self.l));
        }
        if !(self.delta0 >= 0.0) {
            return bad(format!("delta0 must be non-negative, got {}", self.delta0));
        }
        if self.delta0 == 0.0 && (self.k, self.l) != (2, 1) {
            return bad(format!(
                "P{}/P{} is not inf-sup stable and needs delta0 > 0",
                self.k, self.l
            ));
        }
        if !(self.nu > 0.0) {
            return bad(format!("viscosity must be positive, got {}", self.nu));
        }
        if !(self.dt > 0.0) || !self.dt.is_finite() {
            return bad(format!("time step must be positive, got {}", self.dt));
        }
        if !(self.t_final >= 0.0) {
            return bad(format!("final time must be non-negative, got {}", self.t_final));
        }
        if !(self.cg_tol > 0.0) {
            return bad(format!("cg_tol must be positive, got {}", self.cg_tol));
        }
        Ok(())
    }

    /// `N_T = ⌊T/Δt⌋`, robust to `T/Δt` landing a rounding error below an
    /// integer.
    pub fn num_steps(&self) -> usize {
        ((self.t_final / self.dt) * (1.0 + 1e-12)).floor() as usize
    }

    pub fn label(&self) -> String {
        format!("Scheme({},{},{})", self.k, self.l, self.delta0)
    }
}

#[derive(Clone, Debug)]
pub struct Spaces {
    pub mesh: Arc<TriMesh>,
    pub velocity: Arc<ScalarSpace>,
    pub pressure: Arc<ScalarSpace>,
    /// P1 space carrying the linearized convecting velocity.
    pub linear: Arc<ScalarSpace>,
}

impl Spaces {
    pub fn new(mesh: &Arc<TriMesh>, k: usize, l: usize) -> Result<Self> {
        Ok(Self {
            mesh: Arc::clone(mesh),
            velocity: build_space(mesh, k, Constraint::ZeroBoundary)?,
            pressure: build_space(mesh, l, Constraint::ZeroMean)?,
            linear: build_space(mesh, 1, Constraint::ZeroBoundary)?,
        })
    }
}

/// Time-independent matrices, assembled once per run.
#[derive(Clone, Debug)]
pub struct SchemeMatrices {
    pub velocity_map: DofMap,
    /// Full velocity mass matrix.
    pub mass_full: SparseSym,
    /// Stage 1 matrix on free velocity DOFs.
    pub mass: SparseSym,
    /// Stage 2 matrix `(1/Δt)M + νA` on free velocity DOFs.
    pub momentum: SparseSym,
    /// `B_a` with full rows.
    pub coupling: [CsrMatrix; 2],
    /// Pressure Neumann Laplacian `A_p`.
    pub pressure_laplacian: SparseSym,
    /// Unscaled `s₀`, present when `δ₀ > 0`.
    pub stabilization: Option<SparseSym>,
    /// Stage 3 matrix `A_p + (δ₀/Δt) s₀`.
    pub pressure_system: SparseSym,
    pub deflation: DeflationVector,
}

impl SchemeMatrices {
    pub fn assemble(spaces: &Spaces, params: &SchemeParams) -> Result<Self> {
        let vmap = spaces.velocity.dof_map();
        let mass_full = assemble_mass(&spaces.velocity);
        let stiffness = assemble_stiffness(&spaces.velocity, params.nu);
        let mass = mass_full.restrict(&vmap);
        let momentum = mass_full
            .linear_combination(1.0 / params.dt, &stiffness, 1.0)
            .restrict(&vmap);
        let coupling = assemble_pressure_gradient(&spaces.velocity, &spaces.pressure)?;
        let pressure_laplacian = assemble_stiffness(&spaces.pressure, 1.0);
        let stabilization = if params.delta0 > 0.0 {
            Some(assemble_stabilization(&spaces.pressure, params.k)?)
        } else {
            None
        };
        let pressure_system = match &stabilization {
            Some(s) => pressure_laplacian.linear_combination(1.0, s, params.delta0 / params.dt),
            None => pressure_laplacian.clone(),
        };
        if vmap.reduced_dim() == 0 {
            return Err(Error::EmptySystem);
        }
        Ok(Self {
            velocity_map: vmap,
            mass_full,
            mass,
            momentum,
            coupling,
            pressure_laplacian,
            stabilization,
            pressure_system,
            deflation: DeflationVector::new(spaces.pressure.dof_integrals().to_vec()),
        })
    }
}

#[derive(Clone, Debug)]
pub struct SchemeState {
    pub n: usize,
    pub t: f64,
    /// `ũ_hⁿ`.
    pub u_tilde: VectorField,
    /// `p_hⁿ`.
    pub p_now: ScalarField,
    /// `p_hⁿ⁻¹` (equal to `p_now` at `n = 0`).
    pub p_prev: ScalarField,
    /// `i_h^T u_hⁿ`, filled in by Stage 1 of the step leaving level `n`.
    pub u_proj: VectorField,
}

#[derive(Clone, Copy, Debug, Default, PartialEq)]
pub struct StepDiagnostics {
    /// Index of the level reached by this step.
    pub n: usize,
    pub t: f64,
    pub cg_iters_s1: usize,
    pub cg_iters_s2a: usize,
    pub cg_iters_s2b: usize,
    pub cg_iters_s3: usize,
    /// `‖Σ_a B_aᵀ ũ_a − Δt A_p(pⁿ⁺¹ − pⁿ) − δ₀ s₀ pⁿ⁺¹‖₂`, the algebraic
    /// residual of the discrete divergence equation.
    pub div_residual: f64,
    /// `‖Σ_a B_aᵀ ũ_a + Δt A_p pⁿ‖₂`.
    pub div_scale: f64,
    pub jac_min: f64,
    pub jac_max: f64,
    /// `Δt·|w_h|_{1,∞}` for the map used in this step.
    pub cfl: f64,
    /// `‖ũ_hⁿ⁺¹‖₀`.
    pub u_l2: f64,
    pub pressure_mean: f64,
}

impl StepDiagnostics {
    pub const CSV_HEADER: &'static str =
        "n,t,cg_iters_s1,cg_iters_s2a,cg_iters_s2b,cg_iters_s3,div_residual,jac_min,jac_max,u_l2";

    pub fn csv_row(&self) -> String {
        format!(
            "{},{},{},{},{},{},{:e},{},{},{:e}",
            self.n,
            self.t,
            self.cg_iters_s1,
            self.cg_iters_s2a,
            self.cg_iters_s2b,
            self.cg_iters_s3,
            self.div_residual,
            self.jac_min,
            self.jac_max,
            self.u_l2
        )
    }
}

/// An assembled scheme: spaces, matrices and parameters.
pub struct Scheme {
    pub params: SchemeParams,
    pub spaces: Spaces,
    pub matrices: SchemeMatrices,
}

impl Scheme {
    pub fn new(mesh: &Arc<TriMesh>, params: SchemeParams) -> Result<Self> {
        params.validate()?;
        let spaces = Spaces::new(mesh, params.k, params.l)?;
        let matrices = SchemeMatrices::assemble(&spaces, &params)?;
        Ok(Self { params, spaces, matrices })
    }

    fn cg(&self) -> CgOptions<'_> {
        CgOptions { tol: self.params.cg_tol, ..Default::default() }
    }

    pub fn initialize(&self, problem: &dyn OseenProblem) -> Result<SchemeState> {
        let (u, p) = match self.params.init_mode {
            InitMode::Lagrange => (
                interpolate_vector(&self.spaces.velocity, |x, t| problem.velocity(x, t), 0.0)?,
                lagrange_interpolate(&self.spaces.pressure, |x, t| problem.pressure(x, t), 0.0)?,
            ),
            InitMode::StokesProjection => {
                let sp = solve_stokes_projection(
                    &Snapshot { problem, t: 0.0 },
                    &self.spaces.velocity,
                    &self.spaces.pressure,
                    self.params.nu,
                    self.params.delta0,
                    self.params.cg_tol,
                )?;
                let mut u = sp.velocity;
                u.time = Some(0.0);
                (u, sp.pressure)
            }
        };
        Ok(SchemeState {
            n: 0,
            t: 0.0,
            u_proj: u.clone(),
            u_tilde: u,
            p_prev: p.clone(),
            p_now: p,
        })
    }

    /// Stage 1: `i_h^T u_hⁿ`.
    fn project(&self, state: &SchemeState) -> Result<(VectorField, usize)> {
        if state.n == 0 {
            return Ok((state.u_tilde.clone(), 0));
        }
        let m = &self.matrices;
        let dp: Vec<f64> = state
            .p_now
            .coefficients
            .iter()
            .zip(&state.p_prev.coefficients)
            .map(|(a, b)| a - b)
            .collect();
        let mut components = [Vec::new(), Vec::new()];
        let mut iters = 0;
        for c in 0..2 {
            let mu = m.mass_full.apply_vec(&state.u_tilde.components[c]);
            let bdp = m.coupling[c].apply_vec(&dp);
            let rhs: Vec<f64> = mu.iter().zip(&bdp).map(|(a, b)| a - self.params.dt * b).collect();
            let rhs = m.velocity_map.restrict(&rhs);
            let guess = m.velocity_map.restrict(&state.u_tilde.components[c]);
            let out = cg_solve_from(&m.mass, &rhs, Some(&guess), &self.cg())?;
            iters += out.iterations;
            components[c] = m.velocity_map.extend(&out.x);
        }
        Ok((
            VectorField { space: Arc::clone(&self.spaces.velocity), components, time: Some(state.t) },
            iters,
        ))
    }

    pub fn step(&self, state: &SchemeState, problem: &dyn OseenProblem) -> Result<(SchemeState, StepDiagnostics)> {
        let params = &self.params;
        let m = &self.matrices;
        let dt = params.dt;
        let t_next = (state.n + 1) as f64 * dt;

        // Stage 1
        let (u_proj, cg_iters_s1) = self.project(state)?;

        // Stage 2
        let wh = build_linearized_velocity(|x, t| problem.convecting_velocity(x, t), state.t, &self.spaces.linear)?;
        let composed = integrate_composed_term(&u_proj, &wh, dt, params.composed)?;
        let load = assemble_load(&self.spaces.velocity, |x| problem.forcing(x, t_next));
        let solve_component = |c: usize| -> Result<(Vec<f64>, usize)> {
            let bp = m.coupling[c].apply_vec(&state.p_now.coefficients);
            let rhs: Vec<f64> = (0..bp.len())
                .map(|i| composed.rhs[c][i] / dt - bp[i] + load[c][i])
                .collect();
            let rhs = m.velocity_map.restrict(&rhs);
            let guess = m.velocity_map.restrict(&state.u_tilde.components[c]);
            let out = cg_solve_from(&m.momentum, &rhs, Some(&guess), &self.cg())?;
            Ok((m.velocity_map.extend(&out.x), out.iterations))
        };
        let (first, second) = rayon::join(|| solve_component(0), || solve_component(1));
        let (u0, cg_iters_s2a) = first?;
        let (u1, cg_iters_s2b) = second?;
        let u_tilde = VectorField {
            space: Arc::clone(&self.spaces.velocity),
            components: [u0, u1],
            time: Some(t_next),
        };

        // Stage 3
        let mut div = m.coupling[0].transpose_apply_vec(&u_tilde.components[0]);
        let div1 = m.coupling[1].transpose_apply_vec(&u_tilde.components[1]);
        div.iter_mut().zip(&div1).for_each(|(a, b)| *a += b);
        let ap = m.pressure_laplacian.apply_vec(&state.p_now.coefficients);
        let rhs: Vec<f64> = ap.iter().zip(&div).map(|(a, d)| a + d / dt).collect();
        let out = cg_solve_from(
            &m.pressure_system,
            &rhs,
            Some(&state.p_now.coefficients),
            &CgOptions { deflate: Some(&m.deflation), ..self.cg() },
        )?;
        let cg_iters_s3 = out.iterations;
        let p_next = ScalarField { space: Arc::clone(&self.spaces.pressure), coefficients: out.x };

        // divergence-equation residual
        let dp: Vec<f64> = p_next
            .coefficients
            .iter()
            .zip(&state.p_now.coefficients)
            .map(|(a, b)| a - b)
            .collect();
        let adp = m.pressure_laplacian.apply_vec(&dp);
        let sp = match &m.stabilization {
            Some(s) => s.apply_vec(&p_next.coefficients),
            None => vec![0.0; dp.len()],
        };
        let residual: Vec<f64> = (0..div.len())
            .map(|j| div[j] - dt * adp[j] - params.delta0 * sp[j])
            .collect();
        let scale: Vec<f64> = div.iter().zip(&ap).map(|(d, a)| d + dt * a).collect();

        let u_l2 = (0..2)
            .map(|c| m.mass_full.quadratic_form(&u_tilde.components[c]))
            .sum::<f64>()
            .max(0.0)
            .sqrt();
        let diag = StepDiagnostics {
            n: state.n + 1,
            t: t_next,
            cg_iters_s1,
            cg_iters_s2a,
            cg_iters_s2b,
            cg_iters_s3,
            div_residual: norm(&residual),
            div_scale: norm(&scale),
            jac_min: composed.jac_min,
            jac_max: composed.jac_max,
            cfl: dt * wh.lipschitz_seminorm,
            u_l2,
            pressure_mean: p_next.mean(),
        };
        let next = SchemeState {
            n: state.n + 1,
            t: t_next,
            u_tilde,
            p_prev: state.p_now.clone(),
            p_now: p_next,
            u_proj,
        };
        Ok((next, diag))
    }

    /// Per-step invariants; returns a description of each violation.
    pub fn check_invariants(&self, d: &StepDiagnostics) -> Vec<String> {
        let mut out = Vec::new();
        let bound = 10.0 * self.params.cg_tol * d.div_scale;
        if d.div_residual > bound {
            out.push(format!(
                "step {}: divergence residual {:e} exceeds {:e}",
                d.n, d.div_residual, bound
            ));
        }
        if d.pressure_mean.abs() > 1e-10 {
            out.push(format!("step {}: pressure mean {:e}", d.n, d.pressure_mean));
        }
        if d.cfl <= 0.25 && !(d.jac_min >= 0.5 && d.jac_max <= 1.5) {
            out.push(format!(
                "step {}: Jacobian range [{}, {}] outside [1/2, 3/2] with dt·|w_h| = {}",
                d.n, d.jac_min, d.jac_max, d.cfl
            ));
        }
        out
    }
}

#[derive(Clone, Debug, Default)]
pub struct RunOptions {
    /// Per-step diagnostics CSV.
    pub diag_path: Option<PathBuf>,
}

#[derive(Clone, Debug)]
pub struct RunOutcome {
    pub state: SchemeState,
    pub report: ErrorReport,
    pub diagnostics: Vec<StepDiagnostics>,
    pub violations: Vec<String>,
    /// `max_n ‖ũ_hⁿ‖₀` over `n = 0..=N_T`.
    pub max_u_l2: f64,
    /// `max_n ‖u(tⁿ)‖₀` over the same levels.
    pub max_exact_u_l2: f64,
}

/// Runs `N_T` steps and accumulates errors against the problem's exact
/// solution.
pub fn run(problem: &dyn OseenProblem, params: &SchemeParams, mesh: &Arc<TriMesh>) -> Result<RunOutcome> {
    run_with(problem, params, mesh, &RunOptions::default())
}

pub fn run_with(
    problem: &dyn OseenProblem,
    params: &SchemeParams,
    mesh: &Arc<TriMesh>,
    options: &RunOptions,
) -> Result<RunOutcome> {
    if (problem.nu() - params.nu).abs() > 1e-15 * params.nu.abs() {
        return Err(Error::InvalidParams(format!(
            "problem viscosity {} differs from scheme viscosity {}",
            problem.nu(),
            params.nu
        )));
    }
    let scheme = Scheme::new(mesh, params.clone())?;
    let probe = scheme.matrices.stabilization.as_ref().map(|s| StabilizationProbe {
        matrix: s.clone(),
        delta0: params.delta0,
        space: Arc::clone(&scheme.spaces.pressure),
    });
    let mut errors = ErrorAccumulator::new(params.dt, probe);
    let mut diag_out = match &options.diag_path {
        Some(path) => {
            let mut w = BufWriter::new(File::create(path)?);
            writeln!(w, "{}", StepDiagnostics::CSV_HEADER)?;
            Some(w)
        }
        None => None,
    };

    let mut state = scheme.initialize(problem)?;
    let level = errors.record(0, 0.0, &state.u_tilde, &state.p_now, problem)?;
    let mut max_u_l2 = (0..2)
        .map(|c| scheme.matrices.mass_full.quadratic_form(&state.u_tilde.components[c]))
        .sum::<f64>()
        .max(0.0)
        .sqrt();
    let mut max_exact_u_l2 = level.u_l2_exact;
    let mut diagnostics = Vec::new();
    let mut violations = Vec::new();
    for _ in 0..params.num_steps() {
        let (next, diag) = scheme.step(&state, problem)?;
        violations.extend(scheme.check_invariants(&diag));
        let level = errors.record(next.n, next.t, &next.u_tilde, &next.p_now, problem)?;
        max_u_l2 = max_u_l2.max(diag.u_l2);
        max_exact_u_l2 = max_exact_u_l2.max(level.u_l2_exact);
        if let Some(w) = diag_out.as_mut() {
            writeln!(w, "{}", diag.csv_row())?;
        }
        diagnostics.push(diag);
        state = next;
    }
    if let Some(mut w) = diag_out {
        w.flush()?;
    }
    for v in &violations {
        log::warn!("{}: {v}", params.label());
    }
    Ok(RunOutcome {
        state,
        report: errors.report(),
        diagnostics,
        violations,
        max_u_l2,
        max_exact_u_l2,
    })
}
