//! The manufactured Oseen problem and discrete space-time error norms.
//!
//! Exact solution on `(0,1)²`, with `s(t) = 1 + sin(πt)`:
//!
//! ```text
//! u₁ =  s(t) sin²(πx₁) sin(2πx₂)
//! u₂ = −s(t) sin(2πx₁) sin²(πx₂)
//! p  = −cos(πx₂) + ½ cos(4π(t + x₁))
//! ```
//!
//! The convecting field equals `u`. The forcing is assembled from
//! hand-differentiated pieces: `f = u_t + (w·∇)u − νΔu + ∇p`.

use std::f64::consts::PI;
use std::sync::Arc;

use rayon::prelude::*;

use crate::assembly::StokesData;
use crate::fe_space::{lagrange_interpolate, ScalarField, ScalarSpace, VectorField};
use crate::linalg::SparseSym;
use crate::quadrature;
use crate::{Point, Result};

pub trait OseenProblem: Sync {
    fn nu(&self) -> f64;
    fn velocity(&self, x: Point, t: f64) -> [f64; 2];
    /// Rows are components, columns derivative directions.
    fn velocity_gradient(&self, x: Point, t: f64) -> [[f64; 2]; 2];
    fn pressure(&self, x: Point, t: f64) -> f64;
    fn pressure_gradient(&self, x: Point, t: f64) -> [f64; 2];
    fn convecting_velocity(&self, x: Point, t: f64) -> [f64; 2];
    fn forcing(&self, x: Point, t: f64) -> [f64; 2];
}

/// The exact fields frozen at one time level, usable as Stokes data.
pub struct Snapshot<'a> {
    pub problem: &'a dyn OseenProblem,
    pub t: f64,
}

impl StokesData for Snapshot<'_> {
    fn velocity_gradient(&self, x: Point) -> [[f64; 2]; 2] {
        self.problem.velocity_gradient(x, self.t)
    }

    fn pressure_gradient(&self, x: Point) -> [f64; 2] {
        self.problem.pressure_gradient(x, self.t)
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Convection {
    /// `w = u`.
    Solution,
    /// `w = 0`; the forcing drops the convective term accordingly.
    Zero,
}

#[derive(Clone, Copy, Debug)]
pub struct ManufacturedProblem {
    pub nu: f64,
    pub convection: Convection,
}

impl ManufacturedProblem {
    pub fn new(nu: f64) -> Self {
        Self { nu, convection: Convection::Solution }
    }

    pub fn with_convection(nu: f64, convection: Convection) -> Self {
        Self { nu, convection }
    }

    fn amplitude(t: f64) -> f64 {
        1.0 + (PI * t).sin()
    }

    fn amplitude_dt(t: f64) -> f64 {
        PI * (PI * t).cos()
    }

    /// Spatial profile of `u` (the solution at amplitude one).
    pub fn profile(x: Point) -> [f64; 2] {
        let (s1, s2) = ((PI * x[0]).sin(), (PI * x[1]).sin());
        [s1 * s1 * (2.0 * PI * x[1]).sin(), -(2.0 * PI * x[0]).sin() * s2 * s2]
    }

    fn profile_gradient(x: Point) -> [[f64; 2]; 2] {
        let (s1, s2) = ((PI * x[0]).sin(), (PI * x[1]).sin());
        let (sin2x, sin2y) = ((2.0 * PI * x[0]).sin(), (2.0 * PI * x[1]).sin());
        let (cos2x, cos2y) = ((2.0 * PI * x[0]).cos(), (2.0 * PI * x[1]).cos());
        [
            [PI * sin2x * sin2y, 2.0 * PI * s1 * s1 * cos2y],
            [-2.0 * PI * cos2x * s2 * s2, -PI * sin2x * sin2y],
        ]
    }

    fn profile_laplacian(x: Point) -> [f64; 2] {
        let (s1, s2) = ((PI * x[0]).sin(), (PI * x[1]).sin());
        let (sin2x, sin2y) = ((2.0 * PI * x[0]).sin(), (2.0 * PI * x[1]).sin());
        let (cos2x, cos2y) = ((2.0 * PI * x[0]).cos(), (2.0 * PI * x[1]).cos());
        let pi2 = PI * PI;
        [
            2.0 * pi2 * cos2x * sin2y - 4.0 * pi2 * s1 * s1 * sin2y,
            4.0 * pi2 * sin2x * s2 * s2 - 2.0 * pi2 * sin2x * cos2y,
        ]
    }

    pub fn time_derivative(&self, x: Point, t: f64) -> [f64; 2] {
        Self::profile(x).map(|v| Self::amplitude_dt(t) * v)
    }

    pub fn laplacian(&self, x: Point, t: f64) -> [f64; 2] {
        Self::profile_laplacian(x).map(|v| Self::amplitude(t) * v)
    }

    /// `(w·∇)u`.
    pub fn convection_term(&self, x: Point, t: f64) -> [f64; 2] {
        let w = self.convecting_velocity(x, t);
        let g = self.velocity_gradient(x, t);
        [w[0] * g[0][0] + w[1] * g[0][1], w[0] * g[1][0] + w[1] * g[1][1]]
    }
}

impl OseenProblem for ManufacturedProblem {
    fn nu(&self) -> f64 {
        self.nu
    }

    fn velocity(&self, x: Point, t: f64) -> [f64; 2] {
        Self::profile(x).map(|v| Self::amplitude(t) * v)
    }

    fn velocity_gradient(&self, x: Point, t: f64) -> [[f64; 2]; 2] {
        let s = Self::amplitude(t);
        Self::profile_gradient(x).map(|row| row.map(|v| s * v))
    }

    fn pressure(&self, x: Point, t: f64) -> f64 {
        -(PI * x[1]).cos() + 0.5 * (4.0 * PI * (t + x[0])).cos()
    }

    fn pressure_gradient(&self, x: Point, t: f64) -> [f64; 2] {
        [-2.0 * PI * (4.0 * PI * (t + x[0])).sin(), PI * (PI * x[1]).sin()]
    }

    fn convecting_velocity(&self, x: Point, t: f64) -> [f64; 2] {
        match self.convection {
            Convection::Solution => self.velocity(x, t),
            Convection::Zero => [0.0; 2],
        }
    }

    fn forcing(&self, x: Point, t: f64) -> [f64; 2] {
        let ut = self.time_derivative(x, t);
        let conv = self.convection_term(x, t);
        let lap = self.laplacian(x, t);
        let gp = self.pressure_gradient(x, t);
        [
            ut[0] + conv[0] - self.nu * lap[0] + gp[0],
            ut[1] + conv[1] - self.nu * lap[1] + gp[1],
        ]
    }
}

/// Steady zero solution with zero data.
#[derive(Clone, Copy, Debug)]
pub struct ZeroProblem {
    pub nu: f64,
}

impl OseenProblem for ZeroProblem {
    fn nu(&self) -> f64 {
        self.nu
    }
    fn velocity(&self, _: Point, _: f64) -> [f64; 2] {
        [0.0; 2]
    }
    fn velocity_gradient(&self, _: Point, _: f64) -> [[f64; 2]; 2] {
        [[0.0; 2]; 2]
    }
    fn pressure(&self, _: Point, _: f64) -> f64 {
        0.0
    }
    fn pressure_gradient(&self, _: Point, _: f64) -> [f64; 2] {
        [0.0; 2]
    }
    fn convecting_velocity(&self, _: Point, _: f64) -> [f64; 2] {
        [0.0; 2]
    }
    fn forcing(&self, _: Point, _: f64) -> [f64; 2] {
        [0.0; 2]
    }
}

/// Spatial error and exact-solution norms at one time level, computed with
/// the order-9 rule.
#[derive(Clone, Copy, Debug, Default, PartialEq)]
pub struct LevelNorms {
    pub u_l2_error: f64,
    pub u_l2_exact: f64,
    pub u_h1_error: f64,
    pub u_h1_exact: f64,
    pub p_l2_error: f64,
    pub p_l2_exact: f64,
}

pub fn level_norms(u: &VectorField, p: &ScalarField, problem: &dyn OseenProblem, t: f64) -> LevelNorms {
    let mesh = u.space.mesh();
    let rule = quadrature::order_nine();
    let parts: Vec<[f64; 6]> = (0..mesh.num_triangles())
        .into_par_iter()
        .map(|tri| {
            let area = mesh.area(tri);
            let mut acc = [0.0; 6];
            for (l, w) in rule.iter() {
                let x = mesh.to_physical(tri, *l);
                let s = w * area;
                let ue = problem.velocity(x, t);
                let uh = u.value_at(tri, *l);
                let ge = problem.velocity_gradient(x, t);
                let gh = u.gradient_at(tri, *l);
                let pe = problem.pressure(x, t);
                let ph = p.value_at(tri, *l);
                for c in 0..2 {
                    acc[0] += s * (ue[c] - uh[c]).powi(2);
                    acc[1] += s * ue[c].powi(2);
                    for d in 0..2 {
                        acc[2] += s * (ge[c][d] - gh[c][d]).powi(2);
                        acc[3] += s * ge[c][d].powi(2);
                    }
                }
                acc[4] += s * (pe - ph).powi(2);
                acc[5] += s * pe * pe;
            }
            acc
        })
        .collect();
    let mut total = [0.0; 6];
    for part in &parts {
        for (t, v) in total.iter_mut().zip(part) {
            *t += v;
        }
    }
    let [a, b, c, d, e, f] = total.map(f64::sqrt);
    LevelNorms {
        u_l2_error: a,
        u_l2_exact: b,
        u_h1_error: c,
        u_h1_exact: d,
        p_l2_error: e,
        p_l2_exact: f,
    }
}

#[derive(Clone, Copy, Debug, Default, PartialEq)]
pub struct ErrorReport {
    /// Relative `ℓ∞(L²)` velocity error.
    pub e_linf_l2_u: f64,
    /// Relative `ℓ²(H¹₀)` velocity error.
    pub e_l2_h10_u: f64,
    /// Relative `ℓ²(L²)` pressure error.
    pub e_l2_l2_p: f64,
    /// `δ₀^{1/2} |p_h − I_h p|_{ℓ²(s)}` with Lagrange interpolation standing
    /// in for the quasi-interpolant of the analysis. Absent for unstabilized
    /// runs.
    pub stab_seminorm: Option<f64>,
    pub norm_linf_l2_u: f64,
    pub norm_l2_h10_u: f64,
    pub norm_l2_l2_p: f64,
}

/// Stabilization data for the seminorm diagnostic.
pub struct StabilizationProbe {
    pub matrix: SparseSym,
    pub delta0: f64,
    pub space: Arc<ScalarSpace>,
}

/// Running space-time norms.
///
/// The `ℓ∞` maximum covers `n = 0..=N_T`; the `ℓ²` sums cover `n = 1..=N_T`
/// with weight `Δt`.
pub struct ErrorAccumulator {
    dt: f64,
    probe: Option<StabilizationProbe>,
    u_err_max: f64,
    u_norm_max: f64,
    h1_err_sq: f64,
    h1_norm_sq: f64,
    p_err_sq: f64,
    p_norm_sq: f64,
    stab_sq: f64,
}

impl ErrorAccumulator {
    pub fn new(dt: f64, probe: Option<StabilizationProbe>) -> Self {
        Self {
            dt,
            probe,
            u_err_max: 0.0,
            u_norm_max: 0.0,
            h1_err_sq: 0.0,
            h1_norm_sq: 0.0,
            p_err_sq: 0.0,
            p_norm_sq: 0.0,
            stab_sq: 0.0,
        }
    }

    pub fn record(
        &mut self,
        n: usize,
        t: f64,
        u: &VectorField,
        p: &ScalarField,
        problem: &dyn OseenProblem,
    ) -> Result<LevelNorms> {
        let norms = level_norms(u, p, problem, t);
        self.u_err_max = self.u_err_max.max(norms.u_l2_error);
        self.u_norm_max = self.u_norm_max.max(norms.u_l2_exact);
        if n >= 1 {
            self.h1_err_sq += self.dt * norms.u_h1_error.powi(2);
            self.h1_norm_sq += self.dt * norms.u_h1_exact.powi(2);
            self.p_err_sq += self.dt * norms.p_l2_error.powi(2);
            self.p_norm_sq += self.dt * norms.p_l2_exact.powi(2);
            if let Some(probe) = &self.probe {
                let ip = lagrange_interpolate(&probe.space, |x, t| problem.pressure(x, t), t)?;
                let e: Vec<f64> = p.coefficients.iter().zip(&ip.coefficients).map(|(a, b)| a - b).collect();
                self.stab_sq += self.dt * probe.delta0 * probe.matrix.quadratic_form(&e);
            }
        }
        Ok(norms)
    }

    pub fn report(&self) -> ErrorReport {
        let rel = |num: f64, den: f64| if den > 0.0 { num / den } else { 0.0 };
        let (h1e, h1n) = (self.h1_err_sq.sqrt(), self.h1_norm_sq.sqrt());
        let (pe, pn) = (self.p_err_sq.sqrt(), self.p_norm_sq.sqrt());
        ErrorReport {
            e_linf_l2_u: rel(self.u_err_max, self.u_norm_max),
            e_l2_h10_u: rel(h1e, h1n),
            e_l2_l2_p: rel(pe, pn),
            stab_seminorm: self.probe.as_ref().map(|_| self.stab_sq.max(0.0).sqrt()),
            norm_linf_l2_u: self.u_norm_max,
            norm_l2_h10_u: h1n,
            norm_l2_l2_p: pn,
        }
    }
}
