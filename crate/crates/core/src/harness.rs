//! Convergence studies: config parsing, sweep execution, CSV/EOC/plot output.
//!
//! Config files are flat `key = value` text:
//!
//! ```text
//! # comments start with '#'
//! schemes = 2,1,0; 2,2,0.01
//! nu = 1, 1e-4
//! N = 8, 16, 32
//! dt_rule = h2          # or h/16, h
//! T = 1
//! init = lagrange       # or stokes_projection
//! out = study_out
//! workers = 2
//! ```

use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};
use std::sync::Arc;
use std::time::Instant;

use rayon::prelude::*;

use crate::mesh::build_unit_square_mesh;
use crate::problems::{ErrorReport, ManufacturedProblem};
use crate::scheme::{run_with, InitMode, RunOptions, SchemeParams, StepDiagnostics};
use crate::{Error, Result};

/// Default mesh sizes.
pub const DESK_N: [usize; 3] = [8, 16, 32];
/// Mesh sizes of the full study, slow.
pub const FULL_N: [usize; 5] = [16, 23, 32, 45, 64];

pub const CSV_HEADER: &str = "N,h,dt,E_linf_l2_u,E_l2_h10_u,E_l2_l2_p,runtime_s";

#[derive(Clone, Copy, Debug, PartialEq)]
pub enum DtRule {
    /// `Δt = h²`.
    HSquared,
    /// `Δt = h / divisor`.
    HOver(f64),
}

impl DtRule {
    pub fn parse(s: &str) -> Result<Self> {
        let s = s.trim();
        match s {
            "h2" | "h^2" | "h_squared" => Ok(DtRule::HSquared),
            "h" => Ok(DtRule::HOver(1.0)),
            _ => {
                let divisor = s
                    .strip_prefix("h/")
                    .and_then(|d| d.trim().parse::<f64>().ok())
                    .filter(|d| *d > 0.0 && d.is_finite())
                    .ok_or_else(|| Error::Parse(format!("unknown dt rule '{s}' (expected h2, h or h/<divisor>)")))?;
                Ok(DtRule::HOver(divisor))
            }
        }
    }

    /// Time step for the mesh with `n` cells per side, using `h = 1/n`.
    pub fn dt(&self, n: usize) -> f64 {
        let h = 1.0 / n as f64;
        match self {
            DtRule::HSquared => h * h,
            DtRule::HOver(d) => h / d,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct SchemeSpec {
    pub k: usize,
    pub l: usize,
    pub delta0: f64,
}

impl SchemeSpec {
    pub fn parse(s: &str) -> Result<Self> {
        let parts: Vec<&str> = s.trim().trim_matches(|c| c == '(' || c == ')').split(',').map(str::trim).collect();
        let err = || Error::Parse(format!("scheme '{}' must be k,l,delta0", s.trim()));
        if parts.len() != 3 {
            return Err(err());
        }
        Ok(Self {
            k: parts[0].parse().map_err(|_| err())?,
            l: parts[1].parse().map_err(|_| err())?,
            delta0: parts[2].parse().map_err(|_| err())?,
        })
    }

    pub fn label(&self) -> String {
        format!("Scheme({},{},{})", self.k, self.l, self.delta0)
    }

    fn file_stem(&self, nu: f64) -> String {
        format!("scheme_{}{}_d{}_nu{}", self.k, self.l, self.delta0, nu)
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct StudyConfig {
    pub schemes: Vec<SchemeSpec>,
    pub nus: Vec<f64>,
    pub ns: Vec<usize>,
    pub dt_rule: DtRule,
    pub t_final: f64,
    pub init_mode: InitMode,
    pub out_dir: PathBuf,
    pub workers: usize,
    pub cg_tol: f64,
}

fn parse_list<T: std::str::FromStr>(key: &str, value: &str) -> Result<Vec<T>> {
    value
        .split(',')
        .map(|v| {
            v.trim()
                .parse()
                .map_err(|_| Error::Parse(format!("bad entry '{}' for key '{key}'", v.trim())))
        })
        .collect()
}

fn parse_scalar<T: std::str::FromStr>(key: &str, value: &str) -> Result<T> {
    value
        .trim()
        .parse()
        .map_err(|_| Error::Parse(format!("bad value '{}' for key '{key}'", value.trim())))
}

pub fn parse_init_mode(s: &str) -> Result<InitMode> {
    match s.trim() {
        "lagrange" => Ok(InitMode::Lagrange),
        "stokes_projection" | "stokes" => Ok(InitMode::StokesProjection),
        other => Err(Error::Parse(format!("unknown init mode '{other}'"))),
    }
}

impl StudyConfig {
    pub fn parse(text: &str) -> Result<Self> {
        let mut schemes = None;
        let mut nus = None;
        let mut ns = None;
        let mut dt_rule = None;
        let mut t_final = 1.0;
        let mut init_mode = InitMode::Lagrange;
        let mut out_dir = PathBuf::from("study_out");
        let mut workers = 1;
        let mut cg_tol = 1e-10;
        for (lineno, raw) in text.lines().enumerate() {
            let line = raw.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let (key, value) = line
                .split_once('=')
                .ok_or_else(|| Error::Parse(format!("line {}: expected key = value", lineno + 1)))?;
            let key = key.trim();
            match key {
                "schemes" => {
                    schemes = Some(value.split(';').filter(|s| !s.trim().is_empty()).map(SchemeSpec::parse).collect::<Result<Vec<_>>>()?)
                }
                "nu" => nus = Some(parse_list::<f64>(key, value)?),
                "N" => ns = Some(parse_list::<usize>(key, value)?),
                "dt_rule" => dt_rule = Some(DtRule::parse(value)?),
                "T" => t_final = parse_scalar(key, value)?,
                "init" => init_mode = parse_init_mode(value)?,
                "out" => out_dir = PathBuf::from(value.trim()),
                "workers" => workers = parse_scalar(key, value)?,
                "cg_tol" => cg_tol = parse_scalar(key, value)?,
                other => return Err(Error::Parse(format!("line {}: unknown key '{other}'", lineno + 1))),
            }
        }
        let missing = |k: &str| Error::Parse(format!("missing key '{k}'"));
        let config = Self {
            schemes: schemes.ok_or_else(|| missing("schemes"))?,
            nus: nus.ok_or_else(|| missing("nu"))?,
            ns: ns.unwrap_or_else(|| DESK_N.to_vec()),
            dt_rule: dt_rule.ok_or_else(|| missing("dt_rule"))?,
            t_final,
            init_mode,
            out_dir,
            workers,
            cg_tol,
        };
        config.validate()?;
        Ok(config)
    }

    pub fn from_file(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path)
            .map_err(|e| Error::Parse(format!("cannot read config file {}: {e}", path.display())))?;
        Self::parse(&text).map_err(|e| Error::Parse(format!("{}: {e}", path.display())))
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::Parse(m));
        if self.schemes.is_empty() || self.nus.is_empty() || self.ns.is_empty() {
            return bad("schemes, nu and N must be non-empty".into());
        }
        if self.ns.windows(2).any(|w| w[0] >= w[1]) || self.ns[0] == 0 {
            return bad(format!("N list must be positive and strictly increasing, got {:?}", self.ns));
        }
        if self.workers == 0 {
            return bad("workers must be at least 1".into());
        }
        if !(self.t_final > 0.0) {
            return bad(format!("T must be positive, got {}", self.t_final));
        }
        for &n in &self.ns {
            if self.dt_rule.dt(n) > self.t_final {
                return bad(format!("dt rule gives dt > T at N = {n}"));
            }
        }
        for s in &self.schemes {
            for &nu in &self.nus {
                self.params(s, nu, self.ns[0]).validate().map_err(|e| Error::Parse(e.to_string()))?;
            }
        }
        Ok(())
    }

    /// Replaces the mesh list with the full study list.
    pub fn use_full_list(&mut self) {
        log::warn!("full mesh list {:?} requested; the finest levels take a long time", FULL_N);
        self.ns = FULL_N.to_vec();
    }

    pub fn params(&self, scheme: &SchemeSpec, nu: f64, n: usize) -> SchemeParams {
        let mut p = SchemeParams::new(scheme.k, scheme.l, scheme.delta0, nu, self.dt_rule.dt(n), self.t_final);
        p.init_mode = self.init_mode;
        p.cg_tol = self.cg_tol;
        p
    }
}

/// One manufactured-solution run at mesh size `n`.
#[derive(Clone, Debug)]
pub struct RunRecord {
    pub n: usize,
    pub h: f64,
    pub dt: f64,
    pub result: std::result::Result<RunSummary, String>,
    pub runtime_s: f64,
}

#[derive(Clone, Debug)]
pub struct RunSummary {
    pub report: ErrorReport,
    pub diagnostics: Vec<StepDiagnostics>,
    pub violations: Vec<String>,
    pub max_u_l2: f64,
    pub max_exact_u_l2: f64,
}

impl RunRecord {
    pub fn csv_row(&self) -> String {
        let (a, b, c) = match &self.result {
            Ok(s) => (s.report.e_linf_l2_u, s.report.e_l2_h10_u, s.report.e_l2_l2_p),
            Err(_) => (f64::NAN, f64::NAN, f64::NAN),
        };
        format!("{},{},{},{:e},{:e},{:e},{:.3}", self.n, self.h, self.dt, a, b, c, self.runtime_s)
    }
}

/// Runs the manufactured problem on the `n × n` mesh.
pub fn run_manufactured(params: &SchemeParams, n: usize, options: &RunOptions) -> RunRecord {
    let start = Instant::now();
    let result = build_unit_square_mesh(n)
        .map(Arc::new)
        .and_then(|mesh| run_with(&ManufacturedProblem::new(params.nu), params, &mesh, options))
        .map(|out| RunSummary {
            report: out.report,
            diagnostics: out.diagnostics,
            violations: out.violations,
            max_u_l2: out.max_u_l2,
            max_exact_u_l2: out.max_exact_u_l2,
        })
        .map_err(|e| e.to_string());
    RunRecord {
        n,
        h: 1.0 / n as f64,
        dt: params.dt,
        result,
        runtime_s: start.elapsed().as_secs_f64(),
    }
}

/// Consecutive-pair EOCs, `log(e_i/e_{i+1}) / log(h_i/h_{i+1})`; `None` where
/// an error is not positive and finite.
pub fn eoc(hs: &[f64], errors: &[f64]) -> Vec<Option<f64>> {
    hs.windows(2)
        .zip(errors.windows(2))
        .map(|(h, e)| {
            let ok = |v: f64| v > 0.0 && v.is_finite();
            (ok(e[0]) && ok(e[1])).then(|| (e[0] / e[1]).ln() / (h[0] / h[1]).ln())
        })
        .collect()
}

#[derive(Clone, Debug)]
pub struct StudySeries {
    pub scheme: SchemeSpec,
    pub nu: f64,
    pub rows: Vec<RunRecord>,
}

impl StudySeries {
    fn column(&self, pick: impl Fn(&ErrorReport) -> f64) -> Vec<f64> {
        self.rows
            .iter()
            .map(|r| r.result.as_ref().map(|s| pick(&s.report)).unwrap_or(f64::NAN))
            .collect()
    }

    pub fn hs(&self) -> Vec<f64> {
        self.rows.iter().map(|r| r.h).collect()
    }

    pub fn eoc_linf_l2_u(&self) -> Vec<Option<f64>> {
        eoc(&self.hs(), &self.column(|r| r.e_linf_l2_u))
    }

    pub fn eoc_l2_h10_u(&self) -> Vec<Option<f64>> {
        eoc(&self.hs(), &self.column(|r| r.e_l2_h10_u))
    }

    pub fn eoc_l2_l2_p(&self) -> Vec<Option<f64>> {
        eoc(&self.hs(), &self.column(|r| r.e_l2_l2_p))
    }

    pub fn csv(&self) -> String {
        let mut s = String::from(CSV_HEADER);
        s.push('\n');
        for r in &self.rows {
            s.push_str(&r.csv_row());
            s.push('\n');
        }
        s
    }
}

#[derive(Clone, Debug)]
pub struct EocTable {
    pub series: Vec<StudySeries>,
}

fn fmt_eoc(v: &[Option<f64>]) -> String {
    v.iter()
        .map(|e| e.map_or("-".to_string(), |e| format!("{e:.3}")))
        .collect::<Vec<_>>()
        .join(" ")
}

impl EocTable {
    pub fn summary(&self) -> String {
        let mut s = String::new();
        for series in &self.series {
            let _ = writeln!(s, "{} nu={}", series.scheme.label(), series.nu);
            let _ = writeln!(s, "  EOC E_linf_l2_u: {}", fmt_eoc(&series.eoc_linf_l2_u()));
            let _ = writeln!(s, "  EOC E_l2_h10_u:  {}", fmt_eoc(&series.eoc_l2_h10_u()));
            let _ = writeln!(s, "  EOC E_l2_l2_p:   {}", fmt_eoc(&series.eoc_l2_l2_p()));
            for r in &series.rows {
                match &r.result {
                    Err(reason) => {
                        let _ = writeln!(s, "  N={} failed: {reason}", r.n);
                    }
                    Ok(sum) if !sum.violations.is_empty() => {
                        let _ = writeln!(s, "  N={} invariant violations: {}", r.n, sum.violations.len());
                    }
                    Ok(_) => {}
                }
            }
        }
        s
    }

    /// A gnuplot script plotting every error column against `h` on log-log
    /// axes.
    pub fn plot_script(&self) -> String {
        let mut s = String::from(
            "set datafile separator ','\nset logscale xy\nset key left top\nset xlabel 'h'\nset ylabel 'relative error'\nset terminal pngcairo size 1200,400\nset output 'errors.png'\nset multiplot layout 1,3\n",
        );
        for (col, title) in [(4, "E_linf_l2_u"), (5, "E_l2_h10_u"), (6, "E_l2_l2_p")] {
            let _ = writeln!(s, "set title '{title}'");
            let plots: Vec<String> = self
                .series
                .iter()
                .map(|sr| {
                    format!(
                        "'{}.csv' using 2:{col} with linespoints title '{} nu={}'",
                        sr.scheme.file_stem(sr.nu),
                        sr.scheme.label(),
                        sr.nu
                    )
                })
                .collect();
            let _ = writeln!(s, "plot {}", plots.join(", \\\n     "));
        }
        s.push_str("unset multiplot\n");
        s
    }

    pub fn write(&self, dir: &Path) -> Result<()> {
        fs::create_dir_all(dir)?;
        for series in &self.series {
            fs::write(dir.join(format!("{}.csv", series.scheme.file_stem(series.nu))), series.csv())?;
        }
        fs::write(dir.join("eoc_summary.txt"), self.summary())?;
        fs::write(dir.join("plot.gp"), self.plot_script())?;
        Ok(())
    }
}

/// Runs every `(scheme, ν, N)` point, in parallel up to `workers`, and
/// writes the outputs to `config.out_dir`. Individual run failures are
/// recorded in the table, not returned.
pub fn run_study(config: &StudyConfig) -> Result<EocTable> {
    config.validate()?;
    let mut points = Vec::new();
    for scheme in &config.schemes {
        for &nu in &config.nus {
            for &n in &config.ns {
                points.push((*scheme, nu, n));
            }
        }
    }
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(config.workers)
        .build()
        .map_err(|e| Error::InvalidParams(e.to_string()))?;
    let records: Vec<RunRecord> = pool.install(|| {
        points
            .par_iter()
            .map(|(scheme, nu, n)| {
                let params = config.params(scheme, *nu, *n);
                log::info!("{} nu={nu} N={n} dt={}", scheme.label(), params.dt);
                run_manufactured(&params, *n, &RunOptions::default())
            })
            .collect()
    });
    let mut records = records.into_iter();
    let mut series = Vec::new();
    for scheme in &config.schemes {
        for &nu in &config.nus {
            let rows = records.by_ref().take(config.ns.len()).collect();
            series.push(StudySeries { scheme: *scheme, nu, rows });
        }
    }
    let table = EocTable { series };
    table.write(&config.out_dir)?;
    Ok(table)
}
