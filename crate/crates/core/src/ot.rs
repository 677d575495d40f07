//! Robust assignment between two heart clouds via unbalanced, entropically
//! regularized optimal transport.
//!
//! For a reference cloud `{p_i}` with weights `alpha` and a target `{q_j}`
//! with weights `beta`, the solver minimizes
//!
//! ```text
//!   sum_ij (pi_ij / 2) ||p_i - q_j||^2
//!     + tau^2 KL(row_marginal || alpha)
//!     + tau^2 KL(col_marginal || beta)
//!     + sigma^2 KL(Pi || alpha (x) beta)
//! ```
//!
//! over nonnegative plans `Pi`, with the generalized KL divergence
//! `KL(p||q) = sum p ln(p/q) - p + q`. `tau^2` controls how far the plan's
//! marginals may drift from the vertex weights; `sigma^2` smooths the plan
//! toward the independence coupling.
//!
//! The solver runs alternating scaling updates on dual potentials in the log
//! domain (plain exponential-domain scaling overflows at small `sigma^2`),
//! with the marginal exponent `rho = tau^2 / (tau^2 + sigma^2)`. The
//! regularizer is annealed from the cost scale down to `sigma^2`, halving
//! each stage and warm-starting the duals, which keeps iteration counts
//! practical when `sigma^2` is far below the squared point spacing. The
//! final stage always iterates at `sigma^2` proper, so the fixed point being
//! approximated is exactly the objective above.
//!
//! Iteration order is fixed and reductions are sequential, so results are
//! bit-stable across runs.

use serde::{Deserialize, Serialize};

use crate::cloud::{joint_bbox, LabeledCloud};
use crate::error::{Error, Result};

/// Dense-plan size cap; above this the solver refuses to allocate.
pub const MAX_PLAN_ENTRIES: usize = 16_000_000;

/// Sweeps spent per intermediate annealing stage.
const STAGE_SWEEPS: usize = 8;

/// Solver parameters. All squared quantities are in mm^2.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct OtParams {
    /// Marginal-relaxation weight `tau^2 >= 0`.
    pub tau_sq: f64,
    /// Entropic-regularization weight `sigma^2 > 0`.
    pub sigma_sq: f64,
    pub max_iter: usize,
    /// Convergence threshold on the largest log-domain dual update.
    pub tol: f64,
}

impl OtParams {
    pub fn new(tau_sq: f64, sigma_sq: f64, max_iter: usize, tol: f64) -> Result<Self> {
        let p = Self {
            tau_sq,
            sigma_sq,
            max_iter,
            tol,
        };
        p.validate()?;
        Ok(p)
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.tau_sq.is_finite() && self.tau_sq >= 0.0) {
            return Err(Error::invalid("tau_sq must be >= 0"));
        }
        if !(self.sigma_sq.is_finite() && self.sigma_sq > 0.0) {
            return Err(Error::invalid("sigma_sq must be > 0"));
        }
        if self.max_iter < 1 {
            return Err(Error::invalid("max_iter must be >= 1"));
        }
        if !(self.tol.is_finite() && self.tol > 0.0) {
            return Err(Error::invalid("tol must be > 0"));
        }
        Ok(())
    }

    /// Scale-aware defaults: `tau = 0.1 d`, `sigma = 0.01 d` for `d` the
    /// joint bounding-box diagonal (1 mm floor for zero-extent inputs),
    /// 1000 iterations, tolerance 1e-6.
    pub fn scaled_to(reference: &LabeledCloud, target: &LabeledCloud) -> Self {
        let d = joint_bbox(reference, target)
            .map(|(lo, hi)| {
                let e = [hi[0] - lo[0], hi[1] - lo[1], hi[2] - lo[2]];
                (e[0] * e[0] + e[1] * e[1] + e[2] * e[2]).sqrt()
            })
            .unwrap_or(0.0)
            .max(1.0);
        Self {
            tau_sq: (0.1 * d).powi(2),
            sigma_sq: (0.01 * d).powi(2),
            max_iter: 1000,
            tol: 1e-6,
        }
    }

    /// The marginal exponent `rho = tau^2 / (tau^2 + sigma^2)`.
    pub fn marginal_exponent(&self) -> f64 {
        self.tau_sq / (self.tau_sq + self.sigma_sq)
    }
}

/// Solver diagnostics as written to disk.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SolverDiagnostics {
    pub iterations_used: usize,
    pub converged: bool,
    pub final_update: f64,
    pub objective: f64,
}

/// The transport plan with its marginals and solver diagnostics.
#[derive(Debug, Clone, PartialEq)]
pub struct AssignmentMatrix {
    plan: Vec<f64>,
    rows: usize,
    cols: usize,
    alpha: Vec<f64>,
    beta: Vec<f64>,
    pub iterations_used: usize,
    pub converged: bool,
    pub final_update: f64,
    pub objective: f64,
}

impl AssignmentMatrix {
    pub fn nrows(&self) -> usize {
        self.rows
    }

    pub fn ncols(&self) -> usize {
        self.cols
    }

    /// Plan entry `pi_ij`.
    pub fn pi(&self, i: usize, j: usize) -> f64 {
        self.plan[i * self.cols + j]
    }

    /// Row-major plan entries.
    pub fn entries(&self) -> &[f64] {
        &self.plan
    }

    pub fn alpha(&self) -> &[f64] {
        &self.alpha
    }

    pub fn beta(&self) -> &[f64] {
        &self.beta
    }

    /// Row sums `Pi 1`.
    pub fn row_marginals(&self) -> Vec<f64> {
        self.plan
            .chunks_exact(self.cols)
            .map(|row| row.iter().sum())
            .collect()
    }

    /// Column sums `Pi^T 1`.
    pub fn col_marginals(&self) -> Vec<f64> {
        let mut out = vec![0.0; self.cols];
        for row in self.plan.chunks_exact(self.cols) {
            for (o, v) in out.iter_mut().zip(row) {
                *o += v;
            }
        }
        out
    }

    pub fn total_mass(&self) -> f64 {
        self.plan.iter().sum()
    }

    pub fn diagnostics(&self) -> SolverDiagnostics {
        SolverDiagnostics {
            iterations_used: self.iterations_used,
            converged: self.converged,
            final_update: self.final_update,
            objective: self.objective,
        }
    }

    /// Transport part of the objective, `sum_ij pi_ij ||p_i - q_j||^2 / 2`.
    pub fn transport_cost(&self, reference: &LabeledCloud, target: &LabeledCloud) -> f64 {
        let p = reference.points();
        let q = target.points();
        let mut total = 0.0;
        for i in 0..self.rows {
            for j in 0..self.cols {
                total += self.pi(i, j) * 0.5 * dist_sq(p[i], q[j]);
            }
        }
        total
    }
}

fn dist_sq(a: [f64; 3], b: [f64; 3]) -> f64 {
    let d = [a[0] - b[0], a[1] - b[1], a[2] - b[2]];
    d[0] * d[0] + d[1] * d[1] + d[2] * d[2]
}

/// Solves the assignment with uniform vertex weights `1/N`, `1/M`.
pub fn solve_assignment(
    reference: &LabeledCloud,
    target: &LabeledCloud,
    params: &OtParams,
) -> Result<AssignmentMatrix> {
    let n = reference.len();
    let m = target.len();
    let alpha = vec![1.0 / n.max(1) as f64; n];
    let beta = vec![1.0 / m.max(1) as f64; m];
    solve_assignment_with_weights(reference, target, &alpha, &beta, params)
}

/// Solves the assignment with explicit vertex weights.
///
/// Weights must be strictly positive and sum to 1 on each side.
pub fn solve_assignment_with_weights(
    reference: &LabeledCloud,
    target: &LabeledCloud,
    alpha: &[f64],
    beta: &[f64],
    params: &OtParams,
) -> Result<AssignmentMatrix> {
    params.validate()?;
    let n = reference.len();
    let m = target.len();
    if n == 0 || m == 0 {
        return Err(Error::invalid("both clouds must be nonempty"));
    }
    if n.saturating_mul(m) > MAX_PLAN_ENTRIES {
        return Err(Error::invalid(format!(
            "dense plan {n}x{m} exceeds the {MAX_PLAN_ENTRIES}-entry cap"
        )));
    }
    check_weights(alpha, n, "alpha")?;
    check_weights(beta, m, "beta")?;

    // Cost and its transpose; the transpose keeps the column sweep contiguous.
    let p = reference.points();
    let q = target.points();
    let mut cost = vec![0.0f64; n * m];
    let mut cost_t = vec![0.0f64; n * m];
    let mut max_cost = 0.0f64;
    for i in 0..n {
        for j in 0..m {
            let c = 0.5 * dist_sq(p[i], q[j]);
            cost[i * m + j] = c;
            cost_t[j * n + i] = c;
            max_cost = max_cost.max(c);
        }
    }

    let ln_alpha: Vec<f64> = alpha.iter().map(|a| a.ln()).collect();
    let ln_beta: Vec<f64> = beta.iter().map(|b| b.ln()).collect();

    // Annealing schedule: cost scale down to sigma^2, halving.
    let mut schedule = Vec::new();
    let mut eps = max_cost;
    while eps > params.sigma_sq {
        schedule.push(eps);
        eps /= 2.0;
    }
    schedule.push(params.sigma_sq);

    // Dual potentials in cost units.
    let mut f = vec![0.0f64; n];
    let mut g = vec![0.0f64; m];
    let mut scratch = vec![0.0f64; n.max(m)];

    let mut iterations_used = 0usize;
    let mut converged = false;
    let mut final_update = f64::INFINITY;
    let last_stage = schedule.len() - 1;
    'stages: for (stage, &eps) in schedule.iter().enumerate() {
        let rho = params.tau_sq / (params.tau_sq + eps);
        let is_last = stage == last_stage;
        // Intermediate stages only seed the next warm start; they get a
        // fixed sweep budget and a loose exit test.
        let stage_tol = if is_last { params.tol } else { params.tol.max(1e-2) };
        let stage_cap = if is_last {
            params.max_iter
        } else {
            STAGE_SWEEPS
        };
        let mut sweeps = 0usize;
        while sweeps < stage_cap && iterations_used < params.max_iter {
            sweeps += 1;
            iterations_used += 1;
            let mut update: f64 = 0.0;

            // f_i <- -eps rho LSE_j(ln beta_j + (g_j - C_ij) / eps)
            for (j, s) in scratch.iter_mut().take(m).enumerate() {
                *s = ln_beta[j] + g[j] / eps;
            }
            for i in 0..n {
                let row = &cost[i * m..(i + 1) * m];
                let lse = log_sum_exp(row, &scratch[..m], eps);
                let new = -eps * rho * lse;
                update = update.max(((new - f[i]) / eps).abs());
                f[i] = new;
            }

            // g_j <- -eps rho LSE_i(ln alpha_i + (f_i - C_ij) / eps)
            for (i, s) in scratch.iter_mut().take(n).enumerate() {
                *s = ln_alpha[i] + f[i] / eps;
            }
            for j in 0..m {
                let col = &cost_t[j * n..(j + 1) * n];
                let lse = log_sum_exp(col, &scratch[..n], eps);
                let new = -eps * rho * lse;
                update = update.max(((new - g[j]) / eps).abs());
                g[j] = new;
            }

            if is_last {
                final_update = update;
            }
            if update < stage_tol {
                if is_last {
                    converged = true;
                    break 'stages;
                }
                break;
            }
        }
        if iterations_used >= params.max_iter {
            break;
        }
    }

    // Plan at the target regularization, whether or not we converged.
    let eps = params.sigma_sq;
    let mut plan = vec![0.0f64; n * m];
    for i in 0..n {
        for j in 0..m {
            let log_pi = ln_alpha[i] + ln_beta[j] + (f[i] + g[j] - cost[i * m + j]) / eps;
            plan[i * m + j] = log_pi.exp();
        }
    }

    let mut out = AssignmentMatrix {
        plan,
        rows: n,
        cols: m,
        alpha: alpha.to_vec(),
        beta: beta.to_vec(),
        iterations_used,
        converged,
        final_update,
        objective: 0.0,
    };
    out.objective = objective(&out, &cost, params);
    Ok(out)
}

fn check_weights(w: &[f64], len: usize, name: &str) -> Result<()> {
    if w.len() != len {
        return Err(Error::invalid(format!(
            "{name} has {} entries for {len} points",
            w.len()
        )));
    }
    if !w.iter().all(|v| v.is_finite() && *v > 0.0) {
        return Err(Error::invalid(format!("{name} must be strictly positive")));
    }
    let sum: f64 = w.iter().sum();
    if (sum - 1.0).abs() > 1e-9 {
        return Err(Error::invalid(format!("{name} sums to {sum}, want 1")));
    }
    Ok(())
}

/// `ln sum_k exp(shift_k - cost_k / eps)` with max subtraction.
#[inline]
fn log_sum_exp(cost_row: &[f64], shift: &[f64], eps: f64) -> f64 {
    let mut max_t = f64::NEG_INFINITY;
    for (c, s) in cost_row.iter().zip(shift) {
        let t = s - c / eps;
        if t > max_t {
            max_t = t;
        }
    }
    if !max_t.is_finite() {
        return max_t;
    }
    let mut sum = 0.0;
    for (c, s) in cost_row.iter().zip(shift) {
        sum += ((s - c / eps) - max_t).exp();
    }
    max_t + sum.ln()
}

/// Generalized KL divergence `sum p ln(p/q) - p + q` with `0 ln 0 = 0`.
fn generalized_kl(p: &[f64], q: &[f64]) -> f64 {
    let mut total = 0.0;
    for (&pi, &qi) in p.iter().zip(q) {
        if pi > 0.0 {
            total += pi * (pi / qi).ln() - pi + qi;
        } else {
            total += qi;
        }
    }
    total
}

/// Recomputes the full objective of a plan.
fn objective(plan: &AssignmentMatrix, cost: &[f64], params: &OtParams) -> f64 {
    let transport: f64 = plan
        .entries()
        .iter()
        .zip(cost)
        .map(|(pi, c)| pi * c)
        .sum();
    let row_kl = generalized_kl(&plan.row_marginals(), &plan.alpha);
    let col_kl = generalized_kl(&plan.col_marginals(), &plan.beta);

    // KL(Pi || alpha x beta) without materializing the product measure.
    let mut plan_kl = 0.0;
    for i in 0..plan.nrows() {
        for j in 0..plan.ncols() {
            let pi = plan.pi(i, j);
            let ab = plan.alpha[i] * plan.beta[j];
            if pi > 0.0 {
                plan_kl += pi * (pi / ab).ln() - pi + ab;
            } else {
                plan_kl += ab;
            }
        }
    }
    transport + params.tau_sq * (row_kl + col_kl) + params.sigma_sq * plan_kl
}

/// Objective of the independence plan `alpha (x) beta`: its KL terms all
/// vanish, leaving the expected cost. Useful as an optimality sanity bound.
pub fn independence_objective(
    reference: &LabeledCloud,
    target: &LabeledCloud,
    alpha: &[f64],
    beta: &[f64],
) -> f64 {
    let p = reference.points();
    let q = target.points();
    let mut total = 0.0;
    for (i, &pi) in p.iter().enumerate() {
        for (j, &qj) in q.iter().enumerate() {
            total += alpha[i] * beta[j] * 0.5 * dist_sq(pi, qj);
        }
    }
    total
}

/// Per-anchor displacements extracted from a plan and the clouds it couples.
#[derive(Debug, Clone, PartialEq)]
pub struct DeformationSamples {
    pub anchors: Vec<[f64; 3]>,
    pub vectors: Vec<[f64; 3]>,
}

impl DeformationSamples {
    pub fn new(anchors: Vec<[f64; 3]>, vectors: Vec<[f64; 3]>) -> Result<Self> {
        if anchors.len() != vectors.len() {
            return Err(Error::invalid(format!(
                "{} anchors for {} vectors",
                anchors.len(),
                vectors.len()
            )));
        }
        let finite = |v: &[f64; 3]| v.iter().all(|c| c.is_finite());
        if !anchors.iter().all(finite) || !vectors.iter().all(finite) {
            return Err(Error::invalid("samples must be finite"));
        }
        Ok(Self { anchors, vectors })
    }

    pub fn len(&self) -> usize {
        self.anchors.len()
    }

    pub fn is_empty(&self) -> bool {
        self.anchors.is_empty()
    }

    /// Reads CSV with header `px,py,pz,vx,vy,vz`.
    pub fn read_csv(path: impl AsRef<std::path::Path>) -> Result<Self> {
        let file = std::fs::File::open(path.as_ref())?;
        Self::read_csv_from(std::io::BufReader::new(file))
    }

    pub fn read_csv_from(reader: impl std::io::BufRead) -> Result<Self> {
        let mut rdr = csv::ReaderBuilder::new()
            .has_headers(true)
            .trim(csv::Trim::All)
            .from_reader(reader);
        let headers = rdr
            .headers()
            .map_err(|e| Error::parse(format!("samples csv header: {e}")))?
            .clone();
        let got = headers.iter().collect::<Vec<_>>().join(",");
        if got != "px,py,pz,vx,vy,vz" {
            return Err(Error::parse(format!(
                "samples csv header `{got}`, want `px,py,pz,vx,vy,vz`"
            )));
        }
        let mut anchors = Vec::new();
        let mut vectors = Vec::new();
        for (line, rec) in rdr.records().enumerate() {
            let rec = rec.map_err(|e| Error::parse(format!("samples csv row {line}: {e}")))?;
            let field = |idx: usize| -> Result<f64> {
                rec.get(idx)
                    .ok_or_else(|| Error::parse(format!("samples csv row {line}: missing field")))?
                    .parse::<f64>()
                    .map_err(|e| Error::parse(format!("samples csv row {line}: {e}")))
            };
            anchors.push([field(0)?, field(1)?, field(2)?]);
            vectors.push([field(3)?, field(4)?, field(5)?]);
        }
        Self::new(anchors, vectors)
    }

    pub fn write_csv(&self, path: impl AsRef<std::path::Path>) -> Result<()> {
        let mut out = std::io::BufWriter::new(std::fs::File::create(path.as_ref())?);
        self.write_csv_to(&mut out)
    }

    pub fn write_csv_to(&self, out: &mut impl std::io::Write) -> Result<()> {
        writeln!(out, "px,py,pz,vx,vy,vz")?;
        for (p, v) in self.anchors.iter().zip(&self.vectors) {
            writeln!(
                out,
                "{:.6},{:.6},{:.6},{:.6},{:.6},{:.6}",
                p[0], p[1], p[2], v[0], v[1], v[2]
            )?;
        }
        Ok(())
    }
}

/// Plan-weighted displacement toward the target for every reference vertex:
/// `v_i = sum_j pi_ij (q_j - p_i) / sum_j pi_ij`.
pub fn displacement(
    plan: &AssignmentMatrix,
    reference: &LabeledCloud,
    target: &LabeledCloud,
) -> Result<DeformationSamples> {
    if plan.nrows() != reference.len() || plan.ncols() != target.len() {
        return Err(Error::invalid(format!(
            "plan is {}x{} but clouds have {} and {} points",
            plan.nrows(),
            plan.ncols(),
            reference.len(),
            target.len()
        )));
    }
    let p = reference.points();
    let q = target.points();
    let mut vectors = Vec::with_capacity(p.len());
    for i in 0..plan.nrows() {
        let mut weighted = [0.0f64; 3];
        let mut mass = 0.0f64;
        for j in 0..plan.ncols() {
            let w = plan.pi(i, j);
            mass += w;
            for a in 0..3 {
                weighted[a] += w * q[j][a];
            }
        }
        if mass <= 0.0 {
            return Err(Error::DegenerateRow(i));
        }
        vectors.push([
            weighted[0] / mass - p[i][0],
            weighted[1] / mass - p[i][1],
            weighted[2] / mass - p[i][2],
        ]);
    }
    DeformationSamples::new(p.to_vec(), vectors)
}
