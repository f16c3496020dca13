//! Primal-dual interior point method with an active-set Newton polish.

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use super::{cop, kkt_residual, objective, Coupling, KktReport, PrimalDualPoint, ProblemKind, SteadyStateProblem};
use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SolverOptions {
    pub max_iterations: usize,
    /// Acceptance threshold on the KKT summary residual.
    pub tolerance: f64,
}

impl Default for SolverOptions {
    fn default() -> Self {
        Self { max_iterations: 200, tolerance: 1e-8 }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReferenceSolution {
    pub point: PrimalDualPoint,
    pub flows: Vec<f64>,
    pub objective: f64,
    pub kkt: KktReport,
    pub iterations: usize,
}

/// Variable layout `[Z (n), u (n), Z_f (n), T_s (joint only)]`, equality
/// rows `[zone balance (n), floor balance (n)]`, inequality rows
/// `[upper (n), lower (n), T_s <= max, T_s >= min]`.
struct Layout<'a> {
    p: &'a SteadyStateProblem,
    n: usize,
    nx: usize,
    ni: usize,
    sigma: f64,
}

impl<'a> Layout<'a> {
    fn new(p: &'a SteadyStateProblem) -> Self {
        let n = p.len();
        let joint = p.is_joint();
        Self {
            p,
            n,
            nx: 3 * n + usize::from(joint),
            ni: 2 * n + if joint { 2 } else { 0 },
            sigma: p.ghp.mode.sign(),
        }
    }

    fn supply(&self, x: &DVector<f64>) -> f64 {
        match self.p.kind {
            ProblemKind::FlowOnly { supply } => supply,
            ProblemKind::Joint => x[3 * self.n],
        }
    }

    /// Equality Jacobian and offset: `G x + c = 0` (constant, the constraints are linear).
    fn equalities(&self, coupled: bool) -> (DMatrix<f64>, DVector<f64>) {
        let (n, g) = (self.n, &self.p.graph);
        let mut jac = DMatrix::zeros(2 * n, self.nx);
        let mut c = DVector::zeros(2 * n);
        for i in 0..n {
            let z = g.zone(i);
            let raf = 1.0 / z.air_floor_resistance;
            jac[(i, i)] -= 1.0 / z.envelope_resistance + raf;
            jac[(i, 2 * n + i)] += raf;
            for nb in g.neighbors(i) {
                if coupled {
                    jac[(i, i)] -= 1.0 / nb.resistance;
                    jac[(i, nb.zone)] += 1.0 / nb.resistance;
                }
            }
            c[i] = self.p.outdoor / z.envelope_resistance + self.p.gains[i];

            jac[(n + i, i)] = raf;
            jac[(n + i, 2 * n + i)] = -raf;
            jac[(n + i, n + i)] = 1.0;
        }
        (jac, c)
    }

    /// Inequality `h(x) <= 0` values and Jacobian (linear in x).
    fn inequalities(&self, x: &DVector<f64>) -> (DVector<f64>, DMatrix<f64>) {
        let n = self.n;
        let ts = self.supply(x);
        let mut h = DVector::zeros(self.ni);
        let mut jac = DMatrix::zeros(self.ni, self.nx);
        for i in 0..n {
            let kappa = self.p.flow_bound_slope(i);
            h[i] = self.sigma * (x[n + i] - kappa * (ts - x[2 * n + i]));
            jac[(i, n + i)] = self.sigma;
            jac[(i, 2 * n + i)] = self.sigma * kappa;
            if self.p.is_joint() {
                jac[(i, 3 * n)] = -self.sigma * kappa;
            }
            h[n + i] = -self.sigma * x[n + i];
            jac[(n + i, n + i)] = -self.sigma;
        }
        if self.p.is_joint() {
            h[2 * n] = ts - self.p.ghp.supply_max;
            jac[(2 * n, 3 * n)] = 1.0;
            h[2 * n + 1] = self.p.ghp.supply_min - ts;
            jac[(2 * n + 1, 3 * n)] = -1.0;
        }
        (h, jac)
    }

    fn gradient_hessian(&self, x: &DVector<f64>) -> Result<(DVector<f64>, DMatrix<f64>)> {
        let (n, g) = (self.n, &self.p.graph);
        let s = self.p.energy_weight;
        let ts = self.supply(x);
        let d = cop(ts, &self.p.ghp)?;
        let mut grad = DVector::zeros(self.nx);
        let mut hess = DMatrix::zeros(self.nx, self.nx);
        for i in 0..n {
            let z = g.zone(i);
            grad[i] = z.comfort_weight * (x[i] - z.setpoint);
            hess[(i, i)] = z.comfort_weight;
        }
        match self.p.kind {
            ProblemKind::FlowOnly { .. } => {
                for i in 0..n {
                    grad[n + i] = s * self.sigma / d;
                }
            }
            ProblemKind::Joint => {
                let a = self.p.ghp.cop_slope;
                let t = 3 * n;
                let mut sq = 0.0;
                for i in 0..n {
                    let u = x[n + i];
                    sq += u * u;
                    grad[n + i] = 2.0 * s * u / d;
                    hess[(n + i, n + i)] = 2.0 * s / d;
                    hess[(n + i, t)] = 2.0 * s * a * u / (d * d);
                    hess[(t, n + i)] = hess[(n + i, t)];
                }
                grad[t] = s * a * sq / (d * d);
                hess[(t, t)] = 2.0 * s * a * a * sq / (d * d * d);
            }
        }
        Ok((grad, hess))
    }

    fn point(&self, x: &DVector<f64>, y: &DVector<f64>, z: &DVector<f64>) -> PrimalDualPoint {
        let n = self.n;
        let seg = |v: &DVector<f64>, k: usize| v.rows(k * n, n).iter().copied().collect::<Vec<_>>();
        let (nu_plus, nu_minus) = if self.p.is_joint() { (z[2 * n], z[2 * n + 1]) } else { (0.0, 0.0) };
        PrimalDualPoint {
            air: seg(x, 0),
            heat: seg(x, 1),
            floor: seg(x, 2),
            supply: self.supply(x),
            // Lagrangian f + ζ·g_zone + λ·g_floor with g written as "inflow = 0";
            // the solver's y multiplies the same rows.
            zeta: seg(y, 0),
            lambda: seg(y, 1),
            mu_plus: seg(z, 0),
            mu_minus: seg(z, 1),
            nu_plus,
            nu_minus,
        }
    }
}

fn max_step(v: &DVector<f64>, dv: &DVector<f64>) -> f64 {
    let mut alpha = 1.0f64;
    for (a, b) in v.iter().zip(dv.iter()) {
        if *b < 0.0 {
            alpha = alpha.min(-a / b);
        }
    }
    alpha
}

/// Solve the steady-state problem to KKT precision.
///
/// Returns `NonConvergence` unless the independently evaluated KKT summary
/// residual falls below `options.tolerance`.
pub fn solve_reference(problem: &SteadyStateProblem, options: &SolverOptions) -> Result<ReferenceSolution> {
    problem.validate()?;
    if problem.is_empty() {
        return Err(Error::Structure("problem has no zones".into()));
    }
    let lay = Layout::new(problem);
    let (n, nx, ni) = (lay.n, lay.nx, lay.ni);
    let ne = 2 * n;
    let (geq, ceq) = lay.equalities(true);
    // Stationarity uses the coupled or decoupled zone balance Jacobian.
    let (gst, _) = lay.equalities(problem.coupling == Coupling::Distributed);

    let mut x = DVector::zeros(nx);
    for i in 0..n {
        let sp = problem.graph.zone(i).setpoint;
        x[i] = sp;
        x[2 * n + i] = sp;
    }
    if problem.is_joint() {
        x[3 * n] = 0.5 * (problem.ghp.supply_min + problem.ghp.supply_max);
    }
    let (h0, _) = lay.inequalities(&x);
    let mut w = h0.map(|v| (-v).max(1.0));
    let mut z = DVector::from_element(ni, 1.0);
    let mut y = DVector::zeros(ne);

    let cop_floor = 0.5 * cop(problem.ghp.supply_max, &problem.ghp)?;
    let mut iterations = 0;
    for it in 0..options.max_iterations {
        iterations = it + 1;
        let (grad, hess) = lay.gradient_hessian(&x)?;
        let (h, hj) = lay.inequalities(&x);
        let rd = &grad + gst.transpose() * &y + hj.transpose() * &z;
        let rp = &geq * &x + &ceq;
        let ri = &h + &w;
        let mu = w.dot(&z) / ni as f64;
        let res = rd.amax().max(rp.amax()).max(ri.amax());
        if res < 1e-12 && mu < 1e-13 {
            break;
        }

        let d = z.component_div(&w);
        let mut k = hess.clone();
        k += hj.transpose() * DMatrix::from_diagonal(&d) * &hj;
        let dim = nx + ne;
        let mut m = DMatrix::zeros(dim, dim);
        m.view_mut((0, 0), (nx, nx)).copy_from(&k);
        m.view_mut((0, nx), (nx, ne)).copy_from(&gst.transpose());
        m.view_mut((nx, 0), (ne, nx)).copy_from(&geq);
        let lu = m.lu();

        let solve = |rc: &DVector<f64>| -> Option<(DVector<f64>, DVector<f64>, DVector<f64>, DVector<f64>)> {
            let t = (rc + z.component_mul(&ri)).component_div(&w);
            let mut rhs = DVector::zeros(dim);
            rhs.rows_mut(0, nx).copy_from(&(-&rd - hj.transpose() * &t));
            rhs.rows_mut(nx, ne).copy_from(&(-&rp));
            let sol = lu.solve(&rhs)?;
            let dx = sol.rows(0, nx).into_owned();
            let dy = sol.rows(nx, ne).into_owned();
            let dw = -&ri - &hj * &dx;
            let dz = (rc + z.component_mul(&ri) + z.component_mul(&(&hj * &dx))).component_div(&w);
            Some((dx, dy, dw, dz))
        };

        let wz = w.component_mul(&z);
        let Some((_, _, dw_a, dz_a)) = solve(&(-&wz)) else {
            break;
        };
        let a_aff = max_step(&w, &dw_a).min(max_step(&z, &dz_a));
        let mu_aff = (&w + a_aff * &dw_a).dot(&(&z + a_aff * &dz_a)) / ni as f64;
        let centering = (mu_aff / mu).powi(3).min(1.0);
        let rc = DVector::from_element(ni, centering * mu) - &wz - dw_a.component_mul(&dz_a);
        let Some((dx, dy, dw, dz)) = solve(&rc) else {
            break;
        };

        let mut alpha = (0.995 * max_step(&w, &dw).min(max_step(&z, &dz))).min(1.0);
        if problem.is_joint() {
            while problem.ghp.cop_unchecked(x[3 * n] + alpha * dx[3 * n]) < cop_floor && alpha > 1e-12 {
                alpha *= 0.5;
            }
        }
        x += alpha * dx;
        y += alpha * dy;
        w += alpha * dw;
        z += alpha * dz;
    }

    let mut best = lay.point(&x, &y, &z);
    let mut best_report = kkt_residual(&best, problem)?;
    if let Some((px, py, pz)) = polish(&lay, &geq, &ceq, &gst, &x, &y, &z, &w) {
        let cand = lay.point(&px, &py, &pz);
        if let Ok(r) = kkt_residual(&cand, problem) {
            if r.summary < best_report.summary {
                best = cand;
                best_report = r;
            }
        }
    }

    if !(best_report.summary < options.tolerance) {
        return Err(Error::NonConvergence { iterations, residual: best_report.summary });
    }
    let flows = best.flows(&problem.ghp);
    let objective = objective(&best, problem)?;
    Ok(ReferenceSolution { point: best, flows, objective, kkt: best_report, iterations })
}

/// Newton iterations on the KKT system restricted to the constraints the
/// interior point method identified as active. Returns `None` if the
/// identified system is singular or the result is not primal/dual feasible.
#[allow(clippy::too_many_arguments)]
fn polish(
    lay: &Layout<'_>,
    geq: &DMatrix<f64>,
    ceq: &DVector<f64>,
    gst: &DMatrix<f64>,
    x0: &DVector<f64>,
    y0: &DVector<f64>,
    z0: &DVector<f64>,
    w0: &DVector<f64>,
) -> Option<(DVector<f64>, DVector<f64>, DVector<f64>)> {
    let (nx, ne, ni) = (lay.nx, geq.nrows(), lay.ni);
    let active: Vec<usize> = (0..ni).filter(|&j| z0[j] > w0[j]).collect();
    let na = active.len();
    let mut x = x0.clone();
    let mut y = y0.clone();
    let mut za = DVector::from_iterator(na, active.iter().map(|&j| z0[j]));
    let dim = nx + ne + na;

    for _ in 0..30 {
        let (grad, hess) = lay.gradient_hessian(&x).ok()?;
        let (h, hj) = lay.inequalities(&x);
        let mut ha = DMatrix::zeros(na, nx);
        let mut hv = DVector::zeros(na);
        for (r, &j) in active.iter().enumerate() {
            ha.row_mut(r).copy_from(&hj.row(j));
            hv[r] = h[j];
        }
        let mut f = DVector::zeros(dim);
        f.rows_mut(0, nx).copy_from(&(&grad + gst.transpose() * &y + ha.transpose() * &za));
        f.rows_mut(nx, ne).copy_from(&(geq * &x + ceq));
        f.rows_mut(nx + ne, na).copy_from(&hv);
        if f.amax() < 1e-15 {
            break;
        }
        let mut j = DMatrix::zeros(dim, dim);
        // Joint inequalities are linear in x, so only the objective contributes curvature.
        j.view_mut((0, 0), (nx, nx)).copy_from(&hess);
        j.view_mut((0, nx), (nx, ne)).copy_from(&gst.transpose());
        j.view_mut((0, nx + ne), (nx, na)).copy_from(&ha.transpose());
        j.view_mut((nx, 0), (ne, nx)).copy_from(geq);
        j.view_mut((nx + ne, 0), (na, nx)).copy_from(&ha);
        let step = j.lu().solve(&(-f))?;
        if step.iter().any(|v| !v.is_finite()) {
            return None;
        }
        x += step.rows(0, nx);
        y += step.rows(nx, ne);
        za += step.rows(nx + ne, na);
    }

    let (h, _) = lay.inequalities(&x);
    if h.iter().any(|v| *v > 1e-10) || za.iter().any(|v| *v < -1e-10) {
        return None;
    }
    let mut z = DVector::zeros(ni);
    for (r, &j) in active.iter().enumerate() {
        z[j] = za[r].max(0.0);
    }
    Some((x, y, z))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::{reference_building, reference_ghp, BuildingGraph};
    use crate::oracle::{objective_flow_only, ProblemKind};

    fn flow_only(outdoor: f64, s: f64) -> SteadyStateProblem {
        SteadyStateProblem::new(
            ProblemKind::FlowOnly { supply: 40.0 },
            reference_building(),
            reference_ghp(),
            s,
            outdoor,
            vec![0.0; 4],
        )
        .unwrap()
    }

    #[test]
    fn interior_optimum_sits_one_third_below_setpoint() {
        // Interior optimum: ζ = λ = -s/COP, so r (Z - T_set) = -s / (COP R) = -1/6.
        let sol = solve_reference(&flow_only(5.0, 10.0), &SolverOptions::default()).unwrap();
        let sp = [22.0, 21.0, 22.0, 20.0];
        for i in 0..4 {
            assert!((sol.point.air[i] - sp[i] + 1.0 / 3.0).abs() < 1e-9, "{:?}", sol.point.air);
        }
        assert!(sol.kkt.summary < 1e-10, "{}", sol.kkt.summary);
    }

    #[test]
    fn frozen_flows_at_mild_weather() {
        let sol = solve_reference(&flow_only(5.0, 10.0), &SolverOptions::default()).unwrap();
        let expect = [0.018549, 0.015402, 0.019418, 0.011378];
        for i in 0..4 {
            assert!((sol.flows[i] - expect[i]).abs() < 2e-6, "{:?}", sol.flows);
        }
    }

    #[test]
    fn no_heat_when_warm_outside() {
        let sol = solve_reference(&flow_only(30.0, 1.0), &SolverOptions::default()).unwrap();
        for u in &sol.point.heat {
            assert!(u.abs() < 1e-9);
        }
        for mm in &sol.point.mu_minus {
            assert!(*mm > 0.0);
        }
    }

    #[test]
    fn cold_weather_saturates_first_zone() {
        let p = flow_only(-4.0, 0.0);
        let sol = solve_reference(&p, &SolverOptions::default()).unwrap();
        assert!(sol.point.mu_plus[0] > 1e-6);
        assert!((sol.flows[0] - 0.03).abs() < 1e-9, "{:?}", sol.flows);
        assert!(objective_flow_only(&sol.point, &p).unwrap() > 0.0);
    }

    #[test]
    fn local_coupling_keeps_interior_offset() {
        let p = flow_only(5.0, 10.0).with_coupling(Coupling::Local);
        let sol = solve_reference(&p, &SolverOptions::default()).unwrap();
        let sp = [22.0, 21.0, 22.0, 20.0];
        for i in 0..4 {
            assert!((sol.point.air[i] - sp[i] + 1.0 / 3.0).abs() < 1e-9);
        }
    }

    #[test]
    fn single_zone_matches_closed_form() {
        // One zone, s = 0, generous bound: comfort is met exactly.
        let mut z = reference_building().zone(0).clone();
        z.max_flow = 1.0;
        let g = BuildingGraph::new(vec![z], vec![]).unwrap();
        let p = SteadyStateProblem::new(ProblemKind::FlowOnly { supply: 40.0 }, g, reference_ghp(), 0.0, 0.0, vec![0.0])
            .unwrap();
        let sol = solve_reference(&p, &SolverOptions::default()).unwrap();
        assert!((sol.point.air[0] - 22.0).abs() < 1e-9);
        // u = Z / R = 22/15
        assert!((sol.point.heat[0] - 22.0 / 15.0).abs() < 1e-9);
        assert!((sol.point.floor[0] - (22.0 + 3.0 * 22.0 / 15.0)).abs() < 1e-9);
    }

    #[test]
    fn joint_problem_interior_supply() {
        let p = SteadyStateProblem::new(ProblemKind::Joint, reference_building(), reference_ghp(), 1.0, -5.0, vec![0.0; 4])
            .unwrap();
        let sol = solve_reference(&p, &SolverOptions::default()).unwrap();
        assert!((sol.point.supply - 40.7098).abs() < 1e-3, "{}", sol.point.supply);
        assert!(sol.point.nu_plus.abs() < 1e-9 && sol.point.nu_minus.abs() < 1e-9);
    }
}
