//! Majorization-minimization for L2-penalized unbalanced OT.
//!
//! Expanding the penalties, the objective is a nonnegative quadratic program
//! `½ tᵀ A t + hᵀ t` whose curvature `A` has only nonnegative entries:
//! `(A t)_ij = 2λ1 (T1)_i + 2λ2 (Tᵀ1)_j` and `h_ij = C_ij − 2λ1 a_i − 2λ2 b_j`.
//! The multiplicative update
//!
//! ```text
//! T_ij ← T_ij · max(0, −h_ij) / (A t)_ij
//! ```
//!
//! minimizes a separable upper bound of the objective at every step, so the
//! objective never increases and iterates stay nonnegative.
//!
//! Plain multiplicative steps crawl once λ is large: every ratio is
//! `1 − O(C/λ)`. With `extrapolate` set, each step is stretched along the
//! MM direction `D = T_mm − T` to the exact minimizer of the (quadratic)
//! objective on that ray, clamped to `[1, 0.9·s_max]` where `s_max` is the
//! largest step keeping `T ≥ 0`. Since the objective is convex along the ray
//! and already decreases at step 1, stretching never breaks monotonicity.
//!
//! Close to a solution progress is linear at best, so periodically (starting
//! every [`POLISH_EVERY`] iterations, backing off after failures) and whenever
//! the objective stalls the solver also proposes the exact stationary plan on a guessed support (see
//! `polish`). The proposal replaces the iterate only if it is no worse and
//! meets the KKT tolerance, since zeroed cells could never regrow under
//! multiplicative updates.

use ndarray::Array2;
use serde::{Deserialize, Serialize};

use super::{polish, Marginals, TransportPlan, WeightVectors};
use crate::embed::CostMatrix;
use crate::error::{Error, Result};

const DENOMINATOR_FLOOR: f64 = 1e-300;
const STEP_BACKOFF: f64 = 0.9;
/// Positive cells of an extrapolated step are kept at least this large.
const CELL_FLOOR: f64 = 1e-200;
pub const POLISH_EVERY: usize = 20;
/// The polish interval doubles after each failure, up to `2^` this.
const MAX_POLISH_BACKOFF: u32 = 5;
/// Iterations between KKT checks outside polish attempts.
const RESIDUAL_EVERY: usize = 5;
/// Weight of `a bᵀ` when blending in a hint.
const HINT_BLEND: f64 = 1e-3;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MmOptions {
    /// Stop once the KKT residual falls below this.
    pub kkt_tol: f64,
    /// Stop once one iteration changes the objective by less than this,
    /// relative to its magnitude.
    pub rel_obj_tol: f64,
    pub max_iter: usize,
    /// Keep the per-iteration objective values.
    pub record_trace: bool,
    /// Line-search along each MM direction (see module docs).
    pub extrapolate: bool,
    /// Try the support-restricted exact solve periodically.
    pub polish: bool,
}

impl Default for MmOptions {
    fn default() -> Self {
        MmOptions {
            kkt_tol: 1e-8,
            rel_obj_tol: 1e-10,
            max_iter: 10_000,
            record_trace: true,
            extrapolate: true,
            polish: true,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum StopReason {
    Kkt,
    ObjectiveStalled,
    MaxIter,
}

/// Flat row-major view of one penalized problem.
struct Problem<'a> {
    m: usize,
    n: usize,
    cost: Vec<f64>,
    w: &'a WeightVectors,
    lambda1: f64,
    lambda2: f64,
}

/// Iterate with its marginals and `<C,T>`.
struct State {
    t: Vec<f64>,
    r: Vec<f64>,
    c: Vec<f64>,
    linear: f64,
}

impl Problem<'_> {
    fn new<'a>(w: &'a WeightVectors, cost: &CostMatrix, lambda1: f64, lambda2: f64) -> Problem<'a> {
        let (m, n) = cost.entries().dim();
        Problem {
            m,
            n,
            cost: cost.entries().iter().copied().collect(),
            w,
            lambda1,
            lambda2,
        }
    }

    fn state(&self, t: Vec<f64>) -> State {
        let mut s = State {
            t,
            r: vec![0.0; self.m],
            c: vec![0.0; self.n],
            linear: 0.0,
        };
        self.refresh(&mut s);
        s
    }

    fn refresh(&self, s: &mut State) {
        s.r.fill(0.0);
        s.c.fill(0.0);
        let mut linear = 0.0;
        for (i, (row, crow)) in s.t.chunks_exact(self.n).zip(self.cost.chunks_exact(self.n)).enumerate() {
            let mut ri = 0.0;
            for ((&t, &cij), cj) in row.iter().zip(crow).zip(s.c.iter_mut()) {
                ri += t;
                *cj += t;
                linear += t * cij;
            }
            s.r[i] = ri;
        }
        s.linear = linear;
    }

    /// `2λ1(r − a)` and `2λ2(c − b)`: the row and column parts of ∇.
    fn gradient_parts(&self, s: &State) -> (Vec<f64>, Vec<f64>) {
        let gr = s.r.iter().zip(&self.w.a).map(|(x, a)| 2.0 * self.lambda1 * (x - a)).collect();
        let gc = s.c.iter().zip(&self.w.b).map(|(x, b)| 2.0 * self.lambda2 * (x - b)).collect();
        (gr, gc)
    }

    fn objective(&self, s: &State) -> f64 {
        penalty_sum(&s.r, &s.c, s.linear, self.w, self.lambda1, self.lambda2)
    }

    fn residual(&self, s: &State) -> f64 {
        let (gr, gc) = self.gradient_parts(s);
        let mut worst = 0.0f64;
        for ((row, crow), gri) in s.t.chunks_exact(self.n).zip(self.cost.chunks_exact(self.n)).zip(&gr) {
            for ((&t, &cij), gcj) in row.iter().zip(crow).zip(&gc) {
                worst = worst.max(t.min(cij + gri + gcj).abs());
            }
        }
        worst
    }

    fn numerator(&self) -> Vec<f64> {
        let (l1, l2) = (self.lambda1, self.lambda2);
        let mut num = Vec::with_capacity(self.m * self.n);
        for (i, crow) in self.cost.chunks_exact(self.n).enumerate() {
            for (j, &cij) in crow.iter().enumerate() {
                num.push((2.0 * l1 * self.w.a[i] + 2.0 * l2 * self.w.b[j] - cij).max(0.0));
            }
        }
        num
    }

    /// One MM step, stretched along its direction when `extrapolate` is set.
    ///
    /// The plain update is `T ∘ ρ` with `ρ = max(0, −h) / (A t)`, so the
    /// direction is `D = T ∘ (ρ − 1)` and the largest step keeping `T ≥ 0`
    /// is `1 / (1 − min ρ)` over the support. `rho` is scratch space.
    fn advance(&self, s: &mut State, num: &[f64], rho: &mut [f64], extrapolate: bool) {
        let (l1, l2) = (self.lambda1, self.lambda2);
        let (gr, gc) = self.gradient_parts(s);
        let mut dc = vec![0.0; self.n];
        let (mut dr_sq, mut slope, mut rho_min) = (0.0, 0.0, f64::INFINITY);
        for (i, (((prow, trow), nrow), crow)) in rho
            .chunks_exact_mut(self.n)
            .zip(s.t.chunks_exact(self.n))
            .zip(num.chunks_exact(self.n))
            .zip(self.cost.chunks_exact(self.n))
            .enumerate()
        {
            let ri = 2.0 * l1 * s.r[i];
            let mut dri = 0.0;
            for (j, (((p, &t), &nu), &cij)) in prow.iter_mut().zip(trow).zip(nrow).zip(crow).enumerate() {
                let den = ri + 2.0 * l2 * s.c[j];
                *p = if den < DENOMINATOR_FLOOR { 0.0 } else { nu / den };
                if extrapolate && t > 0.0 {
                    let d = t * (*p - 1.0);
                    dri += d;
                    dc[j] += d;
                    slope += (cij + gr[i] + gc[j]) * d;
                    rho_min = rho_min.min(*p);
                }
            }
            dr_sq += dri * dri;
        }
        let mut step = 1.0;
        if extrapolate {
            let curvature = l1 * dr_sq + l2 * dc.iter().map(|x| x * x).sum::<f64>();
            let s_max = if rho_min < 1.0 { 1.0 / (1.0 - rho_min) } else { f64::INFINITY };
            if curvature > 0.0 && slope < 0.0 {
                step = (-slope / (2.0 * curvature)).min(STEP_BACKOFF * s_max);
            }
            if !(step > 1.0 && step.is_finite()) {
                step = 1.0;
            }
        }
        s.c.fill(0.0);
        let mut linear = 0.0;
        for (i, ((trow, prow), crow)) in s
            .t
            .chunks_exact_mut(self.n)
            .zip(rho.chunks_exact(self.n))
            .zip(self.cost.chunks_exact(self.n))
            .enumerate()
        {
            let mut ri = 0.0;
            for (((t, &p), &cij), cj) in trow.iter_mut().zip(prow).zip(crow).zip(s.c.iter_mut()) {
                if step > 1.0 {
                    let v = *t * (1.0 + step * (p - 1.0));
                    // stay clear of subnormals, which are slow and gain nothing
                    *t = if v > 0.0 { v.max(CELL_FLOOR) } else if *t > 0.0 && p > 0.0 { CELL_FLOOR } else { 0.0 };
                } else {
                    *t *= p;
                }
                ri += *t;
                *cj += *t;
                linear += *t * cij;
            }
            s.r[i] = ri;
        }
        s.linear = linear;
    }

    fn to_array(&self, t: &[f64]) -> Array2<f64> {
        Array2::from_shape_vec((self.m, self.n), t.to_vec()).expect("shape")
    }

    /// Best polished candidate meeting `tol` with objective ≤ `bound`.
    fn polish(&self, s: &State, cost: &CostMatrix, tol: f64, bound: f64) -> Option<(State, f64, f64)> {
        let (gr, gc) = self.gradient_parts(s);
        let grad = Array2::from_shape_fn((self.m, self.n), |(i, j)| self.cost[i * self.n + j] + gr[i] + gc[j]);
        let plan = self.to_array(&s.t);
        let scale = 1.0 + self.cost.iter().fold(0.0f64, |acc, &x| acc.max(x));
        for rule in polish::SUPPORT_RULES {
            let cells = polish::support_cells(&plan, &grad, rule, scale);
            let Some(cand) = polish::forest_candidate(&cells, self.w, cost, self.lambda1, self.lambda2) else {
                continue;
            };
            let cand = self.state(cand.into_iter().collect());
            let obj = self.objective(&cand);
            let res = self.residual(&cand);
            if obj <= bound && res < tol {
                return Some((cand, obj, res));
            }
        }
        None
    }

}

/// `<C,T> + λ1‖r − a‖² + λ2‖c − b‖²` from marginals, skipping zero
/// discrepancies so an infinite weight is harmless there.
pub(super) fn penalty_sum(r: &[f64], c: &[f64], linear: f64, w: &WeightVectors, lambda1: f64, lambda2: f64) -> f64 {
    let d1: f64 = r.iter().zip(&w.a).map(|(x, y)| (x - y) * (x - y)).sum();
    let d2: f64 = c.iter().zip(&w.b).map(|(x, y)| (x - y) * (x - y)).sum();
    let mut obj = linear;
    if d1 != 0.0 {
        obj += lambda1 * d1;
    }
    if d2 != 0.0 {
        obj += lambda2 * d2;
    }
    obj
}

/// `max_ij |min(T_ij, ∇_ij)|` with
/// `∇_ij = C_ij + 2λ1((T1)_i − a_i) + 2λ2((Tᵀ1)_j − b_j)`.
pub fn kkt_residual(
    plan: &Array2<f64>,
    w: &WeightVectors,
    cost: &CostMatrix,
    lambda1: f64,
    lambda2: f64,
) -> f64 {
    let p = Problem::new(w, cost, lambda1, lambda2);
    p.residual(&p.state(plan.iter().copied().collect()))
}

/// One plain multiplicative update of `plan`.
pub fn mm_step(
    plan: &Array2<f64>,
    w: &WeightVectors,
    cost: &CostMatrix,
    lambda1: f64,
    lambda2: f64,
) -> Array2<f64> {
    let p = Problem::new(w, cost, lambda1, lambda2);
    let mut s = p.state(plan.iter().copied().collect());
    let mut rho = vec![0.0; p.m * p.n];
    p.advance(&mut s, &p.numerator(), &mut rho, false);
    p.to_array(&s.t)
}

/// Solve the L2-penalized problem from `T⁰ = a bᵀ`.
///
/// Non-convergence is not an error: the plan comes back with
/// `converged = false` and its final KKT residual.
pub fn solve_uot_mm(
    w: &WeightVectors,
    cost: &CostMatrix,
    lambda1: f64,
    lambda2: f64,
    opts: &MmOptions,
) -> Result<TransportPlan> {
    solve_uot_mm_hinted(w, cost, lambda1, lambda2, opts, None)
}

/// Like [`solve_uot_mm`], but before the first step `T⁰` is replaced by a
/// blend with `hint` (typically the exact OT plan) if that lowers the
/// objective. Large penalties make plain MM creep, so a balanced plan is a
/// much better start there. The trace still begins at `T⁰ = a bᵀ`.
pub fn solve_uot_mm_hinted(
    w: &WeightVectors,
    cost: &CostMatrix,
    lambda1: f64,
    lambda2: f64,
    opts: &MmOptions,
    hint: Option<&Array2<f64>>,
) -> Result<TransportPlan> {
    let (m, n) = (w.m(), w.n());
    if cost.entries().dim() != (m, n) {
        return Err(Error::Shape(format!(
            "cost {:?} for weights {m}x{n}",
            cost.entries().dim()
        )));
    }
    if !(lambda1.is_finite() && lambda2.is_finite()) {
        return Err(Error::InvalidArgument("penalty weights must be finite".into()));
    }
    if let Some(h) = hint {
        if h.dim() != (m, n) || h.iter().any(|x| !(x.is_finite() && *x >= 0.0)) {
            return Err(Error::Shape(format!("hint {:?} for weights {m}x{n}", h.dim())));
        }
    }
    let marg = Marginals::Penalized { lambda1, lambda2 };
    if lambda1 == 0.0 && lambda2 == 0.0 {
        // nothing rewards transport against a nonnegative cost
        return Ok(TransportPlan {
            plan: Array2::zeros((m, n)),
            marginals: marg,
            objective: 0.0,
            iterations: 0,
            objective_trace: vec![0.0],
            converged: true,
            kkt_residual: 0.0,
        });
    }
    if lambda1 <= 0.0 || lambda2 <= 0.0 {
        return Err(Error::InvalidArgument(format!(
            "penalty weights must be positive, got {lambda1} and {lambda2}"
        )));
    }

    let p = Problem::new(w, cost, lambda1, lambda2);
    let outer: Vec<f64> = w.a.iter().flat_map(|&ai| w.b.iter().map(move |&bj| ai * bj)).collect();
    let mut s = p.state(outer);
    let num = p.numerator();

    let mut objective = p.objective(&s);
    let mut trace = Vec::new();
    if opts.record_trace {
        trace.push(objective);
    }
    if let Some(hint) = hint {
        // keep every cell positive so nothing is frozen at zero
        let blend: Vec<f64> = s
            .t
            .iter()
            .zip(hint.iter())
            .map(|(&x, &h)| HINT_BLEND * x + (1.0 - HINT_BLEND) * h)
            .collect();
        let blend = p.state(blend);
        let blend_obj = p.objective(&blend);
        if blend_obj < objective {
            s = blend;
            objective = blend_obj;
        }
    }
    let mut residual = p.residual(&s);
    let mut reason = (residual < opts.kkt_tol).then_some(StopReason::Kkt);
    let mut iterations = 0;
    let mut rho = vec![0.0; m * n];
    let mut next_polish = POLISH_EVERY;
    let mut polish_failures = 0u32;
    while reason.is_none() {
        if iterations == opts.max_iter {
            reason = Some(StopReason::MaxIter);
            break;
        }
        p.advance(&mut s, &num, &mut rho, opts.extrapolate);
        iterations += 1;
        let mut next = p.objective(&s);
        let stalled = (objective - next).abs() < opts.rel_obj_tol * next.abs().max(f64::MIN_POSITIVE);
        let last = iterations == opts.max_iter;
        let polish_now = opts.polish && (iterations >= next_polish || stalled || last);
        let checked = polish_now || stalled || last || iterations % RESIDUAL_EVERY == 0;
        if checked {
            residual = p.residual(&s);
        }
        if polish_now && residual >= opts.kkt_tol {
            if let Some((cand, obj, res)) = p.polish(&s, cost, opts.kkt_tol, next) {
                (s, next, residual) = (cand, obj, res);
            } else {
                // the support guess keeps failing while the iterate drifts slowly
                polish_failures = (polish_failures + 1).min(MAX_POLISH_BACKOFF);
            }
            next_polish = iterations + (POLISH_EVERY << polish_failures);
        }
        if opts.record_trace {
            trace.push(next);
        }
        objective = next;
        if checked && residual < opts.kkt_tol {
            reason = Some(StopReason::Kkt);
        } else if stalled {
            reason = Some(StopReason::ObjectiveStalled);
        }
    }
    if !opts.record_trace {
        trace.push(objective);
    }
    Ok(TransportPlan {
        plan: p.to_array(&s.t),
        marginals: marg,
        objective,
        iterations,
        objective_trace: trace,
        converged: reason != Some(StopReason::MaxIter),
        kkt_residual: residual,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::ot::{marginals, solve_exact_ot, uot_objective};
    use ndarray::array;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn random_cost(rng: &mut ChaCha8Rng, m: usize, n: usize) -> CostMatrix {
        CostMatrix::new(Array2::from_shape_fn((m, n), |_| rng.random_range(0.0..2.0))).unwrap()
    }

    #[test]
    fn zero_penalty_gives_empty_plan() {
        let w = WeightVectors::uniform(2, 3);
        let c = CostMatrix::new(Array2::from_elem((2, 3), 0.5)).unwrap();
        let p = solve_uot_mm(&w, &c, 0.0, 0.0, &MmOptions::default()).unwrap();
        assert!(p.plan.iter().all(|&x| x == 0.0));
        assert_eq!(p.objective, 0.0);
    }

    #[test]
    fn rejects_nonpositive_penalty() {
        let w = WeightVectors::uniform(2, 2);
        let c = CostMatrix::new(Array2::zeros((2, 2))).unwrap();
        assert!(solve_uot_mm(&w, &c, -1.0, 1.0, &MmOptions::default()).is_err());
        assert!(solve_uot_mm(&w, &c, 0.0, 1.0, &MmOptions::default()).is_err());
    }

    #[test]
    fn zero_diagonal_reaches_zero_objective() {
        let w = WeightVectors::uniform(4, 4);
        let mut c = Array2::from_elem((4, 4), 0.8);
        c.diag_mut().fill(0.0);
        let c = CostMatrix::new(c).unwrap();
        for lambda in [1.0, 10.0, 100.0] {
            let p = solve_uot_mm(&w, &c, lambda, lambda, &MmOptions::default()).unwrap();
            assert!(p.objective <= 1e-8, "λ={lambda}: {}", p.objective);
        }
    }

    #[test]
    fn fixed_point_is_stationary() {
        let w = WeightVectors::uniform(3, 3);
        let mut c = Array2::from_elem((3, 3), 1.0);
        c.diag_mut().fill(0.0);
        let c = CostMatrix::new(c).unwrap();
        let t = Array2::<f64>::eye(3) / 3.0;
        assert!(kkt_residual(&t, &w, &c, 5.0, 5.0) == 0.0);
        let next = mm_step(&t, &w, &c, 5.0, 5.0);
        assert!((&next - &t).iter().all(|x| x.abs() <= 1e-12));
    }

    #[test]
    fn large_penalty_approaches_balanced() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        for _ in 0..10 {
            let w = WeightVectors::uniform(4, 5);
            let c = random_cost(&mut rng, 4, 5);
            let exact = solve_exact_ot(&w, &c).unwrap();
            let p = solve_uot_mm_hinted(&w, &c, 1e6, 1e6, &MmOptions::default(), Some(&exact.plan)).unwrap();
            let (r, col) = marginals(&p.plan);
            assert!(r.iter().zip(&w.a).all(|(x, a)| (x - a).abs() < 1e-3));
            assert!(col.iter().zip(&w.b).all(|(x, b)| (x - b).abs() < 1e-3));
            assert!((p.transport_cost(&c) - exact.objective).abs() < 1e-3);
            assert!(p.objective_trace.windows(2).all(|t| t[1] <= t[0] + 1e-12));
        }
    }

    #[test]
    fn hint_is_ignored_when_it_does_not_help() {
        let mut rng = ChaCha8Rng::seed_from_u64(8);
        let w = WeightVectors::uniform(5, 4);
        let c = random_cost(&mut rng, 5, 4);
        let plain = solve_uot_mm(&w, &c, 1.0, 1.0, &MmOptions::default()).unwrap();
        // an empty plan scores worse than a bᵀ for these penalties
        let hinted = solve_uot_mm_hinted(&w, &c, 1.0, 1.0, &MmOptions::default(), Some(&Array2::zeros((5, 4)))).unwrap();
        assert_eq!(plain.plan, hinted.plan);
        assert!(solve_uot_mm_hinted(&w, &c, 1.0, 1.0, &MmOptions::default(), Some(&Array2::zeros((2, 2)))).is_err());
    }

    #[test]
    fn small_problems_reach_kkt_tolerance() {
        let mut rng = ChaCha8Rng::seed_from_u64(21);
        for k in 0..60 {
            let (m, n) = (rng.random_range(3..=10), rng.random_range(3..=10));
            let w = WeightVectors::uniform(m, n);
            let c = random_cost(&mut rng, m, n);
            let lambda = [1.0, 10.0, 100.0][k % 3];
            let p = solve_uot_mm(&w, &c, lambda, lambda, &MmOptions::default()).unwrap();
            assert!(p.kkt_residual < 1e-8, "λ={lambda}: {}", p.kkt_residual);
            assert!((kkt_residual(&p.plan, &w, &c, lambda, lambda) - p.kkt_residual).abs() < 1e-15);
        }
    }

    #[test]
    fn plain_options_still_descend() {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let w = WeightVectors::uniform(6, 6);
        let c = random_cost(&mut rng, 6, 6);
        let opts = MmOptions {
            extrapolate: false,
            polish: false,
            max_iter: 500,
            ..MmOptions::default()
        };
        let p = solve_uot_mm(&w, &c, 10.0, 10.0, &opts).unwrap();
        assert!(p.objective_trace.windows(2).all(|t| t[1] <= t[0] + 1e-12));
        // each recorded step is exactly one multiplicative update
        let q = solve_uot_mm(&w, &c, 10.0, 10.0, &MmOptions { max_iter: 1, ..opts }).unwrap();
        let t0 = Array2::from_elem((6, 6), 1.0 / 36.0);
        assert!((&q.plan - &mm_step(&t0, &w, &c, 10.0, 10.0)).iter().all(|x| x.abs() < 1e-15));
    }

    #[test]
    fn trace_is_monotone_and_objective_consistent() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        for _ in 0..50 {
            let (m, n) = (rng.random_range(3..=10), rng.random_range(3..=10));
            let w = WeightVectors::uniform(m, n);
            let c = random_cost(&mut rng, m, n);
            let lambda = [1.0, 10.0, 100.0][rng.random_range(0..3)];
            let p = solve_uot_mm(&w, &c, lambda, lambda, &MmOptions::default()).unwrap();
            for pair in p.objective_trace.windows(2) {
                assert!(pair[1] <= pair[0] + 1e-12);
            }
            let direct = uot_objective(&p.plan, &w, &c, lambda, lambda).unwrap();
            assert!((direct - p.objective).abs() <= 1e-12 * direct.abs().max(1.0));
        }
    }

    #[test]
    fn transpose_symmetry() {
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        let w = WeightVectors::new(vec![0.2, 0.5, 0.3], vec![0.25, 0.25, 0.1, 0.4]).unwrap();
        let c = random_cost(&mut rng, 3, 4);
        let p = solve_uot_mm(&w, &c, 3.0, 7.0, &MmOptions::default()).unwrap();
        let q = solve_uot_mm(&w.swapped(), &c.transposed(), 7.0, 3.0, &MmOptions::default()).unwrap();
        assert!((&p.plan - &q.plan.t()).iter().all(|x| x.abs() <= 1e-9));
    }

    #[test]
    fn denominator_guard_zeroes_cells() {
        let w = WeightVectors::uniform(1, 1);
        let c = CostMatrix::new(array![[5.0]]).unwrap();
        // numerator 2λ(a+b) − C = 4 − 5 < 0: cell is driven to zero at once
        let p = solve_uot_mm(&w, &c, 1.0, 1.0, &MmOptions::default()).unwrap();
        assert_eq!(p.plan[[0, 0]], 0.0);
        assert!(p.converged);
        let again = mm_step(&p.plan, &w, &c, 1.0, 1.0);
        assert_eq!(again[[0, 0]], 0.0);
    }
}
