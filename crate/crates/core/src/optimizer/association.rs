use super::{Association, DualState, OptimizerError, OptimizerOptions, Problem, Scenario};
use crate::channel::UavPose;

#[derive(Debug, Clone)]
pub struct AssociationOutcome {
    pub association: Association,
    /// Per-UAV power: the largest requirement among its users.
    pub powers: Vec<f64>,
    pub total_power: f64,
    /// Dual iterations run.
    pub iterations: usize,
    /// The dual iteration reached a stable association before its cap.
    pub stable: bool,
    /// The branch-and-bound search finished within its node budget, so the
    /// association is a certified optimum for the given poses.
    pub exact: bool,
}

fn cost_matrix(prob: &Problem, qs: &[(f64, f64)]) -> Vec<Vec<f64>> {
    qs.iter().map(|&q| (0..prob.users.len()).map(|j| prob.cost(q, j)).collect()).collect()
}

fn total(w: &[Vec<f64>], assign: &[usize]) -> f64 {
    let mut p = vec![0.0f64; w.len()];
    for (j, &i) in assign.iter().enumerate() {
        p[i] = p[i].max(w[i][j]);
    }
    p.iter().sum()
}

/// Multiplier-driven association: `u_ij = 1` for `i = argmin_k μ_kj w_kj`,
/// powers are per-UAV maxima, and `μ` follows the projected subgradient
/// `[μ + δ(w u - P)]⁺` with row sums capped at one. Returns the best
/// association seen.
fn dual_iteration(
    w: &[Vec<f64>],
    dual: &mut DualState,
    opts: &OptimizerOptions,
) -> (Vec<usize>, f64, usize, bool) {
    let d = w.len();
    let n = w[0].len();
    let scale = w.iter().flatten().cloned().filter(|v| v.is_finite()).fold(0.0, f64::max);
    let scale = if scale > 0.0 { scale } else { 1.0 };
    if dual.mu.iter().flatten().all(|&m| m == 0.0) {
        // all-zero multipliers make every product vanish
        for row in &mut dual.mu {
            row.iter_mut().for_each(|m| *m = 1.0 / n as f64);
        }
    }
    let mut best: Option<(Vec<usize>, f64)> = None;
    let mut prev: Option<Vec<usize>> = None;
    let mut run = 0;
    let mut iterations = 0;
    let mut stable = false;
    while iterations < opts.max_assoc {
        iterations += 1;
        let assign: Vec<usize> = (0..n)
            .map(|j| {
                let mut arg = (f64::INFINITY, 0);
                for i in 0..d {
                    let v = if w[i][j].is_finite() { dual.mu[i][j] * w[i][j] } else { f64::INFINITY };
                    if v < arg.0 {
                        arg = (v, i);
                    }
                }
                arg.1
            })
            .collect();
        let mut p = vec![0.0f64; d];
        for (j, &i) in assign.iter().enumerate() {
            p[i] = p[i].max(w[i][j]);
        }
        let value: f64 = p.iter().sum();
        if best.as_ref().map_or(true, |b| value < b.1) {
            best = Some((assign.clone(), value));
        }
        for i in 0..d {
            for j in 0..n {
                let served = if assign[j] == i { w[i][j] } else { 0.0 };
                let g = (served - p[i]) / scale;
                if g.is_finite() {
                    dual.mu[i][j] = (dual.mu[i][j] + dual.step_delta * g).max(0.0);
                }
            }
            let s: f64 = dual.mu[i].iter().sum();
            if s > 1.0 {
                dual.mu[i].iter_mut().for_each(|m| *m /= s);
            }
        }
        run = if prev.as_ref() == Some(&assign) { run + 1 } else { 0 };
        prev = Some(assign);
        if run + 1 >= opts.assoc_stable {
            stable = true;
            break;
        }
    }
    let (assign, value) = best.expect("at least one iteration");
    (assign, value, iterations, stable)
}

/// Depth-first branch and bound over assignments of the min-sum-of-max
/// problem, seeded with an incumbent. Returns the best assignment and
/// whether the search completed within `node_budget`.
fn exact_search(w: &[Vec<f64>], incumbent: Vec<usize>, node_budget: usize) -> (Vec<usize>, bool) {
    let d = w.len();
    let n = w[0].len();
    let mut order: Vec<usize> = (0..n).collect();
    let hardness: Vec<f64> = (0..n).map(|j| (0..d).map(|i| w[i][j]).fold(f64::INFINITY, f64::min)).collect();
    order.sort_by(|&a, &b| hardness[b].total_cmp(&hardness[a]).then(a.cmp(&b)));

    struct Search<'a> {
        w: &'a [Vec<f64>],
        order: Vec<usize>,
        cur: Vec<f64>,
        assign: Vec<usize>,
        best: Vec<usize>,
        best_value: f64,
        nodes: usize,
        budget: usize,
    }

    impl Search<'_> {
        fn bound(&self, k: usize) -> f64 {
            let mut b: f64 = 0.0;
            for &j in &self.order[k..] {
                let mut m = f64::INFINITY;
                for (i, row) in self.w.iter().enumerate() {
                    m = m.min((row[j] - self.cur[i]).max(0.0));
                }
                b = b.max(m);
            }
            b
        }

        fn dfs(&mut self, k: usize, value: f64) {
            self.nodes += 1;
            if self.nodes > self.budget || value + self.bound(k) >= self.best_value {
                return;
            }
            if k == self.order.len() {
                self.best_value = value;
                self.best = self.assign.clone();
                return;
            }
            let j = self.order[k];
            let mut options: Vec<(f64, usize)> =
                (0..self.w.len()).map(|i| ((self.w[i][j] - self.cur[i]).max(0.0), i)).collect();
            options.sort_by(|a, b| a.0.total_cmp(&b.0).then(a.1.cmp(&b.1)));
            for (inc, i) in options {
                if !inc.is_finite() {
                    break;
                }
                let old = self.cur[i];
                self.cur[i] = old.max(self.w[i][j]);
                self.assign[j] = i;
                self.dfs(k + 1, value + inc);
                self.cur[i] = old;
            }
        }
    }

    let best_value = total(w, &incumbent);
    let mut s = Search {
        w,
        order,
        cur: vec![0.0; d],
        assign: vec![0; n],
        best: incumbent,
        best_value,
        nodes: 0,
        budget: node_budget,
    };
    s.dfs(0, 0.0);
    let complete = s.nodes <= s.budget;
    (s.best, complete)
}

pub(crate) fn solve_association(
    prob: &Problem,
    qs: &[(f64, f64)],
    dual: &mut DualState,
    opts: &OptimizerOptions,
    incumbent: Option<&Association>,
) -> AssociationOutcome {
    let w = cost_matrix(prob, qs);
    let (mut assign, value, iterations, stable) = dual_iteration(&w, dual, opts);
    if let Some(inc) = incumbent {
        if total(&w, &inc.assign) < value {
            assign = inc.assign.clone();
        }
    }
    let (assign, exact) = exact_search(&w, assign, opts.search_nodes);
    if !exact {
        log::warn!("association search hit its node budget; returning the best association found");
    }
    let association = Association { assign };
    let powers = prob.powers(qs, &association);
    AssociationOutcome { total_power: powers.iter().sum(), association, powers, iterations, stable, exact }
}

/// Optimal user association for fixed UAV positions: the multiplier
/// iteration provides the starting assignment, then a branch-and-bound
/// search certifies (or improves) it.
pub fn association_solve(
    scenario: &Scenario,
    poses: &[UavPose],
    dual: &mut DualState,
    opts: &OptimizerOptions,
) -> Result<AssociationOutcome, OptimizerError> {
    let prob = Problem::new(scenario);
    if poses.len() != prob.fleet {
        return Err(OptimizerError::InvalidScenario(format!("{} poses for {} UAVs", poses.len(), prob.fleet)));
    }
    let qs: Vec<(f64, f64)> = poses.iter().map(|p| (p.x, p.y)).collect();
    Ok(solve_association(&prob, &qs, dual, opts, None))
}

/// Enumerates all `D^U` associations; for validation on small instances.
pub fn association_exhaustive(scenario: &Scenario, poses: &[UavPose]) -> Result<(Association, f64), OptimizerError> {
    let prob = Problem::new(scenario);
    let d = poses.len();
    let n = prob.users.len();
    if (d as f64).powi(n as i32) > 1e7 {
        return Err(OptimizerError::TooLarge(format!("{d}^{n} associations")));
    }
    let qs: Vec<(f64, f64)> = poses.iter().map(|p| (p.x, p.y)).collect();
    let w = cost_matrix(&prob, &qs);
    let mut assign = vec![0; n];
    let mut best = (assign.clone(), total(&w, &assign));
    loop {
        // odometer increment
        let mut k = 0;
        while k < n {
            assign[k] += 1;
            if assign[k] < d {
                break;
            }
            assign[k] = 0;
            k += 1;
        }
        if k == n {
            break;
        }
        let v = total(&w, &assign);
        if v < best.1 {
            best = (assign.clone(), v);
        }
    }
    Ok((Association { assign: best.0 }, best.1))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::channel::User;
    use crate::optimizer::tests::scenario;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn dual(d: usize, u: usize) -> DualState {
        DualState::new(d, u, 0.01, 0.01)
    }

    #[test]
    fn single_uav_takes_everyone() {
        let s = scenario(vec![User::new(10.0, 10.0, 1.0), User::new(80.0, 30.0, 2.0)], 1);
        let poses = vec![UavPose::new(50.0, 50.0, 20.0)];
        let out = association_solve(&s, &poses, &mut dual(1, 2), &OptimizerOptions::default()).unwrap();
        assert_eq!(out.association.assign, vec![0, 0]);
        let prob = Problem::new(&s);
        let expect = prob.cost((50.0, 50.0), 0).max(prob.cost((50.0, 50.0), 1));
        assert_eq!(out.total_power, expect);
        assert!(out.exact);
    }

    #[test]
    fn mirror_instance_is_symmetric() {
        let s = scenario(vec![User::new(20.0, 50.0, 1.0), User::new(80.0, 50.0, 1.0)], 2);
        let poses = vec![UavPose::new(30.0, 50.0, 20.0), UavPose::new(70.0, 50.0, 20.0)];
        let out = association_solve(&s, &poses, &mut dual(2, 2), &OptimizerOptions::default()).unwrap();
        assert_eq!(out.association.assign, vec![0, 1]);
        assert!((out.powers[0] - out.powers[1]).abs() <= 1e-12 * out.powers[0]);
    }

    #[test]
    fn lp_relaxation_gap_instance() {
        // costs [[1, 2], [2, 1]] pattern: the optimum puts both users on one UAV
        let w = vec![vec![1.0, 2.0], vec![2.0, 1.0]];
        let (assign, exact) = exact_search(&w, vec![0, 1], 1000);
        assert!(exact);
        assert_eq!(total(&w, &assign), 2.0);
    }

    #[test]
    fn matches_enumeration_on_random_instances() {
        let mut rng = ChaCha8Rng::seed_from_u64(21);
        for _ in 0..30 {
            let users: Vec<User> = (0..6)
                .map(|_| User::new(rng.gen_range(0.0..100.0), rng.gen_range(0.0..100.0), rng.gen_range(0.5..3.0)))
                .collect();
            let s = scenario(users, 3);
            let poses: Vec<UavPose> = (0..3)
                .map(|_| UavPose::new(rng.gen_range(0.0..100.0), rng.gen_range(0.0..100.0), 20.0))
                .collect();
            let out = association_solve(&s, &poses, &mut dual(3, 6), &OptimizerOptions::default()).unwrap();
            let (_, brute) = association_exhaustive(&s, &poses).unwrap();
            assert!((out.total_power - brute).abs() <= 1e-9 * brute);
            assert!(out.association.assign.iter().all(|&i| i < 3));
        }
    }

    #[test]
    fn dual_stays_valid() {
        let s = scenario((0..5).map(|k| User::new(10.0 + 15.0 * k as f64, 40.0, 1.0)).collect(), 2);
        let poses = vec![UavPose::new(20.0, 50.0, 20.0), UavPose::new(70.0, 50.0, 20.0)];
        let mut d = dual(2, 5);
        association_solve(&s, &poses, &mut d, &OptimizerOptions::default()).unwrap();
        assert!(d.is_valid());
    }

    #[test]
    fn exhaustive_guard() {
        let s = scenario((0..20).map(|k| User::new(4.0 * k as f64, 40.0, 1.0)).collect(), 4);
        let poses = vec![UavPose::new(20.0, 50.0, 20.0); 4];
        assert!(matches!(association_exhaustive(&s, &poses), Err(OptimizerError::TooLarge(_))));
    }
}
