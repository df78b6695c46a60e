use super::{
    min_sq_separation, to_poses, Association, DualState, OptimizerError, OptimizerOptions, Problem, Scenario,
};
use crate::channel::UavPose;

/// First-order lower bound of `‖q_i - q_k‖²` around the reference pair:
/// `-‖q_i^r - q_k^r‖² + 2 (q_i^r - q_k^r)ᵀ (q_i - q_k)`.
pub fn taylor_separation(qi: (f64, f64), qk: (f64, f64), qi_ref: (f64, f64), qk_ref: (f64, f64)) -> f64 {
    let (rx, ry) = (qi_ref.0 - qk_ref.0, qi_ref.1 - qk_ref.1);
    -(rx * rx + ry * ry) + 2.0 * (rx * (qi.0 - qk.0) + ry * (qi.1 - qk.1))
}

fn positions(poses: &[UavPose]) -> Vec<(f64, f64)> {
    poses.iter().map(|p| (p.x, p.y)).collect()
}

/// Largest `t ∈ [0, 1]` such that `refs + t (cand - refs)` satisfies every
/// linearised separation constraint. The constraints are affine in `t`.
fn feasible_step(cand: &[(f64, f64)], refs: &[(f64, f64)], d_min: f64) -> f64 {
    let mut t: f64 = 1.0;
    for i in 0..refs.len() {
        for k in i + 1..refs.len() {
            let at0 = taylor_separation(refs[i], refs[k], refs[i], refs[k]);
            let at1 = taylor_separation(cand[i], cand[k], refs[i], refs[k]);
            if at1 >= d_min {
                continue;
            }
            if at0 <= d_min {
                return 0.0;
            }
            t = t.min((at0 - d_min) / (at0 - at1));
        }
    }
    t.clamp(0.0, 1.0)
}

pub(crate) struct Subproblem {
    pub positions: Vec<(f64, f64)>,
    pub objective: f64,
}

/// Dual decomposition of the convexified placement problem. Returns the
/// best primal point recovered along the dual trajectory; it satisfies the
/// linearised (hence the true) separation constraints and is never worse
/// than the reference.
pub(crate) fn solve_subproblem(
    prob: &Problem,
    assoc: &Association,
    refs: &[(f64, f64)],
    dual: &mut DualState,
    opts: &OptimizerOptions,
) -> Result<Subproblem, OptimizerError> {
    let d = prob.fleet;
    let n_users = prob.users.len();
    let c_max = prob.coef.iter().cloned().fold(0.0, f64::max);
    let ref_obj = prob.objective(refs, assoc);
    if c_max <= 0.0 || !c_max.is_finite() {
        return Ok(Subproblem { positions: refs.to_vec(), objective: ref_obj });
    }

    let h = prob.altitude;
    let e = prob.exp;
    let a: Vec<f64> = prob.coef.iter().map(|&c| (c / c_max).powf(2.0 / e)).collect();
    let u: Vec<(f64, f64)> = prob.users.iter().map(|&(v, w)| (v / h, w / h)).collect();
    let r: Vec<(f64, f64)> = refs.iter().map(|&(x, y)| (x / h, y / h)).collect();
    let d_min = prob.d_min / (h * h);
    let separate = opts.separation && d > 1;
    let members: Vec<Vec<usize>> = (0..d).map(|i| assoc.members(i).collect()).collect();
    let gamma = dual.step_gamma;

    let mut best = if separate && min_sq_separation(refs) < prob.d_min - 1e-9 {
        (f64::INFINITY, refs.to_vec())
    } else {
        (ref_obj, refs.to_vec())
    };
    let mut q = r.clone();
    let mut p_root = vec![0.0; d];
    let mut converged = false;
    let mut iterations = 0;

    for _ in 0..opts.max_inner {
        iterations += 1;
        // Lagrangian minimiser for the current multipliers.
        for i in 0..d {
            if members[i].is_empty() {
                q[i] = r[i];
                p_root[i] = 0.0;
                continue;
            }
            let la = &dual.lambda_alpha[i];
            let (mut wsum, mut sx, mut sy, mut lsum) = (0.0, 0.0, 0.0, 0.0);
            for &j in &members[i] {
                let wgt = la[j] * a[j];
                wsum += wgt;
                sx += wgt * u[j].0;
                sy += wgt * u[j].1;
                lsum += la[j];
            }
            if separate {
                for k in 0..d {
                    if k != i {
                        let lb = dual.lambda_beta[i][k];
                        sx += lb * (r[i].0 - r[k].0);
                        sy += lb * (r[i].1 - r[k].1);
                    }
                }
            }
            q[i] = if wsum > 1e-300 { (sx / wsum, sy / wsum) } else { r[i] };
            // P^(2/(m+3)) at the stationary power ((2/(m+3)) Σλ)^((m+3)/(m+1))
            p_root[i] = (2.0 * lsum / e).powf(2.0 / (e - 2.0));
        }
        if q.iter().any(|p| !p.0.is_finite() || !p.1.is_finite()) {
            return Err(OptimizerError::NonFinite("placement subproblem"));
        }

        // Primal recovery: pull back onto the linearised feasible set and
        // price with the exact per-UAV maximum.
        let mut cand: Vec<(f64, f64)> = q.iter().map(|&(x, y)| (x * h, y * h)).collect();
        if separate {
            let t = feasible_step(&cand, refs, prob.d_min);
            for (c, rf) in cand.iter_mut().zip(refs) {
                *c = (rf.0 + t * (c.0 - rf.0), rf.1 + t * (c.1 - rf.1));
            }
        }
        let obj = prob.objective(&cand, assoc);
        if obj < best.0 {
            best = (obj, cand);
        }

        // Projected dual ascent.
        let mut residual: f64 = 0.0;
        for i in 0..d {
            for &j in &members[i] {
                let dist = (q[i].0 - u[j].0).powi(2) + (q[i].1 - u[j].1).powi(2) + 1.0;
                let g = a[j] * dist - p_root[i];
                let old = dual.lambda_alpha[i][j];
                let new = (old + gamma * g).max(0.0);
                residual = residual.max((new - old).abs() / gamma);
                dual.lambda_alpha[i][j] = new;
            }
        }
        if separate {
            for i in 0..d {
                for k in i + 1..d {
                    let g = d_min - taylor_separation(q[i], q[k], r[i], r[k]);
                    let old = dual.lambda_beta[i][k];
                    let new = (old + gamma * g).max(0.0);
                    residual = residual.max((new - old).abs() / gamma);
                    dual.lambda_beta[i][k] = new;
                    dual.lambda_beta[k][i] = new;
                }
            }
        }
        if residual < opts.epsilon {
            converged = true;
            break;
        }
    }
    debug_assert!(dual.lambda_alpha.iter().all(|row| row.len() == n_users));
    log::trace!("placement dual: {iterations} iterations, converged {converged}");
    Ok(Subproblem { positions: best.1, objective: best.0 })
}

/// One convexified placement problem around `reference` for a fixed
/// association. Returns the new poses (with the powers their members need)
/// and the updated multipliers.
pub fn placement_subproblem(
    scenario: &Scenario,
    association: &Association,
    reference: &[UavPose],
    mut dual: DualState,
    opts: &OptimizerOptions,
) -> Result<(Vec<UavPose>, DualState), OptimizerError> {
    let prob = Problem::new(scenario);
    check_inputs(&prob, association, reference)?;
    let refs = positions(reference);
    let sub = solve_subproblem(&prob, association, &refs, &mut dual, opts)?;
    let powers = prob.powers(&sub.positions, association);
    Ok((to_poses(&sub.positions, &powers, prob.altitude), dual))
}

fn check_inputs(prob: &Problem, assoc: &Association, poses: &[UavPose]) -> Result<(), OptimizerError> {
    if poses.len() != prob.fleet {
        return Err(OptimizerError::InvalidScenario(format!("{} poses for {} UAVs", poses.len(), prob.fleet)));
    }
    if assoc.assign.len() != prob.users.len() || assoc.assign.iter().any(|&i| i >= prob.fleet) {
        return Err(OptimizerError::InvalidScenario("association does not match the scenario".into()));
    }
    Ok(())
}

#[derive(Debug, Clone)]
pub struct ScaOutcome {
    pub poses: Vec<UavPose>,
    pub total_power: f64,
    /// Objective at the start and after every SCA iteration.
    pub trace: Vec<f64>,
    pub dual: DualState,
    pub converged: bool,
    pub iterations: usize,
}

pub(crate) fn run_sca(
    prob: &Problem,
    assoc: &Association,
    initial: &[(f64, f64)],
    dual: &mut DualState,
    opts: &OptimizerOptions,
) -> Result<(Vec<(f64, f64)>, Vec<f64>, bool), OptimizerError> {
    if !prob.separated(initial, opts.separation) {
        return Err(OptimizerError::InvalidScenario("initial poses violate the UAV separation".into()));
    }
    let mut current = initial.to_vec();
    let mut obj = prob.objective(&current, assoc);
    let mut trace = vec![obj];
    let mut converged = false;
    for _ in 0..opts.max_sca {
        let sub = solve_subproblem(prob, assoc, &current, dual, opts)?;
        let next = sub.objective.min(obj);
        trace.push(next);
        let improvement = obj - next;
        if sub.objective < obj {
            current = sub.positions;
        }
        obj = next;
        if improvement <= opts.sca_tol * obj.abs() {
            converged = true;
            break;
        }
    }
    Ok((current, trace, converged))
}

/// Successive convex approximation for a fixed association: linearise the
/// separation constraints at the current iterate, solve the convexified
/// problem, move the reference there, and stop once the relative decrease
/// falls below `sca_tol`.
pub fn sca_placement(
    scenario: &Scenario,
    association: &Association,
    initial: &[UavPose],
    mut dual: DualState,
    opts: &OptimizerOptions,
) -> Result<ScaOutcome, OptimizerError> {
    opts.validate()?;
    let prob = Problem::new(scenario);
    check_inputs(&prob, association, initial)?;
    let (qs, trace, converged) = run_sca(&prob, association, &positions(initial), &mut dual, opts)?;
    let powers = prob.powers(&qs, association);
    Ok(ScaOutcome {
        poses: to_poses(&qs, &powers, prob.altitude),
        total_power: powers.iter().sum(),
        iterations: trace.len() - 1,
        trace,
        dual,
        converged,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::channel::{User, VlcParams};
    use crate::illum::IlluminationGrid;
    use crate::optimizer::tests::scenario;
    use proptest::prelude::*;

    fn opts() -> OptimizerOptions {
        OptimizerOptions::default()
    }

    fn dual_for(s: &Scenario) -> DualState {
        DualState::new(s.fleet_size, s.users.len(), 0.01, 0.01)
    }

    #[test]
    fn taylor_bound_is_tight_at_reference() {
        let (a, b) = ((1.0, 2.0), (4.0, -2.0));
        assert_eq!(taylor_separation(a, b, a, b), 25.0);
        assert_eq!(taylor_separation((3.0, 3.0), (9.0, 1.0), (0.5, 0.5), (0.5, 0.5)), 0.0);
    }

    proptest! {
        #[test]
        fn taylor_bound_is_a_lower_bound(
            qi in (-50.0..50.0f64, -50.0..50.0f64), qk in (-50.0..50.0f64, -50.0..50.0f64),
            ri in (-50.0..50.0f64, -50.0..50.0f64), rk in (-50.0..50.0f64, -50.0..50.0f64),
        ) {
            let exact = (qi.0 - qk.0).powi(2) + (qi.1 - qk.1).powi(2);
            prop_assert!(taylor_separation(qi, qk, ri, rk) <= exact + 1e-9 * exact.max(1.0));
        }
    }

    #[test]
    fn single_user_moves_overhead() {
        let s = scenario(vec![User::new(70.0, 30.0, 1.0)], 1);
        let assoc = Association { assign: vec![0] };
        let start = vec![UavPose::new(20.0, 80.0, s.params.altitude)];
        let out = sca_placement(&s, &assoc, &start, dual_for(&s), &opts()).unwrap();
        let c = s.demand_coefficients()[0];
        let h = s.params.altitude;
        let optimum = c * h.powf(s.params.distance_exponent());
        assert!((out.total_power - optimum).abs() <= 1e-6 * optimum, "{} vs {optimum}", out.total_power);
        assert!((out.poses[0].x - 70.0).abs() < 1e-2 && (out.poses[0].y - 30.0).abs() < 1e-2);
    }

    #[test]
    fn disjoint_clusters_decompose() {
        let users = vec![
            User::new(10.0, 10.0, 1.0),
            User::new(20.0, 14.0, 2.0),
            User::new(80.0, 85.0, 1.5),
            User::new(90.0, 80.0, 0.5),
        ];
        let both = scenario(users.clone(), 2);
        let assoc = Association { assign: vec![0, 0, 1, 1] };
        let start = vec![UavPose::new(50.0, 20.0, 20.0), UavPose::new(50.0, 80.0, 20.0)];
        let joint = sca_placement(&both, &assoc, &start, dual_for(&both), &opts()).unwrap();
        let mut separate = 0.0;
        for (k, group) in [[0, 1], [2, 3]].iter().enumerate() {
            let s = scenario(group.iter().map(|&j| users[j]).collect(), 1);
            let one = sca_placement(&s, &Association { assign: vec![0, 0] }, &start[k..=k], dual_for(&s), &opts());
            separate += one.unwrap().total_power;
        }
        assert!((joint.total_power - separate).abs() <= 1e-4 * separate);
    }

    #[test]
    fn weighted_one_center_matches_brute_force() {
        // two users: the optimum lies on the segment between them
        let s = scenario(vec![User::new(20.0, 50.0, 1.0), User::new(60.0, 50.0, 3.0)], 1);
        let assoc = Association { assign: vec![0, 0] };
        let prob = Problem::new(&s);
        let mut brute = f64::INFINITY;
        for k in 0..=40_000 {
            let x = 20.0 + 40.0 * k as f64 / 40_000.0;
            brute = brute.min(prob.objective(&[(x, 50.0)], &assoc));
        }
        let out = sca_placement(&s, &assoc, &[UavPose::new(40.0, 60.0, 20.0)], dual_for(&s), &opts()).unwrap();
        assert!(out.total_power <= brute * (1.0 + 1e-6), "{} vs {brute}", out.total_power);
    }

    #[test]
    fn stationary_power_satisfies_kkt() {
        // with m = 0 the power/multiplier exponent is 3
        let e: f64 = 3.0;
        for lambda in [0.1, 0.7, 2.5] {
            let p = (2.0 / e * lambda).powf(e / (e - 2.0));
            let residual = 1.0 - lambda * (2.0 / e) * p.powf(2.0 / e - 1.0);
            assert!(residual.abs() < 1e-8);
        }
    }

    #[test]
    fn separation_is_respected() {
        // two users 4 m apart, one UAV each: the UAVs must stay 10 m apart
        let s = scenario(vec![User::new(48.0, 50.0, 1.0), User::new(52.0, 50.0, 1.0)], 2);
        let assoc = Association { assign: vec![0, 1] };
        let start = vec![UavPose::new(30.0, 50.0, 20.0), UavPose::new(70.0, 50.0, 20.0)];
        let out = sca_placement(&s, &assoc, &start, dual_for(&s), &opts()).unwrap();
        let gap = (out.poses[0].x - out.poses[1].x).hypot(out.poses[0].y - out.poses[1].y);
        assert!(gap * gap >= s.params.d_min - 1e-9);
        assert!(out.total_power < out.trace[0]);
        // symmetric optimum: both 3 m outside their users
        let prob = Problem::new(&s);
        let ideal = 2.0 * prob.cost((45.0, 50.0), 0);
        assert!(out.total_power <= ideal * 1.01, "{} vs {ideal}", out.total_power);
        assert!(out.trace.windows(2).all(|w| w[1] <= w[0] + 1e-12));
    }

    #[test]
    fn optimal_start_stops_immediately() {
        let s = scenario(vec![User::new(40.0, 40.0, 1.0)], 1);
        let assoc = Association { assign: vec![0] };
        let start = vec![UavPose::new(40.0, 40.0, 20.0)];
        let out = sca_placement(&s, &assoc, &start, dual_for(&s), &opts()).unwrap();
        assert!(out.iterations <= 2);
        assert_eq!(out.total_power, out.trace[0]);
    }

    #[test]
    fn infeasible_start_is_rejected() {
        let s = scenario(vec![User::new(40.0, 40.0, 1.0), User::new(60.0, 40.0, 1.0)], 2);
        let assoc = Association { assign: vec![0, 1] };
        let start = vec![UavPose::new(40.0, 40.0, 20.0), UavPose::new(41.0, 40.0, 20.0)];
        assert!(sca_placement(&s, &assoc, &start, dual_for(&s), &opts()).is_err());
    }

    #[test]
    fn idle_uav_stays_put_with_zero_power() {
        let s = scenario(vec![User::new(40.0, 40.0, 1.0)], 2);
        let assoc = Association { assign: vec![0] };
        let start = vec![UavPose::new(10.0, 10.0, 20.0), UavPose::new(90.0, 90.0, 20.0)];
        let (poses, _) = placement_subproblem(&s, &assoc, &start, dual_for(&s), &opts()).unwrap();
        assert_eq!((poses[1].x, poses[1].y, poses[1].power), (90.0, 90.0, 0.0));
        assert!(poses[0].power > 0.0);
    }

    #[test]
    fn power_scales_quadratically_with_geometry() {
        let users = vec![User::new(10.0, 20.0, 1.0), User::new(30.0, 25.0, 2.0), User::new(18.0, 40.0, 0.5)];
        let assoc = Association { assign: vec![0, 0, 0] };
        let o = OptimizerOptions { separation: false, ..opts() };
        let mut results = Vec::new();
        for s_f in [1.0, 2.0] {
            let params = VlcParams { altitude: 20.0 * s_f, ..VlcParams::default() };
            let grid = IlluminationGrid::uniform(10, 0.0, 10.0 * s_f).unwrap();
            let scaled: Vec<User> = users.iter().map(|u| User::new(u.v * s_f, u.w * s_f, u.rate)).collect();
            let sc = Scenario::new(scaled, 1, (100.0 * s_f, 100.0 * s_f), params, grid).unwrap();
            let start = vec![UavPose::new(50.0 * s_f, 50.0 * s_f, params.altitude)];
            let out = sca_placement(&sc, &assoc, &start, dual_for(&sc), &o).unwrap();
            results.push(out);
        }
        // c ∝ H^-(m+1) cancels all but two powers of the length scale
        assert!((results[1].total_power / results[0].total_power - 4.0).abs() < 1e-4);
        assert!((results[1].poses[0].x / results[0].poses[0].x - 2.0).abs() < 1e-4);
    }
}
