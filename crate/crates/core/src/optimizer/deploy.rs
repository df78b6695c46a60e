use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::association::solve_association;
use super::placement::run_sca;
use super::{
    min_sq_separation, to_poses, Association, DeploymentSolution, DualState, OptimizerError, OptimizerOptions, Problem,
    Scenario,
};
use crate::channel::User;

/// Number of UAVs a square lattice with spacing `√d_min` fits into the
/// area. Used as the feasibility test for the separation constraint.
pub fn separation_capacity(area: (f64, f64), d_min: f64) -> usize {
    if d_min <= 0.0 {
        return usize::MAX;
    }
    let s = d_min.sqrt();
    let per = |len: f64| (len / s).floor() as usize + 1;
    per(area.0).saturating_mul(per(area.1))
}

/// `fleet` seed points by farthest-point traversal over the users, starting
/// from a seeded random user.
pub fn farthest_point_seeds(users: &[User], fleet: usize, seed: u64) -> Vec<(f64, f64)> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let pts: Vec<(f64, f64)> = users.iter().map(|u| (u.v, u.w)).collect();
    let mut seeds = vec![pts[rng.gen_range(0..pts.len())]];
    let mut nearest: Vec<f64> = pts.iter().map(|p| sq(*p, seeds[0])).collect();
    while seeds.len() < fleet {
        let mut arg = 0;
        for (j, &d) in nearest.iter().enumerate() {
            if d > nearest[arg] {
                arg = j;
            }
        }
        let s = pts[arg];
        seeds.push(s);
        for (n, p) in nearest.iter_mut().zip(&pts) {
            *n = n.min(sq(*p, s));
        }
    }
    seeds
}

/// Symmetric deployment about the area centre: the centre itself for one
/// UAV, otherwise a regular polygon of radius `min(w, h)/4`, enlarged if
/// needed to keep the separation.
pub fn center_pattern(area: (f64, f64), fleet: usize, d_min: f64) -> Vec<(f64, f64)> {
    let (cx, cy) = (area.0 / 2.0, area.1 / 2.0);
    if fleet == 1 {
        return vec![(cx, cy)];
    }
    let half_angle = std::f64::consts::PI / fleet as f64;
    let radius = (area.0.min(area.1) / 4.0).max(d_min.max(0.0).sqrt() / (2.0 * half_angle.sin()) * (1.0 + 1e-9));
    (0..fleet)
        .map(|i| {
            let a = 2.0 * half_angle * i as f64;
            (cx + radius * a.cos(), cy + radius * a.sin())
        })
        .collect()
}

fn sq(a: (f64, f64), b: (f64, f64)) -> f64 {
    (a.0 - b.0).powi(2) + (a.1 - b.1).powi(2)
}

/// Pushes too-close pairs apart until every pair is `√d_min` apart.
fn repair_separation(mut qs: Vec<(f64, f64)>, d_min: f64) -> Result<Vec<(f64, f64)>, OptimizerError> {
    if d_min <= 0.0 {
        return Ok(qs);
    }
    let target = d_min.sqrt() * (1.0 + 1e-6);
    for _ in 0..10_000 {
        if min_sq_separation(&qs) >= d_min {
            return Ok(qs);
        }
        for a in 0..qs.len() {
            for b in a + 1..qs.len() {
                let (dx, dy) = (qs[b].0 - qs[a].0, qs[b].1 - qs[a].1);
                let dist = dx.hypot(dy);
                if dist >= target {
                    continue;
                }
                let (ux, uy) = if dist > 1e-12 {
                    (dx / dist, dy / dist)
                } else {
                    // coincident: a fixed direction per pair keeps this deterministic
                    let ang = 2.399_963_229_728_653 * (a * qs.len() + b) as f64;
                    (ang.cos(), ang.sin())
                };
                let push = (target - dist) / 2.0;
                qs[a] = (qs[a].0 - push * ux, qs[a].1 - push * uy);
                qs[b] = (qs[b].0 + push * ux, qs[b].1 + push * uy);
            }
        }
    }
    Err(OptimizerError::InfeasibleSeparation {
        fleet: qs.len(),
        separation: d_min.sqrt(),
        capacity: 0,
    })
}

fn check(scenario: &Scenario, opts: &OptimizerOptions) -> Result<Problem, OptimizerError> {
    opts.validate()?;
    scenario.validate()?;
    let prob = Problem::new(scenario);
    if opts.separation {
        let capacity = separation_capacity(scenario.area, prob.d_min);
        if prob.fleet > capacity {
            return Err(OptimizerError::InfeasibleSeparation {
                fleet: prob.fleet,
                separation: prob.d_min.sqrt(),
                capacity,
            });
        }
    }
    Ok(prob)
}

fn initial(prob: &Problem, qs: Vec<(f64, f64)>, opts: &OptimizerOptions) -> Result<Vec<(f64, f64)>, OptimizerError> {
    if opts.separation {
        repair_separation(qs, prob.d_min)
    } else {
        Ok(qs)
    }
}

fn solution(
    prob: &Problem,
    qs: &[(f64, f64)],
    association: Association,
    trace: Vec<f64>,
    dual: DualState,
    converged: bool,
) -> DeploymentSolution {
    let powers = prob.powers(qs, &association);
    DeploymentSolution {
        poses: to_poses(qs, &powers, prob.altitude),
        total_power: powers.iter().sum(),
        association,
        iterations: trace.len() - 1,
        trace,
        dual,
        converged,
    }
}

/// Alternates SCA placement and association until the objective settles.
fn alternate(
    prob: &Problem,
    mut qs: Vec<(f64, f64)>,
    mut assoc: Association,
    placement_first: bool,
    opts: &OptimizerOptions,
) -> Result<DeploymentSolution, OptimizerError> {
    let mut dual = DualState::new(prob.fleet, prob.users.len(), opts.gamma, opts.delta);
    if !placement_first {
        assoc = solve_association(prob, &qs, &mut dual, opts, Some(&assoc)).association;
    }
    let mut obj = prob.objective(&qs, &assoc);
    let mut trace = vec![obj];
    let mut converged = false;
    for _ in 0..opts.max_outer {
        let (placed, _, _) = run_sca(prob, &assoc, &qs, &mut dual, opts)?;
        let out = solve_association(prob, &placed, &mut dual, opts, Some(&assoc));
        qs = placed;
        assoc = out.association;
        let next = out.total_power.min(obj);
        trace.push(next);
        let improvement = obj - next;
        obj = next;
        if improvement <= opts.outer_tol * obj.abs() {
            converged = true;
            break;
        }
    }
    Ok(solution(prob, &qs, assoc, trace, dual, converged))
}

/// Full deployment optimisation. Three starts are alternated to
/// convergence and the cheapest result is returned:
/// farthest-point seeds with nearest association, the centre pattern with
/// nearest association, and the centre pattern with an optimised
/// association. The latter two start from the baselines' solutions, so the
/// result never costs more than any baseline.
pub fn optimize(scenario: &Scenario, opts: &OptimizerOptions) -> Result<DeploymentSolution, OptimizerError> {
    let prob = check(scenario, opts)?;
    let seeds = initial(&prob, farthest_point_seeds(&scenario.users, prob.fleet, opts.seed), opts)?;
    let center = initial(&prob, center_pattern(scenario.area, prob.fleet, prob.d_min), opts)?;
    let starts = [(seeds, true), (center.clone(), true), (center, false)];
    let mut best: Option<DeploymentSolution> = None;
    for (qs, placement_first) in starts {
        let assoc = prob.nearest(&qs);
        let sol = alternate(&prob, qs, assoc, placement_first, opts)?;
        log::debug!("start ({placement_first}): {:.6e} W", sol.total_power);
        if best.as_ref().map_or(true, |b| sol.total_power < b.total_power) {
            best = Some(sol);
        }
    }
    Ok(best.expect("three starts"))
}

/// UAVs on the centre pattern, each user served by its nearest UAV.
pub fn baseline_center(scenario: &Scenario) -> Result<DeploymentSolution, OptimizerError> {
    let opts = OptimizerOptions::default();
    let prob = check(scenario, &opts)?;
    let qs = initial(&prob, center_pattern(scenario.area, prob.fleet, prob.d_min), &opts)?;
    let assoc = prob.nearest(&qs);
    let total = prob.objective(&qs, &assoc);
    let dual = DualState::new(prob.fleet, prob.users.len(), opts.gamma, opts.delta);
    Ok(solution(&prob, &qs, assoc, vec![total], dual, true))
}

/// Centre pattern held fixed; only the association is optimised.
pub fn baseline_association_only(
    scenario: &Scenario,
    opts: &OptimizerOptions,
) -> Result<DeploymentSolution, OptimizerError> {
    let prob = check(scenario, opts)?;
    let qs = initial(&prob, center_pattern(scenario.area, prob.fleet, prob.d_min), opts)?;
    let start = prob.nearest(&qs);
    let mut dual = DualState::new(prob.fleet, prob.users.len(), opts.gamma, opts.delta);
    let before = prob.objective(&qs, &start);
    let out = solve_association(&prob, &qs, &mut dual, opts, Some(&start));
    Ok(solution(&prob, &qs, out.association, vec![before, out.total_power], dual, out.exact))
}

/// Nearest-UAV association to the centre pattern held fixed; only the
/// placement is optimised.
pub fn baseline_fixed_association(
    scenario: &Scenario,
    opts: &OptimizerOptions,
) -> Result<DeploymentSolution, OptimizerError> {
    let prob = check(scenario, opts)?;
    let qs = initial(&prob, center_pattern(scenario.area, prob.fleet, prob.d_min), opts)?;
    let assoc = prob.nearest(&qs);
    let mut dual = DualState::new(prob.fleet, prob.users.len(), opts.gamma, opts.delta);
    let (placed, trace, converged) = run_sca(&prob, &assoc, &qs, &mut dual, opts)?;
    Ok(solution(&prob, &placed, assoc, trace, dual, converged))
}

/// Brute force over a `resolution × resolution` lattice of cell-centre
/// positions per UAV and every association. Limited to two UAVs, six users
/// and a 15 × 15 lattice. Separation is enforced.
pub fn exhaustive_oracle(scenario: &Scenario, resolution: usize) -> Result<DeploymentSolution, OptimizerError> {
    let opts = OptimizerOptions::default();
    let prob = check(scenario, &opts)?;
    let (d, n) = (prob.fleet, prob.users.len());
    if d > 2 || n > 6 || resolution == 0 || resolution > 15 {
        return Err(OptimizerError::TooLarge(format!(
            "{d} UAVs, {n} users, {resolution}x{resolution} lattice (limits: 2, 6, 15)"
        )));
    }
    let lattice: Vec<(f64, f64)> = (0..resolution * resolution)
        .map(|k| {
            let (r, c) = (k / resolution, k % resolution);
            let step = (scenario.area.0 / resolution as f64, scenario.area.1 / resolution as f64);
            ((c as f64 + 0.5) * step.0, (r as f64 + 0.5) * step.1)
        })
        .collect();
    let costs: Vec<Vec<f64>> = lattice.iter().map(|&q| (0..n).map(|j| prob.cost(q, j)).collect()).collect();

    let mut best: Option<(f64, Vec<(f64, f64)>, Vec<usize>)> = None;
    if d == 1 {
        for (a, row) in costs.iter().enumerate() {
            let v = row.iter().cloned().fold(0.0, f64::max);
            if best.as_ref().map_or(true, |b| v < b.0) {
                best = Some((v, vec![lattice[a]], vec![0; n]));
            }
        }
    } else {
        for a in 0..lattice.len() {
            for b in a + 1..lattice.len() {
                if sq(lattice[a], lattice[b]) < prob.d_min {
                    continue;
                }
                for mask in 0u32..(1 << n) {
                    let (mut pa, mut pb) = (0.0f64, 0.0f64);
                    for j in 0..n {
                        if mask & (1 << j) != 0 {
                            pb = pb.max(costs[b][j]);
                        } else {
                            pa = pa.max(costs[a][j]);
                        }
                    }
                    let v = pa + pb;
                    if best.as_ref().map_or(true, |bst| v < bst.0) {
                        let assign = (0..n).map(|j| usize::from(mask & (1 << j) != 0)).collect();
                        best = Some((v, vec![lattice[a], lattice[b]], assign));
                    }
                }
            }
        }
    }
    let (value, qs, assign) = best.ok_or_else(|| OptimizerError::InfeasibleSeparation {
        fleet: d,
        separation: prob.d_min.sqrt(),
        capacity: 1,
    })?;
    let dual = DualState::new(d, n, opts.gamma, opts.delta);
    Ok(solution(&prob, &qs, Association { assign }, vec![value], dual, true))
}
