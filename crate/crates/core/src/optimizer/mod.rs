//! Power-minimal UAV deployment for a given illumination map: successive
//! convex approximation with dual decomposition for placement and power,
//! alternated with dual-based user association.
//!
//! The dual iterations run on a normalised problem (lengths in units of the
//! altitude `H`, powers in units of `max_j c_j · H^(m+3)`), so the step sizes
//! `γ` and `δ` are scale-free. All multipliers in [`DualState`] refer to
//! that normalised problem.

mod association;
mod deploy;
mod placement;

use thiserror::Error;

use crate::channel::{demand_coefficient, ChannelError, UavPose, User, VlcParams};
use crate::illum::{GridError, IlluminationGrid};

pub use association::{association_exhaustive, association_solve, AssociationOutcome};
pub use deploy::{
    baseline_association_only, baseline_center, baseline_fixed_association, center_pattern, exhaustive_oracle,
    farthest_point_seeds, optimize, separation_capacity,
};
pub use placement::{placement_subproblem, sca_placement, taylor_separation, ScaOutcome};

#[derive(Debug, Error)]
pub enum OptimizerError {
    #[error("invalid scenario: {0}")]
    InvalidScenario(String),
    #[error("{fleet} UAVs cannot keep a pairwise separation of {separation} m inside the area (capacity {capacity})")]
    InfeasibleSeparation { fleet: usize, separation: f64, capacity: usize },
    #[error("instance too large for exhaustive search: {0}")]
    TooLarge(String),
    #[error("non-finite iterate in {0}")]
    NonFinite(&'static str),
    #[error(transparent)]
    Channel(#[from] ChannelError),
    #[error(transparent)]
    Grid(#[from] GridError),
}

/// Users, fleet and the illumination map in force.
#[derive(Debug, Clone)]
pub struct Scenario {
    pub users: Vec<User>,
    pub fleet_size: usize,
    /// Width and height of the service area, anchored at the origin.
    pub area: (f64, f64),
    pub params: VlcParams,
    pub grid: IlluminationGrid,
}

impl Scenario {
    pub fn new(
        users: Vec<User>,
        fleet_size: usize,
        area: (f64, f64),
        params: VlcParams,
        grid: IlluminationGrid,
    ) -> Result<Self, OptimizerError> {
        let s = Self { users, fleet_size, area, params, grid };
        s.validate()?;
        Ok(s)
    }

    pub fn validate(&self) -> Result<(), OptimizerError> {
        let bad = |m: String| Err(OptimizerError::InvalidScenario(m));
        self.params.validate()?;
        if self.fleet_size == 0 {
            return bad("fleet size must be at least 1".into());
        }
        if self.users.is_empty() {
            return bad("no users".into());
        }
        let (w, h) = self.area;
        if !(w.is_finite() && h.is_finite() && w > 0.0 && h > 0.0) {
            return bad(format!("area {w} x {h} must be positive"));
        }
        for (j, u) in self.users.iter().enumerate() {
            if !(u.rate.is_finite() && u.rate >= 0.0) {
                return bad(format!("user {j}: rate {} must be >= 0", u.rate));
            }
            if !(0.0..=w).contains(&u.v) || !(0.0..=h).contains(&u.w) {
                return bad(format!("user {j} at ({}, {}) lies outside the area", u.v, u.w));
            }
            self.grid.sample(u.v, u.w)?;
        }
        Ok(())
    }

    /// Ambient illumination at every user.
    pub fn ambient(&self) -> Vec<f64> {
        self.users.iter().map(|u| self.grid.sample(u.v, u.w).expect("validated")).collect()
    }

    /// Demand coefficients `c_j`.
    pub fn demand_coefficients(&self) -> Vec<f64> {
        self.users
            .iter()
            .zip(self.ambient())
            .map(|(u, i)| demand_coefficient(u, i, &self.params))
            .collect()
    }

    /// Same users and fleet under a different illumination map.
    pub fn with_grid(&self, grid: IlluminationGrid) -> Result<Self, OptimizerError> {
        Self::new(self.users.clone(), self.fleet_size, self.area, self.params, grid)
    }
}

/// Serving UAV of every user.
#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub struct Association {
    pub assign: Vec<usize>,
}

impl Association {
    pub fn members(&self, uav: usize) -> impl Iterator<Item = usize> + '_ {
        self.assign.iter().enumerate().filter(move |(_, &i)| i == uav).map(|(j, _)| j)
    }

    pub fn load(&self, fleet: usize) -> Vec<usize> {
        let mut n = vec![0; fleet];
        for &i in &self.assign {
            n[i] += 1;
        }
        n
    }
}

/// Multipliers of the normalised problem and the dual step sizes.
#[derive(Debug, Clone, PartialEq)]
pub struct DualState {
    /// `D × U`, power constraints.
    pub lambda_alpha: Vec<Vec<f64>>,
    /// `D × D` symmetric, linearised separation constraints.
    pub lambda_beta: Vec<Vec<f64>>,
    /// `D × U`, association multipliers; rows sum to at most one.
    pub mu: Vec<Vec<f64>>,
    pub step_gamma: f64,
    pub step_delta: f64,
}

impl DualState {
    /// All multipliers zero.
    pub fn new(fleet: usize, users: usize, gamma: f64, delta: f64) -> Self {
        Self {
            lambda_alpha: vec![vec![0.0; users]; fleet],
            lambda_beta: vec![vec![0.0; fleet]; fleet],
            mu: vec![vec![0.0; users]; fleet],
            step_gamma: gamma,
            step_delta: delta,
        }
    }

    pub fn is_valid(&self) -> bool {
        let nonneg = |m: &Vec<Vec<f64>>| m.iter().flatten().all(|&v| v >= 0.0 && v.is_finite());
        nonneg(&self.lambda_alpha)
            && nonneg(&self.lambda_beta)
            && nonneg(&self.mu)
            && self.mu.iter().all(|row| row.iter().sum::<f64>() <= 1.0 + 1e-12)
    }
}

/// Iteration caps, step sizes and tolerances.
#[derive(Debug, Clone, PartialEq)]
pub struct OptimizerOptions {
    /// Step of the placement dual updates.
    pub gamma: f64,
    /// Step of the association dual updates.
    pub delta: f64,
    /// Dual residual at which a placement subproblem stops.
    pub epsilon: f64,
    pub max_inner: usize,
    pub max_sca: usize,
    pub max_outer: usize,
    /// Relative objective decrease below which SCA stops.
    pub sca_tol: f64,
    /// Relative objective change below which the alternation stops.
    pub outer_tol: f64,
    /// Association iterations without change that count as stable.
    pub assoc_stable: usize,
    pub max_assoc: usize,
    /// Node budget of the exact association search.
    pub search_nodes: usize,
    /// Seed of the initial association.
    pub seed: u64,
    /// Enforce the pairwise UAV separation.
    pub separation: bool,
}

impl Default for OptimizerOptions {
    fn default() -> Self {
        Self {
            gamma: 0.01,
            delta: 0.01,
            epsilon: 1e-4,
            max_inner: 10_000,
            max_sca: 200,
            max_outer: 50,
            sca_tol: 1e-6,
            outer_tol: 1e-6,
            assoc_stable: 5,
            max_assoc: 1_000,
            search_nodes: 5_000_000,
            seed: 0,
            separation: true,
        }
    }
}

impl OptimizerOptions {
    pub fn validate(&self) -> Result<(), OptimizerError> {
        let pos = |v: f64| v.is_finite() && v > 0.0;
        if !(pos(self.gamma) && pos(self.delta) && pos(self.epsilon)) {
            return Err(OptimizerError::InvalidScenario("gamma, delta and epsilon must be positive".into()));
        }
        if !(self.sca_tol >= 0.0 && self.outer_tol >= 0.0) {
            return Err(OptimizerError::InvalidScenario("tolerances must be >= 0".into()));
        }
        if self.max_inner == 0 || self.max_sca == 0 || self.max_outer == 0 || self.max_assoc == 0 {
            return Err(OptimizerError::InvalidScenario("iteration caps must be positive".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone)]
pub struct DeploymentSolution {
    pub poses: Vec<UavPose>,
    pub association: Association,
    pub total_power: f64,
    /// Objective after every outer iteration (or SCA iteration for
    /// placement-only runs), starting with the initial point.
    pub trace: Vec<f64>,
    pub dual: DualState,
    pub converged: bool,
    pub iterations: usize,
}

impl DeploymentSolution {
    /// Largest relative shortfall of any user's power below its requirement
    /// and the smallest pairwise squared separation.
    pub fn feasibility(&self, scenario: &Scenario) -> (f64, f64) {
        let prob = Problem::new(scenario);
        let mut shortfall: f64 = 0.0;
        for (j, &i) in self.association.assign.iter().enumerate() {
            let p = &self.poses[i];
            let need = prob.cost((p.x, p.y), j);
            if need > 0.0 {
                shortfall = shortfall.max((need - p.power) / need);
            }
        }
        let mut min_sep = f64::INFINITY;
        for a in 0..self.poses.len() {
            for b in a + 1..self.poses.len() {
                let (dx, dy) = (self.poses[a].x - self.poses[b].x, self.poses[a].y - self.poses[b].y);
                min_sep = min_sep.min(dx * dx + dy * dy);
            }
        }
        (shortfall, min_sep)
    }

    /// Per-UAV power the same positions and association need under
    /// `scenario`'s illumination map.
    pub fn required_powers(&self, scenario: &Scenario) -> Vec<f64> {
        let prob = Problem::new(scenario);
        let qs: Vec<(f64, f64)> = self.poses.iter().map(|p| (p.x, p.y)).collect();
        prob.powers(&qs, &self.association)
    }

    /// Raises every UAV's power to what `scenario` requires; positions and
    /// association are kept.
    pub fn topped_up(&self, scenario: &Scenario) -> DeploymentSolution {
        let mut out = self.clone();
        for (pose, need) in out.poses.iter_mut().zip(self.required_powers(scenario)) {
            pose.power = pose.power.max(need);
        }
        out.total_power = out.poses.iter().map(|p| p.power).sum();
        out
    }
}

/// Cost model shared by all solvers: UAV `i` at `q` serving user `j` needs
/// `c_j · (‖q - u_j‖² + H²)^((m+3)/2)`.
#[derive(Debug, Clone)]
pub(crate) struct Problem {
    pub users: Vec<(f64, f64)>,
    pub coef: Vec<f64>,
    pub altitude: f64,
    /// `m + 3`
    pub exp: f64,
    pub d_min: f64,
    pub fleet: usize,
    cos_fov: f64,
}

impl Problem {
    pub fn new(s: &Scenario) -> Self {
        Self {
            users: s.users.iter().map(|u| (u.v, u.w)).collect(),
            coef: s.demand_coefficients(),
            altitude: s.params.altitude,
            exp: s.params.distance_exponent(),
            d_min: s.params.d_min,
            fleet: s.fleet_size,
            cos_fov: s.params.psi_c.to_radians().cos(),
        }
    }

    /// Power UAV at `q` needs for user `j`; infinite outside the field of view.
    pub fn cost(&self, q: (f64, f64), j: usize) -> f64 {
        let (v, w) = self.users[j];
        let d2 = (q.0 - v).powi(2) + (q.1 - w).powi(2) + self.altitude * self.altitude;
        if self.altitude / d2.sqrt() < self.cos_fov - 1e-15 {
            return f64::INFINITY;
        }
        self.coef[j] * d2.powf(self.exp / 2.0)
    }

    /// Per-UAV powers (maximum member requirement, zero when idle).
    pub fn powers(&self, qs: &[(f64, f64)], assoc: &Association) -> Vec<f64> {
        let mut p = vec![0.0f64; qs.len()];
        for (j, &i) in assoc.assign.iter().enumerate() {
            p[i] = p[i].max(self.cost(qs[i], j));
        }
        p
    }

    pub fn objective(&self, qs: &[(f64, f64)], assoc: &Association) -> f64 {
        self.powers(qs, assoc).iter().sum()
    }

    /// Every user to the UAV that serves it most cheaply (lowest index on ties).
    pub fn nearest(&self, qs: &[(f64, f64)]) -> Association {
        let assign = (0..self.users.len())
            .map(|j| {
                let mut best = (f64::INFINITY, 0);
                for (i, &q) in qs.iter().enumerate() {
                    let c = self.cost(q, j);
                    if c < best.0 {
                        best = (c, i);
                    }
                }
                best.1
            })
            .collect();
        Association { assign }
    }

    pub fn separated(&self, qs: &[(f64, f64)], enabled: bool) -> bool {
        !enabled || min_sq_separation(qs) >= self.d_min - 1e-9
    }
}

pub(crate) fn min_sq_separation(qs: &[(f64, f64)]) -> f64 {
    let mut m = f64::INFINITY;
    for a in 0..qs.len() {
        for b in a + 1..qs.len() {
            m = m.min((qs[a].0 - qs[b].0).powi(2) + (qs[a].1 - qs[b].1).powi(2));
        }
    }
    m
}

pub(crate) fn to_poses(qs: &[(f64, f64)], powers: &[f64], altitude: f64) -> Vec<UavPose> {
    qs.iter()
        .zip(powers)
        .map(|(&(x, y), &p)| UavPose::new(x, y, altitude).with_power(p))
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    pub(crate) fn scenario(users: Vec<User>, fleet: usize) -> Scenario {
        let grid = IlluminationGrid::uniform(10, 0.0, 10.0).unwrap();
        Scenario::new(users, fleet, (100.0, 100.0), VlcParams::default(), grid).unwrap()
    }

    #[test]
    fn scenario_validation() {
        let grid = IlluminationGrid::uniform(10, 0.0, 10.0).unwrap();
        let p = VlcParams::default();
        let u = vec![User::new(10.0, 10.0, 1.0)];
        assert!(Scenario::new(u.clone(), 0, (100.0, 100.0), p, grid.clone()).is_err());
        assert!(Scenario::new(vec![], 1, (100.0, 100.0), p, grid.clone()).is_err());
        assert!(Scenario::new(vec![User::new(120.0, 1.0, 1.0)], 1, (100.0, 100.0), p, grid.clone()).is_err());
        assert!(Scenario::new(vec![User::new(10.0, 1.0, 1.0)], 1, (200.0, 200.0), p, grid.clone()).is_ok());
        assert!(Scenario::new(vec![User::new(150.0, 1.0, 1.0)], 1, (200.0, 200.0), p, grid.clone()).is_err());
        assert!(Scenario::new(u, 1, (100.0, 100.0), p, grid).is_ok());
    }

    #[test]
    fn cost_matches_channel_power() {
        let s = scenario(vec![User::new(30.0, 40.0, 2.0)], 1);
        let prob = Problem::new(&s);
        let uav = UavPose::new(10.0, 5.0, s.params.altitude);
        let direct = crate::channel::required_power(&s.users[0], &uav, 0.0, &s.params)
            .unwrap()
            .max(crate::channel::illumination_power(&s.users[0], &uav, 0.0, &s.params).unwrap());
        let c = prob.cost((10.0, 5.0), 0);
        assert!((c - direct).abs() <= 1e-12 * direct);
    }

    #[test]
    fn narrow_field_of_view_makes_far_links_infeasible() {
        let mut s = scenario(vec![User::new(90.0, 50.0, 1.0)], 1);
        s.params.psi_c = 30.0;
        let prob = Problem::new(&s);
        assert!(prob.cost((85.0, 50.0), 0).is_finite());
        assert_eq!(prob.cost((10.0, 50.0), 0), f64::INFINITY);
    }

    #[test]
    fn association_helpers() {
        let a = Association { assign: vec![1, 0, 1] };
        assert_eq!(a.members(1).collect::<Vec<_>>(), vec![0, 2]);
        assert_eq!(a.load(3), vec![1, 2, 0]);
    }
}
