//! Closed-form line-of-sight VLC link model between a hovering UAV and a
//! ground user.
//!
//! All angles cross the API boundary in degrees. Powers are in watts,
//! lengths in metres, rates in the same unit the demand `R_j` is quoted in
//! (Mbps in the experiment setup; the capacity expression is unit-free).
//!
//! Two gain conventions coexist:
//! * the per-link average gain `B(τ)·h_LoS` ([`average_gain`]), used only for
//!   diagnostics;
//! * the homogenised gain `B̄·h_LoS`, used by every power computation that
//!   feeds the optimizer ([`required_power`], [`illumination_power`],
//!   [`demand_coefficient`]).

use std::f64::consts::{E, LN_2, PI};

use thiserror::Error;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum ChannelError {
    #[error("parameter `{name}` = {value} outside its domain ({expected})")]
    Domain {
        name: &'static str,
        value: f64,
        expected: &'static str,
    },
    #[error("user at ({v}, {w}) lies outside the receiver field of view of the UAV at ({x}, {y})")]
    InfeasibleGeometry { v: f64, w: f64, x: f64, y: f64 },
}

/// Physical and channel constants of the VLC downlink.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct VlcParams {
    /// Transmitter semiangle at half power, degrees.
    pub phi_half: f64,
    /// Receiver field-of-view semiangle, degrees.
    pub psi_c: f64,
    /// Detector area, m².
    pub rho: f64,
    /// Illumination target / responsivity, A/W.
    pub xi: f64,
    /// Refractive index of the optical concentrator.
    pub n_e: f64,
    /// Noise standard deviation.
    pub n_w: f64,
    /// Environment parameter `X` of the LoS-probability model.
    pub env_x: f64,
    /// Environment parameter `Y` of the LoS-probability model.
    pub env_y: f64,
    /// Illumination demand of every user.
    pub eta_r: f64,
    /// Common UAV altitude `H`, m.
    pub altitude: f64,
    /// Minimum squared horizontal separation between two UAVs, m².
    pub d_min: f64,
    /// Homogeneous LoS probability used by the optimizer.
    pub b_bar: f64,
}

impl Default for VlcParams {
    fn default() -> Self {
        let mut p = Self {
            phi_half: 90.0,
            psi_c: 90.0,
            rho: 0.5,
            xi: 0.8,
            n_e: 1.5,
            n_w: 1e-10,
            env_x: 10.0,
            env_y: 0.6,
            eta_r: 5e-4,
            altitude: 20.0,
            d_min: 100.0,
            b_bar: 1.0,
        };
        p.b_bar = los_probability_at_elevation(90.0, &p);
        p
    }
}

impl VlcParams {
    pub fn validate(&self) -> Result<(), ChannelError> {
        fn check(ok: bool, name: &'static str, value: f64, expected: &'static str) -> Result<(), ChannelError> {
            if ok && value.is_finite() {
                Ok(())
            } else {
                Err(ChannelError::Domain { name, value, expected })
            }
        }
        check(self.phi_half > 0.0 && self.phi_half <= 90.0, "phi_half", self.phi_half, "(0, 90]")?;
        check(self.psi_c > 0.0 && self.psi_c <= 90.0, "psi_c", self.psi_c, "(0, 90]")?;
        check(self.rho > 0.0, "rho", self.rho, "> 0")?;
        check(self.xi > 0.0, "xi", self.xi, "> 0")?;
        check(self.n_e >= 1.0, "n_e", self.n_e, ">= 1")?;
        check(self.n_w > 0.0, "n_w", self.n_w, "> 0")?;
        check(true, "X", self.env_x, "finite")?;
        check(true, "Y", self.env_y, "finite")?;
        check(self.eta_r >= 0.0, "eta_r", self.eta_r, ">= 0")?;
        check(self.altitude > 0.0, "altitude", self.altitude, "> 0")?;
        check(self.d_min >= 0.0, "d_min", self.d_min, ">= 0")?;
        check(self.b_bar > 0.0 && self.b_bar <= 1.0, "b_bar", self.b_bar, "(0, 1]")?;
        Ok(())
    }

    /// Lambert order for these parameters; `phi_half` is assumed validated.
    pub fn lambert(&self) -> f64 {
        lambert_order(self.phi_half).unwrap_or(0.0)
    }

    /// Exponent `m + 3` of the distance law `P = c·d^(m+3)`.
    pub fn distance_exponent(&self) -> f64 {
        self.lambert() + 3.0
    }
}

/// Ground user: horizontal position in metres and rate demand.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct User {
    pub v: f64,
    pub w: f64,
    pub rate: f64,
}

impl User {
    pub fn new(v: f64, w: f64, rate: f64) -> Self {
        Self { v, w, rate }
    }
}

/// Position and transmit power of one UAV.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct UavPose {
    pub x: f64,
    pub y: f64,
    pub altitude: f64,
    pub power: f64,
}

impl UavPose {
    pub fn new(x: f64, y: f64, altitude: f64) -> Self {
        Self { x, y, altitude, power: 0.0 }
    }

    pub fn with_power(mut self, power: f64) -> Self {
        self.power = power;
        self
    }

    /// Squared horizontal distance to a user.
    pub fn horizontal_sq(&self, user: &User) -> f64 {
        let dx = user.v - self.x;
        let dy = user.w - self.y;
        dx * dx + dy * dy
    }

    /// Euclidean UAV-user distance.
    pub fn distance(&self, user: &User) -> f64 {
        (self.horizontal_sq(user) + self.altitude * self.altitude).sqrt()
    }
}

/// `m = -ln 2 / ln(cos Φ½)`, with the limit `m = 0` at 90°.
pub fn lambert_order(phi_half: f64) -> Result<f64, ChannelError> {
    if !(phi_half > 0.0 && phi_half <= 90.0) {
        return Err(ChannelError::Domain {
            name: "phi_half",
            value: phi_half,
            expected: "(0, 90]",
        });
    }
    if phi_half == 90.0 {
        return Ok(0.0);
    }
    Ok(-LN_2 / phi_half.to_radians().cos().ln())
}

/// Optical concentrator gain at incidence angle `psi` (degrees).
pub fn concentrator_gain(psi: f64, params: &VlcParams) -> f64 {
    if (0.0..=params.psi_c).contains(&psi) {
        let s = params.psi_c.to_radians().sin();
        params.n_e * params.n_e / (s * s)
    } else {
        0.0
    }
}

fn incidence_deg(altitude: f64, distance: f64) -> f64 {
    (altitude / distance).clamp(-1.0, 1.0).acos().to_degrees()
}

/// Deterministic LoS gain; zero outside the receiver field of view. The
/// NLoS component is identically zero.
pub fn los_gain(uav: &UavPose, user: &User, params: &VlcParams) -> f64 {
    let d = uav.distance(user);
    let psi = incidence_deg(uav.altitude, d);
    let g = concentrator_gain(psi, params);
    if g == 0.0 {
        return 0.0;
    }
    let m = params.lambert();
    let cos = uav.altitude / d;
    (m + 1.0) * params.rho / (2.0 * PI * d * d) * g * cos.powf(m) * cos
}

/// LoS probability as a function of elevation angle `tau` in degrees.
pub fn los_probability_at_elevation(tau: f64, params: &VlcParams) -> f64 {
    1.0 / (1.0 + params.env_x * (-params.env_y * (tau - params.env_x)).exp())
}

/// Per-link LoS probability.
pub fn los_probability(uav: &UavPose, user: &User, params: &VlcParams) -> f64 {
    let d = uav.distance(user);
    let tau = (uav.altitude / d).clamp(-1.0, 1.0).asin().to_degrees();
    los_probability_at_elevation(tau, params)
}

/// Average channel gain `B·h_LoS`.
pub fn average_gain(uav: &UavPose, user: &User, params: &VlcParams) -> f64 {
    let h = los_gain(uav, user, params);
    if h == 0.0 {
        return 0.0;
    }
    los_probability(uav, user, params) * h
}

/// `sqrt((2π/e)(2^(2R) - 1))`: the SNR amplitude needed for rate `R`.
pub fn rate_factor(rate: f64) -> f64 {
    (2.0 * PI / E * (2.0 * rate * LN_2).exp_m1()).sqrt()
}

/// Achievable rate at transmit power `power` over a link with gain `gain`
/// and ambient illumination `ambient` at the receiver.
pub fn capacity(power: f64, gain: f64, ambient: f64, params: &VlcParams) -> f64 {
    let amp = params.xi * power * gain / (params.n_w + ambient);
    0.5 * (E / (2.0 * PI) * amp * amp).ln_1p() / LN_2
}

fn homogenised_gain(user: &User, uav: &UavPose, params: &VlcParams) -> Result<f64, ChannelError> {
    let h = los_gain(uav, user, params);
    if h > 0.0 {
        Ok(params.b_bar * h)
    } else {
        Err(ChannelError::InfeasibleGeometry { v: user.v, w: user.w, x: uav.x, y: uav.y })
    }
}

/// Transmit power that delivers exactly the user's rate demand under the
/// homogenised gain `B̄·h_LoS`.
pub fn required_power(user: &User, uav: &UavPose, ambient: f64, params: &VlcParams) -> Result<f64, ChannelError> {
    let gain = homogenised_gain(user, uav, params)?;
    Ok((params.n_w + ambient) * rate_factor(user.rate) / (params.xi * gain))
}

/// Transmit power that tops the ambient illumination up to `eta_r`.
pub fn illumination_power(user: &User, uav: &UavPose, ambient: f64, params: &VlcParams) -> Result<f64, ChannelError> {
    let gain = homogenised_gain(user, uav, params)?;
    Ok(illumination_deficit(ambient, params) / (params.xi * gain))
}

/// `M_j = max(η_r - I, 0)`.
pub fn illumination_deficit(ambient: f64, params: &VlcParams) -> f64 {
    (params.eta_r - ambient).max(0.0)
}

/// `N_j = (n_w + I)·sqrt((2π/e)(2^(2R) - 1))`.
pub fn rate_demand(rate: f64, ambient: f64, params: &VlcParams) -> f64 {
    (params.n_w + ambient) * rate_factor(rate)
}

/// Geometry factor `l` such that the power needed for a demand `K` at
/// distance `d` is `l·K·d^(m+3)`. The homogeneous LoS probability is folded
/// in so that the product matches [`required_power`].
pub fn geometry_factor(params: &VlcParams) -> f64 {
    let m = params.lambert();
    let g = concentrator_gain(0.0, params);
    2.0 * PI / (params.xi * params.b_bar * (m + 1.0) * params.rho * g * params.altitude.powf(m + 1.0))
}

/// Demand coefficient `c_j`: the UAV serving this user needs at least
/// `c_j·d^(m+3)` watts.
pub fn demand_coefficient(user: &User, ambient: f64, params: &VlcParams) -> f64 {
    let m_j = illumination_deficit(ambient, params);
    let n_j = rate_demand(user.rate, ambient, params);
    geometry_factor(params) * m_j.max(n_j)
}

/// Ambient illumination at which the per-user power requirement
/// `max{M_j, N_j}` is smallest.
pub fn optimal_ambient(rate: f64, params: &VlcParams) -> f64 {
    let k = rate_factor(rate);
    if params.eta_r >= params.n_w * k {
        (params.eta_r + params.n_w) / (1.0 + k) - params.n_w
    } else {
        0.0
    }
}

/// Lower bound on the per-user power requirement at distance `d`, attained
/// when the ambient illumination equals [`optimal_ambient`].
pub fn power_lower_bound(rate: f64, distance: f64, params: &VlcParams) -> f64 {
    let i_star = optimal_ambient(rate, params);
    rate_demand(rate, i_star, params) * geometry_factor(params) * distance.powf(params.distance_exponent())
}
