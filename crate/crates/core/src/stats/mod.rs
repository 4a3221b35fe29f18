//! Probability kernels of the linking model and the costs derived from them.
//!
//! A particle leaving the window at `x = 0` needs the first-passage time `T_l`
//! of its drifting x-coordinate over the hidden width `l_u` to come back. With
//! drift `v_x` and diffusion `σ_x`, `T_l ~ IG(l_u / v_x, (l_u / σ_x)²)`. It dies
//! on the way if its exponential lifetime ends first. These pieces give three
//! costs (negative log-densities):
//!
//! * `β = -log(τ_α / H)` for an input produced by a particle born hidden,
//! * `δ = -log P(T_d < T_l)` for an output whose particle died hidden,
//! * `γ(o, i)` for output `o` re-entering as input `i`.

pub mod quadrature;
pub mod special;

use std::f64::consts::PI;

use crate::error::{Error, Result};
use crate::model::{Configuration, CylinderGeometry, DynamicsParams, InputEvent, OutputEvent};
use quadrature::{integrate_to_infinity, Tolerance};

/// Rates below this are treated as this value when turned into costs, so that
/// a zero estimate yields a very large but finite cost.
pub const MIN_RATE: f64 = 1e-9;

/// Inverse-Gaussian density; zero off the positive half-line.
pub fn ig_pdf(t: f64, mu: f64, lam: f64) -> f64 {
    if t <= 0.0 || !t.is_finite() {
        return 0.0;
    }
    let log_norm = 0.5 * (lam / (2.0 * PI * t * t * t)).ln();
    let d = t - mu;
    (log_norm - lam * d * d / (2.0 * mu * mu * t)).exp()
}

/// Inverse-Gaussian CDF in closed form.
///
/// `Φ(√(λ/x)(x/μ - 1)) + e^{2λ/μ} Φ(-√(λ/x)(x/μ + 1))`, with the second term
/// rewritten through `erfcx` so that the large exponential never overflows.
pub fn ig_cdf(x: f64, mu: f64, lam: f64) -> f64 {
    if x <= 0.0 || x.is_nan() {
        return 0.0;
    }
    if x.is_infinite() {
        return 1.0;
    }
    let root = (lam / x).sqrt();
    let first = special::normal_cdf(root * (x / mu - 1.0));
    let b = root * (x / mu + 1.0);
    let d = x - mu;
    let log_scale = -lam * d * d / (2.0 * mu * mu * x);
    let second = 0.5 * special::erfcx(b / std::f64::consts::SQRT_2) * log_scale.exp();
    (first + second).clamp(0.0, 1.0)
}

/// Law of the time needed to cross the hidden band.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct FirstPassage {
    pub mean: f64,
    pub shape: f64,
}

impl FirstPassage {
    pub fn new(hidden_width: f64, v_x: f64, sigma_x: f64) -> Result<Self> {
        if !(hidden_width > 0.0 && v_x > 0.0 && sigma_x > 0.0) {
            return Err(Error::param(format!(
                "first passage needs l_u, v_x, sigma_x > 0 (got {hidden_width}, {v_x}, {sigma_x})"
            )));
        }
        Ok(FirstPassage {
            mean: hidden_width / v_x,
            shape: (hidden_width / sigma_x).powi(2),
        })
    }

    pub fn pdf(&self, t: f64) -> f64 {
        ig_pdf(t, self.mean, self.shape)
    }

    pub fn cdf(&self, t: f64) -> f64 {
        ig_cdf(t, self.mean, self.shape)
    }

    pub fn std_dev(&self) -> f64 {
        (self.mean.powi(3) / self.shape).sqrt()
    }

    pub fn mode(&self) -> f64 {
        let k = 1.5 * self.mean / self.shape;
        self.mean * ((1.0 + k * k).sqrt() - k)
    }

    /// Breakpoints that bracket the bulk of the density for adaptive
    /// quadrature.
    pub fn breakpoints(&self) -> Vec<f64> {
        let sd = self.std_dev();
        let mut pts: Vec<f64> = [-6.0, -3.0, -1.5, 0.0, 1.5, 3.0, 6.0, 12.0]
            .iter()
            .map(|k| self.mean + k * sd)
            .chain([self.mode(), 0.25 * self.mode(), 0.5 * self.mode()])
            .filter(|&p| p > 0.0)
            .collect();
        pts.sort_by(f64::total_cmp);
        pts
    }
}

/// `P(T_d < T_l)`: the particle behind an output dies before it can cross the
/// hidden band. Evaluated by adaptive quadrature of
/// `∫ f_IG(t) (1 - e^{-τ_d t}) dt` over `(0, ∞)`.
pub fn death_probability(params: &DynamicsParams, hidden_width: f64) -> Result<f64> {
    let law = FirstPassage::new(hidden_width, params.v_x, params.sigma_x)?;
    let tau = params.tau_d;
    if !(tau >= 0.0) {
        return Err(Error::param(format!("tau_d must be >= 0, got {tau}")));
    }
    if tau == 0.0 {
        return Ok(0.0);
    }
    let integrand = |t: f64| law.pdf(t) * (-(-tau * t).exp_m1());
    let mut points = law.breakpoints();
    // the survival factor varies on the scale 1/τ_d
    points.extend([0.1 / tau, 1.0 / tau, 10.0 / tau]);
    let tol = Tolerance {
        abs: 1e-8,
        rel: 1e-9,
        max_intervals: 4000,
    };
    let integral = integrate_to_infinity(&integrand, 0.0, &points, tol).map_err(|e| {
        Error::Numeric(format!(
            "death probability (tau_d={tau}, v_x={}, sigma_x={}, l_u={hidden_width}): {e}",
            params.v_x, params.sigma_x
        ))
    })?;
    Ok(integral.value.clamp(0.0, 1.0))
}

/// Stationary rate of spontaneous inputs: particles born in the hidden band
/// that reach the entry border before dying.
///
/// A particle born at distance `D` upstream survives its crossing with
/// probability `E[e^{-τ_d T_D}] = e^{κD}`, `κ = -2τ_d / (v_x (1 + √(1 + 2σ_x²τ_d/v_x²)))`;
/// integrating over uniform births gives `(λ/L)(1 - e^{κ l_u}) / (-κ)`.
pub fn arrival_rate(geometry: &CylinderGeometry, params: &DynamicsParams) -> f64 {
    let l_u = geometry.hidden_width();
    let density = params.lambda_birth / geometry.perimeter;
    let (v, s2, tau) = (params.v_x, params.sigma_x * params.sigma_x, params.tau_d);
    if tau <= 0.0 {
        return density * l_u;
    }
    let kappa = -2.0 * tau / (v * (1.0 + (1.0 + 2.0 * s2 * tau / (v * v)).sqrt()));
    density * (-(kappa * l_u).exp_m1()) / (-kappa)
}

/// `γ(o, i)`: cost of linking output `o` to input `i`, `+∞` unless `t_i > t_o`.
///
/// With `s = t_i - t_o` and `h = y_i - y_o`, this is minus the log of
/// `f_{T_l}(s) · f_{Y_s}(h) · e^{-τ_d s}`.
pub fn connection_cost(
    output: &OutputEvent,
    input: &InputEvent,
    params: &DynamicsParams,
    hidden_width: f64,
) -> f64 {
    let s = input.t - output.t;
    if !(s > 0.0) {
        return f64::INFINITY;
    }
    let h = input.y - output.y;
    let (sx, sy) = (params.sigma_x, params.sigma_y);
    let along = params.v_x * s - hidden_width;
    let across = h - params.v_y * s;
    -(hidden_width / (2.0 * PI * sx * sy * s * s)).ln()
        + along * along / (2.0 * sx * sx * s)
        + across * across / (2.0 * sy * sy * s)
        + params.tau_d * s
}

/// The three cost ingredients for one parameter set.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CostModel {
    pub beta: f64,
    pub delta: f64,
    pub params: DynamicsParams,
    pub hidden_width: f64,
    pub height: f64,
}

impl CostModel {
    /// Needs strictly positive diffusion. Rates are floored at [`MIN_RATE`].
    pub fn new(params: &DynamicsParams, geometry: &CylinderGeometry) -> Result<Self> {
        params.validate()?;
        geometry.validate()?;
        if params.sigma_x <= 0.0 || params.sigma_y <= 0.0 {
            return Err(Error::param(
                "linking costs need sigma_x > 0 and sigma_y > 0",
            ));
        }
        let params = DynamicsParams {
            tau_d: params.tau_d.max(MIN_RATE),
            tau_alpha: params.tau_alpha.max(MIN_RATE),
            ..*params
        };
        let hidden_width = geometry.hidden_width();
        let p_death = death_probability(&params, hidden_width)?;
        if !(p_death > 0.0) {
            return Err(Error::Numeric(format!(
                "death probability underflowed to {p_death}"
            )));
        }
        Ok(CostModel {
            beta: -(params.tau_alpha / geometry.height).ln(),
            delta: -p_death.ln(),
            params,
            hidden_width,
            height: geometry.height,
        })
    }

    pub fn gamma(&self, output: &OutputEvent, input: &InputEvent) -> f64 {
        connection_cost(output, input, &self.params, self.hidden_width)
    }

    /// `γ - β - δ` for an allowed pair, `None` when `t_i <= t_o`.
    pub fn adjusted(&self, output: &OutputEvent, input: &InputEvent) -> Option<f64> {
        let g = self.gamma(output, input);
        g.is_finite().then_some(g - self.beta - self.delta)
    }

    /// Configuration-independent part of `-log Q`: `qβ + pδ + τ_α T_S`.
    pub fn baseline(&self, n_outputs: usize, n_inputs: usize, duration: f64) -> f64 {
        n_inputs as f64 * self.beta
            + n_outputs as f64 * self.delta
            + self.params.tau_alpha * duration
    }
}

/// Log-likelihood of a configuration:
/// `-|B_c|β - τ_α T_S - |D_c|δ - Σ γ` over matched pairs.
pub fn log_likelihood(
    config: &Configuration,
    outputs: &[OutputEvent],
    inputs: &[InputEvent],
    cost: &CostModel,
    duration: f64,
) -> f64 {
    let matched: f64 = config
        .matches
        .iter()
        .map(|&(o, i)| cost.gamma(&outputs[o], &inputs[i]))
        .sum();
    if matched.is_infinite() {
        return f64::NEG_INFINITY;
    }
    -(config.spontaneous_inputs.len() as f64) * cost.beta
        - cost.params.tau_alpha * duration
        - (config.dead_outputs.len() as f64) * cost.delta
        - matched
}

#[cfg(test)]
mod tests {
    use super::*;

    fn params() -> DynamicsParams {
        DynamicsParams {
            v_x: 0.6,
            v_y: 0.006,
            sigma_x: 0.2,
            sigma_y: 0.2,
            lambda_birth: 0.08,
            tau_d: 0.005,
            tau_alpha: 0.05,
        }
    }

    const L_U: f64 = 35.2;

    #[test]
    fn pdf_at_mean_and_support() {
        let (mu, lam) = (2.0, 3.0);
        let expect = (lam / (2.0 * PI * mu * mu * mu)).sqrt();
        assert!((ig_pdf(mu, mu, lam) - expect).abs() < 1e-15);
        assert_eq!(ig_pdf(0.0, mu, lam), 0.0);
        assert_eq!(ig_pdf(-1.0, mu, lam), 0.0);
        assert!(ig_pdf(1e-6, mu, lam) < 1e-100);
    }

    #[test]
    fn cdf_limits() {
        let law = FirstPassage::new(L_U, 0.6, 0.2).unwrap();
        assert_eq!(law.cdf(0.0), 0.0);
        assert_eq!(law.cdf(-3.0), 0.0);
        assert!((law.cdf(1e6) - 1.0).abs() < 1e-15);
        assert!(law.cdf(law.mean) > 0.4 && law.cdf(law.mean) < 0.6);
    }

    #[test]
    fn death_probability_limits() {
        let tiny = DynamicsParams {
            tau_d: 1e-12,
            ..params()
        };
        assert!(death_probability(&tiny, L_U).unwrap() < 1e-9);
        let huge = DynamicsParams {
            tau_d: 1e4,
            ..params()
        };
        assert!((death_probability(&huge, L_U).unwrap() - 1.0).abs() < 1e-8);
        let zero = DynamicsParams {
            tau_d: 0.0,
            ..params()
        };
        assert_eq!(death_probability(&zero, L_U).unwrap(), 0.0);
    }

    #[test]
    fn drift_consistent_reentry_cost() {
        let p = params();
        let s = L_U / p.v_x;
        let o = OutputEvent {
            t: 10.0,
            y: 4.0,
            segment_id: 0,
        };
        let i = InputEvent {
            t: 10.0 + s,
            y: 4.0 + p.v_y * s,
            segment_id: 1,
        };
        let expect = -(L_U / (2.0 * PI * p.sigma_x * p.sigma_y * s * s)).ln() + p.tau_d * s;
        assert!((connection_cost(&o, &i, &p, L_U) - expect).abs() < 1e-9);
    }

    #[test]
    fn cost_is_infinite_backwards_in_time() {
        let p = params();
        let o = OutputEvent {
            t: 10.0,
            y: 4.0,
            segment_id: 0,
        };
        let same = InputEvent {
            t: 10.0,
            y: 4.0,
            segment_id: 1,
        };
        let before = InputEvent {
            t: 3.0,
            y: 4.0,
            segment_id: 1,
        };
        assert_eq!(connection_cost(&o, &same, &p, L_U), f64::INFINITY);
        assert_eq!(connection_cost(&o, &before, &p, L_U), f64::INFINITY);
    }

    #[test]
    fn cost_model_needs_diffusion_and_floors_rates() {
        let g = CylinderGeometry::new(50.0, 30.0, 14.8).unwrap();
        assert!(CostModel::new(
            &DynamicsParams {
                sigma_y: 0.0,
                ..params()
            },
            &g
        )
        .is_err());
        let zero = DynamicsParams {
            tau_alpha: 0.0,
            tau_d: 0.0,
            ..params()
        };
        let m = CostModel::new(&zero, &g).unwrap();
        assert!(m.beta.is_finite() && m.delta.is_finite());
        assert!((m.beta - (-(MIN_RATE / 30.0).ln())).abs() < 1e-12);
    }

    #[test]
    fn likelihood_of_empty_sample() {
        let g = CylinderGeometry::new(50.0, 30.0, 14.8).unwrap();
        let m = CostModel::new(&params(), &g).unwrap();
        let ll = log_likelihood(&Configuration::empty(0, 0), &[], &[], &m, 300.0);
        assert!((ll + 0.05 * 300.0).abs() < 1e-12);
    }

    #[test]
    fn arrival_rate_without_diffusion() {
        // σ = 0: survival e^{-τ D / v}
        let g = CylinderGeometry::new(50.0, 30.0, 14.8).unwrap();
        let p = DynamicsParams {
            sigma_x: 0.0,
            lambda_birth: 0.04,
            tau_d: 0.004,
            ..params()
        };
        let k = p.tau_d / p.v_x;
        let expect = 0.04 / 50.0 * (1.0 - (-k * g.hidden_width()).exp()) / k;
        assert!((arrival_rate(&g, &p) - expect).abs() < 1e-15);
    }
}
