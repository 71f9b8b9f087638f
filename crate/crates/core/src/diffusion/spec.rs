//! Coefficient presets and the univariate stochastic-volatility model
//! `dS = μ(S,Y,t)dt + σ(S,Y,t)dB`, `dY = α(Y,t)dt + β(Y,t)dW`,
//! `dW = ρ dB + √(1−ρ²) dZ`.

use crate::error::{Error, Result};

/// Time profile of a coefficient.
#[derive(Debug, Clone, PartialEq)]
pub enum Profile {
    Constant(f64),
    /// `a + b t`.
    Linear {
        a: f64,
        b: f64,
    },
    /// Piecewise-linear interpolation through `(times[i], values[i])`, flat
    /// outside the knot range.
    Table {
        times: Vec<f64>,
        values: Vec<f64>,
    },
}

impl Profile {
    pub fn at(&self, t: f64) -> f64 {
        match self {
            Profile::Constant(v) => *v,
            Profile::Linear { a, b } => a + b * t,
            Profile::Table { times, values } => {
                if t <= times[0] {
                    return values[0];
                }
                let last = times.len() - 1;
                if t >= times[last] {
                    return values[last];
                }
                let i = times.partition_point(|&x| x <= t) - 1;
                let w = (t - times[i]) / (times[i + 1] - times[i]);
                values[i] + w * (values[i + 1] - values[i])
            }
        }
    }

    pub fn is_zero(&self) -> bool {
        match self {
            Profile::Constant(v) => *v == 0.0,
            Profile::Linear { a, b } => *a == 0.0 && *b == 0.0,
            Profile::Table { values, .. } => values.iter().all(|v| *v == 0.0),
        }
    }

    fn validate(&self, name: &str) -> Result<()> {
        let finite = match self {
            Profile::Constant(v) => v.is_finite(),
            Profile::Linear { a, b } => a.is_finite() && b.is_finite(),
            Profile::Table { times, values } => {
                if times.is_empty() || times.len() != values.len() {
                    return Err(Error::InvalidSimulation(format!(
                        "{name}: table needs matching, non-empty time and value lists"
                    )));
                }
                if times.windows(2).any(|w| !(w[1] > w[0])) {
                    return Err(Error::InvalidSimulation(format!(
                        "{name}: table times must be strictly increasing"
                    )));
                }
                times.iter().chain(values).all(|v| v.is_finite())
            }
        };
        if finite {
            Ok(())
        } else {
            Err(Error::InvalidSimulation(format!(
                "{name}: non-finite parameter"
            )))
        }
    }
}

/// `(profile(t) + y_slope · y) · (s if times_s else 1)`.
#[derive(Debug, Clone, PartialEq)]
pub struct Coefficient {
    pub profile: Profile,
    pub y_slope: f64,
    pub times_s: bool,
}

impl Coefficient {
    pub fn constant(v: f64) -> Self {
        Coefficient {
            profile: Profile::Constant(v),
            y_slope: 0.0,
            times_s: false,
        }
    }

    pub fn linear(a: f64, b: f64) -> Self {
        Coefficient {
            profile: Profile::Linear { a, b },
            y_slope: 0.0,
            times_s: false,
        }
    }

    pub fn zero() -> Self {
        Coefficient::constant(0.0)
    }

    pub fn with_y_slope(mut self, k: f64) -> Self {
        self.y_slope = k;
        self
    }

    pub fn times_s(mut self) -> Self {
        self.times_s = true;
        self
    }

    #[inline]
    pub fn eval(&self, s: f64, y: f64, t: f64) -> f64 {
        let base = self.profile.at(t) + self.y_slope * y;
        if self.times_s {
            base * s
        } else {
            base
        }
    }

    pub fn is_zero(&self) -> bool {
        self.profile.is_zero() && self.y_slope == 0.0
    }

    /// True when the value depends on `t` alone.
    pub fn is_time_only(&self) -> bool {
        self.y_slope == 0.0 && !self.times_s
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct DiffusionSpec {
    pub mu: Coefficient,
    pub sigma: Coefficient,
    pub alpha: Coefficient,
    pub beta: Coefficient,
    pub rho: Coefficient,
    pub s0: f64,
    pub y0: f64,
    pub horizon: f64,
    pub q: f64,
}

/// Candidate pair `(η, ξ)` for the fundamental equation, with `M^Y = ξ·W`.
#[derive(Debug, Clone, PartialEq)]
pub struct Candidate {
    pub eta: Coefficient,
    pub xi: Coefficient,
}

impl Candidate {
    pub fn zero() -> Self {
        Candidate {
            eta: Coefficient::zero(),
            xi: Coefficient::zero(),
        }
    }

    pub fn is_zero(&self) -> bool {
        self.eta.is_zero() && self.xi.is_zero()
    }
}

impl Default for Candidate {
    fn default() -> Self {
        Candidate::zero()
    }
}

impl DiffusionSpec {
    /// Market with constant price of risk `λ` and unit volatility; `Y` is
    /// frozen at zero.
    pub fn constant_lambda(lambda: f64, q: f64, horizon: f64) -> Self {
        DiffusionSpec {
            mu: Coefficient::constant(lambda),
            sigma: Coefficient::constant(1.0),
            alpha: Coefficient::zero(),
            beta: Coefficient::zero(),
            rho: Coefficient::zero(),
            s0: 1.0,
            y0: 0.0,
            horizon,
            q,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.q.is_finite() && self.q > 1.0) {
            return Err(Error::InvalidExponent(self.q));
        }
        if !(self.horizon.is_finite() && self.horizon > 0.0) {
            return Err(Error::InvalidSimulation(format!(
                "horizon must be finite and positive, got {}",
                self.horizon
            )));
        }
        if !self.s0.is_finite() || !self.y0.is_finite() {
            return Err(Error::InvalidSimulation("non-finite initial value".into()));
        }
        for (name, c) in [
            ("mu", &self.mu),
            ("sigma", &self.sigma),
            ("alpha", &self.alpha),
            ("beta", &self.beta),
            ("rho", &self.rho),
        ] {
            c.profile.validate(name)?;
            if !c.y_slope.is_finite() {
                return Err(Error::InvalidSimulation(format!(
                    "{name}: non-finite y slope"
                )));
            }
        }
        Ok(())
    }

    pub fn p(&self) -> f64 {
        self.q / (self.q - 1.0)
    }

    /// `λ = μ/σ` evaluated without reference to `S` when both coefficients
    /// carry the same `S` factor.
    pub fn lambda_ignores_s(&self) -> bool {
        self.mu.times_s == self.sigma.times_s
    }

    /// `λ(t)` when the price of risk is a deterministic function of time.
    pub fn deterministic_lambda(&self) -> Option<impl Fn(f64) -> f64 + '_> {
        if self.lambda_ignores_s() && self.mu.y_slope == 0.0 && self.sigma.y_slope == 0.0 {
            Some(move |t: f64| self.mu.profile.at(t) / self.sigma.profile.at(t))
        } else {
            None
        }
    }

    /// `λ(y, t)` for models where the price of risk does not involve `S`.
    pub(crate) fn lambda_y(&self, y: f64, t: f64) -> Option<f64> {
        if self.lambda_ignores_s() {
            Some(self.mu.eval(1.0, y, t) / self.sigma.eval(1.0, y, t))
        } else {
            None
        }
    }

    pub fn rho_is_zero(&self) -> bool {
        self.rho.is_zero()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn table_interpolates_and_extrapolates_flat() {
        let p = Profile::Table {
            times: vec![0.0, 1.0, 2.0],
            values: vec![1.0, 3.0, 2.0],
        };
        assert_eq!(p.at(-1.0), 1.0);
        assert_eq!(p.at(0.5), 2.0);
        assert_eq!(p.at(1.0), 3.0);
        assert_eq!(p.at(1.5), 2.5);
        assert_eq!(p.at(9.0), 2.0);
    }

    #[test]
    fn coefficient_forms() {
        let c = Coefficient::constant(0.5).with_y_slope(2.0).times_s();
        assert_eq!(c.eval(3.0, 1.0, 0.0), 7.5);
        assert!(Coefficient::linear(0.1, 0.1).is_time_only());
        assert!(!c.is_time_only());
    }

    #[test]
    fn deterministic_lambda_detection() {
        let spec = DiffusionSpec::constant_lambda(0.2, 2.0, 1.0);
        let lam = spec.deterministic_lambda().unwrap();
        assert_eq!(lam(0.3), 0.2);
        let mut gr = spec.clone();
        gr.mu = Coefficient::zero().with_y_slope(0.2).times_s();
        gr.sigma = Coefficient::constant(0.2).times_s();
        assert!(gr.deterministic_lambda().is_none());
        assert!((gr.lambda_y(0.3, 0.0).unwrap() - 0.3).abs() < 1e-15);
    }

    #[test]
    fn validation_rejects_bad_inputs() {
        let mut s = DiffusionSpec::constant_lambda(0.2, 2.0, 1.0);
        s.q = 1.0;
        assert!(s.validate().is_err());
        let mut s = DiffusionSpec::constant_lambda(0.2, 2.0, 1.0);
        s.horizon = f64::INFINITY;
        assert!(s.validate().is_err());
        let mut s = DiffusionSpec::constant_lambda(0.2, 2.0, 1.0);
        s.mu.profile = Profile::Table {
            times: vec![1.0, 0.0],
            values: vec![0.0, 0.0],
        };
        assert!(s.validate().is_err());
    }
}
