//! Step-size schedules `α_m` and their series classification.

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{invalid, Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Schedule {
    Constant {
        c: f64,
    },
    /// `c / m^p`
    Power {
        c: f64,
        p: f64,
    },
    /// `c / ln(1 + m)`
    Log {
        c: f64,
    },
    /// `c` for `m ≤ m0`, then `c / (m − m0)^q`.
    DelayedDecay {
        c: f64,
        m0: u64,
        q: f64,
    },
}

/// Which of the classical series conditions a schedule satisfies.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct SeriesClass {
    pub sum_divergent: bool,
    pub square_summable: bool,
    pub vanishing: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SmallnessWarning {
    /// `α_1 ≥ 1/L`
    Stochastic { alpha: f64, threshold: f64 },
    /// `α_1 ≥ 2/L`
    Deterministic { alpha: f64, threshold: f64 },
}

/// Asymptotic decay of the deterministic and stochastic parts of the
/// second moment in the solvable convex example.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum RateDescriptor {
    /// Both parts decay like `m^exponent`.
    Algebraic {
        deterministic_exponent: f64,
        stochastic_exponent: f64,
    },
    /// Deterministic part `exp(−rate · m^(1−p))`, stochastic part `coeff · m^(−p)`.
    StretchedExponential {
        rate: f64,
        power: f64,
        stochastic_coeff: f64,
        stochastic_exponent: f64,
    },
    /// Variance plateaus at `variance`.
    Plateau { variance: f64 },
}

impl Schedule {
    pub fn constant(c: f64) -> Result<Self> {
        let s = Schedule::Constant { c };
        s.validate()?;
        Ok(s)
    }

    pub fn power(c: f64, p: f64) -> Result<Self> {
        let s = Schedule::Power { c, p };
        s.validate()?;
        Ok(s)
    }

    pub fn log(c: f64) -> Result<Self> {
        let s = Schedule::Log { c };
        s.validate()?;
        Ok(s)
    }

    pub fn delayed(c: f64, m0: u64, q: f64) -> Result<Self> {
        let s = Schedule::DelayedDecay { c, m0, q };
        s.validate()?;
        Ok(s)
    }

    pub fn c(&self) -> f64 {
        match *self {
            Schedule::Constant { c }
            | Schedule::Power { c, .. }
            | Schedule::Log { c }
            | Schedule::DelayedDecay { c, .. } => c,
        }
    }

    pub fn validate(&self) -> Result<()> {
        let c = self.c();
        if !(c > 0.0 && c.is_finite()) {
            return Err(invalid(format!(
                "schedule constant must be positive, got {c}"
            )));
        }
        match *self {
            Schedule::Power { p, .. } if !(p > 0.0 && p.is_finite()) => {
                Err(invalid(format!("power exponent must be positive, got {p}")))
            }
            Schedule::DelayedDecay { q, .. } if !(q > 0.0 && q.is_finite()) => {
                Err(invalid(format!("decay exponent must be positive, got {q}")))
            }
            _ => Ok(()),
        }
    }

    /// `α_m` for `m ≥ 1`.
    pub fn step(&self, m: u64) -> Result<f64> {
        if m == 0 {
            return Err(invalid("iteration index starts at 1"));
        }
        Ok(self.eval(m as f64))
    }

    /// `α` at a real index `s ≥ 1`; agrees with [`Schedule::step`] on integers.
    pub fn eval(&self, s: f64) -> f64 {
        match *self {
            Schedule::Constant { c } => c,
            Schedule::Power { c, p } => c / s.powf(p),
            Schedule::Log { c } => c / s.ln_1p(),
            Schedule::DelayedDecay { c, m0, q } => {
                let m0 = m0 as f64;
                if s <= m0 + 1.0 {
                    c
                } else {
                    c / (s - m0).powf(q)
                }
            }
        }
    }

    /// Continuous-time rate with `t = 0` matching the first iteration.
    pub fn rate_at(&self, t: f64) -> f64 {
        self.eval(1.0 + t.max(0.0))
    }

    pub fn classify(&self) -> SeriesClass {
        let power_class = |p: f64| SeriesClass {
            sum_divergent: p <= 1.0,
            square_summable: p > 0.5,
            vanishing: true,
        };
        match *self {
            Schedule::Constant { .. } => SeriesClass {
                sum_divergent: true,
                square_summable: false,
                vanishing: false,
            },
            Schedule::Power { p, .. } => power_class(p),
            Schedule::Log { .. } => SeriesClass {
                sum_divergent: true,
                square_summable: false,
                vanishing: true,
            },
            Schedule::DelayedDecay { q, .. } => power_class(q),
        }
    }

    /// Flags a first step that is too large for Hessian bound `l`.
    pub fn validate_smallness(&self, l: f64) -> Result<Vec<SmallnessWarning>> {
        if !(l > 0.0) {
            return Err(invalid("Hessian bound must be positive"));
        }
        let a = self.eval(1.0);
        let mut out = Vec::new();
        if a >= 1.0 / l {
            out.push(SmallnessWarning::Stochastic {
                alpha: a,
                threshold: 1.0 / l,
            });
        }
        if a >= 2.0 / l {
            out.push(SmallnessWarning::Deterministic {
                alpha: a,
                threshold: 2.0 / l,
            });
        }
        Ok(out)
    }

    pub fn predicted_rates(&self) -> Result<RateDescriptor> {
        match *self {
            Schedule::Constant { c } => Ok(RateDescriptor::Plateau {
                variance: crate::moments::fixed_point_variance(c)?,
            }),
            Schedule::Power { c, p } if p == 1.0 => Ok(RateDescriptor::Algebraic {
                deterministic_exponent: -4.0 * c,
                stochastic_exponent: if c < 0.25 { -4.0 * c } else { -1.0 },
            }),
            Schedule::Power { c, p } if p > 0.5 && p < 1.0 => {
                Ok(RateDescriptor::StretchedExponential {
                    rate: 4.0 * c,
                    power: 1.0 - p,
                    stochastic_coeff: c * c,
                    stochastic_exponent: -p,
                })
            }
            s => Err(Error::NotAvailable(format!("no rate prediction for {s}"))),
        }
    }
}

impl fmt::Display for Schedule {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Schedule::Constant { c } => write!(f, "const:{c}"),
            Schedule::Power { c, p } => write!(f, "power:{c}:{p}"),
            Schedule::Log { c } => write!(f, "log:{c}"),
            Schedule::DelayedDecay { c, m0, q } => write!(f, "delayed:{c}:{m0}:{q}"),
        }
    }
}

impl FromStr for Schedule {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        let parts: Vec<&str> = s.split(':').collect();
        let num = |k: usize| -> Result<f64> {
            parts[k]
                .trim()
                .parse::<f64>()
                .map_err(|_| Error::Parse(format!("bad number '{}' in schedule '{s}'", parts[k])))
        };
        let sched = match (parts[0], parts.len()) {
            ("const", 2) => Schedule::Constant { c: num(1)? },
            ("power", 3) => Schedule::Power {
                c: num(1)?,
                p: num(2)?,
            },
            ("log", 2) => Schedule::Log { c: num(1)? },
            ("delayed", 4) => Schedule::DelayedDecay {
                c: num(1)?,
                m0: parts[2].trim().parse().map_err(|_| {
                    Error::Parse(format!("bad delay '{}' in schedule '{s}'", parts[2]))
                })?,
                q: num(3)?,
            },
            _ => return Err(Error::Parse(format!("unrecognized schedule '{s}'"))),
        };
        sched.validate().map_err(|e| Error::Parse(e.to_string()))?;
        Ok(sched)
    }
}
