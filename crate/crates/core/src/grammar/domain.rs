//! Hyper-parameter domains and bound values.

use std::fmt;

use rand::Rng;
use serde::{Deserialize, Serialize};

/// A value bound to a hyper-parameter slot.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum HParamValue {
    Bool(bool),
    Int(i64),
    Real(f64),
    Cat(String),
}

impl fmt::Display for HParamValue {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            HParamValue::Bool(b) => write!(f, "{b}"),
            HParamValue::Int(i) => write!(f, "{i}"),
            HParamValue::Real(r) => write!(f, "{r}"),
            HParamValue::Cat(s) => write!(f, "{s}"),
        }
    }
}

/// The set of admissible values for one hyper-parameter slot.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "lowercase")]
pub enum HParamDomain {
    Int { lo: i64, hi: i64, log: bool },
    Real { lo: f64, hi: f64, log: bool },
    Cat { values: Vec<String> },
    Bool,
}

impl HParamDomain {
    /// Describes what is wrong with the domain, if anything.
    pub fn problem(&self) -> Option<String> {
        match self {
            HParamDomain::Int { lo, hi, log } => {
                if lo > hi {
                    Some(format!("integer range has lo {lo} > hi {hi}"))
                } else if *log && *lo < 1 {
                    Some("log-scale integer range needs lo >= 1".into())
                } else {
                    None
                }
            }
            HParamDomain::Real { lo, hi, log } => {
                if !lo.is_finite() || !hi.is_finite() {
                    Some("real range bounds must be finite".into())
                } else if lo > hi {
                    Some(format!("real range has lo {lo} > hi {hi}"))
                } else if *log && *lo <= 0.0 {
                    Some("log-scale real range needs lo > 0".into())
                } else {
                    None
                }
            }
            HParamDomain::Cat { values } => {
                if values.is_empty() {
                    return Some("categorical domain is empty".into());
                }
                for (i, v) in values.iter().enumerate() {
                    if values[..i].contains(v) {
                        return Some(format!("categorical value {v:?} repeated"));
                    }
                }
                None
            }
            HParamDomain::Bool => None,
        }
    }

    pub fn contains(&self, value: &HParamValue) -> bool {
        match (self, value) {
            (HParamDomain::Int { lo, hi, .. }, HParamValue::Int(v)) => lo <= v && v <= hi,
            (HParamDomain::Real { lo, hi, .. }, HParamValue::Real(v)) => *lo <= *v && *v <= *hi,
            (HParamDomain::Cat { values }, HParamValue::Cat(v)) => values.contains(v),
            (HParamDomain::Bool, HParamValue::Bool(_)) => true,
            _ => false,
        }
    }

    /// Draws a value: uniform over categorical, boolean and inclusive integer
    /// ranges; uniform over real ranges, in log10 space when `log` is set.
    pub fn sample<R: Rng + ?Sized>(&self, rng: &mut R) -> HParamValue {
        match self {
            HParamDomain::Int { lo, hi, log } => {
                if lo == hi {
                    return HParamValue::Int(*lo);
                }
                if *log {
                    let a = (*lo as f64).log10();
                    let b = ((*hi + 1) as f64).log10();
                    let v = 10f64.powf(rng.random_range(a..b)).floor() as i64;
                    HParamValue::Int(v.clamp(*lo, *hi))
                } else {
                    HParamValue::Int(rng.random_range(*lo..=*hi))
                }
            }
            HParamDomain::Real { lo, hi, log } => {
                if lo == hi {
                    return HParamValue::Real(*lo);
                }
                let v = if *log {
                    let exp = rng.random_range(lo.log10()..hi.log10());
                    10f64.powf(exp)
                } else {
                    rng.random_range(*lo..*hi)
                };
                HParamValue::Real(v.clamp(*lo, *hi))
            }
            HParamDomain::Cat { values } => {
                HParamValue::Cat(values[rng.random_range(0..values.len())].clone())
            }
            HParamDomain::Bool => HParamValue::Bool(rng.random_bool(0.5)),
        }
    }
}

impl fmt::Display for HParamDomain {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            HParamDomain::Int { lo, hi, log } => {
                write!(f, "int {lo} {hi}{}", if *log { " log" } else { "" })
            }
            HParamDomain::Real { lo, hi, log } => {
                write!(f, "real {lo} {hi}{}", if *log { " log" } else { "" })
            }
            HParamDomain::Cat { values } => write!(f, "cat {}", values.join(",")),
            HParamDomain::Bool => write!(f, "bool"),
        }
    }
}
