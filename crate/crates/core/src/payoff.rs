//! A small expression vocabulary for bounded Lipschitz payoffs.
//!
//! Payoffs are compositions of a fixed set of primitives so that a bound
//! and a Lipschitz constant can be derived structurally. Arguments are the
//! observed increments `(X_{t_1}, X_{t_2} - X_{t_1}, ...)`.

use std::sync::OnceLock;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// One term `coef * expr` of a linear combination.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Term {
    pub coef: f64,
    pub expr: Payoff,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Payoff {
    Const(f64),
    /// The increment with this index.
    Arg(usize),
    Sum(Vec<Term>),
    Square(Box<Payoff>),
    Abs(Box<Payoff>),
    Clip {
        expr: Box<Payoff>,
        lo: f64,
        hi: f64,
    },
    Min(Vec<Payoff>),
    Max(Vec<Payoff>),
    /// `exp(1 - 1 / (1 - r^2))` for `r = (x_arg - center) / width`, `|r| < 1`; peak value one.
    Bump {
        arg: usize,
        center: f64,
        width: f64,
    },
}

/// Value range and per-argument Lipschitz constants of a payoff.
#[derive(Debug, Clone, PartialEq)]
pub struct Analysis {
    pub lo: f64,
    pub hi: f64,
    pub lipschitz: Vec<f64>,
}

impl Analysis {
    pub fn bound(&self) -> f64 {
        self.lo.abs().max(self.hi.abs())
    }

    /// Lipschitz constant with respect to the max-norm on the arguments.
    pub fn lipschitz_total(&self) -> f64 {
        self.lipschitz.iter().sum()
    }

    pub fn is_bounded_lipschitz(&self) -> bool {
        self.lo.is_finite() && self.hi.is_finite() && self.lipschitz.iter().all(|l| l.is_finite())
    }
}

fn bump_profile(r: f64) -> f64 {
    if r.abs() >= 1.0 {
        0.0
    } else {
        (1.0 - 1.0 / (1.0 - r * r)).exp()
    }
}

/// Maximal slope of the unit bump profile, found by dense sampling.
fn bump_lipschitz() -> f64 {
    static LIP: OnceLock<f64> = OnceLock::new();
    *LIP.get_or_init(|| {
        let n = 20_000;
        let mut best = 0.0_f64;
        for k in 1..n {
            let r = k as f64 / n as f64;
            let f = bump_profile(r);
            let d = f * 2.0 * r / ((1.0 - r * r) * (1.0 - r * r));
            best = best.max(d);
        }
        best * 1.001
    })
}

// 0 * inf = 0 for Lipschitz bookkeeping: a factor that does not depend on an
// argument stays independent of it.
fn scale(c: f64, l: f64) -> f64 {
    if l == 0.0 {
        0.0
    } else {
        c * l
    }
}

impl Payoff {
    pub fn arg(i: usize) -> Self {
        Payoff::Arg(i)
    }

    pub fn constant(c: f64) -> Self {
        Payoff::Const(c)
    }

    pub fn square(e: Payoff) -> Self {
        Payoff::Square(Box::new(e))
    }

    pub fn abs(e: Payoff) -> Self {
        Payoff::Abs(Box::new(e))
    }

    pub fn clip(e: Payoff, lo: f64, hi: f64) -> Self {
        Payoff::Clip {
            expr: Box::new(e),
            lo,
            hi,
        }
    }

    pub fn bump(arg: usize, center: f64, width: f64) -> Self {
        Payoff::Bump { arg, center, width }
    }

    pub fn sum(terms: impl IntoIterator<Item = (f64, Payoff)>) -> Self {
        Payoff::Sum(
            terms
                .into_iter()
                .map(|(coef, expr)| Term { coef, expr })
                .collect(),
        )
    }

    /// `coef * self`.
    pub fn scaled(self, coef: f64) -> Self {
        Payoff::sum([(coef, self)])
    }

    pub fn eval(&self, x: &[f64]) -> f64 {
        match self {
            Payoff::Const(c) => *c,
            Payoff::Arg(i) => x[*i],
            Payoff::Sum(terms) => terms.iter().map(|t| t.coef * t.expr.eval(x)).sum(),
            Payoff::Square(e) => {
                let v = e.eval(x);
                v * v
            }
            Payoff::Abs(e) => e.eval(x).abs(),
            Payoff::Clip { expr, lo, hi } => expr.eval(x).clamp(*lo, *hi),
            Payoff::Min(es) => es.iter().map(|e| e.eval(x)).fold(f64::INFINITY, f64::min),
            Payoff::Max(es) => es
                .iter()
                .map(|e| e.eval(x))
                .fold(f64::NEG_INFINITY, f64::max),
            Payoff::Bump { arg, center, width } => bump_profile((x[*arg] - center) / width),
        }
    }

    /// Structural smoothness: false as soon as a kink-producing primitive appears.
    pub fn is_smooth(&self) -> bool {
        match self {
            Payoff::Const(_) | Payoff::Arg(_) | Payoff::Bump { .. } => true,
            Payoff::Sum(terms) => terms.iter().all(|t| t.expr.is_smooth()),
            Payoff::Square(e) => e.is_smooth(),
            Payoff::Abs(_) | Payoff::Clip { .. } | Payoff::Min(_) | Payoff::Max(_) => false,
        }
    }

    /// Largest argument index referenced plus one.
    pub fn arity(&self) -> usize {
        match self {
            Payoff::Const(_) => 0,
            Payoff::Arg(i) => i + 1,
            Payoff::Bump { arg, .. } => arg + 1,
            Payoff::Sum(terms) => terms.iter().map(|t| t.expr.arity()).max().unwrap_or(0),
            Payoff::Square(e) | Payoff::Abs(e) => e.arity(),
            Payoff::Clip { expr, .. } => expr.arity(),
            Payoff::Min(es) | Payoff::Max(es) => es.iter().map(Payoff::arity).max().unwrap_or(0),
        }
    }

    /// Range and Lipschitz constants for a payoff of `arity` arguments.
    pub fn analyze(&self, arity: usize) -> Result<Analysis> {
        if self.arity() > arity {
            return Err(Error::InvalidPayoff(format!(
                "payoff references argument {} but only {arity} are available",
                self.arity() - 1
            )));
        }
        self.analyze_inner(arity)
    }

    fn analyze_inner(&self, n: usize) -> Result<Analysis> {
        Ok(match self {
            Payoff::Const(c) => {
                if !c.is_finite() {
                    return Err(Error::InvalidPayoff("non-finite constant".into()));
                }
                Analysis {
                    lo: *c,
                    hi: *c,
                    lipschitz: vec![0.0; n],
                }
            }
            Payoff::Arg(i) => {
                let mut lipschitz = vec![0.0; n];
                lipschitz[*i] = 1.0;
                Analysis {
                    lo: f64::NEG_INFINITY,
                    hi: f64::INFINITY,
                    lipschitz,
                }
            }
            Payoff::Sum(terms) => {
                let mut out = Analysis {
                    lo: 0.0,
                    hi: 0.0,
                    lipschitz: vec![0.0; n],
                };
                for t in terms {
                    if !t.coef.is_finite() {
                        return Err(Error::InvalidPayoff("non-finite coefficient".into()));
                    }
                    if t.coef == 0.0 {
                        continue;
                    }
                    let a = t.expr.analyze_inner(n)?;
                    let (lo, hi) = if t.coef > 0.0 {
                        (t.coef * a.lo, t.coef * a.hi)
                    } else {
                        (t.coef * a.hi, t.coef * a.lo)
                    };
                    out.lo += lo;
                    out.hi += hi;
                    for (o, l) in out.lipschitz.iter_mut().zip(&a.lipschitz) {
                        *o += scale(t.coef.abs(), *l);
                    }
                }
                out
            }
            Payoff::Square(e) => {
                let a = e.analyze_inner(n)?;
                let m = a.lo.abs().max(a.hi.abs());
                square_of(&a, m)
            }
            Payoff::Abs(e) => {
                let a = e.analyze_inner(n)?;
                let lo = if a.lo >= 0.0 {
                    a.lo
                } else if a.hi <= 0.0 {
                    -a.hi
                } else {
                    0.0
                };
                Analysis {
                    lo,
                    hi: a.lo.abs().max(a.hi.abs()),
                    lipschitz: a.lipschitz,
                }
            }
            Payoff::Clip { expr, lo, hi } => {
                if !(lo <= hi) || lo.is_nan() {
                    return Err(Error::InvalidPayoff(format!("clip bounds [{lo}, {hi}]")));
                }
                let a = match expr.as_ref() {
                    // Only the part of g with g^2 <= hi is visible through the clip.
                    Payoff::Square(g) => {
                        let ga = g.analyze_inner(n)?;
                        let m = ga.lo.abs().max(ga.hi.abs()).min(hi.max(0.0).sqrt());
                        let mut sq = square_of(&ga, ga.lo.abs().max(ga.hi.abs()));
                        sq.lipschitz = ga.lipschitz.iter().map(|l| scale(2.0 * m, *l)).collect();
                        sq
                    }
                    other => other.analyze_inner(n)?,
                };
                Analysis {
                    lo: a.lo.clamp(*lo, *hi),
                    hi: a.hi.clamp(*lo, *hi),
                    lipschitz: a.lipschitz,
                }
            }
            Payoff::Min(es) | Payoff::Max(es) => {
                if es.is_empty() {
                    return Err(Error::InvalidPayoff("empty min/max".into()));
                }
                let parts = es
                    .iter()
                    .map(|e| e.analyze_inner(n))
                    .collect::<Result<Vec<_>>>()?;
                let is_min = matches!(self, Payoff::Min(_));
                let pick = |f: fn(f64, f64) -> f64, it: &mut dyn Iterator<Item = f64>| {
                    it.reduce(f).unwrap()
                };
                let (lo, hi) = if is_min {
                    (
                        pick(f64::min, &mut parts.iter().map(|p| p.lo)),
                        pick(f64::min, &mut parts.iter().map(|p| p.hi)),
                    )
                } else {
                    (
                        pick(f64::max, &mut parts.iter().map(|p| p.lo)),
                        pick(f64::max, &mut parts.iter().map(|p| p.hi)),
                    )
                };
                let lipschitz = (0..n)
                    .map(|i| parts.iter().map(|p| p.lipschitz[i]).fold(0.0, f64::max))
                    .collect();
                Analysis { lo, hi, lipschitz }
            }
            Payoff::Bump { arg, width, center } => {
                if !(*width > 0.0) || !center.is_finite() {
                    return Err(Error::InvalidPayoff(format!("bump width {width}")));
                }
                let mut lipschitz = vec![0.0; n];
                lipschitz[*arg] = bump_lipschitz() / width;
                Analysis {
                    lo: 0.0,
                    hi: 1.0,
                    lipschitz,
                }
            }
        })
    }
}

fn square_of(a: &Analysis, m: f64) -> Analysis {
    let (lo, hi) = if a.lo >= 0.0 {
        (a.lo * a.lo, a.hi * a.hi)
    } else if a.hi <= 0.0 {
        (a.hi * a.hi, a.lo * a.lo)
    } else {
        (0.0, m * m)
    };
    Analysis {
        lo,
        hi,
        lipschitz: a.lipschitz.iter().map(|l| scale(2.0 * m, *l)).collect(),
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn clipped_square_is_bounded_lipschitz() {
        let p = Payoff::clip(Payoff::square(Payoff::arg(0)), 0.0, 100.0);
        let a = p.analyze(1).unwrap();
        assert_eq!((a.lo, a.hi), (0.0, 100.0));
        assert_eq!(a.lipschitz, vec![20.0]);
        assert!(a.is_bounded_lipschitz());
        assert_eq!(p.eval(&[3.0]), 9.0);
        assert_eq!(p.eval(&[-30.0]), 100.0);
        assert!(!p.is_smooth());
    }

    #[test]
    fn unclipped_square_is_not_lipschitz() {
        let a = Payoff::square(Payoff::arg(0)).analyze(1).unwrap();
        assert!(!a.is_bounded_lipschitz());
    }

    #[test]
    fn linear_combination_analysis() {
        let p = Payoff::sum([
            (2.0, Payoff::clip(Payoff::arg(0), -1.0, 1.0)),
            (-1.0, Payoff::clip(Payoff::arg(1), 0.0, 3.0)),
        ]);
        let a = p.analyze(2).unwrap();
        assert_eq!((a.lo, a.hi), (-5.0, 2.0));
        assert_eq!(a.lipschitz, vec![2.0, 1.0]);
        assert_eq!(p.eval(&[0.5, 2.0]), -1.0);
    }

    #[test]
    fn min_max_abs() {
        let p = Payoff::Max(vec![
            Payoff::abs(Payoff::clip(Payoff::arg(0), -2.0, 2.0)),
            Payoff::constant(0.5),
        ]);
        let a = p.analyze(1).unwrap();
        assert_eq!((a.lo, a.hi), (0.5, 2.0));
        assert_eq!(a.lipschitz, vec![1.0]);
        assert_eq!(p.eval(&[-1.5]), 1.5);
    }

    #[test]
    fn bump_lipschitz_dominates_finite_differences() {
        let p = Payoff::bump(0, 0.3, 0.5);
        let a = p.analyze(1).unwrap();
        let h = 1e-5;
        let mut max_slope = 0.0_f64;
        for k in 0..2000 {
            let x = -0.3 + k as f64 * 0.0006;
            max_slope = max_slope.max((p.eval(&[x + h]) - p.eval(&[x])).abs() / h);
        }
        assert!(max_slope <= a.lipschitz[0]);
        assert!(max_slope > 0.9 * a.lipschitz[0]);
        assert_eq!(p.eval(&[0.3]), 1.0);
    }

    #[test]
    fn arity_is_checked() {
        assert!(Payoff::arg(2).analyze(2).is_err());
    }

    #[test]
    fn serde_shape() {
        let p: Payoff = serde_json::from_str(
            r#"{"clip": {"expr": {"square": {"arg": 0}}, "lo": 0.0, "hi": 100.0}}"#,
        )
        .unwrap();
        assert_eq!(p, Payoff::clip(Payoff::square(Payoff::arg(0)), 0.0, 100.0));
    }
}
