use serde::Deserialize;

use crate::error::{Result, WyfError};

/// Closed-form base density on the torus.
///
/// Grammar: `expr:<formula in x1..xn>` (with `sin`, `cos`, `exp`, `pi`) or
/// `fourier:[[k, a], ...]`, where each term contributes `a cos(k.x)`; an
/// optional third entry `[k, a, s]` is a phase shift giving `a cos(k.x - s)`.
#[derive(Debug, Clone)]
pub enum Phi0Spec {
    Zero,
    Expr { source: String, expr: meval::Expr },
    Fourier(Vec<FourierTerm>),
}

#[derive(Debug, Clone, PartialEq)]
pub struct FourierTerm {
    pub k: Vec<f64>,
    pub amplitude: f64,
    pub phase: f64,
}

#[derive(Deserialize)]
#[serde(untagged)]
enum RawTerm {
    Plain(Vec<f64>, f64),
    Shifted(Vec<f64>, f64, f64),
}

impl Phi0Spec {
    pub fn parse(s: &str) -> Result<Self> {
        let s = s.trim();
        if s.is_empty() || s == "0" {
            return Ok(Self::Zero);
        }
        if let Some(body) = s.strip_prefix("expr:") {
            let expr: meval::Expr = body
                .parse()
                .map_err(|e| WyfError::InvalidConfig(format!("phi0 expression: {e}")))?;
            return Ok(Self::Expr {
                source: body.to_string(),
                expr,
            });
        }
        if let Some(body) = s.strip_prefix("fourier:") {
            let raw: Vec<RawTerm> = serde_json::from_str(body)
                .map_err(|e| WyfError::InvalidConfig(format!("phi0 fourier table: {e}")))?;
            let terms = raw
                .into_iter()
                .map(|t| match t {
                    RawTerm::Plain(k, amplitude) => FourierTerm {
                        k,
                        amplitude,
                        phase: 0.0,
                    },
                    RawTerm::Shifted(k, amplitude, phase) => FourierTerm {
                        k,
                        amplitude,
                        phase,
                    },
                })
                .collect::<Vec<_>>();
            for t in &terms {
                if t.k.iter().any(|k| k.fract() != 0.0) {
                    return Err(WyfError::InvalidConfig(
                        "phi0 fourier wave vectors must be integers (periodicity)".into(),
                    ));
                }
            }
            return Ok(Self::Fourier(terms));
        }
        Err(WyfError::InvalidConfig(format!(
            "phi0 must start with `expr:` or `fourier:`, got `{s}`"
        )))
    }

    /// Evaluates the density at a point of `[0, 2pi)^n`.
    pub fn eval(&self, x: &[f64]) -> Result<f64> {
        match self {
            Self::Zero => Ok(0.0),
            Self::Expr { source, expr } => {
                let mut ctx = meval::Context::new();
                for (i, xi) in x.iter().enumerate() {
                    ctx.var(format!("x{}", i + 1), *xi);
                }
                let v = expr
                    .eval_with_context(ctx)
                    .map_err(|e| WyfError::InvalidConfig(format!("phi0 `{source}`: {e}")))?;
                if !v.is_finite() {
                    return Err(WyfError::InvalidConfig(format!(
                        "phi0 `{source}` is not finite at {x:?}"
                    )));
                }
                Ok(v)
            }
            Self::Fourier(terms) => {
                let mut acc = 0.0;
                for t in terms {
                    if t.k.len() != x.len() {
                        return Err(WyfError::InvalidConfig(format!(
                            "phi0 wave vector {:?} has wrong dimension (expected {})",
                            t.k,
                            x.len()
                        )));
                    }
                    let kx: f64 = t.k.iter().zip(x).map(|(k, x)| k * x).sum();
                    acc += t.amplitude * (kx - t.phase).cos();
                }
                Ok(acc)
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn expression_form() {
        let p = Phi0Spec::parse("expr:0.3*cos(x1) + sin(x2)").unwrap();
        let v = p.eval(&[0.0, std::f64::consts::FRAC_PI_2]).unwrap();
        assert!((v - 1.3).abs() < 1e-15);
    }

    #[test]
    fn fourier_form() {
        let p = Phi0Spec::parse("fourier:[[[1,0],0.3],[[0,2],0.1,1.5707963267948966]]").unwrap();
        let x = [0.4, 0.7];
        let expect = 0.3 * 0.4f64.cos() + 0.1 * (1.4f64).sin();
        assert!((p.eval(&x).unwrap() - expect).abs() < 1e-14);
    }

    #[test]
    fn rejects_unknown_prefix() {
        assert!(Phi0Spec::parse("cos(x1)").is_err());
        assert!(Phi0Spec::parse("fourier:[[[0.5],1.0]]").is_err());
    }
}
