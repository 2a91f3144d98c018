//! Convergence-rate fits and the Łojasiewicz exponent probe.

use serde::{Deserialize, Serialize};

use crate::error::{Result, WyfError};
use crate::flow::Trajectory;

/// Samples below this level count as noise floor.
pub const NOISE_FLOOR: f64 = 1e-12;
/// Minimum number of samples in a fit window.
pub const MIN_SAMPLES: usize = 30;
/// Information-score margin for model selection.
pub const MARGIN: f64 = 2.0;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum RateKind {
    Exponential,
    Polynomial,
    Undecided,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Series {
    SupDev,
    H1Dev,
    RGap,
}

/// Least-squares line `y = intercept + slope x`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LineFit {
    pub slope: f64,
    pub intercept: f64,
    pub r2: f64,
    pub rss: f64,
    /// `n ln(RSS/n) + 2 * (number of parameters)`.
    pub score: f64,
}

pub fn line_fit(x: &[f64], y: &[f64]) -> LineFit {
    let n = x.len() as f64;
    let mx = x.iter().sum::<f64>() / n;
    let my = y.iter().sum::<f64>() / n;
    let sxx: f64 = x.iter().map(|a| (a - mx) * (a - mx)).sum();
    let sxy: f64 = x.iter().zip(y).map(|(a, b)| (a - mx) * (b - my)).sum();
    let slope = if sxx > 0.0 { sxy / sxx } else { 0.0 };
    let intercept = my - slope * mx;
    let rss: f64 = x
        .iter()
        .zip(y)
        .map(|(a, b)| {
            let e = b - intercept - slope * a;
            e * e
        })
        .sum();
    let tss: f64 = y.iter().map(|b| (b - my) * (b - my)).sum();
    let r2 = if tss > 0.0 { (1.0 - rss / tss).clamp(0.0, 1.0) } else { 1.0 };
    let score = n * (rss / n).max(1e-300).ln() + 4.0;
    LineFit {
        slope,
        intercept,
        r2,
        rss,
        score,
    }
}

/// Fit window selection.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case", tag = "mode")]
pub enum Window {
    /// Middle 60% of the region before the noise floor and before the last
    /// 10% of samples.
    #[default]
    Default,
    /// Explicit time interval, still truncated at the noise floor.
    Time { t_lo: f64, t_hi: f64 },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RateFit {
    pub kind: RateKind,
    /// Decay rate `delta` (exponential) or exponent (polynomial); for an
    /// undecided fit, the value of the better-scoring model.
    pub rate: f64,
    pub constant: f64,
    pub r2: f64,
    pub window: [f64; 2],
    pub samples: usize,
    /// Offset `s` in the polynomial model `C (s + t)^{-a}`.
    pub shift: f64,
    pub exponential: LineFit,
    pub polynomial: LineFit,
}

fn window_indices(t: &[f64], y: &[f64], w: Window) -> Result<(usize, usize)> {
    let n = t.len();
    let floor = y
        .iter()
        .position(|v| !(*v >= NOISE_FLOOR))
        .unwrap_or(n);
    let (lo, hi) = match w {
        Window::Default => {
            let end = ((0.9 * n as f64) as usize).min(floor);
            ((0.2 * end as f64).ceil() as usize, (0.8 * end as f64) as usize)
        }
        Window::Time { t_lo, t_hi } => {
            if !(t_lo < t_hi) {
                return Err(WyfError::InvalidConfig(format!(
                    "empty fit window [{t_lo}, {t_hi}]"
                )));
            }
            let lo = t.iter().position(|x| *x >= t_lo).unwrap_or(n);
            let hi = t.iter().rposition(|x| *x <= t_hi).map_or(0, |i| i + 1);
            (lo, hi.min(floor))
        }
    };
    if hi <= lo || hi - lo < MIN_SAMPLES {
        return Err(WyfError::Fit(format!(
            "fit window holds {} samples, need {MIN_SAMPLES}",
            hi.saturating_sub(lo)
        )));
    }
    Ok((lo, hi))
}

/// Fits `C e^{-delta t}` and `C (shift + t)^{-a}` on the window and selects
/// the model with the better information score.
pub fn fit_rate_shifted(t: &[f64], y: &[f64], window: Window, shift: f64) -> Result<RateFit> {
    if t.len() != y.len() {
        return Err(WyfError::ShapeMismatch {
            expected: t.len(),
            got: y.len(),
        });
    }
    if !(shift > 0.0) {
        return Err(WyfError::InvalidConfig(format!("shift must be positive, got {shift}")));
    }
    let (lo, hi) = window_indices(t, y, window)?;
    let ts = &t[lo..hi];
    let ly: Vec<f64> = y[lo..hi].iter().map(|v| v.ln()).collect();
    let lt: Vec<f64> = ts.iter().map(|x| (shift + x).ln()).collect();
    let exponential = line_fit(ts, &ly);
    let polynomial = line_fit(&lt, &ly);
    let kind = if exponential.score + MARGIN < polynomial.score {
        RateKind::Exponential
    } else if polynomial.score + MARGIN < exponential.score {
        RateKind::Polynomial
    } else {
        RateKind::Undecided
    };
    let use_exp = match kind {
        RateKind::Exponential => true,
        RateKind::Polynomial => false,
        RateKind::Undecided => exponential.score <= polynomial.score,
    };
    let chosen = if use_exp { exponential } else { polynomial };
    Ok(RateFit {
        kind,
        rate: -chosen.slope,
        constant: chosen.intercept.exp(),
        r2: chosen.r2,
        window: [ts[0], ts[ts.len() - 1]],
        samples: hi - lo,
        shift,
        exponential,
        polynomial,
    })
}

/// [`fit_rate_shifted`] with the polynomial model in `1 + t`.
pub fn fit_rate(t: &[f64], y: &[f64], window: Window) -> Result<RateFit> {
    fit_rate_shifted(t, y, window, 1.0)
}

pub fn series(traj: &Trajectory, which: Series) -> Vec<f64> {
    match which {
        Series::SupDev => traj.sup_dev.clone(),
        Series::H1Dev => traj.h1_dev.clone(),
        Series::RGap => {
            let last = traj.r_values.last().copied().unwrap_or(0.0);
            traj.r_values.iter().map(|r| r - last).collect()
        }
    }
}

pub fn fit_trajectory(traj: &Trajectory, which: Series, window: Window) -> Result<RateFit> {
    fit_rate(&traj.times, &series(traj, which), window)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LojasiewiczFit {
    pub theta: f64,
    /// `max (r - r_inf)^{1-theta} / ||DE||` over the window.
    pub constant: f64,
    pub r2: f64,
    pub slope: f64,
    pub window: [f64; 2],
    pub samples: usize,
}

/// Regresses `ln(r - r_inf)` on `ln ||DE||` with `r_inf` the final value.
pub fn lojasiewicz_probe_series(t: &[f64], r: &[f64], de: &[f64]) -> Result<LojasiewiczFit> {
    if t.len() != r.len() || t.len() != de.len() {
        return Err(WyfError::ShapeMismatch {
            expected: t.len(),
            got: r.len().min(de.len()),
        });
    }
    let r_inf = *r.last().ok_or_else(|| WyfError::Fit("empty trajectory".into()))?;
    let gap: Vec<f64> = r.iter().map(|x| x - r_inf).collect();
    let (lo, hi) = window_indices(t, &gap, Window::Default)?;
    if gap[lo..hi].iter().chain(&de[lo..hi]).any(|x| !(*x > 0.0)) {
        return Err(WyfError::Fit("non-positive gap or gradient in window".into()));
    }
    let lg: Vec<f64> = gap[lo..hi].iter().map(|x| x.ln()).collect();
    let ld: Vec<f64> = de[lo..hi].iter().map(|x| x.ln()).collect();
    let fit = line_fit(&ld, &lg);
    if !(fit.slope > 1.0) {
        return Err(WyfError::Fit(format!(
            "log-log slope {} does not exceed 1",
            fit.slope
        )));
    }
    let theta = 1.0 - 1.0 / fit.slope;
    let constant = gap[lo..hi]
        .iter()
        .zip(&de[lo..hi])
        .map(|(g, d)| g.powf(1.0 - theta) / d)
        .fold(0.0f64, f64::max);
    Ok(LojasiewiczFit {
        theta,
        constant,
        r2: fit.r2,
        slope: fit.slope,
        window: [t[lo], t[hi - 1]],
        samples: hi - lo,
    })
}

pub fn lojasiewicz_probe(traj: &Trajectory) -> Result<LojasiewiczFit> {
    lojasiewicz_probe_series(&traj.times, &traj.r_values, &traj.de_l2)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DissipationCheck {
    /// Fitted `c` in `d(r - r_inf)/dt = -c (r - r_inf)^{2 - 2 theta}`.
    pub c: f64,
    pub predicted_end_gap: f64,
    pub actual_end_gap: f64,
    /// `max(pred/actual, actual/pred)`.
    pub factor: f64,
}

/// Integrates `g' = -c g^{2-2 theta}` across the probe window, with `c`
/// fitted from the discrete derivative, and compares the end gap.
pub fn dissipation_consistency(traj: &Trajectory, fit: &LojasiewiczFit) -> Result<DissipationCheck> {
    let t = &traj.times;
    let r_inf = *traj.r_values.last().ok_or_else(|| WyfError::Fit("empty trajectory".into()))?;
    let lo = t.iter().position(|x| *x >= fit.window[0]).unwrap_or(0);
    let hi = t.iter().position(|x| *x >= fit.window[1]).unwrap_or(t.len() - 1);
    if hi <= lo + 2 {
        return Err(WyfError::Fit("dissipation window too short".into()));
    }
    let e = 2.0 - 2.0 * fit.theta;
    let mut ratios = Vec::new();
    for k in lo + 1..hi {
        let dg = (traj.r_values[k + 1] - traj.r_values[k - 1]) / (t[k + 1] - t[k - 1]);
        let g = traj.r_values[k] - r_inf;
        if g > 0.0 {
            ratios.push(-dg / g.powf(e));
        }
    }
    if ratios.is_empty() {
        return Err(WyfError::Fit("no positive gaps in window".into()));
    }
    ratios.sort_by(f64::total_cmp);
    let c = ratios[ratios.len() / 2];
    let g0 = traj.r_values[lo] - r_inf;
    let span = t[hi] - t[lo];
    let predicted = if (e - 1.0).abs() < 1e-12 {
        g0 * (-c * span).exp()
    } else {
        (g0.powf(1.0 - e) + (e - 1.0) * c * span).powf(1.0 / (1.0 - e))
    };
    let actual = traj.r_values[hi] - r_inf;
    let factor = (predicted / actual).max(actual / predicted);
    Ok(DissipationCheck {
        c,
        predicted_end_gap: predicted,
        actual_end_gap: actual,
        factor,
    })
}
