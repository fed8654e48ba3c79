//! Post-hoc metrics over trajectories: exponential decay fits, monotonicity
//! audits, a chattering proxy (total variation of the sampled input) and
//! adaptive-gain convergence.

use nalgebra::DMatrix;
use serde::Serialize;
use thiserror::Error;

use crate::controller::RobustGains;
use crate::linalg::{is_spd, lambda_max, lambda_min};
use crate::scalar::Real;
use crate::sim::Trajectory;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum AnalysisError {
    #[error("need at least {needed} positive samples in the window, found {found}")]
    TooFewSamples { needed: usize, found: usize },
    #[error("series decreases at sample {index} ({prev} -> {next})")]
    Decreasing { index: usize, prev: f64, next: f64 },
    #[error("matrix is not symmetric positive definite")]
    NotSpd,
    #[error("invalid argument: {0}")]
    Argument(String),
}

pub const MIN_FIT_SAMPLES: usize = 10;

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct DecayFit<T: Real + Serialize> {
    /// Fitted exponential rate, `−slope` of `ln v` against `t`.
    pub eta_hat: T,
    pub intercept: T,
    pub r_squared: T,
    pub window: (T, T),
    pub samples: usize,
}

/// Least-squares line through `(t, ln v)` for samples with `t` in `window`
/// and `v > 0`.
pub fn fit_decay_rate<T: Real + Serialize>(
    times: &[T],
    values: &[T],
    window: (T, T),
) -> Result<DecayFit<T>, AnalysisError> {
    let pts: Vec<(T, T)> = times
        .iter()
        .zip(values)
        .filter(|(&t, &v)| t >= window.0 && t <= window.1 && v > T::zero())
        .map(|(&t, &v)| (t, v.ln()))
        .collect();
    if pts.len() < MIN_FIT_SAMPLES {
        return Err(AnalysisError::TooFewSamples {
            needed: MIN_FIT_SAMPLES,
            found: pts.len(),
        });
    }
    let m = T::lit(pts.len() as f64);
    let t_mean = pts.iter().fold(T::zero(), |a, p| a + p.0) / m;
    let y_mean = pts.iter().fold(T::zero(), |a, p| a + p.1) / m;
    let sxx = pts
        .iter()
        .fold(T::zero(), |a, p| a + (p.0 - t_mean) * (p.0 - t_mean));
    let sxy = pts
        .iter()
        .fold(T::zero(), |a, p| a + (p.0 - t_mean) * (p.1 - y_mean));
    let syy = pts
        .iter()
        .fold(T::zero(), |a, p| a + (p.1 - y_mean) * (p.1 - y_mean));
    let slope = if sxx > T::zero() {
        sxy / sxx
    } else {
        T::zero()
    };
    let intercept = y_mean - slope * t_mean;
    let r_squared = if syy > T::zero() && sxx > T::zero() {
        let ss_res = pts.iter().fold(T::zero(), |a, p| {
            let e = p.1 - (intercept + slope * p.0);
            a + e * e
        });
        (T::one() - ss_res / syy).max(T::zero()).min(T::one())
    } else {
        T::zero()
    };
    Ok(DecayFit {
        eta_hat: -slope,
        intercept,
        r_squared,
        window,
        samples: pts.len(),
    })
}

/// Fit window `[skip·t_end, t_stop]` where `t_stop` is the last sample before
/// the series first falls to `floor` or below.
pub fn decay_window<T: Real>(times: &[T], values: &[T], skip_fraction: T, floor: T) -> (T, T) {
    let t_end = *times.last().expect("non-empty series");
    let start = t_end * skip_fraction;
    let mut stop = start;
    for (&t, &v) in times.iter().zip(values) {
        if t < start {
            continue;
        }
        if v <= floor {
            break;
        }
        stop = t;
    }
    (start, stop)
}

/// Times `t_{k+1}` where `v_{k+1} > v_k + slack`.
pub fn monotonicity_violations<T: Real>(times: &[T], values: &[T], slack: T) -> Vec<T> {
    values
        .windows(2)
        .zip(&times[1..])
        .filter(|(w, _)| w[1] > w[0] + slack)
        .map(|(_, &t)| t)
        .collect()
}

/// `10·dt·max_k |Δv_k / Δt_k|`: allowance for the integrator's sliding band.
pub fn dt_scaled_slack<T: Real>(times: &[T], values: &[T], dt: T) -> T {
    let max_rate = values
        .windows(2)
        .zip(times.windows(2))
        .map(|(v, t)| ((v[1] - v[0]) / (t[1] - t[0])).abs())
        .fold(T::zero(), |a, b| a.max(b));
    T::lit(10.0) * dt * max_rate
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ChatteringReport<T: Real + Serialize> {
    /// `Σ_k |u_{k+1} − u_k|` per input channel.
    pub total_variation: Vec<T>,
    pub max_step_jump: T,
}

/// Total variation of each channel; `channels[c]` is the sampled series of
/// channel `c`.
pub fn total_variation<T: Real + Serialize>(channels: &[Vec<T>]) -> ChatteringReport<T> {
    let mut max_jump = T::zero();
    let tv = channels
        .iter()
        .map(|series| {
            series.windows(2).fold(T::zero(), |acc, w| {
                let jump = (w[1] - w[0]).abs();
                max_jump = max_jump.max(jump);
                acc + jump
            })
        })
        .collect();
    ChatteringReport {
        total_variation: tv,
        max_step_jump: max_jump,
    }
}

/// Per-node chattering reports from a trajectory's sampled inputs.
pub fn chattering<T: Real + Serialize>(traj: &Trajectory<T>) -> Vec<ChatteringReport<T>> {
    (0..traj.n_nodes)
        .map(|i| {
            let chans: Vec<Vec<T>> = (0..traj.input_dim)
                .map(|c| traj.input_series(i, c))
                .collect();
            total_variation(&chans)
        })
        .collect()
}

/// True iff the trailing `tail_fraction` of the (non-decreasing) series
/// varies by at most `tol`.
pub fn gains_converged<T: Real>(
    series: &[T],
    tail_fraction: T,
    tol: T,
) -> Result<bool, AnalysisError> {
    if !(tail_fraction > T::zero() && tail_fraction < T::one()) {
        return Err(AnalysisError::Argument(
            "tail_fraction must lie in (0, 1)".into(),
        ));
    }
    if series.is_empty() {
        return Err(AnalysisError::Argument("empty series".into()));
    }
    for (k, w) in series.windows(2).enumerate() {
        let slack = T::lit(1e-12) * w[0].abs().max(T::one());
        if w[1] < w[0] - slack {
            return Err(AnalysisError::Decreasing {
                index: k + 1,
                prev: w[0].to_f64_lossy(),
                next: w[1].to_f64_lossy(),
            });
        }
    }
    let len = series.len();
    let tail = ((tail_fraction.to_f64_lossy() * len as f64).ceil() as usize).clamp(1, len);
    let tail = &series[len - tail..];
    let hi = tail.iter().copied().fold(tail[0], |a, b| a.max(b));
    let lo = tail.iter().copied().fold(tail[0], |a, b| a.min(b));
    Ok(hi - lo <= tol)
}

/// `λ_min(Q) / λ_max(P)`: the decay rate the Lyapunov argument guarantees.
pub fn predicted_eta<T: Real>(q: &DMatrix<T>, p: &DMatrix<T>) -> Result<T, AnalysisError> {
    if !is_spd(q, T::lit(1e-9)) || !is_spd(p, T::lit(1e-9)) {
        return Err(AnalysisError::NotSpd);
    }
    Ok(lambda_min(q) / lambda_max(p))
}

/// Comparison bound
/// `e^{−ηt}·V(0) + tail·ε·∫₀ᵗ e^{−η(t−τ)−cτ} dτ`.
pub fn comparison_envelope<T: Real>(t: T, v0: T, eta: T, tail: T, epsilon: T, c: T) -> T {
    let decay = (-eta * t).exp();
    let gap = eta - c;
    let integral = if gap.abs() < T::lit(1e-12) {
        t * (-c * t).exp()
    } else {
        ((-c * t).exp() - decay) / gap
    };
    decay * v0 + tail * epsilon * integral
}

/// Times where `values` exceed `envelope(t)` by more than `slack`.
pub fn envelope_violations<T: Real>(
    times: &[T],
    values: &[T],
    envelope: impl Fn(T) -> T,
    slack: T,
) -> Vec<T> {
    times
        .iter()
        .zip(values)
        .filter(|(&t, &v)| v > envelope(t) + slack)
        .map(|(&t, _)| t)
        .collect()
}

/// Decay fits skip this leading fraction of the horizon.
pub const TRANSIENT_FRACTION: f64 = 0.1;
/// Fits stop once the Lyapunov value reaches this floor.
pub const DECAY_FLOOR: f64 = 1e-8;

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Violation {
    pub series: &'static str,
    pub t: f64,
}

/// Summary written next to every run.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct AnalysisReport {
    pub variant: &'static str,
    pub eta1_pred: f64,
    pub eta2_pred: f64,
    /// Fitted decay rate of `V₁`.
    pub eta_fit: Option<f64>,
    pub eta2_fit: Option<f64>,
    pub violations: Vec<Violation>,
    pub tv_per_node: Vec<Vec<f64>>,
    pub gains_converged: Vec<bool>,
    pub final_tracking_error: f64,
    pub final_consensus_error: f64,
    pub max_reference_norm: f64,
    pub aborted: bool,
}

impl AnalysisReport {
    pub fn from_trajectory<T: Real + Serialize>(
        traj: &Trajectory<T>,
        gains: &RobustGains<T>,
        q1: &DMatrix<T>,
        q2: &DMatrix<T>,
    ) -> Result<Self, AnalysisError> {
        let times = traj.times();
        let v1 = traj.v1();
        let v2 = traj.v2();
        let fit = |vals: &[T]| {
            let w = decay_window(
                &times,
                vals,
                T::lit(TRANSIENT_FRACTION),
                T::lit(DECAY_FLOOR),
            );
            fit_decay_rate(&times, vals, w)
                .ok()
                .map(|f| f.eta_hat.to_f64_lossy())
        };
        let mut violations = Vec::new();
        if traj.samples.len() >= 2 {
            for (name, vals) in [("V1", &v1), ("V2", &v2)] {
                let slack = dt_scaled_slack(&times, vals, traj.dt);
                violations.extend(
                    monotonicity_violations(&times, vals, slack)
                        .into_iter()
                        .map(|t| Violation {
                            series: name,
                            t: t.to_f64_lossy(),
                        }),
                );
            }
        }
        let gains_converged = if traj.variant == "adaptive" {
            (0..traj.n_nodes)
                .map(|i| {
                    let tol = T::lit(1e-3);
                    let tail = T::lit(0.1);
                    gains_converged(&traj.mu_series(i), tail, tol).unwrap_or(false)
                        && gains_converged(&traj.alpha_series(i), tail, tol).unwrap_or(false)
                })
                .collect()
        } else {
            Vec::new()
        };
        Ok(Self {
            variant: traj.variant,
            eta1_pred: predicted_eta(q1, &gains.p1)?.to_f64_lossy(),
            eta2_pred: predicted_eta(q2, &gains.p2)?.to_f64_lossy(),
            eta_fit: fit(&v1),
            eta2_fit: fit(&v2),
            violations,
            tv_per_node: chattering(traj)
                .into_iter()
                .map(|r| {
                    r.total_variation
                        .into_iter()
                        .map(|v| v.to_f64_lossy())
                        .collect()
                })
                .collect(),
            gains_converged,
            final_tracking_error: traj.final_tracking_error().to_f64_lossy(),
            final_consensus_error: traj.last().consensus_err.to_f64_lossy(),
            max_reference_norm: traj.max_reference_norm().to_f64_lossy(),
            aborted: traj.aborted.is_some(),
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn grid(a: f64, b: f64, m: usize) -> Vec<f64> {
        (0..m)
            .map(|k| a + (b - a) * k as f64 / (m - 1) as f64)
            .collect()
    }

    #[test]
    fn decay_fit_examples() {
        let t = grid(0.0, 1.0, 101);
        let v: Vec<f64> = t.iter().map(|t| (-2.0 * t).exp()).collect();
        let fit = fit_decay_rate(&t, &v, (0.0, 1.0)).unwrap();
        assert!((fit.eta_hat - 2.0).abs() < 1e-9);
        assert!((fit.r_squared - 1.0).abs() < 1e-9);

        let ones = vec![1.0; 101];
        let fit = fit_decay_rate(&t, &ones, (0.0, 1.0)).unwrap();
        assert_eq!(fit.eta_hat, 0.0);
        assert_eq!(fit.r_squared, 0.0);

        let v: Vec<f64> = t.iter().map(|t| 3.0 * (-0.5 * t).exp()).collect();
        let fit = fit_decay_rate(&t, &v, (0.0, 1.0)).unwrap();
        assert!((fit.eta_hat - 0.5).abs() < 1e-9);
        assert!((fit.intercept - 3f64.ln()).abs() < 1e-9);

        let zeros = vec![0.0; 101];
        assert!(matches!(
            fit_decay_rate(&t, &zeros, (0.0, 1.0)),
            Err(AnalysisError::TooFewSamples { .. })
        ));
    }

    #[test]
    fn decay_window_stops_at_floor() {
        let t = grid(0.0, 10.0, 11);
        let v = vec![1.0, 1.0, 0.5, 0.1, 1e-9, 1.0, 1.0, 1.0, 1.0, 1.0, 1.0];
        assert_eq!(decay_window(&t, &v, 0.1, 1e-8), (1.0, 3.0));
    }

    #[test]
    fn monotonicity_examples() {
        let t = grid(0.0, 3.0, 4);
        assert!(monotonicity_violations(&t, &[4.0, 3.0, 2.0, 1.0], 0.0).is_empty());
        assert_eq!(
            monotonicity_violations(&[0.0, 1.0], &[1.0, 1.5], 0.0),
            vec![1.0]
        );
        assert!(monotonicity_violations(&[0.0, 1.0], &[1.0, 1.0005], 1e-3).is_empty());
    }

    #[test]
    fn total_variation_examples() {
        let rep = total_variation(&[vec![2.0; 10]]);
        assert_eq!(rep.total_variation, vec![0.0]);
        let alt: Vec<f64> = (0..100)
            .map(|k| if k % 2 == 0 { 1.0 } else { -1.0 })
            .collect();
        let rep = total_variation(&[alt]);
        assert_eq!(rep.total_variation, vec![198.0]);
        assert_eq!(rep.max_step_jump, 2.0);
    }

    #[test]
    fn sine_half_period_variation() {
        // Oracle: ∫₀^π |cos t| dt = 2.
        let t = grid(0.0, std::f64::consts::PI, 100_001);
        let rep = total_variation(&[t.iter().map(|t| t.sin()).collect()]);
        assert!((rep.total_variation[0] - 2.0).abs() < 1e-8);
    }

    #[test]
    fn gain_convergence_examples() {
        assert!(gains_converged(&[1.0; 50], 0.1, 1e-3).unwrap());
        let rising: Vec<f64> = (0..100).map(|k| k as f64 * 0.01).collect();
        assert!(!gains_converged(&rising, 0.1, 1e-3).unwrap());
        let t = grid(0.0, 20.0, 2001);
        let sat: Vec<f64> = t.iter().map(|t| 1.0 - (-t).exp()).collect();
        assert!(gains_converged(&sat, 0.1, 1e-3).unwrap());
        assert!(matches!(
            gains_converged(&[1.0, 0.5], 0.1, 1e-3),
            Err(AnalysisError::Decreasing { .. })
        ));
    }

    #[test]
    fn predicted_rate_examples() {
        let i2 = DMatrix::<f64>::identity(2, 2);
        assert_eq!(predicted_eta(&i2, &i2).unwrap(), 1.0);
        let q = DMatrix::from_diagonal(&nalgebra::DVector::from_row_slice(&[2.0, 3.0]));
        let p = DMatrix::from_diagonal(&nalgebra::DVector::from_row_slice(&[1.0, 4.0]));
        assert_eq!(predicted_eta(&q, &p).unwrap(), 0.5);
        let one = DMatrix::from_element(1, 1, 1.0);
        assert_eq!(predicted_eta(&one, &one).unwrap(), 1.0);
        let neg = DMatrix::from_element(1, 1, -1.0);
        assert_eq!(predicted_eta(&neg, &one), Err(AnalysisError::NotSpd));
    }

    #[test]
    fn comparison_envelope_matches_quadrature() {
        // Midpoint quadrature of the tail integral as an independent oracle.
        let (eta, c, eps, t) = (0.7, 1.0, 0.5, 3.0);
        let m = 200_000;
        let h = t / m as f64;
        let integral: f64 = (0..m)
            .map(|k| {
                let tau = (k as f64 + 0.5) * h;
                (-eta * (t - tau) - c * tau).exp() * h
            })
            .sum();
        let env = comparison_envelope(t, 2.0, eta, 3.0, eps, c);
        let expected = (-eta * t).exp() * 2.0 + 3.0 * eps * integral;
        assert!((env - expected).abs() < 1e-9);
        // Degenerate η = c branch.
        let env = comparison_envelope(t, 0.0, c, 1.0, 1.0, c);
        assert!((env - t * (-c * t).exp()).abs() < 1e-12);
    }
}
