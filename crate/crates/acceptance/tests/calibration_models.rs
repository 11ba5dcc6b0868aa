//! Model fitting recovers reference curves, and the retention solver agrees
//! with the closed-form inversion of the error model.

use acceptance::check;
use atys_core::calibration::{fit_linear, fit_log, solve_min_p, LogModel};

const LINEAR_SLOPE: f64 = -1.0614;
const LINEAR_INTERCEPT: f64 = 114.44;
const LOG_A: f64 = 984.368;
const LOG_B: f64 = -0.001;
const LOG_C: f64 = 1.099;

fn reference_time(p: f64) -> f64 {
    LINEAR_SLOPE * p + LINEAR_INTERCEPT
}

fn reference_error(p: f64) -> f64 {
    LOG_A * (LOG_B * p + LOG_C).ln()
}

fn rmse(fitted: impl Fn(f64) -> f64, truth: impl Fn(f64) -> f64) -> f64 {
    let mut sum = 0.0;
    let mut count = 0usize;
    let mut p = 0.0;
    while p <= 99.0 {
        sum += (fitted(p) - truth(p)).powi(2);
        count += 1;
        p += 0.5;
    }
    (sum / count as f64).sqrt()
}

#[test]
fn model_fitting_recovers_the_reference_curves() {
    check("calibration model fitting", 10.0, || {
        let points: Vec<f64> = (0..34).map(|i| (i * 3) as f64).collect();
        let time_points: Vec<(f64, f64)> = points.iter().map(|&p| (p, reference_time(p))).collect();
        let error_points: Vec<(f64, f64)> =
            points.iter().map(|&p| (p, reference_error(p))).collect();

        let linear = fit_linear(&time_points).map_err(|e| e.to_string())?;
        let log = fit_log(&error_points).map_err(|e| e.to_string())?;

        let linear_rmse = rmse(|p| linear.predict(p), reference_time);
        let log_rmse = rmse(|p| log.predict(p), reference_error);
        if linear_rmse > 1e-3 {
            return Err(format!("linear refit RMSE {linear_rmse:.2e} above 1e-3"));
        }
        if log_rmse > 1e-3 {
            return Err(format!("log refit RMSE {log_rmse:.2e} above 1e-3"));
        }

        Ok(format!(
            "linear refit RMSE {linear_rmse:.1e}, log refit RMSE {log_rmse:.1e} over [0, 99]"
        ))
    });
}

#[test]
fn retention_solver_matches_the_closed_form() {
    check("retention solver", 10.0, || {
        let model = LogModel { a: LOG_A, b: LOG_B, c: LOG_C, fit_mape: 0.0 };

        // Inverting a * ln(b p + c) = epsilon by hand gives
        // p = (e^(epsilon / a) - c) / b.
        let epsilon = 15.0;
        let closed_form = ((epsilon / LOG_A).exp() - LOG_C) / LOG_B;
        let solved = solve_min_p(&model, epsilon).map_err(|e| e.to_string())?;
        if (solved - closed_form).abs() > 1e-3 {
            return Err(format!(
                "solver gave {solved:.6}, closed form {closed_form:.6}, drift above 1e-3"
            ));
        }

        // As the budget tightens toward zero the answer approaches the root
        // of the error model, which sits at p = 99 for these constants.
        let tight = solve_min_p(&model, 1e-9).map_err(|e| e.to_string())?;
        if (tight - 99.0).abs() > 0.01 {
            return Err(format!("vanishing budget gave {tight:.4}, expected 99.0 within 0.01"));
        }

        Ok(format!(
            "epsilon 15 -> {solved:.4} (closed form {closed_form:.4}); \
             vanishing budget -> {tight:.4}"
        ))
    });
}
