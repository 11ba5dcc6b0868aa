//! Calibration of pruning sweeps: fit aggregation time and accuracy-error
//! curves against the retention percentile `p`, then solve for the most
//! aggressive retention that stays within an error budget.
//!
//! Aggregation time behaves linearly in `p` while the error metric follows a
//! saturating `a * ln(b*p + c)` law, so the module offers one fitter for
//! each plus [`solve_min_p`], which inverts the error model.

use serde::Serialize;
use thiserror::Error;

#[derive(Debug, Error)]
pub enum CalibrationError {
    /// Too few points, non-finite values, negative targets or no spread in p.
    #[error("degenerate calibration input: {0}")]
    DegenerateInput(String),
    /// No admissible `(b, c)` keeps the logarithm argument positive.
    #[error("no parameters keep the log argument positive over the data")]
    DomainViolation,
    /// The error budget cannot be met even without pruning.
    #[error("error budget unreachable: model predicts {mape_at_full} at p = 100")]
    Infeasible { mape_at_full: f64 },
    /// The fitted error model must not increase with retention.
    #[error("error model is not monotone non-increasing over (0, 100]")]
    NonMonotoneModel,
    /// A sweep CSV row that cannot be decoded. `row` is 1-based.
    #[error("sweep row {row}: {reason}")]
    MalformedRow { row: usize, reason: String },
}

/// One row of a pruning sweep: retention percentile, wall-clock aggregation
/// time and the accuracy error measured at that retention.
#[derive(Debug, Clone, PartialEq)]
pub struct CalibrationSample {
    pub p: f64,
    pub time_seconds: f64,
    pub mape_percent: f64,
}

/// Parses sweep CSV with columns `p,time_seconds,mape_percent`. A leading
/// header row is allowed and skipped.
pub fn parse_sweep_csv(text: &str) -> Result<Vec<CalibrationSample>, CalibrationError> {
    let mut samples = Vec::new();
    for (idx, line) in text.lines().enumerate() {
        let row = idx + 1;
        let line = line.trim();
        if line.is_empty() {
            continue;
        }
        let fields: Vec<&str> = line.split(',').map(str::trim).collect();
        if idx == 0 && fields.first().is_some_and(|f| f.parse::<f64>().is_err()) {
            continue; // header
        }
        if fields.len() != 3 {
            return Err(CalibrationError::MalformedRow {
                row,
                reason: format!("expected 3 fields, got {}", fields.len()),
            });
        }
        let parse = |field: &str, name: &str| -> Result<f64, CalibrationError> {
            field.parse().map_err(|_| CalibrationError::MalformedRow {
                row,
                reason: format!("{name} {field:?} is not a number"),
            })
        };
        samples.push(CalibrationSample {
            p: parse(fields[0], "p")?,
            time_seconds: parse(fields[1], "time_seconds")?,
            mape_percent: parse(fields[2], "mape_percent")?,
        });
    }
    Ok(samples)
}

/// `y = slope * p + intercept`.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct LinearModel {
    pub slope: f64,
    pub intercept: f64,
    /// Mean absolute percentage error of the fit on its input points.
    pub fit_mape: f64,
}

impl LinearModel {
    pub fn predict(&self, p: f64) -> f64 {
        self.slope * p + self.intercept
    }
}

/// `y = a * ln(b * p + c)`.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct LogModel {
    pub a: f64,
    pub b: f64,
    pub c: f64,
    pub fit_mape: f64,
}

impl LogModel {
    pub fn predict(&self, p: f64) -> f64 {
        self.a * (self.b * p + self.c).ln()
    }
}

fn validate_points(points: &[(f64, f64)]) -> Result<(), CalibrationError> {
    if points.len() < 3 {
        return Err(CalibrationError::DegenerateInput(format!(
            "need at least 3 points, got {}",
            points.len()
        )));
    }
    for &(p, y) in points {
        if !(p.is_finite() && y.is_finite()) {
            return Err(CalibrationError::DegenerateInput("non-finite point".to_string()));
        }
        if y < 0.0 {
            return Err(CalibrationError::DegenerateInput(format!("negative target {y}")));
        }
    }
    let first = points[0].0;
    if points.iter().all(|&(p, _)| p == first) {
        return Err(CalibrationError::DegenerateInput(
            "all points share the same p".to_string(),
        ));
    }
    Ok(())
}

fn mape_of_fit(points: &[(f64, f64)], predict: impl Fn(f64) -> f64) -> f64 {
    let mut sum = 0.0;
    let mut n = 0usize;
    for &(p, y) in points {
        if y != 0.0 {
            sum += (y - predict(p)).abs() / y.abs();
            n += 1;
        }
    }
    if n == 0 {
        0.0
    } else {
        100.0 * sum / n as f64
    }
}

/// Ordinary least squares in closed form.
pub fn fit_linear(points: &[(f64, f64)]) -> Result<LinearModel, CalibrationError> {
    validate_points(points)?;
    let n = points.len() as f64;
    let mean_p = points.iter().map(|&(p, _)| p).sum::<f64>() / n;
    let mean_y = points.iter().map(|&(_, y)| y).sum::<f64>() / n;
    let mut sxx = 0.0;
    let mut sxy = 0.0;
    for &(p, y) in points {
        sxx += (p - mean_p) * (p - mean_p);
        sxy += (p - mean_p) * (y - mean_y);
    }
    let slope = sxy / sxx;
    let intercept = mean_y - slope * mean_p;
    let fit_mape = mape_of_fit(points, |p| slope * p + intercept);
    Ok(LinearModel { slope, intercept, fit_mape })
}

/// Least-squares `a` for fixed `(b, c)`, with the resulting SSE. Returns
/// `None` when the log argument leaves the domain for some point.
fn solve_a(points: &[(f64, f64)], b: f64, c: f64) -> Option<(f64, f64)> {
    let mut sxy = 0.0;
    let mut sxx = 0.0;
    for &(p, _) in points {
        if b * p + c <= 0.0 {
            return None;
        }
    }
    for &(p, y) in points {
        let x = (b * p + c).ln();
        sxy += x * y;
        sxx += x * x;
    }
    let a = if sxx > 0.0 { sxy / sxx } else { 0.0 };
    let sse: f64 = points
        .iter()
        .map(|&(p, y)| {
            let e = y - a * (b * p + c).ln();
            e * e
        })
        .sum();
    Some((a, sse))
}

/// Smallest admissible `c` for a given `b` (the log argument must stay
/// positive at every data point).
fn c_floor(points: &[(f64, f64)], b: f64) -> f64 {
    points.iter().map(|&(p, _)| -b * p).fold(f64::MIN, f64::max).max(0.0)
}

/// Fits `y = a * ln(b * p + c)` by grid search over `(b, c)` with `a` in
/// closed form, then local step-halving refinement of the best cells until
/// parameter deltas drop below 1e-6.
pub fn fit_log(points: &[(f64, f64)]) -> Result<LogModel, CalibrationError> {
    validate_points(points)?;

    const B_RANGE: f64 = 0.01;
    const B_STEPS: usize = 80; // step 0.00025 over [-0.01, 0.01]

    // Coarse sweep: b over its range, c as a logarithmic offset above the
    // smallest admissible value for that b.
    let mut candidates: Vec<(f64, f64, f64, f64)> = Vec::new(); // (sse, a, b, c)
    for i in 0..=B_STEPS {
        let b = -B_RANGE + 2.0 * B_RANGE * i as f64 / B_STEPS as f64;
        let floor = c_floor(points, b);
        let mut t = -6.0;
        while t <= 3.0 + 1e-9 {
            let c = floor + 10f64.powf(t);
            if let Some((a, sse)) = solve_a(points, b, c) {
                candidates.push((sse, a, b, c));
            }
            t += 0.2;
        }
    }
    if candidates.is_empty() {
        return Err(CalibrationError::DomainViolation);
    }
    candidates.sort_by(|x, y| x.0.total_cmp(&y.0));

    // Refine the best cells with a shrinking-step compass search. The two
    // slope branches (b > 0 and b < 0) can shadow each other on nearly
    // linear data, so the best cell of each branch is always refined too.
    let mut seeds: Vec<(f64, f64)> =
        candidates.iter().take(8).map(|&(_, _, b, c)| (b, c)).collect();
    for branch in [true, false] {
        if let Some(&(_, _, b, c)) =
            candidates.iter().find(|&&(_, _, b, _)| (b > 0.0) == branch && b != 0.0)
        {
            seeds.push((b, c));
        }
    }
    let mut best = candidates[0];
    for (b0, c0) in seeds {
        let refined = refine(points, b0, c0, B_RANGE);
        if refined.0 < best.0 {
            best = refined;
        }
    }

    let (_, a, b, c) = best;
    let fit_mape = mape_of_fit(points, |p| a * (b * p + c).ln());
    Ok(LogModel { a, b, c, fit_mape })
}

fn refine(points: &[(f64, f64)], b0: f64, c0: f64, b_range: f64) -> (f64, f64, f64, f64) {
    let eval = |b: f64, c: f64| -> Option<(f64, f64)> {
        if b.abs() > b_range || c <= c_floor(points, b) {
            return None;
        }
        solve_a(points, b, c)
    };

    let (mut b, mut c) = (b0, c0);
    let (mut a, mut sse) = eval(b, c).expect("starting cell is admissible");
    let mut db = 2.0 * b_range / 80.0;
    let mut dc = (c0 - c_floor(points, b0)).max(1e-3) * 0.5;

    while db > 1e-6 || dc > 1e-6 {
        let mut improved = false;
        for (nb, nc) in [
            (b + db, c),
            (b - db, c),
            (b, c + dc),
            (b, c - dc),
            (b + db, c + dc),
            (b + db, c - dc),
            (b - db, c + dc),
            (b - db, c - dc),
        ] {
            if let Some((na, nsse)) = eval(nb, nc) {
                if nsse < sse {
                    (b, c, a, sse) = (nb, nc, na, nsse);
                    improved = true;
                }
            }
        }
        if !improved {
            db *= 0.5;
            dc *= 0.5;
        }
    }
    (sse, a, b, c)
}

/// Returns the smallest retention percentile in `(0, 100]` whose predicted
/// error stays within `epsilon`, by bisection to 1e-6.
///
/// The model is first checked to be monotone non-increasing on a 1000-point
/// grid over `(0, 100]`; feasibility is checked at p = 100.
pub fn solve_min_p(model: &LogModel, epsilon: f64) -> Result<f64, CalibrationError> {
    let mut previous = f64::INFINITY;
    for i in 1..=1000 {
        let p = i as f64 * 0.1;
        let value = model.predict(p);
        if !value.is_finite() || value > previous + 1e-9 {
            return Err(CalibrationError::NonMonotoneModel);
        }
        previous = value;
    }

    let at_full = model.predict(100.0);
    if at_full > epsilon {
        return Err(CalibrationError::Infeasible { mape_at_full: at_full });
    }

    let mut lo = 0.0f64;
    let mut hi = 100.0f64;
    while hi - lo > 1e-6 {
        let mid = 0.5 * (lo + hi);
        if model.predict(mid) <= epsilon {
            hi = mid;
        } else {
            lo = mid;
        }
    }
    Ok(hi)
}
