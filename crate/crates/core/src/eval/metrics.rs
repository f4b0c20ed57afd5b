use std::fmt;

use serde::{Deserialize, Serialize};

use super::EvalError;
use crate::sim::Outcome;

/// `y = slope · x + intercept`.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Line {
    pub slope: f64,
    pub intercept: f64,
}

/// Ordinary least squares through `(xs, ys)`.
pub fn fit_line(xs: &[f64], ys: &[f64]) -> Result<Line, EvalError> {
    if xs.len() != ys.len() || xs.is_empty() {
        return Err(EvalError::Fit(format!("{} xs against {} ys", xs.len(), ys.len())));
    }
    let n = xs.len() as f64;
    let mx = xs.iter().sum::<f64>() / n;
    let my = ys.iter().sum::<f64>() / n;
    let sxx: f64 = xs.iter().map(|x| (x - mx) * (x - mx)).sum();
    if sxx == 0.0 {
        return Err(EvalError::DegenerateFit);
    }
    let sxy: f64 = xs.iter().zip(ys).map(|(x, y)| (x - mx) * (y - my)).sum();
    let slope = sxy / sxx;
    Ok(Line {
        slope,
        intercept: my - slope * mx,
    })
}

pub const LATENT_RANGE: f64 = 2.0;

/// Maps a latent command in `[−2, 2]` onto the directive axis `[0, 1]`.
pub fn latent_to_x(z: f64) -> Result<f64, EvalError> {
    if !(-LATENT_RANGE..=LATENT_RANGE).contains(&z) {
        return Err(EvalError::LatentRange(z));
    }
    Ok((z + LATENT_RANGE) / (2.0 * LATENT_RANGE))
}

/// Normalized distance of `generated` from `reference` in slope and intercept.
pub fn mde(reference: &Line, generated: &Line) -> Result<f64, EvalError> {
    let (a, b) = (reference.slope, reference.intercept);
    if a == 0.0 || b == 0.0 {
        return Err(EvalError::MdeUndefined);
    }
    let ds = (a - generated.slope) / a;
    let di = (b - generated.intercept) / b;
    Ok((ds * ds + di * di).sqrt())
}

/// Success count over a set of trials, printed as `88.9% [8/9]`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TsrReport {
    pub successes: usize,
    pub total: usize,
    pub outcomes: Vec<Outcome>,
}

impl TsrReport {
    pub fn ratio(&self) -> f64 {
        self.successes as f64 / self.total as f64
    }
}

impl fmt::Display for TsrReport {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{:.1}% [{}/{}]", 100.0 * self.ratio(), self.successes, self.total)
    }
}

pub fn tsr(outcomes: &[Outcome]) -> Result<TsrReport, EvalError> {
    if outcomes.is_empty() {
        return Err(EvalError::NoTrials);
    }
    Ok(TsrReport {
        successes: outcomes.iter().filter(|o| o.success).count(),
        total: outcomes.len(),
        outcomes: outcomes.to_vec(),
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn fit_recovers_a_line() {
        let xs = [0.0, 0.5, 1.0];
        let ys: Vec<f64> = xs.iter().map(|x| 12.414 - 6.379 * x).collect();
        let l = fit_line(&xs, &ys).unwrap();
        assert!((l.slope + 6.379).abs() < 1e-12 && (l.intercept - 12.414).abs() < 1e-12);
        let flat = fit_line(&xs, &[3.0; 3]).unwrap();
        assert_eq!((flat.slope, flat.intercept), (0.0, 3.0));
        assert!(matches!(fit_line(&[1.0, 1.0], &[0.0, 2.0]), Err(EvalError::DegenerateFit)));
        assert_eq!(EvalError::DegenerateFit.to_string(), "degenerate fit");
    }

    #[test]
    fn latent_mapping() {
        let xs: Vec<f64> = [-2.0, -1.0, 0.0, 1.0, 2.0].iter().map(|&z| latent_to_x(z).unwrap()).collect();
        assert_eq!(xs, vec![0.0, 0.25, 0.5, 0.75, 1.0]);
        assert!(latent_to_x(2.5).is_err());
    }

    #[test]
    fn mde_values() {
        let r = Line { slope: 2.0, intercept: 4.0 };
        assert_eq!(mde(&r, &r).unwrap(), 0.0);
        assert!((mde(&r, &Line { slope: 1.0, intercept: 2.0 }).unwrap() - 0.5f64.sqrt()).abs() < 1e-15);
        assert!((mde(&r, &Line { slope: 0.0, intercept: 0.0 }).unwrap() - 2f64.sqrt()).abs() < 1e-15);
        let zero = Line { slope: 0.0, intercept: 1.0 };
        assert_eq!(mde(&zero, &r).unwrap_err().to_string(), "MDE undefined");
        // normalization by the reference makes the distance one-sided
        let g = Line { slope: 1.0, intercept: 2.0 };
        assert_ne!(mde(&r, &g).unwrap(), mde(&g, &r).unwrap());
    }

    #[test]
    fn tsr_formatting() {
        let mut o = vec![Outcome::pass(); 8];
        o.push(Outcome::fail("divergence"));
        let t = tsr(&o).unwrap();
        assert_eq!(t.to_string(), "88.9% [8/9]");
        assert!((t.ratio() - 0.889).abs() < 1e-3);
        assert_eq!(tsr(&vec![Outcome::fail("x"); 5]).unwrap().ratio(), 0.0);
        assert!(tsr(&[]).is_err());
    }
}
