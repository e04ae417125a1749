//! Sample summaries, least-squares fits and crossover location.

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Summary {
    pub n: usize,
    pub mean: f64,
    /// Sample standard deviation (n − 1 denominator).
    pub std: f64,
    pub stderr: f64,
}

impl Summary {
    pub fn of(xs: &[f64]) -> Summary {
        let n = xs.len();
        if n == 0 {
            return Summary {
                n,
                mean: f64::NAN,
                std: f64::NAN,
                stderr: f64::NAN,
            };
        }
        let mean = xs.iter().sum::<f64>() / n as f64;
        let std = if n > 1 {
            (xs.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (n - 1) as f64).sqrt()
        } else {
            0.0
        };
        Summary {
            n,
            mean,
            std,
            stderr: std / (n as f64).sqrt(),
        }
    }
}

/// Ordinary least squares `y ≈ slope·x + intercept`.
pub fn linear_fit(xs: &[f64], ys: &[f64]) -> (f64, f64) {
    let n = xs.len() as f64;
    let mx = xs.iter().sum::<f64>() / n;
    let my = ys.iter().sum::<f64>() / n;
    let sxy: f64 = xs.iter().zip(ys).map(|(x, y)| (x - mx) * (y - my)).sum();
    let sxx: f64 = xs.iter().map(|x| (x - mx).powi(2)).sum();
    let slope = sxy / sxx;
    (slope, my - slope * mx)
}

/// Exponent `α` of `y ∝ x^{−α}` from a log-log least-squares fit.
pub fn power_law_decay(xs: &[f64], ys: &[f64]) -> f64 {
    let lx: Vec<f64> = xs.iter().map(|x| x.ln()).collect();
    let ly: Vec<f64> = ys.iter().map(|y| y.ln()).collect();
    -linear_fit(&lx, &ly).0
}

/// First `x` where `y` falls below half of `y[0]`, linearly interpolated.
/// `xs` must be increasing. `None` if the curve never drops that far.
pub fn half_value_crossover(xs: &[f64], ys: &[f64]) -> Option<f64> {
    let half = 0.5 * ys[0];
    for k in 1..xs.len() {
        if ys[k] < half {
            let (x0, x1, y0, y1) = (xs[k - 1], xs[k], ys[k - 1], ys[k]);
            return Some(x0 + (half - y0) * (x1 - x0) / (y1 - y0));
        }
    }
    None
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn summary_of_known_sample() {
        let s = Summary::of(&[1.0, 2.0, 3.0, 4.0]);
        assert_eq!(s.mean, 2.5);
        assert!((s.std - (5.0f64 / 3.0).sqrt()).abs() < 1e-15);
        assert!((s.stderr - s.std / 2.0).abs() < 1e-15);
    }

    #[test]
    fn fits_recover_exact_lines() {
        let xs = [2.0, 3.0, 4.0];
        let (m, b) = linear_fit(&xs, &[1.0, 1.5, 2.0]);
        assert!((m - 0.5).abs() < 1e-15 && b.abs() < 1e-15);
        let ys: Vec<f64> = xs.iter().map(|x: &f64| 7.0 * x.powf(-3.0)).collect();
        assert!((power_law_decay(&xs, &ys) - 3.0).abs() < 1e-12);
    }

    #[test]
    fn crossover_interpolates() {
        let x = [0.0, 1.0, 2.0];
        assert_eq!(half_value_crossover(&x, &[1.0, 0.8, 0.2]), Some(1.5));
        assert_eq!(half_value_crossover(&x, &[1.0, 0.9, 0.8]), None);
    }
}
