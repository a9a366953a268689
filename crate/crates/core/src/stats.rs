//! Sample means and standard errors.

/// Sample mean with its standard error.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Estimate {
    pub mean: f64,
    pub se: f64,
}

/// Mean and standard error of i.i.d. samples, summed in index order.
pub fn mean_se(xs: &[f64]) -> Estimate {
    let n = xs.len();
    if n == 0 {
        return Estimate {
            mean: f64::NAN,
            se: f64::NAN,
        };
    }
    let mean = xs.iter().sum::<f64>() / n as f64;
    if n == 1 {
        return Estimate { mean, se: 0.0 };
    }
    let ss: f64 = xs.iter().map(|x| (x - mean) * (x - mean)).sum();
    Estimate {
        mean,
        se: (ss / ((n - 1) as f64 * n as f64)).sqrt(),
    }
}

/// As [`mean_se`], but when `antithetic` is set consecutive samples form
/// dependent pairs and the error is computed from the pair averages.
pub fn mean_se_paired(xs: &[f64], antithetic: bool) -> Estimate {
    if !antithetic || xs.len() < 2 {
        return mean_se(xs);
    }
    let mut pairs: Vec<f64> = xs.chunks_exact(2).map(|p| 0.5 * (p[0] + p[1])).collect();
    if xs.len() % 2 == 1 {
        pairs.push(xs[xs.len() - 1]);
    }
    let est = mean_se(&pairs);
    Estimate {
        mean: xs.iter().sum::<f64>() / xs.len() as f64,
        se: est.se,
    }
}

/// Control-variate estimate of `E[y]` given samples `w` with known mean
/// zero: `mean(y) - beta mean(w)` with `beta = cov(y, w) / var(w)` fitted on
/// the same samples. With `antithetic`, pairs are averaged first.
pub fn control_variate(ys: &[f64], ws: &[f64], antithetic: bool) -> Estimate {
    assert_eq!(ys.len(), ws.len(), "samples must pair up");
    let pair = |xs: &[f64]| -> Vec<f64> {
        if !antithetic {
            return xs.to_vec();
        }
        let mut out: Vec<f64> = xs.chunks_exact(2).map(|p| 0.5 * (p[0] + p[1])).collect();
        if xs.len() % 2 == 1 {
            out.push(xs[xs.len() - 1]);
        }
        out
    };
    let (ys, ws) = (pair(ys), pair(ws));
    let n = ys.len() as f64;
    let my = ys.iter().sum::<f64>() / n;
    let mw = ws.iter().sum::<f64>() / n;
    let (mut cov, mut var) = (0.0, 0.0);
    for (y, w) in ys.iter().zip(&ws) {
        cov += (y - my) * (w - mw);
        var += (w - mw) * (w - mw);
    }
    let beta = if var > 0.0 { cov / var } else { 0.0 };
    let adjusted: Vec<f64> = ys.iter().zip(&ws).map(|(y, w)| y - beta * w).collect();
    mean_se(&adjusted)
}
