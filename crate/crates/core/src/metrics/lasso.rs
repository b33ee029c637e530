//! L1-penalized least squares by cyclic coordinate descent.

const MAX_SWEEPS: usize = 2000;
const TOL: f64 = 1e-9;

/// Minimizes `(1/2n)‖y − Xw − c‖² + alpha‖w‖₁` for row-major `x` (`n × d`).
/// Returns `(w, c)`.
pub(crate) fn fit(x: &[f64], y: &[f64], d: usize, alpha: f64) -> (Vec<f64>, f64) {
    let n = y.len();
    let nf = n as f64;
    let mean_y = y.iter().sum::<f64>() / nf;
    let mean_x: Vec<f64> = (0..d).map(|j| (0..n).map(|i| x[i * d + j]).sum::<f64>() / nf).collect();
    // centred columns, stored column-major for the inner loop
    let cols: Vec<Vec<f64>> = (0..d).map(|j| (0..n).map(|i| x[i * d + j] - mean_x[j]).collect()).collect();
    let norms: Vec<f64> = cols.iter().map(|c| c.iter().map(|v| v * v).sum::<f64>() / nf).collect();
    let mut resid: Vec<f64> = y.iter().map(|v| v - mean_y).collect();
    let mut w = vec![0.0; d];
    for _ in 0..MAX_SWEEPS {
        let mut max_step: f64 = 0.0;
        for j in 0..d {
            if norms[j] <= 0.0 {
                continue;
            }
            let col = &cols[j];
            let rho = col.iter().zip(&resid).map(|(a, r)| a * r).sum::<f64>() / nf + norms[j] * w[j];
            let new = soft_threshold(rho, alpha) / norms[j];
            let delta = new - w[j];
            if delta != 0.0 {
                for (r, a) in resid.iter_mut().zip(col) {
                    *r -= delta * a;
                }
                w[j] = new;
                max_step = max_step.max(delta.abs());
            }
        }
        if max_step < TOL {
            break;
        }
    }
    let c = mean_y - w.iter().zip(&mean_x).map(|(a, b)| a * b).sum::<f64>();
    (w, c)
}

fn soft_threshold(v: f64, t: f64) -> f64 {
    if v > t {
        v - t
    } else if v < -t {
        v + t
    } else {
        0.0
    }
}

pub(crate) fn predict(x: &[f64], d: usize, w: &[f64], c: f64) -> Vec<f64> {
    x.chunks(d).map(|row| c + row.iter().zip(w).map(|(a, b)| a * b).sum::<f64>()).collect()
}
