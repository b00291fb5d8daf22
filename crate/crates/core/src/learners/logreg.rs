//! L1/L2-penalised logistic regression fitted by accelerated proximal
//! gradient descent on z-scored features.

use serde::{Deserialize, Serialize};

use super::{check_predict, check_training_data, Matrix};
use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Penalty {
    L1,
    L2,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LogRegParams {
    /// Inverse regularisation strength; the objective is
    /// `mean log-loss + penalty(w) / (C n)`.
    pub c: f64,
    pub penalty: Penalty,
    /// Stop once the norm of the proximal gradient step falls below this.
    pub tolerance: f64,
    pub max_iter: usize,
}

impl Default for LogRegParams {
    fn default() -> Self {
        Self {
            c: 1.0,
            penalty: Penalty::L2,
            tolerance: 1e-5,
            max_iter: 1000,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LogRegModel {
    pub params: LogRegParams,
    pub means: Vec<f64>,
    pub scales: Vec<f64>,
    /// Coefficients on the standardised features.
    pub coef: Vec<f64>,
    pub intercept: f64,
    pub n_iter: usize,
    pub converged: bool,
}

fn sigmoid(z: f64) -> f64 {
    if z >= 0.0 {
        1.0 / (1.0 + (-z).exp())
    } else {
        let e = z.exp();
        e / (1.0 + e)
    }
}

/// `log(1 + exp(z))` without overflow.
fn softplus(z: f64) -> f64 {
    if z > 0.0 {
        z + (-z).exp().ln_1p()
    } else {
        z.exp().ln_1p()
    }
}

struct Problem {
    /// Standardised features, row-major.
    z: Vec<f64>,
    y: Vec<f64>,
    n: usize,
    d: usize,
}

impl Problem {
    fn margins(&self, w: &[f64], b: f64, out: &mut [f64]) {
        for (i, m) in out.iter_mut().enumerate() {
            let row = &self.z[i * self.d..(i + 1) * self.d];
            *m = b + row.iter().zip(w).map(|(x, w)| x * w).sum::<f64>();
        }
    }

    fn loss(&self, margins: &[f64]) -> f64 {
        margins.iter().zip(&self.y).map(|(&m, &y)| softplus(m) - y * m).sum::<f64>() / self.n as f64
    }

    /// Gradient of the mean log-loss; returns the intercept component.
    fn gradient(&self, margins: &[f64], gw: &mut [f64]) -> f64 {
        gw.iter_mut().for_each(|g| *g = 0.0);
        let mut gb = 0.0;
        for i in 0..self.n {
            let r = sigmoid(margins[i]) - self.y[i];
            gb += r;
            let row = &self.z[i * self.d..(i + 1) * self.d];
            for (g, x) in gw.iter_mut().zip(row) {
                *g += r * x;
            }
        }
        let n = self.n as f64;
        gw.iter_mut().for_each(|g| *g /= n);
        gb / n
    }
}

fn prox(penalty: Penalty, v: f64, t: f64) -> f64 {
    match penalty {
        Penalty::L2 => v / (1.0 + t),
        Penalty::L1 => v.signum() * (v.abs() - t).max(0.0),
    }
}

fn penalty_value(penalty: Penalty, w: &[f64]) -> f64 {
    match penalty {
        Penalty::L2 => 0.5 * w.iter().map(|v| v * v).sum::<f64>(),
        Penalty::L1 => w.iter().map(|v| v.abs()).sum(),
    }
}

pub fn train_logreg(x: &Matrix, y: &[u8], params: &LogRegParams) -> Result<LogRegModel> {
    check_training_data(x, y)?;
    if !(params.c > 0.0 && params.tolerance > 0.0) {
        return Err(Error::Config("logistic regression needs C > 0 and tolerance > 0".into()));
    }
    let (n, d) = (x.n_rows(), x.n_cols());
    let mut means = vec![0.0; d];
    let mut scales = vec![0.0; d];
    for j in 0..d {
        let col = x.column(j);
        let mean = col.iter().sum::<f64>() / n as f64;
        let var = col.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / n as f64;
        means[j] = mean;
        scales[j] = if var > 0.0 { var.sqrt() } else { 1.0 };
    }
    let mut z = Vec::with_capacity(n * d);
    for i in 0..n {
        z.extend(x.row(i).iter().enumerate().map(|(j, v)| (v - means[j]) / scales[j]));
    }
    let prob = Problem { z, y: y.iter().map(|&v| v as f64).collect(), n, d };

    let lambda = 1.0 / (params.c * n as f64);
    // Each standardised column has unit variance, so the log-loss Hessian is
    // bounded by (d + 1) / 4 including the intercept.
    let step = 1.0 / (0.25 * (d as f64 + 1.0));
    let mut w = vec![0.0; d];
    let mut b = 0.0;
    let mut yw = w.clone();
    let mut yb = b;
    let mut momentum: f64 = 1.0;
    let mut margins = vec![0.0; n];
    let mut gw = vec![0.0; d];
    let mut converged = false;
    let mut n_iter = 0;
    for it in 1..=params.max_iter {
        n_iter = it;
        prob.margins(&yw, yb, &mut margins);
        let gb = prob.gradient(&margins, &mut gw);
        let next_w: Vec<f64> = (0..d).map(|j| prox(params.penalty, yw[j] - step * gw[j], step * lambda)).collect();
        let next_b = yb - step * gb;
        let mut step_norm = (next_b - yb).powi(2);
        for j in 0..d {
            step_norm += (next_w[j] - yw[j]).powi(2);
        }
        let grad_map = step_norm.sqrt() / step;
        if !grad_map.is_finite() {
            prob.margins(&next_w, next_b, &mut margins);
            return Err(Error::Numerical(format!(
                "logistic regression diverged at iteration {it} (loss {}, C {}, {:?})",
                prob.loss(&margins),
                params.c,
                params.penalty
            )));
        }
        // Restart the momentum whenever it points uphill.
        let uphill: f64 =
            (yb - next_b) * (next_b - b) + (0..d).map(|j| (yw[j] - next_w[j]) * (next_w[j] - w[j])).sum::<f64>();
        let next_m = if uphill > 0.0 { 1.0 } else { (1.0 + (1.0 + 4.0 * momentum * momentum).sqrt()) / 2.0 };
        let beta = if uphill > 0.0 { 0.0 } else { (momentum - 1.0) / next_m };
        for j in 0..d {
            yw[j] = next_w[j] + beta * (next_w[j] - w[j]);
        }
        yb = next_b + beta * (next_b - b);
        w = next_w;
        b = next_b;
        momentum = next_m;
        if grad_map < params.tolerance {
            converged = true;
            break;
        }
    }
    prob.margins(&w, b, &mut margins);
    let objective = prob.loss(&margins) + lambda * penalty_value(params.penalty, &w);
    if !objective.is_finite() {
        return Err(Error::Numerical(format!("non-finite logistic objective {objective}")));
    }
    Ok(LogRegModel {
        params: *params,
        means,
        scales,
        coef: w,
        intercept: b,
        n_iter,
        converged,
    })
}

impl LogRegModel {
    pub fn predict_proba(&self, x: &Matrix) -> Result<Vec<f64>> {
        check_predict(x, self.coef.len())?;
        Ok((0..x.n_rows())
            .map(|i| {
                let m = self.intercept
                    + x.row(i)
                        .iter()
                        .enumerate()
                        .map(|(j, v)| (v - self.means[j]) / self.scales[j] * self.coef[j])
                        .sum::<f64>();
                sigmoid(m)
            })
            .collect())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::learners::testdata;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn one_d(n: usize, seed: u64) -> (Matrix, Vec<u8>) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let rows: Vec<Vec<f64>> = (0..n).map(|_| vec![rng.gen_range(-2.0..2.0)]).collect();
        let y = rows.iter().map(|r| (r[0] > 0.0) as u8).collect();
        (Matrix::from_rows(&rows).unwrap(), y)
    }

    #[test]
    fn learns_a_threshold() {
        let (x, y) = one_d(400, 1);
        let m = train_logreg(&x, &y, &LogRegParams { c: 100.0, ..Default::default() }).unwrap();
        assert!(m.coef[0] > 0.0);
        assert!(testdata::accuracy(&m.predict_proba(&x).unwrap(), &y) >= 0.95);
    }

    #[test]
    fn coefficients_shrink_with_c() {
        let (x, y) = testdata::separable(300, 3);
        let mut last = f64::INFINITY;
        for c in [100.0, 1.0, 0.1, 0.01, 0.001] {
            for penalty in [Penalty::L2] {
                let p = LogRegParams { c, penalty, tolerance: 1e-8, max_iter: 20_000 };
                let m = train_logreg(&x, &y, &p).unwrap();
                let norm = m.coef.iter().map(|v| v * v).sum::<f64>().sqrt();
                assert!(norm <= last + 1e-9, "C={c}: {norm} > {last}");
                last = norm;
            }
        }
        assert!(last < 0.2);
    }

    #[test]
    fn l1_zeroes_a_noise_feature() {
        let mut rng = ChaCha8Rng::seed_from_u64(8);
        let rows: Vec<Vec<f64>> = (0..400).map(|_| vec![rng.gen_range(-1.0..1.0), rng.gen_range(-1.0..1.0)]).collect();
        let y: Vec<u8> = rows.iter().map(|r| (r[0] > 0.0) as u8).collect();
        let x = Matrix::from_rows(&rows).unwrap();
        let p = LogRegParams { c: 0.01, penalty: Penalty::L1, tolerance: 1e-8, max_iter: 20_000 };
        let m = train_logreg(&x, &y, &p).unwrap();
        assert_eq!(m.coef[1], 0.0);
        assert!(m.coef[0] > 0.0);
    }

    #[test]
    fn scores_are_probabilities() {
        let (x, y) = testdata::xor(200, 2);
        let m = train_logreg(&x, &y, &LogRegParams::default()).unwrap();
        assert!(m.predict_proba(&x).unwrap().iter().all(|p| (0.0..=1.0).contains(p)));
        assert!(train_logreg(&x, &y, &LogRegParams { c: 0.0, ..Default::default() }).is_err());
    }
}
