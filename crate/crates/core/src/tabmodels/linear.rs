use serde::{Deserialize, Serialize};

use super::check_columns;
use crate::error::{Error, Result};
use crate::matrix::Matrix;

/// Diagonal ridge added to the centered normal equations.
pub const RIDGE_EPS: f64 = 1e-8;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LinearModel {
    pub coefficients: Vec<f64>,
    pub intercept: f64,
}

/// Least squares via the normal equations on centered data, solved by
/// Cholesky factorization. The intercept is not penalized.
pub fn fit_linear(x: &Matrix, y: &[f64]) -> Result<LinearModel> {
    let (n, f) = (x.rows(), x.cols());
    if n == 0 || f == 0 {
        return Err(Error::Shape("linear fit needs at least one row and one feature".into()));
    }
    if y.len() != n {
        return Err(Error::Shape(format!("{n} rows vs {} targets", y.len())));
    }
    let nf = n as f64;
    let x_mean: Vec<f64> = (0..f).map(|j| (0..n).map(|i| x.get(i, j)).sum::<f64>() / nf).collect();
    let y_mean = y.iter().sum::<f64>() / nf;

    let mut gram = vec![0.0; f * f];
    let mut rhs = vec![0.0; f];
    let mut centered = vec![0.0; f];
    for i in 0..n {
        for (j, c) in centered.iter_mut().enumerate() {
            *c = x.get(i, j) - x_mean[j];
        }
        let dy = y[i] - y_mean;
        for a in 0..f {
            rhs[a] += centered[a] * dy;
            for b in 0..=a {
                gram[a * f + b] += centered[a] * centered[b];
            }
        }
    }
    for a in 0..f {
        gram[a * f + a] += RIDGE_EPS;
        for b in 0..a {
            gram[b * f + a] = gram[a * f + b];
        }
    }
    let coefficients = cholesky_solve(&mut gram, f, &rhs)
        .ok_or_else(|| Error::Invalid("normal equations not positive definite".into()))?;
    let intercept = y_mean - coefficients.iter().zip(&x_mean).map(|(b, m)| b * m).sum::<f64>();
    Ok(LinearModel {
        coefficients,
        intercept,
    })
}

/// Solves `A z = b` for symmetric positive definite `A` (overwritten by its
/// lower Cholesky factor).
fn cholesky_solve(a: &mut [f64], n: usize, b: &[f64]) -> Option<Vec<f64>> {
    for j in 0..n {
        let mut d = a[j * n + j];
        for k in 0..j {
            d -= a[j * n + k] * a[j * n + k];
        }
        if !(d > 0.0) {
            return None;
        }
        let d = d.sqrt();
        a[j * n + j] = d;
        for i in j + 1..n {
            let mut s = a[i * n + j];
            for k in 0..j {
                s -= a[i * n + k] * a[j * n + k];
            }
            a[i * n + j] = s / d;
        }
    }
    let mut z = b.to_vec();
    for i in 0..n {
        for k in 0..i {
            z[i] -= a[i * n + k] * z[k];
        }
        z[i] /= a[i * n + i];
    }
    for i in (0..n).rev() {
        for k in i + 1..n {
            z[i] -= a[k * n + i] * z[k];
        }
        z[i] /= a[i * n + i];
    }
    Some(z)
}

impl LinearModel {
    pub fn n_features(&self) -> usize {
        self.coefficients.len()
    }

    pub fn predict(&self, x: &Matrix) -> Result<Vec<f64>> {
        check_columns(self.n_features(), x.cols())?;
        Ok((0..x.rows())
            .map(|i| {
                self.intercept
                    + self
                        .coefficients
                        .iter()
                        .zip(x.row(i))
                        .map(|(b, v)| b * v)
                        .sum::<f64>()
            })
            .collect())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn recovers_exact_line() {
        let x = Matrix::new(5, 1, vec![0.0, 1.0, 2.0, 3.0, 4.0]).unwrap();
        let y: Vec<f64> = (0..5).map(|i| 2.0 * i as f64 + 1.0).collect();
        let m = fit_linear(&x, &y).unwrap();
        assert!((m.coefficients[0] - 2.0).abs() < 1e-6);
        assert!((m.intercept - 1.0).abs() < 1e-6);
        let p = m.predict(&Matrix::new(1, 1, vec![3.0]).unwrap()).unwrap();
        assert!((p[0] - 7.0).abs() < 1e-6);
    }

    #[test]
    fn constant_target() {
        let x = Matrix::new(4, 2, vec![1.0, 5.0, 2.0, 3.0, 7.0, 1.0, 4.0, 4.0]).unwrap();
        let m = fit_linear(&x, &[3.5; 4]).unwrap();
        assert!(m.coefficients.iter().all(|c| c.abs() < 1e-9));
        assert!((m.intercept - 3.5).abs() < 1e-9);
    }

    #[test]
    fn rank_deficient_design_is_solvable() {
        // Duplicate column and a single row.
        let x = Matrix::new(3, 2, vec![1.0, 1.0, 2.0, 2.0, 3.0, 3.0]).unwrap();
        let m = fit_linear(&x, &[1.0, 2.0, 3.0]).unwrap();
        let p = m.predict(&x).unwrap();
        assert!((p[2] - 3.0).abs() < 1e-6);
        let one = fit_linear(&Matrix::new(1, 1, vec![4.0]).unwrap(), &[9.0]).unwrap();
        assert_eq!(one.intercept, 9.0);
    }

    #[test]
    fn matches_gradient_descent_oracle() {
        let mut rng = ChaCha8Rng::seed_from_u64(42);
        let data: Vec<f64> = (0..10).map(|_| rng.gen_range(-2.0..2.0)).collect();
        let y: Vec<f64> = (0..5).map(|_| rng.gen_range(-3.0..3.0)).collect();
        let x = Matrix::new(5, 2, data).unwrap();
        let m = fit_linear(&x, &y).unwrap();

        // Plain gradient descent on the unregularized squared error.
        let (mut w, mut b) = ([0.0f64; 2], 0.0f64);
        for _ in 0..200_000 {
            let mut g = [0.0; 3];
            for i in 0..5 {
                let r = w[0] * x.get(i, 0) + w[1] * x.get(i, 1) + b - y[i];
                g[0] += 2.0 * r * x.get(i, 0);
                g[1] += 2.0 * r * x.get(i, 1);
                g[2] += 2.0 * r;
            }
            w[0] -= 0.01 * g[0];
            w[1] -= 0.01 * g[1];
            b -= 0.01 * g[2];
        }
        assert!((m.coefficients[0] - w[0]).abs() < 1e-4);
        assert!((m.coefficients[1] - w[1]).abs() < 1e-4);
        assert!((m.intercept - b).abs() < 1e-4);
    }

    #[test]
    fn column_mismatch_is_a_shape_error() {
        let m = LinearModel {
            coefficients: vec![1.0, 2.0],
            intercept: 0.0,
        };
        assert!(matches!(m.predict(&Matrix::new(1, 3, vec![0.0; 3]).unwrap()), Err(Error::Shape(_))));
    }
}
