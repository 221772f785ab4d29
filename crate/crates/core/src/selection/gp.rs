use nalgebra::{DMatrix, DVector};

/// One-dimensional Gaussian-process regressor with a unit-variance RBF
/// kernel on standardized targets. Constant targets are only centred, so the
/// posterior still carries the prior's uncertainty away from the data.
#[derive(Debug, Clone)]
pub struct Gp1d {
    xs: Vec<f64>,
    alpha: DVector<f64>,
    chol: nalgebra::Cholesky<f64, nalgebra::Dyn>,
    length_scale: f64,
    y_mean: f64,
    y_std: f64,
}

impl Gp1d {
    /// Returns `None` when the kernel matrix is not positive definite.
    pub fn fit(xs: &[f64], ys: &[f64], length_scale: f64, noise: f64) -> Option<Self> {
        if xs.is_empty() || xs.len() != ys.len() {
            return None;
        }
        let n = xs.len() as f64;
        let y_mean = ys.iter().sum::<f64>() / n;
        let spread = (ys.iter().map(|y| (y - y_mean).powi(2)).sum::<f64>() / n).sqrt();
        if !spread.is_finite() {
            return None;
        }
        let y_std = if spread > 1e-12 { spread } else { 1.0 };
        let k = DMatrix::from_fn(xs.len(), xs.len(), |i, j| {
            rbf(xs[i], xs[j], length_scale) + if i == j { noise } else { 0.0 }
        });
        let chol = k.cholesky()?;
        let y = DVector::from_iterator(ys.len(), ys.iter().map(|y| (y - y_mean) / y_std));
        let alpha = chol.solve(&y);
        Some(Self {
            xs: xs.to_vec(),
            alpha,
            chol,
            length_scale,
            y_mean,
            y_std,
        })
    }

    /// Posterior mean and standard deviation in standardized units.
    pub fn predict_standardized(&self, x: f64) -> (f64, f64) {
        let ks = DVector::from_iterator(
            self.xs.len(),
            self.xs.iter().map(|xi| rbf(x, *xi, self.length_scale)),
        );
        let mean = ks.dot(&self.alpha);
        let v = self.chol.solve(&ks);
        let var = (1.0 - ks.dot(&v)).max(0.0);
        (mean, var.sqrt())
    }

    /// Posterior mean and standard deviation in target units.
    pub fn predict(&self, x: f64) -> (f64, f64) {
        let (m, s) = self.predict_standardized(x);
        (self.y_mean + m * self.y_std, s * self.y_std)
    }

    pub fn standardize(&self, y: f64) -> f64 {
        (y - self.y_mean) / self.y_std
    }
}

fn rbf(a: f64, b: f64, length_scale: f64) -> f64 {
    (-(a - b).powi(2) / (2.0 * length_scale * length_scale)).exp()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn constant_targets_keep_prior_uncertainty() {
        let gp = Gp1d::fit(&[0.1, 0.5], &[0.7, 0.7], 0.5, 1e-3).unwrap();
        let (m, s) = gp.predict(1.9);
        assert!((m - 0.7).abs() < 1e-12);
        assert!(s > gp.predict(0.3).1);
        assert!(Gp1d::fit(&[0.1, 0.5], &[0.7, f64::NAN], 0.5, 1e-3).is_none());
    }

    #[test]
    fn interpolates_observations() {
        let xs = [0.2, 0.9, 1.6];
        let ys = [0.5, 0.8, 0.6];
        let gp = Gp1d::fit(&xs, &ys, 0.5, 1e-6).unwrap();
        for (x, y) in xs.iter().zip(ys) {
            let (m, s) = gp.predict(*x);
            assert!((m - y).abs() < 1e-4);
            assert!(s < 1e-2);
        }
        // far from the data the posterior reverts to the prior
        let (m, s) = gp.predict_standardized(50.0);
        assert!(m.abs() < 1e-9);
        assert!((s - 1.0).abs() < 1e-9);
    }

    #[test]
    fn two_point_posterior_by_hand() {
        // standardized targets are ±1, K = [[1+n, k], [k, 1+n]]
        let (l, noise) = (0.5, 1e-3);
        let gp = Gp1d::fit(&[0.0, 1.0], &[0.0, 1.0], l, noise).unwrap();
        let k = (-1.0f64 / (2.0 * l * l)).exp();
        let a = 1.0 + noise;
        // y = (−1, 1) is an eigenvector of K with eigenvalue a − k
        let alpha = 1.0 / (a - k);
        let x = 0.25;
        let k0 = rbf(x, 0.0, l);
        let k1 = rbf(x, 1.0, l);
        let expected = alpha * (k1 - k0);
        let (m, _) = gp.predict_standardized(x);
        assert!((m - expected).abs() < 1e-12);
    }
}
