use nalgebra::DMatrix;
use rand::Rng;
use rand_distr::StandardNormal;

use super::LinkModel;
use crate::error::{Error, Result};
use crate::rng;

/// A synthetic sample from the Gaussian multi-index model.
#[derive(Debug, Clone)]
pub struct Dataset {
    /// `n × d`, rows `x_i ~ N(0, I_d / d)`.
    pub x: DMatrix<f64>,
    /// Labels `y_i ~ P(· | W⋆ᵀ x_i)`.
    pub y: Vec<f64>,
    /// `d × p`, entries `N(0, 1)`.
    pub w_star: DMatrix<f64>,
    pub seed: u64,
    /// `n / d`.
    pub alpha: f64,
}

impl Dataset {
    pub fn n(&self) -> usize {
        self.x.nrows()
    }

    pub fn d(&self) -> usize {
        self.x.ncols()
    }

    pub fn p(&self) -> usize {
        self.w_star.ncols()
    }
}

/// Draws `(X, y, W⋆)`. Row `i` uses its own random stream, so the result is
/// bit-identical for a given seed regardless of generation order.
pub fn sample_dataset(model: &LinkModel, n: usize, d: usize, seed: u64) -> Result<Dataset> {
    let p = model.p();
    if n < p || d < p || d < 2 * p {
        return Err(Error::InvalidDimensions(format!(
            "need n, d >= p and d >= 2p; got n = {n}, d = {d}, p = {p}"
        )));
    }
    let mut wrng = rng::stream(seed, rng::WEIGHTS_STREAM);
    let w_star = DMatrix::from_fn(d, p, |_, _| wrng.sample::<f64, _>(StandardNormal));

    let scale = 1.0 / (d as f64).sqrt();
    let mut x = DMatrix::zeros(n, d);
    let mut y = Vec::with_capacity(n);
    let mut row = vec![0.0; d];
    let mut z = vec![0.0; p];
    for i in 0..n {
        let mut r = rng::stream(seed, i as u64);
        for v in row.iter_mut() {
            *v = r.sample::<f64, _>(StandardNormal) * scale;
        }
        for (mu, zm) in z.iter_mut().enumerate() {
            *zm = row.iter().zip(w_star.column(mu).iter()).map(|(a, b)| a * b).sum();
        }
        y.push(model.sample_label(&z, &mut r));
        for (k, v) in row.iter().enumerate() {
            x[(i, k)] = *v;
        }
    }
    Ok(Dataset {
        x,
        y,
        w_star,
        seed,
        alpha: n as f64 / d as f64,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::build_model;

    #[test]
    fn shapes_and_determinism() {
        let m = build_model("norm-sq", 4).unwrap();
        let a = sample_dataset(&m, 100, 50, 7).unwrap();
        assert_eq!((a.x.nrows(), a.x.ncols()), (100, 50));
        assert_eq!(a.y.len(), 100);
        assert_eq!((a.w_star.nrows(), a.w_star.ncols()), (50, 4));
        let b = sample_dataset(&m, 100, 50, 7).unwrap();
        assert_eq!(a.x, b.x);
        assert_eq!(a.y, b.y);
        assert_eq!(a.w_star, b.w_star);
        let c = sample_dataset(&m, 100, 50, 8).unwrap();
        assert_ne!(a.x, c.x);
    }

    #[test]
    fn labels_follow_projection() {
        let m = build_model("product2", 2).unwrap();
        let ds = sample_dataset(&m, 20, 10, 1).unwrap();
        let z = &ds.x * &ds.w_star;
        for i in 0..20 {
            assert!((ds.y[i] - z[(i, 0)] * z[(i, 1)]).abs() < 1e-12);
        }
    }

    #[test]
    fn rejects_bad_dimensions() {
        let m = build_model("norm-sq", 4).unwrap();
        assert!(sample_dataset(&m, 100, 7, 0).is_err());
        assert!(sample_dataset(&m, 3, 50, 0).is_err());
    }
}
