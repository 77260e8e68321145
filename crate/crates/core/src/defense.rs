//! Server-side transforms of uploaded embeddings: Laplace noise and Top-k
//! sparsification.

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::numerics::{DenseMatrix, SeededRng};

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum DefenseKind {
    #[default]
    None,
    Dp,
    Topk,
}

impl DefenseKind {
    pub fn name(self) -> &'static str {
        match self {
            DefenseKind::None => "none",
            DefenseKind::Dp => "dp",
            DefenseKind::Topk => "topk",
        }
    }
}

impl std::str::FromStr for DefenseKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "none" => Ok(DefenseKind::None),
            "dp" => Ok(DefenseKind::Dp),
            "topk" | "top-k" => Ok(DefenseKind::Topk),
            other => Err(Error::InvalidArgument(format!("unknown defense {other:?}"))),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DefenseConfig {
    pub kind: DefenseKind,
    /// Laplace scale.
    pub beta: f64,
    /// Components kept per row.
    pub k: usize,
    /// Rank Top-k components by magnitude instead of signed value.
    pub topk_abs: bool,
    /// Also perturb uploads while training (not only at inference).
    pub dp_in_training: bool,
}

impl Default for DefenseConfig {
    fn default() -> Self {
        Self {
            kind: DefenseKind::None,
            beta: 0.1,
            k: 8,
            topk_abs: false,
            dp_in_training: true,
        }
    }
}

impl DefenseConfig {
    pub fn none() -> Self {
        Self::default()
    }

    pub fn dp(beta: f64) -> Self {
        Self {
            kind: DefenseKind::Dp,
            beta,
            ..Self::default()
        }
    }

    pub fn topk(k: usize) -> Self {
        Self {
            kind: DefenseKind::Topk,
            k,
            ..Self::default()
        }
    }

    /// Checks the parameters relevant to `kind` against embedding width `d`.
    pub fn validate(&self, d: usize) -> Result<()> {
        match self.kind {
            DefenseKind::None => Ok(()),
            DefenseKind::Dp => check_beta(self.beta),
            DefenseKind::Topk => check_k(self.k, d),
        }
    }
}

fn check_beta(beta: f64) -> Result<()> {
    if beta >= 0.0 && beta.is_finite() {
        Ok(())
    } else {
        Err(Error::InvalidArgument(format!("Laplace scale must be >= 0, got {beta}")))
    }
}

fn check_k(k: usize, d: usize) -> Result<()> {
    if (1..=d).contains(&k) {
        Ok(())
    } else {
        Err(Error::InvalidArgument(format!("top-k needs 1 <= k <= {d}, got {k}")))
    }
}

/// I.i.d. `Laplace(0, beta)` samples by inverse-CDF.
pub fn laplace_noise(rows: usize, cols: usize, beta: f64, rng: &mut SeededRng) -> Result<DenseMatrix> {
    check_beta(beta)?;
    Ok(DenseMatrix::from_fn(rows, cols, |_, _| {
        let u: f64 = rng.random::<f64>() - 0.5;
        if beta == 0.0 {
            0.0
        } else {
            -beta * u.signum() * (1.0 - 2.0 * u.abs()).max(f64::MIN_POSITIVE).ln()
        }
    }))
}

/// `h + Laplace(0, beta)` elementwise.
pub fn dp_perturb(h: &DenseMatrix, beta: f64, rng: &mut SeededRng) -> Result<DenseMatrix> {
    let noise = laplace_noise(h.rows(), h.cols(), beta, rng)?;
    h.add(&noise)
}

/// 0/1 mask of the `k` largest entries per row; ties keep the lower index.
pub fn topk_mask(h: &DenseMatrix, k: usize, by_magnitude: bool) -> Result<DenseMatrix> {
    check_k(k, h.cols())?;
    let mut mask = DenseMatrix::zeros(h.rows(), h.cols());
    let mut order: Vec<usize> = Vec::with_capacity(h.cols());
    for r in 0..h.rows() {
        let row = h.row(r);
        let key = |j: usize| if by_magnitude { row[j].abs() } else { row[j] };
        order.clear();
        order.extend(0..h.cols());
        order.sort_by(|&a, &b| key(b).total_cmp(&key(a)).then(a.cmp(&b)));
        for &j in &order[..k] {
            mask.set(r, j, 1.0);
        }
    }
    Ok(mask)
}

/// Keeps the `k` largest values of each row and zeroes the rest.
pub fn topk_filter(h: &DenseMatrix, k: usize) -> Result<DenseMatrix> {
    let mask = topk_mask(h, k, false)?;
    Ok(h.zip_map(&mask, |v, m| v * m))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn zero_beta_is_identity() {
        let h = DenseMatrix::from_fn(3, 4, |i, j| (i * 4 + j) as f64);
        assert_eq!(dp_perturb(&h, 0.0, &mut SeededRng::new(0)).unwrap(), h);
        assert!(dp_perturb(&h, -0.1, &mut SeededRng::new(0)).is_err());
    }

    #[test]
    fn laplace_moments() {
        let beta = 0.5;
        let noise = laplace_noise(1000, 1000, beta, &mut SeededRng::new(11)).unwrap();
        let n = noise.len() as f64;
        let mean = noise.sum() / n;
        let abs_mean = noise.as_slice().iter().map(|v| v.abs()).sum::<f64>() / n;
        assert!(mean.abs() < 0.01, "mean {mean}");
        assert!((abs_mean - beta).abs() < 0.01, "E|X| {abs_mean}");
    }

    #[test]
    fn laplace_is_deterministic() {
        let a = laplace_noise(5, 5, 0.3, &mut SeededRng::new(2)).unwrap();
        let b = laplace_noise(5, 5, 0.3, &mut SeededRng::new(2)).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn topk_hand_case() {
        let h = DenseMatrix::from_rows(&[vec![3.0, 1.0, 2.0]]).unwrap();
        assert_eq!(topk_filter(&h, 2).unwrap().as_slice(), &[3.0, 0.0, 2.0]);
        assert_eq!(topk_filter(&h, 3).unwrap(), h);
        assert!(topk_filter(&h, 0).is_err());
        assert!(topk_filter(&h, 4).is_err());
    }

    #[test]
    fn topk_ties_keep_lowest_index() {
        let h = DenseMatrix::from_rows(&[vec![1.0, 1.0, 1.0, 0.0]]).unwrap();
        assert_eq!(topk_mask(&h, 2, false).unwrap().as_slice(), &[1.0, 1.0, 0.0, 0.0]);
        let h = DenseMatrix::from_rows(&[vec![0.5, -2.0, 1.0]]).unwrap();
        assert_eq!(topk_mask(&h, 1, true).unwrap().as_slice(), &[0.0, 1.0, 0.0]);
        assert_eq!(topk_mask(&h, 1, false).unwrap().as_slice(), &[0.0, 0.0, 1.0]);
    }

    #[test]
    fn topk_keeps_exactly_k_per_row() {
        let mut rng = SeededRng::new(4);
        let h = DenseMatrix::from_fn(20, 16, |_, _| rng.random_range(-1.0..1.0));
        for k in [1, 8, 12, 16] {
            let mask = topk_mask(&h, k, false).unwrap();
            for r in 0..20 {
                assert_eq!(mask.row(r).iter().sum::<f64>() as usize, k);
            }
        }
    }
}
