//! Two-component principal component analysis of parametric-bias vectors.

use nalgebra::{DMatrix, SymmetricEigen};

use crate::error::{check_len, Error, Result};

#[derive(Debug, Clone, PartialEq)]
pub struct PcaResult {
    pub mean: Vec<f64>,
    /// Unit component vectors, largest eigenvalue first (at most two).
    pub components: Vec<Vec<f64>>,
    /// Coordinates of each input point along `components`.
    pub projections: Vec<Vec<f64>>,
    /// Fraction of total variance carried by each component.
    pub explained: Vec<f64>,
}

impl PcaResult {
    /// Projects a point that was not part of the fit.
    pub fn project(&self, point: &[f64]) -> Result<Vec<f64>> {
        check_len("pca point", self.mean.len(), point.len())?;
        Ok(self
            .components
            .iter()
            .map(|c| c.iter().zip(point).zip(&self.mean).map(|((c, x), m)| c * (x - m)).sum())
            .collect())
    }
}

/// Centers the points, eigen-decomposes their covariance and keeps the top two axes.
///
/// Each component's sign is chosen so that its largest-magnitude entry is positive.
pub fn pca_project(points: &[Vec<f64>]) -> Result<PcaResult> {
    if points.len() < 2 {
        return Err(Error::Argument(format!(
            "PCA needs at least 2 points, got {}",
            points.len()
        )));
    }
    let dim = points[0].len();
    if dim == 0 {
        return Err(Error::Argument("PCA points are empty vectors".into()));
    }
    for p in points {
        check_len("pca point", dim, p.len())?;
    }
    let n = points.len() as f64;
    let mean: Vec<f64> = (0..dim).map(|j| points.iter().map(|p| p[j]).sum::<f64>() / n).collect();
    let centered = DMatrix::from_fn(points.len(), dim, |i, j| points[i][j] - mean[j]);
    let cov = centered.transpose() * &centered / n;
    let eig = SymmetricEigen::new(cov);

    let mut order: Vec<usize> = (0..dim).collect();
    order.sort_by(|&a, &b| eig.eigenvalues[b].total_cmp(&eig.eigenvalues[a]));
    let total: f64 = eig.eigenvalues.iter().map(|v| v.max(0.0)).sum();
    let keep = dim.min(2);

    let mut components = Vec::with_capacity(keep);
    let mut explained = Vec::with_capacity(keep);
    for &k in order.iter().take(keep) {
        let mut c: Vec<f64> = eig.eigenvectors.column(k).iter().copied().collect();
        let pivot = c
            .iter()
            .copied()
            .fold(0.0f64, |best, v| if v.abs() > best.abs() { v } else { best });
        if pivot < 0.0 {
            c.iter_mut().for_each(|v| *v = -*v);
        }
        components.push(c);
        explained.push(if total > 0.0 {
            eig.eigenvalues[k].max(0.0) / total
        } else {
            0.0
        });
    }

    let mut result = PcaResult {
        mean,
        components,
        projections: Vec::new(),
        explained,
    };
    result.projections = points.iter().map(|p| result.project(p)).collect::<Result<_>>()?;
    Ok(result)
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn two_points() {
        let r = pca_project(&[vec![1.0, 1.0], vec![3.0, 2.0]]).unwrap();
        let d = [2.0 / 5f64.sqrt(), 1.0 / 5f64.sqrt()];
        assert!((r.components[0][0] - d[0]).abs() < 1e-12);
        assert!((r.components[0][1] - d[1]).abs() < 1e-12);
        assert!((r.projections[0][0] + r.projections[1][0]).abs() < 1e-12);
        assert!(r.projections[0][1].abs() < 1e-12);
        assert!((r.explained[0] - 1.0).abs() < 1e-12);
    }

    #[test]
    fn axis_aligned_is_identity_up_to_sign() {
        let pts = vec![vec![-3.0, 0.5], vec![3.0, -0.5], vec![-3.0, -0.5], vec![3.0, 0.5]];
        let r = pca_project(&pts).unwrap();
        assert!((r.components[0][0].abs() - 1.0).abs() < 1e-12);
        assert!((r.components[1][1].abs() - 1.0).abs() < 1e-12);
        for (p, q) in pts.iter().zip(&r.projections) {
            assert!((p[0].abs() - q[0].abs()).abs() < 1e-12);
            assert!((p[1].abs() - q[1].abs()).abs() < 1e-12);
        }
    }

    #[test]
    fn too_few_points() {
        assert!(pca_project(&[vec![1.0, 2.0]]).is_err());
        assert!(pca_project(&[]).is_err());
    }

    proptest! {
        #[test]
        fn basis_is_orthonormal_and_ordered(raw in prop::collection::vec(prop::collection::vec(-5.0f64..5.0, 3), 2..20)) {
            let r = pca_project(&raw).unwrap();
            prop_assert!(r.explained[0] >= r.explained[1]);
            prop_assert!(r.explained.iter().sum::<f64>() <= 1.0 + 1e-12);
            for (i, a) in r.components.iter().enumerate() {
                for (j, b) in r.components.iter().enumerate() {
                    let dot: f64 = a.iter().zip(b).map(|(x, y)| x * y).sum();
                    let want = if i == j { 1.0 } else { 0.0 };
                    prop_assert!((dot - want).abs() < 1e-10);
                }
                let pivot = a.iter().copied().fold(0.0f64, |best, v| if v.abs() > best.abs() { v } else { best });
                prop_assert!(pivot > 0.0);
            }
        }
    }
}
