use faer::dyn_stack::{MemBuffer, MemStack};
use faer::linalg::cholesky::llt::factor::{
    cholesky_in_place, cholesky_in_place_scratch, LltRegularization,
};
use faer::{Mat, Par, Side};

use super::{fill_lower, FieldModel};
use crate::error::{Error, Result};

/// First diagonal jitter, relative to the largest diagonal entry.
pub const JITTER_START: f64 = 1e-12;
/// Largest diagonal jitter tried before giving up.
pub const JITTER_MAX: f64 = 1e-6;

/// Lower Cholesky factor of `G + λI` for the Gram matrix `G` of a point set.
pub struct CholeskyFactor {
    l: Mat<f64>,
    jitter: f64,
}

impl CholeskyFactor {
    /// Factors the model Gram matrix on `points`.
    ///
    /// λ starts at `JITTER_START · max diag` and grows tenfold up to
    /// `JITTER_MAX · max diag`. The factorization overwrites its input, so the
    /// Gram matrix is refilled before each retry.
    pub fn new(model: &FieldModel, points: &[Vec<f64>]) -> Result<Self> {
        Self::with_fill(points.len(), |g| fill_lower(model, points, g))
    }

    /// Factors the symmetric matrix whose lower triangle `fill` writes.
    ///
    /// `fill` is called again before every jitter retry.
    pub fn with_fill<F>(n: usize, fill: F) -> Result<Self>
    where
        F: Fn(&mut Mat<f64>) -> Result<()>,
    {
        let mut g = Mat::<f64>::zeros(n, n);
        fill(&mut g)?;
        let max_diag = (0..n).map(|i| g[(i, i)]).fold(0.0, f64::max);
        if n == 0 || max_diag == 0.0 {
            // every point carries zero variance, so the field is identically zero there
            return Ok(Self {
                l: Mat::zeros(n, n),
                jitter: 0.0,
            });
        }
        let mut buf = MemBuffer::new(cholesky_in_place_scratch::<f64>(
            n,
            Par::Seq,
            Default::default(),
        ));
        let mut rel = JITTER_START;
        let mut attempt = 0;
        loop {
            if attempt > 0 {
                fill(&mut g)?;
            }
            let lambda = rel * max_diag;
            for i in 0..n {
                g[(i, i)] += lambda;
            }
            let outcome = cholesky_in_place(
                g.as_mut(),
                LltRegularization::default(),
                Par::Seq,
                MemStack::new(&mut buf),
                Default::default(),
            );
            match outcome {
                Ok(_) => {
                    if attempt > 0 {
                        log::warn!(
                            "cholesky needed jitter {lambda:e} ({rel:e} x max diag) on {n} points"
                        );
                    } else {
                        log::debug!("cholesky succeeded with jitter {lambda:e} on {n} points");
                    }
                    return Ok(Self {
                        l: g,
                        jitter: lambda,
                    });
                }
                Err(e) => {
                    if rel * 10.0 > JITTER_MAX * (1.0 + 1e-9) {
                        return Err(Error::Factorization {
                            jitter: lambda,
                            reason: format!("{e:?}"),
                        });
                    }
                    rel *= 10.0;
                    attempt += 1;
                }
            }
        }
    }

    pub fn dim(&self) -> usize {
        self.l.nrows()
    }

    /// Absolute diagonal jitter λ that made the factorization succeed.
    pub fn jitter(&self) -> f64 {
        self.jitter
    }

    /// `L z`, reading only the lower triangle.
    pub fn apply(&self, z: &[f64]) -> Vec<f64> {
        let n = self.dim();
        assert_eq!(z.len(), n);
        let mut y = vec![0.0; n];
        for (j, &zj) in z.iter().enumerate() {
            if zj == 0.0 {
                continue;
            }
            let col = self
                .l
                .col(j)
                .try_as_col_major()
                .expect("owned matrices are column major");
            let col = col.as_slice();
            for i in j..n {
                y[i] += col[i] * zj;
            }
        }
        y
    }

    /// Solves `L Lᵀ a = k`.
    pub fn solve(&self, k: &[f64]) -> Vec<f64> {
        let w = self.forward(k);
        let n = self.dim();
        let mut a = w;
        for i in (0..n).rev() {
            let mut s = a[i];
            for r in i + 1..n {
                s -= self.l[(r, i)] * a[r];
            }
            a[i] = s / self.l[(i, i)];
        }
        a
    }

    /// Forward substitution `L⁻¹ k`.
    pub fn forward(&self, k: &[f64]) -> Vec<f64> {
        let n = self.dim();
        assert_eq!(k.len(), n);
        let mut w = k.to_vec();
        for j in 0..n {
            let d = self.l[(j, j)];
            w[j] = if d > 0.0 { w[j] / d } else { 0.0 };
            let wj = w[j];
            for i in j + 1..n {
                w[i] -= self.l[(i, j)] * wj;
            }
        }
        w
    }
}

/// Truncated eigen factor `U_r √Λ_r` of a Gram matrix.
pub struct SpectralFactor {
    modes: Mat<f64>,
    eigenvalues: Vec<f64>,
}

impl SpectralFactor {
    /// Keeps the `rank` leading eigenpairs; negative round-off eigenvalues are zeroed.
    /// Each eigenvector is signed so its largest-magnitude entry is positive.
    pub fn new(model: &FieldModel, points: &[Vec<f64>], rank: usize) -> Result<Self> {
        let n = points.len();
        if rank == 0 || rank > n {
            return Err(Error::domain(format!("rank {rank} must lie in 1..={n}")));
        }
        let g = model.gram(points)?;
        let evd = g
            .self_adjoint_eigen(Side::Lower)
            .map_err(|e| Error::Factorization {
                jitter: 0.0,
                reason: format!("eigen solver: {e:?}"),
            })?;
        let u = evd.U();
        let s = evd.S().column_vector();
        let mut modes = Mat::<f64>::zeros(n, rank);
        let mut eigenvalues = Vec::with_capacity(rank);
        for k in 0..rank {
            let src = n - 1 - k;
            let lambda = s[src].max(0.0);
            let col = u.col(src);
            let pivot = (0..n)
                .max_by(|&a, &b| col[a].abs().total_cmp(&col[b].abs()))
                .expect("non-empty");
            let sign = if col[pivot] < 0.0 { -1.0 } else { 1.0 };
            let scale = sign * lambda.sqrt();
            for i in 0..n {
                modes[(i, k)] = col[i] * scale;
            }
            eigenvalues.push(lambda);
        }
        Ok(Self { modes, eigenvalues })
    }

    pub fn rank(&self) -> usize {
        self.modes.ncols()
    }

    /// Retained eigenvalues, largest first.
    pub fn eigenvalues(&self) -> &[f64] {
        &self.eigenvalues
    }

    pub fn apply(&self, z: &[f64]) -> Vec<f64> {
        assert_eq!(z.len(), self.rank());
        let n = self.modes.nrows();
        let mut y = vec![0.0; n];
        for (k, &zk) in z.iter().enumerate() {
            for (i, yi) in y.iter_mut().enumerate() {
                *yi += self.modes[(i, k)] * zk;
            }
        }
        y
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::gauge::GaugeSpec;

    #[test]
    fn brownian_factor_reconstructs_min() {
        let m = FieldModel::cube(GaugeSpec::power_law(0.5, 1.0).unwrap(), 1, 0.0, 1.0).unwrap();
        let pts: Vec<Vec<f64>> = (1..=8).map(|k| vec![k as f64 / 8.0]).collect();
        let f = CholeskyFactor::new(&m, &pts).unwrap();
        assert!(f.jitter() <= JITTER_START * 1.0 + 1e-30);
        // (L Lᵀ)_ij through apply on unit vectors
        let cols: Vec<Vec<f64>> = (0..8)
            .map(|j| {
                let mut e = vec![0.0; 8];
                e[j] = 1.0;
                f.apply(&e)
            })
            .collect();
        for i in 0..8 {
            for j in 0..8 {
                let lij: f64 = (0..8).map(|k| cols[k][i] * cols[k][j]).sum();
                let expect = pts[i][0].min(pts[j][0]);
                assert!((lij - expect).abs() < 1e-10, "{i},{j}");
            }
        }
        let k: Vec<f64> = pts.iter().map(|p| p[0]).collect();
        let a = f.solve(&k);
        // G a = k with G = min matrix and k = last column gives e_last
        assert!((a[7] - 1.0).abs() < 1e-8);
        assert!(a[..7].iter().all(|v| v.abs() < 1e-8));
    }

    #[test]
    fn origin_grid_has_zero_factor() {
        let m = FieldModel::cube(GaugeSpec::power_law(0.5, 1.0).unwrap(), 1, 0.0, 1.0).unwrap();
        let f = CholeskyFactor::new(&m, &[vec![0.0]]).unwrap();
        assert_eq!(f.apply(&[1.3]), vec![0.0]);
        assert_eq!(f.jitter(), 0.0);
    }

    #[test]
    fn duplicate_points_need_jitter() {
        let m = FieldModel::cube(GaugeSpec::power_law(0.5, 1.0).unwrap(), 1, 0.0, 1.0).unwrap();
        let f = CholeskyFactor::new(&m, &[vec![0.5], vec![0.5]]).unwrap();
        assert!(f.jitter() > 0.0 && f.jitter() <= JITTER_MAX * 0.5);
    }

    #[test]
    fn spectral_scalar_case() {
        let m = FieldModel::cube(GaugeSpec::power_law(0.3, 1.0).unwrap(), 1, 0.0, 1.0).unwrap();
        let f = SpectralFactor::new(&m, &[vec![0.64]], 1).unwrap();
        let v = f.apply(&[2.0]);
        assert!((v[0] - 2.0 * 0.64f64.powf(0.3)).abs() < 1e-14);
        assert!(SpectralFactor::new(&m, &[vec![0.64]], 2).is_err());
    }
}
