use nalgebra::{DMatrix, SymmetricEigen};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::hsio::HyperspectralCube;

/// A cube projected onto its leading principal components.
#[derive(Debug, Clone, PartialEq)]
pub struct ReducedCube {
    pub height: usize,
    pub width: usize,
    pub components: usize,
    /// Row-major (row, col, component).
    pub data: Vec<f64>,
    /// Fraction of total variance carried by each retained component.
    pub explained_variance: Vec<f64>,
    /// Bands x components loading matrix, row-major.
    pub projection: Vec<f64>,
    pub band_means: Vec<f64>,
    /// Per-band standard deviations when the correlation matrix was used.
    pub band_scales: Option<Vec<f64>>,
}

impl ReducedCube {
    #[inline]
    pub fn get(&self, row: usize, col: usize, component: usize) -> f64 {
        self.data[(row * self.width + col) * self.components + component]
    }

    pub fn pixel(&self, row: usize, col: usize) -> &[f64] {
        let start = (row * self.width + col) * self.components;
        &self.data[start..start + self.components]
    }

    pub fn bands(&self) -> usize {
        self.band_means.len()
    }

    /// Loading of `band` on `component`.
    pub fn loading(&self, band: usize, component: usize) -> f64 {
        self.projection[band * self.components + component]
    }

    /// Maps a reduced pixel back into band space.
    pub fn reconstruct(&self, row: usize, col: usize) -> Vec<f64> {
        let z = self.pixel(row, col);
        (0..self.bands())
            .map(|b| {
                let v: f64 = (0..self.components).map(|k| self.loading(b, k) * z[k]).sum();
                let scale = self.band_scales.as_ref().map_or(1.0, |s| s[b]);
                v * scale + self.band_means[b]
            })
            .collect()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct PcaOptions {
    pub components: usize,
    /// Divide each band by its standard deviation (correlation-matrix PCA).
    #[serde(default)]
    pub standardize: bool,
}

/// Covariance PCA with `components` retained.
pub fn pca_reduce(cube: &HyperspectralCube, components: usize) -> Result<ReducedCube> {
    pca_reduce_with(
        cube,
        PcaOptions {
            components,
            standardize: false,
        },
    )
}

pub fn pca_reduce_with(cube: &HyperspectralCube, opts: PcaOptions) -> Result<ReducedCube> {
    let n = cube.pixel_count();
    let l = cube.bands;
    let b = opts.components;
    if b == 0 || b > l {
        return Err(Error::InvalidArgument(format!(
            "component count {b} must be in 1..={l}"
        )));
    }
    if n < 2 {
        return Err(Error::InvalidArgument(
            "PCA needs at least two pixels".into(),
        ));
    }

    let mut means = vec![0.0; l];
    for px in cube.data.chunks_exact(l) {
        for (m, v) in means.iter_mut().zip(px) {
            *m += v;
        }
    }
    means.iter_mut().for_each(|m| *m /= n as f64);

    let mut centered = DMatrix::<f64>::zeros(n, l);
    for (p, px) in cube.data.chunks_exact(l).enumerate() {
        for k in 0..l {
            centered[(p, k)] = px[k] - means[k];
        }
    }

    let scales = if opts.standardize {
        let mut s = vec![0.0; l];
        for k in 0..l {
            let var = centered.column(k).iter().map(|v| v * v).sum::<f64>() / (n - 1) as f64;
            s[k] = if var > 0.0 { var.sqrt() } else { 1.0 };
        }
        for k in 0..l {
            let inv = 1.0 / s[k];
            centered.column_mut(k).iter_mut().for_each(|v| *v *= inv);
        }
        Some(s)
    } else {
        None
    };

    let cov = centered.tr_mul(&centered) / (n - 1) as f64;
    let total: f64 = cov.diagonal().iter().sum();
    if !(total > 0.0) {
        return Err(Error::Degenerate(
            "all bands are constant; covariance is zero".into(),
        ));
    }

    let eig = SymmetricEigen::new(cov);
    let mut order: Vec<usize> = (0..l).collect();
    order.sort_by(|&i, &j| eig.eigenvalues[j].total_cmp(&eig.eigenvalues[i]));

    let mut projection = vec![0.0; l * b];
    let mut explained = Vec::with_capacity(b);
    for (k, &src) in order.iter().take(b).enumerate() {
        let col = eig.eigenvectors.column(src);
        let mut pivot = 0;
        for i in 1..l {
            if col[i].abs() > col[pivot].abs() {
                pivot = i;
            }
        }
        let sign = if col[pivot] < 0.0 { -1.0 } else { 1.0 };
        for i in 0..l {
            projection[i * b + k] = sign * col[i];
        }
        explained.push((eig.eigenvalues[src].max(0.0) / total).min(1.0));
    }
    // eigenvalue noise can break ordering by a few ulps
    for k in 1..b {
        if explained[k] > explained[k - 1] {
            explained[k] = explained[k - 1];
        }
    }

    let proj = DMatrix::from_row_slice(l, b, &projection);
    let reduced = &centered * &proj;
    let mut data = Vec::with_capacity(n * b);
    for p in 0..n {
        for k in 0..b {
            data.push(reduced[(p, k)]);
        }
    }

    Ok(ReducedCube {
        height: cube.height,
        width: cube.width,
        components: b,
        data,
        explained_variance: explained,
        projection,
        band_means: means,
        band_scales: scales,
    })
}
