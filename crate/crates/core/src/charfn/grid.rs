use std::f64::consts::PI;

use num_complex::Complex64;
use rand::Rng;
use rand_distr::StandardNormal;
use serde::Serialize;

use super::CharFnHandle;
use crate::error::{Error, Result};
use crate::rng;

/// Star-shaped grid in R^dim: the origin plus `radii` equally spaced points on
/// each ray.
#[derive(Debug, Clone, PartialEq)]
pub struct StarGrid {
    dim: usize,
    directions: Vec<Vec<f64>>,
    radii: Vec<f64>,
}

impl StarGrid {
    /// Rays are `+-1` in dimension one, equally spaced angles in dimension two,
    /// and seeded random unit vectors above.
    pub fn new(dim: usize, rays: usize, radii: usize, radius: f64, seed: u64) -> Result<Self> {
        if dim == 0 || rays == 0 || radii == 0 || !(radius > 0.0) {
            return Err(Error::Config(format!(
                "grid needs positive dim, rays, radii and radius (got {dim}, {rays}, {radii}, {radius})"
            )));
        }
        let directions = match dim {
            1 => vec![vec![1.0], vec![-1.0]],
            2 => (0..rays)
                .map(|j| {
                    let a = 2.0 * PI * j as f64 / rays as f64;
                    vec![a.cos(), a.sin()]
                })
                .collect(),
            _ => {
                let mut r = rng::stream(seed, &[rng::purpose::DIRECTIONS, dim as u64]);
                (0..rays)
                    .map(|_| {
                        let g: Vec<f64> = (0..dim).map(|_| r.sample(StandardNormal)).collect();
                        let n = g.iter().map(|x| x * x).sum::<f64>().sqrt();
                        g.iter().map(|x| x / n).collect()
                    })
                    .collect()
            }
        };
        let radii = (1..=radii).map(|k| radius * k as f64 / radii as f64).collect();
        Ok(Self {
            dim,
            directions,
            radii,
        })
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn directions(&self) -> &[Vec<f64>] {
        &self.directions
    }

    pub fn radii(&self) -> &[f64] {
        &self.radii
    }

    /// Origin first, then ray by ray in increasing radius.
    pub fn points(&self) -> Vec<(Option<usize>, f64, Vec<f64>)> {
        let mut out = vec![(None, 0.0, vec![0.0; self.dim])];
        for (j, u) in self.directions.iter().enumerate() {
            for &r in &self.radii {
                out.push((Some(j), r, u.iter().map(|x| x * r).collect()));
            }
        }
        out
    }

    pub fn len(&self) -> usize {
        1 + self.directions.len() * self.radii.len()
    }

    pub fn is_empty(&self) -> bool {
        false
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct LogCfPoint {
    pub ray: Option<usize>,
    pub radius: f64,
    pub f: Vec<f64>,
    pub psi: Complex64,
    pub se: f64,
}

/// `psi = -log mu_hat` on a star grid, continued along each ray and truncated
/// where the CF modulus first drops below the floor.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct LogCfField {
    pub points: Vec<LogCfPoint>,
    /// Last retained radius per ray (0 when the ray is empty).
    pub truncated_radius: Vec<f64>,
    pub branch_ok: bool,
    pub diagnostics: Vec<String>,
}

pub fn log_cf_field(cf: &CharFnHandle, grid: &StarGrid, floor: f64) -> Result<LogCfField> {
    if !(floor > 0.0 && floor < 1.0) {
        return Err(Error::Precondition(format!("floor must lie in (0, 1), got {floor}")));
    }
    if grid.dim() != cf.dim() {
        return Err(Error::DimensionMismatch {
            expected: cf.dim(),
            got: grid.dim(),
        });
    }
    let mut points = vec![LogCfPoint {
        ray: None,
        radius: 0.0,
        f: vec![0.0; grid.dim()],
        psi: Complex64::default(),
        se: 0.0,
    }];
    let mut truncated = Vec::with_capacity(grid.directions().len());
    let mut diagnostics = Vec::new();
    let mut branch_ok = true;
    for (j, u) in grid.directions().iter().enumerate() {
        let mut prev = Complex64::default();
        let mut last = 0.0;
        for (k, &r) in grid.radii().iter().enumerate() {
            let f: Vec<f64> = u.iter().map(|x| x * r).collect();
            let (v, se) = cf.eval(&f)?;
            if v.norm() < floor {
                if k == 0 {
                    diagnostics.push(format!("ray {j}: |cf| = {:.3} below floor at the first point", v.norm()));
                }
                break;
            }
            let mut psi = -v.ln();
            let shift = ((prev.im - psi.im) / (2.0 * PI)).round();
            psi.im += 2.0 * PI * shift;
            if (psi.im - prev.im).abs() >= PI {
                branch_ok = false;
            }
            points.push(LogCfPoint {
                ray: Some(j),
                radius: r,
                f,
                psi,
                se: se / v.norm(),
            });
            prev = psi;
            last = r;
        }
        truncated.push(last);
    }
    Ok(LogCfField {
        points,
        truncated_radius: truncated,
        branch_ok,
        diagnostics,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dist::{ComponentDist, GaussianDist, ScalarFamily};
    use nalgebra::{DMatrix, DVector};

    #[test]
    fn gaussian_field_matches_closed_form() {
        let cov = DMatrix::from_row_slice(2, 2, &[0.5, 0.1, 0.1, 0.3]);
        let m = vec![1.5, -0.7];
        let g = GaussianDist::new(m.clone(), cov.clone()).unwrap();
        let h = CharFnHandle::exact(ComponentDist::Gaussian(g));
        let grid = StarGrid::new(2, 8, 12, 2.0, 0).unwrap();
        let field = log_cf_field(&h, &grid, 0.2).unwrap();
        assert!(field.branch_ok);
        for p in &field.points {
            let v = DVector::from_column_slice(&p.f);
            let expect = Complex64::new(0.5 * v.dot(&(&cov * &v)), -(m[0] * p.f[0] + m[1] * p.f[1]));
            assert!((p.psi - expect).norm() < 1e-10);
            assert!(((-p.psi).exp() - h.eval(&p.f).unwrap().0).norm() < 1e-10);
        }
    }

    #[test]
    fn uniform_ray_truncates_before_pi() {
        let u = ComponentDist::iid(ScalarFamily::Uniform { a: -1.0, b: 1.0 }, 1).unwrap();
        let h = CharFnHandle::exact(u);
        let grid = StarGrid::new(1, 8, 16, 4.0, 0).unwrap();
        let field = log_cf_field(&h, &grid, 0.2).unwrap();
        for r in &field.truncated_radius {
            assert!(*r < PI && *r > 2.0);
        }
    }

    #[test]
    fn degenerate_cf_gives_zero_psi() {
        let g = GaussianDist::new(vec![0.0], DMatrix::zeros(1, 1)).unwrap();
        let h = CharFnHandle::exact(ComponentDist::Gaussian(g));
        let grid = StarGrid::new(1, 2, 5, 2.0, 0).unwrap();
        let field = log_cf_field(&h, &grid, 0.2).unwrap();
        assert!(field.points.iter().all(|p| p.psi.norm() == 0.0));
        assert_eq!(field.points.len(), 11);
    }
}
