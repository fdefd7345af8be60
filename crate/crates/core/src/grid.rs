use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Uniform space-intensity-time grid.
///
/// `ny` counts the intensity nodes on `[0, y_max]`. When an extension
/// `ℓ < 0` is requested, `n_below` extra nodes with the same spacing are
/// prepended so that `y = 0` stays a node.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Grid {
    pub x_min: f64,
    pub x_max: f64,
    pub nx: usize,
    pub y_max: f64,
    pub ny: usize,
    pub n_below: usize,
    pub nt: usize,
    pub horizon: f64,
}

#[allow(clippy::too_many_arguments)]
pub fn build_grid(
    x_min: f64,
    x_max: f64,
    nx: usize,
    y_max: f64,
    ny: usize,
    nt: usize,
    extension_ell: f64,
    horizon: f64,
) -> Result<Grid> {
    let finite = [x_min, x_max, y_max, extension_ell, horizon]
        .iter()
        .all(|v| v.is_finite());
    if !finite {
        return Err(Error::DegenerateRange("non-finite grid parameter".into()));
    }
    if x_min >= x_max {
        return Err(Error::DegenerateRange(format!("x_min {x_min} >= x_max {x_max}")));
    }
    if y_max <= 0.0 {
        return Err(Error::DegenerateRange(format!("y_max {y_max} must be positive")));
    }
    if horizon <= 0.0 {
        return Err(Error::DegenerateRange(format!("horizon {horizon} must be positive")));
    }
    if nx < 2 || ny < 2 || nt < 2 {
        return Err(Error::DegenerateRange(format!(
            "node counts must be at least 2 (nx={nx}, ny={ny}, nt={nt})"
        )));
    }
    if extension_ell > 0.0 {
        return Err(Error::DegenerateRange(format!(
            "extension {extension_ell} must be <= 0"
        )));
    }
    let dy = y_max / (ny - 1) as f64;
    let n_below = if extension_ell < 0.0 {
        (-extension_ell / dy - 1e-9).ceil() as usize
    } else {
        0
    };
    Ok(Grid { x_min, x_max, nx, y_max, ny, n_below, nt, horizon })
}

impl Grid {
    pub fn dx(&self) -> f64 {
        (self.x_max - self.x_min) / (self.nx - 1) as f64
    }

    pub fn dy(&self) -> f64 {
        self.y_max / (self.ny - 1) as f64
    }

    pub fn dt(&self) -> f64 {
        self.horizon / self.nt as f64
    }

    pub fn x(&self, i: usize) -> f64 {
        self.x_min + i as f64 * self.dx()
    }

    /// Total number of intensity nodes, including those below zero.
    pub fn ny_total(&self) -> usize {
        self.ny + self.n_below
    }

    /// Intensity coordinate of row `j` (row `n_below` is `y = 0`).
    pub fn y(&self, j: usize) -> f64 {
        (j as f64 - self.n_below as f64) * self.dy()
    }

    pub fn y_min(&self) -> f64 {
        self.y(0)
    }

    pub fn t(&self, n: usize) -> f64 {
        n as f64 * self.dt()
    }

    pub fn x_nodes(&self) -> Vec<f64> {
        (0..self.nx).map(|i| self.x(i)).collect()
    }

    pub fn y_nodes(&self) -> Vec<f64> {
        (0..self.ny_total()).map(|j| self.y(j)).collect()
    }

    /// Halves all three spacings.
    pub fn refine(&self) -> Grid {
        let dy = self.dy();
        let ell = -(self.n_below as f64) * dy;
        let mut g = Grid {
            nx: 2 * (self.nx - 1) + 1,
            ny: 2 * (self.ny - 1) + 1,
            nt: 2 * self.nt,
            n_below: 0,
            ..self.clone()
        };
        g.n_below = if ell < 0.0 { (-ell / g.dy() - 1e-9).ceil() as usize } else { 0 };
        g
    }

    pub fn refined(&self, times: usize) -> Grid {
        (0..times).fold(self.clone(), |g, _| g.refine())
    }

    /// Same grid with a different number of time steps.
    pub fn with_nt(&self, nt: usize) -> Grid {
        Grid { nt, ..self.clone() }
    }

    pub fn same_space(&self, other: &Grid) -> bool {
        self.x_min == other.x_min
            && self.x_max == other.x_max
            && self.nx == other.nx
            && self.y_max == other.y_max
            && self.ny == other.ny
            && self.n_below == other.n_below
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn spacings() {
        let g = build_grid(-5.0, 5.0, 11, 2.0, 5, 10, 0.0, 1.0).unwrap();
        assert_eq!(g.dx(), 1.0);
        assert_eq!(g.dy(), 0.5);
        assert_eq!(g.dt(), 0.1);
        assert_eq!(g.ny_total(), 5);
        assert_eq!(g.y(0), 0.0);
    }

    #[test]
    fn extension_adds_nodes_below_zero() {
        let g = build_grid(-5.0, 5.0, 11, 2.0, 5, 10, -0.5, 1.0).unwrap();
        let ys = g.y_nodes();
        assert!(ys.contains(&-0.5));
        assert!(ys.contains(&0.0));
        assert_eq!(g.n_below, 1);
    }

    #[test]
    fn reversed_bounds_rejected() {
        assert!(matches!(
            build_grid(5.0, -5.0, 11, 2.0, 5, 10, 0.0, 1.0),
            Err(Error::DegenerateRange(_))
        ));
        assert!(build_grid(-1.0, 1.0, 1, 2.0, 5, 10, 0.0, 1.0).is_err());
    }

    #[test]
    fn refine_halves_spacings() {
        let g = build_grid(-4.0, 4.0, 21, 2.0, 11, 40, -0.4, 1.0).unwrap();
        let r = g.refine();
        assert!((r.dx() - g.dx() / 2.0).abs() < 1e-15);
        assert!((r.dy() - g.dy() / 2.0).abs() < 1e-15);
        assert!((r.dt() - g.dt() / 2.0).abs() < 1e-15);
        assert!((r.y_min() - g.y_min()).abs() < 1e-12);
    }
}
