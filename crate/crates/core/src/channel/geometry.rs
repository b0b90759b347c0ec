use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum GeometryError {
    #[error("axis with {ports} port(s) and aperture {aperture}: spacing undefined")]
    DegenerateAxis { ports: usize, aperture: f64 },
    #[error("aperture must be finite and non-negative, got {0}")]
    BadAperture(f64),
    #[error("geometry needs at least one port")]
    Empty,
}

/// Port layout of the fluid antenna, apertures in wavelengths.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum Layout {
    Linear { ports: usize, aperture: f64 },
    Planar {
        ports_x: usize,
        ports_y: usize,
        aperture_x: f64,
        aperture_y: f64,
    },
}

impl Layout {
    pub fn ports(&self) -> usize {
        match *self {
            Layout::Linear { ports, .. } => ports,
            Layout::Planar { ports_x, ports_y, .. } => ports_x * ports_y,
        }
    }
}

/// Validated port geometry with positions in wavelengths.
///
/// Planar ports are stored in raster order: grid cell `(i, j)` (row `i`
/// along x, column `j` along y, both 0-based) is port `i·K_y + j`.
#[derive(Clone, Debug, PartialEq)]
pub struct FasGeometry {
    layout: Layout,
    positions: Vec<[f64; 2]>,
}

fn axis(ports: usize, aperture: f64) -> Result<Vec<f64>, GeometryError> {
    if !aperture.is_finite() || aperture < 0.0 {
        return Err(GeometryError::BadAperture(aperture));
    }
    match ports {
        0 => Err(GeometryError::Empty),
        1 if aperture > 0.0 => Err(GeometryError::DegenerateAxis { ports, aperture }),
        1 => Ok(vec![0.0]),
        _ if aperture == 0.0 => Err(GeometryError::DegenerateAxis { ports, aperture }),
        _ => Ok((0..ports)
            .map(|k| k as f64 / (ports - 1) as f64 * aperture)
            .collect()),
    }
}

impl FasGeometry {
    pub fn new(layout: Layout) -> Result<Self, GeometryError> {
        let positions = match layout {
            Layout::Linear { ports, aperture } => {
                axis(ports, aperture)?.into_iter().map(|x| [x, 0.0]).collect()
            }
            Layout::Planar {
                ports_x,
                ports_y,
                aperture_x,
                aperture_y,
            } => {
                let xs = axis(ports_x, aperture_x)?;
                let ys = axis(ports_y, aperture_y)?;
                let mut p = Vec::with_capacity(xs.len() * ys.len());
                for &x in &xs {
                    for &y in &ys {
                        p.push([x, y]);
                    }
                }
                p
            }
        };
        Ok(FasGeometry { layout, positions })
    }

    pub fn linear(ports: usize, aperture: f64) -> Result<Self, GeometryError> {
        Self::new(Layout::Linear { ports, aperture })
    }

    pub fn planar(ports_x: usize, ports_y: usize, aperture_x: f64, aperture_y: f64) -> Result<Self, GeometryError> {
        Self::new(Layout::Planar {
            ports_x,
            ports_y,
            aperture_x,
            aperture_y,
        })
    }

    pub fn layout(&self) -> Layout {
        self.layout
    }

    pub fn ports(&self) -> usize {
        self.positions.len()
    }

    pub fn positions(&self) -> &[[f64; 2]] {
        &self.positions
    }

    pub fn is_planar(&self) -> bool {
        matches!(self.layout, Layout::Planar { .. })
    }

    /// Position along the main axis scaled to `[0, 1]`.
    pub fn normalized_position(&self, port: usize) -> [f64; 2] {
        let (wx, wy) = match self.layout {
            Layout::Linear { aperture, .. } => (aperture, 0.0),
            Layout::Planar {
                aperture_x,
                aperture_y,
                ..
            } => (aperture_x, aperture_y),
        };
        let p = self.positions[port];
        let scale = |v: f64, w: f64| if w > 0.0 { v / w } else { 0.0 };
        [scale(p[0], wx), scale(p[1], wy)]
    }

    pub fn distance(&self, a: usize, b: usize) -> f64 {
        let (p, q) = (self.positions[a], self.positions[b]);
        (p[0] - q[0]).hypot(p[1] - q[1])
    }
}

/// Raster index of grid cell `(i, j)` on a `K_x × K_y` grid (0-based).
pub fn raster_index(ports_y: usize, i: usize, j: usize) -> usize {
    i * ports_y + j
}

/// Inverse of [`raster_index`].
pub fn raster_cell(ports_y: usize, k: usize) -> (usize, usize) {
    (k / ports_y, k % ports_y)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn linear_positions() {
        let g = FasGeometry::linear(3, 1.0).unwrap();
        let xs: Vec<f64> = g.positions().iter().map(|p| p[0]).collect();
        assert_eq!(xs, vec![0.0, 0.5, 1.0]);
        let g = FasGeometry::linear(7, 2.5).unwrap();
        assert_eq!(g.positions()[0][0], 0.0);
        assert_eq!(g.positions()[6][0], 2.5);
    }

    #[test]
    fn planar_corners() {
        let g = FasGeometry::planar(2, 2, 1.0, 1.0).unwrap();
        assert_eq!(g.positions(), &[[0.0, 0.0], [0.0, 1.0], [1.0, 0.0], [1.0, 1.0]]);
    }

    #[test]
    fn single_port_axis_needs_zero_aperture() {
        assert!(matches!(
            FasGeometry::linear(1, 1.0),
            Err(GeometryError::DegenerateAxis { .. })
        ));
        assert!(FasGeometry::planar(4, 1, 2.0, 0.0).is_ok());
        assert!(FasGeometry::linear(0, 1.0).is_err());
    }

    #[test]
    fn raster_round_trip() {
        let (kx, ky) = (4, 5);
        assert_eq!(raster_index(ky, 0, 0), 0);
        assert_eq!(raster_index(ky, kx - 1, ky - 1), kx * ky - 1);
        for i in 0..kx {
            for j in 0..ky {
                assert_eq!(raster_cell(ky, raster_index(ky, i, j)), (i, j));
            }
        }
    }
}
