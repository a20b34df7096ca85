use serde::{Deserialize, Serialize};

use super::{Point2, Vec2};
use crate::error::{Error, Result};

/// A uniform `rows × cols` cell lattice over a `width × height` frame.
/// Vertices are stored row-major, `(rows + 1) × (cols + 1)` of them.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GridMesh {
    rows: usize,
    cols: usize,
    width: f64,
    height: f64,
    vertices: Vec<Point2>,
}

/// Location of a point inside the mesh: its cell, the cell's four corner
/// vertex indices (top-left, top-right, bottom-right, bottom-left) and the
/// matching bilinear weights.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CellWeights {
    pub cell: usize,
    pub vertices: [usize; 4],
    pub weights: [f64; 4],
    /// Fractional position inside the cell, each in `[0, 1]`.
    pub u: f64,
    pub v: f64,
}

impl GridMesh {
    pub fn new(width: f64, height: f64, rows: usize, cols: usize) -> Result<Self> {
        if !(width > 0.0 && height > 0.0 && width.is_finite() && height.is_finite()) {
            return Err(Error::InvalidDimensions(format!(
                "frame must be positive, got {width}x{height}"
            )));
        }
        if rows < 2 || cols < 2 {
            return Err(Error::InvalidDimensions(format!(
                "grid needs at least 2x2 cells, got {rows}x{cols}"
            )));
        }
        let mut vertices = Vec::with_capacity((rows + 1) * (cols + 1));
        for r in 0..=rows {
            for c in 0..=cols {
                // the last row and column land exactly on the frame edge
                let x = if c == cols { width } else { c as f64 * width / cols as f64 };
                let y = if r == rows { height } else { r as f64 * height / rows as f64 };
                vertices.push(Point2::new(x, y));
            }
        }
        Ok(Self {
            rows,
            cols,
            width,
            height,
            vertices,
        })
    }

    pub fn rows(&self) -> usize {
        self.rows
    }

    pub fn cols(&self) -> usize {
        self.cols
    }

    pub fn width(&self) -> f64 {
        self.width
    }

    pub fn height(&self) -> f64 {
        self.height
    }

    pub fn vertex_rows(&self) -> usize {
        self.rows + 1
    }

    pub fn vertex_cols(&self) -> usize {
        self.cols + 1
    }

    pub fn vertex_count(&self) -> usize {
        self.vertices.len()
    }

    pub fn cell_count(&self) -> usize {
        self.rows * self.cols
    }

    pub fn vertices(&self) -> &[Point2] {
        &self.vertices
    }

    pub fn vertex(&self, row: usize, col: usize) -> Point2 {
        self.vertices[self.vertex_index(row, col)]
    }

    pub fn vertex_index(&self, row: usize, col: usize) -> usize {
        row * (self.cols + 1) + col
    }

    pub fn cell_width(&self) -> f64 {
        self.width / self.cols as f64
    }

    pub fn cell_height(&self) -> f64 {
        self.height / self.rows as f64
    }

    /// Corner vertices of a cell, clockwise on screen from the top-left.
    pub fn cell_vertices(&self, cell: usize) -> [usize; 4] {
        let (r, c) = (cell / self.cols, cell % self.cols);
        [
            self.vertex_index(r, c),
            self.vertex_index(r, c + 1),
            self.vertex_index(r + 1, c + 1),
            self.vertex_index(r + 1, c),
        ]
    }

    pub fn contains(&self, p: Point2) -> bool {
        p.x >= 0.0 && p.y >= 0.0 && p.x <= self.width && p.y <= self.height
    }

    pub fn bilinear_weights(&self, p: Point2) -> Result<CellWeights> {
        if !p.is_finite() || !self.contains(p) {
            return Err(Error::OutOfBounds { x: p.x, y: p.y });
        }
        Ok(self.weights_clamped(p))
    }

    /// Like [`bilinear_weights`](Self::bilinear_weights) but clamps the point
    /// into the frame first.
    pub fn weights_clamped(&self, p: Point2) -> CellWeights {
        let (cw, ch) = (self.cell_width(), self.cell_height());
        let x = p.x.clamp(0.0, self.width);
        let y = p.y.clamp(0.0, self.height);
        let col = ((x / cw).floor() as usize).min(self.cols - 1);
        let row = ((y / ch).floor() as usize).min(self.rows - 1);
        let origin = self.vertex(row, col);
        let u = ((x - origin.x) / cw).clamp(0.0, 1.0);
        let v = ((y - origin.y) / ch).clamp(0.0, 1.0);
        let cell = row * self.cols + col;
        CellWeights {
            cell,
            vertices: self.cell_vertices(cell),
            weights: [(1.0 - u) * (1.0 - v), u * (1.0 - v), u * v, (1.0 - u) * v],
            u,
            v,
        }
    }

    /// Bilinear interpolation of per-vertex vectors at `p` (clamped into the
    /// frame). Written as nested lerps so equal corner values come back
    /// unchanged.
    pub fn interpolate(&self, values: &[Vec2], p: Point2) -> Vec2 {
        let cw = self.weights_clamped(p);
        interpolate_corners(&cw, values)
    }
}

pub(crate) fn interpolate_corners(cw: &CellWeights, values: &[Vec2]) -> Vec2 {
    let [tl, tr, br, bl] = cw.vertices.map(|i| values[i]);
    let lerp = |a: f64, b: f64, t: f64| a + t * (b - a);
    let top = Vec2::new(lerp(tl.dx, tr.dx, cw.u), lerp(tl.dy, tr.dy, cw.u));
    let bottom = Vec2::new(lerp(bl.dx, br.dx, cw.u), lerp(bl.dy, br.dy, cw.u));
    Vec2::new(lerp(top.dx, bottom.dx, cw.v), lerp(top.dy, bottom.dy, cw.v))
}

/// Builds the uniform mesh; see [`GridMesh::new`].
pub fn build_grid(width: f64, height: f64, rows: usize, cols: usize) -> Result<GridMesh> {
    GridMesh::new(width, height, rows, cols)
}
