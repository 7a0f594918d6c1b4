use crate::error::{Error, Result};

/// Row-major 2D raster.
#[derive(Clone, Debug, PartialEq)]
pub struct Grid<T> {
    height: usize,
    width: usize,
    data: Vec<T>,
}

impl<T: Clone> Grid<T> {
    pub fn filled(height: usize, width: usize, value: T) -> Self {
        Self {
            height,
            width,
            data: vec![value; height * width],
        }
    }

    pub fn from_vec(height: usize, width: usize, data: Vec<T>) -> Result<Self> {
        if data.len() != height * width {
            return Err(Error::DimensionMismatch(format!(
                "{}x{} grid needs {} values, got {}",
                height,
                width,
                height * width,
                data.len()
            )));
        }
        Ok(Self {
            height,
            width,
            data,
        })
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn shape(&self) -> (usize, usize) {
        (self.height, self.width)
    }

    pub fn data(&self) -> &[T] {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut [T] {
        &mut self.data
    }

    pub fn into_vec(self) -> Vec<T> {
        self.data
    }

    #[inline]
    pub fn get(&self, row: usize, col: usize) -> &T {
        &self.data[row * self.width + col]
    }

    #[inline]
    pub fn set(&mut self, row: usize, col: usize, value: T) {
        self.data[row * self.width + col] = value;
    }

    pub fn map<U, F: FnMut(&T) -> U>(&self, f: F) -> Grid<U> {
        Grid {
            height: self.height,
            width: self.width,
            data: self.data.iter().map(f).collect(),
        }
    }

    /// Applies a square symmetry. Panics on non-square grids.
    pub fn transformed(&self, sym: Symmetry) -> Self {
        assert_eq!(self.height, self.width, "symmetries need a square grid");
        let n = self.height;
        let mut data = self.data.clone();
        for r in 0..n {
            for c in 0..n {
                let (r2, c2) = sym.map_cell(r, c, n);
                data[r2 * n + c2] = self.data[r * n + c].clone();
            }
        }
        Self {
            height: n,
            width: n,
            data,
        }
    }
}

/// 8-bit RGB raster, interleaved row-major (`H × W × 3`).
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct RgbImage {
    height: usize,
    width: usize,
    data: Vec<u8>,
}

impl RgbImage {
    pub const CHANNELS: usize = 3;

    pub fn filled(height: usize, width: usize, rgb: [u8; 3]) -> Self {
        let mut data = Vec::with_capacity(height * width * 3);
        for _ in 0..height * width {
            data.extend_from_slice(&rgb);
        }
        Self {
            height,
            width,
            data,
        }
    }

    pub fn from_raw(height: usize, width: usize, data: Vec<u8>) -> Result<Self> {
        if data.len() != height * width * 3 {
            return Err(Error::DimensionMismatch(format!(
                "{}x{}x3 image needs {} bytes, got {}",
                height,
                width,
                height * width * 3,
                data.len()
            )));
        }
        Ok(Self {
            height,
            width,
            data,
        })
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn shape(&self) -> (usize, usize) {
        (self.height, self.width)
    }

    pub fn as_raw(&self) -> &[u8] {
        &self.data
    }

    #[inline]
    pub fn pixel(&self, row: usize, col: usize) -> [u8; 3] {
        let i = (row * self.width + col) * 3;
        [self.data[i], self.data[i + 1], self.data[i + 2]]
    }

    #[inline]
    pub fn put_pixel(&mut self, row: usize, col: usize, rgb: [u8; 3]) {
        let i = (row * self.width + col) * 3;
        self.data[i..i + 3].copy_from_slice(&rgb);
    }

    pub fn transformed(&self, sym: Symmetry) -> Self {
        assert_eq!(self.height, self.width, "symmetries need a square image");
        let n = self.height;
        let mut out = self.clone();
        for r in 0..n {
            for c in 0..n {
                let (r2, c2) = sym.map_cell(r, c, n);
                out.put_pixel(r2, c2, self.pixel(r, c));
            }
        }
        out
    }
}

/// One of the eight symmetries of the square (dihedral group D4).
///
/// Stored as an integer orthogonal matrix acting on centred coordinates
/// `(u, v) = (2·col − (n−1), 2·row − (n−1))`, which keeps every mapping exact.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct Symmetry {
    m: [[i8; 2]; 2],
}

impl Symmetry {
    pub const IDENTITY: Symmetry = Symmetry {
        m: [[1, 0], [0, 1]],
    };
    /// Quarter turn: `(row, col) -> (n-1-col, row)`.
    pub const ROT90: Symmetry = Symmetry {
        m: [[0, 1], [-1, 0]],
    };
    /// Mirror across the vertical axis: `col -> n-1-col`.
    pub const FLIP: Symmetry = Symmetry {
        m: [[-1, 0], [0, 1]],
    };

    /// All eight elements: `ROT90^k ∘ FLIP^f` for `k in 0..4`, `f in {0,1}`.
    pub fn all() -> [Symmetry; 8] {
        let mut out = [Self::IDENTITY; 8];
        for (i, slot) in out.iter_mut().enumerate() {
            *slot = Self::from_index(i);
        }
        out
    }

    pub fn from_index(index: usize) -> Symmetry {
        let mut s = if index & 1 == 1 {
            Self::FLIP
        } else {
            Self::IDENTITY
        };
        for _ in 0..(index >> 1) % 4 {
            s = Self::ROT90.compose(s);
        }
        s
    }

    /// `self ∘ other`: apply `other` first.
    pub fn compose(self, other: Symmetry) -> Symmetry {
        let a = self.m;
        let b = other.m;
        let mut m = [[0i8; 2]; 2];
        for (i, row) in m.iter_mut().enumerate() {
            for (j, v) in row.iter_mut().enumerate() {
                *v = a[i][0] * b[0][j] + a[i][1] * b[1][j];
            }
        }
        Symmetry { m }
    }

    pub fn inverse(self) -> Symmetry {
        let m = self.m;
        Symmetry {
            m: [[m[0][0], m[1][0]], [m[0][1], m[1][1]]],
        }
    }

    /// Whether the symmetry swaps the row and column axes.
    pub fn swaps_axes(self) -> bool {
        self.m[0][0] == 0
    }

    fn apply_centered<T>(self, u: T, v: T) -> (T, T)
    where
        T: Copy + std::ops::Neg<Output = T> + std::ops::Add<Output = T> + Default,
    {
        let pick = |coef: i8, x: T| -> T {
            match coef {
                1 => x,
                -1 => -x,
                _ => T::default(),
            }
        };
        (
            pick(self.m[0][0], u) + pick(self.m[0][1], v),
            pick(self.m[1][0], u) + pick(self.m[1][1], v),
        )
    }

    pub fn map_cell(self, row: usize, col: usize, n: usize) -> (usize, usize) {
        let span = n as i64 - 1;
        let u = 2 * col as i64 - span;
        let v = 2 * row as i64 - span;
        let (u2, v2) = self.apply_centered(u, v);
        (((v2 + span) / 2) as usize, ((u2 + span) / 2) as usize)
    }

    /// Maps a continuous point `(x, y)` in a square of side `extent`.
    pub fn map_point(self, x: f64, y: f64, extent: f64) -> (f64, f64) {
        let (u2, v2) = self.apply_centered(2.0 * x - extent, 2.0 * y - extent);
        ((u2 + extent) / 2.0, (v2 + extent) / 2.0)
    }

    /// Maps a direction angle in degrees (measured from +x toward +y).
    pub fn map_angle_deg(self, deg: f64) -> f64 {
        let (dx, dy) = (deg.to_radians().cos(), deg.to_radians().sin());
        let (u, v) = self.apply_centered(dx, dy);
        v.atan2(u).to_degrees().rem_euclid(360.0)
    }
}
