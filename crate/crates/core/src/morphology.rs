//! Binary erosion, dilation and closing with small flat structuring elements.

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::Error;

/// Flat, origin-centred structuring element.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(try_from = "String", into = "String")]
pub enum StructElem {
    /// Offsets with `dx² + dy² <= r²`. Radius 1 is the 4-connected cross.
    Disk(usize),
    /// The full `(2r+1) x (2r+1)` square.
    Square(usize),
}

impl Default for StructElem {
    fn default() -> Self {
        StructElem::Disk(1)
    }
}

impl StructElem {
    pub fn radius(&self) -> usize {
        match *self {
            StructElem::Disk(r) | StructElem::Square(r) => r,
        }
    }

    /// Offsets `(dx, dy)` in row-major order.
    pub fn offsets(&self) -> Vec<(isize, isize)> {
        let r = self.radius() as isize;
        let mut out = Vec::new();
        for dy in -r..=r {
            for dx in -r..=r {
                let keep = match self {
                    StructElem::Disk(_) => dx * dx + dy * dy <= r * r,
                    StructElem::Square(_) => true,
                };
                if keep {
                    out.push((dx, dy));
                }
            }
        }
        out
    }
}

impl fmt::Display for StructElem {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            StructElem::Disk(r) => write!(f, "disk:{r}"),
            StructElem::Square(r) => write!(f, "square:{r}"),
        }
    }
}

impl FromStr for StructElem {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        let (shape, radius) = s
            .split_once(':')
            .ok_or_else(|| Error::Config(format!("structuring element {s:?}: expected shape:radius")))?;
        let radius: usize = radius
            .trim()
            .parse()
            .map_err(|_| Error::Config(format!("structuring element {s:?}: bad radius")))?;
        match shape.trim() {
            "disk" => Ok(StructElem::Disk(radius)),
            "square" => Ok(StructElem::Square(radius)),
            other => Err(Error::Config(format!("unknown structuring element shape {other:?}"))),
        }
    }
}

impl TryFrom<String> for StructElem {
    type Error = Error;

    fn try_from(s: String) -> Result<Self, Self::Error> {
        s.parse()
    }
}

impl From<StructElem> for String {
    fn from(e: StructElem) -> Self {
        e.to_string()
    }
}

/// Dense binary grid. Pixels outside the grid read as background.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct BinaryGrid {
    pub width: usize,
    pub height: usize,
    pub data: Vec<bool>,
}

impl BinaryGrid {
    pub fn new(width: usize, height: usize) -> Self {
        Self {
            width,
            height,
            data: vec![false; width * height],
        }
    }

    #[inline]
    pub fn get(&self, x: isize, y: isize) -> bool {
        if x < 0 || y < 0 || x as usize >= self.width || y as usize >= self.height {
            return false;
        }
        self.data[y as usize * self.width + x as usize]
    }

    #[inline]
    pub fn set(&mut self, x: usize, y: usize, v: bool) {
        self.data[y * self.width + x] = v;
    }

    pub fn count(&self) -> usize {
        self.data.iter().filter(|&&b| b).count()
    }

    pub fn erode(&self, elem: &StructElem) -> BinaryGrid {
        let offsets = elem.offsets();
        let mut out = BinaryGrid::new(self.width, self.height);
        for y in 0..self.height {
            for x in 0..self.width {
                if !self.data[y * self.width + x] {
                    continue;
                }
                let (xi, yi) = (x as isize, y as isize);
                if offsets.iter().all(|&(dx, dy)| self.get(xi + dx, yi + dy)) {
                    out.set(x, y, true);
                }
            }
        }
        out
    }

    pub fn dilate(&self, elem: &StructElem) -> BinaryGrid {
        let offsets = elem.offsets();
        let mut out = BinaryGrid::new(self.width, self.height);
        for y in 0..self.height {
            for x in 0..self.width {
                if !self.data[y * self.width + x] {
                    continue;
                }
                for &(dx, dy) in &offsets {
                    let (nx, ny) = (x as isize - dx, y as isize - dy);
                    if nx >= 0 && ny >= 0 && (nx as usize) < self.width && (ny as usize) < self.height
                    {
                        out.set(nx as usize, ny as usize, true);
                    }
                }
            }
        }
        out
    }

    /// Dilation followed by erosion. Content within `2r` of the grid edge is
    /// clipped by the dilation, so callers pad first when that matters.
    pub fn close(&self, elem: &StructElem) -> BinaryGrid {
        self.dilate(elem).erode(elem)
    }
}
