//! Metric-registered 2-D rasters.
//!
//! A [`GridRaster`] stores one scalar per cell together with the affine
//! world<->cell registration (cell size in meters, world origin of cell
//! (0,0)). Binary and categorical channels round-trip through 8-bit PGM
//! (P5); continuous channels use a plain-text grid format whose header is
//! `width height cell_size origin_x origin_y` followed by row-major floats.

use std::fs;
use std::io::Write as _;
use std::path::Path;

use crate::error::{Error, Result};
use crate::geom::Vec2;

#[derive(Debug, Clone, PartialEq)]
pub struct GridRaster {
    width_cells: usize,
    height_cells: usize,
    cell_size: f64,
    origin: Vec2,
    values: Vec<f64>,
}

impl GridRaster {
    pub fn new(
        width_cells: usize,
        height_cells: usize,
        cell_size: f64,
        origin: Vec2,
        values: Vec<f64>,
    ) -> Result<Self> {
        if cell_size <= 0.0 || !cell_size.is_finite() {
            return Err(Error::Invalid(format!("cell_size must be > 0, got {cell_size}")));
        }
        if width_cells == 0 || height_cells == 0 {
            return Err(Error::Invalid("raster dimensions must be positive".into()));
        }
        if values.len() != width_cells * height_cells {
            return Err(Error::Shape(format!(
                "raster {}x{} needs {} values, got {}",
                width_cells,
                height_cells,
                width_cells * height_cells,
                values.len()
            )));
        }
        Ok(GridRaster {
            width_cells,
            height_cells,
            cell_size,
            origin,
            values,
        })
    }

    pub fn filled(
        width_cells: usize,
        height_cells: usize,
        cell_size: f64,
        origin: Vec2,
        value: f64,
    ) -> Result<Self> {
        let values = vec![value; width_cells * height_cells];
        GridRaster::new(width_cells, height_cells, cell_size, origin, values)
    }

    /// Zero raster with the same registration as `self`.
    pub fn zeros_like(&self) -> GridRaster {
        GridRaster {
            width_cells: self.width_cells,
            height_cells: self.height_cells,
            cell_size: self.cell_size,
            origin: self.origin,
            values: vec![0.0; self.values.len()],
        }
    }

    pub fn width_cells(&self) -> usize {
        self.width_cells
    }

    pub fn height_cells(&self) -> usize {
        self.height_cells
    }

    pub fn cell_size(&self) -> f64 {
        self.cell_size
    }

    pub fn origin(&self) -> Vec2 {
        self.origin
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn get(&self, cx: usize, cy: usize) -> f64 {
        debug_assert!(cx < self.width_cells && cy < self.height_cells);
        self.values[cy * self.width_cells + cx]
    }

    pub fn set(&mut self, cx: usize, cy: usize, v: f64) {
        debug_assert!(cx < self.width_cells && cy < self.height_cells);
        self.values[cy * self.width_cells + cx] = v;
    }

    /// Cell containing a world point, or `None` when outside the raster.
    pub fn cell_of(&self, p: Vec2) -> Option<(usize, usize)> {
        let fx = (p.x - self.origin.x) / self.cell_size;
        let fy = (p.y - self.origin.y) / self.cell_size;
        if fx < 0.0 || fy < 0.0 {
            return None;
        }
        let cx = fx.floor() as usize;
        let cy = fy.floor() as usize;
        if cx >= self.width_cells || cy >= self.height_cells {
            return None;
        }
        Some((cx, cy))
    }

    /// World coordinate of a cell center. Round-tripping through
    /// [`GridRaster::cell_of`] returns the same cell.
    pub fn cell_center(&self, cx: usize, cy: usize) -> Vec2 {
        Vec2::new(
            self.origin.x + (cx as f64 + 0.5) * self.cell_size,
            self.origin.y + (cy as f64 + 0.5) * self.cell_size,
        )
    }

    /// Value at the cell containing `p`, or `default` when outside.
    pub fn sample(&self, p: Vec2, default: f64) -> f64 {
        match self.cell_of(p) {
            Some((cx, cy)) => self.get(cx, cy),
            None => default,
        }
    }

    pub fn world_width(&self) -> f64 {
        self.width_cells as f64 * self.cell_size
    }

    pub fn world_height(&self) -> f64 {
        self.height_cells as f64 * self.cell_size
    }

    pub fn world_max(&self) -> Vec2 {
        Vec2::new(
            self.origin.x + self.world_width(),
            self.origin.y + self.world_height(),
        )
    }

    pub fn same_geometry(&self, other: &GridRaster) -> bool {
        self.width_cells == other.width_cells
            && self.height_cells == other.height_cells
            && (self.cell_size - other.cell_size).abs() < 1e-12
            && self.origin.dist(other.origin) < 1e-9
    }

    pub fn is_binary(&self) -> bool {
        self.values.iter().all(|&v| v == 0.0 || v == 1.0)
    }

    /// Write as binary 8-bit PGM (P5). Values must be integers in 0..=255.
    pub fn write_pgm(&self, path: &Path) -> Result<()> {
        let mut bytes = Vec::with_capacity(self.values.len() + 32);
        write!(
            bytes,
            "P5\n{} {}\n255\n",
            self.width_cells, self.height_cells
        )
        .expect("in-memory write");
        for &v in &self.values {
            if v < 0.0 || v > 255.0 || v.fract() != 0.0 {
                return Err(Error::Invalid(format!(
                    "PGM channels must hold integers in 0..=255, got {v}"
                )));
            }
            bytes.push(v as u8);
        }
        fs::write(path, bytes).map_err(|e| Error::io(path, e))
    }

    /// Read a binary 8-bit PGM written by [`GridRaster::write_pgm`]; the
    /// registration is not stored in the file and must be supplied.
    pub fn read_pgm(path: &Path, cell_size: f64, origin: Vec2) -> Result<Self> {
        let data = fs::read(path).map_err(|e| Error::io(path, e))?;
        let mut header = Vec::new();
        let mut pos = 0usize;
        // Three whitespace-separated header tokens after the magic.
        let mut token = String::new();
        let mut in_comment = false;
        if !data.starts_with(b"P5") {
            return Err(Error::parse(path, 1, "not a P5 PGM file"));
        }
        pos += 2;
        while header.len() < 3 && pos < data.len() {
            let c = data[pos] as char;
            pos += 1;
            if in_comment {
                if c == '\n' {
                    in_comment = false;
                }
                continue;
            }
            if c == '#' {
                in_comment = true;
                continue;
            }
            if c.is_ascii_whitespace() {
                if !token.is_empty() {
                    header.push(token.clone());
                    token.clear();
                }
            } else {
                token.push(c);
            }
        }
        if header.len() != 3 {
            return Err(Error::parse(path, 1, "truncated PGM header"));
        }
        let width: usize = header[0]
            .parse()
            .map_err(|_| Error::parse(path, 1, "bad PGM width"))?;
        let height: usize = header[1]
            .parse()
            .map_err(|_| Error::parse(path, 1, "bad PGM height"))?;
        let maxval: usize = header[2]
            .parse()
            .map_err(|_| Error::parse(path, 1, "bad PGM maxval"))?;
        if maxval == 0 || maxval > 255 {
            return Err(Error::parse(path, 1, "only 8-bit PGM supported"));
        }
        let pixels = &data[pos..];
        if pixels.len() < width * height {
            return Err(Error::parse(path, 1, "PGM pixel data truncated"));
        }
        let values = pixels[..width * height]
            .iter()
            .map(|&b| b as f64)
            .collect();
        GridRaster::new(width, height, cell_size, origin, values)
    }

    /// Write the plain-text grid format used for continuous channels.
    pub fn write_text(&self, path: &Path) -> Result<()> {
        let mut out = String::new();
        out.push_str(&format!(
            "{} {} {} {} {}\n",
            self.width_cells, self.height_cells, self.cell_size, self.origin.x, self.origin.y
        ));
        for row in 0..self.height_cells {
            let line: Vec<String> = (0..self.width_cells)
                .map(|col| format!("{}", self.get(col, row)))
                .collect();
            out.push_str(&line.join(" "));
            out.push('\n');
        }
        fs::write(path, out).map_err(|e| Error::io(path, e))
    }

    pub fn read_text(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let mut lines = text.lines().enumerate();
        let (_, header) = lines
            .next()
            .ok_or_else(|| Error::parse(path, 1, "empty grid file"))?;
        let parts: Vec<&str> = header.split_whitespace().collect();
        if parts.len() != 5 {
            return Err(Error::parse(
                path,
                1,
                "header must be `width height cell_size origin_x origin_y`",
            ));
        }
        let width: usize = parts[0]
            .parse()
            .map_err(|_| Error::parse(path, 1, "bad width"))?;
        let height: usize = parts[1]
            .parse()
            .map_err(|_| Error::parse(path, 1, "bad height"))?;
        let cell_size: f64 = parts[2]
            .parse()
            .map_err(|_| Error::parse(path, 1, "bad cell_size"))?;
        let ox: f64 = parts[3]
            .parse()
            .map_err(|_| Error::parse(path, 1, "bad origin_x"))?;
        let oy: f64 = parts[4]
            .parse()
            .map_err(|_| Error::parse(path, 1, "bad origin_y"))?;
        let mut values = Vec::with_capacity(width * height);
        for (idx, line) in lines {
            for tok in line.split_whitespace() {
                let v: f64 = tok
                    .parse()
                    .map_err(|_| Error::parse(path, idx + 1, format!("bad value `{tok}`")))?;
                values.push(v);
            }
        }
        GridRaster::new(width, height, cell_size, Vec2::new(ox, oy), values)
    }
}
