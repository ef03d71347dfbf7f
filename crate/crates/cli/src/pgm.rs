//! Greyscale PGM input (P2 ASCII, P5 binary).

use std::path::Path;

use transflow_core::grid::{Field, GridSpec};

use crate::CliError;

#[derive(Debug, Clone, PartialEq)]
pub struct Image {
    pub width: usize,
    pub height: usize,
    /// Row-major, top row first, scaled to `[0,1]`.
    pub values: Vec<f64>,
}

fn malformed(msg: impl Into<String>) -> CliError {
    CliError::MalformedPgm(msg.into())
}

/// Header tokens are whitespace separated; `#` starts a comment running to
/// the end of the line.
struct Header<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> Header<'a> {
    fn token(&mut self) -> Result<&'a str, CliError> {
        loop {
            while self.pos < self.bytes.len() && self.bytes[self.pos].is_ascii_whitespace() {
                self.pos += 1;
            }
            if self.pos < self.bytes.len() && self.bytes[self.pos] == b'#' {
                while self.pos < self.bytes.len() && self.bytes[self.pos] != b'\n' {
                    self.pos += 1;
                }
                continue;
            }
            break;
        }
        let start = self.pos;
        while self.pos < self.bytes.len() && !self.bytes[self.pos].is_ascii_whitespace() {
            self.pos += 1;
        }
        if start == self.pos {
            return Err(malformed("unexpected end of file"));
        }
        std::str::from_utf8(&self.bytes[start..self.pos]).map_err(|_| malformed("non-ASCII header"))
    }

    fn number(&mut self, what: &str) -> Result<usize, CliError> {
        let t = self.token()?;
        t.parse().map_err(|_| malformed(format!("bad {what}: {t:?}")))
    }
}

pub fn parse_pgm(bytes: &[u8]) -> Result<Image, CliError> {
    let mut h = Header { bytes, pos: 0 };
    let magic = h.token()?;
    let binary = match magic {
        "P2" => false,
        "P5" => true,
        other => return Err(malformed(format!("unsupported magic number {other:?}"))),
    };
    let width = h.number("width")?;
    let height = h.number("height")?;
    let maxval = h.number("maxval")?;
    if width == 0 || height == 0 {
        return Err(malformed("empty image"));
    }
    if maxval == 0 || maxval > 65535 {
        return Err(malformed(format!("maxval {maxval} outside 1..=65535")));
    }
    let count = width * height;
    let raw: Vec<usize> = if binary {
        // exactly one whitespace byte separates the header from the raster
        let start = h.pos + 1;
        let wide = maxval > 255;
        let need = count * if wide { 2 } else { 1 };
        let data = bytes.get(start..start + need).ok_or_else(|| malformed("raster is truncated"))?;
        if wide {
            data.chunks_exact(2).map(|b| u16::from_be_bytes([b[0], b[1]]) as usize).collect()
        } else {
            data.iter().map(|&b| b as usize).collect()
        }
    } else {
        (0..count).map(|_| h.number("sample")).collect::<Result<_, _>>()?
    };
    if let Some(v) = raw.iter().find(|&&v| v > maxval) {
        return Err(malformed(format!("sample {v} exceeds maxval {maxval}")));
    }
    Ok(Image {
        width,
        height,
        values: raw.into_iter().map(|v| v as f64 / maxval as f64).collect(),
    })
}

pub fn read_pgm(path: &Path) -> Result<Image, CliError> {
    let bytes = std::fs::read(path).map_err(|e| CliError::Io {
        path: path.to_path_buf(),
        source: e,
    })?;
    parse_pgm(&bytes).map_err(|e| match e {
        CliError::MalformedPgm(m) => CliError::MalformedPgm(format!("{}: {m}", path.display())),
        e => e,
    })
}

impl Image {
    /// Nearest-neighbour resample to `width × height`.
    pub fn resample(&self, width: usize, height: usize) -> Image {
        let pick = |i: usize, n: usize, m: usize| ((i as f64 + 0.5) * m as f64 / n as f64) as usize;
        let mut values = Vec::with_capacity(width * height);
        for j in 0..height {
            let sj = pick(j, height, self.height).min(self.height - 1);
            for i in 0..width {
                let si = pick(i, width, self.width).min(self.width - 1);
                values.push(self.values[sj * self.width + si]);
            }
        }
        Image { width, height, values }
    }

    /// Row `j` of the image becomes grid row `j`. Images of a different size
    /// are resampled (with a warning on stderr) if `resample` is set.
    pub fn to_field(&self, grid: &GridSpec, time_index: usize, resample: bool) -> Result<Field, CliError> {
        let img = if (self.width, self.height) == (grid.n_x, grid.n_y) {
            self.clone()
        } else if resample {
            eprintln!(
                "warning: resampling {}x{} image to the {}x{} grid",
                self.width, self.height, grid.n_x, grid.n_y
            );
            self.resample(grid.n_x, grid.n_y)
        } else {
            return Err(CliError::DimensionMismatch {
                image: (self.width, self.height),
                grid: (grid.n_x, grid.n_y),
            });
        };
        Ok(Field::new(*grid, time_index, img.values).expect("sizes agree"))
    }
}

pub fn load_image(path: &Path, grid: &GridSpec, time_index: usize, resample: bool) -> Result<Field, CliError> {
    read_pgm(path)?.to_field(grid, time_index, resample)
}
