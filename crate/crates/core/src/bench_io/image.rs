use std::io::Write;
use std::path::Path;

use crate::grid::{Coord, GridMap};

use super::BenchError;

pub type Rgb = [u8; 3];

pub const OBSTACLE_COLOR: Rgb = [0, 0, 0];
pub const FREE_COLOR: Rgb = [255, 255, 255];
pub const AGENT_COLOR: Rgb = [31, 119, 180];
pub const GOAL_COLOR: Rgb = [214, 39, 40];

/// Raster of a map. Pixel row 0 is the top of the map (largest `y`).
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct MapImage {
    pub width: usize,
    pub height: usize,
    pub cell_size: usize,
    pub pixels: Vec<Rgb>,
}

impl MapImage {
    pub fn pixel(&self, px: usize, py: usize) -> Rgb {
        self.pixels[py * self.width + px]
    }

    pub fn to_png(&self) -> Vec<u8> {
        let mut out = Vec::new();
        {
            let mut enc = png::Encoder::new(&mut out, self.width as u32, self.height as u32);
            enc.set_color(png::ColorType::Rgb);
            enc.set_depth(png::BitDepth::Eight);
            let mut writer = enc.write_header().expect("png header to memory");
            let data: Vec<u8> = self.pixels.iter().flatten().copied().collect();
            writer.write_image_data(&data).expect("png data to memory");
        }
        out
    }

    pub fn write_png(&self, path: &Path) -> Result<(), BenchError> {
        let io = |source| BenchError::Io {
            path: path.display().to_string(),
            source,
        };
        let mut f = std::fs::File::create(path).map_err(io)?;
        f.write_all(&self.to_png()).map_err(io)
    }
}

pub fn render_image(map: &GridMap, cell_size: usize) -> MapImage {
    render_image_with_markers(map, cell_size, &[], &[])
}

/// Like [`render_image`], with agents drawn as filled inner squares and goals
/// as hollow ones.
pub fn render_image_with_markers(
    map: &GridMap,
    cell_size: usize,
    agents: &[Coord],
    goals: &[Coord],
) -> MapImage {
    let cell_size = cell_size.max(1);
    let width = map.width() * cell_size;
    let height = map.height() * cell_size;
    let mut pixels = vec![FREE_COLOR; width * height];
    let mut fill = |c: Coord, color: Rgb, inset: usize, hollow: bool| {
        let col = c.x as usize;
        let row = map.height() - 1 - c.y as usize;
        let (x0, y0) = (col * cell_size, row * cell_size);
        for dy in inset..cell_size - inset {
            for dx in inset..cell_size - inset {
                let edge = dx == inset || dy == inset || dx == cell_size - inset - 1 || dy == cell_size - inset - 1;
                if !hollow || edge {
                    pixels[(y0 + dy) * width + x0 + dx] = color;
                }
            }
        }
    };
    for c in map.obstacles() {
        fill(c, OBSTACLE_COLOR, 0, false);
    }
    let inset = cell_size / 4;
    for &g in goals.iter().filter(|&&g| map.in_bounds(g)) {
        fill(g, GOAL_COLOR, inset, true);
    }
    for &a in agents.iter().filter(|&&a| map.in_bounds(a)) {
        fill(a, AGENT_COLOR, inset, false);
    }
    MapImage {
        width,
        height,
        cell_size,
        pixels,
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn empty_2x2_dimensions() {
        let img = render_image(&GridMap::empty("e", 2, 2).unwrap(), 8);
        assert_eq!((img.width, img.height), (16, 16));
        assert!(img.pixels.iter().all(|&p| p == FREE_COLOR));
    }

    #[test]
    fn image_is_vertically_flipped() {
        let m = GridMap::new("m", 2, 3, [Coord::new(1, 2)]).unwrap();
        let img = render_image(&m, 2);
        // (1,2) is the top row -> pixel rows 0..2, columns 2..4
        assert_eq!(img.pixel(2, 0), OBSTACLE_COLOR);
        assert_eq!(img.pixel(3, 1), OBSTACLE_COLOR);
        assert_eq!(img.pixel(2, 5), FREE_COLOR);
        assert_eq!(img.height, m.height() * img.cell_size);
    }

    #[test]
    fn png_signature() {
        let png = render_image(&GridMap::empty("e", 3, 2).unwrap(), 4).to_png();
        assert_eq!(&png[..8], b"\x89PNG\r\n\x1a\n");
    }

    #[test]
    fn markers_drawn() {
        let m = GridMap::empty("e", 2, 1).unwrap();
        let img = render_image_with_markers(&m, 8, &[Coord::new(0, 0)], &[Coord::new(1, 0)]);
        assert_eq!(img.pixel(4, 4), AGENT_COLOR);
        assert_eq!(img.pixel(10, 2), GOAL_COLOR);
        assert_eq!(img.pixel(12, 4), FREE_COLOR);
    }
}
