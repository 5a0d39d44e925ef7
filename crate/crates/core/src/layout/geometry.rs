//! Grid sizes for plates and boxes.
//!
//! One grid cell stands for one VCPU. A box's volume is its RAM in units of
//! 512 MB, so the smallest stock flavour is the 1×1×1 unit box.

use crate::model::FlavourSpec;

/// RAM represented by one unit of box volume.
pub const RAM_MB_PER_VOLUME_UNIT: f64 = 512.0;

/// Boxes are never flatter than this, whatever their RAM.
pub const MIN_BOX_HEIGHT: f64 = 0.25;

/// Most-square divisor pair of `cells`: `(width, depth)` with
/// `width * depth == cells` and `depth` the largest divisor not above √cells.
pub fn grid_dimensions(cells: u32) -> (u32, u32) {
    let cells = cells.max(1);
    let mut depth = 1;
    let mut d = 1u32;
    while (d as u64) * (d as u64) <= cells as u64 {
        if cells % d == 0 {
            depth = d;
        }
        d += 1;
    }
    (cells / depth, depth)
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Footprint {
    pub width_x: u32,
    pub depth_z: u32,
    pub height_y: f64,
}

impl Footprint {
    pub fn area(&self) -> u32 {
        self.width_x * self.depth_z
    }

    pub fn volume(&self) -> f64 {
        self.area() as f64 * self.height_y
    }
}

pub fn footprint(flavour: &FlavourSpec) -> Footprint {
    let (width_x, depth_z) = grid_dimensions(flavour.vcpus);
    let height = flavour.ram_mb as f64 / (RAM_MB_PER_VOLUME_UNIT * flavour.vcpus.max(1) as f64);
    Footprint { width_x, depth_z, height_y: height.max(MIN_BOX_HEIGHT) }
}
