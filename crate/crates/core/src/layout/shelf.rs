//! Row-by-row placement of boxes on a plate.
//!
//! Boxes go left to right along x until the next one would run past the
//! plate's width; then a new row opens further along z, offset by the deepest
//! box of the row just closed.

use std::cmp::Reverse;

use crate::ids::InstanceId;

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ShelfItem {
    pub instance_id: InstanceId,
    pub width_x: u32,
    pub depth_z: u32,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ShelfPosition {
    pub instance_id: InstanceId,
    pub pos_x: u32,
    pub pos_z: u32,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ShelfLayout {
    /// In placement order.
    pub positions: Vec<ShelfPosition>,
    /// Some box reaches past the plate's depth.
    pub overcommitted: bool,
}

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
#[error("instance {instance_id} is {width_x} cells wide but the plate is only {plate_width}")]
pub struct TooWide {
    pub instance_id: InstanceId,
    pub width_x: u32,
    pub plate_width: u32,
}

/// Placement order: deepest first, then widest, then by id.
pub fn canonical_order(items: &mut [ShelfItem]) {
    items.sort_by(|a, b| {
        (Reverse(a.depth_z), Reverse(a.width_x), &a.instance_id)
            .cmp(&(Reverse(b.depth_z), Reverse(b.width_x), &b.instance_id))
    });
}

pub fn shelve(
    plate_width: u32,
    plate_depth: u32,
    mut items: Vec<ShelfItem>,
) -> Result<ShelfLayout, TooWide> {
    if let Some(wide) = items.iter().find(|i| i.width_x > plate_width) {
        return Err(TooWide {
            instance_id: wide.instance_id.clone(),
            width_x: wide.width_x,
            plate_width,
        });
    }
    canonical_order(&mut items);

    let mut positions = Vec::with_capacity(items.len());
    let mut overcommitted = false;
    let (mut cursor_x, mut row_z, mut row_depth) = (0u32, 0u32, 0u32);
    for item in items {
        if cursor_x + item.width_x > plate_width {
            row_z += row_depth;
            cursor_x = 0;
            row_depth = 0;
        }
        positions.push(ShelfPosition { instance_id: item.instance_id, pos_x: cursor_x, pos_z: row_z });
        cursor_x += item.width_x;
        row_depth = row_depth.max(item.depth_z);
        overcommitted |= row_z + item.depth_z > plate_depth;
    }
    Ok(ShelfLayout { positions, overcommitted })
}
