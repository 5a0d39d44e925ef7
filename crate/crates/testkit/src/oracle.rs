//! Brute-force checkers.

/// A placed rectangle as seen by the checkers: `(id, width, depth, x, z)`.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Rect {
    pub id: String,
    pub w: u32,
    pub d: u32,
    pub x: u32,
    pub z: u32,
}

pub fn overlaps(a: &Rect, b: &Rect) -> bool {
    a.x < b.x + b.w && b.x < a.x + a.w && a.z < b.z + b.d && b.z < a.z + a.d
}

/// Every pair of rectangles, checked directly.
pub fn overlapping_pairs(rects: &[Rect]) -> Vec<(String, String)> {
    let mut out = Vec::new();
    for i in 0..rects.len() {
        for j in (i + 1)..rects.len() {
            if overlaps(&rects[i], &rects[j]) {
                out.push((rects[i].id.clone(), rects[j].id.clone()));
            }
        }
    }
    out
}

/// Checks one plate's placement against the row rules:
///
/// * visiting boxes by (depth desc, width desc, id asc), each row starts at
///   x = 0 and boxes abut left to right;
/// * a row is only closed when the next box would not fit in what remains;
/// * a new row sits at the previous row's z plus that row's deepest box;
/// * nothing pokes out along x, and `overcommitted` is exactly "some box
///   extends past the plate's depth".
pub fn check_rows(
    plate_w: u32,
    plate_d: u32,
    rects: &[Rect],
    overcommitted: bool,
) -> Result<(), String> {
    let pairs = overlapping_pairs(rects);
    if !pairs.is_empty() {
        return Err(format!("overlapping footprints: {pairs:?}"));
    }
    let mut order: Vec<&Rect> = rects.iter().collect();
    order.sort_by(|a, b| b.d.cmp(&a.d).then(b.w.cmp(&a.w)).then(a.id.cmp(&b.id)));

    let mut row_z = 0u32;
    let mut row_depth = 0u32;
    let mut used = 0u32;
    let mut first = true;
    let mut expect_over = false;
    for r in order {
        if r.x + r.w > plate_w {
            return Err(format!("{} runs past the plate width", r.id));
        }
        if first {
            if (r.x, r.z) != (0, 0) {
                return Err(format!("first box {} is not at the origin", r.id));
            }
            first = false;
        } else if r.z == row_z {
            if r.x != used {
                return Err(format!("{} at x={} but the row is filled to {used}", r.id, r.x));
            }
        } else {
            if used + r.w <= plate_w {
                return Err(format!("{} opened a new row although it fit in the current one", r.id));
            }
            if r.z != row_z + row_depth || r.x != 0 {
                return Err(format!(
                    "{} opened a row at ({}, {}), expected (0, {})",
                    r.id,
                    r.x,
                    r.z,
                    row_z + row_depth
                ));
            }
            row_z = r.z;
            row_depth = 0;
            used = 0;
        }
        used += r.w;
        row_depth = row_depth.max(r.d);
        expect_over |= r.z + r.d > plate_d;
    }
    if expect_over != overcommitted {
        return Err(format!("overcommitted flag {overcommitted}, expected {expect_over}"));
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    fn r(id: &str, w: u32, d: u32, x: u32, z: u32) -> Rect {
        Rect { id: id.into(), w, d, x, z }
    }

    #[test]
    fn detects_overlap() {
        assert!(overlaps(&r("a", 2, 2, 0, 0), &r("b", 1, 1, 1, 1)));
        assert!(!overlaps(&r("a", 2, 2, 0, 0), &r("b", 1, 1, 2, 0)));
        assert!(!overlaps(&r("a", 2, 2, 0, 0), &r("b", 1, 1, 0, 2)));
    }

    #[test]
    fn accepts_hand_placed_rows() {
        let rects = [r("a", 4, 2, 0, 0), r("b", 4, 2, 4, 0), r("c", 4, 2, 0, 2)];
        assert_eq!(check_rows(8, 4, &rects, false), Ok(()));
        assert!(check_rows(8, 4, &rects, true).is_err());
    }

    #[test]
    fn rejects_premature_row_break() {
        let rects = [r("a", 4, 2, 0, 0), r("b", 2, 2, 0, 2)];
        assert!(check_rows(8, 4, &rects, false).is_err());
    }
}
