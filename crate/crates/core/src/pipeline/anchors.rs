use std::f64::consts::FRAC_PI_2;

use crate::geometry::Box3D;
use crate::scene::EncoderConfig;

use super::ObjectClass;

/// Anchor yaws tiled at every BEV cell.
pub const ANCHOR_YAWS: [f64; 2] = [0.0, FRAC_PI_2];

/// Anchors for every BEV cell, class and yaw. Rows are cell-major, then
/// class, then yaw, which is the row order of the reshaped RPN output.
#[derive(Debug, Clone)]
pub struct AnchorGrid {
    pub boxes: Vec<Box3D>,
    pub classes: Vec<ObjectClass>,
    pub cells: usize,
}

impl AnchorGrid {
    pub const PER_CELL: usize = ObjectClass::ALL.len() * ANCHOR_YAWS.len();

    /// Anchors sit on the ground plane at `ground_z`, centered on each BEV cell.
    pub fn new(enc: &EncoderConfig, sizes: &[[f64; 3]; 3], ground_z: f64) -> Self {
        let [h, w, _] = enc.bev_dims();
        let cell = enc.bev_cell_size();
        let mut boxes = Vec::with_capacity(h * w * Self::PER_CELL);
        let mut classes = Vec::with_capacity(boxes.capacity());
        for ix in 0..h {
            for iy in 0..w {
                let x = enc.range_min[0] + (ix as f64 + 0.5) * cell[0];
                let y = enc.range_min[1] + (iy as f64 + 0.5) * cell[1];
                for class in ObjectClass::ALL {
                    let [bh, bw, bl] = sizes[class.index()];
                    for yaw in ANCHOR_YAWS {
                        boxes.push(Box3D {
                            x,
                            y,
                            z: ground_z + 0.5 * bh,
                            h: bh,
                            w: bw,
                            l: bl,
                            theta: yaw,
                        });
                        classes.push(class);
                    }
                }
            }
        }
        Self {
            boxes,
            classes,
            cells: h * w,
        }
    }

    pub fn len(&self) -> usize {
        self.boxes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.boxes.is_empty()
    }

    pub fn of_class(&self, class: ObjectClass) -> Vec<usize> {
        (0..self.len())
            .filter(|&i| self.classes[i] == class)
            .collect()
    }
}
