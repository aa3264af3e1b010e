//! Pixel-level screenshot comparison.
//!
//! The pipeline is purely algorithmic: a strict per-channel threshold mask,
//! square-window morphological dilation to connect nearby differences,
//! 8-connected component extraction with tight bounding boxes, an overlap
//! merge so boxes are pairwise disjoint, and annotation of both screenshots
//! with indexed outlines. The resulting [`ParsedInfo`] record is the
//! handoff format the detection stage feeds to the model verbatim.

use image::{Rgb, RgbImage};
use serde::{Deserialize, Serialize};

use crate::config::Geometry;
use crate::font;

/// Outline and label color used by [`annotate`]; magenta rarely occurs in
/// real GUI chrome, keeping annotations legible on screenshots.
pub const ANNOTATION_COLOR: Rgb<u8> = Rgb([255, 0, 255]);

/// Binary image mask. Row-major, dimensions fixed at construction.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Mask {
    width: u32,
    height: u32,
    bits: Vec<bool>,
}

impl Mask {
    pub fn new(width: u32, height: u32) -> Self {
        Self {
            width,
            height,
            bits: vec![false; (width as usize) * (height as usize)],
        }
    }

    pub fn width(&self) -> u32 {
        self.width
    }

    pub fn height(&self) -> u32 {
        self.height
    }

    #[inline]
    fn idx(&self, x: u32, y: u32) -> usize {
        debug_assert!(x < self.width && y < self.height);
        y as usize * self.width as usize + x as usize
    }

    #[inline]
    pub fn get(&self, x: u32, y: u32) -> bool {
        self.bits[self.idx(x, y)]
    }

    #[inline]
    pub fn set(&mut self, x: u32, y: u32, value: bool) {
        let i = self.idx(x, y);
        self.bits[i] = value;
    }

    pub fn count_ones(&self) -> u64 {
        self.bits.iter().filter(|b| **b).count() as u64
    }

    pub fn any(&self) -> bool {
        self.bits.iter().any(|b| *b)
    }

    /// Set-bit containment, the partial order used by the monotonicity
    /// properties.
    pub fn subset_of(&self, other: &Mask) -> bool {
        self.width == other.width
            && self.height == other.height
            && self
                .bits
                .iter()
                .zip(&other.bits)
                .all(|(a, b)| !*a || *b)
    }
}

/// Axis-aligned box, inclusive-exclusive on both axes.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct Bbox {
    pub x1: u32,
    pub y1: u32,
    pub x2: u32,
    pub y2: u32,
}

impl Bbox {
    pub fn width(&self) -> u32 {
        self.x2 - self.x1
    }

    pub fn height(&self) -> u32 {
        self.y2 - self.y1
    }

    pub fn contains(&self, x: u32, y: u32) -> bool {
        x >= self.x1 && x < self.x2 && y >= self.y1 && y < self.y2
    }

    fn intersects(&self, other: &Bbox) -> bool {
        self.x1 < other.x2 && other.x1 < self.x2 && self.y1 < other.y2 && other.y1 < self.y2
    }

    fn union(&self, other: &Bbox) -> Bbox {
        Bbox {
            x1: self.x1.min(other.x1),
            y1: self.y1.min(other.y1),
            x2: self.x2.max(other.x2),
            y2: self.y2.max(other.y2),
        }
    }
}

/// One connected difference region.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct DiffRegion {
    pub index: u32,
    pub bbox: Bbox,
    /// Differing (pre-dilation) pixels inside the box: boxes are generous,
    /// counts are honest.
    pub pixel_count: u64,
}

/// The structured comparison result for one executed step.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ParsedInfo {
    pub step_index: u32,
    pub regions: Vec<DiffRegion>,
    pub image_dims: Geometry,
    /// Set when the two screenshots had different dimensions; the
    /// non-overlapping band was treated as fully different.
    #[serde(default)]
    pub dimension_mismatch: bool,
}

impl ParsedInfo {
    pub fn is_empty(&self) -> bool {
        self.regions.is_empty()
    }
}

/// Computes the strict threshold mask: a bit is set iff the maximum
/// per-channel absolute difference exceeds `threshold`.
///
/// Images of unequal dimensions are compared over the shared top-left
/// overlap; everything outside it is marked different and the returned flag
/// is true. The mask spans the larger bound on each axis.
pub fn diff_mask(a: &RgbImage, b: &RgbImage, threshold: u8) -> (Mask, bool) {
    let mismatch = a.dimensions() != b.dimensions();
    let (w, h) = (a.width().max(b.width()), a.height().max(b.height()));
    let (ow, oh) = (a.width().min(b.width()), a.height().min(b.height()));
    let mut mask = Mask::new(w, h);
    for y in 0..h {
        for x in 0..w {
            let differs = if x < ow && y < oh {
                let pa = a.get_pixel(x, y).0;
                let pb = b.get_pixel(x, y).0;
                (0..3).any(|c| pa[c].abs_diff(pb[c]) > threshold)
            } else {
                true
            };
            mask.set(x, y, differs);
        }
    }
    (mask, mismatch)
}

/// Morphological dilation with a square structuring element of side
/// `2 * radius + 1`: an output bit is set iff any input bit is set within
/// Chebyshev distance `radius`. Separable two-pass implementation, linear in
/// the pixel count.
pub fn dilate(mask: &Mask, radius: u32) -> Mask {
    if radius == 0 || !mask.any() {
        return mask.clone();
    }
    let (w, h) = (mask.width, mask.height);
    let r = radius as i64;

    // Horizontal pass: sliding count of set bits in [x-r, x+r].
    let mut horizontal = Mask::new(w, h);
    for y in 0..h {
        let mut in_window: u32 = 0;
        for x in 0..(w as i64 + r) {
            if x < w as i64 && mask.get(x as u32, y) {
                in_window += 1;
            }
            let out = x - r; // the output column whose window just completed
            if out >= 0 && (out as u32) < w {
                horizontal.set(out as u32, y, in_window > 0);
            }
            let leaving = x - 2 * r; // column exiting the next window
            if leaving >= 0 && mask.get(leaving as u32, y) {
                in_window -= 1;
            }
        }
    }

    // Vertical pass over the horizontal result.
    let mut out = Mask::new(w, h);
    for x in 0..w {
        let mut in_window: u32 = 0;
        for y in 0..(h as i64 + r) {
            if y < h as i64 && horizontal.get(x, y as u32) {
                in_window += 1;
            }
            let row = y - r;
            if row >= 0 && (row as u32) < h {
                out.set(x, row as u32, in_window > 0);
            }
            let leaving = y - 2 * r;
            if leaving >= 0 && horizontal.get(x, leaving as u32) {
                in_window -= 1;
            }
        }
    }
    out
}

/// 8-connected components of `mask`, as tight bounding boxes merged until
/// pairwise disjoint (components with interleaving extents can produce
/// overlapping boxes; downstream consumers need each pixel to belong to
/// exactly one region).
fn merged_component_boxes(mask: &Mask) -> Vec<Bbox> {
    let (w, h) = (mask.width, mask.height);
    let mut visited = Mask::new(w, h);
    let mut boxes: Vec<Bbox> = Vec::new();
    let mut stack: Vec<(u32, u32)> = Vec::new();

    for y in 0..h {
        for x in 0..w {
            if !mask.get(x, y) || visited.get(x, y) {
                continue;
            }
            let mut bbox = Bbox {
                x1: x,
                y1: y,
                x2: x + 1,
                y2: y + 1,
            };
            visited.set(x, y, true);
            stack.push((x, y));
            while let Some((cx, cy)) = stack.pop() {
                bbox.x1 = bbox.x1.min(cx);
                bbox.y1 = bbox.y1.min(cy);
                bbox.x2 = bbox.x2.max(cx + 1);
                bbox.y2 = bbox.y2.max(cy + 1);
                for dy in -1i64..=1 {
                    for dx in -1i64..=1 {
                        if dx == 0 && dy == 0 {
                            continue;
                        }
                        let (nx, ny) = (cx as i64 + dx, cy as i64 + dy);
                        if nx < 0 || ny < 0 || nx >= w as i64 || ny >= h as i64 {
                            continue;
                        }
                        let (nx, ny) = (nx as u32, ny as u32);
                        if mask.get(nx, ny) && !visited.get(nx, ny) {
                            visited.set(nx, ny, true);
                            stack.push((nx, ny));
                        }
                    }
                }
            }
            boxes.push(bbox);
        }
    }
    merge_overlaps(boxes)
}

fn merge_overlaps(mut boxes: Vec<Bbox>) -> Vec<Bbox> {
    // Repeat whole passes until stable: a union can create an overlap with
    // a box that was already checked, including earlier ones.
    loop {
        let mut merged_any = false;
        let mut i = 0;
        while i < boxes.len() {
            let mut j = i + 1;
            while j < boxes.len() {
                if boxes[i].intersects(&boxes[j]) {
                    let other = boxes.swap_remove(j);
                    boxes[i] = boxes[i].union(&other);
                    merged_any = true;
                } else {
                    j += 1;
                }
            }
            i += 1;
        }
        if !merged_any {
            return boxes;
        }
    }
}

/// Components of `mask` as [`DiffRegion`]s with indices dense from 0 in
/// row-major order of box top-left corners, counting `mask`'s own bits.
pub fn extract_regions(mask: &Mask) -> Vec<DiffRegion> {
    regions_from_boxes(merged_component_boxes(mask), mask)
}

fn regions_from_boxes(mut boxes: Vec<Bbox>, count_source: &Mask) -> Vec<DiffRegion> {
    // Disjoint boxes cannot share a top-left pixel, so (y1, x1) is a total
    // deterministic order.
    boxes.sort_by_key(|b| (b.y1, b.x1));
    boxes
        .into_iter()
        .enumerate()
        .map(|(index, bbox)| {
            let mut pixel_count = 0u64;
            for y in bbox.y1..bbox.y2.min(count_source.height) {
                for x in bbox.x1..bbox.x2.min(count_source.width) {
                    if count_source.get(x, y) {
                        pixel_count += 1;
                    }
                }
            }
            DiffRegion {
                index: index as u32,
                bbox,
                pixel_count,
            }
        })
        .collect()
}

/// The full comparison pipeline for one step: threshold mask, dilation,
/// region extraction on the dilated mask, with pixel counts taken from the
/// un-dilated mask.
pub fn parse_diff(
    step_index: u32,
    a: &RgbImage,
    b: &RgbImage,
    threshold: u8,
    dilation_radius: u32,
) -> ParsedInfo {
    let (raw, dimension_mismatch) = diff_mask(a, b, threshold);
    let dilated = dilate(&raw, dilation_radius);
    let regions = regions_from_boxes(merged_component_boxes(&dilated), &raw);
    ParsedInfo {
        step_index,
        regions,
        image_dims: Geometry {
            width: raw.width(),
            height: raw.height(),
        },
        dimension_mismatch,
    }
}

/// Returns a copy of `image` with each region outlined (1 px) and labeled
/// with its index. Labels sit just above the box when there is room and are
/// pulled inside the image otherwise, so they never clip at edges.
pub fn annotate(image: &RgbImage, regions: &[DiffRegion]) -> RgbImage {
    let mut out = image.clone();
    let (w, h) = (image.width() as i64, image.height() as i64);
    for region in regions {
        let b = region.bbox;
        let (x2, y2) = (b.x2.min(out.width()), b.y2.min(out.height()));
        for x in b.x1..x2 {
            out.put_pixel(x, b.y1, ANNOTATION_COLOR);
            out.put_pixel(x, y2 - 1, ANNOTATION_COLOR);
        }
        for y in b.y1..y2 {
            out.put_pixel(b.x1, y, ANNOTATION_COLOR);
            out.put_pixel(x2 - 1, y, ANNOTATION_COLOR);
        }

        let label = region.index.to_string();
        let label_w = font::text_width(&label) as i64;
        let label_h = font::GLYPH_HEIGHT as i64;
        let mut lx = b.x1 as i64;
        let mut ly = b.y1 as i64 - label_h - 1;
        if ly < 0 {
            // No room above: render inside the box, clear of the outline.
            lx = b.x1 as i64 + 2;
            ly = b.y1 as i64 + 2;
        }
        lx = lx.min(w - label_w).max(0);
        ly = ly.min(h - label_h).max(0);
        font::draw_text(&mut out, lx, ly, &label, ANNOTATION_COLOR);
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn solid(w: u32, h: u32, rgb: [u8; 3]) -> RgbImage {
        RgbImage::from_pixel(w, h, Rgb(rgb))
    }

    // Brute-force reference implementations: no shared code with the real
    // pipeline beyond the Mask container.

    fn naive_mask(a: &RgbImage, b: &RgbImage, threshold: u8) -> Mask {
        let (w, h) = (a.width().max(b.width()), a.height().max(b.height()));
        let mut m = Mask::new(w, h);
        for y in 0..h {
            for x in 0..w {
                let v = if x < a.width() && y < a.height() && x < b.width() && y < b.height() {
                    let (pa, pb) = (a.get_pixel(x, y).0, b.get_pixel(x, y).0);
                    let d = (0..3)
                        .map(|c| (pa[c] as i32 - pb[c] as i32).unsigned_abs())
                        .max()
                        .unwrap();
                    d > threshold as u32
                } else {
                    true
                };
                m.set(x, y, v);
            }
        }
        m
    }

    fn naive_dilate(mask: &Mask, radius: u32) -> Mask {
        let (w, h) = (mask.width(), mask.height());
        let mut out = Mask::new(w, h);
        let r = radius as i64;
        for y in 0..h as i64 {
            for x in 0..w as i64 {
                let mut hit = false;
                for dy in -r..=r {
                    for dx in -r..=r {
                        let (nx, ny) = (x + dx, y + dy);
                        if nx >= 0
                            && ny >= 0
                            && nx < w as i64
                            && ny < h as i64
                            && mask.get(nx as u32, ny as u32)
                        {
                            hit = true;
                        }
                    }
                }
                out.set(x as u32, y as u32, hit);
            }
        }
        out
    }

    /// Flood-fill components, boxes, then an O(n^3) fixpoint merge.
    fn naive_regions(dilated: &Mask, count_source: &Mask) -> Vec<DiffRegion> {
        let (w, h) = (dilated.width(), dilated.height());
        let mut seen = Mask::new(w, h);
        let mut boxes = Vec::new();
        for y in 0..h {
            for x in 0..w {
                if !dilated.get(x, y) || seen.get(x, y) {
                    continue;
                }
                let mut queue = std::collections::VecDeque::from([(x, y)]);
                seen.set(x, y, true);
                let (mut x1, mut y1, mut x2, mut y2) = (x, y, x + 1, y + 1);
                while let Some((cx, cy)) = queue.pop_front() {
                    x1 = x1.min(cx);
                    y1 = y1.min(cy);
                    x2 = x2.max(cx + 1);
                    y2 = y2.max(cy + 1);
                    for dy in -1i64..=1 {
                        for dx in -1i64..=1 {
                            let (nx, ny) = (cx as i64 + dx, cy as i64 + dy);
                            if nx >= 0 && ny >= 0 && (nx as u32) < w && (ny as u32) < h {
                                let (nx, ny) = (nx as u32, ny as u32);
                                if dilated.get(nx, ny) && !seen.get(nx, ny) {
                                    seen.set(nx, ny, true);
                                    queue.push_back((nx, ny));
                                }
                            }
                        }
                    }
                }
                boxes.push(Bbox { x1, y1, x2, y2 });
            }
        }
        // Fixpoint merge: restart from scratch after every union.
        'merge: loop {
            for i in 0..boxes.len() {
                for j in (i + 1)..boxes.len() {
                    if boxes[i].intersects(&boxes[j]) {
                        let b = boxes.remove(j);
                        boxes[i] = boxes[i].union(&b);
                        continue 'merge;
                    }
                }
            }
            break;
        }
        boxes.sort_by_key(|b| (b.y1, b.x1));
        boxes
            .into_iter()
            .enumerate()
            .map(|(i, bbox)| {
                let mut n = 0;
                for yy in bbox.y1..bbox.y2 {
                    for xx in bbox.x1..bbox.x2 {
                        if count_source.get(xx, yy) {
                            n += 1;
                        }
                    }
                }
                DiffRegion {
                    index: i as u32,
                    bbox,
                    pixel_count: n,
                }
            })
            .collect()
    }

    #[test]
    fn identical_images_yield_empty_mask() {
        let a = solid(8, 8, [10, 20, 30]);
        let (mask, mismatch) = diff_mask(&a, &a.clone(), 30);
        assert!(!mask.any());
        assert!(!mismatch);
    }

    #[test]
    fn threshold_is_strict() {
        let a = solid(5, 5, [100, 100, 100]);
        let mut b30 = a.clone();
        b30.put_pixel(2, 2, Rgb([130, 100, 100])); // delta exactly 30
        let (mask, _) = diff_mask(&a, &b30, 30);
        assert_eq!(mask.count_ones(), 0, "delta == threshold must not fire");

        let mut b31 = a.clone();
        b31.put_pixel(2, 2, Rgb([131, 100, 100])); // delta 31
        let (mask, _) = diff_mask(&a, &b31, 30);
        assert_eq!(mask.count_ones(), 1);
        assert!(mask.get(2, 2));
    }

    #[test]
    fn dilation_radius_zero_is_identity() {
        let mut m = Mask::new(6, 6);
        m.set(1, 1, true);
        m.set(4, 3, true);
        assert_eq!(dilate(&m, 0), m);
    }

    #[test]
    fn dilation_connects_pixels_within_reach() {
        // Two set pixels 4 apart horizontally: radius 2 windows meet.
        let mut m = Mask::new(12, 3);
        m.set(2, 1, true);
        m.set(6, 1, true);
        let d = dilate(&m, 2);
        let regions = extract_regions(&d);
        assert_eq!(regions.len(), 1);
    }

    #[test]
    fn empty_mask_has_no_regions() {
        assert!(extract_regions(&Mask::new(10, 10)).is_empty());
        assert_eq!(dilate(&Mask::new(10, 10), 3), Mask::new(10, 10));
    }

    #[test]
    fn disjoint_blobs_box_separately() {
        let mut m = Mask::new(20, 20);
        for y in 2..5 {
            for x in 2..5 {
                m.set(x, y, true);
            }
        }
        for y in 12..15 {
            for x in 12..15 {
                m.set(x, y, true);
            }
        }
        let regions = extract_regions(&m);
        assert_eq!(regions.len(), 2);
        assert_eq!(
            regions[0].bbox,
            Bbox { x1: 2, y1: 2, x2: 5, y2: 5 }
        );
        assert_eq!(
            regions[1].bbox,
            Bbox { x1: 12, y1: 12, x2: 15, y2: 15 }
        );
        assert_eq!(regions[0].pixel_count, 9);
        assert_eq!(regions[0].index, 0);
        assert_eq!(regions[1].index, 1);
    }

    #[test]
    fn full_screen_divergence_is_one_region_spanning_the_image() {
        let a = solid(40, 30, [0, 0, 0]);
        let b = solid(40, 30, [255, 255, 255]);
        let info = parse_diff(0, &a, &b, 30, 3);
        assert_eq!(info.regions.len(), 1);
        let r = info.regions[0];
        assert_eq!(r.index, 0);
        assert_eq!(r.bbox, Bbox { x1: 0, y1: 0, x2: 40, y2: 30 });
        assert_eq!(r.pixel_count, 40 * 30);
    }

    #[test]
    fn dimension_mismatch_marks_band_and_flags() {
        let a = solid(10, 10, [5, 5, 5]);
        let b = solid(10, 14, [5, 5, 5]);
        let info = parse_diff(0, &a, &b, 30, 0);
        assert!(info.dimension_mismatch);
        assert_eq!(info.image_dims, Geometry { width: 10, height: 14 });
        // Only the 10x4 band differs.
        let total: u64 = info.regions.iter().map(|r| r.pixel_count).sum();
        assert_eq!(total, 40);
    }

    #[test]
    fn annotate_without_regions_is_identity() {
        let a = solid(16, 16, [1, 2, 3]);
        assert_eq!(annotate(&a, &[]), a);
    }

    #[test]
    fn annotate_recolors_exactly_perimeter_plus_label() {
        let img = solid(64, 64, [0, 0, 0]);
        let region = DiffRegion {
            index: 0,
            bbox: Bbox { x1: 10, y1: 20, x2: 30, y2: 40 },
            pixel_count: 1,
        };
        let out = annotate(&img, &[region]);
        let recolored = out
            .pixels()
            .zip(img.pixels())
            .filter(|(a, b)| a != b)
            .count() as u32;
        let (w, h) = (20, 20);
        let perimeter = w * h - (w - 2) * (h - 2);
        assert_eq!(recolored, perimeter + font::text_pixel_count("0"));
    }

    #[test]
    fn annotate_keeps_label_inside_image_at_edges() {
        let img = solid(32, 32, [0, 0, 0]);
        // Box touching the top edge: no room above, so the label moves
        // inside the box. Tall enough that it clears the bottom border.
        let region = DiffRegion {
            index: 7,
            bbox: Bbox { x1: 0, y1: 0, x2: 32, y2: 20 },
            pixel_count: 1,
        };
        let out = annotate(&img, &[region]);
        let painted = out
            .pixels()
            .filter(|p| p.0 == ANNOTATION_COLOR.0)
            .count() as u32;
        let perimeter = 32 * 20 - 30 * 18;
        // Exact count proves the label rendered fully inside the image
        // rather than clipping above it.
        assert_eq!(painted, perimeter + font::glyph_pixel_count('7'));
    }

    #[test]
    fn parse_diff_round_trips_through_serde() {
        let a = solid(12, 12, [0, 0, 0]);
        let mut b = a.clone();
        b.put_pixel(3, 3, Rgb([255, 255, 255]));
        let info = parse_diff(4, &a, &b, 30, 2);
        let json = serde_json::to_string(&info).unwrap();
        assert_eq!(serde_json::from_str::<ParsedInfo>(&json).unwrap(), info);
    }

    prop_compose! {
        fn arb_image(max_side: u32)(w in 1..=max_side, h in 1..=max_side)
            (pixels in proptest::collection::vec(0u8..=255, (w * h * 3) as usize),
             w in Just(w), h in Just(h))
            -> RgbImage {
            RgbImage::from_raw(w, h, pixels).expect("sized buffer")
        }
    }

    // A pair of same-sized images that differ in a bounded number of
    // pixels, so thresholds and dilation actually interact.
    prop_compose! {
        fn arb_pair()(base in arb_image(48))
            (edits in proptest::collection::vec(
                (0u32..base.width(), 0u32..base.height(), proptest::array::uniform3(0u8..=255)),
                0..40,
             ),
             base in Just(base))
            -> (RgbImage, RgbImage) {
            let mut other = base.clone();
            for (x, y, rgb) in edits {
                other.put_pixel(x, y, Rgb(rgb));
            }
            (base, other)
        }
    }

    proptest! {
        #[test]
        fn mask_matches_naive_and_is_symmetric(
            (a, b) in arb_pair(), threshold in 0u8..=255
        ) {
            let (mask, _) = diff_mask(&a, &b, threshold);
            prop_assert_eq!(&mask, &naive_mask(&a, &b, threshold));
            let (swapped, _) = diff_mask(&b, &a, threshold);
            prop_assert_eq!(&mask, &swapped);
        }

        #[test]
        fn threshold_monotone(
            (a, b) in arb_pair(), t1 in 0u8..=255, t2 in 0u8..=255
        ) {
            let (lo, hi) = (t1.min(t2), t1.max(t2));
            let (mask_hi, _) = diff_mask(&a, &b, hi);
            let (mask_lo, _) = diff_mask(&a, &b, lo);
            prop_assert!(mask_hi.subset_of(&mask_lo));
        }

        #[test]
        fn dilation_matches_naive_and_is_extensive(
            (a, b) in arb_pair(), threshold in 0u8..=80, radius in 0u32..=4
        ) {
            let (mask, _) = diff_mask(&a, &b, threshold);
            let fast = dilate(&mask, radius);
            prop_assert_eq!(&fast, &naive_dilate(&mask, radius));
            prop_assert!(mask.subset_of(&fast));
            let bigger = dilate(&mask, radius + 1);
            prop_assert!(fast.subset_of(&bigger));
        }

        #[test]
        fn full_pipeline_matches_brute_force(
            (a, b) in arb_pair(), threshold in 0u8..=120, radius in 0u32..=4
        ) {
            let info = parse_diff(0, &a, &b, threshold, radius);
            let raw = naive_mask(&a, &b, threshold);
            let expected = naive_regions(&naive_dilate(&raw, radius), &raw);
            prop_assert_eq!(&info.regions, &expected);
        }

        #[test]
        fn region_soundness(
            (a, b) in arb_pair(), threshold in 0u8..=120, radius in 0u32..=4
        ) {
            let info = parse_diff(0, &a, &b, threshold, radius);
            let (raw, _) = diff_mask(&a, &b, threshold);
            // Every differing pixel lies in exactly one region's box.
            for y in 0..raw.height() {
                for x in 0..raw.width() {
                    if raw.get(x, y) {
                        let owners = info.regions.iter()
                            .filter(|r| r.bbox.contains(x, y))
                            .count();
                        prop_assert_eq!(owners, 1, "pixel ({}, {})", x, y);
                    }
                }
            }
            let total: u64 = info.regions.iter().map(|r| r.pixel_count).sum();
            prop_assert_eq!(total, raw.count_ones());
            // Boxes pairwise disjoint.
            for (i, r) in info.regions.iter().enumerate() {
                prop_assert_eq!(r.index as usize, i);
                for s in &info.regions[i + 1..] {
                    prop_assert!(!r.bbox.intersects(&s.bbox));
                }
            }
        }
    }
}
