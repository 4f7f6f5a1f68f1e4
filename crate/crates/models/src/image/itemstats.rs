use std::collections::BTreeMap;

use crate::error::{ModelError, Result};
use crate::image::gradmap::GradientMap;

/// Canonical item categories for visual content annotation.
pub const ITEM_CATEGORIES: [&str; 7] = [
    "Persons",
    "ClothesAccessories",
    "HomeKitchen",
    "Animal",
    "OtherObjects",
    "PackagedGoods",
    "BrandLogos",
];

pub fn is_item_category(name: &str) -> bool {
    ITEM_CATEGORIES.contains(&name)
}

/// Axis-aligned annotation box: origin inclusive, max exclusive, in pixels
/// of the full-resolution frame.
#[derive(Clone, Debug, PartialEq)]
pub struct ItemBox {
    pub category: String,
    pub x0: usize,
    pub y0: usize,
    pub x1: usize,
    pub y1: usize,
}

impl ItemBox {
    pub fn new(category: &str, x0: usize, y0: usize, x1: usize, y1: usize) -> Result<Self> {
        if !is_item_category(category) {
            return Err(ModelError::bad_input(
                "item_box",
                format!("unknown category {category:?}"),
            ));
        }
        if x0 >= x1 || y0 >= y1 {
            return Err(ModelError::bad_input(
                "item_box",
                format!("empty box ({x0},{y0})..({x1},{y1})"),
            ));
        }
        Ok(ItemBox { category: category.to_string(), x0, y0, x1, y1 })
    }

    pub fn area(&self) -> usize {
        (self.x1 - self.x0) * (self.y1 - self.y0)
    }

    fn check_bounds(&self, width: usize, height: usize) -> Result<()> {
        if self.x1 > width || self.y1 > height {
            return Err(ModelError::bad_input(
                "item_box",
                format!(
                    "box ({},{})..({},{}) exceeds {width}x{height} frame",
                    self.x0, self.y0, self.x1, self.y1
                ),
            ));
        }
        Ok(())
    }
}

/// Per-category attention statistics for one frame.
#[derive(Clone, Debug)]
pub struct FrameItemStats {
    /// Mean gradient-map value over the union of the category's boxes.
    pub mean_gradient: BTreeMap<String, f64>,
    /// Summed raw box area as a percentage of the frame. Overlapping boxes
    /// of the same category count twice by design: size reflects annotation
    /// effort, not unique coverage.
    pub size_pct: BTreeMap<String, f64>,
}

/// Mean gradient uses the pixel union of a category's boxes so that
/// splitting one box into two abutting halves changes nothing.
pub fn frame_item_stats(
    map: &GradientMap,
    boxes: &[ItemBox],
    width: usize,
    height: usize,
) -> Result<FrameItemStats> {
    if map.full.len() != height || map.full.first().map_or(0, Vec::len) != width {
        return Err(ModelError::bad_input(
            "frame_item_stats",
            format!(
                "map is {}x{}, expected {height}x{width}",
                map.full.len(),
                map.full.first().map_or(0, Vec::len)
            ),
        ));
    }
    let mut by_cat: BTreeMap<&str, Vec<&ItemBox>> = BTreeMap::new();
    for b in boxes {
        b.check_bounds(width, height)?;
        by_cat.entry(b.category.as_str()).or_default().push(b);
    }
    let mut mean_gradient = BTreeMap::new();
    let mut size_pct = BTreeMap::new();
    let frame_area = (width * height) as f64;
    for (cat, cat_boxes) in by_cat {
        let mut mask = vec![false; width * height];
        let mut raw_area = 0usize;
        for b in &cat_boxes {
            raw_area += b.area();
            for y in b.y0..b.y1 {
                for x in b.x0..b.x1 {
                    mask[y * width + x] = true;
                }
            }
        }
        let mut sum = 0.0;
        let mut count = 0usize;
        for y in 0..height {
            for x in 0..width {
                if mask[y * width + x] {
                    sum += map.full[y][x];
                    count += 1;
                }
            }
        }
        mean_gradient.insert(cat.to_string(), sum / count as f64);
        size_pct.insert(cat.to_string(), 100.0 * raw_area as f64 / frame_area);
    }
    Ok(FrameItemStats { mean_gradient, size_pct })
}

/// Category statistics averaged over the frames where the category appears.
#[derive(Clone, Debug, PartialEq)]
pub struct CategoryStat {
    pub category: String,
    pub mean_gradient: f64,
    pub size_pct: f64,
    /// Number of frames the category appeared in.
    pub frames: usize,
}

/// Video-level aggregation: average each category over only the frames where
/// it has at least one box. Categories absent from every frame are omitted.
pub fn average_item_stats(per_frame: &[FrameItemStats]) -> Vec<CategoryStat> {
    let mut grad_sum: BTreeMap<&str, (f64, f64, usize)> = BTreeMap::new();
    for fs in per_frame {
        for (cat, &g) in &fs.mean_gradient {
            let s = fs.size_pct[cat];
            let e = grad_sum.entry(cat).or_insert((0.0, 0.0, 0));
            e.0 += g;
            e.1 += s;
            e.2 += 1;
        }
    }
    grad_sum
        .into_iter()
        .map(|(cat, (g, s, n))| CategoryStat {
            category: cat.to_string(),
            mean_gradient: g / n as f64,
            size_pct: s / n as f64,
            frames: n,
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    fn ramp_map(h: usize, w: usize) -> GradientMap {
        // value = row index + column index / 10
        let full: Vec<Vec<f64>> = (0..h)
            .map(|r| (0..w).map(|c| r as f64 + c as f64 / 10.0).collect())
            .collect();
        GradientMap { low: full.clone(), full }
    }

    #[test]
    fn splitting_a_box_does_not_change_mean_gradient() {
        let map = ramp_map(10, 10);
        let whole = vec![ItemBox::new("Persons", 2, 2, 8, 8).unwrap()];
        let split = vec![
            ItemBox::new("Persons", 2, 2, 5, 8).unwrap(),
            ItemBox::new("Persons", 5, 2, 8, 8).unwrap(),
        ];
        let a = frame_item_stats(&map, &whole, 10, 10).unwrap();
        let b = frame_item_stats(&map, &split, 10, 10).unwrap();
        assert!((a.mean_gradient["Persons"] - b.mean_gradient["Persons"]).abs() < 1e-12);
        // raw area is additive, so size matches too for a clean partition
        assert!((a.size_pct["Persons"] - b.size_pct["Persons"]).abs() < 1e-12);
    }

    #[test]
    fn whole_frame_box_mean_equals_map_mean() {
        let map = ramp_map(4, 5);
        let boxes = vec![ItemBox::new("Animal", 0, 0, 5, 4).unwrap()];
        let stats = frame_item_stats(&map, &boxes, 5, 4).unwrap();
        let flat: Vec<f64> = map.full.iter().flatten().copied().collect();
        let mean = flat.iter().sum::<f64>() / flat.len() as f64;
        assert!((stats.mean_gradient["Animal"] - mean).abs() < 1e-12);
        assert!((stats.size_pct["Animal"] - 100.0).abs() < 1e-12);
    }

    #[test]
    fn video_average_only_counts_frames_with_the_category() {
        let map = ramp_map(6, 6);
        let with = frame_item_stats(
            &map,
            &[ItemBox::new("BrandLogos", 0, 0, 3, 3).unwrap()],
            6,
            6,
        )
        .unwrap();
        let without = frame_item_stats(&map, &[], 6, 6).unwrap();
        let avg = average_item_stats(&[with.clone(), without, with.clone()]);
        assert_eq!(avg.len(), 1);
        assert_eq!(avg[0].category, "BrandLogos");
        assert_eq!(avg[0].frames, 2);
        assert!((avg[0].mean_gradient - with.mean_gradient["BrandLogos"]).abs() < 1e-12);
    }

    #[test]
    fn invalid_boxes_rejected() {
        assert!(ItemBox::new("NotACategory", 0, 0, 2, 2).is_err());
        assert!(ItemBox::new("Persons", 3, 3, 3, 5).is_err());
        let map = ramp_map(4, 4);
        let oob = ItemBox::new("Persons", 0, 0, 10, 2).unwrap();
        assert!(frame_item_stats(&map, &[oob], 4, 4).is_err());
    }
}
