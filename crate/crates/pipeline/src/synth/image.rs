//! Colored-rectangle thumbnails and frames with exact item annotations.

use clipsight_models::image::itemstats::ITEM_CATEGORIES;
use clipsight_tensor::{Stream, Tensor};

use crate::records::BoxAnnotation;

use super::{Element, ImageStream, SynthSpec};

/// Fill colors per item category, in `ITEM_CATEGORIES` order.
const PALETTE: [[f64; 3]; 7] = [
    [0.95, 0.75, 0.55],
    [0.85, 0.10, 0.10],
    [0.10, 0.30, 0.85],
    [0.55, 0.35, 0.10],
    [0.55, 0.55, 0.55],
    [0.10, 0.70, 0.20],
    [0.90, 0.85, 0.10],
];

pub(super) struct Scenes {
    pub thumb: Tensor,
    pub thumb_boxes: Vec<BoxAnnotation>,
    pub frames: Vec<Tensor>,
    pub frame_boxes: Vec<Vec<BoxAnnotation>>,
}

struct SceneBox {
    category: usize,
    x0: usize,
    y0: usize,
    w: usize,
    h: usize,
    brightness: f64,
}

struct Scene {
    boxes: Vec<SceneBox>,
    bg: [f64; 3],
}

fn draw_scene(
    s: &mut Stream,
    height: usize,
    width: usize,
    boosted: Option<usize>,
    shares: &mut [f64; 7],
) -> Scene {
    let bg = [s.uniform(0.15, 0.35), s.uniform(0.15, 0.35), s.uniform(0.15, 0.35)];
    let mut boxes = Vec::new();
    let area = (height * width) as f64;
    for cat in 0..ITEM_CATEGORIES.len() {
        let planted = boosted == Some(cat);
        let present = s.bernoulli(if planted { 0.95 } else { 0.4 });
        let share = if planted { s.uniform(0.05, 0.33) } else { s.uniform(0.02, 0.15) };
        let aspect = s.uniform(0.6, 1.8);
        if !present {
            continue;
        }
        let w = ((share * area * aspect).sqrt().round() as usize).clamp(2, width);
        let h = ((share * area / aspect).sqrt().round() as usize).clamp(2, height);
        let x0 = s.range(width - w + 1);
        let y0 = s.range(height - h + 1);
        shares[cat] = (w * h) as f64 / area;
        boxes.push(SceneBox { category: cat, x0, y0, w, h, brightness: s.uniform(-0.05, 0.05) });
    }
    Scene { boxes, bg }
}

/// Rasterizes boxes over the background, later category indices first so
/// earlier ones (Persons in particular) end up on top.
fn rasterize(scene: &Scene, height: usize, width: usize, s: &mut Stream) -> Tensor {
    let mut data = vec![0.0; height * width * 3];
    for px in 0..height * width {
        for c in 0..3 {
            data[px * 3 + c] = scene.bg[c];
        }
    }
    let mut order: Vec<usize> = (0..scene.boxes.len()).collect();
    order.sort_by(|&a, &b| scene.boxes[b].category.cmp(&scene.boxes[a].category));
    for idx in order {
        let b = &scene.boxes[idx];
        for y in b.y0..b.y0 + b.h {
            for x in b.x0..b.x0 + b.w {
                for c in 0..3 {
                    data[(y * width + x) * 3 + c] =
                        (PALETTE[b.category][c] + b.brightness).clamp(0.0, 1.0);
                }
            }
        }
    }
    for value in data.iter_mut() {
        *value = (*value + 0.03 * (s.unit() - 0.5)).clamp(0.0, 1.0);
    }
    Tensor::new(vec![height, width, 3], data).expect("scene dims")
}

fn annotations(scene: &Scene, dx: i64, dy: i64, height: usize, width: usize) -> Vec<BoxAnnotation> {
    scene
        .boxes
        .iter()
        .map(|b| {
            let x0 = (b.x0 as i64 + dx).clamp(0, (width - b.w) as i64) as usize;
            let y0 = (b.y0 as i64 + dy).clamp(0, (height - b.h) as i64) as usize;
            BoxAnnotation {
                category: ITEM_CATEGORIES[b.category].to_string(),
                x0,
                y0,
                x1: x0 + b.w,
                y1: y0 + b.h,
            }
        })
        .collect()
}

fn shifted(scene: &Scene, dx: i64, dy: i64, height: usize, width: usize) -> Scene {
    Scene {
        bg: scene.bg,
        boxes: scene
            .boxes
            .iter()
            .map(|b| SceneBox {
                category: b.category,
                x0: (b.x0 as i64 + dx).clamp(0, (width - b.w) as i64) as usize,
                y0: (b.y0 as i64 + dy).clamp(0, (height - b.h) as i64) as usize,
                w: b.w,
                h: b.h,
                brightness: b.brightness,
            })
            .collect(),
    }
}

fn boosted_category(spec: &SynthSpec, stream: ImageStream) -> Option<usize> {
    spec.effects.iter().find_map(|e| match e.element {
        Element::Image(st) if st == stream => {
            ITEM_CATEGORIES.iter().position(|c| *c == e.feature)
        }
        _ => None,
    })
}

pub(super) fn draw(spec: &SynthSpec, v: usize, signals: &mut [f64]) -> Scenes {
    let (height, width) = (spec.image_height, spec.image_width);
    let vu = v as u64;

    let mut ts = Stream::new(spec.seed, "video-thumbnail", vu);
    let mut thumb_shares = [0.0; 7];
    let thumb_scene =
        draw_scene(&mut ts, height, width, boosted_category(spec, ImageStream::Thumbnail), &mut thumb_shares);
    let thumb = rasterize(&thumb_scene, height, width, &mut ts);
    let thumb_boxes = annotations(&thumb_scene, 0, 0, height, width);

    let mut fs = Stream::new(spec.seed, "video-frames", vu);
    let mut frame_shares = [0.0; 7];
    let base_scene =
        draw_scene(&mut fs, height, width, boosted_category(spec, ImageStream::Frames), &mut frame_shares);
    let mut frames = Vec::with_capacity(5);
    let mut frame_boxes = Vec::with_capacity(5);
    for _ in 0..5 {
        let dx = fs.range(3) as i64 - 1;
        let dy = fs.range(3) as i64 - 1;
        let scene = shifted(&base_scene, dx, dy, height, width);
        frames.push(rasterize(&scene, height, width, &mut fs));
        frame_boxes.push(annotations(&scene, 0, 0, height, width));
    }

    for (j, e) in spec.effects.iter().enumerate() {
        if let Element::Image(stream) = e.element {
            let cat = ITEM_CATEGORIES.iter().position(|c| *c == e.feature).unwrap_or(usize::MAX);
            let shares = match stream {
                ImageStream::Thumbnail => &thumb_shares,
                ImageStream::Frames => &frame_shares,
            };
            signals[j] = shares.get(cat).copied().unwrap_or(0.0);
        }
    }

    Scenes { thumb, thumb_boxes, frames, frame_boxes }
}
