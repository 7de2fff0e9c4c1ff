use std::collections::BTreeMap;
use std::fmt::Write as _;

use crate::model::{BoundingBox, Canvas, ObjectCategory, SceneObject};

fn stroke(category: ObjectCategory) -> &'static str {
    match category {
        ObjectCategory::Go => "#1f77b4",
        ObjectCategory::Text => "#d62728",
        ObjectCategory::Pn => "#2ca02c",
    }
}

fn escape(text: &str) -> String {
    text.replace('&', "&amp;").replace('<', "&lt;").replace('>', "&gt;").replace('"', "&quot;")
}

/// Outlined boxes with captions, largest first so small boxes stay on top.
pub fn render_svg(objects: &[SceneObject], boxes: &BTreeMap<usize, BoundingBox>, canvas: Canvas) -> String {
    let mut out = String::new();
    let _ = writeln!(
        out,
        r#"<svg xmlns="http://www.w3.org/2000/svg" width="{w}" height="{h}" viewBox="0 0 {w} {h}">"#,
        w = canvas.width_px,
        h = canvas.height_px
    );
    let _ = writeln!(out, r##"  <rect width="100%" height="100%" fill="#ffffff"/>"##);
    let mut order: Vec<(&usize, &BoundingBox)> = boxes.iter().collect();
    order.sort_by(|a, b| b.1.area().total_cmp(&a.1.area()).then(a.0.cmp(b.0)));
    for (id, bbox) in order {
        let [x, y, w, h] = bbox.to_pixels(canvas);
        let (label, category) = match objects.get(*id) {
            Some(o) => (format!("{id}: {}", o.caption), o.category),
            None => (id.to_string(), ObjectCategory::Go),
        };
        let color = stroke(category);
        let _ = writeln!(
            out,
            r#"  <rect x="{x}" y="{y}" width="{w}" height="{h}" fill="none" stroke="{color}" stroke-width="2"/>"#
        );
        let _ = writeln!(
            out,
            r#"  <text x="{}" y="{}" font-family="sans-serif" font-size="12" fill="{color}">{}</text>"#,
            x + 3,
            y + 14,
            escape(&label)
        );
    }
    out.push_str("</svg>\n");
    out
}
