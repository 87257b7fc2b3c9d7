//! Bird's-eye-view IoU of yaw-rotated boxes via Sutherland-Hodgman clipping.

use super::{Cuboid, GeometryError};

type P2 = [f64; 2];

/// Counter-clockwise x-y footprint of the box.
pub fn footprint(c: &Cuboid) -> [P2; 4] {
    let (s, co) = c.z_rot.sin_cos();
    let hx = c.x_len / 2.0;
    let hy = c.y_len / 2.0;
    [(-1.0, -1.0), (1.0, -1.0), (1.0, 1.0), (-1.0, 1.0)].map(|(sx, sy)| {
        let lx = sx * hx;
        let ly = sy * hy;
        [c.x_ctr + co * lx - s * ly, c.y_ctr + s * lx + co * ly]
    })
}

/// Shoelace area; positive for counter-clockwise vertex order.
pub fn convex_polygon_area(poly: &[P2]) -> f64 {
    if poly.len() < 3 {
        return 0.0;
    }
    let mut twice = 0.0;
    for i in 0..poly.len() {
        let a = poly[i];
        let b = poly[(i + 1) % poly.len()];
        twice += a[0] * b[1] - a[1] * b[0];
    }
    twice / 2.0
}

fn cross(o: P2, a: P2, b: P2) -> f64 {
    (a[0] - o[0]) * (b[1] - o[1]) - (a[1] - o[1]) * (b[0] - o[0])
}

/// Area of the intersection of two convex counter-clockwise polygons.
pub fn polygon_intersection_area(subject: &[P2], clip: &[P2]) -> f64 {
    let mut output: Vec<P2> = subject.to_vec();
    for i in 0..clip.len() {
        if output.is_empty() {
            break;
        }
        let a = clip[i];
        let b = clip[(i + 1) % clip.len()];
        let input = std::mem::take(&mut output);
        for j in 0..input.len() {
            let cur = input[j];
            let prev = input[(j + input.len() - 1) % input.len()];
            let cur_in = cross(a, b, cur) >= 0.0;
            let prev_in = cross(a, b, prev) >= 0.0;
            if cur_in {
                if !prev_in {
                    output.push(edge_hit(prev, cur, a, b));
                }
                output.push(cur);
            } else if prev_in {
                output.push(edge_hit(prev, cur, a, b));
            }
        }
    }
    convex_polygon_area(&output).max(0.0)
}

/// Intersection of segment p→q with the infinite line a→b.
fn edge_hit(p: P2, q: P2, a: P2, b: P2) -> P2 {
    let dp = cross(a, b, p);
    let dq = cross(a, b, q);
    let t = dp / (dp - dq);
    [p[0] + t * (q[0] - p[0]), p[1] + t * (q[1] - p[1])]
}

/// Intersection over union of the BEV footprints, in `[0, 1]`.
pub fn bev_iou(a: &Cuboid, b: &Cuboid) -> Result<f64, GeometryError> {
    a.validate()?;
    b.validate()?;
    // quick reject on circumscribed circles
    let ra = a.x_len.hypot(a.y_len) / 2.0;
    let rb = b.x_len.hypot(b.y_len) / 2.0;
    let dx = a.x_ctr - b.x_ctr;
    let dy = a.y_ctr - b.y_ctr;
    if dx * dx + dy * dy >= (ra + rb) * (ra + rb) {
        return Ok(0.0);
    }
    let inter = polygon_intersection_area(&footprint(a), &footprint(b));
    let union = a.x_len * a.y_len + b.x_len * b.y_len - inter;
    Ok((inter / union).clamp(0.0, 1.0))
}
