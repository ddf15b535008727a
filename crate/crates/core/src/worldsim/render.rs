//! Column raycaster: one ray per pixel column through a 90° field of view,
//! DDA grid traversal, wall height inversely proportional to perpendicular
//! distance, and a sprite-style beacon standing on the goal cell.

use super::{Image, Pose, WorldError, WorldMap};

const CEILING: [u8; 3] = [28, 30, 58];
const FLOOR: [u8; 3] = [92, 84, 74];
const BEACON: [u8; 3] = [255, 236, 40];
const BEACON_HALF_WIDTH: f64 = 0.15;

pub fn palette_color(id: u8) -> [u8; 3] {
    match id {
        1 => [200, 60, 50],
        2 => [60, 170, 70],
        3 => [60, 90, 210],
        4 => [200, 200, 200],
        5 => [170, 70, 190],
        _ => [60, 190, 190],
    }
}

fn shade(c: [u8; 3], f: f64) -> [u8; 3] {
    c.map(|v| (v as f64 * f).round().clamp(0.0, 255.0) as u8)
}

/// Result of casting one ray.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RayHit {
    pub cell: (i64, i64),
    pub perp_distance: f64,
    pub side_y: bool,
    pub palette: u8,
}

/// DDA traversal from `(px, py)` along `(rx, ry)` until a wall cell is hit.
pub fn cast_ray(map: &WorldMap, px: f64, py: f64, rx: f64, ry: f64) -> RayHit {
    let mut cx = px.floor() as i64;
    let mut cy = py.floor() as i64;
    let ddx = if rx == 0.0 { f64::INFINITY } else { (1.0 / rx).abs() };
    let ddy = if ry == 0.0 { f64::INFINITY } else { (1.0 / ry).abs() };
    let (step_x, mut side_x) = if rx < 0.0 {
        (-1, (px - cx as f64) * ddx)
    } else {
        (1, (cx as f64 + 1.0 - px) * ddx)
    };
    let (step_y, mut side_y) = if ry < 0.0 {
        (-1, (py - cy as f64) * ddy)
    } else {
        (1, (cy as f64 + 1.0 - py) * ddy)
    };
    let limit = 4 * (map.width + map.height);
    let mut hit_y = false;
    for _ in 0..limit {
        if side_x < side_y {
            side_x += ddx;
            cx += step_x;
            hit_y = false;
        } else {
            side_y += ddy;
            cy += step_y;
            hit_y = true;
        }
        if map.is_wall(cx, cy) {
            break;
        }
    }
    let perp = if hit_y { side_y - ddy } else { side_x - ddx };
    RayHit {
        cell: (cx, cy),
        perp_distance: perp.max(1e-6),
        side_y: hit_y,
        palette: map.cell(cx, cy),
    }
}

/// Unit-length camera axes: facing direction and the camera plane pointing to
/// the agent's right (length 1 gives a 90° field of view).
fn camera(pose: &Pose) -> ((f64, f64), (f64, f64)) {
    let (s, c) = pose.yaw.sin_cos();
    ((c, s), (s, -c))
}

/// Ray direction through the center of pixel column `col`.
pub fn column_ray(pose: &Pose, col: usize, width: usize) -> (f64, f64) {
    let ((dx, dy), (px, py)) = camera(pose);
    let cam = 2.0 * (col as f64 + 0.5) / width as f64 - 1.0;
    (dx + px * cam, dy + py * cam)
}

pub fn render_view(map: &WorldMap, pose: &Pose, width: usize, height: usize) -> Result<Image, WorldError> {
    if !map.is_free_point(pose.x, pose.y) {
        return Err(WorldError::PoseInWall {
            x: pose.x,
            y: pose.y,
        });
    }
    let mut img = Image::new(width, height);
    let hf = height as f64;
    for y in 0..height {
        let rgb = if y < height / 2 {
            shade(CEILING, 1.0 - 0.4 * y as f64 / hf)
        } else {
            shade(FLOOR, 0.55 + 0.9 * (y as f64 - hf / 2.0) / hf)
        };
        for x in 0..width {
            img.set_pixel(x, y, rgb);
        }
    }
    let mut zbuf = vec![f64::INFINITY; width];
    for (col, z) in zbuf.iter_mut().enumerate() {
        let (rx, ry) = column_ray(pose, col, width);
        let hit = cast_ray(map, pose.x, pose.y, rx, ry);
        *z = hit.perp_distance;
        let line = hf / hit.perp_distance;
        let top = ((hf - line) / 2.0).round().max(0.0) as usize;
        let bottom = (((hf + line) / 2.0).round() as usize).min(height);
        let side = if hit.side_y { 0.78 } else { 1.0 };
        let color = shade(
            palette_color(hit.palette),
            side / (1.0 + 0.22 * hit.perp_distance),
        );
        for y in top..bottom {
            img.set_pixel(col, y, color);
        }
    }
    draw_beacon(map, pose, &mut img, &zbuf);
    Ok(img)
}

fn draw_beacon(map: &WorldMap, pose: &Pose, img: &mut Image, zbuf: &[f64]) {
    let (gx, gy) = map.center(map.goal_cell);
    let ((dx, dy), (px, py)) = camera(pose);
    let (vx, vy) = (gx - pose.x, gy - pose.y);
    let depth = vx * dx + vy * dy;
    if depth < 0.25 {
        return;
    }
    let lateral = vx * px + vy * py;
    let (w, h) = (img.width as f64, img.height as f64);
    let center = (lateral / depth + 1.0) * w / 2.0;
    let half = BEACON_HALF_WIDTH / depth * w / 2.0;
    let line = h / depth;
    let top = ((h - line) / 2.0).round().max(0.0) as usize;
    let bottom = (((h + line) / 2.0).round() as usize).min(img.height);
    let c0 = (center - half).floor().max(0.0) as usize;
    let c1 = ((center + half).ceil().max(0.0) as usize).min(img.width);
    let color = shade(BEACON, 1.0 / (1.0 + 0.12 * depth));
    for col in c0..c1 {
        if depth < zbuf[col] {
            for y in top..bottom {
                img.set_pixel(col, y, color);
            }
        }
    }
}
