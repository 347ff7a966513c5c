//! Cartoon face renderer: deterministic landmark-to-appearance mapping that
//! gives the translator a learnable target at desk scale. Identity lives in
//! the color palette (skin, hair, lips, iris) plus face-shape geometry.

use rand::Rng;

use crate::landmark::{idx, LandmarkSet};
use crate::nn::rng::seeded_rng;
use crate::translator::FaceFrame;
use crate::IMAGE_SIDE;

type Rgb = [f64; 3];

const BACKGROUND: Rgb = [0.12, 0.13, 0.16];
const SCLERA: Rgb = [0.95, 0.95, 0.93];
const MOUTH_INTERIOR: Rgb = [0.13, 0.05, 0.06];

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct IdentityPalette {
    pub skin: Rgb,
    pub hair: Rgb,
    pub lip: Rgb,
    pub iris: Rgb,
    pub brow: Rgb,
}

/// Deterministic per-identity colors.
pub fn identity_palette(identity: usize) -> IdentityPalette {
    let mut rng = seeded_rng(identity as u64, "identity-palette");
    let tone: f64 = rng.gen_range(0.0..1.0);
    let skin = [
        0.55 + 0.35 * tone,
        0.40 + 0.30 * tone,
        0.30 + 0.28 * tone,
    ];
    let hair_opts: [Rgb; 4] = [
        [0.10, 0.08, 0.07],
        [0.35, 0.22, 0.10],
        [0.78, 0.64, 0.33],
        [0.45, 0.16, 0.08],
    ];
    let hair = hair_opts[rng.gen_range(0..hair_opts.len())];
    let iris_opts: [Rgb; 3] = [[0.25, 0.15, 0.08], [0.15, 0.30, 0.48], [0.18, 0.38, 0.22]];
    let iris = iris_opts[rng.gen_range(0..iris_opts.len())];
    let lip = [
        (skin[0] * 0.45 + 0.40).min(1.0),
        skin[1] * 0.35 + 0.08,
        skin[2] * 0.35 + 0.12,
    ];
    let brow = [hair[0] * 0.8, hair[1] * 0.8, hair[2] * 0.8];
    IdentityPalette {
        skin,
        hair,
        lip,
        iris,
        brow,
    }
}

struct Canvas {
    px: Vec<Rgb>,
}

impl Canvas {
    fn new() -> Self {
        Canvas {
            px: vec![BACKGROUND; IMAGE_SIDE * IMAGE_SIDE],
        }
    }

    #[inline]
    fn put(&mut self, x: i64, y: i64, c: Rgb) {
        if (0..IMAGE_SIDE as i64).contains(&x) && (0..IMAGE_SIDE as i64).contains(&y) {
            self.px[y as usize * IMAGE_SIDE + x as usize] = c;
        }
    }

    fn fill_ellipse(&mut self, cx: f64, cy: f64, rx: f64, ry: f64, c: Rgb, y_max: Option<f64>) {
        let side = IMAGE_SIDE as f64;
        for py in 0..IMAGE_SIDE {
            let y = py as f64 / (side - 1.0);
            if let Some(limit) = y_max {
                if y > limit {
                    continue;
                }
            }
            for px in 0..IMAGE_SIDE {
                let x = px as f64 / (side - 1.0);
                let dx = (x - cx) / rx;
                let dy = (y - cy) / ry;
                if dx * dx + dy * dy <= 1.0 {
                    self.px[py * IMAGE_SIDE + px] = c;
                }
            }
        }
    }

    /// Even-odd scanline fill of a closed polygon in normalized coords.
    fn fill_polygon(&mut self, pts: &[(f64, f64)], c: Rgb) {
        let side = (IMAGE_SIDE - 1) as f64;
        let n = pts.len();
        for py in 0..IMAGE_SIDE {
            let y = py as f64 / side;
            let mut xs: Vec<f64> = Vec::new();
            for i in 0..n {
                let (x1, y1) = pts[i];
                let (x2, y2) = pts[(i + 1) % n];
                if (y1 <= y && y < y2) || (y2 <= y && y < y1) {
                    xs.push(x1 + (y - y1) / (y2 - y1) * (x2 - x1));
                }
            }
            xs.sort_by(|a, b| a.partial_cmp(b).unwrap());
            for pair in xs.chunks(2) {
                if let [x_in, x_out] = pair {
                    let start = (x_in * side).round().max(0.0) as usize;
                    let end = ((x_out * side).round() as usize).min(IMAGE_SIDE - 1);
                    for px in start..=end {
                        self.px[py * IMAGE_SIDE + px] = c;
                    }
                }
            }
        }
    }

    fn line(&mut self, a: (f64, f64), b: (f64, f64), c: Rgb, thick: i64) {
        let side = (IMAGE_SIDE - 1) as f64;
        let (x1, y1) = (a.0 * side, a.1 * side);
        let (x2, y2) = (b.0 * side, b.1 * side);
        let steps = ((x2 - x1).abs().max((y2 - y1).abs()).ceil() as usize).max(1);
        for s in 0..=steps {
            let t = s as f64 / steps as f64;
            let x = (x1 + t * (x2 - x1)).round() as i64;
            let y = (y1 + t * (y2 - y1)).round() as i64;
            for dy in 0..thick {
                for dx in 0..thick {
                    self.put(x + dx, y + dy, c);
                }
            }
        }
    }

    fn fill_disc(&mut self, cx: f64, cy: f64, r_px: f64, c: Rgb) {
        let side = (IMAGE_SIDE - 1) as f64;
        let (pcx, pcy) = (cx * side, cy * side);
        let r = r_px.ceil() as i64;
        for dy in -r..=r {
            for dx in -r..=r {
                if (dx * dx + dy * dy) as f64 <= r_px * r_px {
                    self.put(pcx.round() as i64 + dx, pcy.round() as i64 + dy, c);
                }
            }
        }
    }
}

fn shade(c: Rgb, f: f64) -> Rgb {
    [c[0] * f, c[1] * f, c[2] * f]
}

/// Render one landmark set into a 64x64 RGB frame in [-1, 1].
pub fn render_face(lms: &LandmarkSet, pal: &IdentityPalette) -> FaceFrame {
    let mut canvas = Canvas::new();
    let p = &lms.points;
    let left = p[0];
    let right = p[16];
    let chin = p[8];
    let brow_top = p[idx::BROWS.clone()].iter().map(|q| q.1).fold(f64::INFINITY, f64::min);
    let cx = (left.0 + right.0) / 2.0;
    let top = (brow_top - 0.10).max(0.02);
    let bottom = (chin.1 + 0.02).min(0.99);
    let cy = (top + bottom) / 2.0;
    let rx = (right.0 - left.0) / 2.0 + 0.03;
    let ry = (bottom - top) / 2.0;

    // hair: slightly larger ellipse, only above the brow line
    canvas.fill_ellipse(cx, cy, rx * 1.10, ry * 1.04, pal.hair, Some(brow_top - 0.045));
    // face oval drawn after, clipping into the hair cap
    canvas.fill_ellipse(cx, cy + 0.01, rx, ry, pal.skin, None);
    canvas.fill_ellipse(cx, (top + 0.065).min(1.0), rx * 0.92, 0.075, pal.hair, Some(brow_top - 0.045));

    // brows
    for range in [17..22usize, 22..27] {
        for w in range.collect::<Vec<_>>().windows(2) {
            canvas.line(p[w[0]], p[w[1]], pal.brow, 2);
        }
    }

    // nose
    canvas.line(p[27], p[30], shade(pal.skin, 0.82), 1);
    for w in [31, 32, 33, 34] {
        canvas.line(p[w], p[w + 1], shade(pal.skin, 0.72), 1);
    }

    // eyes
    for range in [idx::LEFT_EYE, idx::RIGHT_EYE] {
        let pts: Vec<(f64, f64)> = p[range].to_vec();
        let top_y = pts.iter().map(|q| q.1).fold(f64::INFINITY, f64::min);
        let bot_y = pts.iter().map(|q| q.1).fold(f64::NEG_INFINITY, f64::max);
        let height_px = (bot_y - top_y) * (IMAGE_SIDE - 1) as f64;
        let cx_eye = pts.iter().map(|q| q.0).sum::<f64>() / 6.0;
        let cy_eye = pts.iter().map(|q| q.1).sum::<f64>() / 6.0;
        if height_px >= 1.2 {
            canvas.fill_polygon(&pts, SCLERA);
            let pupil_r = (height_px * 0.45).clamp(0.6, 2.2);
            canvas.fill_disc(cx_eye, cy_eye, pupil_r, pal.iris);
        } else {
            canvas.line(pts[0], pts[3], shade(pal.skin, 0.45), 1);
        }
    }

    // mouth: outer lips, then the interior when open
    let outer: Vec<(f64, f64)> = p[idx::MOUTH_OUTER.clone()].to_vec();
    canvas.fill_polygon(&outer, pal.lip);
    let inner: Vec<(f64, f64)> = p[idx::MOUTH_INNER.clone()].to_vec();
    let gap_px = (p[66].1 - p[62].1) * (IMAGE_SIDE - 1) as f64;
    if gap_px >= 1.2 {
        canvas.fill_polygon(&inner, MOUTH_INTERIOR);
    }

    let mut data = vec![0.0; 3 * IMAGE_SIDE * IMAGE_SIDE];
    for (i, rgb) in canvas.px.iter().enumerate() {
        for c in 0..3 {
            data[c * IMAGE_SIDE * IMAGE_SIDE + i] = (rgb[c] * 2.0 - 1.0).clamp(-1.0, 1.0);
        }
    }
    FaceFrame { data }
}

/// Appearance descriptor recovered from a frame at known landmark
/// positions: mean skin color at the two cheeks plus mean hair color above
/// the forehead.
pub fn identity_descriptor(frame: &FaceFrame, lms: &LandmarkSet) -> Vec<f64> {
    let sample_patch = |cx: f64, cy: f64| -> Rgb {
        let side = (IMAGE_SIDE - 1) as f64;
        let (px, py) = ((cx * side).round() as i64, (cy * side).round() as i64);
        let mut acc = [0.0; 3];
        let mut n = 0.0;
        for dy in -1..=1i64 {
            for dx in -1..=1i64 {
                let (qx, qy) = (px + dx, py + dy);
                if (0..IMAGE_SIDE as i64).contains(&qx) && (0..IMAGE_SIDE as i64).contains(&qy) {
                    for c in 0..3 {
                        acc[c] += (frame.at(c, qy as usize, qx as usize) + 1.0) / 2.0;
                    }
                    n += 1.0;
                }
            }
        }
        [acc[0] / n, acc[1] / n, acc[2] / n]
    };
    let le = lms.left_eye_center();
    let re = lms.right_eye_center();
    let lm = lms.points[idx::MOUTH_CORNER_LEFT];
    let rm = lms.points[idx::MOUTH_CORNER_RIGHT];
    // cheeks: between eye and mouth corner, pushed slightly outward
    let left_cheek = sample_patch((le.0 + lm.0) / 2.0 - 0.035, (le.1 + lm.1) / 2.0);
    let right_cheek = sample_patch((re.0 + rm.0) / 2.0 + 0.035, (re.1 + rm.1) / 2.0);
    let brow_top = lms.points[idx::BROWS.clone()]
        .iter()
        .map(|q| q.1)
        .fold(f64::INFINITY, f64::min);
    let hair = sample_patch((le.0 + re.0) / 2.0, (brow_top - 0.075).max(0.01));
    let mut d = Vec::with_capacity(9);
    for c in 0..3 {
        d.push((left_cheek[c] + right_cheek[c]) / 2.0);
    }
    d.extend_from_slice(&hair);
    // geometry: jaw width and mouth width, scaled to color magnitude
    d.push(lms.points[16].0 - lms.points[0].0);
    d.push(lms.points[idx::MOUTH_CORNER_RIGHT].0 - lms.points[idx::MOUTH_CORNER_LEFT].0);
    d
}

/// Index of the nearest descriptor among identity templates.
pub fn match_identity(descriptor: &[f64], templates: &[Vec<f64>]) -> usize {
    let mut best = 0;
    let mut best_d = f64::INFINITY;
    for (i, t) in templates.iter().enumerate() {
        let d: f64 = descriptor.iter().zip(t).map(|(a, b)| (a - b) * (a - b)).sum();
        if d < best_d {
            best_d = d;
            best = i;
        }
    }
    best
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dataset::synth::neutral_template;

    #[test]
    fn render_is_deterministic_and_in_range() {
        let lms = neutral_template(1);
        let pal = identity_palette(1);
        let a = render_face(&lms, &pal);
        let b = render_face(&lms, &pal);
        assert_eq!(a.data, b.data);
        assert!(a.data.iter().all(|v| (-1.0..=1.0).contains(v)));
    }

    #[test]
    fn descriptors_identify_identities() {
        let templates: Vec<Vec<f64>> = (0..5)
            .map(|i| {
                let lms = neutral_template(i);
                let f = render_face(&lms, &identity_palette(i));
                identity_descriptor(&f, &lms)
            })
            .collect();
        for i in 0..5 {
            let lms = neutral_template(i);
            let f = render_face(&lms, &identity_palette(i));
            let d = identity_descriptor(&f, &lms);
            assert_eq!(match_identity(&d, &templates), i);
        }
    }

    #[test]
    fn palettes_are_distinct() {
        let a = identity_palette(0);
        let b = identity_palette(1);
        assert_ne!(a, b);
    }
}
