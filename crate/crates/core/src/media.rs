//! PNG/GIF encoding for landmark images and face frames, plus the simple
//! line-plot writer used by `eval`.

use std::fs::File;
use std::io::BufWriter;
use std::path::Path;

use image::codecs::gif::{GifEncoder, Repeat};
use image::{Delay, Frame, GrayImage, RgbImage, Rgba, RgbaImage};

use crate::error::{Error, Result};
use crate::landmark::LandmarkImage;
use crate::translator::FaceFrame;
use crate::IMAGE_SIDE;

pub fn save_landmark_png(img: &LandmarkImage, path: &Path) -> Result<()> {
    let side = img.side as u32;
    let buf: Vec<u8> = img
        .data
        .iter()
        .map(|&v| (v.clamp(0.0, 1.0) * 255.0).round() as u8)
        .collect();
    let gray = GrayImage::from_raw(side, side, buf).expect("sized buffer");
    gray.save(path)?;
    Ok(())
}

pub fn load_landmark_png(path: &Path) -> Result<LandmarkImage> {
    let img = image::open(path)?.to_luma8();
    let side = img.width() as usize;
    if img.height() as usize != side {
        return Err(Error::Shape {
            expected: "square image".into(),
            got: format!("{}x{}", img.width(), img.height()),
        });
    }
    let data: Vec<f64> = img.into_raw().iter().map(|&b| b as f64 / 255.0).collect();
    let binary = data.iter().all(|&v| v == 0.0 || v == 1.0);
    LandmarkImage::from_data(side, data, binary)
}

pub fn save_face_png(frame: &FaceFrame, path: &Path) -> Result<()> {
    let rgb = RgbImage::from_raw(IMAGE_SIDE as u32, IMAGE_SIDE as u32, frame.to_rgb8()).expect("sized buffer");
    rgb.save(path)?;
    Ok(())
}

pub fn load_face_png(path: &Path) -> Result<FaceFrame> {
    let img = image::open(path)?.to_rgb8();
    if img.width() as usize != IMAGE_SIDE || img.height() as usize != IMAGE_SIDE {
        return Err(Error::Shape {
            expected: format!("{IMAGE_SIDE}x{IMAGE_SIDE} face frame"),
            got: format!("{}x{}", img.width(), img.height()),
        });
    }
    FaceFrame::from_rgb8(&img.into_raw())
}

fn rgba_from_rgb(rgb: &[u8], w: u32, h: u32) -> RgbaImage {
    let mut out = RgbaImage::new(w, h);
    for (i, px) in out.pixels_mut().enumerate() {
        *px = Rgba([rgb[i * 3], rgb[i * 3 + 1], rgb[i * 3 + 2], 255]);
    }
    out
}

/// Assemble frames into an animated GIF (10 fps, looping).
pub fn save_gif(frames: &[Vec<u8>], side: usize, path: &Path) -> Result<()> {
    let file = BufWriter::new(File::create(path)?);
    let mut enc = GifEncoder::new(file);
    enc.set_repeat(Repeat::Infinite)
        .map_err(|e| Error::Validation(format!("gif: {e}")))?;
    for rgb in frames {
        let img = rgba_from_rgb(rgb, side as u32, side as u32);
        let frame = Frame::from_parts(img, 0, 0, Delay::from_numer_denom_ms(100, 1));
        enc.encode_frame(frame)
            .map_err(|e| Error::Validation(format!("gif: {e}")))?;
    }
    Ok(())
}

pub fn face_gif(frames: &[FaceFrame], path: &Path) -> Result<()> {
    let rgb: Vec<Vec<u8>> = frames.iter().map(|f| f.to_rgb8()).collect();
    save_gif(&rgb, IMAGE_SIDE, path)
}

pub fn landmark_gif(frames: &[LandmarkImage], path: &Path) -> Result<()> {
    let rgb: Vec<Vec<u8>> = frames
        .iter()
        .map(|f| {
            f.data
                .iter()
                .flat_map(|&v| {
                    let b = (v.clamp(0.0, 1.0) * 255.0).round() as u8;
                    [b, b, b]
                })
                .collect()
        })
        .collect();
    save_gif(&rgb, frames.first().map_or(IMAGE_SIDE, |f| f.side), path)
}

/// Minimal multi-curve line plot (mirrors the mean intensity-curve figure).
pub fn plot_curves(curves: &[(String, Vec<f64>, [u8; 3])], path: &Path) -> Result<()> {
    const W: u32 = 640;
    const H: u32 = 420;
    const MARGIN: f64 = 45.0;
    let mut img = RgbImage::from_pixel(W, H, image::Rgb([250, 250, 250]));
    let y_min = curves
        .iter()
        .flat_map(|(_, c, _)| c.iter())
        .cloned()
        .fold(f64::INFINITY, f64::min)
        .min(0.0);
    let y_max = curves
        .iter()
        .flat_map(|(_, c, _)| c.iter())
        .cloned()
        .fold(f64::NEG_INFINITY, f64::max)
        .max(y_min + 1e-6);
    let t_max = curves.iter().map(|(_, c, _)| c.len()).max().unwrap_or(2).max(2);
    let to_px = |t: f64, v: f64| -> (i64, i64) {
        let x = MARGIN + t / (t_max - 1) as f64 * (W as f64 - 2.0 * MARGIN);
        let y = H as f64 - MARGIN - (v - y_min) / (y_max - y_min) * (H as f64 - 2.0 * MARGIN);
        (x.round() as i64, y.round() as i64)
    };
    let mut put = |x: i64, y: i64, c: [u8; 3]| {
        if (0..W as i64).contains(&x) && (0..H as i64).contains(&y) {
            img.put_pixel(x as u32, y as u32, image::Rgb(c));
        }
    };
    // axes
    for x in MARGIN as i64..(W as f64 - MARGIN) as i64 {
        put(x, (H as f64 - MARGIN) as i64, [60, 60, 60]);
    }
    for y in MARGIN as i64..(H as f64 - MARGIN) as i64 {
        put(MARGIN as i64, y, [60, 60, 60]);
    }
    for (ci, (_, curve, color)) in curves.iter().enumerate() {
        for w in curve.windows(2).enumerate() {
            let (t, pair) = w;
            let (x1, y1) = to_px(t as f64, pair[0]);
            let (x2, y2) = to_px(t as f64 + 1.0, pair[1]);
            let steps = (x2 - x1).abs().max((y2 - y1).abs()).max(1);
            for s in 0..=steps {
                let f = s as f64 / steps as f64;
                put(
                    (x1 as f64 + f * (x2 - x1) as f64).round() as i64,
                    (y1 as f64 + f * (y2 - y1) as f64).round() as i64,
                    *color,
                );
            }
        }
        // legend swatch
        for dy in 0..8i64 {
            for dx in 0..18i64 {
                put(MARGIN as i64 + 8 + dx, 10 + ci as i64 * 14 + dy, *color);
            }
        }
    }
    img.save(path)?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use tempfile::tempdir;

    #[test]
    fn landmark_png_round_trip_is_exact_for_binary() {
        let dir = tempdir().unwrap();
        let mut img = LandmarkImage::zeros(64);
        img.data[100] = 1.0;
        img.data[4000] = 1.0;
        let path = dir.path().join("lm.png");
        save_landmark_png(&img, &path).unwrap();
        let back = load_landmark_png(&path).unwrap();
        assert!(back.binary);
        assert_eq!(back.data, img.data);
    }

    #[test]
    fn face_png_round_trip_within_quantization() {
        let dir = tempdir().unwrap();
        let mut f = FaceFrame::zeros();
        f.set(1, 10, 20, 0.75);
        let path = dir.path().join("face.png");
        save_face_png(&f, &path).unwrap();
        let back = load_face_png(&path).unwrap();
        assert!((back.at(1, 10, 20) - 0.75).abs() < 1.0 / 127.0);
    }

    #[test]
    fn gif_and_plot_write_files() {
        let dir = tempdir().unwrap();
        let frames = vec![FaceFrame::zeros(), FaceFrame::zeros()];
        let gif = dir.path().join("seq.gif");
        face_gif(&frames, &gif).unwrap();
        assert!(gif.metadata().unwrap().len() > 0);
        let plot = dir.path().join("curves.png");
        plot_curves(
            &[("a".into(), vec![0.0, 0.5, 1.0], [200, 40, 40])],
            &plot,
        )
        .unwrap();
        assert!(plot.metadata().unwrap().len() > 0);
    }
}
