//! Frame images (PNG) and precomputed feature-vector files.

use std::collections::HashMap;
use std::fmt::Write as _;
use std::fs::File;
use std::io::{BufReader, BufWriter};
use std::path::Path;

use crate::error::{Error, Result};
use crate::video::FrameImage;

/// Reads an 8-bit RGB or RGBA PNG into blue/red/green planes.
pub fn read_frame_png(path: &Path) -> Result<FrameImage> {
    let file = File::open(path).map_err(|e| Error::io(path, e))?;
    let decoder = png::Decoder::new(BufReader::new(file));
    let mut reader = decoder
        .read_info()
        .map_err(|e| Error::UnsupportedFormat(format!("{}: {e}", path.display())))?;
    let mut buf = vec![0; reader.output_buffer_size()];
    let info = reader
        .next_frame(&mut buf)
        .map_err(|e| Error::UnsupportedFormat(format!("{}: {e}", path.display())))?;
    if info.bit_depth != png::BitDepth::Eight {
        return Err(Error::UnsupportedFormat(format!("{}: only 8-bit PNG is supported", path.display())));
    }
    let stride = match info.color_type {
        png::ColorType::Rgb => 3,
        png::ColorType::Rgba => 4,
        other => {
            return Err(Error::UnsupportedFormat(format!(
                "{}: colour type {other:?} not supported",
                path.display()
            )))
        }
    };
    let (h, w) = (info.height as usize, info.width as usize);
    let n = h * w;
    let mut pixels = vec![0.0; 3 * n];
    for (i, px) in buf[..info.buffer_size()].chunks(stride).enumerate() {
        let (r, g, b) = (px[0], px[1], px[2]);
        pixels[i] = f64::from(b) / 255.0;
        pixels[n + i] = f64::from(r) / 255.0;
        pixels[2 * n + i] = f64::from(g) / 255.0;
    }
    FrameImage::new(h, w, pixels)
}

pub fn write_frame_png(path: &Path, frame: &FrameImage) -> Result<()> {
    let file = File::create(path).map_err(|e| Error::io(path, e))?;
    let mut encoder = png::Encoder::new(BufWriter::new(file), frame.width as u32, frame.height as u32);
    encoder.set_color(png::ColorType::Rgb);
    encoder.set_depth(png::BitDepth::Eight);
    let to_err = |e: png::EncodingError| Error::UnsupportedFormat(format!("{}: {e}", path.display()));
    let mut writer = encoder.write_header().map_err(to_err)?;
    let n = frame.height * frame.width;
    let byte = |v: f64| (v * 255.0).round().clamp(0.0, 255.0) as u8;
    let mut data = Vec::with_capacity(3 * n);
    for i in 0..n {
        data.push(byte(frame.pixels[n + i]));
        data.push(byte(frame.pixels[2 * n + i]));
        data.push(byte(frame.pixels[i]));
    }
    writer.write_image_data(&data).map_err(to_err)?;
    writer.finish().map_err(to_err)
}

/// Feature file: one `clip_id v1 … v_F` record per line.
pub fn load_feature_file(path: &Path) -> Result<HashMap<String, Vec<f64>>> {
    let content = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    let mut out = HashMap::new();
    let mut width = None;
    for (idx, line) in content.lines().enumerate() {
        let lineno = idx + 1;
        let mut parts = line.split_whitespace();
        let Some(id) = parts.next() else { continue };
        let values = parts
            .map(|v| {
                v.parse::<f64>()
                    .map_err(|_| Error::parse(path, lineno, format!("bad float `{v}`")))
            })
            .collect::<Result<Vec<f64>>>()?;
        if values.is_empty() {
            return Err(Error::parse(path, lineno, format!("no features for `{id}`")));
        }
        match width {
            None => width = Some(values.len()),
            Some(w) if w != values.len() => {
                return Err(Error::parse(
                    path,
                    lineno,
                    format!("`{id}` has {} features, earlier records have {w}", values.len()),
                ))
            }
            _ => {}
        }
        if out.insert(id.to_string(), values).is_some() {
            return Err(Error::parse(path, lineno, format!("duplicate clip id `{id}`")));
        }
    }
    Ok(out)
}

pub fn write_feature_file(path: &Path, records: &[(String, Vec<f64>)]) -> Result<()> {
    let mut out = String::new();
    for (id, v) in records {
        out.push_str(id);
        for x in v {
            write!(out, " {x}").expect("string write");
        }
        out.push('\n');
    }
    std::fs::write(path, out).map_err(|e| Error::io(path, e))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn png_round_trip_keeps_planes() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("f.png");
        let (h, w) = (3, 4);
        let n = h * w;
        let mut pixels = vec![0.0; 3 * n];
        pixels[..n].fill(0.2); // blue
        pixels[n..2 * n].fill(0.8); // red
        pixels[2 * n..].fill(0.4); // green
        let frame = FrameImage::new(h, w, pixels).unwrap();
        write_frame_png(&p, &frame).unwrap();
        let back = read_frame_png(&p).unwrap();
        assert_eq!((back.height, back.width), (h, w));
        for plane in 0..3 {
            assert!((back.plane_mean(plane) - frame.plane_mean(plane)).abs() <= 0.5 / 255.0);
        }
    }

    #[test]
    fn feature_file_round_trip_and_errors() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("f.txt");
        write_feature_file(&p, &[("a".into(), vec![1.0, 2.0]), ("b".into(), vec![0.5, -1.0])]).unwrap();
        let m = load_feature_file(&p).unwrap();
        assert_eq!(m["b"], vec![0.5, -1.0]);
        std::fs::write(&p, "a 1 2\nb 1\n").unwrap();
        assert!(matches!(load_feature_file(&p), Err(Error::Parse { line: 2, .. })));
    }
}
