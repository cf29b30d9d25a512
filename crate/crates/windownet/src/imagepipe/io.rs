//! File formats: binary portable graymap ("P5") for interchange and the
//! raw tensor container ("WNT1") used for dataset persistence.
//!
//! WNT1 layout, little-endian throughout: magic `WNT1`, u32 bit depth,
//! u32 channels, u32 height, u32 width, then channels*height*width f64
//! pixel values.

use super::{ImageTensor, PipeError};
use std::fs;
use std::io::Write as _;
use std::path::Path;

const WNT_MAGIC: &[u8; 4] = b"WNT1";

/// Load a grayscale image, dispatching on content: PGM when the file starts
/// with `P5`, raw tensor container when it starts with `WNT1`.
///
/// For PGM, the declared bit depth follows the header's maxval: up to 255 is
/// 8-bit, up to 4095 is 12-bit (even inside 2-byte samples), otherwise
/// 16-bit.
pub fn load_image(path: &Path) -> Result<ImageTensor, PipeError> {
    let display = path.display().to_string();
    let bytes = fs::read(path).map_err(|source| PipeError::Open {
        path: display.clone(),
        source,
    })?;
    if bytes.starts_with(b"P5") {
        parse_pgm(&bytes, &display)
    } else if bytes.starts_with(WNT_MAGIC) {
        parse_wnt(&bytes, &display)
    } else {
        Err(PipeError::UnsupportedFormat {
            path: display,
            detail: "expected magic \"P5\" (portable graymap) or \"WNT1\" (raw tensor)".into(),
        })
    }
}

/// Save an image, dispatching on the file extension: `.pgm` writes a binary
/// graymap (single channel only), anything else writes the WNT1 container.
pub fn save_image(img: &ImageTensor, path: &Path) -> Result<(), PipeError> {
    match path.extension().and_then(|e| e.to_str()) {
        Some("pgm") => write_pgm(img, path),
        _ => write_wnt(img, path),
    }
}

fn parse_pgm(bytes: &[u8], path: &str) -> Result<ImageTensor, PipeError> {
    let mut pos = 2usize; // past "P5"
    let mut fields = [0usize; 3];
    for field in fields.iter_mut() {
        *field = next_pgm_int(bytes, &mut pos, path)?;
    }
    let (width, height, maxval) = (fields[0], fields[1], fields[2]);
    if maxval == 0 || maxval > 65535 {
        return Err(PipeError::MalformedHeader {
            path: path.into(),
            detail: format!("maxval {maxval} outside 1..=65535"),
        });
    }
    // Exactly one whitespace byte separates the header from the payload.
    if pos >= bytes.len() || !bytes[pos].is_ascii_whitespace() {
        return Err(PipeError::MalformedHeader {
            path: path.into(),
            detail: "missing whitespace between header and pixel data".into(),
        });
    }
    pos += 1;

    let two_byte = maxval > 255;
    let n = width * height;
    let expected = n * if two_byte { 2 } else { 1 };
    if bytes.len() - pos < expected {
        return Err(PipeError::TruncatedPayload {
            path: path.into(),
            expected: pos + expected,
            offset: bytes.len(),
        });
    }
    let mut data = Vec::with_capacity(n);
    if two_byte {
        for i in 0..n {
            // Big-endian two-byte samples, per the graymap convention.
            let hi = bytes[pos + 2 * i] as u16;
            let lo = bytes[pos + 2 * i + 1] as u16;
            data.push(((hi << 8) | lo) as f64);
        }
    } else {
        data.extend(bytes[pos..pos + n].iter().map(|&b| b as f64));
    }
    let bit_depth = if maxval <= 255 {
        8
    } else if maxval <= 4095 {
        12
    } else {
        16
    };
    ImageTensor::new(1, height, width, bit_depth, data)
}

fn next_pgm_int(bytes: &[u8], pos: &mut usize, path: &str) -> Result<usize, PipeError> {
    // Skip whitespace and '#' comment lines.
    loop {
        while *pos < bytes.len() && bytes[*pos].is_ascii_whitespace() {
            *pos += 1;
        }
        if *pos < bytes.len() && bytes[*pos] == b'#' {
            while *pos < bytes.len() && bytes[*pos] != b'\n' {
                *pos += 1;
            }
        } else {
            break;
        }
    }
    let start = *pos;
    while *pos < bytes.len() && bytes[*pos].is_ascii_digit() {
        *pos += 1;
    }
    if start == *pos {
        return Err(PipeError::MalformedHeader {
            path: path.into(),
            detail: format!("expected integer at byte offset {start}"),
        });
    }
    std::str::from_utf8(&bytes[start..*pos])
        .ok()
        .and_then(|s| s.parse().ok())
        .ok_or_else(|| PipeError::MalformedHeader {
            path: path.into(),
            detail: format!("unparsable integer at byte offset {start}"),
        })
}

fn parse_wnt(bytes: &[u8], path: &str) -> Result<ImageTensor, PipeError> {
    let header_len = 4 + 4 * 4;
    if bytes.len() < header_len {
        return Err(PipeError::MalformedHeader {
            path: path.into(),
            detail: format!("file shorter than the {header_len}-byte header"),
        });
    }
    let read_u32 = |at: usize| u32::from_le_bytes(bytes[at..at + 4].try_into().unwrap()) as usize;
    let bit_depth = read_u32(4);
    let channels = read_u32(8);
    let height = read_u32(12);
    let width = read_u32(16);
    if !matches!(bit_depth, 8 | 12 | 16) {
        return Err(PipeError::MalformedHeader {
            path: path.into(),
            detail: format!("bit depth field {bit_depth} not one of 8/12/16"),
        });
    }
    let n = channels * height * width;
    let expected = header_len + 8 * n;
    if bytes.len() < expected {
        return Err(PipeError::TruncatedPayload {
            path: path.into(),
            expected,
            offset: bytes.len(),
        });
    }
    let mut data = Vec::with_capacity(n);
    for i in 0..n {
        let at = header_len + 8 * i;
        data.push(f64::from_le_bytes(bytes[at..at + 8].try_into().unwrap()));
    }
    ImageTensor::new(channels, height, width, bit_depth as u8, data)
}

fn write_wnt(img: &ImageTensor, path: &Path) -> Result<(), PipeError> {
    let mut buf = Vec::with_capacity(20 + 8 * img.data().len());
    buf.extend_from_slice(WNT_MAGIC);
    buf.extend_from_slice(&(img.bit_depth() as u32).to_le_bytes());
    buf.extend_from_slice(&(img.channels() as u32).to_le_bytes());
    buf.extend_from_slice(&(img.height() as u32).to_le_bytes());
    buf.extend_from_slice(&(img.width() as u32).to_le_bytes());
    for &v in img.data() {
        buf.extend_from_slice(&v.to_le_bytes());
    }
    fs::write(path, buf).map_err(|source| PipeError::Write {
        path: path.display().to_string(),
        source,
    })
}

fn write_pgm(img: &ImageTensor, path: &Path) -> Result<(), PipeError> {
    if img.channels() != 1 {
        return Err(PipeError::Parameter(format!(
            "PGM output is single-channel, image has {}",
            img.channels()
        )));
    }
    let maxval: u32 = (1u32 << img.bit_depth()) - 1;
    let mut buf = Vec::new();
    write!(buf, "P5\n{} {}\n{}\n", img.width(), img.height(), maxval).unwrap();
    for &v in img.data() {
        let v = v.round().clamp(0.0, maxval as f64) as u32;
        if maxval > 255 {
            buf.extend_from_slice(&(v as u16).to_be_bytes());
        } else {
            buf.push(v as u8);
        }
    }
    fs::write(path, buf).map_err(|source| PipeError::Write {
        path: path.display().to_string(),
        source,
    })
}

/// Write an 8-bit PGM from values already on the 0..255 scale.
pub fn write_pgm_u8(values: &[f64], height: usize, width: usize, path: &Path) -> Result<(), PipeError> {
    let img = ImageTensor::new(1, height, width, 8, values.to_vec())?;
    write_pgm(&img, path)
}

#[cfg(test)]
mod tests {
    use super::*;
    use tempfile::tempdir;

    fn pgm_bytes(maxval: u32, samples: &[u32]) -> Vec<u8> {
        let mut b = format!("P5\n4 4\n{maxval}\n").into_bytes();
        for &s in samples {
            if maxval > 255 {
                b.extend_from_slice(&(s as u16).to_be_bytes());
            } else {
                b.push(s as u8);
            }
        }
        b
    }

    #[test]
    fn pgm_16bit_container_with_12bit_maxval() {
        let dir = tempdir().unwrap();
        let path = dir.path().join("a.pgm");
        let samples: Vec<u32> = (0..16).map(|i| i * 273).collect();
        fs::write(&path, pgm_bytes(4095, &samples)).unwrap();
        let img = load_image(&path).unwrap();
        assert_eq!((img.channels(), img.height(), img.width()), (1, 4, 4));
        assert_eq!(img.bit_depth(), 12);
        for (i, &v) in img.data().iter().enumerate() {
            assert_eq!(v, samples[i] as f64);
        }
    }

    #[test]
    fn pgm_8bit_maxval() {
        let dir = tempdir().unwrap();
        let path = dir.path().join("b.pgm");
        fs::write(&path, pgm_bytes(255, &[0; 16])).unwrap();
        assert_eq!(load_image(&path).unwrap().bit_depth(), 8);
    }

    #[test]
    fn truncated_payload_names_offset() {
        let dir = tempdir().unwrap();
        let path = dir.path().join("t.pgm");
        let mut bytes = pgm_bytes(4095, &[7; 16]);
        bytes.truncate(bytes.len() - 5);
        fs::write(&path, &bytes).unwrap();
        match load_image(&path).unwrap_err() {
            PipeError::TruncatedPayload { expected, offset, .. } => {
                assert!(offset < expected);
            }
            other => panic!("expected truncation error, got {other:?}"),
        }
    }

    #[test]
    fn missing_file_is_open_error() {
        assert!(matches!(
            load_image(Path::new("/nonexistent/x.pgm")),
            Err(PipeError::Open { .. })
        ));
    }

    #[test]
    fn unknown_magic_rejected() {
        let dir = tempdir().unwrap();
        let path = dir.path().join("u.bin");
        fs::write(&path, b"JUNKJUNKJUNK").unwrap();
        assert!(matches!(
            load_image(&path),
            Err(PipeError::UnsupportedFormat { .. })
        ));
    }

    #[test]
    fn wnt_round_trip() {
        let dir = tempdir().unwrap();
        let path = dir.path().join("img.wnt");
        let data: Vec<f64> = (0..24).map(|i| i as f64 * 0.5).collect();
        let img = ImageTensor::new(2, 3, 4, 12, data).unwrap();
        save_image(&img, &path).unwrap();
        let back = load_image(&path).unwrap();
        assert_eq!(back, img);
    }

    #[test]
    fn pgm_round_trip_12bit() {
        let dir = tempdir().unwrap();
        let path = dir.path().join("img.pgm");
        let data: Vec<f64> = (0..16).map(|i| (i * 255) as f64).collect();
        let img = ImageTensor::new(1, 4, 4, 12, data).unwrap();
        save_image(&img, &path).unwrap();
        let back = load_image(&path).unwrap();
        assert_eq!(back, img);
    }
}
