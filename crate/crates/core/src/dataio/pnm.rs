//! Binary portable anymaps: P6 (8-bit RGB) and P5 (8- or 16-bit gray).

use std::fs;
use std::path::Path;

use crate::error::{Error, Result};

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Pnm {
    pub width: usize,
    pub height: usize,
    pub channels: usize,
    pub maxval: u16,
    /// Row-major, channel-interleaved samples.
    pub samples: Vec<u16>,
}

fn header_token(buf: &[u8], pos: &mut usize) -> Result<String> {
    loop {
        while *pos < buf.len() && buf[*pos].is_ascii_whitespace() {
            *pos += 1;
        }
        if *pos < buf.len() && buf[*pos] == b'#' {
            while *pos < buf.len() && buf[*pos] != b'\n' {
                *pos += 1;
            }
            continue;
        }
        break;
    }
    let start = *pos;
    while *pos < buf.len() && !buf[*pos].is_ascii_whitespace() && buf[*pos] != b'#' {
        *pos += 1;
    }
    if start == *pos {
        return Err(Error::Format("truncated anymap header".into()));
    }
    Ok(String::from_utf8_lossy(&buf[start..*pos]).into_owned())
}

fn header_number(buf: &[u8], pos: &mut usize, what: &str) -> Result<usize> {
    let tok = header_token(buf, pos)?;
    tok.parse().map_err(|_| Error::Format(format!("bad {what} `{tok}` in anymap header")))
}

pub fn decode(buf: &[u8]) -> Result<Pnm> {
    let mut pos = 0;
    let magic = header_token(buf, &mut pos)?;
    let channels = match magic.as_str() {
        "P5" => 1,
        "P6" => 3,
        other => return Err(Error::Format(format!("unsupported anymap type `{other}`"))),
    };
    let width = header_number(buf, &mut pos, "width")?;
    let height = header_number(buf, &mut pos, "height")?;
    let maxval = header_number(buf, &mut pos, "maxval")?;
    if width == 0 || height == 0 {
        return Err(Error::Format(format!("empty anymap {width}x{height}")));
    }
    if !(1..=65535).contains(&maxval) {
        return Err(Error::Format(format!("maxval {maxval} outside 1..=65535")));
    }
    // Exactly one whitespace byte separates the header from the raster.
    if pos >= buf.len() || !buf[pos].is_ascii_whitespace() {
        return Err(Error::Format("missing whitespace after anymap header".into()));
    }
    pos += 1;
    let count = width * height * channels;
    let bytes_per = if maxval > 255 { 2 } else { 1 };
    let raster = &buf[pos..];
    if raster.len() != count * bytes_per {
        return Err(Error::Format(format!(
            "anymap raster has {} bytes, expected {}",
            raster.len(),
            count * bytes_per
        )));
    }
    let samples: Vec<u16> = if bytes_per == 1 {
        raster.iter().map(|&b| b as u16).collect()
    } else {
        raster.chunks_exact(2).map(|b| u16::from_be_bytes([b[0], b[1]])).collect()
    };
    if let Some(&bad) = samples.iter().find(|&&s| s as usize > maxval) {
        return Err(Error::Format(format!("sample {bad} exceeds maxval {maxval}")));
    }
    Ok(Pnm { width, height, channels, maxval: maxval as u16, samples })
}

pub fn encode(img: &Pnm) -> Result<Vec<u8>> {
    let magic = match img.channels {
        1 => "P5",
        3 => "P6",
        c => return Err(Error::Format(format!("anymaps hold 1 or 3 channels, not {c}"))),
    };
    if img.samples.len() != img.width * img.height * img.channels {
        return Err(Error::Format("sample count does not match dimensions".into()));
    }
    let mut out = format!("{magic}\n{} {}\n{}\n", img.width, img.height, img.maxval).into_bytes();
    if img.maxval > 255 {
        for s in &img.samples {
            out.extend_from_slice(&s.to_be_bytes());
        }
    } else {
        out.extend(img.samples.iter().map(|&s| s as u8));
    }
    Ok(out)
}

pub fn read(path: &Path) -> Result<Pnm> {
    let buf = fs::read(path)?;
    decode(&buf).map_err(|e| Error::Format(format!("{}: {e}", path.display())))
}

pub fn write(path: &Path, img: &Pnm) -> Result<()> {
    fs::write(path, encode(img)?)?;
    Ok(())
}

pub fn write_ppm(path: &Path, width: usize, height: usize, rgb: &[u8]) -> Result<()> {
    write(path, &Pnm { width, height, channels: 3, maxval: 255, samples: rgb.iter().map(|&v| v as u16).collect() })
}

pub fn write_pgm8(path: &Path, width: usize, height: usize, gray: &[u8]) -> Result<()> {
    write(path, &Pnm { width, height, channels: 1, maxval: 255, samples: gray.iter().map(|&v| v as u16).collect() })
}

pub fn write_pgm16(path: &Path, width: usize, height: usize, gray: &[u16]) -> Result<()> {
    write(path, &Pnm { width, height, channels: 1, maxval: 65535, samples: gray.to_vec() })
}
