//! Binary PGM (`P5`) and PPM (`P6`) with maxval 255.

use std::fs;
use std::path::Path;

use super::image::Frame;
use crate::error::{Error, Result};

pub fn encode(frame: &Frame) -> Result<Vec<u8>> {
    let magic = match frame.channels {
        1 => "P5",
        3 => "P6",
        c => return Err(Error::invalid(format!("PNM holds 1 or 3 channels, not {c}"))),
    };
    if frame.pixels.len() != frame.width * frame.height * frame.channels {
        return Err(Error::invalid("frame pixel count does not match its dimensions"));
    }
    let mut out = format!("{magic}\n{} {}\n255\n", frame.width, frame.height).into_bytes();
    out.extend_from_slice(&frame.pixels);
    Ok(out)
}

struct Cursor<'a> {
    bytes: &'a [u8],
    pos: usize,
    path: &'a Path,
}

impl Cursor<'_> {
    fn fail<T>(&self, reason: impl Into<String>) -> Result<T> {
        Err(Error::Format {
            path: self.path.to_path_buf(),
            offset: self.pos as u64,
            reason: reason.into(),
        })
    }

    fn skip_space(&mut self) {
        while let Some(&b) = self.bytes.get(self.pos) {
            if b == b'#' {
                while self.bytes.get(self.pos).is_some_and(|&c| c != b'\n') {
                    self.pos += 1;
                }
            } else if b.is_ascii_whitespace() {
                self.pos += 1;
            } else {
                break;
            }
        }
    }

    fn number(&mut self, what: &str) -> Result<usize> {
        self.skip_space();
        let start = self.pos;
        while self.bytes.get(self.pos).is_some_and(u8::is_ascii_digit) {
            self.pos += 1;
        }
        if start == self.pos {
            return self.fail(format!("expected {what}"));
        }
        let text = std::str::from_utf8(&self.bytes[start..self.pos]).expect("ascii digits");
        match text.parse() {
            Ok(v) => Ok(v),
            Err(_) => {
                self.pos = start;
                self.fail(format!("{what} out of range"))
            }
        }
    }
}

pub fn decode(bytes: &[u8], path: &Path) -> Result<Frame> {
    let mut cur = Cursor { bytes, pos: 0, path };
    let channels = match bytes.get(..2) {
        Some(b"P5") => 1,
        Some(b"P6") => 3,
        _ => return cur.fail("bad magic, expected P5 or P6"),
    };
    cur.pos = 2;
    if !bytes.get(2).is_some_and(u8::is_ascii_whitespace) {
        return cur.fail("expected whitespace after magic");
    }
    let width = cur.number("width")?;
    let height = cur.number("height")?;
    let maxval_at = cur.pos;
    let maxval = cur.number("maxval")?;
    if maxval != 255 {
        cur.pos = maxval_at;
        cur.skip_space();
        return cur.fail(format!("unsupported maxval {maxval}, only 255 is accepted"));
    }
    if width == 0 || height == 0 {
        return cur.fail("zero image dimension");
    }
    if !bytes.get(cur.pos).is_some_and(u8::is_ascii_whitespace) {
        return cur.fail("expected a single whitespace byte before pixel data");
    }
    cur.pos += 1;
    let need = width.checked_mul(height).and_then(|n| n.checked_mul(channels));
    let Some(need) = need else {
        return cur.fail("image dimensions overflow");
    };
    let data = &bytes[cur.pos..];
    if data.len() != need {
        return cur.fail(format!("expected {need} bytes of pixel data, found {}", data.len()));
    }
    Ok(Frame {
        width,
        height,
        channels,
        pixels: data.to_vec(),
    })
}

pub fn write(frame: &Frame, path: &Path) -> Result<()> {
    fs::write(path, encode(frame)?).map_err(|e| Error::io(path, e))
}

pub fn read(path: &Path) -> Result<Frame> {
    let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
    decode(&bytes, path)
}
