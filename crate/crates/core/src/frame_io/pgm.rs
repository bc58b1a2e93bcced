//! Netpbm greymap codec, restricted to 8-bit (`maxval` 255) images.
//!
//! Decoding accepts binary (`P5`) and ASCII (`P2`) greymaps with `#`
//! comments anywhere in the header. Several images may be concatenated in
//! one buffer; [`parse_pgm`] returns the unconsumed tail so callers can walk
//! the whole buffer. Encoding always produces `P5`.

use crate::{Error, Result};

/// A decoded greymap of arbitrary size.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct GreyImage {
    pub width: usize,
    pub height: usize,
    pub samples: Vec<u8>,
}

const MAXVAL: u32 = 255;
// Upper bound on width * height; a sanity fence against absurd headers.
const MAX_PIXELS: usize = 1 << 28;

#[derive(Clone, Copy, PartialEq, Eq)]
enum Magic {
    Ascii,
    Binary,
}

fn skip_ws_and_comments(mut data: &[u8]) -> &[u8] {
    loop {
        match data.first() {
            Some(b) if b.is_ascii_whitespace() => data = &data[1..],
            Some(b'#') => {
                let end = data.iter().position(|&b| b == b'\n' || b == b'\r');
                data = match end {
                    Some(i) => &data[i..],
                    None => &[],
                };
            }
            _ => return data,
        }
    }
}

fn read_uint<'a>(data: &'a [u8], field: &str) -> Result<(u32, &'a [u8])> {
    let data = skip_ws_and_comments(data);
    let digits = data.iter().take_while(|b| b.is_ascii_digit()).count();
    if digits == 0 {
        return Err(Error::MalformedHeader(format!("expected {field}")));
    }
    let mut value: u32 = 0;
    for &d in &data[..digits] {
        value = value
            .checked_mul(10)
            .and_then(|v| v.checked_add(u32::from(d - b'0')))
            .ok_or_else(|| Error::MalformedHeader(format!("{field} overflows")))?;
    }
    Ok((value, &data[digits..]))
}

/// Parses one greymap from the front of `data`, returning it along with the
/// bytes that follow it.
pub fn parse_pgm(data: &[u8]) -> Result<(GreyImage, &[u8])> {
    let data = skip_ws_and_comments(data);
    let magic = match data {
        [b'P', b'5', rest @ ..] if rest.first().is_none_or(|b| !b.is_ascii_digit()) => {
            Magic::Binary
        }
        [b'P', b'2', rest @ ..] if rest.first().is_none_or(|b| !b.is_ascii_digit()) => {
            Magic::Ascii
        }
        _ => return Err(Error::MalformedHeader("expected P5 or P2 magic".into())),
    };
    let rest = &data[2..];
    let (width, rest) = read_uint(rest, "width")?;
    let (height, rest) = read_uint(rest, "height")?;
    let (maxval, rest) = read_uint(rest, "maxval")?;
    if width == 0 || height == 0 {
        return Err(Error::MalformedHeader("zero dimension".into()));
    }
    if maxval != MAXVAL {
        return Err(Error::MalformedHeader(format!(
            "maxval must be {MAXVAL}, found {maxval}"
        )));
    }
    let (width, height) = (width as usize, height as usize);
    let count = width
        .checked_mul(height)
        .filter(|&n| n <= MAX_PIXELS)
        .ok_or_else(|| Error::MalformedHeader("image too large".into()))?;

    match magic {
        Magic::Binary => {
            // Exactly one whitespace byte separates the header from the raster.
            let rest = match rest.split_first() {
                Some((b, tail)) if b.is_ascii_whitespace() => tail,
                _ => return Err(Error::MalformedHeader("missing raster separator".into())),
            };
            if rest.len() < count {
                return Err(Error::MalformedHeader(format!(
                    "truncated raster: need {count} bytes, have {}",
                    rest.len()
                )));
            }
            let image = GreyImage {
                width,
                height,
                samples: rest[..count].to_vec(),
            };
            Ok((image, &rest[count..]))
        }
        Magic::Ascii => {
            let mut samples = Vec::with_capacity(count.min(rest.len()));
            let mut rest = rest;
            for _ in 0..count {
                let (v, tail) = read_uint(rest, "sample")
                    .map_err(|_| Error::MalformedHeader("truncated ASCII raster".into()))?;
                if v > MAXVAL {
                    return Err(Error::SampleOutOfRange {
                        value: v,
                        maxval: MAXVAL,
                    });
                }
                samples.push(v as u8);
                rest = tail;
            }
            Ok((
                GreyImage {
                    width,
                    height,
                    samples,
                },
                rest,
            ))
        }
    }
}

/// Parses every greymap in a buffer holding one or more concatenated images.
pub fn parse_pgm_stream(mut data: &[u8]) -> Result<Vec<GreyImage>> {
    let mut images = Vec::new();
    loop {
        let (image, rest) = parse_pgm(data)?;
        images.push(image);
        data = skip_ws_and_comments(rest);
        if data.is_empty() {
            return Ok(images);
        }
    }
}

/// Encodes a greymap as binary `P5`.
pub fn encode_pgm(width: usize, height: usize, samples: &[u8]) -> Vec<u8> {
    debug_assert_eq!(samples.len(), width * height);
    let mut out = format!("P5\n{width} {height}\n{MAXVAL}\n").into_bytes();
    out.extend_from_slice(samples);
    out
}
