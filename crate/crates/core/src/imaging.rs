//! Bayer raw front end: analog simulation, quantization, RGGB demosaicing.

use std::fs;
use std::io::Write as _;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::quant::{BitDepth, InputDomain, QuantizerSpec};
use crate::tensor::Tensor;

/// Source depths below this are too coarse to stand in for an analog signal.
pub const MIN_ANALOG_BITS: u32 = 10;

/// Single-plane RGGB mosaic of integer codes.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct RawImage {
    width: usize,
    height: usize,
    bit_depth: BitDepth,
    codes: Vec<u16>,
}

impl RawImage {
    pub fn new(width: usize, height: usize, bit_depth: BitDepth, codes: Vec<u16>) -> Result<Self> {
        if width == 0 || height == 0 || !width.is_multiple_of(2) || !height.is_multiple_of(2) {
            return Err(Error::Data(format!(
                "Bayer mosaic needs positive even dimensions, got {width}x{height}"
            )));
        }
        if codes.len() != width * height {
            return Err(Error::Data(format!(
                "{} codes for a {width}x{height} mosaic",
                codes.len()
            )));
        }
        let max = bit_depth.levels();
        if let Some((i, &c)) = codes.iter().enumerate().find(|(_, &c)| u32::from(c) > max) {
            return Err(Error::Data(format!(
                "code {c} at pixel {i} exceeds {}-bit range",
                bit_depth.bits()
            )));
        }
        Ok(RawImage {
            width,
            height,
            bit_depth,
            codes,
        })
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn bit_depth(&self) -> BitDepth {
        self.bit_depth
    }

    pub fn codes(&self) -> &[u16] {
        &self.codes
    }

    /// Codes as a `[height, width]` tensor.
    pub fn mosaic(&self) -> Tensor {
        Tensor::new(
            vec![self.height, self.width],
            self.codes.iter().map(|&c| f64::from(c)).collect(),
        )
        .expect("shape checked on construction")
    }
}

/// `code / (2^N - 1)` per pixel, as a `[height, width]` tensor.
pub fn simulate_analog(raw: &RawImage) -> Tensor {
    if raw.bit_depth.bits() < MIN_ANALOG_BITS {
        log::warn!(
            "{}-bit source is a coarse stand-in for an analog signal (>= {MIN_ANALOG_BITS} bits recommended)",
            raw.bit_depth.bits()
        );
    }
    let l = f64::from(raw.bit_depth.levels());
    raw.mosaic().map(|c| c / l)
}

/// Half-resolution RGB planes `[3, h/2, w/2]`: red from the top-left sample
/// of each 2x2 tile, green as the mean of the two green samples, blue from
/// the bottom-right.
pub fn debayer_rggb(mosaic: &Tensor) -> Result<Tensor> {
    if mosaic.rank() != 2 {
        return Err(Error::Data(format!(
            "mosaic must be 2-D, got {:?}",
            mosaic.shape()
        )));
    }
    let (h, w) = (mosaic.shape()[0], mosaic.shape()[1]);
    if h % 2 != 0 || w % 2 != 0 || h == 0 || w == 0 {
        return Err(Error::Data(format!(
            "mosaic dimensions must be even, got {h}x{w}"
        )));
    }
    let (oh, ow) = (h / 2, w / 2);
    let d = mosaic.data();
    let mut out = vec![0.0; 3 * oh * ow];
    for y in 0..oh {
        for x in 0..ow {
            let at = |dy: usize, dx: usize| d[(2 * y + dy) * w + 2 * x + dx];
            let o = y * ow + x;
            out[o] = at(0, 0);
            out[oh * ow + o] = (at(0, 1) + at(1, 0)) / 2.0;
            out[2 * oh * ow + o] = at(1, 1);
        }
    }
    Tensor::new(vec![3, oh, ow], out)
}

/// Re-digitizes the analog signal with `spec`, giving an `N̂`-bit mosaic.
pub fn quantize_mosaic(raw: &RawImage, spec: &QuantizerSpec) -> Result<RawImage> {
    if spec.domain() != InputDomain::Unit {
        return Err(Error::Config(format!(
            "image quantizers work on the unit interval, not the {} domain",
            spec.domain().as_str()
        )));
    }
    let analog = simulate_analog(raw);
    let codes = analog
        .data()
        .iter()
        .map(|&v| spec.quantize(v).map(|c| c.0 as u16))
        .collect::<Result<Vec<_>>>()?;
    RawImage::new(raw.width, raw.height, spec.bit_depth(), codes)
}

/// Analog simulation, quantization, demosaicing and scaling to `[0, 255]`.
pub fn image_pipeline(raw: &RawImage, spec: &QuantizerSpec) -> Result<Tensor> {
    let q = quantize_mosaic(raw, spec)?;
    let scale = 255.0 / f64::from(spec.bit_depth().levels());
    Ok(debayer_rggb(&q.mosaic())?.map(|v| v * scale))
}

fn sidecar_path(path: &Path) -> PathBuf {
    let mut s = path.as_os_str().to_owned();
    s.push(".meta");
    PathBuf::from(s)
}

fn parse_sidecar(path: &Path, text: &str) -> Result<BitDepth> {
    let line = text.lines().next().unwrap_or("");
    let mut tokens = line.split_whitespace();
    if tokens.next() != Some("raw") || tokens.next() != Some("v1") {
        return Err(Error::parse(path, 1, "sidecar must start with `raw v1`"));
    }
    let mut bits = None;
    for t in tokens {
        match t.split_once('=') {
            Some(("bits", v)) => {
                let b: u32 = v
                    .parse()
                    .map_err(|_| Error::parse(path, 1, format!("bad bit depth `{v}`")))?;
                bits = Some(BitDepth::new(b).map_err(|e| Error::parse(path, 1, e.to_string()))?);
            }
            Some(("pattern", "RGGB")) => {}
            Some(("pattern", p)) => {
                return Err(Error::parse(
                    path,
                    1,
                    format!("unsupported Bayer pattern `{p}`"),
                ))
            }
            _ => {
                return Err(Error::parse(
                    path,
                    1,
                    format!("unknown sidecar token `{t}`"),
                ))
            }
        }
    }
    bits.ok_or_else(|| Error::parse(path, 1, "sidecar lacks `bits=`"))
}

/// Reads a binary PGM (P5). The bit depth comes from the `<file>.meta`
/// sidecar when present, otherwise from a maxval of the form `2^N - 1`.
pub fn read_pgm(path: &Path) -> Result<RawImage> {
    let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
    let mut pos = 0usize;
    let mut line = 1usize;
    let mut fields = Vec::with_capacity(4);
    while fields.len() < 4 {
        while pos < bytes.len() && (bytes[pos].is_ascii_whitespace() || bytes[pos] == b'#') {
            if bytes[pos] == b'#' {
                while pos < bytes.len() && bytes[pos] != b'\n' {
                    pos += 1;
                }
                continue;
            }
            if bytes[pos] == b'\n' {
                line += 1;
            }
            pos += 1;
        }
        let start = pos;
        while pos < bytes.len() && !bytes[pos].is_ascii_whitespace() && bytes[pos] != b'#' {
            pos += 1;
        }
        if start == pos {
            return Err(Error::parse(path, line, "truncated PGM header"));
        }
        fields.push((
            String::from_utf8_lossy(&bytes[start..pos]).into_owned(),
            line,
        ));
    }
    if fields[0].0 != "P5" {
        return Err(Error::parse(
            path,
            1,
            format!("expected binary PGM `P5`, found `{}`", fields[0].0),
        ));
    }
    let num = |i: usize| -> Result<usize> {
        fields[i].0.parse().map_err(|_| {
            Error::parse(
                path,
                fields[i].1,
                format!("bad header number `{}`", fields[i].0),
            )
        })
    };
    let (width, height, maxval) = (num(1)?, num(2)?, num(3)?);
    if maxval == 0 || maxval > 65535 {
        return Err(Error::parse(
            path,
            fields[3].1,
            format!("maxval {maxval} out of range"),
        ));
    }
    // exactly one whitespace byte separates the header from the raster
    pos += 1;
    let bpp = if maxval < 256 { 1 } else { 2 };
    let need = width * height * bpp;
    let raster = bytes.get(pos..pos + need).ok_or_else(|| {
        Error::parse(
            path,
            line,
            format!(
                "raster holds {} bytes, need {need}",
                bytes.len().saturating_sub(pos)
            ),
        )
    })?;
    let codes: Vec<u16> = if bpp == 1 {
        raster.iter().map(|&b| u16::from(b)).collect()
    } else {
        raster
            .chunks_exact(2)
            .map(|c| u16::from_be_bytes([c[0], c[1]]))
            .collect()
    };

    let side = sidecar_path(path);
    let bit_depth = if side.exists() {
        let text = fs::read_to_string(&side).map_err(|e| Error::io(&side, e))?;
        parse_sidecar(&side, &text)?
    } else {
        let n = (maxval + 1).trailing_zeros();
        if (maxval + 1).is_power_of_two() {
            BitDepth::new(n)?
        } else {
            return Err(Error::Data(format!(
                "{}: maxval {maxval} is not 2^N - 1 and no sidecar gives the bit depth",
                path.display()
            )));
        }
    };
    RawImage::new(width, height, bit_depth, codes).map_err(|e| match e {
        Error::Data(m) => Error::Data(format!("{}: {m}", path.display())),
        other => other,
    })
}

/// Writes a P5 PGM with `maxval = 2^N - 1` plus its sidecar.
pub fn write_pgm(raw: &RawImage, path: &Path) -> Result<()> {
    let maxval = raw.bit_depth.levels();
    let mut out = format!("P5\n{} {}\n{maxval}\n", raw.width, raw.height).into_bytes();
    if maxval < 256 {
        out.extend(raw.codes.iter().map(|&c| c as u8));
    } else {
        for &c in &raw.codes {
            out.extend_from_slice(&c.to_be_bytes());
        }
    }
    fs::write(path, out).map_err(|e| Error::io(path, e))?;
    let side = sidecar_path(path);
    fs::write(
        &side,
        format!("raw v1 bits={} pattern=RGGB\n", raw.bit_depth.bits()),
    )
    .map_err(|e| Error::io(&side, e))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
struct PlanesHeader {
    format: String,
    shape: Vec<usize>,
    scale: f64,
    dtype: String,
}

/// Stores planes as one JSON header line followed by little-endian f64s.
/// `scale` records the factor that mapped codes onto `[0, 255]`.
pub fn write_planes(planes: &Tensor, scale: f64, path: &Path) -> Result<()> {
    let header = PlanesHeader {
        format: "planes v1".into(),
        shape: planes.shape().to_vec(),
        scale,
        dtype: "f64le".into(),
    };
    let mut out = serde_json::to_vec(&header)?;
    out.push(b'\n');
    for v in planes.data() {
        out.write_all(&v.to_le_bytes()).expect("writing to a Vec");
    }
    fs::write(path, out).map_err(|e| Error::io(path, e))
}

/// Returns the planes and their recorded scale.
pub fn read_planes(path: &Path) -> Result<(Tensor, f64)> {
    let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
    let nl = bytes
        .iter()
        .position(|&b| b == b'\n')
        .ok_or_else(|| Error::parse(path, 1, "missing planes header"))?;
    let header: PlanesHeader =
        serde_json::from_slice(&bytes[..nl]).map_err(|e| Error::parse(path, 1, e.to_string()))?;
    if header.format != "planes v1" || header.dtype != "f64le" {
        return Err(Error::parse(path, 1, "unsupported planes format"));
    }
    let body = &bytes[nl + 1..];
    let n: usize = header.shape.iter().product();
    if body.len() != n * 8 {
        return Err(Error::parse(
            path,
            2,
            format!("expected {} data bytes, found {}", n * 8, body.len()),
        ));
    }
    let data = body
        .chunks_exact(8)
        .map(|c| f64::from_le_bytes(c.try_into().expect("8-byte chunk")))
        .collect();
    Ok((Tensor::new(header.shape, data)?, header.scale))
}
