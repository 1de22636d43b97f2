//! Map download bundle: a `multipart/mixed` body holding the PGM image and
//! its JSON metadata.

use navsim_core::grid::OccupancyGrid;
use navsim_core::mapping::{encode_pgm, grid_from_parts, parse_metadata, MapMetadata};
use thiserror::Error;

pub const BOUNDARY: &str = "navsim-map-part";

#[derive(Debug, Error)]
pub enum BundleError {
    #[error("not a multipart/mixed body")]
    ContentType,
    #[error("missing part {0}")]
    MissingPart(&'static str),
    #[error(transparent)]
    Map(#[from] navsim_core::mapping::MapError),
}

pub fn content_type() -> String {
    format!("multipart/mixed; boundary={BOUNDARY}")
}

pub fn encode(grid: &OccupancyGrid) -> Vec<u8> {
    let meta = serde_json::to_vec_pretty(&MapMetadata::for_grid(grid)).expect("metadata serializes");
    let mut out = Vec::new();
    for (name, mime, body) in [
        ("map.pgm", "image/x-portable-graymap", encode_pgm(grid)),
        ("map.json", "application/json", meta),
    ] {
        out.extend(format!("--{BOUNDARY}\r\nContent-Type: {mime}\r\nContent-Disposition: attachment; filename=\"{name}\"\r\n\r\n").as_bytes());
        out.extend(body);
        out.extend(b"\r\n");
    }
    out.extend(format!("--{BOUNDARY}--\r\n").as_bytes());
    out
}

/// Splits a bundle into `(headers, body)` parts.
pub fn parts<'a>(content_type: &str, body: &'a [u8]) -> Result<Vec<(String, &'a [u8])>, BundleError> {
    let boundary = content_type
        .strip_prefix("multipart/mixed")
        .and_then(|rest| rest.split(';').find_map(|p| p.trim().strip_prefix("boundary=")))
        .ok_or(BundleError::ContentType)?;
    let delim = format!("--{boundary}");
    let d = delim.as_bytes();
    let mut starts = Vec::new();
    let mut i = 0;
    while i + d.len() <= body.len() {
        if &body[i..i + d.len()] == d {
            starts.push(i);
            i += d.len();
        } else {
            i += 1;
        }
    }
    let mut out = Vec::new();
    for w in starts.windows(2) {
        let part = &body[w[0] + d.len()..w[1]];
        let part = part.strip_prefix(b"\r\n").unwrap_or(part);
        let part = part.strip_suffix(b"\r\n").unwrap_or(part);
        let Some(split) = part.windows(4).position(|x| x == b"\r\n\r\n") else { continue };
        out.push((String::from_utf8_lossy(&part[..split]).into_owned(), &part[split + 4..]));
    }
    Ok(out)
}

pub fn decode(content_type: &str, body: &[u8]) -> Result<OccupancyGrid, BundleError> {
    let parts = parts(content_type, body)?;
    let find = |mime: &str| parts.iter().find(|(h, _)| h.contains(mime)).map(|(_, b)| *b);
    let pgm = find("image/x-portable-graymap").ok_or(BundleError::MissingPart("map.pgm"))?;
    let meta = find("application/json").ok_or(BundleError::MissingPart("map.json"))?;
    let meta = parse_metadata(&String::from_utf8_lossy(meta))?;
    Ok(grid_from_parts(pgm, &meta)?)
}
