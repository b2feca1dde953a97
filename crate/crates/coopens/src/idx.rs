//! IDX files: a 4-byte magic `00 00 08 rank`, `rank` big-endian u32 sizes,
//! then the raw u8 payload. Images are `[n, h, w]` (grayscale) or
//! `[n, h, w, c]`; labels are `[n]`.

use std::fs;
use std::path::Path;

use coopens_core::data::{Dataset, ImageDims, ImageSample};

use crate::error::{Error, Result};

const U8_TYPE: u8 = 0x08;

struct Header {
    dims: Vec<usize>,
    payload_at: usize,
}

fn parse_header(bytes: &[u8], path: &Path, allowed_ranks: &[u8]) -> Result<Header> {
    if bytes.len() < 4 {
        return Err(Error::format(
            path,
            bytes.len() as u64,
            "file ends inside the magic number",
        ));
    }
    if bytes[0] != 0 || bytes[1] != 0 || bytes[2] != U8_TYPE || !allowed_ranks.contains(&bytes[3]) {
        return Err(Error::format(
            path,
            0,
            format!(
                "bad magic {:02x?}, expected rank in {allowed_ranks:?} of u8",
                &bytes[..4]
            ),
        ));
    }
    let rank = bytes[3] as usize;
    let payload_at = 4 + 4 * rank;
    if bytes.len() < payload_at {
        return Err(Error::format(
            path,
            bytes.len() as u64,
            "file ends inside the dimension sizes",
        ));
    }
    let dims = bytes[4..payload_at]
        .chunks_exact(4)
        .map(|c| u32::from_be_bytes(c.try_into().expect("4 bytes")) as usize)
        .collect();
    Ok(Header { dims, payload_at })
}

fn payload<'a>(bytes: &'a [u8], header: &Header, path: &Path) -> Result<&'a [u8]> {
    let len: usize = header.dims.iter().product();
    let end = header.payload_at + len;
    if bytes.len() < end {
        return Err(Error::format(
            path,
            bytes.len() as u64,
            format!(
                "truncated payload: {len} bytes expected from offset {}",
                header.payload_at
            ),
        ));
    }
    if bytes.len() > end {
        return Err(Error::format(path, end as u64, "trailing bytes after the payload"));
    }
    Ok(&bytes[header.payload_at..end])
}

fn read(path: &Path) -> Result<Vec<u8>> {
    fs::read(path).map_err(|e| Error::io(path, e))
}

/// Parse an image/label file pair. `n_classes` defaults to one past the
/// largest label.
pub fn parse_idx(
    images: &[u8],
    labels: &[u8],
    images_path: &Path,
    labels_path: &Path,
    n_classes: Option<usize>,
) -> Result<Dataset> {
    let ih = parse_header(images, images_path, &[3, 4])?;
    let lh = parse_header(labels, labels_path, &[1])?;
    let (n, h, w) = (ih.dims[0], ih.dims[1], ih.dims[2]);
    let c = ih.dims.get(3).copied().unwrap_or(1);
    let dims = ImageDims::new(h, w, c)
        .map_err(|e| Error::format(images_path, 8, format!("unsupported image geometry: {e}")))?;
    if lh.dims[0] != n {
        return Err(Error::format(
            labels_path,
            4,
            format!("{} labels for {n} images", lh.dims[0]),
        ));
    }
    let pixels = payload(images, &ih, images_path)?;
    let label_bytes = payload(labels, &lh, labels_path)?;
    let n_classes = n_classes.unwrap_or_else(|| label_bytes.iter().max().map_or(0, |&m| m as usize + 1));
    if let Some(pos) = label_bytes.iter().position(|&l| l as usize >= n_classes) {
        return Err(Error::format(
            labels_path,
            (lh.payload_at + pos) as u64,
            format!("label {} >= {n_classes} classes", label_bytes[pos]),
        ));
    }
    let per = dims.pixels();
    let samples = label_bytes
        .iter()
        .enumerate()
        .map(|(i, &l)| ImageSample {
            pixels: pixels[i * per..(i + 1) * per].to_vec(),
            label: l as usize,
            source_id: i as u64,
        })
        .collect();
    Ok(Dataset::new(dims, n_classes, samples)?)
}

pub fn load_idx(images_path: &Path, labels_path: &Path, n_classes: Option<usize>) -> Result<Dataset> {
    parse_idx(
        &read(images_path)?,
        &read(labels_path)?,
        images_path,
        labels_path,
        n_classes,
    )
}

/// `(images, labels)` file contents for `dataset`; grayscale images are
/// written with rank 3.
pub fn encode_idx(dataset: &Dataset) -> Result<(Vec<u8>, Vec<u8>)> {
    if dataset.n_classes() > 256 {
        return Err(Error::Usage(format!(
            "IDX labels are single bytes; {} classes do not fit",
            dataset.n_classes()
        )));
    }
    let d = dataset.dims();
    let mut dims = vec![dataset.len(), d.height, d.width];
    if d.channels != 1 {
        dims.push(d.channels);
    }
    let mut images = vec![0, 0, U8_TYPE, dims.len() as u8];
    for s in &dims {
        images.extend_from_slice(&(*s as u32).to_be_bytes());
    }
    let mut labels = vec![0, 0, U8_TYPE, 1];
    labels.extend_from_slice(&(dataset.len() as u32).to_be_bytes());
    for s in dataset.samples() {
        images.extend_from_slice(&s.pixels);
        labels.push(s.label as u8);
    }
    Ok((images, labels))
}

pub fn write_idx(dataset: &Dataset, images_path: &Path, labels_path: &Path) -> Result<()> {
    let (images, labels) = encode_idx(dataset)?;
    fs::write(images_path, images).map_err(|e| Error::io(images_path, e))?;
    fs::write(labels_path, labels).map_err(|e| Error::io(labels_path, e))
}

#[cfg(test)]
mod tests {
    use super::*;
    use coopens_core::data::synth_generate;

    fn p(s: &str) -> &Path {
        Path::new(s)
    }

    #[test]
    fn round_trip_is_exact() {
        let d = synth_generate(4, 10, 30, 16).unwrap();
        let (i, l) = encode_idx(&d).unwrap();
        assert_eq!(i.len(), 16 + 300 * 256);
        assert_eq!(&i[..4], &[0, 0, 8, 3]);
        assert_eq!(&l[..4], &[0, 0, 8, 1]);
        let back = parse_idx(&i, &l, p("i"), p("l"), Some(10)).unwrap();
        assert_eq!(back, d);
    }

    #[test]
    fn color_images_use_rank_four() {
        let dims = ImageDims::new(16, 17, 3).unwrap();
        let samples = (0..2)
            .map(|k| ImageSample {
                pixels: (0..dims.pixels()).map(|v| (v * 7 + k) as u8).collect(),
                label: k,
                source_id: k as u64,
            })
            .collect();
        let d = Dataset::new(dims, 2, samples).unwrap();
        let (i, l) = encode_idx(&d).unwrap();
        assert_eq!(i[3], 4);
        assert_eq!(parse_idx(&i, &l, p("i"), p("l"), None).unwrap(), d);
    }

    #[test]
    fn empty_payload() {
        let mut i = vec![0, 0, 8, 3];
        for s in [0u32, 16, 16] {
            i.extend_from_slice(&s.to_be_bytes());
        }
        let l = vec![0, 0, 8, 1, 0, 0, 0, 0];
        let d = parse_idx(&i, &l, p("i"), p("l"), None).unwrap();
        assert!(d.is_empty());
    }

    #[test]
    fn format_errors_name_offsets() {
        let d = synth_generate(4, 10, 30, 16).unwrap();
        let (mut i, l) = encode_idx(&d).unwrap();
        let truncated = &i[..i.len() - 1];
        match parse_idx(truncated, &l, p("i"), p("l"), None) {
            Err(Error::Format { offset, .. }) => assert_eq!(offset as usize, truncated.len()),
            other => panic!("{other:?}"),
        }
        i[2] = 0x09;
        assert!(matches!(
            parse_idx(&i, &l, p("i"), p("l"), None),
            Err(Error::Format { offset: 0, .. })
        ));
    }
}
