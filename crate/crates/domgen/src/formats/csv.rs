//! `label,p0,p1,...` rows of 0-255 pixel values (one image per row, CHW order).
//!
//! A first row whose label field is not an integer is treated as a header.

use std::path::Path;

use domgen_core::data::LabeledImageSet;

use super::read_file;
use crate::error::{Error, Result};

/// Image layout and class names for a CSV conversion.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct CsvLayout {
    /// `[C, H, W]`; defaults to a single-channel square image.
    pub shape: Option<[usize; 3]>,
    /// Defaults to `"0".."K-1"` with K one past the largest label.
    pub class_names: Option<Vec<String>>,
}

fn bad(reason: String) -> Error {
    Error::format("CSV", reason)
}

pub fn decode_csv(bytes: &[u8], layout: &CsvLayout) -> Result<LabeledImageSet> {
    let mut reader = ::csv::ReaderBuilder::new()
        .has_headers(false)
        .flexible(true)
        .trim(::csv::Trim::All)
        .from_reader(bytes);
    let mut labels = Vec::new();
    let mut pixels = Vec::new();
    let mut width = None;
    for (line, record) in reader.records().enumerate() {
        let record = record?;
        let mut fields = record.iter();
        let Some(first) = fields.next() else { continue };
        let Ok(label) = first.parse::<u8>() else {
            if line == 0 {
                continue;
            }
            return Err(bad(format!("row {}: label `{first}` is not in 0..=255", line + 1)));
        };
        let before = pixels.len();
        for f in fields {
            pixels.push(f.parse::<u8>().map_err(|_| bad(format!("row {}: pixel `{f}` is not in 0..=255", line + 1)))?);
        }
        let n = pixels.len() - before;
        if *width.get_or_insert(n) != n {
            return Err(bad(format!("row {} has {n} pixels, earlier rows {}", line + 1, width.unwrap_or(0))));
        }
        labels.push(label);
    }
    let per_image = width.filter(|&w| w > 0).ok_or_else(|| bad("no data rows".into()))?;
    let [c, h, w] = match layout.shape {
        Some(s) => s,
        None => {
            let side = (per_image as f64).sqrt().round() as usize;
            if side * side != per_image {
                return Err(bad(format!("{per_image} pixels per row is not a square image; give a shape")));
            }
            [1, side, side]
        }
    };
    if c * h * w != per_image {
        return Err(bad(format!("shape {c}x{h}x{w} does not hold {per_image} pixels")));
    }
    let names = match &layout.class_names {
        Some(n) => n.clone(),
        None => {
            let k = *labels.iter().max().expect("at least one row") as usize + 1;
            (0..k).map(|i| i.to_string()).collect()
        }
    };
    Ok(LabeledImageSet::new(c, h, w, pixels, labels, names)?)
}

pub fn load_csv(path: &Path, layout: &CsvLayout) -> Result<LabeledImageSet> {
    decode_csv(&read_file(path)?, layout)
}
