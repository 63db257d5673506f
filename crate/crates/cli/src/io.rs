//! PNG, JSON and text artifacts.

use std::collections::BTreeMap;
use std::fs::File;
use std::io::{BufReader, BufWriter};
use std::path::Path;

use emsaformer_core::panoptic::{Grid, InstanceInfo, LabelMap, PanopticMap, ThingStuffSpec};
use serde::{Deserialize, Serialize};

use crate::error::{input, CliError, CliResult};

/// Interleaved 8-bit RGB.
#[derive(Clone, Debug, PartialEq)]
pub struct RgbImage {
    pub height: usize,
    pub width: usize,
    pub data: Vec<u8>,
}

struct Decoded {
    height: usize,
    width: usize,
    color: png::ColorType,
    depth: png::BitDepth,
    bytes: Vec<u8>,
}

fn decode(path: &Path) -> CliResult<Decoded> {
    let file = File::open(path).map_err(input(path.display()))?;
    let mut decoder = png::Decoder::new(BufReader::new(file));
    decoder.set_transformations(png::Transformations::IDENTITY);
    let bad = |e: png::DecodingError| CliError::Input(format!("{}: {e}", path.display()));
    let mut reader = decoder.read_info().map_err(bad)?;
    let mut bytes = vec![0; reader.output_buffer_size()];
    let info = reader.next_frame(&mut bytes).map_err(bad)?;
    bytes.truncate(info.buffer_size());
    Ok(Decoded {
        height: info.height as usize,
        width: info.width as usize,
        color: info.color_type,
        depth: info.bit_depth,
        bytes,
    })
}

fn be16(bytes: &[u8]) -> Vec<u16> {
    bytes.chunks_exact(2).map(|b| u16::from_be_bytes([b[0], b[1]])).collect()
}

pub fn read_rgb(path: &Path) -> CliResult<RgbImage> {
    let d = decode(path)?;
    if d.color != png::ColorType::Rgb || d.depth != png::BitDepth::Eight {
        return Err(CliError::Input(format!(
            "{}: expected 8-bit RGB, found {:?} {:?}",
            path.display(),
            d.color,
            d.depth
        )));
    }
    Ok(RgbImage { height: d.height, width: d.width, data: d.bytes })
}

/// Single-channel 16-bit image, e.g. depth in millimetres or panoptic codes.
pub fn read_u16(path: &Path) -> CliResult<Grid<u16>> {
    let d = decode(path)?;
    if d.color != png::ColorType::Grayscale || d.depth != png::BitDepth::Sixteen {
        return Err(CliError::Input(format!(
            "{}: expected 16-bit grayscale, found {:?} {:?}",
            path.display(),
            d.color,
            d.depth
        )));
    }
    Grid::new(d.height, d.width, be16(&d.bytes)).map_err(|e| CliError::Input(e.to_string()))
}

/// Class-id map from an 8-bit indexed or grayscale PNG, or a 16-bit grayscale one.
pub fn read_labels(path: &Path) -> CliResult<LabelMap> {
    let d = decode(path)?;
    let data: Vec<u32> = match (d.color, d.depth) {
        (png::ColorType::Indexed | png::ColorType::Grayscale, png::BitDepth::Eight) => {
            d.bytes.iter().map(|&v| v as u32).collect()
        }
        (png::ColorType::Grayscale, png::BitDepth::Sixteen) => be16(&d.bytes).into_iter().map(u32::from).collect(),
        (c, b) => {
            return Err(CliError::Input(format!("{}: unsupported label encoding {c:?} {b:?}", path.display())));
        }
    };
    Grid::new(d.height, d.width, data).map_err(|e| CliError::Input(e.to_string()))
}

fn encoder<'a>(path: &Path, w: usize, h: usize) -> CliResult<png::Encoder<'a, BufWriter<File>>> {
    let file = File::create(path).map_err(|e| CliError::Failed(format!("{}: {e}", path.display())))?;
    Ok(png::Encoder::new(BufWriter::new(file), w as u32, h as u32))
}

fn finish(path: &Path, enc: png::Encoder<'_, BufWriter<File>>, data: &[u8]) -> CliResult<()> {
    let fail = |e: png::EncodingError| CliError::Failed(format!("{}: {e}", path.display()));
    let mut writer = enc.write_header().map_err(fail)?;
    writer.write_image_data(data).map_err(fail)?;
    writer.finish().map_err(fail)
}

pub fn write_rgb(path: &Path, img: &RgbImage) -> CliResult<()> {
    let mut enc = encoder(path, img.width, img.height)?;
    enc.set_color(png::ColorType::Rgb);
    enc.set_depth(png::BitDepth::Eight);
    finish(path, enc, &img.data)
}

pub fn write_u16(path: &Path, grid: &Grid<u16>) -> CliResult<()> {
    let mut enc = encoder(path, grid.width(), grid.height())?;
    enc.set_color(png::ColorType::Grayscale);
    enc.set_depth(png::BitDepth::Sixteen);
    let bytes: Vec<u8> = grid.data().iter().flat_map(|v| v.to_be_bytes()).collect();
    finish(path, enc, &bytes)
}

/// Color of class `id`: bits of the id spread over the high bits of each channel.
pub fn palette_color(id: u8) -> [u8; 3] {
    let mut rgb = [0u8; 3];
    let mut c = id;
    for shift in (0..8).rev() {
        for (ch, v) in rgb.iter_mut().enumerate() {
            *v |= ((c >> ch) & 1) << shift;
        }
        c >>= 3;
    }
    rgb
}

/// Semantic map as an 8-bit paletted PNG whose indices are the class ids.
pub fn write_semantic(path: &Path, labels: &LabelMap) -> CliResult<()> {
    let bytes = labels
        .data()
        .iter()
        .map(|&c| u8::try_from(c).map_err(|_| CliError::Failed(format!("class {c} does not fit a paletted PNG"))))
        .collect::<CliResult<Vec<u8>>>()?;
    let mut enc = encoder(path, labels.width(), labels.height())?;
    enc.set_color(png::ColorType::Indexed);
    enc.set_depth(png::BitDepth::Eight);
    enc.set_palette((0..=255u8).flat_map(palette_color).collect::<Vec<u8>>());
    finish(path, enc, &bytes)
}

/// Contents of `instances.json`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct InstancesFile {
    pub height: usize,
    pub width: usize,
    #[serde(default)]
    pub settings: BTreeMap<String, String>,
    pub instances: Vec<InstanceInfo>,
}

pub fn write_json<T: Serialize>(path: &Path, value: &T) -> CliResult<()> {
    let text = serde_json::to_string_pretty(value).expect("serializable");
    std::fs::write(path, text + "\n").map_err(|e| CliError::Failed(format!("{}: {e}", path.display())))
}

pub fn read_instances(path: &Path) -> CliResult<InstancesFile> {
    let text = std::fs::read_to_string(path).map_err(input(path.display()))?;
    serde_json::from_str(&text).map_err(|e| CliError::Input(format!("{}: {e}", path.display())))
}

/// `scene.txt`: the label on the first line, logits on the second.
pub fn write_scene(path: &Path, label: usize, logits: &[f32]) -> CliResult<()> {
    let logits: Vec<String> = logits.iter().map(|v| v.to_string()).collect();
    let text = format!("label {label}\nlogits {}\n", logits.join(" "));
    std::fs::write(path, text).map_err(|e| CliError::Failed(format!("{}: {e}", path.display())))
}

pub fn read_scene(path: &Path) -> CliResult<usize> {
    let text = std::fs::read_to_string(path).map_err(input(path.display()))?;
    text.lines()
        .find_map(|l| l.strip_prefix("label "))
        .and_then(|v| v.trim().parse().ok())
        .ok_or_else(|| CliError::Input(format!("{}: no scene label", path.display())))
}

/// Panoptic map from `panoptic.png`, with orientations and scores from an
/// optional `instances.json` matched on (class, instance id).
pub fn read_panoptic(png_path: &Path, instances: Option<&Path>, spec: &ThingStuffSpec) -> CliResult<PanopticMap> {
    let codes = read_u16(png_path)?;
    let mut pan = PanopticMap::decode(&codes, spec).map_err(|e| CliError::Input(format!("{}: {e}", png_path.display())))?;
    if let Some(path) = instances {
        let file = read_instances(path)?;
        let by_key: BTreeMap<(u32, u32), &InstanceInfo> =
            file.instances.iter().map(|i| ((i.semantic_class, i.id), i)).collect();
        for inst in &mut pan.instances {
            if let Some(src) = by_key.get(&(inst.semantic_class, inst.source_id)) {
                inst.orientation_deg = src.orientation_deg;
                inst.score = src.score;
            }
        }
    }
    Ok(pan)
}
