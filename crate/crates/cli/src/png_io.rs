use std::fs::File;
use std::io::{BufReader, BufWriter};
use std::path::Path;

use anyhow::{Context, Result};
use pso_shield::image::PixelBuffer;
use pso_shield::Error;

/// Decodes an 8-bit grayscale, RGB or RGBA PNG. Palette and low-bit-depth
/// images are expanded to 8 bits per channel.
pub fn read_png(path: &Path) -> Result<PixelBuffer> {
    let file = File::open(path).with_context(|| format!("opening {}", path.display()))?;
    let mut decoder = png::Decoder::new(BufReader::new(file));
    decoder.set_transformations(png::Transformations::EXPAND);
    let mut reader = decoder
        .read_info()
        .map_err(|e| Error::Validation(format!("{}: {e}", path.display())))?;
    let mut buf = vec![0; reader.output_buffer_size()];
    let info = reader
        .next_frame(&mut buf)
        .map_err(|e| Error::Validation(format!("{}: {e}", path.display())))?;
    if info.bit_depth != png::BitDepth::Eight {
        return Err(Error::Validation(format!("{}: only 8-bit channels are supported", path.display())).into());
    }
    let channels = match info.color_type {
        png::ColorType::Grayscale => 1,
        png::ColorType::Rgb => 3,
        png::ColorType::Rgba => 4,
        other => return Err(Error::Validation(format!("{}: unsupported color type {other:?}", path.display())).into()),
    };
    buf.truncate(info.buffer_size());
    Ok(PixelBuffer::new(info.width, info.height, channels, buf)?)
}

pub fn write_png(path: &Path, image: &PixelBuffer) -> Result<()> {
    let file = File::create(path).with_context(|| format!("creating {}", path.display()))?;
    let mut encoder = png::Encoder::new(BufWriter::new(file), image.width(), image.height());
    encoder.set_color(match image.channels() {
        1 => png::ColorType::Grayscale,
        3 => png::ColorType::Rgb,
        _ => png::ColorType::Rgba,
    });
    encoder.set_depth(png::BitDepth::Eight);
    let mut writer = encoder.write_header().context("writing PNG header")?;
    writer.write_image_data(image.as_bytes()).context("writing PNG data")?;
    writer.finish().context("finishing PNG")?;
    Ok(())
}
