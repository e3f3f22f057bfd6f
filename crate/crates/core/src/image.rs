//! Raw interleaved pixel buffers.

use crate::error::{Error, Result};

/// Row-major interleaved 8-bit pixel buffer.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct PixelBuffer {
    width: u32,
    height: u32,
    channels: u8,
    data: Vec<u8>,
}

impl PixelBuffer {
    pub fn new(width: u32, height: u32, channels: u8, data: Vec<u8>) -> Result<Self> {
        if !matches!(channels, 1 | 3 | 4) {
            return Err(Error::validation(format!("channels must be 1, 3 or 4, got {channels}")));
        }
        if width == 0 || height == 0 {
            return Err(Error::validation("image dimensions must be non-zero"));
        }
        let expected = width as usize * height as usize * channels as usize;
        if data.len() != expected {
            return Err(Error::validation(format!(
                "pixel buffer holds {} bytes, expected {expected}",
                data.len()
            )));
        }
        Ok(Self {
            width,
            height,
            channels,
            data,
        })
    }

    pub fn filled(width: u32, height: u32, channels: u8, value: u8) -> Result<Self> {
        let len = width as usize * height as usize * channels as usize;
        Self::new(width, height, channels, vec![value; len])
    }

    pub fn width(&self) -> u32 {
        self.width
    }

    pub fn height(&self) -> u32 {
        self.height
    }

    pub fn channels(&self) -> u8 {
        self.channels
    }

    pub fn pixel_count(&self) -> usize {
        self.width as usize * self.height as usize
    }

    pub fn as_bytes(&self) -> &[u8] {
        &self.data
    }

    pub fn as_bytes_mut(&mut self) -> &mut [u8] {
        &mut self.data
    }

    pub fn into_bytes(self) -> Vec<u8> {
        self.data
    }

    /// Channel bytes of the pixel at row-major linear index `index`.
    pub fn pixel(&self, index: u32) -> &[u8] {
        let c = self.channels as usize;
        let start = index as usize * c;
        &self.data[start..start + c]
    }

    pub fn pixel_mut(&mut self, index: u32) -> &mut [u8] {
        let c = self.channels as usize;
        let start = index as usize * c;
        &mut self.data[start..start + c]
    }
}
