//! Minimal RIFF/WAVE reader and writer: 16-bit PCM, 16 kHz, 1-2 channels,
//! little endian. Round trips are exact at 16-bit resolution.

use std::io::{Read, Write};
use std::path::Path;

use crate::error::{Error, Result};

pub const REQUIRED_SAMPLE_RATE: u32 = 16000;

/// Channel-separated audio: `channels[c][t]`, floats in `[-1, 1]`.
#[derive(Clone, Debug, PartialEq)]
pub struct WavData {
    pub channels: Vec<Vec<f64>>,
    pub sample_rate: u32,
}

impl WavData {
    pub fn samples(&self) -> usize {
        self.channels.first().map_or(0, |c| c.len())
    }
}

fn i16_of(v: f64) -> i16 {
    (v.clamp(-1.0, 1.0) * 32767.0).round() as i16
}

/// Write channel-separated samples as 16-bit PCM at 16 kHz.
pub fn write_wav(path: &Path, channels: &[Vec<f64>]) -> Result<()> {
    if channels.is_empty() || channels.len() > 2 {
        return Err(Error::Data(format!("{} channels unsupported (need 1 or 2)", channels.len())));
    }
    let n = channels[0].len();
    if channels.iter().any(|c| c.len() != n) {
        return Err(Error::Data("channel lengths differ".into()));
    }
    let num_ch = channels.len() as u32;
    let data_bytes = (n as u32) * num_ch * 2;
    let mut out = Vec::with_capacity(44 + data_bytes as usize);
    out.extend_from_slice(b"RIFF");
    out.extend_from_slice(&(36 + data_bytes).to_le_bytes());
    out.extend_from_slice(b"WAVE");
    out.extend_from_slice(b"fmt ");
    out.extend_from_slice(&16u32.to_le_bytes());
    out.extend_from_slice(&1u16.to_le_bytes()); // PCM
    out.extend_from_slice(&(num_ch as u16).to_le_bytes());
    out.extend_from_slice(&REQUIRED_SAMPLE_RATE.to_le_bytes());
    out.extend_from_slice(&(REQUIRED_SAMPLE_RATE * num_ch * 2).to_le_bytes());
    out.extend_from_slice(&((num_ch * 2) as u16).to_le_bytes());
    out.extend_from_slice(&16u16.to_le_bytes());
    out.extend_from_slice(b"data");
    out.extend_from_slice(&data_bytes.to_le_bytes());
    for t in 0..n {
        for c in channels {
            out.extend_from_slice(&i16_of(c[t]).to_le_bytes());
        }
    }
    let mut f = std::fs::File::create(path)?;
    f.write_all(&out)?;
    Ok(())
}

/// Read a 16-bit PCM WAV; rejects anything that is not 16 kHz PCM16.
pub fn read_wav(path: &Path) -> Result<WavData> {
    let mut bytes = Vec::new();
    std::fs::File::open(path)?.read_to_end(&mut bytes)?;
    parse_wav(&bytes).map_err(|e| match e {
        Error::Data(msg) => Error::Data(format!("{}: {msg}", path.display())),
        other => other,
    })
}

pub fn parse_wav(bytes: &[u8]) -> Result<WavData> {
    let need = |cond: bool, msg: &str| -> Result<()> {
        if cond {
            Ok(())
        } else {
            Err(Error::Data(msg.to_string()))
        }
    };
    need(bytes.len() >= 44, "truncated WAV header")?;
    need(&bytes[0..4] == b"RIFF" && &bytes[8..12] == b"WAVE", "not a RIFF/WAVE file")?;

    let u16_at = |o: usize| u16::from_le_bytes([bytes[o], bytes[o + 1]]);
    let u32_at =
        |o: usize| u32::from_le_bytes([bytes[o], bytes[o + 1], bytes[o + 2], bytes[o + 3]]);

    // walk chunks to find fmt and data
    let mut pos = 12usize;
    let mut fmt: Option<(u16, u16, u32, u16)> = None;
    let mut data: Option<(usize, usize)> = None;
    while pos + 8 <= bytes.len() {
        let id = &bytes[pos..pos + 4];
        let size = u32_at(pos + 4) as usize;
        let body = pos + 8;
        if id == b"fmt " {
            need(size >= 16 && body + 16 <= bytes.len(), "truncated fmt chunk")?;
            fmt = Some((u16_at(body), u16_at(body + 2), u32_at(body + 4), u16_at(body + 14)));
        } else if id == b"data" {
            need(body + size <= bytes.len(), "truncated data chunk")?;
            data = Some((body, size));
        }
        pos = body + size + (size & 1);
    }
    let (format, num_ch, rate, bits) = fmt.ok_or(Error::Data("missing fmt chunk".into()))?;
    let (off, size) = data.ok_or(Error::Data("missing data chunk".into()))?;
    need(format == 1, "only PCM WAV supported")?;
    need(bits == 16, "only 16-bit WAV supported")?;
    need(
        rate == REQUIRED_SAMPLE_RATE,
        &format!("sample rate {rate} Hz unsupported (expected {REQUIRED_SAMPLE_RATE} Hz)"),
    )?;
    need((1..=2).contains(&num_ch), "only 1 or 2 channels supported")?;

    let frames = size / (num_ch as usize * 2);
    let mut channels = vec![Vec::with_capacity(frames); num_ch as usize];
    for t in 0..frames {
        for (c, ch) in channels.iter_mut().enumerate() {
            let o = off + (t * num_ch as usize + c) * 2;
            let v = i16::from_le_bytes([bytes[o], bytes[o + 1]]);
            ch.push(v as f64 / 32767.0);
        }
    }
    Ok(WavData { channels, sample_rate: rate })
}
