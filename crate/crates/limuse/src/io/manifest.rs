//! Dataset directory layout and CSV manifests.
//!
//! Each split directory holds per-sample files (2-channel mixture WAV,
//! mono target WAV, voiceprint and visual embeddings) plus a
//! `manifest.csv` naming them with the mixing metadata.

use std::path::{Path, PathBuf};

use super::{emb, wav};
use crate::error::{Error, Result};
use crate::synth::MixtureSample;

pub const MANIFEST_HEADER: &str =
    "sample_id,mix,target,voiceprint,visual,snr_db,target_speaker,interferer_speaker";

/// One manifest line.
#[derive(Clone, Debug)]
pub struct ManifestEntry {
    pub sample_id: String,
    pub mix: PathBuf,
    pub target: PathBuf,
    pub voiceprint: PathBuf,
    pub visual: PathBuf,
    pub snr_db: f64,
    pub target_speaker: u32,
    pub interferer_speaker: u32,
}

/// A training/eval sample loaded into memory.
#[derive(Clone, Debug)]
pub struct Sample {
    /// `mics x samples`, row-major.
    pub mixture: Vec<f64>,
    pub mics: usize,
    pub samples: usize,
    pub target: Vec<f64>,
    pub voiceprint: Vec<f64>,
    /// `d_face x frames`, row-major.
    pub visual: Vec<f64>,
    pub visual_frames: usize,
    pub snr_db: f64,
    pub target_speaker: u32,
    pub interferer_speaker: u32,
}

impl From<&MixtureSample> for Sample {
    fn from(m: &MixtureSample) -> Self {
        Sample {
            mixture: m.mixture.clone(),
            mics: m.mics,
            samples: m.samples,
            target: m.target.clone(),
            voiceprint: m.voiceprint.clone(),
            visual: m.visual.clone(),
            visual_frames: m.visual_frames,
            snr_db: m.snr_db,
            target_speaker: m.target_speaker,
            interferer_speaker: m.interferer_speaker,
        }
    }
}

/// Write one split (sample files + manifest.csv) into `dir`.
pub fn write_split(dir: &Path, samples: &[MixtureSample]) -> Result<()> {
    std::fs::create_dir_all(dir)?;
    let mut csv = String::from(MANIFEST_HEADER);
    csv.push('\n');
    for (i, s) in samples.iter().enumerate() {
        let id = format!("sample{i:05}");
        let mix_name = format!("{id}_mix.wav");
        let target_name = format!("{id}_target.wav");
        let vp_name = format!("{id}_vp.emb");
        let vis_name = format!("{id}_vis.emb");
        let ch0 = s.mixture[..s.samples].to_vec();
        let ch1 = s.mixture[s.samples..].to_vec();
        wav::write_wav(&dir.join(&mix_name), &[ch0, ch1])?;
        wav::write_wav(&dir.join(&target_name), &[s.target.clone()])?;
        emb::write_embedding(&dir.join(&vp_name), &[s.voiceprint.len()], &s.voiceprint)?;
        let d_face = s.visual.len() / s.visual_frames;
        emb::write_embedding(&dir.join(&vis_name), &[d_face, s.visual_frames], &s.visual)?;
        csv.push_str(&format!(
            "{id},{mix_name},{target_name},{vp_name},{vis_name},{:.6},{},{}\n",
            s.snr_db, s.target_speaker, s.interferer_speaker
        ));
    }
    std::fs::write(dir.join("manifest.csv"), csv)?;
    Ok(())
}

/// Parse a split's manifest.
pub fn read_manifest(dir: &Path) -> Result<Vec<ManifestEntry>> {
    let path = dir.join("manifest.csv");
    let text = std::fs::read_to_string(&path)
        .map_err(|e| Error::Data(format!("{}: {e}", path.display())))?;
    let mut lines = text.lines();
    match lines.next() {
        Some(h) if h.trim() == MANIFEST_HEADER => {}
        other => {
            return Err(Error::Data(format!(
                "{}: bad manifest header {other:?}",
                path.display()
            )));
        }
    }
    let mut entries = Vec::new();
    for (lineno, line) in lines.enumerate() {
        if line.trim().is_empty() {
            continue;
        }
        let parts: Vec<&str> = line.split(',').collect();
        if parts.len() != 8 {
            return Err(Error::Data(format!(
                "{}: line {} has {} fields, expected 8",
                path.display(),
                lineno + 2,
                parts.len()
            )));
        }
        let parse_num = |s: &str, what: &str| -> Result<f64> {
            s.parse::<f64>().map_err(|_| {
                Error::Data(format!("{}: bad {what} `{s}` on line {}", path.display(), lineno + 2))
            })
        };
        entries.push(ManifestEntry {
            sample_id: parts[0].to_string(),
            mix: dir.join(parts[1]),
            target: dir.join(parts[2]),
            voiceprint: dir.join(parts[3]),
            visual: dir.join(parts[4]),
            snr_db: parse_num(parts[5], "snr_db")?,
            target_speaker: parse_num(parts[6], "target_speaker")? as u32,
            interferer_speaker: parse_num(parts[7], "interferer_speaker")? as u32,
        });
    }
    Ok(entries)
}

/// Load a whole split into memory.
pub fn load_split(dir: &Path) -> Result<Vec<Sample>> {
    let entries = read_manifest(dir)?;
    let mut out = Vec::with_capacity(entries.len());
    for e in entries {
        let mixw = wav::read_wav(&e.mix)?;
        if mixw.channels.len() != 2 {
            return Err(Error::Data(format!(
                "{}: mixture must have 2 channels",
                e.mix.display()
            )));
        }
        let targetw = wav::read_wav(&e.target)?;
        let vp = emb::read_embedding(&e.voiceprint)?;
        let vis = emb::read_embedding(&e.visual)?;
        if vis.dims.len() != 2 {
            return Err(Error::Data(format!(
                "{}: visual embedding must be 2-D",
                e.visual.display()
            )));
        }
        let samples = mixw.samples();
        let mut mixture = mixw.channels[0].clone();
        mixture.extend_from_slice(&mixw.channels[1]);
        out.push(Sample {
            mixture,
            mics: 2,
            samples,
            target: targetw.channels[0].clone(),
            voiceprint: vp.data,
            visual: vis.data,
            visual_frames: vis.dims[1],
            snr_db: e.snr_db,
            target_speaker: e.target_speaker,
            interferer_speaker: e.interferer_speaker,
        });
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::synth::{generate_split, SynthConfig};

    #[test]
    fn split_write_read_round_trip() {
        let dir = std::env::temp_dir().join("limuse_manifest_test");
        let _ = std::fs::remove_dir_all(&dir);
        let cfg = SynthConfig { u: 16, d_face: 8, ..Default::default() };
        let samples = generate_split(&cfg, &[0, 1, 2], 3, 0.2, 42).unwrap();
        write_split(&dir, &samples).unwrap();
        let loaded = load_split(&dir).unwrap();
        assert_eq!(loaded.len(), 3);
        for (orig, back) in samples.iter().zip(&loaded) {
            assert_eq!(orig.samples, back.samples);
            assert_eq!(orig.target_speaker, back.target_speaker);
            assert!((orig.snr_db - back.snr_db).abs() < 1e-5);
            // audio survives at 16-bit resolution
            for (a, b) in orig.target.iter().zip(&back.target) {
                assert!((a - b).abs() < 1.0 / 32000.0, "target drifted: {a} vs {b}");
            }
            assert_eq!(orig.visual_frames, back.visual_frames);
        }
        let _ = std::fs::remove_dir_all(&dir);
    }

    #[test]
    fn missing_manifest_is_a_data_error() {
        let dir = std::env::temp_dir().join("limuse_manifest_missing");
        let _ = std::fs::remove_dir_all(&dir);
        std::fs::create_dir_all(&dir).unwrap();
        assert!(matches!(load_split(&dir), Err(Error::Data(_))));
        let _ = std::fs::remove_dir_all(&dir);
    }
}
