//! On-disk dataset layout: one binary feature file per video plus one JSON
//! manifest per directory.
//!
//! Feature file, all little-endian:
//!   magic "CRSH" | record type u32 = 1 | T u32 | n u32 | d u32 | fps f32 |
//!   label u8 | tau u32 (0 when negative) | T frames of
//!   (observed u8, n*d f32 object features, d f32 context).
//!
//! Features are stored at f32 width; the generator quantizes to f32 before
//! handing samples out, so write -> read -> write is byte-identical.

use super::{DataError, FrameFeatures, VideoSample};
use crate::autodiff::Tensor;
use serde::{Deserialize, Serialize};
use std::fs;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::Path;

pub(crate) const MAGIC: [u8; 4] = *b"CRSH";
pub(crate) const RECORD_FEATURES: u32 = 1;

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ManifestEntry {
    pub id: String,
    pub file: String,
    pub t: u32,
    pub n: u32,
    pub d: u32,
    pub fps: f32,
    pub label: u8,
    pub tau: u32,
}

/// Directory-level index. `command` and `seed` record how the artifact was
/// produced so a run can be replayed exactly.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct Manifest {
    pub command: String,
    pub seed: u64,
    pub videos: Vec<ManifestEntry>,
}

pub fn write_dataset(
    dir: &Path,
    samples: &[VideoSample],
    command: &str,
    seed: u64,
) -> Result<(), DataError> {
    if samples.is_empty() {
        return Err(DataError::InvalidArg("refusing to write an empty dataset".into()));
    }
    fs::create_dir_all(dir)?;
    let mut videos = Vec::with_capacity(samples.len());
    for s in samples {
        s.validate()?;
        let file = format!("{}.crsh", s.id);
        write_video(&dir.join(&file), s)?;
        videos.push(ManifestEntry {
            id: s.id.clone(),
            file,
            t: s.t_frames() as u32,
            n: s.n_objects() as u32,
            d: s.feat_dim() as u32,
            fps: s.fps,
            label: s.label as u8,
            tau: s.tau.unwrap_or(0),
        });
    }
    let manifest = Manifest {
        command: command.to_string(),
        seed,
        videos,
    };
    let json = serde_json::to_string_pretty(&manifest)?;
    fs::write(dir.join("manifest.json"), json)?;
    Ok(())
}

pub fn read_dataset(dir: &Path) -> Result<(Vec<VideoSample>, Manifest), DataError> {
    let manifest: Manifest = serde_json::from_str(&fs::read_to_string(dir.join("manifest.json"))?)?;
    let mut samples = Vec::with_capacity(manifest.videos.len());
    for entry in &manifest.videos {
        let s = read_video(&dir.join(&entry.file))?;
        if s.id != entry.id || s.t_frames() as u32 != entry.t {
            return Err(DataError::Format(format!(
                "{}: file disagrees with manifest entry {}",
                entry.file, entry.id
            )));
        }
        s.validate()?;
        samples.push(s);
    }
    Ok((samples, manifest))
}

fn write_video(path: &Path, s: &VideoSample) -> Result<(), DataError> {
    let mut w = BufWriter::new(fs::File::create(path)?);
    w.write_all(&MAGIC)?;
    w.write_all(&RECORD_FEATURES.to_le_bytes())?;
    w.write_all(&(s.t_frames() as u32).to_le_bytes())?;
    w.write_all(&(s.n_objects() as u32).to_le_bytes())?;
    w.write_all(&(s.feat_dim() as u32).to_le_bytes())?;
    w.write_all(&s.fps.to_le_bytes())?;
    w.write_all(&[s.label as u8])?;
    w.write_all(&s.tau.unwrap_or(0).to_le_bytes())?;
    for f in &s.frames {
        w.write_all(&[f.observed as u8])?;
        for &v in f.objects.data() {
            w.write_all(&(v as f32).to_le_bytes())?;
        }
        for &v in f.context.data() {
            w.write_all(&(v as f32).to_le_bytes())?;
        }
    }
    w.flush()?;
    Ok(())
}

fn read_video(path: &Path) -> Result<VideoSample, DataError> {
    let name = path.display().to_string();
    let mut r = BufReader::new(fs::File::open(path)?);
    let bad = |what: &str| DataError::Format(format!("{name}: {what}"));

    let magic = read_array::<4>(&mut r).map_err(|_| bad("truncated header"))?;
    if magic != MAGIC {
        return Err(bad("bad magic"));
    }
    let record = read_u32(&mut r).map_err(|_| bad("truncated header"))?;
    if record != RECORD_FEATURES {
        return Err(bad(&format!("record type {record}, expected {RECORD_FEATURES}")));
    }
    let t = read_u32(&mut r).map_err(|_| bad("truncated header"))? as usize;
    let n = read_u32(&mut r).map_err(|_| bad("truncated header"))? as usize;
    let d = read_u32(&mut r).map_err(|_| bad("truncated header"))? as usize;
    let fps = f32::from_le_bytes(read_array::<4>(&mut r).map_err(|_| bad("truncated header"))?);
    let label = read_array::<1>(&mut r).map_err(|_| bad("truncated header"))?[0];
    if label > 1 {
        return Err(bad(&format!("label byte {label}")));
    }
    let tau = read_u32(&mut r).map_err(|_| bad("truncated header"))?;
    if t == 0 || n == 0 || d == 0 {
        return Err(bad(&format!("degenerate dims T={t} n={n} d={d}")));
    }

    let mut frames = Vec::with_capacity(t);
    for ti in 0..t {
        let err = |_| bad(&format!("truncated at frame {}", ti + 1));
        let observed = read_array::<1>(&mut r).map_err(err)?[0];
        if observed > 1 {
            return Err(bad(&format!("observed byte {observed} at frame {}", ti + 1)));
        }
        let mut objects = Vec::with_capacity(n * d);
        for _ in 0..n * d {
            objects.push(f32::from_le_bytes(read_array::<4>(&mut r).map_err(err)?) as f64);
        }
        let mut context = Vec::with_capacity(d);
        for _ in 0..d {
            context.push(f32::from_le_bytes(read_array::<4>(&mut r).map_err(err)?) as f64);
        }
        frames.push(FrameFeatures {
            objects: Tensor::new(vec![n, d], objects),
            context: Tensor::new(vec![d], context),
            observed: observed == 1,
        });
    }
    let mut trailing = [0u8; 1];
    if r.read(&mut trailing)? != 0 {
        return Err(bad("trailing bytes after last frame"));
    }

    let id = path
        .file_stem()
        .and_then(|s| s.to_str())
        .ok_or_else(|| bad("unusable file name"))?
        .to_string();
    Ok(VideoSample {
        id,
        fps,
        label: label == 1,
        tau: if tau == 0 { None } else { Some(tau) },
        frames,
    })
}

fn read_u32(r: &mut impl Read) -> std::io::Result<u32> {
    Ok(u32::from_le_bytes(read_array::<4>(r)?))
}

fn read_array<const N: usize>(r: &mut impl Read) -> std::io::Result<[u8; N]> {
    let mut buf = [0u8; N];
    r.read_exact(&mut buf)?;
    Ok(buf)
}
