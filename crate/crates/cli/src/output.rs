//! Files written by the commands: checkpoint metadata, maps, JSON.

use std::path::Path;

use anyhow::Context;
use redi_core::checkpoint::Checkpoint;
use redi_core::dataset::save_png_gray_bytes;
use redi_core::Tensor;
use serde::Serialize;

pub const GIT_DESCRIBE: &str = env!("REDI_GIT_DESCRIBE");

/// Seconds since the epoch, or 0 under `--reproducible`.
pub fn timestamp(reproducible: bool) -> u64 {
    if reproducible {
        return 0;
    }
    std::time::SystemTime::now()
        .duration_since(std::time::UNIX_EPOCH)
        .map(|d| d.as_secs())
        .unwrap_or(0)
}

/// Add the config echo, build description and creation time.
pub fn stamp(ckpt: &mut Checkpoint, config: &impl Serialize, reproducible: bool) -> anyhow::Result<()> {
    let obj = ckpt
        .metadata
        .as_object_mut()
        .context("checkpoint metadata is not an object")?;
    obj.insert("config".into(), serde_json::to_value(config)?);
    obj.insert("git_describe".into(), GIT_DESCRIBE.into());
    obj.insert("created".into(), timestamp(reproducible).into());
    Ok(())
}

pub fn write_json(path: &Path, value: &impl Serialize) -> anyhow::Result<()> {
    let mut text = serde_json::to_string_pretty(value)?;
    text.push('\n');
    if let Some(parent) = path.parent().filter(|p| !p.as_os_str().is_empty()) {
        std::fs::create_dir_all(parent).map_err(|e| io_err(parent, e))?;
    }
    std::fs::write(path, text).map_err(|e| io_err(path, e))?;
    Ok(())
}

pub fn io_err(path: &Path, source: std::io::Error) -> redi_core::Error {
    redi_core::Error::Io {
        path: path.to_path_buf(),
        source,
    }
}

/// Heatmap PNG (min-max normalized per image) and the raw little-endian
/// f32 map next to it: `<base>.png` and `<base>.f32`.
pub fn write_map(scores: &Tensor, base: &Path) -> anyhow::Result<()> {
    let data = scores.data();
    let (lo, hi) = data
        .iter()
        .fold((f32::INFINITY, f32::NEG_INFINITY), |(lo, hi), &v| (lo.min(v), hi.max(v)));
    let span = hi - lo;
    let bytes: Vec<u8> = data
        .iter()
        .map(|&v| {
            if span > 0.0 {
                ((v - lo) / span * 255.0 + 0.5).floor().clamp(0.0, 255.0) as u8
            } else {
                0
            }
        })
        .collect();
    let png = suffixed(base, ".png");
    save_png_gray_bytes(&bytes, scores.height(), scores.width(), &png)?;
    let raw: Vec<u8> = data.iter().flat_map(|v| v.to_le_bytes()).collect();
    let raw_path = suffixed(base, ".f32");
    std::fs::write(&raw_path, raw).map_err(|e| io_err(&raw_path, e))?;
    Ok(())
}

fn suffixed(base: &Path, ext: &str) -> std::path::PathBuf {
    let mut s = base.as_os_str().to_owned();
    s.push(ext);
    s.into()
}
