//! On-disk dataset layout: one UTF-8 JSON manifest line, `\n`, then the
//! arrays `states`, `actions`, `achieved_goals`, `desired_goals`, each as an
//! 8-byte little-endian element count followed by little-endian `f32`s.

use std::fs;
use std::io::{Read, Write};
use std::path::Path;

use super::{Manifest, OfflineDataset};
use crate::error::{LoadError, Result};

pub const FORMAT_VERSION: u32 = 1;

pub fn write_to(dataset: &OfflineDataset, out: &mut impl Write) -> Result<()> {
    let manifest = serde_json::to_string(&dataset.manifest)?;
    out.write_all(manifest.as_bytes())?;
    out.write_all(b"\n")?;
    for array in [
        &dataset.states,
        &dataset.actions,
        &dataset.achieved_goals,
        &dataset.desired_goals,
    ] {
        write_f32_array(out, array)?;
    }
    Ok(())
}

pub fn save(dataset: &OfflineDataset, path: impl AsRef<Path>) -> Result<()> {
    let mut buf = Vec::with_capacity(64 + 4 * (dataset.states.len() * 2 + dataset.actions.len()));
    write_to(dataset, &mut buf)?;
    fs::write(path, buf)?;
    Ok(())
}

pub fn load(path: impl AsRef<Path>) -> Result<OfflineDataset> {
    let mut file = fs::File::open(path)?;
    read_from(&mut file)
}

pub fn read_from(input: &mut impl Read) -> Result<OfflineDataset> {
    let mut bytes = Vec::new();
    input.read_to_end(&mut bytes)?;
    let (header, mut body) = split_header(&bytes)?;
    let manifest: Manifest = parse_manifest(header, FORMAT_VERSION)?;

    let states = read_f32_array(&mut body, "states", manifest.states_len())?;
    let actions = read_f32_array(&mut body, "actions", manifest.actions_len())?;
    let achieved = read_f32_array(&mut body, "achieved_goals", manifest.achieved_goals_len())?;
    let desired = read_f32_array(&mut body, "desired_goals", manifest.desired_goals_len())?;
    if !body.is_empty() {
        return Err(LoadError::TrailingBytes(body.len() as u64).into());
    }
    OfflineDataset::from_parts(manifest, states, actions, achieved, desired)
}

pub(crate) fn split_header(bytes: &[u8]) -> Result<(&[u8], &[u8]), LoadError> {
    let newline = bytes
        .iter()
        .position(|&b| b == b'\n')
        .ok_or_else(|| LoadError::Truncated("manifest line".into()))?;
    Ok((&bytes[..newline], &bytes[newline + 1..]))
}

/// Checks `format_version` before the strict parse so an old or new file is
/// reported as a version problem rather than a schema problem.
pub(crate) fn parse_manifest<T: serde::de::DeserializeOwned>(header: &[u8], expected: u32) -> Result<T, LoadError> {
    let value: serde_json::Value = serde_json::from_slice(header).map_err(|e| LoadError::Manifest(e.to_string()))?;
    let found = value
        .get("format_version")
        .and_then(|v| v.as_u64())
        .ok_or_else(|| LoadError::Manifest("missing format_version".into()))?;
    if found != expected as u64 {
        return Err(LoadError::VersionMismatch {
            found: found as u32,
            expected,
        });
    }
    serde_json::from_value(value).map_err(|e| LoadError::Manifest(e.to_string()))
}

pub(crate) fn write_f32_array(out: &mut impl Write, array: &[f32]) -> std::io::Result<()> {
    out.write_all(&(array.len() as u64).to_le_bytes())?;
    let mut buf = Vec::with_capacity(array.len() * 4);
    for x in array {
        buf.extend_from_slice(&x.to_le_bytes());
    }
    out.write_all(&buf)
}

pub(crate) fn read_f32_array(body: &mut &[u8], name: &str, expected: usize) -> Result<Vec<f32>, LoadError> {
    if body.len() < 8 {
        return Err(LoadError::Truncated(format!("{name} length")));
    }
    let (count, rest) = body.split_at(8);
    let count = u64::from_le_bytes(count.try_into().expect("8 bytes"));
    if count != expected as u64 {
        return Err(LoadError::ShapeMismatch {
            array: name.into(),
            found: count,
            expected: expected as u64,
        });
    }
    let nbytes = expected * 4;
    if rest.len() < nbytes {
        return Err(LoadError::Truncated(name.into()));
    }
    let (data, rest) = rest.split_at(nbytes);
    *body = rest;
    Ok(data
        .chunks_exact(4)
        .map(|c| f32::from_le_bytes(c.try_into().expect("4 bytes")))
        .collect())
}
