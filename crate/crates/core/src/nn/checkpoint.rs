//! Network checkpoints: a JSON manifest line followed by the parameter
//! tensors (weight then bias per layer) in the dataset array framing.

use std::fs;
use std::io::{Read, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::{Layer, MlpParams, Normalizer, OutputActivation};
use crate::data::format::{parse_manifest, read_f32_array, split_header, write_f32_array};
use crate::error::{LoadError, Result};

pub const NETWORK_FORMAT_VERSION: u32 = 1;

#[derive(Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct NetworkManifest {
    format_version: u32,
    sizes: Vec<usize>,
    output: OutputActivation,
    normalizer: Option<Normalizer>,
}

pub fn write_network(out: &mut impl Write, params: &MlpParams<f32>, normalizer: Option<&Normalizer>) -> Result<()> {
    let manifest = NetworkManifest {
        format_version: NETWORK_FORMAT_VERSION,
        sizes: params.sizes(),
        output: params.output,
        normalizer: normalizer.cloned(),
    };
    out.write_all(serde_json::to_string(&manifest)?.as_bytes())?;
    out.write_all(b"\n")?;
    for t in params.tensors() {
        write_f32_array(out, t)?;
    }
    Ok(())
}

pub fn save_network(path: impl AsRef<Path>, params: &MlpParams<f32>, normalizer: Option<&Normalizer>) -> Result<()> {
    let mut buf = Vec::new();
    write_network(&mut buf, params, normalizer)?;
    fs::write(path, buf)?;
    Ok(())
}

pub fn read_network(input: &mut impl Read) -> Result<(MlpParams<f32>, Option<Normalizer>)> {
    let mut bytes = Vec::new();
    input.read_to_end(&mut bytes)?;
    let (header, mut body) = split_header(&bytes)?;
    let manifest: NetworkManifest = parse_manifest(header, NETWORK_FORMAT_VERSION)?;
    if manifest.sizes.len() < 2 || manifest.sizes.contains(&0) {
        return Err(LoadError::Manifest(format!("bad layer sizes {:?}", manifest.sizes)).into());
    }
    if let Some(n) = &manifest.normalizer {
        if n.sum.len() != n.dim || n.sumsq.len() != n.dim || n.dim != manifest.sizes[0] {
            return Err(LoadError::Manifest("normalizer dimension does not match network input".into()).into());
        }
    }
    let mut layers = Vec::with_capacity(manifest.sizes.len() - 1);
    for (i, w) in manifest.sizes.windows(2).enumerate() {
        let weight = read_f32_array(&mut body, &format!("layer{i}.weight"), w[0] * w[1])?;
        let bias = read_f32_array(&mut body, &format!("layer{i}.bias"), w[1])?;
        layers.push(Layer {
            fan_in: w[0],
            fan_out: w[1],
            weight,
            bias,
        });
    }
    if !body.is_empty() {
        return Err(LoadError::TrailingBytes(body.len() as u64).into());
    }
    Ok((
        MlpParams {
            layers,
            output: manifest.output,
        },
        manifest.normalizer,
    ))
}

pub fn load_network(path: impl AsRef<Path>) -> Result<(MlpParams<f32>, Option<Normalizer>)> {
    read_network(&mut fs::File::open(path)?)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::error::Error;
    use crate::rng::rng_from_seed;

    #[test]
    fn round_trip_with_normalizer() {
        let mut rng = rng_from_seed(0);
        let p = MlpParams::<f32>::new(&[4, 8, 8, 2], OutputActivation::Tanh { scale: 1.0 }, &mut rng).unwrap();
        let mut n = Normalizer::new(4);
        n.update(&[0.1, 0.2, 0.3, 0.4, 1.0, 2.0, 3.0, 4.5]).unwrap();
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("net.ckpt");
        save_network(&path, &p, Some(&n)).unwrap();
        let (back, bn) = load_network(&path).unwrap();
        assert_eq!(back, p);
        assert_eq!(bn, Some(n));
    }

    #[test]
    fn corrupt_files_rejected() {
        let mut rng = rng_from_seed(1);
        let p = MlpParams::<f32>::new(&[2, 3, 1], OutputActivation::Linear, &mut rng).unwrap();
        let mut bytes = Vec::new();
        write_network(&mut bytes, &p, None).unwrap();
        assert!(matches!(
            read_network(&mut &bytes[..bytes.len() - 2]),
            Err(Error::Load(LoadError::Truncated(_)))
        ));
        let mut extra = bytes.clone();
        extra.extend_from_slice(&[0; 4]);
        assert!(matches!(
            read_network(&mut &extra[..]),
            Err(Error::Load(LoadError::TrailingBytes(4)))
        ));
        assert!(read_network(&mut &b"not json\n"[..]).is_err());
    }
}
