//! Checkpoint files: a TOML manifest, a separator line, then the parameters
//! as little-endian `f64`.

use std::fs;
use std::path::Path;

use serde::{de::DeserializeOwned, Deserialize, Serialize};

use super::mlp::{Activation, Network};
use crate::error::{Error, Result};

pub const FORMAT_VERSION: u32 = 1;
const SEPARATOR: &[u8] = b"\n--- f64le ---\n";

/// Manifest of a network checkpoint.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct NetworkManifest {
    pub format_version: u32,
    pub kind: String,
    pub layer_sizes: Vec<usize>,
    pub activation: String,
    pub seed: u64,
    pub param_count: usize,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub problem: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub role: Option<String>,
}

impl NetworkManifest {
    pub fn for_network(net: &Network, problem: Option<&str>, role: Option<&str>) -> Self {
        NetworkManifest {
            format_version: FORMAT_VERSION,
            kind: "mlp".into(),
            layer_sizes: net.sizes().to_vec(),
            activation: net.activation().name().into(),
            seed: net.seed(),
            param_count: net.param_count(),
            problem: problem.map(str::to_owned),
            role: role.map(str::to_owned),
        }
    }
}

/// Serializes a manifest and parameter block into checkpoint bytes.
pub fn encode<M: Serialize>(manifest: &M, params: &[f64]) -> Result<Vec<u8>> {
    let text = toml::to_string(manifest)
        .map_err(|e| Error::Integrity(format!("cannot serialize manifest: {e}")))?;
    let mut out = text.trim_end().as_bytes().to_vec();
    out.extend_from_slice(SEPARATOR);
    for p in params {
        out.extend_from_slice(&p.to_le_bytes());
    }
    Ok(out)
}

/// Splits checkpoint bytes into a manifest and its parameters.
pub fn decode<M: DeserializeOwned>(bytes: &[u8]) -> Result<(M, Vec<f64>)> {
    let at = bytes
        .windows(SEPARATOR.len())
        .position(|w| w == SEPARATOR)
        .ok_or_else(|| Error::Integrity("checkpoint separator missing".into()))?;
    let text = std::str::from_utf8(&bytes[..at])
        .map_err(|_| Error::Integrity("manifest is not UTF-8".into()))?;
    let manifest: M =
        toml::from_str(text).map_err(|e| Error::Integrity(format!("bad manifest: {e}")))?;
    let body = &bytes[at + SEPARATOR.len()..];
    if body.len() % 8 != 0 {
        return Err(Error::Integrity(format!(
            "parameter block of {} bytes is not a multiple of 8",
            body.len()
        )));
    }
    let params = body
        .chunks_exact(8)
        .map(|c| f64::from_le_bytes(c.try_into().expect("8 bytes")))
        .collect();
    Ok((manifest, params))
}

pub fn network_to_bytes(net: &Network, problem: Option<&str>, role: Option<&str>) -> Result<Vec<u8>> {
    encode(&NetworkManifest::for_network(net, problem, role), net.params())
}

pub fn network_from_bytes(bytes: &[u8]) -> Result<(Network, NetworkManifest)> {
    let (m, params): (NetworkManifest, Vec<f64>) = decode(bytes)?;
    if m.format_version != FORMAT_VERSION {
        return Err(Error::Integrity(format!(
            "unsupported checkpoint format version {}",
            m.format_version
        )));
    }
    if m.kind != "mlp" {
        return Err(Error::Integrity(format!("expected an mlp checkpoint, found `{}`", m.kind)));
    }
    if params.len() != m.param_count {
        return Err(Error::Integrity(format!(
            "manifest declares {} parameters, file holds {}",
            m.param_count,
            params.len()
        )));
    }
    let act = Activation::from_name(&m.activation).map_err(|e| Error::Integrity(e.to_string()))?;
    let net = Network::from_params(&m.layer_sizes, act, m.seed, params)
        .map_err(|e| Error::Integrity(e.to_string()))?;
    Ok((net, m))
}

pub fn save_network(path: &Path, net: &Network, problem: Option<&str>, role: Option<&str>) -> Result<()> {
    fs::write(path, network_to_bytes(net, problem, role)?)?;
    Ok(())
}

pub fn load_network(path: &Path) -> Result<(Network, NetworkManifest)> {
    network_from_bytes(&fs::read(path)?)
}
