//! Network persistence: a JSON header (spec, normalization, tensor index)
//! next to a little-endian `f64` parameter blob.

use std::collections::BTreeMap;
use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::error::{NeuralError, Result};
use crate::network::{Network, NetworkSpec};
use crate::tensor::Tensor;
use crate::train::{Normalization, TrainedNetwork};

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TensorGroup {
    Param,
    Buffer,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct TensorEntry {
    pub name: String,
    pub group: TensorGroup,
    pub shape: Vec<usize>,
    /// Offset into the blob, in `f64` elements.
    pub offset: usize,
    pub len: usize,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct NetworkHeader {
    pub spec: NetworkSpec,
    pub normalization: Normalization,
    pub blob: String,
    pub tensors: Vec<TensorEntry>,
}

fn blob_path(header_path: &Path) -> PathBuf {
    header_path.with_extension("bin")
}

/// Encodes the network as (header, blob bytes). `blob_name` is recorded in
/// the header so the pair can be relocated together.
pub fn encode(net: &TrainedNetwork, blob_name: &str) -> (NetworkHeader, Vec<u8>) {
    let mut tensors = Vec::new();
    let mut bytes = Vec::new();
    let mut offset = 0;
    let groups = [
        (TensorGroup::Param, &net.network.params),
        (TensorGroup::Buffer, &net.network.buffers),
    ];
    for (group, map) in groups {
        for (name, t) in map {
            for v in t.values() {
                bytes.extend_from_slice(&v.to_le_bytes());
            }
            tensors.push(TensorEntry {
                name: name.clone(),
                group: group.clone(),
                shape: t.shape().to_vec(),
                offset,
                len: t.len(),
            });
            offset += t.len();
        }
    }
    let header = NetworkHeader {
        spec: net.network.spec.clone(),
        normalization: net.normalization.clone(),
        blob: blob_name.to_string(),
        tensors,
    };
    (header, bytes)
}

pub fn decode(header: NetworkHeader, bytes: &[u8]) -> Result<TrainedNetwork> {
    if bytes.len() % 8 != 0 {
        return Err(NeuralError::Serialize("blob length is not a multiple of 8".into()));
    }
    let values: Vec<f64> = bytes
        .chunks_exact(8)
        .map(|c| f64::from_le_bytes(c.try_into().expect("8-byte chunk")))
        .collect();
    let mut params = BTreeMap::new();
    let mut buffers = BTreeMap::new();
    for e in header.tensors {
        let slice = values
            .get(e.offset..e.offset + e.len)
            .ok_or_else(|| NeuralError::Serialize(format!("tensor {} extends past the blob", e.name)))?;
        let t = Tensor::new(e.shape, slice.to_vec())?;
        match e.group {
            TensorGroup::Param => params.insert(e.name, t),
            TensorGroup::Buffer => buffers.insert(e.name, t),
        };
    }
    let fresh = Network::init(header.spec.clone())?;
    for (name, t) in &fresh.params {
        match params.get(name) {
            Some(p) if p.shape() == t.shape() => {}
            _ => return Err(NeuralError::Serialize(format!("parameter {name} missing or misshapen"))),
        }
    }
    Ok(TrainedNetwork {
        network: Network {
            spec: header.spec,
            params,
            buffers,
        },
        normalization: header.normalization,
    })
}

/// Writes `<path>` (JSON header) and `<path>.bin` (parameter blob).
pub fn save(net: &TrainedNetwork, path: &Path) -> Result<()> {
    let blob = blob_path(path);
    let blob_name = blob
        .file_name()
        .and_then(|n| n.to_str())
        .unwrap_or("params.bin")
        .to_string();
    let (header, bytes) = encode(net, &blob_name);
    let json = serde_json::to_string_pretty(&header).map_err(|e| NeuralError::Serialize(e.to_string()))?;
    fs::write(path, json)?;
    fs::File::create(&blob)?.write_all(&bytes)?;
    Ok(())
}

pub fn load(path: &Path) -> Result<TrainedNetwork> {
    let header: NetworkHeader =
        serde_json::from_slice(&fs::read(path)?).map_err(|e| NeuralError::Serialize(e.to_string()))?;
    let blob = path.with_file_name(&header.blob);
    let bytes = fs::read(blob)?;
    decode(header, &bytes)
}

/// `epoch,loss` CSV, epochs numbered from 1.
pub fn loss_curve_csv(curve: &[f64]) -> String {
    let mut out = String::from("epoch,loss\n");
    for (i, l) in curve.iter().enumerate() {
        out.push_str(&format!("{},{}\n", i + 1, l));
    }
    out
}
