//! JSON file formats: graphs, decomposition parts and checkpoints.

use std::collections::BTreeMap;
use std::fs;
use std::path::Path;

use chimera_core::params::{NamedTensors, ProjectionConfig};
use chimera_core::{DenseMatrix, Graph, ProjectionWeights};
use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};

use crate::error::{CliError, CliResult};

pub const GRAPH_FORMAT: &str = "chimera-graph";
pub const CHECKPOINT_FORMAT: &str = "chimera-checkpoint";
pub const FORMAT_VERSION: u32 = 1;

/// A row-major matrix as stored on disk.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TensorRecord {
    pub shape: [usize; 2],
    pub values: Vec<f64>,
}

impl From<&DenseMatrix> for TensorRecord {
    fn from(m: &DenseMatrix) -> Self {
        TensorRecord { shape: [m.rows(), m.cols()], values: m.as_slice().to_vec() }
    }
}

impl TensorRecord {
    pub fn to_matrix(&self) -> chimera_core::Result<DenseMatrix> {
        DenseMatrix::from_vec(self.shape[0], self.shape[1], self.values.clone())
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct GraphFile {
    pub format: String,
    pub version: u32,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub name: Option<String>,
    pub num_nodes: usize,
    pub directed: bool,
    pub edges: Vec<(usize, usize)>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub node_features: Option<TensorRecord>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub edge_features: Option<TensorRecord>,
    /// For decomposition parts: the source-graph edge each edge orients.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub edge_map: Option<Vec<usize>>,
}

impl GraphFile {
    pub fn from_graph(graph: &Graph) -> Self {
        GraphFile {
            format: GRAPH_FORMAT.into(),
            version: FORMAT_VERSION,
            name: None,
            num_nodes: graph.num_nodes(),
            directed: graph.is_directed(),
            edges: graph.edges().to_vec(),
            node_features: graph.node_features().map(TensorRecord::from),
            edge_features: graph.edge_features().map(TensorRecord::from),
            edge_map: None,
        }
    }

    pub fn to_graph(&self) -> chimera_core::Result<Graph> {
        let x = self.node_features.as_ref().map(TensorRecord::to_matrix).transpose()?;
        let z = self.edge_features.as_ref().map(TensorRecord::to_matrix).transpose()?;
        chimera_core::graph::build_graph(self.num_nodes, self.directed, &self.edges, x, z)
    }
}

pub fn read_json<T: DeserializeOwned>(path: &Path) -> CliResult<T> {
    let text = fs::read_to_string(path).map_err(|source| CliError::Read { path: path.into(), source })?;
    serde_json::from_str(&text).map_err(|source| CliError::Json { path: path.into(), source })
}

pub fn write_json<T: Serialize>(path: &Path, value: &T) -> CliResult<()> {
    let mut text = serde_json::to_string_pretty(value).expect("serializable value");
    text.push('\n');
    fs::write(path, text).map_err(|source| CliError::Write { path: path.into(), source })
}

pub fn load_graph(path: &Path) -> CliResult<Graph> {
    let file: GraphFile = read_json(path)?;
    if file.format != GRAPH_FORMAT || file.version != FORMAT_VERSION {
        return Err(CliError::Format {
            what: "graph",
            path: path.into(),
            reason: format!("expected format `{GRAPH_FORMAT}` version {FORMAT_VERSION}"),
        });
    }
    Ok(file.to_graph()?)
}

pub fn save_graph(path: &Path, graph: &Graph) -> CliResult<()> {
    write_json(path, &GraphFile::from_graph(graph))
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Checkpoint {
    pub format: String,
    pub version: u32,
    /// What the tensors belong to: `mixer` or `model`.
    pub kind: String,
    pub config: serde_json::Value,
    pub tensors: BTreeMap<String, TensorRecord>,
}

impl Checkpoint {
    pub fn capture(kind: &str, config: serde_json::Value, target: &impl NamedTensors) -> Self {
        let tensors = target.tensors().into_iter().map(|(name, t)| (name, TensorRecord::from(t))).collect();
        Checkpoint { format: CHECKPOINT_FORMAT.into(), version: FORMAT_VERSION, kind: kind.into(), config, tensors }
    }

    /// Copies every stored tensor into `target`; names and shapes must match
    /// exactly, in both directions.
    pub fn restore(&self, target: &mut impl NamedTensors) -> Result<(), String> {
        let mut remaining: BTreeMap<&str, &TensorRecord> = self.tensors.iter().map(|(k, v)| (k.as_str(), v)).collect();
        for (name, tensor) in target.tensors_mut() {
            let record = remaining.remove(name.as_str()).ok_or_else(|| format!("missing tensor `{name}`"))?;
            if record.shape != [tensor.rows(), tensor.cols()] {
                return Err(format!(
                    "tensor `{name}` has shape {:?}, expected [{}, {}]",
                    record.shape,
                    tensor.rows(),
                    tensor.cols()
                ));
            }
            if record.values.len() != record.shape[0] * record.shape[1] {
                return Err(format!("tensor `{name}` has {} values for shape {:?}", record.values.len(), record.shape));
            }
            tensor.as_mut_slice().copy_from_slice(&record.values);
        }
        match remaining.keys().next() {
            Some(extra) => Err(format!("unexpected tensor `{extra}`")),
            None => Ok(()),
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct MixerConfigRecord {
    pub d_model: usize,
    pub d_state: usize,
    pub heads: usize,
    pub edge_dim: Option<usize>,
    pub directed_variant: bool,
}

impl From<ProjectionConfig> for MixerConfigRecord {
    fn from(c: ProjectionConfig) -> Self {
        MixerConfigRecord {
            d_model: c.d_model,
            d_state: c.d_state,
            heads: c.heads,
            edge_dim: c.edge_dim,
            directed_variant: c.directed_variant,
        }
    }
}

impl From<MixerConfigRecord> for ProjectionConfig {
    fn from(c: MixerConfigRecord) -> Self {
        ProjectionConfig {
            d_model: c.d_model,
            d_state: c.d_state,
            heads: c.heads,
            edge_dim: c.edge_dim,
            directed_variant: c.directed_variant,
        }
    }
}

pub fn save_mixer(path: &Path, weights: &ProjectionWeights) -> CliResult<()> {
    let config = serde_json::to_value(MixerConfigRecord::from(weights.config)).expect("plain record");
    write_json(path, &Checkpoint::capture("mixer", config, weights))
}

pub fn load_mixer(path: &Path) -> CliResult<ProjectionWeights> {
    let ckpt: Checkpoint = read_json(path)?;
    let bad = |reason: String| CliError::Format { what: "checkpoint", path: path.into(), reason };
    if ckpt.format != CHECKPOINT_FORMAT || ckpt.version != FORMAT_VERSION {
        return Err(bad(format!("expected format `{CHECKPOINT_FORMAT}` version {FORMAT_VERSION}")));
    }
    if ckpt.kind != "mixer" {
        return Err(bad(format!("expected a mixer checkpoint, found `{}`", ckpt.kind)));
    }
    let record: MixerConfigRecord = serde_json::from_value(ckpt.config.clone()).map_err(|e| bad(e.to_string()))?;
    let mut weights = ProjectionWeights::zeros(record.into())?;
    ckpt.restore(&mut weights).map_err(bad)?;
    Ok(weights)
}
