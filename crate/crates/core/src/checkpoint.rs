//! Flat binary parameter checkpoints.
//!
//! Layout (all integers and floats little-endian):
//!
//! ```text
//! offset  size  content
//! 0       8     magic  b"PTACKPT\x01"
//! 8       4     u32    header length H
//! 12      H     UTF-8 JSON header (CheckpointHeader)
//! 12+H    8*N   f64    parameters in declaration order:
//!                        for each underlying model, for each layer:
//!                          weights (row-major), bias
//!                        for each task, for each decoder:
//!                          weights (row-major), bias,
//!                          dropout_rate, frozen (0.0 / 1.0), last_cost
//! ```

use std::io::{Read, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{PtaError, Result};
use crate::model::{Dense, LossKind, ModelSpec, TaskHead, UnderlyingModel};
use crate::tensor::Tensor;
use crate::training::JointModel;

pub const MAGIC: &[u8; 8] = b"PTACKPT\x01";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TaskHeader {
    pub task_id: usize,
    pub output_dim: usize,
    pub loss_kind: LossKind,
    pub num_decoders: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CheckpointHeader {
    pub format_version: u32,
    pub model: ModelSpec,
    pub num_models: usize,
    pub task_model: Vec<usize>,
    pub tasks: Vec<TaskHeader>,
}

pub fn write_checkpoint(joint: &JointModel, out: &mut impl Write) -> Result<()> {
    let spec = joint
        .models
        .first()
        .map(|m| m.spec.clone())
        .ok_or_else(|| PtaError::validation("joint model has no underlying model"))?;
    let header = CheckpointHeader {
        format_version: 1,
        model: spec,
        num_models: joint.models.len(),
        task_model: joint.task_model.clone(),
        tasks: joint
            .heads
            .iter()
            .map(|h| TaskHeader {
                task_id: h.task_id,
                output_dim: h.output_dim,
                loss_kind: h.loss_kind,
                num_decoders: h.num_decoders(),
            })
            .collect(),
    };
    let json = serde_json::to_vec(&header)?;
    out.write_all(MAGIC)?;
    out.write_all(&(json.len() as u32).to_le_bytes())?;
    out.write_all(&json)?;
    let mut put = |v: f64| out.write_all(&v.to_le_bytes());
    for m in &joint.models {
        for p in m.params() {
            p.values().iter().try_for_each(|&v| put(v))?;
        }
    }
    for h in &joint.heads {
        for d in &h.decoders {
            d.weights.values().iter().try_for_each(|&v| put(v))?;
            d.bias.values().iter().try_for_each(|&v| put(v))?;
            put(d.dropout_rate)?;
            put(if d.frozen { 1.0 } else { 0.0 })?;
            put(d.last_cost)?;
        }
    }
    Ok(())
}

pub fn read_checkpoint(input: &mut impl Read) -> Result<JointModel> {
    let mut magic = [0u8; 8];
    input.read_exact(&mut magic)?;
    if &magic != MAGIC {
        return Err(PtaError::validation("not a checkpoint file (bad magic)"));
    }
    let mut len = [0u8; 4];
    input.read_exact(&mut len)?;
    let mut json = vec![0u8; u32::from_le_bytes(len) as usize];
    input.read_exact(&mut json)?;
    let header: CheckpointHeader = serde_json::from_slice(&json)?;
    if header.format_version != 1 {
        return Err(PtaError::validation(format!(
            "unsupported checkpoint version {}",
            header.format_version
        )));
    }
    let mut body = Vec::new();
    input.read_to_end(&mut body)?;
    if body.len() % 8 != 0 {
        return Err(PtaError::validation("truncated checkpoint body"));
    }
    let mut values = body.chunks_exact(8).map(|c| f64::from_le_bytes(c.try_into().unwrap()));
    let mut take = |n: usize| -> Result<Vec<f64>> {
        let v: Vec<f64> = values.by_ref().take(n).collect();
        if v.len() != n {
            return Err(PtaError::validation("truncated checkpoint body"));
        }
        Ok(v)
    };

    let mut models = Vec::with_capacity(header.num_models);
    for _ in 0..header.num_models {
        let template = UnderlyingModel::new(header.model.clone(), 0)?;
        let mut layers = Vec::new();
        for l in &template.layers {
            layers.push(Dense {
                weights: Tensor::from_vec(l.weights.shape().to_vec(), take(l.weights.len())?)?,
                bias: Tensor::from_vec(l.bias.shape().to_vec(), take(l.bias.len())?)?,
                activation: l.activation,
            });
        }
        models.push(UnderlyingModel::from_layers(header.model.clone(), layers)?);
    }
    let m = header.model.embedding_dim;
    let mut heads = Vec::new();
    for t in &header.tasks {
        let mut head = TaskHead::new(t.task_id, t.num_decoders, m, t.output_dim, t.loss_kind)?;
        for d in &mut head.decoders {
            d.weights = Tensor::from_vec(vec![m, t.output_dim], take(m * t.output_dim)?)?;
            d.bias = Tensor::from_vec(vec![t.output_dim], take(t.output_dim)?)?;
            let tail = take(3)?;
            d.dropout_rate = tail[0];
            d.frozen = tail[1] != 0.0;
            d.last_cost = tail[2];
        }
        heads.push(head);
    }
    if take(1).is_ok() {
        return Err(PtaError::validation("trailing data after checkpoint body"));
    }
    if header.task_model.len() != heads.len() || header.task_model.iter().any(|&i| i >= models.len()) {
        return Err(PtaError::validation("inconsistent task-to-model map"));
    }
    Ok(JointModel {
        models,
        task_model: header.task_model,
        heads,
    })
}

pub fn save(joint: &JointModel, path: &Path) -> Result<()> {
    let mut buf = Vec::new();
    write_checkpoint(joint, &mut buf)?;
    crate::harness::write_atomic(path, &buf)
}

pub fn load(path: &Path) -> Result<JointModel> {
    let mut f = std::io::BufReader::new(std::fs::File::open(path)?);
    read_checkpoint(&mut f)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::control::{dec_initialize, ControlPolicy};
    use crate::model::{Activation, LayerSpec};
    use crate::training::{Sharing, TaskShape};

    fn joint(sharing: Sharing) -> JointModel {
        let spec = ModelSpec {
            input_dim: 3,
            hidden_layers: vec![LayerSpec { units: 4, activation: Activation::Relu }],
            embedding_dim: 2,
            embedding_activation: Activation::Tanh,
            internal_dropout: 0.0,
        };
        let shapes = [
            TaskShape { output_dim: 3, loss_kind: LossKind::CrossEntropy },
            TaskShape { output_dim: 1, loss_kind: LossKind::Mse },
        ];
        let mut j = JointModel::new(&spec, &shapes, 3, sharing, 4).unwrap();
        dec_initialize(&ControlPolicy::named("PTA-F").unwrap(), &mut j.heads, 1);
        j.heads[1].decoders[2].last_cost = 0.25;
        j
    }

    #[test]
    fn roundtrip_preserves_everything() {
        for sharing in [Sharing::Shared, Sharing::PerTask] {
            let j = joint(sharing);
            let mut buf = Vec::new();
            write_checkpoint(&j, &mut buf).unwrap();
            assert_eq!(&buf[..8], MAGIC);
            let back = read_checkpoint(&mut buf.as_slice()).unwrap();
            assert_eq!(back, j);
        }
    }

    #[test]
    fn corrupt_files_rejected() {
        let j = joint(Sharing::Shared);
        let mut buf = Vec::new();
        write_checkpoint(&j, &mut buf).unwrap();
        let mut bad = buf.clone();
        bad[0] = b'X';
        assert!(read_checkpoint(&mut bad.as_slice()).is_err());
        let short = &buf[..buf.len() - 8];
        assert!(read_checkpoint(&mut &short[..]).is_err());
        let mut long = buf.clone();
        long.extend_from_slice(&0f64.to_le_bytes());
        assert!(read_checkpoint(&mut long.as_slice()).is_err());
    }
}
