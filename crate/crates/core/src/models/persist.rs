//! Model container: `UQTB` magic, format version, a JSON header describing
//! the variant and its parameter blocks, then the blocks as little-endian
//! f64 in header order. Every floating-point value lives in a block so the
//! round trip is bit-exact.

use std::path::Path;

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};
use serde_json::{json, Value};

use super::bbb::{BbbModel, MixturePrior};
use super::ensemble::{EnsembleKind, EnsembleModel};
use super::logreg::LogRegModel;
use super::mlp::MlpClassifier;
use super::network::{Activation, Dense, Network};
use super::ppca::PpcaModel;
use super::temperature::TemperatureScaled;
use super::{AutoencoderModel, TrainedModel};
use crate::data::ScalerStats;
use crate::error::{Error, Result};

pub const MAGIC: &[u8; 4] = b"UQTB";
pub const FORMAT_VERSION: u32 = 1;

/// Where a model came from.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Provenance {
    pub master_seed: u64,
    pub stream: String,
    /// Hyperparameters the model was trained with.
    pub hyperparameters: Value,
}

/// A model together with the scaler that produced its inputs.
#[derive(Debug, Clone, PartialEq)]
pub struct ModelFile {
    pub model: TrainedModel,
    pub scaler: Option<ScalerStats>,
    pub provenance: Option<Provenance>,
}

#[derive(Debug, Serialize, Deserialize)]
struct BlockDesc {
    name: String,
    len: usize,
}

#[derive(Debug, Serialize, Deserialize)]
struct Header {
    variant: String,
    model: String,
    meta: Value,
    has_scaler: bool,
    provenance: Option<Provenance>,
    blocks: Vec<BlockDesc>,
}

#[derive(Default)]
struct Blocks {
    descs: Vec<BlockDesc>,
    data: Vec<f64>,
}

impl Blocks {
    fn push(&mut self, name: impl Into<String>, values: &[f64]) {
        self.descs.push(BlockDesc {
            name: name.into(),
            len: values.len(),
        });
        self.data.extend_from_slice(values);
    }

    fn push_network(&mut self, prefix: &str, net: &Network) -> Value {
        for (i, l) in net.layers.iter().enumerate() {
            self.push(format!("{prefix}layer{i}.weights"), l.weights.as_slice());
            self.push(format!("{prefix}layer{i}.bias"), l.bias.as_slice());
        }
        self.push(format!("{prefix}dropout_rate"), &[net.dropout_rate]);
        json!({ "sizes": net.sizes(), "activations": net.activations() })
    }
}

struct BlockReader<'a> {
    descs: &'a [BlockDesc],
    data: &'a [f64],
    at: usize,
    offset: usize,
}

impl BlockReader<'_> {
    fn take(&mut self, name: &str, len: usize) -> Result<&[f64]> {
        let desc = self
            .descs
            .get(self.at)
            .ok_or_else(|| Error::Format(format!("missing block `{name}`")))?;
        if desc.name != name || desc.len != len {
            return Err(Error::Format(format!(
                "expected block `{name}` of length {len}, found `{}` of length {}",
                desc.name, desc.len
            )));
        }
        let out = &self.data[self.offset..self.offset + len];
        self.at += 1;
        self.offset += len;
        Ok(out)
    }

    fn scalar(&mut self, name: &str) -> Result<f64> {
        Ok(self.take(name, 1)?[0])
    }

    fn network(&mut self, prefix: &str, meta: &Value) -> Result<Network> {
        let sizes: Vec<usize> = serde_json::from_value(meta["sizes"].clone())?;
        let activations: Vec<Activation> = serde_json::from_value(meta["activations"].clone())?;
        if sizes.len() < 2 || activations.len() != sizes.len() - 1 {
            return Err(Error::Format("inconsistent network layout".into()));
        }
        let mut layers = Vec::with_capacity(activations.len());
        for (i, &activation) in activations.iter().enumerate() {
            let (fan_in, fan_out) = (sizes[i], sizes[i + 1]);
            let w = self.take(&format!("{prefix}layer{i}.weights"), fan_in * fan_out)?;
            let weights = DMatrix::from_column_slice(fan_in, fan_out, w);
            let bias =
                DVector::from_column_slice(self.take(&format!("{prefix}layer{i}.bias"), fan_out)?);
            layers.push(Dense {
                weights,
                bias,
                activation,
            });
        }
        let dropout_rate = self.scalar(&format!("{prefix}dropout_rate"))?;
        Ok(Network {
            layers,
            dropout_rate,
        })
    }
}

fn variant_name(model: &TrainedModel) -> &'static str {
    match model {
        TrainedModel::Nn(_) => "nn",
        TrainedModel::PlattScalingNn(_) => "temperature_scaled_nn",
        TrainedModel::LogReg(_) => "logreg",
        TrainedModel::McDropout(_) => "mc_dropout",
        TrainedModel::Bbb(_) => "bbb",
        TrainedModel::Ensemble(_) => "ensemble",
        TrainedModel::Ppca(_) => "ppca",
        TrainedModel::Autoencoder(_) => "autoencoder",
    }
}

fn encode_model(model: &TrainedModel, b: &mut Blocks) -> Value {
    match model {
        TrainedModel::Nn(m) | TrainedModel::McDropout(m) => b.push_network("", &m.net),
        TrainedModel::PlattScalingNn(m) => {
            let meta = b.push_network("", &m.base.net);
            b.push("temperature", &[m.temperature]);
            meta
        }
        TrainedModel::LogReg(m) => {
            b.push("weights", &m.weights);
            b.push("bias", &[m.bias]);
            b.push("c", &[m.c]);
            b.push("gradient_norm", &[m.gradient_norm]);
            json!({ "input_dim": m.weights.len(), "converged": m.converged, "iterations": m.iterations })
        }
        TrainedModel::Bbb(m) => {
            let meta = b.push_network("mu.", &m.mu);
            b.push("rho", &m.rho);
            b.push("prior", &[m.prior.pi, m.prior.sigma1, m.prior.sigma2]);
            meta
        }
        TrainedModel::Ensemble(m) => {
            let mut layout = Value::Null;
            for (k, member) in m.members.iter().enumerate() {
                layout = b.push_network(&format!("member{k}."), &member.net);
            }
            for (k, a) in m.anchors.iter().enumerate() {
                b.push(format!("anchor{k}"), a);
            }
            b.push("penalty_scale", &[m.penalty_scale]);
            json!({
                "ensemble_kind": m.kind,
                "n_members": m.members.len(),
                "n_anchors": m.anchors.len(),
                "member": layout,
            })
        }
        TrainedModel::Ppca(m) => {
            b.push("mean", m.mean.as_slice());
            b.push("w", m.w.as_slice());
            b.push("sigma2", &[m.sigma2]);
            json!({ "dim": m.dim(), "components": m.n_components(), "sigma2_floored": m.sigma2_floored })
        }
        TrainedModel::Autoencoder(m) => {
            let mut meta = b.push_network("", &m.net);
            meta["latent_dim"] = json!(m.latent_dim);
            meta
        }
    }
}

fn meta_usize(meta: &Value, key: &str) -> Result<usize> {
    meta[key]
        .as_u64()
        .map(|v| v as usize)
        .ok_or_else(|| Error::Format(format!("header field `{key}` missing")))
}

fn decode_model(variant: &str, meta: &Value, r: &mut BlockReader<'_>) -> Result<TrainedModel> {
    Ok(match variant {
        "nn" => TrainedModel::Nn(MlpClassifier {
            net: r.network("", meta)?,
        }),
        "mc_dropout" => TrainedModel::McDropout(MlpClassifier {
            net: r.network("", meta)?,
        }),
        "temperature_scaled_nn" => {
            let base = MlpClassifier {
                net: r.network("", meta)?,
            };
            TrainedModel::PlattScalingNn(TemperatureScaled {
                base,
                temperature: r.scalar("temperature")?,
            })
        }
        "logreg" => {
            let d = meta_usize(meta, "input_dim")?;
            TrainedModel::LogReg(LogRegModel {
                weights: r.take("weights", d)?.to_vec(),
                bias: r.scalar("bias")?,
                c: r.scalar("c")?,
                gradient_norm: r.scalar("gradient_norm")?,
                converged: meta["converged"].as_bool().unwrap_or(false),
                iterations: meta_usize(meta, "iterations")?,
            })
        }
        "bbb" => {
            let mu = r.network("mu.", meta)?;
            let rho = r.take("rho", mu.n_params())?.to_vec();
            let p = r.take("prior", 3)?;
            TrainedModel::Bbb(BbbModel {
                mu,
                rho,
                prior: MixturePrior {
                    pi: p[0],
                    sigma1: p[1],
                    sigma2: p[2],
                },
            })
        }
        "ensemble" => {
            let kind: EnsembleKind = serde_json::from_value(meta["ensemble_kind"].clone())?;
            let n = meta_usize(meta, "n_members")?;
            if n == 0 {
                return Err(Error::Format("ensemble without members".into()));
            }
            let members = (0..n)
                .map(|k| {
                    Ok(MlpClassifier {
                        net: r.network(&format!("member{k}."), &meta["member"])?,
                    })
                })
                .collect::<Result<Vec<_>>>()?;
            let n_params = members[0].net.n_params();
            let anchors = (0..meta_usize(meta, "n_anchors")?)
                .map(|k| Ok(r.take(&format!("anchor{k}"), n_params)?.to_vec()))
                .collect::<Result<Vec<_>>>()?;
            TrainedModel::Ensemble(EnsembleModel {
                kind,
                members,
                anchors,
                penalty_scale: r.scalar("penalty_scale")?,
            })
        }
        "ppca" => {
            let (d, q) = (meta_usize(meta, "dim")?, meta_usize(meta, "components")?);
            let mean = DVector::from_column_slice(r.take("mean", d)?);
            let w = DMatrix::from_column_slice(d, q, r.take("w", d * q)?);
            let sigma2 = r.scalar("sigma2")?;
            let floored = meta["sigma2_floored"].as_bool().unwrap_or(false);
            TrainedModel::Ppca(PpcaModel::from_parts(mean, w, sigma2, floored)?)
        }
        "autoencoder" => TrainedModel::Autoencoder(AutoencoderModel {
            net: r.network("", meta)?,
            latent_dim: meta_usize(meta, "latent_dim")?,
        }),
        other => return Err(Error::Format(format!("unknown model variant `{other}`"))),
    })
}

pub fn to_bytes(file: &ModelFile) -> Result<Vec<u8>> {
    let mut blocks = Blocks::default();
    let meta = encode_model(&file.model, &mut blocks);
    if let Some(s) = &file.scaler {
        blocks.push("scaler.mean", &s.mean);
        blocks.push("scaler.std", &s.std);
        blocks.push("scaler.impute", &s.impute);
    }
    let header = Header {
        variant: variant_name(&file.model).to_string(),
        model: file.model.kind().name().to_string(),
        meta,
        has_scaler: file.scaler.is_some(),
        provenance: file.provenance.clone(),
        blocks: blocks.descs,
    };
    let header_bytes = serde_json::to_vec(&header)?;
    let mut out = Vec::with_capacity(16 + header_bytes.len() + 8 * blocks.data.len());
    out.extend_from_slice(MAGIC);
    out.extend_from_slice(&FORMAT_VERSION.to_le_bytes());
    out.extend_from_slice(&(header_bytes.len() as u64).to_le_bytes());
    out.extend_from_slice(&header_bytes);
    for v in &blocks.data {
        out.extend_from_slice(&v.to_le_bytes());
    }
    Ok(out)
}

pub fn from_bytes(bytes: &[u8]) -> Result<ModelFile> {
    if bytes.len() < 16 || &bytes[..4] != MAGIC {
        return Err(Error::Format("not a model container (bad magic)".into()));
    }
    let version = u32::from_le_bytes(bytes[4..8].try_into().expect("4 bytes"));
    if version != FORMAT_VERSION {
        return Err(Error::Format(format!(
            "unsupported container version {version}"
        )));
    }
    let header_len = u64::from_le_bytes(bytes[8..16].try_into().expect("8 bytes")) as usize;
    let body = bytes
        .get(16..)
        .filter(|b| b.len() >= header_len)
        .ok_or_else(|| Error::Format("truncated header".into()))?;
    let header: Header = serde_json::from_slice(&body[..header_len])?;
    let payload = &body[header_len..];
    let expected: usize = header.blocks.iter().map(|b| b.len).sum();
    if payload.len() != 8 * expected {
        return Err(Error::Format(format!(
            "payload holds {} bytes, header declares {} values",
            payload.len(),
            expected
        )));
    }
    let data: Vec<f64> = payload
        .chunks_exact(8)
        .map(|c| f64::from_le_bytes(c.try_into().expect("8 bytes")))
        .collect();
    let mut reader = BlockReader {
        descs: &header.blocks,
        data: &data,
        at: 0,
        offset: 0,
    };
    let model = decode_model(&header.variant, &header.meta, &mut reader)?;
    let scaler = if header.has_scaler {
        let d = model.input_dim();
        Some(ScalerStats {
            mean: reader.take("scaler.mean", d)?.to_vec(),
            std: reader.take("scaler.std", d)?.to_vec(),
            impute: reader.take("scaler.impute", d)?.to_vec(),
        })
    } else {
        None
    };
    if reader.at != header.blocks.len() {
        return Err(Error::Format("unread trailing blocks".into()));
    }
    Ok(ModelFile {
        model,
        scaler,
        provenance: header.provenance,
    })
}

/// Writes the container atomically (temp file in the same directory, then rename).
pub fn save_model(file: &ModelFile, path: &Path) -> Result<()> {
    let bytes = to_bytes(file)?;
    crate::io_util::write_atomic(path, &bytes)
}

pub fn load_model(path: &Path) -> Result<ModelFile> {
    let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
    from_bytes(&bytes)
}
