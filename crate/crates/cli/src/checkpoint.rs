//! Binary model checkpoints.
//!
//! Layout, all integers little-endian:
//!
//! | bytes | content |
//! |---|---|
//! | 4 | magic `GNGO` |
//! | 4 | format version (u32) |
//! | 1 | model kind (0 gen, 1 dis, 2 inv, 3 fc) |
//! | 32 | SHA-256 fingerprint of the model-shaping settings |
//! | 4 | manifest length in bytes (u32) |
//! | n | JSON manifest: kind, scale, latent width, branches, tensor list |
//! | rest | every tensor in manifest order as f32 |
//!
//! Network checkpoints store the trainable parameters followed by the batch
//! norm running statistics.

use std::path::Path;

use gonogo_core::gan::GanModels;
use gonogo_core::inverse::InverseModel;
use gonogo_core::scoring::{Branch, FcHead};
use gonogo_core::Scale;
use gonogo_tensor::{Network, Tensor};
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{io_err, CliError, Result};

pub const MAGIC: &[u8; 4] = b"GNGO";
pub const VERSION: u32 = 1;
const HEADER_LEN: usize = 4 + 4 + 1 + 32 + 4;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ModelKind {
    Gen,
    Dis,
    Inv,
    Fc,
}

impl ModelKind {
    fn tag(self) -> u8 {
        match self {
            ModelKind::Gen => 0,
            ModelKind::Dis => 1,
            ModelKind::Inv => 2,
            ModelKind::Fc => 3,
        }
    }

    fn from_tag(tag: u8) -> Option<Self> {
        [ModelKind::Gen, ModelKind::Dis, ModelKind::Inv, ModelKind::Fc]
            .into_iter()
            .find(|k| k.tag() == tag)
    }
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct TensorEntry {
    pub name: String,
    pub shape: Vec<usize>,
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct Manifest {
    pub kind: ModelKind,
    pub scale: Scale,
    pub z_dim: usize,
    #[serde(default)]
    pub branches: Vec<Branch>,
    pub dtype: String,
    pub tensors: Vec<TensorEntry>,
}

/// Settings that decide the architecture of a model.
#[derive(Clone, Debug, PartialEq, Eq, Serialize)]
pub struct ModelShape {
    pub kind: ModelKind,
    pub scale: Scale,
    pub z_dim: usize,
    pub branches: Vec<Branch>,
}

impl ModelShape {
    pub fn fingerprint(&self) -> [u8; 32] {
        let json = serde_json::to_vec(self).expect("shape serializes");
        Sha256::digest(&json).into()
    }

    fn describe(&self) -> String {
        let mut s = format!("{:?} at scale {} with z_dim {}", self.kind, self.scale, self.z_dim);
        if !self.branches.is_empty() {
            s.push_str(&format!(" and branches {}", gonogo_core::scoring::branch_label(&self.branches)));
        }
        s
    }
}

#[derive(Debug)]
pub struct Checkpoint {
    pub manifest: Manifest,
    pub fingerprint: [u8; 32],
    pub tensors: Vec<Tensor>,
}

impl Checkpoint {
    pub fn shape(&self) -> ModelShape {
        ModelShape {
            kind: self.manifest.kind,
            scale: self.manifest.scale,
            z_dim: self.manifest.z_dim,
            branches: self.manifest.branches.clone(),
        }
    }
}

pub fn encode(shape: &ModelShape, named: &[(String, &Tensor)]) -> Vec<u8> {
    let manifest = Manifest {
        kind: shape.kind,
        scale: shape.scale,
        z_dim: shape.z_dim,
        branches: shape.branches.clone(),
        dtype: "f32".into(),
        tensors: named
            .iter()
            .map(|(name, t)| TensorEntry {
                name: name.clone(),
                shape: t.shape().to_vec(),
            })
            .collect(),
    };
    let json = serde_json::to_vec(&manifest).expect("manifest serializes");
    let payload: usize = named.iter().map(|(_, t)| t.numel() * 4).sum();
    let mut out = Vec::with_capacity(HEADER_LEN + json.len() + payload);
    out.extend_from_slice(MAGIC);
    out.extend_from_slice(&VERSION.to_le_bytes());
    out.push(shape.kind.tag());
    out.extend_from_slice(&shape.fingerprint());
    out.extend_from_slice(&(json.len() as u32).to_le_bytes());
    out.extend_from_slice(&json);
    for (_, t) in named {
        for v in t.data() {
            out.extend_from_slice(&v.to_le_bytes());
        }
    }
    out
}

pub fn decode(bytes: &[u8], path: &Path) -> Result<Checkpoint> {
    let bad = |reason: String| CliError::Checkpoint {
        path: path.to_path_buf(),
        reason,
    };
    if bytes.len() < 4 || &bytes[..4] != MAGIC {
        return Err(bad("not a checkpoint (bad magic bytes)".into()));
    }
    if bytes.len() < HEADER_LEN {
        return Err(bad(format!(
            "truncated header: expected {HEADER_LEN} bytes, found {}",
            bytes.len()
        )));
    }
    let version = u32::from_le_bytes(bytes[4..8].try_into().unwrap());
    if version != VERSION {
        return Err(bad(format!("unsupported format version {version} (expected {VERSION})")));
    }
    let kind = ModelKind::from_tag(bytes[8]).ok_or_else(|| bad(format!("unknown model kind tag {}", bytes[8])))?;
    let fingerprint: [u8; 32] = bytes[9..41].try_into().unwrap();
    let json_len = u32::from_le_bytes(bytes[41..45].try_into().unwrap()) as usize;
    let json_end = HEADER_LEN + json_len;
    if bytes.len() < json_end {
        return Err(bad(format!(
            "truncated manifest: expected {json_end} bytes, found {}",
            bytes.len()
        )));
    }
    let manifest: Manifest =
        serde_json::from_slice(&bytes[HEADER_LEN..json_end]).map_err(|e| bad(format!("manifest: {e}")))?;
    if manifest.kind != kind {
        return Err(bad(format!("header says {kind:?}, manifest says {:?}", manifest.kind)));
    }
    if manifest.dtype != "f32" {
        return Err(bad(format!("unsupported dtype {}", manifest.dtype)));
    }
    let expected = json_end
        + manifest
            .tensors
            .iter()
            .map(|e| e.shape.iter().product::<usize>() * 4)
            .sum::<usize>();
    if bytes.len() != expected {
        let what = if bytes.len() < expected { "truncated" } else { "trailing data" };
        return Err(bad(format!("{what}: expected {expected} bytes, found {}", bytes.len())));
    }
    let mut at = json_end;
    let mut tensors = Vec::with_capacity(manifest.tensors.len());
    for e in &manifest.tensors {
        let n: usize = e.shape.iter().product();
        let data = bytes[at..at + 4 * n]
            .chunks_exact(4)
            .map(|c| f32::from_le_bytes(c.try_into().unwrap()))
            .collect();
        at += 4 * n;
        tensors.push(Tensor::new(&e.shape, data).map_err(|err| bad(format!("tensor {}: {err}", e.name)))?);
    }
    Ok(Checkpoint {
        manifest,
        fingerprint,
        tensors,
    })
}

pub fn write(path: &Path, shape: &ModelShape, named: &[(String, &Tensor)]) -> Result<()> {
    if let Some(dir) = path.parent() {
        std::fs::create_dir_all(dir).map_err(io_err(dir))?;
    }
    std::fs::write(path, encode(shape, named)).map_err(io_err(path))
}

/// Reads a checkpoint and checks it against `expected` unless `force`.
pub fn read(path: &Path, expected: &ModelShape, force: bool, hint: &'static str) -> Result<Checkpoint> {
    let bytes = match std::fs::read(path) {
        Ok(b) => b,
        Err(e) if e.kind() == std::io::ErrorKind::NotFound => {
            return Err(CliError::MissingInput {
                what: "checkpoint",
                path: path.to_path_buf(),
                hint,
            })
        }
        Err(e) => return Err(io_err(path)(e)),
    };
    let ckpt = decode(&bytes, path)?;
    if ckpt.manifest.kind != expected.kind {
        return Err(CliError::Checkpoint {
            path: path.to_path_buf(),
            reason: format!("holds a {:?} model, expected {:?}", ckpt.manifest.kind, expected.kind),
        });
    }
    if ckpt.fingerprint != ckpt.shape().fingerprint() {
        return Err(CliError::Checkpoint {
            path: path.to_path_buf(),
            reason: "fingerprint does not match the manifest".into(),
        });
    }
    if !force && ckpt.fingerprint != expected.fingerprint() {
        return Err(CliError::Mismatch {
            path: path.to_path_buf(),
            expected: expected.describe(),
            found: ckpt.shape().describe(),
        });
    }
    Ok(ckpt)
}

fn network_named(net: &Network) -> Vec<(String, &Tensor)> {
    let mut named: Vec<(String, &Tensor)> = net.parameters();
    named.extend(net.buffers().into_iter().map(|(n, t)| (format!("buffer.{n}"), t)));
    named
}

fn fill(path: &Path, targets: Vec<(String, &mut Tensor)>, ckpt: Checkpoint) -> Result<()> {
    let bad = |reason: String| CliError::Checkpoint {
        path: path.to_path_buf(),
        reason,
    };
    if targets.len() != ckpt.tensors.len() {
        return Err(bad(format!(
            "expected {} tensors, found {}",
            targets.len(),
            ckpt.tensors.len()
        )));
    }
    for ((name, dst), (entry, src)) in targets.into_iter().zip(ckpt.manifest.tensors.iter().zip(ckpt.tensors)) {
        if name != entry.name || dst.shape() != src.shape() {
            return Err(bad(format!(
                "tensor {} {:?} does not fit {name} {:?}",
                entry.name,
                src.shape(),
                dst.shape()
            )));
        }
        *dst = src;
    }
    Ok(())
}

fn load_network(path: &Path, mut net: Network, mut ckpt: Checkpoint) -> Result<Network> {
    let n_params = net.parameters().len();
    if ckpt.tensors.len() < n_params {
        return Err(CliError::Checkpoint {
            path: path.to_path_buf(),
            reason: format!("expected at least {n_params} tensors, found {}", ckpt.tensors.len()),
        });
    }
    let buffers = Checkpoint {
        manifest: Manifest {
            tensors: ckpt.manifest.tensors.split_off(n_params),
            ..ckpt.manifest.clone()
        },
        fingerprint: ckpt.fingerprint,
        tensors: ckpt.tensors.split_off(n_params),
    };
    fill(path, net.parameters_mut(), ckpt)?;
    let targets = net
        .buffers_mut()
        .into_iter()
        .map(|(n, t)| (format!("buffer.{n}"), t))
        .collect();
    fill(path, targets, buffers)?;
    Ok(net)
}

pub fn gan_shapes(scale: Scale, z_dim: usize) -> (ModelShape, ModelShape) {
    let shape = |kind| ModelShape {
        kind,
        scale,
        z_dim,
        branches: Vec::new(),
    };
    (shape(ModelKind::Gen), shape(ModelKind::Dis))
}

pub fn inverse_shape(scale: Scale, z_dim: usize) -> ModelShape {
    ModelShape {
        kind: ModelKind::Inv,
        scale,
        z_dim,
        branches: Vec::new(),
    }
}

pub fn head_shape(scale: Scale, branches: &[Branch]) -> ModelShape {
    let mut branches = branches.to_vec();
    branches.sort();
    branches.dedup();
    ModelShape {
        kind: ModelKind::Fc,
        scale,
        z_dim: 0,
        branches,
    }
}

pub fn save_gan(gen_path: &Path, dis_path: &Path, gan: &GanModels) -> Result<()> {
    let (gs, ds) = gan_shapes(gan.scale, gan.z_dim);
    write(gen_path, &gs, &network_named(&gan.gen))?;
    write(dis_path, &ds, &network_named(&gan.dis))
}

pub fn load_gan(gen_path: &Path, dis_path: &Path, scale: Scale, z_dim: usize, force: bool) -> Result<GanModels> {
    let (gs, ds) = gan_shapes(scale, z_dim);
    let gen = read(gen_path, &gs, force, "train-gan")?;
    let dis = read(dis_path, &ds, force, "train-gan")?;
    if gen.manifest.scale != dis.manifest.scale || gen.manifest.z_dim != dis.manifest.z_dim {
        return Err(CliError::Checkpoint {
            path: dis_path.to_path_buf(),
            reason: format!("does not pair with the generator in {}", gen_path.display()),
        });
    }
    let (scale, z_dim) = (gen.manifest.scale, gen.manifest.z_dim);
    let fresh = GanModels::new(scale, z_dim, 0)?;
    Ok(GanModels {
        scale,
        z_dim,
        gen: load_network(gen_path, fresh.gen, gen)?,
        dis: load_network(dis_path, fresh.dis, dis)?,
    })
}

pub fn save_inverse(path: &Path, inv: &InverseModel) -> Result<()> {
    write(path, &inverse_shape(inv.scale, inv.z_dim), &network_named(&inv.net))
}

pub fn load_inverse(path: &Path, scale: Scale, z_dim: usize, force: bool) -> Result<InverseModel> {
    let ckpt = read(path, &inverse_shape(scale, z_dim), force, "train-inv")?;
    let (scale, z_dim) = (ckpt.manifest.scale, ckpt.manifest.z_dim);
    let fresh = InverseModel::new(scale, z_dim, 0)?;
    Ok(InverseModel {
        scale,
        z_dim,
        net: load_network(path, fresh.net, ckpt)?,
    })
}

pub fn save_head(path: &Path, head: &FcHead) -> Result<()> {
    write(path, &head_shape(head.scale, head.branches()), &head.parameters())
}

pub fn load_head(path: &Path, scale: Scale, branches: &[Branch], force: bool) -> Result<FcHead> {
    let ckpt = read(path, &head_shape(scale, branches), force, "train-fc")?;
    let mut head = FcHead::zeros(ckpt.manifest.scale, &ckpt.manifest.branches)?;
    fill(path, head.parameters_mut(), ckpt)?;
    Ok(head)
}
