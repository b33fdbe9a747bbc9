//! Bit-exact file formats: AVT1 tensors, model checkpoints, dataset
//! sidecars, and mixture-spec JSON.
//!
//! AVT1 layout: bytes 0-3 ASCII "AVT1"; byte 4 version (1); byte 5 dtype
//! code (0 = f32 little-endian); byte 6 ndim; byte 7 zero; then ndim u64
//! little-endian dims; then the row-major payload.

use std::fs;
use std::io::{Read, Write};
use std::path::Path;

use anyhow::{bail, Context, Result};
use avt_core::bounds::{NormKind, PerturbationBudget};
use avt_core::oracle::{GaussianMixtureSpec, MixtureComponent};
use avt_core::poison::{LabeledDataset, Split};
use avt_core::schedule::DiffusionSchedule;
use avt_core::Tensor;
use serde::{Deserialize, Serialize};

const MAGIC: &[u8; 4] = b"AVT1";
const VERSION: u8 = 1;
const DTYPE_F32: u8 = 0;

pub fn write_tensor(path: &Path, tensor: &Tensor) -> Result<()> {
    let mut buf = Vec::with_capacity(8 + tensor.dims().len() * 8 + tensor.len() * 4);
    buf.extend_from_slice(MAGIC);
    buf.push(VERSION);
    buf.push(DTYPE_F32);
    let ndim = u8::try_from(tensor.dims().len()).context("too many dimensions for AVT1")?;
    buf.push(ndim);
    buf.push(0);
    for &d in tensor.dims() {
        buf.extend_from_slice(&(d as u64).to_le_bytes());
    }
    for &v in tensor.values() {
        buf.extend_from_slice(&v.to_le_bytes());
    }
    fs::write(path, buf).with_context(|| format!("writing {}", path.display()))
}

pub fn read_tensor(path: &Path) -> Result<Tensor> {
    let data = fs::read(path).with_context(|| format!("reading {}", path.display()))?;
    if data.len() < 8 {
        bail!("{}: truncated header", path.display());
    }
    if &data[..4] != MAGIC {
        bail!("{}: not an AVT1 file (bad magic)", path.display());
    }
    if data[4] != VERSION {
        bail!("{}: unsupported AVT1 version {}", path.display(), data[4]);
    }
    if data[5] != DTYPE_F32 {
        bail!("{}: unsupported dtype code {}", path.display(), data[5]);
    }
    let ndim = data[6] as usize;
    if data[7] != 0 {
        bail!("{}: nonzero padding byte", path.display());
    }
    let dims_end = 8 + ndim * 8;
    if data.len() < dims_end {
        bail!("{}: truncated dimension list", path.display());
    }
    let mut dims = Vec::with_capacity(ndim);
    let mut count: usize = 1;
    for i in 0..ndim {
        let raw = u64::from_le_bytes(data[8 + i * 8..8 + (i + 1) * 8].try_into().unwrap());
        let d = usize::try_from(raw).context("dimension overflows usize")?;
        count = count
            .checked_mul(d)
            .context("element count overflows usize")?;
        dims.push(d);
    }
    let expected = dims_end + count * 4;
    if data.len() != expected {
        bail!(
            "{}: payload length {} does not match dims (expected {})",
            path.display(),
            data.len() - dims_end,
            expected - dims_end
        );
    }
    let values = data[dims_end..]
        .chunks_exact(4)
        .map(|c| f32::from_le_bytes(c.try_into().unwrap()))
        .collect();
    Tensor::new(dims, values).map_err(|e| anyhow::anyhow!("{}: {e}", path.display()))
}

/// Hash that identifies a schedule in checkpoint headers: SHA-256 over the
/// little-endian beta bytes.
pub fn schedule_hash(schedule: &DiffusionSchedule) -> String {
    use sha2::{Digest, Sha256};
    let mut h = Sha256::new();
    for t in 1..=schedule.steps() {
        h.update(schedule.beta(t).unwrap().to_le_bytes());
    }
    hex::encode(h.finalize())
}

const CKPT_MAGIC: &[u8; 4] = b"AVTC";

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct CheckpointHeader {
    /// "score" or "classifier".
    pub kind: String,
    /// Full layer widths, input to output.
    pub layer_dims: Vec<usize>,
    /// Score models only: raw data dimension and time-embedding width.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub data_dim: Option<usize>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub time_embed_dim: Option<usize>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub schedule_hash: Option<String>,
    pub seed: u64,
}

/// Checkpoint layout: "AVTC", u32 LE header length, JSON header, then the
/// parameter blob as f32 little-endian.
pub fn write_checkpoint(path: &Path, header: &CheckpointHeader, params: &[f32]) -> Result<()> {
    let header_json = serde_json::to_vec(header)?;
    let mut f =
        fs::File::create(path).with_context(|| format!("creating {}", path.display()))?;
    f.write_all(CKPT_MAGIC)?;
    f.write_all(&(header_json.len() as u32).to_le_bytes())?;
    f.write_all(&header_json)?;
    let mut blob = Vec::with_capacity(params.len() * 4);
    for &p in params {
        blob.extend_from_slice(&p.to_le_bytes());
    }
    f.write_all(&blob)?;
    Ok(())
}

pub fn read_checkpoint(path: &Path) -> Result<(CheckpointHeader, Vec<f32>)> {
    let mut f = fs::File::open(path).with_context(|| format!("opening {}", path.display()))?;
    let mut magic = [0u8; 4];
    f.read_exact(&mut magic)?;
    if &magic != CKPT_MAGIC {
        bail!("{}: not a checkpoint file", path.display());
    }
    let mut len_bytes = [0u8; 4];
    f.read_exact(&mut len_bytes)?;
    let header_len = u32::from_le_bytes(len_bytes) as usize;
    let mut header_json = vec![0u8; header_len];
    f.read_exact(&mut header_json)?;
    let header: CheckpointHeader =
        serde_json::from_slice(&header_json).context("checkpoint header")?;
    let mut rest = Vec::new();
    f.read_to_end(&mut rest)?;
    if rest.len() % 4 != 0 {
        bail!("{}: parameter blob not a multiple of 4 bytes", path.display());
    }
    let params = rest
        .chunks_exact(4)
        .map(|c| f32::from_le_bytes(c.try_into().unwrap()))
        .collect();
    Ok((header, params))
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct AttackMeta {
    pub attack: String,
    pub norm: String,
    pub epsilon: f64,
    pub seed: u64,
}

/// JSON sidecar accompanying a dataset tensor.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct DatasetMeta {
    pub labels: Vec<usize>,
    pub num_classes: usize,
    pub split: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub attack: Option<AttackMeta>,
}

pub fn sidecar_path(tensor_path: &Path) -> std::path::PathBuf {
    tensor_path.with_extension("json")
}

pub fn write_dataset(path: &Path, data: &LabeledDataset, attack: Option<AttackMeta>) -> Result<()> {
    write_tensor(path, &data.samples)?;
    let meta = DatasetMeta {
        labels: data.labels.clone(),
        num_classes: data.num_classes,
        split: match data.split {
            Split::Train => "train".into(),
            Split::Test => "test".into(),
        },
        attack,
    };
    fs::write(sidecar_path(path), serde_json::to_vec_pretty(&meta)?)
        .with_context(|| format!("writing sidecar for {}", path.display()))
}

pub fn read_dataset(path: &Path) -> Result<LabeledDataset> {
    let samples = read_tensor(path)?;
    let meta_path = sidecar_path(path);
    let meta: DatasetMeta = serde_json::from_slice(
        &fs::read(&meta_path).with_context(|| format!("reading {}", meta_path.display()))?,
    )?;
    let split = match meta.split.as_str() {
        "train" => Split::Train,
        "test" => Split::Test,
        other => bail!("{}: unknown split tag {other:?}", meta_path.display()),
    };
    LabeledDataset::new(samples, meta.labels, meta.num_classes, split)
        .map_err(|e| anyhow::anyhow!("{}: {e}", path.display()))
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ComponentJson {
    pub weight: f64,
    pub mean: Vec<f32>,
    pub variance: f64,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct MixtureSpecJson {
    pub dim: usize,
    pub components: Vec<ComponentJson>,
}

impl MixtureSpecJson {
    pub fn to_spec(&self) -> Result<GaussianMixtureSpec> {
        GaussianMixtureSpec::new(
            self.dim,
            self.components
                .iter()
                .map(|c| MixtureComponent {
                    weight: c.weight,
                    mean: c.mean.clone(),
                    variance: c.variance,
                })
                .collect(),
        )
        .map_err(|e| anyhow::anyhow!("mixture spec: {e}"))
    }

    pub fn from_spec(spec: &GaussianMixtureSpec) -> Self {
        MixtureSpecJson {
            dim: spec.dim,
            components: spec
                .components
                .iter()
                .map(|c| ComponentJson {
                    weight: c.weight,
                    mean: c.mean.clone(),
                    variance: c.variance,
                })
                .collect(),
        }
    }
}

pub fn read_spec(path: &Path) -> Result<GaussianMixtureSpec> {
    let json: MixtureSpecJson = serde_json::from_slice(
        &fs::read(path).with_context(|| format!("reading {}", path.display()))?,
    )?;
    json.to_spec()
}

pub fn write_spec(path: &Path, spec: &GaussianMixtureSpec) -> Result<()> {
    fs::write(
        path,
        serde_json::to_vec_pretty(&MixtureSpecJson::from_spec(spec))?,
    )
    .with_context(|| format!("writing {}", path.display()))
}

pub fn parse_norm(s: &str) -> Result<NormKind> {
    match s {
        "linf" => Ok(NormKind::Linf),
        "l2" => Ok(NormKind::L2),
        other => bail!("unknown norm {other:?} (expected linf or l2)"),
    }
}

pub fn budget_from_args(norm: &str, epsilon: f64) -> Result<PerturbationBudget> {
    PerturbationBudget::new(parse_norm(norm)?, epsilon).map_err(|e| anyhow::anyhow!("{e}"))
}

#[cfg(test)]
mod tests {
    use super::*;
    use avt_core::poison::Split;

    fn tmp(name: &str) -> std::path::PathBuf {
        let dir = std::env::temp_dir().join(format!("avt-format-{}-{name}", std::process::id()));
        std::fs::create_dir_all(&dir).unwrap();
        dir.join(name)
    }

    #[test]
    fn tensor_roundtrip() {
        let t = Tensor::new(vec![2, 3], vec![1.0, -2.5, 0.0, 4.0, 5.5, -6.25]).unwrap();
        let p = tmp("rt.avt1");
        write_tensor(&p, &t).unwrap();
        let back = read_tensor(&p).unwrap();
        assert_eq!(back.dims(), t.dims());
        assert_eq!(back.values(), t.values());
    }

    #[test]
    fn tensor_rejects_bad_magic() {
        let p = tmp("magic.avt1");
        std::fs::write(&p, b"NOPE\x01\x00\x01\x00").unwrap();
        assert!(read_tensor(&p).is_err());
    }

    #[test]
    fn tensor_rejects_truncation() {
        let t = Tensor::new(vec![4], vec![1.0; 4]).unwrap();
        let p = tmp("trunc.avt1");
        write_tensor(&p, &t).unwrap();
        let bytes = std::fs::read(&p).unwrap();
        std::fs::write(&p, &bytes[..bytes.len() - 4]).unwrap();
        assert!(read_tensor(&p).is_err());
    }

    #[test]
    fn tensor_zero_dim_roundtrip() {
        let t = Tensor::new(vec![0, 4], vec![]).unwrap();
        let p = tmp("zero.avt1");
        write_tensor(&p, &t).unwrap();
        let back = read_tensor(&p).unwrap();
        assert_eq!(back.dims(), &[0, 4]);
        assert!(back.values().is_empty());
    }

    #[test]
    fn checkpoint_roundtrip() {
        let header = CheckpointHeader {
            kind: "score".into(),
            layer_dims: vec![96, 128, 64],
            data_dim: Some(64),
            time_embed_dim: Some(32),
            schedule_hash: Some("abc".into()),
            seed: 7,
        };
        let params = vec![0.25f32, -1.5, 3.0];
        let p = tmp("model.ckpt");
        write_checkpoint(&p, &header, &params).unwrap();
        let (h, blob) = read_checkpoint(&p).unwrap();
        assert_eq!(h.kind, "score");
        assert_eq!(h.layer_dims, header.layer_dims);
        assert_eq!(h.seed, 7);
        assert_eq!(blob, params);
    }

    #[test]
    fn dataset_sidecar_roundtrip() {
        let samples = Tensor::new(vec![2, 2], vec![0.1, 0.2, 0.3, 0.4]).unwrap();
        let data = LabeledDataset::new(samples, vec![0, 1], 2, Split::Train).unwrap();
        let p = tmp("ds.avt1");
        write_dataset(&p, &data, None).unwrap();
        assert!(sidecar_path(&p).exists());
        let back = read_dataset(&p).unwrap();
        assert_eq!(back.labels, vec![0, 1]);
        assert_eq!(back.num_classes, 2);
        assert_eq!(back.samples.values(), data.samples.values());
    }

    #[test]
    fn spec_roundtrip() {
        let spec = GaussianMixtureSpec::single(vec![0.5; 4], 0.01).unwrap();
        let p = tmp("spec.json");
        write_spec(&p, &spec).unwrap();
        let back = read_spec(&p).unwrap();
        assert_eq!(back.dim, 4);
        assert_eq!(back.components.len(), 1);
        assert_eq!(back.components[0].variance, 0.01);
    }

    #[test]
    fn schedule_hash_distinguishes() {
        let a = DiffusionSchedule::linear(100, 1e-4, 0.02).unwrap();
        let b = DiffusionSchedule::linear(100, 1e-4, 0.021).unwrap();
        assert_ne!(schedule_hash(&a), schedule_hash(&b));
        assert_eq!(schedule_hash(&a), schedule_hash(&a));
    }

    #[test]
    fn norm_parsing() {
        assert!(matches!(parse_norm("linf").unwrap(), NormKind::Linf));
        assert!(matches!(parse_norm("l2").unwrap(), NormKind::L2));
        assert!(parse_norm("l1").is_err());
    }
}
