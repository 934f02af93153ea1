//! Binary checkpoints: `DANW`, the configuration as little-endian u32s, then
//! named blobs (u32 name length, UTF-8 name, four u32 extents, f64 values).
//! The kernel basis travels along as the blobs `basis.mean` and
//! `basis.components`.

use std::fs;
use std::path::Path;

use blindsr_core::kernel_space::PcaBasis;
use blindsr_core::{Error, Result};

use crate::model::{BranchConfig, DanConfig, DanModel, NeuralSolver};
use crate::params::Param;
use crate::tensor::Tensor4;

const MAGIC: &[u8; 4] = b"DANW";
const CONFIG_FIELDS: u32 = 11;

fn config_words(c: &DanConfig) -> [u32; CONFIG_FIELDS as usize] {
    [
        c.scale,
        c.iterations,
        c.image_channels,
        c.kernel_dim,
        c.estimator.n_crb,
        c.estimator.basic_ch,
        c.estimator.cond_ch,
        c.restorer.n_crb,
        c.restorer.basic_ch,
        c.restorer.cond_ch,
        c.reduction,
    ]
    .map(|v| v as u32)
}

fn config_from_words(w: &[usize]) -> DanConfig {
    DanConfig {
        scale: w[0],
        iterations: w[1],
        image_channels: w[2],
        kernel_dim: w[3],
        estimator: BranchConfig {
            n_crb: w[4],
            basic_ch: w[5],
            cond_ch: w[6],
        },
        restorer: BranchConfig {
            n_crb: w[7],
            basic_ch: w[8],
            cond_ch: w[9],
        },
        reduction: w[10],
    }
}

fn put_blob(out: &mut Vec<u8>, name: &str, t: &Tensor4) {
    out.extend_from_slice(&(name.len() as u32).to_le_bytes());
    out.extend_from_slice(name.as_bytes());
    for d in t.shape() {
        out.extend_from_slice(&(d as u32).to_le_bytes());
    }
    for v in t.data() {
        out.extend_from_slice(&v.to_le_bytes());
    }
}

pub fn encode_checkpoint(solver: &NeuralSolver) -> Vec<u8> {
    let model = &solver.model;
    let basis = &solver.basis;
    let mut out = Vec::new();
    out.extend_from_slice(MAGIC);
    out.extend_from_slice(&CONFIG_FIELDS.to_le_bytes());
    for w in config_words(model.config()) {
        out.extend_from_slice(&w.to_le_bytes());
    }
    out.extend_from_slice(&(model.params().len() as u32 + 2).to_le_bytes());
    for p in model.params().iter() {
        put_blob(&mut out, &p.name, &p.value);
    }
    let (side, m) = (basis.side(), basis.dim());
    let mean = Tensor4::new([1, 1, side, side], basis.mean().to_vec()).expect("basis dims");
    let comps = Tensor4::new([1, m, side, side], basis.components().to_vec()).expect("basis dims");
    put_blob(&mut out, "basis.mean", &mean);
    put_blob(&mut out, "basis.components", &comps);
    out
}

struct Reader<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl Reader<'_> {
    fn take(&mut self, n: usize) -> std::result::Result<&[u8], String> {
        let end = self.pos.checked_add(n).filter(|e| *e <= self.bytes.len());
        let end = end.ok_or_else(|| format!("truncated at byte {}", self.pos))?;
        let s = &self.bytes[self.pos..end];
        self.pos = end;
        Ok(s)
    }

    fn u32(&mut self) -> std::result::Result<usize, String> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().expect("4 bytes")) as usize)
    }

    fn blob(&mut self) -> std::result::Result<Param, String> {
        let len = self.u32()?;
        let name = String::from_utf8(self.take(len)?.to_vec()).map_err(|_| "blob name is not UTF-8".to_string())?;
        let shape = [self.u32()?, self.u32()?, self.u32()?, self.u32()?];
        let n = shape.iter().try_fold(1usize, |a, d| a.checked_mul(*d)).ok_or("blob too large")?;
        let raw = self.take(n.checked_mul(8).ok_or("blob too large")?)?;
        let data = raw.chunks_exact(8).map(|c| f64::from_le_bytes(c.try_into().expect("8 bytes"))).collect();
        let value = Tensor4::new(shape, data).map_err(|e| format!("blob {name}: {e}"))?;
        Ok(Param { name, value })
    }
}

pub fn decode_checkpoint(bytes: &[u8]) -> std::result::Result<NeuralSolver, String> {
    let mut r = Reader { bytes, pos: 0 };
    if r.take(4)? != MAGIC {
        return Err("missing DANW magic".into());
    }
    let fields = r.u32()?;
    if fields != CONFIG_FIELDS as usize {
        return Err(format!("expected {CONFIG_FIELDS} config fields, found {fields}"));
    }
    let words = (0..fields).map(|_| r.u32()).collect::<std::result::Result<Vec<_>, _>>()?;
    let config = config_from_words(&words);
    let count = r.u32()?;
    let mut blobs = (0..count).map(|_| r.blob()).collect::<std::result::Result<Vec<_>, _>>()?;
    if r.pos != bytes.len() {
        return Err(format!("{} trailing bytes", bytes.len() - r.pos));
    }
    let comps = blobs.pop().filter(|b| b.name == "basis.components").ok_or("missing basis.components")?;
    let mean = blobs.pop().filter(|b| b.name == "basis.mean").ok_or("missing basis.mean")?;
    let side = mean.value.height();
    let m = comps.value.channels();
    let basis = PcaBasis::from_parts(side, m, mean.value.into_data(), comps.value.into_data())
        .map_err(|e| e.to_string())?;
    config.validate().map_err(|e| e.to_string())?;
    let stored: usize = blobs.iter().map(|b| b.value.len()).sum();
    if stored != config.param_count() {
        return Err(format!(
            "{stored} stored weights, the configuration needs {}",
            config.param_count()
        ));
    }
    let mut model = DanModel::new(config, 0).map_err(|e| e.to_string())?;
    model.params_mut().load(blobs).map_err(|e| e.to_string())?;
    NeuralSolver::new(model, basis).map_err(|e| e.to_string())
}

pub fn save_checkpoint(solver: &NeuralSolver, path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    fs::write(path, encode_checkpoint(solver)).map_err(|source| Error::Io {
        path: path.to_path_buf(),
        source,
    })
}

pub fn load_checkpoint(path: impl AsRef<Path>) -> Result<NeuralSolver> {
    let path = path.as_ref();
    let bytes = fs::read(path).map_err(|source| Error::Io {
        path: path.to_path_buf(),
        source,
    })?;
    decode_checkpoint(&bytes).map_err(|reason| Error::Parse {
        path: path.to_path_buf(),
        reason,
    })
}
