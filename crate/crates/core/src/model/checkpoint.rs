//! Binary checkpoint format.
//!
//! ```text
//! "MMAF1"
//! u32 config length in words, then that many u32 words:
//!   widths[4] units d r k C variant flags epoch
//! u32 parameter count, then per parameter:
//!   u32 path length, path bytes, u32 n c h w, n·c·h·w f32
//! ```
//! All integers and floats are little-endian. Parameters appear in
//! registration order.

use std::fs;
use std::io::{BufWriter, Read, Write};
use std::path::Path;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::attention::FuseMode;
use crate::autodiff::ParamStore;
use crate::error::{Error, Result};
use crate::model::{MmafNet, ModelConfig, Variant};
use crate::tensor::{Shape, Tensor};

pub const MAGIC: &[u8; 5] = b"MMAF1";
const CONFIG_WORDS: u32 = 12;

const FLAG_BN: u32 = 1;
const FLAG_MLP_BIAS: u32 = 2;
const FLAG_ADJACENT: u32 = 4;

#[derive(Clone, Debug)]
pub struct Checkpoint {
    pub config: ModelConfig,
    /// Number of completed epochs.
    pub epoch: usize,
    pub net: MmafNet,
    pub store: ParamStore<f32>,
}

fn u32_of(v: usize, what: &str) -> Result<u32> {
    u32::try_from(v).map_err(|_| Error::Format(format!("{what} {v} does not fit in 32 bits")))
}

pub fn save_checkpoint(path: &Path, config: &ModelConfig, store: &ParamStore<f32>, epoch: usize) -> Result<()> {
    let tmp = path.with_extension("tmp");
    {
        let mut w = BufWriter::new(fs::File::create(&tmp)?);
        w.write_all(MAGIC)?;
        let mut flags = 0;
        if config.batch_norm {
            flags |= FLAG_BN;
        }
        if config.mlp_bias {
            flags |= FLAG_MLP_BIAS;
        }
        if config.fuse_mode == FuseMode::Adjacent {
            flags |= FLAG_ADJACENT;
        }
        let mut words = Vec::with_capacity(CONFIG_WORDS as usize);
        for v in config.widths {
            words.push(u32_of(v, "width")?);
        }
        for (v, what) in [
            (config.units_per_stage, "units"),
            (config.decoder_width, "decoder width"),
            (config.reduction, "reduction"),
            (config.spatial_kernel, "kernel"),
            (config.classes, "classes"),
        ] {
            words.push(u32_of(v, what)?);
        }
        words.push(config.variant.code());
        words.push(flags);
        words.push(u32_of(epoch, "epoch")?);
        w.write_all(&CONFIG_WORDS.to_le_bytes())?;
        for word in words {
            w.write_all(&word.to_le_bytes())?;
        }
        w.write_all(&u32_of(store.len(), "parameter count")?.to_le_bytes())?;
        for (_, name, p) in store.iter() {
            w.write_all(&u32_of(name.len(), "path length")?.to_le_bytes())?;
            w.write_all(name.as_bytes())?;
            for d in p.value.shape().dims() {
                w.write_all(&u32_of(d, "dimension")?.to_le_bytes())?;
            }
            for v in p.value.data() {
                w.write_all(&v.to_le_bytes())?;
            }
        }
        w.flush()?;
    }
    fs::rename(&tmp, path)?;
    Ok(())
}

struct Reader<'a> {
    buf: &'a [u8],
    pos: usize,
}

impl Reader<'_> {
    fn take(&mut self, n: usize) -> Result<&[u8]> {
        let end = self.pos.checked_add(n).filter(|&e| e <= self.buf.len());
        let end = end.ok_or_else(|| Error::Format(format!("checkpoint truncated at byte {}", self.pos)))?;
        let out = &self.buf[self.pos..end];
        self.pos = end;
        Ok(out)
    }

    fn u32(&mut self) -> Result<u32> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().unwrap()))
    }
}

/// Rebuilds the network from the stored configuration and loads every
/// parameter by path. Missing, extra or mis-shaped tensors are format errors.
pub fn load_checkpoint(path: &Path) -> Result<Checkpoint> {
    let mut buf = Vec::new();
    fs::File::open(path)?.read_to_end(&mut buf)?;
    let mut r = Reader { buf: &buf, pos: 0 };
    if r.take(MAGIC.len())? != MAGIC {
        return Err(Error::Format(format!("{} is not an MMAF1 checkpoint", path.display())));
    }
    let words = r.u32()?;
    if words != CONFIG_WORDS {
        return Err(Error::Format(format!("unsupported config block of {words} words")));
    }
    let cfg: Vec<usize> = (0..words).map(|_| r.u32().map(|v| v as usize)).collect::<Result<_>>()?;
    let flags = cfg[10] as u32;
    let config = ModelConfig {
        widths: [cfg[0], cfg[1], cfg[2], cfg[3]],
        units_per_stage: cfg[4],
        decoder_width: cfg[5],
        reduction: cfg[6],
        spatial_kernel: cfg[7],
        classes: cfg[8],
        variant: Variant::from_code(cfg[9] as u32)?,
        batch_norm: flags & FLAG_BN != 0,
        mlp_bias: flags & FLAG_MLP_BIAS != 0,
        fuse_mode: if flags & FLAG_ADJACENT != 0 { FuseMode::Adjacent } else { FuseMode::Modality },
    };
    let epoch = cfg[11];
    config.validate().map_err(|e| Error::Format(format!("checkpoint config invalid: {e}")))?;

    let mut store = ParamStore::new();
    let net = MmafNet::new(config, &mut store, &mut ChaCha8Rng::seed_from_u64(0))?;
    let count = r.u32()? as usize;
    if count != store.len() {
        return Err(Error::Format(format!("checkpoint holds {count} tensors, model expects {}", store.len())));
    }
    for _ in 0..count {
        let len = r.u32()? as usize;
        let name = std::str::from_utf8(r.take(len)?)
            .map_err(|_| Error::Format("parameter path is not UTF-8".into()))?
            .to_string();
        let dims: Vec<usize> = (0..4).map(|_| r.u32().map(|v| v as usize)).collect::<Result<_>>()?;
        let shape = Shape::new(dims[0], dims[1], dims[2], dims[3]);
        let bytes = r.take(shape.numel().checked_mul(4).ok_or_else(|| Error::Format("tensor too large".into()))?)?;
        let data = bytes.chunks_exact(4).map(|b| f32::from_le_bytes(b.try_into().unwrap())).collect();
        let id = store
            .id_of(&name)
            .ok_or_else(|| Error::Format(format!("checkpoint tensor `{name}` is not part of the model")))?;
        store
            .set_value(id, Tensor::from_vec(shape, data)?)
            .map_err(|e| Error::Format(format!("`{name}`: {e}")))?;
    }
    if r.pos != buf.len() {
        return Err(Error::Format(format!("{} trailing bytes after parameters", buf.len() - r.pos)));
    }
    Ok(Checkpoint { config, epoch, net, store })
}
