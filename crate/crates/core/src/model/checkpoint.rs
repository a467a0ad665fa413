//! Binary checkpoint layout (all integers and floats little-endian):
//!
//! ```text
//! magic        8 bytes   "POSEGNN\0"
//! version      u32       currently 1
//! config_len   u32       byte length of the config block
//! config       UTF-8 JSON {"d_feat": .., "train": TrainConfig}
//! n_params     u32
//! n_params times:
//!   rows u64, cols u64, rows*cols f64 in row-major order
//! ```
//!
//! Parameters appear in [`GnnModel::params`] order. Loading rebuilds the
//! model from the config block and rejects any matrix whose shape differs.

use std::io::{Read, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::config::TrainConfig;
use super::network::GnnModel;
use crate::numerics::Matrix;
use crate::{Error, Result, Rng};

pub const CHECKPOINT_MAGIC: &[u8; 8] = b"POSEGNN\0";
pub const CHECKPOINT_VERSION: u32 = 1;

#[derive(Serialize, Deserialize)]
struct ConfigBlock {
    d_feat: usize,
    train: TrainConfig,
}

pub fn write_checkpoint<W: Write>(mut w: W, model: &GnnModel, cfg: &TrainConfig) -> Result<()> {
    let block = ConfigBlock {
        d_feat: model.spec().d_feat,
        train: cfg.clone(),
    };
    if cfg.model_spec(block.d_feat) != *model.spec() {
        return Err(Error::Incompatible("config does not describe this model".into()));
    }
    let json = serde_json::to_vec(&block).map_err(|e| Error::Data(e.to_string()))?;
    w.write_all(CHECKPOINT_MAGIC)?;
    w.write_all(&CHECKPOINT_VERSION.to_le_bytes())?;
    w.write_all(&(json.len() as u32).to_le_bytes())?;
    w.write_all(&json)?;
    let params = model.params();
    w.write_all(&(params.len() as u32).to_le_bytes())?;
    for p in params {
        w.write_all(&(p.rows() as u64).to_le_bytes())?;
        w.write_all(&(p.cols() as u64).to_le_bytes())?;
        for v in p.data() {
            w.write_all(&v.to_le_bytes())?;
        }
    }
    Ok(())
}

fn read_array<const N: usize, R: Read>(r: &mut R) -> Result<[u8; N]> {
    let mut buf = [0u8; N];
    r.read_exact(&mut buf)
        .map_err(|e| Error::Incompatible(format!("truncated checkpoint: {e}")))?;
    Ok(buf)
}

pub fn read_checkpoint<R: Read>(mut r: R) -> Result<(GnnModel, TrainConfig)> {
    let magic: [u8; 8] = read_array(&mut r)?;
    if &magic != CHECKPOINT_MAGIC {
        return Err(Error::Incompatible("bad magic, not a posegnn checkpoint".into()));
    }
    let version = u32::from_le_bytes(read_array(&mut r)?);
    if version != CHECKPOINT_VERSION {
        return Err(Error::Incompatible(format!("unsupported checkpoint version {version}")));
    }
    let len = u32::from_le_bytes(read_array(&mut r)?) as usize;
    let mut json = vec![0u8; len];
    r.read_exact(&mut json)
        .map_err(|e| Error::Incompatible(format!("truncated config block: {e}")))?;
    let block: ConfigBlock =
        serde_json::from_slice(&json).map_err(|e| Error::Incompatible(format!("config block: {e}")))?;
    block.train.validate().map_err(|e| Error::Incompatible(e.to_string()))?;

    let mut model = GnnModel::new(block.train.model_spec(block.d_feat), &mut Rng::new(0));
    let expected: Vec<(usize, usize)> = model.params().iter().map(|p| p.shape()).collect();
    let count = u32::from_le_bytes(read_array(&mut r)?) as usize;
    if count != expected.len() {
        return Err(Error::Incompatible(format!(
            "config implies {} parameter matrices, file has {count}",
            expected.len()
        )));
    }
    let mut values = Vec::with_capacity(count);
    for (i, &(er, ec)) in expected.iter().enumerate() {
        let rows = u64::from_le_bytes(read_array(&mut r)?) as usize;
        let cols = u64::from_le_bytes(read_array(&mut r)?) as usize;
        if (rows, cols) != (er, ec) {
            return Err(Error::Incompatible(format!(
                "parameter {i} is {rows}x{cols}, config implies {er}x{ec}"
            )));
        }
        let data = (0..rows * cols)
            .map(|_| read_array::<8, _>(&mut r).map(f64::from_le_bytes))
            .collect::<Result<Vec<_>>>()?;
        values.push(Matrix::new(rows, cols, data).map_err(|e| Error::Incompatible(e.to_string()))?);
    }
    let mut rest = Vec::new();
    r.read_to_end(&mut rest)?;
    if !rest.is_empty() {
        return Err(Error::Incompatible(format!("{} trailing bytes", rest.len())));
    }
    model.set_params(values)?;
    Ok((model, block.train))
}

pub fn save_checkpoint(path: impl AsRef<Path>, model: &GnnModel, cfg: &TrainConfig) -> Result<()> {
    let mut buf = Vec::new();
    write_checkpoint(&mut buf, model, cfg)?;
    std::fs::write(path, buf)?;
    Ok(())
}

pub fn load_checkpoint(path: impl AsRef<Path>) -> Result<(GnnModel, TrainConfig)> {
    let bytes = std::fs::read(path)?;
    read_checkpoint(bytes.as_slice())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::{ConvType, Mode};

    fn model() -> (GnnModel, TrainConfig) {
        let cfg = TrainConfig {
            conv: ConvType::Gcn,
            mode: Mode::GraphPose,
            widths: [5, 4, 3],
            alpha: 200.0,
            ..TrainConfig::default()
        };
        (GnnModel::new(cfg.model_spec(6), &mut Rng::new(5)), cfg)
    }

    #[test]
    fn round_trip_is_exact() {
        let (m, cfg) = model();
        let mut buf = Vec::new();
        write_checkpoint(&mut buf, &m, &cfg).unwrap();
        assert_eq!(&buf[..8], CHECKPOINT_MAGIC);
        let (m2, cfg2) = read_checkpoint(buf.as_slice()).unwrap();
        assert_eq!(m, m2);
        assert_eq!(cfg, cfg2);
        let mut again = Vec::new();
        write_checkpoint(&mut again, &m2, &cfg2).unwrap();
        assert_eq!(buf, again);
    }

    #[test]
    fn rejects_corruption() {
        let (m, cfg) = model();
        let mut buf = Vec::new();
        write_checkpoint(&mut buf, &m, &cfg).unwrap();

        let mut bad = buf.clone();
        bad[0] = b'X';
        assert!(matches!(read_checkpoint(bad.as_slice()), Err(Error::Incompatible(_))));

        let mut bad = buf.clone();
        bad[8] = 9;
        assert!(matches!(read_checkpoint(bad.as_slice()), Err(Error::Incompatible(_))));

        assert!(matches!(read_checkpoint(&buf[..buf.len() - 3]), Err(Error::Incompatible(_))));

        // change d_feat in the config block so shapes disagree
        let needle = b"\"d_feat\":6";
        let at = buf.windows(needle.len()).position(|w| w == needle).unwrap();
        let mut bad = buf.clone();
        bad[at + needle.len() - 1] = b'7';
        match read_checkpoint(bad.as_slice()) {
            Err(Error::Incompatible(msg)) => assert!(msg.contains("parameter 0"), "{msg}"),
            other => panic!("{other:?}"),
        }
    }
}
