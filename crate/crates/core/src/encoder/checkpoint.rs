//! Binary checkpoint.
//!
//! Layout, all integers `u64` and all reals `f64`, little-endian:
//!
//! ```text
//! "FACL1"
//! input_dim, hidden_count, hidden_dims[hidden_count], feature_dim, projection_dim
//! proxy_factor, classifier_rows, ema
//! tensors in declaration order:
//!   online layers (weight [out×in], bias [out]) ..., online projection,
//!   classifier [classifier_rows × feature_dim],
//!   momentum layers ..., momentum projection
//! ```

use std::path::Path;

use super::{init_params_with, EncoderSpec, ModelParams};
use crate::bytes::{put_f64s, put_u64, ByteReader};
use crate::error::{Error, Result};
use crate::numcore::Tensor;

pub const CHECKPOINT_MAGIC: &[u8] = b"FACL1";

pub fn encode_checkpoint(params: &ModelParams) -> Vec<u8> {
    let spec = &params.spec;
    let mut out = Vec::new();
    out.extend_from_slice(CHECKPOINT_MAGIC);
    put_u64(&mut out, spec.input_dim as u64);
    put_u64(&mut out, spec.hidden_dims.len() as u64);
    for &h in &spec.hidden_dims {
        put_u64(&mut out, h as u64);
    }
    put_u64(&mut out, spec.feature_dim as u64);
    put_u64(&mut out, spec.projection_dim as u64);
    put_u64(&mut out, params.proxy_factor as u64);
    put_u64(&mut out, params.classifier.rows() as u64);
    put_f64s(&mut out, &[params.ema]);
    for t in params.all_tensors() {
        put_f64s(&mut out, t.data());
    }
    out
}

pub fn decode_checkpoint(buf: &[u8]) -> Result<ModelParams> {
    let mut r = ByteReader::new(buf);
    r.expect_magic(CHECKPOINT_MAGIC)?;
    let input_dim = r.usize("input_dim")?;
    let hidden_count = r.usize("hidden_count")?;
    if hidden_count > 1024 {
        return Err(Error::Parse {
            offset: r.offset() - 8,
            msg: format!("implausible hidden layer count {hidden_count}"),
        });
    }
    let hidden_dims = (0..hidden_count)
        .map(|_| r.usize("hidden_dim"))
        .collect::<Result<Vec<_>>>()?;
    let feature_dim = r.usize("feature_dim")?;
    let projection_dim = r.usize("projection_dim")?;
    let proxy_factor = r.usize("proxy_factor")?;
    let classifier_rows = r.usize("classifier_rows")?;
    let ema = r.f64("ema")?;
    let spec = EncoderSpec {
        input_dim,
        hidden_dims,
        feature_dim,
        projection_dim,
    };
    let offset = r.offset();
    let mut params = init_params_with(&spec, 0, ema, proxy_factor).map_err(|e| Error::Parse {
        offset,
        msg: e.to_string(),
    })?;
    params.classifier = Tensor::zeros(&[classifier_rows, feature_dim]);
    for t in params.all_tensors_mut() {
        let values = r.f64_vec(t.len(), "parameter tensor")?;
        t.data_mut().copy_from_slice(&values);
    }
    r.finish()?;
    Ok(params)
}

pub fn write_checkpoint(params: &ModelParams, path: &Path) -> Result<()> {
    std::fs::write(path, encode_checkpoint(params))?;
    Ok(())
}

pub fn read_checkpoint(path: &Path) -> Result<ModelParams> {
    decode_checkpoint(&std::fs::read(path)?)
}
