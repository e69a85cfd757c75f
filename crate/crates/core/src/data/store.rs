//! `FACLDS1` binary stores and the CSV variant.
//!
//! Binary layout, little-endian: magic, then `u64` sample count, class count
//! and input width, then every row as `f64`, then labels as `u64`, then one
//! split byte per sample (0 = train, 1 = test).

use std::fs;
use std::path::Path;

use super::SampleStore;
use crate::bytes::{put_f64s, put_u64, ByteReader};
use crate::error::{Error, Result};
use crate::numcore::Tensor;

pub const STORE_MAGIC: &[u8] = b"FACLDS1";

pub fn encode_store(store: &SampleStore) -> Vec<u8> {
    let n = store.len();
    let mut out = Vec::with_capacity(STORE_MAGIC.len() + 24 + n * (store.input_dim() * 8 + 9));
    out.extend_from_slice(STORE_MAGIC);
    put_u64(&mut out, n as u64);
    put_u64(&mut out, store.num_classes as u64);
    put_u64(&mut out, store.input_dim() as u64);
    put_f64s(&mut out, store.inputs.data());
    for &l in &store.labels {
        put_u64(&mut out, l as u64);
    }
    out.extend(store.is_test.iter().map(|&t| u8::from(t)));
    out
}

pub fn decode_store(buf: &[u8]) -> Result<SampleStore> {
    let mut r = ByteReader::new(buf);
    r.expect_magic(STORE_MAGIC)?;
    let n = r.usize("sample count")?;
    let classes = r.usize("class count")?;
    let dim = r.usize("input width")?;
    let cells = n.checked_mul(dim).ok_or_else(|| Error::Parse {
        offset: r.offset(),
        msg: format!("{n} × {dim} rows overflow"),
    })?;
    let data = r.f64_vec(cells, "sample row")?;
    let mut labels = Vec::with_capacity(n);
    for _ in 0..n {
        let at = r.offset();
        let l = r.usize("label")?;
        if l >= classes {
            return Err(Error::Parse {
                offset: at,
                msg: format!("label {l} out of range for {classes} classes"),
            });
        }
        labels.push(l);
    }
    let mut is_test = Vec::with_capacity(n);
    for _ in 0..n {
        let at = r.offset();
        is_test.push(match r.take(1, "split flag")?[0] {
            0 => false,
            1 => true,
            b => {
                return Err(Error::Parse {
                    offset: at,
                    msg: format!("split flag {b} is neither 0 nor 1"),
                })
            }
        });
    }
    r.finish()?;
    SampleStore::new(classes, Tensor::new(vec![n, dim], data)?, labels, is_test)
}

pub fn save_store(store: &SampleStore, path: &Path) -> Result<()> {
    fs::write(path, encode_store(store))?;
    Ok(())
}

pub fn load_store_facl(path: &Path) -> Result<SampleStore> {
    decode_store(&fs::read(path)?)
}

/// Header `label,split,v0,…`; split is `train` or `test`.
pub fn save_store_csv(store: &SampleStore, path: &Path) -> Result<()> {
    let mut w = csv::Writer::from_path(path)?;
    let mut header = vec!["label".to_string(), "split".to_string()];
    header.extend((0..store.input_dim()).map(|j| format!("v{j}")));
    w.write_record(&header)?;
    for i in 0..store.len() {
        let mut rec = vec![
            store.labels[i].to_string(),
            if store.is_test[i] { "test" } else { "train" }.to_string(),
        ];
        rec.extend(store.inputs.row(i).iter().map(|v| v.to_string()));
        w.write_record(&rec)?;
    }
    w.flush()?;
    Ok(())
}

/// The class count is one past the largest label.
pub fn load_store_csv(path: &Path) -> Result<SampleStore> {
    let mut rdr = csv::Reader::from_path(path)?;
    let header = rdr.headers()?.clone();
    if header.len() < 3 || &header[0] != "label" || &header[1] != "split" {
        return Err(Error::Dataset(format!(
            "{}: CSV header must start with label,split and have at least one value column",
            path.display()
        )));
    }
    let dim = header.len() - 2;
    let mut data = Vec::new();
    let mut labels = Vec::new();
    let mut is_test = Vec::new();
    for (line, rec) in rdr.records().enumerate() {
        let rec = rec?;
        let row = line + 2;
        let bad = |what: &str| Error::Dataset(format!("{}: line {row}: {what}", path.display()));
        if rec.len() != dim + 2 {
            return Err(bad(&format!("expected {} fields, found {}", dim + 2, rec.len())));
        }
        labels.push(rec[0].trim().parse::<usize>().map_err(|_| bad("label is not a non-negative integer"))?);
        is_test.push(match rec[1].trim() {
            "train" | "0" => false,
            "test" | "1" => true,
            other => return Err(bad(&format!("split {other:?} is not train or test"))),
        });
        for field in rec.iter().skip(2) {
            let v: f64 = field.trim().parse().map_err(|_| bad(&format!("value {field:?} is not a number")))?;
            if !v.is_finite() {
                return Err(bad("non-finite value"));
            }
            data.push(v);
        }
    }
    let classes = labels.iter().max().map_or(0, |&m| m + 1);
    let n = labels.len();
    SampleStore::new(classes, Tensor::new(vec![n, dim], data)?, labels, is_test)
}

/// Dispatches on the leading magic bytes; anything else is read as CSV.
pub fn load_store(path: &Path) -> Result<SampleStore> {
    let buf = fs::read(path)?;
    if buf.starts_with(STORE_MAGIC) {
        decode_store(&buf)
    } else {
        load_store_csv(path)
    }
}
