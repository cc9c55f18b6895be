//! Trained-model file: a text header followed by little-endian f64 blocks.
//!
//! ```text
//! SEIZURE-MODEL 1
//! input_len = 178
//! conv_filters = 32,64,128
//! ...
//! meta.best_epoch = 14
//! tensors = 30
//! end
//! <block>*
//! ```
//!
//! Each block is `u32 name length, name, u32 rank, u64 dims.., f64 data..`.
//! The scaler comes first (`scaler.mean`, `scaler.std`), then every model
//! tensor in slot order.

use std::io::Write;
use std::path::Path;

use crate::error::{Error, Result};
use crate::nn::{ModelConfig, ModelParams, Tensor};
use crate::preprocess::{apply_scaler, denoise_rows, ScalerParams, ThresholdPolicy};

pub const MAGIC: &str = "SEIZURE-MODEL";
pub const VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq)]
pub struct ModelArtifact {
    pub config: ModelConfig,
    pub params: ModelParams,
    pub scaler: ScalerParams,
    pub wavelet: ThresholdPolicy,
    /// Free-form provenance (seed, epochs run, test metrics).
    pub meta: Vec<(String, String)>,
}

fn join<T: ToString>(v: &[T]) -> String {
    v.iter().map(|x| x.to_string()).collect::<Vec<_>>().join(",")
}

fn bad(msg: impl Into<String>) -> Error {
    Error::Artifact(msg.into())
}

fn parse_list(key: &str, v: &str) -> Result<Vec<usize>> {
    v.split(',')
        .map(|s| s.trim().parse().map_err(|_| bad(format!("bad list for {key}: `{v}`"))))
        .collect()
}

fn parse_num<T: std::str::FromStr>(key: &str, v: &str) -> Result<T> {
    v.parse().map_err(|_| bad(format!("bad value for {key}: `{v}`")))
}

struct Reader<'a> {
    buf: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        if self.buf.len() - self.pos < n {
            return Err(bad("truncated tensor data"));
        }
        let s = &self.buf[self.pos..self.pos + n];
        self.pos += n;
        Ok(s)
    }

    fn u32(&mut self) -> Result<u32> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().unwrap()))
    }

    fn u64(&mut self) -> Result<u64> {
        Ok(u64::from_le_bytes(self.take(8)?.try_into().unwrap()))
    }

    fn block(&mut self) -> Result<(String, Vec<usize>, Vec<f64>)> {
        let n = self.u32()? as usize;
        let name = String::from_utf8(self.take(n)?.to_vec()).map_err(|_| bad("tensor name is not UTF-8"))?;
        let rank = self.u32()? as usize;
        if rank > 8 {
            return Err(bad(format!("{name}: implausible rank {rank}")));
        }
        let mut shape = Vec::with_capacity(rank);
        for _ in 0..rank {
            shape.push(self.u64()? as usize);
        }
        let len: usize = shape.iter().product();
        let bytes = self.take(len.checked_mul(8).ok_or_else(|| bad("tensor too large"))?)?;
        let data = bytes
            .chunks_exact(8)
            .map(|c| f64::from_le_bytes(c.try_into().unwrap()))
            .collect();
        Ok((name, shape, data))
    }
}

fn write_block(out: &mut Vec<u8>, name: &str, shape: &[usize], data: &[f64]) {
    out.extend((name.len() as u32).to_le_bytes());
    out.extend(name.as_bytes());
    out.extend((shape.len() as u32).to_le_bytes());
    for &d in shape {
        out.extend((d as u64).to_le_bytes());
    }
    for &x in data {
        out.extend(x.to_le_bytes());
    }
}

impl ModelArtifact {
    pub fn meta(&self, key: &str) -> Option<&str> {
        self.meta.iter().find(|(k, _)| k == key).map(|(_, v)| v.as_str())
    }

    /// Wavelet denoising then standardization, as applied during training.
    pub fn preprocess(&self, rows: &[Vec<f64>]) -> Result<Vec<Vec<f64>>> {
        apply_scaler(&denoise_rows(rows, self.wavelet)?, &self.scaler)
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        let c = &self.config;
        let mut head = format!("{MAGIC} {VERSION}\n");
        for (k, v) in [
            ("input_len", c.input_len.to_string()),
            ("conv_filters", join(&c.conv_filters)),
            ("conv_kernels", join(&c.conv_kernels)),
            ("pool_size", c.pool_size.to_string()),
            ("attn_heads", c.attn_heads.to_string()),
            ("attn_key_dim", c.attn_key_dim.to_string()),
            ("dense_units", join(&c.dense_units)),
            ("dropout_rate", c.dropout_rate.to_string()),
            ("l2_lambda", c.l2_lambda.to_string()),
            ("wavelet", self.wavelet.to_string()),
        ] {
            head.push_str(&format!("{k} = {v}\n"));
        }
        for (k, v) in &self.meta {
            head.push_str(&format!("meta.{k} = {v}\n"));
        }
        let slots = self.params.slots();
        head.push_str(&format!("tensors = {}\nend\n", slots.len() + 2));

        let mut out = head.into_bytes();
        let n = self.scaler.mean.len();
        write_block(&mut out, "scaler.mean", &[n], &self.scaler.mean);
        write_block(&mut out, "scaler.std", &[n], &self.scaler.std);
        for s in slots {
            write_block(&mut out, &s.name, s.tensor.shape(), s.tensor.data());
        }
        out
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        const END: &[u8] = b"\nend\n";
        let split = bytes
            .windows(END.len())
            .position(|w| w == END)
            .ok_or_else(|| bad("missing header terminator"))?;
        let head = std::str::from_utf8(&bytes[..split]).map_err(|_| bad("header is not UTF-8"))?;
        let mut lines = head.lines();
        let first = lines.next().unwrap_or("");
        let version = first
            .strip_prefix(MAGIC)
            .map(str::trim)
            .ok_or_else(|| bad("not a model file"))?;
        if version != VERSION.to_string() {
            return Err(bad(format!("unsupported version {version}, expected {VERSION}")));
        }

        let mut config = ModelConfig::default();
        let mut wavelet = ThresholdPolicy::default();
        let mut meta = Vec::new();
        let mut n_tensors = None;
        for line in lines {
            let (k, v) = line
                .split_once('=')
                .map(|(k, v)| (k.trim(), v.trim()))
                .ok_or_else(|| bad(format!("bad header line `{line}`")))?;
            match k {
                "input_len" => config.input_len = parse_num(k, v)?,
                "conv_filters" => config.conv_filters = parse_list(k, v)?,
                "conv_kernels" => config.conv_kernels = parse_list(k, v)?,
                "pool_size" => config.pool_size = parse_num(k, v)?,
                "attn_heads" => config.attn_heads = parse_num(k, v)?,
                "attn_key_dim" => config.attn_key_dim = parse_num(k, v)?,
                "dense_units" => config.dense_units = parse_list(k, v)?,
                "dropout_rate" => config.dropout_rate = parse_num(k, v)?,
                "l2_lambda" => config.l2_lambda = parse_num(k, v)?,
                "wavelet" => wavelet = v.parse().map_err(|_| bad(format!("bad wavelet policy `{v}`")))?,
                "tensors" => n_tensors = Some(parse_num::<usize>(k, v)?),
                _ => match k.strip_prefix("meta.") {
                    Some(m) => meta.push((m.to_string(), v.to_string())),
                    None => return Err(bad(format!("unknown header key `{k}`"))),
                },
            }
        }
        config.validate().map_err(|e| bad(format!("stored config: {e}")))?;

        let mut params = ModelParams::zeros(&config)?;
        let expected: Vec<(String, Vec<usize>)> = params
            .slots()
            .iter()
            .map(|s| (s.name.clone(), s.tensor.shape().to_vec()))
            .collect();
        if n_tensors != Some(expected.len() + 2) {
            return Err(bad(format!(
                "header declares {:?} tensors, model needs {}",
                n_tensors,
                expected.len() + 2
            )));
        }

        let mut r = Reader { buf: bytes, pos: split + END.len() };
        let n = config.input_len;
        let mut scaler_block = |want: &str| -> Result<Vec<f64>> {
            let (name, shape, data) = r.block()?;
            if name != want || shape != [n] {
                return Err(bad(format!("expected {want} [{n}], found {name} {shape:?}")));
            }
            Ok(data)
        };
        let scaler = ScalerParams {
            mean: scaler_block("scaler.mean")?,
            std: scaler_block("scaler.std")?,
        };
        for ((want, want_shape), (_, t)) in expected.iter().zip(params.slots_mut()) {
            let (name, shape, data) = r.block()?;
            if &name != want || &shape != want_shape {
                return Err(bad(format!("expected {want} {want_shape:?}, found {name} {shape:?}")));
            }
            *t = Tensor::new(shape, data)?;
        }
        if r.pos != bytes.len() {
            return Err(bad("trailing bytes after last tensor"));
        }
        if !params.is_finite() {
            return Err(Error::NonFinite("stored parameters".into()));
        }
        Ok(Self { config, params, scaler, wavelet, meta })
    }

    /// Writes to a sibling temp file first so a failed save never leaves a
    /// truncated model behind.
    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        let mut tmp = path.as_os_str().to_owned();
        tmp.push(".tmp");
        let tmp = std::path::PathBuf::from(tmp);
        let write = || -> std::io::Result<()> {
            let mut f = std::fs::File::create(&tmp)?;
            f.write_all(&self.to_bytes())?;
            f.sync_all()
        };
        if let Err(e) = write() {
            let _ = std::fs::remove_file(&tmp);
            return Err(Error::io(&tmp, e));
        }
        std::fs::rename(&tmp, path).map_err(|e| Error::io(path, e))
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
        Self::from_bytes(&bytes)
    }
}
