//! Checkpoint container.
//!
//! Layout (little-endian):
//!
//! ```text
//! "HGCK"            magic, 4 bytes
//! u32               format version (1)
//! u32               JSON header length
//! ...               header: stage, trained flag, model shape,
//!                   tensor table [{name, rows, cols, frozen}]
//! ...               raw f32 payloads, one per table entry, in order
//! ```
//!
//! Payloads are written bit-for-bit from the in-memory f32 tensors, so a
//! save/load cycle reproduces the model exactly.

use std::io::{Read, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::config::ModelShape;
use crate::error::{Error, Result};
use crate::linalg::Mat;

use super::params::{AttnParams, DirectSrParams, ModelParams, Tensor};

const MAGIC: &[u8; 4] = b"HGCK";
const VERSION: u32 = 1;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Stage {
    CogLm,
    DirectSr,
    IterativeSr,
}

impl Stage {
    pub fn name(self) -> &'static str {
        match self {
            Stage::CogLm => "coglm",
            Stage::DirectSr => "direct-sr",
            Stage::IterativeSr => "iterative-sr",
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
struct TensorMeta {
    name: String,
    rows: usize,
    cols: usize,
    frozen: bool,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
struct Header {
    stage: Stage,
    trained: bool,
    shape: ModelShape,
    tensors: Vec<TensorMeta>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Checkpoint {
    pub stage: Stage,
    pub trained: bool,
    pub model: ModelParams<f32>,
    /// Present only for `Stage::DirectSr`.
    pub decoder_attn: Option<Vec<AttnParams<f32>>>,
}

impl Checkpoint {
    pub fn coglm(model: ModelParams<f32>, trained: bool) -> Self {
        Checkpoint { stage: Stage::CogLm, trained, model, decoder_attn: None }
    }

    pub fn iterative_sr(model: ModelParams<f32>, trained: bool) -> Self {
        Checkpoint { stage: Stage::IterativeSr, trained, model, decoder_attn: None }
    }

    pub fn direct_sr(params: DirectSrParams<f32>, trained: bool) -> Self {
        Checkpoint {
            stage: Stage::DirectSr,
            trained,
            model: params.base,
            decoder_attn: Some(params.decoder_attn),
        }
    }

    pub fn expect_stage(&self, stage: Stage) -> Result<()> {
        if self.stage != stage {
            return Err(Error::StageMismatch {
                expected: stage.name().into(),
                got: self.stage.name().into(),
            });
        }
        Ok(())
    }

    pub fn into_direct_sr(self) -> Result<DirectSrParams<f32>> {
        self.expect_stage(Stage::DirectSr)?;
        let decoder_attn = self
            .decoder_attn
            .ok_or_else(|| Error::Checkpoint("direct-sr checkpoint missing decoder attention".into()))?;
        Ok(DirectSrParams { base: self.model, decoder_attn })
    }

    fn tensor_list(&self) -> Vec<(String, &Tensor<f32>)> {
        let mut list = self.model.tensors();
        if let Some(dec) = &self.decoder_attn {
            for (i, a) in dec.iter().enumerate() {
                list.push((format!("decoder{i}.attn.w_qkv"), &a.w_qkv));
                list.push((format!("decoder{i}.attn.b_qkv"), &a.b_qkv));
                list.push((format!("decoder{i}.attn.w_o"), &a.w_o));
                list.push((format!("decoder{i}.attn.b_o"), &a.b_o));
            }
        }
        list
    }

    pub fn write<W: Write>(&self, mut w: W) -> Result<()> {
        let tensors = self.tensor_list();
        let header = Header {
            stage: self.stage,
            trained: self.trained,
            shape: self.model.shape.clone(),
            tensors: tensors
                .iter()
                .map(|(name, t)| TensorMeta {
                    name: name.clone(),
                    rows: t.mat.rows,
                    cols: t.mat.cols,
                    frozen: t.frozen,
                })
                .collect(),
        };
        let hjson = serde_json::to_vec(&header)?;
        w.write_all(MAGIC)?;
        w.write_all(&VERSION.to_le_bytes())?;
        w.write_all(&(hjson.len() as u32).to_le_bytes())?;
        w.write_all(&hjson)?;
        for (_, t) in tensors {
            for v in &t.mat.data {
                w.write_all(&v.to_le_bytes())?;
            }
        }
        Ok(())
    }

    pub fn read<R: Read>(mut r: R) -> Result<Checkpoint> {
        let mut magic = [0u8; 4];
        r.read_exact(&mut magic)?;
        if &magic != MAGIC {
            return Err(Error::Checkpoint("bad magic; not a checkpoint file".into()));
        }
        let mut b4 = [0u8; 4];
        r.read_exact(&mut b4)?;
        let version = u32::from_le_bytes(b4);
        if version != VERSION {
            return Err(Error::Checkpoint(format!("unsupported checkpoint version {version}")));
        }
        r.read_exact(&mut b4)?;
        let hlen = u32::from_le_bytes(b4) as usize;
        let mut hbuf = vec![0u8; hlen];
        r.read_exact(&mut hbuf)?;
        let header: Header = serde_json::from_slice(&hbuf)?;

        let mut payloads: Vec<Tensor<f32>> = Vec::with_capacity(header.tensors.len());
        for meta in &header.tensors {
            let n = meta.rows * meta.cols;
            let mut data = vec![0f32; n];
            for v in data.iter_mut() {
                r.read_exact(&mut b4)?;
                *v = f32::from_le_bytes(b4);
            }
            payloads.push(Tensor {
                mat: Mat::from_vec(meta.rows, meta.cols, data),
                frozen: meta.frozen,
            });
        }

        let mut model = ModelParams::<f32>::init(&header.shape, 0);
        let expected = model.tensors().len();
        {
            let mut it = payloads.iter().zip(header.tensors.iter());
            let mut ok = true;
            model.visit_tensors_mut(|name, t| match it.next() {
                Some((payload, meta)) if meta.name == name => {
                    *t = payload.clone();
                }
                _ => ok = false,
            });
            if !ok {
                return Err(Error::Checkpoint("tensor table does not match model layout".into()));
            }
        }

        let decoder_attn = match header.stage {
            Stage::DirectSr => {
                let rest = &payloads[expected..];
                let metas = &header.tensors[expected..];
                if rest.len() != 4 * header.shape.layers {
                    return Err(Error::Checkpoint(format!(
                        "expected {} decoder tensors, found {}",
                        4 * header.shape.layers,
                        rest.len()
                    )));
                }
                let mut dec = Vec::with_capacity(header.shape.layers);
                for l in 0..header.shape.layers {
                    let base = 4 * l;
                    for (off, suffix) in
                        ["w_qkv", "b_qkv", "w_o", "b_o"].iter().enumerate()
                    {
                        let want = format!("decoder{l}.attn.{suffix}");
                        if metas[base + off].name != want {
                            return Err(Error::Checkpoint(format!(
                                "decoder tensor order mismatch: expected {want}, got {}",
                                metas[base + off].name
                            )));
                        }
                    }
                    dec.push(AttnParams {
                        w_qkv: rest[base].clone(),
                        b_qkv: rest[base + 1].clone(),
                        w_o: rest[base + 2].clone(),
                        b_o: rest[base + 3].clone(),
                    });
                }
                Some(dec)
            }
            _ => None,
        };

        Ok(Checkpoint { stage: header.stage, trained: header.trained, model, decoder_attn })
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let f = std::fs::File::create(path)?;
        self.write(std::io::BufWriter::new(f))
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Checkpoint> {
        let f = std::fs::File::open(path)?;
        Checkpoint::read(std::io::BufReader::new(f))
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::config::Geometry;

    fn shape() -> ModelShape {
        let mut s = ModelShape::desk(100, 64, &Geometry::desk());
        s.layers = 1;
        s.d_model = 16;
        s.heads = 2;
        s
    }

    #[test]
    fn roundtrip_is_bit_exact() {
        let params = ModelParams::<f32>::init(&shape(), 77);
        let ck = Checkpoint::coglm(params, true);
        let mut buf = Vec::new();
        ck.write(&mut buf).unwrap();
        let back = Checkpoint::read(&buf[..]).unwrap();
        assert_eq!(back, ck);
        // a second write is byte-identical
        let mut buf2 = Vec::new();
        back.write(&mut buf2).unwrap();
        assert_eq!(buf, buf2);
    }

    #[test]
    fn direct_sr_roundtrip_keeps_decoder_attention() {
        let params = ModelParams::<f32>::init(&shape(), 3);
        let sr = DirectSrParams::from_pretrained(params);
        let ck = Checkpoint::direct_sr(sr.clone(), false);
        let mut buf = Vec::new();
        ck.write(&mut buf).unwrap();
        let back = Checkpoint::read(&buf[..]).unwrap().into_direct_sr().unwrap();
        assert_eq!(back, sr);
    }

    #[test]
    fn stage_mismatch_is_detected() {
        let params = ModelParams::<f32>::init(&shape(), 3);
        let ck = Checkpoint::coglm(params, true);
        assert!(ck.expect_stage(Stage::IterativeSr).is_err());
        assert!(ck.into_direct_sr().is_err());
    }

    #[test]
    fn rejects_foreign_bytes() {
        assert!(Checkpoint::read(&b"HGCBxxxxxxxxxxxx"[..]).is_err());
    }
}
