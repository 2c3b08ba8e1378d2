//! Flat binary layer format:
//! `"MUEL"`, u32 version, u64 d, f64 A, f64 R, u64 length + block JSON,
//! three f64 init stds, u8 router flag, then every weight array as
//! little-endian f64 in declaration order (dense branches, experts, router
//! weight, router bias). Array shapes follow from the block.

use std::sync::Arc;

use super::layer::{FfnWeights, InitStds, MicroLayer, Router};
use super::mat::Mat;
use crate::config::BlockSpec;
use crate::error::{Error, Result};

const MAGIC: &[u8; 4] = b"MUEL";
const VERSION: u32 = 1;

fn put_mat(out: &mut Vec<u8>, m: &Mat) {
    for v in m.data() {
        out.extend_from_slice(&v.to_le_bytes());
    }
}

struct Reader<'a> {
    buf: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        let end = self
            .pos
            .checked_add(n)
            .filter(|&e| e <= self.buf.len())
            .ok_or_else(|| Error::InvalidInput("truncated layer file".into()))?;
        let s = &self.buf[self.pos..end];
        self.pos = end;
        Ok(s)
    }

    fn u32(&mut self) -> Result<u32> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().unwrap()))
    }

    fn u64(&mut self) -> Result<u64> {
        Ok(u64::from_le_bytes(self.take(8)?.try_into().unwrap()))
    }

    fn f64(&mut self) -> Result<f64> {
        Ok(f64::from_le_bytes(self.take(8)?.try_into().unwrap()))
    }

    fn mat(&mut self, rows: usize, cols: usize) -> Result<Mat> {
        let data = (0..rows * cols).map(|_| self.f64()).collect::<Result<Vec<_>>>()?;
        Mat::from_vec(rows, cols, data)
    }

    fn ffn(&mut self, d: usize, h: usize) -> Result<FfnWeights> {
        Ok(FfnWeights {
            up: Arc::new(self.mat(h, d)?),
            gate: Arc::new(self.mat(h, d)?),
            down: Arc::new(self.mat(d, h)?),
        })
    }
}

impl MicroLayer {
    pub fn to_bytes(&self) -> Vec<u8> {
        let mut out = Vec::new();
        out.extend_from_slice(MAGIC);
        out.extend_from_slice(&VERSION.to_le_bytes());
        out.extend_from_slice(&(self.d() as u64).to_le_bytes());
        out.extend_from_slice(&self.output_multiplier().to_le_bytes());
        out.extend_from_slice(&self.route_scale().to_le_bytes());
        let block = serde_json::to_vec(self.block()).expect("block serializes");
        out.extend_from_slice(&(block.len() as u64).to_le_bytes());
        out.extend_from_slice(&block);
        let s = self.stds();
        for v in [s.router, s.up_gate, s.down] {
            out.extend_from_slice(&v.to_le_bytes());
        }
        out.push(self.router().is_some() as u8);
        for w in self.dense().iter().chain(self.experts()) {
            put_mat(&mut out, &w.up);
            put_mat(&mut out, &w.gate);
            put_mat(&mut out, &w.down);
        }
        if let Some(r) = self.router() {
            put_mat(&mut out, &r.weight);
            for v in &r.bias {
                out.extend_from_slice(&v.to_le_bytes());
            }
        }
        out
    }

    pub fn from_bytes(buf: &[u8]) -> Result<MicroLayer> {
        let mut r = Reader { buf, pos: 0 };
        if r.take(4)? != MAGIC {
            return Err(Error::InvalidInput("not a layer file".into()));
        }
        let version = r.u32()?;
        if version != VERSION {
            return Err(Error::InvalidInput(format!("unsupported layer format version {version}")));
        }
        let d = r.u64()? as usize;
        let a = r.f64()?;
        let route = r.f64()?;
        let len = r.u64()? as usize;
        let block: BlockSpec = serde_json::from_slice(r.take(len)?)?;
        block.validate()?;
        let stds = InitStds {
            router: r.f64()?,
            up_gate: r.f64()?,
            down: r.f64()?,
        };
        let has_router = r.take(1)?[0] != 0;

        let (dense_widths, expert_widths): (Vec<usize>, Vec<usize>) = match &block {
            BlockSpec::DenseFfn { hidden } => (vec![*hidden], vec![]),
            BlockSpec::SparseMoe { experts, width, .. } => (vec![], vec![*width; *experts]),
            BlockSpec::Hybrid {
                dense_branches,
                routed_groups,
                ..
            } => (
                dense_branches.clone(),
                routed_groups
                    .iter()
                    .flat_map(|g| std::iter::repeat_n(g.width, g.experts))
                    .collect(),
            ),
        };
        let dense = dense_widths.iter().map(|&h| r.ffn(d, h)).collect::<Result<Vec<_>>>()?;
        let experts = expert_widths.iter().map(|&h| r.ffn(d, h)).collect::<Result<Vec<_>>>()?;
        let router = if has_router {
            let n = experts.len();
            let weight = r.mat(n, d)?;
            let bias = (0..n).map(|_| r.f64()).collect::<Result<Vec<_>>>()?;
            let kind = block
                .router()
                .ok_or_else(|| Error::InvalidInput("router present on a dense block".into()))?;
            Some(Router { weight, bias, kind })
        } else {
            None
        };
        if r.pos != buf.len() {
            return Err(Error::InvalidInput("trailing bytes after layer".into()));
        }
        MicroLayer::from_raw(d, block, a, route, dense, experts, router, stds)
    }
}
