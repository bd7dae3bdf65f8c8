//! Binary checkpoints: "DRNN", u16 version, a length-prefixed spec
//! descriptor, then every parameter tensor as u64 length + f64 values.

use super::{ConvSpec, MlpSpec, NetSpec, Network};
use crate::error::{Error, Result};

pub const MAGIC: &[u8; 4] = b"DRNN";
pub const VERSION: u16 = 1;

fn put_u32(out: &mut Vec<u8>, x: usize) {
    out.extend_from_slice(&(x as u32).to_le_bytes());
}

fn descriptor(spec: &NetSpec) -> Vec<u8> {
    let mut d = Vec::new();
    match spec {
        NetSpec::Mlp(m) => {
            d.push(0);
            put_u32(&mut d, m.input);
            put_u32(&mut d, m.hidden.len());
            m.hidden.iter().for_each(|&h| put_u32(&mut d, h));
        }
        NetSpec::Conv(c) => {
            d.push(1);
            for x in [c.channels, c.rows, c.cols, c.filters.len()] {
                put_u32(&mut d, x);
            }
            c.filters.iter().for_each(|&f| put_u32(&mut d, f));
            put_u32(&mut d, c.pooled);
            put_u32(&mut d, c.fc);
        }
    }
    d
}

pub fn save_checkpoint(net: &Network) -> Vec<u8> {
    let mut out = Vec::new();
    out.extend_from_slice(MAGIC);
    out.extend_from_slice(&VERSION.to_le_bytes());
    let d = descriptor(&net.spec);
    put_u32(&mut out, d.len());
    out.extend_from_slice(&d);
    for p in net.params() {
        out.extend_from_slice(&(p.len() as u64).to_le_bytes());
        for x in p {
            out.extend_from_slice(&x.to_le_bytes());
        }
    }
    out
}

struct Reader<'a> {
    buf: &'a [u8],
    pos: usize,
}

impl Reader<'_> {
    fn take(&mut self, n: usize) -> Result<&[u8]> {
        if self.buf.len() - self.pos < n {
            return Err(Error::Format("checkpoint truncated".into()));
        }
        let s = &self.buf[self.pos..self.pos + n];
        self.pos += n;
        Ok(s)
    }

    fn u32(&mut self) -> Result<usize> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().unwrap()) as usize)
    }

    fn u64(&mut self) -> Result<u64> {
        Ok(u64::from_le_bytes(self.take(8)?.try_into().unwrap()))
    }

    fn list(&mut self) -> Result<Vec<usize>> {
        let n = self.u32()?;
        if n > 1024 {
            return Err(Error::Format(format!("implausible layer count {n}")));
        }
        (0..n).map(|_| self.u32()).collect()
    }
}

pub fn load_checkpoint(bytes: &[u8]) -> Result<Network> {
    let mut r = Reader { buf: bytes, pos: 0 };
    if r.take(4)? != MAGIC {
        return Err(Error::Format("bad checkpoint magic".into()));
    }
    let version = u16::from_le_bytes(r.take(2)?.try_into().unwrap());
    if version != VERSION {
        return Err(Error::Format(format!("unsupported checkpoint version {version}")));
    }
    let dlen = r.u32()?;
    let start = r.pos;
    let spec = match r.take(1)?[0] {
        0 => {
            let input = r.u32()?;
            NetSpec::Mlp(MlpSpec { input, hidden: r.list()? })
        }
        1 => {
            let (channels, rows, cols) = (r.u32()?, r.u32()?, r.u32()?);
            let filters = r.list()?;
            NetSpec::Conv(ConvSpec { channels, rows, cols, filters, pooled: r.u32()?, fc: r.u32()? })
        }
        k => return Err(Error::Format(format!("unknown network kind {k}"))),
    };
    if r.pos - start != dlen {
        return Err(Error::Format("descriptor length mismatch".into()));
    }
    let mut net = Network::zeros(&spec)?;
    for p in net.params_mut() {
        let len = r.u64()? as usize;
        if len != p.len() {
            return Err(Error::Format(format!("tensor of {len} values where the spec needs {}", p.len())));
        }
        for x in p.iter_mut() {
            *x = f64::from_le_bytes(r.take(8)?.try_into().unwrap());
        }
    }
    if r.pos != bytes.len() {
        return Err(Error::Format("trailing bytes after checkpoint".into()));
    }
    Ok(net)
}
