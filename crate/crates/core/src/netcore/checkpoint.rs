//! Versioned binary checkpoint container.
//!
//! All integers are little-endian `u64` unless noted, floats are
//! little-endian IEEE-754 `f64`.
//!
//! ```text
//! magic    8 bytes  "GREGCKPT"
//! version  u32      1
//! count    u32      number of sections
//! section  tag: 4 ASCII bytes, len: u64, payload: len bytes
//! ```
//!
//! Sections, in this order when present:
//!
//! * `TOPO` input `c, h, w`, layer count, then per layer
//!   `kind: u8 (0 dense, 1 conv2d), kh, kw, out, activation: u8 (0 none, 1 relu), prunable: u8`.
//!   Dense layers store `kh = kw = 0`.
//! * `PARM` per layer: `n_w`, `n_w` weights, `n_b`, `n_b` biases,
//!   `has_mask: u8`, then `n_w` mask bytes (1 = pruned) if set.
//! * `OPTM` `lr, momentum, base_decay` (f64), velocity layer count
//!   (0 before the first step), then per layer `n, n f64, m, m f64`.
//! * `REGS` opaque regularisation-state bytes (see `scheduler::RegState::to_bytes`).

use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::Path;

use super::{Activation, LayerKind, LayerSpec, NetError, Network, OptimState, Result, Shape3};

pub const MAGIC: &[u8; 8] = b"GREGCKPT";
pub const VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq)]
pub struct Checkpoint {
    pub network: Network,
    pub optim: Option<OptimState>,
    pub reg_state: Option<Vec<u8>>,
}

impl Checkpoint {
    pub fn network_only(network: Network) -> Self {
        Self { network, optim: None, reg_state: None }
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        let mut out = Vec::new();
        write_checkpoint(&mut out, self).expect("writing to a Vec cannot fail");
        out
    }
}

struct Enc(Vec<u8>);

impl Enc {
    fn u8(&mut self, v: u8) {
        self.0.push(v);
    }
    fn u64(&mut self, v: usize) {
        self.0.extend_from_slice(&(v as u64).to_le_bytes());
    }
    fn f64(&mut self, v: f64) {
        self.0.extend_from_slice(&v.to_le_bytes());
    }
    fn f64s(&mut self, vs: &[f64]) {
        self.u64(vs.len());
        for &v in vs {
            self.f64(v);
        }
    }
}

pub(crate) struct Dec<'a> {
    buf: &'a [u8],
    pos: usize,
}

impl<'a> Dec<'a> {
    pub(crate) fn new(buf: &'a [u8]) -> Self {
        Self { buf, pos: 0 }
    }
    pub(crate) fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        if self.buf.len() - self.pos < n {
            return Err(NetError::Checkpoint("unexpected end of data".into()));
        }
        let s = &self.buf[self.pos..self.pos + n];
        self.pos += n;
        Ok(s)
    }
    pub(crate) fn u8(&mut self) -> Result<u8> {
        Ok(self.take(1)?[0])
    }
    pub(crate) fn u64(&mut self) -> Result<usize> {
        let v = u64::from_le_bytes(self.take(8)?.try_into().unwrap());
        usize::try_from(v).map_err(|_| NetError::Checkpoint("length overflow".into()))
    }
    pub(crate) fn f64(&mut self) -> Result<f64> {
        Ok(f64::from_le_bytes(self.take(8)?.try_into().unwrap()))
    }
    pub(crate) fn f64s(&mut self) -> Result<Vec<f64>> {
        let n = self.u64()?;
        if n > (self.buf.len() - self.pos) / 8 {
            return Err(NetError::Checkpoint("array length exceeds data".into()));
        }
        (0..n).map(|_| self.f64()).collect()
    }
    pub(crate) fn finished(&self) -> bool {
        self.pos == self.buf.len()
    }
}

fn encode_topology(net: &Network) -> Vec<u8> {
    let mut e = Enc(Vec::new());
    let s = net.input_shape();
    e.u64(s.c);
    e.u64(s.h);
    e.u64(s.w);
    e.u64(net.layers().len());
    for l in net.layers() {
        let spec = l.spec();
        match spec.kind {
            LayerKind::Dense => {
                e.u8(0);
                e.u64(0);
                e.u64(0);
            }
            LayerKind::Conv2d { kh, kw } => {
                e.u8(1);
                e.u64(kh);
                e.u64(kw);
            }
        }
        e.u64(spec.out);
        e.u8(match spec.activation {
            Activation::None => 0,
            Activation::Relu => 1,
        });
        e.u8(spec.prunable as u8);
    }
    e.0
}

fn encode_params(net: &Network) -> Vec<u8> {
    let mut e = Enc(Vec::new());
    for l in net.layers() {
        e.f64s(&l.weights);
        e.f64s(&l.bias);
        match l.frozen() {
            Some(mask) => {
                e.u8(1);
                for &m in mask {
                    e.u8(m as u8);
                }
            }
            None => e.u8(0),
        }
    }
    e.0
}

fn encode_optim(opt: &OptimState) -> Vec<u8> {
    let mut e = Enc(Vec::new());
    e.f64(opt.learning_rate);
    e.f64(opt.momentum);
    e.f64(opt.base_decay);
    e.u64(opt.velocity.len());
    for (vw, vb) in &opt.velocity {
        e.f64s(vw);
        e.f64s(vb);
    }
    e.0
}

pub fn write_checkpoint<W: Write>(w: &mut W, ckpt: &Checkpoint) -> Result<()> {
    let mut sections: Vec<(&[u8; 4], Vec<u8>)> = vec![
        (b"TOPO", encode_topology(&ckpt.network)),
        (b"PARM", encode_params(&ckpt.network)),
    ];
    if let Some(opt) = &ckpt.optim {
        sections.push((b"OPTM", encode_optim(opt)));
    }
    if let Some(reg) = &ckpt.reg_state {
        sections.push((b"REGS", reg.clone()));
    }
    w.write_all(MAGIC)?;
    w.write_all(&VERSION.to_le_bytes())?;
    w.write_all(&(sections.len() as u32).to_le_bytes())?;
    for (tag, payload) in sections {
        w.write_all(tag)?;
        w.write_all(&(payload.len() as u64).to_le_bytes())?;
        w.write_all(&payload)?;
    }
    Ok(())
}

fn decode_specs(d: &mut Dec) -> Result<(Shape3, Vec<LayerSpec>)> {
    let input = Shape3::new(d.u64()?, d.u64()?, d.u64()?);
    let n = d.u64()?;
    let mut specs = Vec::with_capacity(n.min(1 << 16));
    for _ in 0..n {
        let kind_tag = d.u8()?;
        let (kh, kw) = (d.u64()?, d.u64()?);
        let kind = match kind_tag {
            0 => LayerKind::Dense,
            1 => LayerKind::Conv2d { kh, kw },
            t => return Err(NetError::Checkpoint(format!("unknown layer kind {t}"))),
        };
        let out = d.u64()?;
        let activation = match d.u8()? {
            0 => Activation::None,
            1 => Activation::Relu,
            t => return Err(NetError::Checkpoint(format!("unknown activation {t}"))),
        };
        let prunable = d.u8()? != 0;
        specs.push(LayerSpec { kind, out, activation, prunable });
    }
    Ok((input, specs))
}

fn decode_params(d: &mut Dec, net: &mut Network) -> Result<()> {
    for layer in net.layers_mut() {
        let weights = d.f64s()?;
        let bias = d.f64s()?;
        if weights.len() != layer.weights.len() || bias.len() != layer.bias.len() {
            return Err(NetError::Checkpoint("parameter blob does not match topology".into()));
        }
        layer.weights = weights;
        layer.bias = bias;
        layer.frozen = match d.u8()? {
            0 => None,
            _ => Some(d.take(layer.weights.len())?.iter().map(|&b| b != 0).collect()),
        };
    }
    Ok(())
}

fn decode_optim(d: &mut Dec) -> Result<OptimState> {
    let lr = d.f64()?;
    let momentum = d.f64()?;
    let base_decay = d.f64()?;
    let mut opt = OptimState::new(lr, momentum, base_decay)?;
    let n = d.u64()?;
    for _ in 0..n {
        let vw = d.f64s()?;
        let vb = d.f64s()?;
        opt.velocity.push((vw, vb));
    }
    Ok(opt)
}

pub fn read_checkpoint<R: Read>(r: &mut R) -> Result<Checkpoint> {
    let mut buf = Vec::new();
    r.read_to_end(&mut buf)?;
    let mut d = Dec::new(&buf);
    if d.take(8)? != MAGIC {
        return Err(NetError::Checkpoint("bad magic".into()));
    }
    let version = u32::from_le_bytes(d.take(4)?.try_into().unwrap());
    if version != VERSION {
        return Err(NetError::Checkpoint(format!("unsupported version {version}")));
    }
    let count = u32::from_le_bytes(d.take(4)?.try_into().unwrap());
    let mut network = None;
    let mut optim = None;
    let mut reg_state = None;
    for _ in 0..count {
        let tag: [u8; 4] = d.take(4)?.try_into().unwrap();
        let len = d.u64()?;
        let payload = d.take(len)?;
        let mut sd = Dec::new(payload);
        match &tag {
            b"TOPO" => {
                let (input, specs) = decode_specs(&mut sd)?;
                network = Some(Network::zeros(input, &specs)?);
            }
            b"PARM" => {
                let net = network
                    .as_mut()
                    .ok_or_else(|| NetError::Checkpoint("PARM before TOPO".into()))?;
                decode_params(&mut sd, net)?;
            }
            b"OPTM" => optim = Some(decode_optim(&mut sd)?),
            b"REGS" => {
                reg_state = Some(payload.to_vec());
                continue;
            }
            other => {
                return Err(NetError::Checkpoint(format!(
                    "unknown section {:?}",
                    String::from_utf8_lossy(other)
                )))
            }
        }
        if !sd.finished() {
            return Err(NetError::Checkpoint("trailing bytes in section".into()));
        }
    }
    if !d.finished() {
        return Err(NetError::Checkpoint("trailing bytes after sections".into()));
    }
    let network = network.ok_or_else(|| NetError::Checkpoint("missing TOPO section".into()))?;
    network.validate()?;
    Ok(Checkpoint { network, optim, reg_state })
}

pub fn save_checkpoint(path: &Path, ckpt: &Checkpoint) -> Result<()> {
    let mut w = BufWriter::new(File::create(path)?);
    write_checkpoint(&mut w, ckpt)?;
    w.flush()?;
    Ok(())
}

pub fn load_checkpoint(path: &Path) -> Result<Checkpoint> {
    read_checkpoint(&mut BufReader::new(File::open(path)?))
}
