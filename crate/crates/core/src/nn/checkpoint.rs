//! Binary checkpoints: `PFNN`, a `u32` version, a `u32` tensor count, then per
//! tensor the name (`u32` length + UTF-8), rank (`u32`), extents (`u64` each)
//! and a little-endian `f64` payload. All integers are little-endian.

use std::fs;
use std::io::{self, Read, Write};
use std::path::Path;

use super::net::{Architecture, Discriminator, PARAM_NAMES};
use super::optim::Sgd;
use super::tensor::Tensor;
use super::NnError;

const MAGIC: &[u8; 4] = b"PFNN";
pub const CHECKPOINT_VERSION: u32 = 1;

fn net_records(net: &Discriminator) -> Vec<(String, Tensor)> {
    let hyper = Tensor::from_vec(&[2], vec![net.arch.bn_eps, net.arch.bn_momentum]).unwrap();
    vec![
        ("conv.weight".into(), net.conv_w.clone()),
        ("conv.bias".into(), net.conv_b.clone()),
        ("bn.weight".into(), net.bn_gamma.clone()),
        ("bn.bias".into(), net.bn_beta.clone()),
        ("bn.running_mean".into(), net.bn_running_mean.clone()),
        ("bn.running_var".into(), net.bn_running_var.clone()),
        ("bn.hyper".into(), hyper),
        ("fc1.weight".into(), net.fc1_w.clone()),
        ("fc1.bias".into(), net.fc1_b.clone()),
        ("fc2.weight".into(), net.fc2_w.clone()),
        ("fc2.bias".into(), net.fc2_b.clone()),
    ]
}

fn write_records<W: Write>(out: &mut W, records: &[(String, Tensor)]) -> io::Result<()> {
    out.write_all(MAGIC)?;
    out.write_all(&CHECKPOINT_VERSION.to_le_bytes())?;
    out.write_all(&(records.len() as u32).to_le_bytes())?;
    for (name, t) in records {
        out.write_all(&(name.len() as u32).to_le_bytes())?;
        out.write_all(name.as_bytes())?;
        out.write_all(&(t.shape().len() as u32).to_le_bytes())?;
        for &e in t.shape() {
            out.write_all(&(e as u64).to_le_bytes())?;
        }
        for v in t.data() {
            out.write_all(&v.to_le_bytes())?;
        }
    }
    Ok(())
}

fn truncated(e: io::Error) -> NnError {
    if e.kind() == io::ErrorKind::UnexpectedEof {
        NnError::Format("truncated checkpoint".into())
    } else {
        NnError::Io(e)
    }
}

fn read_u32<R: Read>(r: &mut R) -> Result<u32, NnError> {
    let mut b = [0u8; 4];
    r.read_exact(&mut b).map_err(truncated)?;
    Ok(u32::from_le_bytes(b))
}

fn read_u64<R: Read>(r: &mut R) -> Result<u64, NnError> {
    let mut b = [0u8; 8];
    r.read_exact(&mut b).map_err(truncated)?;
    Ok(u64::from_le_bytes(b))
}

/// Largest tensor accepted on load, in elements.
const MAX_ELEMENTS: u64 = 1 << 31;

fn read_records<R: Read>(r: &mut R) -> Result<Vec<(String, Tensor)>, NnError> {
    let mut magic = [0u8; 4];
    r.read_exact(&mut magic).map_err(truncated)?;
    if &magic != MAGIC {
        return Err(NnError::Format("bad magic bytes".into()));
    }
    let version = read_u32(r)?;
    if version != CHECKPOINT_VERSION {
        return Err(NnError::Version(version));
    }
    let count = read_u32(r)?;
    let mut records = Vec::new();
    for _ in 0..count {
        let len = read_u32(r)? as usize;
        if len > 256 {
            return Err(NnError::Format(format!("tensor name of {len} bytes")));
        }
        let mut name = vec![0u8; len];
        r.read_exact(&mut name).map_err(truncated)?;
        let name = String::from_utf8(name).map_err(|_| NnError::Format("tensor name is not UTF-8".into()))?;
        let rank = read_u32(r)?;
        if rank > 8 {
            return Err(NnError::Format(format!("`{name}` has rank {rank}")));
        }
        let mut shape = Vec::with_capacity(rank as usize);
        let mut elements: u64 = 1;
        for _ in 0..rank {
            let e = read_u64(r)?;
            elements = elements.saturating_mul(e);
            shape.push(e as usize);
        }
        if elements > MAX_ELEMENTS {
            return Err(NnError::Format(format!("`{name}` is implausibly large")));
        }
        let mut data = Vec::with_capacity(elements as usize);
        let mut b = [0u8; 8];
        for _ in 0..elements {
            r.read_exact(&mut b).map_err(truncated)?;
            data.push(f64::from_le_bytes(b));
        }
        records.push((name, Tensor::from_vec(&shape, data).unwrap()));
    }
    let mut rest = [0u8; 1];
    if r.read(&mut rest)? != 0 {
        return Err(NnError::Format("trailing bytes after last tensor".into()));
    }
    Ok(records)
}

fn take(records: &mut std::vec::IntoIter<(String, Tensor)>, name: &str, shape: &[usize]) -> Result<Tensor, NnError> {
    match records.next() {
        Some((n, t)) if n == name => {
            if t.shape() != shape {
                return Err(NnError::Shape { layer: name.into(), expected: shape.to_vec(), found: t.shape().to_vec() });
            }
            Ok(t)
        }
        Some((n, _)) => Err(NnError::Format(format!("expected tensor `{name}`, found `{n}`"))),
        None => Err(NnError::Format(format!("missing tensor `{name}`"))),
    }
}

fn rank_of(t: &Tensor, name: &str, rank: usize) -> Result<(), NnError> {
    if t.shape().len() != rank {
        return Err(NnError::Format(format!("`{name}` has rank {}, expected {rank}", t.shape().len())));
    }
    Ok(())
}

pub fn write_net<W: Write>(net: &Discriminator, out: &mut W) -> io::Result<()> {
    write_records(out, &net_records(net))
}

/// Reads a net, checking it against `expected` when given (in-channels,
/// robot count and layer widths must all agree).
pub fn read_net<R: Read>(r: &mut R, expected: Option<&Architecture>) -> Result<Discriminator, NnError> {
    let records = read_records(r)?;
    if records.len() != 11 {
        return Err(NnError::Format(format!("expected 11 tensors, found {}", records.len())));
    }
    // infer the architecture from the file, then check every tensor
    let conv_shape = records[0].1.shape().to_vec();
    rank_of(&records[0].1, "conv.weight", 4)?;
    rank_of(&records[9].1, "fc2.weight", 2)?;
    rank_of(&records[6].1, "bn.hyper", 1)?;
    let (c, cin) = (conv_shape[0], conv_shape[1]);
    let hidden = records[9].1.shape()[1];
    let n = records[9].1.shape()[0];
    let hyper = records[6].1.data().to_vec();
    if hyper.len() != 2 {
        return Err(NnError::Format("`bn.hyper` must hold eps and momentum".into()));
    }
    let arch = Architecture { bn_eps: hyper[0], bn_momentum: hyper[1], ..Architecture::new(cin, n, c, hidden) };
    if let Some(e) = expected {
        if e.in_channels != arch.in_channels || e.conv_channels != arch.conv_channels {
            return Err(NnError::Shape {
                layer: "conv.weight".into(),
                expected: vec![e.conv_channels, e.in_channels, 3, 3],
                found: conv_shape,
            });
        }
        if e.n_robots != arch.n_robots || e.hidden != arch.hidden {
            return Err(NnError::Shape {
                layer: "fc2.weight".into(),
                expected: vec![e.n_robots, e.hidden],
                found: vec![arch.n_robots, arch.hidden],
            });
        }
    }
    let f = arch.features();
    let mut it = records.into_iter();
    let net = Discriminator {
        arch,
        conv_w: take(&mut it, "conv.weight", &[c, cin, 3, 3])?,
        conv_b: take(&mut it, "conv.bias", &[c])?,
        bn_gamma: take(&mut it, "bn.weight", &[c])?,
        bn_beta: take(&mut it, "bn.bias", &[c])?,
        bn_running_mean: take(&mut it, "bn.running_mean", &[c])?,
        bn_running_var: take(&mut it, "bn.running_var", &[c])?,
        fc1_w: {
            take(&mut it, "bn.hyper", &[2])?;
            take(&mut it, "fc1.weight", &[hidden, f])?
        },
        fc1_b: take(&mut it, "fc1.bias", &[hidden])?,
        fc2_w: take(&mut it, "fc2.weight", &[n, hidden])?,
        fc2_b: take(&mut it, "fc2.bias", &[n])?,
    };
    if net.bn_running_var.data().iter().any(|&v| !(v > 0.0)) {
        return Err(NnError::Format("`bn.running_var` must be positive".into()));
    }
    Ok(net)
}

pub fn write_optimizer<W: Write>(opt: &Sgd, out: &mut W) -> io::Result<()> {
    let mut records = vec![(
        "optimizer.hyper".to_string(),
        Tensor::from_vec(&[2], vec![opt.learning_rate, opt.momentum]).unwrap(),
    )];
    for (name, v) in PARAM_NAMES.iter().zip(&opt.velocity) {
        records.push((format!("velocity.{name}"), v.clone()));
    }
    write_records(out, &records)
}

/// Reads optimizer state and checks its buffers against `net`.
pub fn read_optimizer<R: Read>(r: &mut R, net: &Discriminator) -> Result<Sgd, NnError> {
    let records = read_records(r)?;
    let mut it = records.into_iter();
    let hyper = take(&mut it, "optimizer.hyper", &[2])?;
    let mut velocity = Vec::new();
    for (name, p) in PARAM_NAMES.iter().zip(net.params()) {
        velocity.push(take(&mut it, &format!("velocity.{name}"), p.shape())?);
    }
    if it.next().is_some() {
        return Err(NnError::Format("unexpected extra optimizer tensors".into()));
    }
    Ok(Sgd { learning_rate: hyper.data()[0], momentum: hyper.data()[1], velocity })
}

fn atomic_write(path: &Path, bytes: &[u8]) -> io::Result<()> {
    let tmp = path.with_extension("tmp");
    fs::write(&tmp, bytes)?;
    fs::rename(&tmp, path)
}

pub fn save_net(net: &Discriminator, path: &Path) -> io::Result<()> {
    let mut buf = Vec::new();
    write_net(net, &mut buf)?;
    atomic_write(path, &buf)
}

pub fn load_net(path: &Path, expected: Option<&Architecture>) -> Result<Discriminator, NnError> {
    let bytes = fs::read(path)?;
    read_net(&mut bytes.as_slice(), expected)
}

pub fn save_optimizer(opt: &Sgd, path: &Path) -> io::Result<()> {
    let mut buf = Vec::new();
    write_optimizer(opt, &mut buf)?;
    atomic_write(path, &buf)
}

pub fn load_optimizer(path: &Path, net: &Discriminator) -> Result<Sgd, NnError> {
    let bytes = fs::read(path)?;
    read_optimizer(&mut bytes.as_slice(), net)
}
