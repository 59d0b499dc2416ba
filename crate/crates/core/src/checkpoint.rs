//! Versioned little-endian binary snapshot of a trained network: weights,
//! scores, masks, batch-norm statistics and random stream positions.

use std::io::{Read, Write};
use std::path::Path;

use byteorder::{LittleEndian as LE, ReadBytesExt, WriteBytesExt};
use thiserror::Error;

use crate::masked::MaskedNetwork;
use crate::rng::StreamState;
use crate::tensor::Tensor;

pub const MAGIC: [u8; 8] = *b"ITRCKPT\0";
pub const VERSION: u32 = 1;

const MAX_LEN: u64 = 1 << 32;

#[derive(Debug, Error)]
pub enum CheckpointError {
    #[error("i/o on checkpoint: {0}")]
    Io(#[from] std::io::Error),
    #[error("not a checkpoint (bad magic)")]
    Magic,
    #[error("unsupported checkpoint version {0}")]
    Version(u32),
    #[error("corrupt checkpoint: {0}")]
    Format(String),
    #[error("checkpoint does not fit the network: {0}")]
    Mismatch(String),
}

#[derive(Debug, Clone, PartialEq)]
pub struct ParamState {
    pub shape: Vec<usize>,
    pub sparsity: f64,
    pub theta: Vec<f32>,
    pub scores: Vec<f32>,
    pub mask: Vec<f32>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct NormState {
    pub running_mean: Vec<f32>,
    pub running_var: Vec<f32>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Checkpoint {
    /// Run seed; with `randomizations` it fixes the whole re-randomization history.
    pub seed: u64,
    pub step: u64,
    pub randomizations: u64,
    pub params: Vec<ParamState>,
    pub norms: Vec<NormState>,
    pub streams: Vec<StreamState>,
}

impl Checkpoint {
    pub fn capture(
        net: &MaskedNetwork<f32>,
        seed: u64,
        step: u64,
        randomizations: u64,
        streams: Vec<StreamState>,
    ) -> Self {
        Self {
            seed,
            step,
            randomizations,
            params: net
                .params()
                .map(|p| ParamState {
                    shape: p.shape().to_vec(),
                    sparsity: p.sparsity,
                    theta: p.theta.data().to_vec(),
                    scores: p.scores.data().to_vec(),
                    mask: p.mask.data().to_vec(),
                })
                .collect(),
            norms: net
                .batch_norms()
                .map(|b| NormState {
                    running_mean: b.running_mean.clone(),
                    running_var: b.running_var.clone(),
                })
                .collect(),
            streams,
        }
    }

    /// Overwrites the state of `net`, which must have the same architecture.
    pub fn restore_into(&self, net: &mut MaskedNetwork<f32>) -> Result<(), CheckpointError> {
        let n_params = net.params().count();
        let n_norms = net.batch_norms().count();
        if n_params != self.params.len() || n_norms != self.norms.len() {
            return Err(CheckpointError::Mismatch(format!(
                "{} layers and {} norms stored, network has {n_params} and {n_norms}",
                self.params.len(),
                self.norms.len()
            )));
        }
        for (i, (p, s)) in net.params_mut().zip(&self.params).enumerate() {
            if p.shape() != s.shape.as_slice() {
                return Err(CheckpointError::Mismatch(format!(
                    "layer {i} has shape {:?}, stored {:?}",
                    p.shape(),
                    s.shape
                )));
            }
            let tensor = |v: &[f32]| Tensor::new(s.shape.clone(), v.to_vec()).expect("shape checked");
            p.theta = tensor(&s.theta);
            p.scores = tensor(&s.scores);
            p.mask = tensor(&s.mask);
            p.sparsity = s.sparsity;
        }
        for (i, (b, s)) in net.batch_norms_mut().zip(&self.norms).enumerate() {
            if b.running_mean.len() != s.running_mean.len() {
                return Err(CheckpointError::Mismatch(format!(
                    "norm {i} has {} channels, stored {}",
                    b.running_mean.len(),
                    s.running_mean.len()
                )));
            }
            b.running_mean.clone_from(&s.running_mean);
            b.running_var.clone_from(&s.running_var);
        }
        Ok(())
    }

    pub fn write_to(&self, w: &mut impl Write) -> Result<(), CheckpointError> {
        w.write_all(&MAGIC)?;
        w.write_u32::<LE>(VERSION)?;
        w.write_u64::<LE>(self.seed)?;
        w.write_u64::<LE>(self.step)?;
        w.write_u64::<LE>(self.randomizations)?;
        w.write_u64::<LE>(self.params.len() as u64)?;
        for p in &self.params {
            w.write_u64::<LE>(p.shape.len() as u64)?;
            for &d in &p.shape {
                w.write_u64::<LE>(d as u64)?;
            }
            w.write_f64::<LE>(p.sparsity)?;
            for v in [&p.theta, &p.scores, &p.mask] {
                write_f32s(w, v)?;
            }
        }
        w.write_u64::<LE>(self.norms.len() as u64)?;
        for n in &self.norms {
            write_f32s(w, &n.running_mean)?;
            write_f32s(w, &n.running_var)?;
        }
        w.write_u64::<LE>(self.streams.len() as u64)?;
        for s in &self.streams {
            w.write_u64::<LE>(s.seed)?;
            w.write_u64::<LE>(s.stream)?;
            w.write_u128::<LE>(s.word_pos)?;
        }
        Ok(())
    }

    pub fn read_from(r: &mut impl Read) -> Result<Self, CheckpointError> {
        let mut magic = [0u8; 8];
        r.read_exact(&mut magic)?;
        if magic != MAGIC {
            return Err(CheckpointError::Magic);
        }
        let version = r.read_u32::<LE>()?;
        if version != VERSION {
            return Err(CheckpointError::Version(version));
        }
        let seed = r.read_u64::<LE>()?;
        let step = r.read_u64::<LE>()?;
        let randomizations = r.read_u64::<LE>()?;
        let params = (0..read_len(r)?)
            .map(|_| {
                let shape = (0..read_len(r)?)
                    .map(|_| Ok(read_len(r)? as usize))
                    .collect::<Result<Vec<_>, CheckpointError>>()?;
                let sparsity = r.read_f64::<LE>()?;
                let numel: usize = shape.iter().product();
                let theta = read_f32s(r)?;
                let scores = read_f32s(r)?;
                let mask = read_f32s(r)?;
                if [&theta, &scores, &mask].iter().any(|v| v.len() != numel) {
                    return Err(CheckpointError::Format(format!("tensor length does not match shape {shape:?}")));
                }
                Ok(ParamState {
                    shape,
                    sparsity,
                    theta,
                    scores,
                    mask,
                })
            })
            .collect::<Result<Vec<_>, _>>()?;
        let norms = (0..read_len(r)?)
            .map(|_| {
                let running_mean = read_f32s(r)?;
                let running_var = read_f32s(r)?;
                if running_mean.len() != running_var.len() {
                    return Err(CheckpointError::Format("norm statistics differ in length".into()));
                }
                Ok(NormState {
                    running_mean,
                    running_var,
                })
            })
            .collect::<Result<Vec<_>, _>>()?;
        let streams = (0..read_len(r)?)
            .map(|_| {
                Ok(StreamState {
                    seed: r.read_u64::<LE>()?,
                    stream: r.read_u64::<LE>()?,
                    word_pos: r.read_u128::<LE>()?,
                })
            })
            .collect::<Result<Vec<_>, CheckpointError>>()?;
        let mut rest = [0u8; 1];
        if r.read(&mut rest)? != 0 {
            return Err(CheckpointError::Format("trailing bytes".into()));
        }
        Ok(Self {
            seed,
            step,
            randomizations,
            params,
            norms,
            streams,
        })
    }

    pub fn save(&self, path: &Path) -> Result<(), CheckpointError> {
        let mut buf = Vec::new();
        self.write_to(&mut buf)?;
        std::fs::write(path, buf)?;
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Self, CheckpointError> {
        let bytes = std::fs::read(path)?;
        Self::read_from(&mut bytes.as_slice())
    }
}

fn read_len(r: &mut impl Read) -> Result<u64, CheckpointError> {
    let n = r.read_u64::<LE>()?;
    if n > MAX_LEN {
        return Err(CheckpointError::Format(format!("length {n} out of range")));
    }
    Ok(n)
}

fn write_f32s(w: &mut impl Write, v: &[f32]) -> Result<(), CheckpointError> {
    w.write_u64::<LE>(v.len() as u64)?;
    for &x in v {
        w.write_f32::<LE>(x)?;
    }
    Ok(())
}

fn read_f32s(r: &mut impl Read) -> Result<Vec<f32>, CheckpointError> {
    let n = read_len(r)? as usize;
    let mut bytes = Vec::new();
    r.take(n as u64 * 4).read_to_end(&mut bytes)?;
    if bytes.len() != n * 4 {
        return Err(CheckpointError::Format("truncated tensor".into()));
    }
    Ok(bytes
        .chunks_exact(4)
        .map(|c| f32::from_le_bytes([c[0], c[1], c[2], c[3]]))
        .collect())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::distributions::DistKind;
    use crate::masked::{Arch, ArchSpec};
    use crate::ops::NormMode;
    use crate::rng::{stream_rng, Stream};
    use proptest::prelude::*;
    use rand::Rng;

    fn conv_net(seed: u64) -> MaskedNetwork<f32> {
        ArchSpec::new(Arch::Conv2, 0.125, [3, 8, 8], 10, DistKind::SignedKaimingConstant, 0.5)
            .build(seed)
            .unwrap()
    }

    #[test]
    fn round_trip_restores_outputs() {
        let mut net = conv_net(1);
        let x = Tensor::<f32>::from_fn(&[4, 3, 8, 8], |i| ((i * 37 % 11) as f32 - 5.0) / 5.0);
        net.forward(&x, NormMode::Train).unwrap();
        let mut rng = stream_rng(1, Stream::Randomize);
        rng.random::<u64>();
        let ckpt = Checkpoint::capture(&net, 1, 17, 2, vec![StreamState::capture(1, &rng)]);
        let mut buf = Vec::new();
        ckpt.write_to(&mut buf).unwrap();
        let back = Checkpoint::read_from(&mut buf.as_slice()).unwrap();
        assert_eq!(back, ckpt);

        let mut other = conv_net(2);
        back.restore_into(&mut other).unwrap();
        let a = net.forward(&x, NormMode::Eval).unwrap().0;
        let b = other.forward(&x, NormMode::Eval).unwrap().0;
        assert_eq!(a, b);
        let mut resumed = back.streams[0].restore();
        assert_eq!(resumed.random::<u64>(), rng.random::<u64>());
    }

    #[test]
    fn rejects_bad_input() {
        let ckpt = Checkpoint::capture(&conv_net(0), 0, 0, 0, vec![]);
        let mut buf = Vec::new();
        ckpt.write_to(&mut buf).unwrap();
        let mut bad = buf.clone();
        bad[0] = b'X';
        assert!(matches!(Checkpoint::read_from(&mut bad.as_slice()), Err(CheckpointError::Magic)));
        let mut bad = buf.clone();
        bad[8] = 9;
        assert!(matches!(Checkpoint::read_from(&mut bad.as_slice()), Err(CheckpointError::Version(9))));
        assert!(Checkpoint::read_from(&mut &buf[..buf.len() - 3]).is_err());
        let mut long = buf.clone();
        long.push(0);
        assert!(matches!(Checkpoint::read_from(&mut long.as_slice()), Err(CheckpointError::Format(_))));

        let mlp = ArchSpec::new(Arch::Mlp, 0.125, [1, 28, 28], 10, DistKind::SignedKaimingConstant, 0.5)
            .build::<f32>(0)
            .unwrap();
        let mut target = conv_net(0);
        assert!(matches!(
            Checkpoint::capture(&mlp, 0, 0, 0, vec![]).restore_into(&mut target),
            Err(CheckpointError::Mismatch(_))
        ));
    }

    #[test]
    fn file_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("run.ckpt");
        let ckpt = Checkpoint::capture(&conv_net(3), 3, 5, 1, vec![]);
        ckpt.save(&path).unwrap();
        assert_eq!(Checkpoint::load(&path).unwrap(), ckpt);
    }

    fn arb_param() -> impl Strategy<Value = ParamState> {
        (prop::collection::vec(1usize..4, 1..4), 0.0f64..1.0).prop_flat_map(|(shape, sparsity)| {
            let n: usize = shape.iter().product();
            (
                Just(shape),
                Just(sparsity),
                prop::collection::vec(any::<f32>(), n),
                prop::collection::vec(any::<f32>(), n),
                prop::collection::vec(prop::bool::ANY.prop_map(|b| b as u8 as f32), n),
            )
                .prop_map(|(shape, sparsity, theta, scores, mask)| ParamState {
                    shape,
                    sparsity,
                    theta,
                    scores,
                    mask,
                })
        })
    }

    proptest! {
        #[test]
        fn encode_decode_identity(
            seed in any::<u64>(),
            step in any::<u64>(),
            params in prop::collection::vec(arb_param(), 0..4),
            norms in prop::collection::vec(prop::collection::vec(-10f32..10.0, 1..5), 0..3),
            streams in prop::collection::vec((any::<u64>(), 0u64..8, any::<u128>()), 0..5),
        ) {
            let ckpt = Checkpoint {
                seed,
                step,
                randomizations: step / 3,
                params,
                norms: norms.into_iter().map(|m| NormState { running_var: m.iter().map(|v| v.abs()).collect(), running_mean: m }).collect(),
                streams: streams.into_iter().map(|(seed, stream, word_pos)| StreamState { seed, stream, word_pos }).collect(),
            };
            let mut buf = Vec::new();
            ckpt.write_to(&mut buf).unwrap();
            let back = Checkpoint::read_from(&mut buf.as_slice()).unwrap();
            prop_assert_eq!(back.params.len(), ckpt.params.len());
            for (a, b) in back.params.iter().zip(&ckpt.params) {
                prop_assert_eq!(&a.shape, &b.shape);
                prop_assert_eq!(a.sparsity.to_bits(), b.sparsity.to_bits());
                for (x, y) in [(&a.theta, &b.theta), (&a.scores, &b.scores), (&a.mask, &b.mask)] {
                    prop_assert!(x.iter().zip(y.iter()).all(|(p, q)| p.to_bits() == q.to_bits()));
                }
            }
            prop_assert_eq!(back.norms, ckpt.norms);
            prop_assert_eq!(back.streams, ckpt.streams);
            prop_assert_eq!((back.seed, back.step, back.randomizations), (ckpt.seed, ckpt.step, ckpt.randomizations));
        }
    }
}
