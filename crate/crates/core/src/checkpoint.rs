//! Versioned binary containers for model/agent checkpoints and replay-buffer
//! dumps. Everything is written big-endian; tensors as a dimension list
//! followed by raw float64 data. The exact layout is documented in the
//! repository README.

use std::io::{Read, Write};
use std::path::Path;

use crate::agent::{Agent, AgentConfig, ReplayBuffer, Transition};
use crate::error::{Error, Result};
use crate::nn::{Activation, Layer, LayerKind, Loss, Network};
use crate::tensor::Tensor;

pub const NETWORK_MAGIC: &[u8; 8] = b"ALRLNET1";
pub const AGENT_MAGIC: &[u8; 8] = b"ALRLAGT1";
pub const BUFFER_MAGIC: &[u8; 8] = b"ALRLBUF1";

/// Training-progress record stored next to the agent networks.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CheckpointMeta {
    pub training_step: u64,
    pub tau: f64,
    pub lr: f64,
}

#[derive(Debug)]
pub struct AgentCheckpoint {
    pub config: AgentConfig,
    pub primary: Network,
    pub target: Network,
    pub meta: CheckpointMeta,
}

impl AgentCheckpoint {
    pub fn into_agent(self) -> Result<Agent> {
        Agent::from_parts(self.config, self.primary, self.target)
    }
}

// ---- primitive writers/readers ----

fn write_u8(w: &mut impl Write, v: u8) -> Result<()> {
    w.write_all(&[v])?;
    Ok(())
}

fn write_u32(w: &mut impl Write, v: u32) -> Result<()> {
    w.write_all(&v.to_be_bytes())?;
    Ok(())
}

fn write_u64(w: &mut impl Write, v: u64) -> Result<()> {
    w.write_all(&v.to_be_bytes())?;
    Ok(())
}

fn write_f64(w: &mut impl Write, v: f64) -> Result<()> {
    w.write_all(&v.to_be_bytes())?;
    Ok(())
}

fn read_u8(r: &mut impl Read) -> Result<u8> {
    let mut b = [0u8; 1];
    r.read_exact(&mut b)?;
    Ok(b[0])
}

fn read_u32(r: &mut impl Read) -> Result<u32> {
    let mut b = [0u8; 4];
    r.read_exact(&mut b)?;
    Ok(u32::from_be_bytes(b))
}

fn read_u64(r: &mut impl Read) -> Result<u64> {
    let mut b = [0u8; 8];
    r.read_exact(&mut b)?;
    Ok(u64::from_be_bytes(b))
}

fn read_f64(r: &mut impl Read) -> Result<f64> {
    let mut b = [0u8; 8];
    r.read_exact(&mut b)?;
    Ok(f64::from_be_bytes(b))
}

fn write_tensor(w: &mut impl Write, t: &Tensor) -> Result<()> {
    write_u32(w, t.shape().len() as u32)?;
    for d in t.shape() {
        write_u32(w, *d as u32)?;
    }
    for v in t.data() {
        write_f64(w, *v)?;
    }
    Ok(())
}

fn read_tensor(r: &mut impl Read) -> Result<Tensor> {
    let ndim = read_u32(r)? as usize;
    if ndim > 8 {
        return Err(Error::Config(format!("implausible tensor rank {ndim}")));
    }
    let mut shape = Vec::with_capacity(ndim);
    for _ in 0..ndim {
        shape.push(read_u32(r)? as usize);
    }
    let len: usize = shape.iter().product();
    let mut data = Vec::with_capacity(len);
    for _ in 0..len {
        data.push(read_f64(r)?);
    }
    Tensor::new(shape, data)
}

fn write_f64_slice(w: &mut impl Write, values: &[f64]) -> Result<()> {
    write_u32(w, values.len() as u32)?;
    for v in values {
        write_f64(w, *v)?;
    }
    Ok(())
}

fn read_f64_vec(r: &mut impl Read) -> Result<Vec<f64>> {
    let len = read_u32(r)? as usize;
    let mut out = Vec::with_capacity(len);
    for _ in 0..len {
        out.push(read_f64(r)?);
    }
    Ok(out)
}

// ---- network blob ----

fn activation_tag(a: Activation) -> (u8, Option<f64>) {
    match a {
        Activation::None => (0, None),
        Activation::Relu => (1, None),
        Activation::LeakyRelu(s) => (2, Some(s)),
        Activation::Softmax => (3, None),
    }
}

fn write_layer(w: &mut impl Write, layer: &Layer) -> Result<()> {
    let (kind_tag, hyper): (u8, Vec<u32>) = match &layer.kind {
        LayerKind::Dense { in_dim, out_dim } => (0, vec![*in_dim as u32, *out_dim as u32]),
        LayerKind::Conv2d { in_channels, filters, kernel, stride } => {
            (1, vec![*in_channels as u32, *filters as u32, *kernel as u32, *stride as u32])
        }
        LayerKind::BatchNorm { dim, .. } => (2, vec![*dim as u32]),
        LayerKind::Flatten => (3, vec![]),
    };
    write_u8(w, kind_tag)?;
    for h in hyper {
        write_u32(w, h)?;
    }
    let (act_tag, slope) = activation_tag(layer.activation);
    write_u8(w, act_tag)?;
    if let Some(s) = slope {
        write_f64(w, s)?;
    }
    write_f64(w, layer.l2)?;
    write_tensor(w, &layer.weight)?;
    write_tensor(w, &layer.bias)?;
    if let LayerKind::BatchNorm { momentum, eps, running_mean, running_var, .. } = &layer.kind {
        write_f64(w, *momentum)?;
        write_f64(w, *eps)?;
        write_f64_slice(w, running_mean)?;
        write_f64_slice(w, running_var)?;
    }
    Ok(())
}

fn read_layer(r: &mut impl Read) -> Result<Layer> {
    let kind_tag = read_u8(r)?;
    let mut hyper = Vec::new();
    let n_hyper = match kind_tag {
        0 => 2,
        1 => 4,
        2 => 1,
        3 => 0,
        other => return Err(Error::Config(format!("unknown layer tag {other}"))),
    };
    for _ in 0..n_hyper {
        hyper.push(read_u32(r)? as usize);
    }
    let act_tag = read_u8(r)?;
    let activation = match act_tag {
        0 => Activation::None,
        1 => Activation::Relu,
        2 => Activation::LeakyRelu(read_f64(r)?),
        3 => Activation::Softmax,
        other => return Err(Error::Config(format!("unknown activation tag {other}"))),
    };
    let l2 = read_f64(r)?;
    let weight = read_tensor(r)?;
    let bias = read_tensor(r)?;
    let kind = match kind_tag {
        0 => LayerKind::Dense { in_dim: hyper[0], out_dim: hyper[1] },
        1 => LayerKind::Conv2d {
            in_channels: hyper[0],
            filters: hyper[1],
            kernel: hyper[2],
            stride: hyper[3],
        },
        2 => {
            let momentum = read_f64(r)?;
            let eps = read_f64(r)?;
            let running_mean = read_f64_vec(r)?;
            let running_var = read_f64_vec(r)?;
            LayerKind::BatchNorm { dim: hyper[0], momentum, eps, running_mean, running_var }
        }
        _ => LayerKind::Flatten,
    };
    Ok(Layer { kind, weight, bias, activation, l2 })
}

pub fn write_network(w: &mut impl Write, net: &Network) -> Result<()> {
    w.write_all(NETWORK_MAGIC)?;
    write_u8(w, match net.loss {
        Loss::Mse => 0,
        Loss::CrossEntropy => 1,
    })?;
    write_u32(w, net.layers.len() as u32)?;
    for layer in &net.layers {
        write_layer(w, layer)?;
    }
    Ok(())
}

pub fn read_network(r: &mut impl Read) -> Result<Network> {
    let mut magic = [0u8; 8];
    r.read_exact(&mut magic)?;
    if &magic != NETWORK_MAGIC {
        return Err(Error::Config("not a network checkpoint".into()));
    }
    let loss = match read_u8(r)? {
        0 => Loss::Mse,
        1 => Loss::CrossEntropy,
        other => return Err(Error::Config(format!("unknown loss tag {other}"))),
    };
    let n_layers = read_u32(r)? as usize;
    let mut layers = Vec::with_capacity(n_layers);
    for _ in 0..n_layers {
        layers.push(read_layer(r)?);
    }
    Ok(Network::new(layers, loss))
}

pub fn save_network(path: &Path, net: &Network) -> Result<()> {
    let mut out = Vec::new();
    write_network(&mut out, net)?;
    std::fs::write(path, out)?;
    Ok(())
}

pub fn load_network(path: &Path) -> Result<Network> {
    let bytes = std::fs::read(path)?;
    read_network(&mut bytes.as_slice())
}

// ---- agent checkpoint ----

pub fn write_agent(w: &mut impl Write, agent: &Agent, meta: &CheckpointMeta) -> Result<()> {
    w.write_all(AGENT_MAGIC)?;
    write_u64(w, meta.training_step)?;
    write_f64(w, meta.tau)?;
    write_f64(w, meta.lr)?;
    let c = agent.config();
    write_u32(w, c.state_dim as u32)?;
    write_u32(w, c.action_space as u32)?;
    write_u32(w, c.hidden.0 as u32)?;
    write_u32(w, c.hidden.1 as u32)?;
    write_f64(w, c.l2)?;
    write_f64(w, c.leaky_slope)?;
    write_u8(w, c.batchnorm as u8)?;
    write_f64(w, c.gamma)?;
    write_u32(w, c.target_sync as u32)?;
    write_u32(w, c.batch_size as u32)?;
    write_u32(w, c.memory_capacity as u32)?;
    write_network(w, &agent.primary)?;
    write_network(w, &agent.target)?;
    Ok(())
}

pub fn read_agent(r: &mut impl Read) -> Result<AgentCheckpoint> {
    let mut magic = [0u8; 8];
    r.read_exact(&mut magic)?;
    if &magic != AGENT_MAGIC {
        return Err(Error::Config("not an agent checkpoint".into()));
    }
    let meta = CheckpointMeta {
        training_step: read_u64(r)?,
        tau: read_f64(r)?,
        lr: read_f64(r)?,
    };
    let config = AgentConfig {
        state_dim: read_u32(r)? as usize,
        action_space: read_u32(r)? as usize,
        hidden: (read_u32(r)? as usize, read_u32(r)? as usize),
        l2: read_f64(r)?,
        leaky_slope: read_f64(r)?,
        batchnorm: read_u8(r)? != 0,
        gamma: read_f64(r)?,
        target_sync: read_u32(r)? as usize,
        batch_size: read_u32(r)? as usize,
        memory_capacity: read_u32(r)? as usize,
    };
    let primary = read_network(r)?;
    let target = read_network(r)?;
    Ok(AgentCheckpoint { config, primary, target, meta })
}

pub fn save_agent(path: &Path, agent: &Agent, meta: &CheckpointMeta) -> Result<()> {
    let mut out = Vec::new();
    write_agent(&mut out, agent, meta)?;
    std::fs::write(path, out)?;
    Ok(())
}

pub fn load_agent(path: &Path) -> Result<AgentCheckpoint> {
    let bytes = std::fs::read(path)?;
    read_agent(&mut bytes.as_slice())
}

// ---- replay buffer dump ----

pub fn write_buffer(w: &mut impl Write, buffer: &ReplayBuffer) -> Result<()> {
    w.write_all(BUFFER_MAGIC)?;
    write_u32(w, buffer.capacity() as u32)?;
    write_u32(w, buffer.len() as u32)?;
    for t in buffer.iter() {
        write_f64_slice(w, &t.state)?;
        write_u32(w, t.action as u32)?;
        write_f64(w, t.reward)?;
        write_f64_slice(w, &t.next_state)?;
        write_u8(w, t.done as u8)?;
    }
    Ok(())
}

pub fn read_buffer(r: &mut impl Read) -> Result<ReplayBuffer> {
    let mut magic = [0u8; 8];
    r.read_exact(&mut magic)?;
    if &magic != BUFFER_MAGIC {
        return Err(Error::Config("not a replay buffer dump".into()));
    }
    let capacity = read_u32(r)? as usize;
    let len = read_u32(r)? as usize;
    let mut buffer = ReplayBuffer::new(capacity);
    for _ in 0..len {
        buffer.push(Transition {
            state: read_f64_vec(r)?,
            action: read_u32(r)? as usize,
            reward: read_f64(r)?,
            next_state: read_f64_vec(r)?,
            done: read_u8(r)? != 0,
        });
    }
    Ok(buffer)
}

pub fn save_buffer(path: &Path, buffer: &ReplayBuffer) -> Result<()> {
    let mut out = Vec::new();
    write_buffer(&mut out, buffer)?;
    std::fs::write(path, out)?;
    Ok(())
}

pub fn load_buffer(path: &Path) -> Result<ReplayBuffer> {
    let bytes = std::fs::read(path)?;
    read_buffer(&mut bytes.as_slice())
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn network_roundtrip_bit_exact() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let layers = vec![
            Layer::conv2d(1, 2, 3, 2, Activation::Relu, 0.0, &mut rng).unwrap(),
            Layer::flatten(),
            Layer::dense(8, 4, Activation::LeakyRelu(0.3), 0.001, &mut rng).unwrap(),
            Layer::batchnorm(4),
            Layer::dense(4, 2, Activation::Softmax, 0.0, &mut rng).unwrap(),
        ];
        let net = Network::new(layers, Loss::CrossEntropy);
        let mut blob = Vec::new();
        write_network(&mut blob, &net).unwrap();
        let restored = read_network(&mut blob.as_slice()).unwrap();
        assert_eq!(net.loss, restored.loss);
        assert_eq!(net.layers.len(), restored.layers.len());
        for (a, b) in net.layers.iter().zip(&restored.layers) {
            assert_eq!(a.weight, b.weight);
            assert_eq!(a.bias, b.bias);
            assert_eq!(a.activation, b.activation);
            assert_eq!(a.l2, b.l2);
        }
        // serialized form of the restored net is byte-identical
        let mut blob2 = Vec::new();
        write_network(&mut blob2, &restored).unwrap();
        assert_eq!(blob, blob2);
    }

    #[test]
    fn agent_roundtrip_with_meta() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let agent = Agent::new(AgentConfig::exp2(), &mut rng).unwrap();
        let meta = CheckpointMeta { training_step: 4242, tau: 0.35, lr: 0.0005 };
        let mut blob = Vec::new();
        write_agent(&mut blob, &agent, &meta).unwrap();
        let restored = read_agent(&mut blob.as_slice()).unwrap();
        assert_eq!(restored.meta, meta);
        assert_eq!(restored.config.hidden, (48, 24));
        assert_eq!(restored.config.state_dim, 35);
        let restored_agent = restored.into_agent().unwrap();
        let state = vec![0.1; 35];
        assert_eq!(
            agent.q_values(&state).unwrap(),
            restored_agent.q_values(&state).unwrap()
        );
    }

    #[test]
    fn buffer_roundtrip() {
        let mut buffer = ReplayBuffer::new(16);
        for i in 0..5 {
            buffer.push(Transition {
                state: vec![i as f64, 0.5],
                action: i % 3,
                reward: i as f64 * 0.1 - 0.2,
                next_state: vec![0.5, i as f64],
                done: i == 4,
            });
        }
        let mut blob = Vec::new();
        write_buffer(&mut blob, &buffer).unwrap();
        let restored = read_buffer(&mut blob.as_slice()).unwrap();
        assert_eq!(restored.len(), 5);
        assert_eq!(restored.capacity(), 16);
        for i in 0..5 {
            assert_eq!(restored.get(i), buffer.get(i));
        }
    }

    #[test]
    fn wrong_magic_rejected() {
        let blob = b"NOTMAGIC rest".to_vec();
        assert!(read_network(&mut blob.as_slice()).is_err());
        assert!(read_agent(&mut blob.as_slice()).is_err());
        assert!(read_buffer(&mut blob.as_slice()).is_err());
    }
}
