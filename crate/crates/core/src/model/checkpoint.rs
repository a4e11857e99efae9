//! Named-tensor archive.
//!
//! Layout, all integers little-endian:
//!
//! ```text
//! "RSEG" | version: u32 | entries: u32
//! per entry: name_len: u32 | name (UTF-8) | dtype: u8 | rank: u32 | dims: u32 × rank | payload
//! ```
//!
//! Payload is `numel` values of the dtype: f32 (tag 0), UTF-8 bytes (tag 1,
//! rank 1) or u64 (tag 2). The model config is stored as `key=value` text
//! under `config`, batch-norm statistics as `<layer>.running_mean` and
//! `<layer>.running_var`, and optimizer state under `opt/`.

use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::Path;

use super::config::ModelConfig;
use super::layers::{RunningStats, Weights};
use super::network::Network;
use crate::error::{Error, Result};
use crate::optim::{Lamb, LambConfig};
use crate::params::{Param, ParamKind};
use crate::tensor::{Shape, Tensor};

pub const MAGIC: &[u8; 4] = b"RSEG";
pub const VERSION: u32 = 1;

const TAG_F32: u8 = 0;
const TAG_UTF8: u8 = 1;
const TAG_U64: u8 = 2;

const RUNNING_MEAN: &str = ".running_mean";
const RUNNING_VAR: &str = ".running_var";

#[derive(Clone, Debug, PartialEq)]
enum Payload {
    F32(Vec<usize>, Vec<f32>),
    Utf8(String),
    U64(Vec<u64>),
}

/// Everything needed to resume or deploy a model.
#[derive(Clone, Debug, PartialEq)]
pub struct Checkpoint {
    pub config: ModelConfig,
    pub weights: Weights<f32>,
    pub optimizer: Option<Lamb<f32>>,
    /// Free-form run annotations, e.g. the epoch and score.
    pub meta: Vec<(String, String)>,
}

fn bad(msg: impl Into<String>) -> Error {
    Error::Checkpoint(msg.into())
}

fn lamb_config_text(c: &LambConfig) -> String {
    format!(
        "lr={}\nbeta1={}\nbeta2={}\neps={}\nweight_decay={}\n",
        c.lr, c.beta1, c.beta2, c.eps, c.weight_decay
    )
}

fn parse_lamb_config(text: &str) -> Result<LambConfig> {
    let mut c = LambConfig::default();
    for line in text.lines().filter(|l| !l.trim().is_empty()) {
        let (k, v) = line
            .split_once('=')
            .ok_or_else(|| bad(format!("bad optimizer line `{line}`")))?;
        let v: f64 = v
            .trim()
            .parse()
            .map_err(|_| bad(format!("bad optimizer value `{line}`")))?;
        match k.trim() {
            "lr" => c.lr = v,
            "beta1" => c.beta1 = v,
            "beta2" => c.beta2 = v,
            "eps" => c.eps = v,
            "weight_decay" => c.weight_decay = v,
            other => return Err(bad(format!("unknown optimizer key `{other}`"))),
        }
    }
    Ok(c)
}

fn kind_of(name: &str) -> ParamKind {
    match name.rsplit_once('.').map_or(name, |(_, last)| last) {
        "bias" => ParamKind::Bias,
        "gamma" | "beta" if !name.ends_with("attention.beta") => ParamKind::Norm,
        "alpha" | "beta" => ParamKind::Gate,
        _ => ParamKind::Weight,
    }
}

fn shape_of(dims: &[usize]) -> Result<Shape> {
    let mut d = [1usize; 4];
    if dims.len() != 4 {
        return Err(bad(format!("tensor rank {} (expected 4)", dims.len())));
    }
    d.copy_from_slice(dims);
    Ok(Shape::from(d))
}

impl Checkpoint {
    pub fn from_network(net: &Network<f32>) -> Self {
        Checkpoint {
            config: net.config().clone(),
            weights: net.weights().clone(),
            optimizer: None,
            meta: Vec::new(),
        }
    }

    pub fn with_optimizer(mut self, opt: &Lamb<f32>) -> Self {
        self.optimizer = Some(opt.clone());
        self
    }

    pub fn with_meta(mut self, key: impl Into<String>, value: impl ToString) -> Self {
        self.meta.push((key.into(), value.to_string()));
        self
    }

    pub fn meta(&self, key: &str) -> Option<&str> {
        self.meta
            .iter()
            .find(|(k, _)| k == key)
            .map(|(_, v)| v.as_str())
    }

    /// Validates the weights against the config's layout.
    pub fn into_network(self) -> Result<Network<f32>> {
        Network::from_weights(self.config, self.weights)
    }

    fn entries(&self) -> Vec<(String, Payload)> {
        let mut e = vec![(
            "config".to_string(),
            Payload::Utf8(self.config.to_kv_text()),
        )];
        if !self.meta.is_empty() {
            let text = self
                .meta
                .iter()
                .map(|(k, v)| format!("{k}={v}\n"))
                .collect();
            e.push(("meta".into(), Payload::Utf8(text)));
        }
        for p in &self.weights.params {
            e.push((
                p.name.clone(),
                Payload::F32(p.value.shape().dims().to_vec(), p.value.data().to_vec()),
            ));
        }
        for r in &self.weights.running {
            for (suffix, t) in [(RUNNING_MEAN, &r.mean), (RUNNING_VAR, &r.var)] {
                e.push((
                    format!("{}{suffix}", r.name),
                    Payload::F32(t.shape().dims().to_vec(), t.data().to_vec()),
                ));
            }
        }
        if let Some(opt) = &self.optimizer {
            e.push((
                "opt/config".into(),
                Payload::Utf8(lamb_config_text(&opt.config)),
            ));
            e.push(("opt/step".into(), Payload::U64(vec![opt.step_count()])));
            let (m, v) = opt.moments();
            for (p, (m, v)) in self.weights.params.iter().zip(m.iter().zip(v)) {
                e.push((
                    format!("opt/m/{}", p.name),
                    Payload::F32(vec![m.len()], m.clone()),
                ));
                e.push((
                    format!("opt/v/{}", p.name),
                    Payload::F32(vec![v.len()], v.clone()),
                ));
            }
        }
        e
    }

    pub fn write_to(&self, mut w: impl Write) -> std::io::Result<()> {
        let entries = self.entries();
        w.write_all(MAGIC)?;
        w.write_all(&VERSION.to_le_bytes())?;
        w.write_all(&(entries.len() as u32).to_le_bytes())?;
        for (name, payload) in &entries {
            w.write_all(&(name.len() as u32).to_le_bytes())?;
            w.write_all(name.as_bytes())?;
            let (tag, dims): (u8, Vec<usize>) = match payload {
                Payload::F32(dims, _) => (TAG_F32, dims.clone()),
                Payload::Utf8(s) => (TAG_UTF8, vec![s.len()]),
                Payload::U64(v) => (TAG_U64, vec![v.len()]),
            };
            w.write_all(&[tag])?;
            w.write_all(&(dims.len() as u32).to_le_bytes())?;
            for d in dims {
                w.write_all(&(d as u32).to_le_bytes())?;
            }
            match payload {
                Payload::F32(_, data) => {
                    for v in data {
                        w.write_all(&v.to_le_bytes())?;
                    }
                }
                Payload::Utf8(s) => w.write_all(s.as_bytes())?,
                Payload::U64(v) => {
                    for x in v {
                        w.write_all(&x.to_le_bytes())?;
                    }
                }
            }
        }
        w.flush()
    }

    pub fn read_from(r: impl Read) -> Result<Self> {
        let mut r = Reader(r);
        let mut magic = [0u8; 4];
        r.bytes(&mut magic)?;
        if &magic != MAGIC {
            return Err(bad("not a checkpoint (bad magic)"));
        }
        let version = r.u32()?;
        if version != VERSION {
            return Err(bad(format!("unsupported checkpoint version {version}")));
        }
        let count = r.u32()?;
        let mut entries = Vec::with_capacity(count as usize);
        for _ in 0..count {
            let len = r.u32()? as usize;
            let mut name = vec![0u8; len];
            r.bytes(&mut name)?;
            let name = String::from_utf8(name).map_err(|_| bad("entry name is not UTF-8"))?;
            let mut tag = [0u8];
            r.bytes(&mut tag)?;
            let rank = r.u32()? as usize;
            let dims = (0..rank)
                .map(|_| r.u32().map(|d| d as usize))
                .collect::<Result<Vec<_>>>()?;
            let numel: usize = dims.iter().product();
            let payload = match tag[0] {
                TAG_F32 => {
                    let mut buf = vec![0u8; numel * 4];
                    r.bytes(&mut buf)?;
                    let data = buf
                        .chunks_exact(4)
                        .map(|c| f32::from_le_bytes(c.try_into().unwrap()))
                        .collect();
                    Payload::F32(dims, data)
                }
                TAG_UTF8 => {
                    let mut buf = vec![0u8; numel];
                    r.bytes(&mut buf)?;
                    Payload::Utf8(
                        String::from_utf8(buf)
                            .map_err(|_| bad(format!("entry `{name}` is not UTF-8")))?,
                    )
                }
                TAG_U64 => {
                    let mut buf = vec![0u8; numel * 8];
                    r.bytes(&mut buf)?;
                    Payload::U64(
                        buf.chunks_exact(8)
                            .map(|c| u64::from_le_bytes(c.try_into().unwrap()))
                            .collect(),
                    )
                }
                t => return Err(bad(format!("entry `{name}` has unknown dtype tag {t}"))),
            };
            entries.push((name, payload));
        }
        Self::from_entries(entries)
    }

    fn from_entries(entries: Vec<(String, Payload)>) -> Result<Self> {
        let mut config = None;
        let mut meta = Vec::new();
        let mut params = Vec::new();
        let mut running: Vec<RunningStats<f32>> = Vec::new();
        let mut opt_config = None;
        let mut opt_step = None;
        let mut m = Vec::new();
        let mut v = Vec::new();

        for (name, payload) in entries {
            match (name.as_str(), payload) {
                ("config", Payload::Utf8(text)) => config = Some(ModelConfig::from_kv_text(&text)?),
                ("meta", Payload::Utf8(text)) => {
                    for line in text.lines() {
                        if let Some((k, val)) = line.split_once('=') {
                            meta.push((k.to_string(), val.to_string()));
                        }
                    }
                }
                ("opt/config", Payload::Utf8(text)) => opt_config = Some(parse_lamb_config(&text)?),
                ("opt/step", Payload::U64(s)) if s.len() == 1 => opt_step = Some(s[0]),
                (n, Payload::F32(_, data)) if n.starts_with("opt/m/") => m.push(data),
                (n, Payload::F32(_, data)) if n.starts_with("opt/v/") => v.push(data),
                (n, Payload::F32(dims, data)) => {
                    let t = Tensor::from_vec(shape_of(&dims)?, data)?;
                    if let Some(layer) = n.strip_suffix(RUNNING_MEAN) {
                        running.push(RunningStats {
                            name: layer.to_string(),
                            mean: t,
                            var: Tensor::zeros(Shape::SCALAR),
                        });
                    } else if let Some(layer) = n.strip_suffix(RUNNING_VAR) {
                        let slot =
                            running
                                .last_mut()
                                .filter(|r| r.name == layer)
                                .ok_or_else(|| {
                                    bad(format!("`{n}` without a preceding running mean"))
                                })?;
                        slot.var = t;
                    } else {
                        params.push(Param::new(n, kind_of(n), t));
                    }
                }
                (n, _) => return Err(bad(format!("unexpected entry `{n}`"))),
            }
        }

        let config = config.ok_or_else(|| bad("missing `config` entry"))?;
        let weights = Weights { params, running };
        let optimizer = match (opt_config, opt_step) {
            (Some(c), Some(step)) => {
                if m.len() != weights.params.len() || v.len() != weights.params.len() {
                    return Err(bad("optimizer moments do not cover every parameter"));
                }
                Some(Lamb::from_state(c, step, m, v)?)
            }
            (None, None) => None,
            _ => return Err(bad("incomplete optimizer state")),
        };
        Ok(Checkpoint {
            config,
            weights,
            optimizer,
            meta,
        })
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        let file = File::create(path).map_err(|e| Error::io(path, e))?;
        self.write_to(BufWriter::new(file))
            .map_err(|e| Error::io(path, e))
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let file = File::open(path).map_err(|e| Error::io(path, e))?;
        Self::read_from(BufReader::new(file))
    }
}

struct Reader<R>(R);

impl<R: Read> Reader<R> {
    fn bytes(&mut self, buf: &mut [u8]) -> Result<()> {
        self.0
            .read_exact(buf)
            .map_err(|_| bad("truncated checkpoint"))
    }

    fn u32(&mut self) -> Result<u32> {
        let mut b = [0u8; 4];
        self.bytes(&mut b)?;
        Ok(u32::from_le_bytes(b))
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::testutil::random_tensor;

    fn round_trip(c: &Checkpoint) -> Checkpoint {
        let mut buf = Vec::new();
        c.write_to(&mut buf).unwrap();
        Checkpoint::read_from(buf.as_slice()).unwrap()
    }

    #[test]
    fn header_layout() {
        let net = Network::<f32>::new(ModelConfig::reduced(), 1).unwrap();
        let mut buf = Vec::new();
        Checkpoint::from_network(&net).write_to(&mut buf).unwrap();
        assert_eq!(&buf[..4], b"RSEG");
        assert_eq!(u32::from_le_bytes(buf[4..8].try_into().unwrap()), VERSION);
        let entries = 1 + net.weights().params.len() + 2 * net.weights().running.len();
        assert_eq!(
            u32::from_le_bytes(buf[8..12].try_into().unwrap()) as usize,
            entries
        );
        // First entry: "config", UTF-8.
        assert_eq!(u32::from_le_bytes(buf[12..16].try_into().unwrap()), 6);
        assert_eq!(&buf[16..22], b"config");
        assert_eq!(buf[22], TAG_UTF8);
    }

    #[test]
    fn network_round_trip_is_exact() {
        let net = Network::<f32>::new(ModelConfig::reduced(), 2).unwrap();
        let back = round_trip(&Checkpoint::from_network(&net).with_meta("epoch", 3))
            .into_network()
            .unwrap();
        assert_eq!(back.weights(), net.weights());
        let x = random_tensor([1, 3, 16, 16], 1);
        assert_eq!(back.predict(&x).unwrap(), net.predict(&x).unwrap());
    }

    #[test]
    fn optimizer_and_meta_round_trip() {
        let net = Network::<f32>::new(ModelConfig::reduced(), 2).unwrap();
        let mut params = net.weights().params.clone();
        let mut opt = Lamb::new(
            LambConfig {
                lr: 0.01,
                ..Default::default()
            },
            &params,
        );
        let grads: Vec<_> = params.iter().map(|p| p.value.map(|v| v + 0.5)).collect();
        opt.step(&mut params, &grads).unwrap();
        let ck = Checkpoint::from_network(&net)
            .with_optimizer(&opt)
            .with_meta("dsc", 0.5);
        let back = round_trip(&ck);
        assert_eq!(back, ck);
        assert_eq!(back.meta("dsc"), Some("0.5"));
    }

    #[test]
    fn rejects_corrupt_input() {
        assert!(matches!(
            Checkpoint::read_from(&b"NOPE"[..]),
            Err(Error::Checkpoint(_))
        ));
        let net = Network::<f32>::new(ModelConfig::reduced(), 2).unwrap();
        let mut buf = Vec::new();
        Checkpoint::from_network(&net).write_to(&mut buf).unwrap();
        buf.truncate(buf.len() - 3);
        assert!(matches!(
            Checkpoint::read_from(buf.as_slice()),
            Err(Error::Checkpoint(_))
        ));
    }

    #[test]
    fn config_mismatch_lists_shapes() {
        let net = Network::<f32>::new(ModelConfig::reduced(), 2).unwrap();
        let mut ck = Checkpoint::from_network(&net);
        ck.config.decoder_widths = vec![16, 16];
        match round_trip(&ck).into_network() {
            Err(Error::CheckpointMismatch { expected, found }) => {
                assert!(!expected.is_empty() && !found.is_empty());
            }
            other => panic!("{:?}", other.map(|_| ())),
        }
    }
}
