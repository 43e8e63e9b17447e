//! Checkpoint container shared by every persisted model.
//!
//! Layout: a UTF-8 header terminated by a line `data`, then little-endian
//! `f64` values.
//!
//! ```text
//! softfin-checkpoint 1
//! meta <key> <value...>
//! net <name> <n_layers>
//! <layer spec>            (n_layers lines, e.g. "conv1d 3 16 5 1")
//! block <name> <count>
//! data
//! <params of every net in layer order, then every block>
//! ```

use std::collections::BTreeMap;
use std::fs;
use std::path::Path;

use super::layer::{Layer, LayerKind};
use super::network::Network;
use super::scalar::Scalar;
use super::tensor::Tensor;
use super::NnError;

const MAGIC: &str = "softfin-checkpoint";
const VERSION: u32 = 1;

#[derive(Debug, Clone, Default, PartialEq)]
pub struct Checkpoint {
    pub meta: BTreeMap<String, String>,
    pub nets: Vec<(String, Network<f64>)>,
    pub blocks: Vec<(String, Vec<f64>)>,
}

impl Checkpoint {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn with_meta(mut self, key: &str, value: impl ToString) -> Self {
        self.meta.insert(key.to_string(), value.to_string());
        self
    }

    pub fn with_net<T: Scalar>(mut self, name: &str, net: &Network<T>) -> Self {
        self.nets.push((name.to_string(), net.cast()));
        self
    }

    pub fn with_block(mut self, name: &str, values: Vec<f64>) -> Self {
        self.blocks.push((name.to_string(), values));
        self
    }

    pub fn net(&self, name: &str) -> Result<&Network<f64>, NnError> {
        self.nets
            .iter()
            .find(|(n, _)| n == name)
            .map(|(_, net)| net)
            .ok_or_else(|| NnError::Checkpoint(format!("no network named '{name}'")))
    }

    pub fn block(&self, name: &str) -> Result<&[f64], NnError> {
        self.blocks
            .iter()
            .find(|(n, _)| n == name)
            .map(|(_, b)| b.as_slice())
            .ok_or_else(|| NnError::Checkpoint(format!("no block named '{name}'")))
    }

    pub fn meta(&self, key: &str) -> Result<&str, NnError> {
        self.meta
            .get(key)
            .map(String::as_str)
            .ok_or_else(|| NnError::Checkpoint(format!("no metadata key '{key}'")))
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        let mut header = format!("{MAGIC} {VERSION}\n");
        for (k, v) in &self.meta {
            header.push_str(&format!("meta {k} {v}\n"));
        }
        for (name, net) in &self.nets {
            header.push_str(&format!("net {name} {}\n", net.layers().len()));
            for l in net.layers() {
                header.push_str(&l.kind().to_spec());
                header.push('\n');
            }
        }
        for (name, b) in &self.blocks {
            header.push_str(&format!("block {name} {}\n", b.len()));
        }
        header.push_str("data\n");
        let mut bytes = header.into_bytes();
        for (_, net) in &self.nets {
            for p in net.params() {
                for v in p.data() {
                    bytes.extend_from_slice(&v.to_le_bytes());
                }
            }
        }
        for (_, b) in &self.blocks {
            for v in b {
                bytes.extend_from_slice(&v.to_le_bytes());
            }
        }
        bytes
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self, NnError> {
        let bad = |m: String| NnError::Checkpoint(m);
        // Header ends at the first "\ndata\n".
        let marker = b"\ndata\n";
        let end = bytes
            .windows(marker.len())
            .position(|w| w == marker)
            .ok_or_else(|| bad("missing 'data' header terminator".into()))?;
        let header = std::str::from_utf8(&bytes[..end])
            .map_err(|e| bad(format!("header is not UTF-8: {e}")))?;
        let mut payload = &bytes[end + marker.len()..];
        let mut lines = header.lines();
        let first = lines.next().unwrap_or_default();
        let mut magic = first.split_whitespace();
        if magic.next() != Some(MAGIC) {
            return Err(bad(format!("not a checkpoint (first line '{first}')")));
        }
        let version: u32 = magic
            .next()
            .and_then(|v| v.parse().ok())
            .ok_or_else(|| bad("missing format version".into()))?;
        if version != VERSION {
            return Err(bad(format!("unsupported format version {version}")));
        }

        let mut ckpt = Checkpoint::new();
        let mut net_specs: Vec<(String, Vec<LayerKind>)> = Vec::new();
        let mut block_specs: Vec<(String, usize)> = Vec::new();
        while let Some(line) = lines.next() {
            let mut toks = line.splitn(3, ' ');
            match toks.next() {
                Some("meta") => {
                    let k = toks.next().ok_or_else(|| bad(format!("bad meta line '{line}'")))?;
                    ckpt.meta
                        .insert(k.to_string(), toks.next().unwrap_or("").to_string());
                }
                Some("net") => {
                    let name = toks.next().ok_or_else(|| bad(format!("bad net line '{line}'")))?;
                    let n: usize = toks
                        .next()
                        .and_then(|v| v.trim().parse().ok())
                        .ok_or_else(|| bad(format!("bad layer count in '{line}'")))?;
                    let mut kinds = Vec::with_capacity(n);
                    for _ in 0..n {
                        let spec = lines
                            .next()
                            .ok_or_else(|| bad(format!("net '{name}' truncated")))?;
                        kinds.push(LayerKind::parse_spec(spec).map_err(bad)?);
                    }
                    net_specs.push((name.to_string(), kinds));
                }
                Some("block") => {
                    let name = toks.next().ok_or_else(|| bad(format!("bad block line '{line}'")))?;
                    let n: usize = toks
                        .next()
                        .and_then(|v| v.trim().parse().ok())
                        .ok_or_else(|| bad(format!("bad block size in '{line}'")))?;
                    block_specs.push((name.to_string(), n));
                }
                _ => return Err(bad(format!("unrecognised header line '{line}'"))),
            }
        }

        let mut take = |n: usize, what: &str| -> Result<Vec<f64>, NnError> {
            if payload.len() < 8 * n {
                return Err(NnError::Checkpoint(format!("payload truncated in {what}")));
            }
            let (head, rest) = payload.split_at(8 * n);
            payload = rest;
            Ok(head
                .chunks_exact(8)
                .map(|c| f64::from_le_bytes(c.try_into().unwrap()))
                .collect())
        };
        for (name, kinds) in net_specs {
            let mut layers = Vec::with_capacity(kinds.len());
            for kind in kinds {
                let params = kind
                    .param_shapes()
                    .iter()
                    .map(|s| {
                        let n = s.iter().product();
                        Tensor::from_vec(s, take(n, &name)?)
                    })
                    .collect::<Result<Vec<_>, _>>()?;
                layers.push(Layer::from_params(kind, params)?);
            }
            ckpt.nets.push((name, Network::from_layers(layers)));
        }
        for (name, n) in block_specs {
            let values = take(n, &name)?;
            ckpt.blocks.push((name, values));
        }
        if !payload.is_empty() {
            return Err(bad(format!("{} trailing bytes after payload", payload.len())));
        }
        Ok(ckpt)
    }

    pub fn save(&self, path: &Path) -> Result<(), NnError> {
        fs::write(path, self.to_bytes()).map_err(|e| NnError::Io {
            path: path.display().to_string(),
            source: e,
        })
    }

    pub fn load(path: &Path) -> Result<Self, NnError> {
        let bytes = fs::read(path).map_err(|e| NnError::Io {
            path: path.display().to_string(),
            source: e,
        })?;
        Self::from_bytes(&bytes)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::nn::Activation;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn round_trip_is_bitwise() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let net: Network<f64> = Network::new(
            &[
                LayerKind::Lstm { inputs: 2, hidden: 3 },
                LayerKind::Linear { inputs: 3, outputs: 2 },
                LayerKind::Activation(Activation::Tanh),
                LayerKind::Dropout { p: 0.2 },
            ],
            &mut rng,
        )
        .unwrap();
        let ckpt = Checkpoint::new()
            .with_meta("kind", "test value with spaces")
            .with_net("a", &net)
            .with_block("norm", vec![0.1, -2.5e-300, f64::MAX]);
        let back = Checkpoint::from_bytes(&ckpt.to_bytes()).unwrap();
        assert_eq!(back, ckpt);
        assert_eq!(back.meta("kind").unwrap(), "test value with spaces");
    }

    #[test]
    fn truncated_payload_is_rejected() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let net: Network<f64> =
            Network::new(&[LayerKind::Linear { inputs: 3, outputs: 2 }], &mut rng).unwrap();
        let mut bytes = Checkpoint::new().with_net("a", &net).to_bytes();
        bytes.truncate(bytes.len() - 3);
        assert!(matches!(Checkpoint::from_bytes(&bytes), Err(NnError::Checkpoint(_))));
    }
}
