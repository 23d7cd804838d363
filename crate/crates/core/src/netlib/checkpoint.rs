//! Parameter files.
//!
//! Layout:
//!
//! ```text
//! TEMPORL-PARAMS 1\n
//! {"kind": "...", "meta": {...}, "shapes": [[r, c], ...]}\n
//! u64 LE count, count × f64 LE    (one record per tensor)
//! ```
//!
//! `meta` carries whatever describes the architecture (an [`MlpSpec`], a flow
//! config, ...); loaders compare it against what they expect.
//!
//! [`MlpSpec`]: super::MlpSpec

use std::fs;
use std::io::{BufRead, Read};
use std::path::Path;

use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};
use serde_json::Value;

use super::mlp::{Linear, Mlp, MlpSpec, Params};
use crate::diffmath::Matrix;
use crate::error::{Error, Result};

pub const MAGIC: &str = "TEMPORL-PARAMS 1";

#[derive(Clone, Debug, PartialEq)]
pub struct ParamFile {
    pub kind: String,
    pub meta: Value,
    pub tensors: Vec<Matrix>,
}

#[derive(Serialize, Deserialize)]
struct Header {
    kind: String,
    meta: Value,
    shapes: Vec<(usize, usize)>,
}

impl ParamFile {
    pub fn new<M: Serialize>(kind: &str, meta: &M, tensors: Vec<Matrix>) -> Result<Self> {
        let meta = serde_json::to_value(meta).map_err(|e| Error::Invalid(e.to_string()))?;
        Ok(ParamFile {
            kind: kind.to_string(),
            meta,
            tensors,
        })
    }

    pub fn encode(&self) -> Vec<u8> {
        let header = Header {
            kind: self.kind.clone(),
            meta: self.meta.clone(),
            shapes: self.tensors.iter().map(Matrix::shape).collect(),
        };
        let mut out = Vec::new();
        out.extend_from_slice(MAGIC.as_bytes());
        out.push(b'\n');
        out.extend_from_slice(
            serde_json::to_string(&header)
                .expect("header serializes")
                .as_bytes(),
        );
        out.push(b'\n');
        for t in &self.tensors {
            out.extend_from_slice(&(t.len() as u64).to_le_bytes());
            for x in t.data() {
                out.extend_from_slice(&x.to_le_bytes());
            }
        }
        out
    }

    pub fn decode(bytes: &[u8]) -> Result<Self> {
        let mut cur = bytes;
        let mut line = String::new();
        cur.read_line(&mut line)
            .map_err(|e| parse(1, e.to_string()))?;
        if line.trim_end() != MAGIC {
            return Err(parse(1, format!("expected `{MAGIC}`")));
        }
        line.clear();
        cur.read_line(&mut line)
            .map_err(|e| parse(2, e.to_string()))?;
        let header: Header =
            serde_json::from_str(line.trim_end()).map_err(|e| parse(2, e.to_string()))?;

        let mut tensors = Vec::with_capacity(header.shapes.len());
        for (i, &(r, c)) in header.shapes.iter().enumerate() {
            let mut word = [0u8; 8];
            cur.read_exact(&mut word)
                .map_err(|_| parse(3, format!("record {i}: truncated length")))?;
            let n = u64::from_le_bytes(word) as usize;
            if n != r * c {
                return Err(parse(
                    3,
                    format!("record {i}: {n} values for shape {r}x{c}"),
                ));
            }
            let mut data = Vec::with_capacity(n);
            for _ in 0..n {
                cur.read_exact(&mut word)
                    .map_err(|_| parse(3, format!("record {i}: truncated data")))?;
                data.push(f64::from_le_bytes(word));
            }
            tensors.push(Matrix::from_vec(r, c, data)?);
        }
        if !cur.is_empty() {
            return Err(parse(3, format!("{} trailing bytes", cur.len())));
        }
        Ok(ParamFile {
            kind: header.kind,
            meta: header.meta,
            tensors,
        })
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        fs::write(path, self.encode()).map_err(|e| Error::io(path, e))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
        Self::decode(&bytes)
    }

    pub fn expect_kind(&self, kind: &str) -> Result<()> {
        if self.kind != kind {
            return Err(Error::SpecMismatch(format!(
                "expected `{kind}` parameters, found `{}`",
                self.kind
            )));
        }
        Ok(())
    }

    pub fn meta_as<M: DeserializeOwned>(&self) -> Result<M> {
        serde_json::from_value(self.meta.clone()).map_err(|e| Error::SpecMismatch(e.to_string()))
    }
}

fn parse(line: usize, msg: String) -> Error {
    Error::Parse { line, msg }
}

impl Mlp {
    pub fn to_param_file(&self, kind: &str) -> ParamFile {
        ParamFile::new(
            kind,
            self.spec(),
            self.params().into_iter().cloned().collect(),
        )
        .expect("spec serializes")
    }

    /// Rebuilds a network from `file`, failing if its spec differs from
    /// `expected`.
    pub fn from_param_file(file: &ParamFile, kind: &str, expected: &MlpSpec) -> Result<Self> {
        file.expect_kind(kind)?;
        let spec: MlpSpec = file.meta_as()?;
        if &spec != expected {
            return Err(Error::SpecMismatch(format!(
                "file has {spec:?}, expected {expected:?}"
            )));
        }
        Self::from_tensors(spec, &file.tensors)
    }

    pub(crate) fn from_tensors(spec: MlpSpec, tensors: &[Matrix]) -> Result<Self> {
        if !tensors.len().is_multiple_of(2) {
            return Err(Error::SpecMismatch("odd number of MLP tensors".into()));
        }
        let layers = tensors
            .chunks(2)
            .map(|wb| Linear {
                weight: wb[0].clone(),
                bias: wb[1].clone(),
            })
            .collect();
        Mlp::from_layers(spec, layers)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn net() -> Mlp {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        Mlp::new(MlpSpec::new(4, &[5, 5], 2), &mut rng).unwrap()
    }

    #[test]
    fn round_trip_is_bitwise() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("q.params");
        let mut n = net();
        // Values that do not survive a decimal round trip.
        n.final_layer_mut().bias.set(0, 0, f64::MIN_POSITIVE / 3.0);
        n.final_layer_mut().bias.set(0, 1, -0.1 - 0.2);
        n.to_param_file("critic").save(&path).unwrap();
        let back =
            Mlp::from_param_file(&ParamFile::load(&path).unwrap(), "critic", n.spec()).unwrap();
        for (a, b) in n.params().iter().zip(back.params()) {
            let bits = |m: &Matrix| m.data().iter().map(|x| x.to_bits()).collect::<Vec<_>>();
            assert_eq!(bits(a), bits(b));
        }
    }

    #[test]
    fn wrong_input_dim_is_spec_mismatch() {
        let file = net().to_param_file("critic");
        let want = MlpSpec::new(3, &[5, 5], 2);
        assert!(matches!(
            Mlp::from_param_file(&file, "critic", &want),
            Err(Error::SpecMismatch(_))
        ));
    }

    #[test]
    fn tampered_header_shape_is_rejected() {
        let file = net().to_param_file("critic");
        let mut hacked = file.clone();
        hacked.meta["input_dim"] = 3.into();
        let spec = MlpSpec::new(3, &[5, 5], 2);
        let decoded = ParamFile::decode(&hacked.encode()).unwrap();
        assert!(matches!(
            Mlp::from_param_file(&decoded, "critic", &spec),
            Err(Error::SpecMismatch(_))
        ));
    }

    #[test]
    fn wrong_kind_is_spec_mismatch() {
        let n = net();
        let file = n.to_param_file("policy");
        assert!(matches!(
            Mlp::from_param_file(&file, "critic", n.spec()),
            Err(Error::SpecMismatch(_))
        ));
    }

    #[test]
    fn empty_file_is_parse_error() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("empty");
        fs::write(&path, b"").unwrap();
        assert!(matches!(
            ParamFile::load(&path),
            Err(Error::Parse { line: 1, .. })
        ));
    }

    #[test]
    fn truncated_body_is_parse_error() {
        let bytes = net().to_param_file("critic").encode();
        assert!(matches!(
            ParamFile::decode(&bytes[..bytes.len() - 3]),
            Err(Error::Parse { .. })
        ));
    }

    #[test]
    fn missing_file_is_io_error() {
        assert!(matches!(
            ParamFile::load(Path::new("/nonexistent/x.params")),
            Err(Error::Io { .. })
        ));
    }
}
