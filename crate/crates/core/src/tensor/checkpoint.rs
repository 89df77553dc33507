//! On-disk weights: a text manifest plus a flat little-endian `f32` payload.
//!
//! ```text
//! <dir>/manifest.txt
//!     tbqn-checkpoint v1
//!     meta <key> <single-line value>
//!     tensor <name> f32 <d0,d1,..> <byte offset>
//! <dir>/weights.bin
//! ```

use std::collections::BTreeMap;
use std::fs;
use std::path::Path;

use super::{ParamSet, Parameter, Tensor};
use crate::error::{Result, TbqnError};

const MAGIC: &str = "tbqn-checkpoint v1";
pub const MANIFEST_FILE: &str = "manifest.txt";
pub const PAYLOAD_FILE: &str = "weights.bin";

#[derive(Debug, Clone, PartialEq)]
pub struct Checkpoint {
    pub params: ParamSet<f32>,
    pub meta: BTreeMap<String, String>,
}

pub fn write_checkpoint(
    dir: &Path,
    params: &ParamSet<f32>,
    meta: &BTreeMap<String, String>,
) -> Result<()> {
    fs::create_dir_all(dir)?;
    let mut manifest = format!("{MAGIC}\n");
    for (k, v) in meta {
        if k.contains(char::is_whitespace) || v.contains('\n') {
            return Err(TbqnError::contract(format!("metadata entry `{k}` must be single-line")));
        }
        manifest.push_str(&format!("meta {k} {v}\n"));
    }
    let mut payload = Vec::with_capacity(params.numel() * 4);
    for p in params.iter() {
        if p.name.contains(char::is_whitespace) {
            return Err(TbqnError::contract(format!("tensor name `{}` contains whitespace", p.name)));
        }
        let dims: Vec<String> = p.value.shape().iter().map(|d| d.to_string()).collect();
        manifest.push_str(&format!(
            "tensor {} f32 {} {}\n",
            p.name,
            dims.join(","),
            payload.len()
        ));
        for v in p.value.data() {
            payload.extend_from_slice(&v.to_le_bytes());
        }
    }
    fs::write(dir.join(MANIFEST_FILE), manifest)?;
    fs::write(dir.join(PAYLOAD_FILE), payload)?;
    Ok(())
}

pub fn read_checkpoint(dir: &Path) -> Result<Checkpoint> {
    let manifest = fs::read_to_string(dir.join(MANIFEST_FILE))?;
    let payload = fs::read(dir.join(PAYLOAD_FILE))?;
    let bad = |line: &str| TbqnError::Parse(format!("bad checkpoint manifest line `{line}`"));

    let mut lines = manifest.lines();
    if lines.next() != Some(MAGIC) {
        return Err(TbqnError::Parse("missing checkpoint header".into()));
    }
    let mut meta = BTreeMap::new();
    let mut params = ParamSet::new();
    for line in lines.filter(|l| !l.trim().is_empty()) {
        let mut parts = line.splitn(3, ' ');
        match (parts.next(), parts.next(), parts.next()) {
            (Some("meta"), Some(k), v) => {
                meta.insert(k.to_string(), v.unwrap_or("").to_string());
            }
            (Some("tensor"), Some(name), Some(rest)) => {
                let fields: Vec<&str> = rest.split(' ').collect();
                let [dtype, dims, offset] = fields[..] else {
                    return Err(bad(line));
                };
                if dtype != "f32" {
                    return Err(TbqnError::Parse(format!("unsupported dtype `{dtype}`")));
                }
                let shape = dims
                    .split(',')
                    .map(|d| d.parse::<usize>().map_err(|_| bad(line)))
                    .collect::<Result<Vec<_>>>()?;
                let offset: usize = offset.parse().map_err(|_| bad(line))?;
                let numel: usize = shape.iter().product();
                let bytes = payload
                    .get(offset..offset + numel * 4)
                    .ok_or_else(|| TbqnError::Parse(format!("payload too short for `{name}`")))?;
                let data = bytes
                    .chunks_exact(4)
                    .map(|b| f32::from_le_bytes([b[0], b[1], b[2], b[3]]))
                    .collect();
                params.push(Parameter::new(name, Tensor::new(&shape, data)?));
            }
            _ => return Err(bad(line)),
        }
    }
    Ok(Checkpoint { params, meta })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::RngState;
    use crate::tensor::{init_tensor, Init};

    #[test]
    fn roundtrip_is_bit_exact() {
        let dir = tempfile::tempdir().unwrap();
        let mut rng = RngState::new(3);
        let mut ps = ParamSet::<f32>::new();
        ps.push(Parameter::new("layer0.attn.wq", init_tensor(&[4, 4], Init::XavierUniform, &mut rng).unwrap()));
        ps.push(Parameter::new(
            "head.b",
            Tensor::new(&[3], vec![f32::MIN_POSITIVE, -0.0, 1e-30]).unwrap(),
        ));
        let mut meta = BTreeMap::new();
        meta.insert("spec".to_string(), "{\"d\": 4}".to_string());
        write_checkpoint(dir.path(), &ps, &meta).unwrap();
        let ck = read_checkpoint(dir.path()).unwrap();
        assert_eq!(ck.meta, meta);
        assert_eq!(ck.params.len(), 2);
        for (a, b) in ck.params.iter().zip(ps.iter()) {
            assert_eq!(a.name, b.name);
            assert_eq!(a.value.shape(), b.value.shape());
            let bits_a: Vec<u32> = a.value.data().iter().map(|v| v.to_bits()).collect();
            let bits_b: Vec<u32> = b.value.data().iter().map(|v| v.to_bits()).collect();
            assert_eq!(bits_a, bits_b);
        }
        let manifest = fs::read_to_string(dir.path().join(MANIFEST_FILE)).unwrap();
        assert!(manifest.contains("tensor head.b f32 3 64"));
    }

    #[test]
    fn rejects_truncated_payload() {
        let dir = tempfile::tempdir().unwrap();
        let mut ps = ParamSet::<f32>::new();
        ps.push(Parameter::new("w", Tensor::zeros(&[4])));
        write_checkpoint(dir.path(), &ps, &BTreeMap::new()).unwrap();
        fs::write(dir.path().join(PAYLOAD_FILE), [0u8; 6]).unwrap();
        assert!(matches!(read_checkpoint(dir.path()), Err(TbqnError::Parse(_))));
    }
}
