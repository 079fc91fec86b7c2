//! Binary checkpoints: a text header (config, vocabulary, class names)
//! followed by named little-endian `f64` tensors.

use std::fs;
use std::io::{Read, Write};
use std::path::Path;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use super::config::Config;
use crate::diffcore::Parameterized;
use crate::error::{Result, SacError};
use crate::label_embed::Vocabulary;
use crate::model::SacModel;

const MAGIC: &[u8; 8] = b"SACCKPT1";

fn header(config: &Config, model: &SacModel) -> String {
    let mut s = config.to_text();
    s.push_str("[vocab]\n");
    s.push_str(&model.embed.vocab.to_text());
    s.push_str("[classes]\n");
    for n in &model.class_names {
        s.push_str(n);
        s.push('\n');
    }
    s
}

fn put_u64(buf: &mut Vec<u8>, v: u64) {
    buf.extend_from_slice(&v.to_le_bytes());
}

/// Serializes `model` with `config`.
pub fn to_bytes(config: &Config, model: &SacModel) -> Vec<u8> {
    let mut buf = Vec::new();
    buf.extend_from_slice(MAGIC);
    let h = header(config, model);
    put_u64(&mut buf, h.len() as u64);
    buf.extend_from_slice(h.as_bytes());
    let params = model.params();
    put_u64(&mut buf, params.len() as u64);
    for (name, t) in params {
        put_u64(&mut buf, name.len() as u64);
        buf.extend_from_slice(name.as_bytes());
        put_u64(&mut buf, t.shape().len() as u64);
        for &d in t.shape() {
            put_u64(&mut buf, d as u64);
        }
        for v in t.data() {
            buf.extend_from_slice(&v.to_le_bytes());
        }
    }
    buf
}

/// Writes through a temporary file and a rename, so a crash never leaves a
/// truncated checkpoint behind.
pub fn save(path: &Path, config: &Config, model: &SacModel) -> Result<()> {
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        fs::create_dir_all(dir)?;
    }
    let tmp = path.with_extension("tmp");
    {
        let mut f = fs::File::create(&tmp)?;
        f.write_all(&to_bytes(config, model))?;
        f.sync_all()?;
    }
    fs::rename(&tmp, path)?;
    Ok(())
}

struct Reader<'a> {
    data: &'a [u8],
    pos: usize,
}

impl Reader<'_> {
    fn take(&mut self, n: usize) -> Result<&[u8]> {
        let end = self
            .pos
            .checked_add(n)
            .filter(|&e| e <= self.data.len())
            .ok_or_else(|| {
                SacError::Checkpoint(format!(
                    "truncated: needed {n} bytes at offset {}",
                    self.pos
                ))
            })?;
        let s = &self.data[self.pos..end];
        self.pos = end;
        Ok(s)
    }

    fn u64(&mut self) -> Result<u64> {
        Ok(u64::from_le_bytes(
            self.take(8)?.try_into().expect("8 bytes"),
        ))
    }

    fn len(&mut self) -> Result<usize> {
        let v = self.u64()?;
        usize::try_from(v)
            .ok()
            .filter(|&v| v <= self.data.len())
            .ok_or_else(|| SacError::Checkpoint(format!("implausible length {v}")))
    }

    fn string(&mut self) -> Result<String> {
        let n = self.len()?;
        String::from_utf8(self.take(n)?.to_vec())
            .map_err(|_| SacError::Checkpoint("header is not UTF-8".into()))
    }
}

pub fn from_bytes(data: &[u8]) -> Result<(Config, SacModel)> {
    let mut r = Reader { data, pos: 0 };
    if r.take(8)? != MAGIC {
        return Err(SacError::Checkpoint("bad magic".into()));
    }
    let h = r.string()?;
    let (cfg_text, rest) = h
        .split_once("[vocab]\n")
        .ok_or_else(|| SacError::Checkpoint("header lacks [vocab]".into()))?;
    let (vocab_text, class_text) = rest
        .split_once("[classes]\n")
        .ok_or_else(|| SacError::Checkpoint("header lacks [classes]".into()))?;
    let config = Config::from_text(cfg_text)?;
    let class_names: Vec<String> = class_text.lines().map(str::to_string).collect();
    let mut model = SacModel::new(
        &config.dims(class_names.len()),
        class_names,
        &mut ChaCha8Rng::seed_from_u64(0),
    )?;
    let vocab = Vocabulary::from_text(vocab_text)?;
    if vocab != model.embed.vocab {
        return Err(SacError::Checkpoint(
            "stored vocabulary does not match the class names".into(),
        ));
    }
    let count = r.len()?;
    let mut params = model.params_mut();
    if count != params.len() {
        return Err(SacError::Checkpoint(format!(
            "{count} tensors stored, model has {}",
            params.len()
        )));
    }
    for (name, t) in params.iter_mut() {
        let stored = r.string()?;
        if &stored != name {
            return Err(SacError::Checkpoint(format!(
                "expected tensor {name}, found {stored}"
            )));
        }
        let rank = r.len()?;
        let shape: Vec<usize> = (0..rank).map(|_| r.len()).collect::<Result<_>>()?;
        if shape != t.shape() {
            return Err(SacError::Checkpoint(format!(
                "tensor {name} has shape {shape:?}, config implies {:?}",
                t.shape()
            )));
        }
        for v in t.data_mut() {
            *v = f64::from_le_bytes(r.take(8)?.try_into().expect("8 bytes"));
        }
    }
    drop(params);
    if r.pos != data.len() {
        return Err(SacError::Checkpoint("trailing bytes".into()));
    }
    Ok((config, model))
}

pub fn load(path: &Path) -> Result<(Config, SacModel)> {
    if !path.exists() {
        return Err(SacError::MissingFile(path.to_path_buf()));
    }
    let mut data = Vec::new();
    fs::File::open(path)?.read_to_end(&mut data)?;
    from_bytes(&data)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn model(config: &Config) -> SacModel {
        let names = vec![
            "red tipped finch".to_string(),
            "blue capped finch".to_string(),
        ];
        SacModel::new(&config.dims(2), names, &mut ChaCha8Rng::seed_from_u64(3)).unwrap()
    }

    fn small() -> Config {
        Config {
            d_e: 4,
            d_j: 3,
            word_dim: 2,
            channels: vec![3, 4],
            pooled_blocks: 2,
            d_v: 5,
            ..Config::default()
        }
    }

    #[test]
    fn round_trip_is_bitwise() {
        let config = small();
        let m = model(&config);
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("m.ckpt");
        save(&p, &config, &m).unwrap();
        let (c2, m2) = load(&p).unwrap();
        assert_eq!(c2, config);
        assert_eq!(m2.class_names, m.class_names);
        for ((n1, a), (n2, b)) in m.params().iter().zip(m2.params()) {
            assert_eq!(n1, &n2);
            assert!(a
                .data()
                .iter()
                .zip(b.data())
                .all(|(x, y)| x.to_bits() == y.to_bits()));
        }
        assert!(!p.with_extension("tmp").exists());
    }

    #[test]
    fn corrupt_input_is_rejected() {
        let config = small();
        let bytes = to_bytes(&config, &model(&config));
        assert!(from_bytes(&bytes[..bytes.len() - 3]).is_err());
        let mut bad = bytes.clone();
        bad[0] = b'X';
        assert!(from_bytes(&bad).is_err());
        let mut extra = bytes;
        extra.push(0);
        assert!(from_bytes(&extra).is_err());
        assert!(matches!(
            load(Path::new("/nonexistent/x.ckpt")),
            Err(SacError::MissingFile(_))
        ));
    }
}
