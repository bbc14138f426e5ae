//! Binary training checkpoints.
//!
//! Layout, all integers little-endian:
//!
//! ```text
//! "FGPV" u32:version
//! u32:len  config text
//! [u8;32]:rng seed  u64:rng stream  u128:rng word position
//! u64:rounds done
//! u32:count  { u32:len name  u32:rank  u32:dims…  f32:values… }   tensors
//! u32:count  { u32:len name  u64:steps }                           Adam step counts
//! u32:count  { u32:round  u8:phase  u32:epoch  f64:mean  f64:det  f64:cls  f64:total }
//! ```
//!
//! Tensors named `param/<name>` are parameters; `adam.m/<name>` and
//! `adam.v/<name>` are the optimizer moments.

use std::path::Path;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::config::Config;
use crate::error::{Error, Result};
use crate::tensor::{Adam, Moments, ParamStore, Tensor};

use super::{EpochLog, Phase, TrainState};

pub const MAGIC: &[u8; 4] = b"FGPV";
pub const VERSION: u32 = 1;

struct Writer(Vec<u8>);

impl Writer {
    fn u32(&mut self, v: u32) {
        self.0.extend_from_slice(&v.to_le_bytes());
    }
    fn u64(&mut self, v: u64) {
        self.0.extend_from_slice(&v.to_le_bytes());
    }
    fn f64(&mut self, v: f64) {
        self.0.extend_from_slice(&v.to_le_bytes());
    }
    fn str(&mut self, s: &str) {
        self.u32(s.len() as u32);
        self.0.extend_from_slice(s.as_bytes());
    }
    fn tensor(&mut self, name: &str, shape: &[usize], data: &[f64]) {
        self.str(name);
        self.u32(shape.len() as u32);
        for &d in shape {
            self.u32(d as u32);
        }
        for &x in data {
            self.0.extend_from_slice(&(x as f32).to_le_bytes());
        }
    }
}

struct Reader<'a> {
    buf: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        let end = self.pos.checked_add(n).filter(|&e| e <= self.buf.len());
        let end = end.ok_or_else(|| Error::Data(format!("checkpoint truncated at byte {}", self.pos)))?;
        let s = &self.buf[self.pos..end];
        self.pos = end;
        Ok(s)
    }
    fn array<const N: usize>(&mut self) -> Result<[u8; N]> {
        Ok(self.take(N)?.try_into().expect("length checked"))
    }
    fn u8(&mut self) -> Result<u8> {
        Ok(self.take(1)?[0])
    }
    fn u32(&mut self) -> Result<u32> {
        self.array().map(u32::from_le_bytes)
    }
    fn u64(&mut self) -> Result<u64> {
        self.array().map(u64::from_le_bytes)
    }
    fn f64(&mut self) -> Result<f64> {
        self.array().map(f64::from_le_bytes)
    }
    fn str(&mut self) -> Result<String> {
        let n = self.u32()? as usize;
        String::from_utf8(self.take(n)?.to_vec()).map_err(|_| Error::Data("checkpoint string is not UTF-8".into()))
    }
    fn tensor(&mut self) -> Result<(String, Tensor)> {
        let name = self.str()?;
        let rank = self.u32()? as usize;
        let shape = (0..rank).map(|_| self.u32().map(|d| d as usize)).collect::<Result<Vec<_>>>()?;
        let n: usize = shape.iter().product();
        let data = (0..n)
            .map(|_| self.array().map(|b| f32::from_le_bytes(b) as f64))
            .collect::<Result<Vec<_>>>()?;
        Ok((name, Tensor::new(&shape, data)?))
    }
}

pub fn to_bytes(cfg: &Config, state: &TrainState) -> Vec<u8> {
    let mut w = Writer(MAGIC.to_vec());
    w.u32(VERSION);
    w.str(&cfg.to_text());
    w.0.extend_from_slice(&state.rng.get_seed());
    w.u64(state.rng.get_stream());
    w.0.extend_from_slice(&state.rng.get_word_pos().to_le_bytes());
    w.u64(state.rounds_done as u64);

    let moments = &state.adam.state;
    w.u32((state.store.len() + 2 * moments.len()) as u32);
    for (name, p) in state.store.iter() {
        w.tensor(&format!("param/{name}"), p.value.shape(), p.value.data());
    }
    for (name, m) in moments {
        let shape = state.store.value(name).map(|t| t.shape().to_vec()).unwrap_or_else(|_| vec![m.m.len()]);
        w.tensor(&format!("adam.m/{name}"), &shape, &m.m);
        w.tensor(&format!("adam.v/{name}"), &shape, &m.v);
    }
    w.u32(moments.len() as u32);
    for (name, m) in moments {
        w.str(name);
        w.u64(m.t);
    }
    w.u32(state.history.len() as u32);
    for h in &state.history {
        w.u32(h.round as u32);
        w.0.push(match h.phase {
            Phase::Detector => 0,
            Phase::Classifier => 1,
        });
        w.u32(h.epoch as u32);
        for v in [h.mean_loss, h.det_loss, h.cls_loss, h.total] {
            w.f64(v);
        }
    }
    w.0
}

pub fn from_bytes(buf: &[u8]) -> Result<(Config, TrainState)> {
    let mut r = Reader { buf, pos: 0 };
    if r.take(4).ok() != Some(MAGIC.as_slice()) {
        return Err(Error::Data("not a checkpoint (bad magic)".into()));
    }
    let version = r.u32()?;
    if version != VERSION {
        return Err(Error::Version {
            found: version,
            expected: VERSION,
        });
    }
    let cfg = Config::parse(&r.str()?)?;
    let mut rng = ChaCha8Rng::from_seed(r.array()?);
    rng.set_stream(r.u64()?);
    rng.set_word_pos(u128::from_le_bytes(r.array()?));
    let rounds_done = r.u64()? as usize;

    let mut store = ParamStore::new();
    let mut adam = Adam::with_betas(cfg.lr, cfg.beta1, cfg.beta2, cfg.eps);
    for _ in 0..r.u32()? {
        let (name, t) = r.tensor()?;
        let n = t.numel();
        let fresh = || Moments {
            m: vec![0.0; n],
            v: vec![0.0; n],
            t: 0,
        };
        if let Some(p) = name.strip_prefix("param/") {
            store.insert(p, t);
        } else if let Some(p) = name.strip_prefix("adam.m/") {
            adam.state.entry(p.to_string()).or_insert_with(fresh).m = t.into_data();
        } else if let Some(p) = name.strip_prefix("adam.v/") {
            adam.state.entry(p.to_string()).or_insert_with(fresh).v = t.into_data();
        } else {
            return Err(Error::Data(format!("unknown checkpoint record `{name}`")));
        }
    }
    for _ in 0..r.u32()? {
        let name = r.str()?;
        let t = r.u64()?;
        adam.state
            .get_mut(&name)
            .ok_or_else(|| Error::Data(format!("step count for unknown moment `{name}`")))?
            .t = t;
    }
    let mut history = Vec::new();
    for _ in 0..r.u32()? {
        let round = r.u32()? as usize;
        let phase = match r.u8()? {
            0 => Phase::Detector,
            1 => Phase::Classifier,
            p => return Err(Error::Data(format!("unknown phase tag {p}"))),
        };
        let epoch = r.u32()? as usize;
        history.push(EpochLog {
            round,
            phase,
            epoch,
            mean_loss: r.f64()?,
            det_loss: r.f64()?,
            cls_loss: r.f64()?,
            total: r.f64()?,
        });
    }
    if r.pos != buf.len() {
        return Err(Error::Data("trailing bytes after checkpoint".into()));
    }
    Ok((
        cfg,
        TrainState {
            rounds_done,
            store,
            adam,
            rng,
            history,
        },
    ))
}

pub fn save(path: &Path, cfg: &Config, state: &TrainState) -> Result<()> {
    if let Some(dir) = path.parent() {
        std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    }
    std::fs::write(path, to_bytes(cfg, state)).map_err(|e| Error::io(path, e))
}

pub fn load(path: &Path) -> Result<(Config, TrainState)> {
    let buf = std::fs::read(path).map_err(|e| Error::io(path, e))?;
    from_bytes(&buf).map_err(|e| match e {
        Error::Data(m) => Error::Data(format!("{}: {m}", path.display())),
        other => other,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::Rng;

    fn state() -> TrainState {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let mut store = ParamStore::new();
        store.insert("det.a", Tensor::new(&[2, 3], (0..6).map(|_| rng.gen_range(-1.0..1.0)).collect()).unwrap());
        store.insert("att.b", Tensor::vector(vec![0.1, 1e-9, -3.25]));
        let mut adam = Adam::new(1e-3);
        store.zero_grads(|_| true);
        adam.step(&mut store, |n| n.starts_with("det.")).unwrap();
        adam.state.get_mut("det.a").unwrap().m[1] = 0.123456789;
        store.clear_grads();
        let history = vec![EpochLog {
            round: 1,
            phase: Phase::Classifier,
            epoch: 2,
            mean_loss: 0.1,
            det_loss: 0.2,
            cls_loss: 0.1,
            total: 0.30000000000000004,
        }];
        TrainState { rounds_done: 3, store, adam, rng, history }
    }

    #[test]
    fn round_trip_after_single_precision_rounding() {
        let cfg = Config { seed: 99, ..Config::default() };
        let mut st = state();
        let (cfg2, back) = from_bytes(&to_bytes(&cfg, &st)).unwrap();
        assert_eq!(cfg2, cfg);
        st.store.round_to_f32();
        st.adam.round_to_f32();
        assert_eq!(back.store.iter().collect::<Vec<_>>(), st.store.iter().collect::<Vec<_>>());
        assert_eq!(back.adam.state, st.adam.state);
        assert_eq!((back.rounds_done, &back.history), (3, &st.history));
        let (mut a, mut b) = (st.rng.clone(), back.rng.clone());
        assert_eq!(a.gen::<u64>(), b.gen::<u64>());
        // a second pass is lossless
        let again = from_bytes(&to_bytes(&cfg, &back)).unwrap().1;
        assert_eq!(again, back);
    }

    #[test]
    fn rejects_other_versions_and_garbage() {
        let mut bytes = to_bytes(&Config::default(), &state());
        bytes[4..8].copy_from_slice(&7u32.to_le_bytes());
        assert!(matches!(from_bytes(&bytes), Err(Error::Version { found: 7, expected: 1 })));
        assert!(matches!(from_bytes(b"NOPE"), Err(Error::Data(_))));
        let good = to_bytes(&Config::default(), &state());
        assert!(matches!(from_bytes(&good[..good.len() - 3]), Err(Error::Data(_))));
    }
}
