//! Versioned binary agent container.
//!
//! Layout: 8-byte magic, `u32` little-endian format version, `u64`
//! little-endian header length, UTF-8 JSON header, then the `f32`
//! little-endian arrays listed in the header, back to back.

use std::fs;
use std::io::Write;
use std::path::Path;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::adam::Adam;
use super::nn::Mlp;
use super::sac::{SacAgent, SacConfig};
use crate::env::{EnvConfig, ObservationNormalizer};
use crate::error::{Error, Result};

pub const MAGIC: &[u8; 8] = b"AALNCKPT";
pub const FORMAT_VERSION: u32 = 1;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
struct AdamMeta {
    lr: f64,
    beta1: f64,
    beta2: f64,
    eps: f64,
    t: u64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
struct RngState {
    seed_hex: String,
    stream: u64,
    word_pos: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
struct ArrayMeta {
    name: String,
    len: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct Header {
    sac: SacConfig,
    obs_dim: usize,
    act_dim: usize,
    env: EnvConfig,
    normalizer: ObservationNormalizer,
    env_step: u64,
    log_alpha: f32,
    /// Actor, critic 1, critic 2, temperature.
    optimizers: [AdamMeta; 4],
    rng: Option<RngState>,
    arrays: Vec<ArrayMeta>,
}

/// Agent plus the environment constants it was trained with.
#[derive(Debug, Clone, PartialEq)]
pub struct Checkpoint {
    pub agent: SacAgent<f32>,
    pub env_config: EnvConfig,
    pub env_step: u64,
    pub rng: Option<ChaCha8Rng>,
}

fn meta(a: &Adam<f32>) -> AdamMeta {
    AdamMeta {
        lr: a.lr,
        beta1: a.beta1,
        beta2: a.beta2,
        eps: a.eps,
        t: a.t,
    }
}

fn corrupt(msg: impl Into<String>) -> Error {
    Error::Checkpoint(msg.into())
}

impl Checkpoint {
    pub fn new(
        agent: SacAgent<f32>,
        env_config: EnvConfig,
        env_step: u64,
        rng: Option<ChaCha8Rng>,
    ) -> Self {
        Self {
            agent,
            env_config,
            env_step,
            rng,
        }
    }

    pub fn normalizer(&self) -> ObservationNormalizer {
        self.env_config.normalizer()
    }

    /// Rejects evaluation environments whose observation scaling differs
    /// from the training one.
    pub fn check_compatible(&self, env: &EnvConfig) -> Result<()> {
        let (ours, theirs) = (self.normalizer(), env.normalizer());
        if ours != theirs {
            return Err(corrupt(format!(
                "normalization constants differ: checkpoint {ours:?}, environment {theirs:?}"
            )));
        }
        if self.agent.obs_dim != env.mdp.observation_len() {
            return Err(corrupt("observation length differs from the environment"));
        }
        Ok(())
    }

    fn arrays(&self) -> Vec<(&'static str, &[f32])> {
        let a = &self.agent;
        vec![
            ("actor", &a.actor.params),
            ("critic1", &a.critics[0].params),
            ("critic2", &a.critics[1].params),
            ("target1", &a.targets[0].params),
            ("target2", &a.targets[1].params),
            ("actor_opt.m", &a.actor_opt.m),
            ("actor_opt.v", &a.actor_opt.v),
            ("critic1_opt.m", &a.critic_opts[0].m),
            ("critic1_opt.v", &a.critic_opts[0].v),
            ("critic2_opt.m", &a.critic_opts[1].m),
            ("critic2_opt.v", &a.critic_opts[1].v),
            ("alpha_opt.m", &a.alpha_opt.m),
            ("alpha_opt.v", &a.alpha_opt.v),
        ]
    }

    pub fn to_bytes(&self) -> Result<Vec<u8>> {
        let a = &self.agent;
        let arrays = self.arrays();
        let header = Header {
            sac: a.config.clone(),
            obs_dim: a.obs_dim,
            act_dim: a.act_dim,
            env: self.env_config,
            normalizer: self.normalizer(),
            env_step: self.env_step,
            log_alpha: a.log_alpha,
            optimizers: [
                meta(&a.actor_opt),
                meta(&a.critic_opts[0]),
                meta(&a.critic_opts[1]),
                meta(&a.alpha_opt),
            ],
            rng: self.rng.as_ref().map(|r| RngState {
                seed_hex: r.get_seed().iter().map(|b| format!("{b:02x}")).collect(),
                stream: r.get_stream(),
                word_pos: r.get_word_pos().to_string(),
            }),
            arrays: arrays
                .iter()
                .map(|(n, v)| ArrayMeta {
                    name: (*n).into(),
                    len: v.len(),
                })
                .collect(),
        };
        let json = serde_json::to_vec(&header).map_err(|e| corrupt(e.to_string()))?;
        let mut out = Vec::with_capacity(
            20 + json.len() + 4 * arrays.iter().map(|(_, v)| v.len()).sum::<usize>(),
        );
        out.extend_from_slice(MAGIC);
        out.extend_from_slice(&FORMAT_VERSION.to_le_bytes());
        out.extend_from_slice(&(json.len() as u64).to_le_bytes());
        out.extend_from_slice(&json);
        for (_, v) in arrays {
            for x in v {
                out.extend_from_slice(&x.to_le_bytes());
            }
        }
        Ok(out)
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        if bytes.len() < 20 || &bytes[..8] != MAGIC {
            return Err(corrupt("not an agent checkpoint"));
        }
        let version = u32::from_le_bytes(bytes[8..12].try_into().expect("4 bytes"));
        if version != FORMAT_VERSION {
            return Err(corrupt(format!(
                "format version {version}, expected {FORMAT_VERSION}"
            )));
        }
        let hlen = u64::from_le_bytes(bytes[12..20].try_into().expect("8 bytes")) as usize;
        let body = bytes.get(20..).ok_or_else(|| corrupt("truncated"))?;
        let json = body
            .get(..hlen)
            .ok_or_else(|| corrupt("truncated header"))?;
        let header: Header =
            serde_json::from_slice(json).map_err(|e| corrupt(format!("header: {e}")))?;
        if header.normalizer != header.env.normalizer() {
            return Err(corrupt(
                "stored normalization constants disagree with stored environment",
            ));
        }

        let mut data = &body[hlen..];
        let mut arrays = Vec::with_capacity(header.arrays.len());
        for m in &header.arrays {
            let n = m
                .len
                .checked_mul(4)
                .ok_or_else(|| corrupt("array length overflow"))?;
            if data.len() < n {
                return Err(corrupt(format!("truncated array {}", m.name)));
            }
            let (chunk, rest) = data.split_at(n);
            arrays.push(
                chunk
                    .chunks_exact(4)
                    .map(|c| f32::from_le_bytes(c.try_into().expect("4 bytes")))
                    .collect::<Vec<f32>>(),
            );
            data = rest;
        }
        if !data.is_empty() {
            return Err(corrupt("trailing bytes"));
        }
        let expected = [
            "actor",
            "critic1",
            "critic2",
            "target1",
            "target2",
            "actor_opt.m",
            "actor_opt.v",
            "critic1_opt.m",
            "critic1_opt.v",
            "critic2_opt.m",
            "critic2_opt.v",
            "alpha_opt.m",
            "alpha_opt.v",
        ];
        if header.arrays.iter().map(|m| m.name.as_str()).ne(expected) {
            return Err(corrupt("unexpected array list"));
        }
        let mut it = arrays.into_iter();
        let mut next = || it.next().expect("array count checked");

        let sizes = |input: usize, output: usize| {
            let mut s = vec![input];
            s.extend(&header.sac.hidden_sizes);
            s.push(output);
            s
        };
        let actor_sizes = sizes(header.obs_dim, 2 * header.act_dim);
        let critic_sizes = sizes(header.obs_dim + header.act_dim, 1);
        let mlp = |s: &[usize], p: Vec<f32>, name: &str| {
            Mlp::from_params(s, p).ok_or_else(|| corrupt(format!("{name}: wrong size")))
        };
        let actor = mlp(&actor_sizes, next(), "actor")?;
        let critics = [
            mlp(&critic_sizes, next(), "critic1")?,
            mlp(&critic_sizes, next(), "critic2")?,
        ];
        let targets = [
            mlp(&critic_sizes, next(), "target1")?,
            mlp(&critic_sizes, next(), "target2")?,
        ];
        let adam = |meta: &AdamMeta, m: Vec<f32>, v: Vec<f32>, len: usize| -> Result<Adam<f32>> {
            if m.len() != len || v.len() != len {
                return Err(corrupt("optimizer moments have the wrong size"));
            }
            Ok(Adam {
                lr: meta.lr,
                beta1: meta.beta1,
                beta2: meta.beta2,
                eps: meta.eps,
                m,
                v,
                t: meta.t,
            })
        };
        let o = &header.optimizers;
        let actor_opt = adam(&o[0], next(), next(), actor.params.len())?;
        let critic_opts = [
            adam(&o[1], next(), next(), critics[0].params.len())?,
            adam(&o[2], next(), next(), critics[1].params.len())?,
        ];
        let alpha_opt = adam(&o[3], next(), next(), 1)?;

        let rng = match &header.rng {
            None => None,
            Some(s) => {
                let bytes: Vec<u8> = (0..s.seed_hex.len())
                    .step_by(2)
                    .map(|i| u8::from_str_radix(s.seed_hex.get(i..i + 2).unwrap_or("zz"), 16))
                    .collect::<std::result::Result<_, _>>()
                    .map_err(|_| corrupt("rng seed"))?;
                let seed: [u8; 32] = bytes.try_into().map_err(|_| corrupt("rng seed length"))?;
                let mut r = ChaCha8Rng::from_seed(seed);
                r.set_stream(s.stream);
                r.set_word_pos(
                    s.word_pos
                        .parse()
                        .map_err(|_| corrupt("rng word position"))?,
                );
                Some(r)
            }
        };
        Ok(Self {
            agent: SacAgent {
                config: header.sac,
                obs_dim: header.obs_dim,
                act_dim: header.act_dim,
                actor,
                critics,
                targets,
                actor_opt,
                critic_opts,
                log_alpha: header.log_alpha,
                alpha_opt,
            },
            env_config: header.env,
            env_step: header.env_step,
            rng,
        })
    }

    /// Writes to a sibling temporary file, syncs it, then renames over `path`.
    pub fn save(&self, path: &Path) -> Result<()> {
        let bytes = self.to_bytes()?;
        let dir = path
            .parent()
            .filter(|p| !p.as_os_str().is_empty())
            .unwrap_or(Path::new("."));
        let file_name = path
            .file_name()
            .ok_or_else(|| Error::Input(format!("not a file path: {}", path.display())))?;
        let tmp = dir.join(format!(".{}.tmp", file_name.to_string_lossy()));
        let write = || -> std::io::Result<()> {
            let mut f = fs::File::create(&tmp)?;
            f.write_all(&bytes)?;
            f.sync_all()?;
            fs::rename(&tmp, path)
        };
        write().map_err(|e| {
            let _ = fs::remove_file(&tmp);
            Error::io(path, e)
        })
    }

    pub fn load(path: &Path) -> Result<Self> {
        let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
        Self::from_bytes(&bytes)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rl::replay::ReplayBuffer;
    use rand::Rng;

    fn trained_agent() -> (SacAgent<f32>, ChaCha8Rng) {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let config = SacConfig {
            hidden_sizes: vec![16, 16],
            batch_size: 8,
            ..SacConfig::default()
        };
        let mut agent = SacAgent::new(config, 20, 3, &mut rng).unwrap();
        let mut buf = ReplayBuffer::new(100, 20, 3).unwrap();
        for _ in 0..50 {
            let o: Vec<f32> = (0..20).map(|_| rng.random()).collect();
            buf.push(&o, &[0.1, -0.2, 0.3], rng.random(), &o, false);
        }
        for _ in 0..5 {
            let b = buf.sample(8, &mut rng).unwrap();
            agent.update(&b, &mut rng);
        }
        (agent, rng)
    }

    #[test]
    fn round_trip_is_exact() {
        let (agent, rng) = trained_agent();
        let ckpt = Checkpoint::new(agent, EnvConfig::default(), 1234, Some(rng));
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("agent.ckpt");
        ckpt.save(&path).unwrap();
        let loaded = Checkpoint::load(&path).unwrap();
        assert_eq!(loaded, ckpt);
        assert!(!dir.path().join(".agent.ckpt.tmp").exists());

        let mut rng = ChaCha8Rng::seed_from_u64(0);
        for _ in 0..100 {
            let obs: Vec<f64> = (0..20).map(|_| rng.random_range(-1.0..1.0)).collect();
            assert_eq!(
                ckpt.agent.act_deterministic(&obs).unwrap(),
                loaded.agent.act_deterministic(&obs).unwrap()
            );
        }
    }

    #[test]
    fn restored_rng_continues_the_stream() {
        let (agent, mut rng) = trained_agent();
        let ckpt = Checkpoint::new(agent, EnvConfig::default(), 0, Some(rng.clone()));
        let mut restored = Checkpoint::from_bytes(&ckpt.to_bytes().unwrap())
            .unwrap()
            .rng
            .unwrap();
        for _ in 0..10 {
            assert_eq!(rng.random::<u64>(), restored.random::<u64>());
        }
    }

    #[test]
    fn rejects_bad_magic_version_and_truncation() {
        let (agent, _) = trained_agent();
        let bytes = Checkpoint::new(agent, EnvConfig::default(), 0, None)
            .to_bytes()
            .unwrap();
        let mut bad = bytes.clone();
        bad[0] ^= 1;
        assert!(Checkpoint::from_bytes(&bad).is_err());
        let mut bad = bytes.clone();
        bad[8] = 9;
        assert!(
            matches!(Checkpoint::from_bytes(&bad), Err(Error::Checkpoint(m)) if m.contains("version"))
        );
        assert!(Checkpoint::from_bytes(&bytes[..bytes.len() - 3]).is_err());
    }

    #[test]
    fn normalization_mismatch_is_reported() {
        let (agent, _) = trained_agent();
        let ckpt = Checkpoint::new(agent, EnvConfig::default(), 0, None);
        let mut other = EnvConfig::default();
        other.mdp.r_step_max_um = 50.0;
        assert!(ckpt.check_compatible(&EnvConfig::default()).is_ok());
        assert!(matches!(
            ckpt.check_compatible(&other),
            Err(Error::Checkpoint(_))
        ));
    }
}
