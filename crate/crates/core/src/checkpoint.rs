//! Binary checkpoints.
//!
//! Layout (little-endian): magic `CTSRLCKP`, format version `u32`, SHA-256
//! config hash, the TOML config text (`u32` length + bytes), iteration `u64`,
//! network count `u32`, then per network its name, spec dimensions, log-std
//! width and an f32 parameter blob in flat layer order (row-major weights,
//! bias, then log-std). A trailing `u8` flags optimizer state (always 0).

use std::io::{Read, Write};
use std::path::Path;
use std::sync::Arc;

use byteorder::{LittleEndian, ReadBytesExt, WriteBytesExt};

use crate::agent::AgentNets;
use crate::config::RunConfig;
use crate::envs::{EnvDims, LocomotionEnv, TerrainKind, CommandRange};
use crate::error::{Error, Result};
use crate::nn::{Activation, Mlp, MlpSpec};

pub const MAGIC: &[u8; 8] = b"CTSRLCKP";
pub const FORMAT_VERSION: u32 = 1;

#[derive(Clone, Debug)]
pub struct Checkpoint {
    pub config: RunConfig,
    pub config_hash: [u8; 32],
    pub iteration: u64,
    pub nets: AgentNets,
}

fn bad(msg: impl Into<String>) -> Error {
    Error::Checkpoint(msg.into())
}

/// Observation and action dimensions implied by a config.
pub fn dims_for(config: &RunConfig) -> Result<EnvDims> {
    let settings = Arc::new(config.settings());
    let kind = config.env.terrain_kinds.first().copied().unwrap_or(TerrainKind::Flat);
    let env = LocomotionEnv::new(settings, kind, 0, CommandRange::initial(&config.env.curriculum))?;
    Ok(env.dims())
}

fn write_net<W: Write>(w: &mut W, name: &str, net: &Mlp) -> Result<()> {
    let spec = net.spec();
    w.write_u16::<LittleEndian>(name.len() as u16)?;
    w.write_all(name.as_bytes())?;
    w.write_u32::<LittleEndian>(spec.input_dim as u32)?;
    w.write_u32::<LittleEndian>(spec.hidden_dims.len() as u32)?;
    for &h in &spec.hidden_dims {
        w.write_u32::<LittleEndian>(h as u32)?;
    }
    w.write_u32::<LittleEndian>(spec.output_dim as u32)?;
    w.write_u8(match spec.activation {
        Activation::Elu => 0,
        Activation::Identity => 1,
    })?;
    w.write_u8(spec.normalize_output as u8)?;
    w.write_u32::<LittleEndian>(net.log_std_dim() as u32)?;
    w.write_u32::<LittleEndian>(net.num_params() as u32)?;
    for &p in net.params() {
        w.write_f32::<LittleEndian>(p as f32)?;
    }
    Ok(())
}

fn read_net<R: Read>(r: &mut R) -> Result<(String, Mlp)> {
    let len = r.read_u16::<LittleEndian>()? as usize;
    let mut name = vec![0u8; len];
    r.read_exact(&mut name)?;
    let name = String::from_utf8(name).map_err(|_| bad("network name is not UTF-8"))?;
    let input_dim = r.read_u32::<LittleEndian>()? as usize;
    let n_hidden = r.read_u32::<LittleEndian>()? as usize;
    if n_hidden > 64 {
        return Err(bad(format!("network '{name}' claims {n_hidden} hidden layers")));
    }
    let hidden: Vec<usize> = (0..n_hidden).map(|_| r.read_u32::<LittleEndian>().map(|v| v as usize)).collect::<std::io::Result<_>>()?;
    let output_dim = r.read_u32::<LittleEndian>()? as usize;
    let activation = match r.read_u8()? {
        0 => Activation::Elu,
        1 => Activation::Identity,
        other => return Err(bad(format!("network '{name}': unknown activation tag {other}"))),
    };
    let normalize = r.read_u8()? != 0;
    let log_std_dim = r.read_u32::<LittleEndian>()? as usize;
    let n_params = r.read_u32::<LittleEndian>()? as usize;
    let mut spec = MlpSpec::new(input_dim, &hidden, output_dim).with_activation(activation);
    spec.normalize_output = normalize;
    spec.validate().map_err(|e| bad(format!("network '{name}': {e}")))?;
    if n_params != spec.num_layer_params() + log_std_dim {
        return Err(bad(format!("network '{name}': {n_params} parameters do not match its spec")));
    }
    let params = (0..n_params)
        .map(|_| r.read_f32::<LittleEndian>().map(f64::from))
        .collect::<std::io::Result<Vec<_>>>()?;
    let net = Mlp::from_params(spec, params, log_std_dim)?;
    Ok((name, net))
}

pub fn save(path: &Path, config: &RunConfig, iteration: u64, nets: &AgentNets) -> Result<()> {
    if let Some(dir) = path.parent() {
        if !dir.as_os_str().is_empty() {
            std::fs::create_dir_all(dir)?;
        }
    }
    let mut buf = Vec::new();
    buf.write_all(MAGIC)?;
    buf.write_u32::<LittleEndian>(FORMAT_VERSION)?;
    buf.write_all(&config.hash())?;
    let text = config.to_toml();
    buf.write_u32::<LittleEndian>(text.len() as u32)?;
    buf.write_all(text.as_bytes())?;
    buf.write_u64::<LittleEndian>(iteration)?;
    let named = nets.named();
    buf.write_u32::<LittleEndian>(named.len() as u32)?;
    for (name, net) in named {
        write_net(&mut buf, name, net)?;
    }
    buf.write_u8(0)?;
    // write-then-rename so a crash never leaves a torn checkpoint
    let tmp = path.with_extension("tmp");
    std::fs::write(&tmp, &buf)?;
    std::fs::rename(&tmp, path)?;
    Ok(())
}

pub fn load(path: &Path) -> Result<Checkpoint> {
    let bytes = std::fs::read(path).map_err(|e| bad(format!("cannot read {}: {e}", path.display())))?;
    let mut r = bytes.as_slice();
    let mut magic = [0u8; 8];
    r.read_exact(&mut magic).map_err(|_| bad("file too short for a checkpoint header"))?;
    if &magic != MAGIC {
        return Err(bad("bad magic: not a checkpoint file"));
    }
    let version = r.read_u32::<LittleEndian>()?;
    if version != FORMAT_VERSION {
        return Err(bad(format!("unsupported format version {version} (expected {FORMAT_VERSION})")));
    }
    let mut config_hash = [0u8; 32];
    r.read_exact(&mut config_hash)?;
    let len = r.read_u32::<LittleEndian>()? as usize;
    if len > r.len() {
        return Err(bad("truncated config section"));
    }
    let text = std::str::from_utf8(&r[..len]).map_err(|_| bad("config is not UTF-8"))?.to_string();
    r = &r[len..];
    let config = RunConfig::from_toml(&text)?;
    if config.hash() != config_hash {
        return Err(bad("config hash in header does not match the embedded config"));
    }
    let iteration = r.read_u64::<LittleEndian>()?;
    let count = r.read_u32::<LittleEndian>()? as usize;
    let mut nets = Vec::with_capacity(count);
    for _ in 0..count {
        nets.push(read_net(&mut r)?);
    }
    let _optimizer_flag = r.read_u8()?;
    if !r.is_empty() {
        return Err(bad("trailing bytes after checkpoint body"));
    }

    let take = |name: &str, nets: &mut Vec<(String, Mlp)>| -> Result<Mlp> {
        let i = nets.iter().position(|(n, _)| n == name).ok_or_else(|| bad(format!("missing network '{name}'")))?;
        Ok(nets.remove(i).1)
    };
    let teacher_encoder = take("teacher_encoder", &mut nets)?;
    let student_encoder = take("student_encoder", &mut nets)?;
    let policy = take("policy", &mut nets)?;
    let critic = take("critic", &mut nets)?;
    let estimator = take("estimator", &mut nets).ok();

    let dims = dims_for(&config)?;
    let latent_dim = config.latent_dim;
    let est_dim = estimator.as_ref().map_or(0, |e| e.spec().output_dim);
    let expect = [
        ("teacher_encoder", teacher_encoder.spec().input_dim, dims.privileged),
        ("teacher_encoder output", teacher_encoder.spec().output_dim, latent_dim),
        ("student_encoder", student_encoder.spec().input_dim, dims.history_input()),
        ("policy", policy.spec().input_dim, dims.proprio + latent_dim + est_dim),
        ("policy output", policy.spec().output_dim, dims.action),
        ("critic", critic.spec().input_dim, dims.privileged + latent_dim),
    ];
    for (what, got, want) in expect {
        if got != want {
            return Err(bad(format!("{what} has width {got}, the config implies {want}")));
        }
    }
    Ok(Checkpoint {
        config,
        config_hash,
        iteration,
        nets: AgentNets { teacher_encoder, student_encoder, policy, critic, estimator, dims, latent_dim },
    })
}

/// SHA-256 of a file's bytes.
pub fn file_hash(path: &Path) -> Result<[u8; 32]> {
    use sha2::{Digest, Sha256};
    Ok(Sha256::digest(std::fs::read(path)?).into())
}
