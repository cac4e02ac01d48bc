//! `key = value` configuration text: the CLI config-file format and the
//! checkpoint's embedded config block. UTF-8 lines, `#` comments, unknown
//! keys are errors.

use super::TrainConfig;
use crate::error::{Error, Result};
use crate::model::ModelConfig;

pub fn config_to_text(cfg: &ModelConfig) -> String {
    format!(
        "n = {}\nl = {}\np = {}\nr_a = {}\nr_f = {}\ns = {}\nw_q = {}\na_q = {}\nt0 = {}\n\
         k = {}\nx = {}\nmics = {}\nu = {}\nd_face = {}\nfps = {}\nsample_rate = {}\n\
         causal = {}\nuse_context_codec = {}\ncodec_depth = {}\n",
        cfg.n,
        cfg.l,
        cfg.p,
        cfg.r_a,
        cfg.r_f,
        cfg.s,
        cfg.w_q,
        cfg.a_q,
        cfg.t0,
        cfg.k,
        cfg.x,
        cfg.mics,
        cfg.u,
        cfg.d_face,
        cfg.fps,
        cfg.sample_rate,
        cfg.causal,
        cfg.use_context_codec,
        cfg.codec_depth,
    )
}

fn parse_usize(key: &str, v: &str) -> Result<usize> {
    v.parse().map_err(|_| Error::Config(format!("key `{key}`: `{v}` is not a non-negative integer")))
}

fn parse_u32(key: &str, v: &str) -> Result<u32> {
    v.parse().map_err(|_| Error::Config(format!("key `{key}`: `{v}` is not a 32-bit integer")))
}

fn parse_u64(key: &str, v: &str) -> Result<u64> {
    v.parse().map_err(|_| Error::Config(format!("key `{key}`: `{v}` is not a 64-bit integer")))
}

fn parse_f64(key: &str, v: &str) -> Result<f64> {
    v.parse().map_err(|_| Error::Config(format!("key `{key}`: `{v}` is not a number")))
}

fn parse_bool(key: &str, v: &str) -> Result<bool> {
    match v {
        "true" | "1" | "yes" => Ok(true),
        "false" | "0" | "no" => Ok(false),
        _ => Err(Error::Config(format!("key `{key}`: `{v}` is not a boolean"))),
    }
}

fn apply_model_key(cfg: &mut ModelConfig, key: &str, v: &str) -> Result<bool> {
    match key {
        "n" => cfg.n = parse_usize(key, v)?,
        "l" => cfg.l = parse_usize(key, v)?,
        "p" => cfg.p = parse_usize(key, v)?,
        "r_a" => cfg.r_a = parse_usize(key, v)?,
        "r_f" => cfg.r_f = parse_usize(key, v)?,
        "s" => cfg.s = parse_usize(key, v)?,
        "w_q" => cfg.w_q = parse_u32(key, v)?,
        "a_q" => cfg.a_q = parse_u32(key, v)?,
        "t0" => cfg.t0 = parse_f64(key, v)?,
        "k" => cfg.k = parse_usize(key, v)?,
        "x" => cfg.x = parse_usize(key, v)?,
        "mics" => cfg.mics = parse_usize(key, v)?,
        "u" => cfg.u = parse_usize(key, v)?,
        "d_face" => cfg.d_face = parse_usize(key, v)?,
        "fps" => cfg.fps = parse_usize(key, v)?,
        "sample_rate" => cfg.sample_rate = parse_usize(key, v)?,
        "causal" => cfg.causal = parse_bool(key, v)?,
        "use_context_codec" => cfg.use_context_codec = parse_bool(key, v)?,
        "codec_depth" => cfg.codec_depth = parse_usize(key, v)?,
        _ => return Ok(false),
    }
    Ok(true)
}

fn apply_train_key(cfg: &mut TrainConfig, key: &str, v: &str) -> Result<bool> {
    match key {
        "lr_init" => cfg.lr_init = parse_f64(key, v)?,
        "max_epochs" => cfg.max_epochs = parse_usize(key, v)?,
        "patience_halve" => cfg.patience_halve = parse_usize(key, v)?,
        "patience_stop" => cfg.patience_stop = parse_usize(key, v)?,
        "clip_norm" => cfg.clip_norm = parse_f64(key, v)?,
        "beta1" => cfg.beta1 = parse_f64(key, v)?,
        "beta2" => cfg.beta2 = parse_f64(key, v)?,
        "eps" => cfg.eps = parse_f64(key, v)?,
        "batch_size" => cfg.batch_size = parse_usize(key, v)?,
        "seed" => cfg.seed = parse_u64(key, v)?,
        _ => return Ok(false),
    }
    Ok(true)
}

fn lines_of(text: &str) -> impl Iterator<Item = (usize, Result<(&str, &str)>)> {
    text.lines().enumerate().filter_map(|(i, raw)| {
        let line = raw.split('#').next().unwrap_or("").trim();
        if line.is_empty() {
            return None;
        }
        let parsed = match line.split_once('=') {
            Some((k, v)) => Ok((k.trim(), v.trim())),
            None => Err(Error::Config(format!("line {}: expected `key = value`, got `{raw}`", i + 1))),
        };
        Some((i + 1, parsed))
    })
}

/// Model config only (the checkpoint's embedded block).
pub fn config_from_text(text: &str) -> Result<ModelConfig> {
    let mut cfg = ModelConfig::default();
    for (lineno, kv) in lines_of(text) {
        let (key, value) = kv?;
        if !apply_model_key(&mut cfg, key, value)? {
            return Err(Error::Config(format!("line {lineno}: unknown key `{key}`")));
        }
    }
    Ok(cfg)
}

/// Combined model + training configuration (the CLI config file).
pub fn train_config_from_text(text: &str) -> Result<(ModelConfig, TrainConfig)> {
    let mut model = ModelConfig::default();
    let mut train = TrainConfig::default();
    for (lineno, kv) in lines_of(text) {
        let (key, value) = kv?;
        if !apply_model_key(&mut model, key, value)?
            && !apply_train_key(&mut train, key, value)?
        {
            return Err(Error::Config(format!("line {lineno}: unknown key `{key}`")));
        }
    }
    model.validate()?;
    train.validate()?;
    Ok((model, train))
}
