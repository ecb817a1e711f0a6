//! Compact convolutional embedding network shared by the HR and LR branches,
//! plus its checkpoint container.

mod checkpoint;
mod network;

pub use checkpoint::{ArrayData, ArrayRecord, Checkpoint, FORMAT_VERSION, MAGIC};
pub use network::{
    center_output_bias, embed, embed_inference, init_network, network_backward, ForwardCache, NetworkConfig,
    NetworkParams, StageParams, PRELU_INIT,
};

use crate::error::{Error, Result};
use crate::numerics::Real;

/// Store the network configuration and every parameter array.
pub fn write_params<T: Real>(ck: &mut Checkpoint, params: &NetworkParams<T>) {
    let cfg = &params.config;
    let widths: Vec<f64> = cfg.channel_widths.iter().map(|&w| w as f64).collect();
    ck.insert_scalars("config.channel_widths", &widths);
    ck.insert_scalars("config.embedding_dim", &[cfg.embedding_dim as f64]);
    ck.insert_scalars("config.input_size", &[cfg.input_size as f64]);
    for (name, t) in params.tensors() {
        ck.insert(&name, t);
    }
}

pub fn read_config(ck: &Checkpoint) -> Result<NetworkConfig> {
    let as_usize = |v: f64, what: &str| -> Result<usize> {
        if v >= 0.0 && v.fract() == 0.0 {
            Ok(v as usize)
        } else {
            Err(Error::Checkpoint(format!("{what} is not a count: {v}")))
        }
    };
    let widths = ck
        .scalars("config.channel_widths")?
        .into_iter()
        .map(|v| as_usize(v, "channel width"))
        .collect::<Result<Vec<_>>>()?;
    let embedding_dim = as_usize(
        *ck.scalars("config.embedding_dim")?.first().unwrap_or(&0.0),
        "embedding_dim",
    )?;
    let input_size = as_usize(
        *ck.scalars("config.input_size")?.first().unwrap_or(&0.0),
        "input_size",
    )?;
    let cfg = NetworkConfig {
        channel_widths: widths,
        embedding_dim,
        input_size,
    };
    cfg.validate()?;
    Ok(cfg)
}

pub fn read_params<T: Real>(ck: &Checkpoint) -> Result<NetworkParams<T>> {
    let cfg = read_config(ck)?;
    NetworkParams::from_named(&cfg, |name| ck.tensor(name).ok())
}
