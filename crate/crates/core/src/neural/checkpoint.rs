//! Network checkpoints: `DRIFTDECOMP-NET v1`, a line with the layer sizes,
//! then the parameter vector as little-endian f64.

use std::fs;
use std::path::Path;

use super::Mlp;
use crate::error::{Error, Result};
use crate::fieldio::{read_f64s, write_f64s};

pub const NET_MAGIC: &str = "DRIFTDECOMP-NET v1";

pub fn encode_checkpoint(net: &Mlp) -> Vec<u8> {
    let sizes: Vec<String> = net.sizes().iter().map(|s| s.to_string()).collect();
    let mut buf = format!("{NET_MAGIC}\n{}\n", sizes.join(" ")).into_bytes();
    write_f64s(&mut buf, net.params()).expect("writing to a Vec cannot fail");
    buf
}

pub fn decode_checkpoint(bytes: &[u8]) -> Result<Mlp> {
    let mut lines = bytes.splitn(3, |&b| b == b'\n');
    let magic = lines.next().unwrap_or_default();
    if magic != NET_MAGIC.as_bytes() {
        return Err(Error::FormatVersionMismatch(format!("missing '{NET_MAGIC}' header")));
    }
    let sizes_line = lines.next().ok_or_else(|| Error::FormatVersionMismatch("missing layer sizes".into()))?;
    let sizes = std::str::from_utf8(sizes_line)
        .ok()
        .and_then(|s| s.split_whitespace().map(|t| t.parse::<usize>().ok()).collect::<Option<Vec<_>>>())
        .ok_or_else(|| Error::FormatVersionMismatch("malformed layer sizes".into()))?;
    let mut payload = lines.next().unwrap_or_default();
    let n = Mlp::param_count(&sizes);
    if payload.len() != n * 8 {
        return Err(Error::FormatVersionMismatch(format!(
            "expected {} parameter bytes, found {}",
            n * 8,
            payload.len()
        )));
    }
    let params = read_f64s(&mut payload, n)?;
    Mlp::from_params(&sizes, params)
}

pub fn save_checkpoint(net: &Mlp, path: impl AsRef<Path>) -> Result<()> {
    fs::write(path, encode_checkpoint(net))?;
    Ok(())
}

pub fn load_checkpoint(path: impl AsRef<Path>) -> Result<Mlp> {
    decode_checkpoint(&fs::read(path)?)
}
