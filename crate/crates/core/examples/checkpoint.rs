//! Writing and reading the FCAZ named-tensor archive.
//!
//!     cargo run --release --example checkpoint

use sparse_fca::bench::checkpoint::{from_bytes, to_bytes, MAGIC, VERSION};
use sparse_fca::encoder::{EncoderConfig, PointEncoder};
use sparse_fca::params::Parameters;

fn main() -> sparse_fca::Result<()> {
    let model = PointEncoder::init(&EncoderConfig::default(), 3)?;
    let tensors = model.named_tensors();
    let bytes = to_bytes(&tensors)?;
    println!(
        "{} tensors, {} bytes, magic {:?}, version {VERSION}",
        tensors.len(),
        bytes.len(),
        std::str::from_utf8(MAGIC).unwrap()
    );
    for (name, t) in tensors.iter().take(4) {
        println!("  {name:<28} {:?}", t.dims());
    }
    let back = from_bytes(&bytes)?;
    println!("re-encoded bytes identical: {}", to_bytes(&back)? == bytes);

    let mut truncated = bytes.clone();
    truncated.truncate(bytes.len() - 3);
    println!("truncated archive: {}", from_bytes(&truncated).unwrap_err());
    let mut future = bytes;
    future[4..8].copy_from_slice(&(VERSION + 1).to_le_bytes());
    println!("future version: {}", from_bytes(&future).unwrap_err());
    Ok(())
}
