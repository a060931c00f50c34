//! Attaching an FCA stack to a frozen encoder and rolling it back.
//!
//!     cargo run --release --example rollback

use sparse_fca::encoder::{encode, EncoderConfig, PointEncoder};
use sparse_fca::fca::FcaStack;
use sparse_fca::geometry::{downsample_uniform, sample_shape, ShapeSpec};
use sparse_fca::params::Parameters;

fn main() -> sparse_fca::Result<()> {
    let model = PointEncoder::init(&EncoderConfig::default(), 0)?;
    let mut fca = FcaStack::init(&model, 12, 1, true)?;
    println!(
        "encoder: {} frozen scalars, FCA stack: {} trainable scalars over {} layers",
        model.num_scalars(),
        fca.num_scalars(),
        fca.layers.len()
    );

    // Perturb the tokens so the attached stack visibly changes the output.
    for (name, t) in fca.named_tensors_mut() {
        if name.ends_with("tokens") {
            t.data_mut().iter_mut().for_each(|v| *v += 0.5);
        }
    }

    let pc = downsample_uniform(
        &sample_shape(&ShapeSpec::new("helix", 0.1, 0.01)?, 512, 5)?,
        64,
        2,
    )?;
    let bare = encode(&model, &pc, None)?;
    let attached = encode(&model, &pc, Some(&fca))?;
    fca.detach();
    let detached = encode(&model, &pc, Some(&fca))?;
    println!(
        "max |attached - bare| = {:.4}",
        attached.max_abs_diff(&bare)
    );
    println!(
        "detached output bit-identical to bare: {}",
        detached.bit_eq(&bare)
    );
    fca.attach(&model)?;
    println!(
        "re-attached matches attached: {}",
        encode(&model, &pc, Some(&fca))?.bit_eq(&attached)
    );
    Ok(())
}
