//! Generate a synthetic scene, write it as a bundle, validate and read it back.
//!
//! `cargo run --example simulate_export -- [out_dir]`

use std::path::PathBuf;

use fourdkit::bundle::{read_bundle, validate_bundle};
use fourdkit::synth::{export_bundle, SceneConfig};

fn main() -> fourdkit::Result<()> {
    let out = std::env::args().nth(1).map(PathBuf::from).unwrap_or_else(|| std::env::temp_dir().join("fourdkit-demo"));
    let cfg = SceneConfig::from_toml(include_str!("../../../configs/orbit.toml"))?;
    let m = export_bundle(&cfg, &out)?;
    println!("wrote {} views of {}x{} to {}", m.num_views, m.width, m.height, out.display());

    let problems = validate_bundle(&out);
    println!("validation: {} problem(s)", problems.len());

    let seq = read_bundle(&out)?;
    let dynamic: usize = seq.views.iter().map(|v| v.motion_mask.as_ref().map_or(0, |m| m.count())).sum();
    println!(
        "read back: {} views, scale {} m/unit, motion {}, {dynamic} moving pixels over all frames",
        seq.len(),
        seq.scale.value(),
        seq.motion_repr
    );
    Ok(())
}
