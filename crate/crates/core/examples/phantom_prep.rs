//! Generate paired phantoms, preprocess them, and write volumes plus PGM previews.
//!
//! ```sh
//! cargo run --release --example phantom_prep [out_dir] [count]
//! ```

use std::path::PathBuf;

use driftct::config::RunConfig;
use driftct::data::read_volume;
use driftct::pipeline;

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let mut args = std::env::args().skip(1);
    let out = PathBuf::from(args.next().unwrap_or_else(|| "phantom_demo".into()));
    let count = args.next().map(|s| s.parse()).transpose()?.unwrap_or(4);
    let cfg = RunConfig::default();

    let (raw, prep) = (out.join("raw"), out.join("prep"));
    let (manifest, digest) = pipeline::phantom(&cfg, &raw, count)?;
    println!("{} phantom pairs in {} (manifest sha256 {digest})", manifest.count, raw.display());

    let records = pipeline::prep(&cfg, &raw, &prep)?;
    for r in &records {
        println!("{}: shape {:?}, condition {:?}", r.subject, r.shape, r.condition);
    }

    for i in 0..count {
        let name = pipeline::subject_name(i);
        for (suffix, what) in [("_cond", "condition"), ("_target", "target")] {
            let v = read_volume(&prep.join(format!("{name}{suffix}")))?;
            let [_, ny, nx] = v.shape();
            let pgm = prep.join(format!("{name}{suffix}.pgm"));
            driftct::data::write_pgm(&pgm, nx, ny, v.slice(0), 0.0, 1.0)?;
            let mean = v.values().iter().sum::<f64>() / v.values().len() as f64;
            println!("  {what:<9} mean {mean:.3} -> {}", pgm.display());
        }
    }
    Ok(())
}
