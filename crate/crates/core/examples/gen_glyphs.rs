//! Generate a synthetic glyph dataset in IDX layout.
//!
//! Usage: gen_glyphs <out-dir> <count> <side> <seed>

use bplf_core::data::synth::write_glyph_dataset;

fn main() {
    let args: Vec<String> = std::env::args().collect();
    if args.len() != 5 {
        eprintln!("usage: gen_glyphs <out-dir> <count> <side> <seed>");
        std::process::exit(1);
    }
    let dir = std::path::PathBuf::from(&args[1]);
    let count: usize = args[2].parse().expect("count");
    let side: usize = args[3].parse().expect("side");
    let seed: u64 = args[4].parse().expect("seed");
    std::fs::create_dir_all(&dir).expect("create output dir");
    write_glyph_dataset(&dir, count, side, seed).expect("write dataset");
    println!("wrote {count} {side}x{side} glyphs to {}", dir.display());
}
