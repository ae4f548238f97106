//! The synth command: write self-contained scene bundles with exact ground
//! truth, in the same formats real datasets arrive in.

use std::path::PathBuf;

use anyhow::{bail, Context, Result};
use taxfuse_core::synthetic::{
    generate, standard_scene_spec, write_scene_bundle, NoiseParams, Scene, SceneWorld,
};

#[derive(Debug, clap::Args)]
pub struct SynthArgs {
    /// Output dataset directory.
    #[arg(long)]
    pub out: PathBuf,

    /// Scene seeds: "1-20", "3,5,9", or a mix.
    #[arg(long, default_value = "1-20")]
    pub seeds: String,

    #[arg(long, default_value_t = 256)]
    pub width: u32,

    #[arg(long, default_value_t = 256)]
    pub height: u32,

    /// Per-pixel probability that the coarse prediction is rewritten.
    #[arg(long, default_value_t = 0.0)]
    pub corruption: f64,

    /// Boundary jitter radius in pixels.
    #[arg(long, default_value_t = 0)]
    pub jitter: u32,

    /// Norm bound for encoder noise.
    #[arg(long, default_value_t = 0.0)]
    pub eta: f64,

    /// Seed for the encoder recipe, separate from the scene seeds.
    #[arg(long, default_value_t = 42)]
    pub seed: u64,
}

fn parse_seeds(text: &str) -> Result<Vec<u64>> {
    let mut out = Vec::new();
    for token in text.split(',') {
        let token = token.trim();
        if token.is_empty() {
            continue;
        }
        match token.split_once('-') {
            Some((lo, hi)) => {
                let lo: u64 = lo.trim().parse().with_context(|| format!("bad seed range {token:?}"))?;
                let hi: u64 = hi.trim().parse().with_context(|| format!("bad seed range {token:?}"))?;
                if lo > hi {
                    bail!("seed range {token:?} runs backwards");
                }
                out.extend(lo..=hi);
            }
            None => out.push(token.parse().with_context(|| format!("bad seed {token:?}"))?),
        }
    }
    if out.is_empty() {
        bail!("no seeds given");
    }
    Ok(out)
}

pub fn run(args: SynthArgs) -> Result<u8> {
    let seeds = parse_seeds(&args.seeds)?;
    let noise = NoiseParams {
        corruption: args.corruption,
        jitter: args.jitter,
        eta: args.eta,
    };
    noise.validate()?;
    let world = SceneWorld::standard(args.eta, args.seed)?;
    let mut scenes: Vec<(String, Scene)> = Vec::with_capacity(seeds.len());
    for &seed in &seeds {
        let spec = standard_scene_spec(&world, seed, args.width, args.height, noise)?;
        let (scene, _encoder) = generate(&spec).with_context(|| format!("scene seed {seed}"))?;
        scenes.push((format!("scene_{seed:04}"), scene));
    }
    write_scene_bundle(&args.out, &world, &scenes)?;
    println!(
        "wrote {} scenes ({}x{}) to {}",
        scenes.len(),
        args.width,
        args.height,
        args.out.display()
    );
    Ok(0)
}
