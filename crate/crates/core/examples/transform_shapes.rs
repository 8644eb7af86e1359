//! Shapes and parameter counts of the analysis, hyper and synthesis
//! transforms for the micro configuration.

use dntsc::grid::RgbImage;
use dntsc::model::{Model, ModelConfig, Pipeline};
use dntsc::transforms::TransformConfig;

fn main() -> dntsc::Result<()> {
    let model = Model::new(ModelConfig::new(Pipeline::Ntscc, TransformConfig::micro()))?;
    let image = RgbImage::new(64, 128, vec![0.5; 64 * 128 * 3])?;
    let (y, z) = model.analyze(0, &image)?;
    println!("image 64x128x3 -> latent {:?} -> hyperprior {:?}", y.0.dims(), z.0.dims());
    let params = model.latent_params(0, &z, y.0.h, y.0.w)?;
    println!("entropy parameters {:?}", params.mu.dims());
    let x_hat = model.reconstruct(&y, &y)?;
    println!("reconstruction {}x{}", x_hat.height(), x_hat.width());
    for (module, n) in model.param_counts() {
        println!("{module:>5} {n:8}");
    }
    Ok(())
}
