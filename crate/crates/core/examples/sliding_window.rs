//! Sliding-window inference on an image larger than one patch.
//!
//! cargo run --release --example sliding_window [side]

use mudiknn::synthetic::{generate_scene, SceneConfig};
use mudiknn::train::{predict_image, sliding_window_positions, DEFAULT_STEP};
use mudiknn::{ModelConfig, MudModel};

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let side: usize = std::env::args().nth(1).as_deref().unwrap_or("352").parse()?;
    let scene = generate_scene(&SceneConfig {
        seed: 11,
        width: side,
        height: side,
        ..Default::default()
    })?;
    let windows = sliding_window_positions(side, side, 224, DEFAULT_STEP)?;
    println!("{side}x{side} image, {} windows at {windows:?}", windows.len());

    let mut model = MudModel::<f32>::new(ModelConfig::default())?;
    // Untrained weights with count biases at a plausible per-patch count.
    model.set_count_biases(20.0);
    let pred = predict_image(&model, &scene.image, DEFAULT_STEP)?;
    println!(
        "predicted count {:.2} (true {}), map {}x{}, map sum {:.3}",
        pred.count,
        scene.annotations.count(),
        pred.width,
        pred.height,
        pred.map.iter().sum::<f64>()
    );
    Ok(())
}
