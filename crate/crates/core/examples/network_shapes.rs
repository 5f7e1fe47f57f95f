//! Feature and map shapes through every stage of the network, at the desk
//! width and at the wide densely connected width.
//!
//! cargo run --release --example network_shapes

use mudiknn::model::{BackboneConfig, MapModule, MapModuleSpec, ModelConfig, MudModel, STAGE_STRIDES};
use mudiknn::Tensor;

fn main() -> Result<(), Box<dyn std::error::Error>> {
    for (name, backbone) in [("desk", BackboneConfig::desk()), ("wide", BackboneConfig::paper_scale())] {
        let model = MudModel::<f32>::new(ModelConfig {
            backbone,
            ..Default::default()
        })?;
        let patch = Tensor::full(&[3, 224, 224], 0.5f32);
        let features = model.backbone_forward(&patch)?;
        println!("{name} backbone ({} parameters)", model.param_count());
        for (j, f) in features.iter().enumerate() {
            let (map, count) = model.map_module_forward(j, f)?;
            println!(
                "  stage {} {:?} -> transposed conv stride {} -> map {:?}, count {count:.3}",
                j + 1,
                f.shape(),
                STAGE_STRIDES[j],
                map.shape()
            );
        }
    }

    // The convolution stack that reduces a map to a count.
    let module = MapModule::<f32>::new(
        MapModuleSpec {
            in_channels: 128,
            stride: 8,
            patch: 224,
            stack: vec![8, 16, 32],
        },
        0,
        0.01,
    )?;
    let shapes = module.stage_shapes(&Tensor::full(&[128, 28, 28], 0.1f32))?;
    println!("map stack: {}", shapes.iter().map(|s| format!("{s:?}")).collect::<Vec<_>>().join(" -> "));
    Ok(())
}
