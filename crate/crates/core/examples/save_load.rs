//! Write a model and a dataset to disk and read them back.

use splitquant::eval::{generate_outlier_mlp, generate_teacher_dataset, load_dataset, save_dataset};
use splitquant::ir::{execute, load_model, save_model, TensorMap};

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let dir = std::env::temp_dir().join(format!("splitquant-save-load-{}", std::process::id()));
    std::fs::create_dir_all(&dir)?;
    let g = generate_outlier_mlp(1, 2, 16, 0.05, 20.0)?;
    let d = generate_teacher_dataset(&g, 1, 8)?;
    save_model(&g, dir.join("mlp.toml"))?;
    save_dataset(&d, dir.join("data.toml"))?;

    let manifest = std::fs::read_to_string(dir.join("mlp.toml"))?;
    for line in manifest.lines().take(16) {
        println!("{line}");
    }
    println!("...");
    let back = load_model(dir.join("mlp.toml"))?;
    let data = load_dataset(dir.join("data.toml"))?;
    let x = TensorMap::from([("x".to_string(), data.features[0].clone())]);
    println!("model unchanged: {}", back == g);
    println!("outputs identical: {}", execute(&g, &x)? == execute(&back, &x)?);
    println!("labels {:?} from {}", data.labels, data.source);
    std::fs::remove_dir_all(&dir)?;
    Ok(())
}
