//! Regenerates the bundled fixtures under crates/cli/fixtures/.
//! Run from the workspace root: cargo run -p focal-cli --example gen_fixtures

use std::path::Path;

use rand::prelude::*;
use rand_chacha::ChaCha8Rng;

const PIXELS: usize = 64;
const FRAMES: usize = 32;
const PERIOD: usize = 8;

fn frames(kind: &str) -> Vec<Vec<f64>> {
    let mut rng = ChaCha8Rng::seed_from_u64(0x0f1c);
    let mut noise =
        || -> Vec<f64> { (0..PIXELS).map(|_| rng.random::<f64>() * 255.0).collect() };
    match kind {
        "repeat" => {
            let base: Vec<Vec<f64>> = (0..PERIOD).map(|_| noise()).collect();
            (0..FRAMES).map(|i| base[i % PERIOD].clone()).collect()
        }
        "noise" => (0..FRAMES).map(|_| noise()).collect(),
        "constant" => vec![vec![127.0; PIXELS]; FRAMES],
        other => panic!("unknown fixture kind {other}"),
    }
}

fn main() {
    let dir = Path::new(env!("CARGO_MANIFEST_DIR")).join("fixtures");
    std::fs::create_dir_all(&dir).unwrap();
    for kind in ["repeat", "noise", "constant"] {
        let clip = frames(kind);
        let flat: Vec<f64> = clip.iter().flatten().cloned().collect();
        let path = dir.join(format!("{kind}.tnsr"));
        focal_core::tensorio::write_tensor_f64(&path, &[FRAMES, PIXELS], &flat).unwrap();
        println!("wrote {}", path.display());
    }

    let config = serde_json::json!({
        "rope": {
            "d_t": 6, "d_h": 0, "d_w": 0,
            "freq_t": [
                4.0 * std::f64::consts::TAU / 8.0,
                2.0 * std::f64::consts::TAU / 8.0,
                std::f64::consts::TAU / 8.0
            ],
            "freq_h": [], "freq_w": []
        },
        "plant": {
            "target_amps": [1.0, 1.0, 2.0],
            "grid": {"t_len": 24, "h_len": 1, "w_len": 1},
            "seed": 5
        },
        "policy": {
            "strategy": {"kind": "constant", "alpha": 0.9},
            "train_window": 8,
            "seq_len": 24,
            "position_mode": "temporal-frame"
        },
        "alphas": [1.0, 0.95, 0.9, 0.8, 0.5],
        "mask_proportions": [0.0, 0.5, 1.0],
        "value_dim": 6
    });
    let path = dir.join("simulate_planted.json");
    std::fs::write(&path, serde_json::to_string_pretty(&config).unwrap()).unwrap();
    println!("wrote {}", path.display());
}
