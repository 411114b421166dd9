//! Regenerates the shipped example manifests under `fixtures/`.
//!
//! ```text
//! cargo run -p vta-cli --example make_fixtures -- fixtures
//! ```

use std::path::{Path, PathBuf};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde_json::{json, Value};
use vta_core::tensorfront::lenet5;

fn i8_bytes(values: &[i32]) -> Vec<u8> {
    values.iter().map(|&v| v as i8 as u8).collect()
}

fn i32_bytes(values: &[i32]) -> Vec<u8> {
    values.iter().flat_map(|v| v.to_le_bytes()).collect()
}

fn random(rng: &mut ChaCha8Rng, n: usize, lo: i32, hi: i32) -> Vec<i32> {
    (0..n).map(|_| rng.gen_range(lo..=hi)).collect()
}

fn write(dir: &Path, name: &str, bytes: &[u8]) {
    std::fs::write(dir.join(name), bytes).unwrap_or_else(|e| panic!("writing {name}: {e}"));
}

fn write_manifest(dir: &Path, manifest: &Value) {
    let mut text = serde_json::to_string_pretty(manifest).unwrap();
    text.push('\n');
    write(dir, "manifest.json", text.as_bytes());
}

fn fixture(root: &Path, name: &str) -> PathBuf {
    let dir = root.join(name);
    std::fs::create_dir_all(&dir).unwrap();
    dir
}

fn main() {
    let root = PathBuf::from(std::env::args().nth(1).unwrap_or_else(|| "fixtures".into()));
    let mut rng = ChaCha8Rng::seed_from_u64(2024);

    // 16x16 GEMM followed by ReLU
    let dir = fixture(&root, "matmul16");
    write(&dir, "a.bin", &i8_bytes(&random(&mut rng, 256, -128, 127)));
    write(&dir, "b.bin", &i8_bytes(&random(&mut rng, 256, -128, 127)));
    write_manifest(
        &dir,
        &json!({
            "kind": "matmul",
            "a": {"rows": 16, "cols": 16, "file": "a.bin"},
            "b": {"rows": 16, "cols": 16, "file": "b.bin"},
            "post_ops": [{"op": "relu"}]
        }),
    );

    // unaligned shapes with an accumulator preload and requantisation
    let dir = fixture(&root, "matmul_bias");
    write(&dir, "a.bin", &i8_bytes(&random(&mut rng, 30 * 50, -128, 127)));
    write(&dir, "b.bin", &i8_bytes(&random(&mut rng, 50 * 20, -128, 127)));
    write(&dir, "x.bin", &i32_bytes(&random(&mut rng, 30 * 20, -20000, 20000)));
    write_manifest(
        &dir,
        &json!({
            "config": {"block_size": 8},
            "kind": "matmul",
            "a": {"rows": 30, "cols": 50, "file": "a.bin"},
            "b": {"rows": 50, "cols": 20, "file": "b.bin"},
            "x": {"rows": 30, "cols": 20, "file": "x.bin"},
            "post_ops": [{"op": "requant", "shift": 7}, {"op": "relu"}]
        }),
    );

    // LeNet-5 with synthetic int8 parameters and 20 random inputs
    let dir = fixture(&root, "lenet5");
    let mut wr = ChaCha8Rng::seed_from_u64(5);
    let mut br = ChaCha8Rng::seed_from_u64(6);
    let layers = lenet5(move || wr.gen_range(-16..=16), move || br.gen_range(-512..=512));
    let (mut weights, mut biases, mut entries) = (Vec::new(), Vec::new(), Vec::new());
    for l in &layers {
        let mut entry = serde_json::to_value(l.geometry).unwrap();
        let obj = entry.as_object_mut().unwrap();
        obj.insert("name".into(), json!(l.name));
        obj.insert("weights".into(), json!({"file": "weights.bin", "offset": weights.len()}));
        obj.insert("bias".into(), json!({"file": "bias.bin", "offset": biases.len()}));
        weights.extend_from_slice(&l.weights);
        biases.extend_from_slice(l.bias.as_deref().unwrap_or_default());
        entries.push(entry);
    }
    write(&dir, "weights.bin", &i8_bytes(&weights));
    write(&dir, "bias.bin", &i32_bytes(&biases));
    write(&dir, "input.bin", &i8_bytes(&random(&mut rng, 20 * 32 * 32, -128, 127)));
    write_manifest(
        &dir,
        &json!({
            "kind": "network",
            "input": {"shape": [20, 1, 32, 32], "file": "input.bin"},
            "layers": entries
        }),
    );
    println!("fixtures written to {}", root.display());
}
