//! Writes a MATLAB cube and label map, converts both to the native
//! container, and reads them back.
//!
//! ```text
//! cargo run --example convert_container
//! ```

use afnet::hsio::mat::{convert_mat, write_mat, ConvertKind, ConvertOptions, MatArray};
use afnet::hsio::{load_cube, load_ground_truth, read_header, validate_pair, ClassLegend};
use afnet::synthetic::field_scene;

fn main() -> afnet::Result<()> {
    let dir = tempfile::tempdir().expect("temp dir");
    let (h, w, l) = (12, 10, 8);
    let (cube, gt) = field_scene(h, w, l, 4, 1)?;

    // MATLAB stores arrays column-major
    let mut data = vec![0.0; h * w * l];
    for r in 0..h {
        for c in 0..w {
            for b in 0..l {
                data[r + h * (c + w * b)] = cube.get(r, c, b);
            }
        }
    }
    let labels: Vec<f64> = (0..h * w).map(|i| gt.get(i % h, i / h) as f64).collect();
    let cube_mat = dir.path().join("scene.mat");
    let gt_mat = dir.path().join("scene_gt.mat");
    std::fs::write(&cube_mat, write_mat(&[MatArray { name: "scene".into(), dims: vec![h, w, l], data }])).unwrap();
    std::fs::write(&gt_mat, write_mat(&[MatArray { name: "scene_gt".into(), dims: vec![h, w], data: labels }])).unwrap();

    let cube_out = dir.path().join("scene.hsij");
    let gt_out = dir.path().join("scene_gt.hsij");
    let opts = ConvertOptions {
        name: Some("scene".into()),
        removed_bands: vec![1, 8],
        ..ConvertOptions::default()
    };
    convert_mat(&cube_mat, &cube_out, ConvertKind::Cube, &opts)?;
    let labels_opts = ConvertOptions {
        legend: Some(ClassLegend::generated(4)),
        ..ConvertOptions::default()
    };
    convert_mat(&gt_mat, &gt_out, ConvertKind::Labels, &labels_opts)?;

    let header = read_header(&cube_out)?;
    println!("header: {}", serde_json::to_string(&header).unwrap());
    let back = load_cube(&cube_out)?;
    let back_gt = load_ground_truth(&gt_out)?;
    let desc = validate_pair(&back, &back_gt)?;
    println!("cube {}x{}x{} (removed {:?})", back.height, back.width, back.bands, back.removed_bands);
    println!("descriptor: {}", serde_json::to_string(&desc).unwrap());
    println!("pixel (0,0) band 2: original {:.5}, stored {:.5}", cube.get(0, 0, 1), back.get(0, 0, 0));
    Ok(())
}
