//! Seeded round-trip cases for checkpoints, IDX files and trajectory CSVs.
//! Each returns a description of the first mismatch.

use bprg::checkpoint::{encode_checkpoint, load_checkpoint, save_checkpoint};
use bprg::data::{encode_idx_images, encode_idx_labels, parse_idx, Dataset, RngState};
use bprg::model::{build_model, LayerSpec, Model};
use bprg::report::{format_trajectory_csv, parse_trajectory_csv};
use bprg::sparsity::{regrow_apply, regrow_candidates, InitRule, MaskSet, RegrowCriterion, Scope};
use bprg::tensor::Tensor;
use bprg::trajectory::{Phase, TrajectoryRecord};

fn dim(rng: &mut RngState, lo: usize, hi: usize) -> usize {
    lo + rng.next_below(hi - lo + 1)
}

/// A random MLP or small CNN, pruned and partly regrown at random.
pub fn random_pruned_model(rng: &mut RngState) -> (Model, MaskSet) {
    let (layers, input): (Vec<LayerSpec>, Vec<usize>) = if rng.next_below(3) == 0 {
        let (ci, co, side, out) = (
            dim(rng, 1, 2),
            dim(rng, 1, 3),
            dim(rng, 3, 5),
            dim(rng, 1, 4),
        );
        let flat = co * (side - 2) * (side - 2);
        (
            vec![
                LayerSpec::Conv3x3 {
                    c_in: ci,
                    c_out: co,
                },
                LayerSpec::Relu,
                LayerSpec::Flatten,
                LayerSpec::Dense {
                    inputs: flat,
                    outputs: out,
                },
            ],
            vec![ci, side, side],
        )
    } else {
        let depth = dim(rng, 1, 3);
        let widths: Vec<usize> = (0..=depth).map(|_| dim(rng, 1, 12)).collect();
        let mut layers = Vec::new();
        for (i, w) in widths.windows(2).enumerate() {
            if i > 0 {
                layers.push(LayerSpec::Relu);
            }
            layers.push(LayerSpec::Dense {
                inputs: w[0],
                outputs: w[1],
            });
        }
        (layers, vec![widths[0]])
    };
    let mut model: Model = build_model(&layers, &input, rng).unwrap();
    let mut ms = MaskSet::dense(&model);
    let scope = if rng.next_below(2) == 0 {
        Scope::Global
    } else {
        Scope::Layerwise
    };
    match rng.next_below(3) {
        0 => {}
        _ => {
            ms.prune_to(&mut model, 0.95 * rng.next_f64(), scope)
                .unwrap();
            let pruned = ms.pruned_count();
            if pruned > 0 {
                let k = rng.next_below(pruned + 1);
                let crit =
                    [RegrowCriterion::Random, RegrowCriterion::RewindMagnitude][rng.next_below(2)];
                let init = [InitRule::Zero, InitRule::Rewind][rng.next_below(2)];
                let cands = regrow_candidates(&ms, crit, k, None, rng).unwrap();
                regrow_apply(&mut ms, &cands, init, &mut model).unwrap();
            }
        }
    }
    (model, ms)
}

pub fn checkpoint_round_trip(seed: u64, dir: &std::path::Path) -> Result<(), String> {
    let mut rng = RngState::new(seed);
    let (model, ms) = random_pruned_model(&mut rng);
    let (first, second) = (
        dir.join(format!("{seed}-a.bprg")),
        dir.join(format!("{seed}-b.bprg")),
    );
    save_checkpoint(&first, &model, &ms).map_err(|e| e.to_string())?;
    let (m2, ms2) = load_checkpoint(&first).map_err(|e| e.to_string())?;
    save_checkpoint(&second, &m2, &ms2).map_err(|e| e.to_string())?;
    let (a, b) = (
        std::fs::read(&first).unwrap(),
        std::fs::read(&second).unwrap(),
    );
    if a != b {
        return Err(format!("seed {seed}: re-saved checkpoint differs"));
    }
    if m2 != model || ms2 != ms {
        return Err(format!("seed {seed}: loaded state differs"));
    }
    if encode_checkpoint(&model, &ms).map_err(|e| e.to_string())? != a {
        return Err(format!("seed {seed}: file differs from in-memory encoding"));
    }
    Ok(())
}

pub fn idx_round_trip(seed: u64) -> Result<(), String> {
    let mut rng = RngState::new(seed);
    let (n, rows, cols) = (
        dim(&mut rng, 1, 20),
        dim(&mut rng, 1, 6),
        dim(&mut rng, 1, 6),
    );
    let pixels: Vec<u8> = (0..n * rows * cols)
        .map(|_| rng.next_below(256) as u8)
        .collect();
    let mut labels: Vec<usize> = (0..n).map(|_| rng.next_below(10)).collect();
    labels[0] = 9;
    let features = Tensor::new(
        vec![n, rows * cols],
        pixels.iter().map(|&p| p as f32 / 255.0).collect(),
    )
    .unwrap();
    let ds = Dataset::new(features, labels, 10).unwrap();

    let images = encode_idx_images(&ds, rows, cols).map_err(|e| e.to_string())?;
    let label_bytes = encode_idx_labels(&ds).map_err(|e| e.to_string())?;
    if images[16..] != pixels[..] {
        return Err(format!("seed {seed}: pixel bytes changed on encode"));
    }
    let back = parse_idx(&images, &label_bytes).map_err(|e| e.to_string())?;
    if back != ds {
        return Err(format!("seed {seed}: decoded dataset differs"));
    }
    let again = encode_idx_images(&back, rows, cols).map_err(|e| e.to_string())?;
    if again != images || encode_idx_labels(&back).map_err(|e| e.to_string())? != label_bytes {
        return Err(format!("seed {seed}: re-encoding differs"));
    }
    Ok(())
}

/// Records whose reals sit on the six-decimal grid the CSV prints.
pub fn random_records(rng: &mut RngState) -> Vec<TrajectoryRecord> {
    let grid = |rng: &mut RngState, max: u64| rng.next_below(max as usize + 1) as f64 / 1e6;
    (0..dim(rng, 1, 30))
        .map(|i| TrajectoryRecord {
            phase: [Phase::Pretrain, Phase::Prune, Phase::Regrow][rng.next_below(3)],
            step: i,
            sparsity: grid(rng, 1_000_000),
            train_loss: grid(rng, 50_000_000),
            test_accuracy: grid(rng, 1_000_000),
            active_params: rng.next_below(1 << 20),
            elapsed_ms: 0,
        })
        .collect()
}

pub fn csv_round_trip(seed: u64) -> Result<(), String> {
    let records = random_records(&mut RngState::new(seed));
    let text = format_trajectory_csv(&records).map_err(|e| e.to_string())?;
    if text.lines().count() != records.len() + 1 || text.contains('\r') {
        return Err(format!("seed {seed}: wrong line layout"));
    }
    let back = parse_trajectory_csv(&text).map_err(|e| e.to_string())?;
    if back != records {
        return Err(format!("seed {seed}: re-parsed records differ"));
    }
    if format_trajectory_csv(&back).map_err(|e| e.to_string())? != text {
        return Err(format!("seed {seed}: re-emitted CSV differs"));
    }
    Ok(())
}
