//! Scratch benchmark for tuning the synthetic training acceptance check.
use std::time::Instant;

use lfdepth::hexgrid::{build_grid, GridCalibration, Orientation};
use lfdepth::net::{predict_sparse, train, AdamConfig, SparseDepthMap, SparseSample, TrainConfig, DepthSource};
use lfdepth::plenoptic::{debayer, extract_stacks, BayerPattern, FlowerStack, FlowerStackBatch};
use lfdepth::synth::{render_plenoptic, CentralView, PlaneSpec, SyntheticScene};

fn grid_calib() -> GridCalibration {
    GridCalibration {
        origin: (48.0, 44.0),
        pitch: 23.0,
        rotation: 0.0,
        rows: 8,
        cols: 8,
        sensor_width: 260,
        sensor_height: 220,
        orientation: Orientation::PointyTop,
    }
}

fn scene(depth: f64, seed: u64) -> SyntheticScene {
    SyntheticScene {
        planes: vec![PlaneSpec::full(depth, seed)],
        view: CentralView { origin_px: (48.0, 44.0), meters_per_px: 0.004 },
        microlens_focal_px: 87.0,
        noise_frequency: 12.0,
    }
}

fn stacks_for(depth: f64, seed: u64) -> (Vec<FlowerStack>, Vec<SparseSample>) {
    let calib = grid_calib();
    let grid = build_grid(&calib).unwrap();
    let sc = scene(depth, seed);
    let (raw, sparse) = render_plenoptic(&sc, &grid, BayerPattern::Rggb);
    let img = debayer(&raw).unwrap();
    let stacks = extract_stacks(&img, &grid, 23).unwrap();
    let samples: Vec<SparseSample> = stacks
        .iter()
        .map(|s| sparse.get(s.center).unwrap().clone())
        .collect();
    (stacks, samples)
}

fn main() {
    let args: Vec<String> = std::env::args().collect();
    let epochs: usize = args.get(1).and_then(|s| s.parse().ok()).unwrap_or(10);
    let batch: usize = args.get(2).and_then(|s| s.parse().ok()).unwrap_or(64);
    let lr: f64 = args.get(3).and_then(|s| s.parse().ok()).unwrap_or(0.001);
    let nscenes: usize = args.get(4).and_then(|s| s.parse().ok()).unwrap_or(18);

    let t0 = Instant::now();
    let mut all_stacks = Vec::new();
    let mut all_samples = Vec::new();
    for i in 0..nscenes {
        // Depths spread over [1.0, 2.0].
        let depth = 1.0 + (i as f64 * 0.617) % 1.0;
        let (mut st, mut sa) = stacks_for(depth, 1000 + i as u64 * 7);
        // Re-key coords per scene to keep them unique in one batch.
        for (s, smp) in st.iter_mut().zip(sa.iter_mut()) {
            s.center = lfdepth::hexgrid::AxialCoord::new(s.center.q + 100 * i as i32, s.center.r);
            smp.coord = s.center;
        }
        all_stacks.extend(st);
        all_samples.extend(sa);
    }
    println!("generated {} stacks in {:?}", all_stacks.len(), t0.elapsed());
    let batch_src = FlowerStackBatch::from_stacks(&all_stacks);
    let gt = SparseDepthMap::new(DepthSource::StereoGt, all_samples);

    let cfg = TrainConfig {
        epochs,
        batch_size: batch,
        adam: AdamConfig { learning_rate: lr, ..Default::default() },
        seed: 0,
    };
    let t1 = Instant::now();
    let outcome = train(&batch_src, &gt, &cfg).unwrap();
    let train_time = t1.elapsed();
    println!("trained {} epochs in {:?} ({:?}/epoch)", epochs, train_time, train_time / epochs as u32);
    let h = &outcome.loss_history;
    println!("loss first {:.5} last {:.5} (reduction {:.1}%)", h[0], h[h.len()-1], 100.0*(1.0 - h[h.len()-1]/h[0]));
    for (i, l) in h.iter().enumerate() {
        if i % (epochs/10).max(1) == 0 || i == h.len()-1 { println!("  epoch {:3}: {:.6}", i+1, l); }
    }

    // Held-out plane at 1.50 m, fresh texture.
    let (ho_stacks, _) = stacks_for(1.5, 99999);
    let ho_batch = FlowerStackBatch::from_stacks(&ho_stacks);
    let pred = predict_sparse(&outcome.network, &ho_batch).unwrap();
    let mut depths: Vec<f64> = pred.samples().iter().map(|s| s.depth_m).collect();
    depths.sort_by(f64::total_cmp);
    let median = depths[depths.len()/2];
    println!("held-out median {:.4} (true 1.500, err {:.2}%)", median, (median-1.5).abs()/1.5*100.0);
}
