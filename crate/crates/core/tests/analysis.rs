mod common;

use common::micro_config;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use repnet::experiments::report::band_color;
use repnet::experiments::{
    ablation_cells, ablation_delta, band, emit_heatmap, heatmap_image, paired_ttest, stars, AblationCell, Band, Factor,
    Trial,
};

fn ref_pct(without: f64, with: f64) -> f64 {
    (without - with) / without * 100.0
}

fn ref_band(pct: f64) -> Band {
    match pct {
        p if p > 1.0 => Band::Green,
        p if p < -1.0 => Band::Red,
        _ => Band::Yellow,
    }
}

fn grid(n: usize, seed: u64) -> Vec<AblationCell> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    (0..n)
        .map(|i| {
            let without = rng.random_range(0.05..2.0);
            let with = without * rng.random_range(0.9..1.1);
            let pct = ablation_delta(without, with).unwrap();
            AblationCell {
                dataset: format!("set{}", i / 32),
                horizon: [96, 192, 336, 720][(i / 8) % 4],
                factor: Factor::ALL[i % 8],
                pct_delta: pct,
                p_value: None,
                stars: String::new(),
                band: band(pct),
                mse_with: with,
                mse_without: without,
                configs_with: 1,
                configs_without: 1,
            }
        })
        .collect()
}

#[test]
fn delta_and_band_on_a_hundred_cell_grid() {
    let cells = grid(100, 4);
    let mut seen = [0usize; 3];
    for c in &cells {
        let want = ref_pct(c.mse_without, c.mse_with);
        assert!((c.pct_delta - want).abs() < 1e-12);
        assert_eq!(c.band, ref_band(want));
        seen[c.band as usize] += 1;
    }
    assert!(seen.iter().all(|&n| n > 0), "{seen:?}");
    let img = heatmap_image(&cells).unwrap();
    assert_eq!(img.dimensions(), (8 * 24, 13 * 24));
    for (i, c) in cells.iter().enumerate() {
        let (row, col) = (i / 8, i % 8);
        assert_eq!(*img.get_pixel(col as u32 * 24 + 12, row as u32 * 24 + 12), band_color(ref_band(c.pct_delta)));
    }
    // the last row holds four cells, the rest are grey
    assert_eq!(img.get_pixel(7 * 24 + 12, 12 * 24 + 12).0, [0xdd, 0xdd, 0xdd]);

    let dir = tempfile::tempdir().unwrap();
    emit_heatmap(&cells, dir.path(), "grid").unwrap();
    let csv = std::fs::read_to_string(dir.path().join("grid.csv")).unwrap();
    assert_eq!(csv.lines().count(), 101);
    assert!(image::open(dir.path().join("grid.png")).is_ok());
}

#[test]
fn band_thresholds_are_strict() {
    assert_eq!(band(1.0), Band::Yellow);
    assert_eq!(band(1.0 + 1e-9), Band::Green);
    assert_eq!(band(-1.0), Band::Yellow);
    assert_eq!(band(-1.0 - 1e-9), Band::Red);
    assert_eq!(band(0.0), Band::Yellow);
}

#[test]
fn paired_ttest_matches_reference_value() {
    // differences 1..=5: t = 3 / (sqrt(2.5) / sqrt(5)), two-sided p from t(4)
    let a = [2.0, 3.0, 4.0, 5.0, 6.0];
    let b = [1.0; 5];
    let r = paired_ttest(&a, &b).unwrap();
    assert!((r.t - 18f64.sqrt()).abs() < 1e-12);
    assert_eq!(r.df, 4);
    assert!((r.p_value - 0.013_235_6).abs() < 1e-6, "{}", r.p_value);
    assert_eq!(stars(r.p_value), "*");
}

#[test]
fn paired_ttest_recovers_half_sigma_shift() {
    let mut rng = ChaCha8Rng::seed_from_u64(17);
    let noise = Normal::new(0.0, 1.0).unwrap();
    let b: Vec<f64> = (0..1000).map(|_| noise.sample(&mut rng)).collect();
    let a: Vec<f64> = b.iter().map(|v| v + 0.5 + noise.sample(&mut rng)).collect();
    let r = paired_ttest(&a, &b).unwrap();
    assert!(r.t > 10.0, "t = {}", r.t);
    assert!(r.p_value < 1e-10);
    assert_eq!(stars(r.p_value), "***");
    let back = paired_ttest(&b, &a).unwrap();
    assert_eq!(back.t, -r.t);
    assert_eq!(back.p_value, r.p_value);

    let null: Vec<f64> = b.iter().map(|v| v + noise.sample(&mut rng)).collect();
    assert!(paired_ttest(&null, &b).unwrap().p_value > 0.001);
}

#[test]
fn paired_ttest_edge_cases() {
    let alternating = paired_ttest(&[1.0, -1.0, 1.0, -1.0], &[0.0; 4]).unwrap();
    assert_eq!((alternating.t, alternating.p_value), (0.0, 1.0));
    assert!(!alternating.degenerate);
    let same = paired_ttest(&[1.0, 2.0], &[1.0, 2.0]).unwrap();
    assert!(same.degenerate && same.p_value == 1.0);
    let shifted = paired_ttest(&[2.0, 3.0], &[1.0, 2.0]).unwrap();
    assert!(shifted.degenerate && shifted.p_value == 0.0);
    assert!(paired_ttest(&[1.0], &[2.0]).is_err());
    assert!(paired_ttest(&[1.0, 2.0], &[2.0]).is_err());
}

fn trial(index: usize, attention: bool, val: f64, mse: f64, errors: Vec<f64>) -> Trial {
    let mut config = micro_config();
    config.memory.use_attention = attention;
    Trial { index, config, val_loss: val, test_mse: mse, test_mae: mse, params: 0, diverged: false, test_window_mse: errors }
}

#[test]
fn ablation_cells_pick_best_validation_trials() {
    let trials = vec![
        trial(0, true, 1.0, 0.40, vec![0.3, 0.4, 0.5]),
        trial(1, true, 2.0, 0.10, vec![0.1, 0.1, 0.1]),
        trial(2, false, 1.5, 0.50, vec![0.45, 0.5, 0.55]),
        trial(3, false, 0.5, 0.60, vec![0.5, 0.7, 0.6]),
    ];
    let cells = ablation_cells(&trials, 1).unwrap();
    let attn = cells.iter().find(|c| c.factor == Factor::Attention).unwrap();
    assert_eq!((attn.mse_with, attn.mse_without), (0.40, 0.60));
    assert!((attn.pct_delta - ref_pct(0.60, 0.40)).abs() < 1e-12);
    assert_eq!(attn.band, Band::Green);
    let p = paired_ttest(&[0.5, 0.7, 0.6], &[0.3, 0.4, 0.5]).unwrap().p_value;
    assert_eq!(attn.p_value, Some(p));
    assert_eq!((attn.configs_with, attn.configs_without), (2, 2));
    // every trial shares the other factors, so no other cell has two sides
    assert_eq!(cells.len(), 1);

    let mean_of_two = ablation_cells(&trials, 2).unwrap();
    let attn = mean_of_two.iter().find(|c| c.factor == Factor::Attention).unwrap();
    assert!((attn.mse_with - 0.25).abs() < 1e-12);
    assert!((attn.mse_without - 0.55).abs() < 1e-12);
}
