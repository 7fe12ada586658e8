use ltl_core::datagen::{gen_antipodal, gen_outlier_variant, gen_two_gaussians, load_csv, save_csv};
use ltl_core::regimes::symmetry_check;
use ltl_core::training::train;
use ltl_core::{SolverOptions, TrainConfig};

#[test]
fn antipodal_data_passes_symmetry_check() {
    let opts = SolverOptions::default();
    for seed in 0..5 {
        let ds = gen_antipodal(3, 20, seed).unwrap();
        for beta in [0.01, 0.1, 0.5] {
            assert!(symmetry_check(&ds.points, beta, &opts).unwrap(), "seed {seed}, beta {beta}");
        }
    }
}

#[test]
fn outlier_family_can_break_symmetry() {
    let opts = SolverOptions::default();
    let broken = (0..10)
        .filter(|&seed| {
            let ds = gen_outlier_variant(2, 41, seed).unwrap();
            !symmetry_check(&ds.points, 0.01, &opts).unwrap()
        })
        .count();
    assert!(broken > 0);
}

#[test]
fn training_from_a_saved_dataset_matches_in_memory() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("g.csv");
    let ds = gen_two_gaussians(2, 30, 4.0, 1.0, 0.5, 11).unwrap();
    save_csv(&ds, &path).unwrap();
    let loaded = load_csv(&path).unwrap();
    let cfg = TrainConfig { seed: 11, epsilon: 0.05, ..TrainConfig::default() };
    let (_, a) = train(&cfg, &ds).unwrap();
    let (_, b) = train(&cfg, &loaded).unwrap();
    assert_eq!(a.to_csv_string().unwrap(), b.to_csv_string().unwrap());
}
