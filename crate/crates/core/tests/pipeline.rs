use std::fs::File;
use std::io::{BufReader, BufWriter, Write};

use learnquad::fem::MeshLevel;
use learnquad::levy::LevyLaw;
use learnquad::pipeline::{
    mc_estimate, pde_experiment, read_dataset, read_records, reference_samples, truncation_study, write_dataset,
    write_records, ErrorRecord, Experiment, ExperimentConfig, FieldConfig, RandomField,
};

fn small_config(law: LevyLaw) -> ExperimentConfig {
    let mut c = ExperimentConfig::desk();
    c.law = law;
    c.sweep.levels = vec![2, 3];
    c.sweep.mesh_levels = vec![MeshLevel::Coarse];
    c.sweep.truncation_mesh = MeshLevel::Coarse;
    c.sweep.mc_samples = 2000;
    c
}

#[test]
fn exact_transport_estimates_lie_within_ci() {
    let c = small_config(LevyLaw::Gaussian { sigma2: 0.5 });
    let field = RandomField::new(&c.law, &c.field).unwrap();
    let model = field.moment_matched_transport().unwrap();
    let reference = reference_samples(&field, c.sweep.mc_samples, c.seed).unwrap();
    let report = pde_experiment(&c, &field, &model, &reference, 0).unwrap();
    assert!(report.skipped.is_empty());
    assert_eq!(report.records.len(), 2);
    for r in &report.records {
        assert_eq!(r.within_ci(), Some(true), "{r:?}");
        assert!(r.estimate.unwrap() > 0.0);
    }
}

#[test]
fn flat_field_has_no_truncation_error() {
    let mut c = small_config(LevyLaw::Poisson { lambda: 0.5 });
    c.field.variance = 0.0;
    c.field.offset = 0.5;
    let records = truncation_study(&c).unwrap();
    assert_eq!(records.len(), 4 * c.sweep.truncation_radii.len());
    assert!(records.iter().all(|r| r.abs_error < 1e-12), "{records:?}");
}

#[test]
fn truncation_error_shrinks_with_more_modes() {
    let c = small_config(LevyLaw::Bigamma { lambda: 0.5, beta: 1.0 });
    let records = truncation_study(&c).unwrap();
    let modes: Vec<usize> = records.iter().take(3).map(|r| r.modes.unwrap()).collect();
    assert_eq!(modes, vec![9, 25, 49]);
    let total = |m: usize| records.iter().filter(|r| r.modes == Some(m)).map(|r| r.abs_error).sum::<f64>();
    assert!(total(49) < total(9), "{} vs {}", total(49), total(9));
}

#[test]
fn monte_carlo_estimates() {
    assert_eq!(mc_estimate(&[2.5; 10]).unwrap(), (2.5, 0.0));
    let (m, hw) = mc_estimate(&[1.0, 2.0, 3.0, 4.0]).unwrap();
    let s = (5.0f64 / 3.0).sqrt();
    assert!((m - 2.5).abs() < 1e-15);
    assert!((hw - 1.96 * s / 2.0).abs() < 1e-15);
    assert!(mc_estimate(&[]).is_err());
}

#[test]
fn record_files_round_trip() {
    let dir = tempfile::tempdir().unwrap();
    let sets = [
        (Experiment::Monomials, vec![ErrorRecord::monomials(2, 100, 1.5e-6, 3e-6)]),
        (Experiment::Pde, vec![ErrorRecord::pde(3, 1000, MeshLevel::Medium, 1.01, 1.0, 0.02)]),
        (Experiment::Convergence, vec![ErrorRecord::convergence(128, "gamma", 0.01)]),
        (Experiment::Truncation, vec![ErrorRecord::truncation(25, "poisson", 1e-4)]),
    ];
    for (experiment, records) in sets {
        let path = dir.path().join(format!("{}.csv", experiment.as_str()));
        let mut w = BufWriter::new(File::create(&path).unwrap());
        write_records(&mut w, experiment, &records).unwrap();
        w.flush().unwrap();
        drop(w);
        let text = std::fs::read_to_string(&path).unwrap();
        assert_eq!(text.lines().next().unwrap(), experiment.header().join(","));
        let (e, back) = read_records(BufReader::new(File::open(&path).unwrap())).unwrap();
        assert_eq!(e, experiment);
        assert_eq!(back, records);
    }
}

#[test]
fn datasets_and_configs_round_trip_through_files() {
    let dir = tempfile::tempdir().unwrap();
    let field = RandomField::new(&LevyLaw::Gamma { lambda: 0.5, beta: 1.0 }, &FieldConfig::default()).unwrap();
    let data = learnquad::pipeline::generate_dataset(&field, 5, 3).unwrap();
    let path = dir.path().join("data.csv");
    write_dataset(File::create(&path).unwrap(), &data).unwrap();
    assert!(std::fs::read_to_string(&path).unwrap().starts_with("eta1,eta2,"));
    assert_eq!(read_dataset(File::open(&path).unwrap()).unwrap(), data);

    let config = ExperimentConfig::full();
    let path = dir.path().join("run.toml");
    std::fs::write(&path, config.to_toml()).unwrap();
    assert_eq!(ExperimentConfig::load(&path).unwrap(), config);
    std::fs::write(&path, "[field]\ncells_per_side = 4\n").unwrap();
    let err = ExperimentConfig::load(&path).unwrap_err();
    assert!(err.is_validation(), "{err}");
}
