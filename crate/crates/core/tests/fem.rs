use learnquad::fem::{assemble, solve, solve_realization, EdgeTag, FlowCellProblem, Mesh, MeshLevel};
use learnquad::levy::{Lattice, LatticeField, LevyLaw, Spectrum};
use learnquad::pipeline::{FieldConfig, RandomField};
use learnquad::rng::{derive_seed, stream};

#[test]
fn level_sizes() {
    for (level, elements) in [(MeshLevel::Coarse, 128), (MeshLevel::Medium, 2048), (MeshLevel::Fine, 32768)] {
        let mesh = Mesh::<f64>::for_level(level);
        assert_eq!(mesh.n_triangles(), elements);
        assert_eq!(level.elements(), elements);
        let n = level.cells();
        assert_eq!(mesh.tags().iter().filter(|t| t.is_boundary()).count(), 4 * n);
        let euler = mesh.vertices().len() as i64 - mesh.n_edges() as i64 + mesh.n_triangles() as i64;
        assert_eq!(euler, 1);
    }
    assert_eq!("medium".parse::<MeshLevel>().unwrap(), MeshLevel::Medium);
    assert!("huge".parse::<MeshLevel>().is_err());
}

#[test]
fn bad_triangulations_rejected() {
    let v = vec![[-1.0, -1.0], [1.0, -1.0], [1.0, 1.0]];
    assert!(Mesh::from_triangles(v.clone(), vec![[0, 2, 1]]).is_err());
    assert!(Mesh::from_triangles(v.clone(), vec![[0, 1, 3]]).is_err());
    let m = Mesh::from_triangles(v, vec![[0, 1, 2]]).unwrap();
    assert_eq!(m.tags().iter().filter(|&&t| t == EdgeTag::DirichletRight).count(), 1);
}

#[test]
fn constant_log_fields() {
    let lattice = Lattice::new(2, 21).unwrap();
    for level in MeshLevel::ALL {
        let mesh = Mesh::for_level(level);
        let q0 = solve_realization(&LatticeField::constant(lattice, 0.0), &mesh).unwrap();
        let q2 = solve_realization(&LatticeField::constant(lattice, 2f64.ln()), &mesh).unwrap();
        assert!((q0 - 1.0).abs() < 1e-10, "{level}: {q0}");
        assert!((q2 - 2.0).abs() < 1e-10, "{level}: {q2}");
    }
}

#[test]
fn layered_medium_matches_harmonic_mean() {
    // a depends on x only, so the flux is 2 / ∫ 1/a dx over [-1, 1]
    let expected = 2.0 / (1.0f64.exp() - (-1.0f64).exp());
    let mut errs = Vec::new();
    for level in [MeshLevel::Coarse, MeshLevel::Medium] {
        let mesh = Mesh::for_level(level);
        let q = learnquad::fem::solve_flow_cell(&mesh, |x: f64, _: f64| x.exp()).unwrap();
        errs.push((q - expected).abs());
    }
    assert!(errs[1] < 1e-3, "{errs:?}");
    assert!(errs[1] < errs[0] / 3.0, "{errs:?}");
}

#[test]
fn refinement_is_monotone_for_lognormal_fields() {
    let law = LevyLaw::Gaussian { sigma2: 0.5 };
    let field = RandomField::new(&law, &FieldConfig::default()).unwrap();
    let meshes: Vec<_> = MeshLevel::ALL.iter().map(|&l| Mesh::for_level(l)).collect();
    for s in 0..5 {
        let noise = field.noise(derive_seed(3, stream::FEM_STUDY, s));
        let log_a = field.log_conductivity_full(&noise, Spectrum::LatticeSymbol).unwrap();
        let q: Vec<f64> = meshes.iter().map(|m| solve_realization(&log_a, m).unwrap()).collect();
        let (e0, e1) = ((q[0] - q[2]).abs(), (q[1] - q[2]).abs());
        assert!(e1 < e0, "seed {s}: {q:?}");
    }
}

#[test]
fn assembled_realization_is_symmetric_and_solves() {
    let law = LevyLaw::Bigamma { lambda: 0.5, beta: 1.0 };
    let field = RandomField::new(&law, &FieldConfig::default()).unwrap();
    let log_a = field.log_conductivity(&field.sample_eta(5).unwrap()).unwrap();
    let mesh = Mesh::for_level(MeshLevel::Coarse);
    let system = assemble(&FlowCellProblem::new(&mesh, |x: f64, y: f64| log_a.interpolate(&[x, y]).exp())).unwrap();
    for i in 0..system.n_dofs() {
        for (j, v) in system.a.row_entries(i) {
            assert!((v - system.a.get(j, i)).abs() <= 1e-12 * v.abs().max(1.0));
        }
    }
    let sol = solve(&system).unwrap();
    assert!(sol.residual_norm <= 1e-10);
}
