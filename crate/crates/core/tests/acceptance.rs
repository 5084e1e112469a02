//! End-to-end acceptance checks, one line per criterion.
//!
//! Runs without the libtest harness so each criterion prints exactly one
//! `PASS`/`FAIL`/`FLAG` line. Soft criteria report `FLAG` instead of failing.

use std::time::Instant;

use learnquad::fem::{boundary_fluxes, assemble, solve, solve_flow_cell, FlowCellProblem, Mesh, MeshLevel};
use learnquad::flow::assignment::{assignment_cost, linear_sum_assignment, squared_distance_cost};
use learnquad::flow::config::{ModelKind, TrainConfig};
use learnquad::flow::vector_field::{cfm_batch, cfm_loss, cfm_loss_and_grad, integrate_rk4, VectorFieldModel};
use learnquad::flow::acf::AcfModel;
use learnquad::flow::{self, FlowModel};
use learnquad::hermite::{eval_monomial, gaussian_monomial_moment, monomial_exponents, smolyak_rule};
use learnquad::levy::{field_covariance_oracle, Lattice, LevyLaw, Spectrum};
use learnquad::linalg::Matrix;
use learnquad::pipeline::{self, Experiment, ExperimentConfig, FieldConfig, RandomField};
use learnquad::rng::{derive_seed, rng_from_seed, stream};
use rand::Rng as _;
use rand_distr::{Distribution, StandardNormal};

enum Outcome {
    Pass(String),
    Fail(String),
    Flag(String),
}

type Check = fn() -> Outcome;

fn verdict(ok: bool, detail: String) -> Outcome {
    if ok {
        Outcome::Pass(detail)
    } else {
        Outcome::Fail(detail)
    }
}

fn c1_node_counts() -> Outcome {
    let expected = [(9, [1, 19, 181, 1177]), (25, [1, 51, 1301, 22201])];
    let mut got = Vec::new();
    let mut ok = true;
    for (dim, counts) in expected {
        for (l, &n) in counts.iter().enumerate() {
            let len = smolyak_rule::<f64>(dim, l + 1).map(|r| r.len()).unwrap_or(0);
            ok &= len == n;
            got.push(len);
        }
    }
    verdict(ok, format!("counts {got:?}"))
}

fn c2_exactness() -> Outcome {
    let mut worst = 0.0f64;
    let mut checked = 0;
    for dim in [2, 9] {
        for level in 1..=4 {
            let rule = smolyak_rule::<f64>(dim, level).unwrap();
            for p in monomial_exponents(dim, 2 * level - 1) {
                let q = rule.integrate(|x| eval_monomial(&p, x)).unwrap();
                worst = worst.max((q - gaussian_monomial_moment::<f64>(&p)).abs());
                checked += 1;
            }
        }
    }
    verdict(worst <= 1e-9, format!("{checked} monomials, max abs error {worst:.2e}"))
}

fn c3_fem_analytic() -> Outcome {
    let mut worst = 0.0f64;
    for level in MeshLevel::ALL {
        let mesh = Mesh::for_level(level);
        for c in [1.0, 0.25, 3.0] {
            let q = solve_flow_cell(&mesh, |_: f64, _: f64| c).unwrap();
            worst = worst.max((q - c).abs() / c);
        }
    }
    verdict(worst <= 1e-10, format!("max relative |Q - c| {worst:.2e} over 3 meshes"))
}

fn lognormal_config() -> ExperimentConfig {
    ExperimentConfig { law: LevyLaw::Gaussian { sigma2: 0.5 }, ..ExperimentConfig::desk() }
}

fn c4_conservation() -> Outcome {
    let c = lognormal_config();
    let field = RandomField::new(&c.law, &c.field).unwrap();
    let mesh = Mesh::for_level(MeshLevel::Medium);
    let mut worst = 0.0f64;
    for s in 0..20 {
        let noise = field.noise(derive_seed(c.seed, stream::FEM_STUDY, 1000 + s));
        let log_a = field.log_conductivity_full(&noise, Spectrum::LatticeSymbol).unwrap();
        let problem = FlowCellProblem::new(&mesh, |x: f64, y: f64| log_a.interpolate(&[x, y]).exp());
        let sol = solve(&assemble(&problem).unwrap()).unwrap();
        let f = boundary_fluxes(&sol, &mesh);
        // inflow through the left equals outflow through the right
        worst = worst.max((f.right + f.left).abs()).max(f.total().abs());
    }
    verdict(worst <= 1e-9, format!("20 realizations, max imbalance {worst:.2e}"))
}

fn c5_convergence() -> Outcome {
    let c = lognormal_config();
    let records = pipeline::fem_convergence_study(&c).unwrap();
    let gauss: Vec<_> = records.iter().filter(|r| r.law.as_deref() == Some("gaussian")).cloned().collect();
    let rate = pipeline::convergence_rate(&gauss).unwrap_or(f64::NAN);
    let all = pipeline::convergence_rate(&records).unwrap_or(f64::NAN);
    verdict((-1.4..=-0.6).contains(&rate), format!("lognormal slope {rate:.3} over 5 seeds (all laws {all:.3})"))
}

fn c6_covariance() -> Outcome {
    let field = FieldConfig::default();
    let params = field.smoothing().unwrap();
    let lattice = Lattice::new(2, 33).unwrap();
    let mut ok = true;
    let mut parts = Vec::new();
    for law in LevyLaw::matched_family(0.5) {
        let chk = field_covariance_oracle(&law, &params, &lattice, 10_000, derive_seed(7, stream::NOISE, 0)).unwrap();
        ok &= chk.z_score() <= 3.0;
        parts.push(format!("{} z={:.2}", law.name(), chk.z_score()));
    }
    verdict(ok, parts.join(", "))
}

fn normal(rng: &mut learnquad::rng::Rng) -> f64 {
    StandardNormal.sample(rng)
}

fn rel(a: f64, b: f64) -> f64 {
    (a - b).abs() / b.abs().max(1e-12)
}

fn c7_flow_units() -> Outcome {
    let mut rng = rng_from_seed(11);
    // trained ACF round trip
    let data = Matrix::from_vec(
        2000,
        3,
        (0..6000).map(|i| normal(&mut rng) * (1.0 + (i % 3) as f64) + 0.5).collect(),
    )
    .unwrap();
    let cfg = TrainConfig { epochs: 5, batch_size: 100, hidden_width: 16, ..TrainConfig::desk(ModelKind::Acf) };
    let (model, _) = flow::train(ModelKind::Acf, &data, &cfg).unwrap();
    let FlowModel::Acf { model: acf, .. } = &model else { unreachable!() };
    let x = Matrix::from_vec(1000, 3, (0..3000).map(|_| 3.0 * normal(&mut rng)).collect::<Vec<f64>>()).unwrap();
    let back = acf.inverse_batch(&acf.forward_batch(&x).0);
    let round = back.as_slice().iter().zip(x.as_slice()).map(|(a, b)| (a - b).abs()).fold(0.0, f64::max);

    // log-det against a finite-difference Jacobian, M = 2
    let acf2 = {
        let d2 = data.select_rows(&(0..2000).collect::<Vec<_>>());
        let d2 = Matrix::from_vec(2000, 2, d2.iter_rows().flat_map(|r| [r[0], r[1]]).collect()).unwrap();
        let (m, _) = flow::train(ModelKind::Acf, &d2, &cfg).unwrap();
        match m {
            FlowModel::Acf { model, .. } => model,
            _ => unreachable!(),
        }
    };
    let logdet_err = logdet_error(&acf2, [0.3, -0.8]);

    // CFM gradient against finite differences
    let vcfg = TrainConfig { hidden_width: 8, layers: 3, ..TrainConfig::desk(ModelKind::Cfm) };
    let mut vf = VectorFieldModel::<f64>::new(3, &vcfg, &mut rng).unwrap();
    for p in vf.net_mut().params_mut() {
        *p += rng.random_range(-0.2..0.2);
    }
    let batch = cfm_batch(&data.select_rows(&(0..32).collect::<Vec<_>>()), 0.01, false, &mut rng).unwrap();
    let (_, grad) = cfm_loss_and_grad(&vf, &batch);
    let mut grad_err = 0.0f64;
    for k in (0..grad.len()).step_by(7) {
        let h = 1e-6;
        let p0 = vf.net().params()[k];
        vf.net_mut().params_mut()[k] = p0 + h;
        let up = cfm_loss(&vf, &batch);
        vf.net_mut().params_mut()[k] = p0 - h;
        let dn = cfm_loss(&vf, &batch);
        vf.net_mut().params_mut()[k] = p0;
        let fd = (up - dn) / (2.0 * h);
        if fd.abs() > 1e-6 {
            grad_err = grad_err.max(rel(grad[k], fd));
        }
    }

    // RK4 on v = η
    let xi = [0.7, -1.3, 2.0];
    let err = |steps: usize| {
        let y = integrate_rk4(&xi, steps, |x: &[f64], _| x.to_vec()).unwrap();
        y.iter().zip(&xi).map(|(a, b)| rel(*a, b * std::f64::consts::E)).fold(0.0, f64::max)
    };
    let (e100, e10, e20) = (err(100), err(10), err(20));
    let order = (e10 / e20).log2();

    let ok = round < 1e-6 && logdet_err < 1e-4 && grad_err < 1e-4 && e100 < 1e-6 && (order - 4.0).abs() <= 0.5;
    verdict(
        ok,
        format!(
            "round trip {round:.1e}, logdet rel {logdet_err:.1e}, cfm grad rel {grad_err:.1e}, rk4 rel {e100:.1e}, order {order:.2}"
        ),
    )
}

fn logdet_error(m: &AcfModel<f64>, x: [f64; 2]) -> f64 {
    let h = 1e-6;
    let mut j = [[0.0; 2]; 2];
    for k in 0..2 {
        let (mut up, mut dn) = (x, x);
        up[k] += h;
        dn[k] -= h;
        let (fu, fd) = (m.forward(&up), m.forward(&dn));
        for r in 0..2 {
            j[r][k] = (fu[r] - fd[r]) / (2.0 * h);
        }
    }
    let det = j[0][0] * j[1][1] - j[0][1] * j[1][0];
    rel(m.log_det(&x), det.abs().ln())
}

fn permutations(n: usize) -> Vec<Vec<usize>> {
    if n == 0 {
        return vec![vec![]];
    }
    let mut out = Vec::new();
    for p in permutations(n - 1) {
        for i in 0..=p.len() {
            let mut q = p.clone();
            q.insert(i, n - 1);
            out.push(q);
        }
    }
    out
}

fn c8_assignment() -> Outcome {
    let mut rng = rng_from_seed(8);
    let mut mismatches = 0;
    for inst in 0..100 {
        let n = 1 + inst % 6;
        let dim = 1 + inst % 3;
        let mut draw = || Matrix::from_vec(n, dim, (0..n * dim).map(|_| normal(&mut rng)).collect::<Vec<f64>>()).unwrap();
        let (a, b) = (draw(), draw());
        let cost = squared_distance_cost(&a, &b);
        let cols = linear_sum_assignment(&cost).unwrap();
        let best = permutations(n).iter().map(|p| assignment_cost(&cost, p)).fold(f64::INFINITY, f64::min);
        if assignment_cost(&cost, &cols) > best + 1e-12 {
            mismatches += 1;
        }
    }
    let mut monotone = true;
    for _ in 0..20 {
        let a: Vec<f64> = (0..6).map(|_| normal(&mut rng)).collect();
        let b: Vec<f64> = (0..6).map(|_| normal(&mut rng)).collect();
        let cols = linear_sum_assignment(&squared_distance_cost(
            &Matrix::from_vec(6, 1, a.clone()).unwrap(),
            &Matrix::from_vec(6, 1, b.clone()).unwrap(),
        ))
        .unwrap();
        let rank = |v: &[f64], i: usize| v.iter().filter(|&&x| x < v[i]).count();
        monotone &= (0..6).all(|i| rank(&a, i) == rank(&b, cols[i]));
    }
    verdict(mismatches == 0 && monotone, format!("{mismatches}/100 suboptimal, 1-D monotone {monotone}"))
}

fn c9_exact_transport() -> Outcome {
    let c = ExperimentConfig { law: LevyLaw::Gaussian { sigma2: 0.5 }, ..ExperimentConfig::desk() };
    let field = RandomField::new(&c.law, &c.field).unwrap();
    let model = field.moment_matched_transport().unwrap();
    let reference = pipeline::reference_samples(&field, 10_000, c.seed).unwrap();
    let errs = pipeline::monomial_errors(&model, &reference, &[2, 3, 4]).unwrap();
    let ok = errs.iter().all(|e| e.error <= e.conf);
    let detail = errs.iter().map(|e| format!("k={} eps={:.2e} ci={:.2e}", e.level - 1, e.error, e.conf)).collect::<Vec<_>>();
    verdict(ok, detail.join(", "))
}

fn c10_learned_transport() -> Outcome {
    let c = ExperimentConfig::desk();
    let field = RandomField::new(&c.law, &c.field).unwrap();
    let data = pipeline::generate_dataset(&field, 10_000, c.seed).unwrap();
    let reference = pipeline::reference_samples(&field, 10_000, c.seed).unwrap();
    let (model, log) =
        pipeline::train_model(ModelKind::Acf, &c.train, &data, derive_seed(c.seed, stream::TRAINING, 0)).unwrap();
    let e = pipeline::monomial_errors(&model, &reference, &[4]).unwrap()[0];
    let detail = format!(
        "bigamma M=9 acf, loss {:.3e} -> {:.3e}, eps3={:.2e}, ci={:.2e}, ratio {:.2}",
        log.first().unwrap_or(f64::NAN),
        log.last().unwrap_or(f64::NAN),
        e.error,
        e.conf,
        e.error / e.conf
    );
    if e.error <= 2.0 * e.conf {
        Outcome::Pass(detail)
    } else {
        Outcome::Flag(detail)
    }
}

fn c11_degenerate() -> Outcome {
    let mut c = ExperimentConfig::desk();
    c.field.variance = 0.0;
    c.sweep.levels = vec![4];
    c.sweep.mc_samples = 200;
    let field = RandomField::new(&c.law, &c.field).unwrap();
    let data = pipeline::generate_dataset(&field, 400, c.seed).unwrap();
    let train = TrainConfig { epochs: 3, ..TrainConfig::desk(ModelKind::Cfm) };
    let (model, _) = pipeline::train_model(ModelKind::Cfm, &train, &data, 1).unwrap();
    let reference = pipeline::reference_samples(&field, c.sweep.mc_samples, c.seed).unwrap();
    let report = pipeline::pde_experiment(&c, &field, &model, &reference, 400).unwrap();
    let r = &report.records[0];
    let (est, mc) = (r.estimate.unwrap(), r.mc_reference.unwrap());
    let ok = (est - 1.0).abs() <= 1e-12 && (mc - 1.0).abs() <= 1e-12 && r.abs_error <= 1e-12 && report.skipped.is_empty();
    verdict(ok, format!("estimate 1{:+.1e}, mc 1{:+.1e}, error {:.1e}", est - 1.0, mc - 1.0, r.abs_error))
}

fn c12_reproducible() -> Outcome {
    let mut c = ExperimentConfig::desk();
    c.field.cells_per_side = 33;
    c.sweep.train_sizes = vec![400, 800];
    c.sweep.levels = vec![2, 3];
    c.sweep.mc_samples = 200;
    c.sweep.truncation_mesh = MeshLevel::Medium;
    c.sweep.convergence_realizations = 1;
    c.train = TrainConfig { epochs: 4, ..c.train };
    let text = c.to_toml();
    let run = || -> Vec<Vec<u8>> {
        let c = ExperimentConfig::from_toml(&text).unwrap();
        let report = pipeline::training_size_study(&c).unwrap();
        let mut files = Vec::new();
        for (e, recs) in [
            (Experiment::Monomials, report.monomials),
            (Experiment::Pde, report.pde.records),
            (Experiment::Truncation, pipeline::truncation_study(&c).unwrap()),
            (Experiment::Convergence, pipeline::fem_convergence_study(&c).unwrap()),
        ] {
            let mut buf = Vec::new();
            pipeline::write_records(&mut buf, e, &recs).unwrap();
            files.push(buf);
        }
        files
    };
    let (a, b) = (run(), run());
    let bytes: usize = a.iter().map(Vec::len).sum();
    verdict(a == b, format!("4 CSV files, {bytes} bytes, identical {}", a == b))
}

fn main() {
    let checks: [(&str, Check); 12] = [
        ("Smolyak node counts", c1_node_counts),
        ("polynomial exactness", c2_exactness),
        ("FEM analytic oracle", c3_fem_analytic),
        ("FEM conservation", c4_conservation),
        ("FEM convergence rate", c5_convergence),
        ("covariance identity", c6_covariance),
        ("flow unit properties", c7_flow_units),
        ("OT coupling", c8_assignment),
        ("exact-transport end-to-end", c9_exact_transport),
        ("learned-transport end-to-end (soft)", c10_learned_transport),
        ("PDE degenerate oracle", c11_degenerate),
        ("reproducibility", c12_reproducible),
    ];
    // `cargo test -- <filter>` passes a filter; run matching criteria only
    let filter: Vec<String> = std::env::args().skip(1).filter(|a| !a.starts_with('-')).collect();
    let mut failed = 0;
    for (i, (name, check)) in checks.iter().enumerate() {
        let id = format!("criterion {}", i + 1);
        if !filter.is_empty() && !filter.iter().any(|f| id.ends_with(&format!(" {f}")) || name.contains(f.as_str())) {
            continue;
        }
        let start = Instant::now();
        let outcome = check();
        let secs = start.elapsed().as_secs_f64();
        let (tag, detail) = match outcome {
            Outcome::Pass(d) => ("PASS", d),
            Outcome::Flag(d) => ("FLAG", d),
            Outcome::Fail(d) => {
                failed += 1;
                ("FAIL", d)
            }
        };
        println!("{id:>12} {tag} {name}: {detail} [{secs:.1}s]");
    }
    if failed > 0 {
        println!("{failed} acceptance criteria failed");
        std::process::exit(1);
    }
}
