//! The `verify` command: finite-difference checks for both model problems
//! plus quick property suites for the numerical substrate. Prints one line
//! per check and exits nonzero if anything fails.

use std::process::ExitCode;
use std::sync::Arc;

use invpde::advdiff::{AdvDiffProblem, AdvDiffSetup, Velocity};
use invpde::fem::{build_unit_square_mesh, rect_factor_mass, FnSpace};
use invpde::linalg::{cg_solve, CgOptions, DenseMat, DiagOp, IdentityOp};
use invpde::model::{verify_model, AdjointSignFlip, VerifyReport};
use invpde::poisson::{PoissonProblem, PoissonSetup};
use invpde::prior::{BiLaplacianPrior, PriorParams};
use invpde::randeig::{double_pass, GhepConfig};

struct Checks {
    failures: usize,
}

impl Checks {
    fn new() -> Self {
        Checks { failures: 0 }
    }

    fn check(&mut self, name: &str, pass: bool, detail: String) {
        if pass {
            println!("PASS  {name}: {detail}");
        } else {
            println!("FAIL  {name}: {detail}");
            self.failures += 1;
        }
    }

    fn report(&mut self, name: &str, report: &VerifyReport) {
        for e in &report.entries {
            self.check(
                &format!("{name}: {}", e.name),
                e.passed,
                format!("{:.3e} (threshold {:.1e})", e.value, e.threshold),
            );
        }
        println!("      {name} gradient sweep minima:");
        for (eps, err) in &report.gradient_sweep {
            println!("        eps {eps:.1e}: {err:.3e}");
        }
    }
}

pub fn cmd_verify(inject_adjoint_sign_bug: bool, report_dir: Option<&std::path::Path>) -> ExitCode {
    if let Some(dir) = report_dir {
        if let Err(e) = std::fs::create_dir_all(dir) {
            eprintln!("cannot create report dir {}: {e}", dir.display());
            return ExitCode::from(1);
        }
    }
    let mut checks = Checks::new();

    // Model problem 1: log-coefficient diffusion.
    {
        let mesh = Arc::new(build_unit_square_mesh(8, 8, &[]).unwrap());
        let setup = PoissonSetup::defaults(Arc::clone(&mesh));
        let points = invpde::rng::uniform_points(2024, 30, [0.1, 0.1, 0.9, 0.5]);
        let mut problem = PoissonProblem::new(setup, &points, 0.01).unwrap();
        let m_true = problem
            .param_space()
            .interpolate(invpde::poisson::default_truth);
        problem.synthesize_data(&m_true, 99).unwrap();
        let prior = BiLaplacianPrior::zero_mean(
            Arc::clone(problem.param_space()),
            PriorParams::isotropic(0.1, 0.5),
        )
        .unwrap();
        let m0 = vec![0.1; problem.param_space().ndof()];
        let report = if inject_adjoint_sign_bug {
            verify_model(&AdjointSignFlip(problem), &prior, &m0, 7)
        } else {
            verify_model(&problem, &prior, &m0, 7)
        };
        checks.report(
            if inject_adjoint_sign_bug { "poisson (corrupted adjoint)" } else { "poisson" },
            &report,
        );
        if let Some(dir) = report_dir {
            let _ = report.write_csv(&dir.join("verify_poisson_fd.csv"));
            let _ = std::fs::write(dir.join("verify_poisson.txt"), report.to_text());
        }
    }

    // Model problem 2: transport initial condition.
    {
        let mesh = Arc::new(build_unit_square_mesh(8, 8, &[]).unwrap());
        let vel = Velocity::default_stream(Arc::clone(&mesh));
        let points = invpde::rng::uniform_points(505, 15, [0.05, 0.05, 0.95, 0.95]);
        let setup = AdvDiffSetup {
            steps: 8,
            t_final: 1.0,
            obs_start: 0.25,
            obs_every: 0.25,
            ..Default::default()
        };
        let mut problem =
            AdvDiffProblem::new(Arc::clone(&mesh), setup, &vel, &points, (2.45e-7f64).sqrt())
                .unwrap();
        let m_true = problem.param_space().interpolate(invpde::advdiff::default_truth);
        problem.synthesize_data(&m_true, 3);
        let prior = BiLaplacianPrior::zero_mean(
            Arc::clone(problem.param_space()),
            PriorParams::isotropic(1.0, 8.0),
        )
        .unwrap();
        let m0 = vec![0.0; problem.param_space().ndof()];
        let report = verify_model(&problem, &prior, &m0, 11);
        checks.report("advdiff", &report);
        if let Some(dir) = report_dir {
            let _ = report.write_csv(&dir.join("verify_advdiff_fd.csv"));
            let _ = std::fs::write(dir.join("verify_advdiff.txt"), report.to_text());
        }

        // Transpose probe of the discrete parameter-to-observable map.
        let n = problem.param_space().ndof();
        let m = invpde::rng::gaussian_vector(21, 0, n);
        let fm = problem.apply_f(&m);
        let w: Vec<Vec<f64>> = (0..fm.len())
            .map(|j| invpde::rng::gaussian_vector(22, j as u64, fm[j].len()))
            .collect();
        let (_, fstar_w) = problem.apply_f_star(&w);
        let lhs: f64 = fm.iter().zip(&w).map(|(a, b)| invpde::linalg::dot(a, b)).sum();
        let rhs = invpde::linalg::dot(&m, &fstar_w);
        let rel = (lhs - rhs).abs() / lhs.abs().max(1e-300);
        checks.check("advdiff: adjoint transpose probe", rel < 1e-10, format!("{rel:.3e}"));
    }

    // Substrate properties.
    {
        // PCG against a dense solve.
        let n = 12;
        let x = DenseMat::from_rows(n, n, &invpde::rng::gaussian_vector(100, 0, n * n));
        let mut a = x.matmul(&x.transpose());
        for i in 0..n {
            a.add_to(i, i, n as f64);
        }
        let rhs = invpde::rng::gaussian_vector(101, 0, n);
        let cg = cg_solve(&a, &rhs, None, CgOptions { rtol: 1e-14, max_iter: 400, ..Default::default() })
            .unwrap();
        let direct = invpde::oracle::dense_solve(&a, &rhs);
        let rel = invpde::linalg::norm2(&invpde::linalg::sub(&cg.x, &direct))
            / invpde::linalg::norm2(&direct);
        checks.check("linalg: cg vs dense solve", rel < 1e-8, format!("{rel:.3e}"));

        // Factorization recompositions.
        let l = invpde::linalg::dense_cholesky(&a).unwrap();
        let rc = l.matmul(&l.transpose()).frobenius_distance(&a) / a.frobenius_norm();
        checks.check("linalg: cholesky recomposition", rc < 1e-12, format!("{rc:.3e}"));
        let (q, r) = invpde::linalg::dense_qr(&x).unwrap();
        let rq = q.matmul(&r).frobenius_distance(&x) / x.frobenius_norm();
        checks.check("linalg: qr recomposition", rq < 1e-12, format!("{rq:.3e}"));

        // Rectangular factor of the mass matrix.
        let mesh = Arc::new(build_unit_square_mesh(8, 8, &[]).unwrap());
        let sp = FnSpace::new(mesh, 1);
        let f = rect_factor_mass(&sp);
        let m = invpde::fem::mass(&sp).to_dense();
        let rf = f.gram_dense().frobenius_distance(&m) / m.frobenius_norm();
        checks.check("fem: mass factor recomposition", rf < 1e-12, format!("{rf:.3e}"));

        // Randomized eigensolver on an exact low-rank operator.
        let mut d = vec![0.0; 20];
        d[0] = 10.0;
        d[1] = 5.0;
        d[2] = 1.0;
        let op = DiagOp(d);
        let id = IdentityOp(20);
        let out = double_pass(&op, &id, &id, &GhepConfig::new(3, 4, 5)).unwrap();
        let exact = (out.lambda[0] - 10.0).abs() < 1e-8
            && (out.lambda[1] - 5.0).abs() < 1e-8
            && (out.lambda[2] - 1.0).abs() < 1e-8;
        checks.check(
            "randeig: exact low-rank recovery and counts",
            exact && out.counts.a_applies == 14,
            format!("lambda {:?}, a-applies {}", &out.lambda, out.counts.a_applies),
        );
    }

    if checks.failures == 0 {
        println!("verification complete: all checks passed");
        ExitCode::SUCCESS
    } else {
        println!("verification complete: {} check(s) FAILED", checks.failures);
        ExitCode::from(3)
    }
}
