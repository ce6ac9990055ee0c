use nalgebra::{DMatrix, DVector};
use proptest::prelude::*;

use super::*;
use crate::control::{solve_dare, solve_dlyap, stack_gain_identity, PenaltyPair, SystemModel};
use crate::data::{generate_batch, sample_covariances, DataMode};
use crate::sysid::least_squares;

fn benchmark_cov(sigma: f64, seed: u64) -> crate::data::SampleCov {
    let model = SystemModel::benchmark();
    let batch = generate_batch(&model, 20, sigma, DataMode::IidPairs, seed).unwrap();
    sample_covariances(&batch)
}

#[test]
fn svec_examples() {
    let v = svec(&DMatrix::identity(2, 2)).unwrap();
    assert_eq!(v.as_slice(), &[1.0, 0.0, 1.0]);

    let m = DMatrix::from_row_slice(2, 2, &[0.0, 1.0, 1.0, 0.0]);
    let v = svec(&m).unwrap();
    assert!((v[1] - std::f64::consts::SQRT_2).abs() < 1e-15);
    assert_eq!(v[0], 0.0);
    assert_eq!(v[2], 0.0);
}

#[test]
fn smat_examples() {
    let m = smat(&[1.0, 0.0, 1.0]).unwrap();
    assert_eq!(m, DMatrix::identity(2, 2));
    let z = smat(&[0.0; 6]).unwrap();
    assert_eq!(z, DMatrix::zeros(3, 3));
}

#[test]
fn svec_rejects_asymmetric_input() {
    let m = DMatrix::from_row_slice(2, 2, &[0.0, 1.0, 0.0, 0.0]);
    assert!(matches!(svec(&m), Err(crate::Error::NotSymmetric { .. })));
}

#[test]
fn smat_rejects_non_triangular_length() {
    assert!(matches!(
        smat(&[1.0, 2.0]),
        Err(crate::Error::BadSvecLength { len: 2 })
    ));
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn svec_isometry_and_inverse(d in 1usize..=12, raw in proptest::collection::vec(-5.0f64..5.0, 144), raw2 in proptest::collection::vec(-5.0f64..5.0, 144)) {
        let sym = |raw: &[f64]| {
            let g = DMatrix::from_fn(d, d, |i, j| raw[i * d + j]);
            (&g + g.transpose()) * 0.5
        };
        let a = sym(&raw);
        let b = sym(&raw2);
        let va = svec(&a).unwrap();
        let vb = svec(&b).unwrap();
        // Isometry: ⟨A, B⟩_F = svec(A)·svec(B).
        let frob = (&a * &b).trace();
        prop_assert!((va.dot(&vb) - frob).abs() <= 1e-12 * (1.0 + frob.abs()));
        // Inverse pair.
        let back = smat(va.as_slice()).unwrap();
        prop_assert!((&back - &a).amax() <= 1e-15 * (1.0 + a.amax()));
    }
}

#[test]
fn assemble_counting_oracle() {
    let cov = benchmark_cov(0.3, 1);
    let penalties = PenaltyPair::benchmark();
    let prog = assemble(&cov, &penalties, 0.1).unwrap();

    assert_eq!(prog.num_vars, 51);
    assert_eq!(prog.eq_matrix.rows, 9);
    let dims: Vec<usize> = prog.psd_blocks.iter().map(|b| b.dim).collect();
    assert_eq!(dims, vec![6, 6, 9]);

    let span_len = |name: &str| prog.layout.span(name).unwrap().kind.len();
    assert_eq!(span_len("Sigma"), 6);
    assert_eq!(span_len("S"), 18);
    assert_eq!(span_len("L"), 6);
    assert_eq!(span_len("M"), 21);
}

#[test]
fn assemble_lambda_zero_objective_skips_m_span() {
    let cov = benchmark_cov(0.3, 2);
    let penalties = PenaltyPair::benchmark();
    let prog = assemble(&cov, &penalties, 0.0).unwrap();
    let m_span = prog.layout.span("M").unwrap();
    for &(idx, _) in &prog.objective {
        assert!(
            idx < m_span.offset || idx >= m_span.offset + m_span.kind.len(),
            "objective touches M span at λ=0"
        );
    }
}

#[test]
fn assemble_objective_is_affine_in_lambda() {
    let cov = benchmark_cov(0.5, 3);
    let penalties = PenaltyPair::benchmark();
    let l1 = 0.2;
    let l2 = 0.9;
    let p1 = assemble(&cov, &penalties, l1).unwrap();
    let p2 = assemble(&cov, &penalties, l2).unwrap();
    let c1 = p1.objective_dense();
    let c2 = p2.objective_dense();
    let m_span = p1.layout.span("M").unwrap();
    for idx in 0..p1.num_vars {
        let in_m = idx >= m_span.offset && idx < m_span.offset + m_span.kind.len();
        if in_m {
            assert!(
                (c1[idx] * l2 - c2[idx] * l1).abs() <= 1e-14 * (1.0 + c2[idx].abs()),
                "M-span coefficient not proportional at {idx}"
            );
        } else {
            assert_eq!(c1[idx], c2[idx], "non-M coefficient changed at {idx}");
        }
    }
}

#[test]
fn assemble_rejects_negative_lambda() {
    let cov = benchmark_cov(0.3, 4);
    assert!(matches!(
        assemble(&cov, &PenaltyPair::benchmark(), -1.0),
        Err(crate::Error::NegativeLambda { .. })
    ));
}

/// Pack the certainty-equivalence solution into the SDP variables and
/// check feasibility on noiseless data.
#[test]
fn certainty_equivalence_point_is_feasible_on_noiseless_data() {
    let model = SystemModel::benchmark();
    let penalties = PenaltyPair::benchmark();
    let batch = generate_batch(&model, 20, 0.0, DataMode::IidPairs, 9).unwrap();
    let cov = sample_covariances(&batch);

    let est = least_squares(&cov).unwrap();
    let dare = solve_dare(&est.model().unwrap(), &penalties).unwrap();
    let closed = est.model().unwrap().closed_loop(&dare.gain).unwrap();
    let sigma_ce = solve_dlyap(&closed, &DMatrix::identity(3, 3))
        .unwrap()
        .matrix;

    // V = Φ⁻¹[K; I], S = VΣ, L = Ū0SΣ⁻¹SᵀŪ0ᵀ = KΣKᵀ, M = VΣVᵀ.
    let stacked = stack_gain_identity(&dare.gain.matrix);
    let v = cov.phi.clone().cholesky().unwrap().solve(&stacked);
    let s = &v * &sigma_ce;
    let l = &dare.gain.matrix * &sigma_ce * dare.gain.matrix.transpose();
    let m = &v * &sigma_ce * v.transpose();

    let prog = assemble(&cov, &penalties, 0.0).unwrap();
    let mut x = DVector::zeros(prog.num_vars);
    let fill_sym = |x: &mut DVector<f64>, name: &str, mat: &DMatrix<f64>| {
        let span = prog.layout.span(name).unwrap();
        let v = svec(mat).unwrap();
        for (k, &val) in v.iter().enumerate() {
            x[span.offset + k] = val;
        }
    };
    fill_sym(&mut x, "Sigma", &sigma_ce);
    fill_sym(&mut x, "L", &l);
    fill_sym(&mut x, "M", &m);
    let s_span = prog.layout.span("S").unwrap();
    for c in 0..3 {
        for r in 0..6 {
            x[s_span.offset + c * 6 + r] = s[(r, c)];
        }
    }

    assert!(prog.equality_residual(&x) <= 1e-6);
    let min_eig = prog.min_block_eigenvalue(&x).unwrap();
    assert!(min_eig >= -1e-6, "CE feasibility violated: {min_eig}");
}

#[test]
fn solve_one_variable_bound() {
    // min x subject to x ⪰ 1 as a 1×1 PSD block.
    let mut layout = VarLayout::default();
    layout.push("x", VarKind::Rectangular(1, 1));
    let mut affine = SparseTriplets::new(1, 1);
    affine.push(0, 0, 1.0);
    let prog = ConicProgram {
        num_vars: 1,
        objective: vec![(0, 1.0)],
        eq_matrix: SparseTriplets::new(0, 1),
        eq_rhs: vec![],
        psd_blocks: vec![PsdBlock {
            dim: 1,
            affine,
            constant: vec![-1.0],
        }],
        layout,
    };
    let report = solve(&prog);
    assert_eq!(report.status, SolveStatus::Optimal);
    assert!((report.x[0] - 1.0).abs() <= 1e-6, "x = {}", report.x[0]);
    assert!((report.objective - 1.0).abs() <= 1e-6);
}

#[test]
fn solve_detects_infeasible_toy() {
    // x = 0 (zero cone) conflicts with x − 1 ⪰ 0.
    let mut layout = VarLayout::default();
    layout.push("x", VarKind::Rectangular(1, 1));
    let mut eq = SparseTriplets::new(1, 1);
    eq.push(0, 0, 1.0);
    let mut affine = SparseTriplets::new(1, 1);
    affine.push(0, 0, 1.0);
    let prog = ConicProgram {
        num_vars: 1,
        objective: vec![(0, 1.0)],
        eq_matrix: eq,
        eq_rhs: vec![0.0],
        psd_blocks: vec![PsdBlock {
            dim: 1,
            affine,
            constant: vec![-1.0],
        }],
        layout,
    };
    let report = solve(&prog);
    assert_eq!(report.status, SolveStatus::Infeasible);
}

#[test]
fn solve_detects_unbounded_direction() {
    // min x with x ≤ 1, i.e. 1 − x ⪰ 0: unbounded below.
    let mut layout = VarLayout::default();
    layout.push("x", VarKind::Rectangular(1, 1));
    let mut affine = SparseTriplets::new(1, 1);
    affine.push(0, 0, -1.0);
    let prog = ConicProgram {
        num_vars: 1,
        objective: vec![(0, 1.0)],
        eq_matrix: SparseTriplets::new(0, 1),
        eq_rhs: vec![],
        psd_blocks: vec![PsdBlock {
            dim: 1,
            affine,
            constant: vec![1.0],
        }],
        layout,
    };
    let report = solve(&prog);
    assert_eq!(report.status, SolveStatus::Unbounded);
}

#[test]
fn benchmark_instance_matches_riccati_objective() {
    // At λ = 0 the SDP optimum equals the certainty-equivalence cost
    // Tr(P̂) computed on the estimated system.
    let penalties = PenaltyPair::benchmark();
    for seed in [5u64, 6, 7] {
        let cov = benchmark_cov(0.5, seed);
        let est = least_squares(&cov).unwrap();
        let dare = solve_dare(&est.model().unwrap(), &penalties).unwrap();

        let prog = assemble(&cov, &penalties, 0.0).unwrap();
        let report = solve(&prog);
        assert_eq!(report.status, SolveStatus::Optimal);
        let rel = (report.objective - dare.optimal_cost).abs() / dare.optimal_cost.abs();
        assert!(rel <= 1e-4, "seed {seed}: objective mismatch {rel}");
    }
}

#[test]
fn optimal_reports_reconstruct_feasible_blocks() {
    let penalties = PenaltyPair::benchmark();
    for seed in [11u64, 12, 13, 14] {
        let cov = benchmark_cov(0.7, seed);
        for lambda in [0.0, 0.1, 1.0] {
            let prog = assemble(&cov, &penalties, lambda).unwrap();
            let report = solve(&prog);
            assert_eq!(
                report.status,
                SolveStatus::Optimal,
                "seed {seed} λ={lambda}"
            );
            let x = DVector::from_column_slice(&report.x);
            let min_eig = prog.min_block_eigenvalue(&x).unwrap();
            assert!(
                min_eig >= -1e-7,
                "seed {seed} λ={lambda}: min eig {min_eig}"
            );
        }
    }
}

#[test]
fn sdpa_round_trip_preserves_program() {
    let cov = benchmark_cov(0.4, 21);
    let penalties = PenaltyPair::benchmark();
    let prog = assemble(&cov, &penalties, 0.1).unwrap();

    let dir = std::env::temp_dir().join(format!("covlqr-sdpa-{}", std::process::id()));
    std::fs::create_dir_all(&dir).unwrap();
    let path = dir.join("bench.dat-s");
    export_sdpa(&prog, &path).unwrap();
    let back = import_sdpa(&path).unwrap();

    assert_eq!(back.num_vars, prog.num_vars);
    // Objective preserved on any point, here a pseudorandom one.
    let x = DVector::from_fn(prog.num_vars, |i, _| ((i * 37 % 11) as f64 - 5.0) * 0.3);
    let before = prog.objective_value(&x);
    let after = back.objective_value(&x);
    assert!((before - after).abs() <= 1e-9 * (1.0 + before.abs()));

    // Solving the reimported program (equalities now paired inequalities)
    // reproduces the optimum.
    let r1 = solve(&prog);
    let r2 = solve(&back);
    assert_eq!(r1.status, SolveStatus::Optimal);
    assert_eq!(r2.status, SolveStatus::Optimal);
    assert!(
        (r1.objective - r2.objective).abs() <= 1e-5 * (1.0 + r1.objective.abs()),
        "optimum drifted across round trip: {} vs {}",
        r1.objective,
        r2.objective
    );
    std::fs::remove_dir_all(&dir).ok();
}

#[test]
fn sdpa_empty_program_round_trips() {
    let prog = ConicProgram {
        num_vars: 0,
        objective: vec![],
        eq_matrix: SparseTriplets::new(0, 0),
        eq_rhs: vec![],
        psd_blocks: vec![],
        layout: VarLayout::default(),
    };
    let dir = std::env::temp_dir().join(format!("covlqr-sdpa-empty-{}", std::process::id()));
    std::fs::create_dir_all(&dir).unwrap();
    let path = dir.join("empty.dat-s");
    export_sdpa(&prog, &path).unwrap();
    let body = std::fs::read_to_string(&path).unwrap();
    assert!(body.lines().any(|l| l.trim() == "0"));
    let back = import_sdpa(&path).unwrap();
    assert_eq!(back.num_vars, 0);
    assert!(back.psd_blocks.is_empty());
    std::fs::remove_dir_all(&dir).ok();
}

#[test]
fn sdpa_hand_written_instance_solves_to_one() {
    let dir = std::env::temp_dir().join(format!("covlqr-sdpa-hand-{}", std::process::id()));
    std::fs::create_dir_all(&dir).unwrap();
    let path = dir.join("hand.dat-s");
    std::fs::write(&path, "1\n1\n1\n1.0\n0 1 1 1 1.0\n1 1 1 1 1.0\n").unwrap();
    let prog = import_sdpa(&path).unwrap();
    let report = solve(&prog);
    assert_eq!(report.status, SolveStatus::Optimal);
    assert!((report.objective - 1.0).abs() <= 1e-6);
    std::fs::remove_dir_all(&dir).ok();
}

#[test]
fn sdpa_malformed_file_reports_line() {
    let dir = std::env::temp_dir().join(format!("covlqr-sdpa-bad-{}", std::process::id()));
    std::fs::create_dir_all(&dir).unwrap();
    let path = dir.join("bad.dat-s");
    std::fs::write(&path, "1\n1\n1\n1.0\n0 1 1 oops 1.0\n").unwrap();
    match import_sdpa(&path) {
        Err(crate::Error::Parse { line, .. }) => assert_eq!(line, 5),
        other => panic!("expected parse error, got {other:?}"),
    }
    std::fs::remove_dir_all(&dir).ok();
}

#[test]
fn backend_lookup_is_narrow() {
    assert!(backend_by_name("interior_point").is_ok());
    assert!(matches!(
        backend_by_name("mosek"),
        Err(crate::Error::Config(_))
    ));
}
