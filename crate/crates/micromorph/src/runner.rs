//! Experiment orchestration and artifact output.
//!
//! Every experiment writes a `summary.json` with the verdicts, one or more
//! plot-ready CSV tables, and (where a field is computed) a legacy-VTK
//! snapshot. All numeric output is formatted deterministically, so two runs
//! with the same config and seed produce byte-identical CSV/JSON.

use crate::analysis::{self, ProbeSettings};
use crate::config::{Experiment, LoadPreset, RunConfig};
use crate::energy::{LinearCoefficients, MaterialModel};
use crate::fespace::{self, FieldP, FieldU, H1VectorSpace, HCurlTensorSpace};
use crate::geometry::{build_mesh, refine, DomainSpec, Mesh, Vec3};
use crate::quadrature::QuadratureRule;
use crate::solve::{self, manufactured, LoadSpec, NonlinearOptions, SolveReport};
use crate::transform::{
    check_adjoint, check_curl_identity, check_div_identity, extend_by_zero, safe_for_stencil,
    CutoffSpec, InnerVariation,
};
use crate::{Error, Result};
use nalgebra::Matrix3;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde_json::{json, Value};
use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::Path;

/// Outcome of a run: the verdict plus the summary that was written.
pub struct RunOutcome {
    pub passed: bool,
    pub summary: Value,
}

fn num(x: f64) -> String {
    format!("{x:.12e}")
}

fn write_csv(dir: &Path, name: &str, header: &[&str], rows: &[Vec<String>]) -> Result<()> {
    let mut w = BufWriter::new(File::create(dir.join(name))?);
    writeln!(w, "{}", header.join(","))?;
    for row in rows {
        writeln!(w, "{}", row.join(","))?;
    }
    Ok(())
}

fn write_summary(dir: &Path, summary: &Value) -> Result<()> {
    let mut w = BufWriter::new(File::create(dir.join("summary.json"))?);
    let text = serde_json::to_string_pretty(summary)
        .map_err(|e| Error::ConfigError(format!("summary serialization failed: {e}")))?;
    writeln!(w, "{text}")?;
    Ok(())
}

fn write_fields_vtk(dir: &Path, mesh: &Mesh, u: &FieldU, p: &FieldP) -> Result<()> {
    let mut p_norm = Vec::with_capacity(mesh.n_tets());
    let mut curl_norm = Vec::with_capacity(mesh.n_tets());
    for t in 0..mesh.n_tets() {
        let l = [0.25; 4];
        p_norm.push(fespace::eval_p_local(mesh, p, t, &l).norm());
        curl_norm.push(fespace::eval_curl_p_local(mesh, p, t).norm());
    }
    let mut w = BufWriter::new(File::create(dir.join("fields.vtk"))?);
    mesh.write_vtk(
        &mut w,
        &[("displacement", 3, &u.coeffs)],
        &[("p_frobenius", 1, &p_norm), ("curl_p_frobenius", 1, &curl_norm)],
    )?;
    Ok(())
}

fn mesh_for(config: &RunConfig) -> Mesh {
    build_mesh(config.domain, 1 << config.level)
}

fn load_spec(preset: &LoadPreset) -> LoadSpec {
    match preset {
        LoadPreset::Zero => LoadSpec::zero(),
        LoadPreset::Uniform(f) => {
            let f = *f;
            LoadSpec {
                f: Box::new(move |_| f),
                m: Box::new(|_| Matrix3::zeros()),
                div_m: Some(Box::new(|_| Vec3::zeros())),
            }
        }
        LoadPreset::Manufactured => manufactured::Manufactured::standard().loads(),
    }
}

fn solve_fields(
    mesh: &Mesh,
    config: &RunConfig,
) -> Result<(FieldU, FieldP, SolveReport)> {
    let u_space = H1VectorSpace::new(mesh);
    let p_space = HCurlTensorSpace::new(mesh);
    let load = load_spec(&config.load);
    match &config.model {
        MaterialModel::Linear(coeffs) => {
            solve::solve_linear(mesh, &u_space, &p_space, coeffs, &load, config.cg_tol)
        }
        MaterialModel::Nonlinear(params) => {
            let opts = NonlinearOptions { grad_tol: config.grad_tol, ..Default::default() };
            solve::solve_nonlinear(mesh, &u_space, &p_space, params, &load, &opts)
        }
    }
}

/// Run one experiment, writing artifacts into `config.out_dir`.
pub fn run(experiment: Experiment, config: &RunConfig) -> Result<RunOutcome> {
    std::fs::create_dir_all(&config.out_dir)?;
    match experiment {
        Experiment::Solve => run_solve(config),
        Experiment::VerifyTransforms => run_verify_transforms(config),
        Experiment::Korn => run_korn(config),
        Experiment::Helmholtz => run_helmholtz(config),
        Experiment::Probe => run_probe(config),
        Experiment::FullRegularity => run_full_regularity(config),
    }
}

fn run_solve(config: &RunConfig) -> Result<RunOutcome> {
    let mesh = mesh_for(config);
    let (u, p, report) = solve_fields(&mesh, config)?;
    let passed = report.el_residual.is_finite();
    let rows = vec![
        vec!["dofs_u".into(), format!("{}", report.dofs_u)],
        vec!["dofs_p".into(), format!("{}", report.dofs_p)],
        vec!["free_dofs".into(), format!("{}", report.free_dofs)],
        vec!["cg_iterations".into(), format!("{}", report.cg_iterations)],
        vec!["energy".into(), num(report.energy)],
        vec!["el_residual".into(), num(report.el_residual)],
        vec!["norm_u_h1".into(), num(report.norm_u_h1)],
        vec!["norm_p_hcurl".into(), num(report.norm_p_hcurl)],
    ];
    write_csv(&config.out_dir, "report.csv", &["quantity", "value"], &rows)?;
    write_fields_vtk(&config.out_dir, &mesh, &u, &p)?;
    let summary = json!({
        "experiment": "solve",
        "report": report,
        "passed": passed,
    });
    write_summary(&config.out_dir, &summary)?;
    Ok(RunOutcome { passed, summary })
}

/// An interior point with 0.4 clearance, for cutoffs supported inside the
/// domain (there the pullback adjointness is an exact change of variables).
fn interior_center(domain: &DomainSpec) -> Vec3 {
    match domain {
        DomainSpec::UnitCube => Vec3::new(0.5, 0.5, 0.5),
        DomainSpec::LPrism => Vec3::new(0.5, 0.5, 0.5),
        DomainSpec::Box { a, b, c } => Vec3::new(a / 2.0, b / 2.0, c / 2.0),
    }
}

fn random_matrix<R: Rng>(rng: &mut R) -> Matrix3<f64> {
    Matrix3::from_fn(|_, _| rng.random::<f64>() * 2.0 - 1.0)
}

fn run_verify_transforms(config: &RunConfig) -> Result<RunOutcome> {
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    let domain = config.domain;
    let mut rows = Vec::new();
    let mut passed = true;
    let record = |rows: &mut Vec<Vec<String>>, check: &str, h: f64, value: f64, tol: f64| {
        let ok = value <= tol;
        rows.push(vec![
            check.into(),
            num(h),
            num(value),
            num(tol),
            if ok { "pass" } else { "fail" }.into(),
        ]);
        ok
    };

    // pointwise curl/div identities at the boundary probe point
    let x0 = domain.probe_point();
    let cone = domain.exterior_cone(&x0)?;
    let cutoff = CutoffSpec::new(x0, 0.5)?;
    let g_q = random_matrix(&mut rng);
    let g_m = random_matrix(&mut rng);
    let a_q = Vec3::new(1.3, -0.7, 2.1);
    let a_m = Vec3::new(-0.9, 1.7, 0.8);
    // Q = sin(a.x + 1) G with Curl rows grad(sin) x g_i; M analogous with
    // Div rows <m_i, grad(sin)>
    let q = move |x: &Vec3| g_q * (a_q.dot(x) + 1.0).sin();
    let curl_q = move |x: &Vec3| {
        let gs = a_q * (a_q.dot(x) + 1.0).cos();
        Matrix3::from_fn(|i, j| gs.cross(&g_q.row(i).transpose())[j])
    };
    let m = move |x: &Vec3| g_m * (a_m.dot(x) + 1.0).sin();
    let div_m = move |x: &Vec3| {
        let gs = a_m * (a_m.dot(x) + 1.0).cos();
        Vec3::from_fn(|i, _| g_m.row(i).transpose().dot(&gs))
    };
    for hnorm in [0.05, 0.025] {
        let iv = InnerVariation::new(cutoff, -cone.axis * hnorm, 1.0)?;
        let (lo, hi) = domain.bounding_box();
        let mut samples = Vec::new();
        while samples.len() < 200 {
            let x = Vec3::new(
                lo[0] + rng.random::<f64>() * (hi[0] - lo[0]),
                lo[1] + rng.random::<f64>() * (hi[1] - lo[1]),
                lo[2] + rng.random::<f64>() * (hi[2] - lo[2]),
            );
            if domain.contains(&x) && safe_for_stencil(&iv, &x, 0.05) {
                samples.push(x);
            }
        }
        let worst_curl = check_curl_identity(&iv, &q, &curl_q, &samples, 1e-3);
        let worst_div = check_div_identity(&iv, &m, &div_m, &samples, 1e-3);
        passed &= record(&mut rows, "curl_identity", hnorm, worst_curl, 1e-5);
        passed &= record(&mut rows, "div_identity", hnorm, worst_div, 1e-5);
    }

    // integral adjointness with an interior-supported variation
    let center = interior_center(&domain);
    let cutoff_int = CutoffSpec::new(center, 0.4)?;
    let dir = Vec3::new(1.0, 2.0, -0.5).normalize();
    let g2 = random_matrix(&mut rng);
    let q_int = extend_by_zero(&domain, move |x: &Vec3| g_q * (a_q.dot(x) + 1.0).sin());
    let m_int = extend_by_zero(&domain, move |x: &Vec3| g2 * (a_m.dot(x) + 1.0).cos());
    let rule = QuadratureRule::for_order(6);
    for hnorm in [0.05, 0.025] {
        let iv = InnerVariation::new(cutoff_int, dir * hnorm, 1.0)?;
        let mut rels = Vec::new();
        for n in [8usize, 16] {
            let mesh = build_mesh(domain, n);
            let (_, _, rel) = check_adjoint(&iv, &mesh, &q_int, &m_int, &rule);
            rels.push(rel);
        }
        passed &= record(&mut rows, "adjoint_coarse", hnorm, rels[0], 1e-3);
        passed &= record(&mut rows, "adjoint_refined", hnorm, rels[1], 1e-4);
    }

    write_csv(
        &config.out_dir,
        "transform_checks.csv",
        &["check", "h", "defect", "tolerance", "verdict"],
        &rows,
    )?;
    let summary = json!({
        "experiment": "verify-transforms",
        "checks": rows.iter().map(|r| json!({
            "check": r[0], "h": r[1], "defect": r[2], "tolerance": r[3], "verdict": r[4],
        })).collect::<Vec<_>>(),
        "passed": passed,
    });
    write_summary(&config.out_dir, &summary)?;
    Ok(RunOutcome { passed, summary })
}

fn run_korn(config: &RunConfig) -> Result<RunOutcome> {
    let mut mesh = build_mesh(config.domain, 1);
    let mut reports = Vec::new();
    for level in 0..config.levels {
        reports.push((level, analysis::korn_constant(&mesh)?));
        if level + 1 < config.levels {
            mesh = refine(&mesh);
        }
    }
    let mut passed = true;
    for w in reports.windows(2) {
        passed &= w[1].1.korn_constant >= w[0].1.korn_constant - 1e-10;
    }
    let final_increment = if reports.len() >= 2 {
        let a = reports[reports.len() - 2].1.korn_constant;
        let b = reports[reports.len() - 1].1.korn_constant;
        (b - a) / b
    } else {
        0.0
    };
    passed &= final_increment <= 0.10;

    // Rayleigh bound on seeded random admissible fields
    let c_final = reports.last().unwrap().1.korn_constant;
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    let space = HCurlTensorSpace::new(&mesh);
    let mut worst_ratio: f64 = 0.0;
    for _ in 0..5 {
        let mut p =
            FieldP { coeffs: (0..space.dim()).map(|_| rng.random::<f64>() - 0.5).collect() };
        p.constrain(&space);
        worst_ratio = worst_ratio.max(analysis::rayleigh_ratio(&mesh, &p)?);
    }
    passed &= worst_ratio <= c_final + 1e-8;

    let rows: Vec<Vec<String>> = reports
        .iter()
        .map(|(level, r)| {
            vec![
                format!("{level}"),
                format!("{}", r.free_dofs),
                num(r.lambda_min),
                num(r.korn_constant),
                format!("{}", r.iterations),
            ]
        })
        .collect();
    write_csv(
        &config.out_dir,
        "korn.csv",
        &["level", "free_dofs", "lambda_min", "korn_constant", "iterations"],
        &rows,
    )?;
    let summary = json!({
        "experiment": "korn",
        "levels": reports.iter().map(|(l, r)| json!({
            "level": l, "free_dofs": r.free_dofs,
            "lambda_min": num(r.lambda_min), "korn_constant": num(r.korn_constant),
        })).collect::<Vec<_>>(),
        "final_relative_increment": num(final_increment),
        "worst_rayleigh_ratio": num(worst_ratio),
        "passed": passed,
    });
    write_summary(&config.out_dir, &summary)?;
    Ok(RunOutcome { passed, summary })
}

fn run_helmholtz(config: &RunConfig) -> Result<RunOutcome> {
    let mesh = mesh_for(config);
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    let modes: Vec<(f64, Vec3, Vec3)> = (0..4)
        .map(|_| {
            (
                rng.random::<f64>() * 2.0 - 1.0,
                Vec3::from_fn(|_, _| rng.random::<f64>() * 4.0 - 2.0),
                Vec3::from_fn(|_, _| rng.random::<f64>() * 2.0 - 1.0),
            )
        })
        .collect();
    let p = move |x: &Vec3| {
        let mut out = Vec3::zeros();
        for (amp, wave, dir) in &modes {
            out += dir * (*amp * (wave.dot(x) + 0.3).sin());
        }
        out
    };
    let split = analysis::helmholtz_decompose(&mesh, &p, config.cg_tol)?;
    let scale = split.norm_p * split.norm_p;
    let passed = split.orthogonality.abs() <= 1e-9 * scale
        && split.pythagoras_defect.abs() <= 1e-9 * scale;
    let rows = vec![
        vec!["norm_p".into(), num(split.norm_p)],
        vec!["norm_grad_v".into(), num(split.norm_grad_v)],
        vec!["norm_q".into(), num(split.norm_q)],
        vec!["orthogonality".into(), num(split.orthogonality)],
        vec!["pythagoras_defect".into(), num(split.pythagoras_defect)],
    ];
    write_csv(&config.out_dir, "helmholtz.csv", &["quantity", "value"], &rows)?;
    let summary = json!({
        "experiment": "helmholtz",
        "norm_p": num(split.norm_p),
        "norm_grad_v": num(split.norm_grad_v),
        "norm_q": num(split.norm_q),
        "orthogonality": num(split.orthogonality),
        "pythagoras_defect": num(split.pythagoras_defect),
        "cg_iterations": split.cg.iterations,
        "passed": passed,
    });
    write_summary(&config.out_dir, &summary)?;
    Ok(RunOutcome { passed, summary })
}

fn run_probe(config: &RunConfig) -> Result<RunOutcome> {
    // calibration oracles on analytic fields; the grid is fixed at 128 per
    // unit so dyadic shifts down to 2^-7 stay grid-aligned
    let domain = config.domain;
    let settings = ProbeSettings { grid_per_unit: 128, ..Default::default() };
    let scalar = |f: Box<dyn Fn(&Vec3) -> f64>| {
        move |x: &Vec3| {
            let mut m = Matrix3::zeros();
            m[(0, 0)] = f(x);
            Some(m)
        }
    };
    let step = scalar(Box::new(|x: &Vec3| if x[2] >= 0.5 { 1.0 } else { 0.0 }));
    let smooth = scalar(Box::new(|x: &Vec3| (2.0 * x[0]).sin() * x[1] + x[2] * x[2]));
    let step_idx = analysis::regularity_index(&domain, &step, 0, &settings)?;
    let smooth_idx = analysis::regularity_index(&domain, &smooth, 0, &settings)?;
    let passed = (step_idx.s_est - 0.5).abs() <= 0.05 && smooth_idx.s_est == 1.0;

    let mut rows = Vec::new();
    for (name, idx) in [("step", &step_idx), ("smooth", &smooth_idx)] {
        for r in &idx.rows {
            rows.push(vec![
                name.into(),
                format!("{}", r.k),
                num(r.h_norm),
                format!("{}", r.direction),
                num(r.integral),
                num(r.integral / r.h_norm),
            ]);
        }
    }
    write_csv(
        &config.out_dir,
        "probe_calibration.csv",
        &["field", "k", "h", "direction", "integral", "quotient"],
        &rows,
    )?;
    let summary = json!({
        "experiment": "probe",
        "step_s_est": num(step_idx.s_est),
        "step_slope": num(step_idx.slope),
        "smooth_s_est": num(smooth_idx.s_est),
        "passed": passed,
    });
    write_summary(&config.out_dir, &summary)?;
    Ok(RunOutcome { passed, summary })
}

fn probe_json(v: &analysis::ProbeVerdict) -> Value {
    json!({
        "s_est": v.index.as_ref().map(|i| num(i.s_est)),
        "slope": v.index.as_ref().map(|i| num(i.slope)),
        "threshold": num(v.threshold),
        "verdict": v.verdict,
    })
}

fn run_full_regularity(config: &RunConfig) -> Result<RunOutcome> {
    let mesh = mesh_for(config);
    let (u, p, report) = solve_fields(&mesh, config)?;
    let settings = ProbeSettings {
        grid_per_unit: config.grid_per_unit,
        seed: config.seed,
        ..Default::default()
    };
    let probe = analysis::regularity_experiment(&mesh, &u, &p, config.tol_s, &settings)?;

    for (name, v) in [
        ("probe_u.csv", &probe.probe_u),
        ("probe_p.csv", &probe.probe_p),
        ("probe_curl_p.csv", &probe.probe_curl_p),
    ] {
        let Some(index) = &v.index else { continue };
        let rows: Vec<Vec<String>> = index
            .rows
            .iter()
            .map(|r| {
                vec![
                    format!("{}", r.k),
                    num(r.h_norm),
                    format!("{}", r.direction),
                    num(r.integral),
                    num(r.integral / r.h_norm),
                ]
            })
            .collect();
        write_csv(&config.out_dir, name, &["k", "h", "direction", "integral", "quotient"], &rows)?;
    }
    let sweep_rows: Vec<Vec<String>> = probe
        .sweep
        .iter()
        .map(|r| {
            vec![
                format!("{}", r.k),
                num(r.h_norm),
                "cone-axis".into(),
                num(r.quotient * r.h_norm),
                num(r.quotient),
            ]
        })
        .collect();
    write_csv(
        &config.out_dir,
        "sweep.csv",
        &["k", "h", "direction", "integral", "quotient"],
        &sweep_rows,
    )?;
    write_fields_vtk(&config.out_dir, &mesh, &u, &p)?;

    let passed = probe.all_pass();
    let summary = json!({
        "experiment": "full-regularity",
        "report": report,
        "probe_u": probe_json(&probe.probe_u),
        "probe_p": probe_json(&probe.probe_p),
        "probe_curl_p": probe_json(&probe.probe_curl_p),
        "sweep_ratio": num(probe.sweep_ratio),
        "sweep_pass": probe.sweep_pass,
        "tol_s": num(probe.tol_s),
        "passed": passed,
    });
    write_summary(&config.out_dir, &summary)?;
    Ok(RunOutcome { passed, summary })
}

/// Identity-coefficient linear model, used by a few orchestration defaults.
pub fn identity_linear() -> MaterialModel {
    MaterialModel::Linear(LinearCoefficients::identity())
}
