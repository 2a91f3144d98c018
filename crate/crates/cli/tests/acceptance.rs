//! Acceptance criteria, one PASS/FAIL line each. Runs as a plain binary
//! (`harness = false`) and exits nonzero when any criterion fails.

use std::fs;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};
use std::time::Instant;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde_json::Value;
use wyf::{build_base, Config};
use wyf_core::energy::{differential, fd_variation, hessian, linearized_apply, linearized_scale, third_variation};
use wyf_core::geometry::{build_torus_background, Phi0Spec};
use wyf_core::reduction::{cubic_closed_form, detect_order_and_tensor, Reduction, SymTensor};
use wyf_core::slowflow::{forcing_norm, l2q_norm, solve_orthogonal_heat, weighted_norms, Path as SlowPath, SlowModel, TimeGrid};
use wyf_core::smms::{Base, Params, Smms};

struct Line {
    id: usize,
    name: &'static str,
    pass: bool,
    detail: String,
}

fn configs_dir() -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("../../configs")
}

fn load(name: &str) -> Value {
    serde_json::from_str(&fs::read_to_string(configs_dir().join(name)).unwrap()).unwrap()
}

fn read_json(path: &Path) -> Value {
    serde_json::from_str(&fs::read_to_string(path).unwrap_or_else(|e| panic!("{}: {e}", path.display()))).unwrap()
}

fn wyf(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_wyf")).args(args).output().expect("spawn wyf")
}

/// Runs the CLI twice into `<root>/<tag>/a` and `<root>/<tag>/b`.
/// Returns the first run's directory, output and wall time.
struct Twice {
    dir: PathBuf,
    out: Output,
    secs: f64,
    identical: bool,
}

fn twice(root: &Path, tag: &str, args: &[&str]) -> Twice {
    let run = |sub: &str| {
        let dir = root.join(tag).join(sub);
        let mut full: Vec<String> = args.iter().map(|s| s.to_string()).collect();
        full.push("-o".into());
        full.push(dir.display().to_string());
        let refs: Vec<&str> = full.iter().map(|s| s.as_str()).collect();
        let t0 = Instant::now();
        let out = wyf(&refs);
        (dir, out, t0.elapsed().as_secs_f64())
    };
    let (da, oa, secs) = run("a");
    let (db, ob, _) = run("b");
    Twice {
        identical: same_tree(&da, &db) && oa.stdout == ob.stdout && oa.status == ob.status,
        dir: da,
        out: oa,
        secs,
    }
}

fn same_tree(a: &Path, b: &Path) -> bool {
    let list = |d: &Path| -> Vec<(String, Vec<u8>)> {
        let mut v: Vec<_> = fs::read_dir(d)
            .map(|rd| {
                rd.filter_map(|e| e.ok())
                    .map(|e| (e.file_name().to_string_lossy().into_owned(), fs::read(e.path()).unwrap()))
                    .collect()
            })
            .unwrap_or_default();
        v.sort();
        v
    };
    let (la, lb) = (list(a), list(b));
    !la.is_empty() && la == lb
}

fn write_config(root: &Path, name: &str, v: &Value) -> String {
    let p = root.join(name);
    fs::write(&p, serde_json::to_string_pretty(v).unwrap()).unwrap();
    p.display().to_string()
}

fn ok_status(t: &Twice) -> Result<(), String> {
    if t.out.status.success() {
        Ok(())
    } else {
        Err(format!(
            "exit {:?}: {}",
            t.out.status.code(),
            String::from_utf8_lossy(&t.out.stderr).trim()
        ))
    }
}

fn f(v: &Value) -> f64 {
    v.as_f64().unwrap_or(f64::NAN)
}

fn torus_base() -> std::sync::Arc<Base> {
    let phi0 = Phi0Spec::parse("expr:0.3*cos(x1)").unwrap();
    let bg = build_torus_background(2, &[32, 32], &phi0, false).unwrap();
    Base::new(bg, Params::new(2, 2.0).unwrap()).unwrap()
}

/// `sum a_j cos(k_j . x + j)` over low modes.
fn smooth(base: &Base, a: &[f64]) -> Vec<f64> {
    const K: [[f64; 2]; 5] = [[1.0, 0.0], [0.0, 1.0], [1.0, 1.0], [2.0, -1.0], [0.0, 2.0]];
    base.bg()
        .coords()
        .iter()
        .map(|x| a.iter().zip(&K).enumerate().map(|(j, (c, k))| c * (k[0] * x[0] + k[1] * x[1] + j as f64).cos()).sum())
        .collect()
}

fn criterion_1() -> Line {
    let base = torus_base();
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    let mut coeffs = |scale: f64| -> Vec<f64> { (0..5).map(|_| scale * rng.gen_range(-1.0..1.0)).collect() };
    let unit = base.unit();
    let (mut e1, mut e2, mut e3) = (0.0f64, 0.0f64, 0.0f64);
    for _ in 0..25 {
        let u: Vec<f64> = smooth(&base, &coeffs(0.3)).iter().map(|s| s.exp()).collect();
        let v = smooth(&base, &coeffs(1.0));
        let w = smooth(&base, &coeffs(1.0));
        let s = Smms::new(base.clone(), u).unwrap();
        let exact = base.inner(&differential(&s), &v);
        let fd = fd_variation(&s, &[&v], 1e-5).unwrap();
        e1 = e1.max((exact - fd).abs() / fd.abs());
        let h2 = hessian(&unit, &v, &w);
        let f2 = fd_variation(&unit, &[&v, &w], 1e-4).unwrap();
        e2 = e2.max((h2 - f2).abs() / f2.abs());
    }
    // Low Fourier modes stand in for kernel directions.
    let low: Vec<Vec<f64>> = vec![
        base.bg().coords().iter().map(|x| x[0].cos()).collect(),
        base.bg().coords().iter().map(|x| x[1].sin()).collect(),
        base.bg().coords().iter().map(|x| (x[0] + x[1]).cos()).collect(),
    ];
    for v in &low {
        let h3 = third_variation(&unit, v, v, v);
        let f3 = fd_variation(&unit, &[v, v, v], 1e-3).unwrap();
        let scale = third_variation(&unit, &low[0], &low[0], &low[0]).abs().max(h3.abs());
        e3 = e3.max((h3 - f3).abs() / scale);
    }
    Line {
        id: 1,
        name: "variational consistency",
        pass: e1 < 1e-6 && e2 < 1e-5 && e3 < 1e-3,
        detail: format!("DE rel err {e1:.2e} (< 1e-6), D2E(1) rel err {e2:.2e} (< 1e-5), D3E(1) rel err {e3:.2e} (< 1e-3)"),
    }
}

fn criterion_2(root: &Path) -> (Line, bool) {
    let mut cfg = load("torus_m2.json");
    cfg["flow"]["t_end"] = 5.0.into();
    cfg["flow"]["record_every"] = 1.into();
    let path = write_config(root, "c2.json", &cfg);
    let t = twice(root, "c2", &["flow", "-c", &path]);
    let line = match ok_status(&t) {
        Err(e) => Line { id: 2, name: "conservation and dissipation", pass: false, detail: e },
        Ok(()) => {
            let s = read_json(&t.dir.join("summary.json"));
            let drift = f(&s["volume_drift"]);
            // Non-increasing in the sense of the flow module: per record, up to 1e-9 |r|.
            let inc = f(&s["max_r_increase_relative"]);
            let dis = f(&s["dissipation_mismatch"]);
            Line {
                id: 2,
                name: "conservation and dissipation",
                pass: drift < 1e-8 && inc <= 1e-9 && dis <= 1e-3 && t.secs < 120.0,
                detail: format!(
                    "volume drift {drift:.2e} (< 1e-8), max relative r increase {inc:.2e} (<= 1e-9), dissipation mismatch {dis:.2e} (<= 1e-3), {:.1} s (< 120 s)",
                    t.secs
                ),
            }
        }
    };
    (line, t.identical)
}

fn criterion_3(root: &Path) -> (Line, bool) {
    let path = configs_dir().join("torus_m2.json").display().to_string();
    let t = twice(root, "c3", &["flow", "-c", &path]);
    if let Err(e) = ok_status(&t) {
        return (Line { id: 3, name: "exponential convergence and theta", pass: false, detail: e }, t.identical);
    }
    let csv = t.dir.join("trajectory.csv").display().to_string();
    let r = twice(root, "c3_rates", &["rates", "-i", &csv]);
    let line = match ok_status(&r) {
        Err(e) => Line { id: 3, name: "exponential convergence and theta", pass: false, detail: e },
        Ok(()) => {
            let s = read_json(&t.dir.join("summary.json"));
            let fit = read_json(&r.dir.join("fit.json"));
            let dev = f(&s["final_curvature_deviation"]);
            let kind = fit["kind"].as_str().unwrap_or("?").to_string();
            let r2 = f(&fit["r2"]);
            let theta = f(&fit["theta"]);
            let secs = t.secs + r.secs;
            Line {
                id: 3,
                name: "exponential convergence and theta",
                pass: dev < 1e-6 && kind == "exponential" && r2 > 0.99 && (0.45..=0.55).contains(&theta) && secs < 300.0,
                detail: format!(
                    "final sup|R-r| {dev:.2e} (< 1e-6), fit {kind} rate {:.4} r2 {r2:.5} (> 0.99), theta {theta:.4} (in [0.45, 0.55]), {secs:.1} s (< 300 s)",
                    f(&fit["delta_or_exponent"])
                ),
            }
        }
    };
    (line, t.identical && r.identical)
}

fn criterion_4(root: &Path) -> (Line, bool) {
    let p0 = configs_dir().join("sphere_m0.json").display().to_string();
    let p1 = configs_dir().join("sphere_m1.json").display().to_string();
    let a = twice(root, "c4_m0", &["spectrum", "-c", &p0]);
    let b = twice(root, "c4_m1", &["spectrum", "-c", &p1]);
    let same = a.identical && b.identical;
    let t0 = Instant::now();
    if let Err(e) = ok_status(&a).and(ok_status(&b)) {
        return (Line { id: 4, name: "kernel detection", pass: false, detail: e }, same);
    }
    let k0 = read_json(&a.dir.join("spectrum.json"))["kernel_dim"].as_u64();
    let k1 = read_json(&b.dir.join("spectrum.json"))["kernel_dim"].as_u64();
    let cfg = Config::load(Path::new(&p0)).unwrap().resolve(None).unwrap();
    let base = build_base(&cfg).unwrap();
    let cos: Vec<f64> = base.bg().coords().iter().map(|c| c[0].cos()).collect();
    let res = base.norm(&linearized_apply(&base, &cos)) / (linearized_scale(&base) * base.norm(&cos));
    let secs = a.secs + b.secs + t0.elapsed().as_secs_f64();
    (
        Line {
            id: 4,
            name: "kernel detection",
            pass: k0 == Some(1) && res < 1e-8 && k1 == Some(0) && secs < 10.0,
            detail: format!(
                "S3 m=0 kernel dim {k0:?} (1), L(cos) residual {res:.2e} (< 1e-8); S3 m=1 kernel dim {k1:?} (0); {secs:.1} s (< 10 s)"
            ),
        },
        same,
    )
}

fn criterion_5(root: &Path) -> (Line, bool) {
    let p0 = configs_dir().join("sphere_m0.json").display().to_string();
    let t = twice(root, "c5", &["reduce", "-c", &p0]);
    if let Err(e) = ok_status(&t) {
        return (Line { id: 5, name: "Lyapunov-Schmidt reduction", pass: false, detail: e }, t.identical);
    }
    let t0 = Instant::now();
    let rep = read_json(&t.dir.join("reduction.json"));
    let verdict = rep["p"].as_str().unwrap_or("").to_string();
    let cfg = Config::load(Path::new(&p0)).unwrap().resolve(None).unwrap();
    let red = Reduction::new(build_base(&cfg).unwrap(), cfg.reduction.clone()).unwrap();
    let origin = red.solve_graph_map(&[0.0]).unwrap();
    let phi0 = origin.phi.iter().fold(0.0f64, |a, x| a.max(x.abs()));
    // |Phi(s)|/s must shrink with s.
    let ratio = |s: f64| red.base().norm(&red.solve_graph_map(&[s]).unwrap().phi) / s;
    let (q1, q2) = (ratio(1e-2), ratio(1e-3));
    let mut resid = 0.0f64;
    let mut flat = 0.0f64;
    for s in [-0.05, -0.03, -0.01, 0.01, 0.03, 0.05] {
        let gp = red.solve_graph_map(&[s]).unwrap();
        resid = resid.max(gp.residual);
        flat = flat.max((gp.value - red.f0()).abs());
    }
    let secs = t.secs + t0.elapsed().as_secs_f64();
    (
        Line {
            id: 5,
            name: "Lyapunov-Schmidt reduction",
            pass: phi0 == 0.0 && q2 < q1 / 5.0 && resid < 1e-10 && flat < 1e-9 && verdict == "integrable" && secs < 60.0,
            detail: format!(
                "Phi(0) sup {phi0:e}, |Phi(s)|/s {q1:.2e} -> {q2:.2e}, graph-map residual {resid:.2e} (< 1e-10), |F - F(0)| {flat:.2e} (< 1e-9), verdict {verdict}, {secs:.1} s (< 60 s)"
            ),
        },
        t.identical,
    )
}

fn criterion_6(root: &Path) -> (Line, bool) {
    let path = configs_dir().join("circulant.json").display().to_string();
    let t = twice(root, "c6", &["reduce", "-c", &path]);
    if let Err(e) = ok_status(&t) {
        return (Line { id: 6, name: "F3 normalization", pass: false, detail: e }, t.identical);
    }
    let rep = read_json(&t.dir.join("reduction.json"));
    let recorded = f(&rep["f3_factor"]["median"]);
    let cfg = Config::load(Path::new(&path)).unwrap().resolve(None).unwrap();
    let base = build_base(&cfg).unwrap();
    let rm_positive = base.rm().iter().all(|r| *r > 0.0);
    let red = Reduction::new(base, cfg.reduction.clone()).unwrap();
    let model = detect_order_and_tensor(&red).unwrap();
    let tensor = model.tensor.unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(6);
    let mut ratios = Vec::new();
    for _ in 0..5 {
        let mut d: Vec<f64> = (0..tensor.k).map(|_| rng.gen_range(-1.0..1.0)).collect();
        let n = d.iter().map(|x| x * x).sum::<f64>().sqrt();
        d.iter_mut().for_each(|x| *x /= n);
        let v = red.spectral().kernel_field(&d);
        ratios.push(tensor.eval(&d) / cubic_closed_form(red.base(), &v));
    }
    let mean = ratios.iter().sum::<f64>() / ratios.len() as f64;
    let spread = ratios.iter().fold(0.0f64, |a, r| a.max((r / mean - 1.0).abs()));
    let factor = [1.0, 1.0 / 6.0]
        .into_iter()
        .min_by(|a, b| (mean / a - 1.0).abs().total_cmp(&(mean / b - 1.0).abs()))
        .unwrap();
    let matches = (mean / factor - 1.0).abs() < 1e-3;
    let agrees = (recorded / factor - 1.0).abs() < 1e-3;
    (
        Line {
            id: 6,
            name: "F3 normalization",
            pass: rm_positive && spread < 1e-3 && matches && agrees,
            detail: format!(
                "R^m > 0: {rm_positive}; ratios over 5 random directions mean {mean:.6} spread {spread:.1e} (< 1e-3); factor {} ; recorded in reduction.json {recorded:.6}",
                if factor == 1.0 { "1" } else { "1/6" }
            ),
        },
        t.identical,
    )
}

fn cubic(t_shift: f64) -> SlowModel {
    SlowModel::new(2.0, SymTensor::from_sorted(1, 3, |_| 1.0), None, t_shift, 1e6, 64, 10, 0).unwrap()
}

fn criterion_7() -> Line {
    let t0 = Instant::now();
    // Ansatz residual for p = 3 and p = 4.
    let m3 = cubic(100.0);
    let fp4 = SymTensor::from_sorted(2, 4, |idx| match idx.iter().filter(|&&i| i == 0).count() {
        4 => 1.0,
        2 => 0.1,
        0 => 0.5,
        _ => 0.0,
    });
    let m4 = SlowModel::new(3.0, fp4, None, 100.0, 1e6, 64, 50, 1).unwrap();
    let ansatz = m3.ansatz_residual(&m3.grid().unwrap()).max(m4.ansatz_residual(&m4.grid().unwrap()));

    // Kernel ODE: backward case E = (T+t)^{-1-gamma} d_i with b_i < gamma.
    let fp = SymTensor::from_sorted(2, 3, |idx| match idx {
        [0, 0, 0] => 1.0,
        [0, 1, 1] => 0.05,
        _ => 0.0,
    });
    let mut kerr = 0.0f64;
    let mut kconst = Vec::new();
    for t_shift in [10.0, 100.0, 1000.0] {
        let m = SlowModel::new(2.0, fp.clone(), None, t_shift, 1e6, 64, 50, 3).unwrap();
        let b = m.exponents();
        let i = b.iter().position(|b| m.gamma > *b).unwrap();
        let g = m.grid().unwrap();
        let e: SlowPath = g
            .times()
            .iter()
            .map(|t| m.d_vectors[i].iter().map(|x| x * (t_shift + t).powf(-1.0 - m.gamma)).collect())
            .collect();
        let s = m.solve_kernel_ode(&g, &e).unwrap();
        for (t, v) in g.times().iter().zip(&s.v) {
            let exact = -2.0 / 8.0 / (m.gamma - b[i]) * (t_shift + t).powf(-m.gamma);
            let got: f64 = v.iter().zip(&m.d_vectors[i]).map(|(a, b)| a * b).sum();
            kerr = kerr.max((got - exact).abs() / exact.abs());
        }
        let zeros = vec![vec![]; g.len()];
        kconst.push(weighted_norms(&g, m.gamma, &s.v, &zeros, &[]).kernel_c1 / forcing_norm(&g, 1.0 + m.gamma, &e));
    }
    let kvar = spread(&kconst);

    // Heat solver: closed form, then the L2_q bound across T.
    let g = TimeGrid::uniform(1.0, 20.0, 2001).unwrap();
    let e: SlowPath = g.times().iter().map(|t| vec![(-2.0 * t).exp()]).collect();
    let u = solve_orthogonal_heat(&g, &[1.0], &e).unwrap();
    let herr = g
        .times()
        .iter()
        .zip(&u)
        .fold(0.0f64, |a, (t, u)| a.max((u[0] - (-t).exp() * (1.0 - (-t).exp())).abs()));
    let mut hconst = Vec::new();
    for t_shift in [10.0, 100.0, 1000.0] {
        let g = TimeGrid::geometric(t_shift, 1e6, 64).unwrap();
        let deltas = [2.0, -0.7, 30.0];
        let e: SlowPath = g.times().iter().map(|t| vec![(t_shift + t).powf(-2.5); 3]).collect();
        let u = solve_orthogonal_heat(&g, &deltas, &e).unwrap();
        hconst.push(l2q_norm(&g, 2.5, &u) / l2q_norm(&g, 2.5, &e));
    }
    let hvar = spread(&hconst);
    let secs = t0.elapsed().as_secs_f64();
    Line {
        id: 7,
        name: "slow-flow solvers",
        pass: ansatz <= 1e-12 && kerr < 1e-8 && kvar < 0.2 && herr < 1e-9 && hvar < 0.2 && secs < 60.0,
        detail: format!(
            "ansatz residual {ansatz:.1e} (<= 1e-12), kernel ODE err {kerr:.1e} (< 1e-8), kernel constant variation {:.1}% (< 20%), heat err {herr:.1e} (< 1e-9), heat constant variation {:.1}% (< 20%), {secs:.1} s",
            100.0 * kvar,
            100.0 * hvar
        ),
    }
}

fn spread(c: &[f64]) -> f64 {
    let (lo, hi) = c.iter().fold((f64::INFINITY, 0.0f64), |a, x| (a.0.min(*x), a.1.max(*x)));
    hi / lo - 1.0
}

fn criterion_8(root: &Path) -> (Line, bool) {
    let path = configs_dir().join("slow_synthetic.json").display().to_string();
    let t = twice(root, "c8", &["slowmodel", "-c", &path]);
    if let Err(e) = ok_status(&t) {
        return (Line { id: 8, name: "slow convergence rate", pass: false, detail: e }, t.identical);
    }
    let fit = read_json(&t.dir.join("fit.json"));
    let rho = f(&fit["rho"]);
    let iters = fit["iterations"].as_u64().unwrap_or(u64::MAX);
    let ratio = f(&fit["sandwich"]["ratio"]);
    let exponent = -f(&fit["fit"]["polynomial"]["slope"]);
    let kind = fit["fit"]["kind"].as_str().unwrap_or("?").to_string();
    (
        Line {
            id: 8,
            name: "slow convergence rate",
            pass: rho < 1.0 && iters <= 200 && ratio < 10.0 && (exponent - 1.0).abs() <= 0.05 && t.secs < 300.0,
            detail: format!(
                "rho {rho:.3e} (< 1), {iters} iterations (<= 200), c2/c1 on [1, 1e4] {ratio:.1} (< 10), fitted exponent {exponent:.3} (1 +- 0.05, selected model {kind}), {:.1} s",
                t.secs
            ),
        },
        t.identical,
    )
}

fn criterion_9(root: &Path) -> (Line, bool) {
    let base = ["certify-as3", "--n1", "2", "--n2", "2", "--m", "1", "--base-volume", "1"];
    let with = |v3: &'static str| [&base[..], &["--v3", v3]].concat();
    let a = twice(root, "c9_one", &with("1"));
    let z = twice(root, "c9_zero", &with("0"));
    let c = twice(root, "c9_other", &with("-0.37"));
    let sa = String::from_utf8_lossy(&a.out.stdout).to_string();
    let sz = String::from_utf8_lossy(&z.out.stdout).to_string();
    let sc = String::from_utf8_lossy(&c.out.stdout).to_string();
    let has = |s: &str, l: &str| s.lines().any(|x| x.trim() == l);
    let f3_line = sc.lines().find_map(|l| l.strip_prefix("F3 = ")).and_then(|x| x.trim().parse::<f64>().ok());
    // Independent evaluation: -2((n+m+2)/(n+m-2))(4/(n+m-2)) R^m vol(M) int v^3, R^m = lambda1 (n+m-1).
    let (n, m, lambda1) = (6.0, 1.0, 12.0);
    let expected = -2.0 * ((n + m + 2.0) / (n + m - 2.0)) * (4.0 / (n + m - 2.0)) * lambda1 * (n + m - 1.0) * 1.0 * -0.37;
    let f3_ok = f3_line.is_some_and(|x| (x - expected).abs() <= 1e-12 * expected.abs());
    let pass = has(&sa, "lambda1 = 12")
        && has(&sa, "R_FS = 24")
        && has(&sz, "AS_3 = false")
        && has(&sc, "AS_3 = true")
        && f3_ok;
    (
        Line {
            id: 9,
            name: "AS3 certificate",
            pass,
            detail: format!(
                "lambda1 = 12: {}, R_FS = 24: {}, v3 = 0 gives AS_3 false: {}, v3 = -0.37 gives AS_3 true: {}, F3 {:?} vs {expected}",
                has(&sa, "lambda1 = 12"),
                has(&sa, "R_FS = 24"),
                has(&sz, "AS_3 = false"),
                has(&sc, "AS_3 = true"),
                f3_line
            ),
        },
        a.identical && z.identical && c.identical,
    )
}

fn main() {
    let tmp = tempfile::tempdir().expect("temp dir");
    let root = tmp.path();
    let mut lines = Vec::new();
    let mut same = Vec::new();
    let mut push = |(l, s): (Line, bool), tag: usize| {
        same.push((tag, s));
        lines.push(l);
    };
    lines_run(&mut push, root);
    drop(push);
    lines.push(criterion_1());
    lines.push(criterion_7());
    let bad: Vec<usize> = same.iter().filter(|(_, s)| !s).map(|(t, _)| *t).collect();
    lines.push(Line {
        id: 10,
        name: "determinism",
        pass: bad.is_empty(),
        detail: if bad.is_empty() {
            format!("CLI runs of {} criteria repeated, outputs byte-identical", same.len())
        } else {
            format!("runs of criteria {bad:?} differ between repetitions")
        },
    });
    lines.sort_by_key(|l| l.id);
    let mut failed = 0;
    for l in &lines {
        println!("criterion {:>2} {:<36} {}  {}", l.id, l.name, if l.pass { "PASS" } else { "FAIL" }, l.detail);
        if !l.pass {
            failed += 1;
        }
    }
    println!("{} of {} criteria passed", lines.len() - failed, lines.len());
    if failed > 0 {
        std::process::exit(1);
    }
}

fn lines_run(push: &mut impl FnMut((Line, bool), usize), root: &Path) {
    push(criterion_2(root), 2);
    push(criterion_3(root), 3);
    push(criterion_4(root), 4);
    push(criterion_5(root), 5);
    push(criterion_6(root), 6);
    push(criterion_8(root), 8);
    push(criterion_9(root), 9);
}
