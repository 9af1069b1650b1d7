//! Acceptance suite: one PASS/FAIL line per criterion.
//!
//! Every check uses an oracle written here, independent of the library code
//! it audits: central finite differences, naive double loops, closed forms
//! and a from-scratch pseudo-geodesic.

use std::path::{Path, PathBuf};
use std::process::Command;
use std::time::Instant;

use qimetric::synth::{gen_arc, SynthConfig};
use qimetric::trainer::{sweep_lambda, train, train_model, training_data, TrainConfig};
use qimetric::{
    check_local_qi, find_violating_pairs, obj_depth_loss, pairwise_matrix, qi_loss, verify_theorem, DepthMapSample,
    DescriptorSet, LossMode, Norm, QiParams,
};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};

type Outcome = Result<String, String>;

fn central_diff(f: impl Fn(&[f64]) -> f64, x: &[f64], h: f64) -> Vec<f64> {
    let mut xp = x.to_vec();
    (0..x.len())
        .map(|k| {
            xp[k] = x[k] + h;
            let up = f(&xp);
            xp[k] = x[k] - h;
            let down = f(&xp);
            xp[k] = x[k];
            (up - down) / (2.0 * h)
        })
        .collect()
}

fn rel_err(a: &[f64], n: &[f64]) -> f64 {
    let scale = a.iter().chain(n).fold(0.0f64, |m, v| m.max(v.abs()));
    if scale == 0.0 {
        return 0.0;
    }
    a.iter().zip(n).fold(0.0f64, |m, (x, y)| m.max((x - y).abs())) / scale
}

fn normal(rng: &mut ChaCha8Rng) -> f64 {
    StandardNormal.sample(rng)
}

fn naive_dist(a: &[f64], b: &[f64], p: Norm) -> f64 {
    let mut acc = 0.0f64;
    for k in 0..a.len() {
        let d = (a[k] - b[k]).abs();
        match p {
            Norm::L1 => acc += d,
            Norm::L2 => acc += d * d,
            Norm::Inf => acc = acc.max(d),
        }
    }
    if p == Norm::L2 {
        acc.sqrt()
    } else {
        acc
    }
}

/// Random instance whose loss is smooth at the sampled point: no margin or
/// feature distance within `gap` of a kink, and both violation sets present.
fn smooth_qi_instance(rng: &mut ChaCha8Rng) -> (DescriptorSet, QiParams) {
    let gap = 1e-3;
    loop {
        let l = rng.random_range(3..=16);
        let c = rng.random_range(1..=8);
        let tau = [0.5, 1.0, 2.0][rng.random_range(0..3)];
        let scale = rng.random_range(0.5..6.0);
        let depths: Vec<f64> = (0..l).map(|_| rng.random_range(1.0..25.0)).collect();
        let feats: Vec<Vec<f64>> = (0..l).map(|_| (0..c).map(|_| scale * normal(rng)).collect()).collect();
        let params = QiParams { tau, ..QiParams::default() };
        let mut ok = true;
        for i in 0..l {
            for j in i + 1..l {
                let d1 = (depths[i] - depths[j]).abs();
                let d2 = naive_dist(&feats[i], &feats[j], Norm::L2);
                let mp = d2 - params.k * d1 - params.b;
                let mm = d1 / params.k - params.b - d2;
                if d2 < gap || (d1 <= params.epsilon && (mp.abs() < gap || mm.abs() < gap)) {
                    ok = false;
                }
            }
        }
        if !ok {
            continue;
        }
        let ds = DescriptorSet::from_parts(depths, feats).unwrap();
        let report = find_violating_pairs(&ds, &params);
        if !report.pos_pairs.is_empty() && !report.neg_pairs.is_empty() {
            return (ds, params);
        }
    }
}

fn criterion_1() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    let mut worst_qi = 0.0f64;
    for _ in 0..50 {
        let (ds, params) = smooth_qi_instance(&mut rng);
        let c = ds.dim();
        let x: Vec<f64> = ds.features().iter().flatten().copied().collect();
        let analytic = qi_loss(&ds, &params, LossMode::Eq6).map_err(|e| e.to_string())?.grad;
        let numeric = central_diff(
            |x| {
                let feats = x.chunks(c).map(<[f64]>::to_vec).collect();
                qi_loss(&ds.with_features(feats).unwrap(), &params, LossMode::Eq6).unwrap().value
            },
            &x,
            1e-5,
        );
        worst_qi = worst_qi.max(rel_err(&analytic, &numeric));
    }

    let mut worst_obj = 0.0f64;
    for _ in 0..50 {
        let (h, w) = (rng.random_range(1..=6), rng.random_range(1..=6));
        let n = h * w;
        let mut mask: Vec<bool> = (0..n).map(|_| rng.random_bool(0.6)).collect();
        mask[rng.random_range(0..n)] = true;
        let gt: Vec<f64> = (0..n).map(|_| rng.random_range(1.0..60.0)).collect();
        let pred: Vec<f64> = gt
            .iter()
            .map(|z| {
                let r = rng.random_range(0.01..5.0);
                if rng.random_bool(0.5) { z + r } else { z - r }
            })
            .collect();
        let log_sigma: Vec<f64> = (0..n).map(|_| rng.random_range(-1.0..2.0)).collect();
        let sample = |x: &[f64]| DepthMapSample {
            height: h,
            width: w,
            pred_depth: x[..n].to_vec(),
            pred_log_sigma: x[n..].to_vec(),
            gt_depth: gt.clone(),
            mask: mask.clone(),
        };
        let x: Vec<f64> = pred.iter().chain(&log_sigma).copied().collect();
        let analytic = obj_depth_loss(&sample(&x)).map_err(|e| e.to_string())?.grad;
        let numeric = central_diff(|x| obj_depth_loss(&sample(x)).unwrap().value, &x, 1e-6);
        worst_obj = worst_obj.max(rel_err(&analytic, &numeric));
    }
    let detail = format!("max relative error: qi {worst_qi:.2e}, obj {worst_obj:.2e} (bound 1e-6)");
    if worst_qi <= 1e-6 && worst_obj <= 1e-6 {
        Ok(detail)
    } else {
        Err(detail)
    }
}

fn criterion_2() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    let norms = [Norm::L1, Norm::L2, Norm::Inf];
    let mut worst_matrix = 0.0f64;
    for inst in 0..100 {
        let l = rng.random_range(0..=64);
        let c = rng.random_range(1..=6);
        let integer = rng.random_bool(0.5);
        let depths: Vec<f64> = (0..l)
            .map(|_| if integer { rng.random_range(1..20) as f64 } else { rng.random_range(0.5..40.0) })
            .collect();
        let feats: Vec<Vec<f64>> = (0..l)
            .map(|_| (0..c).map(|_| rng.random_range(-3.0f64..3.0).round() * 2.0 + normal(&mut rng) * 0.5).collect())
            .collect();
        let params = QiParams {
            k: rng.random_range(1.0..3.0),
            b: rng.random_range(0.0..2.0),
            epsilon: if rng.random_bool(0.2) { f64::INFINITY } else { rng.random_range(1..15) as f64 },
            p_feat: norms[rng.random_range(0..3)],
            ..QiParams::default()
        };
        let ds = DescriptorSet::from_parts(depths.clone(), feats.clone()).unwrap();
        let report = find_violating_pairs(&ds, &params);

        let (mut pos, mut neg, mut eligible) = (Vec::new(), Vec::new(), 0usize);
        for i in 0..l {
            for j in i + 1..l {
                let d1 = (depths[i] - depths[j]).abs();
                if d1 > params.epsilon {
                    continue;
                }
                eligible += 1;
                let d2 = naive_dist(&feats[i], &feats[j], params.p_feat);
                let mp = d2 - params.k * d1 - params.b;
                let mm = d1 / params.k - params.b - d2;
                if mp > 0.0 {
                    pos.push((i, j, mp));
                }
                if mm > 0.0 {
                    neg.push((i, j, mm));
                }
            }
        }
        let got = |v: &[qimetric::quasi_iso::PairViolation]| v.iter().map(|p| (p.i, p.j, p.margin)).collect::<Vec<_>>();
        if got(&report.pos_pairs) != pos || got(&report.neg_pairs) != neg || report.eligible_count != eligible {
            return Err(format!("instance {inst}: violating pairs differ from the naive scan"));
        }
        let total = l * l.saturating_sub(1) / 2;
        let ratio = if total == 0 { 0.0 } else { (pos.len() + neg.len()) as f64 / total as f64 };
        if report.total_pairs != total || report.ratio != ratio {
            return Err(format!("instance {inst}: ratio {} vs naive {ratio}", report.ratio));
        }

        let m = pairwise_matrix(&feats, params.p_feat).map_err(|e| e.to_string())?;
        for i in 0..l {
            for j in 0..l {
                let want = naive_dist(&feats[i], &feats[j], params.p_feat);
                worst_matrix = worst_matrix.max((m.get(i, j) - want).abs() / want.max(1.0));
            }
        }
    }
    let detail = format!("100 instances match exactly; pairwise matrix max error {worst_matrix:.1e}");
    if worst_matrix <= 1e-12 {
        Ok(detail)
    } else {
        Err(detail)
    }
}

fn criterion_3() -> Outcome {
    // (0,1): d₁=1, d₂=5 → m⁺=3; (2,3): d₁=4.5, d₂=1.5 → m⁻=1; cross pairs exceed ε.
    let ds = DescriptorSet::from_scalars(&[1.0, 2.0, 30.0, 34.5], &[0.0, 5.0, 100.0, 101.5]).unwrap();
    let params = QiParams::default();
    let report = find_violating_pairs(&ds, &params);
    let margins = (report.pos_pairs[0].margin, report.neg_pairs[0].margin);
    if margins != (3.0, 1.0) {
        return Err(format!("fixture margins {margins:?}, expected (3, 1)"));
    }
    let value = qi_loss(&ds, &params, LossMode::Eq6).map_err(|e| e.to_string())?.value;
    let two_margin = (1.0 + 2.0f64.exp()).ln();
    let two_margin_err = (value - two_margin).abs();
    if two_margin_err > 1e-9 {
        return Err(format!("two-margin loss {value}, expected {two_margin}"));
    }

    let mut rng = ChaCha8Rng::seed_from_u64(3);
    for _ in 0..50 {
        // features closer than B: no upper violations possible
        let l = rng.random_range(1..12);
        let depths: Vec<f64> = (0..l).map(|_| rng.random_range(1.0..40.0)).collect();
        let feats: Vec<f64> = (0..l).map(|_| rng.random_range(0.0..0.49)).collect();
        let ds = DescriptorSet::from_scalars(&depths, &feats).unwrap();
        let out = qi_loss(&ds, &params, LossMode::Eq6).map_err(|e| e.to_string())?;
        if out.value != 0.0 || out.grad.iter().any(|g| *g != 0.0) {
            return Err(format!("empty upper set gave loss {}", out.value));
        }
    }

    // one pixel, |z − ẑ| = 1, σ̂ = √2: √2·1/√2 + ln √2
    let sigma = 2.0f64.sqrt();
    let sample = DepthMapSample {
        height: 1,
        width: 1,
        pred_depth: vec![11.0],
        pred_log_sigma: vec![sigma.ln()],
        gt_depth: vec![10.0],
        mask: vec![true],
    };
    let out = obj_depth_loss(&sample).map_err(|e| e.to_string())?;
    let want = 1.0 + sigma.ln();
    if (out.value - want).abs() > 1e-12 {
        return Err(format!("Laplacian fixture {}, expected {want}", out.value));
    }
    // ∂/∂σ̂ = (∂/∂ log σ̂) / σ̂
    let d_sigma = out.grad[1] / sigma;
    if d_sigma.abs() > 1e-9 {
        return Err(format!("σ̂-gradient {d_sigma:e} at σ̂ = √2|r|"));
    }
    Ok(format!("log(1+e²) err {:.1e}; empty P⁺ → 0; 1+ln√2 err {:.1e}; ∂L/∂σ̂ {d_sigma:.1e}", two_margin_err, (out.value - want).abs()))
}

/// Pseudo-geodesic from scratch: walk every distinct depth between the
/// endpoints, taking the lowest index at each, and sum the hops.
fn naive_pseudo_geodesic(depths: &[f64], feats: &[Vec<f64>], s: usize, t: usize, p: Norm, eps: f64) -> Option<f64> {
    let (a, b) = if (depths[s], s) <= (depths[t], t) { (s, t) } else { (t, s) };
    let (lo, hi) = (depths[a], depths[b]);
    let mut inner: Vec<(f64, usize)> = Vec::new();
    for (k, &z) in depths.iter().enumerate() {
        if z > lo && z < hi && !inner.iter().any(|&(w, _)| w == z) {
            inner.push((z, k));
        } else if z > lo && z < hi {
            let slot = inner.iter_mut().find(|(w, _)| *w == z).unwrap();
            slot.1 = slot.1.min(k);
        }
    }
    inner.sort_by(|x, y| x.partial_cmp(y).unwrap());
    let mut path = vec![a];
    path.extend(inner.iter().map(|&(_, k)| k));
    path.push(b);
    let mut total = 0.0;
    for w in path.windows(2) {
        if (depths[w[1]] - depths[w[0]]).abs() >= eps {
            return None;
        }
        total += naive_dist(&feats[w[0]], &feats[w[1]], p);
    }
    Some(total)
}

fn criterion_4() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(4);
    let params = QiParams::default();
    let mut accepted = 0;
    let mut rejected = 0;
    let mut checked = 0usize;
    while accepted < 100 {
        let l = rng.random_range(2..=200);
        let c = rng.random_range(1..=8);
        let mut z = rng.random_range(1.0..5.0);
        let depths: Vec<f64> = (0..l)
            .map(|_| {
                let cur = z;
                z += rng.random_range(0.01..4.0);
                cur
            })
            .collect();
        let slope = rng.random_range(0.8..1.25);
        let wiggle = rng.random_range(0.0..3.0);
        let freq = rng.random_range(0.05..0.5);
        let noise = rng.random_range(0.0..0.2);
        let feats: Vec<Vec<f64>> = depths
            .iter()
            .map(|&z| {
                (0..c)
                    .map(|k| match k {
                        0 => slope * z,
                        1 => wiggle * (freq * z).sin(),
                        _ => 0.0,
                    } + noise * normal(&mut rng))
                    .collect()
            })
            .collect();
        let ds = DescriptorSet::from_parts(depths.clone(), feats.clone()).unwrap();
        if !check_local_qi(&ds, &params).holds {
            rejected += 1;
            continue;
        }
        accepted += 1;
        let report = verify_theorem(&ds, &params);
        if !report.premise_ok || !report.global_ok || report.violating_pairs != 0 {
            return Err(format!("library check failed on a locally quasi-isometric set of {l} objects"));
        }
        let b_prime = l as f64 * params.b;
        for s in 0..l {
            for t in s + 1..l {
                let d1 = (depths[s] - depths[t]).abs();
                let Some(g) = naive_pseudo_geodesic(&depths, &feats, s, t, params.p_feat, params.epsilon) else {
                    return Err(format!("no valid path between {s} and {t}"));
                };
                let slack = 1e-9 * d1.max(g).max(1.0);
                if g > params.k * d1 + b_prime + slack || g < d1 / params.k - b_prime - slack {
                    return Err(format!("pair ({s},{t}): Ĝ = {g}, d₁ = {d1}, B′ = {b_prime}"));
                }
                checked += 1;
            }
        }
    }
    Ok(format!("100 sets ({rejected} rejected by the local audit), {checked} pairs, zero violations"))
}

fn criterion_5() -> Outcome {
    let ds = gen_arc(&SynthConfig::arc()).map_err(|e| e.to_string())?;
    let local = find_violating_pairs(&ds, &QiParams::default());
    let global = find_violating_pairs(&ds, &QiParams { epsilon: f64::INFINITY, ..QiParams::default() });
    let detail = format!(
        "ε=10: {} violations; ε=inf: {} lower, {} upper",
        local.violation_count(),
        global.neg_pairs.len(),
        global.pos_pairs.len()
    );
    if local.violation_count() == 0 && !global.neg_pairs.is_empty() {
        Ok(detail)
    } else {
        Err(detail)
    }
}

const LAMBDAS: [f64; 6] = [0.0, 1e-5, 1e-3, 1e-2, 1e-1, 0.5];

fn criterion_6() -> Outcome {
    let base = TrainConfig { synth: SynthConfig { n: 512, ..TrainConfig::default().synth }, epochs: 200, ..TrainConfig::default() };
    let rows = sweep_lambda(&base, &LAMBDAS).map_err(|e| e.to_string())?;
    let ratios: Vec<f64> = rows.iter().map(|r| r.final_ratio).collect();
    let inversions = ratios.windows(2).filter(|w| w[1] > w[0]).count();
    let drop = 1.0 - ratios[5] / ratios[0];

    let mut e_z = [0.0f64; 2];
    for seed in 0..3u64 {
        let rows = if seed == base.seed {
            vec![rows[0], rows[5]]
        } else {
            sweep_lambda(&TrainConfig { seed, ..base.clone() }, &[0.0, 0.5]).map_err(|e| e.to_string())?
        };
        e_z[0] += rows[0].final_e_z / 3.0;
        e_z[1] += rows[rows.len() - 1].final_e_z / 3.0;
    }
    let shown: Vec<String> = ratios.iter().map(|r| format!("{r:.4}")).collect();
    let detail = format!(
        "ratios [{}], drop {:.0}%, {inversions} inversion(s); mean E_z {:.3} m (λ=0) vs {:.3} m (λ=0.5)",
        shown.join(", "),
        100.0 * drop,
        e_z[0],
        e_z[1]
    );
    if drop >= 0.5 && inversions <= 1 && e_z[1] < e_z[0] {
        Ok(detail)
    } else {
        Err(detail)
    }
}

fn criterion_7() -> Outcome {
    let cfg = TrainConfig::default();
    let depths = training_data(&cfg).map_err(|e| e.to_string())?.depths;
    let mut sorted = depths.clone();
    sorted.sort_by(f64::total_cmp);
    let min_gap = sorted.windows(2).map(|w| w[1] - w[0]).fold(f64::INFINITY, f64::min);
    let tiny = TrainConfig { qi: QiParams { epsilon: 0.5 * min_gap, ..cfg.qi }, ..cfg.clone() };
    let baseline = TrainConfig { lambda_qi: 0.0, ..tiny.clone() };
    let (log_tiny, model_tiny) = train_model(&tiny).map_err(|e| e.to_string())?;
    let (log_base, model_base) = train_model(&baseline).map_err(|e| e.to_string())?;
    if log_tiny.rows.iter().any(|r| r.qi_loss != 0.0) {
        return Err("qi loss nonzero with ε below every depth gap".into());
    }
    if log_tiny != log_base || model_tiny != model_base {
        return Err("tiny-ε run differs from the λ_qi = 0 baseline".into());
    }
    let full = train(&cfg).map_err(|e| e.to_string())?;
    let (e_tiny, e_full) = (log_tiny.last().unwrap().e_z, full.last().unwrap().e_z);
    let detail = format!("tiny ε bit-identical to baseline; final E_z {e_tiny:.3} m (tiny ε) vs {e_full:.3} m (ε=10)");
    if e_full < e_tiny {
        Ok(detail)
    } else {
        Err(detail)
    }
}

fn run_cli(dir: &Path, args: &[&str]) -> Result<(), String> {
    let out = Command::new(env!("CARGO_BIN_EXE_qimetric"))
        .args(args)
        .current_dir(dir)
        .output()
        .map_err(|e| e.to_string())?;
    if out.status.success() {
        Ok(())
    } else {
        Err(format!("{args:?}: {}", String::from_utf8_lossy(&out.stderr)))
    }
}

fn criterion_8() -> Outcome {
    let fixtures = Path::new(env!("CARGO_MANIFEST_DIR")).join("../../fixtures").canonicalize().map_err(|e| e.to_string())?;
    let two_pair = fixtures.join("two_pair.csv");
    let two_pair = two_pair.to_str().unwrap();
    let invocations: Vec<Vec<&str>> = vec![
        vec!["synth", "--kind", "collinear", "--n", "40", "--out", "col.csv"],
        vec!["synth", "--kind", "arc", "--out", "arc.csv"],
        vec!["synth", "--kind", "noisy-scene", "--n", "64", "--seed", "3", "--out", "noisy.csv"],
        vec!["audit", two_pair, "--theorem", "--out", "audit.json"],
        vec!["audit", "noisy.csv", "--epsilon", "inf", "--p", "1", "--theorem", "--out", "audit_inf.json"],
        vec!["loss", two_pair, "--out", "loss.json"],
        vec!["loss", "noisy.csv", "--mode", "alg1_literal", "--tau", "2", "--out", "loss_alg1.json"],
        vec!["geodesic", "col.csv", "--from", "0", "--to", "39", "--out", "geo.json"],
        vec!["geodesic", "arc.csv", "--from", "5", "--to", "50", "--p", "inf", "--out", "geo_arc.json"],
        vec!["train", "--n", "64", "--epochs", "5", "--out", "train.csv"],
        vec!["train", "--n", "32", "--epochs", "2", "--experiment", "map", "--out", "train_map.csv"],
        vec!["sweep", "--over", "epsilon", "--values", "1,10,inf", "--n", "64", "--epochs", "3", "--out", "sweep.csv"],
    ];
    let dirs = [tempfile::tempdir().map_err(|e| e.to_string())?, tempfile::tempdir().map_err(|e| e.to_string())?];
    for dir in &dirs {
        for args in &invocations {
            run_cli(dir.path(), args)?;
        }
    }
    let mut files: Vec<PathBuf> = std::fs::read_dir(dirs[0].path())
        .map_err(|e| e.to_string())?
        .map(|e| e.unwrap().path())
        .collect();
    files.sort();
    for f in &files {
        let name = f.file_name().unwrap();
        let a = std::fs::read(f).map_err(|e| e.to_string())?;
        let b = std::fs::read(dirs[1].path().join(name)).map_err(|e| e.to_string())?;
        if a != b {
            return Err(format!("{} differs between identical invocations", name.to_string_lossy()));
        }
    }
    Ok(format!("{} invocations, {} output files byte-identical across two runs", invocations.len(), files.len()))
}

fn main() {
    let criteria: [(&str, fn() -> Outcome); 8] = [
        ("gradient audit", criterion_1),
        ("brute-force equivalence", criterion_2),
        ("closed-form values", criterion_3),
        ("local-to-global theorem", criterion_4),
        ("circle-arc locality", criterion_5),
        ("loss-scale sweep trend", criterion_6),
        ("ε ablation trend", criterion_7),
        ("CLI determinism", criterion_8),
    ];
    let mut failed = 0;
    for (k, (name, check)) in criteria.iter().enumerate() {
        let start = Instant::now();
        let outcome = check();
        let secs = start.elapsed().as_secs_f64();
        match outcome {
            Ok(detail) => println!("PASS criterion {} ({name}): {detail} [{secs:.1} s]", k + 1),
            Err(detail) => {
                failed += 1;
                println!("FAIL criterion {} ({name}): {detail} [{secs:.1} s]", k + 1);
            }
        }
    }
    if failed > 0 {
        println!("{failed} of {} criteria failed", criteria.len());
        std::process::exit(1);
    }
    println!("all {} criteria passed", criteria.len());
}
