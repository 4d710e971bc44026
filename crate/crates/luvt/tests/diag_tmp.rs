use std::path::Path;

use luvt::diffusion::{cosine_schedule, reconstruct as dreco, ReconstructionConfig, SimplexNoiseConfig, NoiseKind};
use luvt::nn::checkpoint;
use luvt::nn::tensor::{Shape, Tensor};
use luvt::nn::unet::{DenoiserParams, UNetConfig};
use luvt::raster::{load_dataset, Label};
use luvt::vae::{reconstruct as vreco, VaeConfig, VaeParams};

#[test]
fn diag() {
    let base = Path::new("/tmp/e2e2");
    let test = load_dataset(&base.join("data/test/manifest.json")).unwrap();
    let (params, _) = checkpoint::load::<f32>(&base.join("runs/model-vae/model.ckpt")).unwrap();
    let vcfg = VaeConfig { widths: [8, 16], d_z: 32, h: 64, w: 64 };
    let mut vae = VaeParams::<f32>::init(vcfg, 0).unwrap();
    vae.params.load_from(&params).unwrap();

    let (params, _) = checkpoint::load::<f32>(&base.join("runs/model-ddpm/model.ckpt")).unwrap();
    let ucfg = UNetConfig { in_channels: 1, widths: [12, 24, 48], time_embed_dim: 32 };
    let mut ddpm = DenoiserParams::<f32>::init(ucfg, 0);
    ddpm.params.load_from(&params).unwrap();
    let schedule = cosine_schedule(200).unwrap();

    for seq in test.iter().filter(|s| s.id.ends_with("0000") || s.id.ends_with("0001")) {
        let k = seq.k();
        let mut data = Vec::new();
        for f in &seq.frames {
            data.extend_from_slice(f);
        }
        let x = Tensor::<f32>::from_vec(Shape::d4(k, 1, 64, 64), data);
        for (name, xhat) in [
            ("vae ", vreco(&vae, &x).unwrap()),
            ("ddpm", {
                let rc = ReconstructionConfig {
                    lambda_t: std::env::var("LAM").ok().and_then(|v| v.parse().ok()).unwrap_or(20),
                    noise_kind: NoiseKind::Gaussian,
                    simplex: SimplexNoiseConfig::default(),
                    seed: 1,
                };
                dreco(&ddpm, &x, &rc, &schedule).unwrap()
            }),
        ] {
            let err: Vec<f32> =
                x.data().iter().zip(xhat.data()).map(|(a, b)| (a - b).abs()).collect();
            let mut sorted = err.clone();
            sorted.sort_by(|a, b| a.partial_cmp(b).unwrap());
            let n = sorted.len();
            let frac = |t: f32| err.iter().filter(|&&v| v > t).count() as f64 / n as f64;
            // error concentration near the defect (within 8 px), if any
            let mut in_d = 0.0f64;
            let mut out_d = 0.0f64;
            let (mut ni, mut no) = (0usize, 0usize);
            if let Some((cr, cc)) = seq.defect_center_px {
                for (i, &v) in err.iter().enumerate() {
                    let p = i % (64 * 64);
                    let (r, c) = (p / 64, p % 64);
                    let d2 = (r as f64 - cr).powi(2) + (c as f64 - cc).powi(2);
                    if d2 < 64.0 {
                        in_d += v as f64;
                        ni += 1;
                    } else {
                        out_d += v as f64;
                        no += 1;
                    }
                }
            }
            println!(
                "{} {} label={:?} mean={:.4} p95={:.4} max={:.4} >0.15={:.4} >0.25={:.4} in/out={:.3}",
                name,
                seq.id,
                seq.label,
                sorted[n / 2],
                sorted[n * 95 / 100],
                sorted[n - 1],
                frac(0.15),
                frac(0.25),
                if no > 0 { (in_d / ni.max(1) as f64) / (out_d / no as f64) } else { f64::NAN },
            );
        }
    }
}

#[test]
fn defect_signature() {
    let base = Path::new("/tmp/e2e2");
    let test = load_dataset(&base.join("data/test/manifest.json")).unwrap();
    for seq in test.iter().filter(|s| s.label == Label::Defective).take(3) {
        let (cr, cc) = seq.defect_center_px.unwrap();
        let rad = seq.defect_radius_px.unwrap();
        // temporal mean/std per pixel, then compare inside vs outside disc
        let px = 64 * 64;
        let k = seq.k() as f32;
        let mut mean = vec![0.0f32; px];
        let mut var = vec![0.0f32; px];
        for f in &seq.frames {
            for (m, &v) in mean.iter_mut().zip(f) {
                *m += v / k;
            }
        }
        for f in &seq.frames {
            for ((s, &v), &m) in var.iter_mut().zip(f).zip(&mean) {
                *s += (v - m) * (v - m) / k;
            }
        }
        let mut stats = [[0.0f64; 3]; 2]; // [in,out] x [mean,std,count]
        for p in 0..px {
            let (r, c) = (p / 64, p % 64);
            let d2 = (r as f64 - cr).powi(2) + (c as f64 - cc).powi(2);
            let side = usize::from(d2 > (rad * rad));
            stats[side][0] += mean[p] as f64;
            stats[side][1] += var[p].sqrt() as f64;
            stats[side][2] += 1.0;
        }
        println!(
            "{}: r={:.1}px in: mean={:.3} tstd={:.3} ({} px) | out: mean={:.3} tstd={:.3}",
            seq.id, rad,
            stats[0][0] / stats[0][2], stats[0][1] / stats[0][2], stats[0][2],
            stats[1][0] / stats[1][2], stats[1][1] / stats[1][2],
        );
    }
}

#[test]
fn amplitude_profile() {
    use luvt::wavesim::{run_fields, SimConfig};
    let config = SimConfig::default();
    let fields = run_fields(&config, None).unwrap();
    for (k, f) in fields.iter().enumerate() {
        let mut a: Vec<f64> = f.iter().map(|v| v.abs()).collect();
        a.sort_by(|x, y| x.partial_cmp(y).unwrap());
        let n = a.len();
        println!(
            "frame {k}: max={:.4} p999={:.4} p99={:.4} p90={:.4}",
            a[n - 1], a[n * 999 / 1000], a[n * 99 / 100], a[n * 9 / 10]
        );
    }
}

#[test]
fn heatmap() {
    let base = Path::new("/tmp/e2e2");
    let test = load_dataset(&base.join("data/test/manifest.json")).unwrap();
    let (params, _) = checkpoint::load::<f32>(&base.join("runs/model-ddpm/model.ckpt")).unwrap();
    let ucfg = UNetConfig { in_channels: 1, widths: [12, 24, 48], time_embed_dim: 32 };
    let mut ddpm = DenoiserParams::<f32>::init(ucfg, 0);
    ddpm.params.load_from(&params).unwrap();
    let schedule = cosine_schedule(200).unwrap();
    let lam: usize = std::env::var("LAM").ok().and_then(|v| v.parse().ok()).unwrap_or(80);

    for seq in test.iter().filter(|s| s.id.ends_with("def_0000") || s.id.ends_with("df_0000")) {
        let k = seq.k();
        let mut data = Vec::new();
        for f in &seq.frames {
            data.extend_from_slice(f);
        }
        let x = Tensor::<f32>::from_vec(Shape::d4(k, 1, 64, 64), data);
        let rc = ReconstructionConfig {
            lambda_t: lam,
            noise_kind: NoiseKind::Gaussian,
            simplex: SimplexNoiseConfig::default(),
            seed: 1,
        };
        let xhat = dreco(&ddpm, &x, &rc, &schedule).unwrap();
        let err: Vec<f32> = x.data().iter().zip(xhat.data()).map(|(a, b)| (a - b).abs()).collect();
        println!("--- {} label={:?} defect={:?} lam={}", seq.id, seq.label, seq.defect_center_px, lam);
        for f in 0..k {
            let fr = &err[f * 4096..(f + 1) * 4096];
            let n25 = fr.iter().filter(|&&v| v > 0.25).count();
            println!("frame {f}: n>0.25={n25}");
        }
        // 8x8 block map of summed error over frames, chars 0-9
        let mut blocks = [[0.0f64; 8]; 8];
        for (i, &v) in err.iter().enumerate() {
            let p = i % 4096;
            blocks[p / 64 / 8][(p % 64) / 8] += v as f64;
        }
        let mx = blocks.iter().flatten().cloned().fold(0.0f64, f64::max);
        for row in &blocks {
            let line: String =
                row.iter().map(|&v| char::from_digit((v / mx * 9.0) as u32, 10).unwrap()).collect();
            println!("  {line}");
        }
    }
    // physical signature: paired truth difference for def_0000
    // (re-simulate not available here; approximate with frame-to-mean deviation)
}

#[test]
fn disc_profile() {
    let base = Path::new("/tmp/e2e2");
    let test = load_dataset(&base.join("data/test/manifest.json")).unwrap();
    let (params, _) = checkpoint::load::<f32>(&base.join("runs/model-ddpm/model.ckpt")).unwrap();
    let ucfg = UNetConfig { in_channels: 1, widths: [12, 24, 48], time_embed_dim: 32 };
    let mut ddpm = DenoiserParams::<f32>::init(ucfg, 0);
    ddpm.params.load_from(&params).unwrap();
    let schedule = cosine_schedule(200).unwrap();
    let lam: usize = std::env::var("LAM").ok().and_then(|v| v.parse().ok()).unwrap_or(50);

    let seq = test.iter().find(|s| s.id == "def_0000").unwrap();
    let (cr, cc) = seq.defect_center_px.unwrap();
    let (cr, cc) = (cr as usize, cc as usize);
    let k = seq.k();
    let mut data = Vec::new();
    for f in &seq.frames {
        data.extend_from_slice(f);
    }
    let x = Tensor::<f32>::from_vec(Shape::d4(k, 1, 64, 64), data);
    let rc = ReconstructionConfig {
        lambda_t: lam,
        noise_kind: NoiseKind::Gaussian,
        simplex: SimplexNoiseConfig::default(),
        seed: 1,
    };
    let xhat = dreco(&ddpm, &x, &rc, &schedule).unwrap();
    println!("defect center ({cr},{cc}) lam={lam}");
    for f in [3usize, 6] {
        let row = |v: &[f32]| -> String {
            (cc.saturating_sub(10)..(cc + 11).min(64))
                .map(|j| format!("{:4.2} ", v[f * 4096 + cr * 64 + j]))
                .collect()
        };
        println!("frame {f} x   : {}", row(x.data()));
        println!("frame {f} xhat: {}", row(xhat.data()));
    }
    // per-frame mean err inside disc (r<3) vs ring (5<r<12)
    for f in 0..k {
        let (mut di, mut ni, mut dr, mut nr) = (0.0f64, 0, 0.0f64, 0);
        for r in 0..64usize {
            for c in 0..64usize {
                let d2 = ((r as f64 - cr as f64).powi(2) + (c as f64 - cc as f64).powi(2)).sqrt();
                let e = (x.data()[f * 4096 + r * 64 + c] - xhat.data()[f * 4096 + r * 64 + c]).abs()
                    as f64;
                if d2 < 3.0 {
                    di += e;
                    ni += 1;
                } else if d2 > 5.0 && d2 < 12.0 {
                    dr += e;
                    nr += 1;
                }
            }
        }
        println!("frame {f}: disc={:.4} ring={:.4}", di / ni as f64, dr / nr as f64);
    }
}

#[test]
fn mini_eval() {
    use luvt::localize;
    use luvt::metrics::{anomaly_score, roc_auc, ScoredSample};
    let base = Path::new("/tmp/e2e2");
    let test = load_dataset(&base.join("data/test/manifest.json")).unwrap();
    let (params, _) = checkpoint::load::<f32>(&base.join("runs/model-ddpm/model.ckpt")).unwrap();
    let ucfg = UNetConfig { in_channels: 1, widths: [12, 24, 48], time_embed_dim: 32 };
    let mut ddpm = DenoiserParams::<f32>::init(ucfg, 0);
    ddpm.params.load_from(&params).unwrap();
    let schedule = cosine_schedule(200).unwrap();
    let lam: usize = std::env::var("LAM").ok().and_then(|v| v.parse().ok()).unwrap_or(60);
    let n_each: usize = std::env::var("NEACH").ok().and_then(|v| v.parse().ok()).unwrap_or(8);

    let df: Vec<_> = test.iter().filter(|s| s.label == Label::DefectFree).take(n_each).collect();
    let de: Vec<_> = test.iter().filter(|s| s.label == Label::Defective).take(n_each).collect();
    let mut scored = Vec::new();
    let mut scored15 = Vec::new();
    for (si, seq) in df.iter().chain(de.iter()).enumerate() {
        let k = seq.k();
        let mut data = Vec::new();
        for f in &seq.frames {
            data.extend_from_slice(f);
        }
        let x = Tensor::<f32>::from_vec(Shape::d4(k, 1, 64, 64), data);
        let rc = ReconstructionConfig {
            lambda_t: lam,
            noise_kind: NoiseKind::Gaussian,
            simplex: SimplexNoiseConfig::default(),
            seed: si as u64 + 1,
        };
        let xhat = dreco(&ddpm, &x, &rc, &schedule).unwrap();
        let frames: Vec<Vec<f32>> =
            (0..k).map(|f| xhat.data()[f * 4096..(f + 1) * 4096].to_vec()).collect();
        let maps: Vec<_> = seq
            .frames
            .iter()
            .zip(&frames)
            .map(|(a, b)| localize::diff_map(a, b, 64, 64).unwrap())
            .collect();
        let score = anomaly_score(&maps, 0.25).unwrap();
        let score15 = anomaly_score(&maps, 0.15).unwrap();
        let dt: f64 = std::env::var("DT").ok().and_then(|v| v.parse().ok()).unwrap_or(0.0);
        let pred = localize::localize_sequence_with(
            seq,
            &frames,
            luvt::localize::Connectivity::Eight,
            dt,
        )
        .unwrap();
        let dist = match (pred.centroid_px, seq.defect_center_px) {
            (Some((pr, pc)), Some((tr, tc))) => {
                format!("{:.1}", ((pr - tr).powi(2) + (pc - tc).powi(2)).sqrt())
            }
            _ => "-".into(),
        };
        println!(
            "{} label={:?} score={:.1} s15={:.1} verdict={:?} comp_score={:.1} area={} dist={}",
            seq.id, seq.label, score, score15, pred.verdict, pred.component_score, pred.component_area, dist
        );
        scored.push(ScoredSample { id: seq.id.clone(), anomaly_score: score, label: seq.label });
        scored15.push(ScoredSample { id: seq.id.clone(), anomaly_score: score15, label: seq.label });
    }
    println!("auroc(0.25) = {:.3}", roc_auc(&scored).unwrap().auroc);
    println!("auroc(0.15) = {:.3}", roc_auc(&scored15).unwrap().auroc);
}

#[test]
fn show_frames() {
    use luvt::wavesim::{run_simulation, DefectSpec, SimConfig};
    let manifest = load_dataset(Path::new("/tmp/e2e2/data/test/manifest.json")).unwrap();
    let seq = manifest.iter().find(|s| s.id == "def_0000").unwrap();
    println!("defect center px {:?}", seq.defect_center_px);
    let ascii = |v: &[f32]| {
        for r in (0..64).step_by(2) {
            let line: String = (0..64)
                .step_by(2)
                .map(|c| {
                    let x = v[r * 64 + c];
                    b" .:-=+*#%@"[((x.clamp(0.0, 1.0)) * 9.99) as usize] as char
                })
                .collect();
            println!("  {line}");
        }
    };
    for f in [5usize, 8] {
        println!("frame {f}:");
        ascii(&seq.frames[f]);
    }
}

#[test]
fn zpre_map() {
    use luvt::localize;
    let base = Path::new("/tmp/e2e2");
    let test = load_dataset(&base.join("data/test/manifest.json")).unwrap();
    let (params, _) = checkpoint::load::<f32>(&base.join("runs/model-ddpm/model.ckpt")).unwrap();
    let ucfg = UNetConfig { in_channels: 1, widths: [12, 24, 48], time_embed_dim: 32 };
    let mut ddpm = DenoiserParams::<f32>::init(ucfg, 0);
    ddpm.params.load_from(&params).unwrap();
    let schedule = cosine_schedule(200).unwrap();
    let lam: usize = std::env::var("LAM").ok().and_then(|v| v.parse().ok()).unwrap_or(50);
    for id in ["df_0000", "df_0001", "def_0002", "def_0004", "def_0005"] {
        let seq = test.iter().find(|s| s.id == id).unwrap();
        let k = seq.k();
        let mut data = Vec::new();
        for f in &seq.frames {
            data.extend_from_slice(f);
        }
        let x = Tensor::<f32>::from_vec(Shape::d4(k, 1, 64, 64), data);
        let rc = ReconstructionConfig {
            lambda_t: lam,
            noise_kind: NoiseKind::Gaussian,
            simplex: SimplexNoiseConfig::default(),
            seed: 1,
        };
        let xhat = dreco(&ddpm, &x, &rc, &schedule).unwrap();
        let frames: Vec<Vec<f32>> =
            (0..k).map(|f| xhat.data()[f * 4096..(f + 1) * 4096].to_vec()).collect();
        let maps: Vec<_> = seq
            .frames
            .iter()
            .zip(&frames)
            .map(|(a, b)| localize::diff_map(a, b, 64, 64).unwrap())
            .collect();
        let zpre = localize::multi_threshold_binarize(&maps, &localize::default_thresholds()).unwrap();
        let v = &zpre.values;
        println!("--- {} defect={:?} zpre_max={:.3}", id, seq.defect_center_px.map(|(r,c)|(r as i32,c as i32)), v.iter().map(|&x| x as f64).fold(0.0f64, f64::max));
        for br in 0..8 {
            let line: String = (0..8)
                .map(|bc| {
                    let mut m = 0.0f64;
                    for r in br * 8..br * 8 + 8 {
                        for c in bc * 8..bc * 8 + 8 {
                            m = m.max(v[r * 64 + c] as f64);
                        }
                    }
                    char::from_digit((m * 9.99) as u32, 10).unwrap()
                })
                .collect();
            println!("  {line}");
        }
    }
}
