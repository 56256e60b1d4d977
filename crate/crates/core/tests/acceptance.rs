//! Acceptance suite: one PASS/FAIL line per criterion, each with its
//! runtime budget, written to stderr.

use std::fs;
use std::io::Write as _;
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::path::Path;
use std::time::Instant;

use mpif::augment::{random_specmix, SpecmixConfig};
use mpif::autograd::{Conv2dGeom, Tensor};
use mpif::cli::{self, Cli, Command};
use mpif::dsp::{
    decode_cache, encode_cache, extract_features, f0_subband, log_power, stft, FeatureBlock, FrontendConfig, Waveform,
};
use mpif::io::synth_utterance;
use mpif::metrics::{compute_eer, compute_min_tdcf, parse_ablation_csv, TdcfCosts, TrialScore, NO_SPECMIX_LABEL};
use mpif::model::{
    channel_weights, mpif_fuse, mpif_scale_forward, res2net_scale_forward, scale_forward, split_channels, MpifWeights,
    Network, NetworkConfig,
};
use mpif::train::{RunLog, BEST_CHECKPOINT, LAST_CHECKPOINT, RUNLOG_FILE};
use mpif::{Label, Mode};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

mod common;

type Check = Result<String, String>;

macro_rules! ensure {
    ($cond:expr, $($fmt:tt)+) => {
        if !$cond {
            return Err(format!($($fmt)+));
        }
    };
}

struct Line {
    name: &'static str,
    pass: bool,
    detail: String,
}

/// Straight to the stderr handle, which the test harness does not capture,
/// so the report shows up without `--nocapture`.
fn report(line: &str) {
    let _ = writeln!(std::io::stderr(), "{line}");
}

fn criterion(name: &'static str, budget_secs: f64, f: impl FnOnce() -> Check) -> Line {
    let t = Instant::now();
    let result = catch_unwind(AssertUnwindSafe(f)).unwrap_or_else(|p| {
        let msg = p
            .downcast_ref::<String>()
            .cloned()
            .or_else(|| p.downcast_ref::<&str>().map(|s| s.to_string()))
            .unwrap_or_default();
        Err(format!("panicked: {msg}"))
    });
    let secs = t.elapsed().as_secs_f64();
    let (mut pass, mut detail) = match result {
        Ok(d) => (true, d),
        Err(d) => (false, d),
    };
    if secs >= budget_secs {
        pass = false;
        detail = format!("over budget; {detail}");
    }
    let line = Line {
        name,
        pass,
        detail: format!("{detail} [{secs:.1} s / {budget_secs} s]"),
    };
    report(&format!("{} {}: {}", if line.pass { "PASS" } else { "FAIL" }, line.name, line.detail));
    line
}

fn rand_tensor(rng: &mut ChaCha8Rng, shape: &[usize]) -> Tensor {
    let n = shape.iter().product();
    Tensor::new((0..n).map(|_| rng.random_range(-1.0..1.0)).collect(), shape).unwrap()
}

fn shape_chain() -> Check {
    let net = Network::new(&NetworkConfig::default()).map_err(|e| e.to_string())?;
    let out = net
        .infer(&common::random_tensor(0, &[1, 1, 45, 600]))
        .map_err(|e| e.to_string())?;
    let chain: Vec<Vec<usize>> = out.trace.iter().map(|(_, s)| s.clone()).collect();
    let want = vec![
        vec![16, 45, 600],
        vec![32, 45, 600],
        vec![64, 23, 300],
        vec![128, 12, 150],
        vec![256, 6, 75],
        vec![256, 1, 1],
    ];
    ensure!(chain == want, "chain {chain:?}");
    ensure!(out.logits.shape() == [1, 2], "logits {:?}", out.logits.shape());
    Ok(format!("{chain:?} -> 2 logits"))
}

fn split_and_hierarchy() -> Check {
    // split widths, as tensors and as built
    let cfg = NetworkConfig::default();
    let mut widths = Vec::new();
    for &w in &cfg.widths {
        let parts = split_channels(&Tensor::zeros(&[1, w, 1, 1]), cfg.n_groups).map_err(|e| e.to_string())?;
        ensure!(parts.len() == 8, "{} groups", parts.len());
        ensure!(parts.iter().all(|p| p.shape()[1] == parts[0].shape()[1]), "uneven split of {w}");
        widths.push(parts[0].shape()[1]);
    }
    ensure!(widths == [4, 8, 16, 32], "group widths {widths:?}");
    let net = Network::new(&cfg).map_err(|e| e.to_string())?;
    let mut group_params = 0;
    for p in net.store.params() {
        if p.name.contains(".group") && p.name.ends_with(".weight") {
            let layer: usize = p.name[5..6].parse().map_err(|_| format!("param name {}", p.name))?;
            let w = widths[layer - 1];
            ensure!(p.shape[..2] == [w, w], "{} has shape {:?}", p.name, p.shape);
            group_params += 1;
        }
    }
    ensure!(group_params > 0, "no group transforms found");

    // group 1 passes through untouched, whatever the transforms
    let mut rng = ChaCha8Rng::seed_from_u64(11);
    let x = rand_tensor(&mut rng, &[2, 32, 5, 7]);
    let groups = split_channels(&x, 8).map_err(|e| e.to_string())?;
    let kernels: Vec<Tensor> = (0..7).map(|_| rand_tensor(&mut rng, &[4, 4, 3, 3])).collect();
    let modules: Vec<MpifWeights> = (0..7)
        .map(|_| MpifWeights {
            branch: [rand_tensor(&mut rng, &[4, 4, 3, 3]), rand_tensor(&mut rng, &[4, 4, 3, 3])],
            energy: [rand_tensor(&mut rng, &[4, 4, 3, 3]), rand_tensor(&mut rng, &[4, 4, 3, 3])],
            energy_bias: [Some(rand_tensor(&mut rng, &[4])), Some(rand_tensor(&mut rng, &[4]))],
        })
        .collect();
    let outs = [
        res2net_scale_forward(&groups, &kernels, Conv2dGeom::new(1, 1, 1)),
        mpif_scale_forward(&groups, &modules),
        scale_forward(&groups, |_, t| Ok(t.sigmoid())),
    ];
    for ys in outs {
        let ys = ys.map_err(|e| e.to_string())?;
        let same = ys[0].data().iter().zip(groups[0].data()).all(|(a, b)| a.to_bits() == b.to_bits());
        ensure!(same, "group 1 changed");
    }

    // identity transforms unroll to y_i = p_i + ... + p_2
    let x = rand_tensor(&mut rng, &[2, 32, 6, 5]);
    let groups = split_channels(&x, 8).map_err(|e| e.to_string())?;
    let mut id = vec![0.0; 4 * 4 * 9];
    for c in 0..4 {
        id[(c * 4 + c) * 9 + 4] = 1.0;
    }
    let id = Tensor::new(id, &[4, 4, 3, 3]).unwrap();
    let ys = res2net_scale_forward(&groups, &vec![id; 7], Conv2dGeom::new(1, 1, 1)).map_err(|e| e.to_string())?;
    ensure!(ys[0].data() == groups[0].data(), "y_1 != p_1");
    for i in 1..8 {
        let mut expect = groups[1].to_vec();
        for g in &groups[2..=i] {
            expect = g.data().iter().zip(&expect).map(|(a, b)| a + b).collect();
        }
        ensure!(ys[i].data() == &expect[..], "y_{} differs from its partial sum", i + 1);
    }
    Ok(format!("group widths {widths:?} ({group_params} transform weights), group 1 bit-identical, unrolling exact"))
}

/// Scalar oracle for one channel weight: mean over positions of
/// sigmoid(bias + Σ v·c) with dilation `j` and padding `j`.
fn omega_oracle(c: &[f64], h: usize, w: usize, v: &[f64], bias: f64, j: usize) -> f64 {
    let mut acc = 0.0;
    for oy in 0..h as isize {
        for ox in 0..w as isize {
            let mut e = bias;
            for ky in 0..3isize {
                for kx in 0..3isize {
                    let (iy, ix) = (oy + (ky - 1) * j as isize, ox + (kx - 1) * j as isize);
                    if (0..h as isize).contains(&iy) && (0..w as isize).contains(&ix) {
                        e += v[(ky * 3 + kx) as usize] * c[(iy * w as isize + ix) as usize];
                    }
                }
            }
            acc += 1.0 / (1.0 + (-e).exp());
        }
    }
    acc / (h * w) as f64
}

fn fusion_oracles() -> Check {
    let mut rng = ChaCha8Rng::seed_from_u64(21);
    let mut worst_fuse: f64 = 0.0;
    for &(b, p, h, w) in &[(2, 3, 4, 5), (1, 4, 45, 60), (3, 2, 6, 75)] {
        let c1 = rand_tensor(&mut rng, &[b, p, h, w]);
        let c2 = rand_tensor(&mut rng, &[b, p, h, w]);
        let o1 = Tensor::new((0..b * p).map(|_| rng.random_range(0.0..1.0)).collect(), &[b, p, 1, 1]).unwrap();
        let o2 = Tensor::new((0..b * p).map(|_| rng.random_range(0.0..1.0)).collect(), &[b, p, 1, 1]).unwrap();
        let out = mpif_fuse(&[c1.clone(), c2.clone()], &[o1.clone(), o2.clone()]).map_err(|e| e.to_string())?;
        for bi in 0..b {
            for ch in 0..p {
                let (w1, w2) = (o1.data()[bi * p + ch], o2.data()[bi * p + ch]);
                for i in 0..h * w {
                    let k = (bi * p + ch) * h * w + i;
                    let naive = c1.data()[k] * w1 + c2.data()[k] * w2;
                    worst_fuse = worst_fuse.max((out.data()[k] - naive).abs());
                }
            }
        }
    }
    ensure!(worst_fuse < 1e-12, "fusion differs from loop by {worst_fuse:e}");

    let mut worst_omega: f64 = 0.0;
    let cases: [(&[f64], usize, usize, usize, f64); 3] = [
        (&[0.5, -1.0, 2.0, 0.25], 2, 2, 1, 0.05),
        (&[0.5, -1.0, 2.0, 0.25], 2, 2, 2, -0.3),
        (&[1.0, 0.0, -2.0, 0.5, 0.75, -0.25, 1.5, -1.0, 0.125], 3, 3, 2, 0.0),
    ];
    let v: Vec<f64> = (0..9).map(|i| 0.1 * i as f64 - 0.35).collect();
    for (c, h, w, j, bias) in cases {
        let got = channel_weights(
            &Tensor::new(c.to_vec(), &[1, 1, h, w]).unwrap(),
            &Tensor::new(v.clone(), &[1, 1, 3, 3]).unwrap(),
            Some(&Tensor::new(vec![bias], &[1]).unwrap()),
            j,
        )
        .map_err(|e| e.to_string())?;
        worst_omega = worst_omega.max((got.data()[0] - omega_oracle(c, h, w, &v, bias, j)).abs());
    }
    ensure!(worst_omega < 1e-12, "channel weight differs from hand oracle by {worst_omega:e}");
    Ok(format!("fusion vs loop {worst_fuse:e}, channel weights vs hand cases {worst_omega:e}"))
}

fn gradient_suite() -> Check {
    let ops = common::op_gradient_suite();
    let mut worst = ("", 0.0f64);
    for (name, r) in &ops {
        ensure!(r.passes(common::OP_REL_TOL, 1e-8), "{name}: {r:?}");
        if r.max_rel_err > worst.1 {
            worst = (name, r.max_rel_err);
        }
    }
    let net = common::network_gradient_check();
    ensure!(
        net.max_rel < common::NET_REL_TOL && net.max_abs_near_zero < 1e-7,
        "network: max rel {:e}, max abs {:e}",
        net.max_rel,
        net.max_abs_near_zero
    );
    Ok(format!(
        "{} op checks (worst {} at {:e}); network {} params, max rel {:e}",
        ops.len(),
        worst.0,
        worst.1,
        net.checked,
        net.max_rel
    ))
}

fn random_batch(rng: &mut ChaCha8Rng, n: usize, cols: usize) -> Vec<FeatureBlock> {
    (0..n)
        .map(|_| FeatureBlock::new(45, cols, (0..45 * cols).map(|_| rng.random_range(-5.0f32..5.0)).collect()).unwrap())
        .collect()
}

fn specmix_properties() -> Check {
    const BATCHES: u64 = 10_000;
    let mut data_rng = ChaCha8Rng::seed_from_u64(31);
    let labels: Vec<Label> = (0..8).map(|i| if i % 3 == 0 { Label::Spoof } else { Label::Bonafide }).collect();
    let bits = |b: &FeatureBlock, r: usize| b.row(r).iter().map(|v| v.to_bits()).collect::<Vec<_>>();
    let half = SpecmixConfig {
        p_hyper: 0.5,
        rng_seed: 77,
        ..Default::default()
    };
    let mut applied = 0u64;
    for i in 0..BATCHES {
        let batch = random_batch(&mut data_rng, 8, 12);
        let (out, out_labels, rep) =
            random_specmix(&batch, &labels, &half, Mode::Train, &mut half.rng_for_batch(i)).map_err(|e| e.to_string())?;
        ensure!(out_labels == labels, "labels changed in batch {i}");
        if !rep.applied {
            ensure!(out == batch, "batch {i} not applied but altered");
            continue;
        }
        applied += 1;
        let (lo, hi) = (rep.band_start, rep.band_start + rep.band_span);
        ensure!((1..=10).contains(&rep.band_span) && hi <= 45, "band [{lo}, {hi}) in batch {i}");
        for (b, o) in out.iter().enumerate() {
            let donor = rep.donor_permutation[b];
            ensure!(donor != b, "sample {b} donated to itself in batch {i}");
            for r in 0..45 {
                let src = if (lo..hi).contains(&r) { &batch[donor] } else { &batch[b] };
                ensure!(bits(o, r) == bits(src, r), "batch {i} sample {b} row {r}");
            }
        }
    }
    let rate = applied as f64 / BATCHES as f64;
    ensure!((rate - 0.5).abs() <= 0.02, "application rate {rate}");

    for (p_hyper, mode) in [(1.0, Mode::Train), (0.0, Mode::Eval), (0.5, Mode::Eval)] {
        let cfg = SpecmixConfig {
            p_hyper,
            rng_seed: 78,
            ..Default::default()
        };
        let batch = random_batch(&mut data_rng, 8, 12);
        for i in 0..BATCHES {
            let (out, l, rep) =
                random_specmix(&batch, &labels, &cfg, mode, &mut cfg.rng_for_batch(i)).map_err(|e| e.to_string())?;
            ensure!(
                !rep.applied && out == batch && l == labels,
                "p_hyper {p_hyper} {mode:?} altered batch {i}"
            );
        }
    }
    Ok(format!(
        "{BATCHES} batches: rate {rate:.4} at p_hyper 0.5, bands and donors exact; identity for p_hyper 1 and eval"
    ))
}

/// Independent brute force: every midpoint between distinct scores plus
/// both ends, costs recomputed from the raw constants.
fn brute_force_min_tdcf(bona: &[f64], spoof: &[f64], c: &TdcfCosts) -> f64 {
    let mut all: Vec<f64> = bona.iter().chain(spoof).copied().collect();
    all.sort_by(f64::total_cmp);
    all.dedup();
    let mut ts = vec![all[0] - 1.0, all[all.len() - 1] + 1.0];
    ts.extend(all.windows(2).map(|w| 0.5 * (w[0] + w[1])));
    let p_tar = (1.0 - c.p_spoof) * c.p_target_of_nonspoof;
    let p_non = (1.0 - c.p_spoof) * (1.0 - c.p_target_of_nonspoof);
    let c1 = p_tar * (c.c_miss_cm - c.c_miss_asv * c.p_miss_asv) - p_non * c.c_fa_asv * c.p_fa_asv;
    let c2 = c.c_fa_cm * c.p_spoof * (1.0 - c.p_miss_spoof_asv);
    ts.iter()
        .map(|&t| {
            let miss = bona.iter().filter(|&&s| s < t).count() as f64 / bona.len() as f64;
            let fa = spoof.iter().filter(|&&s| s >= t).count() as f64 / spoof.len() as f64;
            (c1 * miss + c2 * fa) / c1.min(c2)
        })
        .fold(f64::INFINITY, f64::min)
}

fn labelled(bona: &[f64], spoof: &[f64]) -> Vec<TrialScore> {
    let mut v: Vec<TrialScore> = bona
        .iter()
        .enumerate()
        .map(|(i, &s)| TrialScore::new(format!("b{i}"), s, Some(Label::Bonafide)))
        .collect();
    v.extend(
        spoof
            .iter()
            .enumerate()
            .map(|(i, &s)| TrialScore::new(format!("s{i}"), s, Some(Label::Spoof))),
    );
    v
}

fn metric_oracles() -> Check {
    let e = compute_eer(&labelled(&[0.8, 0.2], &[0.6, 0.4])).map_err(|e| e.to_string())?;
    ensure!(e.eer == 0.5, "documented example gives {}", e.eer);

    let mut rng = ChaCha8Rng::seed_from_u64(41);
    let draw_set = |rng: &mut ChaCha8Rng| {
        let nb = rng.random_range(3..60);
        let ns = rng.random_range(3..60);
        let shift = rng.random_range(0.0..2.0);
        let quant = rng.random_bool(0.3);
        let mut d = |mu: f64| {
            let v: f64 = rng.random_range(-1.5..1.5) + mu;
            if quant {
                (v * 4.0).round() / 4.0
            } else {
                v
            }
        };
        let bona: Vec<f64> = (0..nb).map(|_| d(shift)).collect();
        let spoof: Vec<f64> = (0..ns).map(|_| d(0.0)).collect();
        (bona, spoof)
    };
    let transforms: [fn(f64, f64) -> f64; 6] = [
        |x, a| a * x - 3.0,
        |x, a| (a * x).exp(),
        |x, a| x * x * x + a * x,
        |x, a| (x / a).atan(),
        |x, a| 1.0 / (1.0 + (-x / a).exp()),
        |x, a| ((a * x).exp() + 1.0).ln() + x,
    ];
    let mut checked = 0;
    while checked < 1000 {
        let (bona, spoof) = draw_set(&mut rng);
        let f = transforms[rng.random_range(0..transforms.len())];
        let a = rng.random_range(0.5..2.0);
        // skip draws where rounding would merge or reorder distinct scores
        let mut xs: Vec<f64> = bona.iter().chain(&spoof).copied().collect();
        xs.sort_by(f64::total_cmp);
        xs.dedup();
        if xs.windows(2).any(|w| f(w[0], a) >= f(w[1], a)) {
            continue;
        }
        let base = compute_eer(&labelled(&bona, &spoof)).map_err(|e| e.to_string())?;
        let tb: Vec<f64> = bona.iter().map(|&x| f(x, a)).collect();
        let tsp: Vec<f64> = spoof.iter().map(|&x| f(x, a)).collect();
        let moved = compute_eer(&labelled(&tb, &tsp)).map_err(|e| e.to_string())?;
        ensure!(moved.eer == base.eer, "transform changed EER {} -> {}", base.eer, moved.eer);
        checked += 1;
    }

    let mut worst: f64 = 0.0;
    for i in 0..500 {
        let (bona, spoof) = draw_set(&mut rng);
        let costs = if i % 2 == 0 {
            TdcfCosts::default()
        } else {
            TdcfCosts {
                p_spoof: rng.random_range(0.01..0.5),
                c_fa_cm: rng.random_range(1.0..20.0),
                p_miss_asv: rng.random_range(0.0..0.1),
                p_fa_asv: rng.random_range(0.0..0.1),
                p_miss_spoof_asv: rng.random_range(0.1..0.9),
                ..TdcfCosts::default()
            }
        };
        let got = compute_min_tdcf(&labelled(&bona, &spoof), &costs).map_err(|e| e.to_string())?;
        worst = worst.max((got - brute_force_min_tdcf(&bona, &spoof, &costs)).abs());
    }
    ensure!(worst < 1e-10, "min t-DCF differs from brute force by {worst:e}");

    let sep = labelled(&[0.9, 0.8, 0.75], &[0.1, 0.2, 0.3, 0.7]);
    let eer = compute_eer(&sep).map_err(|e| e.to_string())?.eer;
    let tdcf = compute_min_tdcf(&sep, &TdcfCosts::default()).map_err(|e| e.to_string())?;
    ensure!(eer == 0.0 && tdcf == 0.0, "perfect separation gives EER {eer}, min t-DCF {tdcf}");
    Ok(format!(
        "4-score EER 0.5; 1000 monotone transforms exact; 500 min t-DCF sets within {worst:e}; separation gives 0/0"
    ))
}

fn frontend_conformance() -> Check {
    let x = synth_utterance(Label::Spoof, 27_000, 16_000, &mut ChaCha8Rng::seed_from_u64(51));
    let w = Waveform::new(x, 16_000).map_err(|e| e.to_string())?;
    let cfg = FrontendConfig::default();
    let spec = stft(&w, cfg.win, cfg.hop).map_err(|e| e.to_string())?;
    ensure!(spec.freq_bins == 865, "{} bins", spec.freq_bins);
    ensure!(spec.frames == 195, "{} frames", spec.frames);
    let lps = log_power(&f0_subband(&spec, 45).map_err(|e| e.to_string())?, cfg.floor_eps);
    let block = extract_features(&w, &cfg).map_err(|e| e.to_string())?;
    ensure!((block.rows(), block.cols()) == (45, 600), "{}x{}", block.rows(), block.cols());
    for r in 0..45 {
        for c in 0..600 {
            ensure!(
                block.get(r, c).to_bits() == (lps.get(r, c % 195) as f32).to_bits(),
                "column {c} of row {r} is not column {}",
                c % 195
            );
        }
    }
    let bytes = encode_cache(&cfg.cache_header(), &block).map_err(|e| e.to_string())?;
    let dir = tempfile::tempdir().map_err(|e| e.to_string())?;
    let path = dir.path().join("u.f0sb");
    fs::write(&path, &bytes).map_err(|e| e.to_string())?;
    let (header, back) = decode_cache(&fs::read(&path).map_err(|e| e.to_string())?).map_err(|e| e.to_string())?;
    ensure!(header == cfg.cache_header(), "header changed");
    let same = back.values().iter().zip(block.values()).all(|(a, b)| a.to_bits() == b.to_bits());
    ensure!(same && back.values().len() == block.values().len(), "cache round trip not bit-exact");
    Ok(format!("865 bins x 195 frames -> 45x600, tiling exact, cache {} bytes bit-exact", bytes.len()))
}

fn parse(args: &[&str]) -> Command {
    use clap::Parser;
    Cli::try_parse_from(std::iter::once("mpif").chain(args.iter().copied()))
        .unwrap_or_else(|e| panic!("{e}"))
        .command
}

fn p(path: &Path) -> &str {
    path.to_str().expect("utf-8 temp path")
}

const RUN_CONFIG: &str = r#"{
  "data": {"train_manifest": "corpus/train.tsv", "dev_manifest": "corpus/dev.tsv", "feature_dir": "corpus/feats"},
  "network": {"n_groups": 4, "stem_channels": 8, "widths": [8, 16, 32, 64]},
  "train": {"epochs": 10, "batch_size": 16, "seed": 1, "specmix": {"p_hyper": 0.5}}
}
"#;

/// Synthetic corpus with cached features and the tiny run config.
fn prepare_corpus(root: &Path) -> Check {
    let corpus = root.join("corpus");
    let Command::Synth(a) = parse(&["synth", "--out", p(&corpus), "--seed", "7"]) else { unreachable!() };
    cli::run(Cli { command: Command::Synth(a) }).map_err(|e| e.to_string())?;
    for split in ["train", "dev", "eval"] {
        let Command::Featurize(a) = parse(&[
            "featurize",
            "--manifest",
            p(&corpus.join(format!("{split}.tsv"))),
            "--out",
            p(&corpus.join("feats")),
        ]) else {
            unreachable!()
        };
        cli::featurize_cmd(&a).map_err(|e| e.to_string())?;
    }
    fs::write(root.join("run.json"), RUN_CONFIG).map_err(|e| e.to_string())?;
    let rows = |s: &str| fs::read_to_string(corpus.join(format!("{s}.tsv"))).map(|t| t.lines().count() - 1);
    Ok(format!(
        "{}/{}/{} utterances",
        rows("train").unwrap_or(0),
        rows("dev").unwrap_or(0),
        rows("eval").unwrap_or(0)
    ))
}

fn train_eval_score(root: &Path, run: &str) -> Result<(f64, f64, RunLog), String> {
    let out = root.join(run);
    let Command::Train(a) = parse(&["train", "--config", p(&root.join("run.json")), "--out", p(&out)]) else {
        unreachable!()
    };
    let log = cli::train_cmd(&a).map_err(|e| e.to_string())?;
    let score = |manifest: &str, keys: &str, name: &str| -> Result<cli::ScoreReport, String> {
        let scores = out.join(name);
        let Command::Eval(a) = parse(&[
            "eval",
            "--checkpoint",
            p(&out.join(BEST_CHECKPOINT)),
            "--manifest",
            p(&root.join("corpus").join(manifest)),
            "--features",
            p(&root.join("corpus/feats")),
            "--config",
            p(&root.join("run.json")),
            "--out",
            p(&scores),
        ]) else {
            unreachable!()
        };
        cli::eval_cmd(&a).map_err(|e| e.to_string())?;
        let Command::Score(a) = parse(&["score", "--scores", p(&scores), "--keys", p(&root.join("corpus").join(keys))])
        else {
            unreachable!()
        };
        cli::score_cmd(&a).map_err(|e| e.to_string())
    };
    let dev = score("dev.tsv", "dev_key.tsv", "dev_scores.tsv")?;
    let eval = score("eval.tsv", "eval_key.tsv", "eval_scores.tsv")?;
    // the dev metrics recomputed from files match what training logged
    let best = log.best().ok_or("empty run log")?;
    ensure!(
        dev.eer.to_bits() == best.dev_eer.to_bits() && dev.min_tdcf.to_bits() == best.dev_min_tdcf.to_bits(),
        "rescored dev ({}, {}) != logged ({}, {})",
        dev.eer,
        dev.min_tdcf,
        best.dev_eer,
        best.dev_min_tdcf
    );
    Ok((eval.eer, eval.min_tdcf, log))
}

fn end_to_end(root: &Path) -> Check {
    let corpus = prepare_corpus(root)?;
    let (eer_a, tdcf_a, log_a) = train_eval_score(root, "run_a")?;
    let (eer_b, _, log_b) = train_eval_score(root, "run_b")?;
    for f in [RUNLOG_FILE, BEST_CHECKPOINT, LAST_CHECKPOINT, "eval_scores.tsv", "dev_scores.tsv"] {
        let a = fs::read(root.join("run_a").join(f)).map_err(|e| e.to_string())?;
        let b = fs::read(root.join("run_b").join(f)).map_err(|e| e.to_string())?;
        ensure!(a == b, "{f} differs between identically seeded runs");
    }
    ensure!(log_a == log_b && eer_a.to_bits() == eer_b.to_bits(), "runs differ");
    ensure!(eer_a <= 0.05, "eval EER {eer_a} > 5%");
    let best = log_a.best().ok_or("empty run log")?;
    Ok(format!(
        "{corpus}; best epoch {} (dev EER {:.4}); eval EER {:.4}, min t-DCF {:.4}; two runs byte-identical",
        best.epoch, best.dev_eer, eer_a, tdcf_a
    ))
}

fn ablation_grid(root: &Path) -> Check {
    if !root.join("run.json").exists() {
        prepare_corpus(root)?;
    }
    let out = root.join("ablation");
    let Command::Ablate(a) = parse(&[
        "ablate",
        "--config",
        p(&root.join("run.json")),
        "--out",
        p(&out),
        "--p-hyper",
        "0,0.5,1",
        "--eval-manifest",
        p(&root.join("corpus/eval.tsv")),
    ]) else {
        unreachable!()
    };
    let res = cli::ablate_cmd(&a).map_err(|e| e.to_string())?;
    ensure!(res.rows.len() == 3, "{} rows", res.rows.len());
    let lines: Vec<&str> = res.table.lines().collect();
    ensure!(lines.len() == 5, "table has {} lines:\n{}", lines.len(), res.table);
    let labels: Vec<String> = lines[2..]
        .iter()
        .map(|l| l.trim_start_matches('|').split('|').next().unwrap_or("").trim().to_string())
        .collect();
    ensure!(labels == ["0", "0.5", NO_SPECMIX_LABEL], "row labels {labels:?}");
    ensure!(lines[0].contains("EER(%)") && lines[0].contains("min t-DCF"), "header {}", lines[0]);
    let csv = fs::read_to_string(out.join("ablation.csv")).map_err(|e| e.to_string())?;
    ensure!(parse_ablation_csv(&csv).map_err(|e| e.to_string())? == res.rows, "CSV does not round-trip");
    let (_, log1) = res.logs.iter().find(|(p, _)| *p == 1.0).ok_or("no p_hyper = 1 run")?;
    let (mut batches, mut identity) = (0, 0);
    for r in &log1.records {
        ensure!(r.identity_batches == r.batches && r.specmix_batches == 0, "epoch {} altered batches", r.epoch);
        batches += r.batches;
        identity += r.identity_batches;
    }
    Ok(format!("3 rows; p_hyper = 1 identity on {identity}/{batches} batches"))
}

#[test]
fn acceptance() {
    let work = tempfile::tempdir().expect("temp dir");
    let root = work.path();
    let lines = vec![
        criterion("shape chain", 10.0, shape_chain),
        criterion("scale split and hierarchy", 5.0, split_and_hierarchy),
        criterion("fusion oracles", 5.0, fusion_oracles),
        criterion("gradient suite", 120.0, gradient_suite),
        criterion("specmix properties", 60.0, specmix_properties),
        criterion("metric oracles", 60.0, metric_oracles),
        criterion("frontend conformance", 10.0, frontend_conformance),
        criterion("end-to-end desk run", 900.0, || end_to_end(root)),
        criterion("ablation grid", 2700.0, || ablation_grid(root)),
    ];
    let failed: Vec<&str> = lines.iter().filter(|l| !l.pass).map(|l| l.name).collect();
    report(&format!("{} of {} criteria passed", lines.len() - failed.len(), lines.len()));
    assert!(failed.is_empty(), "failed: {failed:?}");
}
