//! Acceptance criteria for the ranking library and the CLI.
//!
//! A plain binary rather than a libtest harness: criteria run in sequence, so
//! the timed checks are measured without competing test threads, and the
//! report is never captured. Each criterion prints one `PASS` / `FAIL` line;
//! the target exits non-zero if any criterion fails.

use std::collections::BTreeSet;
use std::path::Path;
use std::process::Command;
use std::time::{Duration, Instant};

use rand::Rng as _;
use svdrank::dataset::{make_split, CcrChoice, Corpus, LabelSet, Svd};
use svdrank::features::{ModelInput, PooledFeature, Spectrogram};
use svdrank::metrics::{
    ppref, ppref_count, pseudo_f, upper_bound_estimate, PrefPrediction, PseudoF, ResponseTally, Subset,
};
use svdrank::rng::{self, Rng};
use svdrank::scorer::{self, ConvPoolConfig, Mode, ScorerParameters};
use svdrank::synth::{self, LabelCounts, SynthConfig};
use svdrank::training::{
    ranknet_loss, ranknet_pair_loss, ranknet_probability, run_experiment, ExperimentConfig, ExperimentResult,
    Hyperparams, ModelSpec, TrainMode, DEFAULT_TEST_PAIRS,
};

type Outcome = Result<String, String>;
type Transform = (&'static str, fn(f64) -> f64);

fn check(cond: bool, detail: String) -> Outcome {
    if cond {
        Ok(detail)
    } else {
        Err(detail)
    }
}

// ---------------------------------------------------------------- gradients

const FD_STEP: f64 = 1e-5;
const FD_TOL: f64 = 1e-4;
/// Gradients smaller than this are compared in absolute terms.
const FD_FLOOR: f64 = 1e-6;

/// RankNet pair loss written out from its definition, used as the oracle's objective.
fn reference_pair_loss(si: f64, sj: f64, target: f64) -> f64 {
    let p = 1.0 / (1.0 + (-(sj - si)).exp());
    -(target * p.ln() + (1.0 - target) * (1.0 - p).ln())
}

struct FdInstance {
    params: ScorerParameters,
    xi: ModelInput,
    xj: ModelInput,
    target: f64,
    mode: Mode,
    dropout_seed: u64,
}

/// Returns (worst relative error, coordinates checked, coordinates skipped at ReLU kinks).
fn fd_check(inst: &FdInstance, coords: &[usize]) -> (f64, usize, usize) {
    let run = |p: &ScorerParameters| {
        let mut r = rng::seeded(inst.dropout_seed);
        let a = scorer::forward(p, &inst.xi, inst.mode, &mut r).unwrap();
        let b = scorer::forward(p, &inst.xj, inst.mode, &mut r).unwrap();
        (a, b)
    };
    let (oi, oj) = run(&inst.params);
    let (_, adj_i, adj_j) = ranknet_pair_loss(oi.score, oj.score, inst.target);
    let mut g = scorer::gradients(&inst.params, adj_i, &oi).unwrap();
    scorer::accumulate_gradients(&inst.params, adj_j, &oj, &mut g).unwrap();
    let analytic = g.flat();
    let (pi, pj) = (oi.relu_pattern(), oj.relu_pattern());

    let theta = inst.params.flat();
    let mut probe = inst.params.clone();
    let (mut worst, mut checked, mut skipped) = (0.0_f64, 0, 0);
    for &k in coords {
        let mut loss_at = |v: f64| {
            let mut t = theta.clone();
            t[k] = v;
            probe.set_flat(&t);
            let (a, b) = run(&probe);
            let same = a.relu_pattern() == pi && b.relu_pattern() == pj;
            (reference_pair_loss(a.score, b.score, inst.target), same)
        };
        let (plus, same_p) = loss_at(theta[k] + FD_STEP);
        let (minus, same_m) = loss_at(theta[k] - FD_STEP);
        if !(same_p && same_m) {
            skipped += 1;
            continue;
        }
        let numeric = (plus - minus) / (2.0 * FD_STEP);
        let rel = (analytic[k] - numeric).abs() / analytic[k].abs().max(numeric.abs()).max(FD_FLOOR);
        worst = worst.max(rel);
        checked += 1;
    }
    (worst, checked, skipped)
}

fn random_pooled(dim: usize, r: &mut Rng) -> ModelInput {
    ModelInput::Pooled(PooledFeature {
        vector: (0..dim).map(|_| r.random_range(-2.0..2.0)).collect(),
    })
}

fn random_spectrogram(frames: usize, bins: usize, r: &mut Rng) -> ModelInput {
    let data = (0..frames * bins).map(|_| r.random_range(0.0..1.5)).collect();
    ModelInput::Spectrogram(Spectrogram::new(frames, bins, data).unwrap())
}

fn jitter(p: &mut ScorerParameters, r: &mut Rng) {
    // Random biases keep units away from being systematically dead.
    let mut flat = p.flat();
    flat.iter_mut().for_each(|v| *v += r.random_range(-0.1..0.1));
    p.set_flat(&flat);
}

fn random_target(r: &mut Rng) -> f64 {
    [0.0, 0.25, 0.75, 1.0][r.random_range(0..4)]
}

fn mode_for(k: usize) -> Mode {
    if k.is_multiple_of(2) {
        Mode::Eval
    } else {
        Mode::Train { dropout: 0.3 }
    }
}

fn gradient_instances(r: &mut Rng) -> Vec<(&'static str, FdInstance, Option<usize>)> {
    let mut out = Vec::new();
    for k in 0..20 {
        let (dim, hidden) = (r.random_range(2..16), r.random_range(1..12));
        let mut params = scorer::init_pooled_fc(dim, hidden, 1000 + k as u64).unwrap();
        jitter(&mut params, r);
        let inst = FdInstance {
            params,
            xi: random_pooled(dim, r),
            xj: random_pooled(dim, r),
            target: random_target(r),
            mode: mode_for(k),
            dropout_seed: k as u64,
        };
        out.push(("pooled_fc", inst, None));
    }
    for k in 0..20 {
        let bins = r.random_range(2..9);
        let layers = r.random_range(1..4);
        let cfg = ConvPoolConfig {
            in_bins: bins,
            channels: (0..layers).map(|_| r.random_range(1..6)).collect(),
            kernel: [1, 3, 5][r.random_range(0..3)],
            fc_hidden: r.random_range(1..6),
        };
        let mut params = scorer::init_conv_pool_with(&cfg, 2000 + k as u64).unwrap();
        jitter(&mut params, r);
        let (fi, fj) = (r.random_range(1..12), r.random_range(1..12));
        let inst = FdInstance {
            params,
            xi: random_spectrogram(fi, bins, r),
            xj: random_spectrogram(fj, bins, r),
            target: random_target(r),
            mode: mode_for(k),
            dropout_seed: 50 + k as u64,
        };
        out.push(("conv_pool", inst, None));
    }
    // Full-size models, on sampled coordinates.
    for k in 0..2 {
        let mut params = scorer::init_pooled_fc(768, 256, 3000 + k).unwrap();
        jitter(&mut params, r);
        let inst = FdInstance {
            params,
            xi: random_pooled(768, r),
            xj: random_pooled(768, r),
            target: random_target(r),
            mode: mode_for(k as usize),
            dropout_seed: 90 + k,
        };
        out.push(("pooled_fc", inst, Some(300)));
        let mut params = scorer::init_conv_pool(4000 + k).unwrap();
        jitter(&mut params, r);
        let inst = FdInstance {
            params,
            xi: random_spectrogram(12, 257, r),
            xj: random_spectrogram(9, 257, r),
            target: random_target(r),
            mode: mode_for(k as usize),
            dropout_seed: 95 + k,
        };
        out.push(("conv_pool", inst, Some(300)));
    }
    out
}

fn gradient_correctness() -> Outcome {
    let start = Instant::now();
    let mut r = rng::seeded(0x6ead);
    let mut worst = 0.0_f64;
    let (mut n_pooled, mut n_conv, mut checked, mut skipped) = (0, 0, 0, 0);
    for (arch, inst, sample) in gradient_instances(&mut r) {
        let n = inst.params.num_parameters();
        let coords: Vec<usize> = match sample {
            None => (0..n).collect(),
            Some(m) => (0..m).map(|_| r.random_range(0..n)).collect(),
        };
        let (w, c, s) = fd_check(&inst, &coords);
        if c == 0 {
            return Err(format!("{arch} instance had every coordinate at a ReLU kink"));
        }
        worst = worst.max(w);
        checked += c;
        skipped += s;
        if arch == "pooled_fc" {
            n_pooled += 1;
        } else {
            n_conv += 1;
        }
    }
    let elapsed = start.elapsed();
    check(
        n_pooled >= 20 && n_conv >= 20 && worst < FD_TOL && elapsed < Duration::from_secs(30),
        format!(
            "{n_pooled} pooled_fc + {n_conv} conv_pool instances, {checked} coordinates ({skipped} at kinks), \
             max rel err {worst:.2e} (< {FD_TOL:e}), {:.1}s (< 30s)",
            elapsed.as_secs_f64()
        ),
    )
}

// ------------------------------------------------------------------ metrics

const CHOICES: [CcrChoice; 4] = [
    CcrChoice::IMore,
    CcrChoice::ILittleMore,
    CcrChoice::JLittleMore,
    CcrChoice::JMore,
];

/// Straight recount: (correct, kept) per subset, ties wrong.
fn brute_force(preds: &[PrefPrediction], strong: bool) -> (usize, usize) {
    let mut correct = 0;
    let mut kept = 0;
    for p in preds {
        let (is_strong, j_wins) = match p.choice {
            CcrChoice::IMore => (true, false),
            CcrChoice::ILittleMore => (false, false),
            CcrChoice::JLittleMore => (false, true),
            CcrChoice::JMore => (true, true),
        };
        if is_strong != strong {
            continue;
        }
        kept += 1;
        let ok = if j_wins {
            p.score_j > p.score_i
        } else {
            p.score_i > p.score_j
        };
        if ok {
            correct += 1;
        }
    }
    (correct, kept)
}

fn ppref_or_none(preds: &[PrefPrediction], subset: Subset) -> Option<f64> {
    ppref(preds, subset).ok()
}

fn metric_oracle() -> Outcome {
    let mut r = rng::seeded(0x0ac1e);
    let transforms: [Transform; 4] = [
        ("affine", |s| 3.0 * s + 7.0),
        ("cube", |s| s * s * s),
        ("exp", f64::exp),
        ("atan", f64::atan),
    ];
    let mut mismatches = Vec::new();
    for set in 0..1000 {
        let n = r.random_range(1..60);
        // Integer-valued scores: ties happen, and every transform keeps order exactly.
        let preds: Vec<PrefPrediction> = (0..n)
            .map(|_| PrefPrediction {
                score_i: r.random_range(-20..=20) as f64,
                score_j: r.random_range(-20..=20) as f64,
                choice: CHOICES[r.random_range(0..4)],
            })
            .collect();
        for (subset, strong) in [(Subset::Strong, true), (Subset::Weak, false)] {
            let (c, k) = brute_force(&preds, strong);
            match ppref_count(&preds, subset) {
                Ok(got) if k > 0 && got.correct == c && got.kept == k && got.precision() == c as f64 / k as f64 => {}
                Err(_) if k == 0 => {}
                other => mismatches.push(format!("set {set} {subset:?}: {other:?} vs {c}/{k}")),
            }
            let base = ppref_or_none(&preds, subset);
            for (name, f) in transforms {
                let t: Vec<_> = preds
                    .iter()
                    .map(|p| PrefPrediction {
                        score_i: f(p.score_i),
                        score_j: f(p.score_j),
                        choice: p.choice,
                    })
                    .collect();
                if ppref_or_none(&t, subset) != base {
                    mismatches.push(format!("set {set} {subset:?}: not invariant under {name}"));
                }
            }
            let mirrored: Vec<_> = preds
                .iter()
                .map(|p| PrefPrediction {
                    score_i: p.score_j,
                    score_j: p.score_i,
                    choice: p.choice.mirror(),
                })
                .collect();
            if ppref_or_none(&mirrored, subset) != base {
                mismatches.push(format!("set {set} {subset:?}: not invariant under swap+mirror"));
            }
        }
    }
    check(
        mismatches.is_empty(),
        format!(
            "1000 random prediction sets, brute-force recount + 4 monotone transforms + swap/mirror; {} mismatches{}",
            mismatches.len(),
            mismatches.first().map(|m| format!(" (first: {m})")).unwrap_or_default()
        ),
    )
}

fn formula_checks() -> Outcome {
    let p = ranknet_probability(1.3, 1.3);
    let (loss, _) = ranknet_loss(0.75, 0.5);
    let ub = upper_bound_estimate(&[ResponseTally::new(40, 5, 3, 2)]).map_err(|e| e.to_string())?;
    let pf = pseudo_f(&[vec![1.0, 2.0], vec![3.0, 4.0]]).map_err(|e| e.to_string())?;
    let pf = match pf {
        PseudoF::Finite(v) => v,
        PseudoF::Infinite => f64::INFINITY,
    };
    let ok = p == 0.5
        && (loss - std::f64::consts::LN_2).abs() <= 1e-9
        && ub.strong == Some(40.0 / 42.0)
        && ub.weak == Some(5.0 / 8.0)
        && (pf - 8.0).abs() <= 1e-12;
    check(
        ok,
        format!(
            "P(equal scores) = {p}, loss(0.75, 0.5) - ln2 = {:.1e}, ub(40,5,3,2) = ({:?}, {:?}), pseudo-F = {pf}",
            loss - std::f64::consts::LN_2,
            ub.strong,
            ub.weak
        ),
    )
}

// ----------------------------------------------------------------- training

const WORLD_SEED: u64 = 2024;
const TRAIN_SPEAKERS: usize = 150;

struct World {
    svd: Svd,
    corpus: Corpus,
    labels: LabelSet,
    world: synth::LatentWorld,
}

fn default_world() -> World {
    let svd = Svd::resolve("synthetic");
    let ds = synth::generate_dataset(&SynthConfig::default(), &svd, &LabelCounts::default(), WORLD_SEED).unwrap();
    World {
        svd,
        corpus: ds.corpus,
        labels: ds.labels,
        world: ds.world,
    }
}

fn experiment(w: &World, model: ModelSpec, modes: Vec<TrainMode>, sizes: Vec<usize>) -> ExperimentResult {
    let spectrograms = matches!(model, ModelSpec::ConvPool { .. });
    let features = w.world.feature_store(&w.corpus, spectrograms).unwrap();
    let config = ExperimentConfig {
        svd: w.svd.clone(),
        sizes,
        modes,
        model,
        hyperparams: Hyperparams::default(),
        train_speakers: TRAIN_SPEAKERS,
        split_seed: 1,
        test_pairs_per_variant: Some(DEFAULT_TEST_PAIRS),
        keep_models: false,
    };
    run_experiment(&w.corpus, &w.labels, &features, &config).unwrap()
}

fn learnability(w: &World) -> Outcome {
    let start = Instant::now();
    let hp = Hyperparams::default();
    let res = experiment(
        w,
        ModelSpec::default_for(scorer::Architecture::PooledFc),
        vec![TrainMode::Ccr],
        vec![125],
    );
    let elapsed = start.elapsed();
    let s = res.summary(TrainMode::Ccr, 125).ok_or("missing cell")?;
    let mean = s.mean_strong.unwrap_or(f64::NAN);
    check(
        s.runs == 5
            && hp.epochs == 30
            && mean >= 0.70
            && res.n_test_strong >= 1000
            && elapsed < Duration::from_secs(120),
        format!(
            "pooled_fc CCR n=125, {} seeds x {} epochs: mean max ppref-strong {mean:.4} (>= 0.70) on {} strong test pairs, {:.1}s (< 120s)",
            s.runs,
            hp.epochs,
            res.n_test_strong,
            elapsed.as_secs_f64()
        ),
    )
}

struct Cell {
    arch: &'static str,
    n: usize,
    acr: (f64, f64),
    ccr: (f64, f64),
}

fn grid(w: &World) -> Vec<Cell> {
    let mut cells = Vec::new();
    for (arch, spec) in [
        ("pooled_fc", ModelSpec::default_for(scorer::Architecture::PooledFc)),
        ("conv_pool", ModelSpec::default_for(scorer::Architecture::ConvPool)),
    ] {
        let res = experiment(w, spec, vec![TrainMode::Acr, TrainMode::Ccr], vec![125, 500]);
        for n in [125, 500] {
            let get = |m| {
                let s = res.summary(m, n).expect("cell");
                (s.mean_strong.unwrap_or(f64::NAN), s.mean_weak.unwrap_or(f64::NAN))
            };
            cells.push(Cell {
                arch,
                n,
                acr: get(TrainMode::Acr),
                ccr: get(TrainMode::Ccr),
            });
        }
    }
    cells
}

fn ccr_beats_acr(cells: &[Cell]) -> Outcome {
    let wins = cells.iter().filter(|c| c.ccr.0 >= c.acr.0).count();
    let detail: Vec<String> = cells
        .iter()
        .map(|c| format!("{} n={}: CCR {:.3} vs ACR {:.3}", c.arch, c.n, c.ccr.0, c.acr.0))
        .collect();
    check(
        wins >= 3 && cells.len() == 4,
        format!("{wins}/4 cells (>= 3); {}", detail.join("; ")),
    )
}

fn strong_beats_weak(cells: &[Cell]) -> Outcome {
    let mut failures = Vec::new();
    let mut n = 0;
    for c in cells {
        for (mode, (strong, weak)) in [("ACR", c.acr), ("CCR", c.ccr)] {
            n += 1;
            if strong.partial_cmp(&weak).is_none_or(|o| o.is_lt()) {
                failures.push(format!("{} {mode} n={}: {strong:.3} < {weak:.3}", c.arch, c.n));
            }
        }
    }
    check(
        failures.is_empty() && n == 8,
        if failures.is_empty() {
            format!("strong >= weak in all {n} trained cells")
        } else {
            failures.join("; ")
        },
    )
}

// -------------------------------------------------------------- agreement

fn upper_bound_consistency(w: &World) -> Outcome {
    let questions = synth::sample_questions(&w.corpus, &w.svd, 50, 11).map_err(|e| e.to_string())?;
    let tallies = synth::simulate_panel(&w.world, &questions, 50, 12).map_err(|e| e.to_string())?;
    let ub = upper_bound_estimate(&tallies).map_err(|e| e.to_string())?;
    let closed = synth::analytic_agreement(&w.world, &questions, 50).map_err(|e| e.to_string())?;
    let (s, wk) = (ub.strong.unwrap_or(f64::NAN), ub.weak.unwrap_or(f64::NAN));
    check(
        questions.len() == 50 && (s - closed.strong).abs() <= 0.02 && s >= wk,
        format!(
            "50 questions x 50 annotators: ub_strong {s:.4} vs closed form {:.4} (|diff| {:.4} <= 0.02), ub_weak {wk:.4}",
            closed.strong,
            (s - closed.strong).abs()
        ),
    )
}

// ------------------------------------------------------------------ splits

fn split_audit() -> Outcome {
    let mut r = rng::seeded(0x5b17);
    let mut violations = Vec::new();
    let mut n_test = 0usize;
    for k in 0..100u64 {
        let config = SynthConfig {
            n_speakers: r.random_range(6..40),
            utts_per_speaker: r.random_range(1..4),
            n_sentences: r.random_range(1..3),
            feature_dim: 2,
            ..SynthConfig::default()
        };
        let svd = [
            Svd::resolve("synthetic"),
            Svd::resolve("youthfulF"),
            Svd::resolve("resonantM"),
        ][k as usize % 3]
            .clone();
        let counts = LabelCounts {
            acr: r.random_range(0..200),
            ccr: r.random_range(1..400),
        };
        let ds = synth::generate_dataset(&config, &svd, &counts, 500 + k).map_err(|e| e.to_string())?;
        let eligible: BTreeSet<&str> = ds
            .corpus
            .utterances()
            .iter()
            .filter(|u| svd.gender_scope.admits(u.gender))
            .map(|u| u.speaker_id.as_str())
            .collect();
        let n_train = r.random_range(1..eligible.len());
        let plan = make_split(&ds.corpus, &ds.labels, &svd, n_train, k).map_err(|e| e.to_string())?;
        let spk = |id: &str| ds.corpus.speaker_of(id).unwrap().to_string();
        let held_out = |id: &str| !plan.train_speakers.contains(&spk(id));
        if plan.train_speakers.len() != n_train {
            violations.push(format!(
                "split {k}: {} train speakers, asked {n_train}",
                plan.train_speakers.len()
            ));
        }
        for &i in &plan.train_acr {
            let l = ds.labels.acr(i).unwrap();
            if held_out(&l.utterance_id) {
                violations.push(format!("split {k}: train ACR {i} uses held-out {}", l.utterance_id));
            }
        }
        for &i in &plan.train_ccr {
            let l = ds.labels.ccr(i).unwrap();
            if held_out(&l.utt_i) || held_out(&l.utt_j) {
                violations.push(format!("split {k}: train CCR {i} touches a held-out speaker"));
            }
        }
        for &i in &plan.test_ccr {
            let l = ds.labels.ccr(i).unwrap();
            if !(held_out(&l.utt_i) || held_out(&l.utt_j)) {
                violations.push(format!("split {k}: test CCR {i} has no held-out speaker"));
            }
        }
        n_test += plan.test_ccr.len();
    }
    check(
        violations.is_empty(),
        format!(
            "100 random corpora and seeds, {n_test} test labels audited; {} violations{}",
            violations.len(),
            violations.first().map(|v| format!(" (first: {v})")).unwrap_or_default()
        ),
    )
}

// ------------------------------------------------------------- determinism

fn run_cli(args: &[&str]) -> Result<(), String> {
    let out = Command::new(env!("CARGO_BIN_EXE_svdrank"))
        .args(args)
        .output()
        .map_err(|e| e.to_string())?;
    if out.status.success() {
        Ok(())
    } else {
        Err(format!(
            "svdrank {args:?} failed: {}",
            String::from_utf8_lossy(&out.stderr)
        ))
    }
}

fn experiment_determinism(dir: &Path) -> Outcome {
    let data = dir.join("data");
    let data_s = data.to_str().unwrap();
    run_cli(&[
        "synth",
        "--out-dir",
        data_s,
        "--speakers",
        "60",
        "--n-acr",
        "1500",
        "--n-ccr",
        "2500",
        "--seed",
        "9",
    ])?;
    let mut csvs = Vec::new();
    for k in 0..2 {
        let out = dir.join(format!("run{k}.csv"));
        run_cli(&[
            "experiment",
            "--data-dir",
            data_s,
            "--svd",
            "synthetic",
            "--modes",
            "acr,ccr",
            "--sizes",
            "125,500",
            "--seeds",
            "3",
            "--seed",
            "4",
            "--epochs",
            "8",
            "--split-seed",
            "2",
            "--out",
            out.to_str().unwrap(),
        ])?;
        csvs.push(std::fs::read_to_string(out).map_err(|e| e.to_string())?);
    }
    let strip =
        |s: &str| -> (Vec<String>, Vec<String>) { s.lines().map(str::to_string).partition(|l| l.starts_with('#')) };
    let ((h0, b0), (h1, b1)) = (strip(&csvs[0]), strip(&csvs[1]));
    check(
        h0.len() == 1 && h1.len() == 1 && b0 == b1 && b0.len() > 1,
        format!(
            "two `experiment` runs, {} CSV lines each: identical apart from the timestamp line = {}",
            b0.len(),
            b0 == b1
        ),
    )
}

fn report(failed: &mut Vec<&'static str>, name: &'static str, outcome: Outcome) {
    match outcome {
        Ok(d) => println!("PASS  {name}: {d}"),
        Err(d) => {
            println!("FAIL  {name}: {d}");
            failed.push(name);
        }
    }
}

fn main() {
    let dir = tempfile::tempdir().unwrap();
    let mut failed = Vec::new();
    println!("\nacceptance criteria");
    report(&mut failed, "gradient correctness", gradient_correctness());
    report(&mut failed, "metric oracle equivalence", metric_oracle());
    report(&mut failed, "formula checks", formula_checks());
    let world = default_world();
    report(&mut failed, "learnability at small n", learnability(&world));
    let cells = grid(&world);
    report(&mut failed, "CCR >= ACR", ccr_beats_acr(&cells));
    report(&mut failed, "strong >= weak", strong_beats_weak(&cells));
    report(&mut failed, "upper-bound consistency", upper_bound_consistency(&world));
    report(&mut failed, "split audit", split_audit());
    report(
        &mut failed,
        "experiment determinism",
        experiment_determinism(dir.path()),
    );
    if failed.is_empty() {
        println!("all 9 criteria passed\n");
    } else {
        println!("failed criteria: {failed:?}\n");
        std::process::exit(1);
    }
}
