//! End-to-end checks of the deployment loop, the benchmark harness and the CLI.

use std::path::PathBuf;
use std::sync::OnceLock;

use retrial::bench::{run_matched, run_matched_with, BenchConfig, BenchContext, Method};
use retrial::demogen::{generate_demos, write_dataset, Dataset};
use retrial::deploy::{interval_period, run_episode, DeployConfig, EpisodeResult, TriggerMode};
use retrial::graspworld::{ScenarioConfig, Variant};
use retrial::monitor::{MonitorConfig, TRACE_HEADER};
use retrial::policy::{build_policy, PolicyParams, RetrievalPolicy};
use retrial::valuefn::{train, Backend, TrainConfig, ValueModel};
use retrial::SeedStream;

struct Fixture {
    dir: tempfile::TempDir,
    dataset: Dataset,
    policy: RetrievalPolicy,
    model: ValueModel<f64>,
}

impl Fixture {
    fn demos_path(&self) -> PathBuf {
        self.dir.path().join("demos.jsonl")
    }
    fn model_path(&self) -> PathBuf {
        self.dir.path().join("value.json")
    }
}

fn fixture() -> &'static Fixture {
    static F: OnceLock<Fixture> = OnceLock::new();
    F.get_or_init(|| {
        let dir = tempfile::tempdir().unwrap();
        let dataset = generate_demos(&ScenarioConfig::default(), 120, SeedStream::new(0, 0)).unwrap();
        let model = train::<f64>(
            &dataset,
            Backend::Categorical,
            &TrainConfig {
                steps: 3000,
                ..Default::default()
            },
        )
        .unwrap();
        let policy = build_policy(&dataset, PolicyParams::default()).unwrap();
        let f = Fixture {
            dir,
            dataset,
            policy,
            model,
        };
        write_dataset(&f.dataset, f.demos_path()).unwrap();
        f.model.save(f.model_path()).unwrap();
        f
    })
}

fn monitored() -> DeployConfig {
    DeployConfig {
        monitor: MonitorConfig::new(Backend::Categorical, fixture().dataset.meta.mean_length),
        ..Default::default()
    }
}

fn episode(variant: Variant, cfg: &DeployConfig, trial: u64) -> EpisodeResult {
    let f = fixture();
    run_episode(
        &ScenarioConfig::new(variant),
        &f.policy,
        &f.model,
        cfg,
        SeedStream::new(0, trial),
    )
    .unwrap()
}

fn small_bench() -> BenchConfig {
    let f = fixture();
    BenchConfig {
        seeds: vec![0, 1],
        trials_per_seed: 5,
        dataset: f.demos_path(),
        value_models: vec![f.model_path(), f.model_path()],
        ..Default::default()
    }
}

#[test]
fn base_policy_never_recovers() {
    let cfg = DeployConfig {
        trigger: TriggerMode::Off,
        skew_enabled: false,
        ..monitored()
    };
    for trial in 0..10 {
        let r = episode(Variant::Blocked, &cfg, trial);
        assert_eq!(r.recoveries, 0);
        assert!(r.avoid_points.is_empty() && r.trace.is_empty());
    }
}

#[test]
fn monitored_episodes_respect_their_invariants() {
    let cfg = monitored();
    for variant in [Variant::Blocked, Variant::AdversarialSlip] {
        for trial in 0..15 {
            let r = episode(variant, &cfg, trial);
            assert!(r.steps <= cfg.horizon);
            assert!(r.recoveries <= cfg.max_recoveries);
            assert_eq!(r.recoveries, r.recovery_steps.len());
            assert_eq!(r.avoid_points.len(), r.recoveries);
            assert!(r.recovery_attempt_lengths.iter().sum::<usize>() <= r.steps);
            assert!(r.recovery_steps.windows(2).all(|w| w[0] < w[1]));
            if r.success {
                assert!(r.steps < cfg.horizon || r.recovery_steps.last() != Some(&r.steps));
            }
        }
    }
}

#[test]
fn zero_recovery_cap_degrades_gracefully() {
    let cfg = DeployConfig {
        max_recoveries: 0,
        ..monitored()
    };
    for trial in 0..10 {
        let r = episode(Variant::Blocked, &cfg, trial);
        assert_eq!(r.recoveries, 0);
        assert!(r.avoid_points.is_empty());
        assert!(r.success || r.steps == cfg.horizon);
    }
}

#[test]
fn interval_recovery_fires_on_schedule() {
    let period = interval_period(fixture().dataset.meta.mean_length, 0.25).unwrap();
    let cfg = DeployConfig {
        trigger: TriggerMode::Interval { period },
        skew_enabled: false,
        ..monitored()
    };
    for trial in 0..10 {
        let r = episode(Variant::Blocked, &cfg, trial);
        assert!(r.recovery_attempt_lengths.iter().all(|&l| l == period));
        assert!(r.avoid_points.is_empty());
    }
}

#[test]
fn episodes_are_deterministic() {
    let cfg = monitored();
    for trial in [0, 7] {
        assert_eq!(
            episode(Variant::AdversarialSlip, &cfg, trial),
            episode(Variant::AdversarialSlip, &cfg, trial)
        );
    }
}

#[test]
fn backend_mismatch_is_a_config_error() {
    let f = fixture();
    let scalar = train::<f64>(
        &f.dataset,
        Backend::Scalar,
        &TrainConfig {
            steps: 50,
            ..Default::default()
        },
    )
    .unwrap();
    let err = run_episode(
        &ScenarioConfig::default(),
        &f.policy,
        &scalar,
        &monitored(),
        SeedStream::new(0, 0),
    );
    assert!(matches!(err, Err(retrial::Error::Config(_))));
}

#[test]
fn matched_pairs_share_their_scenario() {
    let cfg = small_bench();
    let recs = run_matched(&cfg).unwrap();
    assert_eq!(recs.len(), 4 * 2 * 2 * 5);
    for group in recs.chunks(4) {
        let first = &group[0];
        assert_eq!(group.iter().map(|r| r.method).collect::<Vec<_>>(), Method::ALL.to_vec());
        for r in group {
            assert_eq!((r.variant, r.seed, r.trial), (first.variant, first.seed, first.trial));
            assert_eq!(r.result.hidden, first.result.hidden);
            assert_eq!(r.result.initial_obs, first.result.initial_obs);
        }
    }
    assert!(recs
        .iter()
        .filter(|r| r.method == Method::BaseNoRecovery)
        .all(|r| r.result.recoveries == 0));
}

#[test]
fn benchmark_is_reproducible_across_thread_counts() {
    let cfg = small_bench();
    let ctx = BenchContext::load(&cfg).unwrap();
    let a = run_matched_with(&cfg, &ctx).unwrap();
    let b = run_matched_with(
        &BenchConfig {
            threads: Some(1),
            ..cfg.clone()
        },
        &ctx,
    )
    .unwrap();
    assert_eq!(a, b);
}

fn cli(args: &[&str]) -> i32 {
    retrial::cli::run(std::iter::once("retrial").chain(args.iter().copied()))
}

#[test]
fn cli_exit_codes() {
    assert_eq!(cli(&["eval"]), 1);
    assert_eq!(cli(&["gen-demos", "--out", "x.jsonl", "--bogus"]), 1);
    assert_eq!(cli(&["gen-demos", "--variant", "sideways", "--out", "x.jsonl"]), 1);
    assert_eq!(cli(&["--help"]), 0);
    assert_eq!(
        cli(&["train-value", "--demos", "/nonexistent/demos.jsonl", "--out", "m.json"]),
        2
    );
}

#[test]
fn cli_pipeline() {
    let dir = tempfile::tempdir().unwrap();
    let p = |name: &str| dir.path().join(name).to_string_lossy().into_owned();

    assert_eq!(
        cli(&[
            "gen-demos",
            "--variant",
            "train",
            "--count",
            "5",
            "--seed",
            "1",
            "--out",
            &p("d.jsonl")
        ]),
        0
    );
    let ds = retrial::demogen::read_dataset(p("d.jsonl")).unwrap();
    assert_eq!(ds.len(), 5);

    let f = fixture();
    let config = serde_json::json!({
        "variants": ["blocked"],
        "methods": ["base_no_recovery", "ours_full"],
        "seeds": [3],
        "trials_per_seed": 2,
        "dataset": f.demos_path(),
        "value_models": [f.model_path()],
    });
    std::fs::write(p("bench.json"), config.to_string()).unwrap();
    assert_eq!(cli(&["eval", "--config", &p("bench.json"), "--out", &p("out")]), 0);
    for name in [
        "summary.json",
        "trials.jsonl",
        "summary.csv",
        "success.svg",
        "recovery_histogram.svg",
    ] {
        assert!(dir.path().join("out").join(name).is_file(), "{name}");
    }
    assert_eq!(
        cli(&["report", "--records", &p("out/trials.jsonl"), "--out", &p("again")]),
        0
    );
    assert_eq!(
        std::fs::read(p("out/summary.json")).unwrap(),
        std::fs::read(p("again/summary.json")).unwrap()
    );

    let demos = f.demos_path().to_string_lossy().into_owned();
    let model = f.model_path().to_string_lossy().into_owned();
    let mut rows = 0;
    for seed in 0..5 {
        let seed = seed.to_string();
        assert_eq!(
            cli(&[
                "trace",
                "--demos",
                &demos,
                "--value",
                &model,
                "--scenario-seed",
                &seed,
                "--out",
                &p("t.csv")
            ]),
            0
        );
        let trace = std::fs::read_to_string(p("t.csv")).unwrap();
        assert_eq!(trace.lines().next(), Some(TRACE_HEADER));
        rows += trace.lines().count() - 1;
    }
    assert!(rows > 0);
}
