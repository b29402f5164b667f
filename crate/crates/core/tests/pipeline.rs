//! End-to-end harness runs on small synthetic tasks.

use growreg::harness::{
    compare_schedules, finetune, load_dataset, pretrain, pretrain_baseline, run_method, DatasetSpec, ExperimentConfig,
    Method, NetSpec, SubsetSchedule, TrainSchedule,
};
use growreg::netcore::{Checkpoint, Shape3};

fn blobs() -> DatasetSpec {
    DatasetSpec::Blobs { n_train: 400, n_val: 200, classes: 2, dim: 2, spread: 1.0, seed: 3 }
}

fn toy(method: Method, ratio: f64) -> ExperimentConfig {
    ExperimentConfig {
        name: "toy".into(),
        network: NetSpec::mlp(&[64, 32]),
        dataset: DatasetSpec::Spirals { n_train: 600, n_val: 300, classes: 2, noise: 0.05, seed: 2 },
        plan: format!("[0, {ratio}, 0]"),
        pretrain: TrainSchedule::multistep(40, 32),
        finetune: TrainSchedule::multistep(10, 32),
        ..ExperimentConfig::desk(method, ratio)
    }
}

#[test]
fn two_layer_mlp_separates_blobs() {
    let data = load_dataset(&blobs()).unwrap();
    let init = NetSpec::mlp(&[16]).build(Shape3::flat(2), 2, 1).unwrap();
    // 400 rows at batch 10: 40 steps per epoch, 2000 steps in total
    let mut sched = TrainSchedule::multistep(50, 10);
    sched.lr = "0:1e-2".parse().unwrap();
    let net = pretrain(&init, &data, &sched, 1).unwrap();
    let acc = net.accuracy(&data.val.x, &data.val.y).unwrap();
    assert!(acc > 0.95, "val acc {acc}");
}

#[test]
fn pretraining_is_bytewise_reproducible() {
    let mut cfg = toy(Method::Greg1, 0.5);
    cfg.dataset = blobs();
    cfg.pretrain = TrainSchedule::multistep(3, 32);
    let data = load_dataset(&cfg.dataset).unwrap();
    let a = Checkpoint::network_only(pretrain_baseline(&cfg, &data).unwrap()).to_bytes();
    let b = Checkpoint::network_only(pretrain_baseline(&cfg, &data).unwrap()).to_bytes();
    assert_eq!(a, b);
    cfg.seed += 1;
    let c = Checkpoint::network_only(pretrain_baseline(&cfg, &data).unwrap()).to_bytes();
    assert_ne!(a, c);
}

#[test]
fn zero_ratio_makes_every_method_plain_finetuning() {
    let mut cfg = toy(Method::Greg1, 0.0);
    cfg.pretrain = TrainSchedule::multistep(8, 32);
    cfg.finetune = TrainSchedule::multistep(2, 32);
    let data = load_dataset(&cfg.dataset).unwrap();
    let base = pretrain_baseline(&cfg, &data).unwrap();
    let reference = finetune(&base, &data, &cfg.finetune, cfg.seed).unwrap();
    let ref_acc = reference.accuracy(&data.val.x, &data.val.y).unwrap();
    for method in [
        Method::Greg1,
        Method::Greg2,
        Method::OneshotL1,
        Method::RandomSubset { mask_seed: 1, schedule: SubsetSchedule::Greg },
    ] {
        cfg.method = method;
        let out = run_method(&cfg, &data, &base).unwrap();
        assert_eq!(out.record.summary.pruned_groups, 0, "{method:?}");
        assert_eq!(out.finetuned, reference, "{method:?}");
        assert_eq!(out.record.summary.post_finetune_acc, ref_acc);
    }
}

#[test]
fn oneshot_half_prune_recovers_after_finetuning() {
    let cfg = toy(Method::OneshotL1, 0.5);
    let data = load_dataset(&cfg.dataset).unwrap();
    let base = pretrain_baseline(&cfg, &data).unwrap();
    let s = run_method(&cfg, &data, &base).unwrap().record.summary;
    assert!(s.post_finetune_acc >= s.pre_prune_acc - 0.01, "{s:?}");
}

#[test]
fn growing_penalty_prune_is_nearly_lossless_at_ninety_percent() {
    let cfg = ExperimentConfig::desk(Method::Greg1, 0.9);
    let data = load_dataset(&cfg.dataset).unwrap();
    let base = pretrain_baseline(&cfg, &data).unwrap();
    let s = run_method(&cfg, &data, &base).unwrap().record.summary;
    let drop = (s.pre_prune_acc - s.post_prune_acc) * 100.0;
    assert!(drop < 0.5, "prune drop {drop} points: {s:?}");
}

#[test]
fn schedule_gap_shrinks_at_low_ratio() {
    let gap = |ratio: f64| {
        let t = compare_schedules(&ExperimentConfig::desk(Method::Greg1, ratio), 3, 1).unwrap();
        let ((a, _), (b, _)) = (t.mean_std(0), t.mean_std(1));
        let base = t.runs.iter().map(|r| r[0].baseline_acc).sum::<f64>() / 3.0;
        (a - b, a, b, base)
    };
    let (low, a, b, base) = gap(0.5);
    let (high, ..) = gap(0.9);
    assert!(low.abs() < high, "gap {low} at r = 0.5 vs {high} at r = 0.9");
    assert!(a > base - 0.05 && b > base - 0.05, "baseline {base}, greg1 {a}, oneshot {b}");
}
