use dsl_core::data::{Dataset, Item, Rng, Split, Splits};
use dsl_core::duality::LambdaRule;
use dsl_core::marginals::EmpiricalCategorical;
use dsl_core::models::TabularSoftmaxModel;
use dsl_core::optim::OptimizerKind;
use dsl_core::tasks::{gen_tabular_joint, kl_to_truth, sample_tabular, Direction, TabularJoint};
use dsl_core::trainer::{dsl_train, TrainConfig};

fn splits_for(joint: &TabularJoint, n: (usize, usize, usize), seed: u64) -> Splits {
    let mut rng = Rng::new(seed).derive(0xda7a);
    let train = sample_tabular(joint, n.0, &mut rng).unwrap();
    let valid = sample_tabular(joint, n.1, &mut rng).unwrap();
    let test = sample_tabular(joint, n.2, &mut rng).unwrap();
    Splits {
        train: Dataset::new(train, Split::Train),
        valid: Dataset::new(valid, Split::Valid),
        test: Dataset::new(test, Split::Test),
    }
}

fn marginals(joint: &TabularJoint, splits: &Splits, k: f64) -> (EmpiricalCategorical, EmpiricalCategorical) {
    let xs: Vec<Item> = splits.train.pairs.iter().map(|p| p.x.clone()).collect();
    let ys: Vec<Item> = splits.train.pairs.iter().map(|p| p.y.clone()).collect();
    (
        EmpiricalCategorical::fit(&xs, joint.input_alphabet(), k).unwrap(),
        EmpiricalCategorical::fit(&ys, joint.output_alphabet(), k).unwrap(),
    )
}

fn run_arm(
    joint: &TabularJoint,
    splits: &Splits,
    mx: &EmpiricalCategorical,
    my: &EmpiricalCategorical,
    cfg: &TrainConfig,
) -> (f64, f64, f64) {
    let primal = TabularSoftmaxModel::new(joint.input_alphabet(), joint.output_alphabet());
    let dual = TabularSoftmaxModel::new(joint.output_alphabet(), joint.input_alphabet());
    let (p, d, rec) = dsl_train(cfg, primal, dual, mx, my, splits).unwrap();
    let kl_xy = kl_to_truth(&p, joint, Direction::XtoY).unwrap();
    let kl_yx = kl_to_truth(&d, joint, Direction::YtoX).unwrap();
    let test_duality = rec.final_metrics["duality_mean"];
    ((kl_xy + kl_yx) / 2.0, test_duality, rec.epochs_run as f64)
}

fn criterion6() {
    println!("--- abundant 2x2 (criterion 6 shape)");
    for joint_seed in 0u64..6 {
        let mut rng = Rng::new(joint_seed);
        let joint = gen_tabular_joint(2, 2, 1.0, &mut rng).unwrap();
        let splits = splits_for(&joint, (5000, 500, 500), 100 + joint_seed);
        let (mx, my) = marginals(&joint, &splits, 0.5);
        let base_cfg = TrainConfig {
            batch_size: 5000,
            max_epochs: 600,
            eval_every: 50,
            stop_patience: 1000,
            plateau_patience: 1000,
            select_best: false,
            opt_xy: OptimizerKind::Sgd,
            opt_yx: OptimizerKind::Sgd,
            lr_xy: 2.0,
            lr_yx: 2.0,
            clip_xy: 1e9,
            clip_yx: 1e9,
            lambda: LambdaRule::constant(0.0, 0.0),
            seed: joint_seed,
            ..TrainConfig::default()
        };
        let dsl_cfg = TrainConfig { lambda: LambdaRule::constant(0.01, 0.01), ..base_cfg.clone() };
        let (kl_b, _, _) = run_arm(&joint, &splits, &mx, &my, &base_cfg);
        let (kl_d, _, _) = run_arm(&joint, &splits, &mx, &my, &dsl_cfg);
        println!("seed {joint_seed}: baseline kl {kl_b:.6} dsl kl {kl_d:.6}");
    }
}

fn t1_experiment(label: &str, make_cfg: &dyn Fn(u64, LambdaRule) -> TrainConfig, k: f64) {
    println!("--- T1 low-data 8x8 n=50 ({label}, k={k})");
    let mut dual_wins = 0;
    let mut kl_wins = 0;
    for seed in 0u64..10 {
        let mut jrng = Rng::new(seed).derive(0x7461626c);
        let joint = gen_tabular_joint(8, 8, 0.5, &mut jrng).unwrap();
        let splits = splits_for(&joint, (50, 50, 1000), seed);
        let (mx, my) = marginals(&joint, &splits, k);
        let (kl_b, dual_b, ep_b) = run_arm(&joint, &splits, &mx, &my, &make_cfg(seed, LambdaRule::constant(0.0, 0.0)));
        let (kl_d, dual_d, ep_d) = run_arm(&joint, &splits, &mx, &my, &make_cfg(seed, LambdaRule::constant(0.01, 0.01)));
        let dw = dual_d <= dual_b;
        let kw = kl_d <= kl_b;
        dual_wins += dw as u32;
        kl_wins += kw as u32;
        println!(
            "seed {seed}: kl base {kl_b:.4} dsl {kl_d:.4} ({}) | duality base {dual_b:.4} dsl {dual_d:.4} ({}) | epochs {ep_b}/{ep_d}",
            if kw { "W" } else { "-" },
            if dw { "W" } else { "-" }
        );
    }
    println!("kl wins {kl_wins}/10, duality wins {dual_wins}/10");
}


fn warm_experiment(label: &str, k: f64, dsl_epochs: usize) {
    println!("--- T1 warm-start protocol ({label}, k={k}, dsl_epochs={dsl_epochs})");
    let mut dual_wins = 0;
    let mut kl_wins = 0;
    for seed in 0u64..10 {
        let mut jrng = Rng::new(seed).derive(0x7461626c);
        let joint = gen_tabular_joint(8, 8, 0.5, &mut jrng).unwrap();
        let splits = splits_for(&joint, (50, 50, 1000), seed);
        let (mx, my) = marginals(&joint, &splits, k);
        let base_cfg = TrainConfig {
            batch_size: 16,
            max_epochs: 300,
            eval_every: 1,
            stop_patience: 10,
            plateau_patience: 5,
            select_best: true,
            opt_xy: OptimizerKind::Sgd,
            opt_yx: OptimizerKind::Sgd,
            lr_xy: 0.2,
            lr_yx: 0.2,
            clip_xy: 1.0,
            clip_yx: 1.0,
            lr_floor: 1e-5,
            lambda: LambdaRule::constant(0.0, 0.0),
            seed,
            ..TrainConfig::default()
        };
        let primal = TabularSoftmaxModel::new(joint.input_alphabet(), joint.output_alphabet());
        let dual = TabularSoftmaxModel::new(joint.output_alphabet(), joint.input_alphabet());
        let (bp, bd, brec) = dsl_train(&base_cfg, primal, dual, &mx, &my, &splits).unwrap();
        let kl_b = (kl_to_truth(&bp, &joint, Direction::XtoY).unwrap()
            + kl_to_truth(&bd, &joint, Direction::YtoX).unwrap()) / 2.0;
        let dual_b = brec.final_metrics["duality_mean"];

        let dsl_cfg = TrainConfig {
            lambda: LambdaRule::constant(0.01, 0.01),
            max_epochs: dsl_epochs,
            seed: seed + 1000,
            ..base_cfg.clone()
        };
        let (dp, dd, drec) = dsl_train(&dsl_cfg, bp.clone(), bd.clone(), &mx, &my, &splits).unwrap();
        let kl_d = (kl_to_truth(&dp, &joint, Direction::XtoY).unwrap()
            + kl_to_truth(&dd, &joint, Direction::YtoX).unwrap()) / 2.0;
        let dual_d = drec.final_metrics["duality_mean"];

        let dw = dual_d <= dual_b;
        let kw = kl_d <= kl_b;
        dual_wins += dw as u32;
        kl_wins += kw as u32;
        println!(
            "seed {seed}: kl base {kl_b:.4} dsl {kl_d:.4} ({}) | duality base {dual_b:.4} dsl {dual_d:.4} ({}) | epochs {}/{}",
            if kw { "W" } else { "-" },
            if dw { "W" } else { "-" },
            brec.epochs_run, drec.epochs_run
        );
    }
    println!("kl wins {kl_wins}/10, duality wins {dual_wins}/10");
}


fn cipher_experiment(h: usize, d: usize, lr: f64, batch: usize, max_epochs: usize) {
    use dsl_core::models::{ConditionalModel, RecurrentTransducerModel};
    use dsl_core::tasks::CipherTask;
    use dsl_core::trainer::supervised_train;
    let t0 = std::time::Instant::now();
    let mut rng = Rng::new(42).derive(0x63697068);
    let task = CipherTask::random(8, 0.1, (5, 10), &mut rng).unwrap();
    let mut drng = Rng::new(7).derive(0xda7a);
    let train = task.sample(2000, &mut drng).unwrap();
    let valid = task.sample(200, &mut drng).unwrap();
    let test = task.sample(500, &mut drng).unwrap();
    let splits = Splits {
        train: Dataset::new(train, Split::Train),
        valid: Dataset::new(valid, Split::Valid),
        test: Dataset::new(test, Split::Test),
    };
    let mut irng = Rng::new(3).derive(0x696e6974);
    let model = RecurrentTransducerModel::init(
        task.alphabet(), task.alphabet(), d, h, 0.1, &mut irng);
    let cfg = TrainConfig {
        batch_size: batch,
        max_epochs,
        eval_every: 2,
        stop_patience: 8,
        plateau_patience: 3,
        select_best: true,
        opt_xy: OptimizerKind::Adam,
        lr_xy: lr,
        clip_xy: 1.0,
        lr_floor: 1e-5,
        seed: 11,
        ..TrainConfig::default()
    };
    let (trained, rec) = supervised_train(&cfg, model, &splits, Direction::XtoY).unwrap();
    // token accuracy on test via greedy decode
    let mut matched = 0usize;
    let mut total = 0usize;
    for p in &splits.test.pairs {
        let out = trained.decode(&p.x, 1).unwrap();
        matched += out.tokens().iter().zip(p.y.tokens()).filter(|(a, b)| a == b).count();
        total += out.len().max(p.y.len());
    }
    let acc = matched as f64 / total as f64;
    println!(
        "cipher h={h} d={d} lr={lr} batch={batch}: acc {acc:.4} (target {:.4}) epochs {} [{:.1}s]",
        0.95 * task.bayes_accuracy(), rec.epochs_run, t0.elapsed().as_secs_f64()
    );
}

fn main() {
    let which = std::env::args().nth(1).unwrap_or_else(|| "all".into());
    if which == "c6" || which == "all" {
        criterion6();
    }
    if which == "t1" || which == "all" {
        let long_sgd = |seed: u64, lambda: LambdaRule| TrainConfig {
            batch_size: 16,
            max_epochs: 1000,
            eval_every: 5,
            stop_patience: 100000,
            plateau_patience: 100000,
            select_best: false,
            opt_xy: OptimizerKind::Sgd,
            opt_yx: OptimizerKind::Sgd,
            lr_xy: 0.2,
            lr_yx: 0.2,
            clip_xy: 1.0,
            clip_yx: 1.0,
            lr_floor: 1e-5,
            lambda,
            seed,
            ..TrainConfig::default()
        };
        t1_experiment("long sgd final-params k=0.1", &long_sgd, 0.1);
        t1_experiment("long sgd final-params k=0.5", &long_sgd, 0.5);
        let long_best = |seed: u64, lambda: LambdaRule| TrainConfig {
            select_best: true,
            ..long_sgd(seed, lambda)
        };
        t1_experiment("long sgd best-checkpoint k=0.1", &long_best, 0.1);
    }
    if which == "warm" || which == "all" {
        warm_experiment("sgd", 0.5, 300);
        warm_experiment("sgd", 1.0, 300);
    }
    if which == "cipher" {
        cipher_experiment(48, 12, 0.005, 16, 100);
        cipher_experiment(48, 12, 0.01, 16, 100);
        cipher_experiment(32, 12, 0.01, 16, 100);
    }
}
