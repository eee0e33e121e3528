use std::fs::File;
use std::io::BufWriter;
use std::path::{Path, PathBuf};

use super::config::{ExperimentConfig, GeneratorSpec};
use super::report::{self, write_json, Pair, Report, RunResult};
use crate::data::{
    filter_aligned_majority, gen_planted_shortcut, gen_prefix_shortcut, inject_label_noise, Dataset,
    PrefixConfig,
};
use crate::error::{Error, Result};
use crate::eval::evaluate;
use crate::grouping::{
    infer_min_maj, minority_recall, train_auxiliary, AssignmentSource, AuxiliaryVariant, GroupAssignment,
};
use crate::model::{Model, ModelConfig};
use crate::probing::{mdl_probe, save_probe_result, shortcut_probe_task};
use crate::seed::derive;
use crate::training::{
    train_erm, train_interpoll, train_lisa, train_mixup, write_metrics_csv, ClassConstraint, Direction,
    FinalMetrics, InterpolationPolicy, LambdaDist, Method, MetricsRecord, TrainConfig,
};

pub const MAIN: &str = "table1_main";
pub const RATIO: &str = "fig3_ratio";
pub const VARIANTS: &str = "fig4_variants";
pub const DYNAMICS: &str = "fig5_dynamics";
pub const LAYERS: &str = "fig6_layers";
pub const AUXILIARY: &str = "table4_auxiliary";
pub const PROBE: &str = "table5_probe";
pub const NOISE: &str = "table6_noise";
pub const RECALL: &str = "table8_recall";
pub const FILTERED: &str = "table10_filtered";
pub const PREFIX: &str = "table11_prefix";

const PAIRS_FILE: &str = "pairs.json";

/// Training split plus held-out splits; the prefix generator has no
/// in-distribution test split.
struct Splits {
    train: Dataset,
    id_test: Option<Dataset>,
    ood_test: Dataset,
}

fn held_out(model: &Model, s: &Splits) -> Result<FinalMetrics> {
    let ood = evaluate(model, &s.ood_test)?;
    Ok(FinalMetrics {
        id_acc: s.id_test.as_ref().map(|d| evaluate(model, d)).transpose()?.map(|a| a.overall),
        ood_acc: Some(ood.overall),
        minority_acc: ood.minority,
        majority_acc: ood.majority,
    })
}

fn final_values(r: RunResult, f: &FinalMetrics) -> RunResult {
    r.with("id_acc", f.id_acc)
        .with("ood_acc", f.ood_acc)
        .with("minority_acc", f.minority_acc)
        .with("majority_acc", f.majority_acc)
}

/// Lowercase, path-safe arm name for a ratio distribution.
pub fn lambda_slug(d: &LambdaDist) -> String {
    match *d {
        LambdaDist::Uniform { low, high } => format!("uniform_{low}_{high}"),
        LambdaDist::Beta { alpha, beta } => format!("beta_{alpha}_{beta}"),
        LambdaDist::Fixed { value } => format!("fixed_{value}"),
    }
}

struct Runner<'a> {
    cfg: &'a ExperimentConfig,
    raw: PathBuf,
    runs: Vec<RunResult>,
}

impl Runner<'_> {
    fn run_dir(&self, table: &str, arm: &str) -> PathBuf {
        self.raw.join(table).join(arm)
    }

    fn record(&mut self, r: RunResult) -> Result<()> {
        let path = self.run_dir(&r.table, &r.arm).join(format!("seed-{}.json", r.seed));
        report::save_run_result(&r, &path)
            .map_err(|e| e.context(format!("{}/{} seed {}", r.table, r.arm, r.seed)))?;
        self.runs.push(r);
        Ok(())
    }

    fn save_metrics(&self, table: &str, arm: &str, seed: u64, m: &MetricsRecord) -> Result<()> {
        let dir = self.run_dir(table, arm);
        std::fs::create_dir_all(&dir).map_err(|e| Error::io(&dir, e))?;
        let path = dir.join(format!("seed-{seed}.csv"));
        let file = File::create(&path).map_err(|e| Error::io(&path, e))?;
        write_metrics_csv(m, BufWriter::new(file))
    }

    /// Trains one arm, scores it on the held-out splits, and files the record.
    #[allow(clippy::too_many_arguments)]
    fn train_arm(
        &mut self,
        table: &str,
        arm: &str,
        seed: u64,
        learner: &ModelConfig,
        data: &Splits,
        assignment: Option<&GroupAssignment>,
        train: &TrainConfig,
    ) -> Result<(Model, RunResult)> {
        let ctx = format!("{table}/{arm} seed {seed}");
        let init = Model::init(learner.clone()).map_err(|e| e.context(&ctx))?;
        let d = &data.train;
        let trained = match train.method {
            Method::Erm => train_erm(init, d, train),
            Method::Interpoll => {
                let a = assignment.expect("interpoll arms carry an assignment");
                train_interpoll(init, d, a, train)
            }
            Method::Mixup => train_mixup(init, d, train),
            Method::Lisa => train_lisa(init, d, train),
        };
        let (model, mut metrics) = trained.map_err(|e| e.context(&ctx))?;
        let fin = held_out(&model, data).map_err(|e| e.context(&ctx))?;
        log::info!("{ctx}: ood {:?}, minority {:?}", fin.ood_acc, fin.minority_acc);
        metrics.final_metrics = Some(fin);
        self.save_metrics(table, arm, seed, &metrics).map_err(|e| e.context(&ctx))?;
        let r = final_values(RunResult::new(table, arm, seed), &fin);
        self.record(r.clone())?;
        if train.record_dynamics {
            self.record(dynamics_values(arm, seed, &metrics))?;
        }
        Ok((model, r))
    }
}

fn dynamics_values(arm: &str, seed: u64, m: &MetricsRecord) -> RunResult {
    let mut r = RunResult::new(DYNAMICS, arm, seed);
    for e in &m.epochs {
        r = r
            .with(&format!("train_acc_e{:03}", e.epoch), e.train_acc)
            .with(&format!("train_minority_e{:03}", e.epoch), e.train_acc_minority)
            .with(&format!("train_majority_e{:03}", e.epoch), e.train_acc_majority);
    }
    r
}

fn generate(spec: &GeneratorSpec, seed: u64) -> Result<Splits> {
    Ok(match spec {
        GeneratorSpec::Planted(c) => {
            let s = gen_planted_shortcut(&crate::data::PlantedConfig { seed, ..c.clone() })?;
            Splits {
                train: s.train,
                id_test: Some(s.id_test),
                ood_test: s.ood_test,
            }
        }
        GeneratorSpec::Prefix(c) => prefix_splits(c, seed)?,
    })
}

fn prefix_splits(c: &PrefixConfig, seed: u64) -> Result<Splits> {
    let s = gen_prefix_shortcut(&PrefixConfig { seed, ..c.clone() })?;
    Ok(Splits {
        train: s.train,
        id_test: None,
        ood_test: s.test,
    })
}

fn infer_groups(
    d: &Dataset,
    variant: &AuxiliaryVariant,
    learner: &ModelConfig,
    schedule: &TrainConfig,
    seed: u64,
) -> Result<GroupAssignment> {
    let aux = train_auxiliary(d, variant, learner, schedule, seed)?;
    infer_min_maj(
        &aux.model,
        d,
        AssignmentSource {
            variant: variant.descriptor(),
            seed,
        },
    )
}

/// One method trained on one seed's data, exactly as the full experiment would.
#[derive(Debug, Clone)]
pub struct SingleRun {
    pub model: Model,
    pub metrics: MetricsRecord,
    /// Inferred groups, present for InterpoLL.
    pub assignment: Option<GroupAssignment>,
}

pub fn train_method(cfg: &ExperimentConfig, method: Method, seed: u64) -> Result<SingleRun> {
    cfg.validate()?;
    let spec = cfg
        .method(method)
        .ok_or_else(|| Error::Config(format!("method {} is not configured", method.as_str())))?;
    let label = seed.to_string();
    let stage = |name: &str| derive(cfg.master_seed, &[name, &label]);
    let ctx = format!("{}/{} seed {seed}", MAIN, method.as_str());
    let data = generate(&cfg.generator, stage("data")).map_err(|e| e.context(&ctx))?;
    let learner = cfg.learner_config(stage("init"));
    let tc = cfg.train_config(spec, stage("train"));
    let init = Model::init(learner.clone()).map_err(|e| e.context(&ctx))?;
    let (assignment, trained) = match method {
        Method::Interpoll => {
            let a = infer_groups(&data.train, &cfg.auxiliary, &learner, &cfg.schedule(stage("train")), stage("auxiliary"))
                .map_err(|e| e.context(&ctx))?;
            let t = train_interpoll(init, &data.train, &a, &tc);
            (Some(a), t)
        }
        Method::Erm => (None, train_erm(init, &data.train, &tc)),
        Method::Mixup => (None, train_mixup(init, &data.train, &tc)),
        Method::Lisa => (None, train_lisa(init, &data.train, &tc)),
    };
    let (model, mut metrics) = trained.map_err(|e| e.context(&ctx))?;
    metrics.final_metrics = Some(held_out(&model, &data).map_err(|e| e.context(&ctx))?);
    Ok(SingleRun {
        model,
        metrics,
        assignment,
    })
}

/// Runs every configured method and analysis for every seed, writing
/// per-run files under `output_dir/raw` and aggregate tables in `output_dir`.
///
/// Every random stream derives from `master_seed` and a stage label, so a run
/// is unaffected by which other methods or analyses are configured. Methods
/// sharing a seed see the same data, initialization and shuffle order.
pub fn run_experiment(cfg: &ExperimentConfig) -> Result<Report> {
    cfg.validate()?;
    let out = &cfg.output_dir;
    let raw = out.join("raw");
    std::fs::create_dir_all(&raw).map_err(|e| Error::io(&raw, e))?;
    let mut runner = Runner {
        cfg,
        raw,
        runs: Vec::new(),
    };
    let mut pairs = Vec::new();
    for &s in &cfg.seeds {
        run_seed(&mut runner, s, &mut pairs)?;
    }
    pairs.sort();
    pairs.dedup();
    write_json(&pairs, &runner.raw.join(PAIRS_FILE))?;
    let rep = report::report(&runner.runs, &pairs)?;
    report::write_tables(&rep, out)?;
    write_json(&rep, &out.join("report.json"))?;
    Ok(rep)
}

/// Rebuilds the report from the raw files of a finished experiment.
pub fn recompute_report(output_dir: &Path) -> Result<Report> {
    let raw = output_dir.join("raw");
    let runs = report::collect_run_results(&raw)?;
    let path = raw.join(PAIRS_FILE);
    let file = File::open(&path).map_err(|e| Error::io(&path, e))?;
    let pairs: Vec<Pair> = serde_json::from_reader(std::io::BufReader::new(file))
        .map_err(|e| Error::format("pairs", 0, e.to_string()))?;
    report::report(&runs, &pairs)
}

fn run_seed(runner: &mut Runner<'_>, s: u64, pairs: &mut Vec<Pair>) -> Result<()> {
    let cfg = runner.cfg;
    let label = s.to_string();
    let stage = |name: &str| derive(cfg.master_seed, &[name, &label]);
    let (data_seed, init_seed, train_seed, aux_seed) =
        (stage("data"), stage("init"), stage("train"), stage("auxiliary"));
    let a = &cfg.analyses;

    let data = generate(&cfg.generator, data_seed).map_err(|e| e.context(format!("data seed {s}")))?;
    let learner = cfg.learner_config(init_seed);
    let schedule = cfg.schedule(train_seed);
    let assignment = infer_groups(&data.train, &cfg.auxiliary, &learner, &schedule, aux_seed)
        .map_err(|e| e.context(format!("auxiliary seed {s}")))?;
    let main_aux = cfg.auxiliary.descriptor();

    let mut main = std::collections::BTreeMap::new();
    for m in &cfg.methods {
        let mut tc = cfg.train_config(m, train_seed);
        tc.record_dynamics = a.dynamics && matches!(m.method, Method::Erm | Method::Interpoll);
        let arm = m.method.as_str();
        let out = runner.train_arm(MAIN, arm, s, &learner, &data, Some(&assignment), &tc)?;
        main.insert(m.method, out);
    }
    for (l, r) in [
        (Method::Interpoll, Method::Erm),
        (Method::Mixup, Method::Erm),
        (Method::Lisa, Method::Erm),
        (Method::Lisa, Method::Mixup),
        (Method::Interpoll, Method::Lisa),
        (Method::Interpoll, Method::Mixup),
    ] {
        if main.contains_key(&l) && main.contains_key(&r) {
            pairs.push(Pair::new(MAIN, l.as_str(), r.as_str()));
        }
    }
    if a.dynamics {
        pairs.push(Pair::new(DYNAMICS, "interpoll", "erm"));
    }

    let ip_spec = cfg.method(Method::Interpoll);
    let ip_cfg = ip_spec.map(|m| cfg.train_config(m, train_seed));
    let ip_policy = ip_cfg.as_ref().and_then(|c| c.policy).unwrap_or(InterpolationPolicy::interpoll());
    let with_policy = |p: InterpolationPolicy| {
        TrainConfig {
            record_dynamics: false,
            ..ip_cfg.clone().expect("validated: interpoll configured")
        }
        .with_policy(p)
    };

    if !a.ratio.is_empty() {
        let reference = lambda_slug(&ip_policy.lambda);
        runner.record(main[&Method::Interpoll].1.relabel(RATIO, &reference))?;
        for d in &a.ratio {
            let arm = lambda_slug(d);
            if arm == reference {
                continue;
            }
            runner.train_arm(RATIO, &arm, s, &learner, &data, Some(&assignment), &with_policy(ip_policy.with_lambda(*d)))?;
            pairs.push(Pair::new(RATIO, &reference, &arm));
        }
    }

    if a.variants {
        runner.record(main[&Method::Interpoll].1.relabel(VARIANTS, "standard"))?;
        let variants = [
            ("inverse", InterpolationPolicy { direction: Direction::Inverse, ..ip_policy }),
            ("inter_class", InterpolationPolicy { class_constraint: ClassConstraint::Inter, ..ip_policy }),
            ("stop_gradient", InterpolationPolicy { stop_partner_gradient: true, ..ip_policy }),
        ];
        for (arm, p) in variants {
            runner.train_arm(VARIANTS, arm, s, &learner, &data, Some(&assignment), &with_policy(p))?;
            pairs.push(Pair::new(VARIANTS, arm, "standard"));
        }
    }

    if !a.layers.is_empty() {
        let depth = learner.depth();
        let reference = format!("layer_{}", ip_policy.layer.unwrap_or(depth));
        runner.record(main[&Method::Interpoll].1.relabel(LAYERS, &reference))?;
        for &l in &a.layers {
            let arm = format!("layer_{l}");
            if arm == reference {
                continue;
            }
            let p = InterpolationPolicy { layer: Some(l), ..ip_policy };
            runner.train_arm(LAYERS, &arm, s, &learner, &data, Some(&assignment), &with_policy(p))?;
            pairs.push(Pair::new(LAYERS, &arm, &reference));
        }
    }

    if a.recall {
        let recall = minority_recall(&assignment, &data.train)?;
        runner.record(
            RunResult::new(RECALL, &main_aux, s)
                .with("recall", Some(recall))
                .with("flagged_minority", Some(assignment.minority_count() as f64)),
        )?;
    }

    if !a.auxiliary.is_empty() {
        runner.record(main[&Method::Interpoll].1.relabel(AUXILIARY, &main_aux))?;
        for v in &a.auxiliary {
            let arm = v.descriptor();
            if arm == main_aux {
                continue;
            }
            let groups = infer_groups(&data.train, v, &learner, &schedule, aux_seed)
                .map_err(|e| e.context(format!("auxiliary {arm} seed {s}")))?;
            if a.recall {
                runner.record(
                    RunResult::new(RECALL, &arm, s)
                        .with("recall", Some(minority_recall(&groups, &data.train)?))
                        .with("flagged_minority", Some(groups.minority_count() as f64)),
                )?;
            }
            runner.train_arm(AUXILIARY, &arm, s, &learner, &data, Some(&groups), &with_policy(ip_policy))?;
            pairs.push(Pair::new(AUXILIARY, &arm, &main_aux));
        }
    }

    if let Some(fraction) = a.noise {
        let noisy_train = inject_label_noise(&data.train, fraction, stage("noise"))?;
        let noisy = Splits {
            train: noisy_train,
            id_test: data.id_test.clone(),
            ood_test: data.ood_test.clone(),
        };
        let groups = infer_groups(&noisy.train, &cfg.auxiliary, &learner, &schedule, aux_seed)
            .map_err(|e| e.context(format!("noisy auxiliary seed {s}")))?;
        for method in [Method::Erm, Method::Interpoll] {
            let name = method.as_str();
            runner.record(main[&method].1.relabel(NOISE, &format!("{name}_clean")))?;
            let spec = cfg.method(method).expect("validated");
            let tc = cfg.train_config(spec, train_seed);
            let arm = format!("{name}_noisy");
            runner.train_arm(NOISE, &arm, s, &learner, &noisy, Some(&groups), &tc)?;
            pairs.push(Pair::new(NOISE, &format!("{name}_clean"), &arm));
        }
    }

    if let Some(pa) = &a.prefix {
        for &p in &pa.p {
            let tag = format!("p{p}");
            let pdata = prefix_splits(
                &PrefixConfig { p, ..pa.generator.clone() },
                derive(cfg.master_seed, &["prefix", &tag, &label]),
            )
            .map_err(|e| e.context(format!("prefix {tag} seed {s}")))?;
            let plearner = ModelConfig {
                vocab_size: pa.generator.vocab_size(),
                num_classes: pa.generator.num_classes,
                ..learner.clone()
            };
            let groups = infer_groups(&pdata.train, &cfg.auxiliary, &plearner, &schedule, aux_seed)
                .map_err(|e| e.context(format!("prefix {tag} auxiliary seed {s}")))?;
            for method in [Method::Erm, Method::Interpoll] {
                let tc = cfg.train_config(cfg.method(method).expect("validated"), train_seed);
                let arm = format!("{}_{tag}", method.as_str());
                runner.train_arm(PREFIX, &arm, s, &plearner, &pdata, Some(&groups), &tc)?;
            }
            pairs.push(Pair::new(PREFIX, &format!("interpoll_{tag}"), &format!("erm_{tag}")));
        }
    }

    if a.probe {
        let probe_seed = stage("probe");
        let untrained = Model::init(learner.clone())?;
        let models = [
            ("erm", &main[&Method::Erm].0),
            ("interpoll", &main[&Method::Interpoll].0),
            ("untrained", &untrained),
        ];
        for (arm, model) in models {
            let ctx = format!("{PROBE}/{arm} seed {s}");
            let task = shortcut_probe_task(model, &data.ood_test, None).map_err(|e| e.context(&ctx))?;
            let res = mdl_probe(&task, probe_seed).map_err(|e| e.context(&ctx))?;
            save_probe_result(&res, &runner.run_dir(PROBE, arm).join(format!("probe-seed-{s}.json")))?;
            runner.record(
                RunResult::new(PROBE, arm, s)
                    .with("compression", Some(res.compression))
                    .with("online_bits", Some(res.online_bits))
                    .with("probe_accuracy", Some(res.probe_accuracy)),
            )?;
        }
        pairs.push(Pair::new(PROBE, "interpoll", "erm"));
        pairs.push(Pair::new(PROBE, "untrained", "erm"));
    }

    if a.filtered {
        let gap = |r: &RunResult| match (r.values.get("id_acc"), r.values.get("ood_acc")) {
            (Some(i), Some(o)) => Some(i - o),
            _ => None,
        };
        let full = main[&Method::Erm].1.relabel(FILTERED, "erm_full");
        let full_gap = gap(&full);
        runner.record(full.with("id_ood_gap", full_gap))?;
        let (kept, _) = filter_aligned_majority(&data.train)?;
        let fdata = Splits {
            train: kept,
            id_test: data.id_test.clone(),
            ood_test: data.ood_test.clone(),
        };
        let tc = cfg.train_config(cfg.method(Method::Erm).expect("validated"), train_seed);
        let (_, r) = runner.train_arm(FILTERED, "erm_filtered_tmp", s, &learner, &fdata, None, &tc)?;
        // Re-file with the gap column so both arms share one metric set.
        runner.runs.pop();
        let dir = runner.run_dir(FILTERED, "erm_filtered_tmp");
        std::fs::remove_dir_all(&dir).map_err(|e| Error::io(&dir, e))?;
        let filtered = r.relabel(FILTERED, "erm_filtered");
        let filtered_gap = gap(&filtered);
        runner.record(filtered.with("id_ood_gap", filtered_gap))?;
        pairs.push(Pair::new(FILTERED, "erm_filtered", "erm_full"));
    }
    Ok(())
}
