use std::collections::HashMap;
use std::fmt::Write as _;
use std::fs;
use std::io::{BufRead, BufReader};
use std::path::{Path, PathBuf};

use serde_json::json;

use er_transfer::blocking::{generate_candidates, BlockingConfig};
use er_transfer::cv::{select_lambda, CvConfig, ParamGrid, PreprocessSpec};
use er_transfer::eval::{confusion, pr_curve, precision_recall, try_precision_at_recall, ScoredExample};
use er_transfer::experiments::{run as run_experiment, Budget, ExperimentPlan, Family, Method};
use er_transfer::features::{featurize_pair, normalize_record, FeatureSpec, Preprocessor, RawRecord};
use er_transfer::fixture::{candidate_pool, generate_records, FixtureConfig};
use er_transfer::io::{
    read_candidates, read_features, read_labels, read_records, rows_to_dataset, write_candidates, write_features,
    write_labels, write_records, write_text, FeatureRow, PairKey, SourceRegistry,
};
use er_transfer::solver::{fit_indep, fit_pooled, fit_transfer, Dataset, SolverConfig, StepPolicy};
use er_transfer::synth::{even_allocation, uniform_allocation, SynthConfig, SynthWorld};
use er_transfer::{Error, Label, Result};

use crate::stored::StoredModel;
use crate::{
    BlockArgs, Cli, Command, CvArgs, CvOptions, EvalArgs, ExperimentArgs, FamilyArg, FeaturizeArgs, FitArgs,
    FixtureArgs, MethodArg, ScoreArgs, SpecKind, SynthArgs, TrainArgs,
};

fn io_err(path: &Path, e: std::io::Error) -> Error {
    Error::Io {
        path: path.to_path_buf(),
        source: e,
    }
}

pub fn run(cli: &Cli) -> Result<()> {
    let out = &cli.global.out_dir;
    fs::create_dir_all(out).map_err(|e| io_err(out, e))?;
    if !matches!(cli.command, Command::Experiment(_)) {
        let plan = json!({ "global": cli.global, "command": cli.command });
        let mut text = serde_json::to_string_pretty(&plan)?;
        text.push('\n');
        write_text(&out.join("plan.json"), &text)?;
    }
    let seed = cli.global.seed;
    match &cli.command {
        Command::Synth(a) => synth(a, seed, out),
        Command::Fixture(a) => fixture(a, seed, out),
        Command::Block(a) => block(a, out),
        Command::Featurize(a) => featurize(a, out),
        Command::Train(a) => train(a, seed, out),
        Command::Cv(a) => cv(a, seed, out),
        Command::Score(a) => score(a, out),
        Command::Eval(a) => eval(a, out),
        Command::Experiment(a) => experiment(a, seed, out),
    }
}

fn synth(a: &SynthArgs, seed: u64, out: &Path) -> Result<()> {
    let cfg = SynthConfig {
        n_sources: a.sources,
        n_entities: a.entities,
        dim: a.dim,
        noise_min: a.noise_min,
        noise_max: a.noise_max,
        heterogeneity: a.heterogeneity,
        pairs_per_source_pair: a.pairs_per_pair,
        match_fraction: a.match_fraction,
        seed,
    };
    let world = SynthWorld::new(&cfg)?;
    let mut sampler = world.sampler();
    let train = sampler.sample_allocation(&uniform_allocation(cfg.n_sources, cfg.pairs_per_source_pair))?;
    let labels = |refs: &[er_transfer::synth::PairRef]| -> Vec<(PairKey, Label)> {
        refs.iter().map(|r| (world.pair_key(r), r.label())).collect()
    };
    write_records(&out.join("records.jsonl"), &world.raw_records())?;
    write_labels(&out.join("labels.csv"), &labels(&train))?;
    if a.test_pairs > 0 {
        let test = sampler.sample_allocation(&even_allocation(cfg.n_sources, a.test_pairs))?;
        write_labels(&out.join("test_labels.csv"), &labels(&test))?;
    }
    let mut truth = serde_json::to_string_pretty(&world.ground_truth())?;
    truth.push('\n');
    write_text(&out.join("ground_truth.json"), &truth)?;
    eprintln!(
        "wrote {} records and {} labeled pairs to {}",
        cfg.n_sources * cfg.n_entities,
        train.len(),
        out.display()
    );
    Ok(())
}

fn fixture(a: &FixtureArgs, seed: u64, out: &Path) -> Result<()> {
    let records = generate_records(&FixtureConfig { n_movies: a.movies, seed });
    let (pool, stats) = candidate_pool(&records, &FeatureSpec::default(), &BlockingConfig::default())?;
    let labels: Vec<(PairKey, Label)> = pool
        .by_pair
        .values()
        .flatten()
        .map(|c| (c.key.clone(), c.example.y))
        .collect();
    write_records(&out.join("records.jsonl"), &records)?;
    write_labels(&out.join("labels.csv"), &labels)?;
    eprintln!(
        "wrote {} records and {} labeled candidates (reduction ratio {:.4})",
        records.len(),
        labels.len(),
        stats.reduction_ratio()
    );
    Ok(())
}

fn group_by_source(records: &[RawRecord]) -> Result<(SourceRegistry, Vec<Vec<RawRecord>>)> {
    let registry = SourceRegistry::from_unsorted(records.iter().map(|r| r.source.clone()))?;
    let mut by_source = vec![Vec::new(); registry.len()];
    for r in records {
        by_source[registry.index(&r.source).expect("registry built from these records")].push(normalize_record(r)?);
    }
    Ok((registry, by_source))
}

fn block(a: &BlockArgs, out: &Path) -> Result<()> {
    let records = read_records(&a.records)?;
    let (registry, by_source) = group_by_source(&records)?;
    let cfg = BlockingConfig {
        max_block_size: a.max_block_size,
        frequent_fraction: a.frequent_fraction,
        ..BlockingConfig::default()
    };
    let (pairs, stats) = generate_candidates(&by_source, &cfg)?;
    let names = registry.names();
    let keys: Vec<PairKey> = pairs
        .into_iter()
        .map(|p| PairKey {
            source_a: names[p.source_a].clone(),
            id_a: p.id_a,
            source_b: names[p.source_b].clone(),
            id_b: p.id_b,
        })
        .collect();
    write_candidates(&out.join("candidates.csv"), &keys)?;
    eprintln!(
        "blocks: {} (skipped {}), candidates: {}, reduction ratio: {:.6}, unblockable records: {}",
        stats.blocks,
        stats.skipped_blocks,
        stats.candidates,
        stats.reduction_ratio(),
        stats.unblockable
    );
    Ok(())
}

fn has_label_column(path: &Path) -> Result<bool> {
    let file = fs::File::open(path).map_err(|e| io_err(path, e))?;
    let mut first = String::new();
    BufReader::new(file).read_line(&mut first).map_err(|e| io_err(path, e))?;
    Ok(first.trim_end().split(',').any(|c| c == "label"))
}

fn featurize(a: &FeaturizeArgs, out: &Path) -> Result<()> {
    let records = read_records(&a.records)?;
    let numeric_dim = records.first().map(|r| r.attrs.len()).unwrap_or(0);
    let uniform_attrs = numeric_dim > 0 && records.iter().all(|r| r.attrs.len() == numeric_dim);
    let mut spec = match a.spec {
        SpecKind::Movie => FeatureSpec::default(),
        SpecKind::Numeric if !uniform_attrs => {
            return Err(Error::Validation("numeric features need every record to carry the same attrs".into()))
        }
        SpecKind::Numeric => FeatureSpec::numeric(numeric_dim),
        SpecKind::Auto if uniform_attrs => FeatureSpec::numeric(numeric_dim),
        SpecKind::Auto => FeatureSpec::default(),
    };
    spec.empty_jaccard = a.empty_jaccard;
    spec.validate()?;

    let mut index: HashMap<(String, String), RawRecord> = HashMap::with_capacity(records.len());
    for r in &records {
        let norm = normalize_record(r)?;
        if index.insert((r.source.clone(), r.id.clone()), norm).is_some() {
            return Err(Error::Validation(format!("duplicate record id {:?} in source {:?}", r.id, r.source)));
        }
    }
    let pairs: Vec<(PairKey, Option<Label>)> = if has_label_column(&a.pairs)? {
        read_labels(&a.pairs)?.into_iter().map(|(k, y)| (k, Some(y))).collect()
    } else {
        read_candidates(&a.pairs)?.into_iter().map(|k| (k, None)).collect()
    };
    let mut rows = Vec::with_capacity(pairs.len());
    let mut missing = Vec::new();
    for (key, label) in pairs {
        let ra = index.get(&(key.source_a.clone(), key.id_a.clone()));
        let rb = index.get(&(key.source_b.clone(), key.id_b.clone()));
        match (ra, rb) {
            (Some(ra), Some(rb)) => rows.push(FeatureRow {
                x: featurize_pair(ra, rb, &spec),
                key,
                label,
            }),
            _ => missing.push(format!("{}:{}/{}:{}", key.source_a, key.id_a, key.source_b, key.id_b)),
        }
    }
    if !missing.is_empty() {
        let shown: Vec<_> = missing.iter().take(5).cloned().collect();
        return Err(Error::Validation(format!(
            "{} pair(s) reference unknown records, e.g. {}",
            missing.len(),
            shown.join(", ")
        )));
    }
    write_features(&out.join(&a.output), &spec.names(), &rows)?;
    eprintln!("wrote {} feature rows with {} features", rows.len(), spec.dim());
    Ok(())
}

fn load_dataset(fit: &FitArgs) -> Result<Dataset> {
    let (names, rows) = read_features(&fit.features)?;
    let registry = match &fit.sources {
        Some(list) => SourceRegistry::new(list.clone())?,
        None => SourceRegistry::from_unsorted(
            rows.iter()
                .flat_map(|r| [r.key.source_a.clone(), r.key.source_b.clone()]),
        )?,
    };
    rows_to_dataset(&names, &rows, &registry)
}

fn solver_config(fit: &FitArgs, seed: u64) -> SolverConfig {
    SolverConfig {
        max_iters: fit.max_iters,
        tol: fit.tol,
        step: match fit.fixed_step {
            Some(s) => StepPolicy::Fixed(s),
            None => SolverConfig::default().step,
        },
        seed,
        indep_ridge: fit.indep_ridge,
        ..SolverConfig::default()
    }
}

fn preprocess_spec(fit: &FitArgs) -> PreprocessSpec {
    PreprocessSpec {
        standardize: !fit.no_standardize,
        append_constant: fit.intercept,
    }
}

fn cv_config(fit: &FitArgs, opts: &CvOptions, seed: u64) -> CvConfig {
    CvConfig {
        holdout_fraction: opts.holdout,
        folds: opts.folds,
        grid_points: opts.grid_points,
        grid_ratio: opts.grid_ratio,
        preprocess: preprocess_spec(fit),
        solver: solver_config(fit, seed),
        seed,
    }
}

fn run_cv(data: &Dataset, fit: &FitArgs, opts: &CvOptions, seed: u64) -> Result<er_transfer::cv::CvResult> {
    let cfg = cv_config(fit, opts, seed);
    let grid = match &opts.grid {
        Some(values) => ParamGrid::new(values.clone())?,
        None => {
            let pre = cfg.preprocess.fit(data)?;
            ParamGrid::for_data(&pre.apply_dataset(data)?, cfg.grid_points, cfg.grid_ratio)?
        }
    };
    select_lambda(data, &grid, &cfg)
}

fn train(a: &TrainArgs, seed: u64, out: &Path) -> Result<()> {
    if a.method != MethodArg::Transfer && (a.cv || a.lambda.is_some()) {
        return Err(Error::Argument("--lambda and --cv apply to --method transfer only".into()));
    }
    if a.method == MethodArg::Transfer && !a.cv && a.lambda.is_none() {
        return Err(Error::Argument("--method transfer needs --lambda or --cv".into()));
    }
    let data = load_dataset(&a.fit)?;
    let solver = solver_config(&a.fit, seed);
    let (model, pre, trace) = match a.method {
        MethodArg::Transfer if a.cv => {
            let r = run_cv(&data, &a.fit, &a.cv_options, seed)?;
            r.write_csv(&out.join("lambda_path.csv"))?;
            println!("chosen lambda: {}", r.chosen);
            (StoredModel::Transfer(r.model), r.preprocessor, Some(r.trace))
        }
        MethodArg::Transfer | MethodArg::Pooled => {
            let pre = preprocess_spec(&a.fit).fit(&data)?;
            let pp = pre.apply_dataset(&data)?;
            let (model, trace) = if a.method == MethodArg::Pooled {
                fit_pooled(&pp, &solver)?
            } else {
                fit_transfer(&pp, &solver.clone().with_lambda(a.lambda.expect("checked above")))?
            };
            (StoredModel::Transfer(model), pre, Some(trace))
        }
        MethodArg::Indep => {
            let pre = preprocess_spec(&a.fit).fit(&data)?;
            let model = fit_indep(&pre.apply_dataset(&data)?, &solver)?;
            for w in &model.warnings {
                log::warn!("{w}");
            }
            let stored = StoredModel::Indep {
                model,
                feature_names: pre.output_names(),
                sources: data.source_names.clone(),
            };
            (stored, pre, None)
        }
    };
    model.save(&out.join("model.json"))?;
    pre.save(&out.join("preprocessor.json"))?;
    if let Some(trace) = trace {
        trace.write_csv(&out.join("trace.csv"))?;
        if let Some(obj) = trace.final_objective() {
            println!(
                "iterations: {}, final objective: {obj}, converged: {}",
                trace.iterations(),
                trace.converged
            );
        }
    }
    Ok(())
}

fn cv(a: &CvArgs, seed: u64, out: &Path) -> Result<()> {
    let data = load_dataset(&a.fit)?;
    let r = run_cv(&data, &a.fit, &a.cv_options, seed)?;
    r.write_csv(&out.join("lambda_path.csv"))?;
    println!("chosen lambda: {}", r.chosen);
    Ok(())
}

struct Loaded {
    model: StoredModel,
    pre: Preprocessor,
    registry: SourceRegistry,
    rows: Vec<FeatureRow>,
}

fn load_for_scoring(model_path: &Path, pre_path: Option<&PathBuf>, features: &Path) -> Result<Loaded> {
    let model = StoredModel::load(model_path)?;
    let default_pre = model_path.with_file_name("preprocessor.json");
    let pre_path = pre_path.cloned().unwrap_or(default_pre);
    let (names, rows) = read_features(features)?;
    let pre = if pre_path.exists() {
        Preprocessor::load(&pre_path)?
    } else {
        Preprocessor::identity(names.clone())
    };
    if pre.input_features != names {
        return Err(Error::Validation(format!(
            "feature columns {:?} do not match the preprocessor's {:?}",
            names, pre.input_features
        )));
    }
    if pre.output_names() != model.feature_names() {
        return Err(Error::Validation(format!(
            "preprocessed features {:?} do not match the model's {:?}",
            pre.output_names(),
            model.feature_names()
        )));
    }
    let registry = SourceRegistry::new(model.source_names())?;
    registry.check_known(rows.iter().flat_map(|r| [r.key.source_a.as_str(), r.key.source_b.as_str()]))?;
    Ok(Loaded {
        model,
        pre,
        registry,
        rows,
    })
}

fn score_row(l: &Loaded, row: &FeatureRow) -> Result<f64> {
    let pair = l.registry.pair(&row.key.source_a, &row.key.source_b)?;
    l.model.scorer().score(pair, &l.pre.apply(&row.x))
}

fn score(a: &ScoreArgs, out: &Path) -> Result<()> {
    let l = load_for_scoring(&a.model, a.preprocessor.as_ref(), &a.features)?;
    let mut csv = String::from("source_a,id_a,source_b,id_b,label,score\n");
    for row in &l.rows {
        let s = score_row(&l, row)?;
        let k = &row.key;
        let y = row.label.map_or("", |y| y.as_str());
        writeln!(csv, "{},{},{},{},{y},{s}", k.source_a, k.id_a, k.source_b, k.id_b).unwrap();
    }
    write_text(&out.join(&a.output), &csv)
}

fn eval(a: &EvalArgs, out: &Path) -> Result<()> {
    if let Some(r) = a.at_recall {
        if !(r > 0.0 && r <= 1.0) {
            return Err(Error::Argument(format!("--at-recall must lie in (0, 1], got {r}")));
        }
    }
    let l = load_for_scoring(&a.model, a.preprocessor.as_ref(), &a.features)?;
    let only = match &a.eval_pair {
        Some(names) if names.len() == 2 => Some(l.registry.pair(&names[0], &names[1])?),
        Some(_) => return Err(Error::Argument("--eval-pair takes two source names: a,b".into())),
        None => None,
    };
    let mut scored = Vec::new();
    for (n, row) in l.rows.iter().enumerate() {
        let pair = l.registry.pair(&row.key.source_a, &row.key.source_b)?;
        if only.is_some_and(|p| p != pair) {
            continue;
        }
        let y = row
            .label
            .ok_or_else(|| Error::Validation(format!("feature row {} is unlabeled", n + 1)))?;
        scored.push(ScoredExample {
            score: score_row(&l, row)?,
            y,
            pair,
        });
    }
    if scored.is_empty() {
        return Err(Error::Validation("no labeled rows to evaluate after the pair filter".into()));
    }
    let curve = pr_curve(&scored)?;
    write_text(&out.join("pr_curve.csv"), &curve.to_csv())?;
    let c = confusion(&scored, a.tau);
    let (p, r) = precision_recall(&c);
    let err = (c.fp + c.fn_) as f64 / c.total() as f64;
    let summary = format!(
        "n,tau,tp,fp,fn,tn,precision,recall,test_error\n{},{},{},{},{},{},{p},{r},{err}\n",
        c.total(),
        a.tau,
        c.tp,
        c.fp,
        c.fn_,
        c.tn
    );
    write_text(&out.join("eval_summary.csv"), &summary)?;
    print!("{summary}");
    if let Some(r0) = a.at_recall {
        let p = try_precision_at_recall(&curve, r0).unwrap_or_else(|| {
            log::warn!("recall {r0} is not attained; reporting precision 0");
            0.0
        });
        let line = format!("recall,precision\n{r0},{p}\n");
        write_text(&out.join("precision_at_recall.csv"), &line)?;
        print!("{line}");
    }
    Ok(())
}

fn experiment(a: &ExperimentArgs, seed: u64, out: &Path) -> Result<()> {
    let family = match a.family {
        FamilyArg::PrGrid => Family::PrGrid,
        FamilyArg::Summary => Family::Summary,
        FamilyArg::SampleComplexity => Family::SampleComplexity,
        FamilyArg::SourceComplexity => Family::SourceComplexity,
        FamilyArg::Runtime => Family::Runtime,
    };
    let mut plan = match &a.plan {
        Some(path) => {
            let text = fs::read_to_string(path).map_err(|e| io_err(path, e))?;
            let plan: ExperimentPlan = serde_json::from_str(&text)?;
            if plan.family != family {
                return Err(Error::Argument(format!(
                    "plan file is for {}, not {}",
                    plan.family.name(),
                    family.name()
                )));
            }
            plan
        }
        None => ExperimentPlan::for_family(family),
    };
    plan.seed = seed;
    if let Some(t) = a.trials {
        plan.trials = t;
    }
    if let Some(ms) = &a.methods {
        plan.methods = ms
            .iter()
            .map(|m| match m {
                MethodArg::Transfer => Method::Transfer,
                MethodArg::Pooled => Method::Pooled,
                MethodArg::Indep => Method::Indep,
            })
            .collect();
    }
    if let Some(b) = &a.budgets {
        plan.budgets = b.iter().map(|&n| Budget::PerPair(n)).collect();
    }
    if let Some(c) = &a.source_counts {
        plan.source_counts = c.clone();
    }
    if let Some(l) = a.labels_per_source {
        plan.labels_per_source = l;
    }
    if let Some(h) = a.heterogeneity {
        plan.synth.heterogeneity = h;
    }
    if let Some(t) = a.test_pairs {
        plan.test_pairs = t;
    }
    let report = run_experiment(&plan)?;
    report.write(out)?;
    print!("{}", report.summary_csv());
    if matches!(family, Family::PrGrid | Family::Summary) {
        print!("{}", report.pr_summary_csv());
    }
    Ok(())
}
