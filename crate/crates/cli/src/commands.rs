use std::fs;
use std::path::{Path, PathBuf};

use dfa_bisim::dfa::Dfa;
use dfa_bisim::encoder::{evaluate_heatmap, separation, train as train_encoder, Checkpoint, EncoderMode, TrainConfig};
use dfa_bisim::fmt::num;
use dfa_bisim::metric::solve_fixed_point;
use dfa_bisim::product::{
    compose, pac_csv, pac_schedule, q_learning, success_csv, task_distribution, value_iteration, Conditioning,
    Gridworld, PacConfig, QConfig,
};
use dfa_bisim::sampler::{SamplerConfig, StateCountDist, TaskKind};
use dfa_bisim::{DfaSpaceConfig, Error, InducedMdp, Result};
use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};
use serde_json::json;

use crate::manifest::{sidecar, RunManifest};
use crate::{ConditioningArg, EvalArgs, Kind, MetricArgs, Mode, PacArgs, PolicyArgs, SampleArgs, TrainArgs};

fn invalid(msg: impl Into<String>) -> Error {
    Error::Invalid(msg.into())
}

fn load_config<T: DeserializeOwned + Default>(path: Option<&Path>) -> Result<T> {
    match path {
        Some(p) => Ok(serde_json::from_str(&fs::read_to_string(p)?)?),
        None => Ok(T::default()),
    }
}

fn read_corpus(path: &Path) -> Result<Vec<Dfa>> {
    fs::read_to_string(path)?
        .lines()
        .enumerate()
        .filter(|(_, l)| !l.trim().is_empty())
        .map(|(i, l)| Dfa::from_json(l).map_err(|e| invalid(format!("{}:{}: {e}", path.display(), i + 1))))
        .collect()
}

fn alphabet_of(corpus: &[Dfa], fallback: Option<usize>) -> Result<usize> {
    let k = match (corpus.first(), fallback) {
        (Some(d), _) => d.alphabet_size(),
        (None, Some(k)) => k,
        (None, None) => return Err(invalid("empty corpus: pass --alphabet-size")),
    };
    if let Some(d) = corpus.iter().find(|d| d.alphabet_size() != k) {
        return Err(Error::AlphabetMismatch { left: k, right: d.alphabet_size() });
    }
    Ok(k)
}

fn enumerate(corpus: &[Dfa], alphabet: Option<usize>, max_states: Option<usize>, gamma: f64) -> Result<InducedMdp> {
    let k = alphabet_of(corpus, alphabet)?;
    let needed = corpus.iter().map(|d| d.minimize().num_states()).max().unwrap_or(1);
    let config = DfaSpaceConfig::new(k, max_states.unwrap_or(needed), gamma)?;
    InducedMdp::enumerate(corpus, &config)
}

fn load_gridworld(path: Option<&Path>) -> Result<Gridworld> {
    match path {
        Some(p) => Gridworld::from_json(&fs::read_to_string(p)?),
        None => Ok(Gridworld::default()),
    }
}

fn state_labels(space: &InducedMdp) -> Vec<String> {
    space.states().iter().enumerate().map(|(i, s)| format!("{i}:{}", s.short_hash())).collect()
}

fn pretty(value: &serde_json::Value) -> Result<String> {
    Ok(serde_json::to_string_pretty(value)? + "\n")
}

#[derive(Debug, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SampleConfig {
    pub kind: TaskKind,
    pub alphabet_size: usize,
    pub count: usize,
    pub seed: u64,
    pub state_count_dist: StateCountDist,
}

impl Default for SampleConfig {
    fn default() -> Self {
        SampleConfig {
            kind: TaskKind::ReachAvoid,
            alphabet_size: 4,
            count: 10,
            seed: 0,
            state_count_dist: StateCountDist::TruncatedGeometric { p: 0.5, bound: 10 },
        }
    }
}

fn parse_states(text: &str) -> Result<StateCountDist> {
    let parts: Vec<&str> = text.split(':').collect();
    let bad = || invalid(format!("cannot parse state distribution '{text}'"));
    match parts.as_slice() {
        ["geometric", p, bound] => Ok(StateCountDist::TruncatedGeometric {
            p: p.parse().map_err(|_| bad())?,
            bound: bound.parse().map_err(|_| bad())?,
        }),
        ["uniform", lo, hi] => {
            Ok(StateCountDist::Uniform { lo: lo.parse().map_err(|_| bad())?, hi: hi.parse().map_err(|_| bad())? })
        }
        _ => Err(bad()),
    }
}

pub fn sample(args: SampleArgs) -> Result<()> {
    let mut c: SampleConfig = load_config(args.config.as_deref())?;
    if let Some(k) = args.kind {
        c.kind = match k {
            Kind::Reach => TaskKind::Reach,
            Kind::ReachAvoid => TaskKind::ReachAvoid,
            Kind::Rad => TaskKind::Rad,
        };
    }
    c.count = args.count.unwrap_or(c.count);
    c.seed = args.seed.unwrap_or(c.seed);
    c.alphabet_size = args.alphabet_size.unwrap_or(c.alphabet_size);
    if let Some(s) = &args.states {
        c.state_count_dist = parse_states(s)?;
    }
    let sampler = SamplerConfig { alphabet_size: c.alphabet_size, state_count_dist: c.state_count_dist, seed: c.seed, kind: c.kind };
    sampler.validate()?;
    let dfas = sampler.sample_many(c.count)?;
    let body: String = dfas.iter().map(|d| d.to_json() + "\n").collect();

    let inputs: Vec<PathBuf> = args.config.into_iter().collect();
    let mut m = RunManifest::new("sample", Some(c.seed), serde_json::to_value(&c)?, &inputs)?;
    m.write_output(&args.out, &body)?;
    m.finish(&args.out)?;
    println!("wrote {} tasks to {}", dfas.len(), args.out.display());
    Ok(())
}

#[derive(Debug, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct MetricConfig {
    pub gamma: f64,
    pub alpha: f64,
    pub alphabet_size: Option<usize>,
    pub max_states: Option<usize>,
    /// Distances at or below this count as zero.
    pub zero_tolerance: f64,
}

impl Default for MetricConfig {
    fn default() -> Self {
        MetricConfig { gamma: 0.9, alpha: 1e-6, alphabet_size: None, max_states: None, zero_tolerance: 1e-6 }
    }
}

pub fn metric(args: MetricArgs) -> Result<()> {
    let mut c: MetricConfig = load_config(args.config.as_deref())?;
    c.gamma = args.gamma.unwrap_or(c.gamma);
    c.alpha = args.alpha.unwrap_or(c.alpha);
    c.alphabet_size = args.alphabet_size.or(c.alphabet_size);
    c.max_states = args.max_states.or(c.max_states);
    let corpus = read_corpus(&args.corpus)?;
    let space = enumerate(&corpus, c.alphabet_size, c.max_states, c.gamma)?;
    let (table, _) = solve_fixed_point(&space, c.gamma, c.alpha)?;

    // Zero set of the space, cross-checked against bisimilarity.
    let mut zero_pairs = Vec::new();
    let mut mismatches = 0usize;
    for s in 0..space.len() {
        for t in 0..s {
            let zero = table.get(s, t) <= c.zero_tolerance;
            let bisimilar = space.state(s).dfa().is_bisimilar(space.state(t).dfa())?;
            if zero != bisimilar {
                mismatches += 1;
            }
            if zero {
                zero_pairs.push(json!({"a": t, "b": s, "distance": table.get(s, t), "bisimilar": bisimilar}));
            }
        }
    }
    // The same check over corpus entries, where duplicates may be planted.
    let ids: Vec<usize> = corpus
        .iter()
        .map(|d| space.id_of(d).ok_or_else(|| Error::Invariant("corpus task missing from its own space".into())))
        .collect::<Result<_>>()?;
    let mut corpus_zero = Vec::new();
    for i in 0..corpus.len() {
        for j in 0..i {
            let d = table.get(ids[i], ids[j]);
            let zero = d <= c.zero_tolerance;
            let bisimilar = corpus[i].is_bisimilar(&corpus[j])?;
            if zero != bisimilar {
                mismatches += 1;
            }
            if zero {
                corpus_zero.push(json!({"a": j, "b": i, "distance": d, "bisimilar": bisimilar}));
            }
        }
    }

    let mut m = RunManifest::new("metric", None, serde_json::to_value(&c)?, &[args.corpus.clone()])?;
    m.write_output(&args.out, &table.to_csv(&state_labels(&space)))?;
    let report = json!({
        "run_id": m.run_id,
        "states": space.len(),
        "iterations": table.iterations(),
        "residual": table.residual(),
        "error_bound": table.error_bound(),
        "zero_set": zero_pairs,
        "corpus_zero_set": corpus_zero,
        "mismatches": mismatches,
    });
    m.write_output(&sidecar(&args.out, "report.json"), &pretty(&report)?)?;
    m.finish(&args.out)?;
    println!("states: {}", space.len());
    println!("iterations: {}", table.iterations());
    println!("mismatches: {mismatches}");
    if mismatches > 0 {
        return Err(Error::Invariant(format!("{mismatches} zero-set/bisimilarity mismatches")));
    }
    Ok(())
}

#[derive(Debug, Default, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainCmdConfig {
    pub alphabet_size: Option<usize>,
    pub max_states: Option<usize>,
    pub train: TrainConfig,
}

pub fn train(args: TrainArgs) -> Result<()> {
    let mut c: TrainCmdConfig = load_config(args.config.as_deref())?;
    if let Some(mode) = args.mode {
        let defaults = match mode {
            Mode::Tabular => TrainConfig::default(),
            Mode::MessagePassing => TrainConfig::message_passing(),
        };
        // Switching mode without a config file picks that mode's defaults.
        if args.config.is_none() {
            c.train = defaults;
        }
        c.train.mode = match mode {
            Mode::Tabular => EncoderMode::Tabular,
            Mode::MessagePassing => EncoderMode::MessagePassing,
        };
    }
    c.train.epochs = args.epochs.unwrap_or(c.train.epochs);
    c.train.seed = args.seed.unwrap_or(c.train.seed);
    c.train.gamma = args.gamma.unwrap_or(c.train.gamma);
    c.train.learning_rate = args.learning_rate.unwrap_or(c.train.learning_rate);
    c.alphabet_size = args.alphabet_size.or(c.alphabet_size);
    c.max_states = args.max_states.or(c.max_states);
    c.train.validate()?;

    let corpus = read_corpus(&args.corpus)?;
    let space = enumerate(&corpus, c.alphabet_size, c.max_states, c.train.gamma)?;
    let outcome = train_encoder(&space, &c.train)?;
    let emb = outcome.model.embed_space(&space)?;
    let separation_rate = dfa_bisim::encoder::train::space_separation_rate(&emb, 1e-8);

    let mut m = RunManifest::new("train", Some(c.train.seed), serde_json::to_value(&c)?, &[args.corpus.clone()])?;
    let checkpoint = Checkpoint {
        version: Checkpoint::VERSION,
        model: outcome.model.clone(),
        policy: outcome.policy.clone(),
        config: c.train.clone(),
        run_id: Some(m.run_id.clone()),
    };
    m.write_output(&args.out, &(checkpoint.to_json() + "\n"))?;
    m.write_output(&sidecar(&args.out, "curves.csv"), &outcome.curves_csv())?;
    m.finish(&args.out)?;
    let last = outcome.curves.last();
    println!("states: {}", space.len());
    println!("final value loss: {}", last.map_or(f64::NAN, |p| p.value_loss));
    println!("separation rate: {separation_rate}");
    Ok(())
}

pub fn eval(args: EvalArgs) -> Result<()> {
    let checkpoint = Checkpoint::from_json(&fs::read_to_string(&args.checkpoint)?)?;
    let mut dfas = Vec::new();
    let mut labels = Vec::new();
    let mut spans = Vec::new();
    for path in &args.corpora {
        let corpus = read_corpus(path)?;
        let name = path.file_stem().map_or_else(|| path.display().to_string(), |s| s.to_string_lossy().into_owned());
        spans.push((name.clone(), dfas.len(), dfas.len() + corpus.len()));
        labels.extend((0..corpus.len()).map(|i| format!("{name}:{i}")));
        dfas.extend(corpus);
    }
    let matrix = evaluate_heatmap(&checkpoint.model, &dfas)?;
    let overall = separation(&matrix, &dfas, args.threshold)?;
    let mut per_corpus = Vec::new();
    for (name, lo, hi) in &spans {
        let sub: Vec<Vec<f64>> = matrix[*lo..*hi].iter().map(|r| r[*lo..*hi].to_vec()).collect();
        let s = separation(&sub, &dfas[*lo..*hi], args.threshold)?;
        per_corpus.push(json!({"corpus": name, "count": hi - lo, "separation_rate": s.rate(), "stats": s}));
    }

    let mut csv = String::from("dfa");
    for l in &labels {
        csv.push(',');
        csv.push_str(l);
    }
    csv.push('\n');
    for (l, row) in labels.iter().zip(&matrix) {
        csv.push_str(l);
        for x in row {
            csv.push(',');
            csv.push_str(&num(*x));
        }
        csv.push('\n');
    }

    let mut inputs = vec![args.checkpoint.clone()];
    inputs.extend(args.corpora.iter().cloned());
    let config = json!({"threshold": args.threshold});
    let mut m = RunManifest::new("eval", None, config, &inputs)?;
    m.write_output(&args.out, &csv)?;
    let report = json!({
        "run_id": m.run_id,
        "threshold": args.threshold,
        "diagonal_zero": overall.diagonal_zero,
        "overall": {"separation_rate": overall.rate(), "stats": overall},
        "corpora": per_corpus,
    });
    m.write_output(&sidecar(&args.out, "report.json"), &pretty(&report)?)?;
    m.finish(&args.out)?;
    println!("diagonal zero: {}", overall.diagonal_zero);
    for p in &per_corpus {
        println!("{}: separation rate {}", p["corpus"].as_str().unwrap_or("?"), p["separation_rate"]);
    }
    if !overall.diagonal_zero {
        return Err(Error::Invariant("heatmap diagonal is not zero".into()));
    }
    Ok(())
}

#[derive(Debug, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PolicyConfig {
    pub q: QConfig,
    /// Independent runs, seeded `q.seed, q.seed + 1, ...`.
    pub seeds: usize,
}

impl Default for PolicyConfig {
    fn default() -> Self {
        PolicyConfig { q: QConfig::default(), seeds: 5 }
    }
}

fn median(xs: &[f64]) -> f64 {
    let mut v = xs.to_vec();
    v.sort_by(f64::total_cmp);
    let n = v.len();
    if n % 2 == 1 {
        v[n / 2]
    } else {
        (v[n / 2 - 1] + v[n / 2]) / 2.0
    }
}

pub fn policy(args: PolicyArgs) -> Result<()> {
    let mut c: PolicyConfig = load_config(args.config.as_deref())?;
    c.q.episodes = args.episodes.unwrap_or(c.q.episodes);
    c.q.seed = args.seed.unwrap_or(c.q.seed);
    c.seeds = args.seeds.unwrap_or(c.seeds);
    c.q.validate()?;
    if c.seeds == 0 {
        return Err(invalid("at least one seed is required"));
    }
    let grid = load_gridworld(args.gridworld.as_deref())?;
    let base = grid.to_mdp()?;
    let tasks = read_corpus(&args.corpus)?;
    let space = enumerate(&tasks, Some(grid.alphabet_size), None, grid.gamma)?;
    let product = compose(&base, &space, &task_distribution(&space, &tasks)?)?;
    let optimal = value_iteration(&product, 1e-12)?;
    let optimal_success = product.success_probability(&optimal.policy, c.q.max_steps);

    let checkpoint = match &args.checkpoint {
        Some(p) => Some(Checkpoint::from_json(&fs::read_to_string(p)?)?),
        None => None,
    };
    let conditioning = match (args.conditioning, &checkpoint) {
        (ConditioningArg::DfaId, _) => Conditioning::DfaId,
        (ConditioningArg::EmbeddingKey, Some(ck)) => Conditioning::EmbeddingKey(&ck.model),
        (ConditioningArg::EmbeddingKey, None) => return Err(invalid("embedding-key conditioning needs --checkpoint")),
    };
    // Value iteration on the keyed product must reproduce the id-keyed table.
    let classes = conditioning.classes(&space)?;
    let keyed = value_iteration(&product.relabel(&classes)?, 1e-12)?;
    let identical = (0..product.len()).all(|x| {
        let (s, q) = product.split(x);
        optimal.values[x].to_bits() == keyed.values[product.index(s, classes[q])].to_bits()
    });

    let mut runs = Vec::new();
    for i in 0..c.seeds {
        let config = QConfig { seed: c.q.seed + i as u64, ..c.q.clone() };
        runs.push((format!("seed_{}", config.seed), q_learning(&product, &space, conditioning, &config)?));
    }
    let finals: Vec<f64> = runs.iter().map(|(_, o)| o.final_success()).collect();
    let columns: Vec<(&str, &[dfa_bisim::product::SuccessPoint])> =
        runs.iter().map(|(n, o)| (n.as_str(), o.curve.as_slice())).collect();

    let mut inputs = vec![args.corpus.clone()];
    inputs.extend(args.gridworld.iter().cloned());
    inputs.extend(args.checkpoint.iter().cloned());
    let config = json!({"conditioning": conditioning.name(), "gridworld": grid, "policy": c});
    let mut m = RunManifest::new("policy", Some(c.q.seed), config, &inputs)?;
    m.write_output(&args.out, &success_csv(&columns))?;
    let report = json!({
        "run_id": m.run_id,
        "conditioning": conditioning.name(),
        "product_states": product.len(),
        "optimal_success": optimal_success,
        "value_tables_identical": identical,
        "final_success": finals,
        "median_final_success": median(&finals),
    });
    m.write_output(&sidecar(&args.out, "report.json"), &pretty(&report)?)?;
    m.finish(&args.out)?;
    println!("optimal success: {optimal_success}");
    println!("median final success: {}", median(&finals));
    if !identical {
        return Err(Error::Invariant("keyed value iteration differs from the id-keyed table".into()));
    }
    Ok(())
}

#[derive(Debug, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PacCmdConfig {
    pub pac: PacConfig,
    pub budgets: Vec<usize>,
    pub seeds: usize,
    pub seed: u64,
}

impl Default for PacCmdConfig {
    fn default() -> Self {
        PacCmdConfig { pac: PacConfig::default(), budgets: vec![4_000, 8_000, 16_000, 32_000], seeds: 5, seed: 0 }
    }
}

pub fn pac(args: PacArgs) -> Result<()> {
    let mut c: PacCmdConfig = load_config(args.config.as_deref())?;
    c.pac.epsilon = args.epsilon.unwrap_or(c.pac.epsilon);
    if let Some(b) = args.budgets {
        c.budgets = b;
    }
    c.seeds = args.seeds.unwrap_or(c.seeds);
    c.seed = args.seed.unwrap_or(c.seed);
    c.pac.validate()?;
    let grid = load_gridworld(args.gridworld.as_deref())?;
    let tasks = read_corpus(&args.task)?;
    let task = tasks
        .get(args.task_index)
        .ok_or_else(|| invalid(format!("task index {} out of range ({} tasks)", args.task_index, tasks.len())))?
        .clone();
    let space = enumerate(std::slice::from_ref(&task), Some(grid.alphabet_size), None, grid.gamma)?;
    let product = compose(&grid.to_mdp()?, &space, &task_distribution(&space, &[task])?)?;
    let seeds: Vec<u64> = (0..c.seeds as u64).map(|i| c.seed + i).collect();
    let rows = pac_schedule(&product, &c.pac, &c.budgets, &seeds)?;
    let non_increasing = rows.windows(2).all(|w| w[1].median <= w[0].median);

    let mut inputs = vec![args.task.clone()];
    inputs.extend(args.gridworld.iter().cloned());
    let config = json!({"gridworld": grid, "task_index": args.task_index, "pac": c});
    let mut m = RunManifest::new("pac", Some(c.seed), config, &inputs)?;
    m.write_output(&args.out, &pac_csv(&rows))?;
    let report = json!({"run_id": m.run_id, "rows": rows, "medians_non_increasing": non_increasing});
    m.write_output(&sidecar(&args.out, "report.json"), &pretty(&report)?)?;
    m.finish(&args.out)?;
    for r in &rows {
        println!("budget {}: median {} counts {:?}", r.budget, r.median, r.counts);
    }
    println!("medians non-increasing: {non_increasing}");
    Ok(())
}
