use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};

use anyhow::{bail, Context, Result};
use clap::Args;

use qtune_core::experiment::{self, CorpusGrid, Evaluation, Experiment, Policy};
use qtune_core::gamma::gamma_score;
use qtune_core::learner::metrics::{measure_overhead, Overhead};
use qtune_core::learner::model_io::{load_model, save_model};
use qtune_core::learner::{
    cross_validate, train as train_model, BicForm, ForestConfig, LabelConfig, LogisticConfig, ModelScore,
    PerfConfig, TreeConfig,
};
use qtune_core::logger::{load_dataset, write_dataset};
use qtune_core::sim::{load_trace, save_trace, Cluster, ClusterConfig};
use qtune_core::sla::parse_sla;
use qtune_core::workload::generate;
use qtune_core::{ConsistencyLevel, Features, IntervalOp, KeyDistribution, LearnerKind, Model, SubSla, TrainingRow, WorkloadSpec};

use crate::{BicArg, Common, DistributionArg, LearnerArg};

fn default_read_proportions() -> Vec<f64> {
    (1..=10).map(|i| i as f64 / 10.0).collect()
}

#[derive(Args, Debug)]
pub struct CorpusArgs {
    /// Read proportions of the grid [default: 0.1,0.2,...,1.0].
    #[arg(long, value_delimiter = ',')]
    pub read_proportions: Vec<f64>,
    #[arg(long, value_delimiter = ',', default_values_t = vec![4usize, 16])]
    pub thread_counts: Vec<usize>,
    /// Scored windows per grid cell and level.
    #[arg(long, default_value_t = 25)]
    pub windows: usize,
}

#[derive(Args, Debug)]
pub struct TrainArgs {
    /// Corpus written by `qtune corpus`.
    #[arg(long)]
    pub data: PathBuf,
    #[command(flatten)]
    pub scoring: ScoringArgs,
}

#[derive(Args, Debug, Clone)]
pub struct ScoringArgs {
    #[arg(long, default_value_t = 10)]
    pub folds: usize,
    #[arg(long, value_enum, default_value_t = BicArg::Printed)]
    pub bic: BicArg,
    /// Predictions timed for the overhead report.
    #[arg(long, default_value_t = 10_000)]
    pub timed_predictions: usize,
}

#[derive(Args, Debug)]
pub struct EvaluateArgs {
    /// Model written by `qtune train`.
    #[arg(long)]
    pub model: PathBuf,
    #[command(flatten)]
    pub sweep: SweepGrid,
}

#[derive(Args, Debug, Clone)]
pub struct SweepGrid {
    /// Read proportions to sweep [default: 0.1,0.2,...,1.0].
    #[arg(long, value_delimiter = ',')]
    pub read_proportions: Vec<f64>,
    /// Scored windows per read proportion and policy.
    #[arg(long, default_value_t = 10)]
    pub windows: usize,
}

#[derive(Args, Debug)]
pub struct SweepArgs {
    #[arg(long, value_delimiter = ',', default_values_t = vec![4usize, 16])]
    pub corpus_thread_counts: Vec<usize>,
    #[arg(long, default_value_t = 25)]
    pub corpus_windows: usize,
    #[command(flatten)]
    pub sweep: SweepGrid,
    #[command(flatten)]
    pub scoring: ScoringArgs,
}

#[derive(Args, Debug)]
pub struct GammaArgs {
    /// Trace file to score; without it one window is simulated.
    #[arg(long)]
    pub trace: Option<PathBuf>,
    /// Level of the simulated window.
    #[arg(long, default_value = "ONE/ONE")]
    pub level: ConsistencyLevel,
}

#[derive(Args, Debug)]
pub struct PerfArgs {
    /// Delimited rows `name,overhead_ms,cv_error` under a header.
    #[arg(long)]
    pub metrics: PathBuf,
    #[arg(long, default_value_t = 1.5)]
    pub o_base: f64,
    #[arg(long, default_value_t = 1.98)]
    pub e_base: f64,
    #[arg(long, default_value_t = 0.5)]
    pub w_speedup: f64,
    #[arg(long, default_value_t = 0.5)]
    pub w_a: f64,
}

fn out_file(common: &Common, name: &str) -> Result<PathBuf> {
    std::fs::create_dir_all(&common.out)
        .with_context(|| format!("cannot create output directory {}", common.out.display()))?;
    Ok(common.out.join(name))
}

fn write_with(path: &Path, f: impl FnOnce(&mut BufWriter<File>) -> std::io::Result<()>) -> Result<()> {
    let file = File::create(path).with_context(|| format!("cannot create {}", path.display()))?;
    let mut w = BufWriter::new(file);
    f(&mut w)
        .and_then(|_| w.flush())
        .with_context(|| format!("cannot write {}", path.display()))
}

fn subsla(common: &Common) -> Result<SubSla> {
    if let Ok(s) = common.sla.parse::<SubSla>() {
        return Ok(s);
    }
    let path = Path::new(&common.sla);
    if !path.exists() {
        bail!("--sla {:?} is neither `latency_ms staleness_ms` nor an existing file", common.sla);
    }
    let sla = parse_sla(path)?;
    sla.rows()
        .get(common.sla_row)
        .copied()
        .with_context(|| format!("{} has {} rows, no row {}", path.display(), sla.rows().len(), common.sla_row))
}

fn workload(common: &Common) -> Result<WorkloadSpec> {
    let mut spec = match &common.workload {
        Some(p) => WorkloadSpec::from_file(p)?,
        None => WorkloadSpec::default(),
    };
    let f = &common.workload_flags;
    if let Some(v) = f.read_proportion {
        spec.read_proportion = v;
    }
    if let Some(v) = f.thread_count {
        spec.thread_count = v;
    }
    if let Some(v) = f.key_count {
        spec.key_count = v;
    }
    let theta = match spec.key_distribution {
        KeyDistribution::Zipfian { theta } => theta,
        KeyDistribution::Uniform => 0.99,
    };
    match (f.distribution, f.zipfian_theta) {
        (Some(DistributionArg::Uniform), _) => spec.key_distribution = KeyDistribution::Uniform,
        (Some(DistributionArg::Zipfian), t) => {
            spec.key_distribution = KeyDistribution::Zipfian { theta: t.unwrap_or(theta) }
        }
        (None, Some(t)) => spec.key_distribution = KeyDistribution::Zipfian { theta: t },
        (None, None) => {}
    }
    if let Some(v) = f.ops_per_thread {
        spec.ops_per_thread_per_window = v;
    }
    if let Some(v) = f.think_time_us {
        spec.think_time_us = v;
    }
    spec.seed = common.seed;
    spec.validate()?;
    Ok(spec)
}

fn cluster(common: &Common) -> Result<ClusterConfig> {
    let mut c = match &common.config {
        Some(p) => ClusterConfig::from_file(p)?,
        None => ClusterConfig::default(),
    };
    if let Some(ms) = common.inject_delay_ms {
        if !(ms >= 0.0 && ms.is_finite()) {
            bail!("--inject-delay-ms must be non-negative, got {ms}");
        }
        c.injected_delay_us = (ms * 1000.0).round() as u64;
    }
    c.seed = common.seed;
    c.validate()?;
    Ok(c)
}

fn experiment(common: &Common) -> Result<Experiment> {
    let window_us = match common.window_ms {
        None => Experiment::default().window_us,
        Some(ms) if ms > 0.0 && ms.is_finite() && ms * 1000.0 >= 1.0 => (ms * 1000.0).round() as u64,
        Some(ms) => bail!("--window-ms must be at least one microsecond, got {ms}"),
    };
    let exp = Experiment {
        cluster: cluster(common)?,
        workload: workload(common)?,
        window_us,
        percentile: common.percentile,
        seed: common.seed,
    };
    exp.validate()?;
    Ok(exp)
}

fn learner(common: &Common) -> LearnerKind {
    let seed = common.seed;
    match common.learner {
        LearnerArg::Tree => LearnerKind::Tree(TreeConfig { seed, ..Default::default() }),
        LearnerArg::Forest => LearnerKind::Forest(ForestConfig {
            seed,
            tree: TreeConfig { seed, ..Default::default() },
            ..Default::default()
        }),
        LearnerArg::Logistic => LearnerKind::Logistic(LogisticConfig::default()),
    }
}

fn read_proportions(given: &[f64]) -> Vec<f64> {
    if given.is_empty() {
        default_read_proportions()
    } else {
        given.to_vec()
    }
}

fn print_overhead(what: &str, o: &Overhead) {
    println!(
        "{what}: mean {:.6} ms, variance {:.6e} ms^2, std dev {:.6} ms over {} predictions",
        o.mean_ms, o.variance, o.std_dev, o.samples
    );
}

fn build_corpus(common: &Common, rws: &[f64], tcs: &[usize], windows: usize) -> Result<Vec<TrainingRow>> {
    let exp = experiment(common)?;
    let grid = CorpusGrid {
        read_proportions: read_proportions(rws),
        thread_counts: tcs.to_vec(),
        levels: ConsistencyLevel::all().to_vec(),
        windows,
    };
    let rows = experiment::corpus(&exp, &grid)?;
    let path = out_file(common, "corpus.csv")?;
    write_dataset(&rows, &path)?;
    println!("wrote {} rows to {}", rows.len(), path.display());
    Ok(rows)
}

pub fn corpus(common: &Common, a: &CorpusArgs) -> Result<()> {
    build_corpus(common, &a.read_proportions, &a.thread_counts, a.windows).map(|_| ())
}

const SCORE_HEADER: &str = "learner,n,k,log_l,cv_error,aicc,bic";

fn fit_and_score(common: &Common, rows: &[TrainingRow], s: &ScoringArgs) -> Result<Model> {
    let sla = subsla(common)?;
    let kind = learner(common);
    let labels = LabelConfig::default();
    let model = train_model(&kind, rows, &sla, &labels)?;
    let cv = cross_validate(rows, &sla, s.folds, &kind, &labels)?;
    if s.timed_predictions == 0 {
        bail!("--timed-predictions must be positive");
    }
    let features: Vec<Features> = rows.iter().cycle().take(s.timed_predictions).map(Features::of).collect();
    let overhead = measure_overhead(&model, &features, &sla)?;
    let form = match s.bic {
        BicArg::Printed => BicForm::Printed,
        BicArg::Standard => BicForm::Standard,
    };
    let score = ModelScore::new(&model, rows, &labels, cv.mean, overhead, form)?;

    let model_path = out_file(common, "model.txt")?;
    save_model(&model, &model_path)?;
    let line = format!(
        "{},{},{},{:.6},{:.6},{},{:.6}",
        score.learner,
        score.n,
        score.k,
        score.log_l,
        score.cv_error,
        score.aicc.map_or("NA".to_string(), |v| format!("{v:.6}")),
        score.bic
    );
    let score_path = out_file(common, "score.csv")?;
    write_with(&score_path, |w| writeln!(w, "{SCORE_HEADER}\n{line}"))?;
    println!("{SCORE_HEADER}\n{line}");
    for (i, e) in cv.fold_errors.iter().enumerate() {
        println!("fold {i}: error {e:.6}");
    }
    print_overhead("prediction overhead", &overhead);
    println!("wrote {} and {}", model_path.display(), score_path.display());
    Ok(model)
}

pub fn train(common: &Common, a: &TrainArgs) -> Result<()> {
    let rows = load_dataset(&a.data)?;
    if rows.is_empty() {
        bail!("{} holds no rows", a.data.display());
    }
    fit_and_score(common, &rows, &a.scoring).map(|_| ())
}

fn run_evaluation(common: &Common, model: &Model, grid: &SweepGrid) -> Result<()> {
    let sla = subsla(common)?;
    if model.subsla() != sla {
        bail!("model was trained for subSLA ({}) but --sla asks for ({sla})", model.subsla());
    }
    let exp = experiment(common)?;
    let rws = read_proportions(&grid.read_proportions);
    let eval = experiment::evaluate(&exp, model, &sla, &rws, grid.windows, &Policy::all())?;
    write_evaluation(common, &eval)
}

fn write_evaluation(common: &Common, eval: &Evaluation) -> Result<()> {
    let outcomes = out_file(common, "outcomes.csv")?;
    write_with(&outcomes, |w| eval.write_outcomes(w))?;
    let m = out_file(common, "m.csv")?;
    write_with(&m, |w| eval.write_m(w))?;
    let mut stdout = std::io::stdout().lock();
    eval.write_m(&mut stdout)?;
    if !eval.prediction_ms.is_empty() {
        let n = eval.prediction_ms.len() as f64;
        let mean = eval.prediction_ms.iter().sum::<f64>() / n;
        let variance = eval.prediction_ms.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / n;
        print_overhead(
            "in-loop prediction overhead",
            &Overhead {
                mean_ms: mean,
                variance,
                std_dev: variance.sqrt(),
                samples: eval.prediction_ms.len(),
            },
        );
    }
    println!("wrote {} and {}", outcomes.display(), m.display());
    Ok(())
}

pub fn evaluate(common: &Common, a: &EvaluateArgs) -> Result<()> {
    let model = load_model(&a.model)?;
    run_evaluation(common, &model, &a.sweep)
}

pub fn sweep(common: &Common, a: &SweepArgs) -> Result<()> {
    let rows = build_corpus(common, &[], &a.corpus_thread_counts, a.corpus_windows)?;
    let model = fit_and_score(common, &rows, &a.scoring)?;
    run_evaluation(common, &model, &a.sweep)
}

pub fn gamma(common: &Common, a: &GammaArgs) -> Result<()> {
    let records = match &a.trace {
        Some(p) => load_trace(p)?,
        None => {
            let exp = experiment(common)?;
            let ops = generate(&exp.workload)?;
            let mut c = Cluster::new(exp.cluster.clone())?;
            let trace = c.run_window(&ops, &mut a.level.clone(), exp.window_us)?;
            let records = trace.all_ops();
            let path = out_file(common, "trace.csv")?;
            save_trace(&records, &path)?;
            println!("wrote {} operations to {}", records.len(), path.display());
            records
        }
    };
    let ops: Vec<IntervalOp> = records.iter().map(IntervalOp::from).collect();
    let report = gamma_score(&ops, common.percentile)?;

    let keys = out_file(common, "gamma.csv")?;
    write_with(&keys, |w| {
        writeln!(w, "key,gamma_us")?;
        for (k, g) in &report.per_key_gamma {
            writeln!(w, "{k},{g}")?;
        }
        Ok(())
    })?;
    let score = out_file(common, "gamma_score.csv")?;
    let line = format!("{},{},{},{:.3}", report.percentile, report.per_key_gamma.len(), report.score_us, report.score_ms());
    write_with(&score, |w| writeln!(w, "percentile,keys,score_us,score_ms\n{line}"))?;
    println!("percentile,keys,score_us,score_ms\n{line}");
    println!("wrote {} and {}", keys.display(), score.display());
    Ok(())
}

fn parse_perf_rows(path: &Path) -> Result<Vec<(String, f64, f64)>> {
    let text = std::fs::read_to_string(path).with_context(|| format!("cannot read {}", path.display()))?;
    let mut lines = text.lines().enumerate().filter(|(_, l)| !l.trim().is_empty());
    match lines.next() {
        Some((_, h)) if h.trim() == "name,overhead_ms,cv_error" => {}
        _ => bail!("{}:1: expected header `name,overhead_ms,cv_error`", path.display()),
    }
    let mut rows = Vec::new();
    for (i, line) in lines {
        let f: Vec<&str> = line.split(',').map(str::trim).collect();
        let num = |s: &str| -> Result<f64> {
            match s.parse::<f64>() {
                Ok(v) if v.is_finite() => Ok(v),
                _ => bail!("{}:{}: bad number {s:?}", path.display(), i + 1),
            }
        };
        if f.len() != 3 || f[0].is_empty() {
            bail!("{}:{}: expected `name,overhead_ms,cv_error`", path.display(), i + 1);
        }
        rows.push((f[0].to_string(), num(f[1])?, num(f[2])?));
    }
    if rows.is_empty() {
        bail!("{} has no rows", path.display());
    }
    Ok(rows)
}

pub fn perf_table(common: &Common, a: &PerfArgs) -> Result<()> {
    let cfg = PerfConfig {
        o_base: a.o_base,
        e_base: a.e_base,
        w_speedup: a.w_speedup,
        w_a: a.w_a,
    };
    cfg.validate()?;
    let mut table = String::from("name,overhead_ms,cv_error,perf\n");
    for (name, o, e) in parse_perf_rows(&a.metrics)? {
        let p = qtune_core::learner::perf(o, e, &cfg)?;
        table.push_str(&format!("{name},{o},{e},{p:.4}\n"));
    }
    let path = out_file(common, "perf.csv")?;
    write_with(&path, |w| w.write_all(table.as_bytes()))?;
    print!("{table}");
    println!("wrote {}", path.display());
    Ok(())
}
