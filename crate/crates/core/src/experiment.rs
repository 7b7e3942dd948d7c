//! End-to-end protocol: split, normalize, basis, triplets, model selection on
//! validation data, test error, report files.

use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};
use std::time::Instant;

use serde::{Deserialize, Serialize};

use crate::basisgen::{generate_basis, BasisGenConfig};
use crate::dataset::{Dataset, Standardizer};
use crate::embed::pca_fit;
use crate::error::{Result, ScmlError};
use crate::eval::{error_rate, select_beta, split, Metric, SplitIndices, SplitSpec};
use crate::exec::Exec;
use crate::io::{export_csv, fmt_f64, ingest, trace_csv, triplets_csv, Format};
use crate::metric::{BasisSet, Triplet};
use crate::models::{
    embed_tilde_dataset, fit_mt_scml, fit_scml_global, fit_scml_local, GlobalModel, LocalModel, Model, ModelFile, MultiTaskModel,
    Preprocessing, TaskData,
};
use crate::optim::{anchor_weights, TrainConfig};
use crate::triplets::{generate_triplets, TripletConfig};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Mode {
    Global,
    Multitask,
    Local,
    EuclideanBaseline,
}

impl std::str::FromStr for Mode {
    type Err = ScmlError;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "global" => Ok(Mode::Global),
            "multitask" | "mt" => Ok(Mode::Multitask),
            "local" => Ok(Mode::Local),
            "euclidean-baseline" | "euclidean" => Ok(Mode::EuclideanBaseline),
            other => Err(ScmlError::InvalidArgument(format!("unknown mode `{other}`"))),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DataSource {
    pub path: PathBuf,
    #[serde(default)]
    pub format: Format,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct PreprocessConfig {
    pub standardize: bool,
    pub pca_dim: Option<usize>,
}

impl Default for PreprocessConfig {
    fn default() -> Self {
        PreprocessConfig { standardize: true, pca_dim: None }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ExperimentConfig {
    /// One source per task; single-task modes use the first.
    pub datasets: Vec<DataSource>,
    pub mode: Mode,
    pub preprocessing: PreprocessConfig,
    pub basisgen: BasisGenConfig,
    pub triplets: TripletConfig,
    pub train: TrainConfig,
    pub beta_grid: Vec<f64>,
    /// Kernel-PCA dimension for local mode.
    pub d_prime: usize,
    pub k: usize,
    pub split: SplitSpec,
    pub seeds: Vec<u64>,
    pub output_dir: Option<PathBuf>,
    pub write_triplets: bool,
    /// Also write each selected model and the raw rows of its training split.
    pub save_models: bool,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        ExperimentConfig {
            datasets: Vec::new(),
            mode: Mode::Global,
            preprocessing: PreprocessConfig::default(),
            basisgen: BasisGenConfig::default(),
            triplets: TripletConfig::default(),
            train: TrainConfig::default(),
            beta_grid: vec![1e-4, 1e-3, 1e-2, 1e-1, 1.0],
            d_prime: 40,
            k: 3,
            split: SplitSpec::default(),
            seeds: vec![1],
            output_dir: None,
            write_triplets: false,
            save_models: false,
        }
    }
}

impl ExperimentConfig {
    pub fn from_json_file(path: &Path) -> Result<Self> {
        let cfg: ExperimentConfig = serde_json::from_str(&fs::read_to_string(path)?)?;
        Ok(cfg)
    }

    pub fn validate(&self) -> Result<()> {
        if self.datasets.is_empty() {
            return Err(ScmlError::InvalidArgument("no dataset given".into()));
        }
        if self.mode == Mode::Multitask && self.datasets.len() < 2 {
            return Err(ScmlError::InvalidArgument("multitask mode needs at least two datasets".into()));
        }
        if self.seeds.is_empty() {
            return Err(ScmlError::Empty("seed list"));
        }
        if self.mode != Mode::EuclideanBaseline && self.beta_grid.is_empty() {
            return Err(ScmlError::Empty("beta grid"));
        }
        if self.beta_grid.iter().any(|b| !(b.is_finite() && *b >= 0.0)) {
            return Err(ScmlError::InvalidArgument("beta values must be finite and >= 0".into()));
        }
        if self.k == 0 {
            return Err(ScmlError::InvalidArgument("k must be positive".into()));
        }
        if self.mode == Mode::Local && self.d_prime == 0 {
            return Err(ScmlError::InvalidArgument("d_prime must be positive".into()));
        }
        if self.preprocessing.pca_dim == Some(0) {
            return Err(ScmlError::InvalidArgument("pca_dim must be positive".into()));
        }
        self.basisgen.validate()?;
        self.train.validate()
    }

    pub fn load_datasets(&self) -> Result<Vec<Dataset>> {
        let wanted = if self.mode == Mode::Multitask { self.datasets.len() } else { 1 };
        self.datasets[..wanted].iter().map(|s| ingest(&s.path, s.format)).collect()
    }

    fn train_cfg(&self, seed: u64, beta: f64) -> TrainConfig {
        TrainConfig { beta, rng_seed: self.train.rng_seed.wrapping_add(seed), ..self.train.clone() }
    }

    fn basis_cfg(&self, seed: u64) -> BasisGenConfig {
        BasisGenConfig { rng_seed: self.basisgen.rng_seed.wrapping_add(seed), ..self.basisgen.clone() }
    }
}

/// Train / validation / test splits with preprocessing fitted on train.
#[derive(Debug, Clone)]
pub struct Prepared {
    pub train: Dataset,
    pub val: Dataset,
    pub test: Dataset,
    pub preprocessing: Preprocessing,
    pub indices: SplitIndices,
}

pub fn prepare(ds: &Dataset, cfg: &PreprocessConfig, spec: SplitSpec, seed: u64) -> Result<Prepared> {
    let idx = split(ds, spec, seed)?;
    let raw_train = ds.subset(&idx.train)?;
    let mut pre = Preprocessing::default();
    if cfg.standardize {
        pre.standardizer = Some(Standardizer::fit(&raw_train));
    }
    if let Some(d) = cfg.pca_dim {
        let base = match &pre.standardizer {
            Some(s) => s.apply(&raw_train)?,
            None => raw_train.clone(),
        };
        pre.pca = Some(pca_fit(base.features(), d.min(base.dim()).min(base.n()))?);
    }
    Ok(Prepared {
        train: pre.apply(&raw_train)?,
        val: pre.apply(&ds.subset(&idx.val)?)?,
        test: pre.apply(&ds.subset(&idx.test)?)?,
        preprocessing: pre,
        indices: idx,
    })
}

/// Outcome of one seed. `errors`, `beta` and `nnz` are keyed by model name.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SeedReport {
    pub seed: u64,
    pub ok: bool,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub failure: Option<String>,
    pub errors: BTreeMap<String, f64>,
    pub beta: BTreeMap<String, f64>,
    pub nnz: BTreeMap<String, usize>,
    pub basis_size: usize,
    pub n_triplets: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Summary {
    pub n: usize,
    pub mean: f64,
    /// Sample standard deviation over seeds divided by `sqrt(n)`; absent for one seed.
    pub stderr: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Report {
    pub mode: Mode,
    pub per_seed: Vec<SeedReport>,
    pub summary: BTreeMap<String, Summary>,
    pub mean_nnz: BTreeMap<String, f64>,
    pub config: ExperimentConfig,
    /// Wall-clock seconds per seed and stage. Not deterministic.
    pub runtimes: Vec<BTreeMap<String, f64>>,
}

/// Mean and standard error of `values`.
pub fn summarize(values: &[f64]) -> Option<Summary> {
    let n = values.len();
    if n == 0 {
        return None;
    }
    let mean = values.iter().sum::<f64>() / n as f64;
    let stderr = (n > 1).then(|| {
        let var = values.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / (n - 1) as f64;
        var.sqrt() / (n as f64).sqrt()
    });
    Some(Summary { n, mean, stderr })
}

/// Side files produced by one seed, written after all seeds finish.
#[derive(Default)]
struct Artifacts {
    files: Vec<(String, String)>,
}

impl Artifacts {
    fn model(&mut self, name: String, model: Model, pre: &Preprocessing) -> Result<()> {
        let doc = ModelFile { model, preprocessing: pre.clone() };
        self.files.push((name, serde_json::to_string_pretty(&doc)?));
        Ok(())
    }
}

struct Timer {
    stages: BTreeMap<String, f64>,
    last: Instant,
}

impl Timer {
    fn new() -> Self {
        Timer { stages: BTreeMap::new(), last: Instant::now() }
    }

    fn lap(&mut self, stage: &str) {
        let now = Instant::now();
        *self.stages.entry(stage.to_string()).or_default() += (now - self.last).as_secs_f64();
        self.last = now;
    }
}

fn empty_seed(seed: u64) -> SeedReport {
    SeedReport {
        seed,
        ok: true,
        failure: None,
        errors: BTreeMap::new(),
        beta: BTreeMap::new(),
        nnz: BTreeMap::new(),
        basis_size: 0,
        n_triplets: 0,
    }
}

/// Global model picked by validation error over the beta grid.
pub fn select_global(
    cfg: &ExperimentConfig,
    seed: u64,
    p: &Prepared,
    basis: &BasisSet,
    triplets: &[Triplet],
) -> Result<(GlobalModel, f64)> {
    let sel = select_beta(
        &cfg.beta_grid,
        |beta| fit_scml_global(&p.train, basis, triplets, &cfg.train_cfg(seed, beta), Some(&p.val)),
        |m| error_rate(Metric::Global(m), &p.train, &p.val, cfg.k),
    )?;
    Ok((sel.model, sel.beta))
}

pub fn select_local(
    cfg: &ExperimentConfig,
    seed: u64,
    p: &Prepared,
    basis: &BasisSet,
    triplets: &[Triplet],
    warm: &GlobalModel,
) -> Result<(LocalModel, f64)> {
    let sel = select_beta(
        &cfg.beta_grid,
        |beta| fit_scml_local(&p.train, basis, triplets, &cfg.train_cfg(seed, beta), cfg.d_prime, warm, Some(&p.val)),
        |m| error_rate(Metric::Local(m), &p.train, &p.val, cfg.k),
    )?;
    Ok((sel.model, sel.beta))
}

fn run_single(cfg: &ExperimentConfig, ds: &Dataset, seed: u64, rep: &mut SeedReport, art: &mut Artifacts, timer: &mut Timer) -> Result<()> {
    let p = prepare(ds, &cfg.preprocessing, cfg.split, seed)?;
    timer.lap("prepare");
    rep.errors.insert("euclidean".into(), error_rate(Metric::Euclidean, &p.train, &p.test, cfg.k)?);
    timer.lap("euclidean");
    if cfg.mode == Mode::EuclideanBaseline {
        return Ok(());
    }
    let basis = generate_basis(&p.train, &cfg.basis_cfg(seed))?;
    rep.basis_size = basis.len();
    timer.lap("basis");
    let ts = generate_triplets(&p.train, &cfg.triplets)?;
    rep.n_triplets = ts.triplets.len();
    if cfg.write_triplets {
        art.files.push((format!("triplets_seed{seed}.csv"), triplets_csv(&p.train, &ts.triplets)));
    }
    timer.lap("triplets");
    let (global, gbeta) = select_global(cfg, seed, &p, &basis, &ts.triplets)?;
    rep.errors.insert("global".into(), error_rate(Metric::Global(&global), &p.train, &p.test, cfg.k)?);
    rep.beta.insert("global".into(), gbeta);
    rep.nnz.insert("global".into(), global.nnz());
    art.files.push((format!("trace_seed{seed}_global.csv"), trace_csv(&global.trace)));
    if cfg.save_models {
        art.files.push((format!("train_seed{seed}.csv"), export_csv(&ds.subset(&p.indices.train)?)));
        art.model(format!("model_seed{seed}_global.json"), Model::Global(global.clone()), &p.preprocessing)?;
    }
    timer.lap("global");
    if cfg.mode != Mode::Local {
        return Ok(());
    }
    let (local, lbeta) = select_local(cfg, seed, &p, &basis, &ts.triplets, &global)?;
    rep.errors.insert("local".into(), error_rate(Metric::Local(&local), &p.train, &p.test, cfg.k)?);
    rep.beta.insert("local".into(), lbeta);
    rep.nnz.insert("local".into(), local.selected_columns().len());
    art.files.push((format!("trace_seed{seed}_local.csv"), trace_csv(&local.trace)));
    art.files.push((format!("embedding2d_seed{seed}.csv"), export_2d(&p.train, &local)?));
    if cfg.save_models {
        art.model(format!("model_seed{seed}_local.json"), Model::Local(local), &p.preprocessing)?;
    }
    timer.lap("local");
    Ok(())
}

/// Per training point: 2D PCA of its features and 1D PCA of its local weight
/// vector, for plotting how the metric varies.
pub fn export_2d(train: &Dataset, model: &LocalModel) -> Result<String> {
    let fx = pca_fit(train.features(), 2.min(train.dim()).min(train.n()))?;
    let w = anchor_weights(&model.atilde, &embed_tilde_dataset(&model.embedding, train)?);
    let fw = pca_fit(&w, 1.min(w.ncols()))?;
    let mut out = String::from("index,label,x1,x2,weight_pc1\n");
    for i in 0..train.n() {
        let xy = fx.transform(train.row(i))?;
        let wv = fw.transform(w.row(i).as_slice().expect("layout"))?;
        let x2 = xy.get(1).copied().unwrap_or(0.0);
        out.push_str(&format!("{i},{},{},{},{}\n", train.label(i), fmt_f64(xy[0]), fmt_f64(x2), fmt_f64(wv[0])));
    }
    Ok(out)
}

fn run_multitask(cfg: &ExperimentConfig, tasks: &[Dataset], seed: u64, rep: &mut SeedReport, art: &mut Artifacts, timer: &mut Timer) -> Result<()> {
    let prepared: Vec<Prepared> = tasks.iter().map(|d| prepare(d, &cfg.preprocessing, cfg.split, seed)).collect::<Result<_>>()?;
    timer.lap("prepare");
    let bases: Vec<BasisSet> = prepared.iter().map(|p| generate_basis(&p.train, &cfg.basis_cfg(seed))).collect::<Result<_>>()?;
    timer.lap("basis");
    let trips: Vec<Vec<Triplet>> =
        prepared.iter().map(|p| generate_triplets(&p.train, &cfg.triplets).map(|t| t.triplets)).collect::<Result<_>>()?;
    rep.basis_size = bases.iter().map(BasisSet::len).sum();
    rep.n_triplets = trips.iter().map(Vec::len).sum();
    timer.lap("triplets");

    let mut independent = Vec::new();
    let mut indep_nnz = 0;
    for (t, p) in prepared.iter().enumerate() {
        let (m, _) = select_global(cfg, seed, p, &bases[t], &trips[t])?;
        let e = error_rate(Metric::Global(&m), &p.train, &p.test, cfg.k)?;
        rep.errors.insert(format!("task{t}_euclidean"), error_rate(Metric::Euclidean, &p.train, &p.test, cfg.k)?);
        rep.errors.insert(format!("task{t}_independent"), e);
        independent.push(e);
        indep_nnz += m.nnz();
    }
    rep.errors.insert("independent".into(), independent.iter().sum::<f64>() / independent.len() as f64);
    rep.nnz.insert("independent".into(), indep_nnz);
    timer.lap("independent");

    let task_data: Vec<TaskData<'_>> =
        prepared.iter().zip(&trips).map(|(p, t)| TaskData { train: &p.train, triplets: t, val: Some(&p.val) }).collect();
    let mt_error = |m: &MultiTaskModel, test: bool| -> Result<Vec<f64>> {
        prepared
            .iter()
            .enumerate()
            .map(|(t, p)| error_rate(Metric::MultiTask(m, t), &p.train, if test { &p.test } else { &p.val }, cfg.k))
            .collect()
    };
    let sel = select_beta(
        &cfg.beta_grid,
        |beta| fit_mt_scml(&task_data, &bases, &cfg.train_cfg(seed, beta)),
        |m| Ok(mt_error(m, false)?.iter().sum::<f64>() / prepared.len() as f64),
    )?;
    let errs = mt_error(&sel.model, true)?;
    for (t, e) in errs.iter().enumerate() {
        rep.errors.insert(format!("task{t}_multitask"), *e);
    }
    rep.errors.insert("multitask".into(), errs.iter().sum::<f64>() / errs.len() as f64);
    rep.beta.insert("multitask".into(), sel.beta);
    rep.nnz.insert("multitask".into(), sel.model.selected_columns().len());
    art.files.push((format!("trace_seed{seed}_multitask.csv"), trace_csv(&sel.model.trace)));
    timer.lap("multitask");
    Ok(())
}

fn run_seed(cfg: &ExperimentConfig, data: &[Dataset], seed: u64) -> (SeedReport, Artifacts, BTreeMap<String, f64>) {
    let mut rep = empty_seed(seed);
    let mut art = Artifacts::default();
    let mut timer = Timer::new();
    let res = match cfg.mode {
        Mode::Multitask => run_multitask(cfg, data, seed, &mut rep, &mut art, &mut timer),
        _ => run_single(cfg, &data[0], seed, &mut rep, &mut art, &mut timer),
    };
    if let Err(e) = res {
        log::warn!("seed {seed} failed: {e}");
        rep = SeedReport { ok: false, failure: Some(e.to_string()), ..empty_seed(seed) };
        art = Artifacts::default();
    }
    (rep, art, timer.stages)
}

/// Runs every seed on preloaded data and aggregates. Writes nothing.
pub fn run_on(cfg: &ExperimentConfig, data: &[Dataset]) -> Result<(Report, Vec<(String, String)>)> {
    cfg.validate()?;
    let outcomes = Exec::default().map_slice(&cfg.seeds, |&s| run_seed(cfg, data, s));
    let mut per_seed = Vec::new();
    let mut runtimes = Vec::new();
    let mut files = Vec::new();
    for (rep, art, mut stages) in outcomes {
        stages.insert("seed".into(), rep.seed as f64);
        runtimes.push(stages);
        files.extend(art.files);
        per_seed.push(rep);
    }
    let ok: Vec<&SeedReport> = per_seed.iter().filter(|r| r.ok).collect();
    if ok.is_empty() {
        let reasons: Vec<String> = per_seed.iter().filter_map(|r| r.failure.clone()).collect();
        return Err(ScmlError::Degenerate(format!("every seed failed: {}", reasons.join("; "))));
    }
    let mut summary = BTreeMap::new();
    let keys: Vec<String> = ok[0].errors.keys().cloned().collect();
    for key in &keys {
        let vals: Vec<f64> = ok.iter().filter_map(|r| r.errors.get(key).copied()).collect();
        if let Some(s) = summarize(&vals) {
            summary.insert(key.clone(), s);
        }
    }
    let mut mean_nnz = BTreeMap::new();
    for key in ok[0].nnz.keys() {
        let vals: Vec<f64> = ok.iter().filter_map(|r| r.nnz.get(key).map(|&v| v as f64)).collect();
        mean_nnz.insert(key.clone(), vals.iter().sum::<f64>() / vals.len() as f64);
    }
    let mut rows = String::from("seed,model,error\n");
    for r in &ok {
        for (k, v) in &r.errors {
            rows.push_str(&format!("{},{k},{}\n", r.seed, fmt_f64(*v)));
        }
    }
    files.push(("errors.csv".into(), rows));
    let report = Report { mode: cfg.mode, per_seed, summary, mean_nnz, config: cfg.clone(), runtimes };
    Ok((report, files))
}

/// Loads the configured datasets, runs every seed and writes `report.json`
/// plus the CSV side files into the output directory, if one is set.
pub fn run_experiment(cfg: &ExperimentConfig) -> Result<Report> {
    cfg.validate()?;
    let data = cfg.load_datasets()?;
    let (report, files) = run_on(cfg, &data)?;
    if let Some(dir) = &cfg.output_dir {
        write_outputs(dir, &report, &files)?;
    }
    Ok(report)
}

pub fn write_outputs(dir: &Path, report: &Report, files: &[(String, String)]) -> Result<()> {
    fs::create_dir_all(dir)?;
    fs::write(dir.join("report.json"), serde_json::to_string_pretty(report)?)?;
    for (name, body) in files {
        fs::write(dir.join(name), body)?;
    }
    Ok(())
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepRow {
    pub seed: u64,
    pub k: usize,
    pub mode: Mode,
    pub basis_size: usize,
    pub selected: usize,
    pub test_error: f64,
}

/// Refits global (and, if asked, local) models at each basis budget.
///
/// Splits and triplets are shared across budgets within a seed.
pub fn basis_sweep(cfg: &ExperimentConfig, data: &Dataset, k_values: &[usize], modes: &[Mode]) -> Result<Vec<SweepRow>> {
    cfg.validate()?;
    if k_values.is_empty() || k_values.windows(2).any(|w| w[0] > w[1]) {
        return Err(ScmlError::InvalidArgument("K values must be nonempty and ascending".into()));
    }
    if modes.iter().any(|m| !matches!(m, Mode::Global | Mode::Local)) {
        return Err(ScmlError::InvalidArgument("sweep supports global and local modes".into()));
    }
    let per_seed = Exec::default().map_slice(&cfg.seeds, |&seed| -> Result<Vec<SweepRow>> {
        let p = prepare(data, &cfg.preprocessing, cfg.split, seed)?;
        let ts = generate_triplets(&p.train, &cfg.triplets)?.triplets;
        let mut rows = Vec::new();
        for &k in k_values {
            let bcfg = BasisGenConfig { basis_budget: Some(k), ..cfg.basis_cfg(seed) };
            let basis = generate_basis(&p.train, &bcfg)?;
            let (global, _) = select_global(cfg, seed, &p, &basis, &ts)?;
            if modes.contains(&Mode::Global) {
                rows.push(SweepRow {
                    seed,
                    k,
                    mode: Mode::Global,
                    basis_size: basis.len(),
                    selected: global.nnz(),
                    test_error: error_rate(Metric::Global(&global), &p.train, &p.test, cfg.k)?,
                });
            }
            if modes.contains(&Mode::Local) {
                let (local, _) = select_local(cfg, seed, &p, &basis, &ts, &global)?;
                rows.push(SweepRow {
                    seed,
                    k,
                    mode: Mode::Local,
                    basis_size: basis.len(),
                    selected: local.selected_columns().len(),
                    test_error: error_rate(Metric::Local(&local), &p.train, &p.test, cfg.k)?,
                });
            }
        }
        Ok(rows)
    });
    let mut out = Vec::new();
    for rows in per_seed {
        out.extend(rows?);
    }
    Ok(out)
}

pub fn sweep_csv(rows: &[SweepRow]) -> String {
    let mut out = String::from("seed,K,mode,basis_size,selected,test_error\n");
    for r in rows {
        let mode = serde_json::to_value(r.mode).ok().and_then(|v| v.as_str().map(String::from)).unwrap_or_default();
        out.push_str(&format!("{},{},{mode},{},{},{}\n", r.seed, r.k, r.basis_size, r.selected, fmt_f64(r.test_error)));
    }
    out
}

/// Mean of `values` per key of `rows`, in key order.
pub fn mean_by<K: Ord + Clone>(rows: &[SweepRow], key: impl Fn(&SweepRow) -> K, value: impl Fn(&SweepRow) -> f64) -> Vec<(K, f64)> {
    let mut acc: BTreeMap<K, (f64, usize)> = BTreeMap::new();
    for r in rows {
        let e = acc.entry(key(r)).or_insert((0.0, 0));
        e.0 += value(r);
        e.1 += 1;
    }
    acc.into_iter().map(|(k, (s, n))| (k, s / n as f64)).collect()
}
