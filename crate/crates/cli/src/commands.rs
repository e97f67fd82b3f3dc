use std::fs;
use std::path::{Path, PathBuf};

use atlas::data::{build_tensor, ingest_csv, read_tensor, write_tensor, ColumnMap, KeyValues, SalesTensor, Standardizer};
use atlas::eval::{compare as compare_methods, mae, rmse, Method, ALL_METHODS};
use atlas::factor::{parse_covariance_file, parse_group_file, resolve_groups, render_group_file, FactorModel, Group, GroupStructure};
use atlas::forecast::Extension;
use atlas::pipeline::{
    emit_forecasts, extend_model, fit_context, fit_model, parse_features_csv, parse_forecasts_csv, tune as tune_grid,
    write_forecasts_csv, ContextFeatures, ContextModel, ForecastCells, Mode, PipelineConfig, Window,
};
use atlas::synth::{export_iri_csv, generate as synthesize, SynthConfig};
use atlas::{AtlasError, Result};

use crate::args::{CompareArgs, EvaluateArgs, FitArgs, ForecastArgs, GenerateArgs, IngestArgs, PipelineArgs, TuneArgs};

const TENSOR_STEM: &str = "tensor";
const MODEL_FILE: &str = "model.txt";
const FIT_CONFIG_FILE: &str = "fit.conf";
const CONTEXT_FILE: &str = "context.csv";

fn read_text(path: &Path) -> Result<String> {
    fs::read_to_string(path).map_err(|e| AtlasError::io(path, e))
}

fn write_text(path: &Path, text: &str) -> Result<()> {
    fs::write(path, text).map_err(|e| AtlasError::io(path, e))
}

fn ensure_dir(path: &Path) -> Result<()> {
    fs::create_dir_all(path).map_err(|e| AtlasError::io(path, e))
}

fn overrides(set: &[(String, String)]) -> KeyValues {
    let mut kv = KeyValues::new();
    for (k, v) in set {
        kv.push(k.clone(), v);
    }
    kv
}

pub fn generate(a: GenerateArgs) -> Result<()> {
    let mut cfg = SynthConfig::default();
    if let Some(path) = &a.config {
        cfg.apply(&KeyValues::parse(&read_text(path)?)?)?;
    }
    let mut kv = KeyValues::new();
    let mut flag = |key: &str, v: Option<String>| {
        if let Some(v) = v {
            kv.push(key, v);
        }
    };
    flag("seed", a.seed.map(|v| v.to_string()));
    flag("n_stores", a.stores.map(|v| v.to_string()));
    flag("n_products", a.products.map(|v| v.to_string()));
    flag("n_weeks", a.weeks.map(|v| v.to_string()));
    flag("true_rank", a.rank.map(|v| v.to_string()));
    flag("n_store_groups", a.store_groups.map(|v| v.to_string()));
    flag("competition_rho", a.rho.map(|v| v.to_string()));
    flag("density", a.density.map(|v| v.to_string()));
    flag("noise_sigma", a.noise.map(|v| v.to_string()));
    flag("season_period", a.season.map(|v| v.to_string()));
    flag("trend_scale", a.trend.map(|v| v.to_string()));
    flag("week_noise", a.week_noise.map(|v| v.to_string()));
    cfg.apply(&kv)?;
    cfg.apply(&overrides(&a.set))?;

    let (tensor, truth) = synthesize(&cfg)?;
    ensure_dir(&a.out)?;
    export_iri_csv(&tensor, a.out.join("transactions.csv"))?;
    write_tensor(&tensor, Standardizer::identity(), &a.out.join(TENSOR_STEM))?;
    let groups = truth.groups();
    write_text(
        &a.out.join("groups.csv"),
        &render_group_file("store_id", tensor.store_ids(), &groups.store_groups, None),
    )?;
    write_text(&a.out.join("covariance.csv"), &render_covariances(&groups.store_groups))?;
    write_text(&a.out.join("truth.txt"), &truth.as_model(&tensor)?.to_text())?;
    write_text(&a.out.join("synth.conf"), &cfg.to_key_values().render())?;
    println!(
        "generated {} cells ({} stores x {} products x {} weeks) in {}",
        tensor.len(),
        tensor.n_stores(),
        tensor.n_products(),
        tensor.n_weeks(),
        a.out.display()
    );
    Ok(())
}

fn render_covariances(groups: &[Group]) -> String {
    let mut out = String::new();
    for g in groups {
        let values: Vec<String> = (0..g.sigma.nrows())
            .flat_map(|r| (0..g.sigma.ncols()).map(move |c| (r, c)))
            .map(|(r, c)| format!("{:e}", g.sigma[(r, c)]))
            .collect();
        out.push_str(&format!("{},{}\n", g.id, values.join(",")));
    }
    out
}

pub fn ingest(a: IngestArgs) -> Result<()> {
    let columns = ColumnMap {
        store: a.col_store,
        week: a.col_week,
        syscode: a.col_syscode,
        generation: a.col_gen,
        vendor: a.col_vendor,
        item: a.col_item,
        units: a.col_units,
        dollars: a.col_dollars,
    };
    let report = ingest_csv(&a.input, &columns)?;
    for r in report.rejected.iter().take(20) {
        log::warn!("line {}: {}", r.line, r.reason);
    }
    let tensor = build_tensor(&report.transactions, a.min_store, a.min_product)?;
    ensure_dir(&a.out)?;
    write_tensor(&tensor, Standardizer::identity(), &a.out.join(TENSOR_STEM))?;
    println!(
        "ingested {} transactions ({} rejected) into {} cells ({} stores x {} products x {} weeks)",
        report.transactions.len(),
        report.rejected.len(),
        tensor.len(),
        tensor.n_stores(),
        tensor.n_products(),
        tensor.n_weeks()
    );
    Ok(())
}

fn load_tensor(data: &Path) -> Result<SalesTensor> {
    let (tensor, standardizer) = read_tensor(&data.join(TENSOR_STEM))?;
    if standardizer != Standardizer::identity() {
        log::warn!("tensor metadata carries a standardizer; values are used as stored");
    }
    Ok(tensor)
}

/// Layers the named flags and `--set` pairs over `base`.
fn pipeline_config(a: &PipelineArgs, base: PipelineConfig) -> Result<PipelineConfig> {
    let mut cfg = base;
    if let Some(path) = &a.config {
        cfg.apply(&KeyValues::parse(&read_text(path)?)?)?;
    }
    let mut kv = KeyValues::new();
    if let Some(v) = a.k {
        kv.push("rank", v);
    }
    if let Some(v) = a.lambda1 {
        kv.push("lambda1", v);
        if a.lambda1_star.is_none() {
            kv.push("lambda1_star", v);
        }
    }
    if let Some(v) = a.lambda1_star {
        kv.push("lambda1_star", v);
    }
    if let Some(v) = a.lambda2 {
        kv.push("lambda2", v);
    }
    if let Some(v) = a.lambda3 {
        kv.push("lambda3", v);
    }
    if let Some(v) = a.horizon {
        kv.push("horizon", v);
    }
    if let Some(s) = a.split {
        kv.push("train_end", s.train_end);
        kv.push("valid_end", s.valid_end);
        kv.push("test_end", s.test_end);
    }
    if let Some(v) = &a.forecaster {
        kv.push("forecaster", v);
    }
    if let Some(v) = &a.standardize {
        kv.push("standardize", v);
    }
    if let Some(v) = a.seed {
        kv.push("seed", v);
    }
    if let Some(v) = a.max_iters {
        kv.push("max_iters", v);
    }
    if a.full_grid {
        kv.push("forecast_cells", ForecastCells::FullGrid);
    }
    cfg.apply(&kv)?;
    cfg.apply(&overrides(&a.set))?;
    cfg.validate()?;
    Ok(cfg)
}

/// An explicit path, else `default` inside the data directory if present.
fn optional_file(explicit: &Option<PathBuf>, data: &Path, default: &str) -> Option<PathBuf> {
    explicit.clone().or_else(|| Some(data.join(default)).filter(|p| p.is_file()))
}

fn load_group_list(ids: &[String], groups: &Path, covariance: Option<&Path>, rho: f64) -> Result<Vec<Group>> {
    let assignments = parse_group_file(&read_text(groups)?)?;
    let covariances = match covariance {
        Some(path) => parse_covariance_file(&read_text(path)?)?,
        None => Default::default(),
    };
    resolve_groups(ids, &assignments, &covariances, rho)
}

fn load_groups(a: &PipelineArgs, tensor: &SalesTensor) -> Result<GroupStructure> {
    let rho = a.rho.unwrap_or(0.0);
    let structure = GroupStructure {
        store_groups: match optional_file(&a.groups, &a.data, "groups.csv") {
            Some(path) => {
                let cov = optional_file(&a.covariance, &a.data, "covariance.csv");
                load_group_list(tensor.store_ids(), &path, cov.as_deref(), rho)?
            }
            None => GroupStructure::singletons(tensor.n_stores()).store_groups,
        },
        product_groups: match &a.product_groups {
            Some(path) => Some(load_group_list(tensor.product_ids(), path, a.product_covariance.as_deref(), rho)?),
            None => None,
        },
    };
    structure.validate(tensor.n_stores(), tensor.n_products())?;
    Ok(structure)
}

fn load_features(path: &Path, tensor: &SalesTensor) -> Result<ContextFeatures> {
    let file = fs::File::open(path).map_err(|e| AtlasError::io(path, e))?;
    parse_features_csv(file, tensor)
}

pub fn fit(a: FitArgs) -> Result<()> {
    let tensor = load_tensor(&a.pipeline.data)?;
    let mut cfg = pipeline_config(&a.pipeline, PipelineConfig::default())?;
    let groups = load_groups(&a.pipeline, &tensor)?;
    let split = cfg.split_for(tensor.n_weeks())?;
    cfg.split = Some(split);
    let mode = if a.end_to_end { Mode::EndToEnd } else { Mode::TwoStep };
    let (fit_tensor, context) = match &a.features {
        Some(path) => {
            let features = load_features(path, &tensor)?;
            let context = fit_context(&tensor.truncate_weeks(split.train_end), &features)?;
            (context.residualize(&tensor, &features).0, Some(context))
        }
        None => (tensor, None),
    };
    let fitted = fit_model(&fit_tensor, &groups, &cfg, mode, split.train_end)?;
    let out = a.out.unwrap_or_else(|| a.pipeline.data.clone());
    ensure_dir(&out)?;
    write_text(&out.join(MODEL_FILE), &fitted.model.to_text())?;
    write_text(&out.join(FIT_CONFIG_FILE), &cfg.render())?;
    write_text(&out.join("loss_trace.csv"), &fitted.model.loss_trace_csv())?;
    let context_path = out.join(CONTEXT_FILE);
    match &context {
        Some(c) => write_text(&context_path, &c.to_csv())?,
        None if context_path.is_file() => fs::remove_file(&context_path).map_err(|e| AtlasError::io(&context_path, e))?,
        None => {}
    }
    let m = &fitted.model;
    println!(
        "fitted rank {} on weeks 0..{}: {} cycles, final loss {:e}, converged {}",
        m.rank(),
        split.train_end,
        m.iterations_run,
        m.final_loss,
        m.converged
    );
    Ok(())
}

pub fn forecast(a: ForecastArgs) -> Result<()> {
    let data = &a.pipeline.data;
    let model_dir = a.model_dir.clone().unwrap_or_else(|| data.clone());
    let tensor = load_tensor(data)?;
    let base = PipelineConfig::from_key_values(&KeyValues::parse(&read_text(&model_dir.join(FIT_CONFIG_FILE))?)?)?;
    let split = base
        .split
        .ok_or_else(|| AtlasError::Schema(format!("{FIT_CONFIG_FILE} lacks the fitted split")))?;
    let mut cfg = pipeline_config(&a.pipeline, base)?;
    cfg.split = Some(split);
    let mut model = FactorModel::from_text(&read_text(&model_dir.join(MODEL_FILE))?)?;
    if model.store_ids != tensor.store_ids() || model.product_ids != tensor.product_ids() {
        return Err(AtlasError::Schema("model and tensor have different store or product ids".into()));
    }
    if model.w.nrows() != split.train_end {
        return Err(AtlasError::Schema(format!(
            "model covers {} weeks but the split trains on {}",
            model.w.nrows(),
            split.train_end
        )));
    }
    let context_path = model_dir.join(CONTEXT_FILE);
    let context = if context_path.is_file() {
        let model = ContextModel::from_csv(&read_text(&context_path)?)?;
        let path = a
            .features
            .as_ref()
            .ok_or_else(|| AtlasError::Argument("model was fitted with context features; pass --features".into()))?;
        Some((model, load_features(path, &tensor)?))
    } else {
        None
    };

    let window = Window {
        train_end: split.train_end,
        start: split.valid_end,
        end: split.valid_end + cfg.horizon,
    };
    if window.end > tensor.n_weeks() && cfg.forecast_cells == ForecastCells::Observed {
        log::warn!("forecast weeks past week {} have no observed cells; use --full-grid", tensor.n_weeks());
    }
    let dims = extend_model(&mut model, None, &cfg, Mode::TwoStep, window.end)?;
    let mut forecasts = emit_forecasts(&tensor, cfg.forecast_cells, window, |i, j, t| model.predict(i, j, t))?;
    if let Some((context, features)) = &context {
        let mut missing = 0;
        for f in &mut forecasts {
            let (y, ok) = context.recompose(f.store, f.product, f.week, f.y_hat, features);
            missing += usize::from(!ok);
            f.y_hat = y;
        }
        if missing > 0 {
            log::warn!("{missing} forecast cells lack context features; context term omitted");
        }
    }

    let out = a.out.unwrap_or_else(|| model_dir.join("forecast.csv"));
    let file = fs::File::create(&out).map_err(|e| AtlasError::io(&out, e))?;
    write_forecasts_csv(&tensor, &forecasts, std::io::BufWriter::new(file))?;
    if let Some(path) = &a.coefficients {
        let ext = Extension { w: model.w.clone(), dimensions: dims };
        write_text(path, &ext.coefficients_csv())?;
    }
    println!(
        "wrote {} forecasts for weeks {}..{} to {}",
        forecasts.len(),
        window.start,
        window.end,
        out.display()
    );
    Ok(())
}

pub fn evaluate(a: EvaluateArgs) -> Result<()> {
    let file = fs::File::open(&a.forecasts).map_err(|e| AtlasError::io(&a.forecasts, e))?;
    let rows = parse_forecasts_csv(file)?;
    let pairs: Vec<(f64, f64)> = rows.iter().filter_map(|r| r.y_true.map(|y| (y, r.y_hat))).collect();
    if pairs.is_empty() {
        return Err(AtlasError::Argument("forecast file has no rows with y_true".into()));
    }
    println!("cells={}", pairs.len());
    println!("rmse={}", rmse(&pairs)?);
    println!("mae={}", mae(&pairs)?);
    Ok(())
}

pub fn tune(a: TuneArgs) -> Result<()> {
    let tensor = load_tensor(&a.pipeline.data)?;
    let cfg = pipeline_config(&a.pipeline, PipelineConfig::default())?;
    let groups = load_groups(&a.pipeline, &tensor)?;
    let result = tune_grid(&tensor, &groups, &cfg)?;
    let out = a.out.unwrap_or_else(|| a.pipeline.data.clone());
    ensure_dir(&out)?;
    write_text(&out.join("leaderboard.csv"), &result.leaderboard_csv())?;
    let mut best = result.best.clone();
    best.split = Some(best.split_for(tensor.n_weeks())?);
    write_text(&out.join("best.conf"), &best.render())?;
    print!("{}", result.leaderboard_csv());
    println!(
        "best: rank={} lambda1={} lambda2={}",
        best.fit.rank, best.fit.lambda1, best.fit.lambda2
    );
    Ok(())
}

pub fn compare(a: CompareArgs) -> Result<()> {
    let tensor = load_tensor(&a.pipeline.data)?;
    let cfg = pipeline_config(&a.pipeline, PipelineConfig::default())?;
    let groups = load_groups(&a.pipeline, &tensor)?;
    let methods: Vec<Method> = if a.methods.is_empty() {
        ALL_METHODS.to_vec()
    } else {
        a.methods.iter().map(|m| m.trim().parse()).collect::<Result<_>>()?
    };
    let report = compare_methods(&tensor, &groups, &methods, &cfg, a.tuned)?;
    let out = a.out.unwrap_or_else(|| a.pipeline.data.clone());
    ensure_dir(&out)?;
    write_text(&out.join("report.csv"), &report.to_csv())?;
    write_text(&out.join("report.txt"), &report.to_table())?;
    write_text(&out.join("report.dat"), &report.gnuplot_data())?;
    print!("{}", report.to_table());
    Ok(())
}
