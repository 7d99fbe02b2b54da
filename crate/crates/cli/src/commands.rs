use std::collections::HashMap;
use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use serde_json::json;
use surprise_core::clustering::surprise_assign;
use surprise_core::fewshot::train;
use surprise_core::io::{digest_bytes, load_embeddings, load_labels, read_adapter, write_adapter, write_text};
use surprise_core::report::{
    cell_seed, crossover_study, ensemble_sample, emit_plot_data, emit_report, fewshot_study, Dataset, ExperimentSpec, ReportFormat,
    Sampling, StudyReport,
};
use surprise_core::stats::mean_and_sample_std;
use surprise_core::{
    adjusted_rand, build_queries, evaluate, kmeans, pairwise_matrix, v_measure, EmbeddingSet, Error, LabelSet,
    MixedScorer, RunConfig,
};

use crate::args::{
    ClassifyArgs, Cli, ClusterArgs, Command, CrossoverArgs, FewshotArgs, Labels, ScoreArgs, Study, TrainArgs,
};
use crate::CliError;

type Result<T> = std::result::Result<T, CliError>;

pub fn run(cli: Cli) -> Result<()> {
    match cli.command {
        Command::Score(a) => score(a),
        Command::Classify(a) => classify(a),
        Command::Train(a) => train_adapter(a),
        Command::Cluster(a) => cluster(a),
        Command::Study(Study::Crossover(a)) => study_crossover(a),
        Command::Study(Study::Fewshot(a)) => study_fewshot(a),
    }
}

fn validated(config: RunConfig) -> Result<RunConfig> {
    config.validate().map_err(|e| CliError::Usage(e.to_string()))?;
    Ok(config)
}

fn sibling(out: &Path, suffix: &str) -> PathBuf {
    let mut name = out.as_os_str().to_owned();
    name.push(suffix);
    PathBuf::from(name)
}

fn write_config(path: &Path, config: &RunConfig) -> Result<()> {
    Ok(write_text(path, &(config.to_json() + "\n"))?)
}

fn create_dir(dir: &Path) -> Result<()> {
    std::fs::create_dir_all(dir).map_err(|source| Error::Io { path: dir.to_path_buf(), source })?;
    Ok(())
}

fn load_queries(labels: &Labels, config: &RunConfig) -> Result<EmbeddingSet> {
    let embedded = load_embeddings(&labels.labels_embedded)?;
    match &labels.labels {
        Some(names) => {
            let set = LabelSet::with_template(names.clone(), config.template.clone())?;
            Ok(build_queries(&set, &embedded)?)
        }
        None => Ok(embedded),
    }
}

fn load_gold(path: &Path, docs: &EmbeddingSet) -> Result<HashMap<String, String>> {
    let file = load_labels(path)?;
    file.check_resolves(docs)?;
    Ok(file.to_map())
}

fn score(a: ScoreArgs) -> Result<()> {
    let config = validated(a.common.resolve()?)?;
    let keys = load_embeddings(&a.keys)?;
    let queries = load_embeddings(&a.queries)?;
    let ensemble = match &a.ensemble {
        Some(p) => load_embeddings(p)?,
        None => keys.clone(),
    };
    let ensemble_psi = pairwise_matrix(&ensemble, &queries, config.kind)?;
    let scorer = MixedScorer::fit(&ensemble_psi, &queries, &config.mix(), config.kind, config.estimator)?;
    let psi = pairwise_matrix(&keys, &queries, config.kind)?;
    let mut csv = String::from("key_id,query_id,psi,rescaled,surprise,mixed\n");
    for (i, key) in keys.iter().enumerate() {
        for (j, query) in queries.iter().enumerate() {
            let p = psi.get(i, j);
            writeln!(
                csv,
                "{},{},{},{},{},{}",
                key.id,
                query.id,
                p,
                scorer.rescaled(p, j),
                scorer.surprise(p, j),
                scorer.score(p, j)
            )
            .unwrap();
        }
    }
    match &a.out {
        Some(out) => {
            write_text(out, &csv)?;
            write_config(&sibling(out, ".config.json"), &config)?;
        }
        None => print!("{csv}"),
    }
    Ok(())
}

fn classify(a: ClassifyArgs) -> Result<()> {
    let mut config = a.common.resolve()?;
    a.labels.apply(&mut config);
    let config = validated(config)?;
    let mut docs = load_embeddings(&a.docs)?;
    let mut queries = load_queries(&a.labels, &config)?;
    let mut ensemble = match &a.ensemble {
        Some(p) => load_embeddings(p)?,
        None => docs.clone(),
    };
    if let Some(n) = a.ensemble_sample {
        ensemble = ensemble_sample(&ensemble, n, config.master_seed)?;
    }
    if let Some(path) = &a.adapter {
        let (_, adapter) = read_adapter(path)?;
        docs = adapter.apply_set(&docs)?;
        queries = adapter.apply_set(&queries)?;
        ensemble = adapter.apply_set(&ensemble)?;
    }
    let mix = config.mix();
    let weight = mix.weight(ensemble.len())?;
    let preds = surprise_core::classify(&docs, &queries, &ensemble, &mix, config.kind, config.estimator)?;
    let mut csv = String::from("key_id,label,score\n");
    for p in &preds {
        writeln!(csv, "{},{},{}", p.key_id, p.label, p.score).unwrap();
    }
    write_text(&a.out, &csv)?;
    let mut metrics = json!({
        "documents": docs.len(),
        "ensemble_size": ensemble.len(),
        "weight": weight,
    });
    let mut line = format!("documents={} ensemble_size={} weight={weight:.6}", docs.len(), ensemble.len());
    if let Some(path) = &a.gold {
        let gold = load_gold(path, &docs)?;
        let labels: Vec<String> = queries.ids().map(str::to_string).collect();
        let labelled: Vec<_> = preds.iter().filter(|p| gold.contains_key(&p.key_id)).cloned().collect();
        let eval = evaluate(&labelled, &gold, &labels)?;
        metrics["accuracy"] = json!(eval.accuracy);
        metrics["macro_f1"] = json!(eval.macro_f1);
        metrics["per_label_f1"] = json!(eval.per_label_f1.iter().map(|(l, f)| json!({"label": l, "f1": f})).collect::<Vec<_>>());
        write!(line, " accuracy={:.6} macro_f1={:.6}", eval.accuracy, eval.macro_f1).unwrap();
    }
    write_text(sibling(&a.out, ".metrics.json"), &(serde_json::to_string_pretty(&metrics).unwrap() + "\n"))?;
    write_config(&sibling(&a.out, ".config.json"), &config)?;
    println!("{line}");
    Ok(())
}

fn train_adapter(a: TrainArgs) -> Result<()> {
    let mut config = a.common.resolve()?;
    a.labels.apply(&mut config);
    a.hyper.apply(&mut config);
    let config = validated(config)?;
    let docs = load_embeddings(&a.docs)?;
    let queries = load_queries(&a.labels, &config)?;
    let gold = load_gold(&a.gold, &docs)?;
    let labelled: Vec<usize> = (0..docs.len()).filter(|&i| gold.contains_key(&docs.records()[i].id)).collect();
    let keys = docs.subset(&labelled)?;
    let outcome = train(&keys, &gold, &queries, &config.train)?;
    write_adapter(&a.out, &outcome.adapter, config.train.seed, digest_bytes(config.to_json().as_bytes()))?;
    let mut history = String::from("epoch,mean_cross_entropy,mean_focal\n");
    for e in &outcome.history {
        writeln!(history, "{},{},{}", e.epoch, e.mean_cross_entropy, e.mean_focal).unwrap();
    }
    write_text(sibling(&a.out, ".history.csv"), &history)?;
    write_config(&sibling(&a.out, ".config.json"), &config)?;
    let last = outcome.history.last().map(|e| e.mean_cross_entropy).unwrap_or(f64::NAN);
    println!(
        "pairs={} epochs={} converged={} final_cross_entropy={last:.6}",
        keys.len() * queries.len(),
        outcome.history.len(),
        outcome.converged
    );
    Ok(())
}

fn cluster(a: ClusterArgs) -> Result<()> {
    let mut config = a.common.resolve()?;
    if let Some(r) = a.repeats {
        config.repeats = r;
    }
    if let Some(m) = a.max_iter {
        config.max_iter = m;
    }
    let config = validated(config)?;
    let docs = load_embeddings(&a.docs)?;
    let gold = match &a.gold {
        Some(p) => Some(load_gold(p, &docs)?),
        None => None,
    };
    let labelled: Vec<usize> = match &gold {
        Some(g) => (0..docs.len()).filter(|&i| g.contains_key(&docs.records()[i].id)).collect(),
        None => Vec::new(),
    };
    if gold.is_some() && labelled.is_empty() {
        return Err(Error::Input("no clustered document has a gold label".into()).into());
    }
    let header = if gold.is_some() {
        "repeat,seed,iterations,v_measure_cosine,ars_cosine,v_measure_surprise,ars_surprise\n"
    } else {
        "repeat,seed,iterations\n"
    };
    let mut csv = String::from(header);
    let mut columns: Vec<Vec<f64>> = vec![Vec::new(); 4];
    for r in 0..config.repeats {
        let seed = cell_seed(config.master_seed, a.k, r);
        let fit = kmeans(&docs, a.k, seed, config.max_iter, config.tol)?;
        let by_surprise = surprise_assign(&docs, &fit.centroids, config.estimator)?;
        write!(csv, "{r},{seed},{}", fit.iterations).unwrap();
        if let Some(g) = &gold {
            let truth: Vec<&str> = labelled.iter().map(|&i| g[&docs.records()[i].id].as_str()).collect();
            let pick = |assign: &[usize]| -> Vec<usize> { labelled.iter().map(|&i| assign[i]).collect() };
            let (cos, sur) = (pick(&fit.assignments), pick(&by_surprise));
            let values = [
                v_measure(&truth, &cos)?,
                adjusted_rand(&truth, &cos)?,
                v_measure(&truth, &sur)?,
                adjusted_rand(&truth, &sur)?,
            ];
            for (col, v) in columns.iter_mut().zip(values) {
                col.push(v);
                write!(csv, ",{v:.6}").unwrap();
            }
        }
        csv.push('\n');
    }
    write_text(&a.out, &csv)?;
    if gold.is_some() {
        let mut summary = String::from("metric,mean,std\n");
        let names = ["v_measure_cosine", "ars_cosine", "v_measure_surprise", "ars_surprise"];
        for (name, col) in names.iter().zip(&columns) {
            let (m, s) = mean_and_sample_std(col);
            writeln!(summary, "{name},{m:.6},{s:.6}").unwrap();
            println!("{name}: {m:.6} ± {s:.6}");
        }
        write_text(sibling(&a.out, ".summary.csv"), &summary)?;
    } else {
        println!("repeats={} k={}", config.repeats, a.k);
    }
    write_config(&sibling(&a.out, ".config.json"), &config)?;
    Ok(())
}

fn write_study(dir: &Path, report: &StudyReport, config: &RunConfig) -> Result<()> {
    create_dir(dir)?;
    emit_report(&report.records, ReportFormat::Csv, dir.join("records.csv"))?;
    emit_report(&report.records, ReportFormat::TextTable, dir.join("summary.txt"))?;
    emit_plot_data(&report.series, dir.join("plot.dat"))?;
    write_config(&dir.join("config.json"), config)?;
    print!("{}", surprise_core::report::render_text_table(&report.records));
    Ok(())
}

fn study_crossover(a: CrossoverArgs) -> Result<()> {
    let mut config = a.common.resolve()?;
    a.labels.apply(&mut config);
    if let Some(s) = &a.sizes {
        config.ensemble_sizes = s.clone();
    }
    if let Some(r) = a.repeats {
        config.repeats = r;
    }
    let config = validated(config)?;
    let docs = load_embeddings(&a.docs)?;
    let queries = load_queries(&a.labels, &config)?;
    let gold = load_gold(&a.gold, &docs)?;
    let report = crossover_study(Dataset { docs: &docs, gold: &gold, queries: &queries }, &ExperimentSpec::from(&config))?;
    write_study(&a.out_dir, &report, &config)
}

fn study_fewshot(a: FewshotArgs) -> Result<()> {
    let mut config = a.common.resolve()?;
    a.labels.apply(&mut config);
    a.hyper.apply(&mut config);
    if let Some(s) = &a.shots {
        config.shots = s.clone();
    }
    if let Some(r) = a.repeats {
        config.repeats = r;
    }
    let config = validated(config)?;
    let queries = load_queries(&a.labels, &config)?;
    let train_docs = load_embeddings(&a.train_docs)?;
    let train_gold = load_gold(&a.train_gold, &train_docs)?;
    let docs = load_embeddings(&a.docs)?;
    let gold = load_gold(&a.gold, &docs)?;
    let samplings: Vec<Sampling> = match &a.sampling {
        Some(s) => s.iter().map(|&m| m.into()).collect(),
        None => vec![Sampling::Balanced, Sampling::Unbalanced],
    };
    let report = fewshot_study(
        Dataset { docs: &train_docs, gold: &train_gold, queries: &queries },
        Dataset { docs: &docs, gold: &gold, queries: &queries },
        &samplings,
        &ExperimentSpec::from(&config),
    )?;
    write_study(&a.out_dir, &report, &config)
}
