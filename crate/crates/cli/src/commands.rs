use std::collections::BTreeMap;
use std::fs;
use std::path::Path;

use cloze_core::corpus::{read_items, write_items, ClozeItem};
use cloze_core::gapgen::enumerate_gap_candidates;
use cloze_core::pipeline::{
    self, layout, build_panel, build_source, fit_stage, generate_variants, ingest, load_embeddings,
    load_passages, read_fits, read_matrices, read_variant_items, report_stage, select_item_gaps,
    simulate, tagger, utility_stage, vocabulary, write_json, write_jsonl, PipelineConfig,
    PipelineError, ORIGINAL,
};
use cloze_core::psychometrics::write_fit;
use cloze_core::report::export_plot_data;
use cloze_core::scoring::{rank_vocabulary, write_tables, ScoreQuery, ScoreTable, MASK_TOKEN};

use crate::{Command, Failure, StubFixturesArgs};

fn io_failure(path: &Path, e: std::io::Error) -> Failure {
    PipelineError::Io {
        path: path.to_path_buf(),
        source: e,
    }
    .into()
}

fn create_dir(path: &Path) -> Result<(), Failure> {
    fs::create_dir_all(path).map_err(|e| io_failure(path, e))
}

fn original_items(dir: &Path) -> Result<Vec<ClozeItem>, Failure> {
    let path = dir.join(layout::ITEMS);
    if !path.exists() {
        return Err(Failure::usage(format!(
            "{} not found; run `cloze ingest` first",
            path.display()
        )));
    }
    Ok(read_items(&path).map_err(PipelineError::from)?)
}

pub fn run(cmd: &Command, cfg: &PipelineConfig) -> Result<(), Failure> {
    let dir = cfg.output_dir.as_path();
    create_dir(dir)?;
    match cmd {
        Command::Ingest => {
            let items = ingest(cfg, load_passages(cfg)?)?;
            let path = dir.join(layout::ITEMS);
            write_items(&path, &items).map_err(PipelineError::from)?;
            println!("{} items -> {}", items.len(), path.display());
        }
        Command::Gaps => {
            let items = original_items(dir)?;
            let vocab = vocabulary(cfg, &items);
            let generator = build_source(cfg, &cfg.generator, &vocab)?;
            let tagger = tagger(cfg)?;
            for &level in &cfg.levels {
                let (chosen, skipped) =
                    select_item_gaps(&items, tagger.as_ref(), generator.as_ref(), cfg.k_entropy, level)?;
                let reports: Vec<_> = chosen.into_iter().map(|(r, _)| r).collect();
                let path = dir.join(layout::GAPS_DIR).join(format!("{}.jsonl", level.as_str()));
                write_jsonl(&path, &reports)?;
                println!(
                    "{} gaps ({} skipped) -> {}",
                    reports.len(),
                    skipped.len(),
                    path.display()
                );
            }
        }
        Command::Distract => {
            let items = original_items(dir)?;
            let vocab = vocabulary(cfg, &items);
            let generator = build_source(cfg, &cfg.generator, &vocab)?;
            let store = load_embeddings(cfg)?;
            let tagger = tagger(cfg)?;
            let generated =
                generate_variants(cfg, &items, generator.as_ref(), &store, tagger.as_ref())?;
            for (level, reports) in &generated.gap_reports {
                write_jsonl(&dir.join(layout::GAPS_DIR).join(format!("{level}.jsonl")), reports)?;
            }
            let variants = dir.join(layout::VARIANTS_DIR);
            create_dir(&variants)?;
            for (label, sets) in &generated.sets {
                write_jsonl(&dir.join(layout::DISTRACTORS_DIR).join(format!("{label}.jsonl")), sets)?;
                write_items(&variants.join(format!("{label}.jsonl")), &generated.items[label])
                    .map_err(PipelineError::from)?;
                println!("{label}: {} items", generated.items[label].len());
            }
            write_json(&dir.join(layout::SKIPPED), &generated.skipped)?;
        }
        Command::Simulate => {
            let items = original_items(dir)?;
            let vocab = vocabulary(cfg, &items);
            let panel = build_panel(cfg, &vocab)?;
            let mut versions = BTreeMap::from([(ORIGINAL.to_string(), items)]);
            if dir.join(layout::VARIANTS_DIR).is_dir() {
                versions.extend(read_variant_items(dir)?);
            }
            let resp = dir.join(layout::RESPONSES_DIR);
            create_dir(&resp)?;
            let mut matrices = BTreeMap::new();
            for (label, v_items) in versions {
                if v_items.is_empty() {
                    continue;
                }
                let m = simulate(cfg, &v_items, &panel)?;
                m.write_csv(&resp.join(format!("{label}.csv")))
                    .map_err(PipelineError::from)?;
                println!("{label}: {} subjects x {} items", m.n_subjects(), m.n_items());
                matrices.insert(label, m);
            }
            write_json(&dir.join(layout::UTILITY), &utility_stage(&matrices))?;
        }
        Command::Fit => {
            let matrices = read_matrices(dir)?;
            let fits = fit_stage(cfg, &matrices)?;
            let fits_dir = dir.join(layout::FITS_DIR);
            create_dir(&fits_dir)?;
            for (label, fit) in &fits {
                let path = fits_dir.join(format!("{label}.json"));
                write_fit(&path, fit).map_err(PipelineError::from)?;
                println!(
                    "{label}: {} sweeps, converged={} -> {}",
                    fit.meta.n_iters,
                    fit.meta.converged,
                    path.display()
                );
            }
        }
        Command::Report => {
            let matrices = read_matrices(dir)?;
            let fits = read_fits(dir)?;
            let report = report_stage(&matrices, &fits)?;
            let report_dir = dir.join(layout::REPORT_DIR);
            export_plot_data(&report, &report_dir).map_err(PipelineError::from)?;
            write_json(&report_dir.join(layout::COMPARISON), &report)?;
            for d in &report.distributions {
                println!(
                    "{:32} n={:4} mean={:+.3} sd={:.3}",
                    d.label(),
                    d.summary.n,
                    d.summary.mean,
                    d.summary.sd
                );
            }
        }
        Command::Pipeline => {
            let run = pipeline::run(cfg)?;
            pipeline::write_artifacts(cfg, &run, dir)?;
            for d in &run.evaluation.report.distributions {
                println!(
                    "{:32} n={:4} mean={:+.3} sd={:.3}",
                    d.label(),
                    d.summary.n,
                    d.summary.mean,
                    d.summary.sd
                );
            }
        }
        Command::StubFixtures(args) => stub_fixtures(cfg, dir, args)?,
    }
    Ok(())
}

fn stub_fixtures(cfg: &PipelineConfig, dir: &Path, args: &StubFixturesArgs) -> Result<(), Failure> {
    let profile = match &args.surrogate {
        None => &cfg.generator,
        Some(id) if *id == cfg.generator.surrogate_id => &cfg.generator,
        Some(id) => cfg
            .panel
            .iter()
            .find(|p| p.surrogate_id == *id)
            .ok_or_else(|| Failure::usage(format!("unknown surrogate {id:?}")))?,
    };
    let mut items = original_items(dir)?;
    if dir.join(layout::VARIANTS_DIR).is_dir() {
        items.extend(read_variant_items(dir)?.into_values().flatten());
    }
    let vocab = vocabulary(cfg, &items);
    let source = build_source(cfg, profile, &vocab)?;
    let tagger = tagger(cfg)?;

    let mut tables: Vec<ScoreTable> = Vec::new();
    for item in &items {
        let q = ScoreQuery::new(item.item_id.clone(), item.masked_stem(MASK_TOKEN), cfg.candidate_top_k)
            .with_key(item.key());
        tables.push(rank_vocabulary(&q, source.as_ref(), 1).map_err(PipelineError::from)?);
        if args.gap_candidates {
            let cands = enumerate_gap_candidates(item, tagger.as_ref(), source.as_ref(), cfg.k_entropy)
                .map_err(PipelineError::from)?;
            for c in cands {
                let q = ScoreQuery::new(c.query_id(), c.masked_stem.clone(), cfg.candidate_top_k)
                    .with_key(&c.word);
                tables.push(rank_vocabulary(&q, source.as_ref(), 1).map_err(PipelineError::from)?);
            }
        }
    }
    tables.sort_by(|a, b| a.item_id.cmp(&b.item_id));
    let path = args.out.clone().unwrap_or_else(|| {
        dir.join("fixtures")
            .join(format!("{}.jsonl", profile.surrogate_id.replace(['/', ','], "_")))
    });
    if let Some(parent) = path.parent() {
        create_dir(parent)?;
    }
    write_tables(&path, &tables).map_err(PipelineError::from)?;
    println!("{} tables -> {}", tables.len(), path.display());
    Ok(())
}
