use std::fs;
use std::path::{Path, PathBuf};

use fsml_core::corpus::{generate_synthetic, load_corpus, save_corpus};
use fsml_core::embeddings::{embed_corpus_toy, load_embedding_table};
use fsml_core::episodes::{build_split, read_episode_records, write_episodes, EpisodeRecord};
use fsml_core::evaluation::{ablate, cross_validate, evaluate_split, prepare_all};
use fsml_core::rng::{derive_seed, rng_from};
use fsml_core::thresholding::{predict_with, Lexicons, Mode};
use fsml_core::training::train_on_domains;
use fsml_core::{Domain, EmbeddingTable, Error, ModelParams};
use serde::Serialize;

use crate::config::{Config, ModeArg};
use crate::error::CliError;
use crate::Command;

struct Ctx<'a> {
    workdir: &'a Path,
    cfg: &'a Config,
}

impl Ctx<'_> {
    fn path(&self, p: &Path) -> PathBuf {
        self.workdir.join(p)
    }

    fn out(&self, default: &str) -> PathBuf {
        self.path(self.cfg.out.as_deref().unwrap_or(Path::new(default)))
    }

    fn corpus(&self) -> Result<Vec<Domain>, CliError> {
        Ok(load_corpus(self.path(&self.cfg.corpus))?)
    }

    fn embeddings(&self, domains: &[Domain]) -> Result<EmbeddingTable, CliError> {
        let table = load_embedding_table(self.path(&self.cfg.embeddings))?;
        table.bind(domains)?;
        Ok(table)
    }

    fn lexicons(&self) -> Result<Lexicons, CliError> {
        match &self.cfg.lexicons {
            Some(dir) => Ok(Lexicons::load_dir(self.path(dir))?),
            None => Ok(Lexicons::builtin()),
        }
    }

    fn model(&self) -> Result<ModelParams, CliError> {
        Ok(ModelParams::load(self.path(&self.cfg.model))?)
    }

    fn episode_records(&self) -> Result<Vec<EpisodeRecord>, CliError> {
        Ok(read_episode_records(self.path(&self.cfg.episodes))?)
    }

    fn mode(&self) -> Result<Mode, CliError> {
        Ok(match self.cfg.mode {
            ModeArg::MetaOnly => Mode::MetaOnly,
            ModeArg::Calibrated => Mode::Calibrated,
            ModeArg::Fixed => Mode::Fixed(
                self.cfg
                    .threshold
                    .ok_or_else(|| CliError::Config("--mode fixed needs --threshold".into()))?,
            ),
        })
    }
}

fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<(), CliError> {
    let text = serde_json::to_string_pretty(value).map_err(Error::from)? + "\n";
    write_text(path, &text)
}

fn write_text(path: &Path, text: &str) -> Result<(), CliError> {
    if let Some(parent) = path.parent() {
        fs::create_dir_all(parent).map_err(Error::from)?;
    }
    fs::write(path, text).map_err(Error::from)?;
    Ok(())
}

fn find_domain<'a>(domains: &'a [Domain], name: &str) -> Result<&'a Domain, CliError> {
    domains
        .iter()
        .find(|d| d.name == name)
        .ok_or_else(|| CliError::Config(format!("no domain named '{name}' in the corpus")))
}

pub fn run(command: &Command, workdir: &Path, cfg: &Config) -> Result<(), CliError> {
    let ctx = Ctx { workdir, cfg };
    match command {
        Command::GenSynth => gen_synth(&ctx),
        Command::EmbedToy => embed_toy(&ctx),
        Command::Episodes => episodes(&ctx),
        Command::Train => train(&ctx),
        Command::Eval { cross_validate: true } => eval_cv(&ctx),
        Command::Eval { .. } => eval(&ctx),
        Command::Predict { query_id, episode_index } => predict(&ctx, query_id, *episode_index),
        Command::Ablate => ablation(&ctx),
    }
}

fn gen_synth(ctx: &Ctx) -> Result<(), CliError> {
    let cfg = ctx.cfg;
    let domains = (0..cfg.domains)
        .map(|i| {
            let name = format!("domain{i}");
            let seed = derive_seed(cfg.seed, &format!("synth/{name}"));
            generate_synthetic(&cfg.synth_spec(name), seed)
        })
        .collect::<Result<Vec<_>, _>>()?;
    let dir = ctx.path(&cfg.corpus);
    save_corpus(&domains, &dir)?;
    eprintln!("wrote {} domains to {}", domains.len(), dir.display());
    Ok(())
}

fn embed_toy(ctx: &Ctx) -> Result<(), CliError> {
    let domains = ctx.corpus()?;
    let table = embed_corpus_toy(&domains, ctx.cfg.dim, ctx.cfg.seed)?;
    let path = ctx.path(&ctx.cfg.embeddings);
    table.write(&path)?;
    eprintln!("wrote {} records to {}", table.len(), path.display());
    Ok(())
}

fn episodes(ctx: &Ctx) -> Result<(), CliError> {
    let cfg = ctx.cfg;
    let domains = ctx.corpus()?;
    let selected: Vec<&Domain> = match &cfg.target {
        Some(t) => vec![find_domain(&domains, t)?],
        None => domains.iter().collect(),
    };
    let mut all = Vec::new();
    for d in selected {
        let mut rng = rng_from(cfg.seed, &format!("episodes/{}/k{}", d.name, cfg.k_shot));
        all.extend(build_split(d, cfg.k_shot, cfg.eval_episodes, cfg.eval_query_size, &mut rng)?);
    }
    let path = ctx.path(&cfg.episodes);
    if let Some(parent) = path.parent() {
        fs::create_dir_all(parent).map_err(Error::from)?;
    }
    write_episodes(&all, &path)?;
    eprintln!("wrote {} episodes to {}", all.len(), path.display());
    Ok(())
}

fn train(ctx: &Ctx) -> Result<(), CliError> {
    let cfg = ctx.cfg;
    let domains = ctx.corpus()?;
    let table = ctx.embeddings(&domains)?;
    let lex = ctx.lexicons()?;
    let tc = cfg.train();
    let (model, report) = match &cfg.target {
        Some(t) => {
            if domains.len() < 3 {
                return Err(CliError::Config(format!(
                    "--target needs at least 3 domains (target, dev, sources), corpus has {}",
                    domains.len()
                )));
            }
            let ti = domains.iter().position(|d| &d.name == t);
            let ti = ti.ok_or_else(|| CliError::Config(format!("no domain named '{t}' in the corpus")))?;
            let di = (ti + 1) % domains.len();
            let sources: Vec<&Domain> = (0..domains.len()).filter(|&i| i != ti && i != di).map(|i| &domains[i]).collect();
            let dev = &domains[di];
            let mut rng = rng_from(cfg.seed, &format!("dev/{}/k{}", dev.name, cfg.k_shot));
            let dev_eps = build_split(dev, cfg.k_shot, cfg.eval_episodes, cfg.eval_query_size, &mut rng)?;
            let dev_prepared = prepare_all(&dev_eps, dev, &table, &lex)?;
            train_on_domains(&sources, Some(&dev_prepared), &table, &lex, &tc)?
        }
        None => {
            let sources: Vec<&Domain> = domains.iter().collect();
            train_on_domains(&sources, None, &table, &lex, &tc)?
        }
    };
    let model_path = ctx.path(&cfg.model);
    if let Some(parent) = model_path.parent() {
        fs::create_dir_all(parent).map_err(Error::from)?;
    }
    model.save(&model_path)?;
    write_json(&ctx.out("train_report.json"), &report)?;
    eprintln!("wrote {} (r = {}, beta = {})", model_path.display(), model.threshold.r, model.beta);
    Ok(())
}

fn eval(ctx: &Ctx) -> Result<(), CliError> {
    let cfg = ctx.cfg;
    let mode = ctx.mode()?;
    let domains = ctx.corpus()?;
    let table = ctx.embeddings(&domains)?;
    let lex = ctx.lexicons()?;
    let model = ctx.model()?;
    let records = ctx.episode_records()?;
    let target = match &cfg.target {
        Some(t) => t.clone(),
        None => records
            .first()
            .map(|r| r.domain.clone())
            .ok_or_else(|| Error::InvalidParam("episode file is empty".into()))?,
    };
    let domain = find_domain(&domains, &target)?;
    let eps = records
        .iter()
        .filter(|r| r.domain == target)
        .map(|r| r.resolve(domain))
        .collect::<Result<Vec<_>, _>>()?;
    if eps.is_empty() {
        return Err(Error::InvalidParam(format!("no episodes for domain '{target}'")).into());
    }
    let report = evaluate_split(&eps, domain, &table, &lex, &model, mode, cfg.scorer.into())?;
    let out = ctx.out("eval_report.json");
    write_json(&out, &report)?;
    write_text(&out.with_extension("tsv"), &report.to_tsv())?;
    eprintln!("{}: mean F1 {:.4} over {} episodes", report.mode, report.mean_f1, report.episode_f1.len());
    Ok(())
}

fn eval_cv(ctx: &Ctx) -> Result<(), CliError> {
    let domains = ctx.corpus()?;
    let table = ctx.embeddings(&domains)?;
    let lex = ctx.lexicons()?;
    let report = cross_validate(&domains, &table, &lex, &ctx.cfg.cross_val())?;
    write_json(&ctx.out("cv_report.json"), &report)?;
    Ok(())
}

#[derive(Serialize)]
struct PredictionOut {
    domain: String,
    episode_index: usize,
    query_id: String,
    mode: &'static str,
    label_names: Vec<String>,
    scores: Vec<f64>,
    t_meta: f64,
    t_est: f64,
    t: f64,
    n_est: f64,
    labels: Vec<String>,
    gold: Vec<String>,
}

fn predict(ctx: &Ctx, query_id: &str, episode_index: usize) -> Result<(), CliError> {
    let mode = ctx.mode()?;
    let domains = ctx.corpus()?;
    let table = ctx.embeddings(&domains)?;
    let lex = ctx.lexicons()?;
    let model = ctx.model()?;
    let records = ctx.episode_records()?;
    let rec = records.get(episode_index).ok_or_else(|| {
        CliError::Config(format!("episode index {episode_index} out of range ({} episodes)", records.len()))
    })?;
    let domain = find_domain(&domains, &rec.domain)?;
    let ep = rec.resolve(domain)?;
    let query = domain
        .get(query_id)
        .ok_or_else(|| CliError::Config(format!("no utterance '{query_id}' in domain '{}'", domain.name)))?;
    if ep.support.ids().contains(&query_id) {
        return Err(CliError::Config(format!("'{query_id}' is in the episode's support set")));
    }
    let p = predict_with(&query.utterance, &ep.support, &domain.label_space, &table, &model, &lex, mode, ctx.cfg.scorer.into())?;
    let out = PredictionOut {
        domain: domain.name.clone(),
        episode_index,
        query_id: query_id.to_string(),
        mode: mode.name(),
        label_names: domain.label_space.names().to_vec(),
        scores: p.scores.scores,
        t_meta: p.t_meta,
        t_est: p.t_est,
        t: p.t,
        n_est: p.n_est,
        labels: p.labels,
        gold: query.labels.clone(),
    };
    write_json(&ctx.out("prediction.json"), &out)?;
    println!("{}", out.labels.join(","));
    Ok(())
}

fn ablation(ctx: &Ctx) -> Result<(), CliError> {
    let domains = ctx.corpus()?;
    let table = ctx.embeddings(&domains)?;
    let lex = ctx.lexicons()?;
    let report = ablate(&domains, &table, &lex, &ctx.cfg.cross_val())?;
    let out = ctx.out("ablation.json");
    write_json(&out, &report)?;
    write_text(&out.with_extension("tsv"), &report.to_tsv())?;
    Ok(())
}
