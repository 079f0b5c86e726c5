use std::fs;
use std::path::{Path, PathBuf};

use insert_core::data::{load_interactions, preprocess, SessionDataset, REFERENCE_STATS};
use insert_core::eval::{evaluate, run_ablation_suite};
use insert_core::model::Model;
use insert_core::retrieval::{build_candidate_sets, CandidateSets, SimilarUsers};
use insert_core::tensor::softmax;
use insert_core::train::{Checkpoint, Trainer};
use insert_core::{Error, Result};
use serde::Serialize;
use serde_json::json;
use sha2::{Digest, Sha256};

use crate::config::RunConfig;

/// Directory for derived caches such as the similar-user table.
pub const CACHE_ENV: &str = "INSERT_CACHE_DIR";

const REPORT_FORMAT: &str = "insert-report/1";

fn write(path: &Path, bytes: &[u8]) -> Result<()> {
    if let Some(parent) = path.parent().filter(|p| !p.as_os_str().is_empty()) {
        fs::create_dir_all(parent).map_err(|e| Error::Io {
            path: parent.to_path_buf(),
            source: e,
        })?;
    }
    fs::write(path, bytes).map_err(|e| Error::Io {
        path: path.to_path_buf(),
        source: e,
    })
}

fn write_json(path: &Path, value: &impl Serialize) -> Result<()> {
    let mut text = serde_json::to_string_pretty(value).expect("value serializes");
    text.push('\n');
    write(path, text.as_bytes())
}

fn file_hash(path: &Path) -> Result<String> {
    let bytes = fs::read(path).map_err(|e| Error::Io {
        path: path.to_path_buf(),
        source: e,
    })?;
    Ok(hex::encode(Sha256::digest(bytes)))
}

/// The similar-user table, read from or written to the cache directory when
/// one is configured.
fn similar_users(ds: &SessionDataset, n: usize) -> Result<SimilarUsers> {
    match std::env::var_os(CACHE_ENV) {
        Some(dir) if !dir.is_empty() => {
            let dir = PathBuf::from(dir);
            fs::create_dir_all(&dir).map_err(|e| Error::Io {
                path: dir.clone(),
                source: e,
            })?;
            let hash = ds.content_hash();
            SimilarUsers::cached(ds, n, &dir.join(format!("similar-{}-n{n}.json", &hash[..16])))
        }
        _ => Ok(SimilarUsers::build(ds, n)),
    }
}

pub fn preprocess_cmd(input: &Path, out: &Path, stats: Option<&Path>, config: &RunConfig) -> Result<()> {
    let interactions = load_interactions(input, &config.format()?)?;
    let ds = preprocess(&interactions, &config.preprocess())?;
    let bytes = ds.to_bytes();
    write(out, &bytes)?;
    let dataset_hash = ds.content_hash();
    let stats_path = stats.map(Path::to_path_buf).unwrap_or_else(|| out.with_extension("stats.json"));
    write_json(
        &stats_path,
        &json!({
            "input": input.display().to_string(),
            "input_sha256": file_hash(input)?,
            "dataset_hash": dataset_hash,
            "config": config,
            "stats": ds.stats(),
        }),
    )?;
    let st = ds.stats();
    println!(
        "{} interactions -> {} users, {} items, {} sessions (train {}, valid {}, test {})",
        interactions.len(),
        st.users,
        st.items,
        st.sessions,
        st.train.sessions,
        st.valid.sessions,
        st.test.sessions
    );
    println!("dataset {} ({dataset_hash})", out.display());
    Ok(())
}

pub fn stats_cmd(dataset: &Path, as_json: bool) -> Result<()> {
    let ds = SessionDataset::load(dataset)?;
    let st = ds.stats();
    if as_json {
        let value = json!({
            "dataset_hash": ds.content_hash(),
            "stats": st,
            "reference": REFERENCE_STATS,
        });
        println!("{}", serde_json::to_string_pretty(&value).expect("stats serialize"));
        return Ok(());
    }
    println!(
        "{:<10} {:>9} {:>9} {:>11} {:>13} {:>10} {:>10}",
        "dataset", "users", "items", "sessions", "interactions", "per sess", "per user"
    );
    let name = dataset.file_stem().map_or("dataset".into(), |s| s.to_string_lossy().into_owned());
    println!(
        "{:<10} {:>9} {:>9} {:>11} {:>13} {:>10.1} {:>10.1}",
        name, st.users, st.items, st.sessions, st.interactions, st.interactions_per_session, st.interactions_per_user
    );
    for r in REFERENCE_STATS {
        println!(
            "{:<10} {:>9} {:>9} {:>11} {:>13} {:>10.1} {:>10.1}",
            r.name, r.users, r.items, r.sessions, r.interactions, r.interactions_per_session, r.interactions_per_user
        );
    }
    for (split, s) in [("train", st.train), ("valid", st.valid), ("test", st.test)] {
        println!("{split:<6} users {:>7} sessions {:>9} interactions {:>10}", s.users, s.sessions, s.interactions);
    }
    Ok(())
}

pub fn train_cmd(dataset: &Path, out: &Path, resume: bool, config: &RunConfig) -> Result<()> {
    let ds = SessionDataset::load(dataset)?;
    let dataset_hash = ds.content_hash();
    let checkpoint = if resume {
        let last = out.join("last.ckpt");
        let ckpt = Checkpoint::load(&last)?;
        ckpt.check_dataset(&dataset_hash)?;
        if ckpt.manifest.finished {
            println!("{} is already finished at epoch {}", last.display(), ckpt.manifest.epoch);
            return Ok(());
        }
        Some(ckpt)
    } else {
        None
    };
    let n = checkpoint
        .as_ref()
        .map_or(config.num_similar_users, |c| c.manifest.retrieval.num_similar_users);
    let similar = similar_users(&ds, n)?;
    let mut trainer = match checkpoint {
        // the run continues with the settings it was started with
        Some(ckpt) => Trainer::resume(&ds, &similar, ckpt)?,
        None => {
            write_json(
                &out.join("config.json"),
                &json!({ "dataset": dataset.display().to_string(), "dataset_hash": dataset_hash, "config": config }),
            )?;
            let model = config.model(ds.num_items(), ds.num_users());
            let extra = json!({ "config": config, "dataset_hash": dataset_hash });
            Trainer::new(&ds, &similar, model, config.train(), config.retrieval())?.with_extra(extra)
        }
    };
    let summary = trainer.fit_to_dir(out)?;
    for r in &summary.records {
        let val = r.val_mrr_20.map_or("-".to_string(), |v| format!("{v:.4}"));
        println!("epoch {:>3}  loss {:.6}  val MRR@20 {val}{}", r.epoch, r.loss, if r.improved { "  *" } else { "" });
    }
    match summary.best_epoch {
        Some(e) => println!("best epoch {e}, checkpoint {}", out.join("best.ckpt").display()),
        None => println!("no validation split; best.ckpt holds the last epoch"),
    }
    Ok(())
}

pub struct EvalArgs<'a> {
    pub checkpoint: &'a Path,
    pub dataset: &'a Path,
    pub out: Option<&'a Path>,
    pub csv: Option<&'a Path>,
    pub zero_prior: bool,
}

pub fn evaluate_cmd(args: &EvalArgs<'_>, config: &RunConfig) -> Result<()> {
    let ds = SessionDataset::load(args.dataset)?;
    let ckpt = Checkpoint::load(args.checkpoint)?;
    let dataset_hash = ds.content_hash();
    ckpt.check_dataset(&dataset_hash)?;
    let mut model_config = ckpt.manifest.model.clone();
    model_config.zero_prior |= args.zero_prior;
    let model = Model::bind(model_config.clone(), &ckpt.params)?;
    let retrieval = ckpt.manifest.retrieval;
    let similar = similar_users(&ds, retrieval.num_similar_users)?;
    let eval = config.eval();
    let report = evaluate(&model, &ckpt.params, &ds, &similar, &retrieval, config.split, &eval)?;

    print!("{}", report.to_table());
    let value = json!({
        "format": REPORT_FORMAT,
        "dataset_hash": dataset_hash,
        "checkpoint_hash": file_hash(args.checkpoint)?,
        "checkpoint_epoch": ckpt.manifest.epoch,
        "split": config.split,
        "model": model_config,
        "retrieval": retrieval,
        "eval": eval,
        "config": config,
        "report": report,
    });
    if let Some(out) = args.out {
        write_json(out, &value)?;
    }
    if let Some(csv) = args.csv {
        write(csv, report.to_csv().as_bytes())?;
    }
    Ok(())
}

pub fn ablate_cmd(dataset: &Path, out: &Path, config: &RunConfig) -> Result<()> {
    let ds = SessionDataset::load(dataset)?;
    let similar = similar_users(&ds, config.num_similar_users)?;
    let base = config.model(ds.num_items(), ds.num_users());
    let table = run_ablation_suite(
        &ds,
        &similar,
        &base,
        &config.train(),
        &config.retrieval(),
        config.split,
        &config.eval(),
    )?;
    let text = table.to_table();
    print!("{text}");
    write_json(
        &out.join("ablation.json"),
        &json!({
            "format": REPORT_FORMAT,
            "dataset_hash": ds.content_hash(),
            "config": config,
            "table": table,
        }),
    )?;
    write(&out.join("ablation.txt"), text.as_bytes())
}

pub struct RecommendArgs<'a> {
    pub checkpoint: &'a Path,
    pub dataset: &'a Path,
    pub user: &'a str,
    pub items: &'a [String],
    pub k: usize,
    pub cold_start: bool,
}

#[derive(Debug, Serialize)]
struct Scored {
    item: String,
    score: f64,
}

pub fn recommend_cmd(args: &RecommendArgs<'_>) -> Result<()> {
    let ds = SessionDataset::load(args.dataset)?;
    let ckpt = Checkpoint::load(args.checkpoint)?;
    ckpt.check_dataset(&ds.content_hash())?;

    let unknown: Vec<&str> = args
        .items
        .iter()
        .filter(|i| ds.items.get(i).map_or(true, |ix| ix == 0))
        .map(String::as_str)
        .collect();
    if !unknown.is_empty() {
        return Err(Error::Config(format!("unknown items: {}", unknown.join(", "))));
    }
    if args.items.is_empty() {
        return Err(Error::Config("give at least one context item".into()));
    }
    let user = ds.users.get(args.user);
    if user.is_none() && !args.cold_start {
        return Err(Error::Config(format!(
            "unknown users: {} (pass --cold-start to score without history)",
            args.user
        )));
    }

    let mut model_config = ckpt.manifest.model.clone();
    let retrieval = ckpt.manifest.retrieval;
    let similar;
    let candidates = match user {
        Some(u) => {
            similar = similar_users(&ds, retrieval.num_similar_users)?;
            build_candidate_sets(&ds, &similar, u, u32::MAX, &retrieval)?
        }
        None => {
            // local preference only
            model_config.zero_prior = true;
            CandidateSets::empty()
        }
    };
    let model = Model::bind(model_config, &ckpt.params)?;
    let context: Vec<u32> = args.items.iter().map(|i| ds.items.get(i).expect("checked above")).collect();
    let mut tape = model.tape(&ckpt.params);
    let w = model.weights(&mut tape);
    let trace = model.forward(&mut tape, &w, &context, &candidates, None)?;
    let probs = softmax(tape.value(trace.logits).data());

    let available = ds.num_items() - 1;
    let k = if args.k > available {
        eprintln!("warning: k={} exceeds the {available} known items; returning the full ranking", args.k);
        available
    } else {
        args.k
    };
    let mut order: Vec<usize> = (1..probs.len()).collect();
    order.sort_by(|&a, &b| probs[b].total_cmp(&probs[a]).then(a.cmp(&b)));
    let top: Vec<Scored> = order
        .into_iter()
        .take(k)
        .map(|i| Scored {
            item: ds.items.name(i as u32).to_string(),
            score: probs[i],
        })
        .collect();
    let value = json!({
        "user": args.user,
        "cold_start": user.is_none(),
        "context": args.items,
        "k": k,
        "recommendations": top,
    });
    println!("{}", serde_json::to_string_pretty(&value).expect("serializes"));
    Ok(())
}
