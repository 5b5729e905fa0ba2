//! Subcommand implementations. Every command writes its artifacts under the
//! configured output directory and records itself in `manifest.json`.

use std::fs::{self, File, OpenOptions};
use std::io::{BufRead, BufReader, Write};
use std::path::{Path, PathBuf};

use anyhow::Context as _;
use lossearch_core::analysis::{
    agglomerative_cluster_with, best_k_intersection, correlation_matrix, ScoreTable, Subset,
};
use lossearch_core::augment::Technique;
use lossearch_core::data::Dataset;
use lossearch_core::evolution::{
    eliminate, random_pool, run_search, start_search, CachedEvaluator, Checkpoint, Evaluator, EvolutionConfig,
    Member, MockEvaluator, TrainingEvaluator,
};
use lossearch_core::genome::{GenomeHash, LossGenome, FORMAT_VERSION};
use lossearch_core::losses::{all_builtins, binary_phenotype, builtin, difference_surface, surface, Curve, NAMES};
use lossearch_core::par::{map_ordered, Execution};
use lossearch_core::rng::{derive_seed, tag};
use lossearch_core::trainer::{append_ledger, read_ledger, train, train_and_score, FitnessRecord};
use serde::{Deserialize, Serialize};

use crate::config::{config_error, EvaluatorChoice, ExperimentConfig};

pub struct Context {
    pub cfg: ExperimentConfig,
    pub exec: Execution,
}

impl Context {
    fn out(&self, name: &str) -> PathBuf {
        self.cfg.output_dir.join(name)
    }

    fn prepare(&self) -> anyhow::Result<()> {
        fs::create_dir_all(&self.cfg.output_dir)
            .with_context(|| format!("creating {}", self.cfg.output_dir.display()))
    }

    /// Records the command, the effective configuration digest and the files it wrote.
    fn manifest(&self, command: &str, outputs: &[&str]) -> anyhow::Result<()> {
        let path = self.out("manifest.json");
        let mut m: serde_json::Map<String, serde_json::Value> = match fs::read_to_string(&path) {
            Ok(text) => serde_json::from_str(&text).unwrap_or_default(),
            Err(_) => Default::default(),
        };
        m.insert("tool".into(), "lossearch".into());
        m.insert("version".into(), env!("CARGO_PKG_VERSION").into());
        m.insert("genome_format_version".into(), FORMAT_VERSION.into());
        let commands = m.entry("commands").or_insert_with(|| serde_json::json!({}));
        commands[command] = serde_json::json!({
            "config_sha256": self.cfg.digest(),
            "outputs": outputs,
        });
        fs::write(&path, serde_json::to_string_pretty(&m)? + "\n")?;
        fs::write(self.out("config.effective.toml"), self.cfg.to_toml())?;
        Ok(())
    }
}

/// A genome with its hash, readable expression and optional score, as stored in
/// `pool.json`, `population.json` and `survivors.json`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct GenomeEntry {
    pub hash: GenomeHash,
    pub expression: String,
    pub fitness: Option<f64>,
    pub genome: LossGenome,
}

impl GenomeEntry {
    fn new(genome: &LossGenome, fitness: Option<f64>) -> Self {
        Self { hash: genome.canonical_hash(), expression: genome.expression(), fitness, genome: genome.clone() }
    }
}

fn write_json<T: Serialize>(path: &Path, v: &T) -> anyhow::Result<()> {
    fs::write(path, serde_json::to_string_pretty(v)? + "\n").with_context(|| format!("writing {}", path.display()))
}

/// A built-in loss name or a genome file, with a label for file names.
pub fn resolve_loss(arg: &str) -> anyhow::Result<(String, LossGenome)> {
    if let Some(name) = NAMES.iter().find(|n| n.eq_ignore_ascii_case(arg)) {
        return Ok((name.to_string(), builtin(name)?.genome));
    }
    let path = Path::new(arg);
    if !path.is_file() {
        return Err(config_error(format!("`{arg}` is neither a built-in loss ({}) nor a genome file", NAMES.join(", "))));
    }
    let text = fs::read_to_string(path)?;
    let genome = LossGenome::parse(&text).map_err(|e| config_error(format!("{}: {e}", path.display())))?;
    let label = path.file_stem().map_or("genome".into(), |s| s.to_string_lossy().replace(".genome", ""));
    Ok((label, genome))
}

fn fresh(path: &Path) -> anyhow::Result<()> {
    if path.exists() {
        fs::remove_file(path)?;
    }
    Ok(())
}

/// Trains every pool genome under every configured technique and writes the
/// fitness ledger and the per-technique score table.
pub fn rank_random(ctx: &Context) -> anyhow::Result<()> {
    ctx.prepare()?;
    let cfg = &ctx.cfg;
    let ds = cfg.dataset.build()?;
    let model = cfg.trainer.model_for(&ds);
    let rr = &cfg.rank_random;
    let pool_cfg = EvolutionConfig { seed: rr.seed, genome_length: rr.genome_length, ..Default::default() };
    let pool = random_pool(&pool_cfg, rr.pool_size);
    let techs = &cfg.augmentation.techniques;
    let jobs: Vec<(usize, Technique, usize)> = (0..pool.len())
        .flat_map(|g| techs.iter().flat_map(move |&t| (0..cfg.trainer.repeats).map(move |r| (g, t, r))))
        .collect();
    log::info!("rank-random: {} genomes x {} techniques x {} repeats on {}", pool.len(), techs.len(), cfg.trainer.repeats, ds.name);
    let records: Vec<FitnessRecord> = map_ordered(ctx.exec, &jobs, |_, &(g, t, r)| {
        let seed = derive_seed(rr.seed, &[tag("train"), r as u64]);
        train_and_score(&pool[g], model, &ds, &cfg.augmentation.pipeline(t), &cfg.trainer.settings, seed)
    })
    .into_iter()
    .collect::<Result<_, _>>()?;

    let ledger = ctx.out("rank_ledger.csv");
    fresh(&ledger)?;
    append_ledger(&ledger, &records)?;
    let table = ScoreTable::from_records(&records);
    write_scores(&ctx.out("scores.csv"), &table, techs)?;
    let entries: Vec<GenomeEntry> = pool.iter().map(|g| GenomeEntry::new(g, None)).collect();
    write_json(&ctx.out("pool.json"), &entries)?;
    println!("wrote {} records for {} genomes to {}", records.len(), pool.len(), ledger.display());
    ctx.manifest("rank-random", &["rank_ledger.csv", "scores.csv", "pool.json"])
}

fn write_scores(path: &Path, table: &ScoreTable, techs: &[Technique]) -> anyhow::Result<()> {
    let mut w = csv::Writer::from_path(path)?;
    let mut header = vec!["genome_hash".to_string()];
    header.extend(techs.iter().map(|t| t.to_string()));
    w.write_record(&header)?;
    for (g, row) in &table.scores {
        let mut rec = vec![g.to_string()];
        rec.extend(techs.iter().map(|t| row.get(t).map_or(String::new(), |v| v.to_string())));
        w.write_record(&rec)?;
    }
    w.flush()?;
    Ok(())
}

fn with_evaluator<R>(
    ctx: &Context,
    choice: EvaluatorChoice,
    f: impl FnOnce(&dyn Evaluator) -> anyhow::Result<R>,
) -> anyhow::Result<R> {
    match choice {
        EvaluatorChoice::ActiveNodes => f(&MockEvaluator::ActiveNodes),
        EvaluatorChoice::HashMod100 => f(&MockEvaluator::HashMod100),
        EvaluatorChoice::Training => {
            let ds: Dataset = ctx.cfg.dataset.build()?;
            let eval = CachedEvaluator::new(TrainingEvaluator {
                dataset: &ds,
                model: ctx.cfg.trainer.model_for(&ds),
                pipeline: ctx.cfg.augmentation.pipeline(ctx.cfg.augmentation.technique),
                config: ctx.cfg.trainer.settings.clone(),
            });
            f(&eval)
        }
    }
}

const SEARCH_LEDGER_HEADER: &str = "iteration,parent_hash,child_hash,fitness,degenerate";

/// Keeps the header and the rows of iterations up to `last`.
fn truncate_search_ledger(path: &Path, last: usize) -> anyhow::Result<()> {
    let mut kept = vec![SEARCH_LEDGER_HEADER.to_string()];
    if path.exists() {
        for line in BufReader::new(File::open(path)?).lines().skip(1) {
            let line = line?;
            let it: usize = line.split(',').next().and_then(|s| s.parse().ok()).unwrap_or(usize::MAX);
            if it <= last {
                kept.push(line);
            }
        }
    }
    fs::write(path, kept.join("\n") + "\n")?;
    Ok(())
}

/// Regularized evolution with periodic checkpoints. `resume` continues from the
/// checkpoint in the output directory; `stop_after` ends the run early at that
/// iteration count, leaving a resumable checkpoint.
pub fn search(ctx: &Context, resume: bool, stop_after: Option<usize>) -> anyhow::Result<()> {
    ctx.prepare()?;
    let cfg = &ctx.cfg;
    let ck_path = ctx.out("checkpoint.json");
    let ledger_path = ctx.out("search_ledger.csv");
    let every = cfg.search.checkpoint_every;
    with_evaluator(ctx, cfg.search.evaluator, |eval| {
        let state = if resume {
            let ck = Checkpoint::load(&ck_path).map_err(|e| config_error(format!("cannot resume: {e}")))?;
            if ck.config != cfg.evolution {
                return Err(config_error("checkpoint was written with a different evolution config"));
            }
            truncate_search_ledger(&ledger_path, ck.iteration)?;
            log::info!("resuming search at iteration {}", ck.iteration);
            ck
        } else {
            let (state, pool) = start_search(&cfg.evolution, eval, ctx.exec)?;
            let mut w = csv::Writer::from_path(ctx.out("pool_ledger.csv"))?;
            w.write_record(["index", "genome_hash", "fitness", "degenerate"])?;
            for (i, p) in pool.iter().enumerate() {
                w.write_record([
                    i.to_string(),
                    p.genome.canonical_hash().to_string(),
                    p.evaluation.fitness.to_string(),
                    p.evaluation.degenerate.to_string(),
                ])?;
            }
            w.flush()?;
            truncate_search_ledger(&ledger_path, 0)?;
            state.save(&ck_path)?;
            state
        };
        let file = OpenOptions::new().append(true).open(&ledger_path)?;
        let mut ledger = csv::WriterBuilder::new().has_headers(false).from_writer(file);
        let end = run_search(state, eval, stop_after, |rec, st| {
            ledger.serialize(rec)?;
            ledger.flush()?;
            if st.iteration % every == 0 {
                st.save(&ck_path)?;
            }
            Ok(())
        })?;
        end.save(&ck_path)?;

        let mut members: Vec<&Member> = end.population.members.iter().collect();
        members.sort_by(|a, b| b.fitness.total_cmp(&a.fitness).then(a.born.cmp(&b.born)));
        let entries: Vec<GenomeEntry> = members.iter().map(|m| GenomeEntry::new(&m.genome, Some(m.fitness))).collect();
        write_json(&ctx.out("population.json"), &entries)?;
        fs::write(ctx.out("best.genome.json"), end.best.genome.to_text() + "\n")?;
        println!(
            "iteration {}/{}: best fitness {} for {}",
            end.iteration,
            cfg.evolution.iterations,
            end.best.fitness,
            end.best.genome.expression()
        );
        Ok(())
    })?;
    ctx.manifest(
        "search",
        &["pool_ledger.csv", "search_ledger.csv", "checkpoint.json", "population.json", "best.genome.json"],
    )
}

fn read_candidates(path: &Path) -> anyhow::Result<Vec<LossGenome>> {
    let text = fs::read_to_string(path).map_err(|e| config_error(format!("cannot read {}: {e}", path.display())))?;
    if let Ok(entries) = serde_json::from_str::<Vec<GenomeEntry>>(&text) {
        return Ok(entries.into_iter().map(|e| e.genome).collect());
    }
    serde_json::from_str::<Vec<LossGenome>>(&text)
        .map_err(|e| config_error(format!("{}: not a genome list: {e}", path.display())))
}

/// Staged elimination of candidate genomes under the configured technique.
pub fn eliminate_cmd(ctx: &Context, candidates: Option<&Path>) -> anyhow::Result<()> {
    ctx.prepare()?;
    let cfg = &ctx.cfg;
    let default = ctx.out("population.json");
    let path = candidates.or(cfg.eliminate.candidates.as_deref()).unwrap_or(&default);
    let genomes = read_candidates(path)?;
    let result = with_evaluator(ctx, EvaluatorChoice::Training, |eval| {
        Ok(eliminate(&genomes, &cfg.eliminate.stages, eval, cfg.eliminate.seed, ctx.exec)?)
    })?;
    for w in &result.warnings {
        eprintln!("warning: {w}");
    }
    let mut w = csv::Writer::from_path(ctx.out("elimination.csv"))?;
    w.write_record(["rank", "genome_hash", "rank_score", "scores", "expression"])?;
    for (i, s) in result.ranked.iter().enumerate() {
        let scores: Vec<String> = s.scores.iter().map(|v| v.to_string()).collect();
        w.write_record([
            (i + 1).to_string(),
            s.genome.canonical_hash().to_string(),
            s.rank_score.to_string(),
            scores.join(";"),
            s.genome.expression(),
        ])?;
    }
    w.flush()?;
    let entries: Vec<GenomeEntry> =
        result.ranked.iter().map(|s| GenomeEntry::new(&s.genome, Some(s.rank_score))).collect();
    write_json(&ctx.out("survivors.json"), &entries)?;
    for (i, e) in entries.iter().enumerate() {
        println!("{}. {} {:.4} {}", i + 1, e.hash, e.fitness.unwrap_or(0.0), e.expression);
    }
    ctx.manifest("eliminate", &["elimination.csv", "survivors.json"])
}

/// Rank correlations, best-k intersections and clustering over fitness ledgers.
pub fn analyze(ctx: &Context, ledgers: &[PathBuf]) -> anyhow::Result<()> {
    ctx.prepare()?;
    let cfg = &ctx.cfg.analysis;
    let mut paths = ledgers.to_vec();
    if paths.is_empty() {
        paths = cfg.ledgers.clone();
    }
    if paths.is_empty() {
        paths.push(ctx.out("rank_ledger.csv"));
    }
    let mut records = Vec::new();
    for p in &paths {
        if !p.is_file() {
            return Err(config_error(format!("ledger {} does not exist", p.display())));
        }
        records.extend(read_ledger(p)?);
    }
    let table = ScoreTable::from_records(&records);
    let present = table.techniques();
    let techs: Vec<Technique> =
        ctx.cfg.augmentation.techniques.iter().copied().filter(|t| present.contains(t)).collect();
    if techs.is_empty() {
        return Err(config_error("the ledgers contain none of the configured techniques"));
    }
    write_scores(&ctx.out("scores.csv"), &table, &techs)?;

    let all = correlation_matrix(&table, &techs, Subset::All);
    let best = correlation_matrix(&table, &techs, Subset::BestK(cfg.best_k));
    all.write_csv(File::create(ctx.out("tau_all.csv"))?)?;
    best.write_csv(File::create(ctx.out("tau_best_k.csv"))?)?;
    let combined = lossearch_core::analysis::CorrelationMatrix::combined(&all, &best);
    combined.write_csv(File::create(ctx.out("tau_table.csv"))?)?;

    let mut w = csv::Writer::from_path(ctx.out("intersections.csv"))?;
    w.write_record(["a", "b", "k", "shared"])?;
    for (i, &a) in techs.iter().enumerate() {
        for &b in &techs[i + 1..] {
            let n = best_k_intersection(&table, a, b, cfg.best_k).len();
            w.write_record([a.to_string(), b.to_string(), cfg.best_k.to_string(), n.to_string()])?;
        }
    }
    w.flush()?;

    let mut outputs = vec!["scores.csv", "tau_all.csv", "tau_best_k.csv", "tau_table.csv", "intersections.csv"];
    let [sx, sy] = cfg.scatter;
    let pts: Vec<(GenomeHash, [f64; 2])> = table
        .scores
        .iter()
        .filter_map(|(g, m)| Some((*g, [*m.get(&sx)?, *m.get(&sy)?])))
        .collect();
    if pts.len() >= cfg.clusters {
        let coords: Vec<[f64; 2]> = pts.iter().map(|p| p.1).collect();
        let labels = agglomerative_cluster_with(&coords, cfg.clusters, ctx.exec)?;
        let mut w = csv::Writer::from_path(ctx.out("clusters.csv"))?;
        w.write_record(["genome_hash", &format!("acc_{sx}"), &format!("acc_{sy}"), "cluster"])?;
        for ((g, [x, y]), l) in pts.iter().zip(labels) {
            w.write_record([g.to_string(), x.to_string(), y.to_string(), l.to_string()])?;
        }
        w.flush()?;
        outputs.push("clusters.csv");
    } else {
        log::warn!("only {} genomes scored on both {sx} and {sy}; skipping clustering", pts.len());
    }
    let mut stdout = std::io::stdout().lock();
    writeln!(stdout, "Kendall tau over {} genomes (upper: all, lower: best {} per pair)", table.scores.len(), cfg.best_k)?;
    combined.write_csv(&mut stdout)?;
    ctx.manifest("analyze", &outputs)
}

fn write_curve(path: &Path, c: &Curve) -> anyhow::Result<()> {
    let mut w = csv::Writer::from_path(path)?;
    w.write_record(["yhat", "raw", "normalized"])?;
    for i in 0..c.yhat.len() {
        w.write_record([c.yhat[i].to_string(), c.raw[i].to_string(), c.normalized[i].to_string()])?;
    }
    w.flush()?;
    Ok(())
}

/// Surface and binary-phenotype CSVs per loss; with `diff`, the normalized
/// difference surface of exactly two losses and its maximum.
pub fn phenotype(ctx: &Context, losses: &[String], diff: bool) -> anyhow::Result<()> {
    ctx.prepare()?;
    let axis = ctx.cfg.phenotype.axis();
    let resolved: Vec<(String, LossGenome)> = losses.iter().map(|l| resolve_loss(l)).collect::<anyhow::Result<_>>()?;
    if diff && resolved.len() != 2 {
        return Err(config_error(format!("--diff needs exactly two losses, got {}", resolved.len())));
    }
    let mut outputs = Vec::new();
    for (name, g) in &resolved {
        let s = surface(g, &axis, &axis)?;
        let file = format!("phenotype_{name}.csv");
        s.write_csv(File::create(ctx.out(&file))?)?;
        outputs.push(file);
        let c = binary_phenotype(g, &axis)?;
        let file = format!("binary_{name}.csv");
        write_curve(&ctx.out(&file), &c)?;
        outputs.push(file);
        let (at, v) = c.argmax();
        println!("{name}: binary phenotype max {v} at yhat={at}");
    }
    if diff {
        let ((na, a), (nb, b)) = (&resolved[0], &resolved[1]);
        let d = difference_surface(a, b, &axis, &axis)?;
        let file = format!("diff_{na}_{nb}.csv");
        d.write_csv(File::create(ctx.out(&file))?)?;
        outputs.push(file);
        let m = d.max_raw();
        let file = format!("diff_{na}_{nb}_max.csv");
        fs::write(ctx.out(&file), format!("y,yhat,value\n{},{},{}\n", m.y, m.yhat, m.value))?;
        outputs.push(file);
        println!("{na} - {nb}: max {} at y={}, yhat={}", m.value, m.y, m.yhat);
    }
    let refs: Vec<&str> = outputs.iter().map(String::as_str).collect();
    ctx.manifest("phenotype", &refs)
}

/// Built-in losses as CSV on stdout.
pub fn losses_list() -> anyhow::Result<()> {
    let mut w = csv::Writer::from_writer(std::io::stdout().lock());
    w.write_record(["name", "active_nodes", "expression"])?;
    for b in all_builtins() {
        w.write_record([b.name.to_string(), b.genome.active_count().to_string(), b.genome.expression()])?;
    }
    w.flush()?;
    Ok(())
}

#[derive(Serialize)]
struct TrainSummary<'a> {
    loss: &'a str,
    expression: String,
    model: String,
    dataset: &'a str,
    record: &'a FitnessRecord,
    early_stopped: bool,
    steps_run: usize,
    final_loss: Option<f64>,
}

/// One training run of a loss under the configured technique.
pub fn train_cmd(ctx: &Context, loss: &str, technique: Option<Technique>) -> anyhow::Result<()> {
    ctx.prepare()?;
    let cfg = &ctx.cfg;
    let (name, genome) = resolve_loss(loss)?;
    let ds = cfg.dataset.build()?;
    let model = cfg.trainer.model_for(&ds);
    let tech = technique.unwrap_or(cfg.augmentation.technique);
    let seed = derive_seed(cfg.seed, &[tag("train")]);
    let report = train(&genome, model, &ds, &cfg.augmentation.pipeline(tech), &cfg.trainer.settings, seed)?;
    let summary = TrainSummary {
        loss: &name,
        expression: genome.expression(),
        model: format!("{model:?}"),
        dataset: &ds.name,
        record: &report.record,
        early_stopped: report.record.early_stopped,
        steps_run: report.losses.len(),
        final_loss: report.losses.last().copied(),
    };
    let file = format!("train_{name}_{tech}.json");
    write_json(&ctx.out(&file), &summary)?;
    println!("{}", serde_json::to_string_pretty(&summary)?);
    ctx.manifest("train", &[&file])
}
