//! Command-line entry points: ingestion, training, evaluation, zero-shot
//! evaluation, gradient checking, and diagnostic dumps.
//!
//! Exit codes: 0 success, 1 usage/config error, 2 data error, 3 numerical
//! failure. Configuration comes from an optional `key=value` file plus
//! repeated `--set key=value` overrides (overrides win); evaluation commands
//! take the model configuration from the checkpoint itself.

use std::collections::HashSet;
use std::io::Write as _;
use std::path::{Path, PathBuf};

use clap::error::ErrorKind;
use clap::{Args, Parser, Subcommand};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::bka::{build_bka_mask, ModelParams};
use crate::config::RunConfig;
use crate::error::{Error, Result};
use crate::evalsuite::{
    evaluate, EmbedCosineScorer, EvalModel, MaskLogitScorer, Protocol, Scorer, ScorerKind,
};
use crate::kgstore::{
    importance_scores, parse_triple_rows, sample_subgraph, zero_shot_split, KnowledgeGraph, Split,
    Triple,
};
use crate::seqbuild::{build_vocab, serialize, TokenKind, TokenSequence, Vocab, BOS, EOS};
use crate::synth::triples_to_text;
use crate::trainer::{load_checkpoint, save_checkpoint, toy_grad_check, OptimizerState};

#[derive(Parser)]
#[command(
    name = "kglm",
    version,
    about = "Graph-conditioned bidirectional language model"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Args, Clone, Default)]
struct ConfigArgs {
    /// Configuration file (key=value lines).
    #[arg(long)]
    config: Option<PathBuf>,
    /// Override a configuration key, e.g. --set total_steps=500.
    #[arg(long = "set", value_name = "KEY=VALUE")]
    set: Vec<String>,
    /// Override the RNG seed.
    #[arg(long)]
    seed: Option<u64>,
}

impl ConfigArgs {
    fn resolve(&self) -> Result<RunConfig> {
        let mut cfg = match &self.config {
            Some(path) => RunConfig::load(path)?,
            None => RunConfig::default(),
        };
        for kv in &self.set {
            let Some((k, v)) = kv.split_once('=') else {
                return Err(Error::usage(format!("--set expects key=value, got {kv:?}")));
            };
            cfg.set(k.trim(), v.trim())?;
        }
        if let Some(seed) = self.seed {
            cfg.seed = seed;
        }
        cfg.validate()?;
        Ok(cfg)
    }
}

#[derive(Subcommand)]
enum Command {
    /// Validate triple/description files into a dataset directory with a
    /// persisted vocabulary.
    Ingest {
        #[arg(long)]
        train: PathBuf,
        #[arg(long)]
        valid: Option<PathBuf>,
        #[arg(long)]
        test: Option<PathBuf>,
        #[arg(long)]
        descriptions: Option<PathBuf>,
        #[arg(long)]
        out: PathBuf,
        #[command(flatten)]
        config: ConfigArgs,
    },
    /// Train on a dataset directory, writing a loss log and checkpoints.
    Train {
        #[arg(long)]
        data: PathBuf,
        #[arg(long)]
        out: PathBuf,
        #[command(flatten)]
        config: ConfigArgs,
    },
    /// Evaluate a checkpoint on the dataset's test split.
    Eval {
        #[arg(long)]
        data: PathBuf,
        #[arg(long)]
        checkpoint: PathBuf,
        #[arg(long)]
        out: PathBuf,
        #[arg(long, default_value = "mask-logit")]
        scorer: String,
        #[arg(long, default_value = "filtered")]
        protocol: String,
    },
    /// Zero-shot protocol: hold out entities (or use the dataset's own
    /// train/test partition) and rank with the description-embedding scorer.
    ZeroShotEval {
        #[arg(long)]
        data: PathBuf,
        #[arg(long)]
        checkpoint: Option<PathBuf>,
        #[arg(long)]
        out: Option<PathBuf>,
        /// Fraction of entities to hold out; omit to reuse the dataset's own
        /// train/test partition as the split.
        #[arg(long)]
        fraction: Option<f64>,
        #[arg(long, default_value_t = 7)]
        split_seed: u64,
        /// Write the derived split's train/test triple files here.
        #[arg(long)]
        emit_split: Option<PathBuf>,
    },
    /// Finite-difference sweep over every parameter of a toy model.
    GradCheck,
    /// Print the attention mask of a sequence as a 0/- character grid.
    MaskDump {
        #[arg(long)]
        data: Option<PathBuf>,
        /// Build the sequence from a sampled sub-graph around this entity.
        #[arg(long)]
        entity: Option<String>,
        /// Build a pure text sequence from these words instead.
        #[arg(long)]
        text: Option<String>,
        #[arg(long, default_value_t = 2)]
        radius: usize,
        #[arg(long, default_value_t = 6)]
        max_triples: usize,
        #[command(flatten)]
        config: ConfigArgs,
    },
    /// Dump entity embeddings as tab-separated `id<TAB>v0<TAB>...` lines.
    EmbedDump {
        #[arg(long)]
        data: PathBuf,
        #[arg(long)]
        checkpoint: PathBuf,
        #[arg(long)]
        out: PathBuf,
    },
}

/// A validated dataset directory: the union graph with descriptions, the
/// train-only graph, split triples, and the persisted vocabulary.
pub struct Dataset {
    pub full: KnowledgeGraph,
    pub train: KnowledgeGraph,
    pub valid_triples: Vec<Triple>,
    pub test_triples: Vec<Triple>,
    pub vocab: Vocab,
}

impl Dataset {
    pub fn load(dir: impl AsRef<Path>) -> Result<Dataset> {
        let dir = dir.as_ref();
        let read = |name: &str| -> Result<Option<String>> {
            let p = dir.join(name);
            if p.exists() {
                Ok(Some(std::fs::read_to_string(&p)?))
            } else {
                Ok(None)
            }
        };
        let train_text = read("train.tsv")?
            .ok_or_else(|| Error::data(format!("{}: missing train.tsv", dir.display())))?;
        let valid_text = read("valid.tsv")?.unwrap_or_default();
        let test_text = read("test.tsv")?.unwrap_or_default();
        let (full, train, valid_triples, test_triples) =
            build_graphs(&train_text, &valid_text, &test_text)?;
        let mut full = full;
        if let Some(desc) = read("descriptions.tsv")? {
            crate::kgstore::parse_descriptions(&desc, &mut full)?;
        }
        let train = full.with_triples(train.triples().to_vec())?;
        let vocab = Vocab::load(dir.join("vocab.tsv"))?;
        if vocab.n_entities() as usize != full.n_entities()
            || vocab.n_relations() as usize != full.n_relations()
        {
            return Err(Error::data(format!(
                "vocab covers {} entities / {} relations, dataset has {} / {}",
                vocab.n_entities(),
                vocab.n_relations(),
                full.n_entities(),
                full.n_relations()
            )));
        }
        Ok(Dataset {
            full,
            train,
            valid_triples,
            test_triples,
            vocab,
        })
    }

    pub fn split(&self) -> Split {
        Split {
            train: self.train.clone(),
            valid_triples: self.valid_triples.clone(),
            test_triples: self.test_triples.clone(),
            unseen_entities: HashSet::new(),
        }
    }

    /// Interpret the dataset's own train/test partition as a zero-shot
    /// split: unseen entities are those absent from every train triple.
    pub fn as_zero_shot_split(&self) -> Result<Split> {
        let mut train_entities: HashSet<u32> = HashSet::new();
        for t in self.train.triples() {
            train_entities.insert(t.head);
            train_entities.insert(t.tail);
        }
        let unseen: HashSet<u32> = (0..self.full.n_entities() as u32)
            .filter(|e| !train_entities.contains(e))
            .collect();
        for t in &self.test_triples {
            if !unseen.contains(&t.head) && !unseen.contains(&t.tail) {
                return Err(Error::data(
                    "dataset is not a zero-shot split: a test triple has both entities in train \
                     (derive one with --fraction / --emit-split first)",
                ));
            }
        }
        Ok(Split {
            train: self.train.clone(),
            valid_triples: self.valid_triples.clone(),
            test_triples: self.test_triples.clone(),
            unseen_entities: unseen,
        })
    }
}

/// Build the union graph (ids assigned over train, then valid, then test)
/// and resolve each split's triples against it.
fn build_graphs(
    train: &str,
    valid: &str,
    test: &str,
) -> Result<(KnowledgeGraph, KnowledgeGraph, Vec<Triple>, Vec<Triple>)> {
    let train_rows = parse_triple_rows(train)?;
    if train_rows.is_empty() {
        return Err(Error::data("train.tsv is empty"));
    }
    let valid_rows = parse_triple_rows(valid)?;
    let test_rows = parse_triple_rows(test)?;
    let all = train_rows
        .iter()
        .chain(valid_rows.iter())
        .chain(test_rows.iter());
    let full = KnowledgeGraph::from_named_triples(all.map(|(h, r, t)| (*h, *r, *t)))?;
    fn resolve(full: &KnowledgeGraph, rows: &[(&str, &str, &str)]) -> Vec<Triple> {
        let mut seen = HashSet::new();
        let mut out = Vec::new();
        for (h, r, t) in rows {
            let triple = Triple {
                head: full.entity_id(h).expect("interned"),
                rel: full.relation_id(r).expect("interned"),
                tail: full.entity_id(t).expect("interned"),
            };
            if seen.insert(triple) {
                out.push(triple);
            }
        }
        out
    }
    let train_kg = full.with_triples(resolve(&full, &train_rows))?;
    let valid_t = resolve(&full, &valid_rows);
    let test_t = resolve(&full, &test_rows);
    Ok((full, train_kg, valid_t, test_t))
}

fn scorer_from_name(name: &str) -> Result<ScorerKind> {
    match name {
        "mask-logit" => Ok(ScorerKind::MaskLogit),
        "embed-cosine" => Ok(ScorerKind::EmbedCosine),
        _ => Err(Error::usage(format!(
            "unknown scorer {name:?} (mask-logit|embed-cosine)"
        ))),
    }
}

fn protocol_from_name(name: &str) -> Result<Protocol> {
    match name {
        "filtered" => Ok(Protocol::Filtered),
        "raw" => Ok(Protocol::Raw),
        _ => Err(Error::usage(format!(
            "unknown protocol {name:?} (filtered|raw)"
        ))),
    }
}

/// Parse and run. Returns the process exit code.
pub fn run<I, T>(argv: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<std::ffi::OsString> + Clone,
{
    let cli = match Cli::try_parse_from(argv) {
        Ok(cli) => cli,
        Err(e) => {
            let code = match e.kind() {
                ErrorKind::DisplayHelp | ErrorKind::DisplayVersion => 0,
                _ => 1,
            };
            let _ = e.print();
            return code;
        }
    };
    match dispatch(cli.command) {
        Ok(()) => 0,
        Err(e) => {
            eprintln!("error: {e}");
            e.exit_code()
        }
    }
}

fn dispatch(cmd: Command) -> Result<()> {
    match cmd {
        Command::Ingest {
            train,
            valid,
            test,
            descriptions,
            out,
            config,
        } => {
            let cfg = config.resolve()?;
            cmd_ingest(
                &train,
                valid.as_deref(),
                test.as_deref(),
                descriptions.as_deref(),
                &out,
                &cfg,
            )
        }
        Command::Train { data, out, config } => {
            let cfg = config.resolve()?;
            cmd_train(&data, &out, &cfg)
        }
        Command::Eval {
            data,
            checkpoint,
            out,
            scorer,
            protocol,
        } => cmd_eval(
            &data,
            &checkpoint,
            &out,
            scorer_from_name(&scorer)?,
            protocol_from_name(&protocol)?,
        ),
        Command::ZeroShotEval {
            data,
            checkpoint,
            out,
            fraction,
            split_seed,
            emit_split,
        } => cmd_zero_shot(
            &data,
            checkpoint.as_deref(),
            out.as_deref(),
            fraction,
            split_seed,
            emit_split.as_deref(),
        ),
        Command::GradCheck => cmd_grad_check(),
        Command::MaskDump {
            data,
            entity,
            text,
            radius,
            max_triples,
            config,
        } => {
            let cfg = config.resolve()?;
            cmd_mask_dump(
                data.as_deref(),
                entity.as_deref(),
                text.as_deref(),
                radius,
                max_triples,
                &cfg,
            )
        }
        Command::EmbedDump {
            data,
            checkpoint,
            out,
        } => cmd_embed_dump(&data, &checkpoint, &out),
    }
}

fn write_file(path: &Path, content: &str) -> Result<()> {
    if let Some(parent) = path.parent() {
        std::fs::create_dir_all(parent)?;
    }
    std::fs::write(path, content)?;
    Ok(())
}

fn cmd_ingest(
    train: &Path,
    valid: Option<&Path>,
    test: Option<&Path>,
    descriptions: Option<&Path>,
    out: &Path,
    cfg: &RunConfig,
) -> Result<()> {
    let read = |p: &Path| -> Result<String> {
        std::fs::read_to_string(p).map_err(|e| Error::data(format!("{}: {e}", p.display())))
    };
    let train_text = read(train)?;
    let valid_text = valid.map(read).transpose()?.unwrap_or_default();
    let test_text = test.map(read).transpose()?.unwrap_or_default();
    let (mut full, train_kg, valid_triples, test_triples) =
        build_graphs(&train_text, &valid_text, &test_text)?;
    let mut skipped = 0usize;
    if let Some(p) = descriptions {
        let report = crate::kgstore::parse_descriptions(&read(p)?, &mut full)?;
        skipped = report.skipped.len();
    }
    let vocab = build_vocab(&full, cfg.min_freq)?;
    std::fs::create_dir_all(out)?;
    write_file(
        &out.join("train.tsv"),
        &triples_to_text(&full, train_kg.triples()),
    )?;
    if !valid_triples.is_empty() {
        write_file(
            &out.join("valid.tsv"),
            &triples_to_text(&full, &valid_triples),
        )?;
    }
    if !test_triples.is_empty() {
        write_file(
            &out.join("test.tsv"),
            &triples_to_text(&full, &test_triples),
        )?;
    }
    if full.n_descriptions() > 0 {
        write_file(
            &out.join("descriptions.tsv"),
            &crate::synth::descriptions_to_text(&full),
        )?;
    }
    vocab.save(out.join("vocab.tsv"))?;
    let manifest = format!(
        "entities={}\nrelations={}\ntrain_triples={}\nvalid_triples={}\ntest_triples={}\n\
         descriptions={}\nskipped_descriptions={skipped}\nvocab_size={}\nvocab_hash={}\n",
        full.n_entities(),
        full.n_relations(),
        train_kg.triples().len(),
        valid_triples.len(),
        test_triples.len(),
        full.n_descriptions(),
        vocab.size(),
        vocab.content_hash()
    );
    write_file(&out.join("dataset.txt"), &manifest)?;
    print!("{manifest}");
    Ok(())
}

fn cmd_train(data: &Path, out: &Path, cfg: &RunConfig) -> Result<()> {
    cfg.validate()?;
    let ds = Dataset::load(data)?;
    let importance = importance_scores(&ds.train, cfg.pagerank_damping, cfg.pagerank_iters)?;
    let mut params = ModelParams::init(&cfg.bka(), ds.vocab.size(), cfg.seed)?;
    let mut state = OptimizerState::new(&params);
    std::fs::create_dir_all(out)?;
    let mut log = std::io::BufWriter::new(std::fs::File::create(out.join("loss.log"))?);
    let vocab_hash = ds.vocab.content_hash();
    for step in 1..=cfg.total_steps {
        let origins = crate::trainer::sample_origins(&ds.train, cfg, step as u64)?;
        let stats = crate::trainer::train_step(
            &mut params,
            &mut state,
            &ds.train,
            &ds.vocab,
            &importance,
            &origins,
            cfg,
            step,
        )?;
        writeln!(log, "{}", crate::trainer::format_log_line(&stats))?;
        if cfg.checkpoint_every > 0 && step % cfg.checkpoint_every == 0 && step != cfg.total_steps {
            save_checkpoint(
                out.join(format!("checkpoint-{step}")),
                &params,
                &state,
                cfg,
                &vocab_hash,
            )?;
        }
    }
    log.flush()?;
    save_checkpoint(
        out.join("checkpoint-final"),
        &params,
        &state,
        cfg,
        &vocab_hash,
    )?;
    println!(
        "trained {} steps; checkpoint-final written to {}",
        cfg.total_steps,
        out.display()
    );
    Ok(())
}

fn cmd_eval(
    data: &Path,
    checkpoint: &Path,
    out: &Path,
    scorer: ScorerKind,
    protocol: Protocol,
) -> Result<()> {
    let ds = Dataset::load(data)?;
    let ckpt = load_checkpoint(checkpoint)?;
    if ckpt.vocab_hash != ds.vocab.content_hash() {
        return Err(Error::data(format!(
            "vocab hash mismatch: checkpoint {} vs dataset {}",
            ckpt.vocab_hash,
            ds.vocab.content_hash()
        )));
    }
    if ds.test_triples.is_empty() {
        return Err(Error::data("dataset has no test split"));
    }
    let bka = ckpt.cfg.bka();
    let model = EvalModel {
        kg: &ds.train,
        vocab: &ds.vocab,
        params: &ckpt.params,
        cfg: &bka,
        pool_method: ckpt.cfg.pool_method,
    };
    let split = ds.split();
    let report = run_scorer(&model, &split, scorer, protocol)?;
    std::fs::create_dir_all(out)?;
    write_file(&out.join("report.txt"), &report.to_kv_text())?;
    write_file(&out.join("report.tsv"), &report.to_tsv())?;
    print!("{}", report.to_kv_text());
    Ok(())
}

fn run_scorer(
    model: &EvalModel,
    split: &Split,
    kind: ScorerKind,
    protocol: Protocol,
) -> Result<crate::evalsuite::EvalReport> {
    match kind {
        ScorerKind::MaskLogit => evaluate(model, split, &MaskLogitScorer, protocol),
        ScorerKind::EmbedCosine => {
            let scorer = EmbedCosineScorer::new(model)?;
            evaluate(model, split, &scorer as &dyn Scorer, protocol)
        }
    }
}

fn cmd_zero_shot(
    data: &Path,
    checkpoint: Option<&Path>,
    out: Option<&Path>,
    fraction: Option<f64>,
    split_seed: u64,
    emit_split: Option<&Path>,
) -> Result<()> {
    let ds = Dataset::load(data)?;
    let split = match fraction {
        Some(f) => {
            let mut rng = ChaCha8Rng::seed_from_u64(split_seed);
            zero_shot_split(&ds.full, f, &mut rng)?
        }
        None => ds.as_zero_shot_split()?,
    };
    if let Some(dir) = emit_split {
        std::fs::create_dir_all(dir)?;
        write_file(
            &dir.join("train.tsv"),
            &triples_to_text(&ds.full, split.train.triples()),
        )?;
        write_file(
            &dir.join("test.tsv"),
            &triples_to_text(&ds.full, &split.test_triples),
        )?;
        println!(
            "split written to {}: {} train / {} test triples, {} unseen entities",
            dir.display(),
            split.train.triples().len(),
            split.test_triples.len(),
            split.unseen_entities.len()
        );
    }
    let Some(checkpoint) = checkpoint else {
        if emit_split.is_none() {
            return Err(Error::usage(
                "zero-shot-eval needs --checkpoint or --emit-split",
            ));
        }
        return Ok(());
    };
    let ckpt = load_checkpoint(checkpoint)?;
    if ckpt.vocab_hash != ds.vocab.content_hash() {
        return Err(Error::data(format!(
            "vocab hash mismatch: checkpoint {} vs dataset {}",
            ckpt.vocab_hash,
            ds.vocab.content_hash()
        )));
    }
    let bka = ckpt.cfg.bka();
    let model = EvalModel {
        kg: &split.train,
        vocab: &ds.vocab,
        params: &ckpt.params,
        cfg: &bka,
        pool_method: ckpt.cfg.pool_method,
    };
    let report = run_scorer(&model, &split, ScorerKind::EmbedCosine, Protocol::Filtered)?;
    if report.unseen_coverage != Some(1.0) {
        return Err(Error::data(format!(
            "zero-shot invariant violated: unseen coverage {:?}",
            report.unseen_coverage
        )));
    }
    if let Some(out) = out {
        std::fs::create_dir_all(out)?;
        write_file(&out.join("report.txt"), &report.to_kv_text())?;
        write_file(&out.join("report.tsv"), &report.to_tsv())?;
    }
    print!("{}", report.to_kv_text());
    Ok(())
}

fn cmd_grad_check() -> Result<()> {
    let report = toy_grad_check()?;
    let pass = report.max_rel_err < 1e-3;
    println!(
        "grad-check: max_rel_err={:.3e} over {} entries (threshold 1e-3): {}",
        report.max_rel_err,
        report.entries_checked,
        if pass { "PASS" } else { "FAIL" }
    );
    if pass {
        Ok(())
    } else {
        Err(Error::numerical(format!(
            "gradient check failed: {:.3e} at parameter {} index {}",
            report.max_rel_err, report.worst_param, report.worst_index
        )))
    }
}

fn cmd_mask_dump(
    data: Option<&Path>,
    entity: Option<&str>,
    text: Option<&str>,
    radius: usize,
    max_triples: usize,
    cfg: &RunConfig,
) -> Result<()> {
    let bka = cfg.bka();
    let (kg, seq) = match (entity, text) {
        (Some(name), None) => {
            let data =
                data.ok_or_else(|| Error::usage("--entity requires --data <dataset dir>"))?;
            let ds = Dataset::load(data)?;
            let id = ds
                .full
                .entity_id(name)
                .ok_or_else(|| Error::data(format!("unknown entity {name:?}")))?;
            let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
            let origin = sample_subgraph(&ds.train, id, radius, max_triples, &mut rng)?;
            let seq = serialize(&origin, &ds.full, &ds.vocab, cfg.max_len)?;
            (ds.train.clone(), seq)
        }
        (None, Some(words)) => {
            // pure text sequence; the graph is irrelevant for condition (2)
            let kg = KnowledgeGraph::from_named_triples(vec![("x", "r", "y")])?;
            let n_words = crate::seqbuild::tokenize_text(words).len();
            let mut seq = TokenSequence {
                ids: vec![BOS],
                kinds: vec![TokenKind::Special],
                entity_of: vec![None],
                source_triples: Vec::new(),
            };
            for _ in 0..n_words {
                seq.ids.push(crate::seqbuild::UNK);
                seq.kinds.push(TokenKind::Text);
                seq.entity_of.push(None);
            }
            seq.ids.push(EOS);
            seq.kinds.push(TokenKind::Special);
            seq.entity_of.push(None);
            (kg, seq)
        }
        _ => {
            return Err(Error::usage(
                "mask-dump needs exactly one of --entity or --text",
            ))
        }
    };
    let mask = build_bka_mask(&seq, &kg, &bka)?;
    print!("{}", mask.to_text_grid());
    Ok(())
}

fn cmd_embed_dump(data: &Path, checkpoint: &Path, out: &Path) -> Result<()> {
    let ds = Dataset::load(data)?;
    let ckpt = load_checkpoint(checkpoint)?;
    if ckpt.vocab_hash != ds.vocab.content_hash() {
        return Err(Error::data(
            "vocab hash mismatch between checkpoint and dataset".to_string(),
        ));
    }
    let d = ckpt.cfg.model_dim;
    let emb = &ckpt.params.values[ckpt.params.index.token_emb];
    let mut text = String::new();
    for e in 0..ds.full.n_entities() as u32 {
        let row = ds.vocab.entity_symbol(e) as usize;
        text.push_str(&e.to_string());
        for c in 0..d {
            text.push('\t');
            text.push_str(&format!("{:e}", emb[row * d + c]));
        }
        text.push('\n');
    }
    write_file(out, &text)?;
    println!(
        "wrote {} embeddings of dimension {d} to {}",
        ds.full.n_entities(),
        out.display()
    );
    Ok(())
}
