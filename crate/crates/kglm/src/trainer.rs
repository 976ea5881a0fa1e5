//! Joint optimization of the masked-prediction and contrastive losses.
//!
//! One training step: sample B sub-graph origins, build two augmented views
//! each, mask view 1, encode every view on its own tape (batch-parallel),
//! compute per-sample prediction losses and pooled embeddings, couple the
//! pooled embeddings through the contrastive loss on a small head tape, push
//! seed gradients back through the sample tapes, reduce gradients in sample
//! order, clip, and apply a bias-corrected Adam update with decoupled weight
//! decay and a linear warmup/decay schedule.
//!
//! Every random choice derives from (seed, step, sample, stream) so the loss
//! trajectory is bit-identical across runs and thread counts. The same
//! pipeline is instantiated at `f64` for finite-difference gradient checks.

use std::io::Write as _;
use std::path::Path;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::bka::{bind_params, build_bka_mask, encode, BkaConfig, ModelParams, ParamIndex};
use crate::cgsa::{cgsa_loss_with, make_view_pair, pool, AugmentConfig, PoolMethod};
use crate::config::RunConfig;
use crate::error::{Error, Result};
use crate::kgstore::{sample_subgraph, ImportanceScores, KnowledgeGraph, Triple};
use crate::kmp::{kmp_loss, mask_tokens, sample_mask_set};
use crate::numcore::parallel::map_indices;
use crate::numcore::{grad_check, GradCheckReport, Scalar, Tape, Tensor, ValueId};
use crate::seqbuild::{build_vocab, Vocab};

// ── deterministic stream seeds ───────────────────────────────────────

fn splitmix(mut x: u64) -> u64 {
    x ^= x >> 30;
    x = x.wrapping_mul(0xbf58476d1ce4e5b9);
    x ^= x >> 27;
    x = x.wrapping_mul(0x94d049bb133111eb);
    x ^ (x >> 31)
}

/// Deterministic sub-stream seed from structured coordinates.
pub fn stream_seed(parts: &[u64]) -> u64 {
    let mut h = 0x9e3779b97f4a7c15u64;
    for &p in parts {
        h = splitmix(h ^ p).wrapping_add(0x9e3779b97f4a7c15);
    }
    splitmix(h)
}

mod stream {
    pub const ORIGINS: u64 = 1;
    pub const AUGMENT1: u64 = 2;
    pub const AUGMENT2: u64 = 3;
    pub const MASK: u64 = 4;
    pub const DROPOUT1: u64 = 5;
    pub const DROPOUT2: u64 = 6;
}

// ── schedule, clipping, Adam ─────────────────────────────────────────

/// Linear warmup from zero to the peak, then linear decay to zero at
/// `total_steps`.
pub fn lr_schedule(step: usize, cfg: &RunConfig) -> f64 {
    let (w, t) = (cfg.warmup_steps, cfg.total_steps);
    if step >= t {
        return 0.0;
    }
    if step <= w {
        if w == 0 {
            return cfg.peak_lr;
        }
        return cfg.peak_lr * step as f64 / w as f64;
    }
    cfg.peak_lr * (t - step) as f64 / (t - w) as f64
}

/// Scale all gradients so the global L2 norm does not exceed `max_norm`.
/// Returns the pre-clip norm.
pub fn clip_gradients(grads: &mut [Vec<f32>], max_norm: f64) -> f64 {
    let norm_sq: f64 = grads
        .iter()
        .map(|g| g.iter().map(|&x| x as f64 * x as f64).sum::<f64>())
        .sum();
    let norm = norm_sq.sqrt();
    if norm > max_norm && norm > 0.0 {
        let scale = (max_norm / norm) as f32;
        for g in grads.iter_mut() {
            for x in g.iter_mut() {
                *x *= scale;
            }
        }
    }
    norm
}

/// First/second moment accumulators and the step counter.
#[derive(Debug, Clone)]
pub struct OptimizerState {
    pub step: usize,
    pub m: Vec<Vec<f32>>,
    pub v: Vec<Vec<f32>>,
}

impl OptimizerState {
    pub fn new(params: &ModelParams) -> Self {
        OptimizerState {
            step: 0,
            m: params.values.iter().map(|p| vec![0.0; p.len()]).collect(),
            v: params.values.iter().map(|p| vec![0.0; p.len()]).collect(),
        }
    }
}

/// Bias-corrected Adam with decoupled weight decay. Decay applies to weight
/// matrices (2-D parameters), not to gains/biases, and is computed against
/// the pre-update value.
pub fn adam_step(
    params: &mut ModelParams,
    grads: &[Vec<f32>],
    state: &mut OptimizerState,
    lr: f64,
    cfg: &RunConfig,
) {
    state.step += 1;
    let t = state.step as i32;
    let (b1, b2, eps, wd) = (
        cfg.adam_beta1,
        cfg.adam_beta2,
        cfg.adam_eps,
        cfg.weight_decay,
    );
    let bc1 = 1.0 - b1.powi(t);
    let bc2 = 1.0 - b2.powi(t);
    for (i, p) in params.values.iter_mut().enumerate() {
        let decay = params.defs[i].decay;
        for (j, x) in p.iter_mut().enumerate() {
            let g = grads[i][j] as f64;
            let m = b1 * state.m[i][j] as f64 + (1.0 - b1) * g;
            let v = b2 * state.v[i][j] as f64 + (1.0 - b2) * g * g;
            state.m[i][j] = m as f32;
            state.v[i][j] = v as f32;
            let update = lr * (m / bc1) / ((v / bc2).sqrt() + eps);
            let shrink = if decay { lr * wd * *x as f64 } else { 0.0 };
            *x = (*x as f64 - update - shrink) as f32;
        }
    }
}

// ── batch loss (shared by training and gradient checking) ────────────

#[derive(Debug, Clone)]
pub struct LossSettings {
    pub bka: BkaConfig,
    pub augment: AugmentConfig,
    pub gamma: f64,
    pub tau: f64,
    pub lambda_cgsa: f64,
    pub cgsa_symmetric: bool,
    pub pool: PoolMethod,
    /// Enables dropout (streams are still seed-frozen).
    pub train_mode: bool,
}

impl LossSettings {
    pub fn from_config(cfg: &RunConfig, train_mode: bool) -> Self {
        LossSettings {
            bka: cfg.bka(),
            augment: cfg.augment(),
            gamma: cfg.gamma,
            tau: cfg.tau,
            lambda_cgsa: cfg.lambda_cgsa,
            cgsa_symmetric: cfg.cgsa_symmetric,
            pool: cfg.pool_method,
            train_mode,
        }
    }
}

pub struct BatchLoss<S: Scalar> {
    pub total: S,
    pub kmp: S,
    pub cgsa: S,
    pub grads: Option<Vec<Vec<S>>>,
}

struct SampleForward<S: Scalar> {
    tape: Tape<S>,
    kmp_id: ValueId,
    z1_id: ValueId,
    z2_id: ValueId,
    kmp_val: S,
    z1: Vec<S>,
    z2: Vec<S>,
}

/// Full two-objective batch loss. View pairs, masking, masks, encodes and
/// per-sample backward passes fan out over samples; the contrastive coupling
/// and all reductions run in fixed sample order.
#[allow(clippy::too_many_arguments)]
pub fn batch_loss<S: Scalar>(
    tensors: &[Tensor<S>],
    index: &ParamIndex,
    kg: &KnowledgeGraph,
    vocab: &Vocab,
    importance: &ImportanceScores,
    origins: &[Vec<Triple>],
    ls: &LossSettings,
    seed: u64,
    step: u64,
    want_grads: bool,
) -> Result<BatchLoss<S>> {
    if origins.is_empty() {
        return Err(Error::data("batch_loss: empty batch"));
    }
    let b = origins.len();

    let forwards: Vec<Result<SampleForward<S>>> = map_indices(b, |k| {
        let ku = k as u64;
        let mut rng_a1 =
            ChaCha8Rng::seed_from_u64(stream_seed(&[seed, step, ku, stream::AUGMENT1]));
        let mut rng_a2 =
            ChaCha8Rng::seed_from_u64(stream_seed(&[seed, step, ku, stream::AUGMENT2]));
        let pair = make_view_pair(
            &origins[k],
            kg,
            vocab,
            &ls.augment,
            &mut rng_a1,
            &mut rng_a2,
        )?;

        let mut rng_mask = ChaCha8Rng::seed_from_u64(stream_seed(&[seed, step, ku, stream::MASK]));
        let mask_set = sample_mask_set(&pair.view1, ls.gamma, importance, &mut rng_mask)?;
        let mbatch = mask_tokens(&pair.view1, &mask_set)?;

        let attn1 = build_bka_mask(&mbatch.masked_seq, kg, &ls.bka)?;
        let attn2 = build_bka_mask(&pair.view2, kg, &ls.bka)?;

        let mut tape = Tape::<S>::new();
        let bound = bind_params(&mut tape, tensors, index);
        let mut rng_d1 =
            ChaCha8Rng::seed_from_u64(stream_seed(&[seed, step, ku, stream::DROPOUT1]));
        let h1 = encode(
            &mut tape,
            &mbatch.masked_seq,
            &attn1,
            &bound,
            &ls.bka,
            ls.train_mode,
            &mut rng_d1,
        )?;
        let kmp_id = kmp_loss(&mut tape, h1, &mbatch, bound.w_p(), bound.b_p())?;
        let z1_id = pool(&mut tape, h1, ls.pool, Some(&mbatch.masked_seq.ids))?;

        let mut rng_d2 =
            ChaCha8Rng::seed_from_u64(stream_seed(&[seed, step, ku, stream::DROPOUT2]));
        let h2 = encode(
            &mut tape,
            &pair.view2,
            &attn2,
            &bound,
            &ls.bka,
            ls.train_mode,
            &mut rng_d2,
        )?;
        let z2_id = pool(&mut tape, h2, ls.pool, Some(&pair.view2.ids))?;

        let kmp_val = tape.value(kmp_id).item()?;
        let z1 = tape.value(z1_id).data().to_vec();
        let z2 = tape.value(z2_id).data().to_vec();
        Ok(SampleForward {
            tape,
            kmp_id,
            z1_id,
            z2_id,
            kmp_val,
            z1,
            z2,
        })
    });
    let forwards: Vec<SampleForward<S>> = forwards.into_iter().collect::<Result<_>>()?;

    // contrastive head over the pooled embeddings, in sample order
    let mut head = Tape::<S>::new();
    let z1_ids: Vec<ValueId> = forwards
        .iter()
        .enumerate()
        .map(|(k, s)| head.leaf(Tensor::vector(s.z1.clone()).with_grad(), Some(k)))
        .collect();
    let z2_ids: Vec<ValueId> = forwards
        .iter()
        .enumerate()
        .map(|(k, s)| head.leaf(Tensor::vector(s.z2.clone()).with_grad(), Some(b + k)))
        .collect();
    let cgsa_id = cgsa_loss_with(&mut head, &z1_ids, &z2_ids, ls.tau, ls.cgsa_symmetric)?;
    let cgsa_val = head.value(cgsa_id).item()?;

    let inv_b = S::one() / S::from_usize(b);
    let kmp_val = forwards
        .iter()
        .map(|s| s.kmp_val)
        .fold(S::zero(), |a, x| a + x)
        * inv_b;
    let lambda = S::from_f64(ls.lambda_cgsa);
    let total = kmp_val + lambda * cgsa_val;

    if !want_grads {
        return Ok(BatchLoss {
            total,
            kmp: kmp_val,
            cgsa: cgsa_val,
            grads: None,
        });
    }

    let mut head_grads = if ls.lambda_cgsa != 0.0 {
        Some(head.backward(cgsa_id)?)
    } else {
        None
    };
    let d = forwards[0].z1.len();
    let seed_grads: Vec<(Vec<S>, Vec<S>)> = (0..b)
        .map(|k| match head_grads.as_mut() {
            Some(hg) => {
                let scale = |v: Vec<S>| v.into_iter().map(|x| x * lambda).collect::<Vec<S>>();
                (
                    scale(hg.take_or_zero(k, d)),
                    scale(hg.take_or_zero(b + k, d)),
                )
            }
            None => (vec![S::zero(); d], vec![S::zero(); d]),
        })
        .collect();

    let per_sample: Vec<Result<crate::numcore::Gradients<S>>> = map_indices(b, |k| {
        let s = &forwards[k];
        let mut seeds = vec![(s.kmp_id, vec![inv_b])];
        if ls.lambda_cgsa != 0.0 {
            seeds.push((s.z1_id, seed_grads[k].0.clone()));
            seeds.push((s.z2_id, seed_grads[k].1.clone()));
        }
        s.tape.backward_seeded(&seeds)
    });

    let mut acc: Vec<Vec<S>> = tensors.iter().map(|t| vec![S::zero(); t.len()]).collect();
    for res in per_sample {
        let mut g = res?;
        for (i, slot) in acc.iter_mut().enumerate() {
            let part = g.take_or_zero(i, slot.len());
            for (a, x) in slot.iter_mut().zip(part.iter()) {
                *a += *x;
            }
        }
    }
    Ok(BatchLoss {
        total,
        kmp: kmp_val,
        cgsa: cgsa_val,
        grads: Some(acc),
    })
}

// ── training loop ────────────────────────────────────────────────────

#[derive(Debug, Clone)]
pub struct StepStats {
    pub step: usize,
    pub lr: f64,
    pub kmp: f32,
    pub cgsa: f32,
    pub total: f32,
    pub grad_norm: f64,
}

/// Loss-log line: `step<TAB>lr<TAB>kmp<TAB>cgsa<TAB>total`.
pub fn format_log_line(s: &StepStats) -> String {
    format!(
        "{}\t{:.6e}\t{:.6e}\t{:.6e}\t{:.6e}",
        s.step, s.lr, s.kmp, s.cgsa, s.total
    )
}

/// Deterministic batch of sub-graph origins for one step.
pub fn sample_origins(kg: &KnowledgeGraph, cfg: &RunConfig, step: u64) -> Result<Vec<Vec<Triple>>> {
    let mut rng = ChaCha8Rng::seed_from_u64(stream_seed(&[cfg.seed, step, 0, stream::ORIGINS]));
    let candidates: Vec<u32> = (0..kg.n_entities() as u32)
        .filter(|&e| kg.degree(e) > 0)
        .collect();
    if candidates.is_empty() {
        return Err(Error::data("graph has no connected entities"));
    }
    let mut origins = Vec::with_capacity(cfg.batch_size);
    for _ in 0..cfg.batch_size {
        let seed_entity = candidates[rng.gen_range(0..candidates.len())];
        origins.push(sample_subgraph(
            kg,
            seed_entity,
            cfg.subgraph_radius,
            cfg.subgraph_max_triples,
            &mut rng,
        )?);
    }
    Ok(origins)
}

/// One optimization step over a sampled batch.
pub fn train_step(
    params: &mut ModelParams,
    state: &mut OptimizerState,
    kg: &KnowledgeGraph,
    vocab: &Vocab,
    importance: &ImportanceScores,
    origins: &[Vec<Triple>],
    cfg: &RunConfig,
    step: usize,
) -> Result<StepStats> {
    let tensors = params.tensors::<f32>();
    let ls = LossSettings::from_config(cfg, true);
    let out = batch_loss(
        &tensors,
        &params.index,
        kg,
        vocab,
        importance,
        origins,
        &ls,
        cfg.seed,
        step as u64,
        true,
    )
    .map_err(|e| Error::numerical(format!("step {step}: {e}")))?;
    if !out.total.is_finite() {
        return Err(Error::numerical(format!(
            "step {step}: non-finite loss {}",
            out.total
        )));
    }
    let mut grads = out.grads.expect("gradients requested");
    let grad_norm = clip_gradients(&mut grads, cfg.clip_norm);
    let lr = lr_schedule(step, cfg);
    adam_step(params, &grads, state, lr, cfg);
    Ok(StepStats {
        step,
        lr,
        kmp: out.kmp.to_f32(),
        cgsa: out.cgsa.to_f32(),
        total: out.total.to_f32(),
        grad_norm,
    })
}

/// Run `total_steps` optimization steps, invoking `on_step` after each.
pub fn train_loop(
    params: &mut ModelParams,
    state: &mut OptimizerState,
    kg: &KnowledgeGraph,
    vocab: &Vocab,
    importance: &ImportanceScores,
    cfg: &RunConfig,
    mut on_step: impl FnMut(&StepStats) -> Result<()>,
) -> Result<()> {
    cfg.validate()?;
    for step in 1..=cfg.total_steps {
        let origins = sample_origins(kg, cfg, step as u64)?;
        let stats = train_step(params, state, kg, vocab, importance, &origins, cfg, step)?;
        on_step(&stats)?;
    }
    Ok(())
}

// ── checkpointing ────────────────────────────────────────────────────

#[derive(Debug)]
pub struct Checkpoint {
    pub params: ModelParams,
    pub state: OptimizerState,
    pub cfg: RunConfig,
    pub vocab_hash: String,
}

fn shape_str(shape: &[usize]) -> String {
    shape
        .iter()
        .map(|d| d.to_string())
        .collect::<Vec<_>>()
        .join("x")
}

fn parse_shape(s: &str) -> Result<Vec<usize>> {
    s.split('x')
        .map(|d| {
            d.parse()
                .map_err(|_| Error::data(format!("bad shape {s:?}")))
        })
        .collect()
}

/// Write `manifest.txt` (format version, step, vocab hash, config echo,
/// array directory) and `params.bin` (little-endian f32, arrays concatenated
/// in manifest order: parameters, then Adam first and second moments).
pub fn save_checkpoint(
    dir: impl AsRef<Path>,
    params: &ModelParams,
    state: &OptimizerState,
    cfg: &RunConfig,
    vocab_hash: &str,
) -> Result<()> {
    let dir = dir.as_ref();
    std::fs::create_dir_all(dir)?;
    let mut manifest = String::new();
    manifest.push_str("format_version=1\n");
    manifest.push_str(&format!("step={}\n", state.step));
    manifest.push_str(&format!("vocab_hash={vocab_hash}\n"));
    for line in cfg.to_text().lines() {
        manifest.push_str(&format!("cfg.{line}\n"));
    }
    let mut arrays: Vec<(String, Vec<usize>, &[f32])> = Vec::new();
    for (def, val) in params.defs.iter().zip(params.values.iter()) {
        arrays.push((def.name.clone(), def.shape.clone(), val));
    }
    for (def, val) in params.defs.iter().zip(state.m.iter()) {
        arrays.push((format!("m.{}", def.name), vec![val.len()], val));
    }
    for (def, val) in params.defs.iter().zip(state.v.iter()) {
        arrays.push((format!("v.{}", def.name), vec![val.len()], val));
    }
    let mut offset = 0usize;
    let mut bin: Vec<u8> = Vec::new();
    for (i, (name, shape, data)) in arrays.iter().enumerate() {
        manifest.push_str(&format!(
            "array.{i}={name};{};{offset};{}\n",
            shape_str(shape),
            data.len()
        ));
        offset += data.len();
        for x in data.iter() {
            bin.extend_from_slice(&x.to_le_bytes());
        }
    }
    let mut f = std::fs::File::create(dir.join("manifest.txt"))?;
    f.write_all(manifest.as_bytes())?;
    std::fs::write(dir.join("params.bin"), bin)?;
    Ok(())
}

pub fn load_checkpoint(dir: impl AsRef<Path>) -> Result<Checkpoint> {
    let dir = dir.as_ref();
    let manifest = std::fs::read_to_string(dir.join("manifest.txt"))
        .map_err(|e| Error::data(format!("{}: {e}", dir.join("manifest.txt").display())))?;
    let mut step = None;
    let mut vocab_hash = None;
    let mut cfg = RunConfig::default();
    let mut arrays: Vec<(String, Vec<usize>, usize, usize)> = Vec::new();
    for (lineno, line) in manifest.lines().enumerate() {
        let Some((k, v)) = line.split_once('=') else {
            return Err(Error::data(format!(
                "manifest line {}: expected key=value",
                lineno + 1
            )));
        };
        if k == "format_version" {
            if v != "1" {
                return Err(Error::data(format!("unsupported checkpoint format {v}")));
            }
        } else if k == "step" {
            step = Some(v.parse().map_err(|_| Error::data("bad step"))?);
        } else if k == "vocab_hash" {
            vocab_hash = Some(v.to_string());
        } else if let Some(key) = k.strip_prefix("cfg.") {
            cfg.set(key, v)?;
        } else if k.starts_with("array.") {
            let parts: Vec<&str> = v.split(';').collect();
            if parts.len() != 4 {
                return Err(Error::data(format!(
                    "manifest line {}: bad array entry",
                    lineno + 1
                )));
            }
            arrays.push((
                parts[0].to_string(),
                parse_shape(parts[1])?,
                parts[2].parse().map_err(|_| Error::data("bad offset"))?,
                parts[3].parse().map_err(|_| Error::data("bad len"))?,
            ));
        } else {
            return Err(Error::data(format!(
                "manifest line {}: unknown key {k:?}",
                lineno + 1
            )));
        }
    }
    let step = step.ok_or_else(|| Error::data("manifest missing step"))?;
    let vocab_hash = vocab_hash.ok_or_else(|| Error::data("manifest missing vocab_hash"))?;

    let total: usize = arrays.iter().map(|(_, _, _, len)| len).sum();
    let bin = std::fs::read(dir.join("params.bin"))?;
    if bin.len() != total * 4 {
        return Err(Error::data(format!(
            "params.bin is {} bytes, manifest expects {} ({} floats)",
            bin.len(),
            total * 4,
            total
        )));
    }
    let floats: Vec<f32> = bin
        .chunks_exact(4)
        .map(|c| f32::from_le_bytes([c[0], c[1], c[2], c[3]]))
        .collect();

    // vocab size comes from the token embedding's row count
    let emb = arrays
        .iter()
        .find(|(name, _, _, _)| name == "embed.token")
        .ok_or_else(|| Error::data("manifest missing embed.token"))?;
    let vocab_size = emb.1[0];
    let mut params = ModelParams::init(&cfg.bka(), vocab_size, 0)?;
    let mut state = OptimizerState::new(&params);
    state.step = step;

    for (name, shape, offset, len) in &arrays {
        let data = floats
            .get(*offset..*offset + *len)
            .ok_or_else(|| Error::data(format!("array {name} out of range")))?;
        if let Some(rest) = name.strip_prefix("m.") {
            let i = find_param(&params, rest)?;
            state.m[i].copy_from_slice(data);
        } else if let Some(rest) = name.strip_prefix("v.") {
            let i = find_param(&params, rest)?;
            state.v[i].copy_from_slice(data);
        } else {
            let i = find_param(&params, name)?;
            if params.defs[i].shape != *shape {
                return Err(Error::data(format!(
                    "array {name}: shape {shape:?} does not match config-derived {:?}",
                    params.defs[i].shape
                )));
            }
            params.values[i].copy_from_slice(data);
        }
    }
    Ok(Checkpoint {
        params,
        state,
        cfg,
        vocab_hash,
    })
}

fn find_param(params: &ModelParams, name: &str) -> Result<usize> {
    params
        .defs
        .iter()
        .position(|d| d.name == name)
        .ok_or_else(|| Error::data(format!("unknown array {name:?} in checkpoint")))
}

// ── toy gradient check ───────────────────────────────────────────────

/// Micro graph + toy model, full two-objective pipeline, checked at f64
/// against central finite differences over every parameter entry.
pub fn toy_grad_check() -> Result<GradCheckReport> {
    let kg = KnowledgeGraph::from_named_triples(vec![
        ("a", "r", "b"),
        ("b", "r", "c"),
        ("c", "s", "d"),
        ("d", "s", "e"),
        ("e", "r", "f"),
        ("f", "s", "a"),
    ])?;
    let vocab = build_vocab(&kg, 1)?;
    let importance = crate::kgstore::importance_scores(&kg, 0.85, 50)?;
    let bka = BkaConfig {
        max_len: 8,
        ..BkaConfig::toy()
    };
    let ls = LossSettings {
        bka: bka.clone(),
        augment: AugmentConfig {
            p_aug: 0.3,
            hop_radius: 1,
            max_len: 8,
        },
        gamma: 0.3,
        tau: 0.07,
        lambda_cgsa: 1.0,
        cgsa_symmetric: false,
        pool: PoolMethod::Mean,
        train_mode: true,
    };
    // B = 2 single-triple origins: sequences stay within N <= 8
    let origins = vec![vec![kg.triples()[0]], vec![kg.triples()[2]]];
    let params = ModelParams::init(&bka, vocab.size(), 1234)?;
    let tensors = params.tensors::<f64>();
    let index = params.index.clone();
    let f = |ps: &[Tensor<f64>], want: bool| {
        let out = batch_loss(
            ps,
            &index,
            &kg,
            &vocab,
            &importance,
            &origins,
            &ls,
            99,
            1,
            want,
        )?;
        Ok((out.total, out.grads))
    };
    grad_check(f, &tensors, 1e-3)
}

use rand::Rng;
