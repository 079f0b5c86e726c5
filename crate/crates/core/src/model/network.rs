use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::data::Session;
use crate::error::{Error, Result};
use crate::model::layers::{
    aggregate_prior, dense, encode_session, gru_cell, mean_embedding, run_gru, ssrn_similarity,
    zeros, DenseWeights, GruWeights,
};
use crate::model::{Activation, LossMode, ModelConfig, Variant};
use crate::retrieval::CandidateSets;
use crate::tensor::{ParamId, ParameterStore, Tape, Tensor, Var};

/// Probability clamp of the complement loss.
pub const PROB_EPS: f64 = 1e-12;

const GRU_PARTS: [&str; 9] = ["w_z", "u_z", "b_z", "w_r", "u_r", "b_r", "w_h", "u_h", "b_h"];

#[derive(Debug, Clone, Copy)]
struct GruIds([ParamId; 9]);

#[derive(Debug, Clone, Copy)]
struct DenseIds {
    weight: ParamId,
    bias: ParamId,
}

/// Parameter handles plus the configuration they were built for.
#[derive(Debug, Clone)]
pub struct Model {
    config: ModelConfig,
    item_emb: ParamId,
    user_emb: ParamId,
    gru: GruIds,
    ssrn_gru: Option<GruIds>,
    mlp_h: DenseIds,
    mlp_s: DenseIds,
    mlp_out: DenseIds,
}

/// The model's parameters bound onto one tape.
#[derive(Debug, Clone, Copy)]
pub struct Weights {
    pub item_emb: Var,
    pub user_emb: Var,
    pub gru: GruWeights,
    /// Same handles as `gru` when the retrieval network shares weights.
    pub ssrn_gru: GruWeights,
    pub mlp_h: DenseWeights,
    pub mlp_s: DenseWeights,
    pub mlp_out: DenseWeights,
}

/// Intermediate values of one pool for one prediction.
#[derive(Debug, Clone)]
pub struct PoolTrace {
    /// Similarity of each candidate, in candidate order.
    pub scores: Vec<Var>,
    /// Session encoder output `w_cs` of each candidate.
    pub encodings: Vec<Var>,
    /// Per-position products `h_i . h_c` of each candidate; empty for variant `a`.
    pub lambdas: Vec<Vec<Var>>,
    pub beta: Var,
}

/// Every intermediate of a single-context forward pass.
#[derive(Debug, Clone)]
pub struct ForwardTrace {
    pub h_c: Var,
    pub own: PoolTrace,
    pub others: PoolTrace,
    pub psi: Var,
    pub logits: Var,
}

/// Forward pass over every prefix of a sequence; row `i` belongs to the
/// context made of the first `i + 1` items.
#[derive(Debug, Clone)]
pub struct SessionTrace {
    pub h_c: Var,
    /// `rows x k` similarity matrices, when the pool was used and non-empty.
    pub own_scores: Option<Var>,
    pub other_scores: Option<Var>,
    pub beta_h: Var,
    pub beta_s: Var,
    pub psi: Var,
    pub logits: Var,
}

fn uniform(rng: &mut ChaCha8Rng, rows: usize, cols: usize, bound: f64) -> Tensor {
    let data = (0..rows * cols).map(|_| rng.gen_range(-bound..bound)).collect();
    Tensor::matrix(rows, cols, data).expect("positive dims")
}

impl Model {
    /// Fresh parameters: `U(-1/sqrt(d), 1/sqrt(d))` for every matrix and
    /// embedding table, zeros for biases.
    pub fn init(config: ModelConfig, seed: u64) -> Result<(Model, ParameterStore)> {
        config.validate()?;
        let d = config.embed_dim;
        let (m, n) = (config.item_vocab, config.user_vocab);
        let bound = 1.0 / (d as f64).sqrt();
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut store = ParameterStore::new();

        store.insert("item_embeddings", uniform(&mut rng, m, d, bound))?;
        store.insert("user_embeddings", uniform(&mut rng, n, d, bound))?;
        let mut grus = vec!["gru"];
        if !config.share_ssrn_gru {
            grus.push("ssrn_gru");
        }
        for prefix in grus {
            for part in GRU_PARTS {
                let value = if part.starts_with('b') {
                    Tensor::zeros(&[1, d])
                } else {
                    uniform(&mut rng, d, d, bound)
                };
                store.insert(format!("{prefix}.{part}"), value)?;
            }
        }
        for (prefix, out) in [("mlp_h", d), ("mlp_s", d), ("mlp_out", m)] {
            store.insert(format!("{prefix}.weight"), uniform(&mut rng, d, out, bound))?;
            store.insert(format!("{prefix}.bias"), Tensor::zeros(&[1, out]))?;
        }
        let model = Model::bind(config, &store)?;
        Ok((model, store))
    }

    /// Look up every parameter by name and check its shape.
    pub fn bind(config: ModelConfig, store: &ParameterStore) -> Result<Model> {
        config.validate()?;
        let d = config.embed_dim;
        let (m, n) = (config.item_vocab, config.user_vocab);
        let get = |name: &str, shape: [usize; 2]| -> Result<ParamId> {
            let id = store.id(name)?;
            let got = store.value(id).shape();
            if got != shape {
                return Err(Error::ArtifactMismatch(format!(
                    "parameter {name} has shape {got:?}, config expects {shape:?}"
                )));
            }
            Ok(id)
        };
        let gru = |prefix: &str| -> Result<GruIds> {
            let mut ids = Vec::with_capacity(9);
            for part in GRU_PARTS {
                let shape = if part.starts_with('b') { [1, d] } else { [d, d] };
                ids.push(get(&format!("{prefix}.{part}"), shape)?);
            }
            Ok(GruIds(ids.try_into().expect("nine parts")))
        };
        let dense = |prefix: &str, out: usize| -> Result<DenseIds> {
            Ok(DenseIds {
                weight: get(&format!("{prefix}.weight"), [d, out])?,
                bias: get(&format!("{prefix}.bias"), [1, out])?,
            })
        };
        Ok(Model {
            item_emb: get("item_embeddings", [m, d])?,
            user_emb: get("user_embeddings", [n, d])?,
            gru: gru("gru")?,
            ssrn_gru: if config.share_ssrn_gru {
                None
            } else {
                Some(gru("ssrn_gru")?)
            },
            mlp_h: dense("mlp_h", d)?,
            mlp_s: dense("mlp_s", d)?,
            mlp_out: dense("mlp_out", m)?,
            config,
        })
    }

    pub fn config(&self) -> &ModelConfig {
        &self.config
    }

    /// Same parameters, different run-time switches. Shapes and weight
    /// sharing must not change.
    pub fn with_config(&self, config: ModelConfig, store: &ParameterStore) -> Result<Model> {
        Model::bind(config, store)
    }

    /// A tape at the configured precision.
    pub fn tape<'s>(&self, store: &'s ParameterStore) -> Tape<'s> {
        Tape::with_precision(store, self.config.precision)
    }

    pub fn weights(&self, tape: &mut Tape<'_>) -> Weights {
        let gru = |tape: &mut Tape<'_>, ids: &GruIds| {
            let v: Vec<Var> = ids.0.iter().map(|&id| tape.param(id)).collect();
            GruWeights {
                w_z: v[0],
                u_z: v[1],
                b_z: v[2],
                w_r: v[3],
                u_r: v[4],
                b_r: v[5],
                w_h: v[6],
                u_h: v[7],
                b_h: v[8],
            }
        };
        let dense = |tape: &mut Tape<'_>, ids: &DenseIds| DenseWeights {
            weight: tape.param(ids.weight),
            bias: tape.param(ids.bias),
        };
        let item_emb = tape.param(self.item_emb);
        let user_emb = tape.param(self.user_emb);
        let local = gru(tape, &self.gru);
        let ssrn_gru = match &self.ssrn_gru {
            Some(ids) => gru(tape, ids),
            None => local,
        };
        Weights {
            item_emb,
            user_emb,
            gru: local,
            ssrn_gru,
            mlp_h: dense(tape, &self.mlp_h),
            mlp_s: dense(tape, &self.mlp_s),
            mlp_out: dense(tape, &self.mlp_out),
        }
    }

    fn check_items(&self, items: &[u32]) -> Result<()> {
        if let Some(&bad) = items.iter().find(|&&i| i as usize >= self.config.item_vocab) {
            return Err(Error::Argument(format!(
                "item index {bad} outside vocabulary of {}",
                self.config.item_vocab
            )));
        }
        Ok(())
    }

    fn pool_active(&self, own: bool) -> bool {
        let v = self.config.variant;
        if own {
            v.uses_own_history()
        } else {
            v.uses_similar_users()
        }
    }

    /// Local preference modulated by both pools, then the output layer.
    ///
    /// `mask` is a `1 x d` dropout mask applied to the modulated preference;
    /// pass `None` outside training.
    pub fn forward(
        &self,
        tape: &mut Tape<'_>,
        w: &Weights,
        context: &[u32],
        candidates: &CandidateSets<'_>,
        mask: Option<&Tensor>,
    ) -> Result<ForwardTrace> {
        if context.is_empty() {
            return Err(Error::Usage("context must hold at least one item".into()));
        }
        self.check_items(context)?;
        let h_c = crate::model::layers::encode_local(tape, context, w.item_emb, &w.gru)?;
        let own = self.pool(tape, w, &candidates.own_history, h_c, &w.mlp_h, self.pool_active(true))?;
        let others = self.pool(
            tape,
            w,
            &candidates.similar_users_sessions,
            h_c,
            &w.mlp_s,
            self.pool_active(false),
        )?;
        let psi = self.modulate(tape, h_c, own.beta, others.beta)?;
        let logits = self.output(tape, w, psi, mask)?;
        Ok(ForwardTrace {
            h_c,
            own,
            others,
            psi,
            logits,
        })
    }

    fn modulate(&self, tape: &mut Tape<'_>, h_c: Var, beta_h: Var, beta_s: Var) -> Result<Var> {
        let mut psi = h_c;
        if self.pool_active(true) {
            psi = tape.add(psi, beta_h)?;
        }
        if self.pool_active(false) {
            psi = tape.add(psi, beta_s)?;
        }
        Ok(psi)
    }

    fn output(&self, tape: &mut Tape<'_>, w: &Weights, psi: Var, mask: Option<&Tensor>) -> Result<Var> {
        let psi = match mask {
            Some(m) => {
                let m = tape.constant(m.clone())?;
                tape.mul(psi, m)?
            }
            None => psi,
        };
        dense(tape, psi, &w.mlp_out, Activation::Identity)
    }

    fn pool(
        &self,
        tape: &mut Tape<'_>,
        w: &Weights,
        sessions: &[&Session],
        h_c: Var,
        mlp: &DenseWeights,
        active: bool,
    ) -> Result<PoolTrace> {
        let d = self.config.embed_dim;
        let mut trace = PoolTrace {
            scores: Vec::new(),
            encodings: Vec::new(),
            lambdas: Vec::new(),
            beta: h_c,
        };
        if !active || self.config.zero_prior || sessions.is_empty() {
            trace.beta = zeros(tape, 1, d)?;
            return Ok(trace);
        }
        for cs in sessions {
            self.check_items(&cs.items)?;
            let score = if self.config.variant == Variant::A {
                let mean = mean_embedding(tape, &cs.items, w.item_emb)?;
                tape.dot(mean, h_c)?
            } else {
                let (score, lambdas) = ssrn_similarity(tape, &cs.items, h_c, w.item_emb, &w.ssrn_gru)?;
                trace.lambdas.push(lambdas);
                score
            };
            trace.scores.push(score);
            trace
                .encodings
                .push(encode_session(tape, &cs.items, cs.user, w.item_emb, w.user_emb)?);
        }
        let act = self.config.prior_activation;
        trace.beta = if self.config.normalize_scores {
            let col = tape.concat_rows(&trace.scores)?;
            let row = tape.transpose(col)?;
            let weights = tape.softmax_rows(row)?;
            let enc = tape.concat_rows(&trace.encodings)?;
            let weighted = tape.matmul(weights, enc)?;
            dense(tape, weighted, mlp, act)?
        } else {
            let pairs: Vec<(Var, Var)> = trace.scores.iter().copied().zip(trace.encodings.iter().copied()).collect();
            aggregate_prior(tape, &pairs, mlp, act, d)?
        };
        Ok(trace)
    }

    /// Forward pass for every prefix of `items` at once.
    ///
    /// Equivalent to calling [`Model::forward`] on `items[..1]`, `items[..2]`,
    /// ... with the same candidate sets, but the local recurrence and every
    /// candidate's recurrence run once. `mask` is `items.len() x d`.
    pub fn forward_session(
        &self,
        tape: &mut Tape<'_>,
        w: &Weights,
        items: &[u32],
        candidates: &CandidateSets<'_>,
        mask: Option<&Tensor>,
    ) -> Result<SessionTrace> {
        if items.is_empty() {
            return Err(Error::Usage("context must hold at least one item".into()));
        }
        self.check_items(items)?;
        let states = run_gru(tape, items, w.item_emb, &w.gru)?;
        let h_c = if states.len() == 1 {
            states[0]
        } else {
            tape.concat_rows(&states)?
        };
        let rows = items.len();
        let (beta_h, own_scores) =
            self.pool_batched(tape, w, &candidates.own_history, h_c, rows, &w.mlp_h, self.pool_active(true))?;
        let (beta_s, other_scores) = self.pool_batched(
            tape,
            w,
            &candidates.similar_users_sessions,
            h_c,
            rows,
            &w.mlp_s,
            self.pool_active(false),
        )?;
        let psi = self.modulate(tape, h_c, beta_h, beta_s)?;
        let logits = self.output(tape, w, psi, mask)?;
        Ok(SessionTrace {
            h_c,
            own_scores,
            other_scores,
            beta_h,
            beta_s,
            psi,
            logits,
        })
    }

    #[allow(clippy::too_many_arguments)]
    fn pool_batched(
        &self,
        tape: &mut Tape<'_>,
        w: &Weights,
        sessions: &[&Session],
        h_c: Var,
        rows: usize,
        mlp: &DenseWeights,
        active: bool,
    ) -> Result<(Var, Option<Var>)> {
        let d = self.config.embed_dim;
        if !active || self.config.zero_prior || sessions.is_empty() {
            return Ok((zeros(tape, rows, d)?, None));
        }
        for cs in sessions {
            self.check_items(&cs.items)?;
            if cs.items.is_empty() {
                return Err(Error::Usage("empty candidate session".into()));
            }
        }
        let encodings = sessions
            .iter()
            .map(|cs| encode_session(tape, &cs.items, cs.user, w.item_emb, w.user_emb))
            .collect::<Result<Vec<_>>>()?;
        let enc = tape.concat_rows(&encodings)?;

        let mut scores = if self.config.variant == Variant::A {
            let means = sessions
                .iter()
                .map(|cs| mean_embedding(tape, &cs.items, w.item_emb))
                .collect::<Result<Vec<_>>>()?;
            let means = tape.concat_rows(&means)?;
            let means_t = tape.transpose(means)?;
            tape.matmul(h_c, means_t)?
        } else {
            let k = sessions.len();
            let mut order: Vec<usize> = (0..k).collect();
            order.sort_by_key(|&i| std::cmp::Reverse(sessions[i].items.len()));
            let max_len = sessions[order[0]].items.len();
            // row of candidate i's state after step j in the stacked states
            let mut row_of: Vec<Vec<usize>> = vec![Vec::new(); k];
            let mut steps = Vec::with_capacity(max_len);
            let mut h = zeros(tape, k, d)?;
            let mut offset = 0;
            for j in 0..max_len {
                let active = order.iter().take_while(|&&i| sessions[i].items.len() > j).count();
                let idx: Vec<usize> = order[..active].iter().map(|&i| sessions[i].items[j] as usize).collect();
                let x = tape.gather(w.item_emb, &idx)?;
                let prev_rows = tape.value(h).dims2()?.0;
                let h_prev = if prev_rows == active { h } else { tape.slice_rows(h, 0, active)? };
                h = gru_cell(tape, x, h_prev, &w.ssrn_gru)?;
                for (r, &i) in order[..active].iter().enumerate() {
                    row_of[i].push(offset + r);
                }
                offset += active;
                steps.push(h);
            }
            let all = if steps.len() == 1 { steps[0] } else { tape.concat_rows(&steps)? };
            let h_c_t = tape.transpose(h_c)?;
            let lambdas = tape.matmul(all, h_c_t)?;
            let best = tape.group_max(lambdas, &row_of)?;
            tape.transpose(best)?
        };
        if self.config.normalize_scores {
            scores = tape.softmax_rows(scores)?;
        }
        let weighted = tape.matmul(scores, enc)?;
        let beta = dense(tape, weighted, mlp, self.config.prior_activation)?;
        Ok((beta, Some(scores)))
    }
}

/// Summed loss of every row of `logits` against its target.
pub fn loss(tape: &mut Tape<'_>, logits: Var, targets: &[usize], mode: LossMode) -> Result<Var> {
    let rows = match mode {
        LossMode::PaperFormula => tape.complement_cross_entropy(logits, targets, PROB_EPS)?,
        LossMode::StandardCe => tape.softmax_cross_entropy(logits, targets)?,
    };
    tape.sum(rows)
}

/// Loss over all next-item targets of one session: positions `2..=len`
/// predicted from their prefixes. Returns the summed loss and the number
/// of targets.
pub fn session_loss(
    model: &Model,
    tape: &mut Tape<'_>,
    w: &Weights,
    session: &Session,
    candidates: &CandidateSets<'_>,
    mask: Option<&Tensor>,
) -> Result<(Var, usize)> {
    if session.items.len() < 2 {
        return Err(Error::Usage("a training session needs at least two items".into()));
    }
    let prefix = &session.items[..session.items.len() - 1];
    let trace = model.forward_session(tape, w, prefix, candidates, mask)?;
    let targets: Vec<usize> = session.items[1..].iter().map(|&i| i as usize).collect();
    let total = loss(tape, trace.logits, &targets, model.config().loss_mode)?;
    Ok((total, targets.len()))
}

/// Inverted dropout: each entry is 0 with probability `rate`, otherwise
/// `1 / (1 - rate)`.
pub fn dropout_mask(rng: &mut impl Rng, rows: usize, cols: usize, rate: f64) -> Tensor {
    let keep = 1.0 / (1.0 - rate);
    let data = (0..rows * cols)
        .map(|_| if rng.gen::<f64>() < rate { 0.0 } else { keep })
        .collect();
    Tensor::matrix(rows, cols, data).expect("positive dims")
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::layers::encode_local;
    use crate::tensor::softmax;

    fn session(user: u32, ordinal: u32, items: &[u32]) -> Session {
        Session {
            user,
            ordinal,
            start_time: ordinal as i64 * 10_000 + user as i64,
            items: items.to_vec(),
        }
    }

    fn small(variant: Variant) -> ModelConfig {
        let mut c = ModelConfig::new(12, 3);
        c.embed_dim = 6;
        c.variant = variant;
        c
    }

    fn zero_store(store: &mut ParameterStore) {
        for id in store.ids().collect::<Vec<_>>() {
            store.value_mut(id).fill(0.0);
        }
    }

    fn row(tape: &Tape<'_>, v: Var) -> Vec<f64> {
        tape.value(v).data().to_vec()
    }

    #[test]
    fn zero_weight_gru_halves_state() {
        let (model, mut store) = Model::init(small(Variant::C), 1).unwrap();
        zero_store(&mut store);
        let mut tape = model.tape(&store);
        let w = model.weights(&mut tape);
        let x = tape.constant(Tensor::row(vec![0.3; 6])).unwrap();
        let h = tape.constant(Tensor::row(vec![1.0, -2.0, 0.5, 0.0, 4.0, -1.0])).unwrap();
        let out = gru_cell(&mut tape, x, h, &w.gru).unwrap();
        assert_eq!(row(&tape, out), vec![0.5, -1.0, 0.25, 0.0, 2.0, -0.5]);

        let ctx = encode_local(&mut tape, &[1, 2, 3], w.item_emb, &w.gru).unwrap();
        assert!(row(&tape, ctx).iter().all(|&v| v == 0.0));
    }

    #[test]
    fn zero_input_and_state_give_zero() {
        let (model, store) = Model::init(small(Variant::C), 2).unwrap();
        let mut tape = model.tape(&store);
        let w = model.weights(&mut tape);
        let z = tape.constant(Tensor::zeros(&[1, 6])).unwrap();
        let out = gru_cell(&mut tape, z, z, &w.gru).unwrap();
        assert!(row(&tape, out).iter().all(|&v| v == 0.0));
    }

    #[test]
    fn gru_cell_rejects_row_mismatch() {
        let (model, store) = Model::init(small(Variant::C), 2).unwrap();
        let mut tape = model.tape(&store);
        let w = model.weights(&mut tape);
        let x = tape.constant(Tensor::zeros(&[2, 6])).unwrap();
        let h = tape.constant(Tensor::zeros(&[1, 6])).unwrap();
        assert!(matches!(gru_cell(&mut tape, x, h, &w.gru), Err(Error::Dimension { .. })));
        let h = tape.constant(Tensor::zeros(&[2, 5])).unwrap();
        assert!(gru_cell(&mut tape, x, h, &w.gru).is_err());
    }

    #[test]
    fn single_item_context_is_one_step() {
        let (model, store) = Model::init(small(Variant::C), 3).unwrap();
        let mut tape = model.tape(&store);
        let w = model.weights(&mut tape);
        let h_c = encode_local(&mut tape, &[4], w.item_emb, &w.gru).unwrap();
        let x = tape.gather(w.item_emb, &[4]).unwrap();
        let h0 = tape.constant(Tensor::zeros(&[1, 6])).unwrap();
        let step = gru_cell(&mut tape, x, h0, &w.gru).unwrap();
        assert_eq!(row(&tape, h_c), row(&tape, step));
        assert!(encode_local(&mut tape, &[], w.item_emb, &w.gru).is_err());
    }

    #[test]
    fn context_order_matters() {
        for seed in 0..20 {
            let (model, store) = Model::init(small(Variant::C), seed).unwrap();
            let mut tape = model.tape(&store);
            let w = model.weights(&mut tape);
            let a = encode_local(&mut tape, &[1, 2, 3], w.item_emb, &w.gru).unwrap();
            let b = encode_local(&mut tape, &[3, 2, 1], w.item_emb, &w.gru).unwrap();
            let c = encode_local(&mut tape, &[2, 1, 3], w.item_emb, &w.gru).unwrap();
            assert_ne!(row(&tape, a), row(&tape, b));
            assert_ne!(row(&tape, a), row(&tape, c));
        }
    }

    #[test]
    fn ssrn_self_similarity_is_squared_norm() {
        let (model, store) = Model::init(small(Variant::Full), 4).unwrap();
        let mut tape = model.tape(&store);
        let w = model.weights(&mut tape);
        let ctx = [1, 5, 2];
        let h_c = encode_local(&mut tape, &ctx, w.item_emb, &w.gru).unwrap();
        let (score, lambdas) = ssrn_similarity(&mut tape, &ctx, h_c, w.item_emb, &w.ssrn_gru).unwrap();
        let norm_sq: f64 = tape.value(h_c).norm_sq();
        let last = tape.value(*lambdas.last().unwrap()).item().unwrap();
        assert!((last - norm_sq).abs() < 1e-15);
        assert!(tape.value(score).item().unwrap() >= last);
    }

    #[test]
    fn ssrn_zero_preference_scores_zero() {
        let (model, store) = Model::init(small(Variant::Full), 4).unwrap();
        let mut tape = model.tape(&store);
        let w = model.weights(&mut tape);
        let h_c = tape.constant(Tensor::zeros(&[1, 6])).unwrap();
        let (score, lambdas) = ssrn_similarity(&mut tape, &[1, 2, 3], h_c, w.item_emb, &w.ssrn_gru).unwrap();
        assert_eq!(tape.value(score).item().unwrap(), 0.0);
        assert_eq!(lambdas.len(), 3);
    }

    fn fixed_store(item_rows: &[[f64; 2]], user_rows: &[[f64; 2]]) -> ParameterStore {
        let mut store = ParameterStore::new();
        let flat = |rows: &[[f64; 2]]| rows.iter().flatten().copied().collect::<Vec<_>>();
        store
            .insert("items", Tensor::matrix(item_rows.len(), 2, flat(item_rows)).unwrap())
            .unwrap();
        store
            .insert("users", Tensor::matrix(user_rows.len(), 2, flat(user_rows)).unwrap())
            .unwrap();
        store
    }

    #[test]
    fn session_encoder_cases() {
        let store = fixed_store(
            &[[0.0, 0.0], [1.0, 2.0], [3.0, -1.0], [2.0, 1.0], [0.0, 1.0]],
            &[[1.0, 0.0], [1.0, -1.0], [0.5, 0.5]],
        );
        let mut tape = Tape::new(&store);
        let items = tape.param_by_name("items").unwrap();
        let users = tape.param_by_name("users").unwrap();

        // single item: alpha = 1
        let w = encode_session(&mut tape, &[2], 0, items, users).unwrap();
        assert_eq!(row(&tape, w), vec![3.0, -1.0]);

        // equal dot products: items 1 and 3 under user 2 both give 1.5
        let w = encode_session(&mut tape, &[1, 3], 2, items, users).unwrap();
        assert_eq!(row(&tape, w), vec![1.5, 1.5]);

        // user 1: dots are 1 and -1, so eta = 0 and the weights fall back to uniform
        let w = encode_session(&mut tape, &[3, 1], 1, items, users).unwrap();
        assert_eq!(row(&tape, w), vec![1.5, 1.5]);

        // general case by hand: user 0 theta=(1,0); dots 1 and 3; eta 4
        let w = encode_session(&mut tape, &[1, 2], 0, items, users).unwrap();
        let expect = [0.25 * 1.0 + 0.75 * 3.0, 0.25 * 2.0 + 0.75 * -1.0];
        for (a, b) in row(&tape, w).iter().zip(expect) {
            assert!((a - b).abs() < 1e-15);
        }
    }

    #[test]
    fn prior_identity_layer_and_hand_sum() {
        let mut store = ParameterStore::new();
        store.insert("w", Tensor::identity(2)).unwrap();
        store.insert("b", Tensor::zeros(&[1, 2])).unwrap();
        let mut tape = Tape::new(&store);
        let mlp = DenseWeights {
            weight: tape.param_by_name("w").unwrap(),
            bias: tape.param_by_name("b").unwrap(),
        };
        let one = tape.constant(Tensor::scalar(1.0)).unwrap();
        let wcs = tape.constant(Tensor::row(vec![0.3, -0.7])).unwrap();
        let beta = aggregate_prior(&mut tape, &[(one, wcs)], &mlp, Activation::Identity, 2).unwrap();
        assert_eq!(row(&tape, beta), vec![0.3, -0.7]);

        let s2 = tape.constant(Tensor::scalar(-2.0)).unwrap();
        let w2 = tape.constant(Tensor::row(vec![0.5, 0.25])).unwrap();
        let beta = aggregate_prior(&mut tape, &[(one, wcs), (s2, w2)], &mlp, Activation::Identity, 2).unwrap();
        assert_eq!(row(&tape, beta), vec![0.3 - 1.0, -0.7 - 0.5]);

        let beta = aggregate_prior(&mut tape, &[], &mlp, Activation::Tanh, 2).unwrap();
        assert_eq!(row(&tape, beta), vec![0.0, 0.0]);
    }

    fn corpus() -> Vec<Session> {
        vec![
            session(0, 0, &[1, 2, 3]),
            session(0, 1, &[2, 4]),
            session(1, 0, &[5, 6, 7, 1]),
            session(2, 0, &[8, 9]),
            session(1, 1, &[3, 10, 11]),
        ]
    }

    fn sets(sessions: &[Session]) -> CandidateSets<'_> {
        CandidateSets {
            own_history: vec![&sessions[0], &sessions[1]],
            similar_users_sessions: vec![&sessions[2], &sessions[3], &sessions[4]],
            similar_users: vec![(1, 0.5), (2, 0.1)],
        }
    }

    #[test]
    fn variant_c_ignores_candidates() {
        let sessions = corpus();
        let (model, store) = Model::init(small(Variant::C), 5).unwrap();
        let mut tape = model.tape(&store);
        let w = model.weights(&mut tape);
        let a = model.forward(&mut tape, &w, &[1, 2], &sets(&sessions), None).unwrap();
        let b = model.forward(&mut tape, &w, &[1, 2], &CandidateSets::empty(), None).unwrap();
        assert_eq!(row(&tape, a.logits), row(&tape, b.logits));
    }

    #[test]
    fn zero_prior_matches_variant_c_bitwise() {
        let sessions = corpus();
        let (full, store) = Model::init(small(Variant::Full), 6).unwrap();
        let mut cfg = full.config().clone();
        cfg.zero_prior = true;
        let zeroed = full.with_config(cfg.clone(), &store).unwrap();
        cfg.zero_prior = false;
        cfg.variant = Variant::C;
        let c = full.with_config(cfg, &store).unwrap();

        let mut tape = full.tape(&store);
        let w = full.weights(&mut tape);
        let a = zeroed.forward(&mut tape, &w, &[1, 2, 3], &sets(&sessions), None).unwrap();
        let b = c.forward(&mut tape, &w, &[1, 2, 3], &sets(&sessions), None).unwrap();
        let bits = |v: Vec<f64>| v.iter().map(|x| x.to_bits()).collect::<Vec<_>>();
        assert_eq!(bits(row(&tape, a.logits)), bits(row(&tape, b.logits)));

        let mut t1 = full.tape(&store);
        let w1 = full.weights(&mut t1);
        let a = zeroed.forward_session(&mut t1, &w1, &[1, 2, 3], &sets(&sessions), None).unwrap();
        let b = c.forward_session(&mut t1, &w1, &[1, 2, 3], &sets(&sessions), None).unwrap();
        assert_eq!(bits(row(&t1, a.logits)), bits(row(&t1, b.logits)));
    }

    #[test]
    fn predictions_are_distributions() {
        let sessions = corpus();
        for variant in Variant::ALL {
            let (model, store) = Model::init(small(variant), 7).unwrap();
            let mut tape = model.tape(&store);
            let w = model.weights(&mut tape);
            for c in [sets(&sessions), CandidateSets::empty()] {
                let t = model.forward(&mut tape, &w, &[3, 1], &c, None).unwrap();
                let p = softmax(tape.value(t.logits).data());
                assert!(p.iter().all(|&v| v >= 0.0));
                assert!((p.iter().sum::<f64>() - 1.0).abs() < 1e-9);
            }
        }
    }

    #[test]
    fn batched_matches_per_instance() {
        let sessions = corpus();
        for variant in Variant::ALL {
            for (normalize, share) in [(false, true), (true, true), (false, false)] {
                let mut cfg = small(variant);
                cfg.normalize_scores = normalize;
                cfg.share_ssrn_gru = share;
                let (model, store) = Model::init(cfg, 8).unwrap();
                let items = [4, 1, 7, 2, 9];
                let mut tape = model.tape(&store);
                let w = model.weights(&mut tape);
                let batched = model.forward_session(&mut tape, &w, &items, &sets(&sessions), None).unwrap();
                let all = tape.value(batched.logits).clone();
                for t in 1..=items.len() {
                    let single = model.forward(&mut tape, &w, &items[..t], &sets(&sessions), None).unwrap();
                    let got = tape.value(single.logits).data();
                    for (a, b) in got.iter().zip(all.row_slice(t - 1)) {
                        assert!((a - b).abs() <= 1e-12, "{variant} {normalize} {share}: {a} vs {b}");
                    }
                }
            }
        }
    }

    #[test]
    fn batched_gradients_match_per_instance() {
        let sessions = corpus();
        let (model, store) = Model::init(small(Variant::Full), 9).unwrap();
        let target = session(0, 2, &[4, 1, 7, 2]);
        let mut tape = model.tape(&store);
        let w = model.weights(&mut tape);
        let (l, n) = session_loss(&model, &mut tape, &w, &target, &sets(&sessions), None).unwrap();
        assert_eq!(n, 3);
        let batched = tape.backward(l).unwrap();

        let mut summed: Option<crate::tensor::Gradients> = None;
        for t in 1..target.items.len() {
            let mut tape = model.tape(&store);
            let w = model.weights(&mut tape);
            let tr = model.forward(&mut tape, &w, &target.items[..t], &sets(&sessions), None).unwrap();
            let l = loss(&mut tape, tr.logits, &[target.items[t] as usize], LossMode::PaperFormula).unwrap();
            let g = tape.backward(l).unwrap();
            match &mut summed {
                Some(s) => s.merge(&g),
                None => summed = Some(g),
            }
        }
        let summed = summed.unwrap();
        for id in store.ids() {
            match (batched.get(id), summed.get(id)) {
                (Some(a), Some(b)) => {
                    for (x, y) in a.data().iter().zip(b.data()) {
                        assert!((x - y).abs() <= 1e-10 * (1.0 + y.abs()), "{}", store.name(id));
                    }
                }
                (None, None) => {}
                (a, b) => {
                    let nz = |t: Option<&Tensor>| t.map_or(0.0, |t| t.norm_sq());
                    assert_eq!(nz(a), nz(b), "{}", store.name(id));
                }
            }
        }
    }

    #[test]
    fn bind_rejects_wrong_shapes() {
        let (model, store) = Model::init(small(Variant::Full), 1).unwrap();
        let mut cfg = model.config().clone();
        cfg.embed_dim = 7;
        assert!(matches!(Model::bind(cfg, &store), Err(Error::ArtifactMismatch(_))));
        let mut cfg = model.config().clone();
        cfg.share_ssrn_gru = false;
        assert!(Model::bind(cfg, &store).is_err());
    }

    #[test]
    fn init_is_seeded() {
        let (_, a) = Model::init(small(Variant::Full), 11).unwrap();
        let (_, b) = Model::init(small(Variant::Full), 11).unwrap();
        let (_, c) = Model::init(small(Variant::Full), 12).unwrap();
        let vals = |s: &ParameterStore| s.ids().flat_map(|id| s.value(id).data().to_vec()).collect::<Vec<_>>();
        assert_eq!(vals(&a), vals(&b));
        assert_ne!(vals(&a), vals(&c));
        let bound = 1.0 / 6f64.sqrt();
        assert!(vals(&a).iter().all(|v| v.abs() <= bound));
        assert!(a.value(a.id("gru.b_z").unwrap()).data().iter().all(|&v| v == 0.0));
    }

    #[test]
    fn dropout_mask_rate() {
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let m = dropout_mask(&mut rng, 100, 100, 0.2);
        let dropped = m.data().iter().filter(|&&v| v == 0.0).count();
        assert!((1700..2300).contains(&dropped));
        assert!(m.data().iter().all(|&v| v == 0.0 || v == 1.25));
    }

    #[test]
    fn loss_modes_hand_values() {
        let store = ParameterStore::new();
        let mut tape = Tape::new(&store);
        let two = tape.constant(Tensor::row(vec![0.0, 0.0])).unwrap();
        let l = loss(&mut tape, two, &[0], LossMode::PaperFormula).unwrap();
        assert!((tape.value(l).item().unwrap() - 2.0 * 2f64.ln()).abs() < 1e-15);
        let four = tape.constant(Tensor::row(vec![1.0; 4])).unwrap();
        let l = loss(&mut tape, four, &[3], LossMode::StandardCe).unwrap();
        assert!((tape.value(l).item().unwrap() - 4f64.ln()).abs() < 1e-15);
        assert!(matches!(loss(&mut tape, four, &[4], LossMode::StandardCe), Err(Error::Argument(_))));
    }
}
