//! Local-training ADMM consensus over the policy parameters.
//!
//! One outer round:
//!
//! 1. every agent restarts its local iterate at the round anchor `omega_k`
//!    and takes `tau` steps `phi += alpha g - beta (rho |N_i| omega_k - sum_j z_ij)`,
//!    where `g` comes from its [`LocalLearner`];
//! 2. `omega_{k+1} = phi_tau`;
//! 3. one communication round: agent `j` sends `z_ji - 2 rho omega_j` to each
//!    neighbour `i`, which sets `z_ij <- (z_ij - msg) / 2`.
//!
//! The penalty term is computed once per round from `omega_k` and `Z_k` and
//! never changes while the agent trains locally. Step 1 runs the agents
//! independently (optionally on rayon); step 3 is the only synchronization
//! point and the only place any data crosses agent boundaries.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use crate::critic::{decentralized_td, TdSettings};
use crate::diagnostics;
use crate::exec::Execution;
use crate::policynet::{clip_score, PolicyParams};
use crate::rng::StreamRng;
use crate::sampler::{burn_in, collect, ChainCursor, Environment, Transition};
use crate::topology::{build_structures, Graph, GraphStructures};
use crate::valuenet::{ProjectionBall, ValueNetParams};
use crate::vecops::{axpy, mean_of};
use crate::{Error, Result};

/// `rho |N_i| omega_i - sum_{j in N_i} z_ij`
pub fn penalty_term(omega: &[f64], z_row: &[&[f64]], rho: f64) -> Result<Vec<f64>> {
    if z_row.is_empty() {
        return Err(Error::InvalidInput("agent has no neighbours".into()));
    }
    let mut out: Vec<f64> = omega.iter().map(|w| rho * z_row.len() as f64 * w).collect();
    for z in z_row {
        if z.len() != omega.len() {
            return Err(Error::DimensionMismatch {
                expected: omega.len(),
                got: z.len(),
            });
        }
        axpy(&mut out, -1.0, z);
    }
    Ok(out)
}

/// `phi += alpha g - beta penalty`
pub fn local_actor_step(phi: &mut [f64], g: &[f64], alpha: f64, beta: f64, penalty: &[f64]) {
    for ((p, gi), pen) in phi.iter_mut().zip(g).zip(penalty) {
        *p += alpha * gi - beta * pen;
    }
}

/// Bridge variables `z_ij`, one vector per directed edge.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BridgeVars {
    entries: BTreeMap<(usize, usize), Vec<f64>>,
}

impl BridgeVars {
    pub fn from_entries(entries: impl IntoIterator<Item = ((usize, usize), Vec<f64>)>) -> Self {
        BridgeVars {
            entries: entries.into_iter().collect(),
        }
    }

    /// `z_ij = z_ji = rho * omega0` on every directed edge.
    pub fn balanced(graph: &Graph, omega0: &[f64], rho: f64) -> Self {
        let z: Vec<f64> = omega0.iter().map(|w| rho * w).collect();
        BridgeVars::from_entries(graph.directed_slots().into_iter().map(|slot| (slot, z.clone())))
    }

    pub fn get(&self, i: usize, j: usize) -> Option<&[f64]> {
        self.entries.get(&(i, j)).map(Vec::as_slice)
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn iter(&self) -> impl Iterator<Item = (&(usize, usize), &Vec<f64>)> {
        self.entries.iter()
    }

    /// Rows in the slot order of [`GraphStructures`].
    pub fn in_slot_order(&self, structures: &GraphStructures) -> Result<Vec<Vec<f64>>> {
        structures
            .slots
            .iter()
            .map(|slot| {
                self.entries
                    .get(slot)
                    .cloned()
                    .ok_or_else(|| Error::TopologyMismatch(format!("missing bridge for edge {slot:?}")))
            })
            .collect()
    }

    fn check_graph(&self, graph: &Graph, dim: usize) -> Result<()> {
        let slots = graph.directed_slots();
        if let Some(slot) = slots.iter().find(|s| !self.entries.contains_key(s)) {
            return Err(Error::TopologyMismatch(format!("missing bridge for edge {slot:?}")));
        }
        if self.entries.len() != slots.len() {
            return Err(Error::TopologyMismatch("bridge keyed by an edge not in the graph".into()));
        }
        if let Some((_, z)) = self.entries.iter().find(|(_, z)| z.len() != dim) {
            return Err(Error::DimensionMismatch {
                expected: dim,
                got: z.len(),
            });
        }
        Ok(())
    }

    fn row(&self, i: usize, neighbors: &[usize]) -> Vec<&[f64]> {
        neighbors.iter().map(|&j| self.entries[&(i, j)].as_slice()).collect()
    }
}

/// What a cross-agent message carries.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum MessageKind {
    /// `z_ji - 2 rho omega_j`, a policy-parameter-space vector.
    PolicyBridge,
    Reward,
    CriticParams,
    TdError,
}

impl MessageKind {
    pub fn is_policy_typed(self) -> bool {
        matches!(self, MessageKind::PolicyBridge)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Message {
    pub from: usize,
    pub to: usize,
    pub kind: MessageKind,
    pub payload: Vec<f64>,
}

/// Counts of communication rounds and transmitted vectors by kind.
#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct MessageLedger {
    pub rounds: u64,
    pub messages: BTreeMap<MessageKind, u64>,
}

impl MessageLedger {
    fn record(&mut self, msg: &Message) {
        *self.messages.entry(msg.kind).or_default() += 1;
    }

    pub fn total_messages(&self) -> u64 {
        self.messages.values().sum()
    }

    pub fn count(&self, kind: MessageKind) -> u64 {
        self.messages.get(&kind).copied().unwrap_or(0)
    }

    /// Messages that are not policy-parameter vectors.
    pub fn non_policy_messages(&self) -> u64 {
        self.messages
            .iter()
            .filter(|(k, _)| !k.is_policy_typed())
            .map(|(_, c)| c)
            .sum()
    }
}

/// Receiver-side bridge rule. `FlippedSign` exists only to prove that the
/// invariant checks catch a corrupted update.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum BridgeRule {
    #[default]
    Standard,
    FlippedSign,
}

/// One communication round: `z_ij <- (z_ij - z_ji + 2 rho omega_j) / 2`,
/// realized through the transmitted messages.
pub fn communicate(
    bridges: &BridgeVars,
    omegas: &[Vec<f64>],
    rho: f64,
    graph: &Graph,
    ledger: &mut MessageLedger,
) -> Result<BridgeVars> {
    communicate_with_rule(bridges, omegas, rho, graph, ledger, BridgeRule::Standard)
}

pub fn communicate_with_rule(
    bridges: &BridgeVars,
    omegas: &[Vec<f64>],
    rho: f64,
    graph: &Graph,
    ledger: &mut MessageLedger,
    rule: BridgeRule,
) -> Result<BridgeVars> {
    if omegas.len() != graph.node_count() {
        return Err(Error::DimensionMismatch {
            expected: graph.node_count(),
            got: omegas.len(),
        });
    }
    let dim = omegas[0].len();
    bridges.check_graph(graph, dim)?;

    let outbox: Vec<Message> = graph
        .directed_slots()
        .into_iter()
        .map(|(j, i)| Message {
            from: j,
            to: i,
            kind: MessageKind::PolicyBridge,
            payload: bridges.entries[&(j, i)]
                .iter()
                .zip(&omegas[j])
                .map(|(z, w)| z - 2.0 * rho * w)
                .collect(),
        })
        .collect();

    let mut next = BTreeMap::new();
    for msg in &outbox {
        ledger.record(msg);
        let own = &bridges.entries[&(msg.to, msg.from)];
        let sign = match rule {
            BridgeRule::Standard => -1.0,
            BridgeRule::FlippedSign => 1.0,
        };
        let z: Vec<f64> = own.iter().zip(&msg.payload).map(|(z, m)| 0.5 * (z + sign * m)).collect();
        next.insert((msg.to, msg.from), z);
    }
    ledger.rounds += 1;
    Ok(BridgeVars { entries: next })
}

/// Local gradient and per-step diagnostics.
#[derive(Debug, Clone, PartialEq)]
pub struct LocalGradient {
    /// Ascent direction for `J_i` at the local iterate.
    pub g: Vec<f64>,
    /// Mean squared TD error of the actor batch under the fresh critic.
    pub critic_loss: Option<f64>,
    /// Summed reward over the actor batch.
    pub batch_return: Option<f64>,
    /// Largest score norm seen, before clipping.
    pub max_score_norm: f64,
}

/// Source of the per-agent gradient used in the local steps.
pub trait LocalLearner: Send {
    fn local_gradient(&mut self, phi: &[f64]) -> Result<LocalGradient>;

    /// Diagnostic estimate of `grad J_i` at `omega_bar`. Must not disturb
    /// the training chain.
    fn evaluation_gradient(&mut self, omega_bar: &[f64], batch: usize) -> Result<Vec<f64>>;
}

/// Exact oracle for `J_i(w) = -q/2 ||w - c||^2`.
#[derive(Debug, Clone, PartialEq)]
pub struct QuadraticLearner {
    pub target: Vec<f64>,
    pub curvature: f64,
}

impl QuadraticLearner {
    fn ascent(&self, w: &[f64]) -> Vec<f64> {
        self.target.iter().zip(w).map(|(c, x)| self.curvature * (c - x)).collect()
    }
}

impl LocalLearner for QuadraticLearner {
    fn local_gradient(&mut self, phi: &[f64]) -> Result<LocalGradient> {
        if phi.len() != self.target.len() {
            return Err(Error::DimensionMismatch {
                expected: self.target.len(),
                got: phi.len(),
            });
        }
        let dist_sq: f64 = self.target.iter().zip(phi).map(|(c, x)| (c - x) * (c - x)).sum();
        Ok(LocalGradient {
            g: self.ascent(phi),
            critic_loss: None,
            batch_return: Some(-0.5 * self.curvature * dist_sq),
            max_score_norm: 0.0,
        })
    }

    fn evaluation_gradient(&mut self, omega_bar: &[f64], _batch: usize) -> Result<Vec<f64>> {
        Ok(self.ascent(omega_bar))
    }
}

/// Hyper-parameters of the actor-critic learner.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ActorCriticSettings {
    pub td: TdSettings,
    pub actor_batch: usize,
    pub burn_in: usize,
    pub score_clip: Option<f64>,
}

/// One agent's local actor-critic machinery: its environment replica, its
/// critic and its private random streams.
pub struct ActorCriticLearner<E: Environment> {
    cursor: ChainCursor<E>,
    policy: PolicyParams,
    theta: ValueNetParams,
    ball: ProjectionBall,
    settings: ActorCriticSettings,
    critic_rng: StreamRng,
    eval_rng: StreamRng,
}

impl<E: Environment> ActorCriticLearner<E> {
    /// `theta0` doubles as the centre of the projection ball.
    pub fn new(
        cursor: ChainCursor<E>,
        policy_template: PolicyParams,
        theta0: ValueNetParams,
        radius: f64,
        settings: ActorCriticSettings,
        critic_rng: StreamRng,
        eval_rng: StreamRng,
    ) -> Result<Self> {
        settings.td.validate()?;
        if settings.actor_batch == 0 {
            return Err(Error::config("train.B", "must be at least 1"));
        }
        let ball = ProjectionBall::new(theta0.clone(), radius)?;
        Ok(ActorCriticLearner {
            cursor,
            policy: policy_template,
            theta: theta0,
            ball,
            settings,
            critic_rng,
            eval_rng,
        })
    }

    pub fn critic(&self) -> &ValueNetParams {
        &self.theta
    }

    pub fn ball(&self) -> &ProjectionBall {
        &self.ball
    }

    pub fn cursor(&self) -> &ChainCursor<E> {
        &self.cursor
    }
}

/// `(1/B) sum_l delta_l psi(a_l | s_l)` with the TD error as advantage.
/// Returns the estimate, the batch critic loss and the largest raw score norm.
pub fn policy_gradient_estimate(
    policy: &PolicyParams,
    critic: &ValueNetParams,
    batch: &[Transition],
    gamma: f64,
    score_clip: Option<f64>,
) -> Result<(Vec<f64>, f64, f64)> {
    let mut g = vec![0.0; policy.dim()];
    let mut loss = 0.0;
    let mut max_norm = 0.0f64;
    for tr in batch {
        let delta = crate::critic::td_error(critic, tr, gamma)?;
        loss += delta * delta;
        let mut psi = policy.score(&tr.s, &tr.a)?;
        max_norm = max_norm.max(clip_score(&mut psi, score_clip));
        axpy(&mut g, delta, &psi);
    }
    let n = batch.len() as f64;
    g.iter_mut().for_each(|x| *x /= n);
    Ok((g, loss / n, max_norm))
}

impl<E: Environment> LocalLearner for ActorCriticLearner<E> {
    fn local_gradient(&mut self, phi: &[f64]) -> Result<LocalGradient> {
        if phi.len() != self.policy.dim() {
            return Err(Error::DimensionMismatch {
                expected: self.policy.dim(),
                got: phi.len(),
            });
        }
        self.policy.as_mut_slice().copy_from_slice(phi);
        let s = &self.settings;
        burn_in(&mut self.cursor, &self.policy, s.burn_in)?;
        let run = decentralized_td(
            &mut self.cursor,
            &self.policy,
            &self.theta,
            &s.td,
            &self.ball,
            &mut self.critic_rng,
        )?;
        self.theta = run.theta_out;
        let batch = collect(&mut self.cursor, &self.policy, s.actor_batch)?;
        let (g, loss, max_norm) =
            policy_gradient_estimate(&self.policy, &self.theta, &batch, s.td.gamma, s.score_clip)?;
        Ok(LocalGradient {
            g,
            critic_loss: Some(loss),
            batch_return: Some(batch.iter().map(|t| t.reward).sum()),
            max_score_norm: max_norm,
        })
    }

    fn evaluation_gradient(&mut self, omega_bar: &[f64], batch: usize) -> Result<Vec<f64>> {
        let policy = PolicyParams::from_flat(self.policy.shape().clone(), omega_bar.to_vec())?;
        let mut probe = self.cursor.clone().with_rng(self.eval_rng.clone());
        let transitions = collect(&mut probe, &policy, batch)?;
        self.eval_rng = probe.into_rng();
        let (g, _, _) =
            policy_gradient_estimate(&policy, &self.theta, &transitions, self.settings.td.gamma, self.settings.score_clip)?;
        Ok(g)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AdmmSettings {
    pub tau: usize,
    pub alpha: f64,
    pub beta: f64,
    pub rho: f64,
    pub execution: Execution,
    /// Batch for the `||grad J(omega_bar)||^2` estimate; 0 disables it.
    pub eval_batch: usize,
    /// Keep every `(Omega_k, Z_k, sum_t G)` for the compact-form check.
    pub record_trace: bool,
    pub bridge_rule: BridgeRule,
}

impl AdmmSettings {
    pub fn validate(&self) -> Result<()> {
        if self.tau == 0 {
            return Err(Error::config("train.tau", "must be at least 1"));
        }
        for (key, v) in [("train.alpha", self.alpha), ("train.beta", self.beta), ("train.rho", self.rho)] {
            if !(v >= 0.0 && v.is_finite()) {
                return Err(Error::config(key, "must be non-negative and finite"));
            }
        }
        Ok(())
    }
}

/// Recorded iterates for re-evaluating the stacked recursion.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct CompactTrace {
    /// `Omega_0 .. Omega_K`, each `N` rows.
    pub omegas: Vec<Vec<Vec<f64>>>,
    /// `Z_0 .. Z_K`, rows in slot order.
    pub bridges: Vec<Vec<Vec<f64>>>,
    /// `sum_t G(Phi_k^t)` for rounds `0 .. K-1`.
    pub gradient_sums: Vec<Vec<Vec<f64>>>,
}

impl CompactTrace {
    pub fn rounds(&self) -> usize {
        self.gradient_sums.len()
    }
}

/// Everything a round produced besides the new iterates.
#[derive(Debug, Clone, PartialEq)]
pub struct RoundOutcome {
    pub round: usize,
    /// `g_i(phi_{k,t}^i)` indexed `[agent][t]`.
    pub gradients: Vec<Vec<Vec<f64>>>,
    /// Mean over agents and local steps, when the learners report it.
    pub critic_loss: Option<f64>,
    pub round_return: Option<f64>,
    pub max_score_norm: f64,
    /// `(1/N) sum_i grad J_i(omega_bar_k)` estimate, if enabled.
    pub eval_gradient: Option<Vec<f64>>,
    /// `||1^T A^T Z_{k+1} - rho 1^T D Omega_{k+1}||_inf`
    pub mean_preservation_residual: f64,
    /// `||omega_bar_{k+1} - omega_bar_k - (alpha/N) sum_{t,i} g||_inf`
    pub mean_recursion_residual: f64,
}

struct AgentRound {
    omega_next: Vec<f64>,
    gradients: Vec<Vec<f64>>,
    critic_loss: Vec<f64>,
    returns: Vec<f64>,
    max_score_norm: f64,
    eval_gradient: Option<Vec<f64>>,
}

pub struct LtAdmm<L: LocalLearner> {
    graph: Graph,
    structures: GraphStructures,
    neighbors: Vec<Vec<usize>>,
    settings: AdmmSettings,
    learners: Vec<L>,
    omegas: Vec<Vec<f64>>,
    bridges: BridgeVars,
    ledger: MessageLedger,
    round: usize,
    trace: Option<CompactTrace>,
}

impl<L: LocalLearner> LtAdmm<L> {
    /// All agents start at `omega0`, every bridge at `rho * omega0`.
    pub fn new(graph: Graph, settings: AdmmSettings, learners: Vec<L>, omega0: Vec<f64>) -> Result<Self> {
        let bridges = BridgeVars::balanced(&graph, &omega0, settings.rho);
        let omegas = vec![omega0; graph.node_count()];
        Self::from_state(graph, settings, learners, omegas, bridges)
    }

    pub fn from_state(
        graph: Graph,
        settings: AdmmSettings,
        learners: Vec<L>,
        omegas: Vec<Vec<f64>>,
        bridges: BridgeVars,
    ) -> Result<Self> {
        settings.validate()?;
        let n = graph.node_count();
        if learners.len() != n || omegas.len() != n {
            return Err(Error::DimensionMismatch {
                expected: n,
                got: learners.len().min(omegas.len()),
            });
        }
        let dim = omegas[0].len();
        if let Some(w) = omegas.iter().find(|w| w.len() != dim) {
            return Err(Error::DimensionMismatch {
                expected: dim,
                got: w.len(),
            });
        }
        bridges.check_graph(&graph, dim)?;
        let structures = build_structures(&graph);
        let trace = settings.record_trace.then(|| CompactTrace {
            omegas: vec![omegas.clone()],
            bridges: vec![bridges.in_slot_order(&structures).expect("checked against graph")],
            gradient_sums: Vec::new(),
        });
        Ok(LtAdmm {
            neighbors: graph.neighbors(),
            graph,
            structures,
            settings,
            learners,
            omegas,
            bridges,
            ledger: MessageLedger::default(),
            round: 0,
            trace,
        })
    }

    pub fn graph(&self) -> &Graph {
        &self.graph
    }

    pub fn structures(&self) -> &GraphStructures {
        &self.structures
    }

    pub fn settings(&self) -> &AdmmSettings {
        &self.settings
    }

    pub fn omegas(&self) -> &[Vec<f64>] {
        &self.omegas
    }

    pub fn omega_bar(&self) -> Vec<f64> {
        mean_of(&self.omegas)
    }

    pub fn bridges(&self) -> &BridgeVars {
        &self.bridges
    }

    pub fn ledger(&self) -> &MessageLedger {
        &self.ledger
    }

    pub fn learners(&self) -> &[L] {
        &self.learners
    }

    pub fn rounds_completed(&self) -> usize {
        self.round
    }

    pub fn trace(&self) -> Option<&CompactTrace> {
        self.trace.as_ref()
    }

    /// Local training on every agent, then one communication round.
    pub fn train_round(&mut self) -> Result<RoundOutcome> {
        let s = self.settings;
        let omega_bar = mean_of(&self.omegas);
        let omegas = &self.omegas;
        let bridges = &self.bridges;
        let neighbors = &self.neighbors;

        let per_agent: Vec<Result<AgentRound>> = s.execution.map_agents(&mut self.learners, |i, learner| {
            let penalty = penalty_term(&omegas[i], &bridges.row(i, &neighbors[i]), s.rho)?;
            let eval_gradient = if s.eval_batch > 0 {
                Some(learner.evaluation_gradient(&omega_bar, s.eval_batch)?)
            } else {
                None
            };
            let mut phi = omegas[i].clone();
            let mut out = AgentRound {
                omega_next: Vec::new(),
                gradients: Vec::with_capacity(s.tau),
                critic_loss: Vec::new(),
                returns: Vec::new(),
                max_score_norm: 0.0,
                eval_gradient,
            };
            for _ in 0..s.tau {
                let local = learner.local_gradient(&phi)?;
                local_actor_step(&mut phi, &local.g, s.alpha, s.beta, &penalty);
                out.critic_loss.extend(local.critic_loss);
                out.returns.extend(local.batch_return);
                out.max_score_norm = out.max_score_norm.max(local.max_score_norm);
                out.gradients.push(local.g);
            }
            out.omega_next = phi;
            Ok(out)
        });
        let per_agent = per_agent.into_iter().collect::<Result<Vec<_>>>()?;

        let next_omegas: Vec<Vec<f64>> = per_agent.iter().map(|a| a.omega_next.clone()).collect();
        let next_bridges = communicate_with_rule(
            &self.bridges,
            &next_omegas,
            s.rho,
            &self.graph,
            &mut self.ledger,
            s.bridge_rule,
        )?;

        let n = self.omegas.len() as f64;
        let gradients: Vec<Vec<Vec<f64>>> = per_agent.iter().map(|a| a.gradients.clone()).collect();
        let mean_recursion_residual = {
            let mut predicted = omega_bar.clone();
            for g in gradients.iter().flatten() {
                axpy(&mut predicted, s.alpha / n, g);
            }
            let actual = mean_of(&next_omegas);
            actual.iter().zip(&predicted).map(|(a, p)| (a - p).abs()).fold(0.0, f64::max)
        };
        let mean_preservation_residual =
            diagnostics::mean_preservation_residual(&self.graph, &next_bridges, &next_omegas, s.rho);

        if let Some(trace) = self.trace.as_mut() {
            let sums = gradients
                .iter()
                .map(|steps| {
                    let mut acc = vec![0.0; steps[0].len()];
                    steps.iter().for_each(|g| axpy(&mut acc, 1.0, g));
                    acc
                })
                .collect();
            trace.gradient_sums.push(sums);
            trace.omegas.push(next_omegas.clone());
            trace.bridges.push(next_bridges.in_slot_order(&self.structures)?);
        }

        let mean = |xs: Vec<f64>| (!xs.is_empty()).then(|| xs.iter().sum::<f64>() / xs.len() as f64);
        let critic_loss = mean(per_agent.iter().flat_map(|a| a.critic_loss.iter().copied()).collect());
        let round_return = mean(per_agent.iter().flat_map(|a| a.returns.iter().copied()).collect());
        let max_score_norm = per_agent.iter().map(|a| a.max_score_norm).fold(0.0, f64::max);
        let eval_gradient = per_agent
            .iter()
            .map(|a| a.eval_gradient.clone())
            .collect::<Option<Vec<_>>>()
            .map(|gs| mean_of(&gs));

        self.omegas = next_omegas;
        self.bridges = next_bridges;
        let round = self.round;
        self.round += 1;

        Ok(RoundOutcome {
            round,
            gradients,
            critic_loss,
            round_return,
            max_score_norm,
            eval_gradient,
            mean_preservation_residual,
            mean_recursion_residual,
        })
    }
}
