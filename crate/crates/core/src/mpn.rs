//! Message-passing network mapping a detection graph to per-link scalars.
//!
//! Two learnable encoders lift raw node features [position, reid] and raw
//! link features [frame gap, position difference, reid distance] to the
//! hidden width. Each of L rounds then updates a directed pair of embeddings
//! per link — the time-forward copy (i,j) from [h_i, h_j, h_(i,j)] and the
//! backward copy (j,i) from [h_j, h_i, h_(j,i)] — and routes one message per
//! directed copy: the forward copy sends to the later node through the
//! past-message function, the backward copy to the earlier node through the
//! future-message function. Node embeddings aggregate the two message sums.
//! The readout concatenates both final edge embeddings into one scalar per
//! link: an unbounded cost, or a logistic belief for the classification
//! baseline.
//!
//! The forward pass records everything needed for an exact reverse-mode
//! gradient of any linear functional of the output scalars with respect to
//! the full parameter vector, encoders included.

use serde::{Deserialize, Serialize};

use crate::error::{CoreError, Result};
use crate::graph::{DetectionGraph, EdgeCosts};
use crate::neural::{
    mlp_backward_batch, mlp_forward_batch, Activation, CallId, Mat, MlpSpec, ParamStore, Tape,
};

/// Readout semantics of the per-link scalar.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ReadoutMode {
    /// Unbounded real edge cost.
    Cost,
    /// Probability in (0,1) that the link belongs to a track.
    Belief,
}

/// Network hyperparameters.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct MpnConfig {
    #[serde(default = "default_layers")]
    pub num_layers: usize,
    #[serde(default = "default_hidden")]
    pub hidden_dim: usize,
    #[serde(default = "default_readout")]
    pub readout: ReadoutMode,
}

fn default_layers() -> usize {
    4
}

fn default_hidden() -> usize {
    64
}

fn default_readout() -> ReadoutMode {
    ReadoutMode::Cost
}

impl Default for MpnConfig {
    fn default() -> Self {
        MpnConfig {
            num_layers: default_layers(),
            hidden_dim: default_hidden(),
            readout: default_readout(),
        }
    }
}

/// Layer-0 embeddings produced by the learnable encoders.
pub struct EmbeddingState {
    pub node: Mat,
    /// Both directed copies of every link start from the time-forward raw
    /// feature, so layer 0 has a single shared edge embedding.
    pub edge: Mat,
}

/// Fixed affine preconditioning of node positions, chosen from the scene
/// configuration (never from the data, so the network's receptive field is
/// unaffected). Equivalent to a reparameterized first encoder layer.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct FeatureNorm {
    pub pos_center: [f64; 2],
    pub pos_half_extent: f64,
}

impl Default for FeatureNorm {
    fn default() -> Self {
        FeatureNorm {
            pos_center: [0.0, 0.0],
            pos_half_extent: 1.0,
        }
    }
}

impl FeatureNorm {
    /// Center and scale positions into roughly [-1, 1] for a scene box.
    pub fn for_scene(min: [f64; 2], max: [f64; 2]) -> Self {
        FeatureNorm {
            pos_center: [(min[0] + max[0]) / 2.0, (min[1] + max[1]) / 2.0],
            pos_half_extent: ((max[0] - min[0]).max(max[1] - min[1]) / 2.0).max(1e-9),
        }
    }
}

/// The model: component MLP shapes plus input dimensions.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct MpnModel {
    pub cfg: MpnConfig,
    pub node_feat_dim: usize,
    pub edge_feat_dim: usize,
    #[serde(default)]
    pub norm: FeatureNorm,
    components: Vec<(String, MlpSpec)>,
}

const EDGE_FEAT_DIM: usize = 4;

impl MpnModel {
    /// Build the model for detections carrying `reid_dim` ReID dimensions
    /// (informative plus noise).
    pub fn new(cfg: MpnConfig, reid_dim: usize) -> Self {
        assert!(cfg.num_layers <= 64, "implausible layer count");
        assert!(cfg.hidden_dim >= 1);
        let h = cfg.hidden_dim;
        let node_feat_dim = 2 + reid_dim;
        let dense = |inp: usize, out: usize| MlpSpec::new(vec![inp, h, out], Activation::Identity);
        let readout_act = match cfg.readout {
            ReadoutMode::Cost => Activation::Identity,
            ReadoutMode::Belief => Activation::Logistic,
        };
        let components = vec![
            ("node_enc".to_string(), dense(node_feat_dim, h)),
            ("edge_enc".to_string(), dense(EDGE_FEAT_DIM, h)),
            ("edge_update".to_string(), dense(3 * h, h)),
            ("msg_past".to_string(), dense(2 * h, h)),
            ("msg_fut".to_string(), dense(2 * h, h)),
            ("node_update".to_string(), dense(2 * h, h)),
            (
                "readout".to_string(),
                MlpSpec::new(vec![2 * h, h, 1], readout_act),
            ),
        ];
        MpnModel {
            cfg,
            node_feat_dim,
            edge_feat_dim: EDGE_FEAT_DIM,
            norm: FeatureNorm::default(),
            components,
        }
    }

    pub fn with_norm(mut self, norm: FeatureNorm) -> Self {
        self.norm = norm;
        self
    }

    pub fn components(&self) -> Vec<(&str, MlpSpec)> {
        self.components
            .iter()
            .map(|(n, s)| (n.as_str(), s.clone()))
            .collect()
    }

    /// Seed-deterministic parameter store for this model.
    pub fn init_params(&self, seed: u64) -> ParamStore {
        ParamStore::init(&self.components(), seed)
    }

    /// Raw node features: [x, y, reid...], positions preconditioned by the
    /// configured scene normalization.
    pub fn raw_node_features(&self, g: &DetectionGraph) -> Mat {
        let mut m = Mat::zeros(g.nodes.len(), self.node_feat_dim);
        for (i, n) in g.nodes.iter().enumerate() {
            assert_eq!(
                n.reid.len(),
                self.node_feat_dim - 2,
                "detection reid width does not match the model"
            );
            let row = m.row_mut(i);
            row[0] = (n.position[0] - self.norm.pos_center[0]) / self.norm.pos_half_extent;
            row[1] = (n.position[1] - self.norm.pos_center[1]) / self.norm.pos_half_extent;
            row[2..].copy_from_slice(&n.reid);
        }
        m
    }

    /// Raw link features for the time-forward orientation:
    /// [frame gap, Δx, Δy, ||Δreid||].
    pub fn raw_edge_features(&self, g: &DetectionGraph) -> Mat {
        let mut m = Mat::zeros(g.links.len(), EDGE_FEAT_DIM);
        for (k, &(i, j)) in g.links.iter().enumerate() {
            let a = &g.nodes[i as usize];
            let b = &g.nodes[j as usize];
            let row = m.row_mut(k);
            row[0] = (b.frame - a.frame) as f64;
            row[1] = b.position[0] - a.position[0];
            row[2] = b.position[1] - a.position[1];
            row[3] = a
                .reid
                .iter()
                .zip(&b.reid)
                .map(|(x, y)| (x - y) * (x - y))
                .sum::<f64>()
                .sqrt();
        }
        m
    }

    fn component_spec(&self, name: &str) -> &MlpSpec {
        &self
            .components
            .iter()
            .find(|(n, _)| n == name)
            .unwrap_or_else(|| panic!("no component `{name}`"))
            .1
    }

    fn seg_offset(&self, store: &ParamStore, name: &str) -> usize {
        let seg = store.segment(name);
        // Widths must agree; the output activation may differ so one θ can
        // be read out in either cost or belief mode.
        debug_assert_eq!(
            seg.spec.widths,
            self.components
                .iter()
                .find(|(n, _)| n == name)
                .unwrap()
                .1
                .widths,
            "parameter store does not match the model"
        );
        seg.offset
    }

    /// Layer-0 embeddings only (encoders applied to raw features).
    pub fn encode_initial(&self, g: &DetectionGraph, store: &ParamStore) -> EmbeddingState {
        let mut tape = Tape::new();
        let theta = store.theta();
        let node_id = mlp_forward_batch(
            &mut tape,
            self.component_spec("node_enc"),
            theta,
            self.seg_offset(store, "node_enc"),
            self.raw_node_features(g),
        );
        let edge_id = mlp_forward_batch(
            &mut tape,
            self.component_spec("edge_enc"),
            theta,
            self.seg_offset(store, "edge_enc"),
            self.raw_edge_features(g),
        );
        EmbeddingState {
            node: tape.output(node_id).clone(),
            edge: tape.output(edge_id).clone(),
        }
    }

    /// Full forward pass: one scalar per link plus the trace for backward.
    pub fn forward(&self, g: &DetectionGraph, store: &ParamStore) -> (EdgeCosts, MpnTrace) {
        let theta = store.theta();
        let h = self.cfg.hidden_dim;
        let n_links = g.links.len();
        let src: Vec<u32> = g.links.iter().map(|&(i, _)| i).collect();
        let dst: Vec<u32> = g.links.iter().map(|&(_, j)| j).collect();

        let mut tape = Tape::new();
        let node_enc = mlp_forward_batch(
            &mut tape,
            self.component_spec("node_enc"),
            theta,
            self.seg_offset(store, "node_enc"),
            self.raw_node_features(g),
        );
        let edge_enc = mlp_forward_batch(
            &mut tape,
            self.component_spec("edge_enc"),
            theta,
            self.seg_offset(store, "edge_enc"),
            self.raw_edge_features(g),
        );

        let mut node_prev = tape.output(node_enc).clone();
        let mut fwd = tape.output(edge_enc).clone();
        let mut bwd = fwd.clone();
        let mut layers = Vec::with_capacity(self.cfg.num_layers);

        for _ in 0..self.cfg.num_layers {
            let by_src = node_prev.gather_rows(&src);
            let by_dst = node_prev.gather_rows(&dst);
            // Forward rows [h_i, h_j, h_(i,j)], backward rows [h_j, h_i, h_(j,i)].
            let edge_in = Mat::vcat(&[
                &Mat::hcat(&[&by_src, &by_dst, &fwd]),
                &Mat::hcat(&[&by_dst, &by_src, &bwd]),
            ]);
            let edge_update = mlp_forward_batch(
                &mut tape,
                self.component_spec("edge_update"),
                theta,
                self.seg_offset(store, "edge_update"),
                edge_in,
            );
            let both = tape.output(edge_update);
            fwd = both.row_slice(0, n_links);
            bwd = both.row_slice(n_links, 2 * n_links);

            let msg_past = mlp_forward_batch(
                &mut tape,
                self.component_spec("msg_past"),
                theta,
                self.seg_offset(store, "msg_past"),
                Mat::hcat(&[&by_dst, &fwd]),
            );
            let msg_fut = mlp_forward_batch(
                &mut tape,
                self.component_spec("msg_fut"),
                theta,
                self.seg_offset(store, "msg_fut"),
                Mat::hcat(&[&by_src, &bwd]),
            );

            let mut sum_past = Mat::zeros(g.nodes.len(), h);
            tape.output(msg_past).scatter_add_rows(&mut sum_past, &dst);
            let mut sum_fut = Mat::zeros(g.nodes.len(), h);
            tape.output(msg_fut).scatter_add_rows(&mut sum_fut, &src);

            let node_update = mlp_forward_batch(
                &mut tape,
                self.component_spec("node_update"),
                theta,
                self.seg_offset(store, "node_update"),
                Mat::hcat(&[&sum_past, &sum_fut]),
            );
            node_prev = tape.output(node_update).clone();

            layers.push(LayerCalls {
                edge_update,
                msg_past,
                msg_fut,
                node_update,
            });
        }

        let readout = mlp_forward_batch(
            &mut tape,
            self.component_spec("readout"),
            theta,
            self.seg_offset(store, "readout"),
            Mat::hcat(&[&fwd, &bwd]),
        );
        let values: Vec<f64> = (0..n_links)
            .map(|k| tape.output(readout).row(k)[0])
            .collect();
        let costs = EdgeCosts::new(g, values);
        let trace = MpnTrace {
            tape,
            node_enc,
            edge_enc,
            layers,
            readout,
            src,
            dst,
            n_nodes: g.nodes.len(),
            n_links,
            hidden: h,
            consumed: false,
        };
        (costs, trace)
    }

    /// Exact gradient of Σ_links upstream[k] · scalar_k with respect to θ.
    ///
    /// `upstream` must carry one entry per link of the traced graph.
    pub fn backward(
        &self,
        trace: &mut MpnTrace,
        store: &ParamStore,
        upstream: &[f64],
    ) -> Result<Vec<f64>> {
        if upstream.len() != trace.n_links {
            return Err(CoreError::CostMismatch(format!(
                "upstream has {} entries for {} links",
                upstream.len(),
                trace.n_links
            )));
        }
        assert!(!trace.consumed, "tape consumed twice");
        trace.consumed = true;

        let theta = store.theta();
        let h = trace.hidden;
        let e = trace.n_links;
        let mut grad = vec![0.0; store.len()];
        let tape = &mut trace.tape;

        let d_read = Mat::from_vec(e, 1, upstream.to_vec());
        let d_read_in = mlp_backward_batch(tape, trace.readout, theta, &d_read, &mut grad);
        let mut d_fwd = d_read_in.col_slice(0, h);
        let mut d_bwd = d_read_in.col_slice(h, 2 * h);
        // Node embeddings of the last layer feed nothing downstream.
        let mut d_node = Mat::zeros(trace.n_nodes, h);

        for layer in trace.layers.iter().rev() {
            // Node update.
            let d_node_in = mlp_backward_batch(tape, layer.node_update, theta, &d_node, &mut grad);
            let d_msg_past = d_node_in.col_slice(0, h).gather_rows(&trace.dst);
            let d_msg_fut = d_node_in.col_slice(h, 2 * h).gather_rows(&trace.src);
            let mut d_node_prev = Mat::zeros(trace.n_nodes, h);

            // Messages.
            let d_past_in = mlp_backward_batch(tape, layer.msg_past, theta, &d_msg_past, &mut grad);
            d_past_in
                .col_slice(0, h)
                .scatter_add_rows(&mut d_node_prev, &trace.dst);
            d_fwd.add_assign(&d_past_in.col_slice(h, 2 * h));

            let d_fut_in = mlp_backward_batch(tape, layer.msg_fut, theta, &d_msg_fut, &mut grad);
            d_fut_in
                .col_slice(0, h)
                .scatter_add_rows(&mut d_node_prev, &trace.src);
            d_bwd.add_assign(&d_fut_in.col_slice(h, 2 * h));

            // Edge update over both directed blocks.
            let d_edge_out = Mat::vcat(&[&d_fwd, &d_bwd]);
            let d_edge_in = mlp_backward_batch(tape, layer.edge_update, theta, &d_edge_out, &mut grad);
            let f_rows = d_edge_in.row_slice(0, e);
            let b_rows = d_edge_in.row_slice(e, 2 * e);
            f_rows
                .col_slice(0, h)
                .scatter_add_rows(&mut d_node_prev, &trace.src);
            f_rows
                .col_slice(h, 2 * h)
                .scatter_add_rows(&mut d_node_prev, &trace.dst);
            b_rows
                .col_slice(0, h)
                .scatter_add_rows(&mut d_node_prev, &trace.dst);
            b_rows
                .col_slice(h, 2 * h)
                .scatter_add_rows(&mut d_node_prev, &trace.src);
            d_fwd = f_rows.col_slice(2 * h, 3 * h);
            d_bwd = b_rows.col_slice(2 * h, 3 * h);
            d_node = d_node_prev;
        }

        // Both layer-0 directed copies are the encoder output.
        d_fwd.add_assign(&d_bwd);
        mlp_backward_batch(tape, trace.edge_enc, theta, &d_fwd, &mut grad);
        mlp_backward_batch(tape, trace.node_enc, theta, &d_node, &mut grad);
        Ok(grad)
    }
}

struct LayerCalls {
    edge_update: CallId,
    msg_past: CallId,
    msg_fut: CallId,
    node_update: CallId,
}

/// Recorded forward pass of the MPN over one graph.
pub struct MpnTrace {
    tape: Tape,
    node_enc: CallId,
    edge_enc: CallId,
    layers: Vec<LayerCalls>,
    readout: CallId,
    src: Vec<u32>,
    dst: Vec<u32>,
    n_nodes: usize,
    n_links: usize,
    hidden: usize,
    consumed: bool,
}
