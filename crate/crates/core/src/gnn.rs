//! Geometry-aware keypoint-offset decoder.
//!
//! For object point `i` and keypoint `u`, every neighbor `v ∈ N(u)` sends the
//! message `α = f_local(x_i ⊕ z_kp^v ⊕ (p_u − p_v))`; the messages are reduced
//! by an elementwise max and `f_global` reads out the 3D offset.

use ndarray::{s, Array2, Array3, ArrayView2};
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::geometry::{build_knn_graph, KeypointGraph, KeypointSet, NUM_KEYPOINTS};
use crate::meta::{column_argmax, LatentRep, FEATURE_DIM, LATENT_DIM};
use crate::nn::{Activation, Mlp, MlpCache, MlpGrads, Parameters};
use crate::{Error, Result};

pub const HIDDEN_DIM: usize = 128;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GnnDecoder {
    pub f_local: Mlp,
    pub f_global: Mlp,
    /// Neighbors per keypoint; the graph itself is rebuilt from each object's
    /// canonical keypoints.
    pub k: usize,
}

#[derive(Debug, Clone, PartialEq)]
pub struct GnnGrads {
    pub f_local: MlpGrads,
    pub f_global: MlpGrads,
}

impl GnnGrads {
    pub fn slices(&self) -> Vec<&[f64]> {
        let mut v = self.f_local.slices();
        v.extend(self.f_global.slices());
        v
    }
}

#[derive(Debug, Clone)]
pub struct GnnCache {
    local: MlpCache,
    global: MlpCache,
    /// For each `(point, node)` row and hidden unit: the edge row that won the max.
    argmax: Vec<Vec<usize>>,
    num_local_rows: usize,
    /// Neighbor nodes, in edge-row order, for each `(point, node)`; only the
    /// `v` index is needed to route latent gradients.
    edge_nodes: Vec<usize>,
    feature_dim: usize,
    latent_dim: usize,
}

impl GnnDecoder {
    /// Three 128-wide ReLU layers for `f_local`, then `128 → 128 → 3` for
    /// `f_global`.
    pub fn new<R: Rng + ?Sized>(k: usize, rng: &mut R) -> Result<Self> {
        Self::with_dims(FEATURE_DIM, LATENT_DIM, HIDDEN_DIM, k, rng)
    }

    pub fn with_dims<R: Rng + ?Sized>(dx: usize, dz: usize, hidden: usize, k: usize, rng: &mut R) -> Result<Self> {
        let f_local = Mlp::new(&[dx + dz + 3, hidden, hidden, hidden], Activation::Relu, rng)?;
        let f_global = Mlp::new(&[hidden, hidden, hidden, 3], Activation::Linear, rng)?;
        Self::from_parts(f_local, f_global, k)
    }

    pub fn from_parts(f_local: Mlp, f_global: Mlp, k: usize) -> Result<Self> {
        if f_local.output_dim() != f_global.input_dim() {
            return Err(Error::invalid(format!(
                "f_local outputs {} values but f_global expects {}",
                f_local.output_dim(),
                f_global.input_dim()
            )));
        }
        if f_global.output_dim() != 3 {
            return Err(Error::invalid("f_global must output a 3D offset"));
        }
        if k == 0 || k >= NUM_KEYPOINTS {
            return Err(Error::invalid(format!("k must lie in [1, {}]", NUM_KEYPOINTS - 1)));
        }
        Ok(Self { f_local, f_global, k })
    }

    pub fn graph_for(&self, kps: &KeypointSet) -> Result<KeypointGraph> {
        build_knn_graph(kps, self.k)
    }

    fn check(
        &self,
        x_obj: &ArrayView2<f64>,
        latent: &LatentRep,
        kps: &KeypointSet,
        graph: &KeypointGraph,
    ) -> Result<()> {
        if graph.num_nodes() != kps.len() || kps.len() != latent.z_kp.nrows() {
            return Err(Error::invalid(format!(
                "graph has {} nodes, keypoint set {}, latent {}",
                graph.num_nodes(),
                kps.len(),
                latent.z_kp.nrows()
            )));
        }
        let width = x_obj.ncols() + latent.z_kp.ncols() + 3;
        if width != self.f_local.input_dim() {
            return Err(Error::invalid(format!(
                "message input width {width} != f_local input {}",
                self.f_local.input_dim()
            )));
        }
        Ok(())
    }

    /// Edge rows ordered by (point, node, neighbor position in `N(u)`).
    fn edge_rows(x_obj: ArrayView2<f64>, latent: &LatentRep, kps: &KeypointSet, graph: &KeypointGraph) -> Array2<f64> {
        let (m, dx) = x_obj.dim();
        let dz = latent.z_kp.ncols();
        let per_point = graph.num_edges();
        let mut rows = Array2::zeros((m * per_point, dx + dz + 3));
        let p = kps.points();
        let mut r = 0;
        for i in 0..m {
            for u in 0..graph.num_nodes() {
                for &v in graph.neighbors(u) {
                    let mut row = rows.row_mut(r);
                    row.slice_mut(s![..dx]).assign(&x_obj.row(i));
                    row.slice_mut(s![dx..dx + dz]).assign(&latent.z_kp.row(v));
                    let e = p[u] - p[v];
                    row[dx + dz] = e.x;
                    row[dx + dz + 1] = e.y;
                    row[dx + dz + 2] = e.z;
                    r += 1;
                }
            }
        }
        rows
    }

    /// Max over each node's messages: returns `(point·node) × hidden` and the
    /// winning edge row per entry.
    fn reduce(alpha: &Array2<f64>, m: usize, graph: &KeypointGraph) -> (Array2<f64>, Vec<Vec<usize>>) {
        let nodes = graph.num_nodes();
        let mut pooled = Array2::zeros((m * nodes, alpha.ncols()));
        let mut argmax = Vec::with_capacity(m * nodes);
        let mut start = 0;
        for i in 0..m {
            for u in 0..nodes {
                let len = graph.neighbors(u).len();
                let (idx, best) = column_argmax(alpha.slice(s![start..start + len, ..]));
                pooled.row_mut(i * nodes + u).assign(&best);
                argmax.push(idx.into_iter().map(|e| start + e).collect());
                start += len;
            }
        }
        (pooled, argmax)
    }

    /// Messages arriving at node `u` for a single object point, in `N(u)` order.
    pub fn local_messages(
        &self,
        x_obj_i: ndarray::ArrayView1<f64>,
        latent: &LatentRep,
        kps: &KeypointSet,
        graph: &KeypointGraph,
        u: usize,
    ) -> Result<Array2<f64>> {
        let x = x_obj_i.insert_axis(ndarray::Axis(0));
        self.check(&x, latent, kps, graph)?;
        if u >= graph.num_nodes() {
            return Err(Error::invalid(format!("node {u} out of range")));
        }
        let rows = Self::edge_rows(x, latent, kps, graph);
        let start: usize = (0..u).map(|w| graph.neighbors(w).len()).sum();
        let len = graph.neighbors(u).len();
        self.f_local.forward(rows.slice(s![start..start + len, ..]))
    }

    /// Offsets `M_obj × M_k × 3` using the KNN graph of `kps`.
    pub fn decode(&self, x_obj: ArrayView2<f64>, latent: &LatentRep, kps: &KeypointSet) -> Result<Array3<f64>> {
        let graph = self.graph_for(kps)?;
        self.decode_with_graph(x_obj, latent, kps, &graph)
    }

    pub fn decode_with_graph(
        &self,
        x_obj: ArrayView2<f64>,
        latent: &LatentRep,
        kps: &KeypointSet,
        graph: &KeypointGraph,
    ) -> Result<Array3<f64>> {
        self.check(&x_obj, latent, kps, graph)?;
        let m = x_obj.nrows();
        let alpha = self
            .f_local
            .forward(Self::edge_rows(x_obj, latent, kps, graph).view())?;
        let (pooled, _) = Self::reduce(&alpha, m, graph);
        let out = self.f_global.forward(pooled.view())?;
        Ok(out
            .into_shape_with_order((m, graph.num_nodes(), 3))
            .expect("row-major output"))
    }

    pub fn decode_train(
        &self,
        x_obj: ArrayView2<f64>,
        latent: &LatentRep,
        kps: &KeypointSet,
    ) -> Result<(Array3<f64>, GnnCache)> {
        let graph = self.graph_for(kps)?;
        self.check(&x_obj, latent, kps, &graph)?;
        let m = x_obj.nrows();
        let rows = Self::edge_rows(x_obj, latent, kps, &graph);
        let num_local_rows = rows.nrows();
        let (alpha, local) = self.f_local.forward_train(rows)?;
        let (pooled, argmax) = Self::reduce(&alpha, m, &graph);
        let (out, global) = self.f_global.forward_train(pooled)?;
        let edge_nodes = (0..m)
            .flat_map(|_| (0..graph.num_nodes()).flat_map(|u| graph.neighbors(u).to_vec()))
            .collect();
        Ok((
            out.into_shape_with_order((m, graph.num_nodes(), 3))
                .expect("row-major output"),
            GnnCache {
                local,
                global,
                argmax,
                num_local_rows,
                edge_nodes,
                feature_dim: x_obj.ncols(),
                latent_dim: latent.z_kp.ncols(),
            },
        ))
    }

    /// Parameter gradients and `d loss / d z_kp`.
    pub fn backward(&self, cache: &GnnCache, grad_offsets: &Array3<f64>) -> Result<(GnnGrads, Array2<f64>)> {
        let (m, nodes, _) = grad_offsets.dim();
        let g = grad_offsets
            .view()
            .into_shape_with_order((m * nodes, 3))
            .map_err(|e| Error::invalid(e.to_string()))?;
        let (g_global, g_pooled) = self.f_global.backward(&cache.global, g)?;
        let hidden = g_pooled.ncols();
        let mut g_alpha = Array2::zeros((cache.num_local_rows, hidden));
        for (row, winners) in cache.argmax.iter().enumerate() {
            for (j, &e) in winners.iter().enumerate() {
                g_alpha[[e, j]] += g_pooled[[row, j]];
            }
        }
        let (g_local, g_rows) = self.f_local.backward(&cache.local, g_alpha.view())?;
        let (dx, dz) = (cache.feature_dim, cache.latent_dim);
        let mut gz = Array2::zeros((nodes, dz));
        for (r, &v) in cache.edge_nodes.iter().enumerate() {
            let mut dst = gz.row_mut(v);
            dst += &g_rows.slice(s![r, dx..dx + dz]);
        }
        Ok((
            GnnGrads {
                f_local: g_local,
                f_global: g_global,
            },
            gz,
        ))
    }
}

impl Parameters for GnnDecoder {
    fn param_slices(&self) -> Vec<&[f64]> {
        let mut v = self.f_local.param_slices();
        v.extend(self.f_global.param_slices());
        v
    }

    fn param_slices_mut(&mut self) -> Vec<&mut [f64]> {
        let mut v = self.f_local.param_slices_mut();
        v.extend(self.f_global.param_slices_mut());
        v
    }
}

/// Offsets from the geometry-aware decoder over the KNN graph of `kps`.
pub fn decode_offsets_gnn(
    dec: &GnnDecoder,
    x_obj: ArrayView2<f64>,
    latent: &LatentRep,
    kps: &KeypointSet,
) -> Result<Array3<f64>> {
    dec.decode(x_obj, latent, kps)
}
