//! Graph-based feature reconstruction.
//!
//! A [`SimilarityGraph`] is built once over the frozen paired embeddings of
//! the training split: nodes `i != j` are joined when the cosine similarity
//! of their L2-normalized embeddings is strictly above a threshold. Each
//! node (or an unseen query embedding, inductively) is then summarised by
//! `concat(mean of neighbour embeddings, own embedding)`, which a single
//! trainable ReLU layer per modality maps to the relation features.

use std::collections::{BTreeMap, HashMap};

use serde::Serialize;
use thiserror::Error;

use crate::autodiff::{Graph, Var};
use crate::params::{ParamError, ParamId, ParamStore};
use crate::rng::Rng;
use crate::tensor::{Matrix, Scalar, TensorError};
use crate::Modality;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum GfrmError {
    #[error("node index {index} out of range for a graph of {len} nodes")]
    NodeIndex { index: usize, len: usize },
    #[error("query has dimension {actual}, graph embeddings have {expected}")]
    Dimension { expected: usize, actual: usize },
}

fn normalize(v: &[f32]) -> Vec<f64> {
    let norm = v.iter().map(|&x| (x as f64) * (x as f64)).sum::<f64>().sqrt();
    if norm == 0.0 {
        log::warn!("zero-norm embedding in similarity graph; it joins no edges");
        return vec![0.0; v.len()];
    }
    v.iter().map(|&x| x as f64 / norm).collect()
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum::<f64>().clamp(-1.0, 1.0)
}

/// How a sample is located on the graph.
#[derive(Debug, Clone, Copy)]
pub enum GraphQuery<'a> {
    /// A node the graph was built from.
    Node(usize),
    /// An embedding not (necessarily) in the graph.
    External(&'a [f32]),
}

#[derive(Debug, Clone)]
pub struct SimilarityGraph {
    pub modality: Modality,
    pub thr: f64,
    embeddings: Matrix<f32>,
    normalized: Vec<Vec<f64>>,
    neighbors: Vec<Vec<usize>>,
    neighbor_mean: Matrix<f32>,
    by_bits: HashMap<Vec<u32>, usize>,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct GraphStats {
    pub nodes: usize,
    pub edges: usize,
    pub isolated: usize,
    /// degree → node count
    pub degree_histogram: BTreeMap<usize, usize>,
}

impl SimilarityGraph {
    /// Builds the thresholded cosine graph over the rows of `embeddings`.
    pub fn build(embeddings: Matrix<f32>, thr: f64, modality: Modality) -> Self {
        let r = embeddings.rows();
        let normalized: Vec<Vec<f64>> = (0..r).map(|i| normalize(embeddings.row(i))).collect();
        let mut neighbors = vec![Vec::new(); r];
        for i in 0..r {
            for j in i + 1..r {
                if dot(&normalized[i], &normalized[j]) > thr {
                    neighbors[i].push(j);
                    neighbors[j].push(i);
                }
            }
        }
        for n in &mut neighbors {
            n.sort_unstable();
        }
        let mut neighbor_mean = Matrix::zeros(r, embeddings.cols());
        for (k, nbrs) in neighbors.iter().enumerate() {
            let mean = mean_of(&normalized, nbrs, embeddings.cols());
            neighbor_mean.row_mut(k).copy_from_slice(&mean);
        }
        let mut by_bits = HashMap::new();
        for i in 0..r {
            let key: Vec<u32> = embeddings.row(i).iter().map(|x| x.to_bits()).collect();
            by_bits.entry(key).or_insert(i);
        }
        Self {
            modality,
            thr,
            embeddings,
            normalized,
            neighbors,
            neighbor_mean,
            by_bits,
        }
    }

    pub fn len(&self) -> usize {
        self.neighbors.len()
    }

    pub fn is_empty(&self) -> bool {
        self.neighbors.is_empty()
    }

    pub fn dim(&self) -> usize {
        self.embeddings.cols()
    }

    pub fn embeddings(&self) -> &Matrix<f32> {
        &self.embeddings
    }

    pub fn neighbors(&self, k: usize) -> &[usize] {
        &self.neighbors[k]
    }

    pub fn is_edge(&self, i: usize, j: usize) -> bool {
        self.neighbors[i].binary_search(&j).is_ok()
    }

    /// Dense boolean adjacency.
    pub fn adjacency(&self) -> Vec<Vec<bool>> {
        let r = self.len();
        let mut a = vec![vec![false; r]; r];
        for (i, nbrs) in self.neighbors.iter().enumerate() {
            for &j in nbrs {
                a[i][j] = true;
            }
        }
        a
    }

    /// Cached mean of the normalized neighbour embeddings (zero if isolated).
    pub fn neighbor_mean(&self) -> &Matrix<f32> {
        &self.neighbor_mean
    }

    pub fn edge_count(&self) -> usize {
        self.neighbors.iter().map(Vec::len).sum::<usize>() / 2
    }

    pub fn stats(&self) -> GraphStats {
        let mut hist = BTreeMap::new();
        for n in &self.neighbors {
            *hist.entry(n.len()).or_insert(0) += 1;
        }
        GraphStats {
            nodes: self.len(),
            edges: self.edge_count(),
            isolated: self.neighbors.iter().filter(|n| n.is_empty()).count(),
            degree_histogram: hist,
        }
    }

    /// `concat(neighbor mean, normalized self)` for a node or an external
    /// embedding. An external embedding bitwise equal to a stored node is
    /// resolved to that node, so inductive and transductive queries agree.
    pub fn relation_input(&self, query: GraphQuery<'_>) -> Result<Vec<f32>, GfrmError> {
        let d = self.dim();
        let node = match query {
            GraphQuery::Node(k) => {
                if k >= self.len() {
                    return Err(GfrmError::NodeIndex { index: k, len: self.len() });
                }
                Some(k)
            }
            GraphQuery::External(v) => {
                if v.len() != d {
                    return Err(GfrmError::Dimension { expected: d, actual: v.len() });
                }
                let key: Vec<u32> = v.iter().map(|x| x.to_bits()).collect();
                self.by_bits.get(&key).copied()
            }
        };
        let mut out = Vec::with_capacity(2 * d);
        match (node, query) {
            (Some(k), _) => {
                out.extend_from_slice(self.neighbor_mean.row(k));
                out.extend(self.normalized[k].iter().map(|&x| x as f32));
            }
            (None, GraphQuery::External(v)) => {
                let q = normalize(v);
                let nbrs: Vec<usize> = (0..self.len()).filter(|&j| dot(&q, &self.normalized[j]) > self.thr).collect();
                out.extend(mean_of(&self.normalized, &nbrs, d));
                out.extend(q.iter().map(|&x| x as f32));
            }
            (None, GraphQuery::Node(_)) => unreachable!("node queries always resolve"),
        }
        Ok(out)
    }
}

fn mean_of(normalized: &[Vec<f64>], idx: &[usize], d: usize) -> Vec<f32> {
    if idx.is_empty() {
        return vec![0.0; d];
    }
    let mut acc = vec![0.0f64; d];
    for &j in idx {
        for (a, &x) in acc.iter_mut().zip(&normalized[j]) {
            *a += x;
        }
    }
    let n = idx.len() as f64;
    acc.into_iter().map(|a| (a / n) as f32).collect()
}

/// One graph per modality, built from the training split.
#[derive(Debug, Clone)]
pub struct GraphPair {
    pub image: SimilarityGraph,
    pub text: SimilarityGraph,
}

impl GraphPair {
    pub fn build(pair_img: Matrix<f32>, pair_txt: Matrix<f32>, thr: f64) -> Self {
        Self {
            image: SimilarityGraph::build(pair_img, thr, Modality::Image),
            text: SimilarityGraph::build(pair_txt, thr, Modality::Text),
        }
    }
}

#[derive(Debug, Clone, Copy)]
pub struct SageLayer {
    pub w: ParamId,
    pub b: ParamId,
}

/// Mean-aggregation layers for both modalities.
#[derive(Debug, Clone, Copy)]
pub struct Gfrm {
    pub image: SageLayer,
    pub text: SageLayer,
    pub in_dim: usize,
    pub out_dim: usize,
}

impl Gfrm {
    /// `pair_dim` is the embedding width; each layer reads `2 * pair_dim`.
    pub fn register<T: Scalar>(store: &mut ParamStore<T>, pair_dim: usize, out_dim: usize, rng: &mut Rng) -> Result<Self, ParamError> {
        let mut layer = |name: &str| -> Result<SageLayer, ParamError> {
            Ok(SageLayer {
                w: store.add_weight(&format!("gfrm.{name}.w"), 2 * pair_dim, out_dim, rng)?,
                b: store.add_bias(&format!("gfrm.{name}.b"), out_dim)?,
            })
        };
        let image = layer("img")?;
        let text = layer("txt")?;
        Ok(Self {
            image,
            text,
            in_dim: 2 * pair_dim,
            out_dim,
        })
    }

    pub fn bind<T: Scalar>(store: &ParamStore<T>, pair_dim: usize, out_dim: usize) -> Result<Self, ParamError> {
        let layer = |name: &str| -> Result<SageLayer, ParamError> {
            Ok(SageLayer {
                w: store.id(&format!("gfrm.{name}.w"))?,
                b: store.id(&format!("gfrm.{name}.b"))?,
            })
        };
        Ok(Self {
            image: layer("img")?,
            text: layer("txt")?,
            in_dim: 2 * pair_dim,
            out_dim,
        })
    }

    fn layer(&self, modality: Modality) -> SageLayer {
        match modality {
            Modality::Image => self.image,
            Modality::Text => self.text,
        }
    }

    /// `ReLU(input · W + b)` for a `batch × 2d` stack of relation inputs.
    pub fn sage_forward<T: Scalar>(&self, g: &mut Graph<T>, store: &ParamStore<T>, modality: Modality, input: Var) -> Result<Var, TensorError> {
        let l = self.layer(modality);
        let w = g.param(store, l.w);
        let b = g.param(store, l.b);
        let h = g.affine(input, w, b)?;
        Ok(g.relu(h))
    }

    /// Relation vector `image ‖ text`, `batch × 2 * out_dim`.
    pub fn forward<T: Scalar>(&self, g: &mut Graph<T>, store: &ParamStore<T>, rel_img: Var, rel_txt: Var) -> Result<Var, TensorError> {
        let hi = self.sage_forward(g, store, Modality::Image, rel_img)?;
        let ht = self.sage_forward(g, store, Modality::Text, rel_txt)?;
        g.concat_cols(&[hi, ht])
    }
}
