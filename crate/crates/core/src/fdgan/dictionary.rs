//! Soft-attention write and read of a feature dictionary.

use ndarray::Array2;
use reenact_tensor::{Binding, Float, Graph, ParamStore, Var};

use crate::error::{Error, Result};

/// Write attention `[B, n, N]`: for each row, a softmax over locations of
/// `tags [n, m_T]` against `keys [B, N, m_T]`.
pub fn write_weights<'g, T: Float>(tags: Var<'g, T>, keys: Var<'g, T>) -> Var<'g, T> {
    let (ks, ts) = (keys.shape(), tags.shape());
    let (b, n_loc, m_t) = (ks[0], ks[1], ks[2]);
    assert_eq!(ts[1], m_t, "write tags and keys differ in length");
    keys.reshape(&[b * n_loc, m_t])
        .matmul_nt(tags)
        .reshape(&[b, n_loc, ts[0]])
        .permute(&[0, 2, 1])
        .softmax_last()
}

/// Stored values `[B, n, m_V]` as attention-weighted sums of the per-location
/// `values [B, N, m_V]`.
pub fn write<'g, T: Float>(tags: Var<'g, T>, keys: Var<'g, T>, values: Var<'g, T>) -> Var<'g, T> {
    write_weights(tags, keys).bmm(values)
}

/// Read attention `[B, N, n]`: for each location, a softmax over rows of
/// `tags [n, m_T]` against `queries [B, N, m_T]`.
pub fn read_weights<'g, T: Float>(tags: Var<'g, T>, queries: Var<'g, T>) -> Var<'g, T> {
    let (qs, ts) = (queries.shape(), tags.shape());
    let (b, n_loc, m_t) = (qs[0], qs[1], qs[2]);
    assert_eq!(ts[1], m_t, "read tags and keys differ in length");
    queries
        .reshape(&[b * n_loc, m_t])
        .matmul_nt(tags)
        .reshape(&[b, n_loc, ts[0]])
        .softmax_last()
}

/// Per-location outputs `[B, N, m_V]` read from `stored [B, n, m_V]`.
pub fn read<'g, T: Float>(tags: Var<'g, T>, stored: Var<'g, T>, queries: Var<'g, T>) -> Var<'g, T> {
    read_weights(tags, queries).bmm(stored)
}

fn lift<'g, T: Float>(g: &'g Graph<T>, a: &Array2<T>) -> Var<'g, T> {
    let (r, c) = a.dim();
    g.constant(a.clone().into_dyn()).reshape(&[1, r, c])
}

fn lower<T: Float>(v: Var<'_, T>) -> Array2<T> {
    let s = v.shape();
    v.value()
        .as_standard_layout()
        .into_owned()
        .into_shape_with_order((s[1], s[2]))
        .unwrap()
}

/// Writes per-location `keys [N, m_T]` and `values [N, m_V]` into `n` rows
/// addressed by `write_tags [n, m_T]`.
pub fn dictionary_write<T: Float>(write_tags: &Array2<T>, keys: &Array2<T>, values: &Array2<T>) -> Result<Array2<T>> {
    if keys.nrows() == 0 {
        return Err(Error::Precondition("empty location set".into()));
    }
    if keys.nrows() != values.nrows() {
        return Err(Error::Shape(format!(
            "{} key locations but {} value locations",
            keys.nrows(),
            values.nrows()
        )));
    }
    if write_tags.ncols() != keys.ncols() {
        return Err(Error::Shape(format!(
            "tag length {} differs from key length {}",
            write_tags.ncols(),
            keys.ncols()
        )));
    }
    let g = Graph::new();
    let tags = g.constant(write_tags.clone().into_dyn());
    Ok(lower(write(tags, lift(&g, keys), lift(&g, values))))
}

/// Reads one output per query location `read_keys [N, m_T]` from
/// `stored_values [n, m_V]` addressed by `read_tags [n, m_T]`.
pub fn dictionary_read<T: Float>(read_tags: &Array2<T>, stored_values: &Array2<T>, read_keys: &Array2<T>) -> Result<Array2<T>> {
    if read_tags.nrows() == 0 || stored_values.nrows() != read_tags.nrows() {
        return Err(Error::Shape(format!(
            "dictionary has {} tags and {} stored rows",
            read_tags.nrows(),
            stored_values.nrows()
        )));
    }
    if read_tags.ncols() != read_keys.ncols() {
        return Err(Error::Shape(format!(
            "tag length {} differs from key length {}",
            read_tags.ncols(),
            read_keys.ncols()
        )));
    }
    let g = Graph::new();
    let tags = g.constant(read_tags.clone().into_dyn());
    Ok(lower(read(tags, lift(&g, stored_values), lift(&g, read_keys))))
}

/// Write attention `[n, N]` for one sample.
pub fn dictionary_write_weights<T: Float>(write_tags: &Array2<T>, keys: &Array2<T>) -> Array2<T> {
    let g = Graph::new();
    lower(write_weights(g.constant(write_tags.clone().into_dyn()), lift(&g, keys)))
}

/// Read attention `[N, n]` for one sample.
pub fn dictionary_read_weights<T: Float>(read_tags: &Array2<T>, read_keys: &Array2<T>) -> Array2<T> {
    let g = Graph::new();
    lower(read_weights(g.constant(read_tags.clone().into_dyn()), lift(&g, read_keys)))
}

/// Computed contents of one level's dictionary for a single target.
#[derive(Clone, Debug, PartialEq)]
pub struct FeatureDictionary {
    pub write_tags: Array2<f32>,
    pub read_tags: Array2<f32>,
    pub stored_values: Array2<f32>,
    pub level_index: usize,
}

impl FeatureDictionary {
    pub fn rows(&self) -> usize {
        self.stored_values.nrows()
    }

    pub(crate) fn from_store(store: &ParamStore<f32>, level: usize, stored: Array2<f32>, tag_len: usize) -> Self {
        let tags = |name: String| match store.id(&name) {
            Some(id) => store
                .get(id)
                .clone()
                .into_dimensionality()
                .expect("tags are matrices"),
            None => Array2::zeros((stored.nrows(), tag_len)),
        };
        FeatureDictionary {
            write_tags: tags(format!("dict{level}.write_tags")),
            read_tags: tags(format!("dict{level}.read_tags")),
            stored_values: stored,
            level_index: level,
        }
    }
}

pub(crate) fn bind_tags<'g, T: Float>(p: &Binding<'g, '_, T>, name: &str) -> Option<Var<'g, T>> {
    p.store().id(name).map(|id| p.var(id))
}
