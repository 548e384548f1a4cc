use ndarray::{ArrayView1, ArrayView2, ArrayViewMut1, ArrayViewMut2};

/// Index of a tensor inside a [`ParamStore`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct ParamId(pub usize);

/// A named parameter tensor. Values are held in f64 for computation but are
/// kept exactly representable as f32, which is the checkpoint precision.
#[derive(Debug, Clone, PartialEq)]
pub struct Param {
    pub name: String,
    pub shape: Vec<usize>,
    pub data: Vec<f64>,
    pub trainable: bool,
}

impl Param {
    pub fn len(&self) -> usize {
        self.data.len()
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct ParamStore {
    params: Vec<Param>,
}

impl ParamStore {
    pub(crate) fn push(&mut self, name: impl Into<String>, shape: Vec<usize>, data: Vec<f64>) -> ParamId {
        debug_assert_eq!(shape.iter().product::<usize>(), data.len());
        self.params.push(Param { name: name.into(), shape, data, trainable: true });
        ParamId(self.params.len() - 1)
    }

    pub fn len(&self) -> usize {
        self.params.len()
    }

    pub fn is_empty(&self) -> bool {
        self.params.is_empty()
    }

    pub fn get(&self, id: ParamId) -> &Param {
        &self.params[id.0]
    }

    pub(crate) fn get_mut(&mut self, id: ParamId) -> &mut Param {
        &mut self.params[id.0]
    }

    pub fn iter(&self) -> impl Iterator<Item = (ParamId, &Param)> {
        self.params.iter().enumerate().map(|(i, p)| (ParamId(i), p))
    }

    pub fn find(&self, name: &str) -> Option<ParamId> {
        self.params.iter().position(|p| p.name == name).map(ParamId)
    }

    /// Total scalar count over all tensors, trainable or not.
    pub fn num_scalars(&self) -> usize {
        self.params.iter().map(Param::len).sum()
    }

    pub(crate) fn mat(&self, id: ParamId) -> ArrayView2<'_, f64> {
        let p = &self.params[id.0];
        ArrayView2::from_shape((p.shape[0], p.shape[1]), &p.data).expect("matrix parameter")
    }

    pub(crate) fn vec(&self, id: ParamId) -> ArrayView1<'_, f64> {
        ArrayView1::from(&self.params[id.0].data[..])
    }

    /// Rounds every value to the nearest f32.
    pub(crate) fn snap_to_f32(&mut self) {
        for p in &mut self.params {
            for v in &mut p.data {
                *v = *v as f32 as f64;
            }
        }
    }
}

/// Gradient buffers shaped like a [`ParamStore`].
#[derive(Debug, Clone, PartialEq)]
pub struct Gradients {
    shapes: Vec<Vec<usize>>,
    grads: Vec<Vec<f64>>,
}

impl Gradients {
    pub fn zeros_like(store: &ParamStore) -> Self {
        Self {
            shapes: store.params.iter().map(|p| p.shape.clone()).collect(),
            grads: store.params.iter().map(|p| vec![0.0; p.len()]).collect(),
        }
    }

    pub fn get(&self, id: ParamId) -> &[f64] {
        &self.grads[id.0]
    }

    pub fn get_mut(&mut self, id: ParamId) -> &mut [f64] {
        &mut self.grads[id.0]
    }

    pub fn add_assign(&mut self, other: &Gradients) {
        for (a, b) in self.grads.iter_mut().zip(&other.grads) {
            for (x, y) in a.iter_mut().zip(b) {
                *x += y;
            }
        }
    }

    pub fn scale(&mut self, factor: f64) {
        for g in &mut self.grads {
            for x in g.iter_mut() {
                *x *= factor;
            }
        }
    }

    pub(crate) fn mat_mut(&mut self, id: ParamId) -> ArrayViewMut2<'_, f64> {
        let shape = &self.shapes[id.0];
        ArrayViewMut2::from_shape((shape[0], shape[1]), &mut self.grads[id.0]).expect("matrix gradient")
    }

    pub(crate) fn vec_mut(&mut self, id: ParamId) -> ArrayViewMut1<'_, f64> {
        ArrayViewMut1::from(&mut self.grads[id.0][..])
    }

    /// Disjoint mutable views onto two different tensors.
    pub(crate) fn pair_vec_mut(&mut self, a: ParamId, b: ParamId) -> (ArrayViewMut1<'_, f64>, ArrayViewMut1<'_, f64>) {
        assert_ne!(a, b);
        let (lo, hi, swap) = if a.0 < b.0 { (a.0, b.0, false) } else { (b.0, a.0, true) };
        let (left, right) = self.grads.split_at_mut(hi);
        let x = ArrayViewMut1::from(&mut left[lo][..]);
        let y = ArrayViewMut1::from(&mut right[0][..]);
        if swap {
            (y, x)
        } else {
            (x, y)
        }
    }

    /// Disjoint mutable views onto a weight matrix and its bias.
    pub(crate) fn weight_bias_mut(&mut self, w: ParamId, b: ParamId) -> (ArrayViewMut2<'_, f64>, ArrayViewMut1<'_, f64>) {
        assert_ne!(w, b);
        let shape = (self.shapes[w.0][0], self.shapes[w.0][1]);
        let (lo, hi, w_first) = if w.0 < b.0 { (w.0, b.0, true) } else { (b.0, w.0, false) };
        let (left, right) = self.grads.split_at_mut(hi);
        let (ws, bs) = if w_first {
            (&mut left[lo], &mut right[0])
        } else {
            (&mut right[0], &mut left[lo])
        };
        (
            ArrayViewMut2::from_shape(shape, &mut ws[..]).expect("matrix gradient"),
            ArrayViewMut1::from(&mut bs[..]),
        )
    }
}
