//! Dense numeric kernel: matrices, lookup tables, affine layers, tanh,
//! embedding dropout, per-layer scaled SGD, a central-difference gradient
//! checker, and the model parameter container with its binary file format.

use std::collections::BTreeMap;
use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::Path;

use byteorder::{LittleEndian, ReadBytesExt, WriteBytesExt};
use rand::Rng;

use crate::error::{Error, Result};

/// Row-major dense matrix.
#[derive(Debug, Clone, PartialEq)]
pub struct Tensor {
    rows: usize,
    cols: usize,
    data: Vec<f64>,
}

impl Tensor {
    pub fn zeros(rows: usize, cols: usize) -> Self {
        Tensor {
            rows,
            cols,
            data: vec![0.0; rows * cols],
        }
    }

    pub fn from_vec(rows: usize, cols: usize, data: Vec<f64>) -> Result<Self> {
        if data.len() != rows * cols {
            return Err(Error::ShapeMismatch(format!(
                "{} values for a {}x{} tensor",
                data.len(),
                rows,
                cols
            )));
        }
        Ok(Tensor { rows, cols, data })
    }

    pub fn identity(n: usize) -> Self {
        let mut t = Tensor::zeros(n, n);
        for i in 0..n {
            t.data[i * n + i] = 1.0;
        }
        t
    }

    /// Entries drawn uniformly from `[-bound, bound]`.
    pub fn uniform<R: Rng>(rows: usize, cols: usize, bound: f64, rng: &mut R) -> Self {
        let data = (0..rows * cols)
            .map(|_| rng.gen_range(-bound..=bound))
            .collect();
        Tensor { rows, cols, data }
    }

    pub fn rows(&self) -> usize {
        self.rows
    }

    pub fn cols(&self) -> usize {
        self.cols
    }

    pub fn shape(&self) -> (usize, usize) {
        (self.rows, self.cols)
    }

    pub fn data(&self) -> &[f64] {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut [f64] {
        &mut self.data
    }

    pub fn get(&self, r: usize, c: usize) -> f64 {
        self.data[r * self.cols + c]
    }

    pub fn set(&mut self, r: usize, c: usize, v: f64) {
        self.data[r * self.cols + c] = v;
    }

    pub fn row(&self, r: usize) -> &[f64] {
        &self.data[r * self.cols..(r + 1) * self.cols]
    }

    pub fn row_mut(&mut self, r: usize) -> &mut [f64] {
        &mut self.data[r * self.cols..(r + 1) * self.cols]
    }

    pub fn col(&self, c: usize) -> Vec<f64> {
        (0..self.rows).map(|r| self.data[r * self.cols + c]).collect()
    }

    pub fn set_col(&mut self, c: usize, values: &[f64]) {
        for (r, v) in values.iter().enumerate() {
            self.data[r * self.cols + c] = *v;
        }
    }

    pub fn fill(&mut self, v: f64) {
        self.data.iter_mut().for_each(|x| *x = v);
    }

    pub fn is_finite(&self) -> bool {
        self.data.iter().all(|x| x.is_finite())
    }

    /// `self · z`
    pub fn matvec(&self, z: &[f64]) -> Result<Vec<f64>> {
        if z.len() != self.cols {
            return Err(Error::ShapeMismatch(format!(
                "{}x{} matrix times vector of length {}",
                self.rows,
                self.cols,
                z.len()
            )));
        }
        Ok((0..self.rows).map(|r| dot(self.row(r), z)).collect())
    }

    /// `selfᵀ · g`
    pub fn matvec_t(&self, g: &[f64]) -> Vec<f64> {
        debug_assert_eq!(g.len(), self.rows);
        let mut out = vec![0.0; self.cols];
        for (r, &gr) in g.iter().enumerate() {
            if gr == 0.0 {
                continue;
            }
            for (o, m) in out.iter_mut().zip(self.row(r)) {
                *o += gr * m;
            }
        }
        out
    }

    /// `self += a · bᵀ`
    pub fn add_outer(&mut self, a: &[f64], b: &[f64]) {
        debug_assert_eq!(a.len(), self.rows);
        debug_assert_eq!(b.len(), self.cols);
        let cols = self.cols;
        for (r, &ar) in a.iter().enumerate() {
            if ar == 0.0 {
                continue;
            }
            for (x, bv) in self.data[r * cols..(r + 1) * cols].iter_mut().zip(b) {
                *x += ar * bv;
            }
        }
    }

    pub fn add_col(&mut self, c: usize, g: &[f64]) {
        for (r, v) in g.iter().enumerate() {
            self.data[r * self.cols + c] += v;
        }
    }
}

pub fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

pub fn add_into(acc: &mut [f64], g: &[f64]) {
    for (a, b) in acc.iter_mut().zip(g) {
        *a += b;
    }
}

/// Returns column `index` of a lookup table.
pub fn lookup(table: &Tensor, index: usize) -> Result<Vec<f64>> {
    if index >= table.cols {
        return Err(Error::IndexOutOfRange {
            index,
            len: table.cols,
        });
    }
    Ok(table.col(index))
}

pub fn affine(m: &Tensor, z: &[f64]) -> Result<Vec<f64>> {
    m.matvec(z)
}

pub fn affine_tanh(m: &Tensor, z: &[f64]) -> Result<Vec<f64>> {
    Ok(m.matvec(z)?.into_iter().map(f64::tanh).collect())
}

/// Backward pass of `y = M·z`: accumulates `grad_y · zᵀ` into `grad_m` and
/// returns `Mᵀ · grad_y`.
pub fn affine_backward(m: &Tensor, z: &[f64], grad_y: &[f64], grad_m: &mut Tensor) -> Vec<f64> {
    grad_m.add_outer(grad_y, z);
    m.matvec_t(grad_y)
}

/// Backward pass of `y = tanh(a)` given the forward output `y`.
pub fn tanh_backward(y: &[f64], grad_y: &[f64]) -> Vec<f64> {
    y.iter().zip(grad_y).map(|(y, g)| g * (1.0 - y * y)).collect()
}

/// Zeroes each element independently with probability `p_drop`. No inverted
/// scaling is applied; evaluation uses [`dropout_rescale_eval`] instead.
pub fn dropout_mask<R: Rng>(v: &[f64], p_drop: f64, rng: &mut R) -> (Vec<f64>, Vec<bool>) {
    if p_drop <= 0.0 {
        return (v.to_vec(), vec![true; v.len()]);
    }
    let mask: Vec<bool> = (0..v.len()).map(|_| rng.gen::<f64>() >= p_drop).collect();
    let out = v
        .iter()
        .zip(&mask)
        .map(|(x, &keep)| if keep { *x } else { 0.0 })
        .collect();
    (out, mask)
}

pub fn dropout_backward(grad: &[f64], mask: &[bool]) -> Vec<f64> {
    grad.iter()
        .zip(mask)
        .map(|(g, &keep)| if keep { *g } else { 0.0 })
        .collect()
}

pub fn dropout_rescale_eval(v: &[f64], p_drop: f64) -> Vec<f64> {
    let scale = 1.0 - p_drop;
    v.iter().map(|x| x * scale).collect()
}

/// `param ← param − (base_lr / fan_in) · grad`
pub fn sgd_update(param: &mut [f64], grad: &[f64], base_lr: f64, fan_in: usize) -> Result<()> {
    if param.len() != grad.len() {
        return Err(Error::ShapeMismatch(format!(
            "parameter of length {} with gradient of length {}",
            param.len(),
            grad.len()
        )));
    }
    if fan_in == 0 {
        return Err(Error::InvalidConfig("fan_in must be at least 1".into()));
    }
    let rate = base_lr / fan_in as f64;
    if rate == 0.0 {
        return Ok(());
    }
    for (p, g) in param.iter_mut().zip(grad) {
        *p -= rate * g;
    }
    Ok(())
}

/// Compares `analytic` against central differences of `f` around `x` and
/// returns the largest relative error over all coordinates.
///
/// The relative error of a coordinate is `|a - n| / max(|a|, |n|)`, falling
/// back to the absolute difference when both magnitudes are below `1e-8`.
pub fn grad_check<F>(mut f: F, x: &[f64], analytic: &[f64], eps: f64) -> Result<f64>
where
    F: FnMut(&[f64]) -> f64,
{
    if x.len() != analytic.len() {
        return Err(Error::ShapeMismatch(format!(
            "{} parameters with {} analytic gradients",
            x.len(),
            analytic.len()
        )));
    }
    let mut probe = x.to_vec();
    let mut worst = 0.0f64;
    for i in 0..x.len() {
        probe[i] = x[i] + eps;
        let up = f(&probe);
        probe[i] = x[i] - eps;
        let down = f(&probe);
        probe[i] = x[i];
        if !up.is_finite() || !down.is_finite() {
            return Err(Error::NonFiniteValue(format!("objective at coordinate {i}")));
        }
        let numeric = (up - down) / (2.0 * eps);
        let a = analytic[i];
        if !a.is_finite() {
            return Err(Error::NonFiniteValue(format!("analytic gradient at coordinate {i}")));
        }
        let scale = a.abs().max(numeric.abs());
        let err = if scale < 1e-8 {
            (a - numeric).abs()
        } else {
            (a - numeric).abs() / scale
        };
        worst = worst.max(err);
    }
    Ok(worst)
}

/// Architecture sizes.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct ModelDims {
    /// Word / node representation size.
    pub word_dim: usize,
    /// Tag embedding size.
    pub tag_dim: usize,
    /// Tagger hidden units.
    pub hidden: usize,
    /// Tagger window size (odd).
    pub window: usize,
    /// Largest arity with its own composition matrix.
    pub kmax: usize,
}

impl Default for ModelDims {
    fn default() -> Self {
        ModelDims {
            word_dim: 200,
            tag_dim: 20,
            hidden: 500,
            window: 7,
            kmax: 7,
        }
    }
}

impl ModelDims {
    /// Size of one `(repr ‖ tag embedding)` slot.
    pub fn slot(&self) -> usize {
        self.word_dim + self.tag_dim
    }

    pub fn validate(&self) -> Result<()> {
        if self.word_dim == 0 || self.tag_dim == 0 || self.hidden == 0 || self.kmax == 0 {
            return Err(Error::InvalidConfig("all dimensions must be at least 1".into()));
        }
        if self.window == 0 || self.window % 2 == 0 {
            return Err(Error::InvalidConfig(format!(
                "window size must be odd, got {}",
                self.window
            )));
        }
        Ok(())
    }
}

/// Storage precision of a model file.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Precision {
    F64,
    F32,
}

impl Precision {
    fn flag(self) -> u8 {
        match self {
            Precision::F64 => 64,
            Precision::F32 => 32,
        }
    }

    fn from_flag(flag: u8) -> Result<Self> {
        match flag {
            64 => Ok(Precision::F64),
            32 => Ok(Precision::F32),
            other => Err(Error::MalformedModel(format!("unknown precision flag {other}"))),
        }
    }
}

/// All trainable tensors.
#[derive(Debug, Clone, PartialEq)]
pub struct ModelParams {
    pub dims: ModelDims,
    /// `D × |words|`
    pub words: Tensor,
    /// `T × (|pos| + |labels|)`
    pub tags: Tensor,
    /// `compose[k-1]` is `D × k(D+T)`.
    pub compose: Vec<Tensor>,
    /// `H × K(D+T)`
    pub m1: Tensor,
    /// `|bioes| × H`
    pub m2: Tensor,
    /// `D+T` padding slot.
    pub pad: Vec<f64>,
    /// Dropout rate used in training; evaluation scales lookups by `1 - p_drop`.
    pub p_drop: f64,
}

const MAGIC: &[u8; 8] = b"RNNPARSE";
const FORMAT_VERSION: u32 = 1;

impl ModelParams {
    /// Lookup tables and the padding vector are drawn from `[-0.1, 0.1]`;
    /// matrices from `[-1/√fan_in, 1/√fan_in]`.
    pub fn init<R: Rng>(
        dims: ModelDims,
        num_words: usize,
        num_tag_entries: usize,
        num_bioes: usize,
        rng: &mut R,
    ) -> Result<Self> {
        dims.validate()?;
        let table_bound = 0.1;
        let words = Tensor::uniform(dims.word_dim, num_words, table_bound, rng);
        let tags = Tensor::uniform(dims.tag_dim, num_tag_entries, table_bound, rng);
        let compose = (1..=dims.kmax)
            .map(|k| {
                let fan_in = k * dims.slot();
                Tensor::uniform(dims.word_dim, fan_in, 1.0 / (fan_in as f64).sqrt(), rng)
            })
            .collect();
        let m1_fan_in = dims.window * dims.slot();
        let m1 = Tensor::uniform(dims.hidden, m1_fan_in, 1.0 / (m1_fan_in as f64).sqrt(), rng);
        let m2 = Tensor::uniform(num_bioes, dims.hidden, 1.0 / (dims.hidden as f64).sqrt(), rng);
        let pad = (0..dims.slot())
            .map(|_| rng.gen_range(-table_bound..=table_bound))
            .collect();
        Ok(ModelParams {
            dims,
            words,
            tags,
            compose,
            m1,
            m2,
            pad,
            p_drop: 0.0,
        })
    }

    pub fn num_bioes(&self) -> usize {
        self.m2.rows()
    }

    fn named_tensors(&self) -> Vec<(String, Tensor)> {
        let mut out = vec![
            ("words".to_string(), self.words.clone()),
            ("tags".to_string(), self.tags.clone()),
        ];
        for (i, m) in self.compose.iter().enumerate() {
            out.push((format!("compose.{}", i + 1), m.clone()));
        }
        out.push(("tagger.m1".to_string(), self.m1.clone()));
        out.push(("tagger.m2".to_string(), self.m2.clone()));
        out.push((
            "pad".to_string(),
            Tensor::from_vec(1, self.pad.len(), self.pad.clone()).expect("pad shape"),
        ));
        out
    }

    pub fn write_to<W: Write>(&self, mut w: W, precision: Precision) -> Result<()> {
        w.write_all(MAGIC)?;
        w.write_u32::<LittleEndian>(FORMAT_VERSION)?;
        w.write_u8(precision.flag())?;
        w.write_u32::<LittleEndian>(self.dims.window as u32)?;
        w.write_f64::<LittleEndian>(self.p_drop)?;
        let tensors = self.named_tensors();
        w.write_u32::<LittleEndian>(tensors.len() as u32)?;
        for (name, t) in &tensors {
            w.write_u32::<LittleEndian>(name.len() as u32)?;
            w.write_all(name.as_bytes())?;
            w.write_u64::<LittleEndian>(t.rows() as u64)?;
            w.write_u64::<LittleEndian>(t.cols() as u64)?;
            for &v in t.data() {
                match precision {
                    Precision::F64 => w.write_f64::<LittleEndian>(v)?,
                    Precision::F32 => w.write_f32::<LittleEndian>(v as f32)?,
                }
            }
        }
        w.flush()?;
        Ok(())
    }

    pub fn read_from<R: Read>(mut r: R) -> Result<(Self, Precision)> {
        let mut magic = [0u8; 8];
        r.read_exact(&mut magic)?;
        if &magic != MAGIC {
            return Err(Error::MalformedModel("bad magic".into()));
        }
        let version = r.read_u32::<LittleEndian>()?;
        if version != FORMAT_VERSION {
            return Err(Error::MalformedModel(format!("unsupported version {version}")));
        }
        let precision = Precision::from_flag(r.read_u8()?)?;
        let window = r.read_u32::<LittleEndian>()? as usize;
        let p_drop = r.read_f64::<LittleEndian>()?;
        if !(0.0..1.0).contains(&p_drop) {
            return Err(Error::MalformedModel(format!("dropout rate {p_drop} out of range")));
        }
        let count = r.read_u32::<LittleEndian>()? as usize;
        let mut tensors = Vec::with_capacity(count);
        for _ in 0..count {
            let name_len = r.read_u32::<LittleEndian>()? as usize;
            let mut name = vec![0u8; name_len];
            r.read_exact(&mut name)?;
            let name = String::from_utf8(name)
                .map_err(|_| Error::MalformedModel("tensor name is not UTF-8".into()))?;
            let rows = r.read_u64::<LittleEndian>()? as usize;
            let cols = r.read_u64::<LittleEndian>()? as usize;
            let mut data = Vec::with_capacity(rows * cols);
            for _ in 0..rows * cols {
                let v = match precision {
                    Precision::F64 => r.read_f64::<LittleEndian>()?,
                    Precision::F32 => r.read_f32::<LittleEndian>()? as f64,
                };
                data.push(v);
            }
            tensors.push((name, Tensor::from_vec(rows, cols, data)?));
        }
        Ok((Self::from_named(tensors, window, p_drop)?, precision))
    }

    fn from_named(tensors: Vec<(String, Tensor)>, window: usize, p_drop: f64) -> Result<Self> {
        let mut words = None;
        let mut tags = None;
        let mut compose: Vec<(usize, Tensor)> = Vec::new();
        let mut m1 = None;
        let mut m2 = None;
        let mut pad = None;
        for (name, t) in tensors {
            match name.as_str() {
                "words" => words = Some(t),
                "tags" => tags = Some(t),
                "tagger.m1" => m1 = Some(t),
                "tagger.m2" => m2 = Some(t),
                "pad" => pad = Some(t.data().to_vec()),
                other => {
                    let k = other
                        .strip_prefix("compose.")
                        .and_then(|k| k.parse::<usize>().ok())
                        .ok_or_else(|| Error::MalformedModel(format!("unknown tensor {other}")))?;
                    compose.push((k, t));
                }
            }
        }
        let missing = |n: &str| Error::MalformedModel(format!("missing tensor {n}"));
        let words = words.ok_or_else(|| missing("words"))?;
        let tags = tags.ok_or_else(|| missing("tags"))?;
        let m1 = m1.ok_or_else(|| missing("tagger.m1"))?;
        let m2 = m2.ok_or_else(|| missing("tagger.m2"))?;
        let pad = pad.ok_or_else(|| missing("pad"))?;
        compose.sort_by_key(|(k, _)| *k);
        if compose.iter().enumerate().any(|(i, (k, _))| *k != i + 1) || compose.is_empty() {
            return Err(Error::MalformedModel("composition matrices must cover 1..=Kmax".into()));
        }
        let dims = ModelDims {
            word_dim: words.rows(),
            tag_dim: tags.rows(),
            hidden: m1.rows(),
            window,
            kmax: compose.len(),
        };
        dims.validate()?;
        let params = ModelParams {
            dims,
            words,
            tags,
            compose: compose.into_iter().map(|(_, t)| t).collect(),
            m1,
            m2,
            pad,
            p_drop,
        };
        params.check_shapes()?;
        Ok(params)
    }

    /// Verifies every tensor against `dims`.
    pub fn check_shapes(&self) -> Result<()> {
        let d = self.dims;
        let bad = |what: &str| Err(Error::ShapeMismatch(what.to_string()));
        if self.words.rows() != d.word_dim {
            return bad("word table rows");
        }
        if self.tags.rows() != d.tag_dim {
            return bad("tag table rows");
        }
        if self.compose.len() != d.kmax {
            return bad("number of composition matrices");
        }
        for (i, m) in self.compose.iter().enumerate() {
            if m.shape() != (d.word_dim, (i + 1) * d.slot()) {
                return bad("composition matrix shape");
            }
        }
        if self.m1.shape() != (d.hidden, d.window * d.slot()) {
            return bad("tagger first layer shape");
        }
        if self.m2.cols() != d.hidden {
            return bad("tagger second layer shape");
        }
        if self.pad.len() != d.slot() {
            return bad("padding vector length");
        }
        Ok(())
    }

    pub fn save(&self, path: impl AsRef<Path>, precision: Precision) -> Result<()> {
        let f = File::create(path)?;
        self.write_to(BufWriter::new(f), precision)
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let f = File::open(path)?;
        Ok(Self::read_from(BufReader::new(f))?.0)
    }

    pub fn is_finite(&self) -> bool {
        self.words.is_finite()
            && self.tags.is_finite()
            && self.compose.iter().all(Tensor::is_finite)
            && self.m1.is_finite()
            && self.m2.is_finite()
            && self.pad.iter().all(|x| x.is_finite())
    }
}

/// Gradient accumulators shaped like [`ModelParams`]. Lookup-table
/// gradients are sparse by column.
#[derive(Debug, Clone, PartialEq)]
pub struct ParamGrads {
    pub words: BTreeMap<usize, Vec<f64>>,
    pub tags: BTreeMap<usize, Vec<f64>>,
    pub compose: Vec<Tensor>,
    pub compose_touched: Vec<bool>,
    pub m1: Tensor,
    pub m2: Tensor,
    pub pad: Vec<f64>,
}

impl ParamGrads {
    pub fn zeros(params: &ModelParams) -> Self {
        ParamGrads {
            words: BTreeMap::new(),
            tags: BTreeMap::new(),
            compose: params
                .compose
                .iter()
                .map(|m| Tensor::zeros(m.rows(), m.cols()))
                .collect(),
            compose_touched: vec![false; params.compose.len()],
            m1: Tensor::zeros(params.m1.rows(), params.m1.cols()),
            m2: Tensor::zeros(params.m2.rows(), params.m2.cols()),
            pad: vec![0.0; params.pad.len()],
        }
    }

    pub fn clear(&mut self) {
        self.words.clear();
        self.tags.clear();
        for (m, touched) in self.compose.iter_mut().zip(self.compose_touched.iter_mut()) {
            if *touched {
                m.fill(0.0);
                *touched = false;
            }
        }
        self.m1.fill(0.0);
        self.m2.fill(0.0);
        self.pad.iter_mut().for_each(|x| *x = 0.0);
    }

    pub fn add_word(&mut self, col: usize, g: &[f64]) {
        add_into(
            self.words.entry(col).or_insert_with(|| vec![0.0; g.len()]),
            g,
        );
    }

    pub fn add_tag(&mut self, col: usize, g: &[f64]) {
        add_into(self.tags.entry(col).or_insert_with(|| vec![0.0; g.len()]), g);
    }

    /// Accumulator for composition matrix of arity `k`.
    pub fn compose_mut(&mut self, k: usize) -> &mut Tensor {
        self.compose_touched[k - 1] = true;
        &mut self.compose[k - 1]
    }

    /// One SGD step on every parameter. Matrix layers divide `base_lr` by
    /// their input size; lookup columns and the padding vector use it as is.
    pub fn apply_sgd(&self, params: &mut ModelParams, base_lr: f64) -> Result<()> {
        for (&col, g) in &self.words {
            let mut column = lookup(&params.words, col)?;
            sgd_update(&mut column, g, base_lr, 1)?;
            params.words.set_col(col, &column);
        }
        for (&col, g) in &self.tags {
            let mut column = lookup(&params.tags, col)?;
            sgd_update(&mut column, g, base_lr, 1)?;
            params.tags.set_col(col, &column);
        }
        for (i, g) in self.compose.iter().enumerate() {
            if self.compose_touched[i] {
                let fan_in = params.compose[i].cols();
                sgd_update(params.compose[i].data_mut(), g.data(), base_lr, fan_in)?;
            }
        }
        let m1_fan_in = params.m1.cols();
        sgd_update(params.m1.data_mut(), self.m1.data(), base_lr, m1_fan_in)?;
        let m2_fan_in = params.m2.cols();
        sgd_update(params.m2.data_mut(), self.m2.data(), base_lr, m2_fan_in)?;
        sgd_update(&mut params.pad, &self.pad, base_lr, 1)?;
        Ok(())
    }

    /// Dense gradient in the layout of [`ModelParams::flatten`].
    pub fn flatten(&self, params: &ModelParams) -> Vec<f64> {
        let mut words = Tensor::zeros(params.words.rows(), params.words.cols());
        for (&c, g) in &self.words {
            words.add_col(c, g);
        }
        let mut tags = Tensor::zeros(params.tags.rows(), params.tags.cols());
        for (&c, g) in &self.tags {
            tags.add_col(c, g);
        }
        let mut out = Vec::new();
        out.extend_from_slice(words.data());
        out.extend_from_slice(tags.data());
        for m in &self.compose {
            out.extend_from_slice(m.data());
        }
        out.extend_from_slice(self.m1.data());
        out.extend_from_slice(self.m2.data());
        out.extend_from_slice(&self.pad);
        out
    }
}

impl ModelParams {
    /// Every parameter in one vector: words, tags, compose.1..K, m1, m2, pad.
    pub fn flatten(&self) -> Vec<f64> {
        let mut out = Vec::new();
        out.extend_from_slice(self.words.data());
        out.extend_from_slice(self.tags.data());
        for m in &self.compose {
            out.extend_from_slice(m.data());
        }
        out.extend_from_slice(self.m1.data());
        out.extend_from_slice(self.m2.data());
        out.extend_from_slice(&self.pad);
        out
    }

    /// Inverse of [`ModelParams::flatten`].
    pub fn unflatten(&mut self, flat: &[f64]) {
        let mut rest = flat;
        let mut take = |dst: &mut [f64]| {
            let (head, tail) = rest.split_at(dst.len());
            dst.copy_from_slice(head);
            rest = tail;
        };
        take(self.words.data_mut());
        take(self.tags.data_mut());
        for m in &mut self.compose {
            take(m.data_mut());
        }
        take(self.m1.data_mut());
        take(self.m2.data_mut());
        take(&mut self.pad);
    }
}
