use std::fs;
use std::path::Path;

use ndarray::{ArrayD, ArrayView1, ArrayView2, ArrayViewMut1, ArrayViewMut2, Ix1, Ix2, IxDyn};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::{ArchKind, HeavyArch, LightArch, NnError, Scalar};

const MAGIC: &[u8; 4] = b"ETDW";
const VERSION: u8 = 1;
/// Architecture sizes travel in the weights file as this pseudo-tensor.
const META: &str = "meta.arch";

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Arch {
    Light(LightArch),
    Heavy(HeavyArch),
}

impl Arch {
    pub fn kind(&self) -> ArchKind {
        match self {
            Arch::Light(_) => ArchKind::Light,
            Arch::Heavy(_) => ArchKind::Heavy,
        }
    }

    pub fn param_shapes(&self) -> Vec<(String, Vec<usize>)> {
        match self {
            Arch::Light(a) => a.param_shapes(),
            Arch::Heavy(a) => a.param_shapes(),
        }
    }

    fn meta(&self) -> Vec<usize> {
        match *self {
            Arch::Light(a) => vec![a.frames_per_step, a.n_mels, a.conv1_channels, a.conv2_channels, a.hidden],
            Arch::Heavy(a) => vec![a.window_frames, a.n_mels, a.hidden, a.layers],
        }
    }

    fn from_meta(kind: ArchKind, meta: &[usize]) -> Result<Arch, NnError> {
        let bad = || NnError::Format(format!("bad {META} for {kind:?}: {meta:?}"));
        match (kind, meta) {
            (ArchKind::Light, &[frames_per_step, n_mels, conv1_channels, conv2_channels, hidden]) => {
                Ok(Arch::Light(LightArch { frames_per_step, n_mels, conv1_channels, conv2_channels, hidden }))
            }
            (ArchKind::Heavy, &[window_frames, n_mels, hidden, layers]) => {
                Ok(Arch::Heavy(HeavyArch { window_frames, n_mels, hidden, layers }))
            }
            _ => Err(bad()),
        }
    }
}

/// Named tensors of one model, in a fixed architecture-defined order.
#[derive(Debug, Clone, PartialEq)]
pub struct Params<T = f32> {
    arch: Arch,
    names: Vec<String>,
    tensors: Vec<ArrayD<T>>,
}

impl<T: Scalar> Params<T> {
    pub fn zeros(arch: Arch) -> Self {
        let (names, tensors) =
            arch.param_shapes().into_iter().map(|(name, shape)| (name, ArrayD::zeros(IxDyn(&shape)))).unzip();
        Self { arch, names, tensors }
    }

    /// Glorot-uniform matrices and zero biases.
    pub fn init(arch: Arch, seed: u64) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut params = Self::zeros(arch);
        for t in &mut params.tensors {
            let shape = t.shape().to_vec();
            if shape.len() < 2 {
                continue;
            }
            // [.., in, out]; leading axes are the receptive field
            let field: usize = shape[..shape.len() - 2].iter().product();
            let fan_in = field * shape[shape.len() - 2];
            let fan_out = field * shape[shape.len() - 1];
            let a = (6.0 / (fan_in + fan_out) as f64).sqrt();
            t.mapv_inplace(|_| T::from_f64(rng.random_range(-a..=a)));
        }
        params
    }

    pub fn zeros_like(&self) -> Self {
        Self::zeros(self.arch)
    }

    pub fn arch(&self) -> Arch {
        self.arch
    }

    pub fn kind(&self) -> ArchKind {
        self.arch.kind()
    }

    pub fn names(&self) -> &[String] {
        &self.names
    }

    pub fn tensors(&self) -> &[ArrayD<T>] {
        &self.tensors
    }

    pub fn tensors_mut(&mut self) -> &mut [ArrayD<T>] {
        &mut self.tensors
    }

    pub fn iter(&self) -> impl Iterator<Item = (&str, &ArrayD<T>)> {
        self.names.iter().map(String::as_str).zip(&self.tensors)
    }

    fn index(&self, name: &str) -> usize {
        self.names.iter().position(|n| n == name).unwrap_or_else(|| panic!("no tensor named {name}"))
    }

    /// Panics on an unknown name; names are fixed by the architecture.
    pub fn get(&self, name: &str) -> &ArrayD<T> {
        &self.tensors[self.index(name)]
    }

    pub fn get_mut(&mut self, name: &str) -> &mut ArrayD<T> {
        let i = self.index(name);
        &mut self.tensors[i]
    }

    pub fn mat(&self, name: &str) -> ArrayView2<'_, T> {
        self.get(name).view().into_dimensionality::<Ix2>().expect("rank-2 tensor")
    }

    pub fn vec(&self, name: &str) -> ArrayView1<'_, T> {
        self.get(name).view().into_dimensionality::<Ix1>().expect("rank-1 tensor")
    }

    pub fn mat_mut(&mut self, name: &str) -> ArrayViewMut2<'_, T> {
        self.get_mut(name).view_mut().into_dimensionality::<Ix2>().expect("rank-2 tensor")
    }

    pub fn vec_mut(&mut self, name: &str) -> ArrayViewMut1<'_, T> {
        self.get_mut(name).view_mut().into_dimensionality::<Ix1>().expect("rank-1 tensor")
    }

    pub fn num_params(&self) -> usize {
        self.tensors.iter().map(|t| t.len()).sum()
    }

    pub fn cast<U: Scalar>(&self) -> Params<U> {
        Params {
            arch: self.arch,
            names: self.names.clone(),
            tensors: self.tensors.iter().map(|t| t.mapv(|v| U::from_f64(v.to_f64()))).collect(),
        }
    }

    pub fn is_finite(&self) -> bool {
        self.tensors.iter().all(|t| t.iter().all(|v| v.is_finite()))
    }

    pub fn expect_kind(&self, kind: ArchKind) -> Result<(), NnError> {
        if self.kind() == kind {
            Ok(())
        } else {
            Err(NnError::WrongArch { expected: kind, found: self.kind() })
        }
    }
}

impl Params<f32> {
    pub fn to_bytes(&self) -> Vec<u8> {
        let mut out = Vec::with_capacity(8 + 4 * self.num_params());
        out.extend_from_slice(MAGIC);
        out.push(VERSION);
        out.push(self.kind().code());
        let meta: Vec<f32> = self.arch.meta().iter().map(|&v| v as f32).collect();
        let meta = ArrayD::from_shape_vec(IxDyn(&[meta.len()]), meta).expect("1-d");
        for (name, t) in std::iter::once((META, &meta)).chain(self.iter()) {
            out.extend_from_slice(&(name.len() as u16).to_le_bytes());
            out.extend_from_slice(name.as_bytes());
            out.push(t.ndim() as u8);
            for &d in t.shape() {
                out.extend_from_slice(&(d as u32).to_le_bytes());
            }
            for &v in t.iter() {
                out.extend_from_slice(&v.to_le_bytes());
            }
        }
        out
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self, NnError> {
        let mut r = Reader { bytes, pos: 0 };
        if r.take(4)? != MAGIC {
            return Err(NnError::Format("bad magic".into()));
        }
        let version = r.take(1)?[0];
        if version != VERSION {
            return Err(NnError::Format(format!("unsupported version {version}")));
        }
        let kind = match r.take(1)?[0] {
            1 => ArchKind::Light,
            2 => ArchKind::Heavy,
            other => return Err(NnError::Format(format!("unknown arch code {other}"))),
        };
        let mut read = Vec::new();
        while r.pos < bytes.len() {
            let len = u16::from_le_bytes(r.array()?) as usize;
            let name = std::str::from_utf8(r.take(len)?)
                .map_err(|_| NnError::Format("tensor name is not UTF-8".into()))?
                .to_string();
            let rank = r.take(1)?[0] as usize;
            let mut dims = Vec::with_capacity(rank);
            for _ in 0..rank {
                dims.push(u32::from_le_bytes(r.array()?) as usize);
            }
            let n: usize = dims.iter().product();
            let values = r.take(n * 4)?.chunks_exact(4).map(|c| f32::from_le_bytes(c.try_into().unwrap())).collect();
            let tensor = ArrayD::from_shape_vec(IxDyn(&dims), values).expect("dims match count");
            read.push((name, tensor));
        }
        let mut read = read.into_iter();
        let (name, meta) = read.next().ok_or_else(|| NnError::Format("no tensors".into()))?;
        if name != META {
            return Err(NnError::Format(format!("first tensor must be {META}, found {name}")));
        }
        let meta: Vec<usize> = meta.iter().map(|&v| v as usize).collect();
        let arch = Arch::from_meta(kind, &meta)?;
        let mut params = Params::zeros(arch);
        for (i, (name, tensor)) in read.enumerate() {
            if i >= params.names.len() || params.names[i] != name || params.tensors[i].shape() != tensor.shape() {
                return Err(NnError::Format(format!("unexpected tensor {name} {:?}", tensor.shape())));
            }
            params.tensors[i] = tensor;
        }
        Ok(params)
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<(), NnError> {
        let path = path.as_ref();
        if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
            fs::create_dir_all(dir).map_err(|source| NnError::Io { path: dir.into(), source })?;
        }
        fs::write(path, self.to_bytes()).map_err(|source| NnError::Io { path: path.into(), source })
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self, NnError> {
        let path = path.as_ref();
        let bytes = fs::read(path).map_err(|source| NnError::Io { path: path.into(), source })?;
        Self::from_bytes(&bytes)
    }
}

struct Reader<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8], NnError> {
        let end = self.pos.checked_add(n).filter(|&e| e <= self.bytes.len()).ok_or_else(|| {
            NnError::Format(format!("truncated at byte {}", self.pos))
        })?;
        let out = &self.bytes[self.pos..end];
        self.pos = end;
        Ok(out)
    }

    fn array<const N: usize>(&mut self) -> Result<[u8; N], NnError> {
        Ok(self.take(N)?.try_into().unwrap())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn tiny() -> Arch {
        Arch::Light(LightArch { frames_per_step: 4, n_mels: 6, conv1_channels: 2, conv2_channels: 3, hidden: 5 })
    }

    #[test]
    fn bytes_round_trip() {
        for arch in [tiny(), Arch::Heavy(HeavyArch { window_frames: 12, n_mels: 4, hidden: 3, layers: 2 })] {
            let p = Params::<f32>::init(arch, 3);
            let back = Params::from_bytes(&p.to_bytes()).unwrap();
            assert_eq!(back, p);
        }
    }

    #[test]
    fn layout_starts_with_header() {
        let bytes = Params::<f32>::zeros(tiny()).to_bytes();
        assert_eq!(&bytes[..6], b"ETDW\x01\x01");
        assert_eq!(u16::from_le_bytes([bytes[6], bytes[7]]) as usize, META.len());
    }

    #[test]
    fn corrupt_files_rejected() {
        let bytes = Params::<f32>::init(tiny(), 1).to_bytes();
        let mut bad = bytes.clone();
        bad[0] = b'X';
        assert!(matches!(Params::from_bytes(&bad), Err(NnError::Format(_))));
        assert!(matches!(Params::from_bytes(&bytes[..bytes.len() - 3]), Err(NnError::Format(_))));
        let mut wrong_kind = bytes.clone();
        wrong_kind[5] = 2;
        assert!(Params::from_bytes(&wrong_kind).is_err());
    }

    #[test]
    fn init_is_bounded_and_seeded() {
        let a = Params::<f32>::init(tiny(), 9);
        assert_eq!(a, Params::init(tiny(), 9));
        assert_ne!(a, Params::init(tiny(), 10));
        for (name, t) in a.iter() {
            if t.ndim() == 1 {
                assert!(t.iter().all(|&v| v == 0.0), "{name}");
            }
        }
        let w = a.mat("gru.w");
        let bound = (6.0 / (w.nrows() + w.ncols()) as f32).sqrt();
        assert!(w.iter().all(|v| v.abs() <= bound));
    }
}
