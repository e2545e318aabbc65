//! Binary checkpoints: an 8-byte magic, a little-endian u64 manifest length,
//! the JSON manifest, then every tensor as little-endian f64 in manifest
//! order. Nothing time-dependent is stored, so identical models produce
//! identical bytes.

use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::models::{
    Complexity, EnsembleSpec, EnsembleTeacher, Mlp, MultiHeadNet, MultiHeadSpec, Predictor, Task,
};
use crate::nn::{Matrix, ParamStore};

const MAGIC: &[u8; 8] = b"HYDRAKD1";

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ModelKind {
    Teacher,
    Student,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct TensorEntry {
    pub name: String,
    pub rows: usize,
    pub cols: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Manifest {
    pub kind: ModelKind,
    pub task: Task,
    pub param_count: usize,
    pub flop_count: usize,
    pub seeds: Vec<u64>,
    #[serde(skip_serializing_if = "Option::is_none", default)]
    pub teacher: Option<EnsembleSpec>,
    #[serde(skip_serializing_if = "Option::is_none", default)]
    pub student: Option<MultiHeadSpec>,
    /// Teachers routed to each head during distillation.
    #[serde(skip_serializing_if = "Option::is_none", default)]
    pub teachers_per_head: Option<Vec<usize>>,
    pub tensors: Vec<TensorEntry>,
}

/// A loaded model of either kind.
#[derive(Debug, Clone)]
pub enum Model {
    Teacher(EnsembleTeacher),
    Student(MultiHeadNet),
}

impl Model {
    pub fn kind(&self) -> ModelKind {
        match self {
            Model::Teacher(_) => ModelKind::Teacher,
            Model::Student(_) => ModelKind::Student,
        }
    }
}

impl Complexity for Model {
    fn param_count(&self) -> usize {
        match self {
            Model::Teacher(t) => t.param_count(),
            Model::Student(s) => s.param_count(),
        }
    }

    fn flop_count(&self) -> usize {
        match self {
            Model::Teacher(t) => t.flop_count(),
            Model::Student(s) => s.flop_count(),
        }
    }
}

impl Predictor for Model {
    fn task(&self) -> Task {
        match self {
            Model::Teacher(t) => t.task(),
            Model::Student(s) => s.task(),
        }
    }

    fn input_width(&self) -> usize {
        match self {
            Model::Teacher(t) => t.input_width(),
            Model::Student(s) => s.input_width(),
        }
    }

    fn member_count(&self) -> usize {
        match self {
            Model::Teacher(t) => t.member_count(),
            Model::Student(s) => s.member_count(),
        }
    }

    fn raw_outputs(&self, x: &Matrix) -> Result<Vec<Matrix>> {
        match self {
            Model::Teacher(t) => t.raw_outputs(x),
            Model::Student(s) => s.raw_outputs(x),
        }
    }
}

fn entries<'a>(prefix: &str, store: &'a ParamStore) -> impl Iterator<Item = TensorEntry> + 'a {
    let prefix = prefix.to_string();
    store.ids().map(move |id| {
        let (rows, cols) = store.value(id).shape();
        TensorEntry {
            name: format!("{prefix}{}", store.name(id)),
            rows,
            cols,
        }
    })
}

fn member_prefix(n: usize) -> String {
    format!("member{n:02}.")
}

fn encode(manifest: &Manifest, stores: &[&ParamStore]) -> Result<Vec<u8>> {
    let json = serde_json::to_vec(manifest).map_err(|e| Error::Checkpoint(e.to_string()))?;
    let scalars: usize = stores.iter().map(|s| s.scalar_count()).sum();
    let mut bytes = Vec::with_capacity(16 + json.len() + 8 * scalars);
    bytes.extend_from_slice(MAGIC);
    bytes.extend_from_slice(&(json.len() as u64).to_le_bytes());
    bytes.extend_from_slice(&json);
    for store in stores {
        for id in store.ids() {
            for v in store.value(id).as_slice() {
                bytes.extend_from_slice(&v.to_le_bytes());
            }
        }
    }
    Ok(bytes)
}

pub fn teacher_manifest(teacher: &EnsembleTeacher) -> Manifest {
    Manifest {
        kind: ModelKind::Teacher,
        task: teacher.task(),
        param_count: teacher.param_count(),
        flop_count: teacher.flop_count(),
        seeds: teacher.seeds().to_vec(),
        teacher: Some(teacher.ensemble_spec()),
        student: None,
        teachers_per_head: None,
        tensors: teacher
            .members()
            .iter()
            .enumerate()
            .flat_map(|(n, m)| entries(&member_prefix(n), m.store()).collect::<Vec<_>>())
            .collect(),
    }
}

pub fn student_manifest(
    student: &MultiHeadNet,
    seed: u64,
    teachers_per_head: Vec<usize>,
) -> Manifest {
    Manifest {
        kind: ModelKind::Student,
        task: student.task(),
        param_count: student.param_count(),
        flop_count: student.flop_count(),
        seeds: vec![seed],
        teacher: None,
        student: Some(student.spec().clone()),
        teachers_per_head: Some(teachers_per_head),
        tensors: entries("", student.store()).collect(),
    }
}

pub fn encode_teacher(teacher: &EnsembleTeacher) -> Result<Vec<u8>> {
    let stores: Vec<&ParamStore> = teacher.members().iter().map(Mlp::store).collect();
    encode(&teacher_manifest(teacher), &stores)
}

pub fn encode_student(
    student: &MultiHeadNet,
    seed: u64,
    teachers_per_head: Vec<usize>,
) -> Result<Vec<u8>> {
    encode(
        &student_manifest(student, seed, teachers_per_head),
        &[student.store()],
    )
}

pub fn save_teacher(path: &Path, teacher: &EnsembleTeacher) -> Result<()> {
    let bytes = encode_teacher(teacher)?;
    fs::write(path, bytes).map_err(|e| Error::io(path, e))
}

pub fn save_student(
    path: &Path,
    student: &MultiHeadNet,
    seed: u64,
    teachers_per_head: Vec<usize>,
) -> Result<()> {
    let bytes = encode_student(student, seed, teachers_per_head)?;
    fs::write(path, bytes).map_err(|e| Error::io(path, e))
}

struct Reader<'a> {
    data: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        let end = self.pos.checked_add(n).filter(|&e| e <= self.data.len());
        let end = end.ok_or_else(|| Error::Checkpoint("checkpoint is truncated".into()))?;
        let out = &self.data[self.pos..end];
        self.pos = end;
        Ok(out)
    }

    fn fill(
        &mut self,
        store: &mut ParamStore,
        prefix: &str,
        expected: &mut std::slice::Iter<'_, TensorEntry>,
    ) -> Result<()> {
        let ids: Vec<_> = store.ids().collect();
        for id in ids {
            let entry = expected
                .next()
                .ok_or_else(|| Error::Checkpoint("manifest lists too few tensors".into()))?;
            let name = format!("{prefix}{}", store.name(id));
            let shape = store.value(id).shape();
            if entry.name != name || (entry.rows, entry.cols) != shape {
                return Err(Error::Checkpoint(format!(
                    "tensor `{}` ({}×{}) does not match `{name}` ({}×{})",
                    entry.name, entry.rows, entry.cols, shape.0, shape.1
                )));
            }
            let raw = self.take(8 * entry.rows * entry.cols)?;
            let values = store.value_mut(id).as_mut_slice();
            for (v, chunk) in values.iter_mut().zip(raw.chunks_exact(8)) {
                *v = f64::from_le_bytes(chunk.try_into().expect("8-byte chunk"));
            }
        }
        Ok(())
    }
}

pub fn decode(bytes: &[u8]) -> Result<(Manifest, Model)> {
    let mut r = Reader {
        data: bytes,
        pos: 0,
    };
    if r.take(8)? != MAGIC {
        return Err(Error::Checkpoint("not a checkpoint file".into()));
    }
    let len = u64::from_le_bytes(r.take(8)?.try_into().expect("8 bytes"));
    let len = usize::try_from(len).map_err(|_| Error::Checkpoint("manifest too large".into()))?;
    let manifest: Manifest = serde_json::from_slice(r.take(len)?)
        .map_err(|e| Error::Checkpoint(format!("bad manifest: {e}")))?;
    let mut expected = manifest.tensors.iter();
    let model = match manifest.kind {
        ModelKind::Teacher => {
            let spec = manifest.teacher.clone().ok_or_else(|| {
                Error::Checkpoint("teacher manifest lacks its architecture".into())
            })?;
            if manifest.seeds.len() != spec.members {
                return Err(Error::Checkpoint("one seed per member expected".into()));
            }
            let mut members = Vec::with_capacity(spec.members);
            for n in 0..spec.members {
                let mut m = Mlp::new(spec.member.clone(), 0).map_err(as_checkpoint)?;
                r.fill(m.store_mut(), &member_prefix(n), &mut expected)?;
                members.push(m);
            }
            Model::Teacher(EnsembleTeacher::from_members(
                spec.member,
                members,
                manifest.seeds.clone(),
            )?)
        }
        ModelKind::Student => {
            let spec = manifest.student.clone().ok_or_else(|| {
                Error::Checkpoint("student manifest lacks its architecture".into())
            })?;
            let mut s = MultiHeadNet::new(spec, 0).map_err(as_checkpoint)?;
            r.fill(s.store_mut(), "", &mut expected)?;
            Model::Student(s)
        }
    };
    if expected.next().is_some() || r.pos != bytes.len() {
        return Err(Error::Checkpoint("checkpoint has trailing data".into()));
    }
    if model.param_count() != manifest.param_count || model.task() != manifest.task {
        return Err(Error::Checkpoint(
            "manifest totals disagree with the stored model".into(),
        ));
    }
    Ok((manifest, model))
}

fn as_checkpoint(e: Error) -> Error {
    Error::Checkpoint(e.to_string())
}

pub fn load(path: &Path) -> Result<(Manifest, Model)> {
    let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
    decode(&bytes)
}
