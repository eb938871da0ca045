//! Named flat parameter tensors and gradients over them.

use thiserror::Error;

use crate::math::Real;
use crate::scene::SceneModel;

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct ParamRegistry {
    pub names: Vec<String>,
    pub sizes: Vec<usize>,
}

#[derive(Debug, Error, PartialEq, Eq)]
pub enum GradError {
    #[error("gradient registries differ: {0}")]
    RegistryMismatch(String),
    #[error("shape mismatch: expected {expected} values, got {actual}")]
    ShapeMismatch { expected: usize, actual: usize },
}

#[derive(Clone, Debug, PartialEq)]
pub struct Gradients<R> {
    pub registry: ParamRegistry,
    pub tensors: Vec<Vec<R>>,
}

impl<R: Real> Gradients<R> {
    pub fn zeros(registry: &ParamRegistry) -> Self {
        Self {
            tensors: registry.sizes.iter().map(|&n| vec![R::zero(); n]).collect(),
            registry: registry.clone(),
        }
    }

    pub fn get(&self, name: &str) -> Option<&[R]> {
        self.registry.names.iter().position(|n| n == name).map(|i| self.tensors[i].as_slice())
    }

    pub fn is_finite(&self) -> bool {
        self.tensors.iter().flatten().all(|v| v.is_finite())
    }

    pub fn max_abs(&self) -> R {
        self.tensors.iter().flatten().fold(R::zero(), |m, v| m.max(v.abs()))
    }

    pub fn scale(&mut self, s: R) {
        self.tensors.iter_mut().flatten().for_each(|v| *v = *v * s);
    }

    /// `self += s * other`.
    pub fn add_scaled(&mut self, other: &Gradients<R>, s: R) -> Result<(), GradError> {
        if self.registry != other.registry {
            return Err(GradError::RegistryMismatch(format!(
                "{:?} vs {:?}",
                self.registry.names, other.registry.names
            )));
        }
        for (a, b) in self.tensors.iter_mut().zip(&other.tensors) {
            for (x, y) in a.iter_mut().zip(b) {
                *x += s * *y;
            }
        }
        Ok(())
    }

    pub fn flatten(&self) -> Vec<R> {
        self.tensors.iter().flatten().copied().collect()
    }
}

impl<R: Real> SceneModel<R> {
    /// Node fields in layout order, then the density and color calibrators.
    pub fn registry(&self) -> ParamRegistry {
        let mut names: Vec<String> = self.node_ids.iter().map(|id| format!("node/{id}")).collect();
        names.push("composition/density".into());
        names.push("composition/color".into());
        ParamRegistry { names, sizes: self.tensors().iter().map(|t| t.len()).collect() }
    }

    pub fn tensors(&self) -> Vec<&[R]> {
        let mut out: Vec<&[R]> = self.nodes.iter().map(|n| n.params.as_slice()).collect();
        out.push(&self.composition.density);
        out.push(&self.composition.color);
        out
    }

    pub fn tensors_mut(&mut self) -> Vec<&mut Vec<R>> {
        let mut out: Vec<&mut Vec<R>> = self.nodes.iter_mut().map(|n| &mut n.params).collect();
        out.push(&mut self.composition.density);
        out.push(&mut self.composition.color);
        out
    }

    pub fn flat_params(&self) -> Vec<R> {
        self.tensors().into_iter().flatten().copied().collect()
    }
}
