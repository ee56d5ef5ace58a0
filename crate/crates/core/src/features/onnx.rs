//! ONNX inference backend (cargo feature `onnx`).
//!
//! The graph is loaded once; a runnable plan is compiled per input
//! resolution and tap set because frames are fed at native size.

use std::collections::HashMap;
use std::sync::Arc;

use ndarray::{Array3, ArrayView3, Axis, Ix4};
use tract_onnx::prelude::*;

use crate::error::{Error, Result};
use crate::features::backbone::{Backbone, BackboneSpec, TensorLayout};

type Plan = Arc<TypedRunnableModel>;

pub struct OnnxBackbone {
    spec: BackboneSpec,
    graph: InferenceModel,
    plans: HashMap<(usize, usize, Vec<String>), Plan>,
}

impl OnnxBackbone {
    pub fn load(spec: BackboneSpec) -> Result<Self> {
        spec.validate()?;
        let path = spec
            .graph_path
            .clone()
            .ok_or_else(|| Error::Backbone("descriptor names no graph file".into()))?;
        let graph = tract_onnx::onnx()
            .model_for_path(&path)
            .map_err(|e| Error::Backbone(format!("{}: {e}", path.display())))?;
        Ok(OnnxBackbone {
            spec,
            graph,
            plans: HashMap::new(),
        })
    }

    fn plan(&mut self, h: usize, w: usize, taps: &[&str]) -> Result<Plan> {
        let key = (h, w, taps.iter().map(|t| t.to_string()).collect::<Vec<_>>());
        if let Some(p) = self.plans.get(&key) {
            return Ok(p.clone());
        }
        let shape: [usize; 4] = match self.spec.layout {
            TensorLayout::Nhwc => [1, h, w, 3],
            TensorLayout::Nchw => [1, 3, h, w],
        };
        let plan = self
            .graph
            .clone()
            .with_input_fact(0, f32::fact(shape).into())
            .and_then(|m| m.with_outputs_by_name(taps.iter()))
            .and_then(|m| m.into_optimized())
            .and_then(|m| m.into_runnable())
            .map_err(|e| Error::Backbone(format!("cannot compile graph for {h}x{w}: {e}")))?;
        self.plans.insert(key, plan.clone());
        Ok(plan)
    }
}

impl Backbone for OnnxBackbone {
    fn spec(&self) -> &BackboneSpec {
        &self.spec
    }

    fn activations(&mut self, input: ArrayView3<'_, f32>, taps: &[&str]) -> Result<Vec<Array3<f32>>> {
        let (h, w, _) = input.dim();
        let plan = self.plan(h, w, taps)?;
        let batch = match self.spec.layout {
            TensorLayout::Nhwc => input.insert_axis(Axis(0)).to_owned(),
            TensorLayout::Nchw => input.permuted_axes([2, 0, 1]).insert_axis(Axis(0)).to_owned(),
        };
        let outputs = plan
            .run(tvec!(batch.into_tensor().into_tvalue()))
            .map_err(|e| Error::Backbone(format!("inference failed: {e}")))?;
        outputs
            .into_iter()
            .zip(taps)
            .map(|(t, name)| {
                let view = t
                    .to_plain_array_view::<f32>()
                    .map_err(|e| Error::Backbone(format!("tap {name:?}: {e}")))?;
                let map = view
                    .into_dimensionality::<Ix4>()
                    .map_err(|_| Error::Backbone(format!("tap {name:?} is not a 4-d activation map")))?
                    .index_axis_move(Axis(0), 0);
                Ok(match self.spec.layout {
                    TensorLayout::Nhwc => map.to_owned(),
                    TensorLayout::Nchw => map.permuted_axes([1, 2, 0]).as_standard_layout().into_owned(),
                })
            })
            .collect()
    }
}
