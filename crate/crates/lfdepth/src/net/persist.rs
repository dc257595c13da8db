//! Conversion between networks and the `MLDN` weight file records.
//!
//! The file stores kinds, shapes and parameter data; strides, paddings and
//! reshape targets come from the architecture builder, so loading validates
//! the file against a freshly built network of the expected geometry.

use std::path::Path;

use crate::io::weights::{
    read_weights, write_weights, RawLayerRecord, KIND_BATCHNORM, KIND_CONV, KIND_FULLY_CONNECTED,
    KIND_RELU, KIND_TRANSPOSED_CONV,
};
use crate::io::FormatError;

use super::layer::Layer;
use super::network::{microlens_depth_network, Network};
use super::NetError;

pub fn network_to_records(net: &Network<f32>) -> Vec<RawLayerRecord> {
    net.layers()
        .iter()
        .map(|layer| match layer {
            Layer::Conv { spec, weight, bias } => RawLayerRecord {
                kind: KIND_CONV,
                dims: vec![
                    spec.out_channels as u32,
                    spec.in_channels as u32,
                    spec.kernel as u32,
                    spec.kernel as u32,
                ],
                arrays: vec![weight.clone(), bias.clone()],
            },
            Layer::BatchNorm { channels, gamma, beta, running_mean, running_var } => {
                RawLayerRecord {
                    kind: KIND_BATCHNORM,
                    dims: vec![*channels as u32],
                    arrays: vec![
                        gamma.clone(),
                        beta.clone(),
                        running_mean.clone(),
                        running_var.clone(),
                    ],
                }
            }
            Layer::Relu => RawLayerRecord { kind: KIND_RELU, dims: vec![], arrays: vec![] },
            Layer::FullyConnected { spec, weight, bias } => RawLayerRecord {
                kind: KIND_FULLY_CONNECTED,
                dims: vec![spec.out_features as u32, spec.in_features as u32],
                arrays: vec![weight.clone(), bias.clone()],
            },
            Layer::TransposedConv { spec, weight, bias } => RawLayerRecord {
                kind: KIND_TRANSPOSED_CONV,
                dims: vec![
                    spec.in_channels as u32,
                    spec.out_channels as u32,
                    spec.kernel as u32,
                    spec.kernel as u32,
                ],
                arrays: vec![weight.clone(), bias.clone()],
            },
        })
        .collect()
}

/// Fills `template` with the parameters of `records`, validating that every
/// layer kind and shape matches.
pub fn records_to_network(
    records: &[RawLayerRecord],
    mut template: Network<f32>,
) -> Result<Network<f32>, NetError> {
    let expected = network_to_records(&template);
    if expected.len() != records.len() {
        return Err(NetError::WeightMismatch {
            detail: format!("file has {} layers, architecture has {}", records.len(), expected.len()),
        });
    }
    for (i, (exp, got)) in expected.iter().zip(records).enumerate() {
        if exp.kind != got.kind || exp.dims != got.dims {
            return Err(NetError::WeightMismatch {
                detail: format!(
                    "layer {i}: expected kind {} dims {:?}, file has kind {} dims {:?}",
                    exp.kind, exp.dims, got.kind, got.dims
                ),
            });
        }
    }
    for (layer, rec) in template.layers_mut().iter_mut().zip(records) {
        let mut arrays = rec.arrays.iter();
        match layer {
            Layer::Conv { weight, bias, .. }
            | Layer::FullyConnected { weight, bias, .. }
            | Layer::TransposedConv { weight, bias, .. } => {
                weight.copy_from_slice(arrays.next().unwrap());
                bias.copy_from_slice(arrays.next().unwrap());
            }
            Layer::BatchNorm { gamma, beta, running_mean, running_var, .. } => {
                gamma.copy_from_slice(arrays.next().unwrap());
                beta.copy_from_slice(arrays.next().unwrap());
                running_mean.copy_from_slice(arrays.next().unwrap());
                running_var.copy_from_slice(arrays.next().unwrap());
            }
            Layer::Relu => {}
        }
    }
    Ok(template)
}

pub fn save_weights(net: &Network<f32>, path: &Path) -> Result<(), FormatError> {
    write_weights(path, &network_to_records(net))
}

/// Loads a weight file into the canonical architecture for `crop_size`.
pub fn load_weights(path: &Path, crop_size: usize) -> Result<Network<f32>, FormatError> {
    let records = read_weights(path)?;
    let template = microlens_depth_network::<f32>(crop_size, 0)
        .map_err(|e| FormatError::malformed(path, e.to_string()))?;
    records_to_network(&records, template).map_err(|e| FormatError::malformed(path, e.to_string()))
}
