#pragma once

#include <string>

#include "rislab/adam.hpp"
#include "rislab/hgnn.hpp"

namespace rislab {

/**
 * Binary model checkpoint (magic "HGNN", version 1, little-endian): kind,
 * architecture block, calibration scalars (eta, input_scale, rate_scale,
 * pmax_dbm), completed epoch count, named parameter tensors with shape
 * headers, and optionally the optimizer moments for exact resume.
 */
void save_model(const Model& model, const std::string& path,
                const AdamState* adam = nullptr);

/**
 * Loads a checkpoint.  When `adam` is non-null and the file carries optimizer
 * state, the moments and step count are restored into it.
 */
Model load_model(const std::string& path, AdamState* adam = nullptr);

}  // namespace rislab
