#pragma once

// Named-array checkpoints for the context norm layers and whole models.
// Binary files round-trip bit-exactly; JSON stores 17 significant digits.

#include <string>
#include <utility>
#include <vector>

#include "cnorm/context_norm.hpp"
#include "cnorm/model.hpp"
#include "cnorm/tensor.hpp"

namespace cnorm {

using NamedArrays = std::vector<std::pair<std::string, Tensor>>;

NamedArrays to_arrays(const CnState& s);
NamedArrays to_arrays(const CnxParams& p);
NamedArrays to_arrays(const AcnParams& p);

/// Overwrites the named fields; every field the layer owns must be present
/// with the layer's current shape.
void from_arrays(const NamedArrays& a, CnState& s);
void from_arrays(const NamedArrays& a, CnxParams& p);
void from_arrays(const NamedArrays& a, AcnParams& p);

/// Every trainable tensor and buffer, prefixed with the layer index.
NamedArrays model_arrays(Model& m);
void load_model_arrays(Model& m, const NamedArrays& a);

void write_checkpoint_binary(const std::string& path, const NamedArrays& a);
NamedArrays read_checkpoint_binary(const std::string& path);
void write_checkpoint_json(const std::string& path, const NamedArrays& a);
NamedArrays read_checkpoint_json(const std::string& path);

}  // namespace cnorm
