#pragma once

#include <string>

#include "bunas/model.hpp"
#include "bunas/quant.hpp"

namespace bunas {

/// Little-endian binary checkpoint. Header: 8-byte magic, version, flags,
/// embedded genome text, metadata text (anchors, input size, quant scheme for
/// version 2), record count. Records: kind tag, layer index, dims, raw
/// payload (float64 for version 1; int32/int64 plus (bits, frac_bits) for the
/// quantized version 2). Round trips are bit-exact.
struct LoadedModel {
  Model model;
  NetworkGenome genome;
};

struct LoadedQuantizedModel {
  QuantizedModel model;
  NetworkGenome genome;
};

void save_checkpoint(const Model& m, const NetworkGenome& g, const std::string& path);
LoadedModel load_checkpoint(const std::string& path);

void save_quantized_checkpoint(const QuantizedModel& m, const NetworkGenome& g,
                               const std::string& path);
LoadedQuantizedModel load_quantized_checkpoint(const std::string& path);

/// Peeks at the version field; throws if the file is not a checkpoint.
bool checkpoint_is_quantized(const std::string& path);

}  // namespace bunas
