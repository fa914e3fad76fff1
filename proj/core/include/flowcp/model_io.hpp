#pragma once

#include <cstdint>
#include <string>

#include "flowcp/flow.hpp"
#include "flowcp/mlp.hpp"

namespace flowcp::io {

/// 64-bit FNV-1a over the flow's architecture (dims, masks, subnet shapes,
/// clamp bits). Weights are excluded: the hash identifies the shape a
/// checkpoint must be loaded into.
std::uint64_t flow_config_hash(const flow::FlowParams& flow);

/// Versioned JSON checkpoint. Doubles are serialized with round-trip
/// precision, so save followed by load reproduces the weights bit-exactly.
void save_flow(const flow::FlowParams& flow, const std::string& path);
flow::FlowParams load_flow(const std::string& path);

void save_mlp(const num::MlpParams& net, const std::string& path);
num::MlpParams load_mlp(const std::string& path);

}  // namespace flowcp::io
