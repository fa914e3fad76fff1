#include "flowcp/model_io.hpp"

#include <fstream>

#include <nlohmann/json.hpp>

#include "flowcp/errors.hpp"

namespace flowcp::io {

namespace {

using nlohmann::json;

constexpr int kFlowVersion = 1;
constexpr int kMlpVersion = 1;

void fnv_mix(std::uint64_t& h, std::uint64_t value) {
  for (int i = 0; i < 8; ++i) {
    h ^= (value >> (8 * i)) & 0xFFu;
    h *= 0x100000001B3ull;
  }
}

json mlp_to_json(const num::MlpParams& net) {
  json layers = json::array();
  for (const auto& l : net.layers) {
    layers.push_back({{"rows", l.weight.rows()},
                      {"cols", l.weight.cols()},
                      {"weight", l.weight.data()},
                      {"bias", l.bias}});
  }
  return layers;
}

num::MlpParams mlp_from_json(const json& j) {
  num::MlpParams net;
  for (const auto& jl : j) {
    num::MlpLayer layer;
    const auto rows = jl.at("rows").get<std::size_t>();
    const auto cols = jl.at("cols").get<std::size_t>();
    layer.weight = num::Tensor2(rows, cols, jl.at("weight").get<std::vector<double>>());
    layer.bias = jl.at("bias").get<std::vector<double>>();
    if (layer.bias.size() != rows) throw IoError("mlp checkpoint: bias length mismatch");
    net.layers.push_back(std::move(layer));
  }
  return net;
}

json read_json_file(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw IoError("cannot open " + path);
  json j;
  try {
    in >> j;
  } catch (const json::parse_error& e) {
    throw IoError("cannot parse " + path + ": " + e.what());
  }
  return j;
}

void write_json_file(const json& j, const std::string& path) {
  std::ofstream out(path);
  if (!out) throw IoError("cannot open " + path + " for writing");
  out << j.dump(2) << "\n";
  if (!out) throw IoError("write failed: " + path);
}

}  // namespace

std::uint64_t flow_config_hash(const flow::FlowParams& flow) {
  std::uint64_t h = 0xcbf29ce484222325ull;
  fnv_mix(h, flow.joint_dim);
  fnv_mix(h, flow.cond_dim);
  fnv_mix(h, flow.layers.size());
  for (const auto& layer : flow.layers) {
    for (auto b : layer.mask) fnv_mix(h, b);
    std::uint64_t clamp_bits;
    static_assert(sizeof(clamp_bits) == sizeof(layer.scale_clamp));
    std::memcpy(&clamp_bits, &layer.scale_clamp, sizeof(clamp_bits));
    fnv_mix(h, clamp_bits);
    for (const auto* net : {&layer.scale_net, &layer.shift_net}) {
      fnv_mix(h, net->layers.size());
      for (const auto& l : net->layers) {
        fnv_mix(h, l.weight.rows());
        fnv_mix(h, l.weight.cols());
      }
    }
  }
  return h;
}

void save_flow(const flow::FlowParams& flow, const std::string& path) {
  json j;
  j["format"] = "flowcp-flow";
  j["version"] = kFlowVersion;
  j["config_hash"] = flow_config_hash(flow);
  j["joint_dim"] = flow.joint_dim;
  j["cond_dim"] = flow.cond_dim;
  json layers = json::array();
  for (const auto& layer : flow.layers) {
    layers.push_back({{"mask", layer.mask},
                      {"scale_clamp", layer.scale_clamp},
                      {"scale_net", mlp_to_json(layer.scale_net)},
                      {"shift_net", mlp_to_json(layer.shift_net)}});
  }
  j["layers"] = std::move(layers);
  write_json_file(j, path);
}

flow::FlowParams load_flow(const std::string& path) {
  const json j = read_json_file(path);
  if (j.value("format", "") != "flowcp-flow") throw IoError(path + ": not a flow checkpoint");
  if (j.value("version", 0) != kFlowVersion) throw IoError(path + ": unsupported version");

  flow::FlowParams flow;
  flow.joint_dim = j.at("joint_dim").get<std::size_t>();
  flow.cond_dim = j.at("cond_dim").get<std::size_t>();
  for (const auto& jl : j.at("layers")) {
    flow::CouplingLayer layer;
    layer.mask = jl.at("mask").get<std::vector<std::uint8_t>>();
    layer.scale_clamp = jl.at("scale_clamp").get<double>();
    layer.scale_net = mlp_from_json(jl.at("scale_net"));
    layer.shift_net = mlp_from_json(jl.at("shift_net"));
    flow.layers.push_back(std::move(layer));
  }
  const auto stored_hash = j.at("config_hash").get<std::uint64_t>();
  if (stored_hash != flow_config_hash(flow)) {
    throw IoError(path + ": config hash mismatch (architecture changed?)");
  }
  return flow;
}

void save_mlp(const num::MlpParams& net, const std::string& path) {
  json j;
  j["format"] = "flowcp-mlp";
  j["version"] = kMlpVersion;
  j["layers"] = mlp_to_json(net);
  write_json_file(j, path);
}

num::MlpParams load_mlp(const std::string& path) {
  const json j = read_json_file(path);
  if (j.value("format", "") != "flowcp-mlp") throw IoError(path + ": not an mlp checkpoint");
  if (j.value("version", 0) != kMlpVersion) throw IoError(path + ": unsupported version");
  return mlp_from_json(j.at("layers"));
}

}  // namespace flowcp::io
