#pragma once

#include <bit>
#include <cstdint>
#include <cstring>
#include <filesystem>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "cfusion/io.hpp"
#include "cfusion/nn/net.hpp"

namespace cfusion::nn {

inline constexpr std::string_view kNetFormat = "cfusion-net/1";

inline nlohmann::json to_json(const LayerSpec& s) {
  nlohmann::json j{{"kind", std::string(to_string(s.kind))}, {"name", s.name}};
  switch (s.kind) {
    case LayerKind::Input:
      j["shape"] = s.shape;
      break;
    case LayerKind::Conv1D:
    case LayerKind::Conv2D:
      j["filters"] = s.units;
      j["kernel_size"] = s.kernel;
      j["padding"] = s.padding == Padding::Same ? "same" : "valid";
      j["activation"] = s.relu ? "relu" : "linear";
      j["l2"] = s.l2;
      break;
    case LayerKind::Dense:
      j["units"] = s.units;
      j["activation"] = s.relu ? "relu" : "linear";
      j["l1"] = s.l1;
      j["l2"] = s.l2;
      break;
    case LayerKind::MaxPool1D:
    case LayerKind::MaxPool2D:
      j["pool_size"] = s.pool;
      break;
    case LayerKind::Dropout:
      j["rate"] = s.rate;
      break;
    case LayerKind::MultiHeadAttention:
      j["num_heads"] = s.heads;
      j["key_dim"] = s.key_dim;
      break;
    default:
      break;
  }
  return j;
}

inline LayerSpec layer_spec_from_json(const nlohmann::json& j) {
  LayerSpec s{layer_kind_from_string(j.at("kind").get<std::string>())};
  s.name = j.at("name").get<std::string>();
  s.shape = j.value("shape", Shape{});
  s.units = j.value("filters", j.value("units", 0));
  s.kernel = j.value("kernel_size", 0);
  s.padding = j.value("padding", std::string("same")) == "valid" ? Padding::Valid : Padding::Same;
  s.relu = j.value("activation", std::string("linear")) == "relu";
  s.pool = j.value("pool_size", 2);
  s.rate = j.value("rate", 0.0);
  s.heads = j.value("num_heads", 0);
  s.key_dim = j.value("key_dim", 0);
  s.l1 = j.value("l1", 0.0);
  s.l2 = j.value("l2", 0.0);
  return s;
}

// Architecture manifest: layer list with hyperparameters, wiring and
// parameter counts. Contains no weights.
inline nlohmann::json architecture_json(const Net& net) {
  nlohmann::json layers = nlohmann::json::array();
  for (const auto& n : net.nodes()) {
    auto j = to_json(n.spec);
    std::vector<std::string> in;
    for (int i : n.inputs) in.push_back(net.node(i).spec.name);
    j["inputs"] = in;
    j["output_shape"] = n.out_shape;
    j["frozen"] = n.frozen;
    std::size_t count = 0;
    for (int p : n.params) count += net.params()[static_cast<std::size_t>(p)].value.size();
    j["params"] = count;
    layers.push_back(std::move(j));
  }
  return {{"format", std::string(kNetFormat)},
          {"seed", net.seed()},
          {"output", net.node(net.output()).spec.name},
          {"layers", std::move(layers)},
          {"total_params", net.param_count()},
          {"trainable_params", net.param_count(true)}};
}

// Writes `<stem>.json` (architecture plus a parameter table) and `<stem>.bin`,
// which holds every parameter as consecutive little-endian float32 values at
// the offsets listed in the table.
inline void save_net(const Net& net, const std::filesystem::path& stem) {
  auto manifest = architecture_json(net);
  nlohmann::json table = nlohmann::json::array();
  std::string blob;
  for (const auto& p : net.params()) {
    table.push_back({{"name", p.name}, {"shape", p.shape}, {"offset", blob.size()}, {"count", p.value.size()}});
    for (double v : p.value) {
      const auto bits = std::bit_cast<std::uint32_t>(static_cast<float>(v));
      for (int b = 0; b < 4; ++b) blob.push_back(static_cast<char>((bits >> (8 * b)) & 0xff));
    }
  }
  manifest["parameters"] = std::move(table);
  manifest["blob"] = stem.filename().string() + ".bin";
  auto json_path = stem, bin_path = stem;
  json_path += ".json";
  bin_path += ".bin";
  io::write_file(json_path, manifest.dump(2) + "\n");
  io::write_file(bin_path, blob);
}

inline Net load_net(const std::filesystem::path& stem) {
  auto json_path = stem, bin_path = stem;
  json_path += ".json";
  bin_path += ".bin";
  const auto manifest = nlohmann::json::parse(io::read_file(json_path));
  if (manifest.at("format") != kNetFormat) throw InvalidInput("unsupported weight format in " + json_path.string());
  Net net(manifest.at("seed").get<std::uint64_t>());
  for (const auto& j : manifest.at("layers")) {
    std::vector<int> in;
    for (const auto& name : j.at("inputs")) in.push_back(net.find(name.get<std::string>()));
    const int id = net.add(layer_spec_from_json(j), in);
    if (j.value("frozen", false)) net.freeze(id);
  }
  net.set_output(net.find(manifest.at("output").get<std::string>()));
  const std::string blob = io::read_file(bin_path);
  const auto& table = manifest.at("parameters");
  if (table.size() != net.params().size()) throw InvalidInput("parameter table does not match architecture");
  for (std::size_t i = 0; i < table.size(); ++i) {
    auto& p = net.params()[i];
    const auto offset = table[i].at("offset").get<std::size_t>();
    if (table[i].at("name") != p.name || table[i].at("count").get<std::size_t>() != p.value.size())
      throw InvalidInput("parameter '" + p.name + "' does not match the stored table");
    if (offset + 4 * p.value.size() > blob.size()) throw InvalidInput("weight blob is truncated");
    for (std::size_t k = 0; k < p.value.size(); ++k) {
      std::uint32_t bits = 0;
      for (int b = 0; b < 4; ++b)
        bits |= static_cast<std::uint32_t>(static_cast<unsigned char>(blob[offset + 4 * k + static_cast<std::size_t>(b)]))
                << (8 * b);
      p.value[k] = static_cast<double>(std::bit_cast<float>(bits));
    }
  }
  return net;
}

}  // namespace cfusion::nn
