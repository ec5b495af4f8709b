#pragma once

#include <bit>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <string>
#include <vector>

#include <json.hpp>

#include "vitac/adam.hpp"

namespace vitac {

static_assert(std::endian::native == std::endian::little,
              "checkpoint format assumes a little-endian host");

// Parameter checkpoints: one flat little-endian float64 blob plus a JSON
// manifest mapping parameter names to shapes and byte offsets.
//
//   <base>.json   manifest
//   <base>.bin    packed values
inline void save_checkpoint(const ParamStore& store, const std::string& base) {
  nlohmann::json manifest;
  manifest["format"] = "vitac-checkpoint";
  manifest["version"] = 1;
  nlohmann::json entries = nlohmann::json::object();

  std::ofstream bin(base + ".bin", std::ios::binary);
  require(bin.good(), "cannot open '" + base + ".bin' for writing");
  int64_t offset = 0;
  for (const auto& [name, p] : store) {
    entries[name] = {{"shape", p->shape}, {"offset", offset}};
    bin.write(reinterpret_cast<const char*>(p->value.data()),
              static_cast<std::streamsize>(p->value.size() * sizeof(double)));
    offset += static_cast<int64_t>(p->value.size() * sizeof(double));
  }
  manifest["params"] = entries;
  manifest["total_bytes"] = offset;
  bin.close();

  std::ofstream js(base + ".json");
  require(js.good(), "cannot open '" + base + ".json' for writing");
  js << manifest.dump(2) << "\n";
}

// Loads values into an existing store; every store param must be present in
// the checkpoint with a matching shape.
inline void load_checkpoint(ParamStore& store, const std::string& base) {
  std::ifstream js(base + ".json");
  require(js.good(), "cannot open checkpoint manifest '" + base + ".json'");
  nlohmann::json manifest = nlohmann::json::parse(js);
  require(manifest.value("format", "") == "vitac-checkpoint",
          "'" + base + ".json' is not a checkpoint manifest");
  require(manifest.value("version", 0) == 1,
          "unsupported checkpoint version in '" + base + ".json'");

  std::ifstream bin(base + ".bin", std::ios::binary);
  require(bin.good(), "cannot open checkpoint data '" + base + ".bin'");
  const auto& entries = manifest.at("params");
  for (auto& [name, p] : store) {
    require(entries.contains(name),
            "checkpoint '" + base + "' missing param '" + name + "'");
    const auto& e = entries.at(name);
    const Shape shape = e.at("shape").get<Shape>();
    require(shape == p->shape, "checkpoint param '" + name + "' shape " +
                                   shape_str(shape) + " != expected " +
                                   shape_str(p->shape));
    bin.seekg(e.at("offset").get<int64_t>());
    bin.read(reinterpret_cast<char*>(p->value.data()),
             static_cast<std::streamsize>(p->value.size() * sizeof(double)));
    require(bin.good(), "checkpoint '" + base + "': short read for '" + name + "'");
  }
}

}  // namespace vitac
