#pragma once

#include <array>
#include <cstdint>
#include <filesystem>
#include <map>
#include <memory>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "sasvr/acquisition.hpp"
#include "sasvr/dataio.hpp"

namespace sasvr {

struct DatasetSpec {
  std::string preset = "desk";
  std::array<int, 3> shape{24, 32, 32};  // D, H, W
  double spacing = 2.4;
  // Phantom subjects to synthesize when no reference directory is given.
  int phantom_subjects = 20;
  std::filesystem::path reference_dir;
  SplitRatios ratios;
  SplitCounts counts{64, 16, 20};
  SliceProtocol protocol{6, 24, -1};
  ParamRanges ranges;
  std::uint64_t seed = 7;

  static DatasetSpec desk();
  static DatasetSpec paper();
  static DatasetSpec from_preset(const std::string& name);
  void validate() const;
};

void to_json(nlohmann::json& j, const DatasetSpec& s);
void from_json(const nlohmann::json& j, DatasetSpec& s);

struct DatasetBundle {
  DatasetSpec spec;
  SplitManifest split;
  std::map<std::string, std::shared_ptr<const Volume>> references;
  Dataset pairs;

  const std::vector<SamplePair>& split_pairs(const std::string& name) const;
};

// Loads (reference_dir) or synthesizes (phantoms) subjects, preprocesses them
// to the spec shape, splits by subject and synthesizes the pairs.
DatasetBundle generate_dataset(const DatasetSpec& spec);

// dataset.json, summary.csv, references/<id>.nii, manifests/<split>.jsonl,
// stacks/<pair_id>.nii (a K-plane volume per pair).
void save_dataset(const DatasetBundle& bundle, const std::filesystem::path& directory);

// Reads a saved dataset. With `verify`, every pair is regenerated from its
// manifest entry and compared bit-exactly against the stored stack.
DatasetBundle load_dataset(const std::filesystem::path& directory, bool verify = false);

void to_json(nlohmann::json& j, const ManifestEntry& e);
void from_json(const nlohmann::json& j, ManifestEntry& e);

}  // namespace sasvr
