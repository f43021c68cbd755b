#pragma once

// Small models and datasets shared by the unit tests.

#include <memory>
#include <string>
#include <vector>

#include "sasvr/acquisition.hpp"
#include "sasvr/dataio.hpp"
#include "sasvr/network.hpp"
#include "sasvr/random.hpp"

namespace fixture {

inline sasvr::ModelConfig tiny_model(bool attention = true) {
  sasvr::ModelConfig c;
  c.preset = "tiny";
  c.slices = 6;
  c.depth = 12;
  c.height = 16;
  c.width = 16;
  c.stage_widths = {4, 4, 8, 8};
  c.with_attention = attention;
  c.hidden_dim = 8;
  c.heads = 2;
  c.transformer_layers = 1;
  c.ffn_dim = 16;
  c.regressor_width = 8;
  c.regressor_out = 8;
  c.cardinality = 4;
  return c;
}

inline sasvr::SliceProtocol tiny_protocol() { return {6, 12, -1}; }

inline std::vector<sasvr::SamplePair> tiny_pairs(int count, std::uint64_t seed, int subjects = 3) {
  std::vector<std::shared_ptr<const sasvr::Volume>> refs;
  for (int s = 0; s < subjects; ++s) {
    sasvr::Volume v = sasvr::make_phantom({12, 16, 16}, sasvr::derive_seed(seed, 100, static_cast<std::uint64_t>(s)));
    v.subject_id = "s" + std::to_string(s);
    refs.push_back(std::make_shared<const sasvr::Volume>(std::move(v)));
  }
  std::vector<sasvr::SamplePair> pairs;
  for (int i = 0; i < count; ++i) {
    auto p = sasvr::synthesize_pair(refs[static_cast<std::size_t>(i % subjects)],
                                    sasvr::derive_seed(seed, 200, static_cast<std::uint64_t>(i)), {},
                                    tiny_protocol());
    p.pair_id = "p" + std::to_string(i);
    pairs.push_back(std::move(p));
  }
  return pairs;
}

inline std::vector<const sasvr::SamplePair*> pointers(const std::vector<sasvr::SamplePair>& pairs) {
  std::vector<const sasvr::SamplePair*> out;
  for (const auto& p : pairs) out.push_back(&p);
  return out;
}

}  // namespace fixture
