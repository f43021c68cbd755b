#include "sasvr/dataset_store.hpp"

#include <algorithm>
#include <fstream>
#include <set>
#include <sstream>

#include <fmt/format.h>

#include "sasvr/error.hpp"
#include "sasvr/evaluation.hpp"
#include "sasvr/random.hpp"

namespace sasvr {

namespace fs = std::filesystem;
using nlohmann::json;

DatasetSpec DatasetSpec::desk() { return DatasetSpec{}; }

DatasetSpec DatasetSpec::paper() {
  DatasetSpec s;
  s.preset = "paper";
  s.shape = {70, 100, 100};
  s.phantom_subjects = 138;
  s.counts = {2000, 500, 200};
  s.protocol = {6, 60, -1};
  return s;
}

DatasetSpec DatasetSpec::from_preset(const std::string& name) {
  if (name == "desk") return desk();
  if (name == "paper") return paper();
  throw InvalidArgument("unknown preset '" + name + "' (expected desk or paper)");
}

void DatasetSpec::validate() const {
  for (int d : shape) {
    if (d < 8) throw InvalidArgument("dataset dimensions must be >= 8");
  }
  if (!(spacing > 0.0)) throw InvalidArgument("spacing must be positive");
  if (reference_dir.empty() && phantom_subjects < 3) {
    throw InvalidArgument("need at least 3 phantom subjects");
  }
  if (counts.train < 0 || counts.val < 0 || counts.test < 0) {
    throw InvalidArgument("pair counts must be >= 0");
  }
  protocol.validate();
  if (protocol.total_slices > shape[0]) {
    throw InvalidArgument("total slices exceed the volume depth");
  }
  ranges.validate();
}

void to_json(json& j, const DatasetSpec& s) {
  j = json{{"preset", s.preset},
           {"shape", s.shape},
           {"spacing", s.spacing},
           {"phantom_subjects", s.phantom_subjects},
           {"reference_dir", s.reference_dir.string()},
           {"ratios", {{"train", s.ratios.train}, {"test", s.ratios.test}, {"val", s.ratios.val}}},
           {"counts", {{"train", s.counts.train}, {"val", s.counts.val}, {"test", s.counts.test}}},
           {"protocol",
            {{"slices_per_shot", s.protocol.slices_per_shot},
             {"total_slices", s.protocol.total_slices},
             {"shot", s.protocol.shot}}},
           {"ranges",
            {{"alpha_x", s.ranges.alpha_x},
             {"alpha_y", s.ranges.alpha_y},
             {"alpha_z", s.ranges.alpha_z},
             {"t_x", s.ranges.t_x},
             {"t_y", s.ranges.t_y},
             {"t_z", s.ranges.t_z}}},
           {"seed", s.seed}};
}

void from_json(const json& j, DatasetSpec& s) {
  j.at("preset").get_to(s.preset);
  j.at("shape").get_to(s.shape);
  j.at("spacing").get_to(s.spacing);
  j.at("phantom_subjects").get_to(s.phantom_subjects);
  s.reference_dir = j.at("reference_dir").get<std::string>();
  const auto& r = j.at("ratios");
  s.ratios = {r.at("train").get<double>(), r.at("test").get<double>(), r.at("val").get<double>()};
  const auto& c = j.at("counts");
  s.counts = {c.at("train").get<int>(), c.at("val").get<int>(), c.at("test").get<int>()};
  const auto& p = j.at("protocol");
  s.protocol = {p.at("slices_per_shot").get<int>(), p.at("total_slices").get<int>(),
                p.at("shot").get<int>()};
  const auto& a = j.at("ranges");
  s.ranges = {a.at("alpha_x").get<double>(), a.at("alpha_y").get<double>(),
              a.at("alpha_z").get<double>(), a.at("t_x").get<double>(),
              a.at("t_y").get<double>(),     a.at("t_z").get<double>()};
  j.at("seed").get_to(s.seed);
}

void to_json(json& j, const ManifestEntry& e) {
  j = json{{"pair_id", e.pair_id},
           {"split", e.split},
           {"reference_id", e.reference_id},
           {"seed", e.seed},
           {"shot", e.shot},
           {"params_deg_mm", e.params.to_array()},
           {"slice_indices", e.slice_indices},
           {"d_init_mm", e.d_init}};
}

void from_json(const json& j, ManifestEntry& e) {
  j.at("pair_id").get_to(e.pair_id);
  j.at("split").get_to(e.split);
  j.at("reference_id").get_to(e.reference_id);
  j.at("seed").get_to(e.seed);
  j.at("shot").get_to(e.shot);
  const auto p = j.at("params_deg_mm").get<std::array<double, 6>>();
  e.params = RigidParams::from_array(p);
  j.at("slice_indices").get_to(e.slice_indices);
  j.at("d_init_mm").get_to(e.d_init);
}

const std::vector<SamplePair>& DatasetBundle::split_pairs(const std::string& name) const {
  if (name == "train") return pairs.train;
  if (name == "val") return pairs.val;
  if (name == "test") return pairs.test;
  throw InvalidArgument("unknown split '" + name + "'");
}

namespace {

const char* const kSplits[3] = {"train", "val", "test"};

std::vector<SamplePair>& split_vector(Dataset& ds, int s) {
  return s == 0 ? ds.train : s == 1 ? ds.val : ds.test;
}

const std::vector<SamplePair>& split_vector(const Dataset& ds, int s) {
  return s == 0 ? ds.train : s == 1 ? ds.val : ds.test;
}

const std::vector<std::string>& split_ids(const SplitManifest& m, int s) {
  return s == 0 ? m.train : s == 1 ? m.val : m.test;
}

std::vector<std::shared_ptr<const Volume>> lookup(
    const std::map<std::string, std::shared_ptr<const Volume>>& refs,
    const std::vector<std::string>& ids) {
  std::vector<std::shared_ptr<const Volume>> out;
  for (const auto& id : ids) out.push_back(refs.at(id));
  return out;
}

void write_text(const fs::path& path, const std::string& text) {
  std::ofstream f(path, std::ios::binary);
  f << text;
  if (!f) throw IoError(IoError::Kind::WriteFailed, "cannot write " + path.string());
}

std::string read_text(const fs::path& path) {
  std::ifstream f(path, std::ios::binary);
  if (!f) throw IoError(IoError::Kind::MissingFile, "cannot open " + path.string());
  return std::string(std::istreambuf_iterator<char>(f), std::istreambuf_iterator<char>());
}

json parse_json(const std::string& text, const fs::path& path) {
  try {
    return json::parse(text);
  } catch (const json::exception& e) {
    throw IoError(IoError::Kind::MalformedHeader, path.string() + ": " + e.what());
  }
}

bool is_volume_file(const fs::path& p) {
  const auto ext = p.extension().string();
  return ext == ".nii" || ext == ".svrv";
}

}  // namespace

DatasetBundle generate_dataset(const DatasetSpec& spec) {
  spec.validate();
  DatasetBundle b;
  b.spec = spec;
  std::vector<std::string> ids;
  if (!spec.reference_dir.empty()) {
    if (!fs::is_directory(spec.reference_dir)) {
      throw IoError(IoError::Kind::MissingFile,
                    "reference directory not found: " + spec.reference_dir.string());
    }
    std::vector<fs::path> files;
    for (const auto& e : fs::directory_iterator(spec.reference_dir)) {
      if (e.is_regular_file() && is_volume_file(e.path())) files.push_back(e.path());
    }
    std::sort(files.begin(), files.end());
    if (files.empty()) {
      throw IoError(IoError::Kind::MissingFile,
                    "no .nii or .svrv volumes in " + spec.reference_dir.string());
    }
    for (const auto& f : files) {
      Volume v = preprocess(load_volume(f), spec.shape);
      v.subject_id = f.stem().string();
      v.geometry.spacing = spec.spacing;
      ids.push_back(v.subject_id);
      b.references[ids.back()] = std::make_shared<const Volume>(std::move(v));
    }
  } else {
    for (int s = 0; s < spec.phantom_subjects; ++s) {
      Volume v = make_phantom(spec.shape, derive_seed(spec.seed, 0x5B, static_cast<std::uint64_t>(s)),
                              spec.spacing);
      v.subject_id = fmt::format("phantom-{:03d}", s);
      ids.push_back(v.subject_id);
      b.references[ids.back()] = std::make_shared<const Volume>(std::move(v));
    }
  }
  b.split = split_subjects(ids, spec.ratios, spec.seed);
  const SplitReferences refs{lookup(b.references, b.split.train), lookup(b.references, b.split.val),
                             lookup(b.references, b.split.test)};
  b.pairs = build_dataset(refs, spec.counts, spec.seed, spec.ranges, spec.protocol);
  return b;
}

void save_dataset(const DatasetBundle& b, const fs::path& dir) {
  fs::create_directories(dir / "references");
  fs::create_directories(dir / "manifests");
  fs::create_directories(dir / "stacks");

  json meta;
  meta["format"] = 1;
  meta["spec"] = b.spec;
  json subjects;
  for (int s = 0; s < 3; ++s) subjects[kSplits[s]] = split_ids(b.split, s);
  meta["subjects"] = subjects;
  meta["split_warnings"] = b.split.warnings;
  write_text(dir / "dataset.json", meta.dump(2) + "\n");

  for (const auto& [id, vol] : b.references) save_nifti(*vol, dir / "references" / (id + ".nii"));

  std::string summary = "split,pairs,D_init_mean_mm,D_init_std_mm\n";
  for (int s = 0; s < 3; ++s) {
    std::string lines;
    std::vector<double> d;
    for (const auto& p : split_vector(b.pairs, s)) {
      lines += json(manifest_entry(p, kSplits[s])).dump() + "\n";
      d.push_back(p.d_init);
      Volume stack(VolumeGeometry{{p.stack.slices, p.stack.height, p.stack.width},
                                  p.stack.geometry.spacing, Vec3::Zero()});
      stack.data = p.stack.data;
      stack.subject_id = p.reference_id;
      save_nifti(stack, dir / "stacks" / (p.pair_id + ".nii"));
    }
    write_text(dir / "manifests" / (std::string(kSplits[s]) + ".jsonl"), lines);
    const auto ms = mean_std(d);
    summary += fmt::format("{},{},{:.10g},{:.10g}\n", kSplits[s], d.size(), ms.mean, ms.std);
  }
  write_text(dir / "summary.csv", summary);
}

DatasetBundle load_dataset(const fs::path& dir, bool verify) {
  if (!fs::is_directory(dir)) {
    throw IoError(IoError::Kind::MissingFile, "dataset directory not found: " + dir.string());
  }
  const json meta = parse_json(read_text(dir / "dataset.json"), dir / "dataset.json");
  DatasetBundle b;
  b.spec = meta.at("spec").get<DatasetSpec>();
  const auto& subjects = meta.at("subjects");
  b.split.train = subjects.at("train").get<std::vector<std::string>>();
  b.split.val = subjects.at("val").get<std::vector<std::string>>();
  b.split.test = subjects.at("test").get<std::vector<std::string>>();
  b.split.seed = b.spec.seed;
  b.split.ratios = b.spec.ratios;

  for (int s = 0; s < 3; ++s) {
    for (const auto& id : split_ids(b.split, s)) {
      Volume v = load_volume(dir / "references" / (id + ".nii"));
      v.subject_id = id;
      b.references[id] = std::make_shared<const Volume>(std::move(v));
    }
  }
  for (int s = 0; s < 3; ++s) {
    const fs::path mpath = dir / "manifests" / (std::string(kSplits[s]) + ".jsonl");
    std::istringstream lines(read_text(mpath));
    std::string line;
    std::set<std::string> allowed(split_ids(b.split, s).begin(), split_ids(b.split, s).end());
    auto& out = split_vector(b.pairs, s);
    while (std::getline(lines, line)) {
      if (line.empty()) continue;
      const auto e = parse_json(line, mpath).get<ManifestEntry>();
      if (!allowed.count(e.reference_id)) {
        throw InvalidArgument("pair " + e.pair_id + " uses a reference outside its split");
      }
      const auto ref = b.references.at(e.reference_id);
      SamplePair p;
      p.pair_id = e.pair_id;
      p.reference_id = e.reference_id;
      p.seed = e.seed;
      p.shot = e.shot;
      p.params = e.params;
      p.d_init = e.d_init;
      p.reference = ref;
      const Volume sv = load_volume(dir / "stacks" / (e.pair_id + ".nii"));
      p.stack.slices = sv.geometry.depth();
      p.stack.height = sv.geometry.height();
      p.stack.width = sv.geometry.width();
      p.stack.data = sv.data;
      p.stack.indices = e.slice_indices;
      p.stack.geometry = ref->geometry;
      if (verify) {
        const SamplePair r = regenerate_pair(e, ref, b.spec.protocol);
        if (r.stack.data != p.stack.data || r.stack.indices != p.stack.indices ||
            r.d_init != p.d_init) {
          throw NumericError("pair " + e.pair_id + " does not match its regeneration");
        }
      }
      out.push_back(std::move(p));
    }
  }
  return b;
}

}  // namespace sasvr
