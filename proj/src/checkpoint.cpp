#include "sasvr/checkpoint.hpp"

#include <cstring>
#include <fstream>
#include <iterator>
#include <map>

#include "sasvr/error.hpp"

namespace sasvr {

namespace {

constexpr char kMagic[8] = {'S', 'A', 'S', 'V', 'R', 'C', 'K', '1'};
constexpr std::uint32_t kVersion = 1;

void put_u32(std::string& out, std::uint32_t v) {
  for (int i = 0; i < 4; ++i) out.push_back(static_cast<char>((v >> (8 * i)) & 0xFF));
}

class Reader {
 public:
  Reader(const std::vector<unsigned char>& bytes, const std::filesystem::path& path)
      : bytes_(bytes), path_(path) {}

  const unsigned char* take(std::size_t n) {
    if (pos_ + n > bytes_.size()) {
      throw IoError(IoError::Kind::MalformedHeader, "truncated checkpoint: " + path_.string());
    }
    const unsigned char* p = bytes_.data() + pos_;
    pos_ += n;
    return p;
  }
  std::uint32_t u32() {
    const auto* p = take(4);
    return std::uint32_t{p[0]} | std::uint32_t{p[1]} << 8 | std::uint32_t{p[2]} << 16 |
           std::uint32_t{p[3]} << 24;
  }
  std::string str(std::size_t n) {
    const auto* p = take(n);
    return std::string(reinterpret_cast<const char*>(p), n);
  }

 private:
  const std::vector<unsigned char>& bytes_;
  const std::filesystem::path& path_;
  std::size_t pos_ = 0;
};

std::vector<std::pair<std::string, nn::Tensor<float>*>> state_tensors(SaSvrNet<float>& model) {
  std::vector<std::pair<std::string, nn::Tensor<float>*>> out;
  for (auto& [name, p] : model.parameters().params) out.emplace_back(name, &p->value);
  for (auto& [name, b] : model.parameters().buffers) out.emplace_back(name, b);
  return out;
}

}  // namespace

void save_checkpoint(SaSvrNet<float>& model, const nlohmann::json& metadata,
                     const std::filesystem::path& path) {
  nlohmann::json header;
  header["config"] = model.config();
  header["seed"] = model.seed();
  header["metadata"] = metadata;
  const std::string text = header.dump();

  std::string out(kMagic, sizeof(kMagic));
  put_u32(out, kVersion);
  put_u32(out, static_cast<std::uint32_t>(text.size()));
  out += text;
  const auto tensors = state_tensors(model);
  put_u32(out, static_cast<std::uint32_t>(tensors.size()));
  for (const auto& [name, t] : tensors) {
    put_u32(out, static_cast<std::uint32_t>(name.size()));
    out += name;
    put_u32(out, static_cast<std::uint32_t>(t->rank()));
    for (int d : t->shape()) put_u32(out, static_cast<std::uint32_t>(d));
    for (float v : t->values()) {
      std::uint32_t bits;
      std::memcpy(&bits, &v, 4);
      put_u32(out, bits);
    }
  }
  if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
  std::ofstream f(path, std::ios::binary);
  f.write(out.data(), static_cast<std::streamsize>(out.size()));
  if (!f) throw IoError(IoError::Kind::WriteFailed, "cannot write " + path.string());
}

std::unique_ptr<SaSvrNet<float>> load_checkpoint(const std::filesystem::path& path,
                                                 Checkpoint* info) {
  std::ifstream f(path, std::ios::binary);
  if (!f) throw IoError(IoError::Kind::MissingFile, "cannot open " + path.string());
  const std::vector<unsigned char> bytes((std::istreambuf_iterator<char>(f)),
                                         std::istreambuf_iterator<char>());
  Reader r(bytes, path);
  if (std::memcmp(r.take(8), kMagic, 8) != 0) {
    throw IoError(IoError::Kind::MalformedHeader, "not a checkpoint: " + path.string());
  }
  if (const auto v = r.u32(); v != kVersion) {
    throw IoError(IoError::Kind::UnsupportedDatatype,
                  "unsupported checkpoint version " + std::to_string(v));
  }
  nlohmann::json header;
  try {
    header = nlohmann::json::parse(r.str(r.u32()));
  } catch (const nlohmann::json::exception& e) {
    throw IoError(IoError::Kind::MalformedHeader, std::string("bad checkpoint header: ") + e.what());
  }
  Checkpoint ck;
  ck.config = header.at("config").get<ModelConfig>();
  ck.seed = header.at("seed").get<std::uint64_t>();
  ck.metadata = header.value("metadata", nlohmann::json::object());
  auto model = std::make_unique<SaSvrNet<float>>(ck.config, ck.seed);

  std::map<std::string, nn::Tensor<float>*> slots;
  for (auto& [name, t] : state_tensors(*model)) slots[name] = t;
  const std::uint32_t count = r.u32();
  if (count != slots.size()) {
    throw InvalidArgument("checkpoint holds " + std::to_string(count) + " tensors, model has " +
                          std::to_string(slots.size()));
  }
  for (std::uint32_t i = 0; i < count; ++i) {
    const std::string name = r.str(r.u32());
    std::vector<int> shape(r.u32());
    for (auto& d : shape) d = static_cast<int>(r.u32());
    const auto it = slots.find(name);
    if (it == slots.end()) throw InvalidArgument("unexpected tensor in checkpoint: " + name);
    if (it->second->shape() != shape) {
      throw InvalidArgument("shape mismatch for " + name + ": " + nn::shape_string(shape) +
                            " vs " + nn::shape_string(it->second->shape()));
    }
    for (auto& v : it->second->values()) {
      const std::uint32_t bits = r.u32();
      std::memcpy(&v, &bits, 4);
    }
  }
  if (info) *info = ck;
  return model;
}

}  // namespace sasvr
