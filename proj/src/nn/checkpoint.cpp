#include "expfuse/nn/checkpoint.hpp"

#include <bit>
#include <cstring>
#include <fstream>

namespace expfuse::nn {
namespace {

constexpr char kMagic[8] = {'E', 'X', 'F', 'C', 'K', 'P', 'T', '1'};

static_assert(std::endian::native == std::endian::little, "checkpoint I/O assumes a little-endian host");

template <class U>
void write_pod(std::ostream& os, U v) {
  os.write(reinterpret_cast<const char*>(&v), sizeof(U));
}

template <class U>
U read_pod(std::istream& is, const std::filesystem::path& path) {
  U v{};
  if (!is.read(reinterpret_cast<char*>(&v), sizeof(U))) throw IoError(IoErrc::kCorruptData, path.string() + ": truncated header");
  return v;
}

}  // namespace

const Tensor<float>& Checkpoint::get(const std::string& name) const {
  auto it = tensors_.find(name);
  if (it == tensors_.end()) throw StateError("checkpoint has no tensor '" + name + "'");
  return it->second;
}

void Checkpoint::put_params(const std::string& ns, const ParamStore<float>& ps) {
  for (const auto& [name, p] : ps) put(ns + "/" + name, p.value);
}

bool Checkpoint::has_namespace(const std::string& ns) const {
  auto it = tensors_.lower_bound(ns + "/");
  return it != tensors_.end() && it->first.rfind(ns + "/", 0) == 0;
}

void Checkpoint::get_params(const std::string& ns, ParamStore<float>& ps) const {
  for (auto& [name, p] : ps) {
    const Tensor<float>& t = get(ns + "/" + name);
    if (t.shape() != p.value.shape())
      throw StateError("checkpoint tensor " + ns + "/" + name + " has shape " + t.shape().str() + ", model expects " +
                       p.value.shape().str());
    p.value = t;
  }
}

void Checkpoint::save(const std::filesystem::path& path) const {
  nlohmann::json header;
  header["meta"] = meta;
  nlohmann::json index = nlohmann::json::array();
  std::uint64_t offset = 0;
  for (const auto& [name, t] : tensors_) {
    const Shape& s = t.shape();
    index.push_back({{"name", name}, {"shape", {s.n, s.c, s.h, s.w}}, {"offset", offset}});
    offset += t.size() * sizeof(float);
  }
  header["tensors"] = index;
  const std::string text = header.dump();

  if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
  std::ofstream os(path, std::ios::binary | std::ios::trunc);
  if (!os) throw IoError(IoErrc::kWriteFailed, path.string());
  os.write(kMagic, sizeof(kMagic));
  write_pod<std::uint32_t>(os, kVersion);
  write_pod<std::uint64_t>(os, text.size());
  os.write(text.data(), static_cast<std::streamsize>(text.size()));
  for (const auto& [_, t] : tensors_)
    os.write(reinterpret_cast<const char*>(t.ptr()), static_cast<std::streamsize>(t.size() * sizeof(float)));
  if (!os) throw IoError(IoErrc::kWriteFailed, path.string());
}

Checkpoint Checkpoint::load(const std::filesystem::path& path) {
  std::ifstream is(path, std::ios::binary);
  if (!is) throw IoError(IoErrc::kFileNotFound, path.string());
  char magic[8];
  if (!is.read(magic, sizeof(magic)) || std::memcmp(magic, kMagic, sizeof(magic)) != 0)
    throw IoError(IoErrc::kUnsupportedFormat, path.string() + " is not a checkpoint");
  const auto version = read_pod<std::uint32_t>(is, path);
  if (version != kVersion)
    throw IoError(IoErrc::kUnsupportedFormat, path.string() + ": checkpoint version " + std::to_string(version));
  const auto len = read_pod<std::uint64_t>(is, path);
  std::string text(len, '\0');
  if (!is.read(text.data(), static_cast<std::streamsize>(len))) throw IoError(IoErrc::kCorruptData, path.string());

  Checkpoint ck;
  nlohmann::json header;
  try {
    header = nlohmann::json::parse(text);
  } catch (const nlohmann::json::exception& e) {
    throw IoError(IoErrc::kCorruptData, path.string() + ": " + e.what());
  }
  ck.meta = header.value("meta", nlohmann::json::object());
  const std::streamoff base = is.tellg();
  for (const auto& entry : header.at("tensors")) {
    const auto dims = entry.at("shape").get<std::vector<int>>();
    if (dims.size() != 4) throw IoError(IoErrc::kCorruptData, path.string() + ": bad tensor shape");
    Tensor<float> t(Shape{dims[0], dims[1], dims[2], dims[3]});
    is.seekg(base + static_cast<std::streamoff>(entry.at("offset").get<std::uint64_t>()));
    if (!is.read(reinterpret_cast<char*>(t.ptr()), static_cast<std::streamsize>(t.size() * sizeof(float))))
      throw IoError(IoErrc::kCorruptData, path.string() + ": truncated tensor " + entry.at("name").get<std::string>());
    ck.tensors_[entry.at("name").get<std::string>()] = std::move(t);
  }
  return ck;
}

}  // namespace expfuse::nn
