#pragma once

#include <filesystem>
#include <map>
#include <string>

#include "expfuse/nn/graph.hpp"
#include "json.hpp"

namespace expfuse::nn {

// Versioned binary container:
//   "EXFCKPT1" | u32 version | u64 header_len | JSON header | raw float32 blobs
// The JSON header carries free-form metadata plus an index of tensor names,
// shapes and byte offsets. Blobs are stored little-endian, bit for bit.
class Checkpoint {
 public:
  static constexpr std::uint32_t kVersion = 1;

  nlohmann::json meta = nlohmann::json::object();

  void put(const std::string& name, const Tensor<float>& t) { tensors_[name] = t; }
  bool has(const std::string& name) const { return tensors_.count(name) != 0; }
  const Tensor<float>& get(const std::string& name) const;
  const std::map<std::string, Tensor<float>>& tensors() const { return tensors_; }

  // Stores every parameter as "<ns>/<name>".
  void put_params(const std::string& ns, const ParamStore<float>& ps);
  bool has_namespace(const std::string& ns) const;
  // Fills every parameter of `ps` from "<ns>/<name>"; missing or misshapen entries throw.
  void get_params(const std::string& ns, ParamStore<float>& ps) const;

  void save(const std::filesystem::path& path) const;
  static Checkpoint load(const std::filesystem::path& path);

 private:
  std::map<std::string, Tensor<float>> tensors_;
};

}  // namespace expfuse::nn
