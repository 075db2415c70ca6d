#pragma once

#include <cstdint>
#include <filesystem>
#include <map>
#include <string>
#include <vector>

#include "dcmrl/tensor.hpp"

namespace dcmrl {

// Versioned binary checkpoint: magic "DCMK", version, kind tag, config hash,
// named f64 tensors and named scalars. Loading checks kind and hash before
// any parameter is touched.
struct Checkpoint {
  std::string kind;
  std::uint64_t config_hash = 0;
  std::map<std::string, Tensor> tensors;
  std::map<std::string, double> scalars;

  void put(const Parameter& p) { tensors[p.name] = Tensor(p.value.rows(), p.value.cols(), p.value.data); }
  void put(const std::vector<const Parameter*>& ps) {
    for (const Parameter* p : ps) put(*p);
  }
  // Copies stored values into `p`; throws if missing or shaped differently.
  void restore(Parameter& p) const;
  void restore(const std::vector<Parameter*>& ps) const {
    for (Parameter* p : ps) restore(*p);
  }
  double scalar(const std::string& name) const;

  std::vector<std::uint8_t> encode() const;
  static Checkpoint decode(const std::vector<std::uint8_t>& bytes);

  void save(const std::filesystem::path& path) const;
  // Throws Error(precondition) if the file is missing, its kind differs, or
  // its hash differs from expected_hash.
  static Checkpoint load(const std::filesystem::path& path, const std::string& kind, std::uint64_t expected_hash);
};

}  // namespace dcmrl
