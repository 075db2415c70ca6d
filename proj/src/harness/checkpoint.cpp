#include "dcmrl/checkpoint.hpp"

#include <cstring>
#include <fstream>
#include <iterator>
#include <sstream>

#include "dcmrl/error.hpp"

namespace dcmrl {

namespace {

constexpr char kMagic[4] = {'D', 'C', 'M', 'K'};
constexpr std::uint32_t kVersion = 1;

template <class T>
void put_raw(std::vector<std::uint8_t>& out, T v) {
  unsigned char b[sizeof(T)];
  std::memcpy(b, &v, sizeof(T));
  out.insert(out.end(), b, b + sizeof(T));
}

void put_string(std::vector<std::uint8_t>& out, const std::string& s) {
  put_raw<std::uint32_t>(out, std::uint32_t(s.size()));
  out.insert(out.end(), s.begin(), s.end());
}

struct Reader {
  const std::vector<std::uint8_t>& bytes;
  std::size_t pos = 0;

  template <class T>
  T raw() {
    if (pos + sizeof(T) > bytes.size()) fail(ErrorKind::io, "checkpoint: truncated file");
    T v;
    std::memcpy(&v, bytes.data() + pos, sizeof(T));
    pos += sizeof(T);
    return v;
  }
  std::string str() {
    const auto n = raw<std::uint32_t>();
    if (pos + n > bytes.size()) fail(ErrorKind::io, "checkpoint: truncated string");
    std::string s(bytes.begin() + std::ptrdiff_t(pos), bytes.begin() + std::ptrdiff_t(pos + n));
    pos += n;
    return s;
  }
};

std::string hex(std::uint64_t h) {
  std::ostringstream os;
  os << std::hex << h;
  return os.str();
}

}  // namespace

void Checkpoint::restore(Parameter& p) const {
  auto it = tensors.find(p.name);
  if (it == tensors.end()) fail(ErrorKind::precondition, "checkpoint '" + kind + "' has no tensor " + p.name);
  if (it->second.shape != p.value.shape) {
    fail(ErrorKind::precondition, "checkpoint tensor " + p.name + " has shape " + it->second.shape_str() +
                                      ", expected " + p.value.shape_str());
  }
  p.value.data = it->second.data;
  p.value.zero_grad();
}

double Checkpoint::scalar(const std::string& name) const {
  auto it = scalars.find(name);
  if (it == scalars.end()) fail(ErrorKind::precondition, "checkpoint '" + kind + "' has no scalar " + name);
  return it->second;
}

std::vector<std::uint8_t> Checkpoint::encode() const {
  std::vector<std::uint8_t> out(std::begin(kMagic), std::end(kMagic));
  put_raw(out, kVersion);
  put_string(out, kind);
  put_raw(out, config_hash);
  put_raw<std::uint32_t>(out, std::uint32_t(tensors.size()));
  for (const auto& [name, t] : tensors) {
    put_string(out, name);
    put_raw<std::uint64_t>(out, t.rows());
    put_raw<std::uint64_t>(out, t.cols());
    for (double v : t.data) put_raw(out, v);
  }
  put_raw<std::uint32_t>(out, std::uint32_t(scalars.size()));
  for (const auto& [name, v] : scalars) {
    put_string(out, name);
    put_raw(out, v);
  }
  return out;
}

Checkpoint Checkpoint::decode(const std::vector<std::uint8_t>& bytes) {
  if (bytes.size() < 4 || !std::equal(std::begin(kMagic), std::end(kMagic), bytes.begin())) {
    fail(ErrorKind::io, "checkpoint: bad magic");
  }
  Reader in{bytes, 4};
  const auto version = in.raw<std::uint32_t>();
  if (version != kVersion) fail(ErrorKind::io, "checkpoint: unsupported version " + std::to_string(version));
  Checkpoint ck;
  ck.kind = in.str();
  ck.config_hash = in.raw<std::uint64_t>();
  const auto n = in.raw<std::uint32_t>();
  for (std::uint32_t i = 0; i < n; ++i) {
    std::string name = in.str();
    const auto r = in.raw<std::uint64_t>();
    const auto c = in.raw<std::uint64_t>();
    Tensor t(r, c);
    for (double& v : t.data) v = in.raw<double>();
    ck.tensors.emplace(std::move(name), std::move(t));
  }
  const auto ns = in.raw<std::uint32_t>();
  for (std::uint32_t i = 0; i < ns; ++i) {
    std::string name = in.str();
    ck.scalars[name] = in.raw<double>();
  }
  return ck;
}

void Checkpoint::save(const std::filesystem::path& path) const {
  if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
  const std::vector<std::uint8_t> bytes = encode();
  std::ofstream out(path, std::ios::binary);
  if (!out) fail(ErrorKind::io, "checkpoint: cannot write " + path.string());
  out.write(reinterpret_cast<const char*>(bytes.data()), std::streamsize(bytes.size()));
}

Checkpoint Checkpoint::load(const std::filesystem::path& path, const std::string& kind, std::uint64_t expected_hash) {
  std::ifstream in(path, std::ios::binary);
  if (!in) fail(ErrorKind::precondition, "missing checkpoint " + path.string());
  std::vector<std::uint8_t> bytes((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
  Checkpoint ck = decode(bytes);
  if (ck.kind != kind) {
    fail(ErrorKind::precondition, "checkpoint " + path.string() + " is '" + ck.kind + "', expected '" + kind + "'");
  }
  if (ck.config_hash != expected_hash) {
    fail(ErrorKind::precondition, "config hash mismatch for " + path.string() + ": file " + hex(ck.config_hash) +
                                      ", expected " + hex(expected_hash));
  }
  return ck;
}

}  // namespace dcmrl
