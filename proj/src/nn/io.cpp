#include "nbhd/nn/io.hpp"

#include <cstring>

#include "nbhd/core/error.hpp"
#include "nbhd/core/rng.hpp"
#include "nbhd/core/table.hpp"

namespace nbhd::nn {

namespace {

constexpr char kMagic[8] = {'N', 'B', 'H', 'D', 'B', 'L', 'O', 'B'};
constexpr std::uint32_t kVersion = 1;

template <typename T>
void put(std::string& out, T v) {
  out.append(reinterpret_cast<const char*>(&v), sizeof v);
}

void put_string(std::string& out, const std::string& s) {
  put<std::uint64_t>(out, s.size());
  out.append(s);
}

class Reader {
 public:
  Reader(const std::string& bytes, std::string source) : b_(bytes), src_(std::move(source)) {}

  template <typename T>
  T get() {
    need(sizeof(T));
    T v;
    std::memcpy(&v, b_.data() + pos_, sizeof v);
    pos_ += sizeof v;
    return v;
  }
  std::string get_string() {
    const auto n = get<std::uint64_t>();
    need(n);
    std::string s = b_.substr(pos_, n);
    pos_ += n;
    return s;
  }
  void get_floats(float* dst, std::size_t n) {
    need(n * sizeof(float));
    std::memcpy(dst, b_.data() + pos_, n * sizeof(float));
    pos_ += n * sizeof(float);
  }
  std::size_t pos() const { return pos_; }

 private:
  void need(std::size_t n) const {
    if (pos_ + n > b_.size()) throw ParseError(src_ + ": truncated file");
  }
  const std::string& b_;
  std::string src_;
  std::size_t pos_ = 0;
};

}  // namespace

const Blob& BlobFile::get(const std::string& name) const {
  for (const auto& b : blobs) {
    if (b.name == name) return b;
  }
  throw MissingArtifactError("array '" + name + "' missing from " + kind + " file");
}

bool BlobFile::has(const std::string& name) const {
  for (const auto& b : blobs) {
    if (b.name == name) return true;
  }
  return false;
}

void save_blob_file(const std::filesystem::path& path, const BlobFile& file) {
  std::string out(kMagic, sizeof kMagic);
  put<std::uint32_t>(out, kVersion);
  put_string(out, file.kind);
  put_string(out, file.meta);
  put<std::uint64_t>(out, file.blobs.size());
  for (const auto& b : file.blobs) {
    std::size_t n = 1;
    for (int d : b.shape) n *= static_cast<std::size_t>(d);
    if (n != b.data.size()) throw InternalError("blob '" + b.name + "' shape does not match data");
    put_string(out, b.name);
    put<std::uint32_t>(out, static_cast<std::uint32_t>(b.shape.size()));
    for (int d : b.shape) put<std::int32_t>(out, d);
    out.append(reinterpret_cast<const char*>(b.data.data()), b.data.size() * sizeof(float));
  }
  put<std::uint64_t>(out, fnv1a64(out));
  write_file_atomic(path, out);
}

BlobFile load_blob_file(const std::filesystem::path& path, const std::string& expected_kind) {
  if (!std::filesystem::exists(path)) {
    throw MissingArtifactError(expected_kind + " file not found: " + path.string());
  }
  const std::string bytes = read_file(path);
  const std::string src = path.string();
  if (bytes.size() < sizeof kMagic + 8 || std::memcmp(bytes.data(), kMagic, sizeof kMagic) != 0) {
    throw ParseError(src + ": not a blob file");
  }
  std::uint64_t stored = 0;
  std::memcpy(&stored, bytes.data() + bytes.size() - 8, 8);
  if (stored != fnv1a64(std::string_view(bytes.data(), bytes.size() - 8))) {
    throw ParseError(src + ": checksum mismatch (file corrupted)");
  }
  Reader r(bytes, src);
  r.get<std::uint64_t>();  // magic
  const auto version = r.get<std::uint32_t>();
  if (version != kVersion) throw ParseError(src + ": unsupported version " + std::to_string(version));
  BlobFile f;
  f.kind = r.get_string();
  if (f.kind != expected_kind) {
    throw InputError(src + ": expected a " + expected_kind + " file, found " + f.kind);
  }
  f.meta = r.get_string();
  const auto count = r.get<std::uint64_t>();
  for (std::uint64_t i = 0; i < count; ++i) {
    Blob b;
    b.name = r.get_string();
    const auto nd = r.get<std::uint32_t>();
    std::size_t n = 1;
    for (std::uint32_t d = 0; d < nd; ++d) {
      b.shape.push_back(r.get<std::int32_t>());
      if (b.shape.back() < 0) throw ParseError(src + ": negative dimension");
      n *= static_cast<std::size_t>(b.shape.back());
    }
    b.data.resize(n);
    r.get_floats(b.data.data(), n);
    f.blobs.push_back(std::move(b));
  }
  return f;
}

Blob to_blob(const Param& p) { return {p.name, p.shape, p.value}; }

void from_blob(const Blob& b, Param& p) {
  if (b.shape != p.shape) {
    std::string want, got;
    for (int d : p.shape) want += std::to_string(d) + " ";
    for (int d : b.shape) got += std::to_string(d) + " ";
    throw InputError("array '" + b.name + "' has shape [" + got + "] but [" + want + "] is required");
  }
  p.value = b.data;
}

}  // namespace nbhd::nn
