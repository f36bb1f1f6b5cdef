#include "gritcap/checkpoint.hpp"

#include <bit>
#include <cstdint>
#include <cstring>

#include "gritcap/error.hpp"
#include "io_util.hpp"

namespace gritcap {

namespace {

constexpr std::string_view kMagic = "GRITTNSR";
constexpr std::uint32_t kVersion = 1;

static_assert(std::endian::native == std::endian::little,
              "tensor files are written in native order; big-endian hosts need byte swaps");

template <typename T>
void put(std::string& out, T value) {
  char buf[sizeof(T)];
  std::memcpy(buf, &value, sizeof(T));
  out.append(buf, sizeof(T));
}

void put_bytes(std::string& out, std::string_view s) {
  put<std::uint64_t>(out, s.size());
  out.append(s);
}

class Reader {
 public:
  explicit Reader(std::string_view bytes) : bytes_(bytes) {}

  template <typename T>
  T get() {
    need(sizeof(T));
    T value;
    std::memcpy(&value, bytes_.data() + pos_, sizeof(T));
    pos_ += sizeof(T);
    return value;
  }

  std::string_view take(std::size_t n) {
    need(n);
    auto s = bytes_.substr(pos_, n);
    pos_ += n;
    return s;
  }

  std::size_t pos() const { return pos_; }
  bool done() const { return pos_ == bytes_.size(); }

 private:
  void need(std::size_t n) const {
    if (n > bytes_.size() - pos_) {
      throw ParseError("tensor file truncated at byte " + std::to_string(pos_), pos_);
    }
  }

  std::string_view bytes_;
  std::size_t pos_ = 0;
};

}  // namespace

const Tensor& TensorFile::at(std::string_view name) const {
  for (const auto& [n, t] : entries) {
    if (n == name) return t;
  }
  throw ValidationError("tensor file has no entry \"" + std::string(name) + "\"");
}

std::string serialize_tensor_file(const TensorFile& file) {
  std::string out;
  out.append(kMagic);
  put<std::uint32_t>(out, kVersion);
  put_bytes(out, file.metadata);
  put<std::uint64_t>(out, file.entries.size());
  for (const auto& [name, tensor] : file.entries) {
    put_bytes(out, name);
    put<std::uint64_t>(out, tensor.rank());
    for (auto d : tensor.shape()) put<std::uint64_t>(out, d);
    for (double v : tensor.values()) put<double>(out, v);
  }
  return out;
}

TensorFile deserialize_tensor_file(std::string_view bytes) {
  Reader in(bytes);
  if (in.take(kMagic.size()) != kMagic) throw ParseError("not a tensor file (bad magic)", 0);
  const auto version = in.get<std::uint32_t>();
  if (version != kVersion) {
    throw ParseError("unsupported tensor file version " + std::to_string(version), in.pos());
  }
  TensorFile file;
  file.metadata = std::string(in.take(in.get<std::uint64_t>()));
  const auto count = in.get<std::uint64_t>();
  for (std::uint64_t e = 0; e < count; ++e) {
    std::string name(in.take(in.get<std::uint64_t>()));
    const auto rank = in.get<std::uint64_t>();
    if (rank > 8) throw ParseError("implausible rank for \"" + name + "\"", in.pos());
    Shape shape(rank);
    for (auto& d : shape) {
      d = in.get<std::uint64_t>();
      if (d == 0) throw ParseError("zero dimension in \"" + name + "\"", in.pos());
    }
    const std::size_t n = shape_numel(shape);
    if (n > (bytes.size() - in.pos()) / sizeof(double)) {
      throw ParseError("tensor file truncated in \"" + name + "\"", in.pos());
    }
    std::vector<double> values(n);
    for (auto& v : values) v = in.get<double>();
    file.entries.emplace_back(std::move(name), Tensor(std::move(shape), std::move(values)));
  }
  if (!in.done()) throw ParseError("trailing bytes after tensor file", in.pos());
  return file;
}

void save_tensor_file(const TensorFile& file, const std::filesystem::path& path) {
  detail::write_file_atomic(path, serialize_tensor_file(file));
}

TensorFile load_tensor_file(const std::filesystem::path& path) {
  const std::string bytes = detail::read_file(path);
  try {
    return deserialize_tensor_file(bytes);
  } catch (const ParseError& e) {
    throw ParseError(path.string() + ": " + e.what(), e.offset());
  }
}

}  // namespace gritcap
