#include <bit>
#include <cstring>
#include <fstream>
#include <stdexcept>

#include "cobra/model.hpp"

namespace cobra {

namespace {

constexpr char kMagic[] = "COBRACKPT1";
constexpr std::size_t kMagicSize = sizeof(kMagic) - 1;

void put_u32(std::ostream& os, std::uint32_t v) {
  const char bytes[4] = {static_cast<char>(v & 0xff), static_cast<char>((v >> 8) & 0xff),
                         static_cast<char>((v >> 16) & 0xff), static_cast<char>((v >> 24) & 0xff)};
  os.write(bytes, 4);
}

void put_f64(std::ostream& os, double v) {
  const auto bits = std::bit_cast<std::uint64_t>(v);
  char bytes[8];
  for (int i = 0; i < 8; ++i) bytes[i] = static_cast<char>((bits >> (8 * i)) & 0xff);
  os.write(bytes, 8);
}

class Reader {
 public:
  Reader(std::istream& is, std::string file) : is_(is), file_(std::move(file)) {}

  void read(char* dst, std::size_t n, const char* what) {
    is_.read(dst, static_cast<std::streamsize>(n));
    if (static_cast<std::size_t>(is_.gcount()) != n) {
      throw std::runtime_error("checkpoint " + file_ + ": truncated while reading " + what);
    }
  }
  std::uint32_t u32(const char* what) {
    unsigned char b[4];
    read(reinterpret_cast<char*>(b), 4, what);
    return std::uint32_t{b[0]} | (std::uint32_t{b[1]} << 8) | (std::uint32_t{b[2]} << 16) | (std::uint32_t{b[3]} << 24);
  }
  double f64(const char* what) {
    unsigned char b[8];
    read(reinterpret_cast<char*>(b), 8, what);
    std::uint64_t bits = 0;
    for (int i = 0; i < 8; ++i) bits |= std::uint64_t{b[i]} << (8 * i);
    return std::bit_cast<double>(bits);
  }
  bool at_end() { return is_.peek() == std::char_traits<char>::eof(); }
  const std::string& file() const { return file_; }

 private:
  std::istream& is_;
  std::string file_;
};

}  // namespace

void save_checkpoint(const std::filesystem::path& file, const ModelParams& params) {
  std::ofstream os(file, std::ios::binary | std::ios::trunc);
  if (!os) throw std::runtime_error("cannot open checkpoint for writing: " + file.string());
  os.write(kMagic, kMagicSize);
  put_u32(os, static_cast<std::uint32_t>(params.size()));
  for (const auto& [path, w] : params) {
    put_u32(os, static_cast<std::uint32_t>(path.size()));
    os.write(path.data(), static_cast<std::streamsize>(path.size()));
    put_u32(os, static_cast<std::uint32_t>(w.rank()));
    for (auto d : w.shape()) put_u32(os, static_cast<std::uint32_t>(d));
    for (double v : w.values()) put_f64(os, v);
  }
  if (!os) throw std::runtime_error("failed writing checkpoint " + file.string());
}

ModelParams load_checkpoint(const std::filesystem::path& file) {
  std::ifstream is(file, std::ios::binary);
  if (!is) throw std::runtime_error("cannot open checkpoint: " + file.string());
  Reader in(is, file.string());
  char magic[kMagicSize];
  in.read(magic, kMagicSize, "magic");
  if (std::memcmp(magic, kMagic, kMagicSize) != 0) throw std::runtime_error("checkpoint " + in.file() + ": bad magic");
  const std::uint32_t count = in.u32("tensor count");
  ModelParams params;
  for (std::uint32_t t = 0; t < count; ++t) {
    const std::uint32_t len = in.u32("path length");
    if (len > 4096) throw std::runtime_error("checkpoint " + in.file() + ": implausible path length");
    std::string path(len, '\0');
    in.read(path.data(), len, "path");
    const std::uint32_t rank = in.u32("rank");
    if (rank > 8) throw std::runtime_error("checkpoint " + in.file() + ": implausible rank for '" + path + "'");
    Shape shape(rank);
    for (auto& d : shape) d = in.u32("dims");
    std::vector<double> values(shape_numel(shape));
    for (auto& v : values) v = in.f64("values");
    if (!params.emplace(path, NdArray(std::move(shape), std::move(values))).second) {
      throw std::runtime_error("checkpoint " + in.file() + ": duplicate tensor '" + path + "'");
    }
  }
  if (!in.at_end()) throw std::runtime_error("checkpoint " + in.file() + ": trailing bytes");
  return params;
}

}  // namespace cobra
