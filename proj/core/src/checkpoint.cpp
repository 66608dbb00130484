#include "nseg/checkpoint.hpp"

#include <bit>
#include <cstring>
#include <fstream>
#include <sstream>

namespace nseg {

namespace {

constexpr char kMagic[] = "NSEG1\n";
constexpr std::size_t kMagicLen = 6;

void put_u16(std::string& out, std::uint16_t v) {
  out.push_back(static_cast<char>(v & 0xFF));
  out.push_back(static_cast<char>((v >> 8) & 0xFF));
}

void put_u32(std::string& out, std::uint32_t v) {
  for (int i = 0; i < 4; ++i) out.push_back(static_cast<char>((v >> (8 * i)) & 0xFF));
}

void put_f32(std::string& out, float v) {
  const std::uint32_t bits = std::bit_cast<std::uint32_t>(v);
  put_u32(out, bits);
}

class Reader {
 public:
  Reader(const std::string& bytes, std::size_t pos) : bytes_(bytes), pos_(pos) {}

  std::uint16_t u16() {
    need(2);
    const auto b0 = static_cast<std::uint8_t>(bytes_[pos_]);
    const auto b1 = static_cast<std::uint8_t>(bytes_[pos_ + 1]);
    pos_ += 2;
    return static_cast<std::uint16_t>(b0 | (b1 << 8));
  }

  std::uint8_t u8() {
    need(1);
    return static_cast<std::uint8_t>(bytes_[pos_++]);
  }

  std::uint32_t u32() {
    need(4);
    std::uint32_t v = 0;
    for (int i = 0; i < 4; ++i) {
      v |= static_cast<std::uint32_t>(static_cast<std::uint8_t>(bytes_[pos_ + static_cast<std::size_t>(i)]))
           << (8 * i);
    }
    pos_ += 4;
    return v;
  }

  float f32() { return std::bit_cast<float>(u32()); }

  std::string str(std::size_t len) {
    need(len);
    std::string s = bytes_.substr(pos_, len);
    pos_ += len;
    return s;
  }

  bool done() const { return pos_ == bytes_.size(); }

 private:
  void need(std::size_t n) const {
    if (pos_ + n > bytes_.size()) {
      throw DataError("checkpoint truncated at byte " + std::to_string(pos_));
    }
  }

  const std::string& bytes_;
  std::size_t pos_;
};

}  // namespace

std::string checkpoint_bytes(const NestedUNet<float>& model) {
  std::string out(kMagic, kMagicLen);
  out += std::to_string(model.config.depth) + " " + std::to_string(model.config.base_channels) +
         " " + std::to_string(model.config.kernel) + " " +
         std::to_string(model.config.input_channels) + " " + std::to_string(model.prune_level) +
         "\n";
  model.for_each_param([&out](const ParamRef<float>& p) {
    put_u16(out, static_cast<std::uint16_t>(p.name.size()));
    out += p.name;
    out.push_back(static_cast<char>(p.dims.size()));
    for (const std::uint32_t d : p.dims) put_u32(out, d);
    for (std::int64_t i = 0; i < p.count; ++i) put_f32(out, p.values[static_cast<std::size_t>(i)]);
  });
  return out;
}

NestedUNet<float> checkpoint_from_bytes(const std::string& bytes) {
  if (bytes.size() < kMagicLen || bytes.compare(0, kMagicLen, kMagic, kMagicLen) != 0) {
    throw DataError("not a checkpoint: bad magic");
  }
  const std::size_t eol = bytes.find('\n', kMagicLen);
  if (eol == std::string::npos) throw DataError("checkpoint header line missing");
  std::istringstream header(bytes.substr(kMagicLen, eol - kMagicLen));
  GraphConfig cfg;
  int prune_level = 0;
  if (!(header >> cfg.depth >> cfg.base_channels >> cfg.kernel >> cfg.input_channels >>
        prune_level)) {
    throw DataError("checkpoint header malformed");
  }
  cfg.validate();
  if (prune_level < 1 || prune_level > cfg.depth - 1) {
    throw DataError("checkpoint prune level " + std::to_string(prune_level) + " out of range");
  }

  // build carves out storage with the right shapes; every value is overwritten
  NestedUNet<float> model = NestedUNet<float>::build(cfg, 0);
  model.prune_level = prune_level;

  Reader reader(bytes, eol + 1);
  model.for_each_param_mut([&reader](const ParamRef<float>& p) {
    const std::uint16_t name_len = reader.u16();
    const std::string name = reader.str(name_len);
    if (name != p.name) {
      throw DataError("checkpoint parameter '" + name + "' where '" + p.name + "' expected");
    }
    const std::uint8_t dim_count = reader.u8();
    if (dim_count != p.dims.size()) {
      throw DataError("checkpoint parameter '" + name + "' has wrong rank");
    }
    std::int64_t count = 1;
    for (std::uint8_t d = 0; d < dim_count; ++d) {
      const std::uint32_t dim = reader.u32();
      if (dim != p.dims[d]) {
        throw DataError("checkpoint parameter '" + name + "' has unexpected shape");
      }
      count *= dim;
    }
    for (std::int64_t i = 0; i < count; ++i) p.values[static_cast<std::size_t>(i)] = reader.f32();
  });
  if (!reader.done()) throw DataError("checkpoint has trailing bytes");
  return model;
}

void save_checkpoint(const std::filesystem::path& path, const NestedUNet<float>& model) {
  std::ofstream f(path, std::ios::binary);
  if (!f) throw DataError("cannot write checkpoint: " + path.string());
  const std::string bytes = checkpoint_bytes(model);
  f.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
  if (!f) throw DataError("short write: " + path.string());
}

NestedUNet<float> load_checkpoint(const std::filesystem::path& path) {
  std::ifstream f(path, std::ios::binary);
  if (!f) throw DataError("cannot read checkpoint: " + path.string());
  std::ostringstream ss;
  ss << f.rdbuf();
  return checkpoint_from_bytes(ss.str());
}

}  // namespace nseg
